//! Independent reference implementations used as test oracles. Nothing here
//! goes through the context automaton: processes are written directly as
//! functions of the raw observation sequence.

#![allow(dead_code)]

/// `(next observation, reward value, probability)`
pub type Branch = (usize, f64, f64);

/// Deterministic history policy over raw observation sequences.
pub type RawPolicy<'a> = &'a dyn Fn(&[usize]) -> usize;

pub trait RawProcess {
    fn num_actions(&self) -> usize;
    fn initial(&self) -> Vec<Branch>;
    /// `P(o' r' | o_1..o_t, a)`; actions before `t` do not matter for these
    /// processes.
    fn step(&self, obs: &[usize], a: usize) -> Vec<Branch>;
}

/// Four observations `00, 01, 10, 11`; successors of `00` are `01`/`10`
/// with equal odds, `01` goes to `00`/`11`, `10` to `01`, `11` to `00`.
pub struct ExampleChain {
    pub gamma: f64,
}

impl ExampleChain {
    pub fn reward(&self, o: usize) -> f64 {
        let g = self.gamma;
        [(g / 2.0) / (1.0 + g), (1.0 + g / 2.0) / (1.0 + g), 0.0, 1.0][o]
    }
}

impl RawProcess for ExampleChain {
    fn num_actions(&self) -> usize {
        1
    }

    fn initial(&self) -> Vec<Branch> {
        (0..4).map(|o| (o, 0.0, 0.25)).collect()
    }

    fn step(&self, obs: &[usize], _a: usize) -> Vec<Branch> {
        let o = *obs.last().unwrap();
        let r = self.reward(o);
        match o {
            0 => vec![(1, r, 0.5), (2, r, 0.5)],
            1 => vec![(0, r, 0.5), (3, r, 0.5)],
            2 => vec![(1, r, 1.0)],
            _ => vec![(0, r, 1.0)],
        }
    }
}

/// Two observations; `alpha` returns to `0`, `beta` moves uniformly. Rewards
/// depend on the current observation and the action.
pub struct Counterexample;

impl Counterexample {
    pub fn reward(o: usize, a: usize) -> f64 {
        [[1.0 / 6.0, 0.0], [1.0, 0.5]][o][a]
    }
}

impl RawProcess for Counterexample {
    fn num_actions(&self) -> usize {
        2
    }

    fn initial(&self) -> Vec<Branch> {
        vec![(0, 0.0, 0.5), (1, 0.0, 0.5)]
    }

    fn step(&self, obs: &[usize], a: usize) -> Vec<Branch> {
        let o = *obs.last().unwrap();
        let r = Self::reward(o, a);
        if a == 0 {
            vec![(0, r, 1.0)]
        } else {
            vec![(0, r, 0.5), (1, r, 0.5)]
        }
    }
}

/// `m`-step look-ahead value with terminal 0, by explicit tree recursion.
/// `policy` maps the observation sequence to an action; `None` maximizes.
pub fn tree_value(
    env: &dyn RawProcess,
    obs: &mut Vec<usize>,
    depth: usize,
    gamma: f64,
    policy: Option<RawPolicy>,
) -> f64 {
    if depth == 0 {
        return 0.0;
    }
    let q = |a: usize, obs: &mut Vec<usize>| -> f64 {
        let mut total = 0.0;
        for (o, r, p) in env.step(obs, a) {
            obs.push(o);
            total += p * (r + gamma * tree_value(env, obs, depth - 1, gamma, policy));
            obs.pop();
        }
        total
    };
    match policy {
        Some(pi) => {
            let a = pi(obs);
            q(a, obs)
        }
        None => (0..env.num_actions()).map(|a| q(a, obs)).fold(f64::NEG_INFINITY, f64::max),
    }
}

/// `Q_m(h, a)` by tree recursion.
pub fn tree_q(
    env: &dyn RawProcess,
    obs: &mut Vec<usize>,
    a: usize,
    depth: usize,
    gamma: f64,
    policy: Option<RawPolicy>,
) -> f64 {
    let mut total = 0.0;
    for (o, r, p) in env.step(obs, a) {
        obs.push(o);
        total += p * (r + gamma * tree_value(env, obs, depth - 1, gamma, policy));
        obs.pop();
    }
    total
}

/// Ratio-form on-policy surrogate by enumerating every path of length
/// `n` under the given stochastic behavior: `num[s][a][s'][r']` and
/// `den[s][a]` accumulated over `t = 1..=n`, with reward values keyed by
/// their position in `rewards`.
pub fn path_onpolicy(
    env: &dyn RawProcess,
    behavior: &dyn Fn(&[usize]) -> Vec<f64>,
    phi: &dyn Fn(&[usize]) -> usize,
    num_states: usize,
    rewards: &[f64],
    n: usize,
) -> Vec<Vec<Option<Vec<f64>>>> {
    let na = env.num_actions();
    let nr = rewards.len();
    let mut num = vec![vec![vec![0.0; num_states * nr]; na]; num_states];
    let mut den = vec![vec![0.0; na]; num_states];
    #[allow(clippy::too_many_arguments)]
    fn walk(
        env: &dyn RawProcess,
        behavior: &dyn Fn(&[usize]) -> Vec<f64>,
        phi: &dyn Fn(&[usize]) -> usize,
        rewards: &[f64],
        obs: &mut Vec<usize>,
        prob: f64,
        t: usize,
        n: usize,
        num: &mut Vec<Vec<Vec<f64>>>,
        den: &mut Vec<Vec<f64>>,
    ) {
        let s = phi(obs);
        let nr = rewards.len();
        for (a, pa) in behavior(obs).into_iter().enumerate() {
            if pa == 0.0 {
                continue;
            }
            den[s][a] += prob * pa;
            for (o, r, p) in env.step(obs, a) {
                obs.push(o);
                let r_idx = rewards.iter().position(|x| *x == r).unwrap();
                num[s][a][phi(obs) * nr + r_idx] += prob * pa * p;
                if t < n {
                    walk(env, behavior, phi, rewards, obs, prob * pa * p, t + 1, n, num, den);
                }
                obs.pop();
            }
        }
    }
    for (o, _, p) in env.initial() {
        let mut obs = vec![o];
        walk(env, behavior, phi, rewards, &mut obs, p, 1, n, &mut num, &mut den);
    }
    num.into_iter()
        .zip(den)
        .map(|(per_a, d)| {
            per_a
                .into_iter()
                .zip(d)
                .map(|(row, total)| (total > 0.0).then(|| row.into_iter().map(|x| x / total).collect()))
                .collect()
        })
        .collect()
}

/// Observation indices of a history of the library, for feeding the oracle.
pub fn obs_sequence(h: &histagg::process::History) -> Vec<usize> {
    h.observations().collect()
}
