use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_gamma, ActId, ObsId, ProcessKernel, ProcessSpec, RewId, NORM_TOL};
use crate::aggregation::FeatureMap;
use crate::error::{LabError, Result};

/// Reward attached to a raw-MDP transition.
#[derive(Clone, Debug, PartialEq)]
pub enum RewardRule {
    /// `rewards[o][a]`
    PerStateAction(Vec<Vec<f64>>),
    /// `rewards[o][a][o']`
    PerTransition(Vec<Vec<Vec<f64>>>),
}

impl RewardRule {
    fn value(&self, o: ObsId, a: ActId, next: ObsId) -> f64 {
        match self {
            RewardRule::PerStateAction(r) => r[o][a],
            RewardRule::PerTransition(r) => r[o][a][next],
        }
    }
}

fn distinct(values: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for &v in values {
        if !out.contains(&v) {
            out.push(v);
        }
    }
    out
}

/// Four raw observations `00, 01, 10, 11` driven by an action-independent
/// chain with deterministic rewards; the returned map keeps the second bit.
pub fn make_example_chain(gamma: f64) -> Result<(ProcessKernel, FeatureMap)> {
    check_gamma(gamma)?;
    let r00 = (gamma / 2.0) / (1.0 + gamma);
    let r01 = (1.0 + gamma / 2.0) / (1.0 + gamma);
    let reward_of = [r00, r01, 0.0, 1.0];
    let rewards = distinct(&[0.0, r00, r01, 1.0]);
    let spec = ProcessSpec::new(
        ["00", "01", "10", "11"].iter().map(|s| s.to_string()).collect(),
        rewards.clone(),
        vec!["go".into()],
        gamma,
    )?;
    let rid = |v: f64| rewards.iter().position(|r| *r == v).expect("reward declared");
    // successors of 00, 01, 10, 11
    let transitions: [&[(ObsId, f64)]; 4] = [
        &[(1, 0.5), (2, 0.5)],
        &[(0, 0.5), (3, 0.5)],
        &[(1, 1.0)],
        &[(0, 1.0)],
    ];
    let initial: Vec<_> = (0..4).map(|o| (o, rid(0.0), 0.25)).collect();
    let kernel = ProcessKernel::from_suffix_model(spec, 1, &initial, |suffix, _| {
        let o = *suffix.last().expect("non-empty suffix");
        transitions[o].iter().map(|&(next, p)| (next, rid(reward_of[o]), p)).collect()
    })?;
    let phi = FeatureMap::from_labels(&kernel, |ctx| {
        kernel.spec().observations[ctx.last_obs][1..].to_string()
    });
    Ok((kernel, phi))
}

/// Two raw states, actions `alpha`/`beta`; the returned map is constant.
pub fn make_counterexample(gamma: f64) -> Result<(ProcessKernel, FeatureMap)> {
    check_gamma(gamma)?;
    let spec = ProcessSpec::new(
        vec!["0".into(), "1".into()],
        vec![0.0, 1.0 / 6.0, 0.5, 1.0],
        vec!["alpha".into(), "beta".into()],
        gamma,
    )?;
    let transition = vec![
        vec![vec![1.0, 0.0], vec![1.0, 0.0]],
        vec![vec![0.5, 0.5], vec![0.5, 0.5]],
    ];
    let rewards = RewardRule::PerStateAction(vec![vec![1.0 / 6.0, 0.0], vec![1.0, 0.5]]);
    let initial = vec![(0, 0, 0.5), (1, 0, 0.5)];
    let kernel = wrap_raw_mdp(spec, &transition, &rewards, &initial)?;
    let phi = FeatureMap::constant(&kernel);
    Ok((kernel, phi))
}

/// Raw MDP over the observations: `transition[a][o][o']`, rewards from
/// `reward_rule`, initial `(o, r, prob)` triples.
pub fn wrap_raw_mdp(
    spec: ProcessSpec,
    transition: &[Vec<Vec<f64>>],
    reward_rule: &RewardRule,
    initial: &[(ObsId, RewId, f64)],
) -> Result<ProcessKernel> {
    spec.validate()?;
    let (no, na) = (spec.num_obs(), spec.num_actions());
    if transition.len() != na || transition.iter().any(|m| m.len() != no) {
        return Err(LabError::Config("transition must be |A| x |O| x |O|".into()));
    }
    for (a, m) in transition.iter().enumerate() {
        for (o, row) in m.iter().enumerate() {
            if row.len() != no {
                return Err(LabError::Config("transition must be |A| x |O| x |O|".into()));
            }
            let total: f64 = row.iter().sum();
            if row.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > NORM_TOL {
                return Err(LabError::Normalization(format!(
                    "row for state {} action {} sums to {total}",
                    spec.observations[o], spec.actions[a]
                )));
            }
        }
    }
    let mut reward_ids = vec![vec![vec![0; no]; na]; no];
    for o in 0..no {
        for a in 0..na {
            for next in 0..no {
                let shape_ok = match reward_rule {
                    RewardRule::PerStateAction(r) => r.len() == no && r[o].len() == na,
                    RewardRule::PerTransition(r) => {
                        r.len() == no && r[o].len() == na && r[o][a].len() == no
                    }
                };
                if !shape_ok {
                    return Err(LabError::Config("reward rule has the wrong shape".into()));
                }
                let v = reward_rule.value(o, a, next);
                reward_ids[o][a][next] = spec.reward_index(v).ok_or_else(|| {
                    LabError::Config(format!("reward {v} not in the declared reward set"))
                })?;
            }
        }
    }
    ProcessKernel::from_suffix_model(spec, 1, initial, |suffix, a| {
        let o = *suffix.last().expect("non-empty suffix");
        transition[a][o]
            .iter()
            .enumerate()
            .map(|(next, &p)| (next, reward_ids[o][a][next], p))
            .collect()
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RandomSizes {
    pub observations: usize,
    pub rewards: usize,
    pub actions: usize,
}

const MAX_RANDOM_CONTEXTS: usize = 100_000;

/// Seeded random process whose step distribution depends on the last
/// `min(t, order)` observations. Rewards are spread evenly over `[0,1]`.
pub fn make_random_process(
    seed: u64,
    sizes: RandomSizes,
    order: usize,
    gamma: f64,
) -> Result<ProcessKernel> {
    let RandomSizes { observations: no, rewards: nr, actions: na } = sizes;
    if no == 0 || nr == 0 || na == 0 {
        return Err(LabError::Config("random process sizes must be >= 1".into()));
    }
    let suffix_count: usize = (0..=order).map(|j| no.saturating_pow(j as u32)).sum();
    if suffix_count > MAX_RANDOM_CONTEXTS {
        return Err(LabError::Budget(format!("order {order} needs {suffix_count} contexts")));
    }
    let rewards: Vec<f64> = if nr == 1 {
        vec![0.5]
    } else {
        (0..nr).map(|j| j as f64 / (nr - 1) as f64).collect()
    };
    let spec = ProcessSpec::new(
        (0..no).map(|o| format!("o{o}")).collect(),
        rewards,
        (0..na).map(|a| format!("a{a}")).collect(),
        gamma,
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let random_dist = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let w: Vec<f64> = (0..no * nr).map(|_| 0.05 + rng.random::<f64>()).collect();
        let total: f64 = w.iter().sum();
        w.into_iter().map(|x| x / total).collect()
    };
    let initial_dist = random_dist(&mut rng);
    // rows[suffix index][a], suffixes enumerated by length then lexicographically
    let mut table: Vec<Vec<Vec<f64>>> = Vec::with_capacity(suffix_count);
    for _ in 0..suffix_count {
        table.push((0..na).map(|_| random_dist(&mut rng)).collect());
    }
    let suffix_index = |suffix: &[ObsId]| -> usize {
        let offset: usize = (0..suffix.len()).map(|j| no.pow(j as u32)).sum();
        offset + suffix.iter().fold(0, |acc, &o| acc * no + o)
    };
    let initial: Vec<_> = (0..no * nr)
        .map(|i| (i / nr, i % nr, initial_dist[i]))
        .collect();
    ProcessKernel::from_suffix_model(spec, order, &initial, |suffix, a| {
        let keep = suffix.len().min(order);
        let dist = &table[suffix_index(&suffix[suffix.len() - keep..])][a];
        (0..no * nr).map(|i| (i / nr, i % nr, dist[i])).collect()
    })
}
