//! Simulating a behavior policy against the process and estimating the
//! surrogate MDP by transition frequencies.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::aggregation::{FeatureMap, StateId};
use crate::error::{LabError, Result};
use crate::mdp::FiniteMDP;
use crate::process::{ActId, CtxId, HistoryPolicy, ObsId, Outcome, ProcessKernel, ProcessSpec, RewId};

/// Default visit-fraction floor below which a pair is flagged.
pub const DEFAULT_VISIT_FLOOR: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct TrajectoryStep {
    pub obs: ObsId,
    pub reward: RewId,
    pub action: ActId,
    /// Context of the prefix ending in `(obs, reward)`.
    pub ctx: CtxId,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Trajectory {
    pub seed: u64,
    pub steps: Vec<TrajectoryStep>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// The first `n` steps; identical to simulating `n` steps with the same seed.
    pub fn prefix(&self, n: usize) -> Trajectory {
        Trajectory { seed: self.seed, steps: self.steps[..n.min(self.steps.len())].to_vec() }
    }

    /// CSV rows `t, o, r, a` with `t` starting at 1.
    pub fn write_csv<W: Write>(&self, spec: &ProcessSpec, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "o", "r", "a"])?;
        for (t, s) in self.steps.iter().enumerate() {
            w.write_record([
                (t + 1).to_string(),
                spec.observations[s.obs].clone(),
                spec.reward_label(s.reward),
                spec.actions[s.action].clone(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Inverse-CDF draw over `probs` in the given order.
fn draw(rng: &mut ChaCha8Rng, probs: impl Iterator<Item = f64>) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the total mass
    last
}

fn draw_outcome(rng: &mut ChaCha8Rng, row: &[Outcome]) -> Outcome {
    row[draw(rng, row.iter().map(|o| o.prob))]
}

/// `n` steps of interaction: `o₁r₁` from the initial distribution, then
/// alternately `a_t ~ behavior` and `o_{t+1}r_{t+1} ~ P`.
pub fn simulate(kernel: &ProcessKernel, behavior: &HistoryPolicy, n: usize, seed: u64) -> Result<Trajectory> {
    if n == 0 {
        return Err(LabError::Config("trajectory length must be >= 1".into()));
    }
    behavior.validate(kernel)?;
    let na = kernel.spec().num_actions();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut steps = Vec::with_capacity(n);
    let mut current = draw_outcome(&mut rng, kernel.initial());
    for t in 0..n {
        let c = current.next;
        let action = match behavior {
            HistoryPolicy::Deterministic(acts) => acts[c],
            HistoryPolicy::Stochastic(d) => draw(&mut rng, (0..na).map(|a| d[c][a])),
        };
        steps.push(TrajectoryStep { obs: current.obs, reward: current.reward, action, ctx: c });
        if t + 1 < n {
            current = draw_outcome(&mut rng, kernel.row(c, action));
        }
    }
    Ok(Trajectory { seed, steps })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TransitionCounts {
    /// `n_sa[s][a]` over `t ≤ n`.
    pub n_sa: Vec<Vec<u64>>,
    /// `n_sasr[s][a][s'·|R| + r']` over `t ≤ n-1`.
    pub n_sasr: Vec<Vec<Vec<u64>>>,
    pub total: u64,
}

impl TransitionCounts {
    /// Successors recorded for `(s,a)`.
    pub fn successors(&self, s: StateId, a: ActId) -> u64 {
        self.n_sasr[s][a].iter().sum()
    }
}

/// One pass over the trajectory, mapping each prefix through `φ`.
pub fn count_transitions(
    traj: &Trajectory,
    phi: &FeatureMap,
    spec: &ProcessSpec,
) -> TransitionCounts {
    let (ns, na, nr) = (phi.num_states(), spec.num_actions(), spec.num_rewards());
    let mut n_sa = vec![vec![0u64; na]; ns];
    let mut n_sasr = vec![vec![vec![0u64; ns * nr]; na]; ns];
    for (t, step) in traj.steps.iter().enumerate() {
        let s = phi.state_of(step.ctx);
        n_sa[s][step.action] += 1;
        if let Some(next) = traj.steps.get(t + 1) {
            n_sasr[s][step.action][phi.state_of(next.ctx) * nr + next.reward] += 1;
        }
    }
    TransitionCounts { n_sa, n_sasr, total: traj.len() as u64 }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimatedMDP {
    /// `p_hat[s][a]`: `Some(row over s'·|R| + r')` when defined.
    pub p_hat: Vec<Vec<Option<Vec<f64>>>>,
    pub visit_fraction: Vec<Vec<f64>>,
    pub undefined_pairs: Vec<(StateId, ActId)>,
}

impl EstimatedMDP {
    /// As a `FiniteMDP`; undefined pairs become missing rows.
    pub fn to_mdp(&self, phi: &FeatureMap, spec: &ProcessSpec) -> Result<FiniteMDP> {
        FiniteMDP::new(
            phi.labels().to_vec(),
            spec.actions.clone(),
            spec.rewards.clone(),
            spec.gamma,
            self.p_hat.clone(),
        )
    }
}

/// Frequency estimate `n(sas'r')/n(sa)`, normalized over recorded successors
/// so every defined row sums to one.
pub fn estimate_mdp(counts: &TransitionCounts) -> EstimatedMDP {
    let n = counts.total.max(1) as f64;
    let mut undefined_pairs = Vec::new();
    let p_hat = counts
        .n_sasr
        .iter()
        .enumerate()
        .map(|(s, per_a)| {
            per_a
                .iter()
                .enumerate()
                .map(|(a, row)| {
                    let total: u64 = row.iter().sum();
                    if total == 0 {
                        undefined_pairs.push((s, a));
                        None
                    } else {
                        Some(row.iter().map(|&k| k as f64 / total as f64).collect())
                    }
                })
                .collect()
        })
        .collect();
    let visit_fraction = counts
        .n_sa
        .iter()
        .map(|row| row.iter().map(|&k| k as f64 / n).collect())
        .collect();
    EstimatedMDP { p_hat, visit_fraction, undefined_pairs }
}

/// Weighted estimator: each recorded transition at time `t` counts with
/// weight `u(t, s, a)`; `u ≡ 1` gives [`estimate_mdp`].
pub fn estimate_mdp_weighted(
    traj: &Trajectory,
    phi: &FeatureMap,
    spec: &ProcessSpec,
    u: impl Fn(usize, StateId, ActId) -> f64,
) -> EstimatedMDP {
    let (ns, na, nr) = (phi.num_states(), spec.num_actions(), spec.num_rewards());
    let mut num = vec![vec![vec![0.0; ns * nr]; na]; ns];
    let counts = count_transitions(traj, phi, spec);
    for (t, step) in traj.steps.iter().enumerate() {
        if let Some(next) = traj.steps.get(t + 1) {
            let s = phi.state_of(step.ctx);
            num[s][step.action][phi.state_of(next.ctx) * nr + next.reward] += u(t + 1, s, step.action);
        }
    }
    let mut est = estimate_mdp(&counts);
    for (s, per_a) in num.iter().enumerate() {
        for (a, row) in per_a.iter().enumerate() {
            let total: f64 = row.iter().sum();
            est.p_hat[s][a] = (total > 0.0).then(|| row.iter().map(|x| x / total).collect());
        }
    }
    est.undefined_pairs = (0..ns)
        .flat_map(|s| (0..na).map(move |a| (s, a)))
        .filter(|&(s, a)| est.p_hat[s][a].is_none())
        .collect();
    est
}

/// The ratio-form on-policy surrogate
/// `p = Σ_t P^t(s a s' r') / Σ_t P^t(s a)` over `t = 1..=n`, by exact
/// forward propagation of the context distribution. Pairs with zero mass are
/// left as missing rows.
pub fn exact_onpolicy_mdp(
    kernel: &ProcessKernel,
    behavior: &HistoryPolicy,
    phi: &FeatureMap,
    n: usize,
) -> Result<FiniteMDP> {
    phi.check_kernel(kernel)?;
    behavior.validate(kernel)?;
    if n == 0 {
        return Err(LabError::Config("horizon must be >= 1".into()));
    }
    let spec = kernel.spec();
    let (ns, na, nr) = (phi.num_states(), spec.num_actions(), spec.num_rewards());
    let mut num = vec![vec![vec![0.0; ns * nr]; na]; ns];
    let mut den = vec![vec![0.0; na]; ns];
    let mut d = vec![0.0; kernel.num_contexts()];
    for o in kernel.initial() {
        d[o.next] += o.prob;
    }
    for _ in 0..n {
        let mut next = vec![0.0; kernel.num_contexts()];
        for (c, &mass) in d.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            let s = phi.state_of(c);
            for a in 0..na {
                let m = mass * behavior.prob(c, a);
                if m == 0.0 {
                    continue;
                }
                den[s][a] += m;
                for o in kernel.row(c, a) {
                    num[s][a][phi.state_of(o.next) * nr + o.reward] += m * o.prob;
                    next[o.next] += m * o.prob;
                }
            }
        }
        d = next;
    }
    let rows = num
        .into_iter()
        .zip(&den)
        .map(|(per_a, dens)| {
            per_a
                .into_iter()
                .zip(dens)
                .map(|(row, &total)| (total > 0.0).then(|| row.into_iter().map(|x| x / total).collect()))
                .collect()
        })
        .collect();
    FiniteMDP::new(phi.labels().to_vec(), spec.actions.clone(), spec.rewards.clone(), spec.gamma, rows)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub n: usize,
    /// `max |p_hat - p|` over retained pairs.
    pub sup_error: f64,
    pub min_visit_fraction: f64,
    /// Pairs below the visit floor, as `(state, action)` labels.
    pub flagged: Vec<(String, String)>,
    pub retained: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub seed: u64,
    pub floor: f64,
    pub rows: Vec<ConvergenceRow>,
}

/// Estimation error against the exact on-policy `p` at matched horizons.
/// Pairs visited with fraction below `floor` are flagged and excluded.
pub fn convergence_report(
    kernel: &ProcessKernel,
    behavior: &HistoryPolicy,
    phi: &FeatureMap,
    n_grid: &[usize],
    seed: u64,
    floor: f64,
) -> Result<ConvergenceReport> {
    if n_grid.is_empty() || n_grid.windows(2).any(|w| w[0] >= w[1]) || n_grid[0] == 0 {
        return Err(LabError::Config("n_grid must be positive and strictly increasing".into()));
    }
    let spec = kernel.spec();
    let full = simulate(kernel, behavior, *n_grid.last().expect("non-empty"), seed)?;
    let mut rows = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        let est = estimate_mdp(&count_transitions(&full.prefix(n), phi, spec));
        let exact = exact_onpolicy_mdp(kernel, behavior, phi, n)?;
        let mut sup_error: f64 = 0.0;
        let mut min_visit = f64::INFINITY;
        let mut flagged = Vec::new();
        let mut retained = 0;
        for s in 0..phi.num_states() {
            for a in 0..spec.num_actions() {
                let frac = est.visit_fraction[s][a];
                if frac < floor {
                    flagged.push((phi.state_label(s).to_string(), spec.actions[a].clone()));
                    continue;
                }
                let (Some(hat), Some(p)) = (&est.p_hat[s][a], exact.row(s, a)) else { continue };
                retained += 1;
                min_visit = min_visit.min(frac);
                for (x, y) in hat.iter().zip(p) {
                    sup_error = sup_error.max((x - y).abs());
                }
            }
        }
        rows.push(ConvergenceRow {
            n,
            sup_error,
            min_visit_fraction: if retained == 0 { 0.0 } else { min_visit },
            flagged,
            retained,
        });
    }
    Ok(ConvergenceReport { seed, floor, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::process::{make_counterexample, make_example_chain};

    #[test]
    fn same_seed_same_trajectory() {
        let (k, _) = make_counterexample(0.5).unwrap();
        let pol = HistoryPolicy::uniform(&k);
        let a = simulate(&k, &pol, 500, 7).unwrap();
        assert_eq!(a, simulate(&k, &pol, 500, 7).unwrap());
        assert_ne!(a, simulate(&k, &pol, 500, 8).unwrap());
        assert_eq!(a.prefix(100), simulate(&k, &pol, 100, 7).unwrap());
    }

    #[test]
    fn count_conservation() {
        let (k, phi) = make_example_chain(0.5).unwrap();
        let pol = HistoryPolicy::constant(&k, 0);
        let traj = simulate(&k, &pol, 1000, 3).unwrap();
        let counts = count_transitions(&traj, &phi, k.spec());
        let total: u64 = counts.n_sa.iter().flatten().sum();
        assert_eq!(total, 1000);
        for s in 0..phi.num_states() {
            let n = counts.n_sa[s][0];
            let succ = counts.successors(s, 0);
            assert!(succ == n || succ + 1 == n);
        }
    }

    #[test]
    fn single_step_has_no_successor() {
        let (k, phi) = make_example_chain(0.5).unwrap();
        let traj = simulate(&k, &HistoryPolicy::constant(&k, 0), 1, 1).unwrap();
        let counts = count_transitions(&traj, &phi, k.spec());
        assert_eq!(counts.n_sa.iter().flatten().sum::<u64>(), 1);
        let est = estimate_mdp(&counts);
        assert_eq!(est.undefined_pairs.len(), phi.num_states());
    }

    #[test]
    fn ratio_rows() {
        let counts = TransitionCounts {
            n_sa: vec![vec![4]],
            n_sasr: vec![vec![vec![3, 1]]],
            total: 4,
        };
        let est = estimate_mdp(&counts);
        assert_eq!(est.p_hat[0][0], Some(vec![0.75, 0.25]));
        assert_eq!(est.visit_fraction[0][0], 1.0);
    }

    #[test]
    fn unit_weights_match_plain_estimate() {
        let (k, phi) = make_example_chain(0.5).unwrap();
        let traj = simulate(&k, &HistoryPolicy::constant(&k, 0), 300, 9).unwrap();
        let plain = estimate_mdp(&count_transitions(&traj, &phi, k.spec()));
        let weighted = estimate_mdp_weighted(&traj, &phi, k.spec(), |_, _, _| 1.0);
        assert_eq!(plain, weighted);
    }

    #[test]
    fn unused_action_is_flagged() {
        let (k, _) = make_counterexample(0.5).unwrap();
        let phi = FeatureMap::identity(&k);
        let r = convergence_report(&k, &HistoryPolicy::constant(&k, 0), &phi, &[100, 1000], 1, DEFAULT_VISIT_FLOOR)
            .unwrap();
        assert!(r.rows.iter().all(|row| row.flagged.iter().any(|(_, a)| a == "beta")));
    }
}
