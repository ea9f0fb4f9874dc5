use std::io::Write;

use serde::{Deserialize, Serialize};

use super::feature::{FeatureMap, StateId};
use crate::error::{LabError, Result};
use crate::process::{ActId, CtxId, HistoryPolicy, ProcessKernel, TruncationBudget, NORM_TOL};

/// `B(h|s,a)`, stored as weights on the history contexts of each preimage.
///
/// A `None` entry is a pair with no weight at all (never visited by the
/// behavior that produced it); surrogate MDPs treat it as absorbing.
#[derive(Clone, Debug, PartialEq)]
pub struct Dispersion {
    weights: Vec<Vec<Option<Vec<(CtxId, f64)>>>>,
}

impl Dispersion {
    /// Validates support and normalization against `phi`.
    pub fn new(
        phi: &FeatureMap,
        num_actions: usize,
        weights: Vec<Vec<Option<Vec<(CtxId, f64)>>>>,
    ) -> Result<Self> {
        if weights.len() != phi.num_states() || weights.iter().any(|w| w.len() != num_actions) {
            return Err(LabError::Config("dispersion does not cover S x A".into()));
        }
        for (s, per_action) in weights.iter().enumerate() {
            for entry in per_action.iter().flatten() {
                let mut total = 0.0;
                for &(c, w) in entry {
                    if c >= phi.num_contexts() || phi.state_of(c) != s {
                        return Err(LabError::Config(format!(
                            "dispersion puts weight outside the preimage of {}",
                            phi.state_label(s)
                        )));
                    }
                    if !(w >= 0.0) {
                        return Err(LabError::Normalization(format!("negative weight {w}")));
                    }
                    total += w;
                }
                if (total - 1.0).abs() > NORM_TOL {
                    return Err(LabError::Normalization(format!(
                        "dispersion for state {} sums to {total}",
                        phi.state_label(s)
                    )));
                }
            }
        }
        Ok(Dispersion { weights })
    }

    /// Explicit `(state, action, context, weight)` entries; pairs without
    /// entries are left undefined.
    pub fn from_entries(
        phi: &FeatureMap,
        num_actions: usize,
        entries: &[(StateId, ActId, CtxId, f64)],
    ) -> Result<Self> {
        let mut weights = vec![vec![None; num_actions]; phi.num_states()];
        for &(s, a, c, w) in entries {
            if s >= phi.num_states() || a >= num_actions {
                return Err(LabError::Config("dispersion entry out of range".into()));
            }
            weights[s][a].get_or_insert_with(Vec::new).push((c, w));
        }
        Dispersion::new(phi, num_actions, weights)
    }

    pub fn num_states(&self) -> usize {
        self.weights.len()
    }

    pub fn num_actions(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn weights(&self, s: StateId, a: ActId) -> Option<&[(CtxId, f64)]> {
        self.weights[s][a].as_deref()
    }

    pub fn weight(&self, s: StateId, a: ActId, ctx: CtxId) -> f64 {
        self.weights(s, a)
            .map_or(0.0, |w| w.iter().filter(|(c, _)| *c == ctx).map(|(_, x)| x).sum())
    }

    /// Pairs without weight, in `(s, a)` order.
    pub fn dropped(&self) -> Vec<(StateId, ActId)> {
        let mut out = Vec::new();
        for (s, per_action) in self.weights.iter().enumerate() {
            for (a, w) in per_action.iter().enumerate() {
                if w.is_none() {
                    out.push((s, a));
                }
            }
        }
        out
    }

    /// `⟨f(h,a)⟩_B` for a context function.
    pub fn average(&self, s: StateId, a: ActId, f: impl Fn(CtxId) -> f64) -> Option<f64> {
        self.weights(s, a).map(|w| w.iter().map(|&(c, x)| x * f(c)).sum())
    }

    /// CSV with columns `state, action, history, weight`; the history column
    /// holds the shortest history of each weighted context.
    pub fn write_csv<W: Write>(
        &self,
        kernel: &ProcessKernel,
        phi: &FeatureMap,
        out: W,
    ) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["state", "action", "history", "weight"])?;
        for s in 0..self.num_states() {
            for a in 0..self.num_actions() {
                for &(c, x) in self.weights(s, a).unwrap_or(&[]) {
                    w.write_record([
                        phi.state_label(s),
                        &kernel.spec().actions[a],
                        &kernel.context_key(c),
                        &x.to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Uniform over the contexts of each preimage, the same for every action.
pub fn build_uniform_dispersion(kernel: &ProcessKernel, phi: &FeatureMap) -> Result<Dispersion> {
    phi.check_kernel(kernel)?;
    let na = kernel.spec().num_actions();
    let mut weights = Vec::with_capacity(phi.num_states());
    for (s, cells) in phi.preimages().into_iter().enumerate() {
        if cells.is_empty() {
            return Err(LabError::EmptyPreimage(phi.state_label(s).to_string()));
        }
        let w = 1.0 / cells.len() as f64;
        let row: Vec<(CtxId, f64)> = cells.into_iter().map(|c| (c, w)).collect();
        weights.push(vec![Some(row); na]);
    }
    Dispersion::new(phi, na, weights)
}

/// Time-mixing weights `w_t(s,a)`, `t = 1..=n`.
#[derive(Clone, Debug, PartialEq)]
pub struct OnPolicyWeights {
    /// `w[t-1][s][a]`
    pub w: Vec<Vec<Vec<f64>>>,
    /// `Σ_t P^t(s,a)`
    pub visit_mass: Vec<Vec<f64>>,
}

impl OnPolicyWeights {
    pub fn horizon(&self) -> usize {
        self.w.len()
    }

    pub fn at(&self, t: usize, s: StateId, a: ActId) -> f64 {
        if t == 0 || t > self.w.len() {
            0.0
        } else {
            self.w[t - 1][s][a]
        }
    }
}

/// Context occupancy `P^t(c)` for `t = 1..=n` under `behavior`.
pub(crate) fn context_occupancy(
    kernel: &ProcessKernel,
    behavior: &HistoryPolicy,
    n: usize,
) -> Vec<Vec<f64>> {
    let na = kernel.spec().num_actions();
    let mut d = vec![0.0; kernel.num_contexts()];
    for o in kernel.initial() {
        d[o.next] += o.prob;
    }
    let mut out = Vec::with_capacity(n);
    for t in 0..n {
        if t + 1 < n {
            let mut next = vec![0.0; kernel.num_contexts()];
            for (c, &mass) in d.iter().enumerate() {
                if mass == 0.0 {
                    continue;
                }
                for a in 0..na {
                    let pa = behavior.prob(c, a);
                    if pa == 0.0 {
                        continue;
                    }
                    for o in kernel.row(c, a) {
                        next[o.next] += mass * pa * o.prob;
                    }
                }
            }
            out.push(std::mem::replace(&mut d, next));
        } else {
            out.push(std::mem::take(&mut d));
        }
    }
    out
}

/// `B(h_t|s,a) = w_t(s,a) P(h_t | s_t = s, a_t = a)` from exact reach
/// probabilities of `behavior` up to `n = budget.depth`; unvisited pairs
/// are left undefined.
pub fn build_onpolicy_dispersion(
    kernel: &ProcessKernel,
    behavior: &HistoryPolicy,
    phi: &FeatureMap,
    budget: &TruncationBudget,
) -> Result<(Dispersion, OnPolicyWeights)> {
    phi.check_kernel(kernel)?;
    behavior.validate(kernel)?;
    let (ns, na) = (phi.num_states(), kernel.spec().num_actions());
    let occupancy = context_occupancy(kernel, behavior, budget.depth);

    // Σ_t P^t(c,a) and per-time state-action mass
    let mut ctx_mass = vec![vec![0.0; na]; kernel.num_contexts()];
    let mut per_time = vec![vec![vec![0.0; na]; ns]; budget.depth];
    for (t, d) in occupancy.iter().enumerate() {
        for (c, &mass) in d.iter().enumerate() {
            for a in 0..na {
                let m = mass * behavior.prob(c, a);
                ctx_mass[c][a] += m;
                per_time[t][phi.state_of(c)][a] += m;
            }
        }
    }
    let mut visit_mass = vec![vec![0.0; na]; ns];
    for layer in &per_time {
        for s in 0..ns {
            for a in 0..na {
                visit_mass[s][a] += layer[s][a];
            }
        }
    }

    let mut weights = vec![vec![None; na]; ns];
    for (s, cells) in phi.preimages().iter().enumerate() {
        for a in 0..na {
            let total = visit_mass[s][a];
            if total > 0.0 {
                weights[s][a] = Some(
                    cells
                        .iter()
                        .filter(|&&c| ctx_mass[c][a] > 0.0)
                        .map(|&c| (c, ctx_mass[c][a] / total))
                        .collect(),
                );
            }
        }
    }
    let w = per_time
        .iter()
        .map(|layer| {
            (0..ns)
                .map(|s| {
                    (0..na)
                        .map(|a| {
                            let total = visit_mass[s][a];
                            if total > 0.0 { layer[s][a] / total } else { 0.0 }
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    Ok((Dispersion::new(phi, na, weights)?, OnPolicyWeights { w, visit_mass }))
}

const STATIONARY_MAX_SWEEPS: usize = 200_000;

/// Long-run occupancy of the context chain when `a` is always taken, started
/// from the initial distribution. Iterates the lazy chain `(I + M)/2`, which
/// has the same Cesàro limit and no periodicity.
fn stationary_occupancy(kernel: &ProcessKernel, a: ActId) -> Vec<f64> {
    let mut d = vec![0.0; kernel.num_contexts()];
    for o in kernel.initial() {
        d[o.next] += o.prob;
    }
    for _ in 0..STATIONARY_MAX_SWEEPS {
        let mut next: Vec<f64> = d.iter().map(|x| 0.5 * x).collect();
        for (c, &mass) in d.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            for o in kernel.row(c, a) {
                next[o.next] += 0.5 * mass * o.prob;
            }
        }
        if next == d {
            break;
        }
        d = next;
    }
    d
}

/// For each action `a`, the limiting on-policy dispersion of the constant
/// behavior "always `a`". States the chain never occupies fall back to the
/// uniform weights.
pub fn build_stationary_dispersion(kernel: &ProcessKernel, phi: &FeatureMap) -> Result<Dispersion> {
    let uniform = build_uniform_dispersion(kernel, phi)?;
    let (ns, na) = (phi.num_states(), kernel.spec().num_actions());
    let cells = phi.preimages();
    let mut weights = vec![vec![None; na]; ns];
    for a in 0..na {
        let rho = stationary_occupancy(kernel, a);
        for s in 0..ns {
            let total: f64 = cells[s].iter().map(|&c| rho[c]).sum();
            weights[s][a] = if total > 0.0 {
                Some(cells[s].iter().filter(|&&c| rho[c] > 0.0).map(|&c| (c, rho[c] / total)).collect())
            } else {
                uniform.weights[s][a].clone()
            };
        }
    }
    Dispersion::new(phi, na, weights)
}

/// Named dispersion construction, as selected in configuration files.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DispersionBuilder {
    #[default]
    Uniform,
    /// On-policy weights under the uniformly random behavior policy, mixed
    /// over at least `|contexts| + 1` steps so every context is visited.
    OnPolicy,
    Stationary,
}

impl DispersionBuilder {
    pub fn build(
        self,
        kernel: &ProcessKernel,
        phi: &FeatureMap,
        budget: &TruncationBudget,
    ) -> Result<Dispersion> {
        match self {
            DispersionBuilder::Uniform => build_uniform_dispersion(kernel, phi),
            DispersionBuilder::OnPolicy => {
                let behavior = HistoryPolicy::uniform(kernel);
                let horizon = budget.depth.max(kernel.num_contexts() + 1);
                let budget = TruncationBudget::new(horizon, kernel.gamma())?;
                Ok(build_onpolicy_dispersion(kernel, &behavior, phi, &budget)?.0)
            }
            DispersionBuilder::Stationary => build_stationary_dispersion(kernel, phi),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DispersionBuilder::Uniform => "uniform",
            DispersionBuilder::OnPolicy => "on_policy",
            DispersionBuilder::Stationary => "stationary",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::process::{make_counterexample, make_example_chain};

    #[test]
    fn uniform_weights() {
        let (k, phi) = make_example_chain(0.5).unwrap();
        let b = build_uniform_dispersion(&k, &phi).unwrap();
        for s in 0..2 {
            let w = b.weights(s, 0).unwrap();
            assert_eq!(w.len(), 2);
            assert!(w.iter().all(|&(_, x)| x == 0.5));
        }
        let single = build_uniform_dispersion(&k, &FeatureMap::identity(&k)).unwrap();
        assert_eq!(single.weights(3, 0).unwrap(), &[(3, 1.0)]);
    }

    #[test]
    fn support_outside_preimage_is_rejected() {
        let (k, phi) = make_example_chain(0.5).unwrap();
        let s_of_first = phi.state_of(0);
        let other = 1 - s_of_first;
        let err = Dispersion::from_entries(&phi, 1, &[(other, 0, 0, 1.0)]).unwrap_err();
        assert!(matches!(err, LabError::Config(_)));
        let err = Dispersion::from_entries(&phi, 1, &[(s_of_first, 0, 0, 0.5)]).unwrap_err();
        assert!(matches!(err, LabError::Normalization(_)));
        assert_eq!(k.num_contexts(), 4);
    }

    #[test]
    fn onpolicy_weights_sum_to_one() {
        let (k, phi) = make_counterexample(0.5).unwrap();
        let budget = TruncationBudget::new(3, 0.5).unwrap();
        let (b, w) =
            build_onpolicy_dispersion(&k, &HistoryPolicy::uniform(&k), &phi, &budget).unwrap();
        for a in 0..2 {
            let total: f64 = (1..=3).map(|t| w.at(t, 0, a)).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
        // raw state 0 has occupancy 1/2, 3/4, 3/4 at t = 1, 2, 3
        let ctx0 = k.locate(&crate::process::History::initial(0, 0)).unwrap();
        assert!((b.weight(0, 0, ctx0) - 2.0 / 3.0).abs() < 1e-15);
        assert!(b.dropped().is_empty());
    }

    #[test]
    fn stationary_dispersion_of_counterexample() {
        let (k, phi) = make_counterexample(0.0).unwrap();
        let b = build_stationary_dispersion(&k, &phi).unwrap();
        let ctx0 = k.locate(&crate::process::History::initial(0, 0)).unwrap();
        assert_eq!(b.weights(0, 0).unwrap(), &[(ctx0, 1.0)]);
        assert_eq!(b.weight(0, 1, ctx0), 0.5);
    }
}
