//! Feature maps, the marginalized process `P_φ`, dispersion distributions
//! and the surrogate MDP they induce.

mod dispersion;
mod feature;
mod surrogate;

pub use dispersion::{
    build_onpolicy_dispersion, build_stationary_dispersion, build_uniform_dispersion,
    DispersionBuilder, Dispersion, OnPolicyWeights,
};
pub use feature::{FeatureMap, PhiSpec, StateId};
pub use surrogate::{build_surrogate_mdp, relabel_actions};

use serde::Serialize;

use crate::error::Result;
use crate::process::{ActId, CtxId, History, ProcessKernel};

/// `P_φ(s'r'|c,a)` for a context, dense over `s' * |R| + r'`.
pub fn marginalize_context(
    kernel: &ProcessKernel,
    phi: &FeatureMap,
    ctx: CtxId,
    a: ActId,
) -> Vec<f64> {
    let nr = kernel.spec().num_rewards();
    let mut out = vec![0.0; phi.num_states() * nr];
    for o in kernel.row(ctx, a) {
        out[phi.state_of(o.next) * nr + o.reward] += o.prob;
    }
    out
}

/// `P_φ(s'r'|h,a)`, dense over `s' * |R| + r'`.
pub fn marginalize(
    kernel: &ProcessKernel,
    phi: &FeatureMap,
    h: &History,
    a: ActId,
) -> Result<Vec<f64>> {
    phi.check_kernel(kernel)?;
    if a >= kernel.spec().num_actions() {
        return Err(crate::error::LabError::Lookup(format!("action index {a} out of range")));
    }
    Ok(marginalize_context(kernel, phi, kernel.locate(h)?, a))
}

/// Largest MDP-condition violation with the pair of contexts attaining it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Deviation {
    pub value: f64,
    /// `(state, action, context, context)` of the worst pair, if any pair differs.
    pub witness: Option<(StateId, ActId, CtxId, CtxId)>,
}

fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Max total-variation distance between `P_φ(·|h,a)` and `P_φ(·|h̃,a)` over
/// same-state histories; 0 exactly when `P_φ` satisfies the MDP condition.
pub fn mdp_deviation(kernel: &ProcessKernel, phi: &FeatureMap) -> Result<Deviation> {
    phi.check_kernel(kernel)?;
    let mut best = Deviation { value: 0.0, witness: None };
    for (s, cells) in phi.preimages().iter().enumerate() {
        for a in 0..kernel.spec().num_actions() {
            let rows: Vec<Vec<f64>> =
                cells.iter().map(|&c| marginalize_context(kernel, phi, c, a)).collect();
            for i in 0..cells.len() {
                for j in i + 1..cells.len() {
                    let tv = total_variation(&rows[i], &rows[j]);
                    if tv > best.value {
                        best = Deviation { value: tv, witness: Some((s, a, cells[i], cells[j])) };
                    }
                }
            }
        }
    }
    Ok(best)
}
