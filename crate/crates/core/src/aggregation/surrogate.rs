use super::dispersion::Dispersion;
use super::feature::FeatureMap;
use super::marginalize_context;
use crate::error::{LabError, Result};
use crate::mdp::FiniteMDP;
use crate::process::{ActId, Context, History, HistoryPolicy, ProcessKernel, Step};

/// `p(s'r'|s,a) = Σ_h B(h|s,a) P_φ(s'r'|h,a)`; pairs the dispersion leaves
/// undefined become missing rows.
pub fn build_surrogate_mdp(
    kernel: &ProcessKernel,
    phi: &FeatureMap,
    b: &Dispersion,
) -> Result<FiniteMDP> {
    phi.check_kernel(kernel)?;
    let (ns, na) = (phi.num_states(), kernel.spec().num_actions());
    if b.num_states() != ns || b.num_actions() != na {
        return Err(LabError::Config("dispersion does not match the feature map".into()));
    }
    let width = ns * kernel.spec().num_rewards();
    let rows = (0..ns)
        .map(|s| {
            (0..na)
                .map(|a| {
                    b.weights(s, a).map(|weights| {
                        let mut row = vec![0.0; width];
                        for &(c, w) in weights {
                            for (x, p) in row.iter_mut().zip(marginalize_context(kernel, phi, c, a)) {
                                *x += w * p;
                            }
                        }
                        row
                    })
                })
                .collect()
        })
        .collect();
    FiniteMDP::new(
        phi.labels().to_vec(),
        kernel.spec().actions.clone(),
        kernel.spec().rewards.clone(),
        kernel.gamma(),
        rows,
    )
}

/// Per-history action renaming that turns `pin` into the constant policy
/// `anchor`: at every history the actions `anchor` and `pin(h)` swap roles.
pub fn relabel_actions(
    kernel: &ProcessKernel,
    pin: &HistoryPolicy,
    anchor: ActId,
) -> Result<(ProcessKernel, HistoryPolicy)> {
    pin.validate(kernel)?;
    let acts = pin
        .actions()
        .ok_or_else(|| LabError::Config("relabeling needs a deterministic policy".into()))?;
    if anchor >= kernel.spec().num_actions() {
        return Err(LabError::Config(format!("anchor action {anchor} out of range")));
    }
    let swap = |c: usize, a: ActId| -> ActId {
        if a == anchor {
            acts[c]
        } else if a == acts[c] {
            anchor
        } else {
            a
        }
    };
    let contexts = kernel
        .contexts()
        .iter()
        .enumerate()
        .map(|(c, ctx)| {
            let rows =
                (0..kernel.spec().num_actions()).map(|a| ctx.rows[swap(c, a)].clone()).collect();
            // representatives keep their observations; their actions are renamed
            let representative = rename_history(kernel, &ctx.representative, &swap)?;
            Ok(Context { rows, representative, ..ctx.clone() })
        })
        .collect::<Result<Vec<_>>>()?;
    let relabeled =
        ProcessKernel::from_parts(kernel.spec().clone(), kernel.initial().to_vec(), contexts)?;
    let policy = HistoryPolicy::constant(&relabeled, anchor);
    Ok((relabeled, policy))
}

/// The history of the relabeled process that corresponds to `h`.
fn rename_history(
    kernel: &ProcessKernel,
    h: &History,
    swap: &impl Fn(usize, ActId) -> ActId,
) -> Result<History> {
    let mut out = History::initial(h.head.0, h.head.1);
    let mut prefix = History::initial(h.head.0, h.head.1);
    for step in &h.steps {
        let c = kernel.locate(&prefix)?;
        // swap is an involution per context
        out.steps.push(Step { action: swap(c, step.action), ..*step });
        prefix = prefix.extend(step.action, step.obs, step.reward);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::build_uniform_dispersion;
    use crate::process::{make_counterexample, make_example_chain};

    #[test]
    fn raw_mdp_identity_phi_reproduces_rows() {
        let (k, _) = make_counterexample(0.5).unwrap();
        let phi = FeatureMap::identity(&k);
        let b = build_uniform_dispersion(&k, &phi).unwrap();
        let p = build_surrogate_mdp(&k, &phi, &b).unwrap();
        // state 1 under beta: uniform successor, reward 1/2
        let s1 = (0..2).find(|&s| phi.state_label(s) == "1").unwrap();
        let s0 = 1 - s1;
        assert_eq!(p.prob(s1, 1, s0, 2), 0.5);
        assert_eq!(p.prob(s1, 1, s1, 2), 0.5);
        assert_eq!(p.prob(s0, 0, s0, 1), 1.0);
    }

    #[test]
    fn example_chain_uniform_b_average() {
        let (k, phi) = make_example_chain(0.0).unwrap();
        let b = build_uniform_dispersion(&k, &phi).unwrap();
        let p = build_surrogate_mdp(&k, &phi, &b).unwrap();
        let s0 = phi.state_of(k.locate(&History::initial(0, 0)).unwrap());
        // average of 1/2 (from 00) and 0 (from 10)
        assert_eq!(p.next_state_probs(s0, 0)[s0], 0.25);
    }

    #[test]
    fn relabel_constant_pin_is_identity() {
        let (k, _) = make_counterexample(0.0).unwrap();
        let pin = HistoryPolicy::constant(&k, 1);
        let (k2, pol) = relabel_actions(&k, &pin, 1).unwrap();
        assert_eq!(pol, pin);
        for c in 0..k.num_contexts() {
            for a in 0..2 {
                assert_eq!(k.row(c, a), k2.row(c, a));
            }
        }
    }
}
