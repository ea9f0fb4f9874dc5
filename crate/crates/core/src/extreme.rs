//! Extreme aggregation: feature maps built from discretized optimal values.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::aggregation::{build_surrogate_mdp, DispersionBuilder, FeatureMap};
use crate::error::{LabError, Result};
use crate::mdp::{solve_state_optimal, DEFAULT_TOL};
use crate::process::{HistoryPolicy, ProcessKernel, TruncationBudget};
use crate::values::{evaluate_history_policy, solve_history_optimal, HistoryValues};

/// Default cap on the number of occupied grid cells.
pub const DEFAULT_STATE_CAP: usize = 100_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtremeVariant {
    QstarGrid,
    VstarPair,
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(LabError::Config(format!("grid width must be positive, got {eps}")));
    }
    Ok(())
}

fn cell(x: f64, eps: f64) -> i64 {
    (x / eps).floor() as i64
}

fn grid_map(labels: Vec<String>, cap: usize) -> Result<FeatureMap> {
    let mut index: HashMap<&str, usize> = HashMap::new();
    let cells: Vec<usize> = labels
        .iter()
        .map(|l| {
            let next = index.len();
            *index.entry(l.as_str()).or_insert(next)
        })
        .collect();
    if index.len() > cap {
        return Err(LabError::Budget(format!("{} occupied cells exceed the cap {cap}", index.len())));
    }
    let mut names = vec![String::new(); index.len()];
    for (l, &i) in &index {
        names[i] = l.to_string();
    }
    FeatureMap::from_partition(&cells).with_labels(names)
}

/// `φ(h) = (⌊Q*(h,a)/ε⌋)_a` over occupied cells.
pub fn build_qstar_grid_phi(
    kernel: &ProcessKernel,
    budget: &TruncationBudget,
    eps: f64,
) -> Result<FeatureMap> {
    build_qstar_grid_phi_capped(kernel, budget, eps, DEFAULT_STATE_CAP)
}

pub fn build_qstar_grid_phi_capped(
    kernel: &ProcessKernel,
    budget: &TruncationBudget,
    eps: f64,
    cap: usize,
) -> Result<FeatureMap> {
    check_eps(eps)?;
    let (star, _) = solve_history_optimal(kernel, budget)?;
    qstar_grid_from_values(&star, eps, cap)
}

pub(crate) fn qstar_grid_from_values(star: &HistoryValues, eps: f64, cap: usize) -> Result<FeatureMap> {
    let labels = star
        .q
        .iter()
        .map(|row| {
            let cells: Vec<String> = row.iter().map(|&q| cell(q, eps).to_string()).collect();
            format!("q[{}]", cells.join(","))
        })
        .collect();
    grid_map(labels, cap)
}

/// `φ(h) = (⌊V*(h)/ε⌋, Π*(h))` over occupied pairs.
pub fn build_vstar_pair_phi(
    kernel: &ProcessKernel,
    budget: &TruncationBudget,
    eps: f64,
) -> Result<FeatureMap> {
    build_vstar_pair_phi_capped(kernel, budget, eps, DEFAULT_STATE_CAP)
}

pub fn build_vstar_pair_phi_capped(
    kernel: &ProcessKernel,
    budget: &TruncationBudget,
    eps: f64,
    cap: usize,
) -> Result<FeatureMap> {
    check_eps(eps)?;
    let (star, pi) = solve_history_optimal(kernel, budget)?;
    let acts = pi.actions().expect("greedy policy is deterministic");
    let labels = star
        .v
        .iter()
        .zip(acts)
        .map(|(&v, &a)| format!("v[{}]/{}", cell(v, eps), kernel.spec().actions[a]))
        .collect();
    grid_map(labels, cap)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StateBound {
    pub value: f64,
    /// `ε' > 1/(1-γ)`: every policy is ε'-optimal.
    pub trivial: bool,
    /// The bound rests on an unproven conjecture.
    pub conditional: bool,
    pub note: String,
}

/// `(3/(ε'(1-γ)^3))^{|A|}` for the Q*-grid; for the (V*, Π*) map the
/// conjectured `|A|/(ε'(1-γ)^2)`, marked conditional.
pub fn state_bound(
    eps_prime: f64,
    gamma: f64,
    num_actions: usize,
    variant: ExtremeVariant,
) -> Result<StateBound> {
    check_eps(eps_prime)?;
    crate::process::check_gamma(gamma)?;
    let trivial = eps_prime > 1.0 / (1.0 - gamma);
    let (value, conditional, mut note) = match variant {
        ExtremeVariant::QstarGrid => (
            (3.0 / (eps_prime * (1.0 - gamma).powi(3))).powi(num_actions as i32),
            false,
            String::new(),
        ),
        ExtremeVariant::VstarPair => (
            num_actions as f64 / (eps_prime * (1.0 - gamma).powi(2)),
            true,
            "conditional: conjectured form with unknown exponent taken as 1".to_string(),
        ),
    };
    if trivial {
        if !note.is_empty() {
            note.push_str("; ");
        }
        note.push_str("eps' exceeds 1/(1-gamma): any policy is eps'-optimal");
    }
    Ok(StateBound { value, trivial, conditional, note })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExtremeReport {
    pub variant: ExtremeVariant,
    pub dispersion: DispersionBuilder,
    pub grid_eps: f64,
    /// `eps + 2·slack`, used in every bound below.
    pub eps_effective: f64,
    /// `2·eps_effective/(1-γ)^2`.
    pub target_eps_prime: f64,
    pub num_states: usize,
    pub state_bound: StateBound,
    pub state_bound_holds: bool,
    /// `(⌊1/(eps(1-γ))⌋ + 1)^{|A|}`
    pub raw_cell_bound: f64,
    pub achieved_gap: f64,
    /// Claimed gap bound plus slack; absent for the conditional variant.
    pub gap_bound: Option<f64>,
    pub gap_holds: bool,
    pub slack: f64,
    /// Representative history of the context attaining the gap.
    pub worst_history: String,
}

/// Builds φ, B and p; lifts the optimal state policy to histories and
/// measures its shortfall against `V*`.
pub fn run_extreme_pipeline(
    kernel: &ProcessKernel,
    budget: &TruncationBudget,
    eps: f64,
    builder: DispersionBuilder,
    variant: ExtremeVariant,
) -> Result<ExtremeReport> {
    check_eps(eps)?;
    let gamma = kernel.gamma();
    let (star, _) = solve_history_optimal(kernel, budget)?;
    let phi = match variant {
        ExtremeVariant::QstarGrid => qstar_grid_from_values(&star, eps, DEFAULT_STATE_CAP)?,
        ExtremeVariant::VstarPair => build_vstar_pair_phi(kernel, budget, eps)?,
    };
    let b = builder.build(kernel, &phi, budget)?;
    let p = build_surrogate_mdp(kernel, &phi, &b)?;
    let (_, pi) = solve_state_optimal(&p, DEFAULT_TOL)?;
    let lifted = HistoryPolicy::from_fn(kernel, |c| pi.act[phi.state_of(c)]);
    let tilde = evaluate_history_policy(kernel, &lifted, budget)?;

    let mut achieved_gap = f64::NEG_INFINITY;
    let mut worst = 0;
    for c in 0..kernel.num_contexts() {
        let gap = star.v[c] - tilde.v[c];
        if gap > achieved_gap {
            achieved_gap = gap;
            worst = c;
        }
    }
    let slack = budget.tail_bound;
    let eps_effective = eps + 2.0 * slack;
    let target_eps_prime = 2.0 * eps_effective / (1.0 - gamma).powi(2);
    let na = kernel.spec().num_actions();
    let bound = state_bound(target_eps_prime, gamma, na, variant)?;
    let num_states = phi.num_states();
    let gap_bound = match variant {
        ExtremeVariant::QstarGrid => Some(target_eps_prime + slack),
        ExtremeVariant::VstarPair => None,
    };
    Ok(ExtremeReport {
        variant,
        dispersion: builder,
        grid_eps: eps,
        eps_effective,
        target_eps_prime,
        num_states,
        state_bound_holds: bound.trivial || num_states as f64 <= bound.value,
        state_bound: bound,
        raw_cell_bound: ((1.0 / (eps * (1.0 - gamma))).floor() + 1.0).powi(na as i32),
        achieved_gap,
        gap_holds: gap_bound.is_none_or(|g| achieved_gap <= g + 1e-12),
        gap_bound,
        slack,
        worst_history: kernel.context_key(worst),
    })
}

/// CSV rows `history, cell, qstar` (Q* vector joined by `;`) per context.
pub fn write_grid_csv<W: Write>(
    kernel: &ProcessKernel,
    phi: &FeatureMap,
    star: &HistoryValues,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["history", "cell", "qstar"])?;
    for c in 0..kernel.num_contexts() {
        let q: Vec<String> = star.q[c].iter().map(|x| x.to_string()).collect();
        w.write_record([kernel.context_key(c).as_str(), phi.state_label(phi.state_of(c)), &q.join(";")])?;
    }
    w.flush()?;
    Ok(())
}
