//! History-level values `V^Π, Q^Π, V*, Q*` and the optimal history policy.
//!
//! Each history's value is the `m`-step look-ahead recursion started at that
//! history, once with terminal value 0 (reported) and once with terminal
//! value `1/(1-γ)` (upper bracket). The gap is at most `γ^m/(1-γ)` for
//! every history.

use std::io::Write;

use crate::error::{LabError, Result};
use crate::mdp::greedy_action;
use crate::process::{
    enumerate_histories, ActId, CtxId, History, HistoryPolicy, ProcessKernel, TruncationBudget,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ValueKind {
    PolicyEvaluation,
    Optimal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistoryValues {
    pub kind: ValueKind,
    /// `q[ctx][a]`, lower bracket.
    pub q: Vec<Vec<f64>>,
    /// `v[ctx]`, lower bracket.
    pub v: Vec<f64>,
    pub q_upper: Vec<Vec<f64>>,
    pub v_upper: Vec<f64>,
    /// Certified one-sided truncation error `γ^m/(1-γ)`.
    pub slack: f64,
    pub depth: usize,
}

impl HistoryValues {
    pub fn q_at(&self, kernel: &ProcessKernel, h: &History, a: ActId) -> Result<f64> {
        if a >= kernel.spec().num_actions() {
            return Err(LabError::Lookup(format!("action index {a} out of range")));
        }
        Ok(self.q[kernel.locate(h)?][a])
    }

    pub fn v_at(&self, kernel: &ProcessKernel, h: &History) -> Result<f64> {
        Ok(self.v[kernel.locate(h)?])
    }

    /// Greedy policy from `q`, ties to the lowest action index.
    pub fn greedy_policy(&self) -> HistoryPolicy {
        HistoryPolicy::Deterministic(self.q.iter().map(|row| greedy_action(row)).collect())
    }

    /// CSV rows `history, action, q, v, slack` for every history of length
    /// at most `max_len` reachable under uniformly random actions.
    pub fn write_csv<W: Write>(&self, kernel: &ProcessKernel, max_len: usize, out: W) -> Result<()> {
        let budget = TruncationBudget::new(max_len, kernel.gamma())?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["history", "action", "q", "v", "slack"])?;
        for rh in enumerate_histories(kernel, &budget, None)? {
            let key = rh.history.key(kernel.spec());
            for (a, name) in kernel.spec().actions.iter().enumerate() {
                w.write_record([
                    key.as_str(),
                    name,
                    &self.q[rh.ctx][a].to_string(),
                    &self.v[rh.ctx].to_string(),
                    &self.slack.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// `Q(c,a) = Σ P(o'r'|c,a)[r' + γ V(c')]` in declaration order.
fn backup(kernel: &ProcessKernel, v: &[f64]) -> Vec<Vec<f64>> {
    let gamma = kernel.gamma();
    let rewards = &kernel.spec().rewards;
    kernel
        .contexts()
        .iter()
        .map(|ctx| {
            ctx.rows
                .iter()
                .map(|row| row.iter().map(|o| o.prob * (rewards[o.reward] + gamma * v[o.next])).sum())
                .collect()
        })
        .collect()
}

fn unroll(
    kernel: &ProcessKernel,
    depth: usize,
    terminal: f64,
    select: &dyn Fn(CtxId, &[f64]) -> f64,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut v = vec![terminal; kernel.num_contexts()];
    let mut q = Vec::new();
    for _ in 0..depth {
        q = backup(kernel, &v);
        v = q.iter().enumerate().map(|(c, row)| select(c, row)).collect();
    }
    (q, v)
}

fn run(
    kernel: &ProcessKernel,
    budget: &TruncationBudget,
    kind: ValueKind,
    select: &dyn Fn(CtxId, &[f64]) -> f64,
) -> Result<HistoryValues> {
    if budget.depth == 0 {
        return Err(LabError::Config("truncation depth must be >= 1".into()));
    }
    let (q, v) = unroll(kernel, budget.depth, 0.0, select);
    let (q_upper, v_upper) = unroll(kernel, budget.depth, kernel.spec().value_cap(), select);
    Ok(HistoryValues {
        kind,
        q,
        v,
        q_upper,
        v_upper,
        slack: budget.tail_bound,
        depth: budget.depth,
    })
}

/// `Q^Π` and `V^Π` for a deterministic policy.
pub fn evaluate_history_policy(
    kernel: &ProcessKernel,
    policy: &HistoryPolicy,
    budget: &TruncationBudget,
) -> Result<HistoryValues> {
    policy.validate(kernel)?;
    let acts = policy
        .actions()
        .ok_or_else(|| LabError::Config("history policy evaluation needs a deterministic policy".into()))?;
    run(kernel, budget, ValueKind::PolicyEvaluation, &|c, row| row[acts[c]])
}

/// `Q*`, `V*` and the greedy `Π*` (ties to the lowest action index).
pub fn solve_history_optimal(
    kernel: &ProcessKernel,
    budget: &TruncationBudget,
) -> Result<(HistoryValues, HistoryPolicy)> {
    let values = run(kernel, budget, ValueKind::Optimal, &|_, row| {
        row.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    })?;
    let policy = values.greedy_policy();
    Ok((values, policy))
}
