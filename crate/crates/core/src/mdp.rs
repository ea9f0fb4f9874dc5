//! Finite stationary MDPs: policy evaluation, optimal values and greedy
//! policies.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::process::{check_gamma, ActId, NORM_TOL};

pub const DEFAULT_TOL: f64 = 1e-10;

/// Relative tolerance under which two action values count as tied.
const TIE_TOL: f64 = 1e-12;

/// Index of the largest entry; near-ties go to the lowest index.
pub fn greedy_action(values: &[f64]) -> ActId {
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let cutoff = best - TIE_TOL * best.abs().max(1.0);
    values.iter().position(|&q| q >= cutoff).unwrap_or(0)
}

/// `p(s'r'|s,a)`; a missing row is treated as absorbing with reward 0.
#[derive(Clone, Debug, PartialEq)]
pub struct FiniteMDP {
    pub states: Vec<String>,
    pub actions: Vec<String>,
    pub rewards: Vec<f64>,
    pub gamma: f64,
    /// `rows[s][a][s' * |R| + r]`
    rows: Vec<Vec<Option<Vec<f64>>>>,
}

impl FiniteMDP {
    pub fn new(
        states: Vec<String>,
        actions: Vec<String>,
        rewards: Vec<f64>,
        gamma: f64,
        rows: Vec<Vec<Option<Vec<f64>>>>,
    ) -> Result<Self> {
        let mdp = FiniteMDP { states, actions, rewards, gamma, rows };
        mdp.validate()?;
        Ok(mdp)
    }

    pub fn validate(&self) -> Result<()> {
        check_gamma(self.gamma)?;
        if self.states.is_empty() || self.actions.is_empty() || self.rewards.is_empty() {
            return Err(LabError::Config("MDP needs states, actions and rewards".into()));
        }
        if self.rewards.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(LabError::Config("MDP reward outside [0,1]".into()));
        }
        let width = self.states.len() * self.rewards.len();
        if self.rows.len() != self.states.len() {
            return Err(LabError::Config("row table does not match the state set".into()));
        }
        for (s, per_action) in self.rows.iter().enumerate() {
            if per_action.len() != self.actions.len() {
                return Err(LabError::Config("row table does not match the action set".into()));
            }
            for (a, row) in per_action.iter().enumerate() {
                let Some(row) = row else { continue };
                if row.len() != width {
                    return Err(LabError::Config("row has the wrong width".into()));
                }
                let total: f64 = row.iter().sum();
                if row.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > NORM_TOL {
                    return Err(LabError::Normalization(format!(
                        "row ({}, {}) sums to {total}",
                        self.states[s], self.actions[a]
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn num_rewards(&self) -> usize {
        self.rewards.len()
    }

    pub fn row(&self, s: usize, a: ActId) -> Option<&[f64]> {
        self.rows[s][a].as_deref()
    }

    pub fn prob(&self, s: usize, a: ActId, next: usize, r: usize) -> f64 {
        self.row(s, a).map_or(0.0, |row| row[next * self.rewards.len() + r])
    }

    pub fn missing_pairs(&self) -> Vec<(usize, ActId)> {
        let mut out = Vec::new();
        for s in 0..self.num_states() {
            for a in 0..self.num_actions() {
                if self.rows[s][a].is_none() {
                    out.push((s, a));
                }
            }
        }
        out
    }

    /// Transition part `p(s'|s,a)`.
    pub fn next_state_probs(&self, s: usize, a: ActId) -> Vec<f64> {
        let nr = self.num_rewards();
        match self.row(s, a) {
            Some(row) => row.chunks(nr).map(|c| c.iter().sum()).collect(),
            None => {
                let mut v = vec![0.0; self.num_states()];
                v[s] = 1.0;
                v
            }
        }
    }

    pub fn expected_reward(&self, s: usize, a: ActId) -> f64 {
        let nr = self.num_rewards();
        self.row(s, a).map_or(0.0, |row| {
            row.iter().enumerate().map(|(i, p)| p * self.rewards[i % nr]).sum()
        })
    }

    /// One Bellman backup `r + γ Σ p v` for every (s,a).
    pub fn backup(&self, v: &[f64]) -> Vec<Vec<f64>> {
        let nr = self.num_rewards();
        (0..self.num_states())
            .map(|s| {
                (0..self.num_actions())
                    .map(|a| match self.row(s, a) {
                        Some(row) => row
                            .iter()
                            .enumerate()
                            .map(|(i, p)| p * (self.rewards[i % nr] + self.gamma * v[i / nr]))
                            .sum(),
                        None => self.gamma * v[s],
                    })
                    .collect()
            })
            .collect()
    }

    pub fn to_doc(&self) -> MdpDoc {
        let nr = self.num_rewards();
        let mut entries = Vec::new();
        let mut missing = Vec::new();
        for s in 0..self.num_states() {
            for a in 0..self.num_actions() {
                match self.row(s, a) {
                    Some(row) => {
                        for (i, &p) in row.iter().enumerate() {
                            if p > 0.0 {
                                entries.push(MdpEntry {
                                    state: self.states[s].clone(),
                                    action: self.actions[a].clone(),
                                    next: self.states[i / nr].clone(),
                                    reward: self.rewards[i % nr],
                                    prob: p,
                                });
                            }
                        }
                    }
                    None => missing.push((self.states[s].clone(), self.actions[a].clone())),
                }
            }
        }
        MdpDoc {
            states: self.states.clone(),
            actions: self.actions.clone(),
            rewards: self.rewards.clone(),
            gamma: self.gamma,
            entries,
            missing,
        }
    }

    pub fn from_doc(doc: &MdpDoc) -> Result<Self> {
        let (ns, na, nr) = (doc.states.len(), doc.actions.len(), doc.rewards.len());
        let find = |names: &[String], n: &str| {
            names
                .iter()
                .position(|x| x == n)
                .ok_or_else(|| LabError::Config(format!("unknown name '{n}'")))
        };
        let missing: Vec<(usize, usize)> = doc
            .missing
            .iter()
            .map(|(s, a)| Ok((find(&doc.states, s)?, find(&doc.actions, a)?)))
            .collect::<Result<_>>()?;
        let mut rows: Vec<Vec<Option<Vec<f64>>>> = (0..ns)
            .map(|s| {
                (0..na)
                    .map(|a| (!missing.contains(&(s, a))).then(|| vec![0.0; ns * nr]))
                    .collect()
            })
            .collect();
        for e in &doc.entries {
            let s = find(&doc.states, &e.state)?;
            let a = find(&doc.actions, &e.action)?;
            let n = find(&doc.states, &e.next)?;
            let r = doc
                .rewards
                .iter()
                .position(|x| *x == e.reward)
                .ok_or_else(|| LabError::Config(format!("unknown reward {}", e.reward)))?;
            let row = rows[s][a]
                .as_mut()
                .ok_or_else(|| LabError::Config("entry for a missing row".into()))?;
            row[n * nr + r] += e.prob;
        }
        FiniteMDP::new(doc.states.clone(), doc.actions.clone(), doc.rewards.clone(), doc.gamma, rows)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdpEntry {
    pub state: String,
    pub action: String,
    pub next: String,
    pub reward: f64,
    pub prob: f64,
}

/// JSON form of a [`FiniteMDP`]: row-major sparse entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdpDoc {
    pub states: Vec<String>,
    pub actions: Vec<String>,
    pub rewards: Vec<f64>,
    pub gamma: f64,
    pub entries: Vec<MdpEntry>,
    #[serde(default)]
    pub missing: Vec<(String, String)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateValues {
    pub q: Vec<Vec<f64>>,
    pub v: Vec<f64>,
    /// Certified sup-norm distance to the exact fixed point.
    pub tol: f64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StatePolicy {
    pub act: Vec<ActId>,
}

impl StatePolicy {
    pub fn constant(num_states: usize, a: ActId) -> Self {
        StatePolicy { act: vec![a; num_states] }
    }
}

fn check_tol(tol: f64) -> Result<()> {
    if !(tol > 0.0) {
        return Err(LabError::Config(format!("tolerance must be positive, got {tol}")));
    }
    Ok(())
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Solves `(I - γ P_π) v = r_π` by Gaussian elimination with partial pivoting.
fn solve_policy_linear(mdp: &FiniteMDP, pol: &StatePolicy) -> Vec<f64> {
    let n = mdp.num_states();
    let mut m = vec![vec![0.0; n + 1]; n];
    for s in 0..n {
        let a = pol.act[s];
        let p = mdp.next_state_probs(s, a);
        for t in 0..n {
            m[s][t] = -mdp.gamma * p[t];
        }
        m[s][s] += 1.0;
        m[s][n] = mdp.expected_reward(s, a);
    }
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .expect("non-empty range");
        m.swap(col, pivot);
        let d = m[col][col];
        for row in col + 1..n {
            let f = m[row][col] / d;
            if f != 0.0 {
                for k in col..=n {
                    m[row][k] -= f * m[col][k];
                }
            }
        }
    }
    let mut v = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = m[row][n];
        for k in row + 1..n {
            acc -= m[row][k] * v[k];
        }
        v[row] = acc / m[row][row];
    }
    v
}

fn certify(gamma: f64, residual: f64) -> f64 {
    residual / (1.0 - gamma)
}

pub fn evaluate_state_policy(mdp: &FiniteMDP, pol: &StatePolicy, tol: f64) -> Result<StateValues> {
    check_tol(tol)?;
    mdp.validate()?;
    if pol.act.len() != mdp.num_states() || pol.act.iter().any(|&a| a >= mdp.num_actions()) {
        return Err(LabError::Config("policy does not cover the MDP".into()));
    }
    let mut v = solve_policy_linear(mdp, pol);
    let mut sweeps = 0;
    loop {
        let q = mdp.backup(&v);
        let next: Vec<f64> = (0..mdp.num_states()).map(|s| q[s][pol.act[s]]).collect();
        let err = certify(mdp.gamma, sup_diff(&next, &v));
        if err <= tol || sweeps >= 10_000 {
            return Ok(StateValues { q, v, tol: err.max(f64::EPSILON) });
        }
        v = next;
        sweeps += 1;
    }
}

/// Optimal values by policy iteration with exact policy solves; the greedy
/// policy breaks ties by lowest action index.
pub fn solve_state_optimal(mdp: &FiniteMDP, tol: f64) -> Result<(StateValues, StatePolicy)> {
    check_tol(tol)?;
    mdp.validate()?;
    let ns = mdp.num_states();
    let q0 = mdp.backup(&vec![0.0; ns]);
    let mut pol = StatePolicy { act: q0.iter().map(|q| greedy_action(q)).collect() };
    let mut rounds = 0;
    let mut v = solve_policy_linear(mdp, &pol);
    loop {
        let q = mdp.backup(&v);
        let mut changed = false;
        for s in 0..ns {
            let cur = q[s][pol.act[s]];
            let best = greedy_action(&q[s]);
            let margin = TIE_TOL * cur.abs().max(1.0);
            if q[s][best] > cur + margin {
                pol.act[s] = best;
                changed = true;
            }
        }
        rounds += 1;
        if !changed || rounds > 10_000 {
            break;
        }
        v = solve_policy_linear(mdp, &pol);
    }
    // polish to the certified tolerance with optimality backups
    let mut sweeps = 0;
    loop {
        let q = mdp.backup(&v);
        let next: Vec<f64> = q.iter().map(|row| row.iter().copied().fold(f64::MIN, f64::max)).collect();
        let err = certify(mdp.gamma, sup_diff(&next, &v));
        if err <= tol || sweeps >= 10_000 {
            let act = q.iter().map(|row| greedy_action(row)).collect();
            return Ok((StateValues { q, v: next, tol: err.max(f64::EPSILON) }, StatePolicy { act }));
        }
        v = next;
        sweeps += 1;
    }
}

/// Plain value iteration from `v = 0`, yielding `(v_k, ‖v_k − v_{k−1}‖)`.
pub struct ValueIteration<'a> {
    mdp: &'a FiniteMDP,
    v: Vec<f64>,
}

impl<'a> ValueIteration<'a> {
    pub fn new(mdp: &'a FiniteMDP) -> Self {
        ValueIteration { mdp, v: vec![0.0; mdp.num_states()] }
    }
}

impl Iterator for ValueIteration<'_> {
    type Item = (Vec<f64>, f64);

    fn next(&mut self) -> Option<Self::Item> {
        let q = self.mdp.backup(&self.v);
        let next: Vec<f64> = q.iter().map(|row| row.iter().copied().fold(f64::MIN, f64::max)).collect();
        let diff = sup_diff(&next, &self.v);
        self.v = next.clone();
        Some((next, diff))
    }
}

/// Value iteration stopped once successive iterates differ by at most
/// `tol·(1−γ)/γ`; a single sweep when γ = 0.
pub fn value_iteration(mdp: &FiniteMDP, tol: f64) -> Result<(StateValues, StatePolicy)> {
    check_tol(tol)?;
    mdp.validate()?;
    let threshold = if mdp.gamma == 0.0 { f64::INFINITY } else { tol * (1.0 - mdp.gamma) / mdp.gamma };
    let mut v = vec![0.0; mdp.num_states()];
    for (next, diff) in ValueIteration::new(mdp).take(1_000_000) {
        v = next;
        if diff <= threshold {
            break;
        }
    }
    let q = mdp.backup(&v);
    let act = q.iter().map(|row| greedy_action(row)).collect();
    Ok((StateValues { q, v, tol }, StatePolicy { act }))
}
