//! Uniformity constants and numerical certification of the aggregation
//! bounds relating history values to surrogate-MDP values.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregation::{
    build_surrogate_mdp, mdp_deviation, Deviation, Dispersion,
    DispersionBuilder, FeatureMap, PhiSpec, StateId,
};
use crate::error::{LabError, Result};
use crate::mdp::{evaluate_state_policy, solve_state_optimal, FiniteMDP, StatePolicy, StateValues, DEFAULT_TOL};
use crate::process::{
    make_random_process, ActId, CtxId, HistoryPolicy, ProcessKernel, RandomSizes, TruncationBudget,
};
use crate::values::{evaluate_history_policy, solve_history_optimal, HistoryValues};

/// Absolute tolerance added to every bound comparison.
pub const CHECK_TOL: f64 = 1e-8;
/// Deviation below which `P_φ` counts as an exact MDP.
pub const DEVIATION_TOL: f64 = 1e-12;
/// Number of random test functions for the B-P-p identity.
pub const BPP_FUNCTIONS: usize = 50;

/// Measured ε at or below this counts as ε = 0.
pub fn exact_eps(slack: f64) -> f64 {
    1e-12 + 2.0 * slack
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TheoremId {
    PhiMdpPi,
    PhiMdpStar,
    BppRelation,
    QvRelation,
    PhiQPi,
    PhiVPi,
    PhiQStar,
    QPiStar,
    PhiVStar,
}

impl TheoremId {
    pub const ALL: [TheoremId; 9] = [
        TheoremId::PhiMdpPi,
        TheoremId::PhiMdpStar,
        TheoremId::BppRelation,
        TheoremId::QvRelation,
        TheoremId::PhiQPi,
        TheoremId::PhiVPi,
        TheoremId::PhiQStar,
        TheoremId::QPiStar,
        TheoremId::PhiVStar,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TheoremId::PhiMdpPi => "phi-mdp-pi",
            TheoremId::PhiMdpStar => "phi-mdp-star",
            TheoremId::BppRelation => "bpp-relation",
            TheoremId::QvRelation => "qv-relation",
            TheoremId::PhiQPi => "phi-q-pi",
            TheoremId::PhiVPi => "phi-v-pi",
            TheoremId::PhiQStar => "phi-q-star",
            TheoremId::QPiStar => "q-pi-star",
            TheoremId::PhiVStar => "phi-v-star",
        }
    }

    /// Statements about a given policy `Π`.
    pub fn needs_policy(self) -> bool {
        matches!(self, TheoremId::PhiMdpPi | TheoremId::PhiQPi | TheoremId::PhiVPi)
    }
}

impl fmt::Display for TheoremId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TheoremId {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        TheoremId::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| LabError::Config(format!("unknown theorem id '{s}'")))
    }
}

/// A worst-case tuple: the compared quantities and where they were read.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Witness {
    pub state: String,
    pub action: Option<String>,
    /// Representative histories of the contexts involved.
    pub histories: Vec<String>,
    /// The compared values; the gap is `values[0] - values[1]` (or its
    /// absolute value for two-sided clauses).
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpsilonProfile {
    pub eps_q_pi: Option<f64>,
    pub eps_v_pi: Option<f64>,
    pub eps_q_star: f64,
    pub eps_v_star: f64,
    pub pi_uniform: Option<bool>,
    pub pi_star_uniform: bool,
    pub witnesses: Vec<(String, Witness)>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundReport {
    pub theorem_id: TheoremId,
    pub clause: String,
    pub hypothesis_eps: f64,
    pub claimed_bound: f64,
    pub observed_gap: f64,
    pub slack_used: f64,
    pub holds: bool,
    /// Whether the statement's premises are met; inapplicable reports are
    /// informational only.
    pub applicable: bool,
    pub note: String,
    pub witnesses: Vec<Witness>,
}

impl BoundReport {
    pub fn violated(&self) -> bool {
        self.applicable && !self.holds
    }
}

/// Running maximum with the witness that attains it.
struct Worst {
    gap: f64,
    witness: Option<Witness>,
}

impl Worst {
    fn new() -> Self {
        Worst { gap: f64::NEG_INFINITY, witness: None }
    }

    fn offer(&mut self, gap: f64, make: impl FnOnce() -> Witness) {
        if gap > self.gap {
            self.gap = gap;
            self.witness = Some(make());
        }
    }

    fn value(&self) -> f64 {
        if self.gap == f64::NEG_INFINITY { 0.0 } else { self.gap }
    }
}

fn spread_q(
    kernel: &ProcessKernel,
    phi: &FeatureMap,
    q: &[Vec<f64>],
) -> (f64, Option<Witness>) {
    let mut worst = Worst::new();
    for (s, cells) in phi.preimages().iter().enumerate() {
        for a in 0..kernel.spec().num_actions() {
            let lo = cells.iter().copied().min_by(|&x, &y| q[x][a].total_cmp(&q[y][a]));
            let hi = cells.iter().copied().max_by(|&x, &y| q[x][a].total_cmp(&q[y][a]));
            if let (Some(lo), Some(hi)) = (lo, hi) {
                worst.offer(q[hi][a] - q[lo][a], || Witness {
                    state: phi.state_label(s).to_string(),
                    action: Some(kernel.spec().actions[a].clone()),
                    histories: vec![kernel.context_key(hi), kernel.context_key(lo)],
                    values: vec![q[hi][a], q[lo][a]],
                });
            }
        }
    }
    (worst.value(), worst.witness)
}

fn spread_v(kernel: &ProcessKernel, phi: &FeatureMap, v: &[f64]) -> (f64, Option<Witness>) {
    let mut worst = Worst::new();
    for (s, cells) in phi.preimages().iter().enumerate() {
        let lo = cells.iter().copied().min_by(|&x, &y| v[x].total_cmp(&v[y]));
        let hi = cells.iter().copied().max_by(|&x, &y| v[x].total_cmp(&v[y]));
        if let (Some(lo), Some(hi)) = (lo, hi) {
            worst.offer(v[hi] - v[lo], || Witness {
                state: phi.state_label(s).to_string(),
                action: None,
                histories: vec![kernel.context_key(hi), kernel.context_key(lo)],
                values: vec![v[hi], v[lo]],
            });
        }
    }
    (worst.value(), worst.witness)
}

fn is_uniform(phi: &FeatureMap, acts: &[ActId]) -> bool {
    phi.preimages().iter().all(|cells| cells.iter().all(|&c| acts[c] == acts[cells[0]]))
}

/// `π(s) := Π(h)` for the first context of each preimage.
fn lift_to_states(phi: &FeatureMap, acts: &[ActId]) -> StatePolicy {
    StatePolicy { act: phi.preimages().iter().map(|cells| acts[cells[0]]).collect() }
}

fn profile_from(
    kernel: &ProcessKernel,
    phi: &FeatureMap,
    star: &HistoryValues,
    pi_star: &[ActId],
    pol: Option<(&HistoryValues, &[ActId])>,
) -> EpsilonProfile {
    let mut witnesses = Vec::new();
    let mut keep = |name: &str, w: Option<Witness>| {
        if let Some(w) = w {
            witnesses.push((name.to_string(), w));
        }
    };
    let (eps_q_star, w) = spread_q(kernel, phi, &star.q);
    keep("eps_q_star", w);
    let (eps_v_star, w) = spread_v(kernel, phi, &star.v);
    keep("eps_v_star", w);
    let (mut eps_q_pi, mut eps_v_pi, mut pi_uniform) = (None, None, None);
    if let Some((values, acts)) = pol {
        let (e, w) = spread_q(kernel, phi, &values.q);
        keep("eps_q_pi", w);
        eps_q_pi = Some(e);
        let (e, w) = spread_v(kernel, phi, &values.v);
        keep("eps_v_pi", w);
        eps_v_pi = Some(e);
        pi_uniform = Some(is_uniform(phi, acts));
    }
    EpsilonProfile {
        eps_q_pi,
        eps_v_pi,
        eps_q_star,
        eps_v_star,
        pi_uniform,
        pi_star_uniform: is_uniform(phi, pi_star),
        witnesses,
    }
}

fn deterministic(kernel: &ProcessKernel, policy: &HistoryPolicy) -> Result<Vec<ActId>> {
    policy.validate(kernel)?;
    policy
        .actions()
        .map(<[ActId]>::to_vec)
        .ok_or_else(|| LabError::Config("uniformity is measured for deterministic policies".into()))
}

/// ε constants of `Q^Π, V^Π, Q*, V*` over same-state histories, plus the
/// policy-constancy flags.
pub fn measure_uniformity(
    kernel: &ProcessKernel,
    phi: &FeatureMap,
    policy: Option<&HistoryPolicy>,
    budget: &TruncationBudget,
) -> Result<EpsilonProfile> {
    phi.check_kernel(kernel)?;
    let (star, pi_star) = solve_history_optimal(kernel, budget)?;
    let pol = match policy {
        Some(p) => {
            let acts = deterministic(kernel, p)?;
            Some((evaluate_history_policy(kernel, p, budget)?, acts))
        }
        None => None,
    };
    Ok(profile_from(
        kernel,
        phi,
        &star,
        pi_star.actions().expect("greedy policy is deterministic"),
        pol.as_ref().map(|(v, a)| (v, a.as_slice())),
    ))
}

struct PolicyPart {
    acts: Vec<ActId>,
    values: HistoryValues,
    state_values: StateValues,
}

/// Everything the theorem checks share for one `(P, φ, B, Π)` configuration.
pub struct TheoremLab<'a> {
    kernel: &'a ProcessKernel,
    phi: &'a FeatureMap,
    b: &'a Dispersion,
    budget: TruncationBudget,
    seed: u64,
    p: FiniteMDP,
    p_star: StateValues,
    p_pi_star: StatePolicy,
    star: HistoryValues,
    pi_star: Vec<ActId>,
    pol: Option<PolicyPart>,
    deviation: Deviation,
    profile: EpsilonProfile,
    dropped: Vec<(StateId, ActId)>,
}

impl<'a> TheoremLab<'a> {
    pub fn new(
        kernel: &'a ProcessKernel,
        phi: &'a FeatureMap,
        b: &'a Dispersion,
        policy: Option<&HistoryPolicy>,
        budget: &TruncationBudget,
        tol: f64,
    ) -> Result<Self> {
        phi.check_kernel(kernel)?;
        let p = build_surrogate_mdp(kernel, phi, b)?;
        let (p_star, p_pi_star) = solve_state_optimal(&p, tol)?;
        let (star, pi_star) = solve_history_optimal(kernel, budget)?;
        let pi_star = pi_star.actions().expect("greedy policy is deterministic").to_vec();
        let pol = match policy {
            Some(policy) => {
                let acts = deterministic(kernel, policy)?;
                let values = evaluate_history_policy(kernel, policy, budget)?;
                let lifted = lift_to_states(phi, &acts);
                let state_values = evaluate_state_policy(&p, &lifted, tol)?;
                Some(PolicyPart { acts, values, state_values })
            }
            None => None,
        };
        let profile = profile_from(
            kernel,
            phi,
            &star,
            &pi_star,
            pol.as_ref().map(|pp| (&pp.values, pp.acts.as_slice())),
        );
        Ok(TheoremLab {
            kernel,
            phi,
            b,
            budget: *budget,
            seed: 0,
            deviation: mdp_deviation(kernel, phi)?,
            dropped: b.dropped(),
            p,
            p_star,
            p_pi_star,
            star,
            pi_star,
            pol,
            profile,
        })
    }

    /// Seed for the random test functions and policy perturbations.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn profile(&self) -> &EpsilonProfile {
        &self.profile
    }

    pub fn deviation(&self) -> &Deviation {
        &self.deviation
    }

    pub fn surrogate(&self) -> &FiniteMDP {
        &self.p
    }

    pub fn state_optimal(&self) -> (&StateValues, &StatePolicy) {
        (&self.p_star, &self.p_pi_star)
    }

    pub fn history_optimal(&self) -> (&HistoryValues, &[ActId]) {
        (&self.star, &self.pi_star)
    }

    fn slack(&self) -> f64 {
        self.budget.tail_bound
    }

    fn gamma(&self) -> f64 {
        self.kernel.gamma()
    }

    fn key(&self, c: CtxId) -> String {
        self.kernel.context_key(c)
    }

    fn action(&self, a: ActId) -> String {
        self.kernel.spec().actions[a].clone()
    }

    fn state(&self, c: CtxId) -> String {
        self.phi.state_label(self.phi.state_of(c)).to_string()
    }

    #[allow(clippy::too_many_arguments)]
    fn report(
        &self,
        id: TheoremId,
        clause: &str,
        eps: f64,
        claimed: f64,
        worst: Worst,
        slack_used: f64,
        applicable: bool,
        note: String,
    ) -> BoundReport {
        let observed = worst.value();
        BoundReport {
            theorem_id: id,
            clause: clause.to_string(),
            hypothesis_eps: eps,
            claimed_bound: claimed,
            observed_gap: observed,
            slack_used,
            holds: observed <= claimed + slack_used + CHECK_TOL,
            applicable,
            note,
            witnesses: worst.witness.into_iter().collect(),
        }
    }

    fn policy_part(&self, id: TheoremId) -> Result<&PolicyPart> {
        self.pol
            .as_ref()
            .ok_or_else(|| LabError::Config(format!("{id} needs a policy")))
    }

    /// `max |Q(c,a) - q(φ(c),a)|` over all contexts and actions.
    fn q_gap(&self, hq: &[Vec<f64>], sq: &[Vec<f64>]) -> Worst {
        let mut worst = Worst::new();
        for c in 0..self.kernel.num_contexts() {
            let s = self.phi.state_of(c);
            for a in 0..self.kernel.spec().num_actions() {
                worst.offer((hq[c][a] - sq[s][a]).abs(), || Witness {
                    state: self.state(c),
                    action: Some(self.action(a)),
                    histories: vec![self.key(c)],
                    values: vec![hq[c][a], sq[s][a]],
                });
            }
        }
        worst
    }

    /// `max (V1(c) - V2(c))` between two history-level value vectors.
    fn history_gap(&self, v1: &[f64], v2: &[f64]) -> Worst {
        let mut worst = Worst::new();
        for (c, (&x, &y)) in v1.iter().zip(v2).enumerate() {
            worst.offer(x - y, || Witness {
                state: self.state(c),
                action: None,
                histories: vec![self.key(c)],
                values: vec![x, y],
            });
        }
        worst
    }

    /// `max |V(c) - v(φ(c))|`, or the signed `max (V - v)` when one-sided.
    fn v_gap(&self, hv: &[f64], sv: &[f64], signed: bool) -> Worst {
        let mut worst = Worst::new();
        for (c, &x) in hv.iter().enumerate() {
            let y = sv[self.phi.state_of(c)];
            let gap = if signed { x - y } else { (x - y).abs() };
            worst.offer(gap, || Witness {
                state: self.state(c),
                action: None,
                histories: vec![self.key(c)],
                values: vec![x, y],
            });
        }
        worst
    }

    /// `max |q(s,a) - ⟨Q(h,a)⟩_B|` over pairs the dispersion defines.
    fn avg_gap(&self, hq: &[Vec<f64>], sq: &[Vec<f64>]) -> Worst {
        let mut worst = Worst::new();
        for s in 0..self.phi.num_states() {
            for a in 0..self.kernel.spec().num_actions() {
                let Some(avg) = self.b.average(s, a, |c| hq[c][a]) else { continue };
                worst.offer((sq[s][a] - avg).abs(), || Witness {
                    state: self.phi.state_label(s).to_string(),
                    action: Some(self.action(a)),
                    histories: self
                        .b
                        .weights(s, a)
                        .unwrap_or(&[])
                        .iter()
                        .map(|&(c, _)| self.key(c))
                        .collect(),
                    values: vec![sq[s][a], avg],
                });
            }
        }
        worst
    }

    /// `max (V*(h) - Q*(h, a(h)))`: how far acting by `acts` is from optimal
    /// for one step.
    fn one_step_loss(&self, act_of: impl Fn(CtxId) -> ActId) -> Worst {
        let mut worst = Worst::new();
        for c in 0..self.kernel.num_contexts() {
            let a = act_of(c);
            worst.offer(self.star.v[c] - self.star.q[c][a], || Witness {
                state: self.state(c),
                action: Some(self.action(a)),
                histories: vec![self.key(c)],
                values: vec![self.star.v[c], self.star.q[c][a]],
            });
        }
        worst
    }

    fn drop_note(&self) -> Option<String> {
        (!self.dropped.is_empty()).then(|| {
            format!("dispersion leaves {} state-action pairs undefined", self.dropped.len())
        })
    }

    fn reversal_note(&self) -> String {
        let mut diffs = Vec::new();
        for c in 0..self.kernel.num_contexts() {
            let s = self.phi.state_of(c);
            let (big, small) = (self.pi_star[c], self.p_pi_star.act[s]);
            if big != small {
                diffs.push(format!(
                    "pi*({}) = {} differs from Pi*({}) = {}",
                    self.phi.state_label(s),
                    self.action(small),
                    self.key(c),
                    self.action(big)
                ));
            }
        }
        if diffs.is_empty() {
            "pi* agrees with Pi* everywhere".into()
        } else {
            diffs.truncate(3);
            diffs.join("; ")
        }
    }

    pub fn check(&self, id: TheoremId) -> Result<Vec<BoundReport>> {
        let g = self.gamma();
        let slack2 = 2.0 * self.slack();
        let exact_mdp = self.deviation.value <= DEVIATION_TOL;
        let mut out = Vec::new();
        match id {
            TheoremId::PhiMdpPi => {
                let pp = self.policy_part(id)?;
                let uniform = self.profile.pi_uniform == Some(true);
                let applicable = exact_mdp && uniform && self.dropped.is_empty();
                let note = self.drop_note().unwrap_or_else(|| {
                    format!("mdp deviation {:.3e}, policy uniform: {uniform}", self.deviation.value)
                });
                let w = self.q_gap(&pp.values.q, &pp.state_values.q);
                out.push(self.report(id, "q-equality", 0.0, 0.0, w, slack2, applicable, note.clone()));
                let w = self.v_gap(&pp.values.v, &pp.state_values.v, false);
                out.push(self.report(id, "v-equality", 0.0, 0.0, w, slack2, applicable, note));
            }
            TheoremId::PhiMdpStar => {
                let applicable = exact_mdp && self.dropped.is_empty();
                let note = self
                    .drop_note()
                    .unwrap_or_else(|| format!("mdp deviation {:.3e}", self.deviation.value));
                let w = self.q_gap(&self.star.q, &self.p_star.q);
                out.push(self.report(id, "q-equality", 0.0, 0.0, w, slack2, applicable, note.clone()));
                let w = self.v_gap(&self.star.v, &self.p_star.v, false);
                out.push(self.report(id, "v-equality", 0.0, 0.0, w, slack2, applicable, note.clone()));
                let w = self.one_step_loss(|c| self.p_pi_star.act[self.phi.state_of(c)]);
                out.push(self.report(id, "policy-equality", 0.0, 0.0, w, slack2, applicable, note));
            }
            TheoremId::BppRelation => out.push(self.check_bpp()),
            TheoremId::QvRelation => {
                match &self.pol {
                    Some(pp) => {
                        let delta = self.v_gap(&pp.values.v, &pp.state_values.v, false).value();
                        let w = self.avg_gap(&pp.values.q, &pp.state_values.q);
                        out.push(self.report(id, "i", delta, g * delta, w, slack2, true, String::new()));
                    }
                    None => out.push(BoundReport {
                        theorem_id: id,
                        clause: "i".into(),
                        hypothesis_eps: 0.0,
                        claimed_bound: 0.0,
                        observed_gap: 0.0,
                        slack_used: slack2,
                        holds: true,
                        applicable: false,
                        note: "no policy given".into(),
                        witnesses: Vec::new(),
                    }),
                }
                let delta = self.v_gap(&self.star.v, &self.p_star.v, false).value();
                let w = self.avg_gap(&self.star.q, &self.p_star.q);
                out.push(self.report(id, "ii", delta, g * delta, w, slack2, true, String::new()));
            }
            TheoremId::PhiQPi => {
                let pp = self.policy_part(id)?;
                let eps = self.profile.eps_q_pi.unwrap_or(0.0);
                let uniform = self.profile.pi_uniform == Some(true);
                let applicable = uniform && self.dropped.is_empty();
                let note = self.drop_note().unwrap_or_else(|| format!("policy uniform: {uniform}"));
                let claimed = eps / (1.0 - g);
                let w = self.q_gap(&pp.values.q, &pp.state_values.q);
                out.push(self.report(id, "q", eps, claimed, w, slack2, applicable, note.clone()));
                let w = self.v_gap(&pp.values.v, &pp.state_values.v, false);
                out.push(self.report(id, "v", eps, claimed, w, slack2, applicable, note));
            }
            TheoremId::PhiVPi => {
                let pp = self.policy_part(id)?;
                let eps = self.profile.eps_v_pi.unwrap_or(0.0);
                let uniform = self.profile.pi_uniform == Some(true);
                let applicable = uniform && self.dropped.is_empty();
                let note = self.drop_note().unwrap_or_else(|| format!("policy uniform: {uniform}"));
                let w = self.v_gap(&pp.values.v, &pp.state_values.v, false);
                out.push(self.report(id, "v", eps, eps / (1.0 - g), w, slack2, applicable, note.clone()));
                let w = self.avg_gap(&pp.values.q, &pp.state_values.q);
                out.push(self.report(id, "avg-q", eps, eps * g / (1.0 - g), w, slack2, applicable, note));
            }
            TheoremId::PhiQStar => {
                let eps = self.profile.eps_q_star;
                let applicable = self.dropped.is_empty();
                let note = self.drop_note().unwrap_or_default();
                let w = self.q_gap(&self.star.q, &self.p_star.q);
                out.push(self.report(id, "i-q", eps, eps / (1.0 - g), w, slack2, applicable, note.clone()));
                let w = self.v_gap(&self.star.v, &self.p_star.v, false);
                out.push(self.report(id, "i-v", eps, eps / (1.0 - g), w, slack2, applicable, note.clone()));

                let lifted =
                    HistoryPolicy::from_fn(self.kernel, |c| self.p_pi_star.act[self.phi.state_of(c)]);
                let tilde = evaluate_history_policy(self.kernel, &lifted, &self.budget)?;
                let claimed = 2.0 * eps / (1.0 - g).powi(2);
                let upper = self.history_gap(&self.star.v, &tilde.v);
                out.push(self.report(id, "ii-upper", eps, claimed, upper, slack2, applicable, note.clone()));
                let lower = self.history_gap(&tilde.v, &self.star.v);
                out.push(self.report(id, "ii-lower", eps, 0.0, lower, slack2, applicable, note.clone()));

                let exact = eps <= exact_eps(self.slack());
                let w = self.one_step_loss(|c| self.p_pi_star.act[self.phi.state_of(c)]);
                let note_iii = if exact { note } else { format!("eps = {eps:.3e} is not zero") };
                out.push(self.report(id, "iii", eps, 0.0, w, slack2, applicable && exact, note_iii));
            }
            TheoremId::QPiStar => out.extend(self.check_q_pi_star()?),
            TheoremId::PhiVStar => {
                let eps = self.profile.eps_v_star;
                let uniform = self.profile.pi_star_uniform;
                let applicable = uniform && self.dropped.is_empty();
                let premise = format!(
                    "Pi* uniform: {uniform}, eps_v_star = {eps:.6}; {}",
                    self.reversal_note()
                );
                let note = self.drop_note().unwrap_or(premise);
                let k = 3.0 * eps / (1.0 - g).powi(2);
                let w = self.v_gap(&self.star.v, &self.p_star.v, false);
                out.push(self.report(id, "i-v", eps, k, w, slack2, applicable, note.clone()));
                let w = self.avg_gap(&self.star.q, &self.p_star.q);
                out.push(self.report(id, "i-avg-q", eps, k * g, w, slack2, applicable, note.clone()));
                let w = self.v_gap(&self.star.v, &self.p_star.v, true);
                out.push(self.report(
                    id,
                    "i-lower",
                    eps,
                    3.0 * eps / (1.0 - g),
                    w,
                    slack2,
                    applicable,
                    note.clone(),
                ));
                let exact = eps <= exact_eps(self.slack());
                let w = self.one_step_loss(|c| self.p_pi_star.act[self.phi.state_of(c)]);
                out.push(self.report(id, "ii", eps, 0.0, w, slack2, applicable && exact, note));
            }
        }
        Ok(out)
    }

    /// Every statement; the policy ones only when a policy was given.
    pub fn check_all(&self) -> Result<Vec<BoundReport>> {
        let mut out = Vec::new();
        for id in TheoremId::ALL {
            if id.needs_policy() && self.pol.is_none() {
                continue;
            }
            out.extend(self.check(id)?);
        }
        Ok(out)
    }

    fn check_bpp(&self) -> BoundReport {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0xB99);
        let (ns, nr) = (self.phi.num_states(), self.kernel.spec().num_rewards());
        let mut worst = Worst::new();
        for k in 0..BPP_FUNCTIONS {
            let f: Vec<f64> = (0..ns * nr).map(|_| rng.random_range(-1.0..1.0)).collect();
            for s in 0..ns {
                for a in 0..self.kernel.spec().num_actions() {
                    let Some(lhs) = self.b.average(s, a, |c| {
                        self.kernel.row(c, a).iter().map(|o| o.prob * f[self.phi.state_of(o.next) * nr + o.reward]).sum()
                    }) else {
                        continue;
                    };
                    let row = self.p.row(s, a).expect("defined by the same dispersion");
                    let rhs: f64 = row.iter().zip(&f).map(|(p, x)| p * x).sum();
                    worst.offer((lhs - rhs).abs(), || Witness {
                        state: self.phi.state_label(s).to_string(),
                        action: Some(format!("{} (f #{k})", self.action(a))),
                        histories: Vec::new(),
                        values: vec![lhs, rhs],
                    });
                }
            }
        }
        self.report(
            TheoremId::BppRelation,
            "identity",
            0.0,
            0.0,
            worst,
            0.0,
            true,
            format!("{BPP_FUNCTIONS} random test functions"),
        )
    }

    /// Perturbs `Π*` at a seeded random third of the contexts and checks the
    /// bound with the measured one-step loss as ε.
    fn check_q_pi_star(&self) -> Result<Vec<BoundReport>> {
        let id = TheoremId::QPiStar;
        let g = self.gamma();
        let slack2 = 2.0 * self.slack();
        let na = self.kernel.spec().num_actions();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x9A5);
        let mut acts = self.pi_star.clone();
        let mut order: Vec<CtxId> = (0..acts.len()).collect();
        order.shuffle(&mut rng);
        for &c in order.iter().take(acts.len().div_ceil(3)) {
            acts[c] = rng.random_range(0..na);
        }
        let policy = HistoryPolicy::Deterministic(acts.clone());
        let values = evaluate_history_policy(self.kernel, &policy, &self.budget)?;
        let eps = self.one_step_loss(|c| acts[c]).value().max(0.0);
        let note = "premise policy: Pi* perturbed at random histories".to_string();

        let mut q = Worst::new();
        let mut lower = Worst::new();
        for c in 0..self.kernel.num_contexts() {
            for a in 0..na {
                let d = self.star.q[c][a] - values.q[c][a];
                let make = || Witness {
                    state: self.state(c),
                    action: Some(self.action(a)),
                    histories: vec![self.key(c)],
                    values: vec![self.star.q[c][a], values.q[c][a]],
                };
                q.offer(d, make);
                lower.offer(-d, make);
            }
        }
        let v = self.history_gap(&self.star.v, &values.v);
        Ok(vec![
            self.report(id, "q", eps, eps * g / (1.0 - g), q, slack2, true, note.clone()),
            self.report(id, "v", eps, eps / (1.0 - g), v, slack2, true, note.clone()),
            self.report(id, "nonnegative", eps, 0.0, lower, slack2, true, note),
        ])
    }
}

/// Single-theorem entry point.
pub fn check_theorem(
    id: TheoremId,
    kernel: &ProcessKernel,
    phi: &FeatureMap,
    b: &Dispersion,
    policy: Option<&HistoryPolicy>,
    budget: &TruncationBudget,
    tol: f64,
) -> Result<Vec<BoundReport>> {
    if id.needs_policy() && policy.is_none() {
        return Err(LabError::Config(format!("{id} needs a policy")));
    }
    TheoremLab::new(kernel, phi, b, policy, budget, tol)?.check(id)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OpenProblemProbe {
    pub eps: f64,
    pub gap: f64,
    pub ratio: Option<f64>,
    pub pi_star_uniform: bool,
    pub declined: bool,
    /// ε = 0 but the lifted policy loses more than the slack.
    pub soundness_alarm: bool,
    pub note: String,
}

/// Data for the open question of how far `Π̃ = π*∘φ` falls short of `V*`
/// under the (V*, Π*)-uniformity premise; asserts nothing.
pub fn probe_open_problem(
    kernel: &ProcessKernel,
    phi: &FeatureMap,
    b: &Dispersion,
    budget: &TruncationBudget,
) -> Result<OpenProblemProbe> {
    let lab = TheoremLab::new(kernel, phi, b, None, budget, DEFAULT_TOL)?;
    let eps = lab.profile.eps_v_star;
    let lifted = HistoryPolicy::from_fn(kernel, |c| lab.p_pi_star.act[phi.state_of(c)]);
    let tilde = evaluate_history_policy(kernel, &lifted, budget)?;
    let gap = lab.history_gap(&lab.star.v, &tilde.v).value();
    let spread = lab.star.v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - lab.star.v.iter().copied().fold(f64::INFINITY, f64::min);
    let slack = budget.tail_bound;
    let exact = eps <= exact_eps(slack);
    let pi_star_uniform = lab.profile.pi_star_uniform;
    let (declined, note) = if !pi_star_uniform {
        (true, "premise fails: Pi* is not constant on feature cells".to_string())
    } else if !exact && eps >= spread - 2.0 * slack {
        (
            true,
            format!("premise vacuous: eps_v_star = {eps:.6} spans the whole V* range; {}", lab.reversal_note()),
        )
    } else if exact {
        (false, format!("exact aggregation: lifted pi* falls short of V* by {gap:.3e}"))
    } else {
        (false, format!("eps_v_star = {eps:.3e}, lifted pi* falls short of V* by {gap:.3e}"))
    };
    Ok(OpenProblemProbe {
        eps,
        gap,
        ratio: (!declined && !exact).then(|| gap * (1.0 - kernel.gamma()).powi(2) / eps),
        pi_star_uniform,
        declined,
        soundness_alarm: pi_star_uniform && exact && gap > 2.0 * slack + CHECK_TOL,
        note,
    })
}

/// Feature-map family used by the soundness suite.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiFamily {
    Constant,
    RandomPartition,
    Identity,
    LastObservation,
    QstarGrid,
    VstarPair,
}

impl PhiFamily {
    const ALL: [PhiFamily; 6] = [
        PhiFamily::Constant,
        PhiFamily::RandomPartition,
        PhiFamily::Identity,
        PhiFamily::LastObservation,
        PhiFamily::QstarGrid,
        PhiFamily::VstarPair,
    ];
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteConfig {
    pub key: String,
    pub seed: u64,
    pub order: usize,
    pub sizes: (usize, usize, usize),
    pub gamma: f64,
    pub phi: PhiFamily,
    pub dispersion: DispersionBuilder,
    pub depth: usize,
}

/// Seeded configuration `index` of the soundness suite.
pub fn suite_config(base_seed: u64, index: usize) -> SuiteConfig {
    const GAMMAS: [f64; 4] = [0.0, 0.3, 0.5, 0.8];
    let seed = base_seed.wrapping_mul(1_000_003).wrapping_add(index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // every (order, family) pair recurs every 18 configurations
    let order = index % 3;
    let phi = PhiFamily::ALL[(index / 3) % PhiFamily::ALL.len()];
    let sizes = (rng.random_range(1..=4), rng.random_range(1..=3), rng.random_range(1..=3));
    let gamma = GAMMAS[rng.random_range(0..GAMMAS.len())];
    let dispersion = if rng.random_bool(0.5) { DispersionBuilder::Uniform } else { DispersionBuilder::OnPolicy };
    let depth = TruncationBudget::for_slack(gamma, 1e-12).expect("valid gamma").depth;
    SuiteConfig {
        key: format!("cfg{index:03}-seed{seed}"),
        seed,
        order,
        sizes,
        gamma,
        phi,
        dispersion,
        depth,
    }
}

/// A materialized suite configuration.
pub struct SuiteCase {
    pub config: SuiteConfig,
    pub kernel: ProcessKernel,
    pub phi: FeatureMap,
    pub budget: TruncationBudget,
    pub dispersion: Dispersion,
    pub policy: HistoryPolicy,
}

impl SuiteConfig {
    pub fn materialize(&self) -> Result<SuiteCase> {
        let (no, nr, na) = self.sizes;
        let sizes = RandomSizes { observations: no, rewards: nr, actions: na };
        let kernel = make_random_process(self.seed, sizes, self.order, self.gamma)?;
        let budget = TruncationBudget::new(self.depth, self.gamma)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0xF1);
        let phi = match self.phi {
            PhiFamily::Constant => FeatureMap::constant(&kernel),
            PhiFamily::Identity => FeatureMap::identity(&kernel),
            PhiFamily::LastObservation => FeatureMap::last_observation(&kernel),
            PhiFamily::RandomPartition => {
                let k = rng.random_range(1..=kernel.num_contexts());
                let cells: Vec<usize> =
                    (0..kernel.num_contexts()).map(|_| rng.random_range(0..k)).collect();
                FeatureMap::from_partition(&cells)
            }
            PhiFamily::QstarGrid => {
                PhiSpec::QstarGrid { eps: rng.random_range(0.05..0.3) }.build(&kernel, &budget)?
            }
            PhiFamily::VstarPair => {
                PhiSpec::VstarPair { eps: rng.random_range(0.05..0.3) }.build(&kernel, &budget)?
            }
        };
        let dispersion = self.dispersion.build(&kernel, &phi, &budget)?;
        let state_acts: Vec<ActId> = (0..phi.num_states()).map(|_| rng.random_range(0..na)).collect();
        let policy = HistoryPolicy::from_fn(&kernel, |c| state_acts[phi.state_of(c)]);
        Ok(SuiteCase { config: self.clone(), kernel, phi, budget, dispersion, policy })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteReport {
    pub configs: Vec<SuiteConfig>,
    /// `(config key, report)` in configuration order, then theorem order.
    pub reports: Vec<(String, BoundReport)>,
    pub applicable: usize,
    pub violations: usize,
}

impl SuiteReport {
    pub fn violations(&self) -> impl Iterator<Item = &(String, BoundReport)> {
        self.reports.iter().filter(|(_, r)| r.violated())
    }
}

/// Checks every statement on `count` seeded random configurations.
pub fn soundness_suite(base_seed: u64, count: usize) -> Result<SuiteReport> {
    let mut configs = Vec::with_capacity(count);
    let mut reports = Vec::new();
    for i in 0..count {
        let case = suite_config(base_seed, i).materialize()?;
        let lab = TheoremLab::new(
            &case.kernel,
            &case.phi,
            &case.dispersion,
            Some(&case.policy),
            &case.budget,
            DEFAULT_TOL,
        )?
        .with_seed(case.config.seed);
        for r in lab.check_all()? {
            reports.push((case.config.key.clone(), r));
        }
        configs.push(case.config);
    }
    let applicable = reports.iter().filter(|(_, r)| r.applicable).count();
    let violations = reports.iter().filter(|(_, r)| r.violated()).count();
    Ok(SuiteReport { configs, reports, applicable, violations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::{build_stationary_dispersion, build_uniform_dispersion};
    use crate::process::{make_counterexample, make_example_chain};

    #[test]
    fn theorem_ids_round_trip() {
        for id in TheoremId::ALL {
            assert_eq!(id.name().parse::<TheoremId>().unwrap(), id);
        }
        assert!(matches!("phi-x".parse::<TheoremId>(), Err(LabError::Config(_))));
    }

    #[test]
    fn example_chain_is_exactly_uniform() {
        let (k, phi) = make_example_chain(0.5).unwrap();
        let budget = TruncationBudget::new(40, 0.5).unwrap();
        let pol = HistoryPolicy::constant(&k, 0);
        let prof = measure_uniformity(&k, &phi, Some(&pol), &budget).unwrap();
        assert!(prof.eps_q_pi.unwrap() <= 2.0 * budget.tail_bound);
        assert!(prof.eps_v_pi.unwrap() <= 2.0 * budget.tail_bound);
        assert_eq!(prof.pi_uniform, Some(true));
        let b = build_uniform_dispersion(&k, &phi).unwrap();
        let reports = check_theorem(TheoremId::PhiQPi, &k, &phi, &b, Some(&pol), &budget, 1e-10).unwrap();
        assert!(reports.iter().all(|r| r.applicable && r.holds));
        assert!(reports.iter().all(|r| r.observed_gap <= 3.0 * budget.tail_bound));
    }

    #[test]
    fn counterexample_premise_fails() {
        let (k, phi) = make_counterexample(0.0).unwrap();
        let budget = TruncationBudget::new(1, 0.0).unwrap();
        let b = build_stationary_dispersion(&k, &phi).unwrap();
        let reports = check_theorem(TheoremId::PhiVStar, &k, &phi, &b, None, &budget, 1e-10).unwrap();
        assert!(reports[0].hypothesis_eps >= 5.0 / 6.0 - 1e-12);
        assert!(reports[0].note.contains("beta"));
        let probe = probe_open_problem(&k, &phi, &b, &budget).unwrap();
        assert!(probe.declined);
        assert!(!probe.soundness_alarm);
    }

    #[test]
    fn missing_policy_is_a_config_error() {
        let (k, phi) = make_counterexample(0.5).unwrap();
        let budget = TruncationBudget::new(10, 0.5).unwrap();
        let b = build_uniform_dispersion(&k, &phi).unwrap();
        let err = check_theorem(TheoremId::PhiQPi, &k, &phi, &b, None, &budget, 1e-10).unwrap_err();
        assert!(matches!(err, LabError::Config(_)));
    }

    #[test]
    fn small_suite_has_no_violations() {
        let report = soundness_suite(11, 12).unwrap();
        assert!(report.applicable > 0);
        let bad: Vec<_> = report.violations().collect();
        assert!(bad.is_empty(), "{bad:#?}");
    }
}
