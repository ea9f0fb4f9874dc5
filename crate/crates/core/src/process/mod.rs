//! Finite history-based processes.
//!
//! A [`ProcessKernel`] is stored as a finite context automaton: every history
//! is mapped to a context, and the next observation/reward distribution, the
//! successor context, feature maps and policies all depend on the history only
//! through that context. Finite-order processes (raw MDPs, order-k sources)
//! are represented exactly this way.

mod builtin;
mod doc;

pub use builtin::{
    make_counterexample, make_example_chain, make_random_process, wrap_raw_mdp, RandomSizes,
    RewardRule,
};
pub use doc::{load_process, BuiltinDoc, InitialEntry, ProcessDoc, ProcessSource, RawMdpDoc, RawRewards};

use std::collections::HashMap;
use std::fmt;

use crate::error::{LabError, Result};

pub type ObsId = usize;
pub type RewId = usize;
pub type ActId = usize;
pub type CtxId = usize;

/// Tolerance used for every normalization check.
pub const NORM_TOL: f64 = 1e-9;
/// Largest admissible discount factor.
pub const GAMMA_CAP: f64 = 0.999;
/// Default cap on explicitly enumerated histories.
pub const DEFAULT_HISTORY_CAP: usize = 2_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct ProcessSpec {
    pub observations: Vec<String>,
    pub rewards: Vec<f64>,
    pub actions: Vec<String>,
    pub gamma: f64,
}

impl ProcessSpec {
    pub fn new(
        observations: Vec<String>,
        rewards: Vec<f64>,
        actions: Vec<String>,
        gamma: f64,
    ) -> Result<Self> {
        let spec = ProcessSpec { observations, rewards, actions, gamma };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        check_gamma(self.gamma)?;
        if self.observations.is_empty() || self.rewards.is_empty() || self.actions.is_empty() {
            return Err(LabError::Config(
                "observation, reward and action sets must be non-empty".into(),
            ));
        }
        if has_duplicates(&self.observations) {
            return Err(LabError::Config("duplicate observation".into()));
        }
        if has_duplicates(&self.actions) {
            return Err(LabError::Config("duplicate action".into()));
        }
        for (i, r) in self.rewards.iter().enumerate() {
            if !(0.0..=1.0).contains(r) {
                return Err(LabError::Config(format!("reward {r} outside [0,1]")));
            }
            if self.rewards[..i].contains(r) {
                return Err(LabError::Config(format!("duplicate reward {r}")));
            }
        }
        Ok(())
    }

    pub fn num_obs(&self) -> usize {
        self.observations.len()
    }

    pub fn num_rewards(&self) -> usize {
        self.rewards.len()
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    /// Upper bound on any discounted value, `1/(1-γ)`.
    pub fn value_cap(&self) -> f64 {
        1.0 / (1.0 - self.gamma)
    }

    pub fn reward_label(&self, r: RewId) -> String {
        format!("{}", self.rewards[r])
    }

    pub fn obs_index(&self, name: &str) -> Option<ObsId> {
        self.observations.iter().position(|o| o == name)
    }

    pub fn action_index(&self, name: &str) -> Option<ActId> {
        self.actions.iter().position(|a| a == name)
    }

    pub fn reward_index(&self, value: f64) -> Option<RewId> {
        self.rewards.iter().position(|r| *r == value)
    }
}

pub(crate) fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..=GAMMA_CAP).contains(&gamma) {
        return Err(LabError::Config(format!("gamma {gamma} outside [0, {GAMMA_CAP}]")));
    }
    Ok(())
}

fn has_duplicates(names: &[String]) -> bool {
    names.iter().enumerate().any(|(i, n)| names[..i].contains(n))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Step {
    pub action: ActId,
    pub obs: ObsId,
    pub reward: RewId,
}

/// `o1 r1 a1 o2 r2 ... ot rt`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct History {
    pub head: (ObsId, RewId),
    pub steps: Vec<Step>,
}

impl History {
    pub fn initial(obs: ObsId, reward: RewId) -> Self {
        History { head: (obs, reward), steps: Vec::new() }
    }

    pub fn len(&self) -> usize {
        1 + self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn extend(&self, action: ActId, obs: ObsId, reward: RewId) -> History {
        let mut steps = Vec::with_capacity(self.steps.len() + 1);
        steps.extend_from_slice(&self.steps);
        steps.push(Step { action, obs, reward });
        History { head: self.head, steps }
    }

    pub fn last_obs(&self) -> ObsId {
        self.steps.last().map_or(self.head.0, |s| s.obs)
    }

    pub fn observations(&self) -> impl Iterator<Item = ObsId> + '_ {
        std::iter::once(self.head.0).chain(self.steps.iter().map(|s| s.obs))
    }

    /// Canonical key `"o1:r1|a1,o2:r2|a2,...,ot:rt"`.
    pub fn key(&self, spec: &ProcessSpec) -> String {
        let mut out = format!(
            "{}:{}",
            spec.observations[self.head.0],
            spec.reward_label(self.head.1)
        );
        for step in &self.steps {
            out.push('|');
            out.push_str(&spec.actions[step.action]);
            out.push(',');
            out.push_str(&spec.observations[step.obs]);
            out.push(':');
            out.push_str(&spec.reward_label(step.reward));
        }
        out
    }

    pub fn parse_key(spec: &ProcessSpec, key: &str) -> Result<History> {
        let bad = || LabError::Lookup(format!("malformed history key '{key}'"));
        let parse_or = |part: &str| -> Result<(ObsId, RewId)> {
            let (o, r) = part.split_once(':').ok_or_else(bad)?;
            let o = spec.obs_index(o).ok_or_else(bad)?;
            let r = (0..spec.num_rewards())
                .find(|&i| spec.reward_label(i) == r)
                .ok_or_else(bad)?;
            Ok((o, r))
        };
        let mut pieces = key.split('|');
        let head = parse_or(pieces.next().ok_or_else(bad)?)?;
        let mut history = History::initial(head.0, head.1);
        for piece in pieces {
            let (a, rest) = piece.split_once(',').ok_or_else(bad)?;
            let a = spec.action_index(a).ok_or_else(bad)?;
            let (o, r) = parse_or(rest)?;
            history.steps.push(Step { action: a, obs: o, reward: r });
        }
        Ok(history)
    }
}

/// One entry of a next-observation/reward distribution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Outcome {
    pub obs: ObsId,
    pub reward: RewId,
    pub prob: f64,
    /// Context of the extended history.
    pub next: CtxId,
}

#[derive(Clone, Debug)]
pub struct Context {
    pub label: String,
    pub last_obs: ObsId,
    /// Shortest history reaching this context (first found in canonical order).
    pub representative: History,
    /// `rows[a]`: outcomes in declaration order of (observation, reward).
    pub rows: Vec<Vec<Outcome>>,
}

/// The environment `P(o'r'|h,a)` plus its initial distribution.
#[derive(Clone, Debug)]
pub struct ProcessKernel {
    spec: ProcessSpec,
    initial: Vec<Outcome>,
    contexts: Vec<Context>,
}

impl ProcessKernel {
    /// Assembles a kernel from explicit parts and validates every distribution.
    pub fn from_parts(
        spec: ProcessSpec,
        initial: Vec<Outcome>,
        contexts: Vec<Context>,
    ) -> Result<Self> {
        let kernel = ProcessKernel { spec, initial, contexts };
        kernel.validate()?;
        Ok(kernel)
    }

    fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        check_outcomes(&self.spec, self.contexts.len(), &self.initial, "initial")?;
        for ctx in &self.contexts {
            if ctx.rows.len() != self.spec.num_actions() {
                return Err(LabError::Config(format!(
                    "context {} has {} action rows, expected {}",
                    ctx.label,
                    ctx.rows.len(),
                    self.spec.num_actions()
                )));
            }
            for (a, row) in ctx.rows.iter().enumerate() {
                let what = format!("context {} action {}", ctx.label, self.spec.actions[a]);
                check_outcomes(&self.spec, self.contexts.len(), row, &what)?;
            }
        }
        Ok(())
    }

    /// Builds a kernel whose context is the last `memory` observations
    /// (fewer at the start). `row` sees that suffix and the action.
    pub(crate) fn from_suffix_model<F>(
        spec: ProcessSpec,
        memory: usize,
        initial: &[(ObsId, RewId, f64)],
        mut row: F,
    ) -> Result<Self>
    where
        F: FnMut(&[ObsId], ActId) -> Vec<(ObsId, RewId, f64)>,
    {
        spec.validate()?;
        let memory = memory.max(1);
        let mut index: HashMap<Vec<ObsId>, CtxId> = HashMap::new();
        let mut suffixes: Vec<Vec<ObsId>> = Vec::new();
        let mut reps: Vec<History> = Vec::new();
        let mut intern = |suffix: Vec<ObsId>,
                          rep: &dyn Fn() -> History,
                          suffixes: &mut Vec<Vec<ObsId>>,
                          reps: &mut Vec<History>|
         -> CtxId {
            if let Some(&id) = index.get(&suffix) {
                return id;
            }
            let id = suffixes.len();
            index.insert(suffix.clone(), id);
            suffixes.push(suffix);
            reps.push(rep());
            id
        };

        let mut init = Vec::new();
        for &(o, r, p) in initial {
            if p == 0.0 {
                continue;
            }
            let next = intern(vec![o], &|| History::initial(o, r), &mut suffixes, &mut reps);
            init.push(Outcome { obs: o, reward: r, prob: p, next });
        }
        check_outcomes(&spec, usize::MAX, &init, "initial")?;

        let mut rows_by_ctx: Vec<Vec<Vec<Outcome>>> = Vec::new();
        let mut cursor = 0;
        while cursor < suffixes.len() {
            let suffix = suffixes[cursor].clone();
            let rep = reps[cursor].clone();
            let mut rows = Vec::with_capacity(spec.num_actions());
            for a in 0..spec.num_actions() {
                let mut out = Vec::new();
                for (o, r, p) in row(&suffix, a) {
                    if p == 0.0 {
                        continue;
                    }
                    let mut next_suffix = suffix.clone();
                    next_suffix.push(o);
                    if next_suffix.len() > memory {
                        next_suffix.remove(0);
                    }
                    let next = intern(
                        next_suffix,
                        &|| rep.extend(a, o, r),
                        &mut suffixes,
                        &mut reps,
                    );
                    out.push(Outcome { obs: o, reward: r, prob: p, next });
                }
                rows.push(out);
            }
            rows_by_ctx.push(rows);
            cursor += 1;
        }

        let contexts = suffixes
            .into_iter()
            .zip(reps)
            .zip(rows_by_ctx)
            .map(|((suffix, representative), rows)| Context {
                label: suffix
                    .iter()
                    .map(|&o| spec.observations[o].as_str())
                    .collect::<Vec<_>>()
                    .join(","),
                last_obs: *suffix.last().expect("suffix is non-empty"),
                representative,
                rows,
            })
            .collect();
        ProcessKernel::from_parts(spec, init, contexts)
    }

    pub fn spec(&self) -> &ProcessSpec {
        &self.spec
    }

    pub fn gamma(&self) -> f64 {
        self.spec.gamma
    }

    pub fn initial(&self) -> &[Outcome] {
        &self.initial
    }

    pub fn contexts(&self) -> &[Context] {
        &self.contexts
    }

    pub fn num_contexts(&self) -> usize {
        self.contexts.len()
    }

    pub fn row(&self, ctx: CtxId, action: ActId) -> &[Outcome] {
        &self.contexts[ctx].rows[action]
    }

    /// Same process with a different discount factor.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        let mut k = self.clone();
        k.spec.gamma = gamma;
        Ok(k)
    }

    /// Context of a history, or `Lookup` if the history has probability 0
    /// under every action sequence.
    pub fn locate(&self, h: &History) -> Result<CtxId> {
        let unreachable = || LabError::Lookup(format!("unreachable history {}", h.key(&self.spec)));
        let (o1, r1) = h.head;
        let mut ctx = self
            .initial
            .iter()
            .find(|out| out.obs == o1 && out.reward == r1)
            .ok_or_else(unreachable)?
            .next;
        for step in &h.steps {
            if step.action >= self.spec.num_actions() {
                return Err(unreachable());
            }
            ctx = self.contexts[ctx].rows[step.action]
                .iter()
                .find(|out| out.obs == step.obs && out.reward == step.reward)
                .ok_or_else(unreachable)?
                .next;
        }
        Ok(ctx)
    }

    /// `P(o'r'|h,a)` as `(o', r', prob)` triples in declaration order.
    pub fn step(&self, h: &History, action: ActId) -> Result<Vec<(ObsId, RewId, f64)>> {
        if action >= self.spec.num_actions() {
            return Err(LabError::Lookup(format!("action index {action} out of range")));
        }
        let ctx = self.locate(h)?;
        Ok(self.contexts[ctx].rows[action]
            .iter()
            .map(|o| (o.obs, o.reward, o.prob))
            .collect())
    }

    pub fn context_label(&self, ctx: CtxId) -> &str {
        &self.contexts[ctx].label
    }

    pub fn context_key(&self, ctx: CtxId) -> String {
        self.contexts[ctx].representative.key(&self.spec)
    }

    /// Spot check that the step distribution depends on the history only
    /// through its last observation, over all pairs of contexts.
    pub fn depends_only_on_last_obs(&self) -> bool {
        for c1 in 0..self.contexts.len() {
            for c2 in c1 + 1..self.contexts.len() {
                if self.contexts[c1].last_obs != self.contexts[c2].last_obs {
                    continue;
                }
                for a in 0..self.spec.num_actions() {
                    let r1 = &self.contexts[c1].rows[a];
                    let r2 = &self.contexts[c2].rows[a];
                    if r1.len() != r2.len()
                        || r1.iter().zip(r2).any(|(x, y)| {
                            x.obs != y.obs
                                || x.reward != y.reward
                                || (x.prob - y.prob).abs() > NORM_TOL
                        })
                    {
                        return false;
                    }
                }
            }
        }
        true
    }
}

fn check_outcomes(spec: &ProcessSpec, num_ctx: usize, row: &[Outcome], what: &str) -> Result<()> {
    let mut total = 0.0;
    for o in row {
        if o.obs >= spec.num_obs() || o.reward >= spec.num_rewards() || o.next >= num_ctx {
            return Err(LabError::Config(format!("{what}: outcome index out of range")));
        }
        if !(o.prob >= 0.0) {
            return Err(LabError::Normalization(format!("{what}: negative mass {}", o.prob)));
        }
        total += o.prob;
    }
    if (total - 1.0).abs() > NORM_TOL {
        return Err(LabError::Normalization(format!("{what}: mass sums to {total}")));
    }
    Ok(())
}

/// Look-ahead horizon `m` with its certified tail `γ^m/(1-γ)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruncationBudget {
    pub depth: usize,
    pub tail_bound: f64,
}

impl TruncationBudget {
    pub fn new(depth: usize, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        if depth == 0 {
            return Err(LabError::Config("truncation depth must be >= 1".into()));
        }
        Ok(TruncationBudget { depth, tail_bound: tail_bound(gamma, depth) })
    }

    /// Smallest depth whose tail bound is at most `target`.
    pub fn for_slack(gamma: f64, target: f64) -> Result<Self> {
        check_gamma(gamma)?;
        if !(target > 0.0) {
            return Err(LabError::Config("slack target must be positive".into()));
        }
        let mut depth = 1;
        while tail_bound(gamma, depth) > target {
            depth += 1;
        }
        Self::new(depth, gamma)
    }
}

fn tail_bound(gamma: f64, depth: usize) -> f64 {
    gamma.powi(depth as i32) / (1.0 - gamma)
}

/// Policy over histories, resolved through the history's context.
#[derive(Clone, Debug, PartialEq)]
pub enum HistoryPolicy {
    Deterministic(Vec<ActId>),
    Stochastic(Vec<Vec<f64>>),
}

impl HistoryPolicy {
    pub fn constant(kernel: &ProcessKernel, action: ActId) -> Self {
        HistoryPolicy::Deterministic(vec![action; kernel.num_contexts()])
    }

    pub fn uniform(kernel: &ProcessKernel) -> Self {
        let na = kernel.spec().num_actions();
        HistoryPolicy::Stochastic(vec![vec![1.0 / na as f64; na]; kernel.num_contexts()])
    }

    pub fn from_fn(kernel: &ProcessKernel, f: impl Fn(CtxId) -> ActId) -> Self {
        HistoryPolicy::Deterministic((0..kernel.num_contexts()).map(f).collect())
    }

    pub fn validate(&self, kernel: &ProcessKernel) -> Result<()> {
        let na = kernel.spec().num_actions();
        match self {
            HistoryPolicy::Deterministic(acts) => {
                if acts.len() != kernel.num_contexts() || acts.iter().any(|&a| a >= na) {
                    return Err(LabError::Config("policy does not cover the process".into()));
                }
            }
            HistoryPolicy::Stochastic(dists) => {
                if dists.len() != kernel.num_contexts() {
                    return Err(LabError::Config("policy does not cover the process".into()));
                }
                for d in dists {
                    let total: f64 = d.iter().sum();
                    if d.len() != na || d.iter().any(|p| !(*p >= 0.0)) {
                        return Err(LabError::Config("malformed action distribution".into()));
                    }
                    if (total - 1.0).abs() > NORM_TOL {
                        return Err(LabError::Normalization(format!(
                            "action distribution sums to {total}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self, HistoryPolicy::Deterministic(_))
    }

    /// Action of a deterministic policy at a context.
    pub fn action_at(&self, ctx: CtxId) -> Option<ActId> {
        match self {
            HistoryPolicy::Deterministic(acts) => Some(acts[ctx]),
            HistoryPolicy::Stochastic(_) => None,
        }
    }

    pub fn prob(&self, ctx: CtxId, action: ActId) -> f64 {
        match self {
            HistoryPolicy::Deterministic(acts) => f64::from(u8::from(acts[ctx] == action)),
            HistoryPolicy::Stochastic(d) => d[ctx][action],
        }
    }

    pub fn decide(&self, kernel: &ProcessKernel, h: &History) -> Result<ActId> {
        let ctx = kernel.locate(h)?;
        self.action_at(ctx)
            .ok_or_else(|| LabError::Config("policy is stochastic".into()))
    }

    pub fn actions(&self) -> Option<&[ActId]> {
        match self {
            HistoryPolicy::Deterministic(acts) => Some(acts),
            HistoryPolicy::Stochastic(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReachedHistory {
    pub history: History,
    pub ctx: CtxId,
    pub prob: f64,
}

/// Every history of length ≤ `budget.depth` with positive probability,
/// in canonical order (by length, then lexicographic in declaration order).
/// Without a policy, actions are drawn uniformly.
pub fn enumerate_histories(
    kernel: &ProcessKernel,
    budget: &TruncationBudget,
    policy: Option<&HistoryPolicy>,
) -> Result<Vec<ReachedHistory>> {
    enumerate_histories_capped(kernel, budget, policy, DEFAULT_HISTORY_CAP)
}

pub fn enumerate_histories_capped(
    kernel: &ProcessKernel,
    budget: &TruncationBudget,
    policy: Option<&HistoryPolicy>,
    cap: usize,
) -> Result<Vec<ReachedHistory>> {
    if budget.depth == 0 {
        return Err(LabError::Config("truncation depth must be >= 1".into()));
    }
    let uniform;
    let policy = match policy {
        Some(p) => {
            p.validate(kernel)?;
            p
        }
        None => {
            uniform = HistoryPolicy::uniform(kernel);
            &uniform
        }
    };
    let over = || LabError::Budget(format!("more than {cap} histories up to depth {}", budget.depth));

    let mut out: Vec<ReachedHistory> = Vec::new();
    for o in kernel.initial() {
        out.push(ReachedHistory {
            history: History::initial(o.obs, o.reward),
            ctx: o.next,
            prob: o.prob,
        });
    }
    if out.len() > cap {
        return Err(over());
    }
    let mut layer_start = 0;
    for _ in 1..budget.depth {
        let layer_end = out.len();
        for i in layer_start..layer_end {
            let (ctx, prob) = (out[i].ctx, out[i].prob);
            for a in 0..kernel.spec().num_actions() {
                let pa = policy.prob(ctx, a);
                if pa == 0.0 {
                    continue;
                }
                for o in kernel.row(ctx, a) {
                    let p = prob * pa * o.prob;
                    if p == 0.0 {
                        continue;
                    }
                    if out.len() >= cap {
                        return Err(over());
                    }
                    let history = out[i].history.extend(a, o.obs, o.reward);
                    out.push(ReachedHistory { history, ctx: o.next, prob: p });
                }
            }
        }
        layer_start = layer_end;
    }
    Ok(out)
}

impl fmt::Display for ProcessSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "|O|={} |R|={} |A|={} gamma={}",
            self.num_obs(),
            self.num_rewards(),
            self.num_actions(),
            self.gamma
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coin() -> ProcessKernel {
        let spec = ProcessSpec::new(
            vec!["h".into(), "t".into()],
            vec![0.0, 1.0],
            vec!["x".into()],
            0.5,
        )
        .unwrap();
        ProcessKernel::from_suffix_model(spec, 1, &[(0, 0, 1.0)], |_, _| {
            vec![(0, 0, 0.5), (1, 1, 0.5)]
        })
        .unwrap()
    }

    #[test]
    fn depth_one_deterministic_start_is_single_history() {
        let k = coin();
        let b = TruncationBudget::new(1, 0.5).unwrap();
        let hs = enumerate_histories(&k, &b, None).unwrap();
        assert_eq!(hs.len(), 1);
        assert_eq!(hs[0].prob, 1.0);
    }

    #[test]
    fn per_length_mass_sums_to_one() {
        let k = coin();
        let b = TruncationBudget::new(5, 0.5).unwrap();
        let hs = enumerate_histories(&k, &b, None).unwrap();
        for t in 1..=5 {
            let mass: f64 = hs.iter().filter(|h| h.history.len() == t).map(|h| h.prob).sum();
            assert!((mass - 1.0).abs() < 1e-12);
        }
        assert_eq!(hs.len(), 1 + 2 + 4 + 8 + 16);
    }

    #[test]
    fn cap_is_enforced() {
        let k = coin();
        let b = TruncationBudget::new(10, 0.5).unwrap();
        let err = enumerate_histories_capped(&k, &b, None, 100).unwrap_err();
        assert!(matches!(err, LabError::Budget(_)));
    }

    #[test]
    fn key_round_trip_and_locate() {
        let k = coin();
        let b = TruncationBudget::new(3, 0.5).unwrap();
        for rh in enumerate_histories(&k, &b, None).unwrap() {
            let key = rh.history.key(k.spec());
            assert_eq!(History::parse_key(k.spec(), &key).unwrap(), rh.history);
            assert_eq!(k.locate(&rh.history).unwrap(), rh.ctx);
        }
        assert_eq!(
            History::initial(0, 0).extend(0, 1, 1).key(k.spec()),
            "h:0|x,t:1"
        );
    }

    #[test]
    fn unreachable_history_is_a_lookup_error() {
        let k = coin();
        // head reward 1 never occurs initially
        assert!(matches!(k.locate(&History::initial(0, 1)), Err(LabError::Lookup(_))));
        // t always comes with reward 1
        let h = History::initial(0, 0).extend(0, 1, 0);
        assert!(matches!(k.locate(&h), Err(LabError::Lookup(_))));
    }

    #[test]
    fn tail_bound_matches_formula_and_decreases() {
        let mut prev = f64::INFINITY;
        for m in 1..30 {
            let b = TruncationBudget::new(m, 0.8).unwrap();
            assert_eq!(b.tail_bound, 0.8f64.powi(m as i32) / (1.0 - 0.8));
            assert!(b.tail_bound < prev);
            prev = b.tail_bound;
        }
        let b = TruncationBudget::for_slack(0.5, 1e-4).unwrap();
        assert!(b.tail_bound <= 1e-4);
        assert!(TruncationBudget::new(b.depth - 1, 0.5).unwrap().tail_bound > 1e-4);
    }

    #[test]
    fn spec_validation() {
        assert!(ProcessSpec::new(vec![], vec![0.0], vec!["a".into()], 0.5).is_err());
        assert!(ProcessSpec::new(vec!["o".into()], vec![1.5], vec!["a".into()], 0.5).is_err());
        assert!(ProcessSpec::new(vec!["o".into()], vec![0.0], vec!["a".into()], 1.0).is_err());
        assert!(
            ProcessSpec::new(vec!["o".into(), "o".into()], vec![0.0], vec!["a".into()], 0.5)
                .is_err()
        );
        assert!(ProcessSpec::new(vec!["o".into()], vec![0.0, 0.0], vec!["a".into()], 0.5).is_err());
    }

    #[test]
    fn unnormalized_row_is_rejected() {
        let spec = ProcessSpec::new(vec!["o".into()], vec![0.0], vec!["a".into()], 0.5).unwrap();
        let err = ProcessKernel::from_suffix_model(spec, 1, &[(0, 0, 1.0)], |_, _| {
            vec![(0, 0, 0.9)]
        })
        .unwrap_err();
        assert!(matches!(err, LabError::Normalization(_)));
    }
}
