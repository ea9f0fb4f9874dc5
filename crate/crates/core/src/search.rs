//! Orders over feature maps and exhaustive search for a minimal exact
//! reduction, assuming the process is known.

use std::cell::RefCell;
use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::aggregation::{build_surrogate_mdp, DispersionBuilder, FeatureMap, PhiSpec, StateId};
use crate::error::{LabError, Result};
use crate::mdp::{solve_state_optimal, DEFAULT_TOL};
use crate::process::{ActId, ProcessKernel, TruncationBudget};

/// Largest class `search_minimal` accepts.
pub const DEFAULT_CLASS_CAP: usize = 512;
/// Largest state count of a class member.
pub const DEFAULT_MAP_STATE_CAP: usize = 4096;

/// Default q*-constancy tolerance: `1e-6 + 2·slack`.
pub fn default_tolerance(budget: &TruncationBudget) -> f64 {
    1e-6 + 2.0 * budget.tail_bound
}

/// `χ: S_φ → S_ψ` with `ψ = χ∘φ`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Coarsening {
    pub chi: Vec<StateId>,
}

impl Coarsening {
    /// The coarsening from `fine` onto `coarse`, if every cell of `fine`
    /// lies inside a cell of `coarse`.
    pub fn find(fine: &FeatureMap, coarse: &FeatureMap) -> Option<Coarsening> {
        if fine.num_contexts() != coarse.num_contexts() {
            return None;
        }
        let mut chi = vec![usize::MAX; fine.num_states()];
        for c in 0..fine.num_contexts() {
            let (f, g) = (fine.state_of(c), coarse.state_of(c));
            if chi[f] == usize::MAX {
                chi[f] = g;
            } else if chi[f] != g {
                return None;
            }
        }
        Some(Coarsening { chi })
    }

    /// `ψ = χ∘φ`; errors when `χ` is not onto `0..k` for some `k`.
    pub fn apply(&self, phi: &FeatureMap) -> Result<FeatureMap> {
        if self.chi.len() != phi.num_states() {
            return Err(LabError::Config("coarsening does not match the feature map".into()));
        }
        let k = self.chi.iter().max().map_or(0, |m| m + 1);
        let mut hit = vec![false; k];
        for &t in &self.chi {
            hit[t] = true;
        }
        if hit.contains(&false) {
            return Err(LabError::Config("coarsening is not surjective".into()));
        }
        let cells: Vec<usize> = phi.assignment().iter().map(|&s| self.chi[s]).collect();
        Ok(FeatureMap::from_partition(&cells))
    }
}

/// `φ(h) = (ψ(h), ψ'(h))` over occupied pairs, with the coarsenings onto
/// each factor.
pub fn product_map(psi: &FeatureMap, psi2: &FeatureMap) -> Result<(FeatureMap, Coarsening, Coarsening)> {
    if psi.num_contexts() != psi2.num_contexts() {
        return Err(LabError::Config("feature maps belong to different processes".into()));
    }
    let mut index: HashMap<(StateId, StateId), usize> = HashMap::new();
    let mut labels = Vec::new();
    let cells: Vec<usize> = (0..psi.num_contexts())
        .map(|c| {
            let pair = (psi.state_of(c), psi2.state_of(c));
            *index.entry(pair).or_insert_with(|| {
                labels.push(format!("({},{})", psi.state_label(pair.0), psi2.state_label(pair.1)));
                labels.len() - 1
            })
        })
        .collect();
    let prod = FeatureMap::from_partition(&cells).with_labels(labels)?;
    let to_psi = Coarsening::find(&prod, psi).expect("product refines its factors");
    let to_psi2 = Coarsening::find(&prod, psi2).expect("product refines its factors");
    Ok((prod, to_psi, to_psi2))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// The first map is preferred.
    Precedes,
    Succeeds,
    Equivalent,
    Incomparable,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OrderVerdict {
    pub relation: Relation,
    /// Neither map refines the other; the verdict went through their product.
    pub via_product: bool,
    pub tolerance: f64,
    /// Spread of the common refinement's q* inside the first map's cells.
    pub psi_gap: f64,
    pub psi_policy_constant: bool,
    pub phi_gap: f64,
    pub phi_policy_constant: bool,
}

/// Optimal surrogate solution per partition, shared across comparisons.
#[derive(Default)]
pub struct SolutionCache {
    solved: RefCell<HashMap<Vec<StateId>, (Vec<Vec<f64>>, Vec<ActId>)>>,
}

impl SolutionCache {
    fn solve(
        &self,
        kernel: &ProcessKernel,
        phi: &FeatureMap,
        builder: DispersionBuilder,
        budget: &TruncationBudget,
    ) -> Result<(Vec<Vec<f64>>, Vec<ActId>)> {
        if let Some(hit) = self.solved.borrow().get(phi.assignment()) {
            return Ok(hit.clone());
        }
        let b = builder.build(kernel, phi, budget)?;
        let p = build_surrogate_mdp(kernel, phi, &b)?;
        let (values, policy) = solve_state_optimal(&p, DEFAULT_TOL)?;
        let out = (values.q, policy.act);
        self.solved.borrow_mut().insert(phi.assignment().to_vec(), out.clone());
        Ok(out)
    }
}

/// Spread of `q` and constancy of `pi` over each χ-preimage.
fn constancy(chi: &Coarsening, q: &[Vec<f64>], pi: &[ActId]) -> (f64, bool) {
    let k = chi.chi.iter().max().map_or(0, |m| m + 1);
    let mut gap: f64 = 0.0;
    let mut policy_constant = true;
    for t in 0..k {
        let members: Vec<StateId> = (0..chi.chi.len()).filter(|&s| chi.chi[s] == t).collect();
        let first = members[0];
        for &s in &members[1..] {
            policy_constant &= pi[s] == pi[first];
            for (x, y) in q[s].iter().zip(&q[first]) {
                gap = gap.max((x - y).abs());
            }
        }
    }
    (gap, policy_constant)
}

/// `ψ ≺ φ` and `ψ ≺× φ` through the common refinement `ρ = ψ×φ`: a map is
/// acceptable when `q*_ρ` is constant within `tol` and the tie-broken
/// `π*_ρ` exactly constant on each of its cells. When both are acceptable
/// the smaller one is preferred.
#[allow(clippy::too_many_arguments)]
pub fn compare(
    psi: &FeatureMap,
    phi: &FeatureMap,
    kernel: &ProcessKernel,
    builder: DispersionBuilder,
    budget: &TruncationBudget,
    tol: f64,
    allow_products: bool,
    cache: &SolutionCache,
) -> Result<OrderVerdict> {
    psi.check_kernel(kernel)?;
    phi.check_kernel(kernel)?;
    let (rho, to_psi, to_phi) = product_map(psi, phi)?;
    let via_product = rho != *psi && rho != *phi;
    if via_product && !allow_products {
        return Err(LabError::Incomparable(
            "neither map refines the other and products are disabled".into(),
        ));
    }
    let (q, pi) = cache.solve(kernel, &rho, builder, budget)?;
    let (psi_gap, psi_policy_constant) = constancy(&to_psi, &q, &pi);
    let (phi_gap, phi_policy_constant) = constancy(&to_phi, &q, &pi);
    let psi_ok = psi_gap <= tol && psi_policy_constant;
    let phi_ok = phi_gap <= tol && phi_policy_constant;
    let relation = match (psi_ok, phi_ok) {
        (true, true) => match psi.num_states().cmp(&phi.num_states()) {
            std::cmp::Ordering::Less => Relation::Precedes,
            std::cmp::Ordering::Greater => Relation::Succeeds,
            std::cmp::Ordering::Equal => Relation::Equivalent,
        },
        (true, false) => Relation::Precedes,
        (false, true) => Relation::Succeeds,
        (false, false) => Relation::Incomparable,
    };
    Ok(OrderVerdict {
        relation,
        via_product,
        tolerance: tol,
        psi_gap,
        psi_policy_constant,
        phi_gap,
        phi_policy_constant,
    })
}

#[derive(Clone, Debug)]
pub struct PhiClass {
    pub names: Vec<String>,
    pub members: Vec<FeatureMap>,
    pub product_closed: bool,
    pub coarsening_closed: bool,
}

impl PhiClass {
    /// Drops members inducing a partition already present.
    pub fn new(named: Vec<(String, FeatureMap)>) -> Self {
        let mut names = Vec::new();
        let mut members: Vec<FeatureMap> = Vec::new();
        for (name, phi) in named {
            if !members.contains(&phi) {
                names.push(name);
                members.push(phi);
            }
        }
        let mut class = PhiClass { names, members, product_closed: false, coarsening_closed: false };
        class.product_closed = class.is_product_closed();
        class
    }

    fn is_product_closed(&self) -> bool {
        self.members.iter().all(|a| {
            self.members.iter().all(|b| {
                product_map(a, b).is_ok_and(|(p, _, _)| self.members.contains(&p))
            })
        })
    }

    /// Members built from serializable specs.
    pub fn from_specs(kernel: &ProcessKernel, budget: &TruncationBudget, specs: &[PhiSpec]) -> Result<Self> {
        let named = specs
            .iter()
            .map(|s| Ok((spec_name(s), s.build(kernel, budget)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(PhiClass::new(named))
    }

    /// Every coarsening of `phi` (all set partitions of its states).
    pub fn all_coarsenings(phi: &FeatureMap, cap: usize) -> Result<Self> {
        let n = phi.num_states();
        let mut named = Vec::new();
        let mut rgs = vec![0usize; n];
        loop {
            if named.len() == cap {
                return Err(LabError::Budget(format!("more than {cap} coarsenings")));
            }
            let chi = Coarsening { chi: rgs.clone() };
            let k = rgs.iter().max().map_or(0, |m| m + 1);
            let mut cells = vec![Vec::new(); k];
            for (s, &t) in rgs.iter().enumerate() {
                cells[t].push(phi.state_label(s).to_string());
            }
            let labels: Vec<String> = cells.iter().map(|c| format!("{{{}}}", c.join(","))).collect();
            let map = chi.apply(phi)?.with_labels(labels.clone())?;
            named.push((labels.join("|"), map));
            if !next_rgs(&mut rgs) {
                break;
            }
        }
        let mut class = PhiClass::new(named);
        class.coarsening_closed = true;
        Ok(class)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Next restricted growth string in lexicographic order.
fn next_rgs(a: &mut [usize]) -> bool {
    for i in (1..a.len()).rev() {
        let bound = a[..i].iter().max().copied().unwrap_or(0) + 1;
        if a[i] < bound {
            a[i] += 1;
            for x in &mut a[i + 1..] {
                *x = 0;
            }
            return true;
        }
    }
    false
}

fn spec_name(spec: &PhiSpec) -> String {
    match spec {
        PhiSpec::Constant => "constant".into(),
        PhiSpec::Identity => "identity".into(),
        PhiSpec::LastObservationProjection { chars: None } => "last_observation".into(),
        PhiSpec::LastObservationProjection { chars: Some(c) } => format!("last_observation{c:?}"),
        PhiSpec::Table { .. } => "table".into(),
        PhiSpec::QstarGrid { eps } => format!("qstar_grid({eps})"),
        PhiSpec::VstarPair { eps } => format!("vstar_pair({eps})"),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditRow {
    pub psi: String,
    pub phi: String,
    pub verdict: OrderVerdict,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SearchOutcome {
    pub chosen: usize,
    pub chosen_name: String,
    pub num_states: usize,
    /// Indices of members nothing else strictly precedes.
    pub minimal: Vec<usize>,
    pub audit: Vec<AuditRow>,
    /// `(a, b, c)` with `a ≺ b ≺ c` but not `a ≺ c`.
    pub transitivity_violations: Vec<(usize, usize, usize)>,
}

impl SearchOutcome {
    /// CSV rows `psi, phi, verdict, max_q_gap`.
    pub fn write_audit_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["psi", "phi", "verdict", "max_q_gap"])?;
        for row in &self.audit {
            let verdict = serde_json::to_value(row.verdict.relation)?;
            w.write_record([
                row.psi.as_str(),
                row.phi.as_str(),
                verdict.as_str().unwrap_or_default(),
                &row.verdict.psi_gap.max(row.verdict.phi_gap).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SearchOptions {
    pub builder: DispersionBuilder,
    pub tol: f64,
    pub allow_products: bool,
    pub class_cap: usize,
    pub state_cap: usize,
}

impl SearchOptions {
    pub fn new(budget: &TruncationBudget) -> Self {
        SearchOptions {
            builder: DispersionBuilder::Uniform,
            tol: default_tolerance(budget),
            allow_products: true,
            class_cap: DEFAULT_CLASS_CAP,
            state_cap: DEFAULT_MAP_STATE_CAP,
        }
    }
}

/// Compares every pair and returns a minimal member with the fewest
/// states (lowest index on ties).
pub fn search_minimal(
    class: &PhiClass,
    kernel: &ProcessKernel,
    budget: &TruncationBudget,
    opts: &SearchOptions,
) -> Result<SearchOutcome> {
    if class.is_empty() {
        return Err(LabError::Config("empty feature-map class".into()));
    }
    if class.len() > opts.class_cap {
        return Err(LabError::Budget(format!("class of {} maps exceeds the cap {}", class.len(), opts.class_cap)));
    }
    if let Some(big) = class.members.iter().find(|m| m.num_states() > opts.state_cap) {
        return Err(LabError::Budget(format!("map with {} states exceeds the cap", big.num_states())));
    }
    let n = class.len();
    let cache = SolutionCache::default();
    let mut rel = vec![vec![Relation::Equivalent; n]; n];
    let mut audit = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = compare(
                &class.members[i],
                &class.members[j],
                kernel,
                opts.builder,
                budget,
                opts.tol,
                opts.allow_products,
                &cache,
            )?;
            rel[i][j] = v.relation;
            rel[j][i] = match v.relation {
                Relation::Precedes => Relation::Succeeds,
                Relation::Succeeds => Relation::Precedes,
                r => r,
            };
            audit.push(AuditRow { psi: class.names[i].clone(), phi: class.names[j].clone(), verdict: v });
        }
    }
    let minimal: Vec<usize> =
        (0..n).filter(|&m| (0..n).all(|o| rel[o][m] != Relation::Precedes)).collect();
    let pool = if minimal.is_empty() { (0..n).collect() } else { minimal.clone() };
    let chosen = pool
        .into_iter()
        .min_by_key(|&m| (class.members[m].num_states(), m))
        .expect("class is non-empty");
    let mut transitivity_violations = Vec::new();
    for a in 0..n {
        for b in 0..n {
            if rel[a][b] != Relation::Precedes {
                continue;
            }
            for c in 0..n {
                if rel[b][c] == Relation::Precedes && rel[a][c] != Relation::Precedes {
                    transitivity_violations.push((a, b, c));
                }
            }
        }
    }
    Ok(SearchOutcome {
        chosen,
        chosen_name: class.names[chosen].clone(),
        num_states: class.members[chosen].num_states(),
        minimal,
        audit,
        transitivity_violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::process::{make_counterexample, make_example_chain};

    #[test]
    fn coarsening_counts_are_bell_numbers() {
        let (k, _) = make_example_chain(0.5).unwrap();
        let four = FeatureMap::last_observation(&k);
        assert_eq!(PhiClass::all_coarsenings(&four, 100).unwrap().len(), 15);
        assert!(matches!(PhiClass::all_coarsenings(&four, 10), Err(LabError::Budget(_))));
    }

    #[test]
    fn product_of_bits_is_identity() {
        let (k, last_bit) = make_example_chain(0.5).unwrap();
        let first_bit = FeatureMap::last_observation_projection(&k, &[0]).unwrap();
        let (prod, _, _) = product_map(&last_bit, &first_bit).unwrap();
        assert_eq!(prod, FeatureMap::last_observation(&k));
        let (same, _, _) = product_map(&last_bit, &last_bit).unwrap();
        assert_eq!(same, last_bit);
        let (c, _, _) = product_map(&FeatureMap::constant(&k), &first_bit).unwrap();
        assert_eq!(c, first_bit);
    }

    #[test]
    fn self_comparison_is_equivalent() {
        let (k, phi) = make_example_chain(0.5).unwrap();
        let budget = TruncationBudget::new(40, 0.5).unwrap();
        let v = compare(&phi, &phi, &k, DispersionBuilder::Uniform, &budget, 1e-6, false, &SolutionCache::default())
            .unwrap();
        assert_eq!(v.relation, Relation::Equivalent);
    }

    #[test]
    fn products_disabled_is_incomparable_error() {
        let (k, last_bit) = make_example_chain(0.5).unwrap();
        let first_bit = FeatureMap::last_observation_projection(&k, &[0]).unwrap();
        let budget = TruncationBudget::new(40, 0.5).unwrap();
        let err = compare(
            &last_bit,
            &first_bit,
            &k,
            DispersionBuilder::Uniform,
            &budget,
            1e-6,
            false,
            &SolutionCache::default(),
        )
        .unwrap_err();
        assert!(matches!(err, LabError::Incomparable(_)));
    }

    #[test]
    fn counterexample_rejects_constant_map() {
        let (k, phi) = make_counterexample(0.0).unwrap();
        let budget = TruncationBudget::new(1, 0.0).unwrap();
        let ident = FeatureMap::identity(&k);
        let v = compare(&phi, &ident, &k, DispersionBuilder::Uniform, &budget, 1e-6, true, &SolutionCache::default())
            .unwrap();
        assert_eq!(v.relation, Relation::Succeeds);
    }
}
