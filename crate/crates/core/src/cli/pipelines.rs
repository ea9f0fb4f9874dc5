use serde::Serialize;
use serde_json::{json, Value};

use super::config::{PolicyChoice, Resolved};
use super::table::{sci, Table};
use crate::aggregation::build_surrogate_mdp;
use crate::bounds::{probe_open_problem, soundness_suite, TheoremLab};
use crate::error::Result;
use crate::estimation::{convergence_report, exact_onpolicy_mdp, simulate, DEFAULT_VISIT_FLOOR};
use crate::extreme::{qstar_grid_from_values, run_extreme_pipeline, write_grid_csv, ExtremeVariant, DEFAULT_STATE_CAP};
use crate::mdp::{solve_state_optimal, DEFAULT_TOL};
use crate::process::HistoryPolicy;
use crate::search::{search_minimal, PhiClass, SearchOptions, DEFAULT_CLASS_CAP};
use crate::values::solve_history_optimal;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Assertion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Assertion {
    fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Assertion { name: name.into(), passed, detail: detail.into() }
    }
}

/// Everything a pipeline produces before anything is written.
pub struct PipelineOutput {
    pub result: Value,
    /// `(file name, contents)` of CSV side outputs.
    pub files: Vec<(String, Vec<u8>)>,
    pub assertions: Vec<Assertion>,
    pub table: String,
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

pub fn solve(r: &Resolved) -> Result<PipelineOutput> {
    let k = &r.kernel;
    let (star, pi) = solve_history_optimal(k, &r.budget)?;
    let pi = pi.actions().expect("greedy policy is deterministic").to_vec();
    let b = r.dispersion.build(k, &r.phi, &r.budget)?;
    let p = build_surrogate_mdp(k, &r.phi, &b)?;
    let (sv, spol) = solve_state_optimal(&p, DEFAULT_TOL)?;
    let actions = &k.spec().actions;

    let contexts: Vec<Value> = (0..k.num_contexts())
        .map(|c| {
            json!({
                "history": k.context_key(c),
                "state": r.phi.state_label(r.phi.state_of(c)),
                "v_star": star.v[c],
                "v_star_upper": star.v_upper[c],
                "q_star": star.q[c],
                "pi_star": actions[pi[c]],
            })
        })
        .collect();
    let mut table = Table::new(["state", "v*", "q*", "pi*"]);
    let states: Vec<Value> = (0..r.phi.num_states())
        .map(|s| {
            let q: Vec<String> = sv.q[s].iter().map(|x| format!("{x:.6}")).collect();
            table.row([
                r.phi.state_label(s).to_string(),
                format!("{:.6}", sv.v[s]),
                q.join(" "),
                actions[spol.act[s]].clone(),
            ]);
            json!({
                "state": r.phi.state_label(s),
                "v": sv.v[s],
                "q": sv.q[s],
                "pi": actions[spol.act[s]],
            })
        })
        .collect();

    let len = r.params.csv_history_len.unwrap_or(3).min(r.budget.depth);
    let files = vec![
        ("history_values.csv".into(), csv_bytes(|w| star.write_csv(k, len, w))?),
        ("dispersion.csv".into(), csv_bytes(|w| b.write_csv(k, &r.phi, w))?),
    ];
    Ok(PipelineOutput {
        result: json!({
            "contexts": contexts,
            "states": states,
            "surrogate": p.to_doc(),
            "state_solution_tol": sv.tol,
        }),
        files,
        assertions: vec![Assertion::new(
            "state solution certified",
            sv.tol <= 1e-8,
            format!("residual bound {:.3e}", sv.tol),
        )],
        table: table.render(),
    })
}

pub fn check_theorems(r: &Resolved) -> Result<PipelineOutput> {
    let k = &r.kernel;
    let actions = &k.spec().actions;
    let (_, pi_star) = solve_history_optimal(k, &r.budget)?;
    let (policy, policy_name) = match r.params.policy.clone().unwrap_or_default() {
        PolicyChoice::Optimal => (Some(pi_star.clone()), "optimal".to_string()),
        PolicyChoice::None => (None, "none".to_string()),
        PolicyChoice::Constant(name) => {
            let a = k.spec().action_index(&name).expect("checked while resolving");
            (Some(HistoryPolicy::constant(k, a)), format!("constant {name}"))
        }
    };
    let b = r.dispersion.build(k, &r.phi, &r.budget)?;
    let lab = TheoremLab::new(k, &r.phi, &b, policy.as_ref(), &r.budget, DEFAULT_TOL)?.with_seed(r.seed);
    let mut reports = Vec::new();
    let mut skipped = Vec::new();
    for &id in &r.theorems {
        if id.needs_policy() && policy.is_none() {
            skipped.push(id.name());
            continue;
        }
        reports.extend(lab.check(id)?);
    }
    let probe = probe_open_problem(k, &r.phi, &b, &r.budget)?;

    let mut table = Table::new(["theorem", "clause", "applicable", "eps", "claimed", "observed", "holds"]);
    let mut bounds_csv = csv::Writer::from_writer(Vec::new());
    bounds_csv.write_record([
        "theorem", "clause", "applicable", "hypothesis_eps", "claimed_bound", "observed_gap", "slack_used", "holds",
        "note",
    ])?;
    for rep in &reports {
        table.row([
            rep.theorem_id.name().to_string(),
            rep.clause.clone(),
            rep.applicable.to_string(),
            sci(rep.hypothesis_eps),
            sci(rep.claimed_bound),
            sci(rep.observed_gap),
            rep.holds.to_string(),
        ]);
        bounds_csv.write_record([
            rep.theorem_id.name().to_string(),
            rep.clause.clone(),
            rep.applicable.to_string(),
            rep.hypothesis_eps.to_string(),
            rep.claimed_bound.to_string(),
            rep.observed_gap.to_string(),
            rep.slack_used.to_string(),
            rep.holds.to_string(),
            rep.note.clone(),
        ])?;
    }
    let violations: Vec<String> = reports
        .iter()
        .filter(|rep| rep.violated())
        .map(|rep| format!("{}/{}", rep.theorem_id, rep.clause))
        .collect();
    let applicable = reports.iter().filter(|rep| rep.applicable).count();
    let mut assertions = vec![
        Assertion::new(
            "applicable bounds hold",
            violations.is_empty(),
            if violations.is_empty() {
                format!("{applicable} applicable of {}", reports.len())
            } else {
                format!("violated: {}", violations.join(", "))
            },
        ),
        Assertion::new("open-problem probe raised no alarm", !probe.soundness_alarm, probe.note.clone()),
    ];

    let suite = match r.params.suite {
        Some(count) if count > 0 => {
            let s = soundness_suite(r.seed, count)?;
            assertions.push(Assertion::new(
                "soundness suite",
                s.violations == 0,
                format!("{} configurations, {} applicable, {} violations", count, s.applicable, s.violations),
            ));
            let violating: Vec<&(String, _)> = s.violations().collect();
            Some(json!({
                "configurations": s.configs,
                "applicable": s.applicable,
                "violations": s.violations,
                "violating": violating,
            }))
        }
        _ => None,
    };

    let (sv, spol) = lab.state_optimal();
    let big_pi = pi_star.actions().expect("greedy policy is deterministic");
    let pi_star_states: Vec<Value> = (0..r.phi.num_states())
        .map(|s| json!({"state": r.phi.state_label(s), "action": actions[spol.act[s]], "v": sv.v[s]}))
        .collect();
    let pi_star_histories: Vec<Value> = (0..k.num_contexts())
        .map(|c| json!({"history": k.context_key(c), "action": actions[big_pi[c]]}))
        .collect();
    Ok(PipelineOutput {
        result: json!({
            "policy": policy_name,
            "skipped_theorems": skipped,
            "profile": lab.profile(),
            "deviation": lab.deviation(),
            "reports": reports,
            "open_problem": probe,
            "surrogate_policy": pi_star_states,
            "history_policy": pi_star_histories,
            "suite": suite,
        }),
        files: vec![("bounds.csv".into(), bounds_csv.into_inner().map_err(|e| e.into_error())?)],
        assertions,
        table: table.render(),
    })
}

pub fn extreme(r: &Resolved) -> Result<PipelineOutput> {
    let k = &r.kernel;
    let variant = r.params.variant.unwrap_or(ExtremeVariant::QstarGrid);
    let eps_list = r.params.eps.clone().unwrap_or_else(|| vec![0.1]);
    let mut reports = Vec::new();
    let mut assertions = Vec::new();
    let mut table = Table::new(["eps", "states", "state bound", "gap", "gap bound", "holds"]);
    for &eps in &eps_list {
        let rep = run_extreme_pipeline(k, &r.budget, eps, r.dispersion, variant)?;
        assertions.push(Assertion::new(
            &format!("gap bound at eps={eps}"),
            rep.gap_holds,
            format!("achieved {:.3e}, bound {}", rep.achieved_gap, rep.gap_bound.map_or("n/a".into(), sci)),
        ));
        if !rep.state_bound.conditional {
            assertions.push(Assertion::new(
                &format!("state bound at eps={eps}"),
                rep.state_bound_holds,
                format!("{} states, bound {}", rep.num_states, sci(rep.state_bound.value)),
            ));
        }
        table.row([
            eps.to_string(),
            rep.num_states.to_string(),
            sci(rep.state_bound.value),
            sci(rep.achieved_gap),
            rep.gap_bound.map_or("n/a".into(), sci),
            (rep.gap_holds && rep.state_bound_holds).to_string(),
        ]);
        reports.push(rep);
    }
    let (star, _) = solve_history_optimal(k, &r.budget)?;
    let grid = qstar_grid_from_values(&star, eps_list[0], DEFAULT_STATE_CAP)?;
    let files = vec![("qstar_grid.csv".into(), csv_bytes(|w| write_grid_csv(k, &grid, &star, w))?)];
    Ok(PipelineOutput { result: json!({ "reports": reports }), files, assertions, table: table.render() })
}

pub fn estimate(r: &Resolved) -> Result<PipelineOutput> {
    let k = &r.kernel;
    let behavior = HistoryPolicy::uniform(k);
    let grid = r.params.n_grid.clone().unwrap_or_else(|| vec![1_000, 10_000, 100_000]);
    let seeds = r.params.seeds.clone().unwrap_or_else(|| vec![r.seed]);
    let floor = r.params.floor.unwrap_or(DEFAULT_VISIT_FLOOR);
    let mut reports = Vec::new();
    let mut assertions = Vec::new();
    let mut table = Table::new(["seed", "n", "sup error", "min visit", "flagged"]);
    for &seed in &seeds {
        let rep = convergence_report(k, &behavior, &r.phi, &grid, seed, floor)?;
        for row in &rep.rows {
            table.row([
                seed.to_string(),
                row.n.to_string(),
                sci(row.sup_error),
                format!("{:.4}", row.min_visit_fraction),
                row.flagged.len().to_string(),
            ]);
        }
        if let Some(max) = r.params.max_error {
            let last = rep.rows.last().expect("grid is non-empty");
            assertions.push(Assertion::new(
                &format!("estimation error at seed {seed}"),
                last.sup_error <= max,
                format!("{:.4e} at n = {} (limit {max})", last.sup_error, last.n),
            ));
        }
        reports.push(rep);
    }
    let exact = exact_onpolicy_mdp(k, &behavior, &r.phi, *grid.last().expect("grid is non-empty"))?;
    let traj = simulate(k, &behavior, grid[0], seeds[0])?;
    let files = vec![("trajectory.csv".into(), csv_bytes(|w| traj.write_csv(k.spec(), w))?)];
    Ok(PipelineOutput {
        result: json!({ "floor": floor, "reports": reports, "exact_onpolicy": exact.to_doc() }),
        files,
        assertions,
        table: table.render(),
    })
}

pub fn search_phi(r: &Resolved) -> Result<PipelineOutput> {
    let k = &r.kernel;
    let class = match &r.params.class {
        Some(specs) => PhiClass::from_specs(k, &r.budget, specs)?,
        None => PhiClass::all_coarsenings(&r.phi, DEFAULT_CLASS_CAP)?,
    };
    let mut opts = SearchOptions::new(&r.budget);
    opts.builder = r.dispersion;
    if let Some(tol) = r.params.tol {
        opts.tol = tol;
    }
    if let Some(allow) = r.params.allow_products {
        opts.allow_products = allow;
    }
    let outcome = search_minimal(&class, k, &r.budget, &opts)?;
    let chosen = &class.members[outcome.chosen];
    let assignment: Vec<Value> = (0..k.num_contexts())
        .map(|c| json!({"history": k.context_key(c), "state": chosen.state_label(chosen.state_of(c))}))
        .collect();
    let mut table = Table::new(["map", "states", "minimal"]);
    for (i, (name, m)) in class.names.iter().zip(&class.members).enumerate() {
        table.row([name.clone(), m.num_states().to_string(), outcome.minimal.contains(&i).to_string()]);
    }
    // non-transitive triples are a property of the order, flagged but not fatal
    let assertions = vec![Assertion::new(
        "chosen map is minimal",
        outcome.minimal.contains(&outcome.chosen),
        format!(
            "{} of {} states; {} non-transitive triples flagged",
            outcome.chosen_name,
            outcome.num_states,
            outcome.transitivity_violations.len()
        ),
    )];
    let files = vec![("audit.csv".into(), csv_bytes(|w| outcome.write_audit_csv(w))?)];
    Ok(PipelineOutput {
        result: json!({
            "class_size": class.len(),
            "product_closed": class.product_closed,
            "coarsening_closed": class.coarsening_closed,
            "tolerance": opts.tol,
            "outcome": outcome,
            "chosen_assignment": assignment,
        }),
        files,
        assertions,
        table: table.render(),
    })
}
