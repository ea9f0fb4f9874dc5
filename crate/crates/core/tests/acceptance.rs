//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any
//! fails. Built without the libtest harness so the lines always print.

use std::time::Instant;

use histagg::aggregation::{
    build_onpolicy_dispersion, build_stationary_dispersion, build_surrogate_mdp,
    build_uniform_dispersion, marginalize, relabel_actions, FeatureMap,
};
use histagg::bounds::{measure_uniformity, soundness_suite, suite_config, TheoremId, TheoremLab};
use histagg::estimation::{convergence_report, exact_onpolicy_mdp};
use histagg::extreme::{run_extreme_pipeline, ExtremeVariant};
use histagg::mdp::{evaluate_state_policy, StatePolicy, DEFAULT_TOL};
use histagg::process::{
    enumerate_histories, make_counterexample, make_example_chain, make_random_process, History,
    HistoryPolicy, ProcessKernel, RandomSizes, TruncationBudget,
};
use histagg::search::{compare, search_minimal, PhiClass, Relation, SearchOptions, SolutionCache};
use histagg::values::{evaluate_history_policy, solve_history_optimal};

/// Failed checks of one criterion, with a short summary for the PASS line.
#[derive(Default)]
struct Outcome {
    failures: Vec<String>,
    summary: Vec<String>,
}

impl Outcome {
    fn check(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.failures.push(what.into());
        }
    }

    fn note(&mut self, what: impl Into<String>) {
        self.summary.push(what.into());
    }
}

type Criterion = fn() -> histagg::Result<Outcome>;

fn main() {
    let criteria: [(&str, Criterion); 7] = [
        ("worked example", worked_example),
        ("counterexample", counterexample),
        ("soundness suite", soundness),
        ("extreme aggregation", extreme),
        ("estimation", estimation),
        ("feature-map search", phi_search),
        ("action relabeling", relabeling),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run().unwrap_or_else(|e| Outcome { failures: vec![format!("error: {e}")], ..Default::default() });
        let secs = start.elapsed().as_secs_f64();
        if outcome.failures.is_empty() {
            println!("PASS criterion {} ({name}) [{secs:.1}s]: {}", i + 1, outcome.summary.join("; "));
        } else {
            failed += 1;
            println!("FAIL criterion {} ({name}) [{secs:.1}s]: {}", i + 1, outcome.failures.join("; "));
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn histories_ending_in(kernel: &ProcessKernel, obs: usize, len: usize) -> histagg::Result<Vec<History>> {
    let budget = TruncationBudget::new(len, kernel.gamma())?;
    Ok(enumerate_histories(kernel, &budget, None)?
        .into_iter()
        .map(|r| r.history)
        .filter(|h| h.last_obs() == obs)
        .collect())
}

fn worked_example() -> histagg::Result<Outcome> {
    let mut out = Outcome::default();
    let gamma = 0.5;
    let (kernel, phi) = make_example_chain(gamma)?;
    let budget = TruncationBudget::new(40, gamma)?;
    let slack = budget.tail_bound;
    let go = HistoryPolicy::constant(&kernel, 0);
    let values = evaluate_history_policy(&kernel, &go, &budget)?;
    let low = gamma / (1.0 - gamma * gamma);
    let high = 1.0 / (1.0 - gamma * gamma);
    let mut worst: f64 = 0.0;
    for (obs, target) in [(0, low), (1, high)] {
        for h in histories_ending_in(&kernel, obs, 4)? {
            let err = (values.v_at(&kernel, &h)? - target).abs();
            worst = worst.max(err);
            out.check(err <= 1e-5, format!("V({}) off by {err:e}", h.key(kernel.spec())));
        }
    }
    out.note(format!("max |V - closed form| = {worst:.1e}"));

    let nr = kernel.spec().num_rewards();
    let zero_state = phi.labels().iter().position(|l| l == "0").expect("state 0");
    let to_zero = |p: Vec<f64>| -> f64 { p[zero_state * nr..(zero_state + 1) * nr].iter().sum() };
    let from_00 = to_zero(marginalize(&kernel, &phi, &History::initial(0, 0), 0)?);
    let from_10 = to_zero(marginalize(&kernel, &phi, &History::initial(2, 0), 0)?);
    out.check(from_00 == 0.5, format!("P(s'=0|00) = {from_00}"));
    out.check(from_10 == 0.0, format!("P(s'=0|10) = {from_10}"));

    let b = build_uniform_dispersion(&kernel, &phi)?;
    let lab = TheoremLab::new(&kernel, &phi, &b, Some(&go), &budget, DEFAULT_TOL)?;
    let eps = lab.profile().eps_q_pi.unwrap_or(f64::INFINITY);
    out.check(eps <= 2.0 * slack, format!("measured eps_q_pi {eps:e} > 2 slack"));
    for r in lab.check(TheoremId::PhiQPi)? {
        out.check(r.applicable && r.holds, format!("phi-q-pi {} not certified: {}", r.clause, r.note));
        if r.clause == "q" {
            out.check(r.observed_gap <= 3.0 * slack, format!("|Q - q| = {:e} > 3 slack", r.observed_gap));
            out.note(format!("|Q^Pi - q^pi| = {:.1e}, slack = {slack:.1e}", r.observed_gap));
        }
    }
    Ok(out)
}

fn counterexample() -> histagg::Result<Outcome> {
    let mut out = Outcome::default();
    for gamma in [0.0, 0.3] {
        let (kernel, phi) = make_counterexample(gamma)?;
        let budget = TruncationBudget::for_slack(gamma, 1e-10)?;
        let slack = budget.tail_bound;
        let b = build_stationary_dispersion(&kernel, &phi)?;
        let lab = TheoremLab::new(&kernel, &phi, &b, None, &budget, DEFAULT_TOL)?;
        let (_, pi) = lab.state_optimal();
        let (_, big_pi) = lab.history_optimal();
        out.check(pi.act == [1], format!("gamma {gamma}: surrogate optimum {:?} is not beta", pi.act));
        out.check(big_pi.iter().all(|&a| a == 0), format!("gamma {gamma}: history optimum is not alpha"));
        if gamma == 0.0 {
            let v = |a| -> histagg::Result<f64> {
                Ok(evaluate_state_policy(lab.surrogate(), &StatePolicy::constant(1, a), DEFAULT_TOL)?.v[0])
            };
            let (va, vb) = (v(0)?, v(1)?);
            out.check(va == 1.0 / 6.0, format!("v^alpha = {va}"));
            out.check(vb == 0.25, format!("v^beta = {vb}"));
            let eps_v = lab.profile().eps_v_star;
            out.check(eps_v >= 5.0 / 6.0 - 2.0 * slack, format!("eps_v* = {eps_v}"));
            out.note(format!("v^alpha = {va}, v^beta = {vb}, eps_v* = {eps_v:.6}"));
        }
    }
    out.note("pi* = beta and Pi* = alpha at gamma 0 and 0.3".to_string());
    Ok(out)
}

const SUITE_BASE: u64 = 2024;
const SUITE_SIZE: usize = 60;

fn soundness() -> histagg::Result<Outcome> {
    let mut out = Outcome::default();
    let report = soundness_suite(SUITE_BASE, SUITE_SIZE)?;
    out.check(report.configs.len() >= 50, "fewer than 50 configurations");
    for (key, r) in report.violations() {
        out.check(
            false,
            format!("{key} {} {}: {:e} > {:e}", r.theorem_id.name(), r.clause, r.observed_gap, r.claimed_bound),
        );
    }
    for c in &report.configs {
        let (no, _, na) = c.sizes;
        out.check(c.order <= 2 && no <= 4 && na <= 3, format!("{} outside the size envelope", c.key));
        out.check(TruncationBudget::new(c.depth, c.gamma)?.tail_bound <= 1e-4, format!("{} slack too large", c.key));
    }
    // every statement must actually be exercised somewhere
    for id in TheoremId::ALL {
        let used = report.reports.iter().any(|(_, r)| r.theorem_id == id && r.applicable);
        out.check(used, format!("{} never applicable", id.name()));
    }
    out.note(format!(
        "{} configs, {} applicable checks, {} violations",
        report.configs.len(),
        report.applicable,
        report.violations
    ));
    Ok(out)
}

fn extreme() -> histagg::Result<Outcome> {
    let mut out = Outcome::default();
    let mut runs = 0;
    let mut worst_ratio: f64 = 0.0;
    for i in 0..SUITE_SIZE {
        let case = suite_config(SUITE_BASE, i).materialize()?;
        let gamma = case.kernel.gamma();
        for eps in [0.02, 0.1] {
            let r = run_extreme_pipeline(
                &case.kernel,
                &case.budget,
                eps,
                case.config.dispersion,
                ExtremeVariant::QstarGrid,
            )?;
            runs += 1;
            let bound = 2.0 * r.eps_effective / (1.0 - gamma).powi(2) + r.slack;
            out.check(r.achieved_gap <= bound, format!("{} eps {eps}: gap {:e} > {bound:e}", case.config.key, r.achieved_gap));
            worst_ratio = worst_ratio.max(r.achieved_gap / bound);
            let eps_prime = r.target_eps_prime;
            if eps_prime <= 1.0 / (1.0 - gamma) {
                let na = case.kernel.spec().num_actions() as i32;
                let cap = (3.0 / (eps_prime * (1.0 - gamma).powi(3))).powi(na);
                out.check(
                    r.num_states as f64 <= cap,
                    format!("{} eps {eps}: {} states > {cap}", case.config.key, r.num_states),
                );
            }
        }
    }
    out.note(format!("{runs} runs, max gap/bound = {worst_ratio:.3}"));
    Ok(out)
}

fn estimation() -> histagg::Result<Outcome> {
    let mut out = Outcome::default();
    let mut processes: Vec<(String, ProcessKernel, FeatureMap)> = Vec::new();
    let (chain, chain_phi) = make_example_chain(0.5)?;
    processes.push(("example_chain".into(), chain, chain_phi));
    for seed in [11, 12] {
        let sizes = RandomSizes { observations: 3, rewards: 2, actions: 2 };
        let kernel = make_random_process(seed, sizes, 1, 0.5)?;
        let phi = FeatureMap::last_observation(&kernel);
        processes.push((format!("random{seed}"), kernel, phi));
    }
    let mut worst: f64 = 0.0;
    for (name, kernel, phi) in &processes {
        let behavior = HistoryPolicy::uniform(kernel);
        for seed in [1, 2, 3] {
            let report = convergence_report(kernel, &behavior, phi, &[1_000, 100_000], seed, 0.05)?;
            let (small, large) = (&report.rows[0], &report.rows[1]);
            worst = worst.max(large.sup_error);
            out.check(large.sup_error <= 0.02, format!("{name} seed {seed}: error {:.4}", large.sup_error));
            out.check(
                large.sup_error < small.sup_error,
                format!("{name} seed {seed}: error did not drop ({:.4} -> {:.4})", small.sup_error, large.sup_error),
            );
        }
        for n in [5, 200] {
            let exact = exact_onpolicy_mdp(kernel, &behavior, phi, n)?;
            let budget = TruncationBudget::new(n, kernel.gamma())?;
            let (b, _) = build_onpolicy_dispersion(kernel, &behavior, phi, &budget)?;
            let surrogate = build_surrogate_mdp(kernel, phi, &b)?;
            for s in 0..phi.num_states() {
                for a in 0..kernel.spec().num_actions() {
                    match (exact.row(s, a), surrogate.row(s, a)) {
                        (Some(x), Some(y)) => {
                            let d = x.iter().zip(y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
                            out.check(d <= 1e-9, format!("{name} n {n}: identity off by {d:e}"));
                        }
                        (None, None) => {}
                        _ => out.check(false, format!("{name} n {n}: defined pairs differ")),
                    }
                }
            }
        }
    }
    out.note(format!("max error at n = 1e5: {worst:.4}"));
    Ok(out)
}

fn phi_search() -> histagg::Result<Outcome> {
    let mut out = Outcome::default();
    let gamma = 0.5;
    let (kernel, last_bit) = make_example_chain(gamma)?;
    let budget = TruncationBudget::for_slack(gamma, 1e-10)?;
    let full = FeatureMap::last_observation(&kernel);
    out.check(full.num_states() == 4, "last-observation map is not 4-state");
    let class = PhiClass::all_coarsenings(&full, 64)?;
    let found = search_minimal(&class, &kernel, &budget, &SearchOptions::new(&budget))?;
    let chosen = &class.members[found.chosen];
    out.check(*chosen == last_bit, format!("chose {} instead of the last-bit map", found.chosen_name));
    // the order is not transitive in general; the search reports such triples
    out.note(format!(
        "chose {} from {} coarsenings ({} flagged non-transitive triples)",
        found.chosen_name,
        class.len(),
        found.transitivity_violations.len()
    ));

    let (kernel, constant) = make_counterexample(0.0)?;
    let budget = TruncationBudget::new(1, 0.0)?;
    let identity = FeatureMap::identity(&kernel);
    let cache = SolutionCache::default();
    let opts = SearchOptions::new(&budget);
    let verdict = compare(&constant, &identity, &kernel, opts.builder, &budget, opts.tol, true, &cache)?;
    out.check(verdict.relation == Relation::Succeeds, format!("constant map verdict {:?}", verdict.relation));
    let class = PhiClass::all_coarsenings(&identity, 64)?;
    let found = search_minimal(&class, &kernel, &budget, &opts)?;
    out.check(class.members[found.chosen].num_states() == 2, "counterexample search kept the 1-state map");
    out.note(format!("counterexample: 1-state map rejected with q* spread {:.4}", verdict.psi_gap));
    Ok(out)
}

fn relabeling() -> histagg::Result<Outcome> {
    let mut out = Outcome::default();
    for gamma in [0.0, 0.3] {
        let (kernel, phi) = make_counterexample(gamma)?;
        let budget = TruncationBudget::for_slack(gamma, 1e-10)?;
        let (_, pin) = solve_history_optimal(&kernel, &budget)?;
        let original = evaluate_history_policy(&kernel, &pin, &budget)?;
        let histories = enumerate_histories(&kernel, &TruncationBudget::new(4, gamma)?, None)?;
        for anchor in [0, 1] {
            let (tilde_kernel, tilde_pi) = relabel_actions(&kernel, &pin, anchor)?;
            let tilde = evaluate_history_policy(&tilde_kernel, &tilde_pi, &budget)?;
            let pins = pin.actions().expect("deterministic");
            for r in &histories {
                // rename every past action the same way the relabeling does
                let mut prefix = History::initial(r.history.head.0, r.history.head.1);
                let mut renamed = prefix.clone();
                for step in &r.history.steps {
                    let c = kernel.locate(&prefix)?;
                    let a = match step.action {
                        x if x == pins[c] => anchor,
                        x if x == anchor => pins[c],
                        x => x,
                    };
                    renamed = renamed.extend(a, step.obs, step.reward);
                    prefix = prefix.extend(step.action, step.obs, step.reward);
                }
                let want = original.v_at(&kernel, &r.history)?;
                let got = tilde.v_at(&tilde_kernel, &renamed)?;
                out.check(
                    want == got,
                    format!("gamma {gamma} anchor {anchor}: {} {want} vs {got}", r.history.key(kernel.spec())),
                );
            }
            let uniform = measure_uniformity(&tilde_kernel, &phi, Some(&tilde_pi), &budget)?;
            out.check(uniform.pi_uniform == Some(true), format!("gamma {gamma} anchor {anchor}: pi~ not uniform"));
        }
        // a pin that is not phi-uniform becomes uniform after relabeling
        let mixed = HistoryPolicy::from_fn(&kernel, |c| kernel.contexts()[c].last_obs);
        let before = measure_uniformity(&kernel, &phi, Some(&mixed), &budget)?;
        let (k2, pi2) = relabel_actions(&kernel, &mixed, 1)?;
        let after = measure_uniformity(&k2, &phi, Some(&pi2), &budget)?;
        out.check(before.pi_uniform == Some(false), "observation-dependent pin already uniform");
        out.check(after.pi_uniform == Some(true), "relabeled observation-dependent pin not uniform");
    }
    out.note("values reproduced bit-for-bit at gamma 0 and 0.3, anchors alpha and beta".to_string());
    Ok(out)
}
