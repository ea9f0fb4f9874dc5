//! Batch experiment runner: load a process and configuration, run one
//! pipeline, write a JSON report plus CSV side files.

mod config;
mod pipelines;
mod table;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Parser;
use serde_json::{json, Value};

pub use config::{ExperimentConfig, Pipeline, PipelineParams, PolicyChoice, Resolved, DEFAULT_SLACK};
pub use pipelines::{Assertion, PipelineOutput};
pub use table::Table;

use crate::error::Result;

/// Version of the JSON report layout.
pub const SCHEMA_VERSION: u32 = 1;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ASSERTION: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "histagg", about = "Aggregation experiments on history-based decision processes")]
pub struct Args {
    /// JSON experiment configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// One of solve, check-theorems, extreme, estimate, search-phi.
    #[arg(long)]
    pub pipeline: Option<String>,
    /// Output directory for report.json and CSV files.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Truncation depth for history values.
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Builtin process name or path to a process JSON file.
    #[arg(long)]
    pub process: Option<String>,
}

impl Args {
    /// The configuration file (if any) with flag overrides applied, and the
    /// directory relative process paths resolve against.
    pub fn into_config(self) -> Result<(ExperimentConfig, PathBuf)> {
        let (mut cfg, base) = match &self.config {
            Some(path) => (
                ExperimentConfig::from_path(path)?,
                path.parent().map(Path::to_path_buf).unwrap_or_default(),
            ),
            None => (ExperimentConfig::default(), PathBuf::from(".")),
        };
        if let Some(p) = self.pipeline {
            cfg.pipeline = Some(p.parse()?);
        }
        if let Some(out) = self.out {
            cfg.out = Some(out);
        }
        if self.seed.is_some() {
            cfg.seed = self.seed;
        }
        if self.depth.is_some() {
            cfg.depth = self.depth;
        }
        if self.gamma.is_some() {
            cfg.gamma = self.gamma;
        }
        if let Some(p) = self.process {
            cfg.process = Some(crate::process::ProcessSource::Named(p));
        }
        Ok((cfg, base))
    }
}

/// A finished run: the report and whether every assertion held.
pub struct RunOutcome {
    pub report: Value,
    pub passed: bool,
    pub table: String,
    pub files: Vec<(String, Vec<u8>)>,
}

/// Runs the pipeline without touching the filesystem (beyond reading
/// inputs).
pub fn execute(resolved: &Resolved) -> Result<RunOutcome> {
    let out = match resolved.pipeline {
        Pipeline::Solve => pipelines::solve(resolved)?,
        Pipeline::CheckTheorems => pipelines::check_theorems(resolved)?,
        Pipeline::Extreme => pipelines::extreme(resolved)?,
        Pipeline::Estimate => pipelines::estimate(resolved)?,
        Pipeline::SearchPhi => pipelines::search_phi(resolved)?,
    };
    let passed = out.assertions.iter().all(|a| a.passed);
    let k = &resolved.kernel;
    let report = json!({
        "schema_version": SCHEMA_VERSION,
        "pipeline": resolved.pipeline.name(),
        "process": {
            "name": resolved.process_name,
            "gamma": k.gamma(),
            "observations": k.spec().observations,
            "actions": k.spec().actions,
            "rewards": k.spec().rewards,
            "contexts": k.num_contexts(),
        },
        "truncation": { "depth": resolved.budget.depth, "slack": resolved.budget.tail_bound },
        "phi": { "states": resolved.phi.labels() },
        "dispersion": resolved.dispersion.name(),
        "seed": resolved.seed,
        "passed": passed,
        "assertions": out.assertions,
        "result": out.result,
    });
    Ok(RunOutcome { report, passed, table: out.table, files: out.files })
}

/// Writes every file through a temporary in the target directory and an
/// atomic rename, after all contents exist.
pub fn write_outputs(dir: &Path, outcome: &RunOutcome) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut report = serde_json::to_vec_pretty(&outcome.report)?;
    report.push(b'\n');
    let mut all: Vec<(&str, &[u8])> = vec![("report.json", &report)];
    all.extend(outcome.files.iter().map(|(n, b)| (n.as_str(), b.as_slice())));
    let mut staged = Vec::with_capacity(all.len());
    for (name, bytes) in all {
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(bytes)?;
        tmp.flush()?;
        staged.push((tmp, dir.join(name)));
    }
    let mut written = Vec::new();
    for (tmp, path) in staged {
        tmp.persist(&path).map_err(|e| e.error)?;
        written.push(path);
    }
    Ok(written)
}

/// Entry point shared by the binary: returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(args) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let resolved = match args.into_config().and_then(|(cfg, base)| cfg.resolve(&base)) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let outcome = match execute(&resolved) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    if let Err(e) = write_outputs(&resolved.out, &outcome) {
        eprintln!("error: {e}");
        return EXIT_CONFIG;
    }
    print!("{}", outcome.table);
    if let Some(list) = outcome.report["assertions"].as_array() {
        for a in list {
            let mark = if a["passed"].as_bool() == Some(true) { "PASS" } else { "FAIL" };
            println!("{mark} {}: {}", a["name"].as_str().unwrap_or(""), a["detail"].as_str().unwrap_or(""));
        }
    }
    if outcome.passed {
        EXIT_OK
    } else {
        dump_witnesses(&outcome.report);
        EXIT_ASSERTION
    }
}

/// Failing theorem reports with their witnesses, on stderr.
fn dump_witnesses(report: &Value) {
    let Some(reports) = report["result"]["reports"].as_array() else { return };
    for r in reports {
        if r["applicable"].as_bool() == Some(true) && r["holds"].as_bool() == Some(false) {
            eprintln!("{}", serde_json::to_string_pretty(r).unwrap_or_default());
        }
    }
}
