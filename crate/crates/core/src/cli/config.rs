use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::aggregation::{DispersionBuilder, FeatureMap, PhiSpec};
use crate::bounds::TheoremId;
use crate::error::{LabError, Result};
use crate::extreme::ExtremeVariant;
use crate::process::{load_process, BuiltinDoc, ProcessKernel, ProcessSource, TruncationBudget};

/// Slack targeted when no depth is configured.
pub const DEFAULT_SLACK: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pipeline {
    Solve,
    CheckTheorems,
    Extreme,
    Estimate,
    SearchPhi,
}

impl Pipeline {
    pub fn name(self) -> &'static str {
        match self {
            Pipeline::Solve => "solve",
            Pipeline::CheckTheorems => "check-theorems",
            Pipeline::Extreme => "extreme",
            Pipeline::Estimate => "estimate",
            Pipeline::SearchPhi => "search-phi",
        }
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Pipeline {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        [Pipeline::Solve, Pipeline::CheckTheorems, Pipeline::Extreme, Pipeline::Estimate, Pipeline::SearchPhi]
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| LabError::Config(format!("unknown pipeline '{s}'")))
    }
}

/// Which history policy the policy theorems are checked for.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyChoice {
    /// The tie-broken optimal history policy.
    #[default]
    Optimal,
    None,
    /// Always the named action.
    Constant(String),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineParams {
    /// Grid widths for `extreme`.
    pub eps: Option<Vec<f64>>,
    pub variant: Option<ExtremeVariant>,
    /// Trajectory lengths for `estimate`.
    pub n_grid: Option<Vec<usize>>,
    pub seeds: Option<Vec<u64>>,
    pub floor: Option<f64>,
    /// Largest acceptable estimation error at the last grid point.
    pub max_error: Option<f64>,
    pub theorems: Option<Vec<String>>,
    pub policy: Option<PolicyChoice>,
    /// Number of random soundness-suite configurations to add.
    pub suite: Option<usize>,
    /// Feature-map class for `search-phi`; all coarsenings of `phi` when absent.
    pub class: Option<Vec<PhiSpec>>,
    pub tol: Option<f64>,
    pub allow_products: Option<bool>,
    /// Longest history listed in value CSVs.
    pub csv_history_len: Option<usize>,
}

/// Experiment description as read from a JSON file; every field may be
/// overridden on the command line.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub process: Option<ProcessSource>,
    pub gamma: Option<f64>,
    pub depth: Option<usize>,
    pub phi: Option<PhiSpec>,
    /// Defaults to the process's canonical dispersion (stationary for the
    /// counterexample, uniform otherwise).
    pub dispersion: Option<DispersionBuilder>,
    pub pipeline: Option<Pipeline>,
    #[serde(default)]
    pub params: PipelineParams,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn canonical_dispersion(source: &ProcessSource) -> DispersionBuilder {
    let counterexample = match source {
        ProcessSource::Named(name) => name == "counterexample",
        ProcessSource::Inline(doc) => matches!(doc.builtin, Some(BuiltinDoc::Counterexample)),
    };
    if counterexample {
        DispersionBuilder::Stationary
    } else {
        DispersionBuilder::Uniform
    }
}

/// A configuration with every name resolved and parameter checked.
pub struct Resolved {
    pub pipeline: Pipeline,
    pub process_name: String,
    pub kernel: ProcessKernel,
    pub phi: FeatureMap,
    pub budget: TruncationBudget,
    pub dispersion: DispersionBuilder,
    pub params: PipelineParams,
    pub theorems: Vec<TheoremId>,
    pub out: PathBuf,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn resolve(&self, base_dir: &Path) -> Result<Resolved> {
        let pipeline = self.pipeline.ok_or_else(|| LabError::Config("no pipeline given".into()))?;
        let source = self.process.as_ref().ok_or_else(|| LabError::Config("no process given".into()))?;
        let out = self.out.clone().ok_or_else(|| LabError::Config("no output directory given".into()))?;
        let (kernel, builtin_phi) = load_process(source, self.gamma, base_dir)?;
        let budget = match self.depth {
            Some(d) => TruncationBudget::new(d, kernel.gamma())?,
            None => TruncationBudget::for_slack(kernel.gamma(), DEFAULT_SLACK)?,
        };
        if budget.depth == 0 {
            return Err(LabError::Config("depth must be >= 1".into()));
        }
        let phi = match (&self.phi, builtin_phi) {
            (Some(spec), _) => spec.build(&kernel, &budget)?,
            (None, Some(phi)) => phi,
            (None, None) => FeatureMap::identity(&kernel),
        };
        let theorems = match &self.params.theorems {
            Some(names) => names.iter().map(|n| n.parse()).collect::<Result<Vec<_>>>()?,
            None => TheoremId::ALL.to_vec(),
        };
        let p = &self.params;
        if let Some(eps) = &p.eps {
            if eps.is_empty() || eps.iter().any(|e| !(*e > 0.0)) {
                return Err(LabError::Config("eps values must be positive".into()));
            }
        }
        if let Some(grid) = &p.n_grid {
            if grid.is_empty() || grid[0] == 0 || grid.windows(2).any(|w| w[0] >= w[1]) {
                return Err(LabError::Config("n_grid must be positive and strictly increasing".into()));
            }
        }
        if let Some(PolicyChoice::Constant(name)) = &p.policy {
            if kernel.spec().action_index(name).is_none() {
                return Err(LabError::Config(format!("unknown action '{name}'")));
            }
        }
        if let Some(floor) = p.floor {
            if !(0.0..=1.0).contains(&floor) {
                return Err(LabError::Config("floor must lie in [0, 1]".into()));
            }
        }
        let process_name = match source {
            ProcessSource::Named(name) => name.clone(),
            ProcessSource::Inline(_) => "inline".into(),
        };
        Ok(Resolved {
            pipeline,
            process_name,
            kernel,
            phi,
            budget,
            dispersion: self.dispersion.unwrap_or_else(|| canonical_dispersion(source)),
            params: self.params.clone(),
            theorems,
            out,
            seed: self.seed.unwrap_or(1),
        })
    }
}
