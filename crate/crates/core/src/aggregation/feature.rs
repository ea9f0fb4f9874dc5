use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::process::{Context, CtxId, History, ProcessKernel, TruncationBudget};

pub type StateId = usize;

/// `φ: histories → S`, stored per history context.
///
/// States are numbered by first occurrence in context order, so two maps
/// inducing the same partition compare equal regardless of labels.
#[derive(Clone, Debug)]
pub struct FeatureMap {
    labels: Vec<String>,
    assign: Vec<StateId>,
}

impl PartialEq for FeatureMap {
    fn eq(&self, other: &Self) -> bool {
        self.assign == other.assign
    }
}

impl FeatureMap {
    /// States are the distinct labels, in order of first occurrence.
    pub fn from_labels(kernel: &ProcessKernel, f: impl Fn(&Context) -> String) -> Self {
        let mut index: HashMap<String, StateId> = HashMap::new();
        let mut labels = Vec::new();
        let assign = kernel
            .contexts()
            .iter()
            .map(|ctx| {
                let label = f(ctx);
                *index.entry(label.clone()).or_insert_with(|| {
                    labels.push(label);
                    labels.len() - 1
                })
            })
            .collect();
        FeatureMap { labels, assign }
    }

    /// Partition given as an arbitrary cell index per context; cells are
    /// renumbered canonically and labelled `s0, s1, ...`.
    pub fn from_partition(cells: &[usize]) -> Self {
        let mut index: HashMap<usize, StateId> = HashMap::new();
        let assign: Vec<StateId> = cells
            .iter()
            .map(|c| {
                let next = index.len();
                *index.entry(*c).or_insert(next)
            })
            .collect();
        let labels = (0..index.len()).map(|s| format!("s{s}")).collect();
        FeatureMap { labels, assign }
    }

    pub fn constant(kernel: &ProcessKernel) -> Self {
        FeatureMap { labels: vec!["*".into()], assign: vec![0; kernel.num_contexts()] }
    }

    /// One state per history context.
    pub fn identity(kernel: &ProcessKernel) -> Self {
        FeatureMap::from_labels(kernel, |ctx| ctx.label.clone())
    }

    /// State = last observation.
    pub fn last_observation(kernel: &ProcessKernel) -> Self {
        FeatureMap::from_labels(kernel, |ctx| kernel.spec().observations[ctx.last_obs].clone())
    }

    /// State = the selected characters of the last observation's name.
    pub fn last_observation_projection(kernel: &ProcessKernel, chars: &[usize]) -> Result<Self> {
        for name in &kernel.spec().observations {
            if let Some(&bad) = chars.iter().find(|&&i| i >= name.chars().count()) {
                return Err(LabError::Config(format!(
                    "selector {bad} out of range for observation '{name}'"
                )));
            }
        }
        Ok(FeatureMap::from_labels(kernel, |ctx| {
            let name: Vec<char> = kernel.spec().observations[ctx.last_obs].chars().collect();
            chars.iter().map(|&i| name[i]).collect()
        }))
    }

    /// Explicit table from context label to state label.
    pub fn from_table(kernel: &ProcessKernel, table: &BTreeMap<String, String>) -> Result<Self> {
        for ctx in kernel.contexts() {
            if !table.contains_key(&ctx.label) {
                return Err(LabError::Config(format!("no state for context '{}'", ctx.label)));
            }
        }
        Ok(FeatureMap::from_labels(kernel, |ctx| table[&ctx.label].clone()))
    }

    pub fn num_states(&self) -> usize {
        self.labels.len()
    }

    pub fn num_contexts(&self) -> usize {
        self.assign.len()
    }

    pub fn state_of(&self, ctx: CtxId) -> StateId {
        self.assign[ctx]
    }

    pub fn assignment(&self) -> &[StateId] {
        &self.assign
    }

    pub fn state_label(&self, s: StateId) -> &str {
        &self.labels[s]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn apply(&self, kernel: &ProcessKernel, h: &History) -> Result<StateId> {
        Ok(self.assign[kernel.locate(h)?])
    }

    pub fn preimage(&self, s: StateId) -> Vec<CtxId> {
        (0..self.assign.len()).filter(|&c| self.assign[c] == s).collect()
    }

    pub fn preimages(&self) -> Vec<Vec<CtxId>> {
        let mut cells = vec![Vec::new(); self.labels.len()];
        for (c, &s) in self.assign.iter().enumerate() {
            cells[s].push(c);
        }
        cells
    }

    pub(crate) fn check_kernel(&self, kernel: &ProcessKernel) -> Result<()> {
        if self.assign.len() != kernel.num_contexts() {
            return Err(LabError::Config(format!(
                "feature map covers {} contexts, process has {}",
                self.assign.len(),
                kernel.num_contexts()
            )));
        }
        Ok(())
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.labels.len() {
            return Err(LabError::Config("label count does not match state count".into()));
        }
        self.labels = labels;
        Ok(self)
    }
}

/// Serializable description of a feature map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhiSpec {
    Constant,
    Identity,
    /// Selected characters of the last observation (all of it when `chars` is absent).
    LastObservationProjection {
        #[serde(default)]
        chars: Option<Vec<usize>>,
    },
    /// Context label → state label.
    Table { states: BTreeMap<String, String> },
    QstarGrid { eps: f64 },
    VstarPair { eps: f64 },
}

impl PhiSpec {
    pub fn build(&self, kernel: &ProcessKernel, budget: &TruncationBudget) -> Result<FeatureMap> {
        match self {
            PhiSpec::Constant => Ok(FeatureMap::constant(kernel)),
            PhiSpec::Identity => Ok(FeatureMap::identity(kernel)),
            PhiSpec::LastObservationProjection { chars: None } => {
                Ok(FeatureMap::last_observation(kernel))
            }
            PhiSpec::LastObservationProjection { chars: Some(c) } => {
                FeatureMap::last_observation_projection(kernel, c)
            }
            PhiSpec::Table { states } => FeatureMap::from_table(kernel, states),
            PhiSpec::QstarGrid { eps } => crate::extreme::build_qstar_grid_phi(kernel, budget, *eps),
            PhiSpec::VstarPair { eps } => crate::extreme::build_vstar_pair_phi(kernel, budget, *eps),
        }
    }
}
