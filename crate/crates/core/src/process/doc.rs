use std::path::Path;

use serde::{Deserialize, Serialize};

use super::builtin::{make_counterexample, make_example_chain, make_random_process, wrap_raw_mdp};
use super::{ProcessKernel, ProcessSpec, RandomSizes, RewardRule};
use crate::aggregation::FeatureMap;
use crate::error::{LabError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialEntry {
    pub obs: String,
    pub reward: f64,
    pub prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RawRewards {
    /// `[o][a]`
    StateAction(Vec<Vec<f64>>),
    /// `[o][a][o']`
    Transition(Vec<Vec<Vec<f64>>>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawMdpDoc {
    /// `[a][o][o']`
    pub transition: Vec<Vec<Vec<f64>>>,
    pub rewards: RawRewards,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum BuiltinDoc {
    ExampleChain,
    Counterexample,
    Random {
        seed: u64,
        observations: usize,
        rewards: usize,
        actions: usize,
        #[serde(default)]
        order: usize,
    },
}

/// JSON process definition: either a builtin or a raw MDP over the declared
/// observations.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessDoc {
    #[serde(default)]
    pub observations: Vec<String>,
    #[serde(default)]
    pub rewards: Vec<f64>,
    #[serde(default)]
    pub actions: Vec<String>,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub initial: Vec<InitialEntry>,
    #[serde(default)]
    pub raw_mdp: Option<RawMdpDoc>,
    #[serde(default)]
    pub builtin: Option<BuiltinDoc>,
}

/// Where a process comes from: a builtin name, a JSON file, or an inline
/// document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProcessSource {
    /// `"example_chain"`, `"counterexample"`, or a path to a JSON document.
    Named(String),
    Inline(ProcessDoc),
}

impl ProcessDoc {
    /// Builds the kernel and, for builtins that come with one, the feature map.
    pub fn build(&self, gamma_override: Option<f64>) -> Result<(ProcessKernel, Option<FeatureMap>)> {
        let gamma = gamma_override
            .or(self.gamma)
            .ok_or_else(|| LabError::Config("no discount factor given".into()))?;
        match (&self.builtin, &self.raw_mdp) {
            (Some(_), Some(_)) => {
                Err(LabError::Config("give either 'builtin' or 'raw_mdp', not both".into()))
            }
            (None, None) => Err(LabError::Config("process needs 'builtin' or 'raw_mdp'".into())),
            (Some(BuiltinDoc::ExampleChain), None) => {
                make_example_chain(gamma).map(|(k, phi)| (k, Some(phi)))
            }
            (Some(BuiltinDoc::Counterexample), None) => {
                make_counterexample(gamma).map(|(k, phi)| (k, Some(phi)))
            }
            (Some(BuiltinDoc::Random { seed, observations, rewards, actions, order }), None) => {
                let sizes = RandomSizes { observations: *observations, rewards: *rewards, actions: *actions };
                Ok((make_random_process(*seed, sizes, *order, gamma)?, None))
            }
            (None, Some(raw)) => {
                let spec = ProcessSpec::new(
                    self.observations.clone(),
                    self.rewards.clone(),
                    self.actions.clone(),
                    gamma,
                )?;
                let initial = self
                    .initial
                    .iter()
                    .map(|e| {
                        let o = spec.obs_index(&e.obs).ok_or_else(|| {
                            LabError::Config(format!("unknown initial observation '{}'", e.obs))
                        })?;
                        let r = spec.reward_index(e.reward).ok_or_else(|| {
                            LabError::Config(format!("unknown initial reward {}", e.reward))
                        })?;
                        Ok((o, r, e.prob))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let rule = match &raw.rewards {
                    RawRewards::StateAction(r) => RewardRule::PerStateAction(r.clone()),
                    RawRewards::Transition(r) => RewardRule::PerTransition(r.clone()),
                };
                Ok((wrap_raw_mdp(spec, &raw.transition, &rule, &initial)?, None))
            }
        }
    }
}

/// Resolves a source; relative paths are taken from `base_dir`.
pub fn load_process(
    source: &ProcessSource,
    gamma_override: Option<f64>,
    base_dir: &Path,
) -> Result<(ProcessKernel, Option<FeatureMap>)> {
    let doc = match source {
        ProcessSource::Inline(doc) => doc.clone(),
        ProcessSource::Named(name) => match name.as_str() {
            "example_chain" => ProcessDoc { builtin: Some(BuiltinDoc::ExampleChain), ..Default::default() },
            "counterexample" => {
                ProcessDoc { builtin: Some(BuiltinDoc::Counterexample), ..Default::default() }
            }
            path => {
                let text = std::fs::read_to_string(base_dir.join(path))?;
                serde_json::from_str(&text)?
            }
        },
    };
    doc.build(gamma_override)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_mdp_document() {
        let json = r#"{
            "observations": ["0", "1"],
            "rewards": [0, 0.16666666666666666, 0.5, 1],
            "actions": ["alpha", "beta"],
            "gamma": 0.5,
            "initial": [{"obs": "0", "reward": 0, "prob": 0.5}, {"obs": "1", "reward": 0, "prob": 0.5}],
            "raw_mdp": {
                "transition": [[[1, 0], [1, 0]], [[0.5, 0.5], [0.5, 0.5]]],
                "rewards": {"state_action": [[0.16666666666666666, 0], [1, 0.5]]}
            }
        }"#;
        let doc: ProcessDoc = serde_json::from_str(json).unwrap();
        let (k, phi) = doc.build(None).unwrap();
        assert!(phi.is_none());
        let (reference, _) = make_counterexample(0.5).unwrap();
        assert_eq!(k.num_contexts(), reference.num_contexts());
        for c in 0..k.num_contexts() {
            for a in 0..2 {
                assert_eq!(k.row(c, a), reference.row(c, a));
            }
        }
    }

    #[test]
    fn builtin_names_and_gamma_override() {
        let src: ProcessSource = serde_json::from_str(r#""example_chain""#).unwrap();
        let (k, phi) = load_process(&src, Some(0.25), Path::new(".")).unwrap();
        assert_eq!(k.gamma(), 0.25);
        assert_eq!(phi.unwrap().num_states(), 2);
        let src: ProcessSource =
            serde_json::from_str(r#"{"builtin": {"name": "random", "seed": 3, "observations": 2, "rewards": 2, "actions": 2, "order": 1}, "gamma": 0.5}"#)
                .unwrap();
        assert!(load_process(&src, None, Path::new(".")).is_ok());
        let missing_gamma: ProcessSource = serde_json::from_str(r#"{"builtin": {"name": "counterexample"}}"#).unwrap();
        assert!(matches!(load_process(&missing_gamma, None, Path::new(".")), Err(LabError::Config(_))));
    }
}
