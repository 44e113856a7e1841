//! Experiment configuration files.
//!
//! Configs are JSON with a strict schema: unknown keys are rejected and
//! every error names the offending key path.

use std::path::{Path, PathBuf};

use convexlab::{LossFamily, ModelClass, OptimizerCfg, PhasePlan, TaskSpec};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Overrides the results directory named in a config.
pub const RESULTS_DIR_ENV: &str = "CONVEXLAB_RESULTS_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskSpec,
    pub model_class: ModelClass,
    #[serde(default)]
    pub plan: PlanSection,
    pub finetune_family: LossFamily,
    /// Finetune exponents to sweep; when absent, one run per seed with
    /// `finetune_family` as given.
    #[serde(default)]
    pub k_values: Option<Vec<f64>>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub tolerances: Tolerances,
}

/// Optional changes to the default two-phase plan.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSection {
    pub embed_dim: Option<usize>,
    pub hidden_dim: Option<usize>,
    pub dataset_size: Option<usize>,
    pub pretrain: Option<OptimizerCfg>,
    pub finetune: Option<OptimizerCfg>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Gradient-weight ceiling for both phases.
    pub weight_limit: Option<f64>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            CliError::config(key, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.seeds.is_empty() {
            return Err(CliError::config("seeds", "must list at least one seed"));
        }
        if let Some(ks) = &self.k_values {
            if ks.is_empty() {
                return Err(CliError::config("k_values", "must not be empty when present"));
            }
            for &k in ks {
                self.finetune_family
                    .with_k(k)
                    .map_err(|e| CliError::config("k_values", e.to_string()))?;
            }
        }
        if let Some(w) = self.tolerances.weight_limit {
            if w.is_nan() || w <= 0.0 {
                return Err(CliError::config("tolerances.weight_limit", "must be positive"));
            }
        }
        convexlab::build_task(&self.task).map_err(|e| CliError::config("task", e.to_string()))?;
        let plan = self.phase_plan();
        for (key, cfg) in [("plan.pretrain", &plan.pretrain), ("plan.finetune", &plan.finetune)] {
            cfg.validate().map_err(|e| CliError::config(key, e.to_string()))?;
        }
        if plan.dataset_size == 0 {
            return Err(CliError::config("plan.dataset_size", "must be at least 1"));
        }
        Ok(())
    }

    pub fn phase_plan(&self) -> PhasePlan {
        let base = PhasePlan::new(self.model_class, self.finetune_family);
        let p = &self.plan;
        let mut plan = PhasePlan {
            embed_dim: p.embed_dim.unwrap_or(base.embed_dim),
            hidden_dim: p.hidden_dim.unwrap_or(base.hidden_dim),
            dataset_size: p.dataset_size.unwrap_or(base.dataset_size),
            pretrain: p.pretrain.clone().unwrap_or(base.pretrain),
            finetune: p.finetune.clone().unwrap_or(base.finetune),
            ..base
        };
        if let Some(w) = self.tolerances.weight_limit {
            plan.pretrain.weight_limit = w;
            plan.finetune.weight_limit = w;
        }
        plan
    }

    /// The environment variable wins over the config.
    pub fn results_dir(&self) -> PathBuf {
        std::env::var_os(RESULTS_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| self.output_dir.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "task": {"vocab_size": 3, "seq_len": 2, "num_contexts": 1, "modes_per_context": 2, "seed": 0},
        "model_class": "NAR",
        "finetune_family": {"kind": "exp_composed", "k": 2.0},
        "seeds": [0]
    }"#;

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        let plan = cfg.phase_plan();
        assert_eq!(plan, PhasePlan::new(ModelClass::NonAutoregressive, cfg.finetune_family));
        assert_eq!(cfg.output_dir, PathBuf::from("results"));
    }

    #[test]
    fn unknown_nested_key_is_named() {
        let text = MINIMAL.replace(r#""seed": 0}"#, r#""seed": 0, "colour": 1}"#);
        match ExperimentConfig::from_json(&text) {
            Err(CliError::Config { key, message }) => {
                assert_eq!(key, "task.colour");
                assert!(message.contains("colour"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_seeds_rejected() {
        let text = MINIMAL.replace(r#""seeds": [0]"#, r#""seeds": []"#);
        let err = ExperimentConfig::from_json(&text).unwrap_err();
        assert!(matches!(&err, CliError::Config { key, .. } if key == "seeds"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn bad_values_name_their_key() {
        let text = MINIMAL.replace(r#""k": 2.0"#, r#""k": -1.0"#);
        let err = ExperimentConfig::from_json(&text).unwrap_err();
        assert!(err.to_string().contains("finetune_family"), "{err}");
        let text = MINIMAL.replace(r#""seeds": [0]"#, r#""seeds": [0], "k_values": []"#);
        assert!(ExperimentConfig::from_json(&text).unwrap_err().to_string().contains("k_values"));
        let text = MINIMAL.replace(
            r#""seeds": [0]"#,
            r#""seeds": [0], "plan": {"pretrain": {"lr": 0, "warmup_steps": 1, "steps": 1, "batch_size": 1}}"#,
        );
        assert!(ExperimentConfig::from_json(&text).unwrap_err().to_string().contains("plan.pretrain"));
    }

    #[test]
    fn weight_limit_override_reaches_both_phases() {
        let text = MINIMAL.replace(r#""seeds": [0]"#, r#""seeds": [0], "tolerances": {"weight_limit": 50.0}"#);
        let plan = ExperimentConfig::from_json(&text).unwrap().phase_plan();
        assert_eq!(plan.pretrain.weight_limit, 50.0);
        assert_eq!(plan.finetune.weight_limit, 50.0);
    }
}
