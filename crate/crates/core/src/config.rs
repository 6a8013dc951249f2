//! Run configuration: one TOML file drives the whole pipeline.
//!
//! Every key has a default; an empty file is a valid config. Unknown keys are
//! rejected. Loading validates all sections and reports every offending key
//! at once. The effective config (defaults applied) can be emitted to a
//! sidecar file that annotates which defaults mirror published values; a run
//! restarted from its sidecar reproduces the original bit for bit.

use crate::distill::DistillParams;
use crate::error::{Error, Result};
use crate::evalbench::EvalParams;
use crate::rlexpert::{ExpertArch, PpoParams, RewardTable};
use crate::sensing::SensingParams;
use crate::simkernel::SimParams;
use crate::student::{StudentArch, StudentTrainParams};
use crate::world::SceneParams;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Network size preset: `desk` trains on a laptop CPU, `paper` uses the
/// published widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NnParams {
    pub preset: Preset,
}

impl Default for NnParams {
    fn default() -> Self {
        NnParams {
            preset: Preset::Desk,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,
    pub nn: NnParams,
    pub scene: SceneParams,
    pub sim: SimParams,
    pub sensing: SensingParams,
    pub ppo: PpoParams,
    pub reward: RewardTable,
    pub student: StudentTrainParams,
    pub distill: DistillParams,
    pub eval: EvalParams,
}

impl Config {
    /// Collect every constraint violation across all sections.
    pub fn validate(&self) -> Vec<String> {
        let mut bad = Vec::new();
        bad.extend(self.scene.validate());
        bad.extend(self.sim.validate());
        bad.extend(self.sensing.validate());
        bad.extend(self.ppo.validate());
        bad.extend(self.student.validate());
        bad.extend(self.distill.validate());
        bad.extend(self.eval.validate());
        bad
    }

    pub fn expert_arch(&self) -> ExpertArch {
        match self.nn.preset {
            Preset::Desk => ExpertArch::desk(self.sensing.rays),
            Preset::Paper => ExpertArch::paper(self.sensing.rays),
        }
    }

    pub fn student_arch(&self) -> StudentArch {
        match self.nn.preset {
            Preset::Desk => StudentArch::desk(&self.sensing),
            Preset::Paper => StudentArch::paper(&self.sensing),
        }
    }

    /// Parse, default, and validate a config string.
    pub fn from_toml(text: &str) -> Result<Config> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config {
            keys: vec![e.to_string().replace('\n', " ")],
        })?;
        let violations = cfg.validate();
        if !violations.is_empty() {
            return Err(Error::Config { keys: violations });
        }
        Ok(cfg)
    }

    /// Serialize the full effective config, annotating defaults that mirror
    /// published values. The output re-parses to an equal `Config`.
    pub fn effective_toml(&self) -> String {
        let raw = toml::to_string_pretty(self).expect("config serializes");
        annotate_paper_keys(&raw)
    }

    pub fn write_effective(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.effective_toml())
            .map_err(|e| Error::io(path.display().to_string(), e))
    }
}

/// Keys whose defaults mirror values reported in the literature, as
/// (section, key) pairs.
const PAPER_KEYS: &[(&str, &str)] = &[
    ("sim", "timeout_capability"),
    ("sim", "timeout_mixed"),
    ("sensing", "window"),
    ("sensing", "fov_min"),
    ("sensing", "fov_max"),
    ("reward", "alpha_reaching"),
    ("reward", "alpha_squeezing"),
    ("reward", "alpha_avoiding"),
    ("reward", "beta_step"),
    ("reward", "gamma_reaching"),
    ("reward", "gamma_squeezing"),
    ("reward", "gamma_avoiding"),
    ("reward", "delta_col"),
    ("distill", "epsilon"),
    ("distill", "alpha_smooth"),
    ("scene", "avoiding"), // dynamic speed range [0.5, 1.5] m/s
];

fn annotate_paper_keys(toml_text: &str) -> String {
    let mut out = String::with_capacity(toml_text.len() + 512);
    let mut section = String::new();
    for line in toml_text.lines() {
        let trimmed = line.trim();
        if trimmed.starts_with('[') && trimmed.ends_with(']') {
            section = trimmed.trim_matches(['[', ']']).to_string();
        } else if let Some(eq) = trimmed.find('=') {
            let key = trimmed[..eq].trim();
            if PAPER_KEYS
                .iter()
                .any(|(s, k)| *k == key && (section == *s || section.starts_with(&format!("{s}."))))
            {
                out.push_str("# paper-default\n");
            }
        }
        out.push_str(line);
        out.push('\n');
    }
    out
}

pub fn load_config(path: &Path) -> Result<Config> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Config::from_toml(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_paper_reward_defaults() {
        let cfg = Config::from_toml("").unwrap();
        assert_eq!(cfg.reward.alpha_reaching, 1.2);
        assert_eq!(cfg.reward.alpha_squeezing, 1.5);
        assert_eq!(cfg.reward.alpha_avoiding, 1.2);
        assert_eq!(cfg.reward.beta_step, -0.05);
        assert_eq!(cfg.reward.gamma_reaching, 0.05);
        assert_eq!(cfg.reward.gamma_squeezing, 0.02);
        assert_eq!(cfg.reward.gamma_avoiding, 0.0);
        assert_eq!(cfg.reward.delta_col, -15.0);
        assert_eq!(cfg.sim.timeout_capability, 90.0);
        assert_eq!(cfg.sim.timeout_mixed, 120.0);
    }

    #[test]
    fn negative_dt_rejected() {
        match Config::from_toml("[sim]\ndt = -1.0\n") {
            Err(Error::Config { keys }) => {
                assert!(keys.iter().any(|k| k.contains("dt")), "{keys:?}");
            }
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_key_rejected() {
        match Config::from_toml("foo = 3\n") {
            Err(Error::Config { keys }) => {
                assert!(keys[0].contains("foo"), "{keys:?}");
            }
            other => panic!("expected config error, got {other:?}"),
        }
        assert!(Config::from_toml("[sim]\nbar = 1\n").is_err());
    }

    #[test]
    fn multiple_violations_all_reported() {
        let text = "[sim]\ndt = -1.0\ngoal_radius = 0.0\n";
        match Config::from_toml(text) {
            Err(Error::Config { keys }) => assert!(keys.len() >= 2, "{keys:?}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn effective_round_trips() {
        let mut cfg = Config::default();
        cfg.seed = 99;
        cfg.ppo.envs = 4;
        cfg.sensing.rays = 16;
        let text = cfg.effective_toml();
        assert!(text.contains("# paper-default"));
        let back = Config::from_toml(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn overrides_apply() {
        let cfg = Config::from_toml("[reward]\nalpha_squeezing = 2.0\n[ppo]\nenvs = 8\n").unwrap();
        assert_eq!(cfg.reward.alpha_squeezing, 2.0);
        assert_eq!(cfg.ppo.envs, 8);
        // Untouched sections keep defaults.
        assert_eq!(cfg.reward.delta_col, -15.0);
    }
}
