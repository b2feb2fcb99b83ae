//! Experiment configuration: a flat, human-readable key-value file (TOML
//! syntax, top-level keys only) resolved into a model, a parameter box and
//! run settings. The schema is documented in `FORMATS.md`; `configs/` holds
//! one complete file per shipped experiment.

use crate::cv::{Algorithm, Criterion, Lambda1Rule, MuMode};
use crate::error::{Error, Result};
use crate::models::{build_model, Model, ModelDescriptor};
use crate::params::{ActiveCoord, ParameterBox, ParameterPoint};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

fn default_algorithm() -> u8 {
    1
}
fn default_criterion() -> String {
    "abs".into()
}
fn default_lambda1_rule() -> String {
    "max-variance".into()
}
fn default_i_max() -> usize {
    20
}
fn default_m_small() -> usize {
    1000
}
fn default_trial_size() -> usize {
    100
}
fn default_small_trial_size() -> usize {
    10
}
fn default_quantile() -> f64 {
    1.96
}
fn default_seed_trial() -> u64 {
    101
}
fn default_seed_offline() -> u64 {
    202
}
fn default_seed_online() -> u64 {
    303
}
fn default_out_dir() -> String {
    "runs/out".into()
}
fn default_test_box() -> String {
    "paper".into()
}
fn default_mu_mode() -> String {
    "online".into()
}
fn default_horizon() -> f64 {
    1.0
}
fn default_steps() -> usize {
    100
}
fn default_pde_time_steps() -> usize {
    100
}
fn default_pde_space_steps() -> usize {
    300
}
fn default_component() -> Vec<usize> {
    vec![1, 2]
}
fn default_x0() -> Vec<f64> {
    vec![1.0, 1.0]
}
fn default_ou_x0() -> f64 {
    1.0
}

/// Raw file contents; everything optional has a documented default.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// bs | fene | hookean | ou
    pub model: String,
    #[serde(default = "default_algorithm")]
    pub algorithm: u8,
    /// abs | rel
    #[serde(default = "default_criterion")]
    pub criterion: String,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default = "default_i_max")]
    pub i_max: usize,
    #[serde(default = "default_m_small")]
    pub m_small: usize,
    /// Defaults to `100 * m_small`.
    #[serde(default)]
    pub m_large: Option<usize>,
    #[serde(default = "default_trial_size")]
    pub trial_size: usize,
    /// Defaults to `10 * trial_size`.
    #[serde(default)]
    pub test_size: Option<usize>,
    #[serde(default = "default_small_trial_size")]
    pub small_trial_size: usize,
    /// max-variance | max-correlation
    #[serde(default = "default_lambda1_rule")]
    pub lambda1_rule: String,
    #[serde(default = "default_quantile")]
    pub quantile: f64,
    #[serde(default = "default_seed_trial")]
    pub seed_trial: u64,
    #[serde(default = "default_seed_offline")]
    pub seed_offline: u64,
    #[serde(default = "default_seed_online")]
    pub seed_online: u64,
    /// 0 uses all cores.
    #[serde(default)]
    pub workers: usize,
    #[serde(default = "default_out_dir")]
    pub out_dir: String,
    /// paper | wide
    #[serde(default = "default_test_box")]
    pub test_box: String,
    /// online | offline-cov
    #[serde(default = "default_mu_mode")]
    pub mu_mode: String,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,

    // Parameter box over the model's coordinates.
    pub box_active: Vec<String>,
    pub box_lo: Vec<f64>,
    pub box_hi: Vec<f64>,
    /// Entries `"coord=source"`.
    #[serde(default)]
    pub box_tie: Vec<String>,
    /// Entries `"coord=value"`.
    #[serde(default)]
    pub box_frozen: Vec<String>,

    // bs model
    #[serde(default)]
    pub bs_spot: Option<f64>,
    #[serde(default)]
    pub bs_strike: Option<f64>,
    #[serde(default)]
    pub bs_rate: Option<f64>,
    #[serde(default = "default_pde_time_steps")]
    pub pde_time_steps: usize,
    #[serde(default = "default_pde_space_steps")]
    pub pde_space_steps: usize,
    /// Defaults to `3 * strike`.
    #[serde(default)]
    pub pde_s_max: Option<f64>,

    // dumbbell models
    #[serde(default)]
    pub dumbbell_b_ext: Option<f64>,
    /// One-based Kramers component.
    #[serde(default = "default_component")]
    pub dumbbell_component: Vec<usize>,
    #[serde(default = "default_x0")]
    pub dumbbell_x0: Vec<f64>,

    // ou model
    #[serde(default = "default_ou_x0")]
    pub ou_x0: f64,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(format!("config parse error: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Validates and resolves defaults, builds the model and the box.
    pub fn resolve(&self) -> Result<ResolvedExperiment> {
        let algorithm = Algorithm::from_index(self.algorithm)?;
        let criterion = match self.criterion.as_str() {
            "abs" => Criterion::Absolute,
            "rel" => Criterion::Relative,
            other => return Err(Error::config(format!("criterion must be abs or rel, got '{other}'"))),
        };
        let lambda1_rule = match self.lambda1_rule.as_str() {
            "max-variance" => Lambda1Rule::MaxVariance,
            "max-correlation" => Lambda1Rule::MaxCorrelation,
            other => {
                return Err(Error::config(format!(
                    "lambda1_rule must be max-variance or max-correlation, got '{other}'"
                )))
            }
        };
        let test_box = match self.test_box.as_str() {
            "paper" => TestBox::Paper,
            "wide" => TestBox::Wide,
            other => return Err(Error::config(format!("test_box must be paper or wide, got '{other}'"))),
        };
        let mu_mode = match self.mu_mode.as_str() {
            "online" => MuMode::OnlineAssembly,
            "offline-cov" => MuMode::OfflineReference,
            other => {
                return Err(Error::config(format!(
                    "mu_mode must be online or offline-cov, got '{other}'"
                )))
            }
        };
        if self.m_small < 2 {
            return Err(Error::config("m_small must be at least 2"));
        }
        let m_large = self.m_large.unwrap_or(100 * self.m_small);
        if m_large < self.m_small {
            return Err(Error::config("m_large must be at least m_small"));
        }
        let test_size = self.test_size.unwrap_or(10 * self.trial_size);
        for (name, v) in [
            ("i_max", self.i_max),
            ("trial_size", self.trial_size),
            ("test_size", test_size),
            ("small_trial_size", self.small_trial_size),
            ("steps", self.steps),
        ] {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if self.trial_size < self.i_max {
            return Err(Error::config(format!(
                "trial_size ({}) must be at least i_max ({})",
                self.trial_size, self.i_max
            )));
        }
        if self.quantile <= 0.0 {
            return Err(Error::config("quantile must be positive"));
        }
        if self.horizon <= 0.0 {
            return Err(Error::config("horizon must be positive"));
        }

        let descriptor = self.model_descriptor(m_large)?;
        if algorithm == Algorithm::Gradient && matches!(descriptor, ModelDescriptor::Ou { .. }) {
            return Err(Error::config(
                "the ou oracle model supports algorithm 1 only",
            ));
        }
        let model = build_model(&descriptor)?;
        let parameter_box = self.parameter_box(model.as_ref())?;

        Ok(ResolvedExperiment {
            raw: self.clone(),
            descriptor,
            model,
            parameter_box,
            algorithm,
            criterion,
            lambda1_rule,
            test_box,
            mu_mode,
            m_large,
            test_size,
            out_dir: PathBuf::from(&self.out_dir),
        })
    }

    fn model_descriptor(&self, _m_large: usize) -> Result<ModelDescriptor> {
        match self.model.as_str() {
            "bs" => {
                let spot = self.bs_spot.ok_or_else(|| Error::config("bs model needs bs_spot"))?;
                let strike = self
                    .bs_strike
                    .ok_or_else(|| Error::config("bs model needs bs_strike"))?;
                let rate = self.bs_rate.ok_or_else(|| Error::config("bs model needs bs_rate"))?;
                if spot <= 0.0 || strike <= 0.0 {
                    return Err(Error::config("spot and strike must be positive"));
                }
                Ok(ModelDescriptor::Bs {
                    spot,
                    strike,
                    rate,
                    horizon: self.horizon,
                    steps: self.steps,
                    pde_time_steps: self.pde_time_steps,
                    pde_space_steps: self.pde_space_steps,
                    s_max: self.pde_s_max.unwrap_or(3.0 * strike),
                })
            }
            "fene" | "hookean" => {
                if self.dumbbell_component.len() != 2 {
                    return Err(Error::config("dumbbell_component needs two entries"));
                }
                let (spring, b_ext) = if self.model == "fene" {
                    let b = self
                        .dumbbell_b_ext
                        .ok_or_else(|| Error::config("fene model needs dumbbell_b_ext"))?;
                    ("fene".to_string(), Some(b))
                } else {
                    ("hookean".to_string(), None)
                };
                Ok(ModelDescriptor::Dumbbell {
                    spring,
                    b_ext,
                    component: (self.dumbbell_component[0], self.dumbbell_component[1]),
                    x0: self.dumbbell_x0.clone(),
                    horizon: self.horizon,
                    steps: self.steps,
                })
            }
            "ou" => Ok(ModelDescriptor::Ou {
                x0: self.ou_x0,
                horizon: self.horizon,
                steps: self.steps,
            }),
            other => Err(Error::config(format!("unknown model '{other}'"))),
        }
    }

    fn parameter_box(&self, model: &dyn Model) -> Result<ParameterBox> {
        let names: Vec<String> = model.param_names().iter().map(|s| s.to_string()).collect();
        let index_of = |name: &str| -> Result<usize> {
            names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::config(format!("unknown coordinate '{name}' for model {}", model.name())))
        };
        if self.box_active.len() != self.box_lo.len() || self.box_active.len() != self.box_hi.len() {
            return Err(Error::config(
                "box_active, box_lo and box_hi must have the same length",
            ));
        }
        let mut active = Vec::new();
        for ((name, &lo), &hi) in self.box_active.iter().zip(&self.box_lo).zip(&self.box_hi) {
            active.push(ActiveCoord {
                index: index_of(name)?,
                lo,
                hi,
            });
        }
        let mut ties = Vec::new();
        for t in &self.box_tie {
            let (lhs, rhs) = t
                .split_once('=')
                .ok_or_else(|| Error::config(format!("tie '{t}' must look like coord=source")))?;
            ties.push((index_of(lhs.trim())?, index_of(rhs.trim())?));
        }
        let mut frozen = Vec::new();
        for f in &self.box_frozen {
            let (lhs, rhs) = f
                .split_once('=')
                .ok_or_else(|| Error::config(format!("frozen '{f}' must look like coord=value")))?;
            let value: f64 = rhs
                .trim()
                .parse()
                .map_err(|_| Error::config(format!("frozen value in '{f}' is not a number")))?;
            frozen.push((index_of(lhs.trim())?, value));
        }
        let b = ParameterBox {
            names,
            active,
            frozen,
            ties,
        };
        b.validate()?;
        Ok(b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestBox {
    Paper,
    Wide,
}

/// A validated configuration with the model and box materialized.
pub struct ResolvedExperiment {
    pub raw: ExperimentConfig,
    pub descriptor: ModelDescriptor,
    pub model: Box<dyn Model>,
    pub parameter_box: ParameterBox,
    pub algorithm: Algorithm,
    pub criterion: Criterion,
    pub lambda1_rule: Lambda1Rule,
    pub test_box: TestBox,
    pub mu_mode: MuMode,
    pub m_large: usize,
    pub test_size: usize,
    pub out_dir: PathBuf,
}

impl ResolvedExperiment {
    /// The box whose points the online stage samples.
    pub fn test_parameter_box(&self) -> ParameterBox {
        match self.test_box {
            TestBox::Paper => self.parameter_box.clone(),
            TestBox::Wide => self.parameter_box.widened(),
        }
    }

    /// Parses a comma-separated full coordinate vector for this model.
    pub fn parse_lambda(&self, text: &str) -> Result<ParameterPoint> {
        let coords: Vec<f64> = text
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::invalid(format!("'{v}' is not a number")))
            })
            .collect::<Result<_>>()?;
        if coords.len() != self.model.param_dim() {
            return Err(Error::invalid(format!(
                "model {} expects {} coordinates ({}), got {}",
                self.model.name(),
                self.model.param_dim(),
                self.model.param_names().join(","),
                coords.len()
            )));
        }
        Ok(ParameterPoint(coords))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BS_EXAMPLE: &str = r#"
model = "bs"
algorithm = 1
m_small = 100
trial_size = 20
i_max = 5
bs_spot = 90.0
bs_strike = 100.0
bs_rate = 0.04
box_active = ["a", "vol_b"]
box_lo = [-0.05, 0.5]
box_hi = [0.15, 1.5]
box_tie = ["vol_c=vol_b"]
box_frozen = ["vol_d=1.0", "alpha=1.1", "gamma=5.0", "c_min=0.05"]
"#;

    #[test]
    fn bs_config_resolves_with_defaults() {
        let cfg = ExperimentConfig::from_toml(BS_EXAMPLE).unwrap();
        let r = cfg.resolve().unwrap();
        assert_eq!(r.m_large, 10_000, "m_large defaults to 100 m_small");
        assert_eq!(r.test_size, 200, "test_size defaults to 10 trial_size");
        assert_eq!(r.model.param_dim(), 7);
        let pts = r.parameter_box.sample(1, 0, 5).unwrap();
        for p in pts {
            let c = p.coords();
            assert_eq!(c[1], c[2], "tie vol_c = vol_b");
            assert_eq!(c[3], 1.0);
            assert_eq!(c[4], 1.1);
            assert_eq!(c[5], 5.0);
            assert_eq!(c[6], 0.05);
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{BS_EXAMPLE}\nnot_a_key = 3\n");
        assert!(ExperimentConfig::from_toml(&text).is_err());
    }

    #[test]
    fn bad_enumerations_are_rejected() {
        let mut cfg = ExperimentConfig::from_toml(BS_EXAMPLE).unwrap();
        cfg.criterion = "absolute".into();
        assert!(cfg.resolve().is_err());
        let mut cfg = ExperimentConfig::from_toml(BS_EXAMPLE).unwrap();
        cfg.algorithm = 3;
        assert!(cfg.resolve().is_err());
        let mut cfg = ExperimentConfig::from_toml(BS_EXAMPLE).unwrap();
        cfg.test_box = "huge".into();
        assert!(cfg.resolve().is_err());
    }

    #[test]
    fn trial_must_cover_i_max() {
        let mut cfg = ExperimentConfig::from_toml(BS_EXAMPLE).unwrap();
        cfg.i_max = 50;
        assert!(cfg.resolve().is_err());
    }

    #[test]
    fn ou_rejects_gradient_algorithm() {
        let text = r#"
model = "ou"
algorithm = 2
box_active = ["theta", "sigma"]
box_lo = [0.5, 0.5]
box_hi = [1.5, 1.5]
"#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        assert!(cfg.resolve().is_err());
    }

    #[test]
    fn fene_needs_extensibility() {
        let text = r#"
model = "fene"
box_active = ["l11", "l12", "l21"]
box_lo = [-1.0, -1.0, -1.0]
box_hi = [1.0, 1.0, 1.0]
"#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        assert!(cfg.resolve().is_err());
    }

    #[test]
    fn lambda_parsing_checks_arity() {
        let cfg = ExperimentConfig::from_toml(BS_EXAMPLE).unwrap();
        let r = cfg.resolve().unwrap();
        assert!(r.parse_lambda("0.05,1.0,1.0,1.0,1.1,5.0,0.05").is_ok());
        assert!(r.parse_lambda("0.05,1.0").is_err());
        assert!(r.parse_lambda("a,b,c,d,e,f,g").is_err());
    }
}
