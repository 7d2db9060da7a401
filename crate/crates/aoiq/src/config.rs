//! TOML scenario files: the single input format of the command-line tools.
//!
//! ```toml
//! n_classes = 3
//! period = 10.0
//! t_pass = 5.0
//!
//! [[class]]
//! arrival = { kind = "windowed_sinusoid", base = 0.05, peak = 0.10 }
//! service = { kind = "windowed_sinusoid", peak = 1.0 }
//!
//! [solver]
//! epsilon = 1e-10
//! max_iters = 500
//! alpha = 1.0
//! steps_per_period = 2000
//!
//! [mc]
//! n_paths = 1000
//! n_trials = 1
//! warmup_periods = 20
//! sample_periods = 20
//! bins_per_period = 200
//! root_seed = 1
//!
//! [validate]
//! path_counts = [100, 500, 1000, 5000]
//! mae_threshold = 0.05
//! ```
//!
//! Every `[solver]`, `[mc]`, and `[validate]` key is optional and falls back
//! to the defaults shown above. Profile kinds: `windowed_sinusoid`
//! (a `base` is only meaningful for arrivals), `constant { rate }`,
//! `piecewise_constant { breakpoints, values }`, and
//! `sampled_table { samples }`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::montecarlo::McConfig;
use crate::ode::IntegrationConfig;
use crate::pss::PssConfig;
use crate::rates::{RateProfile, Scenario};

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileConfig {
    WindowedSinusoid {
        #[serde(default)]
        base: f64,
        peak: f64,
    },
    Constant {
        rate: f64,
    },
    PiecewiseConstant {
        breakpoints: Vec<f64>,
        values: Vec<f64>,
    },
    SampledTable {
        samples: Vec<f64>,
    },
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ClassConfig {
    pub arrival: ProfileConfig,
    pub service: ProfileConfig,
}

fn default_epsilon() -> f64 {
    1e-10
}
fn default_max_iters() -> usize {
    500
}
fn default_alpha() -> f64 {
    1.0
}
fn default_steps() -> usize {
    2000
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub epsilon: f64,
    pub max_iters: usize,
    pub alpha: f64,
    pub steps_per_period: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            epsilon: default_epsilon(),
            max_iters: default_max_iters(),
            alpha: default_alpha(),
            steps_per_period: default_steps(),
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct McSection {
    pub n_paths: usize,
    pub n_trials: usize,
    pub warmup_periods: usize,
    pub sample_periods: usize,
    pub bins_per_period: usize,
    pub root_seed: u64,
}

impl Default for McSection {
    fn default() -> Self {
        let d = McConfig::default();
        McSection {
            n_paths: d.n_paths,
            n_trials: d.n_trials,
            warmup_periods: d.warmup_periods,
            sample_periods: d.sample_periods,
            bins_per_period: d.bins_per_period,
            root_seed: d.root_seed,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidateSection {
    /// Path counts of the progressive sweep, ascending.
    pub path_counts: Vec<usize>,
    /// Pass threshold on the final relative mean-AoI MAE.
    pub mae_threshold: f64,
}

impl Default for ValidateSection {
    fn default() -> Self {
        ValidateSection {
            path_counts: vec![100, 500, 1000, 5000],
            mae_threshold: 0.05,
        }
    }
}

/// Parsed scenario file.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n_classes: usize,
    pub period: f64,
    /// Availability window length; required by windowed-sinusoid profiles.
    #[serde(default)]
    pub t_pass: Option<f64>,
    pub class: Vec<ClassConfig>,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub mc: McSection,
    #[serde(default)]
    pub validate: ValidateSection,
}

impl ScenarioConfig {
    /// Parses and structurally validates a scenario document.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig =
            toml::from_str(text).map_err(|e| Error::config(format!("invalid scenario: {e}")))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read scenario {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn check(&self) -> Result<()> {
        if self.class.len() != self.n_classes {
            return Err(Error::config(format!(
                "n_classes = {} but {} class sections given",
                self.n_classes,
                self.class.len()
            )));
        }
        // constructing the domain objects runs the full validation
        self.scenario()?;
        self.solver_config()?;
        self.mc_config()?;
        if self.validate.path_counts.is_empty() {
            return Err(Error::config("validate.path_counts must not be empty"));
        }
        if self.validate.path_counts.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config(
                "validate.path_counts must be strictly increasing",
            ));
        }
        if !self.validate.mae_threshold.is_finite() || self.validate.mae_threshold <= 0.0 {
            return Err(Error::config("validate.mae_threshold must be positive"));
        }
        Ok(())
    }

    fn profile(&self, p: &ProfileConfig, for_service: bool) -> Result<RateProfile> {
        let period = self.period;
        let profile = match p {
            ProfileConfig::WindowedSinusoid { base, peak } => {
                let t_pass = self.t_pass.ok_or_else(|| {
                    Error::config("t_pass is required by windowed_sinusoid profiles")
                })?;
                if for_service {
                    if *base != 0.0 {
                        return Err(Error::config(
                            "service windowed_sinusoid takes no base: the rate must drop to \
                             zero outside the availability window",
                        ));
                    }
                    RateProfile::WindowedSinusoidService {
                        mu_peak: *peak,
                        t_pass,
                        period,
                    }
                } else {
                    RateProfile::WindowedSinusoidArrival {
                        lambda_base: *base,
                        lambda_peak: *peak,
                        t_pass,
                        period,
                    }
                }
            }
            ProfileConfig::Constant { rate } => RateProfile::PiecewiseConstant {
                period,
                breakpoints: vec![0.0],
                values: vec![*rate],
            },
            ProfileConfig::PiecewiseConstant {
                breakpoints,
                values,
            } => RateProfile::PiecewiseConstant {
                period,
                breakpoints: breakpoints.clone(),
                values: values.clone(),
            },
            ProfileConfig::SampledTable { samples } => RateProfile::SampledTable {
                period,
                samples: samples.clone(),
            },
        };
        profile.validate()?;
        Ok(profile)
    }

    /// Builds the domain scenario (validating every profile).
    pub fn scenario(&self) -> Result<Scenario> {
        let mut arrival = Vec::with_capacity(self.class.len());
        let mut service = Vec::with_capacity(self.class.len());
        for c in &self.class {
            arrival.push(self.profile(&c.arrival, false)?);
            service.push(self.profile(&c.service, true)?);
        }
        Scenario::new(arrival, service)
    }

    pub fn solver_config(&self) -> Result<PssConfig> {
        let cfg = PssConfig {
            epsilon: self.solver.epsilon,
            max_iters: self.solver.max_iters,
            alpha: self.solver.alpha,
            integration: IntegrationConfig {
                steps_per_period: self.solver.steps_per_period,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn mc_config(&self) -> Result<McConfig> {
        let cfg = McConfig {
            n_paths: self.mc.n_paths,
            n_trials: self.mc.n_trials,
            warmup_periods: self.mc.warmup_periods,
            sample_periods: self.mc.sample_periods,
            bins_per_period: self.mc.bins_per_period,
            root_seed: self.mc.root_seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const THREE_CLASS: &str = r#"
n_classes = 3
period = 10.0
t_pass = 5.0

[[class]]
arrival = { kind = "windowed_sinusoid", base = 0.05, peak = 0.10 }
service = { kind = "windowed_sinusoid", peak = 1.0 }

[[class]]
arrival = { kind = "windowed_sinusoid", base = 0.10, peak = 0.30 }
service = { kind = "windowed_sinusoid", peak = 1.5 }

[[class]]
arrival = { kind = "windowed_sinusoid", base = 0.20, peak = 0.80 }
service = { kind = "windowed_sinusoid", peak = 3.0 }

[solver]
epsilon = 1e-8
steps_per_period = 500
"#;

    #[test]
    fn parses_full_scenario() {
        let cfg = ScenarioConfig::parse(THREE_CLASS).unwrap();
        let scenario = cfg.scenario().unwrap();
        assert_eq!(scenario.n_classes(), 3);
        assert_eq!(scenario.period(), 10.0);
        assert!((scenario.arrival_rate(2, 2.5) - 1.0).abs() < 1e-12);
        // overridden and defaulted solver keys
        let solver = cfg.solver_config().unwrap();
        assert_eq!(solver.epsilon, 1e-8);
        assert_eq!(solver.max_iters, 500);
        assert_eq!(solver.alpha, 1.0);
        assert_eq!(solver.integration.steps_per_period, 500);
        // defaulted sections
        let mc = cfg.mc_config().unwrap();
        assert_eq!(mc.warmup_periods, 20);
        assert_eq!(cfg.validate.path_counts, vec![100, 500, 1000, 5000]);
    }

    #[test]
    fn minimal_constant_scenario() {
        let cfg = ScenarioConfig::parse(
            r#"
n_classes = 1
period = 10.0
[[class]]
arrival = { kind = "constant", rate = 1.0 }
service = { kind = "constant", rate = 2.0 }
"#,
        )
        .unwrap();
        let scenario = cfg.scenario().unwrap();
        assert_eq!(scenario.arrival_rate(0, 3.3), 1.0);
        assert_eq!(scenario.service_rate(0, 7.7), 2.0);
    }

    #[test]
    fn rejects_bad_documents() {
        // class count mismatch
        assert!(ScenarioConfig::parse(
            r#"
n_classes = 2
period = 10.0
[[class]]
arrival = { kind = "constant", rate = 1.0 }
service = { kind = "constant", rate = 2.0 }
"#
        )
        .is_err());
        // negative rate
        assert!(ScenarioConfig::parse(
            r#"
n_classes = 1
period = 10.0
[[class]]
arrival = { kind = "constant", rate = -1.0 }
service = { kind = "constant", rate = 2.0 }
"#
        )
        .is_err());
        // t_pass beyond the period
        assert!(ScenarioConfig::parse(
            r#"
n_classes = 1
period = 10.0
t_pass = 11.0
[[class]]
arrival = { kind = "windowed_sinusoid", peak = 0.1 }
service = { kind = "windowed_sinusoid", peak = 1.0 }
"#
        )
        .is_err());
        // class count out of range
        assert!(ScenarioConfig::parse(
            r#"
n_classes = 11
period = 10.0
"#
        )
        .is_err());
        // unknown key
        assert!(ScenarioConfig::parse(
            r#"
n_classes = 1
period = 10.0
typo_key = 1
[[class]]
arrival = { kind = "constant", rate = 1.0 }
service = { kind = "constant", rate = 2.0 }
"#
        )
        .is_err());
        // bad relaxation
        assert!(ScenarioConfig::parse(
            r#"
n_classes = 1
period = 10.0
[[class]]
arrival = { kind = "constant", rate = 1.0 }
service = { kind = "constant", rate = 2.0 }
[solver]
alpha = 1.5
"#
        )
        .is_err());
        // service profile with a baseline
        assert!(ScenarioConfig::parse(
            r#"
n_classes = 1
period = 10.0
t_pass = 5.0
[[class]]
arrival = { kind = "windowed_sinusoid", peak = 0.1 }
service = { kind = "windowed_sinusoid", base = 0.5, peak = 1.0 }
"#
        )
        .is_err());
        // too few integration steps
        assert!(ScenarioConfig::parse(
            r#"
n_classes = 1
period = 10.0
[[class]]
arrival = { kind = "constant", rate = 1.0 }
service = { kind = "constant", rate = 2.0 }
[solver]
steps_per_period = 50
"#
        )
        .is_err());
    }
}
