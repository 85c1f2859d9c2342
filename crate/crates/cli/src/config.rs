//! Experiment configuration (TOML). Every default is filled in on load and
//! echoed back in the summary, so a report fully describes its own run.

use std::fs;
use std::path::{Path, PathBuf};

use blapn::systems::{
    example_lowpass, ClosedLoopConfig, HammersteinSimulator, HammersteinSystem, LtiCoefficients, NoiseLevels, Plant,
    PolynomialCoefficients, PolynomialNonlinearity, RationalLTI, WarmupPolicy,
};
use blapn::signals::MultisineSpec;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopMode {
    #[default]
    Open,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExcitationConfig {
    pub samples_per_period: usize,
    #[serde(default = "one")]
    pub sampling_frequency_hz: f64,
    /// Standard deviation of the multisine.
    #[serde(default = "one")]
    pub rms: f64,
    /// Excited bins; all of `1..N/2` when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bins: Option<Vec<usize>>,
}

/// Blocks of the system: `S` and `f` form the Hammerstein plant, `G_act`
/// and `M` the actuator and feedback paths of the loop.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemDescription {
    #[serde(rename = "S", default, skip_serializing_if = "Option::is_none")]
    pub lti: Option<LtiCoefficients>,
    #[serde(rename = "f", default, skip_serializing_if = "Option::is_none")]
    pub nonlinearity: Option<PolynomialCoefficients>,
    #[serde(rename = "G_act", default, skip_serializing_if = "Option::is_none")]
    pub actuator: Option<LtiCoefficients>,
    #[serde(rename = "M", default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<LtiCoefficients>,
}

/// A system given inline or as a path to a system description file,
/// relative to the config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SystemSource {
    Path(PathBuf),
    Inline(SystemDescription),
}

impl Default for SystemSource {
    fn default() -> Self {
        SystemSource::Inline(SystemDescription::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default)]
    pub input_variance: f64,
    #[serde(default)]
    pub process_variance: f64,
    #[serde(default)]
    pub output_variance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WarmupConfig {
    #[serde(default = "default_min_periods")]
    pub min_periods: usize,
    #[serde(default = "default_max_periods")]
    pub max_periods: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

impl Default for WarmupConfig {
    fn default() -> Self {
        let p = WarmupPolicy::default();
        WarmupConfig {
            min_periods: p.min_periods,
            max_periods: p.max_periods,
            tolerance: p.tolerance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecompositionConfig {
    #[serde(default = "yes")]
    pub enabled: bool,
    /// `K_x`, the number of process-noise re-runs.
    #[serde(default = "default_process_realizations")]
    pub process_realizations: usize,
    /// Which input realization is decomposed.
    #[serde(default)]
    pub realization: usize,
}

impl Default for DecompositionConfig {
    fn default() -> Self {
        DecompositionConfig {
            enabled: true,
            process_realizations: default_process_realizations(),
            realization: 0,
        }
    }
}

/// Comparison of the estimate against the analytic BLA.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    #[serde(default = "yes")]
    pub analytic_bla: bool,
    /// Half-width of the band, in units of the estimated total standard
    /// deviation of the BLA.
    #[serde(default = "default_band_sigma")]
    pub band_sigma: f64,
    /// Fraction of excited bins that must lie inside the band.
    #[serde(default = "default_min_fraction")]
    pub min_fraction: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            analytic_bla: true,
            band_sigma: default_band_sigma(),
            min_fraction: default_min_fraction(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mode: LoopMode,
    /// `M`.
    pub realizations: usize,
    /// `P`.
    pub periods: usize,
    pub excitation: ExcitationConfig,
    #[serde(default)]
    pub system: SystemSource,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub warmup: WarmupConfig,
    #[serde(default)]
    pub decomposition: DecompositionConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

fn default_min_periods() -> usize {
    WarmupPolicy::default().min_periods
}

fn default_max_periods() -> usize {
    WarmupPolicy::default().max_periods
}

fn default_tolerance() -> f64 {
    WarmupPolicy::default().tolerance
}

fn default_process_realizations() -> usize {
    1000
}

fn default_band_sigma() -> f64 {
    3.0
}

fn default_min_fraction() -> f64 {
    0.95
}

/// The fully resolved system.
#[derive(Debug, Clone)]
pub struct ResolvedSystem {
    pub hammerstein: HammersteinSystem,
    pub actuator: RationalLTI,
    pub feedback: RationalLTI,
}

impl ResolvedSystem {
    pub fn describe(&self) -> SystemDescription {
        SystemDescription {
            lti: Some(self.hammerstein.lti.clone().into()),
            nonlinearity: Some(self.hammerstein.nonlinearity.clone().into()),
            actuator: Some(self.actuator.clone().into()),
            feedback: Some(self.feedback.clone().into()),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> CliResult<Self> {
        let mut config: ExperimentConfig =
            toml::from_str(text).map_err(|e| CliError::Config(format!("config: {}", e.message())))?;
        if let SystemSource::Path(path) = &config.system {
            let path = base_dir.join(path);
            let text = fs::read_to_string(&path)
                .map_err(|e| CliError::Config(format!("system file {}: {e}", path.display())))?;
            let description = parse_system(&text)?;
            config.system = SystemSource::Inline(description);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// The reference Hammerstein experiment: `N = 4096`, `M = 10`, `P = 2`,
    /// `sigma_u = 1`, `sigma_nx = 0.1`, `sigma_ny = 0.03`.
    pub fn demo_hammerstein() -> Self {
        ExperimentConfig {
            seed: 1,
            mode: LoopMode::Open,
            realizations: 10,
            periods: 2,
            excitation: ExcitationConfig {
                samples_per_period: 4096,
                sampling_frequency_hz: 1.0,
                rms: 1.0,
                bins: None,
            },
            system: SystemSource::default(),
            noise: NoiseConfig {
                input_variance: 0.0,
                process_variance: 0.01,
                output_variance: 0.0009,
            },
            warmup: WarmupConfig::default(),
            decomposition: DecompositionConfig::default(),
            oracle: OracleConfig::default(),
            output_dir: None,
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.realizations < 2 || self.periods < 2 {
            return Err(CliError::Config(format!(
                "the robust estimator needs realizations >= 2 and periods >= 2, got {} and {}",
                self.realizations, self.periods
            )));
        }
        self.spec()?;
        self.noise_levels().validate().map_err(|e| CliError::Config(e.to_string()))?;
        let w = &self.warmup;
        if w.min_periods == 0 || w.max_periods < w.min_periods.max(2) || !(w.tolerance >= 0.0) {
            return Err(CliError::Config("warmup needs 1 <= min_periods <= max_periods, max_periods >= 2, tolerance >= 0".into()));
        }
        if self.decomposition.enabled {
            if self.decomposition.process_realizations < 100 {
                return Err(CliError::Config("decomposition.process_realizations must be >= 100".into()));
            }
            if self.decomposition.realization >= self.realizations {
                return Err(CliError::Config("decomposition.realization must be < realizations".into()));
            }
        }
        let o = &self.oracle;
        if !(o.band_sigma > 0.0 && (0.0..=1.0).contains(&o.min_fraction)) {
            return Err(CliError::Config("oracle needs band_sigma > 0 and min_fraction in [0, 1]".into()));
        }
        if self.mode == LoopMode::Open && self.noise.input_variance > 0.0 {
            return Err(CliError::Config("noise.input_variance applies to closed-loop mode only".into()));
        }
        if let SystemSource::Inline(d) = &self.system {
            if self.mode == LoopMode::Closed && d.feedback.is_none() {
                return Err(CliError::Config("closed-loop mode needs an M section".into()));
            }
        }
        Ok(())
    }

    pub fn spec(&self) -> CliResult<MultisineSpec> {
        let e = &self.excitation;
        let spec = match &e.bins {
            Some(bins) => MultisineSpec::flat_with_rms(e.samples_per_period, e.sampling_frequency_hz, bins.clone(), e.rms),
            None => MultisineSpec::full_band(e.samples_per_period, e.sampling_frequency_hz, e.rms),
        };
        spec.map_err(|err| CliError::Config(err.to_string()))
    }

    pub fn noise_levels(&self) -> NoiseLevels {
        NoiseLevels {
            input: self.noise.input_variance,
            process: self.noise.process_variance,
            output: self.noise.output_variance,
        }
    }

    pub fn warmup_policy(&self) -> WarmupPolicy {
        WarmupPolicy {
            min_periods: self.warmup.min_periods,
            max_periods: self.warmup.max_periods,
            tolerance: self.warmup.tolerance,
        }
    }

    /// Builds the blocks; unspecified blocks default to the example lowpass,
    /// `f(x) = x + 0.1 x^3`, a unit actuator and no feedback.
    pub fn resolve_system(&self) -> CliResult<ResolvedSystem> {
        let description = match &self.system {
            SystemSource::Inline(d) => d.clone(),
            SystemSource::Path(p) => {
                return Err(CliError::Config(format!("system file {} was not loaded", p.display())))
            }
        };
        let lti = match description.lti {
            Some(c) => RationalLTI::try_from(c)?,
            None => example_lowpass(),
        };
        let nonlinearity = match description.nonlinearity {
            Some(c) => PolynomialNonlinearity::try_from(c)?,
            None => PolynomialNonlinearity::cubic(0.1),
        };
        let actuator = match description.actuator {
            Some(c) => RationalLTI::try_from(c)?,
            None => RationalLTI::identity(),
        };
        let feedback = match description.feedback {
            Some(c) => RationalLTI::try_from(c)?,
            None => RationalLTI::gain(0.0),
        };
        Ok(ResolvedSystem {
            hammerstein: HammersteinSystem::new(lti, nonlinearity),
            actuator,
            feedback,
        })
    }

    pub fn simulator(&self, system: &ResolvedSystem) -> HammersteinSimulator {
        HammersteinSimulator {
            system: system.hammerstein.clone(),
            noise: self.noise_levels(),
            warmup: self.warmup_policy(),
        }
    }

    pub fn closed_loop(&self, system: &ResolvedSystem) -> CliResult<ClosedLoopConfig> {
        Ok(ClosedLoopConfig::new(
            Plant::Hammerstein(system.hammerstein.clone()),
            system.actuator.clone(),
            system.feedback.clone(),
            self.noise_levels(),
        )?)
    }

    /// The config with the system inlined and every default explicit.
    pub fn resolved(&self, system: &ResolvedSystem) -> ExperimentConfig {
        ExperimentConfig {
            system: SystemSource::Inline(system.describe()),
            output_dir: None,
            ..self.clone()
        }
    }
}

/// Parses a system description file: TOML with optional `[S]`, `[f]`,
/// `[G_act]` and `[M]` sections.
pub fn parse_system(text: &str) -> CliResult<SystemDescription> {
    toml::from_str(text).map_err(|e| CliError::Config(format!("system description: {}", e.message())))
}
