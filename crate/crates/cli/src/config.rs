use std::fs;
use std::path::Path;

use chrono::NaiveDate;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use renewal_mcmc_core::deconvolution::DeconvolutionConfig;
use renewal_mcmc_core::distributions::{
    weekday_multiplicative_delay, weekday_shift_delay, DelayKernel, DelayModel, InfectivityProfile, TimeVaryingDelay,
    WeekdayWeights,
};
use renewal_mcmc_core::evaluation::PROBS;
use renewal_mcmc_core::mcmc::{check_probs, McmcConfig, DEFAULT_SIGMA, DEFAULT_TAU};
use renewal_mcmc_core::model::DEFAULT_DIVERGENCE_CAP;
use renewal_mcmc_core::preprocess::SmoothingConfig;

use crate::error::{CliError, CliResult};
use crate::io::origin_weekday;

/// Reads a JSON config; missing fields take their defaults and unknown fields
/// are rejected. Errors carry the JSON pointer of the offending value.
pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::io(format!("cannot read {}", path.display()), e))?;
    parse(&text).map_err(|e| match e {
        CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse<T: DeserializeOwned>(text: &str) -> CliResult<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let pointer = json_pointer(e.path());
        CliError::Config(format!("at `{pointer}`: {}", e.inner()))
    })
}

fn json_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}

pub fn to_value<T: Serialize>(config: &T) -> serde_json::Value {
    serde_json::to_value(config).expect("configs serialize to JSON")
}

/// Infectivity profile, delay kernel and optional weekday structure.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// `w_1..w_{K_w}`; the reference profile when absent.
    pub profile: Option<Vec<f64>>,
    /// `m_1..m_{K_m}`, summing to at most 1; the reference kernel when absent.
    pub delay: Option<Vec<f64>>,
    /// Weekday modification of the delay, indexed Monday = 0.
    pub weekday: Option<WeekdayWeights>,
}

/// A delay model resolved against the calendar.
#[derive(Debug, Clone)]
pub enum Delay {
    Fixed(DelayKernel),
    Weekday(TimeVaryingDelay),
}

impl Delay {
    pub fn model(&self) -> &dyn DelayModel {
        match self {
            Delay::Fixed(k) => k,
            Delay::Weekday(d) => d,
        }
    }
}

impl ModelConfig {
    pub fn profile(&self) -> CliResult<InfectivityProfile> {
        match &self.profile {
            Some(w) => InfectivityProfile::new(w.clone()).map_err(|e| CliError::at("/model", e)),
            None => Ok(InfectivityProfile::reference()),
        }
    }

    pub fn kernel(&self) -> CliResult<DelayKernel> {
        match &self.delay {
            Some(m) => DelayKernel::new(m.clone()).map_err(|e| CliError::at("/model", e)),
            None => Ok(DelayKernel::reference()),
        }
    }

    /// The delay for a window whose day 1 falls on `first`.
    pub fn delay_for(&self, first: NaiveDate) -> CliResult<Delay> {
        let kernel = self.kernel()?;
        let origin = origin_weekday(first);
        match &self.weekday {
            None => Ok(Delay::Fixed(kernel)),
            Some(WeekdayWeights::Multiplicative(w)) => weekday_multiplicative_delay(&kernel, *w, origin)
                .map(Delay::Weekday)
                .map_err(|e| CliError::at("/model/weekday/multiplicative", e)),
            Some(WeekdayWeights::Shift(v)) => weekday_shift_delay(&kernel, *v, origin)
                .map(Delay::Weekday)
                .map_err(|e| CliError::at("/model/weekday/shift", e)),
        }
    }

    /// The same model with the reference profile and kernel written out.
    pub fn resolved(&self) -> CliResult<ModelConfig> {
        Ok(ModelConfig {
            profile: Some(self.profile()?.weights().to_vec()),
            delay: Some(self.kernel()?.probs().to_vec()),
            weekday: self.weekday.clone(),
        })
    }

    pub fn validate(&self) -> CliResult<()> {
        self.profile()?;
        // Any weekday origin exercises the same checks.
        self.delay_for(NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid date"))?;
        Ok(())
    }
}

/// Configuration of `fit`, also used per window by `sequential`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub model: ModelConfig,
    pub sigma: f64,
    pub tau: f64,
    /// Fixed prior mean of each initial day's infections; derived from the data when absent.
    pub lambda0: Option<f64>,
    /// Treat the first seven rows as the pre-window used only for the prior mean of the initial days.
    pub pre_window: bool,
    pub mcmc: McmcConfig,
    pub quantiles: Vec<f64>,
    /// Smoothing of the detections before fitting; raw counts when null.
    pub smoothing: Option<SmoothingConfig>,
    /// Days predicted past the window by `fit`; 0 skips prediction.
    pub predict_horizon: usize,
    pub write_samples: bool,
}

pub const PRE_WINDOW_DAYS: usize = 7;

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            model: ModelConfig::default(),
            sigma: DEFAULT_SIGMA,
            tau: DEFAULT_TAU,
            lambda0: None,
            pre_window: false,
            mcmc: McmcConfig::default(),
            quantiles: PROBS.to_vec(),
            smoothing: Some(SmoothingConfig::periodic()),
            predict_horizon: 7,
            write_samples: false,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> CliResult<()> {
        self.model.validate()?;
        positive("/sigma", self.sigma)?;
        positive("/tau", self.tau)?;
        if let Some(l) = self.lambda0 {
            positive("/lambda0", l)?;
        }
        self.mcmc.validate().map_err(|e| CliError::at("/mcmc", e))?;
        check_probs(&self.quantiles).map_err(|e| match e {
            renewal_mcmc_core::Error::Parameter { reason, .. } => CliError::Config(format!("/quantiles: {reason}")),
            other => CliError::at("/quantiles", other),
        })?;
        if let Some(s) = &self.smoothing {
            validate_smoothing("/smoothing", s)?;
        }
        Ok(())
    }

    pub fn resolved(&self) -> CliResult<FitConfig> {
        Ok(FitConfig {
            model: self.model.resolved()?,
            ..self.clone()
        })
    }
}

pub fn validate_smoothing(pointer: &str, s: &SmoothingConfig) -> CliResult<()> {
    if s.trend_window < 3 || s.trend_window % 2 == 0 {
        return Err(CliError::Config(format!(
            "{pointer}/trend_window: must be an odd number >= 3, got {}",
            s.trend_window
        )));
    }
    if let Some(c) = s.zero_offset {
        if !(c > 0.0) || !c.is_finite() {
            return Err(CliError::Config(format!("{pointer}/zero_offset: must be > 0, got {c}")));
        }
    }
    Ok(())
}

fn positive(pointer: &str, x: f64) -> CliResult<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(CliError::Config(format!(
            "{pointer}: must be a finite number > 0, got {x}"
        )))
    }
}

/// Configuration of `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub model: ModelConfig,
    /// Observed days.
    pub t: usize,
    /// Date of day 1.
    pub start_date: NaiveDate,
    /// `R` on the latent days `1-K_m..=T-1`; the default truth path when absent.
    pub r: Option<Vec<f64>>,
    /// Poisson mean of each initial day's infections.
    pub lambda0: f64,
    pub divergence_cap: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            model: ModelConfig::default(),
            t: 63,
            start_date: NaiveDate::from_ymd_opt(2020, 3, 2).expect("valid date"),
            r: None,
            lambda0: 100.0,
            divergence_cap: DEFAULT_DIVERGENCE_CAP,
        }
    }
}

impl SimulateConfig {
    pub fn validate(&self) -> CliResult<()> {
        self.model.validate()?;
        if self.t == 0 {
            return Err(CliError::Config("/t: must be at least 1".into()));
        }
        positive("/lambda0", self.lambda0)?;
        positive("/divergence_cap", self.divergence_cap)?;
        if let Some(r) = &self.r {
            if let Some(i) = r.iter().position(|x| !(*x >= 0.0) || !x.is_finite()) {
                return Err(CliError::Config(format!("/r/{i}: must be finite and >= 0")));
            }
        }
        Ok(())
    }

    pub fn resolved(&self) -> CliResult<SimulateConfig> {
        Ok(SimulateConfig {
            model: self.model.resolved()?,
            ..self.clone()
        })
    }
}

/// Configuration of `deconvolve`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeconvolveConfig {
    pub model: ModelConfig,
    /// Smoothing applied before deconvolution; raw counts when null.
    pub smoothing: Option<SmoothingConfig>,
    /// EM settings; chi-squared stopping at the series length when absent.
    pub em: Option<DeconvolutionConfig>,
}

impl DeconvolveConfig {
    pub fn validate(&self) -> CliResult<()> {
        self.model.validate()?;
        if let Some(s) = &self.smoothing {
            validate_smoothing("/smoothing", s)?;
        }
        if let Some(em) = &self.em {
            em.validate().map_err(|e| CliError::at("/em", e))?;
        }
        Ok(())
    }
}
