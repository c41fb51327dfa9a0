//! TOML experiment configuration.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use num_rational::Ratio;
use serde::Deserialize;
use sha2::{Digest, Sha256};
use thiserror::Error;
use threescale_core::symbols::ScalingRegime;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Reduce,
    Converge,
    Blowup,
    Normwatch,
}

impl ExperimentKind {
    pub fn dir_name(self) -> &'static str {
        match self {
            ExperimentKind::Reduce => "reduce",
            ExperimentKind::Converge => "converge",
            ExperimentKind::Blowup => "blowup",
            ExperimentKind::Normwatch => "normwatch",
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemConfig {
    /// `(u, v)_t + ε^{-2} diag(1, 0)(u, v)_x + ε^{-1}[[0,1],[1,0]](u, v)_y = 0`.
    Directional,
    /// Three-component rotation with `A0 = (1 + εw) I`, optionally transported by `A_1 = w I`.
    Rotation {
        #[serde(default)]
        transport: bool,
    },
    /// Linear system from a symbol file with constant `A0` and `A_j`.
    Symbols {
        file: PathBuf,
        a0: Option<Vec<Vec<f64>>>,
        a: Option<Vec<Vec<Vec<f64>>>>,
    },
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub d: usize,
    pub n: usize,
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegimeConfig {
    RateMatch { s: u32, c: f64 },
    RateBetween { s: u32 },
}

impl From<RegimeConfig> for ScalingRegime {
    fn from(r: RegimeConfig) -> Self {
        match r {
            RegimeConfig::RateMatch { s, c } => ScalingRegime::RateMatch { s, c },
            RegimeConfig::RateBetween { s } => ScalingRegime::RateBetween { s },
        }
    }
}

/// Exponent given as `"7/4"`, `"2"` or a TOML number.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum Exponent {
    Text(String),
    Int(i64),
    Float(f64),
}

impl Exponent {
    pub fn ratio(&self) -> Result<Ratio<i64>, ConfigError> {
        match self {
            Exponent::Text(s) => Ratio::from_str(s.trim()).map_err(|e| ConfigError::Invalid(format!("exponent {s:?}: {e}"))),
            Exponent::Int(i) => Ok(Ratio::from_integer(*i)),
            Exponent::Float(f) => Ratio::approximate_float(*f).ok_or_else(|| ConfigError::Invalid(format!("exponent {f}"))),
        }
    }
}

/// `δ = c ε^q`.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeltaRule {
    #[serde(default = "one")]
    pub c: f64,
    pub q: Exponent,
}

fn one() -> f64 {
    1.0
}

impl DeltaRule {
    pub fn q(&self) -> Result<Ratio<i64>, ConfigError> {
        let q = self.q.ratio()?;
        if q < Ratio::from_integer(1) || !(self.c > 0.0 && self.c.is_finite()) {
            return Err(ConfigError::Invalid(format!("δ rule needs c > 0 and q >= 1, got c = {}, q = {q}", self.c)));
        }
        Ok(q)
    }

    pub fn delta(&self, eps: f64) -> Result<f64, ConfigError> {
        let q = self.q()?;
        Ok(self.c * eps.powf(*q.numer() as f64 / *q.denom() as f64))
    }

    /// Check the rule against a scaling regime, exactly in rational arithmetic.
    pub fn check_regime(&self, regime: RegimeConfig) -> Result<(), ConfigError> {
        let q = self.q()?;
        let rate = |s: u32| Ratio::new(s as i64 + 1, s as i64);
        match regime {
            RegimeConfig::RateMatch { s, c } => {
                if s == 0 {
                    return Err(ConfigError::Invalid("rate_match needs s >= 1".into()));
                }
                if q != rate(s) || (self.c - c).abs() > 1e-12 * c.abs() {
                    return Err(ConfigError::Invalid(format!(
                        "δ = {}·ε^{q} does not match rate_match(s = {s}, C = {c}), which needs δ = C·ε^{}",
                        self.c,
                        rate(s)
                    )));
                }
            }
            RegimeConfig::RateBetween { s } => {
                if s == 0 {
                    return Err(ConfigError::Invalid("rate_between needs s >= 1".into()));
                }
                if !(q > rate(s + 1) && q < rate(s)) {
                    return Err(ConfigError::Invalid(format!(
                        "δ = c·ε^{q} is not strictly between ε^{} and ε^{} as rate_between(s = {s}) requires",
                        rate(s),
                        rate(s + 1)
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum TermShape {
    /// `Π_j cos(k_j x_j)`.
    #[default]
    CosProduct,
    /// `cos(k·x)`.
    Cos,
    /// `sin(k·x)`.
    Sin,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Term {
    pub amp: f64,
    pub k: Vec<i64>,
    #[serde(default)]
    pub shape: TermShape,
}

impl Term {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self.shape {
            TermShape::CosProduct => self.amp * self.k.iter().zip(x).map(|(&k, &xj)| (k as f64 * xj).cos()).product::<f64>(),
            TermShape::Cos => self.amp * self.k.iter().zip(x).map(|(&k, &xj)| k as f64 * xj).sum::<f64>().cos(),
            TermShape::Sin => self.amp * self.k.iter().zip(x).map(|(&k, &xj)| k as f64 * xj).sum::<f64>().sin(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    #[default]
    One,
    Delta,
    Eps,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentConfig {
    #[serde(default)]
    pub scale: Scale,
    #[serde(default)]
    pub constant: f64,
    #[serde(default)]
    pub terms: Vec<Term>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialConfig {
    /// Seed `(-f_y, f_x)`, completed to well-prepared data, plus `δ` times an optional correction.
    Curl {
        terms: Vec<Term>,
        #[serde(default = "default_order")]
        order: usize,
        #[serde(default)]
        correction: Vec<ComponentConfig>,
    },
    /// Explicit components; optionally completed to well-prepared data.
    Components {
        components: Vec<ComponentConfig>,
        #[serde(default)]
        wellprepared: bool,
        #[serde(default = "default_order")]
        order: usize,
    },
}

fn default_order() -> usize {
    1
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub tau_rank: f64,
    /// Required `E(ε_last) / E(ε_first)` in convergence runs.
    pub contraction: f64,
    /// Simulation versus closed-form dispersion, relative to the largest datum coefficient.
    pub dispersion_oracle: f64,
    /// Limit run versus the limit closed form.
    pub limit_oracle: f64,
    /// Allowed growth factor of the weighted norm.
    pub norm_factor: f64,
    pub slope: f64,
    /// Allowed max/min ratio for "bounded" norm sequences.
    pub bounded_ratio: f64,
    /// Required terminal-error reduction when halving dt.
    pub dt_halving: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            tau_rank: 1e-10,
            contraction: 0.3,
            dispersion_oracle: 1e-8,
            limit_oracle: 1e-10,
            norm_factor: 2.0,
            slope: 0.1,
            bounded_ratio: 2.0,
            dt_halving: 14.0,
        }
    }
}

impl Tolerances {
    pub fn describe(&self) -> String {
        format!(
            "tau_rank={:e} contraction={} dispersion_oracle={:e} limit_oracle={:e} norm_factor={} slope={} bounded_ratio={} dt_halving={}",
            self.tau_rank,
            self.contraction,
            self.dispersion_oracle,
            self.limit_oracle,
            self.norm_factor,
            self.slope,
            self.bounded_ratio,
            self.dt_halving
        )
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomSuiteConfig {
    pub count: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReduceConfig {
    #[serde(default)]
    pub modes: Vec<Vec<i64>>,
    #[serde(default = "default_mu")]
    pub mu: Vec<f64>,
    pub random: Option<RandomSuiteConfig>,
}

fn default_mu() -> Vec<f64> {
    vec![1e-2, 1e-3, 1e-4]
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Preparation {
    /// `u0 = δ, v0 = 0`.
    #[default]
    Well,
    /// `u0 = 1, v0 = 0`.
    Ill,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlowupConfig {
    pub q: Vec<Exponent>,
    #[serde(default = "default_dimension")]
    pub dimension: usize,
    #[serde(default)]
    pub preparation: Preparation,
    #[serde(default = "default_time")]
    pub t: f64,
    #[serde(default = "default_quadrature")]
    pub quadrature_points: usize,
}

fn default_dimension() -> usize {
    1
}

fn default_time() -> f64 {
    1.0
}

fn default_quadrature() -> usize {
    512
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    /// `M` measured at t = 0 of each run.
    #[default]
    PerRun,
    /// `M` of the first run reused for all.
    FirstRun,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormwatchConfig {
    #[serde(default = "default_s0")]
    pub s0: usize,
    #[serde(default)]
    pub reference: Reference,
    /// Also measure the RK4 terminal-error reduction under dt halving.
    #[serde(default)]
    pub dt_halving: bool,
    /// Base step as a multiple of δ for the halving study.
    #[serde(default = "default_dt_factor")]
    pub dt_factor: f64,
    #[serde(default)]
    pub full_weights: bool,
}

fn default_s0() -> usize {
    1
}

fn default_dt_factor() -> f64 {
    0.2
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub name: Option<String>,
    pub system: Option<SystemConfig>,
    pub grid: Option<GridConfig>,
    pub regime: Option<RegimeConfig>,
    #[serde(default)]
    pub eps: Vec<f64>,
    pub delta: Option<DeltaRule>,
    pub t_end: Option<f64>,
    pub output_interval: Option<f64>,
    pub initial: Option<InitialConfig>,
    #[serde(default)]
    pub tolerances: Tolerances,
    pub reduce: Option<ReduceConfig>,
    pub blowup: Option<BlowupConfig>,
    pub normwatch: Option<NormwatchConfig>,
    /// Use dealiasing in RK4 runs.
    #[serde(default = "yes")]
    pub dealias: bool,
}

fn yes() -> bool {
    true
}

/// A parsed configuration together with its provenance.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
    pub sha256: String,
}

impl LoadedConfig {
    pub fn from_str(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse { path: base_dir.to_path_buf(), message: e.to_string() })?;
        let sha256 = hex::encode(Sha256::digest(text.as_bytes()));
        let loaded = Self { config, base_dir: base_dir.to_path_buf(), sha256 };
        loaded.validate()?;
        Ok(loaded)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_str(&text, &base).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse { path: path.to_path_buf(), message },
            other => other,
        })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let c = &self.config;
        if c.eps.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
            return Err(ConfigError::Invalid("ε values must be positive".into()));
        }
        if c.eps.windows(2).any(|w| w[1] >= w[0]) {
            return Err(ConfigError::Invalid("ε schedule must be strictly decreasing".into()));
        }
        if let (Some(rule), Some(regime)) = (&c.delta, c.regime) {
            rule.check_regime(regime)?;
        }
        if let Some(g) = c.grid {
            if !(1..=3).contains(&g.d) || g.n < 8 || g.n % 2 == 1 {
                return Err(ConfigError::Invalid(format!("grid d = {}, n = {} not supported", g.d, g.n)));
            }
        }
        let need = |what: bool, msg: &str| if what { Ok(()) } else { Err(ConfigError::Invalid(msg.to_string())) };
        match c.experiment {
            ExperimentKind::Reduce => {
                need(c.reduce.is_some(), "reduce experiments need a [reduce] table")?;
                let r = c.reduce.as_ref().unwrap();
                need(!r.modes.is_empty() || r.random.is_some(), "[reduce] needs modes or a random suite")?;
                if !r.modes.is_empty() {
                    need(c.system.is_some() && c.regime.is_some(), "reduce over modes needs [system] and [regime]")?;
                }
                need(r.mu.iter().all(|&m| m > 0.0 && m < 1.0), "μ values must lie in (0, 1)")?;
            }
            ExperimentKind::Converge => {
                need(c.system.is_some() && c.grid.is_some() && c.regime.is_some(), "converge needs [system], [grid], [regime]")?;
                need(c.delta.is_some() && !c.eps.is_empty(), "converge needs an ε schedule and [delta]")?;
                need(c.initial.is_some() && c.t_end.is_some(), "converge needs [initial] and t_end")?;
            }
            ExperimentKind::Blowup => {
                need(c.blowup.is_some() && !c.eps.is_empty(), "blowup needs [blowup] and an ε schedule")?;
            }
            ExperimentKind::Normwatch => {
                need(c.system.is_some() && c.grid.is_some(), "normwatch needs [system] and [grid]")?;
                need(c.delta.is_some() && !c.eps.is_empty(), "normwatch needs an ε schedule and [delta]")?;
                need(c.initial.is_some() && c.t_end.is_some(), "normwatch needs [initial] and t_end")?;
            }
        }
        if let Some(t) = c.t_end {
            need(t > 0.0, "t_end must be positive")?;
        }
        Ok(())
    }

    pub fn name(&self) -> String {
        self.config.name.clone().unwrap_or_else(|| self.config.experiment.dir_name().to_string())
    }
}
