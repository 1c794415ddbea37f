//! Scenario files (TOML), their validation and defaults.
//!
//! Unknown keys are rejected at every level. Validation errors name the
//! offending field.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::{DistSpec, Distribution};
use crate::engine::{ArrivalStart, InitialCondition, Model};
use crate::fluid::{FluidInput, InitialData};
use crate::measure::DensityMeasure;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("`{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub n_servers: Option<usize>,
    #[serde(default)]
    pub n_list: Option<Vec<usize>>,
    pub arrivals: ArrivalConfig,
    pub service: DistSpec,
    #[serde(default)]
    pub patience: Option<DistSpec>,
    #[serde(default)]
    pub no_abandonment: bool,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub fluid: FluidConfig,
    #[serde(default)]
    pub stationary: StationaryConfig,
    #[serde(default)]
    pub representation: RepresentationConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Interarrival law and the rate rule. Exactly one of `lambda_bar`, `rate`
/// and `offset` is given:
///
/// * `lambda_bar`: `λ^{(N)} = round(λ̄N)` (exactly `λ̄N` with `round = false`);
/// * `rate`: the same absolute rate for every `N`;
/// * `offset`: `λ^{(N)} = N + offset`.
///
/// `law` fixes the shape only; it is rescaled to mean `1/λ^{(N)}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrivalConfig {
    #[serde(default = "exponential_unit")]
    pub law: DistSpec,
    #[serde(default)]
    pub lambda_bar: Option<f64>,
    #[serde(default)]
    pub rate: Option<f64>,
    #[serde(default)]
    pub offset: Option<f64>,
    #[serde(default = "yes")]
    pub round: bool,
}

fn exponential_unit() -> DistSpec {
    DistSpec::Exponential { rate: 1.0 }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialConfig {
    #[default]
    Empty,
    /// Empty system, arrival clock drawn from the stationary-excess law.
    Stationary,
    Explicit {
        #[serde(default)]
        service_ages: Vec<f64>,
        #[serde(default)]
        queue_waits: Vec<f64>,
        #[serde(default)]
        potential_waits: Vec<f64>,
        /// Time since the last arrival; a fresh clock when absent.
        #[serde(default)]
        alpha_e: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Subcommand-specific default when absent.
    #[serde(default)]
    pub horizon: Option<f64>,
    /// 20% of the horizon when absent.
    #[serde(default)]
    pub warmup: Option<f64>,
    #[serde(default = "one")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "yes")]
    pub audit: bool,
    #[serde(default = "default_max_events")]
    pub max_events: u64,
}

fn one() -> usize {
    1
}

fn default_dt() -> f64 {
    1e-3
}

fn default_max_events() -> u64 {
    500_000_000
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            horizon: None,
            warmup: None,
            replications: 1,
            seed: 0,
            dt: default_dt(),
            audit: true,
            max_events: default_max_events(),
        }
    }
}

/// Initial fluid measure.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasureSpec {
    #[default]
    Zero,
    Dirac {
        at: f64,
        weight: f64,
    },
    /// `[[position, weight], ...]`.
    Atoms {
        atoms: Vec<[f64; 2]>,
    },
    /// `scale · (1 − G)` for the law the measure is transported by.
    Equilibrium {
        scale: f64,
    },
    /// Density values on the nodes `0, dx, 2dx, ...`.
    Grid {
        dx: f64,
        density: Vec<f64>,
    },
    /// Density `a + b·x` on `[0, hi]`.
    Linear {
        hi: f64,
        a: f64,
        b: f64,
    },
}

/// Cells used to tabulate a `linear` density.
const LINEAR_CELLS: usize = 1000;

impl MeasureSpec {
    pub fn build(&self, law: Option<&Distribution>, field: &str) -> Result<InitialData, ConfigError> {
        let grid = |dx: f64, v: Vec<f64>| {
            DensityMeasure::grid(dx, v)
                .map(InitialData::Density)
                .map_err(|e| invalid(field, e.to_string()))
        };
        match self {
            MeasureSpec::Zero => Ok(InitialData::Zero),
            MeasureSpec::Dirac { at, weight } => Ok(InitialData::dirac(*at, *weight)),
            MeasureSpec::Atoms { atoms } => Ok(InitialData::Atoms(atoms.iter().map(|a| (a[0], a[1])).collect())),
            MeasureSpec::Equilibrium { scale } => {
                let law = law.ok_or_else(|| invalid(field, "equilibrium needs a lifetime law"))?;
                law.equilibrium_measure(*scale)
                    .map(InitialData::Density)
                    .map_err(|e| invalid(field, e.to_string()))
            }
            MeasureSpec::Grid { dx, density } => grid(*dx, density.clone()),
            MeasureSpec::Linear { hi, a, b } => {
                if !(hi.is_finite() && *hi > 0.0) {
                    return Err(invalid(field, format!("hi must be positive, got {hi}")));
                }
                let dx = hi / LINEAR_CELLS as f64;
                grid(dx, (0..=LINEAR_CELLS).map(|i| a + b * i as f64 * dx).collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluidConfig {
    /// Fluid arrival rate; derived from the rate rule when absent.
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub x0: f64,
    #[serde(default)]
    pub nu0: MeasureSpec,
    #[serde(default)]
    pub eta0: MeasureSpec,
    #[serde(default)]
    pub horizon: Option<f64>,
    /// Every `stride`-th node goes to the CSV.
    #[serde(default = "default_stride")]
    pub stride: usize,
}

fn default_stride() -> usize {
    10
}

impl Default for FluidConfig {
    fn default() -> Self {
        Self {
            lambda: None,
            x0: 0.0,
            nu0: MeasureSpec::Zero,
            eta0: MeasureSpec::Zero,
            horizon: None,
            stride: default_stride(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationaryConfig {
    #[serde(default = "default_batches")]
    pub batches: usize,
    #[serde(default = "default_c_grid")]
    pub c_grid: Vec<f64>,
    #[serde(default = "default_snapshot")]
    pub snapshot_dt: f64,
    #[serde(default)]
    pub consistency_c: Option<f64>,
}

fn default_batches() -> usize {
    20
}

fn default_c_grid() -> Vec<f64> {
    vec![0.0, 0.5, 1.0, 2.0, 5.0]
}

fn default_snapshot() -> f64 {
    1.0
}

impl Default for StationaryConfig {
    fn default() -> Self {
        Self {
            batches: default_batches(),
            c_grid: default_c_grid(),
            snapshot_dt: default_snapshot(),
            consistency_c: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepresentationConfig {
    #[serde(default = "default_times")]
    pub times: Vec<f64>,
    #[serde(default = "default_levels")]
    pub levels: Vec<f64>,
}

fn default_times() -> Vec<f64> {
    vec![1.0, 2.0, 5.0]
}

fn default_levels() -> Vec<f64> {
    vec![0.5, 3.0]
}

impl Default for RepresentationConfig {
    fn default() -> Self {
        Self {
            times: default_times(),
            levels: default_levels(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: String,
    /// Per-event trajectory CSV from `simulate` (first replication).
    #[serde(default = "yes")]
    pub trajectory: bool,
}

fn default_dir() -> String {
    "out".into()
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            trajectory: true,
        }
    }
}

pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn check_positive(field: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(field, format!("must be positive and finite, got {v}")))
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        match (&self.patience, self.no_abandonment) {
            (Some(_), true) => return Err(invalid("patience", "given together with no_abandonment = true")),
            (None, false) => return Err(invalid("patience", "missing; set no_abandonment = true to disable abandonment")),
            _ => {}
        }
        let a = &self.arrivals;
        let rules = [a.lambda_bar.is_some(), a.rate.is_some(), a.offset.is_some()];
        if rules.iter().filter(|&&r| r).count() != 1 {
            return Err(invalid("arrivals", "exactly one of lambda_bar, rate, offset is required"));
        }
        if let Some(l) = a.lambda_bar {
            check_positive("arrivals.lambda_bar", l)?;
        }
        if let Some(r) = a.rate {
            check_positive("arrivals.rate", r)?;
        }
        if let Some(list) = &self.n_list {
            if list.is_empty() || list.contains(&0) {
                return Err(invalid("n_list", "must be nonempty with positive entries"));
            }
        }
        if self.n_servers == Some(0) {
            return Err(invalid("n_servers", "must be positive"));
        }
        check_positive("run.dt", self.run.dt)?;
        if let Some(h) = self.run.horizon {
            check_positive("run.horizon", h)?;
        }
        if let (Some(w), Some(h)) = (self.run.warmup, self.run.horizon) {
            if !(0.0..h).contains(&w) {
                return Err(invalid("run.warmup", format!("must lie in [0, horizon = {h}), got {w}")));
            }
        }
        if self.run.replications == 0 {
            return Err(invalid("run.replications", "must be at least 1"));
        }
        if self.stationary.batches < 2 {
            return Err(invalid("stationary.batches", "must be at least 2"));
        }
        check_positive("stationary.snapshot_dt", self.stationary.snapshot_dt)?;
        if self.fluid.stride == 0 {
            return Err(invalid("fluid.stride", "must be at least 1"));
        }
        self.service.build().map_err(|e| invalid("service", e.to_string()))?;
        if let Some(p) = &self.patience {
            p.build().map_err(|e| invalid("patience", e.to_string()))?;
        }
        a.law.build().map_err(|e| invalid("arrivals.law", e.to_string()))?;
        Ok(())
    }

    /// Canonical JSON form, defaults filled in.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        crate::hash_hex(self.canonical().as_bytes())
    }

    /// `n_servers`, else the first entry of `n_list`.
    pub fn primary_n(&self) -> Result<usize, ConfigError> {
        self.n_servers
            .or_else(|| self.n_list.as_ref().and_then(|l| l.first().copied()))
            .ok_or_else(|| invalid("n_servers", "missing (give n_servers or n_list)"))
    }

    pub fn n_values(&self) -> Vec<usize> {
        self.n_list.clone().or_else(|| self.n_servers.map(|n| vec![n])).unwrap_or_default()
    }

    /// `λ^{(N)}`.
    pub fn arrival_rate(&self, n: usize) -> Result<f64, ConfigError> {
        let a = &self.arrivals;
        let rate = if let Some(l) = a.lambda_bar {
            let r = l * n as f64;
            if a.round {
                r.round()
            } else {
                r
            }
        } else if let Some(r) = a.rate {
            r
        } else {
            n as f64 + a.offset.unwrap_or(0.0)
        };
        if rate.is_finite() && rate > 0.0 {
            Ok(rate)
        } else {
            Err(invalid("arrivals", format!("rate for N = {n} is {rate}, must be positive")))
        }
    }

    /// Limiting scaled rate used by the fluid and invariant computations.
    pub fn fluid_lambda(&self) -> Result<f64, ConfigError> {
        if let Some(l) = self.fluid.lambda {
            return Ok(l);
        }
        let a = &self.arrivals;
        if let Some(l) = a.lambda_bar {
            Ok(l)
        } else if a.offset.is_some() {
            Ok(1.0)
        } else {
            Ok(self.arrival_rate(self.primary_n()?)? / self.primary_n()? as f64)
        }
    }

    pub fn service_law(&self) -> Result<Distribution, ConfigError> {
        self.service.build().map_err(|e| invalid("service", e.to_string()))
    }

    pub fn patience_law(&self) -> Result<Option<Distribution>, ConfigError> {
        self.patience
            .as_ref()
            .map(|p| p.build().map_err(|e| invalid("patience", e.to_string())))
            .transpose()
    }

    pub fn model(&self, n: usize) -> Result<Model, ConfigError> {
        let rate = self.arrival_rate(n)?;
        let law = self.arrivals.law.build().map_err(|e| invalid("arrivals.law", e.to_string()))?;
        Ok(Model {
            n_servers: n,
            interarrival: law.with_mean(1.0 / rate),
            service: self.service_law()?,
            patience: self.patience_law()?,
        })
    }

    pub fn initial_condition(&self) -> InitialCondition {
        match &self.initial {
            InitialConfig::Empty => InitialCondition::empty(),
            InitialConfig::Stationary => InitialCondition::stationary_empty(),
            InitialConfig::Explicit {
                service_ages,
                queue_waits,
                potential_waits,
                alpha_e,
            } => InitialCondition {
                service_ages: service_ages.clone(),
                queue_waits: queue_waits.clone(),
                potential_waits: potential_waits.clone(),
                arrivals: alpha_e.map_or(ArrivalStart::Fresh, ArrivalStart::Aged),
            },
        }
    }

    pub fn fluid_input(&self) -> Result<FluidInput, ConfigError> {
        let service = self.service_law()?;
        let patience = self.patience_law()?;
        Ok(FluidInput {
            lambda: self.fluid_lambda()?,
            x0: self.fluid.x0,
            nu0: self.fluid.nu0.build(Some(&service), "fluid.nu0")?,
            eta0: self.fluid.eta0.build(patience.as_ref(), "fluid.eta0")?,
            service,
            patience,
        })
    }

    /// `run.horizon`, else `default`.
    pub fn horizon_or(&self, default: f64) -> f64 {
        self.run.horizon.unwrap_or(default)
    }

    pub fn warmup_for(&self, horizon: f64) -> f64 {
        self.run.warmup.unwrap_or(0.2 * horizon)
    }
}
