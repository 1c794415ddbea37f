//! Lifetime distributions: interarrival, service and patience laws.
//!
//! Every law lives on `[0, H)` with `cdf(0) = 0` and an absolutely continuous
//! part only; laws with atoms are rejected when a [`DistSpec`] is built.
//! Besides the usual cdf/density/hazard triple, each law knows its
//! integrated survival `x ↦ ∫₀ˣ (1 − G)`, which is what the equilibrium
//! measures and the fluid transport formulas are built from.

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measure::DensityMeasure;
use crate::numeric::{bisect_first, simpson};

/// Survival values below this are clamped before dividing in hazard
/// evaluations of tabulated laws.
pub const SURVIVAL_FLOOR: f64 = 1e-12;

/// x-tolerance of inverse-cdf bisections.
pub const QUANTILE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("invalid piecewise-linear cdf: {0}")]
    InvalidPiecewise(String),
    #[error("distributions with atoms are not supported ({0})")]
    Atom(String),
    #[error("x = {x} is at or beyond the support end {support_end}")]
    BeyondSupport { x: f64, support_end: f64 },
    #[error("distribution has infinite mean")]
    InfiniteMean,
}

fn positive(name: &'static str, v: f64) -> Result<f64, DistError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(DistError::InvalidParameter {
            name,
            reason: format!("must be finite and > 0, got {v}"),
        })
    }
}

/// Declarative description of a law, as found in scenario files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistSpec {
    Exponential {
        rate: f64,
    },
    Erlang {
        shape: u32,
        rate: f64,
    },
    Uniform {
        lo: f64,
        hi: f64,
    },
    /// Ordered `(x, cdf)` knots starting at `(0, 0)` and ending at cdf 1.
    PiecewiseLinear {
        knots: Vec<[f64; 2]>,
    },
    Shifted {
        offset: f64,
        inner: Box<DistSpec>,
    },
    Scaled {
        factor: f64,
        inner: Box<DistSpec>,
    },
    /// Accepted by the parser only so it can be rejected with a clear message.
    Deterministic {
        value: f64,
    },
}

impl DistSpec {
    pub fn build(&self) -> Result<Distribution, DistError> {
        make_distribution(self)
    }
}

/// Builds a [`Distribution`] from its declarative description.
pub fn make_distribution(spec: &DistSpec) -> Result<Distribution, DistError> {
    match spec {
        DistSpec::Exponential { rate } => Distribution::exponential(*rate),
        DistSpec::Erlang { shape, rate } => Distribution::erlang(*shape, *rate),
        DistSpec::Uniform { lo, hi } => Distribution::uniform(*lo, *hi),
        DistSpec::PiecewiseLinear { knots } => {
            let pts: Vec<(f64, f64)> = knots.iter().map(|k| (k[0], k[1])).collect();
            Distribution::piecewise_linear(&pts)
        }
        DistSpec::Shifted { offset, inner } => Distribution::shifted(*offset, inner.build()?),
        DistSpec::Scaled { factor, inner } => {
            let factor = positive("factor", *factor)?;
            Ok(inner.build()?.scaled(factor))
        }
        DistSpec::Deterministic { value } => Err(DistError::Atom(format!(
            "deterministic law at {value} has no density"
        ))),
    }
}

/// A piecewise-linear cdf on `[0, x_last]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseCdf {
    xs: Vec<f64>,
    cs: Vec<f64>,
    /// `∫₀^{x_i} (1 − G)` at every knot.
    is_at_knots: Vec<f64>,
}

impl PiecewiseCdf {
    fn new(knots: &[(f64, f64)]) -> Result<Self, DistError> {
        if knots.len() < 2 {
            return Err(DistError::InvalidPiecewise("need at least two knots".into()));
        }
        if knots[0] != (0.0, 0.0) {
            return Err(DistError::InvalidPiecewise(format!(
                "first knot must be (0, 0), got {:?}",
                knots[0]
            )));
        }
        for w in knots.windows(2) {
            let ((x0, c0), (x1, c1)) = (w[0], w[1]);
            if !(x1.is_finite() && x1 > x0) {
                return Err(DistError::InvalidPiecewise(format!(
                    "knot abscissae must be strictly increasing ({x0} then {x1})"
                )));
            }
            if !(c1 >= c0) || c1 > 1.0 {
                return Err(DistError::InvalidPiecewise(format!(
                    "cdf must be nondecreasing within [0, 1] ({c0} then {c1})"
                )));
            }
        }
        let last = knots[knots.len() - 1].1;
        if last != 1.0 {
            return Err(DistError::InvalidPiecewise(format!(
                "last knot must reach cdf 1, got {last}"
            )));
        }
        // drop knots after the first one reaching 1: the support ends there
        let end = knots.iter().position(|&(_, c)| c >= 1.0).unwrap();
        let knots = &knots[..=end];
        let xs: Vec<f64> = knots.iter().map(|k| k.0).collect();
        let cs: Vec<f64> = knots.iter().map(|k| k.1).collect();
        let mut is_at_knots = vec![0.0; xs.len()];
        for i in 1..xs.len() {
            let dx = xs[i] - xs[i - 1];
            is_at_knots[i] = is_at_knots[i - 1] + dx * (1.0 - 0.5 * (cs[i] + cs[i - 1]));
        }
        Ok(Self { xs, cs, is_at_knots })
    }

    fn support_end(&self) -> f64 {
        *self.xs.last().unwrap()
    }

    /// Index `i` of the segment `[x_i, x_{i+1})` containing `x`.
    fn segment(&self, x: f64) -> usize {
        let i = self.xs.partition_point(|&k| k <= x);
        i.saturating_sub(1).min(self.xs.len() - 2)
    }

    fn slope(&self, i: usize) -> f64 {
        (self.cs[i + 1] - self.cs[i]) / (self.xs[i + 1] - self.xs[i])
    }

    fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if x >= self.support_end() {
            return 1.0;
        }
        let i = self.segment(x);
        (self.cs[i] + self.slope(i) * (x - self.xs[i])).min(1.0)
    }

    fn density(&self, x: f64) -> f64 {
        if x < 0.0 || x >= self.support_end() {
            return 0.0;
        }
        self.slope(self.segment(x))
    }

    fn integrated_survival(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let end = self.support_end();
        if x >= end {
            return *self.is_at_knots.last().unwrap();
        }
        let i = self.segment(x);
        let d = x - self.xs[i];
        self.is_at_knots[i] + (1.0 - self.cs[i]) * d - 0.5 * self.slope(i) * d * d
    }

    fn quantile(&self, p: f64) -> f64 {
        // first knot with cdf ≥ p; flat stretches resolve to their left end
        let i = self.cs.partition_point(|&c| c < p);
        if i == 0 {
            return 0.0;
        }
        let s = self.slope(i - 1);
        (self.xs[i - 1] + (p - self.cs[i - 1]) / s).min(self.xs[i])
    }

    fn raw_moment(&self, k: u32) -> f64 {
        let kp = (k + 1) as f64;
        (0..self.xs.len() - 1)
            .map(|i| {
                let mass = self.cs[i + 1] - self.cs[i];
                if mass == 0.0 {
                    return 0.0;
                }
                let (a, b) = (self.xs[i], self.xs[i + 1]);
                mass * (b.powf(kp) - a.powf(kp)) / (kp * (b - a))
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    Exponential { rate: f64 },
    Erlang { shape: u32, rate: f64 },
    Uniform { lo: f64, hi: f64 },
    Piecewise(PiecewiseCdf),
    Shifted { offset: f64, inner: Box<Distribution> },
    Scaled { factor: f64, inner: Box<Distribution> },
    /// The stationary-excess law with density `(1 − G_base)/mean_base`.
    Equilibrium { base: Box<Distribution> },
}

/// Result of a hazard-rate evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HazardValue {
    pub value: f64,
    /// Survival was below [`SURVIVAL_FLOOR`] and got clamped.
    pub clamped: bool,
}

/// An immutable lifetime law on `[0, H)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    kind: Kind,
    mean: f64,
    support_end: f64,
}

fn erlang_partial_sum(shape: u32, y: f64) -> f64 {
    // Σ_{j<k} y^j / j!
    let mut term = 1.0;
    let mut acc = 1.0;
    for j in 1..shape {
        term *= y / j as f64;
        acc += term;
    }
    acc
}

fn ln_factorial(n: u32) -> f64 {
    (2..=n).map(|i| (i as f64).ln()).sum()
}

impl Distribution {
    pub fn exponential(rate: f64) -> Result<Self, DistError> {
        let rate = positive("rate", rate)?;
        Ok(Self {
            kind: Kind::Exponential { rate },
            mean: 1.0 / rate,
            support_end: f64::INFINITY,
        })
    }

    pub fn erlang(shape: u32, rate: f64) -> Result<Self, DistError> {
        let rate = positive("rate", rate)?;
        if shape == 0 {
            return Err(DistError::InvalidParameter {
                name: "shape",
                reason: "must be at least 1".into(),
            });
        }
        Ok(Self {
            kind: Kind::Erlang { shape, rate },
            mean: shape as f64 / rate,
            support_end: f64::INFINITY,
        })
    }

    pub fn uniform(lo: f64, hi: f64) -> Result<Self, DistError> {
        if !(lo.is_finite() && lo >= 0.0) {
            return Err(DistError::InvalidParameter {
                name: "lo",
                reason: format!("must be finite and >= 0, got {lo}"),
            });
        }
        if !(hi.is_finite() && hi > lo) {
            return Err(DistError::InvalidParameter {
                name: "hi",
                reason: format!("must be finite and > lo, got {hi}"),
            });
        }
        Ok(Self {
            kind: Kind::Uniform { lo, hi },
            mean: 0.5 * (lo + hi),
            support_end: hi,
        })
    }

    pub fn piecewise_linear(knots: &[(f64, f64)]) -> Result<Self, DistError> {
        let cdf = PiecewiseCdf::new(knots)?;
        let mean = *cdf.is_at_knots.last().unwrap();
        let support_end = cdf.support_end();
        Ok(Self {
            kind: Kind::Piecewise(cdf),
            mean,
            support_end,
        })
    }

    pub fn shifted(offset: f64, inner: Distribution) -> Result<Self, DistError> {
        if !(offset.is_finite() && offset >= 0.0) {
            return Err(DistError::InvalidParameter {
                name: "offset",
                reason: format!("must be finite and >= 0, got {offset}"),
            });
        }
        Ok(Self {
            mean: offset + inner.mean,
            support_end: offset + inner.support_end,
            kind: Kind::Shifted {
                offset,
                inner: Box::new(inner),
            },
        })
    }

    /// The law of `factor · X`.
    pub fn scaled(&self, factor: f64) -> Self {
        assert!(factor.is_finite() && factor > 0.0, "scale factor must be positive");
        match &self.kind {
            Kind::Exponential { rate } => Self::exponential(rate / factor).unwrap(),
            Kind::Erlang { shape, rate } => Self::erlang(*shape, rate / factor).unwrap(),
            Kind::Scaled { factor: f0, inner } => inner.scaled(f0 * factor),
            _ => Self {
                mean: self.mean * factor,
                support_end: self.support_end * factor,
                kind: Kind::Scaled {
                    factor,
                    inner: Box::new(self.clone()),
                },
            },
        }
    }

    /// Rescales time so the mean becomes `mean`.
    pub fn with_mean(&self, mean: f64) -> Self {
        self.scaled(mean / self.mean)
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Right end `H` of the support (may be infinite).
    pub fn support_end(&self) -> f64 {
        self.support_end
    }

    pub fn is_exponential(&self) -> Option<f64> {
        match self.kind {
            Kind::Exponential { rate } => Some(rate),
            _ => None,
        }
    }

    pub fn describe(&self) -> String {
        match &self.kind {
            Kind::Exponential { rate } => format!("exponential(rate={rate})"),
            Kind::Erlang { shape, rate } => format!("erlang(shape={shape}, rate={rate})"),
            Kind::Uniform { lo, hi } => format!("uniform({lo}, {hi})"),
            Kind::Piecewise(p) => format!("piecewise_linear({} knots)", p.xs.len()),
            Kind::Shifted { offset, inner } => format!("shifted({offset}, {})", inner.describe()),
            Kind::Scaled { factor, inner } => format!("scaled({factor}, {})", inner.describe()),
            Kind::Equilibrium { base } => format!("equilibrium({})", base.describe()),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if x >= self.support_end {
            return 1.0;
        }
        match &self.kind {
            Kind::Exponential { rate } => -(-rate * x).exp_m1(),
            Kind::Erlang { shape, rate } => {
                let y = rate * x;
                if y < *shape as f64 {
                    // lower tail series Σ_{j≥k} e^{-y} y^j / j!
                    let mut term = (*shape as f64 * y.ln() - y - ln_factorial(*shape)).exp();
                    let mut acc = 0.0;
                    let mut j = *shape;
                    while term > acc * 1e-17 && j < *shape + 2000 {
                        acc += term;
                        j += 1;
                        term *= y / j as f64;
                    }
                    acc.min(1.0)
                } else {
                    1.0 - self.survival(x)
                }
            }
            Kind::Uniform { lo, hi } => ((x - lo) / (hi - lo)).clamp(0.0, 1.0),
            Kind::Piecewise(p) => p.cdf(x),
            Kind::Shifted { offset, inner } => inner.cdf(x - offset),
            Kind::Scaled { factor, inner } => inner.cdf(x / factor),
            Kind::Equilibrium { base } => (base.integrated_survival(x) / base.mean).min(1.0),
        }
    }

    /// `1 − G(x)`.
    pub fn survival(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 1.0;
        }
        if x >= self.support_end {
            return 0.0;
        }
        match &self.kind {
            Kind::Exponential { rate } => (-rate * x).exp(),
            Kind::Erlang { shape, rate } => {
                let y = rate * x;
                (-y).exp() * erlang_partial_sum(*shape, y)
            }
            Kind::Shifted { offset, inner } => inner.survival(x - offset),
            Kind::Scaled { factor, inner } => inner.survival(x / factor),
            Kind::Equilibrium { base } => {
                ((base.mean - base.integrated_survival(x)) / base.mean).max(0.0)
            }
            _ => 1.0 - self.cdf(x),
        }
    }

    pub fn density(&self, x: f64) -> f64 {
        if x < 0.0 || x == f64::INFINITY {
            return 0.0;
        }
        match &self.kind {
            Kind::Exponential { rate } => rate * (-rate * x).exp(),
            Kind::Erlang { shape, rate } => {
                if x == 0.0 {
                    return if *shape == 1 { *rate } else { 0.0 };
                }
                let k = *shape as f64;
                let y = rate * x;
                rate * ((k - 1.0) * y.ln() - y - ln_factorial(shape - 1)).exp()
            }
            Kind::Uniform { lo, hi } => {
                if x >= *lo && x < *hi {
                    1.0 / (hi - lo)
                } else {
                    0.0
                }
            }
            Kind::Piecewise(p) => p.density(x),
            Kind::Shifted { offset, inner } => {
                if x < *offset {
                    0.0
                } else {
                    inner.density(x - offset)
                }
            }
            Kind::Scaled { factor, inner } => inner.density(x / factor) / factor,
            Kind::Equilibrium { base } => base.survival(x) / base.mean,
        }
    }

    /// Hazard rate `g/(1 − G)`; errors for `x` at or beyond the support end.
    pub fn hazard(&self, x: f64) -> Result<f64, DistError> {
        self.hazard_eval(x).map(|h| h.value)
    }

    /// Hazard rate together with a flag telling whether survival was clamped.
    pub fn hazard_eval(&self, x: f64) -> Result<HazardValue, DistError> {
        if x >= self.support_end {
            return Err(DistError::BeyondSupport {
                x,
                support_end: self.support_end,
            });
        }
        let x = x.max(0.0);
        let exact = |value| Ok(HazardValue { value, clamped: false });
        match &self.kind {
            Kind::Exponential { rate } => exact(*rate),
            Kind::Erlang { shape, rate } => {
                // r / Σ_{j<k} (k−1)!/j! · y^{j−k+1}, summed from j = k−1 down
                let y = rate * x;
                if *shape == 1 {
                    return exact(*rate);
                }
                if y == 0.0 {
                    return exact(0.0);
                }
                let mut term = 1.0;
                let mut acc = 1.0;
                for j in (1..*shape).rev() {
                    term *= j as f64 / y;
                    acc += term;
                    if term < acc * 1e-18 {
                        break;
                    }
                }
                exact(rate / acc)
            }
            Kind::Uniform { lo, hi } => exact(if x < *lo { 0.0 } else { 1.0 / (hi - x) }),
            Kind::Piecewise(p) => {
                let s = 1.0 - p.cdf(x);
                let clamped = s < SURVIVAL_FLOOR;
                Ok(HazardValue {
                    value: p.density(x) / s.max(SURVIVAL_FLOOR),
                    clamped,
                })
            }
            Kind::Shifted { offset, inner } => {
                if x < *offset {
                    exact(0.0)
                } else {
                    inner.hazard_eval(x - offset)
                }
            }
            Kind::Scaled { factor, inner } => {
                let h = inner.hazard_eval(x / factor)?;
                Ok(HazardValue {
                    value: h.value / factor,
                    clamped: h.clamped,
                })
            }
            Kind::Equilibrium { base } => {
                let tail = base.mean - base.integrated_survival(x);
                let floor = SURVIVAL_FLOOR * base.mean;
                Ok(HazardValue {
                    value: base.survival(x) / tail.max(floor),
                    clamped: tail < floor,
                })
            }
        }
    }

    /// `∫₀ˣ (1 − G(y)) dy`; tends to the mean as `x → H`.
    pub fn integrated_survival(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        match &self.kind {
            Kind::Exponential { rate } => -(-rate * x).exp_m1() / rate,
            Kind::Erlang { shape, rate } => {
                let y = rate * x;
                let k = *shape;
                // (1/r)(k − e^{−y} Σ_{i<k} (k − i) y^i / i!)
                let mut term = 1.0;
                let mut acc = k as f64;
                for i in 1..k {
                    term *= y / i as f64;
                    acc += (k - i) as f64 * term;
                }
                ((k as f64 - (-y).exp() * acc) / rate).clamp(0.0, self.mean)
            }
            Kind::Uniform { lo, hi } => {
                if x <= *lo {
                    x
                } else if x >= *hi {
                    self.mean
                } else {
                    let d = x - lo;
                    lo + d - d * d / (2.0 * (hi - lo))
                }
            }
            Kind::Piecewise(p) => p.integrated_survival(x),
            Kind::Shifted { offset, inner } => {
                x.min(*offset) + inner.integrated_survival(x - offset)
            }
            Kind::Scaled { factor, inner } => factor * inner.integrated_survival(x / factor),
            Kind::Equilibrium { .. } => {
                let upper = x.min(self.support_end);
                let panels = 2000;
                simpson(|y| self.survival(y), 0.0, upper, panels)
                    .min(self.mean)
            }
        }
    }

    /// Smallest `x` with `∫₀ˣ (1 − G) ≥ v`; the support end when `v ≥ mean`.
    pub fn integrated_survival_inverse(&self, v: f64) -> f64 {
        if v <= 0.0 {
            return 0.0;
        }
        if v >= self.mean {
            return self.support_end;
        }
        if let Kind::Exponential { rate } = self.kind {
            return -(-v * rate).ln_1p() / rate;
        }
        let hi = self.upper_bracket(|x| self.integrated_survival(x) >= v);
        bisect_first(|x| self.integrated_survival(x) >= v, 0.0, hi, 1e-14 * hi.max(1.0))
    }

    /// Finite upper end of a search bracket on which `pred` eventually holds.
    fn upper_bracket<F: Fn(f64) -> bool>(&self, pred: F) -> f64 {
        if self.support_end.is_finite() {
            return self.support_end;
        }
        let mut hi = self.mean.max(1e-300);
        while !pred(hi) && hi < 1e300 {
            hi *= 2.0;
        }
        hi
    }

    /// `E[X^k]`.
    pub fn raw_moment(&self, k: u32) -> f64 {
        if k == 0 {
            return 1.0;
        }
        match &self.kind {
            Kind::Exponential { rate } => (1..=k).map(|i| i as f64).product::<f64>() / rate.powi(k as i32),
            Kind::Erlang { shape, rate } => {
                (0..k).map(|i| (*shape + i) as f64).product::<f64>() / rate.powi(k as i32)
            }
            Kind::Uniform { lo, hi } => {
                let kp = (k + 1) as f64;
                (hi.powf(kp) - lo.powf(kp)) / (kp * (hi - lo))
            }
            Kind::Piecewise(p) => p.raw_moment(k),
            Kind::Shifted { offset, inner } => {
                let mut binom = 1.0;
                let mut acc = 0.0;
                for j in 0..=k {
                    acc += binom * offset.powi((k - j) as i32) * inner.raw_moment(j);
                    binom = binom * (k - j) as f64 / (j + 1) as f64;
                }
                acc
            }
            Kind::Scaled { factor, inner } => factor.powi(k as i32) * inner.raw_moment(k),
            Kind::Equilibrium { base } => base.raw_moment(k + 1) / ((k + 1) as f64 * base.mean),
        }
    }

    /// Generalised inverse `inf{x ≥ 0 : G(x) ≥ p}`.
    pub fn quantile(&self, p: f64) -> f64 {
        if p <= 0.0 {
            return 0.0;
        }
        if p >= 1.0 {
            return self.support_end;
        }
        match &self.kind {
            Kind::Exponential { rate } => -(-p).ln_1p() / rate,
            Kind::Erlang { .. } => erlang_quantile(p, self),
            Kind::Uniform { lo, hi } => lo + p * (hi - lo),
            Kind::Piecewise(c) => c.quantile(p),
            Kind::Shifted { offset, inner } => offset + inner.quantile(p),
            Kind::Scaled { factor, inner } => factor * inner.quantile(p),
            Kind::Equilibrium { .. } => {
                let hi = self.upper_bracket(|x| self.cdf(x) >= p);
                bisect_first(|x| self.cdf(x) >= p, 0.0, hi, QUANTILE_TOL)
            }
        }
    }

    /// Inverse-cdf draw.
    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile(open_unit(rng))
    }

    /// Draws the residual lifetime of a unit that has already survived `age`,
    /// i.e. from the density `g(age + ·)/(1 − G(age))`.
    pub fn sample_residual<R: RngCore + ?Sized>(&self, age: f64, rng: &mut R) -> f64 {
        if age <= 0.0 || self.is_exponential().is_some() {
            return self.sample(rng);
        }
        let u = open_unit(rng);
        let g_age = self.cdf(age);
        let p = g_age + u * (1.0 - g_age);
        (self.quantile(p) - age).max(0.0)
    }

    /// The measure with density `scale · (1 − G(x))`, total mass `scale · mean`.
    pub fn equilibrium_measure(&self, scale: f64) -> Result<DensityMeasure, DistError> {
        if !(scale.is_finite() && scale >= 0.0) {
            return Err(DistError::InvalidParameter {
                name: "scale",
                reason: format!("must be finite and >= 0, got {scale}"),
            });
        }
        if !self.mean.is_finite() {
            return Err(DistError::InfiniteMean);
        }
        Ok(DensityMeasure::survival(self.clone(), scale))
    }

    /// Stationary-excess law `F₀(t) = ∫₀ᵗ (1 − F(y)) dy / mean`.
    pub fn equilibrium_interarrival(&self) -> Result<Distribution, DistError> {
        if !self.mean.is_finite() {
            return Err(DistError::InfiniteMean);
        }
        if self.is_exponential().is_some() {
            return Ok(self.clone());
        }
        let mean = self.raw_moment(2) / (2.0 * self.mean);
        Ok(Self {
            mean,
            support_end: self.support_end,
            kind: Kind::Equilibrium {
                base: Box::new(self.clone()),
            },
        })
    }
}

fn erlang_quantile(p: f64, d: &Distribution) -> f64 {
    // safeguarded Newton on the cdf inside a bisection bracket
    let mut lo = 0.0;
    let mut hi = d.upper_bracket(|x| d.cdf(x) >= p);
    let mut x = (d.mean * (1.0 - p).ln().abs().max(p)).clamp(lo, hi);
    if x <= 0.0 {
        x = 0.5 * hi;
    }
    for _ in 0..200 {
        let f = d.cdf(x) - p;
        if f >= 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let g = d.density(x);
        let mut next = if g > 0.0 { x - f / g } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= QUANTILE_TOL * x.max(1.0) || hi - lo <= QUANTILE_TOL {
            return next;
        }
        x = next;
    }
    x
}

/// Uniform draw on the open interval (0, 1) from 53 random bits.
pub fn open_unit<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}
