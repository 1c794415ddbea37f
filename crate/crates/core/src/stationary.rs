//! Long-run estimates of the scaled stationary state, the M/M/N stationary
//! law, mean-measure formulas for `η` and `ν`, and the convergence and
//! interchange studies built from them.
//!
//! All scaled quantities are divided by `N`. Time averages integrate the
//! state over holding times; confidence intervals come from batch means
//! pooled over replications.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::dist::Distribution;
use crate::engine::{
    init_state, run, EngineError, EventKind, EventRecord, InitialCondition, Model, Observer, RunControl, SystemState,
};
use crate::fluid::{solve_fluid, FluidError, FluidInput, InitialData};
use crate::invariant::{invariant_manifold, InvariantError, InvariantSummary};
use crate::measure::{DensityMeasure, PointMeasure};
use crate::rng::replication_seed;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StationaryError {
    #[error("at least one replication is required")]
    NoReplications,
    #[error("need at least 2 batches, got {0}")]
    TooFewBatches(usize),
    #[error("warmup {warmup} must lie in [0, horizon = {horizon})")]
    InvalidWindow { warmup: f64, horizon: f64 },
    #[error("unstable or invalid M/M/N parameters: lambda = {lambda}, N = {n}")]
    Unstable { lambda: f64, n: usize },
    #[error("arrivals must be Poisson for this check")]
    NotPoisson,
    #[error("the invariant state is not unique; use the interchange study instead")]
    NonUnique,
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Invariant(#[from] InvariantError),
    #[error(transparent)]
    Fluid(#[from] FluidError),
}

/// Mean with a 95% confidence half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    pub half_width: f64,
    pub samples: usize,
}

fn t975(df: usize) -> f64 {
    StudentsT::new(0.0, 1.0, df as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975)
}

impl Stat {
    /// Student-t interval from i.i.d. samples (batch means).
    pub fn from_samples(xs: &[f64]) -> Self {
        let m = xs.len();
        if m == 0 {
            return Self {
                mean: f64::NAN,
                half_width: f64::INFINITY,
                samples: 0,
            };
        }
        let mean = xs.iter().sum::<f64>() / m as f64;
        if m < 2 {
            return Self {
                mean,
                half_width: f64::INFINITY,
                samples: m,
            };
        }
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
        Self {
            mean,
            half_width: t975(m - 1) * (var / m as f64).sqrt(),
            samples: m,
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        (self.mean - v).abs() <= self.half_width
    }
}

/// Stationary law of the M/M/N queue with unit service rate.
///
/// `ln p_k` is built by the birth-death recurrence, so neighbouring
/// probabilities satisfy detailed balance up to one rounding.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MmnPmf {
    pub n: usize,
    pub lambda: f64,
    #[serde(skip)]
    ln_head: Vec<f64>,
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn mmn_stationary_pmf(n: usize, lambda: f64) -> Result<MmnPmf, StationaryError> {
    if n == 0 || !(lambda > 0.0 && lambda < n as f64) {
        return Err(StationaryError::Unstable { lambda, n });
    }
    let ln_l = lambda.ln();
    let rho = lambda / n as f64;
    let mut head = Vec::with_capacity(n + 1);
    head.push(0.0);
    for k in 1..=n {
        head.push(head[k - 1] + (ln_l - (k as f64).ln()));
    }
    let mut terms = head[..n].to_vec();
    terms.push(head[n] - (-rho).ln_1p());
    let ln_p0 = -log_sum_exp(&terms);
    head.iter_mut().for_each(|h| *h += ln_p0);
    Ok(MmnPmf { n, lambda, ln_head: head })
}

impl MmnPmf {
    pub fn rho(&self) -> f64 {
        self.lambda / self.n as f64
    }

    pub fn ln_p(&self, k: usize) -> f64 {
        if k <= self.n {
            self.ln_head[k]
        } else {
            self.ln_head[self.n] + (k - self.n) as f64 * self.rho().ln()
        }
    }

    pub fn p(&self, k: usize) -> f64 {
        self.ln_p(k).exp()
    }

    pub fn p0(&self) -> f64 {
        self.ln_head[0].exp()
    }

    /// `P(X ≥ k)`, summed exactly (geometric tail beyond `N`).
    pub fn tail(&self, k: usize) -> f64 {
        let rho = self.rho();
        let beyond = |k: usize| (self.ln_p(k) - (-rho).ln_1p()).exp();
        if k >= self.n {
            return beyond(k);
        }
        (k..self.n).map(|j| self.p(j)).sum::<f64>() + beyond(self.n)
    }

    pub fn mean(&self) -> f64 {
        let rho = self.rho();
        let below: f64 = (0..self.n).map(|k| k as f64 * self.p(k)).sum();
        let n = self.n as f64;
        below + self.p(self.n) * (n / (1.0 - rho) + rho / (1.0 - rho).powi(2))
    }
}

/// `((N − 1)/N)^{N/2}`.
pub fn interchange_bound(n: usize) -> f64 {
    let n = n as f64;
    ((n - 1.0) / n).powf(n / 2.0)
}

/// Total-variation distance between a time-occupancy vector (fractions
/// indexed by `X`) and the analytic law.
pub fn tv_distance(occupancy: &[f64], pmf: &MmnPmf) -> f64 {
    let head: f64 = occupancy.iter().enumerate().map(|(k, e)| (e - pmf.p(k)).abs()).sum();
    0.5 * (head + pmf.tail(occupancy.len()))
}

/// Run parameters for [`estimate_stationary`].
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryControl {
    pub warmup: f64,
    pub horizon: f64,
    pub replications: usize,
    pub batches: usize,
    pub seed: u64,
    pub audit: bool,
    pub max_events: u64,
    /// Tail-profile levels `c`.
    pub c_grid: Vec<f64>,
    pub snapshot_dt: f64,
    /// Level for the self-consistency check of the potential-queue tail.
    pub consistency_c: Option<f64>,
    /// Reference value for `E|X̄ − x|`.
    pub target_x: Option<f64>,
}

impl StationaryControl {
    /// Warmup 20% of the horizon, 20 batches.
    pub fn new(horizon: f64, replications: usize, seed: u64) -> Self {
        Self {
            warmup: 0.2 * horizon,
            horizon,
            replications,
            batches: 20,
            seed,
            audit: false,
            max_events: u64::MAX,
            c_grid: Vec::new(),
            snapshot_dt: 1.0,
            consistency_c: None,
            target_x: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyReport {
    pub c: f64,
    /// `E[η̄*[c, ∞)]`.
    pub lhs: Stat,
    /// `E[∫ (1 − G^r(x + 2c))/(1 − G^r(x)) η̄*(dx)] + E[∫₀^c (1 − G^r(2c − s)) dĒ(s)]`.
    pub rhs: Stat,
    pub residual: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationaryEstimate {
    pub n_servers: usize,
    pub warmup: f64,
    pub horizon: f64,
    pub replications: usize,
    pub seeds: Vec<u64>,
    pub x: Stat,
    pub nu_mass: Stat,
    pub eta_mass: Stat,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub abs_deviation: Option<Stat>,
    pub c_grid: Vec<f64>,
    pub eta_tail: Vec<Stat>,
    pub nu_tail: Vec<Stat>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub consistency: Option<ConsistencyReport>,
    /// Fraction of time with `X = k` (unscaled), pooled over replications.
    pub occupancy: Vec<f64>,
    pub events: u64,
    pub audit_violations: u64,
    /// Sampled states with `X̄ < ⟨1,ν̄⟩` or `⟨1,ν̄⟩ > 1`.
    pub state_violations: u64,
}

struct Window {
    t0: f64,
    batch: usize,
    lhs: f64,
    rhs: f64,
}

struct Consistency<'a> {
    c: f64,
    patience: &'a Distribution,
    open: VecDeque<Window>,
    lhs: Vec<f64>,
    rhs: Vec<f64>,
    count: Vec<usize>,
}

struct Collector<'a> {
    n: f64,
    warmup: f64,
    horizon: f64,
    batch_len: f64,
    batches: usize,
    x_int: Vec<f64>,
    nu_int: Vec<f64>,
    eta_int: Vec<f64>,
    dev_int: Vec<f64>,
    target: Option<f64>,
    occupancy: Vec<f64>,
    snap_dt: f64,
    snap_index: u64,
    c_grid: &'a [f64],
    eta_tail: Vec<Vec<f64>>,
    nu_tail: Vec<Vec<f64>>,
    snaps: Vec<usize>,
    consistency: Option<Consistency<'a>>,
    state_violations: u64,
}

impl<'a> Collector<'a> {
    fn new(n: usize, control: &'a StationaryControl, patience: Option<&'a Distribution>) -> Self {
        let b = control.batches;
        let consistency = match (control.consistency_c, patience) {
            (Some(c), Some(p)) => Some(Consistency {
                c,
                patience: p,
                open: VecDeque::new(),
                lhs: vec![0.0; b],
                rhs: vec![0.0; b],
                count: vec![0; b],
            }),
            _ => None,
        };
        Self {
            n: n as f64,
            warmup: control.warmup,
            horizon: control.horizon,
            batch_len: (control.horizon - control.warmup) / b as f64,
            batches: b,
            x_int: vec![0.0; b],
            nu_int: vec![0.0; b],
            eta_int: vec![0.0; b],
            dev_int: vec![0.0; b],
            target: control.target_x,
            occupancy: Vec::new(),
            snap_dt: control.snapshot_dt,
            snap_index: 0,
            c_grid: &control.c_grid,
            eta_tail: vec![vec![0.0; control.c_grid.len()]; b],
            nu_tail: vec![vec![0.0; control.c_grid.len()]; b],
            snaps: vec![0; b],
            consistency,
            state_violations: 0,
        }
    }

    fn batch_of(&self, t: f64) -> usize {
        (((t - self.warmup) / self.batch_len) as usize).min(self.batches - 1)
    }

    fn snapshot(&mut self, state: &SystemState, ts: f64) {
        let i = self.batch_of(ts);
        self.snaps[i] += 1;
        for (j, &c) in self.c_grid.iter().enumerate() {
            self.eta_tail[i][j] += state.eta_tail_count(ts, c) as f64 / self.n;
            self.nu_tail[i][j] += state.nu_tail_count(ts, c) as f64 / self.n;
        }
        let (n, horizon) = (self.n, self.horizon);
        if let Some(cons) = self.consistency.as_mut() {
            let c = cons.c;
            if ts + c <= horizon {
                let p = cons.patience;
                let lhs = state.eta_tail_count(ts, c) as f64 / n;
                let rhs = state
                    .eta_ages_at(ts)
                    .map(|a| p.survival(a + 2.0 * c) / p.survival(a))
                    .sum::<f64>()
                    / n;
                cons.open.push_back(Window { t0: ts, batch: i, lhs, rhs });
            }
        }
    }
}

impl Observer for Collector<'_> {
    fn hold(&mut self, state: &SystemState, from: f64, to: f64) {
        let a = from.max(self.warmup);
        let b = to.min(self.horizon);
        if b > a {
            let x = state.x() as f64 / self.n;
            let nu = state.nu_mass() as f64 / self.n;
            let eta = state.eta_mass() as f64 / self.n;
            let dev = self.target.map_or(0.0, |t| (x - t).abs());
            let mut s = a;
            while s < b {
                let i = self.batch_of(s);
                let e = if i + 1 == self.batches {
                    b
                } else {
                    (self.warmup + (i + 1) as f64 * self.batch_len).min(b)
                };
                if e <= s {
                    break;
                }
                let w = e - s;
                self.x_int[i] += w * x;
                self.nu_int[i] += w * nu;
                self.eta_int[i] += w * eta;
                self.dev_int[i] += w * dev;
                s = e;
            }
            let k = state.x() as usize;
            if self.occupancy.len() <= k {
                self.occupancy.resize(k + 1, 0.0);
            }
            self.occupancy[k] += b - a;
        }
        loop {
            let ts = self.warmup + self.snap_index as f64 * self.snap_dt;
            if ts >= to || ts >= self.horizon {
                break;
            }
            if ts >= from {
                self.snapshot(state, ts);
            }
            self.snap_index += 1;
        }
        if let Some(cons) = self.consistency.as_mut() {
            while let Some(w) = cons.open.front() {
                if w.t0 + cons.c >= to {
                    break;
                }
                let w = cons.open.pop_front().expect("front exists");
                cons.lhs[w.batch] += w.lhs;
                cons.rhs[w.batch] += w.rhs;
                cons.count[w.batch] += 1;
            }
        }
    }

    fn event(&mut self, state: &SystemState, record: &EventRecord) {
        let nu = state.nu_mass() as i64;
        if state.x() < nu || nu > state.n_servers() as i64 {
            self.state_violations += 1;
        }
        if let (EventKind::Arrival { .. }, Some(cons)) = (record.kind, self.consistency.as_mut()) {
            let a = record.time;
            for w in cons.open.iter_mut() {
                if a > w.t0 && a <= w.t0 + cons.c {
                    w.rhs += cons.patience.survival(2.0 * cons.c - (a - w.t0)) / self.n;
                }
            }
        }
    }
}

struct RepOut {
    x: Vec<f64>,
    nu: Vec<f64>,
    eta: Vec<f64>,
    dev: Vec<f64>,
    eta_tail: Vec<Vec<f64>>,
    nu_tail: Vec<Vec<f64>>,
    cons: Option<(Vec<f64>, Vec<f64>)>,
    occupancy: Vec<f64>,
    events: u64,
    audit_violations: u64,
    state_violations: u64,
}

fn run_replication(
    model: &Model,
    initial: &InitialCondition,
    control: &StationaryControl,
    seed: u64,
) -> Result<RepOut, StationaryError> {
    let mut state = init_state(model.clone(), initial, seed)?;
    let mut col = Collector::new(model.n_servers, control, model.patience.as_ref());
    let rc = RunControl {
        horizon: control.horizon,
        max_events: control.max_events,
        audit: control.audit,
    };
    let report = run(&mut state, &rc, &mut [&mut col])?;
    let per = |v: &[f64]| v.iter().map(|s| s / col.batch_len).collect::<Vec<_>>();
    let snap_means = |v: &[Vec<f64>]| {
        v.iter()
            .zip(&col.snaps)
            .filter(|(_, &k)| k > 0)
            .map(|(row, &k)| row.iter().map(|s| s / k as f64).collect::<Vec<_>>())
            .collect::<Vec<_>>()
    };
    let cons = col.consistency.as_ref().map(|c| {
        let keep: Vec<usize> = (0..c.count.len()).filter(|&i| c.count[i] > 0).collect();
        (
            keep.iter().map(|&i| c.lhs[i] / c.count[i] as f64).collect(),
            keep.iter().map(|&i| c.rhs[i] / c.count[i] as f64).collect(),
        )
    });
    Ok(RepOut {
        x: per(&col.x_int),
        nu: per(&col.nu_int),
        eta: per(&col.eta_int),
        dev: per(&col.dev_int),
        eta_tail: snap_means(&col.eta_tail),
        nu_tail: snap_means(&col.nu_tail),
        cons,
        occupancy: col.occupancy,
        events: report.events,
        audit_violations: report.violations,
        state_violations: col.state_violations,
    })
}

/// Long-run estimate of `(X̄*, ⟨1,ν̄*⟩, ⟨1,η̄*⟩)` and tail profiles.
pub fn estimate_stationary(
    model: &Model,
    initial: &InitialCondition,
    control: &StationaryControl,
) -> Result<StationaryEstimate, StationaryError> {
    if control.replications == 0 {
        return Err(StationaryError::NoReplications);
    }
    if control.batches < 2 {
        return Err(StationaryError::TooFewBatches(control.batches));
    }
    if !(control.warmup >= 0.0 && control.warmup < control.horizon && control.horizon.is_finite()) {
        return Err(StationaryError::InvalidWindow {
            warmup: control.warmup,
            horizon: control.horizon,
        });
    }
    let seeds: Vec<u64> = (0..control.replications as u64)
        .map(|i| replication_seed(control.seed, i))
        .collect();
    let outs: Vec<RepOut> = seeds
        .par_iter()
        .map(|&s| run_replication(model, initial, control, s))
        .collect::<Result<_, _>>()?;

    let pool = |f: &dyn Fn(&RepOut) -> &Vec<f64>| {
        let xs: Vec<f64> = outs.iter().flat_map(|o| f(o).iter().copied()).collect();
        Stat::from_samples(&xs)
    };
    let pool_tail = |f: &dyn Fn(&RepOut) -> &Vec<Vec<f64>>, j: usize| {
        let xs: Vec<f64> = outs.iter().flat_map(|o| f(o).iter().map(move |row| row[j])).collect();
        Stat::from_samples(&xs)
    };
    let nc = control.c_grid.len();
    let consistency = match (control.consistency_c, model.patience.is_some()) {
        (Some(c), true) => {
            let lhs: Vec<f64> = outs.iter().flat_map(|o| o.cons.as_ref().unwrap().0.clone()).collect();
            let rhs: Vec<f64> = outs.iter().flat_map(|o| o.cons.as_ref().unwrap().1.clone()).collect();
            let resid: Vec<f64> = lhs.iter().zip(&rhs).map(|(a, b)| a - b).collect();
            Some(ConsistencyReport {
                c,
                lhs: Stat::from_samples(&lhs),
                rhs: Stat::from_samples(&rhs),
                residual: Stat::from_samples(&resid),
            })
        }
        _ => None,
    };
    let mut occupancy: Vec<f64> = Vec::new();
    for o in &outs {
        if occupancy.len() < o.occupancy.len() {
            occupancy.resize(o.occupancy.len(), 0.0);
        }
        for (acc, v) in occupancy.iter_mut().zip(&o.occupancy) {
            *acc += v;
        }
    }
    let total: f64 = occupancy.iter().sum();
    occupancy.iter_mut().for_each(|v| *v /= total);

    Ok(StationaryEstimate {
        n_servers: model.n_servers,
        warmup: control.warmup,
        horizon: control.horizon,
        replications: control.replications,
        seeds: seeds.clone(),
        x: pool(&|o| &o.x),
        nu_mass: pool(&|o| &o.nu),
        eta_mass: pool(&|o| &o.eta),
        abs_deviation: control.target_x.map(|_| pool(&|o| &o.dev)),
        c_grid: control.c_grid.clone(),
        eta_tail: (0..nc).map(|j| pool_tail(&|o| &o.eta_tail, j)).collect(),
        nu_tail: (0..nc).map(|j| pool_tail(&|o| &o.nu_tail, j)).collect(),
        consistency,
        occupancy,
        events: outs.iter().map(|o| o.events).sum(),
        audit_violations: outs.iter().map(|o| o.audit_violations).sum(),
        state_violations: outs.iter().map(|o| o.state_violations).sum(),
    })
}

/// `|E⟨1,η̄*⟩ − λ̄θ^r| / (λ̄θ^r)`.
pub fn littles_law_check(est: &StationaryEstimate, lambda_bar: f64, theta_r: f64) -> f64 {
    let target = lambda_bar * theta_r;
    (est.eta_mass.mean - target).abs() / target
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TightnessProfile {
    pub c_grid: Vec<f64>,
    pub eta_tail: Vec<f64>,
    pub nu_tail: Vec<f64>,
    pub monotone: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub consistency: Option<ConsistencyReport>,
}

pub fn tightness_profile(est: &StationaryEstimate) -> TightnessProfile {
    let eta: Vec<f64> = est.eta_tail.iter().map(|s| s.mean).collect();
    let nu: Vec<f64> = est.nu_tail.iter().map(|s| s.mean).collect();
    let mono = |v: &[f64]| v.windows(2).all(|w| w[1] <= w[0] + 1e-12);
    let increasing_c = est.c_grid.windows(2).all(|w| w[1] >= w[0]);
    TightnessProfile {
        c_grid: est.c_grid.clone(),
        monotone: increasing_c && mono(&eta) && mono(&nu),
        eta_tail: eta,
        nu_tail: nu,
        consistency: est.consistency.clone(),
    }
}

/// A nondecreasing function sampled at `i·dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledFn {
    pub dt: f64,
    pub values: Vec<f64>,
}

impl SampledFn {
    pub fn linear(rate: f64, dt: f64, t_max: f64) -> Self {
        let n = (t_max / dt).ceil() as usize;
        Self {
            dt,
            values: (0..=n).map(|i| rate * i as f64 * dt).collect(),
        }
    }

    fn at(&self, s: f64) -> f64 {
        let pos = s / self.dt;
        let i = (pos.floor() as usize).min(self.values.len() - 2);
        let frac = (pos - i as f64).clamp(0.0, 1.0);
        self.values[i] * (1.0 - frac) + self.values[i + 1] * frac
    }
}

/// `∫₀ᵗ h(s) de(s)` by the trapezoid rule on the grid of `e`.
fn stieltjes<H: Fn(f64) -> f64>(h: H, e: &SampledFn, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let mut acc = 0.0;
    let mut s0 = 0.0;
    let (mut h0, mut e0) = (h(0.0), e.at(0.0));
    let mut i = 1;
    while s0 < t {
        let s1 = (i as f64 * e.dt).min(t);
        let (h1, e1) = (h(s1), e.at(s1));
        acc += 0.5 * (h0 + h1) * (e1 - e0);
        s0 = s1;
        h0 = h1;
        e0 = e1;
        i += 1;
    }
    acc
}

fn mean_formula<F: Fn(f64) -> f64>(init: &PointMeasure, driver: &SampledFn, law: &Distribution, f: F, t: f64) -> f64 {
    let carried: f64 = init
        .atoms()
        .iter()
        .map(|&x| f(x + t) * law.survival(x + t) / law.survival(x))
        .sum();
    carried + stieltjes(|s| f(t - s) * law.survival(t - s), driver, t)
}

/// `E⟨f, η_t⟩` given `η₀` and the mean arrival function `e(t) = E[E(t)]`.
pub fn mean_eta_formula<F: Fn(f64) -> f64>(
    eta0: &PointMeasure,
    e: &SampledFn,
    patience: &Distribution,
    f: F,
    t: f64,
) -> f64 {
    mean_formula(eta0, e, patience, f, t)
}

/// `E⟨f, ν_t⟩` given `ν₀` and the mean entry function `k(t) = E[K(t)]`.
pub fn mean_nu_formula<F: Fn(f64) -> f64>(
    nu0: &PointMeasure,
    k: &SampledFn,
    service: &Distribution,
    f: F,
    t: f64,
) -> f64 {
    mean_formula(nu0, k, service, f, t)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepresentationRow {
    pub side: &'static str,
    /// `0` stands for `f = 1`, otherwise `f = 1_{[c, ∞)}`.
    pub c: f64,
    pub t: f64,
    pub empirical: f64,
    pub formula: f64,
    pub std_err: f64,
    pub z: f64,
}

struct Probe<'a> {
    ts: &'a [f64],
    cs: &'a [f64],
    next: usize,
    eta: Vec<f64>,
    nu: Vec<f64>,
    entries: Vec<f64>,
}

impl Observer for Probe<'_> {
    fn hold(&mut self, state: &SystemState, from: f64, to: f64) {
        while self.next < self.ts.len() && self.ts[self.next] < to {
            let t = self.ts[self.next];
            if t >= from {
                for &c in self.cs {
                    self.eta.push(state.eta_tail_count(t, c) as f64);
                    self.nu.push(state.nu_tail_count(t, c) as f64);
                }
            }
            self.next += 1;
        }
    }

    fn event(&mut self, _state: &SystemState, record: &EventRecord) {
        if record.entered_service.is_some() {
            self.entries.push(record.time);
        }
    }
}

fn z_score(diff: f64, se: f64) -> f64 {
    if se == 0.0 {
        if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        diff / se
    }
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len().max(2) - 1) as f64;
    (m, v.sqrt())
}

/// Simulation against the mean-measure formulas from an empty start with
/// Poisson arrivals, for `f = 1` and `f = 1_{[c, ∞)}`. On the `ν` side the
/// entry process is taken from the simulated runs.
pub fn representation_check(
    model: &Model,
    ts: &[f64],
    cs: &[f64],
    replications: usize,
    seed: u64,
) -> Result<Vec<RepresentationRow>, StationaryError> {
    let rate = model
        .interarrival
        .is_exponential()
        .ok_or(StationaryError::NotPoisson)?;
    let patience = model.patience.as_ref().ok_or(StationaryError::NotPoisson)?;
    if replications < 2 {
        return Err(StationaryError::NoReplications);
    }
    let mut ts = ts.to_vec();
    ts.sort_by(f64::total_cmp);
    let mut levels = vec![0.0];
    levels.extend(cs.iter().copied().filter(|&c| c > 0.0));
    let t_max = *ts.last().expect("at least one time");
    let horizon = t_max * (1.0 + 1e-9) + 1e-9;

    struct Out {
        eta: Vec<f64>,
        nu: Vec<f64>,
        entries: Vec<f64>,
    }
    let outs: Vec<Out> = (0..replications as u64)
        .into_par_iter()
        .map(|i| {
            let mut state = init_state(model.clone(), &InitialCondition::empty(), replication_seed(seed, i))?;
            let mut probe = Probe {
                ts: &ts,
                cs: &levels,
                next: 0,
                eta: Vec::new(),
                nu: Vec::new(),
                entries: Vec::new(),
            };
            run(&mut state, &RunControl::new(horizon), &mut [&mut probe])?;
            Ok(Out {
                eta: probe.eta,
                nu: probe.nu,
                entries: probe.entries,
            })
        })
        .collect::<Result<_, StationaryError>>()?;

    // mean entry function on a fine grid
    let dt = 1e-3;
    let cells = (horizon / dt).ceil() as usize + 1;
    let mut k_grid = vec![0.0; cells + 1];
    for o in &outs {
        for &s in &o.entries {
            let i = ((s / dt).ceil() as usize).min(cells);
            k_grid[i] += 1.0;
        }
    }
    let mut acc = 0.0;
    for v in k_grid.iter_mut() {
        acc += *v;
        *v = acc / replications as f64;
    }
    let k_mean = SampledFn { dt, values: k_grid };
    let e_mean = SampledFn::linear(rate, 1e-4, horizon);
    let empty = PointMeasure::new();
    let service = &model.service;

    let mut rows = Vec::new();
    for (ti, &t) in ts.iter().enumerate() {
        for (ci, &c) in levels.iter().enumerate() {
            let idx = ti * levels.len() + ci;
            let f = |x: f64| if x >= c { 1.0 } else { 0.0 };
            let eta: Vec<f64> = outs.iter().map(|o| o.eta[idx]).collect();
            let (m, sd) = mean_sd(&eta);
            let formula = mean_eta_formula(&empty, &e_mean, patience, f, t);
            let se = sd / (replications as f64).sqrt();
            rows.push(RepresentationRow {
                side: "eta",
                c,
                t,
                empirical: m,
                formula,
                std_err: se,
                z: z_score(m - formula, se),
            });
            // per-replication difference against its own entry path
            let diffs: Vec<f64> = outs
                .iter()
                .map(|o| {
                    let own: f64 = o
                        .entries
                        .iter()
                        .filter(|&&s| s <= t)
                        .map(|&s| f(t - s) * service.survival(t - s))
                        .sum();
                    o.nu[idx] - own
                })
                .collect();
            let nu: Vec<f64> = outs.iter().map(|o| o.nu[idx]).collect();
            let (m, _) = mean_sd(&nu);
            let (dm, dsd) = mean_sd(&diffs);
            let se = dsd / (replications as f64).sqrt();
            rows.push(RepresentationRow {
                side: "nu",
                c,
                t,
                empirical: m,
                formula: mean_nu_formula(&empty, &k_mean, service, f, t),
                std_err: se,
                z: z_score(dm, se),
            });
        }
    }
    Ok(rows)
}

/// Arrivals needed per point of a convergence study.
pub const CONVERGENCE_ARRIVALS: f64 = 4e5;

/// Horizon giving about [`CONVERGENCE_ARRIVALS`] arrivals, at least 500.
pub fn convergence_horizon(lambda_n: f64) -> f64 {
    (CONVERGENCE_ARRIVALS / lambda_n).max(500.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub lambda_n: f64,
    pub horizon: f64,
    pub x: Stat,
    pub nu_mass: Stat,
    pub eta_mass: Stat,
    /// `E|X̄* − x*|`.
    pub abs_deviation: Stat,
    /// `|E X̄* − x*|`.
    pub distance: f64,
    pub little_deviation: f64,
    pub events: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceTable {
    pub target: InvariantSummary,
    pub x_star: f64,
    pub rows: Vec<ConvergenceRow>,
    /// `|E X̄* − x*|` nonincreasing in `N` up to overlap of the intervals.
    pub distance_monotone: bool,
    /// `E|X̄* − x*|` strictly decreasing in `N`.
    pub abs_deviation_decreasing: bool,
}

/// Stationary estimates along `n_list`, compared with the invariant state of
/// the limiting rate `lambda`.
pub fn convergence_study<M, C>(
    model_for: M,
    lambda: f64,
    n_list: &[usize],
    control_for: C,
) -> Result<ConvergenceTable, StationaryError>
where
    M: Fn(usize) -> Model,
    C: Fn(usize, f64) -> StationaryControl,
{
    let first = model_for(*n_list.first().ok_or(StationaryError::NoReplications)?);
    let inv = invariant_manifold(lambda, &first.service, first.patience.as_ref())?;
    let x_star = inv.x_star(1e-6).ok_or(StationaryError::NonUnique)?;
    let theta = first.patience.as_ref().map_or(f64::INFINITY, |p| p.mean());
    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let model = model_for(n);
        let lambda_n = 1.0 / model.interarrival.mean();
        let mut control = control_for(n, lambda_n);
        control.target_x = Some(x_star);
        let est = estimate_stationary(&model, &InitialCondition::stationary_empty(), &control)?;
        rows.push(ConvergenceRow {
            n,
            lambda_n,
            horizon: control.horizon,
            distance: (est.x.mean - x_star).abs(),
            little_deviation: littles_law_check(&est, lambda_n / n as f64, theta),
            abs_deviation: est.abs_deviation.expect("target set"),
            x: est.x,
            nu_mass: est.nu_mass,
            eta_mass: est.eta_mass,
            events: est.events,
        });
    }
    let distance_monotone = rows
        .windows(2)
        .all(|w| w[1].distance <= w[0].distance + w[0].x.half_width + w[1].x.half_width);
    let abs_deviation_decreasing = rows
        .windows(2)
        .all(|w| w[1].abs_deviation.mean < w[0].abs_deviation.mean);
    Ok(ConvergenceTable {
        target: inv.summary(1e-6),
        x_star,
        rows,
        distance_monotone,
        abs_deviation_decreasing,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InterchangeRow {
    pub n: usize,
    /// `P(X̄* ≥ 3/2)` from the exact law.
    pub exact_tail: f64,
    /// `((N − 1)/N)^{N/2}`.
    pub bound: f64,
    pub bound_holds: bool,
    pub mean_scaled: f64,
    /// `sup_x |P(X̄* ≤ x) − 1{x ≥ 2}|`.
    pub kolmogorov_to_two: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InterchangeReport {
    pub rows: Vec<InterchangeRow>,
    /// `lim ((N − 1)/N)^{N/2} = e^{−1/2}`.
    pub bound_limit: f64,
    /// `e^{−2}`, kept for comparison with `bound_limit`.
    pub quoted_limit: f64,
    pub fluid_horizon: f64,
    /// `sup_t |X̄(t) − 2|` without abandonment.
    pub fluid_dev_plain: f64,
    /// Same, with patience supported in `(3, ∞)`.
    pub fluid_dev_abandonment: f64,
    /// Kolmogorov distance between `X̄*` at the largest `N` and the fluid limit `δ₂`.
    pub limits_gap: f64,
    pub limits_differ: bool,
}

pub const INTERCHANGE_GAP: f64 = 0.4;

/// Starting state `(2, ν*, 1_{[0,1]}dx)` with exponential(1) service.
pub fn interchange_fluid_input(patience: Option<Distribution>) -> FluidInput {
    let service = Distribution::exponential(1.0).expect("valid rate");
    FluidInput {
        lambda: 1.0,
        x0: 2.0,
        nu0: InitialData::Density(service.equilibrium_measure(1.0).expect("finite mean")),
        eta0: InitialData::Density(DensityMeasure::grid(1.0, vec![1.0, 1.0]).expect("valid grid")),
        service,
        patience,
    }
}

/// Stationary laws of `M/M/N` with `λ = N − 1` against the fluid path from
/// `X̄(0) = 2`.
pub fn interchange_demo(n_list: &[usize], horizon: f64, dt: f64) -> Result<InterchangeReport, StationaryError> {
    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let pmf = mmn_stationary_pmf(n, n as f64 - 1.0)?;
        let exact_tail = pmf.tail((3 * n).div_ceil(2));
        let bound = interchange_bound(n);
        rows.push(InterchangeRow {
            n,
            exact_tail,
            bound,
            bound_holds: exact_tail <= bound,
            mean_scaled: pmf.mean() / n as f64,
            kolmogorov_to_two: (1.0 - pmf.tail(2 * n)).max(pmf.tail(2 * n + 1)),
        });
    }
    let dev = |tr: &crate::fluid::FluidTrajectory| tr.x.iter().map(|x| (x - 2.0).abs()).fold(0.0, f64::max);
    let plain = solve_fluid(&interchange_fluid_input(None), horizon, dt)?;
    let shifted = Distribution::shifted(3.0, Distribution::exponential(1.0).expect("valid rate"))
        .expect("valid shift");
    let abandon = solve_fluid(&interchange_fluid_input(Some(shifted)), horizon, dt)?;
    let limits_gap = rows.last().map_or(0.0, |r| r.kolmogorov_to_two);
    Ok(InterchangeReport {
        bound_limit: (-0.5f64).exp(),
        quoted_limit: (-2.0f64).exp(),
        fluid_horizon: horizon,
        fluid_dev_plain: dev(&plain),
        fluid_dev_abandonment: dev(&abandon),
        limits_gap,
        limits_differ: limits_gap >= INTERCHANGE_GAP,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp(rate: f64) -> Distribution {
        Distribution::exponential(rate).unwrap()
    }

    fn erlang_a(n: usize, lambda_bar: f64) -> Model {
        Model {
            n_servers: n,
            interarrival: exp(lambda_bar * n as f64),
            service: exp(1.0),
            patience: Some(exp(1.0)),
        }
    }

    #[test]
    fn mm2_pmf_closed_form() {
        let pmf = mmn_stationary_pmf(2, 1.0).unwrap();
        assert!((pmf.p0() - 1.0 / 3.0).abs() < 1e-15);
        for k in 1..40 {
            let expect = (1.0 / 3.0) * 0.5f64.powi(k as i32 - 1);
            assert!((pmf.p(k) - expect).abs() < 1e-15 * expect.max(1e-300) + 1e-17, "k={k}");
        }
        let total: f64 = (0..200).map(|k| pmf.p(k)).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!((pmf.mean() - 4.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn pmf_normalizes_and_balances() {
        for (n, lambda) in [(1, 0.5), (3, 2.9), (10, 4.0), (50, 49.0), (1000, 999.0)] {
            let pmf = mmn_stationary_pmf(n, lambda).unwrap();
            let total: f64 = (0..n).map(|k| pmf.p(k)).sum::<f64>() + pmf.tail(n);
            assert!((total - 1.0).abs() < 1e-12, "N={n}: {total}");
            for k in 0..=3 * n {
                // in log space; far tails underflow
                let lhs = lambda.ln() + pmf.ln_p(k);
                let rhs = ((k + 1).min(n) as f64).ln() + pmf.ln_p(k + 1);
                let tol = 1e-12 * (1.0 + lhs.abs());
                assert!((lhs - rhs).abs() <= tol, "N={n} k={k}: {}", (lhs - rhs).abs());
            }
        }
        assert!(mmn_stationary_pmf(2, 2.0).is_err());
        assert!(mmn_stationary_pmf(0, 0.5).is_err());
    }

    #[test]
    fn interchange_tail_and_bound() {
        assert!((interchange_bound(4) - 0.5625).abs() < 1e-15);
        assert!((interchange_bound(100) - 0.99f64.powi(50)).abs() < 1e-15);
        for n in [4, 10, 100, 1000] {
            let pmf = mmn_stationary_pmf(n, n as f64 - 1.0).unwrap();
            let k = (3 * n).div_ceil(2);
            // direct summation oracle
            let direct: f64 = (k..k + 200 * n).map(|j| pmf.p(j)).sum();
            assert!((pmf.tail(k) - direct).abs() < 1e-9, "N={n}");
            assert!(pmf.tail(k) <= interchange_bound(n));
        }
        let b: Vec<f64> = [10, 100, 1000, 100_000].iter().map(|&n| interchange_bound(n)).collect();
        assert!(b.windows(2).all(|w| w[1] > w[0]));
        assert!((b[3] - (-0.5f64).exp()).abs() < 1e-5);
    }

    #[test]
    fn interchange_report() {
        let rep = interchange_demo(&[10, 100, 1000], 10.0, 1e-3).unwrap();
        assert!(rep.rows.iter().all(|r| r.bound_holds));
        assert!(rep.fluid_dev_plain <= 5e-3 && rep.fluid_dev_abandonment <= 5e-3);
        assert!(rep.limits_differ, "{}", rep.limits_gap);
        assert!(rep.rows.iter().all(|r| r.mean_scaled <= 3.0));
    }

    #[test]
    fn eta_formula_examples() {
        let e = SampledFn::linear(1.0, 1e-3, 5.0);
        let p = exp(1.0);
        let v = mean_eta_formula(&PointMeasure::new(), &e, &p, |_| 1.0, 3.0);
        assert!((v - 0.950_212_931_632_136).abs() < 1e-6, "{v}");
        let init = PointMeasure::from_atoms([0.5, 1.0]).unwrap();
        assert_eq!(mean_eta_formula(&init, &e, &p, |x| x, 0.0), 1.5);
        let v = mean_eta_formula(&PointMeasure::new(), &e, &p, |x| if x >= 2.0 { 1.0 } else { 0.0 }, 1.5);
        assert_eq!(v, 0.0);
    }

    #[test]
    fn estimate_rejects_bad_controls() {
        let m = erlang_a(2, 1.0);
        let init = InitialCondition::stationary_empty();
        let c = StationaryControl::new(10.0, 0, 1);
        assert_eq!(estimate_stationary(&m, &init, &c).unwrap_err(), StationaryError::NoReplications);
        let mut c = StationaryControl::new(10.0, 1, 1);
        c.batches = 1;
        assert!(matches!(estimate_stationary(&m, &init, &c), Err(StationaryError::TooFewBatches(1))));
    }

    #[test]
    fn mm2_mean_within_ci() {
        let model = Model {
            n_servers: 2,
            interarrival: exp(1.0),
            service: exp(1.0),
            patience: None,
        };
        let c = StationaryControl::new(2e5, 2, 11);
        let est = estimate_stationary(&model, &InitialCondition::stationary_empty(), &c).unwrap();
        let exact = mmn_stationary_pmf(2, 1.0).unwrap().mean() / 2.0;
        assert!(est.x.contains(exact) || (est.x.mean - exact).abs() < 0.01, "{:?} vs {exact}", est.x);
        assert_eq!(est.state_violations, 0);
        assert!(tv_distance(&est.occupancy, &mmn_stationary_pmf(2, 1.0).unwrap()) < 0.02);
    }

    #[test]
    fn estimates_are_reproducible() {
        let mut c = StationaryControl::new(200.0, 3, 5);
        c.c_grid = vec![0.0, 0.5, 1.0];
        c.consistency_c = Some(0.5);
        let m = erlang_a(5, 2.0);
        let a = estimate_stationary(&m, &InitialCondition::stationary_empty(), &c).unwrap();
        let b = estimate_stationary(&m, &InitialCondition::stationary_empty(), &c).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn erlang_a_profile_and_littles_law() {
        let mut c = StationaryControl::new(2000.0, 2, 9);
        c.c_grid = vec![0.0, 0.5, 1.0, 2.0, 5.0];
        c.consistency_c = Some(1.0);
        c.snapshot_dt = 0.5;
        let est = estimate_stationary(&erlang_a(50, 2.0), &InitialCondition::stationary_empty(), &c).unwrap();
        assert!((est.x.mean - 2.0).abs() <= 0.05);
        assert!(littles_law_check(&est, 2.0, 1.0) <= 0.02);
        let prof = tightness_profile(&est);
        assert!(prof.monotone);
        assert!(prof.eta_tail[4] <= 0.02);
        let cons = prof.consistency.unwrap();
        assert!(cons.residual.contains(0.0) || cons.residual.mean.abs() < 1e-3, "{cons:?}");
        assert!(est.nu_mass.mean <= 1.0 && est.x.mean >= est.nu_mass.mean);
    }

    #[test]
    fn near_empty_system() {
        let c = StationaryControl::new(2e4, 1, 3);
        let est = estimate_stationary(&erlang_a(10, 0.01), &InitialCondition::stationary_empty(), &c).unwrap();
        assert!(est.eta_mass.mean <= 0.02);
    }

    #[test]
    fn representation_small() {
        let rows = representation_check(&erlang_a(5, 2.0), &[1.0, 2.0], &[0.5, 3.0], 2000, 4).unwrap();
        assert_eq!(rows.len(), 2 * 3 * 2);
        for r in &rows {
            assert!(r.z.abs() <= 4.0, "{r:?}");
            if r.c > r.t {
                assert_eq!(r.empirical, 0.0);
            }
        }
    }
}
