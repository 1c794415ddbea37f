//! Deterministic fluid model: transport of the service-age measure `ν̄` and
//! potential-queue measure `η̄` with survival weighting, coupled to the
//! total mass `X̄`, entries `K̄`, reneging `R̄` and queue `Q̄` under
//! non-idling, for arrivals `Ē(t) = λt`.
//!
//! `ν̄_t` is kept as the transported initial part plus the entry-rate
//! history; `η̄_t` as the transported initial part plus the density
//! `λ(1 − G^r(x))` on `[0, t]`, which is known in closed form.

use serde::Serialize;
use thiserror::Error;

use crate::dist::Distribution;
use crate::measure::{DensityMeasure, MeasureError};

/// Number of cells used when a density without closed-form transport is
/// turned into weighted atoms.
pub const DENSITY_CELLS: usize = 1000;

/// Slack allowed when the queue level slightly exceeds the `η̄` mass
/// through rounding.
const LEVEL_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FluidError {
    #[error("invalid fluid input: {0}")]
    InvalidInput(String),
    #[error("non-finite value at node {node} (t = {t})")]
    NonFinite { node: usize, t: f64 },
    #[error("queue level {level} exceeds eta mass {mass} at t = {t}")]
    LevelAboveMass { level: f64, mass: f64, t: f64 },
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// Initial data for `ν̄₀` or `η̄₀`.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialData {
    Zero,
    /// `(position, weight)` pairs.
    Atoms(Vec<(f64, f64)>),
    Density(DensityMeasure),
}

impl InitialData {
    pub fn dirac(x: f64, weight: f64) -> Self {
        Self::Atoms(vec![(x, weight)])
    }
}

/// An initial measure prepared for transport under one lifetime law.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialPart {
    Zero,
    Atoms {
        pos: Vec<f64>,
        weight: Vec<f64>,
        /// `1 − G(pos)`.
        base: Vec<f64>,
    },
    /// Density `scale · (1 − G(x))` of the transporting law itself.
    Equilibrium { scale: f64 },
}

fn surv(law: Option<&Distribution>, x: f64) -> f64 {
    law.map_or(1.0, |d| d.survival(x))
}

fn dens(law: Option<&Distribution>, x: f64) -> f64 {
    law.map_or(0.0, |d| d.density(x))
}

fn cdf(law: Option<&Distribution>, x: f64) -> f64 {
    law.map_or(0.0, |d| d.cdf(x))
}

fn int_surv(law: Option<&Distribution>, x: f64) -> f64 {
    law.map_or(x.max(0.0), |d| d.integrated_survival(x))
}

fn int_surv_inv(law: Option<&Distribution>, v: f64) -> f64 {
    law.map_or(v.max(0.0), |d| d.integrated_survival_inverse(v))
}

impl InitialPart {
    /// Prepares `data` for transport under `law` (`None`: nothing ever leaves).
    pub fn compile(data: &InitialData, law: Option<&Distribution>) -> Result<Self, FluidError> {
        let end = law.map_or(f64::INFINITY, |d| d.support_end());
        match data {
            InitialData::Zero => Ok(Self::Zero),
            InitialData::Atoms(list) => {
                let mut list = list.clone();
                for &(x, w) in &list {
                    if !(x.is_finite() && x >= 0.0 && x < end && w.is_finite() && w >= 0.0) {
                        return Err(FluidError::InvalidInput(format!(
                            "atom ({x}, {w}) must have position in [0, {end}) and nonnegative weight"
                        )));
                    }
                }
                list.sort_by(|a, b| a.0.total_cmp(&b.0));
                let base: Vec<f64> = list.iter().map(|a| surv(law, a.0)).collect();
                if base.iter().any(|&s| s <= 0.0) {
                    return Err(FluidError::InvalidInput("atom placed where survival is zero".into()));
                }
                Ok(Self::Atoms {
                    pos: list.iter().map(|a| a.0).collect(),
                    weight: list.iter().map(|a| a.1).collect(),
                    base,
                })
            }
            InitialData::Density(DensityMeasure::Survival { law: own, scale }) if Some(own) == law => {
                if *scale == 0.0 {
                    Ok(Self::Zero)
                } else {
                    Ok(Self::Equilibrium { scale: *scale })
                }
            }
            InitialData::Density(dm) => {
                let mass = dm.total_mass();
                if mass == 0.0 {
                    return Ok(Self::Zero);
                }
                let upper = match dm {
                    DensityMeasure::Grid(_) => dm.quantile(mass)?,
                    DensityMeasure::Survival { .. } => dm.quantile(mass * (1.0 - 1e-12))?,
                };
                let upper = upper.min(end * (1.0 - 1e-12));
                let h = upper / DENSITY_CELLS as f64;
                let mut atoms = Vec::with_capacity(DENSITY_CELLS);
                let mut prev = 0.0;
                for i in 0..DENSITY_CELLS {
                    let c = dm.cumulative(h * (i + 1) as f64);
                    atoms.push((h * (i as f64 + 0.5), c - prev));
                    prev = c;
                }
                if let Some(last) = atoms.last_mut() {
                    last.1 += (mass - prev).max(0.0);
                }
                Self::compile(&InitialData::Atoms(atoms), law)
            }
        }
    }

    /// Mass remaining at time `t`.
    pub fn mass(&self, law: Option<&Distribution>, t: f64) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::Atoms { pos, weight, base } => pos
                .iter()
                .zip(weight)
                .zip(base)
                .map(|((p, w), s)| w * surv(law, p + t) / s)
                .sum(),
            Self::Equilibrium { scale } => {
                let d = law.expect("equilibrium part needs a law");
                scale * (d.mean() - d.integrated_survival(t)).max(0.0)
            }
        }
    }

    /// Rate at which the transported mass leaves at time `t`: `⟨h, part_t⟩`.
    pub fn outflow(&self, law: Option<&Distribution>, t: f64) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::Atoms { pos, weight, base } => pos
                .iter()
                .zip(weight)
                .zip(base)
                .map(|((p, w), s)| w * dens(law, p + t) / s)
                .sum(),
            Self::Equilibrium { scale } => scale * surv(law, t),
        }
    }
}

/// `η̄_t` for constant arrival rate: transported initial part on `[t, ∞)`
/// plus density `λ(1 − G^r)` on `[0, t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportedMeasure {
    part: InitialPart,
    law: Option<Distribution>,
    lambda: f64,
    t: f64,
}

fn eta_mass(part: &InitialPart, law: Option<&Distribution>, lambda: f64, t: f64) -> f64 {
    lambda * int_surv(law, t) + part.mass(law, t)
}

fn eta_cumulative(part: &InitialPart, law: Option<&Distribution>, lambda: f64, t: f64, a: f64) -> f64 {
    if a <= 0.0 {
        return 0.0;
    }
    let hist = lambda * int_surv(law, a.min(t));
    if a < t {
        return hist;
    }
    hist + match part {
        InitialPart::Zero => 0.0,
        InitialPart::Atoms { pos, weight, base } => pos
            .iter()
            .zip(weight)
            .zip(base)
            .take_while(|((p, _), _)| **p + t <= a)
            .map(|((p, w), s)| w * surv(law, p + t) / s)
            .sum(),
        InitialPart::Equilibrium { scale } => scale * (int_surv(law, a) - int_surv(law, t)).max(0.0),
    }
}

/// `(∫₀^q h^r((F^η)^{-1}(y)) dy, (F^η)^{-1}(q))`, the reneging rate and the
/// head-of-line wait at queue level `q`.
fn renege_flux(
    part: &InitialPart,
    law: Option<&Distribution>,
    lambda: f64,
    t: f64,
    q: f64,
) -> Result<(f64, f64), FluidError> {
    if q <= 0.0 {
        return Ok((0.0, 0.0));
    }
    let hist = lambda * int_surv(law, t);
    if q <= hist {
        let chi = int_surv_inv(law, q / lambda);
        return Ok((lambda * cdf(law, chi), chi));
    }
    let mut rest = q - hist;
    let mut rate = lambda * cdf(law, t);
    let too_high = || FluidError::LevelAboveMass {
        level: q,
        mass: eta_mass(part, law, lambda, t),
        t,
    };
    match part {
        InitialPart::Zero => {
            if rest > LEVEL_SLACK {
                return Err(too_high());
            }
            Ok((rate, t))
        }
        InitialPart::Equilibrium { scale } => {
            let d = law.expect("equilibrium part needs a law");
            let avail = scale * (d.mean() - d.integrated_survival(t)).max(0.0);
            if rest > avail + LEVEL_SLACK {
                return Err(too_high());
            }
            let chi = d.integrated_survival_inverse(d.integrated_survival(t) + rest.min(avail) / scale);
            rate += scale * (d.cdf(chi) - d.cdf(t)).max(0.0);
            Ok((rate, chi))
        }
        InitialPart::Atoms { pos, weight, base } => {
            let mut chi = t;
            for ((p, w), s) in pos.iter().zip(weight).zip(base) {
                let left = w * surv(law, p + t) / s;
                if left <= 0.0 {
                    continue;
                }
                let flux = w * dens(law, p + t) / s;
                chi = p + t;
                if left >= rest {
                    rate += flux * rest / left;
                    rest = 0.0;
                    break;
                }
                rest -= left;
                rate += flux;
            }
            if rest > LEVEL_SLACK {
                return Err(too_high());
            }
            Ok((rate, chi))
        }
    }
}

impl TransportedMeasure {
    pub fn total_mass(&self) -> f64 {
        eta_mass(&self.part, self.law.as_ref(), self.lambda, self.t)
    }

    /// `η̄_t[0, a]`.
    pub fn cumulative(&self, a: f64) -> f64 {
        eta_cumulative(&self.part, self.law.as_ref(), self.lambda, self.t, a)
    }

    /// `(F^η)^{-1}(q)` with the inf convention.
    pub fn quantile(&self, q: f64) -> Result<f64, FluidError> {
        renege_flux(&self.part, self.law.as_ref(), self.lambda, self.t, q).map(|r| r.1)
    }
}

/// Primitives and initial data of a fluid model.
#[derive(Debug, Clone, PartialEq)]
pub struct FluidInput {
    pub lambda: f64,
    pub x0: f64,
    pub nu0: InitialData,
    pub eta0: InitialData,
    pub service: Distribution,
    /// `None`: no abandonment.
    pub patience: Option<Distribution>,
}

/// Tolerance for membership of the input space.
const INPUT_TOL: f64 = 1e-6;

impl FluidInput {
    fn compile(&self) -> Result<(InitialPart, InitialPart), FluidError> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(FluidError::InvalidInput(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.x0.is_finite() && self.x0 >= 0.0) {
            return Err(FluidError::InvalidInput(format!("x0 must be >= 0, got {}", self.x0)));
        }
        let nu = InitialPart::compile(&self.nu0, Some(&self.service))?;
        let eta = InitialPart::compile(&self.eta0, self.patience.as_ref())?;
        let nu_mass = nu.mass(Some(&self.service), 0.0);
        let eta_mass = eta.mass(self.patience.as_ref(), 0.0);
        if (1.0 - nu_mass - (1.0 - self.x0).max(0.0)).abs() > INPUT_TOL {
            return Err(FluidError::InvalidInput(format!(
                "service mass {nu_mass} inconsistent with x0 = {} (non-idling)",
                self.x0
            )));
        }
        if (self.x0 - 1.0).max(0.0) > eta_mass + INPUT_TOL {
            return Err(FluidError::InvalidInput(format!(
                "queue {} exceeds eta mass {eta_mass}",
                self.x0 - 1.0
            )));
        }
        Ok((nu, eta))
    }
}

/// `η̄_t` from the input; depends on the patience law and `η̄₀` only.
pub fn eta_evolve(input: &FluidInput, t: f64) -> Result<TransportedMeasure, FluidError> {
    let part = InitialPart::compile(&input.eta0, input.patience.as_ref())?;
    Ok(TransportedMeasure {
        part,
        law: input.patience.clone(),
        lambda: input.lambda,
        t: t.max(0.0),
    })
}

/// `∫₀^{[x̄−1]⁺} h^r((F^{η̄})^{-1}(y)) dy`.
pub fn reneging_rate(x_bar: f64, eta: &TransportedMeasure) -> Result<f64, FluidError> {
    renege_flux(&eta.part, eta.law.as_ref(), eta.lambda, eta.t, (x_bar - 1.0).max(0.0)).map(|r| r.0)
}

/// Solution on the grid `t_k = kΔ`.
#[derive(Debug, Clone, PartialEq)]
pub struct FluidTrajectory {
    pub dt: f64,
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub q: Vec<f64>,
    /// `⟨1, ν̄_t⟩`.
    pub b: Vec<f64>,
    pub k: Vec<f64>,
    pub r: Vec<f64>,
    pub d: Vec<f64>,
    pub eta_mass: Vec<f64>,
    /// `⟨h^s, ν̄_t⟩`.
    pub hs_nu: Vec<f64>,
    pub reneging_rate: Vec<f64>,
    pub chi: Vec<f64>,
    /// Entry rate on each cell `[t_k, t_{k+1})`.
    pub entry_rate: Vec<f64>,
    pub input: FluidInput,
    nu_part: InitialPart,
    pub warnings: Vec<String>,
}

/// Largest node residuals of the fluid relations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct FluidDefects {
    /// `|1 − B̄ − [1 − X̄]⁺|`.
    pub non_idling: f64,
    /// `|Q̄(0) + λt − Q̄ − K̄ − R̄|`.
    pub conservation: f64,
    /// `|Q̄ − [X̄ − 1]⁺|`.
    pub queue: f64,
    /// `[Q̄ − ⟨1, η̄⟩]⁺`.
    pub queue_eta: f64,
    /// `|X̄ − X̄(0) − λt + ∫⟨h^s, ν̄⟩ + ∫ rate|`, integrals by the trapezoid rule
    /// on the node values.
    pub x_equation: f64,
}

impl FluidDefects {
    pub fn max(&self) -> f64 {
        [self.non_idling, self.conservation, self.queue, self.queue_eta, self.x_equation]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

pub const FLUID_HEADER: &str = "t,X,Q,B,K,R,eta_mass,hs_nu";

/// Integrates the fluid equations on `[0, horizon]` with step `dt`.
pub fn solve_fluid(input: &FluidInput, horizon: f64, dt: f64) -> Result<FluidTrajectory, FluidError> {
    if !(dt.is_finite() && dt > 0.0 && horizon.is_finite() && dt <= horizon) {
        return Err(FluidError::InvalidInput(format!(
            "need 0 < dt <= horizon, got dt = {dt}, horizon = {horizon}"
        )));
    }
    let (nu, eta) = input.compile()?;
    let n = (horizon / dt - 1e-9).ceil() as usize;
    let lambda = input.lambda;
    let service = Some(&input.service);
    let patience = input.patience.as_ref();

    // cell averages of 1 − G^s and g^s over [mΔ, (m+1)Δ]
    let is_s: Vec<f64> = (0..=n).map(|m| input.service.integrated_survival(m as f64 * dt)).collect();
    let g_s: Vec<f64> = (0..=n).map(|m| input.service.cdf(m as f64 * dt)).collect();
    let sbar: Vec<f64> = is_s.windows(2).map(|w| (w[1] - w[0]) / dt).collect();
    let gbar: Vec<f64> = g_s.windows(2).map(|w| (w[1] - w[0]) / dt).collect();

    let mut warnings = Vec::new();
    if let Some(p) = patience {
        if p.support_end().is_finite() {
            warnings.push(format!(
                "patience hazard is unbounded near {}; results may need a smaller step",
                p.support_end()
            ));
        }
    }

    let cap = n + 1;
    let mut tr = FluidTrajectory {
        dt,
        t: Vec::with_capacity(cap),
        x: Vec::with_capacity(cap),
        q: Vec::with_capacity(cap),
        b: Vec::with_capacity(cap),
        k: Vec::with_capacity(cap),
        r: Vec::with_capacity(cap),
        d: Vec::with_capacity(cap),
        eta_mass: Vec::with_capacity(cap),
        hs_nu: Vec::with_capacity(cap),
        reneging_rate: Vec::with_capacity(cap),
        chi: Vec::with_capacity(cap),
        entry_rate: Vec::with_capacity(n),
        input: input.clone(),
        nu_part: nu.clone(),
        warnings,
    };

    let b0 = nu.mass(service, 0.0);
    let q0 = (input.x0 - 1.0).max(0.0);
    let (rate0, chi0) = renege_flux(&eta, patience, lambda, 0.0, q0)?;
    tr.t.push(0.0);
    tr.x.push(input.x0);
    tr.q.push(q0);
    tr.b.push(b0);
    tr.k.push(0.0);
    tr.r.push(0.0);
    tr.d.push(0.0);
    tr.eta_mass.push(eta_mass(&eta, patience, lambda, 0.0));
    tr.hs_nu.push(nu.outflow(service, 0.0));
    tr.reneging_rate.push(rate0);
    tr.chi.push(chi0);

    let mut entries: Vec<f64> = Vec::with_capacity(n);
    let (mut q, mut k_cum, mut r_cum, mut rate) = (q0, 0.0, 0.0, rate0);
    for step in 0..n {
        let t1 = (step + 1) as f64 * dt;
        let mut b_aged = nu.mass(service, t1);
        let mut flux = nu.outflow(service, t1);
        for (j, e) in entries.iter().enumerate() {
            let m = step - j;
            b_aged += e * sbar[m];
            flux += e * gbar[m];
        }
        let room = (1.0 - b_aged).max(0.0) / sbar[0];
        let avail = q + lambda * dt;
        // trapezoidal reneging with an explicit predictor
        let r_pred = (dt * rate).min(avail);
        let e_pred = room.min(avail - r_pred).max(0.0);
        let (rate_pred, _) = renege_flux(&eta, patience, lambda, t1, avail - r_pred - e_pred)?;
        let r = (0.5 * dt * (rate + rate_pred)).min(avail);
        let e = room.min(avail - r).max(0.0);
        entries.push(e);
        let b = b_aged + e * sbar[0];
        q = (avail - r - e).max(0.0);
        k_cum += e;
        r_cum += r;
        let (rate_next, chi) = renege_flux(&eta, patience, lambda, t1, q)?;
        rate = rate_next;
        let x = b + q;
        if !(x.is_finite() && b.is_finite() && rate.is_finite()) {
            return Err(FluidError::NonFinite { node: step + 1, t: t1 });
        }
        tr.t.push(t1);
        tr.x.push(x);
        tr.q.push(q);
        tr.b.push(b);
        tr.k.push(k_cum);
        tr.r.push(r_cum);
        tr.d.push(b0 + k_cum - b);
        tr.eta_mass.push(eta_mass(&eta, patience, lambda, t1));
        tr.hs_nu.push(flux + e * gbar[0]);
        tr.reneging_rate.push(rate);
        tr.chi.push(chi);
        tr.entry_rate.push(e / dt);
    }
    Ok(tr)
}

impl FluidTrajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn last(&self) -> usize {
        self.t.len() - 1
    }

    /// Index of the node closest to `t`.
    pub fn node(&self, t: f64) -> usize {
        ((t / self.dt).round().max(0.0) as usize).min(self.last())
    }

    pub fn defects(&self) -> FluidDefects {
        let lambda = self.input.lambda;
        let (x0, q0) = (self.x[0], self.q[0]);
        let mut out = FluidDefects::default();
        let (mut int_hs, mut int_r) = (0.0, 0.0);
        for i in 0..self.len() {
            if i > 0 {
                int_hs += 0.5 * self.dt * (self.hs_nu[i - 1] + self.hs_nu[i]);
                int_r += 0.5 * self.dt * (self.reneging_rate[i - 1] + self.reneging_rate[i]);
            }
            let (x, q, b, t) = (self.x[i], self.q[i], self.b[i], self.t[i]);
            out.non_idling = out.non_idling.max((1.0 - b - (1.0 - x).max(0.0)).abs());
            out.conservation = out
                .conservation
                .max((q0 + lambda * t - q - self.k[i] - self.r[i]).abs());
            out.queue = out.queue.max((q - (x - 1.0).max(0.0)).abs());
            out.queue_eta = out.queue_eta.max((q - self.eta_mass[i]).max(0.0));
            out.x_equation = out
                .x_equation
                .max((x - x0 - lambda * t + int_hs + int_r).abs());
        }
        out
    }

    /// Rows every `stride` nodes (the last node always included).
    pub fn to_csv(&self, stride: usize) -> String {
        let stride = stride.max(1);
        let mut s = String::from(FLUID_HEADER);
        s.push('\n');
        let mut push = |i: usize| {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                self.t[i], self.x[i], self.q[i], self.b[i], self.k[i], self.r[i], self.eta_mass[i], self.hs_nu[i]
            ));
        };
        for i in (0..self.len()).step_by(stride) {
            push(i);
        }
        if self.last() % stride != 0 {
            push(self.last());
        }
        s
    }
}

/// Density `u` of the renewal function of `service` on the grid `mΔ`,
/// `m = 0..=n`, solving `u = g + g ∗ u` with the trapezoid rule.
pub fn renewal_density(service: &Distribution, dt: f64, n: usize) -> Vec<f64> {
    let g: Vec<f64> = (0..=n).map(|m| service.density(m as f64 * dt)).collect();
    let mut u = Vec::with_capacity(n + 1);
    u.push(g[0]);
    let denom = 1.0 - 0.5 * dt * g[0];
    for i in 1..=n {
        let mut conv = 0.5 * g[i] * u[0];
        for m in 1..i {
            conv += g[i - m] * u[m];
        }
        u.push((g[i] + dt * conv) / denom);
    }
    u
}

/// Entries `K̄` recomputed from the renewal representation
/// `K̄ = A + A ∗ u^s`, with `A(t) = B̄(t) − B̄(0) + ⟨1,ν̄₀⟩ − ν̄₀-part(t)`.
pub fn solve_k_renewal(tr: &FluidTrajectory) -> Vec<f64> {
    let service = &tr.input.service;
    let n = tr.last();
    let dt = tr.dt;
    let u = renewal_density(service, dt, n);
    let m0 = tr.nu_part.mass(Some(service), 0.0);
    let a: Vec<f64> = (0..=n)
        .map(|i| tr.b[i] - tr.b[0] + m0 - tr.nu_part.mass(Some(service), tr.t[i]))
        .collect();
    (0..=n)
        .map(|i| {
            if i == 0 {
                return a[0];
            }
            let mut conv = 0.5 * (a[i] * u[0] + a[0] * u[i]);
            for m in 1..i {
                conv += a[i - m] * u[m];
            }
            a[i] + dt * conv
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp(rate: f64) -> Distribution {
        Distribution::exponential(rate).unwrap()
    }

    fn erlang_input() -> FluidInput {
        FluidInput {
            lambda: 1.0,
            x0: 1.0,
            nu0: InitialData::dirac(0.0, 1.0),
            eta0: InitialData::Zero,
            service: Distribution::erlang(2, 2.0).unwrap(),
            patience: None,
        }
    }

    #[test]
    fn eta_evolve_from_zero_approaches_lambda_theta() {
        let input = FluidInput {
            lambda: 1.0,
            x0: 0.0,
            nu0: InitialData::Zero,
            eta0: InitialData::Zero,
            service: exp(1.0),
            patience: Some(exp(1.0)),
        };
        let m = eta_evolve(&input, 40.0).unwrap();
        assert!((m.total_mass() - 1.0).abs() < 1e-12);
        let m3 = eta_evolve(&input, 3.0).unwrap();
        assert!((m3.total_mass() - (1.0 - (-3.0f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn eta_equilibrium_is_fixed() {
        let p = Distribution::erlang(3, 1.5).unwrap();
        let input = FluidInput {
            lambda: 2.0,
            x0: 2.0,
            nu0: InitialData::Density(exp(1.0).equilibrium_measure(1.0).unwrap()),
            eta0: InitialData::Density(p.equilibrium_measure(2.0).unwrap()),
            service: exp(1.0),
            patience: Some(p.clone()),
        };
        let star = p.equilibrium_measure(2.0).unwrap();
        for t in [0.0, 0.3, 1.0, 7.0] {
            let m = eta_evolve(&input, t).unwrap();
            for a in [0.1, 0.5, 1.0, 2.5, 6.0] {
                assert!((m.cumulative(a) - star.cumulative(a)).abs() < 1e-12, "t={t} a={a}");
            }
        }
    }

    #[test]
    fn eta_mass_decays_without_arrivals() {
        let input = FluidInput {
            lambda: 0.0,
            x0: 0.5,
            nu0: InitialData::dirac(0.2, 0.5),
            eta0: InitialData::Atoms(vec![(0.1, 0.3), (1.0, 0.4)]),
            service: exp(1.0),
            patience: Some(Distribution::uniform(0.0, 3.0).unwrap()),
        };
        let mut prev = f64::INFINITY;
        for i in 0..30 {
            let m = eta_evolve(&input, 0.1 * i as f64).unwrap().total_mass();
            assert!(m <= prev + 1e-15);
            prev = m;
        }
    }

    #[test]
    fn eta_evolve_ignores_service() {
        let mut a = erlang_input();
        a.patience = Some(exp(0.7));
        a.eta0 = InitialData::Atoms(vec![(0.4, 0.5)]);
        let mut b = a.clone();
        b.service = exp(3.0);
        for t in [0.5, 2.0] {
            let (ma, mb) = (eta_evolve(&a, t).unwrap(), eta_evolve(&b, t).unwrap());
            assert_eq!(ma.total_mass().to_bits(), mb.total_mass().to_bits());
            assert_eq!(ma.quantile(0.3).unwrap().to_bits(), mb.quantile(0.3).unwrap().to_bits());
        }
    }

    fn star_measure(lambda: f64, gamma: f64) -> TransportedMeasure {
        let p = exp(gamma);
        let input = FluidInput {
            lambda,
            x0: 0.0,
            nu0: InitialData::Zero,
            eta0: InitialData::Density(p.equilibrium_measure(lambda).unwrap()),
            service: exp(1.0),
            patience: Some(p),
        };
        eta_evolve(&input, 0.0).unwrap()
    }

    #[test]
    fn reneging_rate_examples() {
        let m = star_measure(2.0, 1.0);
        assert_eq!(reneging_rate(0.7, &m).unwrap(), 0.0);
        assert!((reneging_rate(2.0, &m).unwrap() - 1.0).abs() < 1e-12);
        let p = Distribution::uniform(0.0, 4.0).unwrap();
        let input = FluidInput {
            lambda: 1.5,
            x0: 0.0,
            nu0: InitialData::Zero,
            eta0: InitialData::Density(p.equilibrium_measure(1.5).unwrap()),
            service: exp(1.0),
            patience: Some(p.clone()),
        };
        let m = eta_evolve(&input, 0.0).unwrap();
        let level = 1.2;
        let y_form = crate::numeric::simpson(|y| p.hazard(m.quantile(y).unwrap()).unwrap(), 0.0, level, 2000);
        let direct = reneging_rate(1.0 + level, &m).unwrap();
        let closed = 1.5 * p.cdf(p.equilibrium_measure(1.5).unwrap().quantile(level).unwrap());
        assert!((direct - closed).abs() < 1e-12);
        assert!((direct - y_form).abs() < 1e-6, "{direct} vs {y_form}");
    }

    #[test]
    fn level_above_mass_is_an_error() {
        let m = star_measure(1.0, 1.0);
        assert!(matches!(reneging_rate(3.0, &m), Err(FluidError::LevelAboveMass { .. })));
    }

    #[test]
    fn input_space_is_checked() {
        let mut bad = erlang_input();
        bad.x0 = 0.5; // service mass 1 but x0 < 1
        assert!(matches!(solve_fluid(&bad, 1.0, 0.01), Err(FluidError::InvalidInput(_))));
        let mut bad = erlang_input();
        bad.x0 = 2.0;
        bad.patience = Some(exp(1.0));
        assert!(solve_fluid(&bad, 1.0, 0.01).is_err());
        assert!(solve_fluid(&erlang_input(), 1.0, 2.0).is_err());
    }

    #[test]
    fn erlang_example() {
        let tr = solve_fluid(&erlang_input(), 10.0, 1e-3).unwrap();
        let worst = tr
            .t
            .iter()
            .zip(&tr.hs_nu)
            .map(|(t, h)| (h - (1.0 - (-4.0 * t).exp())).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 5e-3, "hs_nu error {worst}");
        let last = tr.last();
        assert!((tr.q[last] - 0.25).abs() <= 1e-2, "Q = {}", tr.q[last]);
        assert!((tr.x[last] - 1.25).abs() <= 1e-2);
        assert!(tr.r.iter().all(|&r| r == 0.0));
        assert!(tr.defects().max() < 1e-3);
    }

    #[test]
    fn renewal_density_oracles() {
        let u = renewal_density(&Distribution::erlang(2, 2.0).unwrap(), 1e-3, 10_000);
        let worst = u
            .iter()
            .enumerate()
            .map(|(m, v)| (v - (1.0 - (-4e-3 * m as f64).exp())).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 1e-4, "{worst}");
        for mu in [0.5, 1.0, 2.5] {
            let u = renewal_density(&exp(mu), 1e-3, 10_000);
            assert_eq!(u[0], mu);
            let worst = u.iter().map(|v| (v - mu).abs()).fold(0.0, f64::max);
            // trapezoid error grows like Δ²μ⁴t/12
            let bound = if mu <= 1.0 { 1e-6 } else { 1.01e-6 * mu.powi(4) * 10.0 / 12.0 };
            assert!(worst <= bound, "mu={mu}: {worst:e}");
        }
    }

    #[test]
    fn k_renewal_matches_scheme() {
        let tr = solve_fluid(&erlang_input(), 10.0, 1e-3).unwrap();
        let kr = solve_k_renewal(&tr);
        let worst = kr.iter().zip(&tr.k).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst <= 5e-3, "{worst}");
    }

    #[test]
    fn no_arrivals_no_entries() {
        let input = FluidInput {
            lambda: 0.0,
            x0: 0.6,
            nu0: InitialData::Atoms(vec![(0.0, 0.3), (0.5, 0.3)]),
            eta0: InitialData::Zero,
            service: exp(1.0),
            patience: Some(exp(1.0)),
        };
        let tr = solve_fluid(&input, 5.0, 1e-2).unwrap();
        assert!(tr.k.iter().all(|&k| k == 0.0));
        assert!(solve_k_renewal(&tr).iter().all(|k| k.abs() < 1e-12));
    }

    #[test]
    fn subcritical_invariant_state_is_fixed() {
        let s = Distribution::erlang(2, 2.0).unwrap();
        let p = Distribution::uniform(0.0, 2.0).unwrap();
        let input = FluidInput {
            lambda: 0.5,
            x0: 0.5,
            nu0: InitialData::Density(s.equilibrium_measure(0.5).unwrap()),
            eta0: InitialData::Density(p.equilibrium_measure(0.5).unwrap()),
            service: s,
            patience: Some(p),
        };
        let dt = 1e-3;
        let tr = solve_fluid(&input, 20.0, dt).unwrap();
        for i in 0..tr.len() {
            assert!((tr.x[i] - 0.5).abs() <= 10.0 * dt);
            assert!((tr.b[i] - 0.5).abs() <= 10.0 * dt);
            assert!((tr.eta_mass[i] - 0.5).abs() <= 10.0 * dt);
        }
        let kr = solve_k_renewal(&tr);
        let last = tr.last();
        assert!((kr[last] - 0.5 * 20.0).abs() < 5e-3 * 20.0);
    }

    #[test]
    fn interchange_fluid_stays_at_two() {
        let input = FluidInput {
            lambda: 1.0,
            x0: 2.0,
            nu0: InitialData::Density(exp(1.0).equilibrium_measure(1.0).unwrap()),
            eta0: InitialData::Density(DensityMeasure::grid(1.0, vec![1.0, 1.0]).unwrap()),
            service: exp(1.0),
            patience: Some(Distribution::shifted(3.0, exp(1.0)).unwrap()),
        };
        let tr = solve_fluid(&input, 3.0, 1e-3).unwrap();
        assert!(tr.x.iter().all(|x| (x - 2.0).abs() <= 5e-3));
        assert!(tr.r.iter().all(|&r| r.abs() < 1e-12));
    }

    #[test]
    fn refinement_halves_defect() {
        let mut input = erlang_input();
        input.patience = Some(Distribution::erlang(2, 1.0).unwrap());
        input.x0 = 1.5;
        input.eta0 = InitialData::Density(DensityMeasure::grid(0.01, vec![5.0; 201]).unwrap());
        input.nu0 = InitialData::Density(Distribution::erlang(2, 2.0).unwrap().equilibrium_measure(1.0).unwrap());
        input.lambda = 1.3;
        let d1 = solve_fluid(&input, 5.0, 4e-3).unwrap().defects().max();
        let d2 = solve_fluid(&input, 5.0, 2e-3).unwrap().defects().max();
        assert!(d1 >= 2.0 * d2, "{d1} -> {d2}");
    }

    fn alpha_input(alpha: f64) -> FluidInput {
        let cells = 1000;
        let dx = alpha / cells as f64;
        let q = (0..=cells).map(|i| (1.0 + 2.0 * i as f64 * dx) / (alpha + alpha * alpha)).collect();
        FluidInput {
            nu0: InitialData::Density(DensityMeasure::grid(dx, q).unwrap()),
            ..erlang_input()
        }
    }

    #[test]
    fn absolutely_continuous_variant() {
        let tr = solve_fluid(&alpha_input(0.5), 10.0, 1e-3).unwrap();
        let q = tr.q[tr.last()];
        assert!((q - 1.0 / 12.0).abs() <= 1e-2, "Q = {q}");
        assert!(tr.defects().max() < 1e-3);
    }

    #[test]
    fn erlang_refinement_order() {
        let err = |dt: f64| {
            let tr = solve_fluid(&erlang_input(), 5.0, dt).unwrap();
            tr.t.iter()
                .zip(&tr.hs_nu)
                .map(|(t, h)| (h - (1.0 - (-4.0 * t).exp())).abs())
                .fold(0.0, f64::max)
        };
        let e: Vec<f64> = [8e-3, 4e-3, 2e-3].iter().map(|&dt| err(dt)).collect();
        for w in e.windows(2) {
            assert!((w[0] / w[1]).log2() >= 1.0 - 0.05, "{e:?}");
        }
    }
}
