//! Invariant manifold `I_λ` of the fluid equations and the set `B_λ` of
//! admissible total masses in the critical and overloaded regimes.

use serde::Serialize;
use thiserror::Error;

use crate::dist::Distribution;
use crate::fluid::{solve_fluid, FluidError, FluidInput, InitialData};
use crate::numeric::{bisect_first, bisect_last};

pub const DEFAULT_TOL: f64 = 1e-8;

/// Points used to check monotonicity of the `B_λ` objective.
const MONOTONE_GRID: usize = 1000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InvariantError {
    #[error("arrival rate must be positive and finite, got {0}")]
    InvalidLambda(f64),
    #[error("service law must have mean 1, got {0}")]
    ServiceMean(f64),
    #[error("without abandonment the invariant state is non-unique or undefined")]
    NoAbandonment,
    #[error("target {target} not reached on [1, {hi}]")]
    Unreachable { target: f64, hi: f64 },
    #[error("objective decreases near x = {0}")]
    NotMonotone(f64),
    #[error(transparent)]
    Fluid(#[from] FluidError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Subcritical,
    CriticalOrSuper,
}

/// `x ↦ G^r((F^{λη*})^{-1}((x − 1)⁺))`.
pub fn b_lambda_objective(patience: &Distribution, lambda: f64, x: f64) -> f64 {
    let level = (x - 1.0).max(0.0);
    patience.cdf(patience.integrated_survival_inverse(level / lambda))
}

/// `B_λ = [b_l, b_r]` for `λ ≥ 1`, each end located to `tol`.
pub fn compute_b_lambda(patience: &Distribution, lambda: f64, tol: f64) -> Result<(f64, f64), InvariantError> {
    if !(lambda.is_finite() && lambda >= 1.0) {
        return Err(InvariantError::InvalidLambda(lambda));
    }
    let target = (lambda - 1.0) / lambda;
    let hi = 1.0 + lambda * patience.mean();
    let phi = |x: f64| b_lambda_objective(patience, lambda, x);
    let mut prev = phi(1.0);
    for i in 1..=MONOTONE_GRID {
        let x = 1.0 + (hi - 1.0) * i as f64 / MONOTONE_GRID as f64;
        let v = phi(x);
        if v < prev - 1e-12 {
            return Err(InvariantError::NotMonotone(x));
        }
        prev = v;
    }
    if phi(hi) < target {
        return Err(InvariantError::Unreachable { target, hi });
    }
    let tol = tol.min(DEFAULT_TOL) * 1e-2;
    let b_l = bisect_first(|x| phi(x) >= target, 1.0, hi, tol);
    let b_r = bisect_last(|x| phi(x) <= target, b_l, hi, tol);
    Ok((b_l, b_r.max(b_l)))
}

/// `I_λ`: the singleton `(λ, λν*, λη*)` when `λ < 1`, otherwise
/// `{(x, ν*, λη*) : x ∈ B_λ}`.
#[derive(Debug, Clone, PartialEq)]
pub struct InvariantSet {
    pub lambda: f64,
    pub regime: Regime,
    pub b_l: f64,
    pub b_r: f64,
    service: Distribution,
    patience: Distribution,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvariantSummary {
    pub lambda: f64,
    pub regime: Regime,
    pub b_l: f64,
    pub b_r: f64,
    pub unique: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_star: Option<f64>,
    pub nu_mass: f64,
    pub eta_mass: f64,
}

pub fn invariant_manifold(
    lambda: f64,
    service: &Distribution,
    patience: Option<&Distribution>,
) -> Result<InvariantSet, InvariantError> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(InvariantError::InvalidLambda(lambda));
    }
    if (service.mean() - 1.0).abs() > 1e-9 {
        return Err(InvariantError::ServiceMean(service.mean()));
    }
    let patience = patience.ok_or(InvariantError::NoAbandonment)?;
    let (regime, b_l, b_r) = if lambda < 1.0 {
        (Regime::Subcritical, lambda, lambda)
    } else {
        let (l, r) = compute_b_lambda(patience, lambda, DEFAULT_TOL)?;
        (Regime::CriticalOrSuper, l, r)
    };
    Ok(InvariantSet {
        lambda,
        regime,
        b_l,
        b_r,
        service: service.clone(),
        patience: patience.clone(),
    })
}

impl InvariantSet {
    pub fn is_unique(&self, tol: f64) -> bool {
        self.regime == Regime::Subcritical || self.b_r - self.b_l <= tol
    }

    /// `⟨1, ν̄⟩ = λ ∧ 1`.
    pub fn nu_mass(&self) -> f64 {
        self.lambda.min(1.0)
    }

    /// `⟨1, λη*⟩ = λθ^r`.
    pub fn eta_mass(&self) -> f64 {
        self.lambda * self.patience.mean()
    }

    pub fn x_star(&self, tol: f64) -> Option<f64> {
        self.is_unique(tol).then(|| 0.5 * (self.b_l + self.b_r))
    }

    /// The invariant state with total mass `x`, as fluid initial data.
    pub fn state(&self, x: f64) -> FluidInput {
        let service_scale = self.nu_mass();
        FluidInput {
            lambda: self.lambda,
            x0: x,
            nu0: InitialData::Density(
                self.service
                    .equilibrium_measure(service_scale)
                    .expect("finite service mean"),
            ),
            eta0: InitialData::Density(
                self.patience
                    .equilibrium_measure(self.lambda)
                    .expect("finite patience mean"),
            ),
            service: self.service.clone(),
            patience: Some(self.patience.clone()),
        }
    }

    pub fn summary(&self, tol: f64) -> InvariantSummary {
        InvariantSummary {
            lambda: self.lambda,
            regime: self.regime,
            b_l: self.b_l,
            b_r: self.b_r,
            unique: self.is_unique(tol),
            x_star: self.x_star(tol),
            nu_mass: self.nu_mass(),
            eta_mass: self.eta_mass(),
        }
    }
}

/// Largest drift of `(X̄, ⟨1,ν̄⟩, ⟨1,η̄⟩)` away from the starting state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FixedPointReport {
    pub x: f64,
    pub nu_mass: f64,
    pub eta_mass: f64,
}

impl FixedPointReport {
    pub fn max(&self) -> f64 {
        self.x.max(self.nu_mass).max(self.eta_mass)
    }
}

/// Runs the fluid solver from `state` and measures how far it moves.
pub fn verify_fixed_point(state: &FluidInput, horizon: f64, dt: f64) -> Result<FixedPointReport, InvariantError> {
    let tr = solve_fluid(state, horizon, dt)?;
    let sup = |v: &[f64]| v.iter().map(|a| (a - v[0]).abs()).fold(0.0, f64::max);
    Ok(FixedPointReport {
        x: sup(&tr.x),
        nu_mass: sup(&tr.b),
        eta_mass: sup(&tr.eta_mass),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fluid::{eta_evolve, reneging_rate};

    fn exp(rate: f64) -> Distribution {
        Distribution::exponential(rate).unwrap()
    }

    fn flat() -> Distribution {
        Distribution::piecewise_linear(&[(0.0, 0.0), (1.0, 0.5), (2.0, 0.5), (3.0, 1.0)]).unwrap()
    }

    #[test]
    fn exponential_closed_form() {
        for (lambda, gamma) in [(2.0, 1.0), (1.5, 0.5), (1.0, 1.0), (3.0, 2.0)] {
            let (l, r) = compute_b_lambda(&exp(gamma), lambda, 1e-8).unwrap();
            let x = 1.0 + (lambda - 1.0) / gamma;
            assert!((l - x).abs() <= 1e-8 && (r - x).abs() <= 1e-8, "{lambda},{gamma}: [{l}, {r}]");
        }
    }

    #[test]
    fn critical_strictly_increasing_is_one() {
        let (l, r) = compute_b_lambda(&Distribution::erlang(2, 1.0).unwrap(), 1.0, 1e-8).unwrap();
        assert!((l - 1.0).abs() <= 1e-8 && (r - 1.0).abs() <= 1e-8);
    }

    #[test]
    fn flat_patience_interval() {
        let (l, r) = compute_b_lambda(&flat(), 2.0, 1e-8).unwrap();
        assert!((l - 2.5).abs() <= 1e-6, "{l}");
        assert!((r - 3.5).abs() <= 1e-6, "{r}");
    }

    #[test]
    fn manifold_examples() {
        let s = exp(1.0);
        let sub = invariant_manifold(0.5, &s, Some(&Distribution::uniform(0.0, 2.0).unwrap())).unwrap();
        assert_eq!(sub.regime, Regime::Subcritical);
        assert_eq!((sub.b_l, sub.b_r, sub.nu_mass()), (0.5, 0.5, 0.5));
        assert!(sub.is_unique(0.0));
        let sup = invariant_manifold(2.0, &s, Some(&exp(1.0))).unwrap();
        assert!(sup.is_unique(1e-6));
        assert!((sup.x_star(1e-6).unwrap() - 2.0).abs() < 1e-8);
        assert_eq!(sup.nu_mass(), 1.0);
        let wide = invariant_manifold(2.0, &s, Some(&flat())).unwrap();
        assert!(!wide.is_unique(1e-6));
        assert!((wide.b_r - wide.b_l - 1.0).abs() < 1e-6);
        assert_eq!(invariant_manifold(1.0, &s, None).unwrap_err(), InvariantError::NoAbandonment);
        assert!(matches!(invariant_manifold(0.0, &s, Some(&exp(1.0))), Err(InvariantError::InvalidLambda(_))));
        assert!(matches!(invariant_manifold(2.0, &exp(2.0), Some(&exp(1.0))), Err(InvariantError::ServiceMean(_))));
    }

    #[test]
    fn reneging_balances_excess_on_b_lambda() {
        for (lambda, p) in [(2.0, exp(1.0)), (2.0, flat()), (1.7, Distribution::erlang(3, 2.0).unwrap())] {
            let set = invariant_manifold(lambda, &exp(1.0), Some(&p)).unwrap();
            for x in [set.b_l, 0.5 * (set.b_l + set.b_r), set.b_r] {
                let state = set.state(x);
                let eta = eta_evolve(&state, 0.0).unwrap();
                let rate = reneging_rate(x, &eta).unwrap();
                assert!((rate - (lambda - 1.0)).abs() < 1e-6, "λ={lambda} x={x}: {rate}");
            }
        }
    }

    #[test]
    fn fixed_points_hold() {
        let dt = 1e-3;
        let s = Distribution::erlang(2, 2.0).unwrap();
        let sub = invariant_manifold(0.5, &s, Some(&exp(1.0))).unwrap();
        let rep = verify_fixed_point(&sub.state(0.5), 20.0, dt).unwrap();
        assert!(rep.max() <= 10.0 * dt, "{rep:?}");
        let sup = invariant_manifold(2.0, &exp(1.0), Some(&exp(1.0))).unwrap();
        let rep = verify_fixed_point(&sup.state(2.0), 20.0, dt).unwrap();
        assert!(rep.max() <= 10.0 * dt, "{rep:?}");
        let moved = verify_fixed_point(&FluidInput { x0: 0.7, nu0: InitialData::Density(s.equilibrium_measure(0.7).unwrap()), ..sub.state(0.5) }, 20.0, dt).unwrap();
        assert!(moved.x > 0.05);
    }
}
