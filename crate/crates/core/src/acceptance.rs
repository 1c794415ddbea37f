//! The acceptance suite: nine checks with fixed tolerances, run by the
//! `validate` subcommand and by the `acceptance` test target.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{parse_config, ScenarioConfig};
use crate::dist::Distribution;
use crate::engine::{init_state, run, ArrivalStart, InitialCondition, Model, RunControl};
use crate::fluid::{renewal_density, solve_fluid, solve_k_renewal, FluidInput};
use crate::harness::run_scenario;
use crate::invariant::{compute_b_lambda, invariant_manifold, verify_fixed_point};
use crate::measure::PointMeasure;
use crate::rng::replication_seed;
use crate::scenarios;
use crate::stationary::{
    convergence_horizon, convergence_study, estimate_stationary, interchange_demo, mmn_stationary_pmf,
    representation_check, tv_distance, StationaryControl,
};

/// Root seed used when none is given.
pub const DEFAULT_SEED: u64 = 20_240_601;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionResult {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    #[serde(skip)]
    pub seconds: f64,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        format!(
            "criterion {} [{}] {}: {} ({:.1}s)",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail,
            self.seconds
        )
    }
}

fn timed(id: u8, name: &'static str, f: impl FnOnce() -> Result<(bool, String), String>) -> CriterionResult {
    let start = Instant::now();
    let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    CriterionResult {
        id,
        name,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn exp(rate: f64) -> Distribution {
    Distribution::exponential(rate).expect("valid rate")
}

fn sup<I: IntoIterator<Item = f64>>(it: I) -> f64 {
    it.into_iter().fold(0.0, f64::max)
}

/// Systems used by the identity suite: (label, model, initial, horizon).
fn identity_mixes() -> Vec<(&'static str, Model, InitialCondition, f64)> {
    let pw = Distribution::piecewise_linear(&[(0.0, 0.0), (0.5, 0.3), (2.0, 1.0)]).expect("valid knots");
    let shifted = Distribution::shifted(0.2, Distribution::uniform(0.0, 2.0).expect("valid")).expect("valid");
    vec![
        (
            "M/M/20+M overloaded",
            Model {
                n_servers: 20,
                interarrival: exp(25.0),
                service: exp(1.0),
                patience: Some(exp(1.0)),
            },
            InitialCondition::stationary_empty(),
            4000.0,
        ),
        (
            "Erlang/Erlang/10+Uniform",
            Model {
                n_servers: 10,
                interarrival: Distribution::erlang(3, 36.0).expect("valid"),
                service: Distribution::erlang(2, 2.0).expect("valid"),
                patience: Some(Distribution::uniform(0.0, 2.0).expect("valid")),
            },
            InitialCondition::empty(),
            8000.0,
        ),
        (
            "Uniform/PiecewiseLinear/5+Shifted from a full system",
            Model {
                n_servers: 5,
                interarrival: Distribution::uniform(0.0, 2.0 / 6.5).expect("valid"),
                service: pw,
                patience: Some(shifted),
            },
            InitialCondition {
                service_ages: vec![0.1, 0.4, 0.9, 1.2, 1.5],
                queue_waits: vec![0.05, 0.3, 0.31],
                potential_waits: vec![0.7],
                arrivals: ArrivalStart::Aged(0.1),
            },
            15000.0,
        ),
        (
            "M/Uniform/8 without abandonment",
            Model {
                n_servers: 8,
                interarrival: exp(6.0),
                service: Distribution::uniform(0.5, 1.5).expect("valid"),
                patience: None,
            },
            InitialCondition::stationary_empty(),
            15000.0,
        ),
        (
            "M/Erlang/50+Erlang critical",
            Model {
                n_servers: 50,
                interarrival: exp(50.0),
                service: Distribution::erlang(3, 3.0).expect("valid"),
                patience: Some(Distribution::erlang(2, 1.0).expect("valid")),
            },
            InitialCondition::stationary_empty(),
            2000.0,
        ),
    ]
}

pub const IDENTITY_SEEDS: u64 = 5;

pub fn criterion_1(seed: u64) -> CriterionResult {
    timed(1, "exact-identity suite", || {
        let mixes = identity_mixes();
        let jobs: Vec<(usize, u64)> = (0..mixes.len())
            .flat_map(|m| (0..IDENTITY_SEEDS).map(move |s| (m, s)))
            .collect();
        let reports = jobs
            .par_iter()
            .map(|&(m, s)| {
                let (_, model, init, horizon) = &mixes[m];
                let mut state = init_state(model.clone(), init, replication_seed(seed, s)).map_err(err)?;
                run(&mut state, &RunControl::new(*horizon).audited(), &mut []).map_err(err)
            })
            .collect::<Result<Vec<_>, String>>()?;
        let events: u64 = reports.iter().map(|r| r.events).sum();
        let audited: u64 = reports.iter().map(|r| r.audited).sum();
        let violations: u64 = reports.iter().map(|r| r.violations).sum();
        let passed = events >= 1_000_000 && audited == events && violations == 0;
        Ok((
            passed,
            format!(
                "{events} events over {} mixes x {IDENTITY_SEEDS} seeds, {violations} violations",
                mixes.len()
            ),
        ))
    })
}

pub fn criterion_2() -> CriterionResult {
    timed(2, "Erlang fluid example", || {
        let input = scenarios::erlang_fluid().fluid_input().map_err(err)?;
        let tr = solve_fluid(&input, 10.0, 1e-3).map_err(err)?;
        let hs = sup(tr.t.iter().zip(&tr.hs_nu).map(|(t, h)| (h - (1.0 - (-4.0 * t).exp())).abs()));
        let i = tr.last();
        let q = tr.q[i];
        let x = tr.x[i];
        let alpha = scenarios::erlang_fluid_alpha().fluid_input().map_err(err)?;
        let tr_a = solve_fluid(&alpha, 10.0, 1e-3).map_err(err)?;
        let qa = tr_a.q[tr_a.last()];
        let passed = hs <= 5e-3 && (q - 0.25).abs() <= 1e-2 && (x - 1.25).abs() <= 1e-2 && (qa - 1.0 / 12.0).abs() <= 1e-2;
        Ok((
            passed,
            format!("sup|hs_nu - (1-e^-4t)| = {hs:.2e}, Q(10) = {q:.5}, X(10) = {x:.5}, alpha variant Q(10) = {qa:.5}"),
        ))
    })
}

pub fn criterion_3() -> CriterionResult {
    timed(3, "renewal density", || {
        let u = renewal_density(&Distribution::erlang(2, 2.0).expect("valid"), 1e-3, 10_000);
        let du = sup(u.iter().enumerate().map(|(m, v)| (v - (1.0 - (-4e-3 * m as f64).exp())).abs()));
        let input = scenarios::erlang_fluid().fluid_input().map_err(err)?;
        let tr = solve_fluid(&input, 10.0, 1e-3).map_err(err)?;
        let dk = sup(solve_k_renewal(&tr).iter().zip(&tr.k).map(|(a, b)| (a - b).abs()));
        Ok((
            du <= 1e-4 && dk <= 5e-3,
            format!("sup|u - (1-e^-4t)| = {du:.2e}, sup|K renewal - K scheme| = {dk:.2e}"),
        ))
    })
}

pub fn criterion_4() -> CriterionResult {
    timed(4, "invariant manifold", || {
        let mut worst_closed: f64 = 0.0;
        for (lambda, gamma) in [(2.0, 1.0), (1.5, 0.5), (1.0, 1.0)] {
            let (l, r) = compute_b_lambda(&exp(gamma), lambda, 1e-8).map_err(err)?;
            let x = 1.0 + (lambda - 1.0) / gamma;
            worst_closed = worst_closed.max((l - x).abs()).max((r - x).abs());
        }
        let flat = scenarios::flat_patience().patience_law().map_err(err)?.expect("patience given");
        let (bl, br) = compute_b_lambda(&flat, 2.0, 1e-8).map_err(err)?;
        let flat_err = (bl - 2.5).abs().max((br - 3.5).abs());
        let dt = 1e-3;
        let sub = invariant_manifold(0.5, &Distribution::erlang(2, 2.0).expect("valid"), Some(&exp(1.0))).map_err(err)?;
        let d_sub = verify_fixed_point(&sub.state(0.5), 20.0, dt).map_err(err)?.max();
        let sup_set = invariant_manifold(2.0, &exp(1.0), Some(&exp(1.0))).map_err(err)?;
        let d_sup = verify_fixed_point(&sup_set.state(2.0), 20.0, dt).map_err(err)?.max();
        let passed = worst_closed <= 1e-8 && flat_err <= 1e-6 && d_sub <= 10.0 * dt && d_sup <= 10.0 * dt;
        Ok((
            passed,
            format!(
                "closed-form error {worst_closed:.1e}, B_2 = [{bl:.7}, {br:.7}], fixed-point drift {d_sub:.1e} / {d_sup:.1e}"
            ),
        ))
    })
}

pub fn criterion_5(seed: u64) -> CriterionResult {
    timed(5, "M/M/N stationary law", || {
        let mut worst_balance: f64 = 0.0;
        for (n, lambda) in [(2, 1.0), (5, 4.5), (10, 9.0), (100, 99.0), (1000, 999.0)] {
            let pmf = mmn_stationary_pmf(n, lambda).map_err(err)?;
            for k in 0..=3 * n {
                let lhs = lambda.ln() + pmf.ln_p(k);
                let rhs = ((k + 1).min(n) as f64).ln() + pmf.ln_p(k + 1);
                worst_balance = worst_balance.max((lhs - rhs).abs() / (1.0 + lhs.abs()));
            }
        }
        let pmf = mmn_stationary_pmf(2, 1.0).map_err(err)?;
        let p0_err = (pmf.p0() - 1.0 / 3.0).abs();
        let cfg = scenarios::mm2();
        let model = cfg.model(2).map_err(err)?;
        let horizon = cfg.horizon_or(5e6);
        let mut control = StationaryControl::new(horizon, 1, seed);
        control.warmup = cfg.warmup_for(horizon);
        let est = estimate_stationary(&model, &cfg.initial_condition(), &control).map_err(err)?;
        let tv = tv_distance(&est.occupancy, &pmf);
        let passed = worst_balance <= 1e-12 && p0_err <= 1e-15 && est.events >= 10_000_000 && tv <= 0.01;
        Ok((
            passed,
            format!(
                "detailed-balance log residual {worst_balance:.1e}, |p0 - 1/3| = {p0_err:.1e}, TV = {tv:.4} over {} events",
                est.events
            ),
        ))
    })
}

pub fn criterion_6(seed: u64) -> CriterionResult {
    timed(6, "representation formulas", || {
        let model = Model {
            n_servers: 10,
            interarrival: exp(20.0),
            service: exp(1.0),
            patience: Some(exp(1.0)),
        };
        let rows = representation_check(&model, &[1.0, 2.0, 5.0], &[0.5, 3.0], 10_000, seed).map_err(err)?;
        let worst = sup(rows.iter().map(|r| r.z.abs()));
        let zero_ok = rows.iter().filter(|r| r.c > r.t).all(|r| r.empirical == 0.0);
        Ok((
            worst <= 4.0 && zero_ok,
            format!("{} rows, max |z| = {worst:.2}, c > t rows exactly zero: {zero_ok}", rows.len()),
        ))
    })
}

pub fn criterion_7(seed: u64) -> CriterionResult {
    timed(7, "convergence to the invariant state", || {
        let cfg = scenarios::convergence();
        let ns = [10, 50, 200];
        let models: Vec<Model> = ns.iter().map(|&n| cfg.model(n)).collect::<Result<_, _>>().map_err(err)?;
        let table = convergence_study(
            |n| models[ns.iter().position(|&m| m == n).expect("listed")].clone(),
            2.0,
            &ns,
            |_, lambda_n| {
                let mut c = StationaryControl::new(convergence_horizon(lambda_n), 4, seed);
                c.batches = 20;
                c
            },
        )
        .map_err(err)?;
        let last = table.rows.last().expect("rows");
        let little = sup(table.rows.iter().map(|r| r.little_deviation));
        let passed = table.distance_monotone && last.distance <= 0.05 && little <= 0.02;
        let dists: Vec<String> = table
            .rows
            .iter()
            .map(|r| format!("N={}: {:.4}±{:.4} (E|X-2| {:.4})", r.n, r.distance, r.x.half_width, r.abs_deviation.mean))
            .collect();
        Ok((
            passed,
            format!("|X - 2|: {}; max Little deviation {little:.4}", dists.join(", ")),
        ))
    })
}

pub fn criterion_8() -> CriterionResult {
    timed(8, "interchange counterexample", || {
        let rep = interchange_demo(&[10, 100, 1000], 10.0, 1e-3).map_err(err)?;
        let bounds_ok = rep.rows.iter().all(|r| r.bound_holds);
        let fluid = rep.fluid_dev_plain.max(rep.fluid_dev_abandonment);
        let tails: Vec<String> = rep
            .rows
            .iter()
            .map(|r| format!("N={}: {:.3e} <= {:.4}", r.n, r.exact_tail, r.bound))
            .collect();
        Ok((
            bounds_ok && fluid <= 5e-3 && rep.limits_differ,
            format!(
                "{}; fluid sup|X - 2| = {fluid:.1e}; limit gap {:.3}",
                tails.join(", "),
                rep.limits_gap
            ),
        ))
    })
}

/// `quantile(q) ≤ x ⇔ q ≤ m[0, x]` on random point measures.
pub fn galois_violations(measures: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for _ in 0..measures {
        let n = rng.random_range(1..=40);
        let coarse = rng.random_bool(0.5);
        let atoms: Vec<f64> = (0..n)
            .map(|_| {
                let x: f64 = rng.random_range(0.0..10.0);
                if coarse {
                    (x * 2.0).floor() / 2.0
                } else {
                    x
                }
            })
            .collect();
        let m = PointMeasure::from_atoms(atoms.iter().copied()).expect("finite atoms");
        let mass = m.mass() as f64;
        for _ in 0..10 {
            let q = if rng.random_bool(0.5) {
                rng.random_range(1..=n) as f64
            } else {
                rng.random_range(1e-9..=mass)
            };
            let x = if rng.random_bool(0.5) {
                atoms[rng.random_range(0..n)]
            } else {
                rng.random_range(0.0..10.5)
            };
            let lhs = m.quantile(q).expect("q within mass") <= x;
            let rhs = q <= m.cumulative(x) as f64;
            if lhs != rhs {
                bad += 1;
            }
        }
    }
    bad
}

/// Observed order of the fluid solver on the Erlang example, from the
/// error of `⟨h^s, ν̄⟩` at `Δ`, `Δ/2`, `Δ/4`.
pub fn fluid_refinement_orders(input: &FluidInput, dt: f64) -> Result<Vec<f64>, String> {
    let errs = [dt, dt / 2.0, dt / 4.0]
        .iter()
        .map(|&h| {
            let tr = solve_fluid(input, 5.0, h).map_err(err)?;
            Ok(sup(tr.t.iter().zip(&tr.hs_nu).map(|(t, v)| (v - (1.0 - (-4.0 * t).exp())).abs())))
        })
        .collect::<Result<Vec<f64>, String>>()?;
    Ok(errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect())
}

/// Runs every subcommand except `validate` twice on small scenarios, the
/// second time on a single thread, and lists those whose artifacts differ.
pub fn reproducibility_failures(seed: u64) -> Result<Vec<&'static str>, String> {
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().map_err(err)?;
    let mut failures = Vec::new();
    for (sub, mut cfg) in scenarios::smoke_suite() {
        if let Some(c) = cfg.as_mut() {
            c.run.seed = seed;
        }
        let a = run_scenario(cfg.as_ref(), sub, seed).map_err(err)?;
        let b = single.install(|| run_scenario(cfg.as_ref(), sub, seed)).map_err(err)?;
        if a.artifacts != b.artifacts || a.artifacts.is_empty() {
            failures.push(sub.name());
        }
    }
    Ok(failures)
}

pub fn criterion_9(seed: u64) -> CriterionResult {
    timed(9, "property suite", || {
        let galois = galois_violations(10_000, seed);
        let input = scenarios::erlang_fluid().fluid_input().map_err(err)?;
        let orders = fluid_refinement_orders(&input, 8e-3)?;
        let min_order = orders.iter().copied().fold(f64::INFINITY, f64::min);
        let repro = reproducibility_failures(seed)?;
        Ok((
            galois == 0 && min_order >= 1.0 && repro.is_empty(),
            format!(
                "Galois violations {galois} / 10^4 measures, fluid order {min_order:.2}, non-reproducible subcommands: {repro:?}"
            ),
        ))
    })
}

/// All criteria in order; `report` sees each result as soon as it is ready.
pub fn run_all(seed: u64, mut report: impl FnMut(&CriterionResult)) -> Vec<CriterionResult> {
    let steps: Vec<Box<dyn Fn() -> CriterionResult>> = vec![
        Box::new(move || criterion_1(seed)),
        Box::new(criterion_2),
        Box::new(criterion_3),
        Box::new(criterion_4),
        Box::new(move || criterion_5(seed)),
        Box::new(move || criterion_6(seed)),
        Box::new(move || criterion_7(seed)),
        Box::new(criterion_8),
        Box::new(move || criterion_9(seed)),
    ];
    steps
        .iter()
        .map(|f| {
            let r = f();
            report(&r);
            r
        })
        .collect()
}

/// Parses a built-in scenario; they are fixed text, so failure is a bug.
pub(crate) fn builtin(text: &str) -> ScenarioConfig {
    parse_config(text).expect("built-in scenario parses")
}
