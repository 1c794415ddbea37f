//! Subcommand dispatch and artifact emission.
//!
//! A run produces a list of [`Artifact`]s in memory; [`write_artifacts`]
//! puts them on disk. Every artifact carries the config hash and the root
//! seed: JSON at the top level, CSV in a leading `#` comment line.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::acceptance;
use crate::config::{parse_config, ConfigError, ScenarioConfig};
use crate::engine::{init_state, run, AuditReport, Counters, RunControl, TrajectoryRecorder};
use crate::fluid::{solve_fluid, solve_k_renewal};
use crate::invariant::{invariant_manifold, verify_fixed_point};
use crate::measure::histogram_csv;
use crate::rng::replication_seed;
use crate::stationary::{
    convergence_horizon, convergence_study, estimate_stationary, interchange_demo, littles_law_check,
    tightness_profile, StationaryControl,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Runtime(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl HarnessError {
    fn runtime(e: impl std::fmt::Display) -> Self {
        HarnessError::Runtime(e.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            _ => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcommand {
    Simulate,
    Fluid,
    Invariant,
    Stationary,
    Convergence,
    Interchange,
    Validate,
}

impl Subcommand {
    pub const ALL: [Subcommand; 7] = [
        Subcommand::Simulate,
        Subcommand::Fluid,
        Subcommand::Invariant,
        Subcommand::Stationary,
        Subcommand::Convergence,
        Subcommand::Interchange,
        Subcommand::Validate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Simulate => "simulate",
            Subcommand::Fluid => "fluid",
            Subcommand::Invariant => "invariant",
            Subcommand::Stationary => "stationary",
            Subcommand::Convergence => "convergence",
            Subcommand::Interchange => "interchange",
            Subcommand::Validate => "validate",
        }
    }

    /// Whether the subcommand can run without a scenario file.
    pub fn config_optional(self) -> bool {
        matches!(self, Subcommand::Interchange | Subcommand::Validate)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub subcommand: Subcommand,
    /// False when a check built into the subcommand failed (exit code 1).
    pub passed: bool,
    pub summary: String,
    pub artifacts: Vec<Artifact>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            0
        } else {
            1
        }
    }
}

struct Stamp {
    hash: String,
    seed: u64,
}

impl Stamp {
    fn json(&self, name: &str, sub: Subcommand, body: impl Serialize) -> Artifact {
        let mut v = json!({
            "config_sha256": self.hash,
            "seed": self.seed,
            "subcommand": sub.name(),
        });
        let body = serde_json::to_value(body).expect("serializable body");
        if let (Value::Object(head), Value::Object(rest)) = (&mut v, body) {
            head.extend(rest);
        }
        let mut text = serde_json::to_string_pretty(&v).expect("json");
        text.push('\n');
        Artifact {
            name: name.into(),
            bytes: text.into_bytes(),
        }
    }

    fn csv(&self, name: &str, body: &str) -> Artifact {
        let text = format!("# config_sha256={} seed={}\n{body}", self.hash, self.seed);
        Artifact {
            name: name.into(),
            bytes: text.into_bytes(),
        }
    }
}

/// Reads and validates a scenario file, applying a seed override.
pub fn load_config(path: &Path, seed: Option<u64>) -> Result<ScenarioConfig, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut cfg = parse_config(&text)?;
    if let Some(s) = seed {
        cfg.run.seed = s;
    }
    Ok(cfg)
}

pub fn write_artifacts(dir: &Path, artifacts: &[Artifact]) -> Result<Vec<PathBuf>, HarnessError> {
    std::fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    artifacts
        .iter()
        .map(|a| {
            let path = dir.join(&a.name);
            std::fs::write(&path, &a.bytes).map_err(|source| HarnessError::Io { path: path.clone(), source })?;
            Ok(path)
        })
        .collect()
}

/// Runs `sub`. `config` may be `None` only where [`Subcommand::config_optional`].
/// The root seed is `run.seed` of the config, `default_seed` without one.
pub fn run_scenario(
    config: Option<&ScenarioConfig>,
    sub: Subcommand,
    default_seed: u64,
) -> Result<Outcome, HarnessError> {
    let seed = config.map_or(default_seed, |c| c.run.seed);
    let stamp = Stamp {
        hash: match config {
            Some(c) => c.hash(),
            None => crate::hash_hex(format!("{{\"builtin\":\"{}\"}}", sub.name()).as_bytes()),
        },
        seed,
    };
    let need = || {
        config.ok_or_else(|| {
            HarnessError::Config(ConfigError::Invalid {
                field: "--config".into(),
                reason: format!("required by `{}`", sub.name()),
            })
        })
    };
    match sub {
        Subcommand::Simulate => simulate(need()?, &stamp),
        Subcommand::Fluid => fluid(need()?, &stamp),
        Subcommand::Invariant => invariant(need()?, &stamp),
        Subcommand::Stationary => stationary(need()?, &stamp),
        Subcommand::Convergence => convergence(need()?, &stamp),
        Subcommand::Interchange => interchange(config, &stamp),
        Subcommand::Validate => validate(&stamp),
    }
}

#[derive(Serialize)]
struct ReplicationSummary {
    index: u64,
    seed: u64,
    events: u64,
    audited: u64,
    violations: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    first_violation: Option<(u64, AuditReport)>,
    final_x: i64,
    final_queue: i64,
    final_nu_mass: usize,
    final_eta_mass: usize,
    final_chi: f64,
    counters: Counters,
}

fn simulate(cfg: &ScenarioConfig, stamp: &Stamp) -> Result<Outcome, HarnessError> {
    let n = cfg.primary_n()?;
    let model = cfg.model(n)?;
    let initial = cfg.initial_condition();
    let horizon = cfg.horizon_or(100.0);
    let control = RunControl {
        horizon,
        max_events: cfg.run.max_events,
        audit: cfg.run.audit,
    };
    let results: Vec<_> = (0..cfg.run.replications as u64)
        .into_par_iter()
        .map(|i| {
            let seed = replication_seed(stamp.seed, i);
            let mut state = init_state(model.clone(), &initial, seed).map_err(HarnessError::runtime)?;
            let mut rec = TrajectoryRecorder::default();
            let report = if i == 0 && cfg.output.trajectory {
                run(&mut state, &control, &mut [&mut rec])
            } else {
                run(&mut state, &control, &mut [])
            }
            .map_err(HarnessError::runtime)?;
            let summary = ReplicationSummary {
                index: i,
                seed,
                events: report.events,
                audited: report.audited,
                violations: report.violations,
                first_violation: report.first_violation,
                final_x: state.x(),
                final_queue: state.queue(),
                final_nu_mass: state.nu_mass(),
                final_eta_mass: state.eta_mass(),
                final_chi: state.head_of_line_wait(),
                counters: state.counters(),
            };
            Ok((summary, rec, state.nu_measure(), state.eta_measure()))
        })
        .collect::<Result<_, HarnessError>>()?;
    let violations: u64 = results.iter().map(|r| r.0.violations).sum();
    let events: u64 = results.iter().map(|r| r.0.events).sum();
    let reps: Vec<&ReplicationSummary> = results.iter().map(|r| &r.0).collect();
    let mut artifacts = vec![stamp.json(
        "simulate.json",
        Subcommand::Simulate,
        json!({
            "n_servers": n,
            "horizon": horizon,
            "audit": cfg.run.audit,
            "total_events": events,
            "total_violations": violations,
            "replications": reps,
        }),
    )];
    let (_, rec, nu, eta) = &results[0];
    if cfg.output.trajectory {
        artifacts.push(stamp.csv("trajectory.csv", &rec.to_csv()));
    }
    let top = nu.atoms().iter().chain(eta.atoms()).copied().fold(1.0, f64::max);
    let edges: Vec<f64> = (0..=20).map(|i| top * i as f64 / 20.0 * (1.0 + 1e-12)).collect();
    artifacts.push(stamp.csv("nu_hist.csv", &histogram_csv(nu, &edges)));
    artifacts.push(stamp.csv("eta_hist.csv", &histogram_csv(eta, &edges)));
    Ok(Outcome {
        subcommand: Subcommand::Simulate,
        passed: violations == 0,
        summary: format!(
            "simulate: N = {n}, {} replication(s), {events} events, {violations} audit violation(s)",
            cfg.run.replications
        ),
        artifacts,
    })
}

fn fluid(cfg: &ScenarioConfig, stamp: &Stamp) -> Result<Outcome, HarnessError> {
    let input = cfg.fluid_input()?;
    let horizon = cfg.fluid.horizon.unwrap_or_else(|| cfg.horizon_or(10.0));
    let tr = solve_fluid(&input, horizon, cfg.run.dt).map_err(HarnessError::runtime)?;
    let kr = solve_k_renewal(&tr);
    let k_gap = kr.iter().zip(&tr.k).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let i = tr.last();
    let defects = tr.defects();
    let artifacts = vec![
        stamp.json(
            "fluid.json",
            Subcommand::Fluid,
            json!({
                "lambda": input.lambda,
                "dt": tr.dt,
                "horizon": tr.t[i],
                "final": {
                    "t": tr.t[i], "X": tr.x[i], "Q": tr.q[i], "B": tr.b[i],
                    "K": tr.k[i], "R": tr.r[i], "eta_mass": tr.eta_mass[i], "hs_nu": tr.hs_nu[i],
                },
                "defects": defects,
                "k_renewal_gap": k_gap,
                "warnings": tr.warnings,
            }),
        ),
        stamp.csv("fluid.csv", &tr.to_csv(cfg.fluid.stride)),
    ];
    Ok(Outcome {
        subcommand: Subcommand::Fluid,
        passed: true,
        summary: format!(
            "fluid: T = {}, X = {:.6}, Q = {:.6}, B = {:.6}, max defect {:.2e}",
            tr.t[i],
            tr.x[i],
            tr.q[i],
            tr.b[i],
            defects.max()
        ),
        artifacts,
    })
}

fn invariant(cfg: &ScenarioConfig, stamp: &Stamp) -> Result<Outcome, HarnessError> {
    let lambda = cfg.fluid_lambda()?;
    let service = cfg.service_law()?;
    let patience = cfg.patience_law()?;
    let set = invariant_manifold(lambda, &service, patience.as_ref()).map_err(HarnessError::runtime)?;
    let summary = set.summary(1e-6);
    let horizon = cfg.fluid.horizon.unwrap_or(20.0);
    let fixed = match summary.x_star {
        Some(x) => Some(verify_fixed_point(&set.state(x), horizon, cfg.run.dt).map_err(HarnessError::runtime)?),
        None => None,
    };
    let mut body = serde_json::to_value(&summary).expect("summary");
    if let (Value::Object(m), Some(f)) = (&mut body, fixed) {
        m.insert("fixed_point_drift".into(), serde_json::to_value(f).expect("drift"));
        m.insert("fixed_point_horizon".into(), json!(horizon));
    }
    let passed = fixed.is_none_or(|f| f.max() <= 10.0 * cfg.run.dt);
    Ok(Outcome {
        subcommand: Subcommand::Invariant,
        passed,
        summary: format!(
            "invariant: lambda = {lambda}, B = [{:.9}, {:.9}], unique = {}",
            summary.b_l, summary.b_r, summary.unique
        ),
        artifacts: vec![stamp.json("invariant.json", Subcommand::Invariant, body)],
    })
}

fn stationary_control(cfg: &ScenarioConfig, seed: u64, horizon: f64) -> StationaryControl {
    StationaryControl {
        warmup: cfg.warmup_for(horizon),
        horizon,
        replications: cfg.run.replications,
        batches: cfg.stationary.batches,
        seed,
        audit: cfg.run.audit,
        max_events: cfg.run.max_events,
        c_grid: cfg.stationary.c_grid.clone(),
        snapshot_dt: cfg.stationary.snapshot_dt,
        consistency_c: cfg.stationary.consistency_c,
        target_x: None,
    }
}

fn stationary(cfg: &ScenarioConfig, stamp: &Stamp) -> Result<Outcome, HarnessError> {
    let n = cfg.primary_n()?;
    let model = cfg.model(n)?;
    let rate = cfg.arrival_rate(n)?;
    let mut control = stationary_control(cfg, stamp.seed, cfg.horizon_or(convergence_horizon(rate)));
    let lambda = cfg.fluid_lambda()?;
    let patience = cfg.patience_law()?;
    control.target_x = invariant_manifold(lambda, &cfg.service_law()?, patience.as_ref())
        .ok()
        .and_then(|s| s.x_star(1e-6));
    let est = estimate_stationary(&model, &cfg.initial_condition(), &control).map_err(HarnessError::runtime)?;
    let profile = tightness_profile(&est);
    let little = patience.as_ref().map(|p| littles_law_check(&est, rate / n as f64, p.mean()));

    let mut tails = String::from("c,eta_tail,eta_tail_ci,nu_tail,nu_tail_ci\n");
    for (j, c) in est.c_grid.iter().enumerate() {
        let (e, v) = (est.eta_tail[j], est.nu_tail[j]);
        let _ = writeln!(tails, "{c},{},{},{},{}", e.mean, e.half_width, v.mean, v.half_width);
    }
    let mut hist = String::from("k,x_scaled,fraction\n");
    for (k, f) in est.occupancy.iter().enumerate() {
        let _ = writeln!(hist, "{k},{},{f}", k as f64 / n as f64);
    }
    let passed = est.audit_violations == 0 && est.state_violations == 0 && profile.monotone;
    let summary = format!(
        "stationary: N = {n}, X = {:.5} ± {:.5}, nu = {:.5}, eta = {:.5}",
        est.x.mean, est.x.half_width, est.nu_mass.mean, est.eta_mass.mean
    );
    Ok(Outcome {
        subcommand: Subcommand::Stationary,
        passed,
        summary,
        artifacts: vec![
            stamp.json(
                "stationary.json",
                Subcommand::Stationary,
                json!({
                    "estimate": est,
                    "target_x": control.target_x,
                    "little_deviation": little,
                    "tails_monotone": profile.monotone,
                }),
            ),
            stamp.csv("stationary_tails.csv", &tails),
            stamp.csv("stationary_hist.csv", &hist),
        ],
    })
}

fn convergence(cfg: &ScenarioConfig, stamp: &Stamp) -> Result<Outcome, HarnessError> {
    let ns = cfg.n_values();
    if ns.is_empty() {
        return Err(ConfigError::Invalid {
            field: "n_list".into(),
            reason: "required by `convergence`".into(),
        }
        .into());
    }
    let models = ns.iter().map(|&n| cfg.model(n)).collect::<Result<Vec<_>, _>>()?;
    let model_for = |n: usize| models[ns.iter().position(|&m| m == n).expect("listed N")].clone();
    let control_for = |_n: usize, lambda_n: f64| {
        let mut c = stationary_control(cfg, stamp.seed, cfg.horizon_or(convergence_horizon(lambda_n)));
        c.c_grid.clear();
        c
    };
    let table = convergence_study(model_for, cfg.fluid_lambda()?, &ns, control_for).map_err(HarnessError::runtime)?;
    let mut csv = String::from(
        "N,lambda_N,estimate,ci,target,distance,abs_deviation,abs_deviation_ci,nu_mass,nu_mass_ci,eta_mass,eta_mass_ci,little_deviation\n",
    );
    for r in &table.rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.n,
            r.lambda_n,
            r.x.mean,
            r.x.half_width,
            table.x_star,
            r.distance,
            r.abs_deviation.mean,
            r.abs_deviation.half_width,
            r.nu_mass.mean,
            r.nu_mass.half_width,
            r.eta_mass.mean,
            r.eta_mass.half_width,
            r.little_deviation
        );
    }
    let summary = table
        .rows
        .iter()
        .map(|r| format!("N = {}: |X − x*| = {:.4}", r.n, r.distance))
        .collect::<Vec<_>>()
        .join(", ");
    Ok(Outcome {
        subcommand: Subcommand::Convergence,
        passed: table.distance_monotone,
        summary: format!("convergence: x* = {}; {summary}", table.x_star),
        artifacts: vec![
            stamp.json("convergence.json", Subcommand::Convergence, &table),
            stamp.csv("convergence.csv", &csv),
        ],
    })
}

fn interchange(cfg: Option<&ScenarioConfig>, stamp: &Stamp) -> Result<Outcome, HarnessError> {
    let ns = cfg.map(|c| c.n_values()).filter(|v| !v.is_empty()).unwrap_or_else(|| vec![10, 100, 1000]);
    let horizon = cfg.and_then(|c| c.fluid.horizon.or(c.run.horizon)).unwrap_or(10.0);
    let dt = cfg.map_or(1e-3, |c| c.run.dt);
    let rep = interchange_demo(&ns, horizon, dt).map_err(HarnessError::runtime)?;
    let mut csv = String::from("N,exact_tail,bound,bound_holds,mean_scaled,kolmogorov_to_two\n");
    for r in &rep.rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            r.n, r.exact_tail, r.bound, r.bound_holds, r.mean_scaled, r.kolmogorov_to_two
        );
    }
    let passed = rep.rows.iter().all(|r| r.bound_holds)
        && rep.fluid_dev_plain <= 5e-3
        && rep.fluid_dev_abandonment <= 5e-3
        && rep.limits_differ;
    Ok(Outcome {
        subcommand: Subcommand::Interchange,
        passed,
        summary: format!(
            "interchange: fluid stays at 2 (max dev {:.1e}), stationary limit gap {:.3}",
            rep.fluid_dev_plain.max(rep.fluid_dev_abandonment),
            rep.limits_gap
        ),
        artifacts: vec![
            stamp.json("interchange.json", Subcommand::Interchange, &rep),
            stamp.csv("interchange.csv", &csv),
        ],
    })
}

fn validate(stamp: &Stamp) -> Result<Outcome, HarnessError> {
    let results = acceptance::run_all(stamp.seed, |r| eprintln!("{}", r.line()));
    let passed = results.iter().all(|r| r.passed);
    let mut csv = String::from("criterion,name,passed,detail\n");
    for r in &results {
        let _ = writeln!(csv, "{},{},{},\"{}\"", r.id, r.name, r.passed, r.detail.replace('"', "'"));
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    Ok(Outcome {
        subcommand: Subcommand::Validate,
        passed,
        summary: format!("validate: {} of {} criteria passed", results.len() - failed, results.len()),
        artifacts: vec![
            stamp.json("validate.json", Subcommand::Validate, json!({ "criteria": results })),
            stamp.csv("validate.csv", &csv),
        ],
    })
}
