//! Scenario files shipped in `configs/`, compiled in.

use crate::acceptance::builtin;
use crate::config::ScenarioConfig;
use crate::harness::Subcommand;

pub const ERLANG_FLUID: &str = include_str!("../../../configs/erlang_fluid.toml");
pub const ERLANG_FLUID_ALPHA: &str = include_str!("../../../configs/erlang_fluid_alpha.toml");
pub const ERLANG_A: &str = include_str!("../../../configs/erlang_a.toml");
pub const CONVERGENCE: &str = include_str!("../../../configs/convergence.toml");
pub const MM2: &str = include_str!("../../../configs/mm2.toml");
pub const INTERCHANGE: &str = include_str!("../../../configs/interchange.toml");
pub const FLAT_PATIENCE: &str = include_str!("../../../configs/flat_patience.toml");
pub const MIXED: &str = include_str!("../../../configs/mixed.toml");

pub fn erlang_fluid() -> ScenarioConfig {
    builtin(ERLANG_FLUID)
}

pub fn erlang_fluid_alpha() -> ScenarioConfig {
    builtin(ERLANG_FLUID_ALPHA)
}

pub fn erlang_a() -> ScenarioConfig {
    builtin(ERLANG_A)
}

pub fn convergence() -> ScenarioConfig {
    builtin(CONVERGENCE)
}

pub fn mm2() -> ScenarioConfig {
    builtin(MM2)
}

pub fn interchange() -> ScenarioConfig {
    builtin(INTERCHANGE)
}

pub fn flat_patience() -> ScenarioConfig {
    builtin(FLAT_PATIENCE)
}

pub fn mixed() -> ScenarioConfig {
    builtin(MIXED)
}

/// Short versions of the shipped scenarios, one per subcommand other than
/// `validate`.
pub fn smoke_suite() -> Vec<(Subcommand, Option<ScenarioConfig>)> {
    let mut fluid = erlang_fluid();
    fluid.run.horizon = Some(2.0);
    let mut stationary = erlang_a();
    stationary.run.horizon = Some(100.0);
    stationary.run.replications = 3;
    let mut conv = convergence();
    conv.n_list = Some(vec![5, 10]);
    conv.run.horizon = Some(100.0);
    conv.run.replications = 2;
    let mut inter = interchange();
    inter.run.horizon = Some(1.0);
    vec![
        (Subcommand::Simulate, Some(mixed())),
        (Subcommand::Fluid, Some(fluid)),
        (Subcommand::Invariant, Some(erlang_a())),
        (Subcommand::Stationary, Some(stationary)),
        (Subcommand::Convergence, Some(conv)),
        (Subcommand::Interchange, Some(inter)),
    ]
}
