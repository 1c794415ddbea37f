//! Randomized invariants across the public API.

use gign_core::config::parse_config;
use gign_core::engine::{init_state, run, InitialCondition, Model, RunControl};
use gign_core::fluid::{solve_fluid, FluidInput, InitialData};
use gign_core::invariant::{b_lambda_objective, compute_b_lambda, invariant_manifold};
use gign_core::stationary::{mmn_stationary_pmf, Stat};
use gign_core::{Distribution, PointMeasure};
use proptest::prelude::*;

fn law() -> impl Strategy<Value = Distribution> {
    prop_oneof![
        (0.2f64..5.0).prop_map(|r| Distribution::exponential(r).unwrap()),
        (1u32..5, 0.5f64..4.0).prop_map(|(k, r)| Distribution::erlang(k, r).unwrap()),
        (0.0f64..1.0, 0.1f64..3.0).prop_map(|(a, w)| Distribution::uniform(a, a + w).unwrap()),
        (0.05f64..1.0, 0.2f64..3.0).prop_map(|(o, r)| {
            Distribution::shifted(o, Distribution::exponential(r).unwrap()).unwrap()
        }),
        (0.1f64..0.9, 0.5f64..2.0, 0.5f64..2.0).prop_map(|(c, x1, dx)| {
            Distribution::piecewise_linear(&[(0.0, 0.0), (x1, c), (x1 + dx, 1.0)]).unwrap()
        }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn quantile_is_galois_inverse(
        atoms in prop::collection::vec(0.0f64..10.0, 1..30),
        q in 1e-9f64..1.0,
        x in 0.0f64..11.0,
    ) {
        let m = PointMeasure::from_atoms(atoms.iter().copied()).unwrap();
        let q = q * m.mass() as f64;
        prop_assert_eq!(m.quantile(q).unwrap() <= x, q <= m.cumulative(x) as f64);
        let i = (q.ceil() as usize).max(1);
        prop_assert!(m.cumulative(m.quantile(i as f64).unwrap()) >= i);
    }

    #[test]
    fn shift_preserves_mass_and_order(atoms in prop::collection::vec(0.0f64..10.0, 0..30), dt in 0.0f64..5.0) {
        let m = PointMeasure::from_atoms(atoms.iter().copied()).unwrap();
        let s = m.shift(dt);
        prop_assert_eq!(s.mass(), m.mass());
        prop_assert!(s.atoms().windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(s.tail_mass(dt), m.mass());
    }

    #[test]
    fn law_functions_agree(d in law(), p in 0.001f64..0.999, x in 0.0f64..6.0) {
        let c = d.cdf(x);
        prop_assert!((0.0..=1.0).contains(&c));
        prop_assert!((c + d.survival(x) - 1.0).abs() < 1e-12);
        prop_assert!(d.cdf(x + 0.1) >= c - 1e-15);
        let xq = d.quantile(p);
        prop_assert!((d.cdf(xq) - p).abs() < 1e-8, "cdf(quantile({})) = {}", p, d.cdf(xq));
        let is = d.integrated_survival(x);
        prop_assert!(is <= x + 1e-12 && is <= d.mean() + 1e-9);
        if is < d.mean() * (1.0 - 1e-9) {
            prop_assert!((d.integrated_survival(d.integrated_survival_inverse(is)) - is).abs() < 1e-8);
        }
    }

    #[test]
    fn scaling_sets_the_mean(d in law(), m in 0.05f64..20.0) {
        prop_assert!((d.with_mean(m).mean() - m).abs() < 1e-9 * m);
    }

    #[test]
    fn b_lambda_brackets_target(p in law(), lambda in 1.0f64..4.0) {
        let (l, r) = compute_b_lambda(&p, lambda, 1e-8).unwrap();
        prop_assert!(1.0 <= l && l <= r);
        let target = (lambda - 1.0) / lambda;
        prop_assert!(b_lambda_objective(&p, lambda, l + 1e-6) >= target - 1e-9);
        prop_assert!(b_lambda_objective(&p, lambda, r - 1e-6).min(target) <= target + 1e-9);
        prop_assert!(b_lambda_objective(&p, lambda, (l - 1e-6).max(1.0)) <= target + 1e-9);
    }

    #[test]
    fn mmn_pmf_normalized(n in 1usize..200, frac in 0.01f64..0.99) {
        let lambda = frac * n as f64;
        let pmf = mmn_stationary_pmf(n, lambda).unwrap();
        let total: f64 = (0..n).map(|k| pmf.p(k)).sum::<f64>() + pmf.tail(n);
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!((pmf.tail(0) - 1.0).abs() < 1e-12);
        let direct: f64 = (0..n + 4000).map(|k| k as f64 * pmf.p(k)).sum();
        prop_assert!((pmf.mean() - direct).abs() < 1e-8 * (1.0 + direct));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn audits_stay_clean(
        n in 1usize..12,
        load in 0.3f64..2.5,
        arr in law(),
        service in law(),
        patience in prop::option::of(law()),
        seed in any::<u64>(),
    ) {
        let service = service.with_mean(1.0);
        let model = Model {
            n_servers: n,
            interarrival: arr.with_mean(1.0 / (load * n as f64)),
            service,
            patience: if load > 1.2 && patience.is_none() { Some(Distribution::exponential(1.0).unwrap()) } else { patience },
        };
        let mut state = init_state(model, &InitialCondition::stationary_empty(), seed).unwrap();
        let rep = run(&mut state, &RunControl::new(200.0).audited(), &mut []).unwrap();
        prop_assert_eq!(rep.violations, 0, "{:?}", rep.first_violation);
        prop_assert!(state.nu_mass() <= n);
    }

    #[test]
    fn fluid_relations_hold(
        lambda in 0.2f64..3.0,
        service in law(),
        patience in law(),
        x0 in 0.0f64..2.0,
    ) {
        let service = service.with_mean(1.0);
        let input = FluidInput {
            lambda,
            x0,
            nu0: InitialData::Density(service.equilibrium_measure(x0.min(1.0)).unwrap()),
            eta0: InitialData::Density(patience.equilibrium_measure((x0 - 1.0).max(0.0) / patience.mean()).unwrap()),
            service,
            patience: Some(patience),
        };
        let tr = solve_fluid(&input, 4.0, 4e-3).unwrap();
        let d = tr.defects();
        prop_assert!(d.non_idling < 1e-6 && d.queue < 1e-6 && d.queue_eta < 1e-6, "{:?}", d);
        prop_assert!(d.conservation < 1e-6, "{:?}", d);
        prop_assert!(tr.b.iter().all(|&b| b <= 1.0 + 1e-9));
        prop_assert!(tr.x.iter().zip(&tr.b).all(|(x, b)| *x >= *b - 1e-9));
    }
}

#[test]
fn subcritical_invariant_masses() {
    let s = Distribution::uniform(0.0, 2.0).unwrap();
    let set = invariant_manifold(0.5, &s, Some(&Distribution::exponential(3.0).unwrap())).unwrap();
    assert_eq!(set.nu_mass(), 0.5);
    assert!((set.eta_mass() - 0.5 / 3.0).abs() < 1e-15);
}

#[test]
fn stat_interval() {
    let s = Stat::from_samples(&[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(s.mean, 2.5);
    // t_{0.975, 3} = 3.182446305284263
    let sd = (5.0f64 / 3.0).sqrt();
    assert!((s.half_width - 3.182_446_305_284_263 * sd / 2.0).abs() < 1e-9);
    assert!(Stat::from_samples(&[1.0]).half_width.is_infinite());
}

#[test]
fn shipped_configs_parse() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut count = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let text = std::fs::read_to_string(&path).unwrap();
        parse_config(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        count += 1;
    }
    assert!(count >= 8);
}
