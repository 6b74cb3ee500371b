use proptest::prelude::*;

use teamopt::benchmarks::{build_benchmark, Params};
use teamopt::config::TeamFile;
use teamopt::evaluation::{expected_cost_mc, expected_cost_quadrature, expected_cost_quadrature_reduced, QuadOptions};
use teamopt::optimize::{pbp_optimize, zero_profile, PbpOptions};
use teamopt::reduction::static_reduce;
use teamopt::strategy::{as_behavioral, read_strategy_csv, write_strategy_csv, LinearStrategy, Profile, Strategy};

fn linear(gains: &[f64]) -> Profile {
    gains
        .iter()
        .map(|g| Strategy::Linear(LinearStrategy::scalar(*g)))
        .collect()
}

/// `u1 = a y1`, `u2 = b y2` with unit variances.
fn witsenhausen_linear(a: f64, b: f64) -> f64 {
    (a - 1.0).powi(2) + (b - 1.0).powi(2) * a * a + b * b
}

/// Scalar test channel with `lambda = 0.05` and unit variances.
fn channel_linear(a: f64, b: f64) -> f64 {
    0.05 * a * a + (b * a - 1.0).powi(2) + b * b
}

#[test]
fn toml_file_to_cost() {
    let text = "schema_version = 1\n[benchmark]\nname = \"witsenhausen\"\n";
    let spec = TeamFile::parse(text).unwrap().spec().unwrap();
    let rt = static_reduce(&spec).unwrap();
    let p = linear(&[0.8, 0.4]);
    let oracle = witsenhausen_linear(0.8, 0.4);
    let j = expected_cost_quadrature(&rt.team, &p, 64).unwrap();
    let j_rst = expected_cost_quadrature_reduced(&rt, &p, 64).unwrap();
    assert!((j - oracle).abs() < 1e-9, "{j} vs {oracle}");
    assert!((j_rst - oracle).abs() < 1e-9, "{j_rst} vs {oracle}");
    let mc = expected_cost_mc(&rt.team, &p, 4, 200_000).unwrap();
    assert!((mc.estimate - oracle).abs() < 4.0 * mc.stderr, "{mc:?}");
}

#[test]
fn pbp_strategies_survive_a_csv_round_trip() {
    let rt = static_reduce(&build_benchmark("test_channel", &Params::new()).unwrap()).unwrap();
    let init: Profile = zero_profile(&rt.team, 31, 31)
        .unwrap()
        .into_iter()
        .map(|s| match s {
            Strategy::Deterministic(d) => Strategy::Deterministic(
                teamopt::strategy::DeterministicGridStrategy::from_fn(d.obs.clone(), d.act.clone(), |y| {
                    vec![0.5 * y[0]]
                }),
            ),
            s => s,
        })
        .collect();
    let mut quad = QuadOptions::with_order(16);
    quad.per_segment = 2;
    let r = pbp_optimize(
        &rt,
        &init,
        &PbpOptions {
            max_iters: 3,
            tol: 1e-10,
            quad: quad.clone(),
        },
    )
    .unwrap();
    let back: Profile = r
        .profile
        .iter()
        .map(|s| {
            let Strategy::Deterministic(d) = s else {
                panic!("grid strategy expected")
            };
            let mut buf = Vec::new();
            write_strategy_csv(&as_behavioral(d), &mut buf).unwrap();
            Strategy::Behavioral(read_strategy_csv(buf.as_slice(), &d.obs, &d.act).unwrap())
        })
        .collect();
    let a = teamopt::evaluation::expected_cost_quadrature_reduced_with(&rt, &r.profile, &quad).unwrap();
    let b = teamopt::evaluation::expected_cost_quadrature_reduced_with(&rt, &back, &quad).unwrap();
    assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    assert!((a - r.final_cost()).abs() < 1e-10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn both_paths_match_closed_forms(a in -2.0f64..2.0, b in -1.5f64..1.5) {
        let w = static_reduce(&build_benchmark("witsenhausen", &Params::new()).unwrap()).unwrap();
        let c = static_reduce(&build_benchmark("test_channel", &Params::new()).unwrap()).unwrap();
        let p = linear(&[a, b]);
        for (rt, oracle) in [(&w, witsenhausen_linear(a, b)), (&c, channel_linear(a, b))] {
            let j = expected_cost_quadrature(&rt.team, &p, 48).unwrap();
            let j_rst = expected_cost_quadrature_reduced(rt, &p, 48).unwrap();
            prop_assert!((j - oracle).abs() < 1e-8 * (1.0 + oracle), "{} {} {}", j, oracle, rt.team.spec.name);
            prop_assert!((j_rst - oracle).abs() < 1e-6 * (1.0 + oracle), "{} {} {}", j_rst, oracle, rt.team.spec.name);
        }
    }
}
