mod support;

use homognx::directional::matrix_resultant_length;
use homognx::homogenization_sim::{
    contextual_attention, dispersion, initial_state, mixing_matrix, positional_attention, run_sim,
    value_map, PositionalTarget, SimConfig, ValueMapMode, CONTRACTION_NORM,
};
use homognx::metrics::Metric;
use homognx::spectral::singular_values;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn final_dispersion(cfg: &SimConfig, x0: &DMatrix<f64>) -> f64 {
    *run_sim(cfg, x0).unwrap().dispersion_series.last().unwrap()
}

proptest! {
    #![proptest_config(support::cases(24))]

    #[test]
    fn full_positional_weight_collapses_at_once(
        n in 2usize..20,
        d in 1usize..10,
        seed in any::<u64>(),
        last in any::<bool>(),
    ) {
        let target = if last { PositionalTarget::LastToken } else { PositionalTarget::FirstToken };
        let cfg = SimConfig {
            n, d, depth: 6, lambda2: 1.0, target, mixing_seed: seed,
            value_map: ValueMapMode::Identity, residual: false,
        };
        let t = run_sim(&cfg, &initial_state(n, d, seed ^ 1)).unwrap();
        for (l, s) in t.states.iter().enumerate().skip(1) {
            prop_assert_eq!(dispersion(s), 0.0);
            prop_assert_eq!(t.dispersion_series[l], 0.0);
        }
    }

    #[test]
    fn mixing_matrices_are_row_stochastic(n in 2usize..30, seed in any::<u64>(), lambda2 in 0.0..=1.0f64) {
        let a = contextual_attention(n, seed).unwrap();
        prop_assert!(a.iter().all(|v| *v > 0.0));
        for row in a.row_iter() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        let cfg = SimConfig { n, lambda2, mixing_seed: seed, ..SimConfig::default() };
        let m = mixing_matrix(&cfg, 1).unwrap();
        for row in m.row_iter() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn value_map_norms(d in 1usize..24, seed in any::<u64>()) {
        let p = value_map(d, ValueMapMode::RandomContraction, seed).unwrap();
        let top = singular_values(&p).unwrap().largest();
        prop_assert!((top - CONTRACTION_NORM).abs() < 1e-12);
        let q = value_map(d, ValueMapMode::RandomOrthogonal, seed).unwrap();
        prop_assert!((q.transpose() * &q - DMatrix::<f64>::identity(d, d)).amax() < 1e-12);
    }
}

#[test]
fn positional_attention_shape() {
    let a = positional_attention(5, PositionalTarget::Position(2)).unwrap();
    assert!(a.row_iter().all(|r| r[2] == 1.0 && r.sum() == 1.0));
    assert!(positional_attention(5, PositionalTarget::Position(5)).is_err());
}

#[test]
fn dispersion_shrinks_with_positional_weight() {
    let x0 = initial_state(32, 16, 0);
    let finals: Vec<f64> = (0..=10)
        .map(|i| final_dispersion(&SimConfig { lambda2: i as f64 / 10.0, ..SimConfig::default() }, &x0))
        .collect();
    assert!(finals.windows(2).all(|w| w[1] <= w[0]), "{finals:?}");
    assert!(finals[0] > 0.0);
    assert_eq!(finals[10], 0.0);
}

#[test]
fn contraction_run_collapses() {
    let cfg = SimConfig { lambda2: 0.7, ..SimConfig::default() };
    let t = run_sim(&cfg, &initial_state(32, 16, 0)).unwrap();
    let d = &t.dispersion_series;
    assert!(d[1..].windows(2).all(|w| w[1] < w[0]));
    assert!(d[50] / d[0] < 1e-3);
}

#[test]
fn residual_slows_collapse() {
    let x0 = initial_state(32, 16, 4);
    let plain = run_sim(&SimConfig { lambda2: 0.7, ..SimConfig::default() }, &x0).unwrap();
    let resid = run_sim(&SimConfig { lambda2: 0.7, residual: true, ..SimConfig::default() }, &x0).unwrap();
    for l in 1..=50 {
        assert!(resid.dispersion_series[l] > plain.dispersion_series[l], "layer {l}");
    }
}

#[test]
fn metrics_follow_the_collapse() {
    let cfg = SimConfig { lambda2: 0.7, ..SimConfig::default() };
    let t = run_sim(&cfg, &initial_state(32, 16, 0)).unwrap();
    let last = t.states.last().unwrap();
    assert!((Metric::Erank.evaluate_layer(last).unwrap() - 1.0).abs() < 0.05);
    assert!((Metric::Mev.evaluate_layer(last).unwrap() - 1.0).abs() < 0.01);
    assert!((matrix_resultant_length(last).unwrap() - 1.0).abs() < 0.01);
    let erank = t.metric_series(|x| Metric::Erank.evaluate_layer(x)).unwrap();
    assert!(erank[0] > 5.0);
}

#[test]
fn runs_are_reproducible() {
    let cfg = SimConfig { mixing_seed: 7, value_map: ValueMapMode::RandomOrthogonal, ..SimConfig::default() };
    let x0 = initial_state(32, 16, 9);
    assert_eq!(run_sim(&cfg, &x0).unwrap(), run_sim(&cfg, &x0).unwrap());
    let other = SimConfig { mixing_seed: 8, ..cfg };
    assert_ne!(run_sim(&cfg, &x0).unwrap().states, run_sim(&other, &x0).unwrap().states);
}

#[test]
fn invalid_configs() {
    let x0 = initial_state(32, 16, 0);
    assert!(run_sim(&SimConfig { lambda2: 1.5, ..SimConfig::default() }, &x0).is_err());
    assert!(run_sim(&SimConfig { lambda2: -0.1, ..SimConfig::default() }, &x0).is_err());
    assert!(run_sim(&SimConfig { n: 8, ..SimConfig::default() }, &x0).is_err());
}
