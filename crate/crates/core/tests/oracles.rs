mod common;

use elrdd_core::elcore::dual_solve;
use elrdd_core::inference::{chi2_quantile, chi2_sf};
use elrdd_core::montecarlo::{gauss_hermite, normal_cdf};
use elrdd_core::SolverConfig;
use proptest::prelude::*;

#[test]
fn chi2_tail_matches_incomplete_gamma() {
    for df in 1..=6 {
        for i in 1..200 {
            let x = 0.05 * i as f64;
            let got = chi2_sf(x, df);
            let want = common::chi2_sf_oracle(x, df);
            assert!((got - want).abs() < 1e-10, "df {df} x {x}: {got} vs {want}");
        }
    }
}

#[test]
fn chi2_quantiles_invert_the_oracle_tail() {
    for df in 1..=4 {
        for level in [0.5, 0.9, 0.95, 0.99] {
            let q = chi2_quantile(level, df).unwrap();
            assert!((common::chi2_sf_oracle(q, df) - (1.0 - level)).abs() < 1e-9);
        }
    }
    assert!((chi2_quantile(0.95, 1).unwrap() - 3.841_458_820_694_124).abs() < 1e-9);
}

#[test]
fn normal_cdf_matches_erf_series() {
    // Φ(x) = 1/2 + x φ(x) Σ x^{2k} / (1·3·…·(2k+1))
    for i in -40..=40 {
        let x = 0.1 * i as f64;
        let phi = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let (mut term, mut sum) = (x, x);
        for k in 1..200 {
            term *= x * x / (2 * k + 1) as f64;
            sum += term;
        }
        let want = 0.5 + phi * sum;
        assert!((normal_cdf(x) - want).abs() < 1e-10, "x = {x}: {} vs {want}", normal_cdf(x));
    }
}

#[test]
fn gauss_hermite_reproduces_normal_moments() {
    let (nodes, weights) = gauss_hermite(20);
    let moment = |k: i32| nodes.iter().zip(&weights).map(|(x, w)| w * x.powi(k)).sum::<f64>();
    assert!((moment(0) - 1.0).abs() < 1e-12);
    assert!(moment(1).abs() < 1e-12);
    assert!((moment(2) - 1.0).abs() < 1e-10);
    assert!((moment(4) - 3.0).abs() < 1e-9);
    assert!((moment(6) - 15.0).abs() < 1e-8);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn dual_agrees_with_primal(
        d in 1usize..=3,
        rows in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 3), 6..=12),
        shift in prop::collection::vec(-0.3f64..0.3, 3),
    ) {
        let u: Vec<f64> = rows.iter().flat_map(|r| (0..d).map(|j| r[j] + shift[j])).collect();
        let dual = dual_solve(&u, d, None, &SolverConfig::default()).unwrap();
        let primal = common::primal_el(&u, d);
        match primal {
            Some(p) => {
                prop_assert!(dual.criterion.is_finite());
                prop_assert!((dual.criterion - p).abs() < 1e-5, "dual {} primal {}", dual.criterion, p);
            }
            None => prop_assert!(!dual.criterion.is_finite() || dual.criterion > 50.0),
        }
    }
}
