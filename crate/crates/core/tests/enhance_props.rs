use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use zpt_core::enhance::{self, ArtRegKind, SizeProfile};
use zpt_core::mc::McConfig;
use zpt_core::model::{build_lattice_weights, CovarianceModel, Criterion, DesignMatrix, Normalization};
use zpt_core::testkit::{self, TestSpec};

fn queen() -> (CovarianceModel, DesignMatrix) {
    let w = build_lattice_weights(4, 4, Criterion::Queen, Normalization::Binary).unwrap();
    (CovarianceModel::sar(w), DesignMatrix::intercept(16).unwrap())
}

fn queen_pair() -> (CovarianceModel, TestSpec, TestSpec) {
    let (model, x) = queen();
    let base = testkit::b_cliff_ord(model.weights().unwrap(), &x).unwrap();
    let ee = testkit::b_ee(model.limit_vector(), &x).unwrap();
    (model, base, ee)
}

#[test]
fn ee_test_has_limiting_power_one_in_both_families() {
    let trend = DesignMatrix::new(DMatrix::from_fn(16, 1, |i, _| (i + 1) as f64)).unwrap();
    let (sar, intercept) = queen();
    // AR(1) power approaches its limit like sqrt(1 - rho), so it is checked closer to the endpoint
    for (model, x, gap) in [(sar, intercept, 1e-3), (CovarianceModel::ar1(16).unwrap(), trend, 1e-5)] {
        let spec = testkit::b_ee(model.limit_vector(), &x).unwrap();
        let c = testkit::critical_value(&spec, 0.05).unwrap().c;
        let p = testkit::power(&spec, c, &model, model.upper() * (1.0 - gap)).unwrap();
        assert!(p >= 0.99, "{}: {p}", model.name());
    }
}

#[test]
fn artificial_regressor_tests_have_exact_size_and_interior_limits() {
    let (model, x) = queen();
    for kind in [ArtRegKind::Lbi, ArtRegKind::CliffOrd, ArtRegKind::Poi { rho_bar: 0.5 * model.upper() }] {
        let t = enhance::artificial_regressor_test(&model, &x, kind, 0.05).unwrap();
        assert!((t.power(&model, 0.0).unwrap() - 0.05).abs() <= 1e-6);
        let p = t.limiting_power.value();
        assert!(p > 0.0 && p < 1.0);
    }
    let rs = build_lattice_weights(4, 4, Criterion::Queen, Normalization::RowStandardized).unwrap();
    let rs_model = CovarianceModel::sar(rs);
    // row-standardized weights have a constant Perron vector, which the intercept spans
    assert!(matches!(
        enhance::artificial_regressor_test(&rs_model, &x, ArtRegKind::CliffOrd, 0.05),
        Err(zpt_core::Error::LimitInSpan)
    ));
    let trend = DesignMatrix::new(DMatrix::from_fn(16, 1, |i, _| (i + 1) as f64)).unwrap();
    let t = enhance::artificial_regressor_test(&rs_model, &trend, ArtRegKind::CliffOrd, 0.05).unwrap();
    assert!(matches!(t.limiting_power, enhance::LimitingPower::Approximate { .. }));
    assert!(t.to_key_value("f").contains("limiting_power_method = near_endpoint"));
}

#[test]
fn empirical_size_is_a_step_function_of_the_cutoff() {
    let (_, base, ee) = queen_pair();
    let kb = testkit::critical_value(&base, 0.04).unwrap().c;
    let profile = SizeProfile::simulate(&base, &ee, kb, McConfig::new(20_000, 8));
    let vals = &profile.ee_values;
    let mut prev = u64::MAX;
    for i in 0..200 {
        let c = ee.eig_max() * i as f64 / 199.0;
        let n = profile.count_at(c);
        assert!(n <= prev);
        prev = n;
    }
    // constant between consecutive order statistics, dropping by one at each
    for w in vals.windows(2).step_by(997).take(15) {
        let mid = 0.5 * (w[0] + w[1]);
        assert_eq!(profile.count_at(w[0]), profile.count_at(mid));
        assert_eq!(profile.count_at(mid), profile.count_at(w[1]) + 1);
    }
    let budget = (0.05f64 * 20_000.0).floor() as u64;
    let c = profile.smallest_cutoff(budget, 0.0).unwrap();
    assert!(profile.count_at(c) <= budget);
    let below = vals[vals.partition_point(|&t| t < c) - 1];
    assert!(profile.count_at(0.5 * (below + c)) > budget);
}

#[test]
fn enhanced_test_dominates_its_ee_part() {
    let (model, base, ee) = queen_pair();
    let t = enhance::enhanced_critical(&base, &ee, 0.05, 0.01, McConfig::new(200_000, 1)).unwrap();
    assert!(t.ee_cutoff <= t.ee_bound);
    for frac in [0.0, 0.3, 0.8, 0.99] {
        let rho = frac * model.upper();
        let star = enhance::enhanced_power(&t, &model, rho, McConfig::new(100_000, 4)).unwrap();
        let ee_only = testkit::power(&ee, t.ee_cutoff, &model, rho).unwrap();
        let base_only = testkit::power(&base, t.base_cutoff, &model, rho).unwrap();
        assert!(star.p >= ee_only.max(base_only) - 3.0 * star.se, "rho {rho}");
    }
    let at_zero = enhance::enhanced_power(&t, &model, 0.0, McConfig::new(100_000, 5)).unwrap();
    assert!((at_zero.p - 0.05).abs() <= 3.0 * at_zero.se);
}

#[test]
fn pure_ee_part_stays_below_level_near_alpha() {
    let (_, base, ee) = queen_pair();
    let t = enhance::enhanced_critical(&base, &ee, 0.05, 0.045, McConfig::new(400_000, 6)).unwrap();
    let ee_size = ee.null_exceedance(t.ee_cutoff).unwrap();
    assert!(ee_size <= 0.05 + 3.0 * t.achieved_size.se);
}

#[test]
fn profile_gap_is_small_at_zero() {
    let (model, base, ee) = queen_pair();
    let tests: Vec<_> = [0.01, 0.002]
        .iter()
        .map(|&e| enhance::enhanced_critical(&base, &ee, 0.05, e, McConfig::new(200_000, 3)).unwrap())
        .collect();
    let grid = [0.0, 0.2 * model.upper()];
    let prof = enhance::approximation_profile(&base, 0.05, &tests, &model, &grid, McConfig::new(200_000, 9)).unwrap();
    for row in &prof.rows {
        let (_, p, se, exact) = row.points[0];
        assert!((p - exact).abs() <= 3.0 * se, "{row:?}");
    }
    assert!(prof.to_csv().starts_with("epsilon,sup_gap,argmax_rho,se_at_sup\n"));
    assert!(enhance::approximation_profile(&base, 0.05, &tests, &model, &[model.upper()], McConfig::new(10_000, 1)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn union_rule_matches_product_form(seed in any::<u64>(), scale in 0.1f64..10.0) {
        let (_, base, ee) = queen_pair();
        let t = enhanced_fixture(&base, &ee);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y = DVector::from_fn(16, |_, _| StandardNormal.sample(&mut rng)) * scale;
        let phi = f64::from(u8::from(base.statistic(&y) > t.base_cutoff));
        let ind = f64::from(u8::from(ee.statistic(&y) > t.ee_cutoff));
        let product = phi + (1.0 - phi) * ind;
        prop_assert_eq!((phi + ind).min(1.0), product);
        prop_assert_eq!(t.rejects(&y), product > 0.5);
    }
}

fn enhanced_fixture(base: &TestSpec, ee: &TestSpec) -> enhance::EnhancedTest {
    use std::sync::OnceLock;
    static CELL: OnceLock<enhance::EnhancedTest> = OnceLock::new();
    CELL.get_or_init(|| enhance::enhanced_critical(base, ee, 0.05, 0.01, McConfig::new(50_000, 2)).unwrap()).clone()
}
