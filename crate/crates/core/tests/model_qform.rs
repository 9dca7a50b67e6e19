use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use zpt_core::model::{build_lattice_weights, complement_basis, CovarianceModel, Criterion, DesignMatrix, Normalization};
use zpt_core::qform::{self, QFormLaw};
use zpt_core::testkit;

fn normal_mat(seed: u64, r: usize, c: usize) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(&mut rng))
}

fn models() -> Vec<CovarianceModel> {
    let mut out = vec![CovarianceModel::ar1(9).unwrap(), CovarianceModel::ar1(16).unwrap()];
    for crit in [Criterion::Queen, Criterion::Rook] {
        for norm in [Normalization::Binary, Normalization::RowStandardized] {
            out.push(CovarianceModel::sar(build_lattice_weights(4, 4, crit, norm).unwrap()));
        }
    }
    out
}

#[test]
fn sigma_is_positive_definite_on_dense_grids() {
    for model in models() {
        for rho in testkit::densified_grid(model.upper(), 60, 0.9999).unwrap() {
            let s = model.sigma_at(rho).unwrap();
            assert!(s.cholesky().is_some(), "{} at {rho}", model.name());
        }
    }
}

#[test]
fn complement_basis_is_bitwise_deterministic() {
    let z = normal_mat(4, 12, 3);
    let a = complement_basis(&z).unwrap();
    let b = complement_basis(&z).unwrap();
    assert_eq!(a.rows().as_slice(), b.rows().as_slice());
}

#[test]
fn sar_sigma_matches_spectral_formula() {
    for crit in [Criterion::Queen, Criterion::Rook] {
        let w = build_lattice_weights(4, 4, crit, Normalization::Binary).unwrap();
        let eig = w.entries().clone().symmetric_eigen();
        let model = CovarianceModel::sar(w);
        for frac in [0.1, 0.5, 0.9, 0.99] {
            let rho = frac * model.upper();
            let mut oracle = DMatrix::zeros(16, 16);
            for i in 0..16 {
                let f = eig.eigenvectors.column(i);
                oracle += f * f.transpose() / (1.0 - rho * eig.eigenvalues[i]).powi(2);
            }
            let direct = model.sigma_at(rho).unwrap();
            let scale = oracle.amax();
            assert!((direct - oracle).amax() <= 1e-8 * scale.max(1.0));
        }
    }
}

#[test]
fn ar1_limit_vector_is_uniform() {
    for n in [2, 7, 16, 50] {
        let m = CovarianceModel::ar1(n).unwrap();
        let expected = 1.0 / (n as f64).sqrt();
        assert!(m.limit_vector().iter().all(|&v| v == expected));
    }
}

#[test]
fn ratio_probability_decreases_in_cutoff() {
    let b = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, 0.2, 0.5, 2.0, 3.0]));
    let h = normal_mat(8, 5, 5);
    let omega = &h * h.transpose() + DMatrix::identity(5, 5) * 0.2;
    let mut prev = 1.0 + 1e-12;
    for i in 1..40 {
        let c = -1.0 + 4.0 * i as f64 / 40.0;
        let p = qform::ratio_exceed_prob(&b, c, &omega).unwrap();
        assert!(p < prev, "c = {c}");
        prev = p;
    }
    assert_eq!(qform::ratio_exceed_prob(&b, 3.0, &omega).unwrap(), 0.0);
    assert_eq!(qform::ratio_exceed_prob(&b, -1.0, &omega).unwrap(), 1.0);
}

#[test]
fn design_row_order_does_not_change_the_statistic_law() {
    let model = CovarianceModel::ar1(10).unwrap();
    let x = DesignMatrix::new(normal_mat(3, 10, 2)).unwrap();
    let spec = testkit::b_lbi(&model, &x).unwrap();
    let c = testkit::critical_value(&spec, 0.05).unwrap();
    assert_relative_eq!(spec.null_exceedance(c.c).unwrap(), 0.05, epsilon = 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn orthogonal_conjugation_keeps_weights(seed in any::<u64>(), m in 2usize..7) {
        let g = normal_mat(seed, m, m);
        let a = (&g + g.transpose()) * 0.5;
        let h = normal_mat(seed ^ 1, m, m);
        let omega = &h * h.transpose() + DMatrix::identity(m, m) * 0.05;
        let u = normal_mat(seed ^ 2, m, m).qr().q();
        let w0 = qform::qform_law(&a, &omega).unwrap();
        let w1 = qform::qform_law(&(&u * &a * u.transpose()), &(&u * &omega * u.transpose())).unwrap();
        prop_assert_eq!(w0.weights().len(), w1.weights().len());
        for (x, y) in w0.weights().iter().zip(w1.weights()) {
            prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
        }
    }

    #[test]
    fn imhof_is_a_probability(seed in any::<u64>(), d in 1usize..20) {
        let w: Vec<f64> = normal_mat(seed, d, 1).iter().copied().collect();
        let p = qform::imhof_positive(&QFormLaw::from_weights(w)).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
    }

    #[test]
    fn statistic_stays_in_spectrum(seed in any::<u64>()) {
        let model = CovarianceModel::sar(build_lattice_weights(4, 4, Criterion::Queen, Normalization::RowStandardized).unwrap());
        let x = DesignMatrix::new(normal_mat(seed, 16, 3)).unwrap();
        let spec = testkit::b_poi(&model, &x, 0.3 * model.upper()).unwrap();
        let y = DVector::from_iterator(16, normal_mat(seed ^ 9, 16, 1).iter().copied());
        let t = spec.statistic(&y);
        prop_assert!(t >= spec.eig_min() - 1e-10 && t <= spec.eig_max() + 1e-10);
        prop_assert_eq!(spec.statistic(&(x.entries() * DVector::from_element(3, 1.0))), spec.eig_min());
    }
}
