//! Probabilities `P(Z'AZ > 0)` for centred Gaussian `Z`.
//!
//! Writing `Cov(Z) = L L'`, the form is distributed as `sum_i w_i chi2_1` with `w` the
//! eigenvalues of `L'AL`. Positivity probabilities are evaluated by numerical inversion of
//! the characteristic function,
//!
//! ```text
//! P(Q > 0) = 1/2 + (1/pi) int_0^inf sin(theta(u)) / (u gamma(u)) du,
//! theta(u) = 1/2 sum atan(w_i u),   gamma(u) = prod (1 + w_i^2 u^2)^{1/4},
//! ```
//!
//! with a seeded Monte Carlo estimator kept alongside as an independent check.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;
use crate::mc::{self, McConfig, McEstimate};

/// Relative magnitude below which an eigenvalue counts as zero.
pub const WEIGHT_TOL: f64 = 1e-12;
/// Absolute accuracy target of the inversion on the probability scale.
pub const ABS_TOL: f64 = 1e-8;
/// Integrand evaluations allowed before declaring non-convergence.
pub const MAX_EVALS: usize = 10_000_000;
/// Relative tolerance for negative eigenvalues of a covariance matrix.
pub const PSD_TOL: f64 = 1e-8;

/// Eigenvalue weights of a central Gaussian quadratic form, sorted ascending with
/// negligible entries removed.
#[derive(Debug, Clone, PartialEq)]
pub struct QFormLaw {
    weights: Vec<f64>,
    dropped: usize,
}

impl QFormLaw {
    pub fn from_weights<I: IntoIterator<Item = f64>>(raw: I) -> Self {
        let mut all: Vec<f64> = raw.into_iter().collect();
        let scale = all.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
        let total = all.len();
        all.retain(|x| x.abs() > WEIGHT_TOL * scale && scale > 0.0);
        all.sort_by(f64::total_cmp);
        let dropped = total - all.len();
        Self { weights: all, dropped }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn d_effective(&self) -> usize {
        self.weights.len()
    }

    pub fn dropped(&self) -> usize {
        self.dropped
    }

    /// `Some(p)` when the positivity probability is 0 or 1 without integration.
    pub fn degenerate_probability(&self) -> Option<f64> {
        match (self.weights.first(), self.weights.last()) {
            (None, _) | (_, None) => Some(0.0),
            (Some(lo), _) if *lo > 0.0 => Some(1.0),
            (_, Some(hi)) if *hi < 0.0 => Some(0.0),
            _ => None,
        }
    }
}

/// Law of `Z'AZ` for `Z ~ N(0, Omega)`, using the eigen square root of `Omega`.
pub fn qform_law(a: &DMatrix<f64>, omega: &DMatrix<f64>) -> Result<QFormLaw> {
    if !a.is_square() || a.shape() != omega.shape() {
        return Err(Error::Dimension(format!("A is {:?}, Omega is {:?}", a.shape(), omega.shape())));
    }
    if !linalg::is_symmetric(a, 1e-10) || !linalg::is_symmetric(omega, 1e-10) {
        return Err(Error::Domain("A and Omega must be symmetric".into()));
    }
    let l = linalg::psd_factor(omega, PSD_TOL)?;
    Ok(qform_law_factor(a, &l))
}

/// Law of `Z'AZ` for `Z = F g`, `g ~ N(0, I)`; `F` may be rectangular.
pub fn qform_law_factor(a: &DMatrix<f64>, f: &DMatrix<f64>) -> QFormLaw {
    let inner = linalg::symmetrize(&(f.transpose() * a * f));
    QFormLaw::from_weights(linalg::sym_eigenvalues(&inner).iter().copied())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Inversion,
    MonteCarlo(McConfig),
}

/// A probability, with a standard error when it was simulated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probability {
    pub value: f64,
    pub se: Option<f64>,
}

pub fn prob_positive(law: &QFormLaw, method: Method) -> Result<Probability> {
    match method {
        Method::Inversion => Ok(Probability { value: imhof_positive(law)?, se: None }),
        Method::MonteCarlo(cfg) => {
            let est = mc_positive(law, cfg);
            Ok(Probability { value: est.p, se: Some(est.se) })
        }
    }
}

/// `P(T_B > c)` under `Cov = Omega`, i.e. `P(Z'(B - cI)Z > 0)`.
pub fn ratio_exceed_prob(b: &DMatrix<f64>, c: f64, omega: &DMatrix<f64>) -> Result<f64> {
    let m = b.nrows();
    let a = b - DMatrix::<f64>::identity(m, m) * c;
    imhof_positive(&qform_law(&a, omega)?)
}

/// Monte Carlo estimate of the positivity probability.
pub fn mc_positive(law: &QFormLaw, cfg: McConfig) -> McEstimate {
    let w = law.weights();
    let d = w.len();
    if d == 0 {
        return McEstimate::from_count(0, cfg);
    }
    let counts = mc::par_blocks(cfg, d, |_, draws| {
        draws
            .column_iter()
            .filter(|z| z.iter().zip(w).map(|(x, wi)| wi * x * x).sum::<f64>() > 0.0)
            .count() as u64
    });
    McEstimate::from_count(counts.into_iter().sum(), cfg)
}

// Gauss-Kronrod 7/15 nodes on [-1, 1] (QUADPACK qk15).
const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

struct Integrand<'a> {
    w: &'a [f64],
    evals: usize,
}

impl Integrand<'_> {
    fn eval(&mut self, u: f64) -> f64 {
        self.evals += 1;
        if u == 0.0 {
            return 0.5 * self.w.iter().sum::<f64>();
        }
        let mut theta = 0.0;
        let mut log_gamma = 0.0;
        for &wi in self.w {
            let x = wi * u;
            theta += x.atan();
            log_gamma += x.mul_add(x, 1.0).ln();
        }
        (0.5 * theta).sin() / (u * (0.25 * log_gamma).exp())
    }

    fn gk15(&mut self, a: f64, b: f64) -> (f64, f64) {
        let center = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        let fc = self.eval(center);
        let mut kronrod = fc * WGK[7];
        let mut gauss = fc * WG[3];
        for j in 0..7 {
            let dx = half * XGK[j];
            let s = self.eval(center - dx) + self.eval(center + dx);
            kronrod += WGK[j] * s;
            if j % 2 == 1 {
                gauss += WG[j / 2] * s;
            }
        }
        (kronrod * half, ((kronrod - gauss) * half).abs())
    }

    /// Globally adaptive bisection on `[a, b]` until the summed error is below `tol`.
    fn adaptive(&mut self, a: f64, b: f64, tol: f64) -> Result<f64> {
        let (v, e) = self.gk15(a, b);
        let mut pieces = vec![(a, b, v, e)];
        loop {
            let (total, err) = pieces.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.2, acc.1 + p.3));
            if err <= tol {
                return Ok(total);
            }
            if self.evals > MAX_EVALS {
                return Err(Error::Numerical(format!(
                    "characteristic-function inversion did not converge after {} evaluations \
                     (interval [{a:.3e}, {b:.3e}], error estimate {err:.3e}, weights d = {})",
                    self.evals,
                    self.w.len()
                )));
            }
            let worst = pieces
                .iter()
                .enumerate()
                .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
                .map(|(i, _)| i)
                .expect("non-empty");
            let (lo, hi, _, _) = pieces.swap_remove(worst);
            let mid = 0.5 * (lo + hi);
            let (v1, e1) = self.gk15(lo, mid);
            let (v2, e2) = self.gk15(mid, hi);
            pieces.push((lo, mid, v1, e1));
            pieces.push((mid, hi, v2, e2));
        }
    }
}

/// Positivity probability by characteristic-function inversion, accurate to [`ABS_TOL`].
pub fn imhof_positive(law: &QFormLaw) -> Result<f64> {
    if let Some(p) = law.degenerate_probability() {
        return Ok(p);
    }
    // the event is scale free; normalise so that max |w| = 1
    let scale = law.weights().iter().fold(0.0_f64, |a, x| a.max(x.abs()));
    let w: Vec<f64> = law.weights().iter().map(|x| x / scale).collect();
    let half_d = 0.5 * w.len() as f64;
    let log_root_prod: f64 = w.iter().map(|x| 0.5 * x.abs().ln()).sum();
    // truncation bound for the tail beyond U, on the probability scale
    let tail = |u: f64| (-(std::f64::consts::PI * half_d).ln() - half_d * u.ln() - log_root_prod).exp();

    let integral_tol = std::f64::consts::PI * 0.5 * ABS_TOL;
    let piece_tol = integral_tol / 64.0;
    let mut f = Integrand { w: &w, evals: 0 };
    let mut total = f.adaptive(0.0, 1.0, piece_tol)?;
    let mut upper = 1.0;
    while tail(upper) > 0.25 * ABS_TOL {
        total += f.adaptive(upper, 2.0 * upper, piece_tol)?;
        upper *= 2.0;
        if upper > 1e300 {
            return Err(Error::Numerical("tail bound never fell below tolerance".into()));
        }
    }
    let p = 0.5 + total / std::f64::consts::PI;
    Ok(p.clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn two_weight(l1: f64, l2: f64) -> f64 {
        2.0 / PI * (l1 / l2).sqrt().atan()
    }

    #[test]
    fn identity_law() {
        let law = qform_law(&DMatrix::identity(2, 2), &DMatrix::identity(2, 2)).unwrap();
        assert_eq!(law.weights(), &[1.0, 1.0]);
        assert_eq!(imhof_positive(&law).unwrap(), 1.0);
    }

    #[test]
    fn diagonal_law() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, -1.0]));
        let om = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![4.0, 1.0]));
        let law = qform_law(&a, &om).unwrap();
        assert!((law.weights()[0] + 1.0).abs() < 1e-14);
        assert!((law.weights()[1] - 4.0).abs() < 1e-14);
    }

    #[test]
    fn symmetric_pair_is_half() {
        for l in [1e-3, 1.0, 250.0] {
            let p = imhof_positive(&QFormLaw::from_weights([l, -l])).unwrap();
            assert!((p - 0.5).abs() < 1e-9, "{l}: {p}");
        }
    }

    #[test]
    fn three_to_one_is_two_thirds() {
        let p = imhof_positive(&QFormLaw::from_weights([3.0, -1.0])).unwrap();
        assert!((p - 2.0 / 3.0).abs() < 1e-8);
        assert!((p - two_weight(3.0, 1.0)).abs() < 1e-12 + 1e-8);
        let mc = mc_positive(&QFormLaw::from_weights([3.0, -1.0]), McConfig::new(200_000, 3));
        assert!((mc.p - 2.0 / 3.0).abs() < 4.0 * mc.se);
    }

    #[test]
    fn extreme_ratio_two_weight() {
        for (l1, l2) in [(1.0, 1e-6), (1e-6, 1.0), (1.0, 1e-9)] {
            let p = imhof_positive(&QFormLaw::from_weights([l1, -l2])).unwrap();
            assert!((p - two_weight(l1, l2)).abs() < 1e-7, "{l1} {l2}: {p}");
        }
    }

    #[test]
    fn degenerate_and_dropped() {
        let law = QFormLaw::from_weights([0.0, 1e-20, 2.0, 3.0]);
        assert_eq!(law.d_effective(), 2);
        assert_eq!(law.dropped(), 2);
        assert_eq!(law.degenerate_probability(), Some(1.0));
        assert_eq!(QFormLaw::from_weights([-1.0, -2.0]).degenerate_probability(), Some(0.0));
        assert_eq!(QFormLaw::from_weights([0.0, 0.0]).degenerate_probability(), Some(0.0));
    }

    #[test]
    fn non_psd_omega_rejected() {
        let om = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, -0.1]));
        assert!(matches!(qform_law(&DMatrix::identity(2, 2), &om), Err(Error::NotPsd(_))));
    }

    #[test]
    fn beta_half_half_median() {
        let b = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.0, 1.0]));
        let p = ratio_exceed_prob(&b, 0.5, &DMatrix::identity(2, 2)).unwrap();
        assert!((p - 0.5).abs() < 1e-9);
        // Beta(1/2,1/2) survival function
        for c in [0.1, 0.3, 0.9] {
            let p = ratio_exceed_prob(&b, c, &DMatrix::identity(2, 2)).unwrap();
            let exact = 1.0 - 2.0 / PI * c.sqrt().asin();
            assert!((p - exact).abs() < 1e-8);
        }
    }

    #[test]
    fn support_endpoints() {
        let b = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-1.0, 0.5, 2.0]));
        let eye = DMatrix::identity(3, 3);
        assert_eq!(ratio_exceed_prob(&b, -1.5, &eye).unwrap(), 1.0);
        assert_eq!(ratio_exceed_prob(&b, 2.0, &eye).unwrap(), 0.0);
        assert_eq!(ratio_exceed_prob(&b, 3.0, &eye).unwrap(), 0.0);
    }
}
