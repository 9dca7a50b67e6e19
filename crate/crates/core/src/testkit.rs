//! Ratio statistics `T_B(y) = y'C'BCy / |Cy|^2`, their exact size-alpha critical values,
//! and power functions under a covariance family.
//!
//! Every statistic here is invariant under `y -> gamma y + X theta`, so rejection
//! probabilities depend on `rho` only and are computed at `beta = 0`, `sigma = 1`:
//! with `Z = C y ~ N(0, C Sigma(rho) C')`, `P(T_B > c) = P(Z'(B - cI)Z > 0)`.

use std::fmt;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg;
use crate::mc::McConfig;
use crate::model::{ComplementBasis, CovarianceModel, DesignMatrix, WeightsMatrix};
use crate::qform::{self, QFormLaw};

/// Relative threshold for treating `y` (or `e`) as lying in `span(X)`.
pub const SPAN_TOL: f64 = 1e-9;
/// Required agreement between the achieved size and the nominal level.
pub const SOLVER_TOL: f64 = 1e-7;
/// Largest condition number accepted when inverting `C Sigma(rho_bar) C'`.
pub const POI_MAX_COND: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Label {
    Lbi,
    Poi { rho_bar: f64 },
    CliffOrd,
    Ee,
    Custom,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Lbi => write!(f, "LBI"),
            Label::Poi { rho_bar } => write!(f, "POI({rho_bar})"),
            Label::CliffOrd => write!(f, "CliffOrd"),
            Label::Ee => write!(f, "EE"),
            Label::Custom => write!(f, "Custom"),
        }
    }
}

/// A symmetric matrix `B` acting on the complement of `span(X)`, with its spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct TestSpec {
    b: DMatrix<f64>,
    basis: ComplementBasis,
    eigenvalues: DVector<f64>,
    label: Label,
}

impl TestSpec {
    pub fn new(b: DMatrix<f64>, basis: ComplementBasis, label: Label) -> Result<Self> {
        if b.shape() != (basis.dim(), basis.dim()) {
            return Err(Error::Dimension(format!(
                "B is {:?} but the complement has dimension {}",
                b.shape(),
                basis.dim()
            )));
        }
        if !linalg::is_symmetric(&b, 1e-10) {
            return Err(Error::Domain("B must be symmetric".into()));
        }
        let b = linalg::symmetrize(&b);
        let eigenvalues = linalg::sym_eigenvalues(&b);
        Ok(Self { b, basis, eigenvalues, label })
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn basis(&self) -> &ComplementBasis {
        &self.basis
    }

    pub fn label(&self) -> Label {
        self.label
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn eig_min(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn eig_max(&self) -> f64 {
        self.eigenvalues[self.eigenvalues.len() - 1]
    }

    fn require_spread(&self) -> Result<()> {
        let scale = self.eig_min().abs().max(self.eig_max().abs());
        if !(self.eig_max() - self.eig_min() > 1e-12 * scale) {
            return Err(Error::Degenerate(format!(
                "B has a single eigenvalue {:.6e}; the statistic is constant",
                self.eig_max()
            )));
        }
        Ok(())
    }

    /// `T_B(y)`, with `y` in `span(X)` (including `y = 0`) mapped to `lambda_1(B)`.
    pub fn statistic(&self, y: &DVector<f64>) -> f64 {
        let z = self.basis.apply(y);
        let zn = z.norm();
        if !(zn > SPAN_TOL * y.norm()) || zn == 0.0 {
            return self.eig_min();
        }
        let t = z.dot(&(&self.b * &z)) / (zn * zn);
        t.clamp(self.eig_min(), self.eig_max())
    }

    /// Null rejection probability `P_0(T_B > c)`.
    pub fn null_exceedance(&self, c: f64) -> Result<f64> {
        qform::imhof_positive(&QFormLaw::from_weights(self.eigenvalues.iter().map(|l| l - c)))
    }

    /// Rejection probability `P_rho(T_B > c)`.
    pub fn exceedance(&self, c: f64, model: &CovarianceModel, rho: f64) -> Result<f64> {
        if model.n() != self.basis.n() {
            return Err(Error::Dimension("model and test live in different sample sizes".into()));
        }
        if rho == 0.0 {
            return self.null_exceedance(c);
        }
        let factor = self.basis.rows() * model.sigma_factor(rho)?;
        let m = self.basis.dim();
        let a = &self.b - DMatrix::<f64>::identity(m, m) * c;
        qform::imhof_positive(&qform::qform_law_factor(&a, &factor))
    }
}

pub fn statistic_value(spec: &TestSpec, y: &DVector<f64>) -> f64 {
    spec.statistic(y)
}

/// Locally best invariant test, `B = C Sigma'(0) C'`.
pub fn b_lbi(model: &CovarianceModel, x: &DesignMatrix) -> Result<TestSpec> {
    b_lbi_in(model, x.complement_basis())
}

pub fn b_lbi_in(model: &CovarianceModel, basis: ComplementBasis) -> Result<TestSpec> {
    let b = basis.congruence(&model.sigma_dot_zero());
    TestSpec::new(b, basis, Label::Lbi)
}

/// Point-optimal invariant test against `rho_bar`, `B = -(C Sigma(rho_bar) C')^{-1}`.
pub fn b_poi(model: &CovarianceModel, x: &DesignMatrix, rho_bar: f64) -> Result<TestSpec> {
    b_poi_in(model, x.complement_basis(), rho_bar)
}

pub fn b_poi_in(model: &CovarianceModel, basis: ComplementBasis, rho_bar: f64) -> Result<TestSpec> {
    if !(rho_bar > 0.0 && rho_bar < model.upper()) {
        return Err(Error::Domain(format!("rho_bar = {rho_bar} outside (0, {})", model.upper())));
    }
    let omega = basis.congruence(&model.sigma_at(rho_bar)?);
    let b = -linalg::spd_inverse(&omega, POI_MAX_COND)?;
    TestSpec::new(b, basis, Label::Poi { rho_bar })
}

/// Cliff-Ord test, `B = C (W + W') C'`.
pub fn b_cliff_ord(w: &WeightsMatrix, x: &DesignMatrix) -> Result<TestSpec> {
    b_cliff_ord_in(w, x.complement_basis())
}

pub fn b_cliff_ord_in(w: &WeightsMatrix, basis: ComplementBasis) -> Result<TestSpec> {
    let sym = w.entries() + w.entries().transpose();
    let b = basis.congruence(&sym);
    TestSpec::new(b, basis, Label::CliffOrd)
}

/// `B = C e e' C'`.
pub fn b_ee(e: &DVector<f64>, x: &DesignMatrix) -> Result<TestSpec> {
    b_ee_in(e, x.complement_basis())
}

pub fn b_ee_in(e: &DVector<f64>, basis: ComplementBasis) -> Result<TestSpec> {
    let ce = basis.apply(e);
    if !(ce.norm() > SPAN_TOL * e.norm()) {
        return Err(Error::Degenerate("e lies in span(X); C e e' C' = 0".into()));
    }
    TestSpec::new(&ce * ce.transpose(), basis, Label::Ee)
}

/// Size-alpha critical value `kappa(alpha)` with `P_0(T_B > kappa) = alpha`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticalValue {
    pub alpha: f64,
    pub c: f64,
    pub achieved_size: f64,
    pub solver_tol: f64,
}

/// Solves `P_0(T_B > c) = alpha` by bisection on `[lambda_1(B), lambda_max(B)]` followed by
/// a secant step inside the final bracket.
pub fn critical_value(spec: &TestSpec, alpha: f64) -> Result<CriticalValue> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha = {alpha} outside (0, 1)")));
    }
    spec.require_spread()?;
    let f = |c: f64| spec.null_exceedance(c).map(|p| p - alpha);
    let (mut lo, mut hi) = (spec.eig_min(), spec.eig_max());
    let (mut f_lo, mut f_hi) = (1.0 - alpha, -alpha);
    let width = 1e-10 * (hi - lo);
    let mut iter = 0;
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let f_mid = f(mid)?;
        if f_mid > 0.0 {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
            f_hi = f_mid;
        }
        iter += 1;
        if (hi - lo <= width && f_lo.abs().min(f_hi.abs()) <= 10.0 * SOLVER_TOL) || iter >= 200 {
            break;
        }
    }
    debug_assert!(f_lo >= 0.0 && f_hi <= 0.0, "bracket lost");
    let secant = lo + f_lo * (hi - lo) / (f_lo - f_hi);
    let candidates = [secant, lo, hi];
    let mut best = (f64::NAN, f64::INFINITY);
    for c in candidates {
        if !(c >= lo && c <= hi) {
            continue;
        }
        let err = f(c)?;
        if err.abs() < best.1.abs() {
            best = (c, err);
        }
    }
    let (c, err) = best;
    if !(err.abs() <= SOLVER_TOL) {
        return Err(Error::Numerical(format!(
            "critical value for alpha = {alpha} reached size error {err:.3e} in [{lo}, {hi}]"
        )));
    }
    Ok(CriticalValue { alpha, c, achieved_size: alpha + err, solver_tol: SOLVER_TOL })
}

/// Rejection probability of `{T_B > c}` at `rho`.
pub fn power(spec: &TestSpec, c: f64, model: &CovarianceModel, rho: f64) -> Result<f64> {
    spec.exceedance(c, model, rho)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CurveMethod {
    Analytic,
    MonteCarlo(McConfig),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub rho: f64,
    pub power: f64,
    pub se: Option<f64>,
}

/// Rejection probabilities over a grid of `rho` values.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerCurve {
    pub label: String,
    pub alpha: f64,
    pub method: CurveMethod,
    pub points: Vec<CurvePoint>,
}

impl PowerCurve {
    pub fn rhos(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.rho).collect()
    }

    pub fn powers(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.power).collect()
    }

    pub fn last(&self) -> Option<&CurvePoint> {
        self.points.last()
    }

    /// CSV with columns `rho,power,method,label,alpha,seed`; `preamble` lines are
    /// written first as `#` comments.
    pub fn write_csv<W: Write>(&self, mut out: W, preamble: &[String]) -> std::io::Result<()> {
        for line in preamble {
            writeln!(out, "# {line}")?;
        }
        writeln!(out, "rho,power,method,label,alpha,seed")?;
        let (method, seed) = match self.method {
            CurveMethod::Analytic => ("analytic", String::new()),
            CurveMethod::MonteCarlo(cfg) => ("montecarlo", cfg.seed.to_string()),
        };
        for p in &self.points {
            writeln!(out, "{},{},{},{},{},{}", p.rho, p.power, method, self.label, self.alpha, seed)?;
        }
        Ok(())
    }
}

fn check_grid(grid: &[f64], model: &CovarianceModel) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Domain("empty rho grid".into()));
    }
    for w in grid.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::Domain("rho grid must be strictly increasing".into()));
        }
    }
    let first = grid[0];
    if !(first >= 0.0) || !(grid[grid.len() - 1] < model.upper()) {
        return Err(Error::Domain(format!("rho grid must lie inside [0, {})", model.upper())));
    }
    Ok(())
}

pub fn power_curve(spec: &TestSpec, c: f64, model: &CovarianceModel, grid: &[f64]) -> Result<PowerCurve> {
    check_grid(grid, model)?;
    let points = grid
        .par_iter()
        .map(|&rho| Ok(CurvePoint { rho, power: spec.exceedance(c, model, rho)?, se: None }))
        .collect::<Result<Vec<_>>>()?;
    Ok(PowerCurve {
        label: spec.label().to_string(),
        alpha: f64::NAN,
        method: CurveMethod::Analytic,
        points,
    })
}

/// Power of the level-alpha test for `B` at each grid point.
pub fn level_curve(spec: &TestSpec, alpha: f64, model: &CovarianceModel, grid: &[f64]) -> Result<PowerCurve> {
    let cv = critical_value(spec, alpha)?;
    let mut curve = power_curve(spec, cv.c, model, grid)?;
    curve.alpha = alpha;
    Ok(curve)
}

/// For each `rho_bar` in the grid, the power at `rho_bar` of the level-alpha point-optimal
/// invariant test against `rho_bar`. At `rho_bar = 0` every invariant level-alpha test has
/// power alpha.
pub fn power_envelope(model: &CovarianceModel, x: &DesignMatrix, alpha: f64, grid: &[f64]) -> Result<PowerCurve> {
    check_grid(grid, model)?;
    let basis = x.complement_basis();
    let points = grid
        .par_iter()
        .map(|&rho| {
            if rho == 0.0 {
                return Ok(CurvePoint { rho, power: alpha, se: None });
            }
            let spec = b_poi_in(model, basis.clone(), rho)?;
            let cv = critical_value(&spec, alpha)?;
            Ok(CurvePoint { rho, power: spec.exceedance(cv.c, model, rho)?, se: None })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PowerCurve { label: "Envelope".into(), alpha, method: CurveMethod::Analytic, points })
}

/// `count` points in `[0, max_fraction * a]`, uniform in `log(1 - rho/a)` so that they
/// accumulate near the endpoint.
pub fn densified_grid(upper: f64, count: usize, max_fraction: f64) -> Result<Vec<f64>> {
    if count < 2 || !(max_fraction > 0.0 && max_fraction < 1.0) {
        return Err(Error::Domain(format!(
            "grid needs count >= 2 and max fraction in (0, 1), got {count}, {max_fraction}"
        )));
    }
    let end = (1.0 - max_fraction).ln();
    Ok((0..count)
        .map(|i| {
            let t = end * i as f64 / (count - 1) as f64;
            upper * (1.0 - t.exp())
        })
        .collect())
}

/// `count` equally spaced points in `[0, max_fraction * a]`.
pub fn uniform_grid(upper: f64, count: usize, max_fraction: f64) -> Vec<f64> {
    (0..count).map(|i| upper * max_fraction * i as f64 / (count - 1).max(1) as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_lattice_weights, Criterion, Normalization};
    use std::f64::consts::PI;

    fn queen() -> (CovarianceModel, DesignMatrix) {
        let w = build_lattice_weights(4, 4, Criterion::Queen, Normalization::Binary).unwrap();
        (CovarianceModel::sar(w), DesignMatrix::intercept(16).unwrap())
    }

    fn diag_spec(vals: &[f64]) -> TestSpec {
        let n = vals.len() + 1;
        let x = DesignMatrix::intercept(n).unwrap();
        let b = DMatrix::from_diagonal(&DVector::from_column_slice(vals));
        TestSpec::new(b, x.complement_basis(), Label::Custom).unwrap()
    }

    #[test]
    fn identity_statistic_is_one() {
        let x = DesignMatrix::intercept(5).unwrap();
        let spec = TestSpec::new(DMatrix::identity(4, 4), x.complement_basis(), Label::Custom).unwrap();
        let y = DVector::from_vec(vec![1.0, -2.0, 0.3, 4.0, 0.0]);
        assert!((spec.statistic(&y) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn eigenvector_gives_eigenvalue() {
        let (model, x) = queen();
        let spec = b_cliff_ord(model.weights().unwrap(), &x).unwrap();
        let (vals, vecs) = linalg::sym_eigen(spec.b());
        for i in [0, 7, 14] {
            let y = spec.basis().rows().transpose() * vecs.column(i);
            assert!((spec.statistic(&y) - vals[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn in_span_and_zero_map_to_lambda_min() {
        let (model, x) = queen();
        let spec = b_cliff_ord(model.weights().unwrap(), &x).unwrap();
        assert_eq!(spec.statistic(&DVector::from_element(16, 3.0)), spec.eig_min());
        assert_eq!(spec.statistic(&DVector::zeros(16)), spec.eig_min());
    }

    #[test]
    fn lbi_equals_cliff_ord_for_sar() {
        let (model, x) = queen();
        let lbi = b_lbi(&model, &x).unwrap();
        let co = b_cliff_ord(model.weights().unwrap(), &x).unwrap();
        assert!(linalg::max_abs(&(lbi.b() - co.b())) < 1e-8);
    }

    #[test]
    fn ee_spectrum_is_rank_one() {
        let (model, x) = queen();
        let e = model.limit_vector();
        let spec = b_ee(e, &x).unwrap();
        let ce = x.complement_basis().apply(e);
        let ev = spec.eigenvalues();
        assert!((spec.eig_max() - ce.norm_squared()).abs() < 1e-12);
        assert!(ev.iter().take(ev.len() - 1).all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn ee_in_span_is_degenerate() {
        let model = CovarianceModel::ar1(8).unwrap();
        let x = DesignMatrix::intercept(8).unwrap();
        assert!(matches!(b_ee(model.limit_vector(), &x), Err(Error::Degenerate(_))));
    }

    #[test]
    fn poi_inverse_round_trip() {
        let (model, x) = queen();
        let rho_bar = 0.5 * model.upper();
        let spec = b_poi(&model, &x, rho_bar).unwrap();
        let omega = x.complement_basis().congruence(&model.sigma_at(rho_bar).unwrap());
        let back = -spec.b().clone().try_inverse().unwrap();
        assert!(linalg::max_abs(&(back - omega)) < 1e-8);
        assert!(b_poi(&model, &x, model.upper()).is_err());
        assert!(b_poi(&model, &x, 0.0).is_err());
    }

    #[test]
    fn beta_half_half_critical_value() {
        let spec = diag_spec(&[0.0, 1.0]);
        let cv = critical_value(&spec, 0.05).unwrap();
        let exact = (0.475 * PI).sin().powi(2);
        assert!((cv.c - exact).abs() < 1e-6, "{} vs {exact}", cv.c);
        assert!((cv.achieved_size - 0.05).abs() <= SOLVER_TOL);
    }

    #[test]
    fn critical_value_limits_and_monotonicity() {
        let spec = diag_spec(&[-1.0, 0.2, 0.5, 2.0]);
        let tiny = critical_value(&spec, 1e-6).unwrap();
        let big = critical_value(&spec, 1.0 - 1e-6).unwrap();
        assert!(spec.eig_max() - tiny.c < 0.05);
        assert!(big.c - spec.eig_min() < 0.05);
        let cs: Vec<f64> = [0.01, 0.05, 0.1, 0.5, 0.9]
            .iter()
            .map(|a| critical_value(&spec, *a).unwrap().c)
            .collect();
        assert!(cs.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn critical_value_errors() {
        let spec = diag_spec(&[1.0, 1.0, 1.0]);
        assert!(matches!(critical_value(&spec, 0.05), Err(Error::Degenerate(_))));
        let ok = diag_spec(&[0.0, 1.0]);
        assert!(matches!(critical_value(&ok, 0.0), Err(Error::Domain(_))));
        assert!(matches!(critical_value(&ok, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn power_at_zero_is_size() {
        let (model, x) = queen();
        let spec = b_cliff_ord(model.weights().unwrap(), &x).unwrap();
        let cv = critical_value(&spec, 0.05).unwrap();
        let p0 = power(&spec, cv.c, &model, 0.0).unwrap();
        assert!((p0 - 0.05).abs() < 1e-6);
        // via the general factor path at a tiny rho
        let p_small = power(&spec, cv.c, &model, 1e-12).unwrap();
        assert!((p_small - 0.05).abs() < 1e-6);
    }

    #[test]
    fn trap_and_ee_behaviour_near_endpoint() {
        let (model, x) = queen();
        let a = model.upper();
        let co = b_cliff_ord(model.weights().unwrap(), &x).unwrap();
        let kco = critical_value(&co, 0.05).unwrap().c;
        let near = power(&co, kco, &model, a * (1.0 - 1e-3)).unwrap();
        let nearer = power(&co, kco, &model, a * (1.0 - 1e-4)).unwrap();
        assert!(near <= 0.02 && nearer < near && nearer <= 0.01);

        let ee = b_ee(model.limit_vector(), &x).unwrap();
        let kee = critical_value(&ee, 0.05).unwrap().c;
        assert!(power(&ee, kee, &model, a * (1.0 - 1e-3)).unwrap() >= 0.99);
    }

    #[test]
    fn envelope_dominates() {
        let (model, x) = queen();
        let a = model.upper();
        let grid = [0.05 * a, 0.3 * a, 0.8 * a, 0.99 * a];
        let env = power_envelope(&model, &x, 0.05, &grid).unwrap();
        let co = level_curve(&b_cliff_ord(model.weights().unwrap(), &x).unwrap(), 0.05, &model, &grid).unwrap();
        let ee = level_curve(&b_ee(model.limit_vector(), &x).unwrap(), 0.05, &model, &grid).unwrap();
        for i in 0..grid.len() {
            let e = env.points[i].power;
            assert!(e >= 0.05);
            assert!(e >= co.points[i].power - 1e-6);
            assert!(e >= ee.points[i].power - 1e-6);
        }
        assert_eq!(power_envelope(&model, &x, 0.05, &[0.0, 0.1]).unwrap().points[0].power, 0.05);
        assert!(power_envelope(&model, &x, 0.05, &[0.1, 0.0]).is_err());
    }

    #[test]
    fn grid_validation() {
        let (model, x) = queen();
        let spec = b_cliff_ord(model.weights().unwrap(), &x).unwrap();
        assert!(power_curve(&spec, 0.0, &model, &[0.1, 0.05]).is_err());
        assert!(power_curve(&spec, 0.0, &model, &[0.0, model.upper()]).is_err());
        let g = densified_grid(2.0, 60, 0.9999).unwrap();
        assert_eq!(g.len(), 60);
        assert_eq!(g[0], 0.0);
        assert!((g[59] - 2.0 * 0.9999).abs() < 1e-12);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn csv_layout() {
        let curve = PowerCurve {
            label: "CO".into(),
            alpha: 0.05,
            method: CurveMethod::MonteCarlo(McConfig::new(10, 9)),
            points: vec![CurvePoint { rho: 0.0, power: 0.05, se: None }],
        };
        let mut buf = Vec::new();
        curve.write_csv(&mut buf, &["tool test".into()]).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s, "# tool test\nrho,power,method,label,alpha,seed\n0,0.05,montecarlo,CO,0.05,9\n");
    }
}
