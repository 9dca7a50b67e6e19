//! Zero-power trap certification from observable quantities, the genericity polynomial
//! `p_M` describing exceptional designs, and random-design prevalence scans.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg;
use crate::mc;
use crate::model::{CovarianceModel, DesignMatrix};
use crate::testkit::{self, TestSpec, SPAN_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrapStatus {
    /// `e` is outside `span(X)` and `T_B(e) < kappa(alpha)`: power vanishes as `rho -> a`.
    TrapCertified,
    /// `e` lies in `span(X)`; the sufficient condition does not apply.
    EInSpanX,
    /// `B = C e e' C'`; such tests have limiting power one.
    NotApplicableEeForm,
    /// `T_B(e) >= kappa(alpha)`; the sufficient condition is not met.
    Inconclusive,
}

/// Outcome of [`diagnose`]. `alpha_star` is the null probability `P_0(T_B > T_B(e))`;
/// the trap is certified exactly for levels below it. It is `NaN` when `e` lies in `span(X)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrapVerdict {
    pub status: TrapStatus,
    pub alpha: f64,
    pub t_at_e: f64,
    pub kappa_alpha: f64,
    pub alpha_star: f64,
}

fn is_ee_form(spec: &TestSpec, ce: &DVector<f64>) -> bool {
    let norm2 = ce.norm_squared();
    if norm2 == 0.0 {
        return false;
    }
    let scale = ce.dot(&(spec.b() * ce)) / (norm2 * norm2);
    let resid = linalg::max_abs(&(spec.b() - ce * ce.transpose() * scale));
    scale > 0.0 && resid <= 1e-10 * linalg::max_abs(spec.b()).max(f64::MIN_POSITIVE)
}

pub fn diagnose(spec: &TestSpec, alpha: f64, e: &DVector<f64>, x: &DesignMatrix) -> Result<TrapVerdict> {
    let basis = spec.basis();
    if basis.n() != x.n() || basis.dim() != x.n() - x.k() || e.len() != x.n() {
        return Err(Error::Dimension("test, design and limit vector do not match".into()));
    }
    if linalg::max_abs(&(basis.rows() * x.entries())) > 1e-8 * linalg::max_abs(x.entries()) {
        return Err(Error::Integrity("test basis is not a complement of span(X)".into()));
    }
    let kappa = testkit::critical_value(spec, alpha)?.c;
    let ce = basis.apply(e);
    if !(ce.norm() > SPAN_TOL * e.norm()) {
        return Ok(TrapVerdict {
            status: TrapStatus::EInSpanX,
            alpha,
            t_at_e: spec.statistic(e),
            kappa_alpha: kappa,
            alpha_star: f64::NAN,
        });
    }
    let t_at_e = spec.statistic(e);
    let alpha_star = spec.null_exceedance(t_at_e)?;
    let status = if is_ee_form(spec, &ce) {
        TrapStatus::NotApplicableEeForm
    } else if t_at_e < kappa {
        TrapStatus::TrapCertified
    } else {
        TrapStatus::Inconclusive
    };
    Ok(TrapVerdict { status, alpha, t_at_e, kappa_alpha: kappa, alpha_star })
}

/// Value of `p_M(L)` together with the Cauchy-Schwarz scale `|a|^2 |b|^2` of its two
/// Gram-matrix columns, so `0 <= value <= scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenericityValue {
    pub value: f64,
    pub scale: f64,
}

impl GenericityValue {
    /// Zero up to `rel_tol` relative to the Cauchy-Schwarz scale; rank-deficient inputs
    /// give an exact zero.
    pub fn is_zero(&self, rel_tol: f64) -> bool {
        self.value.abs() <= rel_tol * self.scale
    }
}

/// Adjugate of a square matrix. Small orders use cofactors; larger ones go through the SVD,
/// `adj(U S V') = det(U) det(V) V adj(S) U'`, which stays valid for singular input.
pub fn adjugate(a: &DMatrix<f64>) -> DMatrix<f64> {
    let d = a.nrows();
    if d == 1 {
        return DMatrix::from_element(1, 1, 1.0);
    }
    if d <= 4 {
        return DMatrix::from_fn(d, d, |i, j| {
            let minor = a.clone().remove_row(j).remove_column(i);
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            sign * minor.determinant()
        });
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let s = &svd.singular_values;
    let adj_s = DVector::from_fn(d, |i, _| (0..d).filter(|&j| j != i).map(|j| s[j]).product::<f64>());
    let sign = u.determinant() * v_t.determinant();
    v_t.transpose() * DMatrix::from_diagonal(&adj_s) * u.transpose() * sign.signum()
}

/// `p_M(L) = det[(det(L'L) Q v, Q M Q v)' (det(L'L) Q v, Q M Q v)]` with
/// `Q = det(L'L) I - L adj(L'L) L'`, evaluated after scaling the columns of `L` to unit norm.
pub fn genericity_poly(m: &DMatrix<f64>, v: &DVector<f64>, l: &DMatrix<f64>) -> f64 {
    genericity_eval(m, v, l).value
}

pub fn genericity_eval(m: &DMatrix<f64>, v: &DVector<f64>, l: &DMatrix<f64>) -> GenericityValue {
    let n = l.nrows();
    let mut ln = l.clone();
    for mut col in ln.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
    }
    let gram = ln.transpose() * &ln;
    let det = gram.determinant();
    let q = DMatrix::<f64>::identity(n, n) * det - &ln * adjugate(&gram) * ln.transpose();
    let a = &q * v * det;
    let b = &q * (m * (&q * v));
    let (aa, bb, ab) = (a.norm_squared(), b.norm_squared(), a.dot(&b));
    GenericityValue { value: aa * bb - ab * ab, scale: aa * bb }
}

/// Least-squares fit of `M` onto `span{I, v v'}` in the Frobenius inner product.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExceptionalFit {
    pub is_exceptional: bool,
    pub c1: f64,
    pub c2: f64,
    pub residual: f64,
}

pub fn exceptional_form_check(m: &DMatrix<f64>, v: &DVector<f64>) -> ExceptionalFit {
    let n = m.nrows() as f64;
    let vv = v * v.transpose();
    // normal equations with <I,I> = n, <I,vv'> = |v|^2, <vv',vv'> = |v|^4
    let v2 = v.norm_squared();
    let (g11, g12, g22) = (n, v2, v2 * v2);
    let (r1, r2) = (m.trace(), v.dot(&(m * v)));
    let det = g11 * g22 - g12 * g12;
    let (c1, c2) = if det.abs() > 1e-300 {
        ((r1 * g22 - r2 * g12) / det, (g11 * r2 - g12 * r1) / det)
    } else {
        (r1 / n, 0.0)
    };
    let resid = (m - DMatrix::<f64>::identity(m.nrows(), m.nrows()) * c1 - vv * c2).norm();
    let is_exceptional = resid <= 1e-8 * m.norm() && c2 >= -1e-10;
    ExceptionalFit { is_exceptional, c1, c2, residual: resid }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScanTest {
    Lbi,
    Poi { rho_bar: f64 },
    CliffOrd,
}

impl ScanTest {
    fn build(&self, model: &CovarianceModel, x: &DesignMatrix) -> Result<TestSpec> {
        match *self {
            ScanTest::Lbi => testkit::b_lbi(model, x),
            ScanTest::Poi { rho_bar } => testkit::b_poi(model, x, rho_bar),
            ScanTest::CliffOrd => {
                let w = model
                    .weights()
                    .ok_or_else(|| Error::Domain("Cliff-Ord test needs a weights matrix".into()))?;
                testkit::b_cliff_ord(w, x)
            }
        }
    }

    pub fn name(&self) -> String {
        match self {
            ScanTest::Lbi => "LBI".into(),
            ScanTest::Poi { rho_bar } => format!("POI({rho_bar})"),
            ScanTest::CliffOrd => "CliffOrd".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanConfig {
    pub alpha: f64,
    pub k: usize,
    pub reps: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanReport {
    pub n: usize,
    pub config: ScanConfig,
    pub test: String,
    pub verdicts: Vec<TrapVerdict>,
    pub fraction_trapped: f64,
    pub fraction_e_in_span: f64,
    /// `(q, quantile of alpha_star)` over replicates with `e` outside `span(X)`.
    pub alpha_star_quantiles: Vec<(f64, f64)>,
    pub resampled: usize,
}

const SCAN_STREAM_OFFSET: u64 = 1 << 40;
const QUANTILES: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

impl ScanReport {
    /// Share of sampled designs certified as trapped at level `alpha`, from the stored
    /// threshold levels (`alpha < alpha_star`).
    pub fn fraction_trapped_at(&self, alpha: f64) -> f64 {
        let hits = self.verdicts.iter().filter(|v| alpha < v.alpha_star).count();
        hits as f64 / self.verdicts.len() as f64
    }

    pub fn write_csv<W: Write>(&self, mut out: W, preamble: &[String]) -> std::io::Result<()> {
        for line in preamble {
            writeln!(out, "# {line}")?;
        }
        writeln!(out, "replicate,status,t_at_e,kappa_alpha,alpha_star")?;
        for (i, v) in self.verdicts.iter().enumerate() {
            writeln!(out, "{i},{:?},{},{},{}", v.status, v.t_at_e, v.kappa_alpha, v.alpha_star)?;
        }
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "design scan: test={} n={} k={} alpha={} reps={} seed={}\n\
             fraction_trapped = {}\nfraction_e_in_span = {}\nresampled_rank_deficient = {}\n",
            self.test,
            self.n,
            self.config.k,
            self.config.alpha,
            self.config.reps,
            self.config.seed,
            self.fraction_trapped,
            self.fraction_e_in_span,
            self.resampled
        );
        for (q, v) in &self.alpha_star_quantiles {
            s.push_str(&format!("alpha_star_q{q} = {v}\n"));
        }
        s
    }
}

/// Samples `reps` designs with i.i.d. standard-normal entries and diagnoses each one.
///
/// Replicate `i` draws from its own stream keyed by `(seed, i)`, so the report does not
/// depend on scheduling. Rank-deficient draws are redrawn from the same stream and counted.
pub fn design_scan(model: &CovarianceModel, test: ScanTest, cfg: ScanConfig) -> Result<ScanReport> {
    let n = model.n();
    if cfg.k == 0 || cfg.k + 1 >= n {
        return Err(Error::Dimension(format!("scan needs 0 < k < n - 1, got k = {} with n = {n}", cfg.k)));
    }
    if cfg.reps == 0 {
        return Err(Error::Domain("scan needs at least one replicate".into()));
    }
    let e = model.limit_vector();
    let results = (0..cfg.reps)
        .into_par_iter()
        .map(|i| {
            let mut rng = mc::stream_rng(cfg.seed, SCAN_STREAM_OFFSET + i as u64);
            let mut redraws = 0usize;
            let x = loop {
                let m = DMatrix::from_fn(n, cfg.k, |_, _| StandardNormal.sample(&mut rng));
                match DesignMatrix::new(m) {
                    Ok(x) => break x,
                    Err(Error::RankDeficient { .. }) if redraws < 100 => redraws += 1,
                    Err(err) => return Err(err),
                }
            };
            let spec = test.build(model, &x)?;
            Ok((diagnose(&spec, cfg.alpha, e, &x)?, redraws))
        })
        .collect::<Result<Vec<_>>>()?;

    let resampled = results.iter().map(|r| r.1).sum();
    let verdicts: Vec<TrapVerdict> = results.into_iter().map(|r| r.0).collect();
    let reps = verdicts.len() as f64;
    let trapped = verdicts.iter().filter(|v| v.status == TrapStatus::TrapCertified).count();
    let in_span = verdicts.iter().filter(|v| v.status == TrapStatus::EInSpanX).count();
    let mut stars: Vec<f64> = verdicts.iter().map(|v| v.alpha_star).filter(|a| !a.is_nan()).collect();
    stars.sort_by(f64::total_cmp);
    let alpha_star_quantiles = QUANTILES.iter().map(|&q| (q, linalg::quantile_sorted(&stars, q))).collect();
    Ok(ScanReport {
        n,
        config: cfg,
        test: test.name(),
        verdicts,
        fraction_trapped: trapped as f64 / reps,
        fraction_e_in_span: in_span as f64 / reps,
        alpha_star_quantiles,
        resampled,
    })
}
