//! Trap-avoiding tests: the artificial-regressor test built on `(X, e)` and the
//! power-enhanced test that joins a slightly shrunk base test with the EE test.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::mc::{self, McConfig, McEstimate};
use crate::model::{ComplementBasis, CovarianceModel, DesignMatrix, Family};
use crate::qform;
use crate::testkit::{self, CriticalValue, TestSpec, SPAN_TOL};

/// Interior margin required of an exact limiting power.
pub const LIMIT_MARGIN: f64 = 1e-4;
/// Smallest admissible singular value of `Lambda` on the complement of `e`.
pub const INJECTIVITY_TOL: f64 = 1e-10;
/// Distance to the endpoint, as a fraction of `a`, used when `Lambda` is unavailable.
pub const FALLBACK_GAP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ArtRegKind {
    Lbi,
    Poi { rho_bar: f64 },
    CliffOrd,
}

impl ArtRegKind {
    pub fn name(&self) -> String {
        match self {
            ArtRegKind::Lbi => "ArtReg(LBI)".into(),
            ArtRegKind::Poi { rho_bar } => format!("ArtReg(POI({rho_bar}))"),
            ArtRegKind::CliffOrd => "ArtReg(CliffOrd)".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LimitingPower {
    /// From the `Lambda` quadratic form.
    Exact(f64),
    /// Power evaluated at `rho` close to the endpoint.
    Approximate { p: f64, rho: f64 },
}

impl LimitingPower {
    pub fn value(&self) -> f64 {
        match *self {
            LimitingPower::Exact(p) => p,
            LimitingPower::Approximate { p, .. } => p,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArtRegTest {
    pub kind: ArtRegKind,
    pub alpha: f64,
    pub x_bar: DesignMatrix,
    pub spec: TestSpec,
    pub kappa_bar: CriticalValue,
    pub limiting_power: LimitingPower,
}

impl ArtRegTest {
    pub fn power(&self, model: &CovarianceModel, rho: f64) -> Result<f64> {
        self.spec.exceedance(self.kappa_bar.c, model, rho)
    }

    pub fn to_key_value(&self, fingerprint: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "test = {}", self.kind.name());
        let _ = writeln!(s, "alpha = {}", self.alpha);
        let _ = writeln!(s, "kappa_bar = {}", self.kappa_bar.c);
        let _ = writeln!(s, "achieved_size = {}", self.kappa_bar.achieved_size);
        let _ = writeln!(s, "solver_tol = {}", self.kappa_bar.solver_tol);
        match self.limiting_power {
            LimitingPower::Exact(p) => {
                let _ = writeln!(s, "limiting_power = {p}");
                let _ = writeln!(s, "limiting_power_method = lambda");
            }
            LimitingPower::Approximate { p, rho } => {
                let _ = writeln!(s, "limiting_power = {p}");
                let _ = writeln!(s, "limiting_power_method = near_endpoint");
                let _ = writeln!(s, "limiting_power_rho = {rho}");
            }
        }
        let _ = writeln!(s, "model_fingerprint = {fingerprint}");
        s
    }
}

pub fn artificial_regressor_test(
    model: &CovarianceModel,
    x: &DesignMatrix,
    kind: ArtRegKind,
    alpha: f64,
) -> Result<ArtRegTest> {
    let e = model.limit_vector();
    if x.n() != model.n() {
        return Err(Error::Dimension("design and model sample sizes differ".into()));
    }
    if x.k() + 2 >= x.n() {
        return Err(Error::Dimension(format!("augmented design needs k + 2 < n, got k = {}", x.k())));
    }
    let ce = x.complement_basis().apply(e);
    if !(ce.norm() > SPAN_TOL * e.norm()) {
        return Err(Error::LimitInSpan);
    }
    let x_bar = x.augmented(e)?;
    let spec = match kind {
        ArtRegKind::Lbi => testkit::b_lbi(model, &x_bar)?,
        ArtRegKind::Poi { rho_bar } => testkit::b_poi(model, &x_bar, rho_bar)?,
        ArtRegKind::CliffOrd => {
            let w = model
                .weights()
                .ok_or_else(|| Error::Domain("Cliff-Ord test needs a weights matrix".into()))?;
            testkit::b_cliff_ord(w, &x_bar)?
        }
    };
    let kappa_bar = testkit::critical_value(&spec, alpha)?;
    let lam = lambda_matrix(model)?;
    let limiting_power = match lam.construction {
        LambdaConstruction::Unavailable => {
            let rho = model.upper() * (1.0 - FALLBACK_GAP);
            LimitingPower::Approximate { p: spec.exceedance(kappa_bar.c, model, rho)?, rho }
        }
        _ => LimitingPower::Exact(limit_from_lambda(&spec, kappa_bar.c, &lam)?),
    };
    Ok(ArtRegTest { kind, alpha, x_bar, spec, kappa_bar, limiting_power })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LambdaConstruction {
    /// Symmetric `W`: `sum f_i f_i' / (1 - lambda_i / lambda_max)` over non-Perron eigenpairs.
    SpectralSymmetric,
    /// AR(1): `(1 - rho^2)^{-1} Sigma(rho)` restricted to `e`'s complement tends to the
    /// pseudo-inverse of the path-graph Laplacian; `Lambda` is its square root.
    PathLaplacian,
    Unavailable,
}

/// Limit of the suitably scaled square root of `Sigma(rho)` on the complement of `e`.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaMatrix {
    pub entries: DMatrix<f64>,
    pub construction: LambdaConstruction,
    /// Relative Gram-matrix errors along `rho = a(1 - 10^-j)`, `j = 2..=5`.
    pub validation: Vec<(f64, f64)>,
}

fn scaled_gram(model: &CovarianceModel, rho: f64, proj: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sigma = model.sigma_at(rho)?;
    let scale = match model.family() {
        Family::Ar1 { .. } => 1.0 / (1.0 - rho * rho),
        Family::SarError(_) => 1.0,
    };
    Ok(linalg::symmetrize(&(proj * sigma * proj)) * scale)
}

pub fn lambda_matrix(model: &CovarianceModel) -> Result<LambdaMatrix> {
    let n = model.n();
    let (entries, construction) = match model.family() {
        Family::SarError(w) if w.is_symmetric() => {
            let (vals, vecs) = linalg::sym_eigen(&linalg::symmetrize(w.entries()));
            let top = vals[n - 1];
            if vals[n - 2] >= top * (1.0 - 1e-10) {
                return Err(Error::Integrity("largest eigenvalue of W is not simple".into()));
            }
            let mut lam = DMatrix::zeros(n, n);
            for i in 0..n - 1 {
                let f = vecs.column(i);
                lam += f * f.transpose() / (1.0 - vals[i] / top);
            }
            (lam, LambdaConstruction::SpectralSymmetric)
        }
        Family::SarError(_) => {
            return Ok(LambdaMatrix {
                entries: DMatrix::zeros(n, n),
                construction: LambdaConstruction::Unavailable,
                validation: Vec::new(),
            })
        }
        Family::Ar1 { .. } => {
            let lap = DMatrix::from_fn(n, n, |i, j| {
                if i == j {
                    if i == 0 || i == n - 1 {
                        1.0
                    } else {
                        2.0
                    }
                } else if i.abs_diff(j) == 1 {
                    -1.0
                } else {
                    0.0
                }
            });
            let (vals, vecs) = linalg::sym_eigen(&lap);
            let mut lam = DMatrix::zeros(n, n);
            for i in 1..n {
                let t = vecs.column(i);
                lam += t * t.transpose() / vals[i].sqrt();
            }
            (lam, LambdaConstruction::PathLaplacian)
        }
    };

    let e = model.limit_vector();
    let proj = DMatrix::<f64>::identity(n, n) - e * e.transpose();
    let target = &entries * entries.transpose();
    let tnorm = target.norm();
    let mut validation = Vec::new();
    for j in 2..=5 {
        let rho = model.upper() * (1.0 - 10f64.powi(-j));
        let err = (scaled_gram(model, rho, &proj)? - &target).norm() / tnorm;
        validation.push((rho, err));
    }
    let shrinking = validation.windows(2).all(|w| w[1].1 < w[0].1 || w[1].1 < 1e-12);
    let final_err = validation[validation.len() - 1].1;
    if !shrinking || final_err > 1e-3 {
        return Err(Error::Integrity(format!(
            "scaled covariance does not approach Lambda Lambda' (errors {validation:?})"
        )));
    }

    let restricted = &entries * &proj;
    let sv = restricted.singular_values();
    let mut sorted: Vec<f64> = sv.iter().copied().collect();
    sorted.sort_by(f64::total_cmp);
    if !(sorted.len() >= 2 && sorted[1] > INJECTIVITY_TOL) {
        return Err(Error::Integrity("Lambda is not injective on the complement of e".into()));
    }
    Ok(LambdaMatrix { entries, construction, validation })
}

fn limit_from_lambda(spec: &TestSpec, kappa: f64, lam: &LambdaMatrix) -> Result<f64> {
    let m = spec.basis().dim();
    let factor = spec.basis().rows() * &lam.entries;
    let a = spec.b() - DMatrix::<f64>::identity(m, m) * kappa;
    let law = qform::qform_law_factor(&a, &factor);
    if law.degenerate_probability().is_some() {
        return Err(Error::Integrity("limiting quadratic form has weights of a single sign".into()));
    }
    let p = qform::imhof_positive(&law)?;
    if !(p > LIMIT_MARGIN && p < 1.0 - LIMIT_MARGIN) {
        return Err(Error::Integrity(format!("limiting power {p} is not strictly inside (0, 1)")));
    }
    Ok(p)
}

/// `P(T_Bbar(Lambda G) > kappa_bar)` for `G ~ N(0, I)`.
pub fn artreg_limiting_power(test: &ArtRegTest, lam: &LambdaMatrix) -> Result<f64> {
    if lam.construction == LambdaConstruction::Unavailable {
        return Err(Error::Domain("Lambda is unavailable for non-symmetric W".into()));
    }
    limit_from_lambda(&test.spec, test.kappa_bar.c, lam)
}

/// The power-enhanced test: reject when `T_B > base_cutoff` or `T_ee > ee_cutoff`, with
/// `base_cutoff = kappa_B(alpha - epsilon)` and `ee_cutoff` the smallest simulated cutoff
/// giving size `alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnhancedTest {
    pub alpha: f64,
    pub epsilon: f64,
    pub base: TestSpec,
    pub ee: TestSpec,
    pub base_cutoff: f64,
    pub ee_cutoff: f64,
    /// `kappa_ee(epsilon)`, the upper bound for `ee_cutoff`.
    pub ee_bound: f64,
    pub capped: bool,
    pub mc: McConfig,
    /// Size on the draws used to choose `ee_cutoff`.
    pub achieved_size: McEstimate,
    /// Size on an independent set of draws.
    pub validation_size: McEstimate,
}

/// Seed offset for the independent size check.
const VALIDATION_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

fn ratio_columns(b: &DMatrix<f64>, z: &DMatrix<f64>) -> Vec<f64> {
    let bz = b * z;
    z.column_iter()
        .zip(bz.column_iter())
        .map(|(zc, bc)| {
            let nn = zc.norm_squared();
            if nn > 0.0 {
                zc.dot(&bc) / nn
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect()
}

fn same_basis(a: &ComplementBasis, b: &ComplementBasis) -> bool {
    a.rows().shape() == b.rows().shape() && linalg::max_abs(&(a.rows() - b.rows())) < 1e-12
}

impl EnhancedTest {
    /// `phi* = min(phi_base + 1{T_ee > c}, 1)` at a single observation.
    pub fn rejects(&self, y: &DVector<f64>) -> bool {
        let base = f64::from(u8::from(self.base.statistic(y) > self.base_cutoff));
        let ee = f64::from(u8::from(self.ee.statistic(y) > self.ee_cutoff));
        (base + ee).min(1.0) > 0.5
    }

    fn rejection_counts(&self, factor: &DMatrix<f64>, cfg: McConfig) -> u64 {
        joint_counts(&self.base, &self.ee, &[(self.base_cutoff, self.ee_cutoff)], factor, cfg)[0]
    }

    pub fn to_key_value(&self, fingerprint: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "test = Enhanced({})", self.base.label());
        let _ = writeln!(s, "alpha = {}", self.alpha);
        let _ = writeln!(s, "epsilon = {}", self.epsilon);
        let _ = writeln!(s, "base_cutoff = {}", self.base_cutoff);
        let _ = writeln!(s, "ee_cutoff = {}", self.ee_cutoff);
        let _ = writeln!(s, "ee_bound = {}", self.ee_bound);
        let _ = writeln!(s, "ee_cutoff_capped = {}", self.capped);
        let _ = writeln!(s, "mc_reps = {}", self.mc.reps);
        let _ = writeln!(s, "mc_seed = {}", self.mc.seed);
        let _ = writeln!(s, "achieved_size = {}", self.achieved_size.p);
        let _ = writeln!(s, "achieved_size_se = {}", self.achieved_size.se);
        let _ = writeln!(s, "validation_seed = {}", self.validation_size.seed);
        let _ = writeln!(s, "validation_size = {}", self.validation_size.p);
        let _ = writeln!(s, "validation_size_se = {}", self.validation_size.se);
        let _ = writeln!(s, "solver_tol = {}", testkit::SOLVER_TOL);
        let _ = writeln!(s, "model_fingerprint = {fingerprint}");
        s
    }
}

/// Rejection counts of `{T_B > b_i} or {T_ee > c_i}` for each cutoff pair, on the draws
/// `z = F g`, `g ~ N(0, I)` defined by `cfg`.
fn joint_counts(base: &TestSpec, ee: &TestSpec, cutoffs: &[(f64, f64)], factor: &DMatrix<f64>, cfg: McConfig) -> Vec<u64> {
    let blocks = mc::par_blocks(cfg, factor.ncols(), |_, g| {
        let z = factor * g;
        let tb = ratio_columns(base.b(), &z);
        let te = ratio_columns(ee.b(), &z);
        cutoffs
            .iter()
            .map(|&(cb, ce)| tb.iter().zip(&te).filter(|(b, e)| **b > cb || **e > ce).count() as u64)
            .collect::<Vec<u64>>()
    });
    let mut totals = vec![0u64; cutoffs.len()];
    for block in blocks {
        for (t, c) in totals.iter_mut().zip(block) {
            *t += c;
        }
    }
    totals
}

/// Null rejection counts of `{T_B > base_cutoff} or {T_ee > c}` as a function of `c`,
/// on one fixed set of draws.
#[derive(Debug, Clone, PartialEq)]
pub struct SizeProfile {
    pub reps: usize,
    pub base_hits: u64,
    /// Sorted `T_ee` values of the draws the base test accepts.
    pub ee_values: Vec<f64>,
}

impl SizeProfile {
    pub fn simulate(base: &TestSpec, ee: &TestSpec, base_cutoff: f64, mc_cfg: McConfig) -> Self {
        let factor = null_factor(base.basis());
        let blocks = mc::par_blocks(mc_cfg, factor.ncols(), |_, g| {
            let z = &factor * g;
            let tb = ratio_columns(base.b(), &z);
            let te = ratio_columns(ee.b(), &z);
            let mut hits = 0u64;
            let mut rest = Vec::new();
            for (b, e) in tb.into_iter().zip(te) {
                if b > base_cutoff {
                    hits += 1;
                } else {
                    rest.push(e);
                }
            }
            (hits, rest)
        });
        let mut base_hits = 0u64;
        let mut ee_values = Vec::with_capacity(mc_cfg.reps);
        for (h, r) in blocks {
            base_hits += h;
            ee_values.extend(r);
        }
        ee_values.sort_by(f64::total_cmp);
        Self { reps: mc_cfg.reps, base_hits, ee_values }
    }

    pub fn count_at(&self, c: f64) -> u64 {
        let above = self.ee_values.len() - self.ee_values.partition_point(|&t| t <= c);
        self.base_hits + above as u64
    }

    pub fn size_at(&self, c: f64) -> f64 {
        self.count_at(c) as f64 / self.reps as f64
    }

    /// Smallest cutoff with at most `budget` rejections: an order statistic of
    /// `ee_values`, or `floor` when the base test leaves room for every draw.
    pub fn smallest_cutoff(&self, budget: u64, floor: f64) -> Option<f64> {
        if self.base_hits > budget {
            return None;
        }
        let extra = (budget - self.base_hits) as usize;
        let n = self.ee_values.len();
        Some(if extra >= n { floor } else { self.ee_values[n - extra - 1] })
    }
}

fn null_factor(basis: &ComplementBasis) -> DMatrix<f64> {
    basis.rows().clone()
}

pub fn enhanced_critical(base: &TestSpec, ee: &TestSpec, alpha: f64, epsilon: f64, mc_cfg: McConfig) -> Result<EnhancedTest> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha = {alpha} outside (0, 1)")));
    }
    if !(epsilon > 0.0 && epsilon < alpha) {
        return Err(Error::Domain(format!("epsilon = {epsilon} must lie in (0, alpha = {alpha})")));
    }
    if !same_basis(base.basis(), ee.basis()) {
        return Err(Error::Dimension("base and EE tests must share the complement basis".into()));
    }
    let se = mc::binomial_se(alpha, mc_cfg.reps);
    if mc_cfg.reps == 0 || se > (alpha - epsilon) / 10.0 {
        return Err(Error::Resolution(format!(
            "{} replications give size SE {se:.3e}; increase reps",
            mc_cfg.reps
        )));
    }
    let base_cutoff = testkit::critical_value(base, alpha - epsilon)?.c;
    let ee_bound = testkit::critical_value(ee, epsilon)?.c;

    let profile = SizeProfile::simulate(base, ee, base_cutoff, mc_cfg);
    let budget = (alpha * mc_cfg.reps as f64).floor() as u64;
    let Some(mut c) = profile.smallest_cutoff(budget, ee.eig_min()) else {
        return Err(Error::Resolution(format!(
            "base test alone rejects {} of {} draws; increase reps",
            profile.base_hits, mc_cfg.reps
        )));
    };
    let capped = c > ee_bound;
    if capped {
        c = ee_bound;
    }
    let achieved_size = McEstimate::from_count(profile.count_at(c), mc_cfg);
    let factor = null_factor(base.basis());

    let mut test = EnhancedTest {
        alpha,
        epsilon,
        base: base.clone(),
        ee: ee.clone(),
        base_cutoff,
        ee_cutoff: c,
        ee_bound,
        capped,
        mc: mc_cfg,
        achieved_size,
        validation_size: achieved_size,
    };
    let vcfg = McConfig::new(mc_cfg.reps, mc_cfg.seed ^ VALIDATION_SALT);
    test.validation_size = McEstimate::from_count(test.rejection_counts(&factor, vcfg), vcfg);
    Ok(test)
}

pub fn enhanced_power(test: &EnhancedTest, model: &CovarianceModel, rho: f64, mc_cfg: McConfig) -> Result<McEstimate> {
    let factor = power_factor(test.base.basis(), model, rho)?;
    Ok(McEstimate::from_count(test.rejection_counts(&factor, mc_cfg), mc_cfg))
}

fn power_factor(basis: &ComplementBasis, model: &CovarianceModel, rho: f64) -> Result<DMatrix<f64>> {
    if model.n() != basis.n() {
        return Err(Error::Dimension("model and test live in different sample sizes".into()));
    }
    if rho == 0.0 {
        return Ok(null_factor(basis));
    }
    Ok(basis.rows() * model.sigma_factor(rho)?)
}

/// Power of several enhanced tests sharing base and EE statistics, on common draws.
pub fn enhanced_powers(tests: &[EnhancedTest], model: &CovarianceModel, rho: f64, mc_cfg: McConfig) -> Result<Vec<McEstimate>> {
    let Some(first) = tests.first() else {
        return Ok(Vec::new());
    };
    for t in tests {
        if !same_basis(t.base.basis(), first.base.basis())
            || linalg::max_abs(&(t.base.b() - first.base.b())) > 1e-12
            || linalg::max_abs(&(t.ee.b() - first.ee.b())) > 1e-12
        {
            return Err(Error::Domain("enhanced tests must share base and EE statistics".into()));
        }
    }
    let factor = power_factor(first.base.basis(), model, rho)?;
    let cutoffs: Vec<(f64, f64)> = tests.iter().map(|t| (t.base_cutoff, t.ee_cutoff)).collect();
    let counts = joint_counts(&first.base, &first.ee, &cutoffs, &factor, mc_cfg);
    Ok(counts.into_iter().map(|c| McEstimate::from_count(c, mc_cfg)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapRow {
    pub epsilon: f64,
    pub sup_gap: f64,
    pub argmax_rho: f64,
    pub se_at_sup: f64,
    /// `(rho, enhanced power, se, base power)` along the grid.
    pub points: Vec<(f64, f64, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApproximationProfile {
    pub alpha: f64,
    pub rows: Vec<GapRow>,
    pub mc: McConfig,
    /// Whether sup-gaps do not increase as epsilon decreases, up to
    /// `3 sqrt(se_i^2 + se_j^2)`.
    pub monotone: bool,
}

impl ApproximationProfile {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epsilon,sup_gap,argmax_rho,se_at_sup\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{}", r.epsilon, r.sup_gap, r.argmax_rho, r.se_at_sup);
        }
        s
    }
}

/// Sup over the grid of `|power(phi*_{alpha,eps}) - power(phi_alpha)|` for each enhanced
/// test, using the exact base power and common draws across `rho` and `epsilon`.
pub fn approximation_profile(
    base: &TestSpec,
    alpha: f64,
    tests: &[EnhancedTest],
    model: &CovarianceModel,
    grid: &[f64],
    mc_cfg: McConfig,
) -> Result<ApproximationProfile> {
    if grid.is_empty() || grid.iter().any(|&r| !(r >= 0.0 && r < model.upper())) {
        return Err(Error::Domain(format!("grid must lie inside [0, {})", model.upper())));
    }
    let kappa = testkit::critical_value(base, alpha)?.c;
    let mut rows: Vec<GapRow> = tests
        .iter()
        .map(|t| GapRow { epsilon: t.epsilon, sup_gap: -1.0, argmax_rho: f64::NAN, se_at_sup: 0.0, points: Vec::new() })
        .collect();
    for &rho in grid {
        let exact = base.exceedance(kappa, model, rho)?;
        let est = enhanced_powers(tests, model, rho, mc_cfg)?;
        for (row, e) in rows.iter_mut().zip(est) {
            let gap = (e.p - exact).abs();
            row.points.push((rho, e.p, e.se, exact));
            if gap > row.sup_gap {
                row.sup_gap = gap;
                row.argmax_rho = rho;
                row.se_at_sup = e.se;
            }
        }
    }
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&i, &j| rows[j].epsilon.total_cmp(&rows[i].epsilon));
    let mut monotone = true;
    for (pos, &i) in order.iter().enumerate() {
        for &j in &order[pos + 1..] {
            let slack = 3.0 * (rows[i].se_at_sup.powi(2) + rows[j].se_at_sup.powi(2)).sqrt();
            if rows[j].sup_gap > rows[i].sup_gap + slack {
                monotone = false;
            }
        }
    }
    Ok(ApproximationProfile { alpha, rows, mc: mc_cfg, monotone })
}
