//! Deterministic ingredients of the regression model: design matrices, complement bases,
//! contiguity weights and the covariance families `rho -> Sigma(rho)`.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg;

/// Relative threshold on singular values for declaring a matrix of full column rank.
pub const RANK_TOL: f64 = 1e-10;
/// Reciprocal condition number of `I - rho W` below which `Sigma(rho)` is refused.
pub const RCOND_TOL: f64 = 1e-13;
/// Relative distance to the upper endpoint `a` inside which `Sigma(rho)` is refused.
pub const ENDPOINT_TOL: f64 = 1e-12;
/// Max-norm tolerance for the numerical check of the rank-one limit of `Sigma`.
pub const LIMIT_CHECK_TOL: f64 = 0.01;

/// The `n x k` regressor matrix, certified to have full column rank with `0 < k < n`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    entries: DMatrix<f64>,
}

impl DesignMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        let (n, k) = entries.shape();
        if k == 0 || k >= n {
            return Err(Error::Dimension(format!("design must satisfy 0 < k < n, got {n}x{k}")));
        }
        if entries.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("design contains non-finite entries".into()));
        }
        linalg::check_full_column_rank(&entries, RANK_TOL)?;
        Ok(Self { entries })
    }

    /// The intercept-only design `(1, ..., 1)'`.
    pub fn intercept(n: usize) -> Result<Self> {
        Self::new(DMatrix::from_element(n, 1, 1.0))
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn k(&self) -> usize {
        self.entries.ncols()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// `(X, col)`, the design with one extra column appended.
    pub fn augmented(&self, col: &DVector<f64>) -> Result<Self> {
        if col.len() != self.n() {
            return Err(Error::Dimension("appended column has wrong length".into()));
        }
        let mut m = self.entries.clone().insert_column(self.k(), 0.0);
        m.set_column(self.k(), col);
        Self::new(m)
    }

    pub fn complement_basis(&self) -> ComplementBasis {
        // rank was certified on construction
        complement_basis(&self.entries).expect("full-rank design")
    }
}

/// Rows form an orthonormal basis of the orthogonal complement of `span(Z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplementBasis {
    rows: DMatrix<f64>,
    parent_dim: usize,
}

/// Canonical complement basis: the transposed trailing block of a full Householder QR
/// of `z`, each row signed so that its first non-negligible entry is positive.
pub fn complement_basis(z: &DMatrix<f64>) -> Result<ComplementBasis> {
    let (n, m) = z.shape();
    if m >= n {
        return Err(Error::Dimension(format!("need m < n for a complement, got {n}x{m}")));
    }
    if m > 0 {
        linalg::check_full_column_rank(z, RANK_TOL)?;
    }
    let q = linalg::householder_full_q(z);
    let mut rows = q.columns(m, n - m).transpose();
    linalg::canonical_row_signs(&mut rows);
    Ok(ComplementBasis { rows, parent_dim: m })
}

impl ComplementBasis {
    /// Wraps an arbitrary matrix claimed to be a complement basis of `span(z)`,
    /// verifying both defining identities.
    pub fn from_rows(rows: DMatrix<f64>, z: &DMatrix<f64>, tol: f64) -> Result<Self> {
        let basis = Self { rows, parent_dim: z.ncols() };
        basis.check(z, tol)?;
        Ok(basis)
    }

    pub fn rows(&self) -> &DMatrix<f64> {
        &self.rows
    }

    /// Dimension `n - m` of the complement.
    pub fn dim(&self) -> usize {
        self.rows.nrows()
    }

    pub fn n(&self) -> usize {
        self.rows.ncols()
    }

    pub fn parent_dim(&self) -> usize {
        self.parent_dim
    }

    pub fn apply(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.rows * y
    }

    /// `C M C'`
    pub fn congruence(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        linalg::symmetrize(&(&self.rows * m * self.rows.transpose()))
    }

    /// Checks `C C' = I` and `C'C = I - Z (Z'Z)^{-1} Z'` in max-norm.
    pub fn check(&self, z: &DMatrix<f64>, tol: f64) -> Result<()> {
        let r = self.dim();
        if self.n() != z.nrows() || r + z.ncols() != z.nrows() {
            return Err(Error::Dimension("basis does not match the parent matrix".into()));
        }
        let orth = linalg::max_abs(&(&self.rows * self.rows.transpose() - DMatrix::identity(r, r)));
        let proj = linalg::orth_complement_projector(z)?;
        let proj_err = linalg::max_abs(&(self.rows.transpose() * &self.rows - proj));
        if orth > tol || proj_err > tol {
            return Err(Error::Integrity(format!(
                "complement basis identities violated: orthonormality {orth:.2e}, projector {proj_err:.2e}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    Queen,
    Rook,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    Binary,
    RowStandardized,
}

/// A nonnegative, irreducible, zero-diagonal weights matrix with its Perron root and vector.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightsMatrix {
    entries: DMatrix<f64>,
    spectral_radius: f64,
    perron_vector: DVector<f64>,
    symmetric: bool,
}

impl WeightsMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        let n = entries.nrows();
        if !entries.is_square() || n < 2 {
            return Err(Error::Weights(format!("need a square matrix of order >= 2, got {:?}", entries.shape())));
        }
        for i in 0..n {
            if entries[(i, i)] != 0.0 {
                return Err(Error::Weights(format!("nonzero diagonal entry at {i}")));
            }
        }
        if entries.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::Weights("entries must be finite and nonnegative".into()));
        }
        if !is_irreducible(&entries) {
            return Err(Error::Weights("matrix is reducible (graph not strongly connected)".into()));
        }
        let symmetric = entries == entries.transpose();
        let (spectral_radius, perron_vector) = if symmetric {
            let (vals, vecs) = linalg::sym_eigen(&entries);
            if vals[n - 1] - vals[n - 2] <= 1e-12 * vals[n - 1].abs() {
                return Err(Error::Integrity("Perron root is not simple".into()));
            }
            (vals[n - 1], positive_unit(vecs.column(n - 1).into_owned()))
        } else {
            perron_power_iteration(&entries, 1e-15, 1_000_000)?
        };
        if perron_vector.iter().any(|x| *x <= 0.0) {
            return Err(Error::Integrity("Perron vector is not strictly positive".into()));
        }
        Ok(Self { entries, spectral_radius, perron_vector, symmetric })
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn spectral_radius(&self) -> f64 {
        self.spectral_radius
    }

    pub fn perron_vector(&self) -> &DVector<f64> {
        &self.perron_vector
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }
}

fn positive_unit(mut v: DVector<f64>) -> DVector<f64> {
    if v.sum() < 0.0 {
        v.neg_mut();
    }
    let norm = v.norm();
    v / norm
}

/// Strong connectivity of the directed graph with an edge `i -> j` whenever `w[i,j] > 0`.
fn is_irreducible(w: &DMatrix<f64>) -> bool {
    let reach = |forward: bool| {
        let n = w.nrows();
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                let edge = if forward { w[(i, j)] } else { w[(j, i)] };
                if edge > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

/// Perron root and positive unit right eigenvector of a nonnegative irreducible matrix.
///
/// Iterates with `I + W`, which is primitive whenever `W` is irreducible, so the
/// iteration converges even for periodic graphs (e.g. bipartite lattices).
pub fn perron_power_iteration(w: &DMatrix<f64>, tol: f64, max_iter: usize) -> Result<(f64, DVector<f64>)> {
    let n = w.nrows();
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    for _ in 0..max_iter {
        let mut next = w * &v + &v;
        next /= next.norm();
        let delta = (&next - &v).amax();
        v = next;
        if delta < tol {
            let lambda = v.dot(&(w * &v));
            return Ok((lambda, positive_unit(v)));
        }
    }
    Err(Error::Numerical(format!("power iteration did not converge in {max_iter} steps")))
}

/// Contiguity weights for a `rows x cols` regular lattice, cells indexed row-major.
pub fn build_lattice_weights(
    rows: usize,
    cols: usize,
    criterion: Criterion,
    normalization: Normalization,
) -> Result<WeightsMatrix> {
    let n = rows * cols;
    if n < 2 {
        return Err(Error::Weights(format!("degenerate {rows}x{cols} lattice")));
    }
    let mut w = DMatrix::zeros(n, n);
    for r in 0..rows as isize {
        for c in 0..cols as isize {
            for dr in -1..=1_isize {
                for dc in -1..=1_isize {
                    if (dr, dc) == (0, 0) {
                        continue;
                    }
                    if criterion == Criterion::Rook && dr != 0 && dc != 0 {
                        continue;
                    }
                    let (rr, cc) = (r + dr, c + dc);
                    if rr < 0 || cc < 0 || rr >= rows as isize || cc >= cols as isize {
                        continue;
                    }
                    w[((r * cols as isize + c) as usize, (rr * cols as isize + cc) as usize)] = 1.0;
                }
            }
        }
    }
    if normalization == Normalization::RowStandardized {
        for i in 0..n {
            let s = w.row(i).sum();
            if s > 0.0 {
                w.row_mut(i).scale_mut(1.0 / s);
            }
        }
    }
    WeightsMatrix::new(w)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    /// Stationary AR(1) correlation, `Sigma(rho)_{ij} = rho^{|i-j|}`.
    Ar1 { n: usize },
    /// Spatial autoregressive error model, `Sigma(rho) = [(I - rho W')(I - rho W)]^{-1}`.
    SarError(WeightsMatrix),
}

/// A family `rho -> Sigma(rho)` on `[0, a)` with `Sigma(0) = I` and its rank-one limit direction.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceModel {
    family: Family,
    upper: f64,
    limit: DVector<f64>,
}

impl CovarianceModel {
    pub fn ar1(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Dimension("AR(1) model needs n >= 2".into()));
        }
        let limit = DVector::from_element(n, 1.0 / (n as f64).sqrt());
        Ok(Self { family: Family::Ar1 { n }, upper: 1.0, limit })
    }

    pub fn sar(w: WeightsMatrix) -> Self {
        let upper = 1.0 / w.spectral_radius();
        let limit = w.perron_vector().clone();
        Self { family: Family::SarError(w), upper, limit }
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn weights(&self) -> Option<&WeightsMatrix> {
        match &self.family {
            Family::SarError(w) => Some(w),
            Family::Ar1 { .. } => None,
        }
    }

    pub fn n(&self) -> usize {
        match &self.family {
            Family::Ar1 { n } => *n,
            Family::SarError(w) => w.n(),
        }
    }

    /// Upper endpoint `a` of the parameter domain.
    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn symmetric_weights(&self) -> bool {
        matches!(&self.family, Family::SarError(w) if w.is_symmetric())
    }

    pub fn name(&self) -> &'static str {
        match self.family {
            Family::Ar1 { .. } => "ar1",
            Family::SarError(_) => "sar",
        }
    }

    fn check_rho(&self, rho: f64) -> Result<()> {
        if !(rho >= 0.0 && rho < self.upper) {
            return Err(Error::Domain(format!("rho = {rho} outside [0, {})", self.upper)));
        }
        if self.upper - rho <= ENDPOINT_TOL * self.upper {
            return Err(Error::Conditioning(format!("rho = {rho} is within 1e-12 of the endpoint")));
        }
        Ok(())
    }

    /// `I - rho W`, guarded by its reciprocal condition number.
    fn sar_operator(&self, w: &WeightsMatrix, rho: f64) -> Result<DMatrix<f64>> {
        let n = w.n();
        let a = DMatrix::identity(n, n) - w.entries() * rho;
        let (smin, smax) = linalg::singular_range(&a);
        if smin < RCOND_TOL * smax {
            return Err(Error::Conditioning(format!(
                "I - rho W has reciprocal condition {:.2e} at rho = {rho}",
                smin / smax
            )));
        }
        Ok(a)
    }

    pub fn sigma_at(&self, rho: f64) -> Result<DMatrix<f64>> {
        self.check_rho(rho)?;
        let sigma = match &self.family {
            Family::Ar1 { n } => DMatrix::from_fn(*n, *n, |i, j| rho.powi(i.abs_diff(j) as i32)),
            Family::SarError(_) => {
                let l = self.sigma_factor(rho)?;
                linalg::symmetrize(&(&l * l.transpose()))
            }
        };
        if Cholesky::new(sigma.clone()).is_none() {
            return Err(Error::Conditioning(format!("Sigma({rho}) is not numerically positive definite")));
        }
        Ok(sigma)
    }

    /// A square factor `L` with `Sigma(rho) = L L'`.
    ///
    /// AR(1) uses the exact lower-triangular innovation factor; the SAR model uses
    /// `(I - rho W)^{-1}`.
    pub fn sigma_factor(&self, rho: f64) -> Result<DMatrix<f64>> {
        self.check_rho(rho)?;
        match &self.family {
            Family::Ar1 { n } => {
                let innov = (1.0 - rho * rho).sqrt();
                Ok(DMatrix::from_fn(*n, *n, |t, s| {
                    if s > t {
                        0.0
                    } else {
                        let scale = if s == 0 { 1.0 } else { innov };
                        scale * rho.powi((t - s) as i32)
                    }
                }))
            }
            Family::SarError(w) => {
                let a = self.sar_operator(w, rho)?;
                a.try_inverse()
                    .ok_or_else(|| Error::Conditioning(format!("I - rho W singular at rho = {rho}")))
            }
        }
    }

    /// Derivative of `Sigma` at `rho = 0`.
    pub fn sigma_dot_zero(&self) -> DMatrix<f64> {
        match &self.family {
            Family::Ar1 { n } => DMatrix::from_fn(*n, *n, |i, j| if i.abs_diff(j) == 1 { 1.0 } else { 0.0 }),
            Family::SarError(w) => w.entries() + w.entries().transpose(),
        }
    }

    /// The unit vector `e` with `Sigma(rho) / lambda_max(Sigma(rho)) -> e e'` as `rho -> a`.
    pub fn limit_vector(&self) -> &DVector<f64> {
        &self.limit
    }

    /// Max-norm distance between `Sigma(rho*)/lambda_max` and `e e'` at `rho* = a(1 - 1e-4)`;
    /// errors when it exceeds [`LIMIT_CHECK_TOL`].
    pub fn verify_limit(&self) -> Result<f64> {
        let rho = self.upper * (1.0 - 1e-4);
        let sigma = self.sigma_at(rho)?;
        let top = linalg::sym_eigenvalues(&sigma)[self.n() - 1];
        let target = &self.limit * self.limit.transpose();
        let dev = linalg::max_abs(&(sigma / top - target));
        if dev > LIMIT_CHECK_TOL {
            return Err(Error::Integrity(format!(
                "Sigma(rho)/lambda_max deviates from e e' by {dev:.3e} at rho = {rho}"
            )));
        }
        Ok(dev)
    }

    /// Bytes describing the family, endpoint and weights; used for fingerprints.
    fn fingerprint_bytes(&self, hasher: &mut Sha256) {
        hasher.update(self.name().as_bytes());
        hasher.update(self.upper.to_le_bytes());
        hasher.update((self.n() as u64).to_le_bytes());
        if let Family::SarError(w) = &self.family {
            for x in w.entries().iter() {
                hasher.update(x.to_le_bytes());
            }
        }
    }
}

/// SHA-256 over model family, endpoint, weights and design entries, hex encoded.
pub fn fingerprint(model: &CovarianceModel, design: &DesignMatrix) -> String {
    let mut hasher = Sha256::new();
    model.fingerprint_bytes(&mut hasher);
    hasher.update((design.k() as u64).to_le_bytes());
    for x in design.entries().iter() {
        hasher.update(x.to_le_bytes());
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Full parameter point `(beta, sigma, rho)`; only the simulation sampler needs it,
/// invariant procedures depend on `rho` alone.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelPoint {
    pub beta: DVector<f64>,
    pub sigma: f64,
    pub rho: f64,
}

impl ModelPoint {
    pub fn new(beta: DVector<f64>, sigma: f64, rho: f64, model: &CovarianceModel) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::Domain(format!("sigma = {sigma} must be positive")));
        }
        model.check_rho(rho)?;
        Ok(Self { beta, sigma, rho })
    }

    /// Draws `y = X beta + sigma L g`, `g ~ N(0, I)`.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        model: &CovarianceModel,
        design: &DesignMatrix,
        rng: &mut R,
    ) -> Result<DVector<f64>> {
        if self.beta.len() != design.k() || design.n() != model.n() {
            return Err(Error::Dimension("parameter point does not match model/design".into()));
        }
        let l = model.sigma_factor(self.rho)?;
        let g = DVector::from_fn(model.n(), |_, _| rng.sample::<f64, _>(StandardNormal));
        Ok(design.entries() * &self.beta + l * g * self.sigma)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs;

    fn queen4() -> WeightsMatrix {
        build_lattice_weights(4, 4, Criterion::Queen, Normalization::Binary).unwrap()
    }

    #[test]
    fn k4_from_two_by_two_queen() {
        let w = build_lattice_weights(2, 2, Criterion::Queen, Normalization::Binary).unwrap();
        let expected = DMatrix::from_fn(4, 4, |i, j| if i == j { 0.0 } else { 1.0 });
        assert_eq!(w.entries(), &expected);
        assert!((w.spectral_radius() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn rook_path_graph() {
        let w = build_lattice_weights(1, 3, Criterion::Rook, Normalization::Binary).unwrap();
        assert!((w.spectral_radius() - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(w.entries()[(0, 2)], 0.0);
    }

    #[test]
    fn degenerate_lattice_rejected() {
        assert!(matches!(
            build_lattice_weights(1, 1, Criterion::Queen, Normalization::Binary),
            Err(Error::Weights(_))
        ));
    }

    #[test]
    fn queen_perron_agrees_with_power_iteration() {
        let w = queen4();
        let (lambda, v) = perron_power_iteration(w.entries(), 1e-15, 1_000_000).unwrap();
        assert!((lambda - w.spectral_radius()).abs() < 1e-10);
        assert!((v - w.perron_vector()).amax() < 1e-10);
        // 8-neighbour degree is 3 at corners, 5 on edges, 8 in the interior
        assert_eq!(w.entries().row(5).sum(), 8.0);
        assert_eq!(w.entries().row(0).sum(), 3.0);
    }

    #[test]
    fn row_standardized_is_stochastic() {
        let w = build_lattice_weights(4, 4, Criterion::Queen, Normalization::RowStandardized).unwrap();
        assert!(!w.is_symmetric());
        assert!((w.spectral_radius() - 1.0).abs() < 1e-12);
        let r = w.entries() * w.perron_vector() - w.perron_vector() * w.spectral_radius();
        assert!(r.amax() < 1e-12);
    }

    #[test]
    fn reducible_weights_rejected() {
        let mut w = DMatrix::zeros(4, 4);
        w[(0, 1)] = 1.0;
        w[(1, 0)] = 1.0;
        w[(2, 3)] = 1.0;
        w[(3, 2)] = 1.0;
        assert!(matches!(WeightsMatrix::new(w), Err(Error::Weights(_))));
    }

    #[test]
    fn complement_of_first_axis() {
        let z = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let c = complement_basis(&z).unwrap();
        assert!(max_abs(&(c.rows() * &z)) < 1e-15);
        assert!(c.rows().column(0).amax() < 1e-15);
        c.check(&z, 1e-12).unwrap();
    }

    #[test]
    fn complement_is_deterministic() {
        let z = DMatrix::from_fn(16, 2, |i, j| ((i * 7 + j * 3) % 5) as f64 - 1.5 + j as f64 * 0.1 * i as f64);
        let a = complement_basis(&z).unwrap();
        let b = complement_basis(&z).unwrap();
        assert_eq!(a, b);
        a.check(&z, 1e-10).unwrap();
    }

    #[test]
    fn complement_rejects_rank_deficiency() {
        let z = DMatrix::from_fn(5, 2, |i, _| i as f64);
        assert!(matches!(complement_basis(&z), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn sigma_zero_is_identity() {
        let eye = DMatrix::<f64>::identity(16, 16);
        let sar = CovarianceModel::sar(queen4());
        assert!(max_abs(&(sar.sigma_at(0.0).unwrap() - &eye)) < 1e-15);
        let ar = CovarianceModel::ar1(16).unwrap();
        assert!(max_abs(&(ar.sigma_at(0.0).unwrap() - &eye)) < 1e-15);
    }

    #[test]
    fn ar1_sigma_entries() {
        let m = CovarianceModel::ar1(3).unwrap();
        let s = m.sigma_at(0.5).unwrap();
        let expected = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.25, 0.5, 1.0, 0.5, 0.25, 0.5, 1.0]);
        assert!(max_abs(&(s - &expected)) < 1e-15);
        let l = m.sigma_factor(0.5).unwrap();
        assert!(max_abs(&(&l * l.transpose() - expected)) < 1e-14);
    }

    #[test]
    fn sar_sigma_matches_spectral_formula() {
        let w = build_lattice_weights(2, 2, Criterion::Queen, Normalization::Binary).unwrap();
        let (vals, vecs) = linalg::sym_eigen(w.entries());
        let model = CovarianceModel::sar(w);
        for rho in [0.1, 0.2, 0.33] {
            let direct = model.sigma_at(rho).unwrap();
            let mut spectral = DMatrix::zeros(4, 4);
            for i in 0..4 {
                let f = vecs.column(i);
                spectral += f * f.transpose() / (1.0 - rho * vals[i]).powi(2);
            }
            assert!(max_abs(&(direct - spectral)) < 1e-8);
        }
    }

    #[test]
    fn domain_and_conditioning_errors() {
        let model = CovarianceModel::sar(queen4());
        let a = model.upper();
        assert!(matches!(model.sigma_at(a), Err(Error::Domain(_))));
        assert!(matches!(model.sigma_at(-0.1), Err(Error::Domain(_))));
        assert!(matches!(model.sigma_at(a * (1.0 - 1e-13)), Err(Error::Conditioning(_))));
        assert!(model.sigma_at(a * (1.0 - 1e-6)).is_ok());
    }

    #[test]
    fn sigma_dot_matches_finite_differences() {
        for model in [CovarianceModel::sar(queen4()), CovarianceModel::ar1(6).unwrap()] {
            let h = 1e-5 * model.upper();
            let plus = model.sigma_at(h).unwrap();
            // Sigma is analytic around 0; extend to -h through the same formula
            let minus = match model.family() {
                Family::Ar1 { n } => DMatrix::from_fn(*n, *n, |i, j| (-h).powi(i.abs_diff(j) as i32)),
                Family::SarError(w) => {
                    let n = w.n();
                    let a = DMatrix::identity(n, n) + w.entries() * h;
                    (a.transpose() * a).try_inverse().unwrap()
                }
            };
            let fd = (plus - minus) / (2.0 * h);
            let err = max_abs(&(fd - model.sigma_dot_zero()));
            // third derivative scales like the cube of the spectral radius
            assert!(err < 1e4 * h * h, "fd error {err}");
        }
    }

    #[test]
    fn ar1_sigma_dot_small() {
        let m = CovarianceModel::ar1(3).unwrap();
        let expected = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        assert_eq!(m.sigma_dot_zero(), expected);
        let sar = CovarianceModel::sar(queen4());
        assert_eq!(sar.sigma_dot_zero(), sar.weights().unwrap().entries() * 2.0);
    }

    #[test]
    fn limit_vectors() {
        let ar = CovarianceModel::ar1(4).unwrap();
        assert_eq!(ar.limit_vector(), &DVector::from_element(4, 0.5));
        ar.verify_limit().unwrap();

        let k4 = CovarianceModel::sar(build_lattice_weights(2, 2, Criterion::Queen, Normalization::Binary).unwrap());
        assert!((k4.limit_vector() - DVector::from_element(4, 0.5)).amax() < 1e-12);
        k4.verify_limit().unwrap();

        let q = CovarianceModel::sar(queen4());
        q.verify_limit().unwrap();
        let e = q.limit_vector();
        assert!(e.iter().all(|x| *x > 0.0));
        let interior = [5, 6, 9, 10];
        let max_e = e.max();
        for i in interior {
            assert!((e[i] - max_e).abs() < 1e-12);
        }
        assert!(e[0] < e[5]);
    }

    #[test]
    fn sampler_respects_dimensions() {
        use rand::SeedableRng;
        let model = CovarianceModel::ar1(5).unwrap();
        let x = DesignMatrix::intercept(5).unwrap();
        let p = ModelPoint::new(DVector::from_element(1, 2.0), 1.5, 0.3, &model).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        assert_eq!(p.sample(&model, &x, &mut rng).unwrap().len(), 5);
        assert!(ModelPoint::new(DVector::from_element(1, 0.0), 0.0, 0.3, &model).is_err());
    }
}
