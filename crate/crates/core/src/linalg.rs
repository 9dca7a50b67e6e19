//! Dense linear-algebra helpers shared by the model, test and diagnostic layers.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted ascending.
///
/// Column `i` of the returned matrix is the unit eigenvector for eigenvalue `i`.
pub fn sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

pub fn sym_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    let mut v: Vec<f64> = symmetrize(m).symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(f64::total_cmp);
    DVector::from_vec(v)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

pub fn is_symmetric(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = max_abs(m).max(f64::MIN_POSITIVE);
    max_abs(&(m - m.transpose())) <= rel_tol * scale
}

/// Smallest and largest singular value.
pub fn singular_range(m: &DMatrix<f64>) -> (f64, f64) {
    let sv = m.clone().singular_values();
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
    (smin, smax)
}

/// Errors unless `smin > rel_tol * smax` and `m` has at least as many rows as columns.
pub fn check_full_column_rank(m: &DMatrix<f64>, rel_tol: f64) -> Result<()> {
    if m.ncols() == 0 || m.nrows() < m.ncols() {
        return Err(Error::Dimension(format!(
            "expected a tall matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let (smin, smax) = singular_range(m);
    if !(smax > 0.0) || !(smin > rel_tol * smax) {
        return Err(Error::RankDeficient { smallest: smin, largest: smax });
    }
    Ok(())
}

/// Orthogonal factor of a full Householder QR factorization of a tall `n x m` matrix.
///
/// The returned `n x n` matrix has the column space of `z` in its first `m` columns and
/// the orthogonal complement in the remaining `n - m`.
pub fn householder_full_q(z: &DMatrix<f64>) -> DMatrix<f64> {
    let n = z.nrows();
    let m = z.ncols().min(n);
    let mut r = z.clone();
    let mut q = DMatrix::<f64>::identity(n, n);
    for j in 0..m {
        let x = r.view((j, j), (n - j, 1)).column(0).into_owned();
        let norm = x.norm();
        if norm == 0.0 {
            continue;
        }
        let alpha = if x[0] >= 0.0 { -norm } else { norm };
        let mut v = x;
        v[0] -= alpha;
        let vnorm = v.norm();
        if vnorm == 0.0 {
            continue;
        }
        v /= vnorm;
        // R <- H R on rows j.., H = I - 2 v v'
        {
            let mut block = r.view_mut((j, 0), (n - j, r.ncols()));
            let proj = v.transpose() * &block;
            block -= &v * proj * 2.0;
        }
        // Q <- Q H on columns j..
        {
            let mut block = q.view_mut((0, j), (n, n - j));
            let proj = &block * &v;
            block -= proj * v.transpose() * 2.0;
        }
    }
    q
}

/// Flip the sign of each row so that its first non-negligible entry is positive.
pub fn canonical_row_signs(m: &mut DMatrix<f64>) {
    for i in 0..m.nrows() {
        let scale = m.row(i).iter().fold(0.0_f64, |a, x| a.max(x.abs()));
        let lead = m.row(i).iter().copied().find(|x| x.abs() > 1e-12 * scale);
        if let Some(lead) = lead {
            if lead < 0.0 {
                m.row_mut(i).neg_mut();
            }
        }
    }
}

/// Symmetric square-root factor `L` with `m = L L'` for a PSD matrix; negative
/// eigenvalues above `-neg_tol * max|eig|` are clamped to zero.
pub fn psd_factor(m: &DMatrix<f64>, neg_tol: f64) -> Result<DMatrix<f64>> {
    let (vals, vecs) = sym_eigen(m);
    let scale = vals.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
    let smallest = vals.iter().copied().fold(f64::INFINITY, f64::min);
    if smallest < -neg_tol * scale {
        return Err(Error::NotPsd(smallest));
    }
    let mut f = vecs;
    for (j, v) in vals.iter().enumerate() {
        let s = v.max(0.0).sqrt();
        f.column_mut(j).scale_mut(s);
    }
    Ok(f)
}

/// Inverse of a symmetric positive definite matrix through its eigen-decomposition,
/// failing when the condition number exceeds `max_cond`.
pub fn spd_inverse(m: &DMatrix<f64>, max_cond: f64) -> Result<DMatrix<f64>> {
    let (vals, vecs) = sym_eigen(m);
    let lo = vals[0];
    let hi = vals[vals.len() - 1];
    if !(lo > 0.0) || hi / lo > max_cond {
        return Err(Error::Conditioning(format!(
            "eigenvalue range [{lo:.3e}, {hi:.3e}] exceeds condition bound {max_cond:.1e}"
        )));
    }
    let mut scaled = vecs.clone();
    for (j, v) in vals.iter().enumerate() {
        scaled.column_mut(j).scale_mut(1.0 / v);
    }
    Ok(symmetrize(&(scaled * vecs.transpose())))
}

/// Projector onto the orthogonal complement of the column space of `z`.
pub fn orth_complement_projector(z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = z.nrows();
    let gram = z.transpose() * z;
    let inv = gram
        .try_inverse()
        .ok_or(Error::RankDeficient { smallest: 0.0, largest: 0.0 })?;
    Ok(DMatrix::identity(n, n) - z * inv * z.transpose())
}

/// Empirical quantile with linear interpolation on sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let t = pos - lo as f64;
    sorted[lo] * (1.0 - t) + sorted[hi] * t
}
