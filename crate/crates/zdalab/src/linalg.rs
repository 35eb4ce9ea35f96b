//! Small dense linear-algebra helpers shared by the modules.

use nalgebra::{ComplexField, DMatrix, DVector, Dyn, Schur, SymmetricEigen, SVD};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Default relative tolerance for rank decisions.
pub const RANK_TOL: f64 = 1e-9;

/// Iteration budget for the iterative decompositions (nalgebra's default is unbounded).
pub const MAX_ITER: usize = 10_000;

/// Singular value decomposition with a bounded iteration count. A second attempt with a
/// looser convergence threshold is made before giving up.
pub fn svd<T>(m: &DMatrix<T>, compute_u: bool, compute_v: bool) -> SVD<T, Dyn, Dyn>
where
    T: ComplexField<RealField = f64>,
{
    m.clone()
        .try_svd(compute_u, compute_v, f64::EPSILON, MAX_ITER)
        .or_else(|| m.clone().try_svd(compute_u, compute_v, 1e3 * f64::EPSILON, 10 * MAX_ITER))
        .expect("SVD did not converge")
}

/// Eigenvalues of a general real matrix via a bounded real Schur iteration.
///
/// When the iteration stalls (typical for large nilpotent parts) it is retried with
/// looser deflation thresholds and after a fixed orthogonal change of basis, so the
/// eigenvalues of a defective block may come back slightly split.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite entry passed to the eigen-solver".into()));
    }
    let n = m.nrows();
    let attempt = |a: &DMatrix<f64>| {
        [f64::EPSILON, 1e-13, 1e-11]
            .iter()
            .find_map(|&eps| Schur::try_new(a.clone(), eps, MAX_ITER))
            .map(|s| s.complex_eigenvalues().iter().cloned().collect::<Vec<_>>())
    };
    if let Some(ev) = attempt(m) {
        return Ok(ev);
    }
    // deterministic pseudo-random orthogonal similarity
    let r = DMatrix::from_fn(n, n, |i, j| ((i * 7919 + j * 104_729 + 17) as f64 * 0.618_033_988_75).sin());
    let q = r.qr().q();
    let rotated = q.transpose() * m * &q;
    attempt(&rotated).ok_or_else(|| Error::Numerical("Schur iteration did not converge".into()))
}

/// Orthonormal basis of the null space of `m`, as columns.
///
/// A singular value counts as zero when it is at most `rel_tol * max(1, sigma_max)`.
pub fn null_space<T>(m: &DMatrix<T>, rel_tol: f64) -> DMatrix<T>
where
    T: ComplexField<RealField = f64>,
{
    let (r, c) = m.shape();
    if c == 0 {
        return DMatrix::zeros(0, 0);
    }
    let padded = if r < c {
        let mut p = DMatrix::<T>::zeros(c, c);
        p.view_mut((0, 0), (r, c)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = svd(&padded, false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let tol = rel_tol * smax.max(1.0);
    let idx: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] <= tol)
        .collect();
    let mut out = DMatrix::<T>::zeros(c, idx.len());
    for (k, &i) in idx.iter().enumerate() {
        for j in 0..c {
            out[(j, k)] = v_t[(i, j)].clone().conjugate();
        }
    }
    out
}

/// Orthonormal basis of the column space of `m`.
pub fn range_basis<T>(m: &DMatrix<T>, rel_tol: f64) -> DMatrix<T>
where
    T: ComplexField<RealField = f64>,
{
    let (r, c) = m.shape();
    if c == 0 || r == 0 {
        return DMatrix::zeros(r, 0);
    }
    let svd = svd(m, true, false);
    let u = svd.u.expect("u requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return DMatrix::zeros(r, 0);
    }
    let tol = rel_tol * smax.max(1.0);
    let idx: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > tol)
        .collect();
    let mut out = DMatrix::<T>::zeros(r, idx.len());
    for (k, &i) in idx.iter().enumerate() {
        out.set_column(k, &u.column(i));
    }
    out
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    svd(m, false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

/// Orthogonal projector onto the span of orthonormal columns.
pub fn projector(basis: &DMatrix<f64>, dim: usize) -> DMatrix<f64> {
    if basis.ncols() == 0 {
        return DMatrix::zeros(dim, dim);
    }
    basis * basis.transpose()
}

/// Orthonormal basis of the intersection of subspaces given by orthonormal bases.
pub fn intersect(bases: &[&DMatrix<f64>], dim: usize) -> DMatrix<f64> {
    if bases.is_empty() {
        return DMatrix::identity(dim, dim);
    }
    if bases.iter().any(|b| b.ncols() == 0) {
        return DMatrix::zeros(dim, 0);
    }
    let mut stacked = DMatrix::<f64>::zeros(dim * bases.len(), dim);
    for (k, b) in bases.iter().enumerate() {
        let comp = DMatrix::<f64>::identity(dim, dim) - projector(b, dim);
        stacked.view_mut((k * dim, 0), (dim, dim)).copy_from(&comp);
    }
    null_space(&stacked, RANK_TOL)
}

/// Symmetric eigen-decomposition with eigenvalues sorted ascending.
pub fn sorted_symmetric_eigen(m: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite entry passed to the eigen-solver".into()));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, MAX_ITER)
        .ok_or_else(|| Error::Numerical("symmetric eigen-solver did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = DMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        vecs.set_column(k, &eig.eigenvectors.column(i));
    }
    Ok((vals, vecs))
}

/// Symmetric square root and inverse square root of an SPD matrix.
pub fn spd_sqrt_pair(p: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = p.nrows();
    if p.ncols() != n {
        return Err(Error::DimensionMismatch("P must be square".into()));
    }
    let asym = (p - p.transpose()).abs().max();
    if asym > 1e-9 * p.abs().max().max(1.0) {
        return Err(Error::InvalidInput("P is not symmetric".into()));
    }
    let (vals, vecs) = sorted_symmetric_eigen(p)?;
    if vals.first().map_or(true, |&v| v <= 0.0) {
        return Err(Error::InvalidInput("P is not positive definite".into()));
    }
    let s = DMatrix::from_diagonal(&DVector::from_iterator(n, vals.iter().map(|v| v.sqrt())));
    let si = DMatrix::from_diagonal(&DVector::from_iterator(n, vals.iter().map(|v| 1.0 / v.sqrt())));
    Ok((&vecs * s * vecs.transpose(), &vecs * si * vecs.transpose()))
}

/// Solves `A^T X + X A + Q = 0` for a Hurwitz `A` with the matrix sign iteration.
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let mut ak = a.clone();
    let mut qk = q.clone();
    for _ in 0..200 {
        let inv = ak
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Numerical("singular iterate in Lyapunov solve".into()))?;
        // determinant scaling speeds up the first iterations
        let det = ak.clone().lu().determinant().abs();
        let c = if det > 0.0 && det.is_finite() { det.powf(-1.0 / n as f64) } else { 1.0 };
        let next_a = (&ak * c + &inv / c) * 0.5;
        let next_q = (&qk * c + inv.transpose() * &qk * &inv / c) * 0.5;
        let delta = (&next_a + DMatrix::identity(n, n)).norm();
        ak = next_a;
        qk = next_q;
        if delta < 1e-13 * (n as f64) {
            break;
        }
    }
    if (&ak + DMatrix::identity(n, n)).norm() > 1e-8 * (n as f64) {
        return Err(Error::Numerical("Lyapunov iteration did not converge (A not Hurwitz?)".into()));
    }
    let x = qk * 0.5;
    Ok((&x + x.transpose()) * 0.5)
}

/// Spectral-norm distance between the orthogonal projectors of two subspaces.
pub fn subspace_distance(a: &DMatrix<f64>, b: &DMatrix<f64>, dim: usize) -> f64 {
    spectral_norm(&(projector(a, dim) - projector(b, dim)))
}

pub fn to_complex(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|v| Complex64::new(v, 0.0))
}

/// Normalizes a complex vector to unit norm with its first nonzero entry real positive.
pub fn normalize_phase(v: &DVector<Complex64>, tol: f64) -> DVector<Complex64> {
    let norm = v.norm();
    if norm == 0.0 {
        return v.clone();
    }
    let mut out = v / Complex64::new(norm, 0.0);
    if let Some(first) = out.iter().find(|c| c.norm() > tol).cloned() {
        let phase = first.conj() / first.norm();
        out *= phase;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_space_of_wide_matrix() {
        let m = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 0.0]);
        let n = null_space(&m, RANK_TOL);
        assert_eq!(n.ncols(), 2);
        assert!((&m * &n).norm() < 1e-14);
        assert!((n.transpose() * &n - DMatrix::identity(2, 2)).norm() < 1e-14);
    }

    #[test]
    fn null_space_of_full_rank_is_empty() {
        let m = DMatrix::<f64>::identity(3, 3);
        assert_eq!(null_space(&m, RANK_TOL).ncols(), 0);
    }

    #[test]
    fn lyapunov_against_kronecker_solve() {
        let a = DMatrix::from_row_slice(3, 3, &[-1.0, 2.0, 0.0, 0.0, -3.0, 1.0, 0.5, 0.0, -2.0]);
        let q = DMatrix::<f64>::identity(3, 3);
        let x = solve_lyapunov(&a, &q).unwrap();
        // oracle: (I kron A^T + A^T kron I) vec(X) = -vec(Q)
        let n = 3;
        let at = a.transpose();
        let mut k = DMatrix::<f64>::zeros(n * n, n * n);
        for i in 0..n {
            for j in 0..n {
                for p in 0..n {
                    // column-major vec: index = col * n + row
                    k[(j * n + i, j * n + p)] += at[(i, p)];
                    k[(j * n + i, p * n + i)] += at[(j, p)];
                }
            }
        }
        let rhs = DVector::from_iterator(n * n, q.iter().map(|v| -v));
        let sol = k.lu().solve(&rhs).unwrap();
        let xo = DMatrix::from_column_slice(n, n, sol.as_slice());
        assert!((&x - &xo).norm() < 1e-10 * xo.norm(), "{x} vs {xo}");
    }

    #[test]
    fn intersection_of_planes() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let b = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let i = intersect(&[&a, &b], 3);
        assert_eq!(i.ncols(), 1);
        assert!((i[(0, 0)].abs() - 1.0).abs() < 1e-12);
    }
}
