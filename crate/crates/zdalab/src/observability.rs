//! Unobservable subspaces of switched prefixes and the structural defense conditions.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{output_matrices, system_matrix, OutputConfig};
use crate::error::{Error, Result};
use crate::graph::{self, default_eig_tol, Topology, TopologyId};
use crate::linalg::{self, RANK_TOL};

/// Linear subspace of `R^dim` given by an orthonormal basis.
#[derive(Debug, Clone)]
pub struct Subspace {
    pub basis: DMatrix<f64>,
    pub dim: usize,
}

impl Subspace {
    /// Span of the columns of `m` (orthonormalized, rank-revealing).
    pub fn span(m: &DMatrix<f64>) -> Self {
        let basis = linalg::range_basis(m, RANK_TOL);
        let dim = basis.ncols();
        Subspace { basis, dim }
    }

    pub fn zero(ambient: usize) -> Self {
        Subspace { basis: DMatrix::zeros(ambient, 0), dim: 0 }
    }

    pub fn full(ambient: usize) -> Self {
        Subspace { basis: DMatrix::identity(ambient, ambient), dim: ambient }
    }

    pub fn ambient(&self) -> usize {
        self.basis.nrows()
    }

    /// Distance `||P_self - P_other||_2` between orthogonal projectors.
    pub fn distance(&self, other: &Subspace) -> f64 {
        linalg::subspace_distance(&self.basis, &other.basis, self.ambient())
    }

    /// Relative distance of `v` from the subspace.
    pub fn residual(&self, v: &DVector<f64>) -> f64 {
        let nv = v.norm();
        if nv == 0.0 {
            return 0.0;
        }
        let p = &self.basis * (self.basis.transpose() * v);
        (v - p).norm() / nv
    }

    pub fn contains(&self, v: &DVector<f64>, tol: f64) -> bool {
        self.residual(v) <= tol
    }

    pub fn intersect(&self, other: &Subspace) -> Subspace {
        let b = linalg::intersect(&[&self.basis, &other.basis], self.ambient());
        let dim = b.ncols();
        Subspace { basis: b, dim }
    }

    /// Image `M S` of the subspace.
    pub fn image(&self, m: &DMatrix<f64>) -> Subspace {
        if self.dim == 0 {
            return Subspace::zero(m.nrows());
        }
        Subspace::span(&(m * &self.basis))
    }

    /// Preimage `{x : M x in S}`.
    pub fn preimage(&self, m: &DMatrix<f64>) -> Subspace {
        let dim = self.ambient();
        let comp = DMatrix::<f64>::identity(dim, dim) - linalg::projector(&self.basis, dim);
        let b = linalg::null_space(&(comp * m), RANK_TOL);
        let d = b.ncols();
        Subspace { basis: b, dim: d }
    }
}

/// Which observability matrix defines the kernel at each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kernel {
    /// `[C; CA; ...; CA^{2n-1}]`
    Standard,
    /// `[CA; CA^2; ...; CA^{2n}]`
    Shifted,
}

/// `[C; CA; ...; CA^{N-1}]` with `N` the state dimension.
pub fn observability_matrix(a: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    let dim = a.nrows();
    let m = c.nrows();
    let mut out = DMatrix::zeros(m * dim, dim);
    let mut blk = c.clone();
    for k in 0..dim {
        out.view_mut((k * m, 0), (m, dim)).copy_from(&blk);
        blk = &blk * a;
    }
    out
}

/// `[CA; CA^2; ...; CA^N]`.
pub fn shifted_observability_matrix(a: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    observability_matrix(a, &(c * a))
}

/// Largest `A`-invariant subspace inside `ker C`, by the recursion
/// `V_0 = ker C`, `V_{j+1} = {x in V_j : A x in V_j}`.
pub fn unobservable_kernel(a: &DMatrix<f64>, c: &DMatrix<f64>, kind: Kernel) -> Subspace {
    let dim = a.nrows();
    let mut v = linalg::null_space(c, RANK_TOL);
    for _ in 0..=dim {
        if v.ncols() == 0 {
            break;
        }
        let comp = DMatrix::<f64>::identity(dim, dim) - linalg::projector(&v, dim);
        let m = comp * a * &v;
        let k = linalg::null_space(&m, RANK_TOL);
        if k.ncols() == v.ncols() {
            break;
        }
        v = if k.ncols() == 0 { DMatrix::zeros(dim, 0) } else { linalg::range_basis(&(&v * k), RANK_TOL) };
    }
    let d = v.ncols();
    let n0 = Subspace { basis: v, dim: d };
    match kind {
        Kernel::Standard => n0,
        Kernel::Shifted => n0.preimage(a),
    }
}

/// Kernel of the explicit observability matrix; a cross-check for [`unobservable_kernel`].
pub fn unobservable_kernel_explicit(a: &DMatrix<f64>, c: &DMatrix<f64>, kind: Kernel) -> Subspace {
    let o = match kind {
        Kernel::Standard => observability_matrix(a, c),
        Kernel::Shifted => shifted_observability_matrix(a, c),
    };
    let b = linalg::null_space(&o, RANK_TOL);
    let d = b.ncols();
    Subspace { basis: b, dim: d }
}

/// Initial states that produce identically zero output over a switched prefix
/// `(A_0, tau_0), ..., (A_m, tau_m)`, via the backward recursion
/// `N_m = ker O_m`, `N_q = ker O_q  intersect  exp(-A_q tau_q) N_{q+1}`.
///
/// The last dwell time is not used.
pub fn unobservable_subspace(prefix: &[(DMatrix<f64>, f64)], c: &DMatrix<f64>, kind: Kernel) -> Result<Subspace> {
    let (last, _) = prefix.last().ok_or_else(|| Error::InvalidInput("empty prefix".into()))?;
    let dim = last.nrows();
    if c.ncols() != dim {
        return Err(Error::DimensionMismatch("C does not match the state dimension".into()));
    }
    let mut n = unobservable_kernel(last, c, kind);
    for (a, tau) in prefix[..prefix.len() - 1].iter().rev() {
        let back = n.image(&(a * (-*tau)).exp());
        n = unobservable_kernel(a, c, kind).intersect(&back);
    }
    Ok(n)
}

/// Unobservable subspace of a topology sequence with velocity/position outputs.
pub fn unobservable_subspace_for(
    sequence: &[(&Topology, f64)],
    cfg: &OutputConfig,
    kind: Kernel,
) -> Result<Subspace> {
    let prefix: Vec<(DMatrix<f64>, f64)> = sequence.iter().map(|(t, tau)| (system_matrix(&t.laplacian()), *tau)).collect();
    let (c, _) = output_matrices(cfg);
    unobservable_subspace(&prefix, &c, kind)
}

/// True when every non-monitored agent has a nonzero position or velocity component
/// in some basis vector of `n0`, so a generic element of `n0` perturbs all of them.
pub fn privacy_preserved(n0: &Subspace, monitored: &[usize], n: usize) -> bool {
    let hidden: Vec<usize> = (0..n).filter(|i| !monitored.contains(i)).collect();
    if hidden.is_empty() {
        return true;
    }
    if n0.dim == 0 {
        return false;
    }
    hidden.iter().all(|&i| {
        let rows = [n0.basis.row(i).amax(), n0.basis.row(n + i).amax()];
        rows.iter().any(|&r| r > 1e-9)
    })
}

#[derive(Debug, Clone)]
pub struct DefenseReport {
    pub distinct_eigenvalues_ok: Vec<(TopologyId, bool)>,
    /// Monitored agents (0-based) whose eigenvector rows are nonzero in every column of every topology.
    pub f_set: Vec<usize>,
    pub f_nonempty: bool,
    pub c2_positive_ok: bool,
    pub row_difference_ok: bool,
    pub intermittent_verdict: bool,
    pub cooperative_verdict: bool,
}

impl DefenseReport {
    pub fn all_distinct(&self) -> bool {
        self.distinct_eigenvalues_ok.iter().all(|(_, ok)| *ok)
    }
}

/// Evaluates the structural defense conditions over a topology set.
///
/// `tol` defaults to the eigenvalue-distinctness tolerance of each topology.
pub fn defense_check(topologies: &[&Topology], cfg: &OutputConfig, tol: Option<f64>) -> Result<DefenseReport> {
    if topologies.is_empty() {
        return Err(Error::InvalidInput("topology set is empty".into()));
    }
    let mut distinct = Vec::new();
    let mut in_f = vec![true; cfg.m()];
    let mut row_diff = true;
    for t in topologies {
        if t.n != cfg.n {
            return Err(Error::DimensionMismatch(format!("topology {} has n = {}, outputs expect {}", t.id, t.n, cfg.n)));
        }
        let sd = graph::spectral_decompose(&t.laplacian())?;
        let tol = tol.unwrap_or_else(|| default_eig_tol(&sd.eigenvalues));
        let ok = sd.eigenvalues.windows(2).all(|w| w[1] - w[0] > tol);
        distinct.push((t.id, ok));
        for (k, &i) in cfg.monitored.iter().enumerate() {
            if sd.q.row(i).iter().any(|q| q.abs() <= tol) {
                in_f[k] = false;
            }
        }
        for a in 0..cfg.m() {
            for b in (a + 1)..cfg.m() {
                let (i, j) = (cfg.monitored[a], cfg.monitored[b]);
                for col in 1..t.n {
                    if (sd.q[(i, col)] - sd.q[(j, col)]).abs() <= tol {
                        row_diff = false;
                    }
                }
            }
        }
    }
    let f_set: Vec<usize> = cfg.monitored.iter().zip(&in_f).filter(|(_, ok)| **ok).map(|(i, _)| *i).collect();
    let f_nonempty = !f_set.is_empty();
    let c2_positive_ok = cfg.c2.iter().all(|&c| c > 0.0);
    let all_distinct = distinct.iter().all(|(_, ok)| *ok);
    Ok(DefenseReport {
        distinct_eigenvalues_ok: distinct,
        f_set,
        f_nonempty,
        c2_positive_ok,
        row_difference_ok: row_diff,
        intermittent_verdict: all_distinct && f_nonempty,
        cooperative_verdict: all_distinct && c2_positive_ok && row_diff,
    })
}
