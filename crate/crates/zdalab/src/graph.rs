//! Weighted undirected communication topologies and their Laplacian spectra.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg;

pub type TopologyId = u32;

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub id: TopologyId,
    pub n: usize,
    pub adjacency: DMatrix<f64>,
}

/// Edge in 1-based agent indexing, as written in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge(pub usize, pub usize, pub f64);

impl Topology {
    pub fn new(id: TopologyId, adjacency: DMatrix<f64>) -> Result<Self> {
        let n = adjacency.nrows();
        if n == 0 || adjacency.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "adjacency must be square and non-empty, got {}x{}",
                adjacency.nrows(),
                adjacency.ncols()
            )));
        }
        for i in 0..n {
            if adjacency[(i, i)] != 0.0 {
                return invalid(format!("self-loop at agent {}", i + 1));
            }
            for j in 0..n {
                let w = adjacency[(i, j)];
                if !w.is_finite() || w < 0.0 {
                    return invalid(format!("invalid weight {w} on ({}, {})", i + 1, j + 1));
                }
                if (w - adjacency[(j, i)]).abs() > 1e-12 * w.abs().max(1.0) {
                    return invalid(format!("adjacency not symmetric at ({}, {})", i + 1, j + 1));
                }
            }
        }
        Ok(Topology { id, n, adjacency })
    }

    /// Builds a topology from 1-based `(i, j, weight)` edges.
    pub fn from_edges(id: TopologyId, n: usize, edges: &[Edge]) -> Result<Self> {
        let mut a = DMatrix::<f64>::zeros(n, n);
        for &Edge(i, j, w) in edges {
            if i == 0 || j == 0 || i > n || j > n {
                return invalid(format!("edge ({i}, {j}) out of range for n = {n}"));
            }
            if i == j {
                return invalid(format!("self-loop at agent {i}"));
            }
            if !w.is_finite() || w < 0.0 {
                return invalid(format!("negative or non-finite weight {w} on edge ({i}, {j})"));
            }
            a[(i - 1, j - 1)] = w;
            a[(j - 1, i - 1)] = w;
        }
        Topology::new(id, a)
    }

    /// Nonzero edges, 1-based, with `i < j`.
    pub fn edges(&self) -> Vec<Edge> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                if self.adjacency[(i, j)] != 0.0 {
                    out.push(Edge(i + 1, j + 1, self.adjacency[(i, j)]));
                }
            }
        }
        out
    }

    pub fn laplacian(&self) -> DMatrix<f64> {
        laplacian(self)
    }
}

pub fn laplacian(t: &Topology) -> DMatrix<f64> {
    let n = t.n;
    let mut l = -t.adjacency.clone();
    for i in 0..n {
        l[(i, i)] = t.adjacency.row(i).sum();
    }
    l
}

#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors as columns; the first column is `1/sqrt(n)`.
    pub q: DMatrix<f64>,
}

/// Tolerance used to decide when two Laplacian eigenvalues coincide.
pub fn default_eig_tol(eigenvalues: &[f64]) -> f64 {
    let top = eigenvalues.iter().cloned().fold(0.0, f64::max);
    1e-8 * top.max(1.0)
}

/// Groups sorted eigenvalues into clusters whose neighbours differ by at most `tol`.
pub fn eigen_clusters(eigenvalues: &[f64], tol: f64) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for k in 1..=eigenvalues.len() {
        if k == eigenvalues.len() || eigenvalues[k] - eigenvalues[k - 1] > tol {
            out.push(start..k);
            start = k;
        }
    }
    out
}

/// Orthonormal eigen-decomposition of a graph Laplacian.
///
/// Columns inside a repeated eigenvalue are rebuilt by projecting the unit vectors
/// `e_1, e_2, ...` onto the eigenspace in order and orthonormalizing, so the result
/// does not depend on the eigen-solver's internal choices. Each column's first
/// nonzero entry is positive.
pub fn spectral_decompose(l: &DMatrix<f64>) -> Result<SpectralDecomposition> {
    let n = l.nrows();
    if l.ncols() != n || n == 0 {
        return Err(Error::DimensionMismatch("Laplacian must be square".into()));
    }
    let (vals, vecs) = linalg::sorted_symmetric_eigen(l)?;
    let tol = default_eig_tol(&vals);
    let mut q = DMatrix::<f64>::zeros(n, n);
    let ones = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    for cluster in eigen_clusters(&vals, tol) {
        let v = vecs.columns(cluster.start, cluster.len()).into_owned();
        let proj = &v * v.transpose();
        let mut basis: Vec<DVector<f64>> = Vec::new();
        // the kernel of a connected Laplacian is exactly the consensus direction
        if cluster.start == 0 && (proj.clone() * &ones - &ones).norm() < 1e-8 {
            basis.push(ones.clone());
        }
        let mut e = 0;
        while basis.len() < cluster.len() && e < n {
            let mut w = proj.column(e).into_owned();
            for b in &basis {
                let c = b.dot(&w);
                w -= b * c;
            }
            // second pass for numerical orthogonality
            for b in &basis {
                let c = b.dot(&w);
                w -= b * c;
            }
            let nw = w.norm();
            if nw > 1e-6 {
                basis.push(w / nw);
            }
            e += 1;
        }
        if basis.len() != cluster.len() {
            return Err(Error::Numerical("failed to build eigenspace basis".into()));
        }
        for (k, mut b) in basis.into_iter().enumerate() {
            if let Some(first) = b.iter().find(|x| x.abs() > 1e-10).cloned() {
                if first < 0.0 {
                    b = -b;
                }
            }
            q.set_column(cluster.start + k, &b);
        }
    }
    Ok(SpectralDecomposition { eigenvalues: vals, q })
}

/// True when the second-smallest Laplacian eigenvalue exceeds `tol`.
pub fn is_connected(l: &DMatrix<f64>, tol: f64) -> Result<bool> {
    let (vals, _) = linalg::sorted_symmetric_eigen(l)?;
    Ok(vals.len() == 1 || vals[1] > tol)
}

/// True when every gap between consecutive sorted eigenvalues exceeds `tol`
/// (`None` uses [`default_eig_tol`]).
pub fn has_distinct_eigenvalues(l: &DMatrix<f64>, tol: Option<f64>) -> Result<bool> {
    let (vals, _) = linalg::sorted_symmetric_eigen(l)?;
    let tol = tol.unwrap_or_else(|| default_eig_tol(&vals));
    Ok(vals.windows(2).all(|w| w[1] - w[0] > tol))
}

/// Number of distinct Laplacian eigenvalues at tolerance `tol`.
pub fn distinct_eigenvalue_count(l: &DMatrix<f64>, tol: Option<f64>) -> Result<usize> {
    let (vals, _) = linalg::sorted_symmetric_eigen(l)?;
    let tol = tol.unwrap_or_else(|| default_eig_tol(&vals));
    Ok(eigen_clusters(&vals, tol).len())
}

/// Hop-count diameter of the graph (edge weights ignored).
pub fn diameter(t: &Topology) -> Result<usize> {
    let n = t.n;
    let mut best = 0;
    for s in 0..n {
        let mut dist = vec![usize::MAX; n];
        dist[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for v in 0..n {
                if t.adjacency[(u, v)] > 0.0 && dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        for &d in &dist {
            if d == usize::MAX {
                return Err(Error::Disconnected);
            }
            best = best.max(d);
        }
    }
    Ok(best)
}

/// Closed-form determinant of the Vandermonde matrix with rows `a_j^k`, k = 0..n-1.
pub fn vandermonde_det(a: &[f64]) -> f64 {
    let n = a.len();
    let mut prod = 1.0;
    for i in 0..n {
        for j in (i + 1)..n {
            prod *= a[i] - a[j];
        }
    }
    if ((n * n - n) / 2) % 2 == 1 {
        -prod
    } else {
        prod
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> Topology {
        Topology::from_edges(1, 3, &[Edge(1, 2, 1.0), Edge(2, 3, 1.0)]).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol)
    }

    #[test]
    fn laplacian_examples() {
        let l = laplacian(&path3());
        let want = DMatrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 1.0]);
        assert_eq!(l, want);
        let k2 = Topology::from_edges(2, 2, &[Edge(1, 2, 1.0)]).unwrap();
        assert_eq!(laplacian(&k2), DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));
    }

    #[test]
    fn spectra_of_small_graphs() {
        let sd = spectral_decompose(&path3().laplacian()).unwrap();
        assert!(close(&sd.eigenvalues, &[0.0, 1.0, 3.0], 1e-12));
        let k2 = Topology::from_edges(2, 2, &[Edge(1, 2, 1.0)]).unwrap();
        let sd = spectral_decompose(&k2.laplacian()).unwrap();
        assert!(close(&sd.eigenvalues, &[0.0, 2.0], 1e-12));
        let star = Topology::from_edges(3, 4, &[Edge(1, 2, 1.0), Edge(1, 3, 1.0), Edge(1, 4, 1.0)]).unwrap();
        let sd = spectral_decompose(&star.laplacian()).unwrap();
        assert!(close(&sd.eigenvalues, &[0.0, 1.0, 1.0, 4.0], 1e-12));
        assert!(!has_distinct_eigenvalues(&star.laplacian(), None).unwrap());
    }

    #[test]
    fn path3_eigenvectors_follow_sign_convention() {
        let sd = spectral_decompose(&path3().laplacian()).unwrap();
        let s2 = 1.0 / 2f64.sqrt();
        let s6 = 1.0 / 6f64.sqrt();
        let want = DMatrix::from_row_slice(
            3,
            3,
            &[1.0 / 3f64.sqrt(), s2, s6, 1.0 / 3f64.sqrt(), 0.0, -2.0 * s6, 1.0 / 3f64.sqrt(), -s2, s6],
        );
        assert!((&sd.q - want).norm() < 1e-12, "{}", sd.q);
    }

    #[test]
    fn repeated_cluster_is_deterministic() {
        let star = Topology::from_edges(3, 4, &[Edge(1, 2, 1.0), Edge(1, 3, 1.0), Edge(1, 4, 1.0)]).unwrap();
        let sd = spectral_decompose(&star.laplacian()).unwrap();
        // projecting e_1 gives zero (agent 1 is the centre), so e_2 and e_3 seed the cluster
        let a = DVector::from_vec(vec![0.0, 2.0, -1.0, -1.0]) / 6f64.sqrt();
        let b = DVector::from_vec(vec![0.0, 0.0, 1.0, -1.0]) / 2f64.sqrt();
        assert!((sd.q.column(1) - a).norm() < 1e-12);
        assert!((sd.q.column(2) - b).norm() < 1e-12);
    }

    #[test]
    fn connectivity() {
        assert!(is_connected(&path3().laplacian(), 1e-9).unwrap());
        let split = Topology::from_edges(1, 4, &[Edge(1, 2, 1.0), Edge(3, 4, 1.0)]).unwrap();
        assert!(!is_connected(&split.laplacian(), 1e-9).unwrap());
    }

    #[test]
    fn diameters() {
        assert_eq!(diameter(&path3()).unwrap(), 2);
        let mut k4 = Vec::new();
        for i in 1..=4 {
            for j in (i + 1)..=4 {
                k4.push(Edge(i, j, 1.0));
            }
        }
        assert_eq!(diameter(&Topology::from_edges(1, 4, &k4).unwrap()).unwrap(), 1);
        let c6: Vec<Edge> = (1..=6).map(|i| Edge(i, i % 6 + 1, 1.0)).collect();
        assert_eq!(diameter(&Topology::from_edges(1, 6, &c6).unwrap()).unwrap(), 3);
        let split = Topology::from_edges(1, 4, &[Edge(1, 2, 1.0), Edge(3, 4, 1.0)]).unwrap();
        assert!(matches!(diameter(&split), Err(Error::Disconnected)));
    }

    #[test]
    fn vandermonde_examples() {
        assert_eq!(vandermonde_det(&[1.0, 2.0, 3.0]), 2.0);
        assert_eq!(vandermonde_det(&[5.0]), 1.0);
        assert_eq!(vandermonde_det(&[2.0, 2.0]), 0.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Topology::from_edges(1, 3, &[Edge(1, 4, 1.0)]).is_err());
        assert!(Topology::from_edges(1, 3, &[Edge(1, 2, -1.0)]).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 0.0]);
        assert!(Topology::new(1, asym).is_err());
    }
}
