//! Second-order consensus plant: `x' = v`, `v' = -v - L x + attack input`.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::graph::{SpectralDecomposition, TopologyId};

pub const DEFAULT_DT: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct StackedState {
    pub x: DVector<f64>,
    pub v: DVector<f64>,
}

impl StackedState {
    pub fn new(x: DVector<f64>, v: DVector<f64>) -> Result<Self> {
        if x.len() != v.len() {
            return Err(Error::DimensionMismatch(format!(
                "x has {} entries but v has {}",
                x.len(),
                v.len()
            )));
        }
        Ok(StackedState { x, v })
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let n = self.n();
        let mut z = DVector::zeros(2 * n);
        z.rows_mut(0, n).copy_from(&self.x);
        z.rows_mut(n, n).copy_from(&self.v);
        z
    }

    pub fn from_vector(z: &DVector<f64>) -> Result<Self> {
        if z.len() % 2 != 0 {
            return Err(Error::DimensionMismatch("stacked state must have even length".into()));
        }
        let n = z.len() / 2;
        Ok(StackedState { x: z.rows(0, n).into_owned(), v: z.rows(n, n).into_owned() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputMode {
    Velocity,
    Position,
    Partial,
}

/// Which agents are measured and how.
///
/// `monitored` holds 0-based agent indices, strictly increasing. Coefficient `k`
/// belongs to agent `monitored[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub n: usize,
    pub monitored: Vec<usize>,
    pub c1: Vec<f64>,
    pub c2: Vec<f64>,
    pub d: Vec<f64>,
}

impl OutputConfig {
    pub fn new(n: usize, monitored: Vec<usize>, c1: Vec<f64>, c2: Vec<f64>, d: Vec<f64>) -> Result<Self> {
        if monitored.is_empty() {
            return invalid("monitored set must be nonempty");
        }
        if monitored.windows(2).any(|w| w[0] >= w[1]) {
            return invalid("monitored indices must be strictly increasing");
        }
        if let Some(&bad) = monitored.iter().find(|&&i| i >= n) {
            return invalid(format!("monitored agent {} out of range for n = {n}", bad + 1));
        }
        let m = monitored.len();
        if c1.len() != m || c2.len() != m || d.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "coefficient vectors must have length {m} (one per monitored agent)"
            )));
        }
        for k in 0..m {
            if c1[k] == 0.0 && c2[k] == 0.0 {
                return invalid(format!("agent {} has c1 = c2 = 0", monitored[k] + 1));
            }
        }
        Ok(OutputConfig { n, monitored, c1, c2, d })
    }

    /// Velocity outputs with unit gain and no direct feed-through.
    pub fn velocity(n: usize, monitored: Vec<usize>) -> Result<Self> {
        let m = monitored.len();
        Self::new(n, monitored, vec![0.0; m], vec![1.0; m], vec![0.0; m])
    }

    pub fn position(n: usize, monitored: Vec<usize>) -> Result<Self> {
        let m = monitored.len();
        Self::new(n, monitored, vec![1.0; m], vec![0.0; m], vec![0.0; m])
    }

    pub fn m(&self) -> usize {
        self.monitored.len()
    }

    /// Mode of the whole configuration; mixed rows count as partial.
    pub fn mode(&self) -> OutputMode {
        if self.c1.iter().all(|&c| c == 0.0) {
            OutputMode::Velocity
        } else if self.c2.iter().all(|&c| c == 0.0) {
            OutputMode::Position
        } else {
            OutputMode::Partial
        }
    }

    pub fn is_monitored(&self, agent: usize) -> bool {
        self.monitored.binary_search(&agent).is_ok()
    }

    /// Per-agent observer injection gain, an `n x n` diagonal.
    pub fn observer_gain(&self) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.n, self.n);
        for (k, &i) in self.monitored.iter().enumerate() {
            g[(i, i)] = if self.c1[k] != 0.0 { self.c1[k] } else { self.c2[k] };
        }
        g
    }
}

/// `A = [[0, I], [-L, -I]]`.
pub fn system_matrix(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut a = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        a[(i, n + i)] = 1.0;
        a[(n + i, n + i)] = -1.0;
    }
    a.view_mut((n, 0), (n, n)).copy_from(&(-l));
    a
}

/// Output matrix `C` (`m x 2n`) and feed-through `D` (`m x 2n`, acting on the velocity block).
pub fn output_matrices(cfg: &OutputConfig) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = cfg.n;
    let m = cfg.m();
    let mut c = DMatrix::zeros(m, 2 * n);
    let mut d = DMatrix::zeros(m, 2 * n);
    for (k, &i) in cfg.monitored.iter().enumerate() {
        c[(k, i)] = cfg.c1[k];
        c[(k, n + i)] = cfg.c2[k];
        d[(k, n + i)] = cfg.d[k];
    }
    (c, d)
}

/// Consensus protocol `u = -v - L x`.
pub fn control_input(x: &DVector<f64>, v: &DVector<f64>, l: &DMatrix<f64>) -> DVector<f64> {
    -v - l * x
}

/// Asymptotic agreement point `mean(x0) + mean(v0)`.
pub fn target_location(x0: &DVector<f64>, v0: &DVector<f64>) -> f64 {
    x0.mean() + v0.mean()
}

/// `(max_ij |x_i - x_j|, max_i |v_i|)`.
pub fn consensus_error(x: &DVector<f64>, v: &DVector<f64>) -> (f64, f64) {
    let spread = x.max() - x.min();
    (spread, v.amax())
}

/// Position and velocity fluctuations about the network averages.
pub fn fluctuation(state: &StackedState) -> StackedState {
    let n = state.n() as f64;
    let xm = state.x.sum() / n;
    let vm = state.v.sum() / n;
    StackedState { x: state.x.add_scalar(-xm), v: state.v.add_scalar(-vm) }
}

/// Disagreement coordinates in the eigenbasis of a reference Laplacian, dropping the
/// consensus direction. Length `2(n-1)`.
pub fn reduced_coordinates(state: &StackedState, reference: &SpectralDecomposition) -> DVector<f64> {
    let n = state.n();
    let f = fluctuation(state);
    let qt = reference.q.transpose();
    let a = &qt * &f.x;
    let b = &qt * &f.v;
    let mut th = DVector::zeros(2 * (n - 1));
    th.rows_mut(0, n - 1).copy_from(&a.rows(1, n - 1));
    th.rows_mut(n - 1, n - 1).copy_from(&b.rows(1, n - 1));
    th
}

/// External input on the velocity block.
pub enum Forcing<'a> {
    Zero,
    /// `Re(g exp(eta (t - t_ref)))`, `g` of length `2n`.
    Exponential { g: &'a DVector<Complex64>, eta: Complex64, t_ref: f64 },
    /// Arbitrary `2n`-vector valued input.
    Custom(&'a dyn Fn(f64) -> DVector<f64>),
}

impl Forcing<'_> {
    pub fn eval(&self, t: f64, dim: usize) -> DVector<f64> {
        match self {
            Forcing::Zero => DVector::zeros(dim),
            Forcing::Exponential { g, eta, t_ref } => {
                let s = (eta * (t - t_ref)).exp();
                g.map(|c| (c * s).re)
            }
            Forcing::Custom(f) => f(t),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Rk4,
    Exact,
}

/// One classical Runge-Kutta step of `z' = A z + f(t)`.
pub fn rk4_step(a: &DMatrix<f64>, z: &DVector<f64>, t: f64, h: f64, f: &dyn Fn(f64) -> DVector<f64>) -> DVector<f64> {
    let k1 = a * z + f(t);
    let z2 = z + &k1 * (h / 2.0);
    let k2 = a * &z2 + f(t + h / 2.0);
    let z3 = z + &k2 * (h / 2.0);
    let k3 = a * &z3 + f(t + h / 2.0);
    let z4 = z + &k3 * h;
    let k4 = a * &z4 + f(t + h);
    z + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Propagates `z' = A z + forcing(t)` from `t0` to `t1`.
pub fn propagate(
    z0: &DVector<f64>,
    a: &DMatrix<f64>,
    forcing: &Forcing,
    t0: f64,
    t1: f64,
    dt: f64,
    method: Method,
) -> Result<DVector<f64>> {
    let dim = z0.len();
    if a.nrows() != dim || a.ncols() != dim {
        return Err(Error::DimensionMismatch("system matrix does not match state".into()));
    }
    if t1 < t0 {
        return invalid("t1 must not precede t0");
    }
    match method {
        Method::Rk4 => {
            if !(dt > 0.0) {
                return invalid("dt must be positive");
            }
            let steps = (((t1 - t0) / dt) - 1e-9).ceil().max(0.0) as usize;
            if steps == 0 {
                return Ok(z0.clone());
            }
            let h = (t1 - t0) / steps as f64;
            let f = |t: f64| forcing.eval(t, dim);
            let mut z = z0.clone();
            for k in 0..steps {
                let t = t0 + k as f64 * h;
                z = rk4_step(a, &z, t, h, &f);
                if z.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Divergence { time: t + h });
                }
            }
            Ok(z)
        }
        Method::Exact => {
            let h = t1 - t0;
            let z = match forcing {
                Forcing::Zero => (a * h).exp() * z0,
                Forcing::Exponential { g, eta, t_ref } => {
                    let mut m = DMatrix::<Complex64>::zeros(dim + 1, dim + 1);
                    for i in 0..dim {
                        for j in 0..dim {
                            m[(i, j)] = Complex64::new(a[(i, j)] * h, 0.0);
                        }
                        m[(i, dim)] = g[i] * h;
                    }
                    m[(dim, dim)] = eta * h;
                    let e = m.exp();
                    let mut w = DVector::<Complex64>::zeros(dim + 1);
                    for i in 0..dim {
                        w[i] = Complex64::new(z0[i], 0.0);
                    }
                    w[dim] = (eta * (t0 - t_ref)).exp();
                    let out = e * w;
                    DVector::from_iterator(dim, out.iter().take(dim).map(|c| c.re))
                }
                Forcing::Custom(_) => return invalid("exact propagation needs zero or exponential forcing"),
            };
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence { time: t1 });
            }
            Ok(z)
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// Stacked `[x; v]` samples.
    pub states: Vec<DVector<f64>>,
    pub outputs: Vec<DVector<f64>>,
    pub active_topology: Vec<TopologyId>,
}

/// Formats a float for CSV output with 17 significant digits, enough to round-trip.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let n = self.states.first().map_or(0, |s| s.len() / 2);
        let m = self.outputs.first().map_or(0, |s| s.len());
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=n).map(|i| format!("v{i}")));
        header.extend((1..=m).map(|i| format!("y{i}")));
        header.push("topology".into());
        writeln!(w, "{}", header.join(","))?;
        for k in 0..self.len() {
            let mut row = vec![fmt_f64(self.times[k])];
            row.extend(self.states[k].iter().map(|&v| fmt_f64(v)));
            row.extend(self.outputs[k].iter().map(|&v| fmt_f64(v)));
            row.push(self.active_topology[k].to_string());
            writeln!(w, "{}", row.join(","))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a trajectory written by [`Trajectory::write_csv`].
    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().ok_or_else(|| Error::InvalidInput("empty CSV".into()))?.split(',').collect();
        let n = header.iter().filter(|h| h.starts_with('x')).count();
        let m = header.iter().filter(|h| h.starts_with('y')).count();
        let mut tr = Trajectory::default();
        for (lineno, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 2 + 2 * n + m {
                return Err(Error::InvalidInput(format!("CSV line {} has {} cells", lineno + 2, cells.len())));
            }
            let parse = |s: &str| -> Result<f64> {
                s.parse::<f64>().map_err(|e| Error::InvalidInput(format!("bad number {s:?}: {e}")))
            };
            tr.times.push(parse(cells[0])?);
            let st: Result<Vec<f64>> = cells[1..1 + 2 * n].iter().map(|s| parse(s)).collect();
            tr.states.push(DVector::from_vec(st?));
            let ys: Result<Vec<f64>> = cells[1 + 2 * n..1 + 2 * n + m].iter().map(|s| parse(s)).collect();
            tr.outputs.push(DVector::from_vec(ys?));
            let id = cells[1 + 2 * n + m]
                .parse::<TopologyId>()
                .map_err(|e| Error::InvalidInput(format!("bad topology id: {e}")))?;
            tr.active_topology.push(id);
        }
        Ok(tr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Edge, Topology};

    fn k2() -> DMatrix<f64> {
        Topology::from_edges(1, 2, &[Edge(1, 2, 1.0)]).unwrap().laplacian()
    }

    #[test]
    fn system_matrix_k2() {
        let want = DMatrix::from_row_slice(
            4,
            4,
            &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, -1.0, 1.0, -1.0, 0.0, 1.0, -1.0, 0.0, -1.0],
        );
        assert_eq!(system_matrix(&k2()), want);
    }

    #[test]
    fn output_matrices_example() {
        let cfg = OutputConfig::new(2, vec![0], vec![0.0], vec![1.0], vec![1.0]).unwrap();
        let (c, d) = output_matrices(&cfg);
        assert_eq!(c, DMatrix::from_row_slice(1, 4, &[0.0, 0.0, 1.0, 0.0]));
        assert_eq!(d, DMatrix::from_row_slice(1, 4, &[0.0, 0.0, 1.0, 0.0]));
        assert_eq!(cfg.mode(), OutputMode::Velocity);
    }

    #[test]
    fn output_config_validation() {
        assert!(OutputConfig::velocity(3, vec![]).is_err());
        assert!(OutputConfig::velocity(3, vec![2, 1]).is_err());
        assert!(OutputConfig::velocity(3, vec![3]).is_err());
        assert!(OutputConfig::new(3, vec![0], vec![0.0], vec![0.0], vec![0.0]).is_err());
    }

    #[test]
    fn control_input_k2() {
        let u = control_input(&DVector::from_vec(vec![0.0, 1.0]), &DVector::zeros(2), &k2());
        assert_eq!(u, DVector::from_vec(vec![1.0, -1.0]));
    }

    #[test]
    fn consensus_error_example() {
        let e = consensus_error(&DVector::from_vec(vec![0.0, 1.0]), &DVector::from_vec(vec![0.0, -2.0]));
        assert_eq!(e, (1.0, 2.0));
    }

    #[test]
    fn target_location_from_stacked_initial_values() {
        let x0 = DVector::from_iterator(16, (0..16).map(|i| if i < 8 { 2.0 } else { 4.0 }));
        let v0 = DVector::from_iterator(16, (0..16).map(|i| if i < 8 { 6.0 } else { 8.0 }));
        assert!((target_location(&x0, &v0) - 10.0).abs() < 1e-14);
    }

    #[test]
    fn rk4_matches_exponential() {
        let a = system_matrix(&k2());
        let z0 = DVector::from_vec(vec![0.0, 1.0, 0.5, -0.3]);
        let r = propagate(&z0, &a, &Forcing::Zero, 0.0, 2.0, 1e-3, Method::Rk4).unwrap();
        let e = propagate(&z0, &a, &Forcing::Zero, 0.0, 2.0, 0.0, Method::Exact).unwrap();
        assert!((r - e).norm() < 1e-11);
    }

    #[test]
    fn exact_forcing_matches_rk4() {
        let a = system_matrix(&k2());
        let g = DVector::from_vec(vec![
            Complex64::new(0.0, 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(1.0, 0.5),
            Complex64::new(-0.2, 0.0),
        ]);
        let f = Forcing::Exponential { g: &g, eta: Complex64::new(0.1, -2.0), t_ref: 0.3 };
        let z0 = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]);
        let r = propagate(&z0, &a, &f, 0.0, 3.0, 1e-3, Method::Rk4).unwrap();
        let e = propagate(&z0, &a, &f, 0.0, 3.0, 0.0, Method::Exact).unwrap();
        let gap = (r - e).norm();
        assert!(gap < 1e-10, "{gap}");
    }

    #[test]
    fn divergence_is_reported() {
        let a = DMatrix::from_element(1, 1, 400.0);
        let z0 = DVector::from_element(1, 1.0);
        let err = propagate(&z0, &a, &Forcing::Zero, 0.0, 10.0, 1e-2, Method::Rk4).unwrap_err();
        assert!(matches!(err, Error::Divergence { time } if time > 0.0 && time < 10.0));
    }
}
