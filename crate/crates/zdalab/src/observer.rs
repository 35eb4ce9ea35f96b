//! Distributed residual-based attack detector.
//!
//! Each agent runs a copy of the consensus protocol on estimated states. Monitored
//! agents inject their output residual `r_i = c1 q_i + c2 w_i - y_i`; in pure velocity
//! mode the running integral of `r_i` is injected instead, which acts like a position
//! residual.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::dynamics::{fmt_f64, OutputConfig, Trajectory};
use crate::error::{Error, Result};
use crate::graph::{Topology, TopologyId};

pub const DEFAULT_THRESHOLD: f64 = 1e-4;
pub const DEFAULT_DEBOUNCE: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct ObserverState {
    pub q: DVector<f64>,
    pub w: DVector<f64>,
    /// Integral of the residual up to the last residual sample (trapezoid rule), one
    /// entry per monitored agent.
    pub r_integral: DVector<f64>,
    /// Residual at the previous step, `None` before the first step.
    pub last_residual: Option<DVector<f64>>,
}

impl ObserverState {
    pub fn stacked(&self) -> DVector<f64> {
        let n = self.q.len();
        let mut z = DVector::zeros(2 * n);
        z.rows_mut(0, n).copy_from(&self.q);
        z.rows_mut(n, n).copy_from(&self.w);
        z
    }
}

/// Observer initial state `true_init + Re(false_data)`.
pub fn initialize_observer(true_init: &DVector<f64>, false_data: Option<&DVector<Complex64>>, m: usize) -> Result<ObserverState> {
    if true_init.len() % 2 != 0 {
        return Err(Error::DimensionMismatch("initial state must have even length".into()));
    }
    let n = true_init.len() / 2;
    let mut z = true_init.clone();
    if let Some(f) = false_data {
        if f.len() != z.len() {
            return Err(Error::DimensionMismatch("false data must have length 2n".into()));
        }
        z += f.map(|c| c.re);
    }
    Ok(ObserverState { q: z.rows(0, n).into_owned(), w: z.rows(n, n).into_owned(), r_integral: DVector::zeros(m), last_residual: None })
}

/// Residual `C [q; w] - y` at the current estimate.
pub fn residual(obs: &ObserverState, measurement: &DVector<f64>, cfg: &OutputConfig) -> DVector<f64> {
    DVector::from_iterator(
        cfg.m(),
        cfg.monitored.iter().enumerate().map(|(k, &i)| cfg.c1[k] * obs.q[i] + cfg.c2[k] * obs.w[i] - measurement[k]),
    )
}

/// Advances the observer by one step with the measurement held over the step.
/// Returns the new state and the residual evaluated at the start of the step. Position
/// channels inject that residual over the step; velocity-only channels inject the
/// residual integral up to the start of the step.
pub fn observer_step(
    obs: &ObserverState,
    measurement: &DVector<f64>,
    l: &DMatrix<f64>,
    cfg: &OutputConfig,
    dt: f64,
) -> Result<(ObserverState, DVector<f64>)> {
    let n = cfg.n;
    if measurement.len() != cfg.m() || l.nrows() != n || obs.q.len() != n {
        return Err(Error::DimensionMismatch("observer step inputs disagree in size".into()));
    }
    let r = residual(obs, measurement, cfg);
    // close the integral over the previous step before it is injected
    let r_integral = match &obs.last_residual {
        Some(prev) => &obs.r_integral + (prev + &r) * (dt / 2.0),
        None => obs.r_integral.clone(),
    };
    let mut inj = DVector::zeros(n);
    for (k, &i) in cfg.monitored.iter().enumerate() {
        inj[i] = if cfg.c1[k] != 0.0 { r[k] } else { r_integral[k] };
    }
    let f = |q: &DVector<f64>, w: &DVector<f64>| -> (DVector<f64>, DVector<f64>) { (w.clone(), -w - l * q - &inj) };
    let (q, w) = (&obs.q, &obs.w);
    let (k1q, k1w) = f(q, w);
    let (k2q, k2w) = f(&(q + &k1q * (dt / 2.0)), &(w + &k1w * (dt / 2.0)));
    let (k3q, k3w) = f(&(q + &k2q * (dt / 2.0)), &(w + &k2w * (dt / 2.0)));
    let (k4q, k4w) = f(&(q + &k3q * dt), &(w + &k3w * dt));
    let q_new = q + (k1q + k2q * 2.0 + k3q * 2.0 + k4q) * (dt / 6.0);
    let w_new = w + (k1w + k2w * 2.0 + k3w * 2.0 + k4w) * (dt / 6.0);
    Ok((ObserverState { q: q_new, w: w_new, r_integral, last_residual: Some(r.clone()) }, r))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Detection {
    Clean,
    AttackDetected(f64),
}

#[derive(Debug, Clone)]
pub struct ResidualTrace {
    pub times: Vec<f64>,
    pub residuals: Vec<DVector<f64>>,
    pub threshold: f64,
    pub first_detection: Option<f64>,
}

impl ResidualTrace {
    pub fn max_abs(&self) -> f64 {
        self.residuals.iter().map(|r| r.amax()).fold(0.0, f64::max)
    }

    /// Largest residual over samples with `lo <= t <= hi`.
    pub fn max_abs_between(&self, lo: f64, hi: f64) -> f64 {
        self.times
            .iter()
            .zip(&self.residuals)
            .filter(|(t, _)| **t >= lo - 1e-12 && **t <= hi + 1e-12)
            .map(|(_, r)| r.amax())
            .fold(0.0, f64::max)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let m = self.residuals.first().map_or(0, |r| r.len());
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        let mut header = vec!["t".to_string()];
        header.extend((1..=m).map(|i| format!("r{i}")));
        header.push("detected".into());
        writeln!(out, "{}", header.join(","))?;
        for (t, r) in self.times.iter().zip(&self.residuals) {
            let flag = self.first_detection.map_or(false, |d| *t >= d);
            let mut row = vec![fmt_f64(*t)];
            row.extend(r.iter().map(|&v| fmt_f64(v)));
            row.push(if flag { "1".into() } else { "0".into() });
            writeln!(out, "{}", row.join(","))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().ok_or_else(|| Error::InvalidInput("empty CSV".into()))?.split(',').collect();
        let m = header.len().saturating_sub(2);
        let mut times = Vec::new();
        let mut residuals = Vec::new();
        let mut first = None;
        for line in lines {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != m + 2 {
                return Err(Error::InvalidInput(format!("residual CSV row has {} cells", cells.len())));
            }
            let p = |s: &str| s.parse::<f64>().map_err(|e| Error::InvalidInput(format!("bad number {s:?}: {e}")));
            let t = p(cells[0])?;
            let r: Result<Vec<f64>> = cells[1..=m].iter().map(|s| p(s)).collect();
            if first.is_none() && cells[m + 1] == "1" {
                first = Some(t);
            }
            times.push(t);
            residuals.push(DVector::from_vec(r?));
        }
        Ok(ResidualTrace { times, residuals, threshold: f64::NAN, first_detection: first })
    }
}

/// Flags an attack at the start of the first run of `debounce` consecutive samples
/// whose largest residual magnitude exceeds `threshold`.
pub fn detect(times: &[f64], residuals: &[DVector<f64>], threshold: f64, debounce: usize) -> Detection {
    let need = debounce.max(1);
    let mut run = 0;
    for (k, r) in residuals.iter().enumerate() {
        if r.amax() > threshold {
            run += 1;
            if run == need {
                return Detection::AttackDetected(times[k + 1 - need]);
            }
        } else {
            run = 0;
        }
    }
    Detection::Clean
}

/// Runs the observer along a measured trajectory, using the nominal topology active at
/// each sample.
pub fn run_observer(
    measured: &Trajectory,
    topologies: &[Topology],
    cfg: &OutputConfig,
    init: ObserverState,
    dt: f64,
    threshold: f64,
) -> Result<(Vec<DVector<f64>>, ResidualTrace)> {
    let laps: HashMap<TopologyId, DMatrix<f64>> = topologies.iter().map(|t| (t.id, t.laplacian())).collect();
    let mut obs = init;
    let mut states = Vec::with_capacity(measured.len());
    let mut trace = ResidualTrace { times: Vec::with_capacity(measured.len()), residuals: Vec::new(), threshold, first_detection: None };
    for k in 0..measured.len() {
        let id = measured.active_topology[k];
        let l = laps.get(&id).ok_or_else(|| Error::InvalidInput(format!("unknown topology {id}")))?;
        states.push(obs.stacked());
        let (next, r) = observer_step(&obs, &measured.outputs[k], l, cfg, dt)?;
        trace.times.push(measured.times[k]);
        trace.residuals.push(r);
        obs = next;
    }
    if let Detection::AttackDetected(t) = detect(&trace.times, &trace.residuals, threshold, DEFAULT_DEBOUNCE) {
        trace.first_detection = Some(t);
    }
    Ok((states, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Edge;

    #[test]
    fn false_data_offsets_initial_state() {
        let init = DVector::from_element(32, 1.0);
        let mut f = DVector::from_element(32, Complex64::new(0.0, 0.0));
        f[3] = Complex64::new(-1.0, 0.0);
        f[4] = Complex64::new(1.0, 0.0);
        f[19] = Complex64::new(-0.08, -2.0);
        f[20] = Complex64::new(0.08, 2.0);
        let o = initialize_observer(&init, Some(&f), 1).unwrap();
        assert_eq!(o.q[3], 0.0);
        assert_eq!(o.q[4], 2.0);
        assert!((o.w[3] - 0.92).abs() < 1e-15);
        assert!((o.w[4] - 1.08).abs() < 1e-15);
    }

    #[test]
    fn detection_examples() {
        let times: Vec<f64> = (0..10).map(|k| k as f64 * 0.1).collect();
        let quiet: Vec<DVector<f64>> = times.iter().map(|_| DVector::from_element(1, 0.0)).collect();
        assert_eq!(detect(&times, &quiet, DEFAULT_THRESHOLD, 3), Detection::Clean);
        let mut loud = quiet.clone();
        for r in loud.iter_mut().skip(3) {
            r[0] = 1e-3;
        }
        assert_eq!(detect(&times, &loud, DEFAULT_THRESHOLD, 3), Detection::AttackDetected(times[3]));
        assert_eq!(detect(&times, &loud, f64::INFINITY, 3), Detection::Clean);
        // a single spike is debounced away
        let mut spike = quiet.clone();
        spike[5][0] = 1.0;
        assert_eq!(detect(&times, &spike, DEFAULT_THRESHOLD, 3), Detection::Clean);
    }

    #[test]
    fn exact_initialization_gives_zero_residual() {
        let t = Topology::from_edges(1, 3, &[Edge(1, 2, 1.0), Edge(2, 3, 1.0)]).unwrap();
        let cfg = OutputConfig::velocity(3, vec![0]).unwrap();
        let a = crate::dynamics::system_matrix(&t.laplacian());
        let (c, _) = crate::dynamics::output_matrices(&cfg);
        let mut z = DVector::from_vec(vec![1.0, 2.0, 3.0, 0.0, 0.5, -1.0]);
        let mut obs = initialize_observer(&z, None, 1).unwrap();
        for _ in 0..1000 {
            let y = &c * &z;
            let (o, r) = observer_step(&obs, &y, &t.laplacian(), &cfg, 1e-3).unwrap();
            assert!(r.amax() < 1e-12);
            obs = o;
            z = crate::dynamics::rk4_step(&a, &z, 0.0, 1e-3, &|_| DVector::zeros(6));
        }
    }
}
