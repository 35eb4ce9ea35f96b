//! Periodic switching schedules and matrix-measure stability certificates.

use nalgebra::DMatrix;

use crate::dynamics::system_matrix;
use crate::error::{invalid, Error, Result};
use crate::graph::{self, SpectralDecomposition, Topology, TopologyId};
use crate::linalg;

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleEntry {
    pub topology: TopologyId,
    pub dwell: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingSchedule {
    pub entries: Vec<ScheduleEntry>,
    pub period: f64,
}

impl SwitchingSchedule {
    pub fn new(entries: Vec<(TopologyId, f64)>) -> Result<Self> {
        if entries.is_empty() {
            return invalid("schedule needs at least one entry");
        }
        if let Some(&(id, d)) = entries.iter().find(|(_, d)| !(*d > 0.0) || !d.is_finite()) {
            return invalid(format!("dwell {d} for topology {id} must be positive"));
        }
        let entries: Vec<ScheduleEntry> = entries.into_iter().map(|(topology, dwell)| ScheduleEntry { topology, dwell }).collect();
        let period = entries.iter().map(|e| e.dwell).sum();
        Ok(SwitchingSchedule { entries, period })
    }

    /// Distinct topology ids in order of first appearance.
    pub fn topology_ids(&self) -> Vec<TopologyId> {
        let mut out: Vec<TopologyId> = Vec::new();
        for e in &self.entries {
            if !out.contains(&e.topology) {
                out.push(e.topology);
            }
        }
        out
    }

    /// Dwell of entry `k`, wrapping periodically.
    pub fn entry(&self, k: usize) -> &ScheduleEntry {
        &self.entries[k % self.entries.len()]
    }

    /// Total dwell weight `nu_s = (sum of dwells on s) / period` for each distinct topology.
    pub fn weights(&self) -> Vec<(TopologyId, f64)> {
        self.topology_ids()
            .into_iter()
            .map(|id| {
                let w: f64 = self.entries.iter().filter(|e| e.topology == id).map(|e| e.dwell).sum();
                (id, w / self.period)
            })
            .collect()
    }

    /// Checks that every dwell is an integer number of `dt` steps and returns those counts.
    pub fn dwell_steps(&self, dt: f64) -> Result<Vec<usize>> {
        self.entries
            .iter()
            .map(|e| {
                let k = (e.dwell / dt).round();
                if k < 1.0 || (k * dt - e.dwell).abs() > 1e-9 * e.dwell.max(1.0) {
                    invalid(format!(
                        "dwell {} of topology {} is not a multiple of dt = {dt}",
                        e.dwell, e.topology
                    ))
                } else {
                    Ok(k as usize)
                }
            })
            .collect()
    }

    /// Iterates over dwell windows starting at `t0` until `horizon` (exclusive).
    pub fn windows(&self, t0: f64, horizon: f64) -> Vec<DwellWindow> {
        let mut out = Vec::new();
        let mut t = t0;
        let mut k = 0;
        while t < horizon - 1e-12 {
            let e = self.entry(k);
            out.push(DwellWindow { index: k, topology: e.topology, start: t, end: t + e.dwell });
            t += e.dwell;
            k += 1;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DwellWindow {
    /// Global window counter `k` (not reduced modulo the schedule length).
    pub index: usize,
    pub topology: TopologyId,
    pub start: f64,
    pub end: f64,
}

/// Topology active at time `t` for a schedule started at `t0`. Windows are half open,
/// so the new topology is active exactly at a switching instant.
pub fn active_topology(schedule: &SwitchingSchedule, t0: f64, t: f64) -> TopologyId {
    let mut local = (t - t0).rem_euclid(schedule.period);
    // absorb round-off right below a switching instant
    let eps = 1e-12 * schedule.period.max(1.0);
    for e in &schedule.entries {
        if local < e.dwell - eps {
            return e.topology;
        }
        local -= e.dwell;
    }
    schedule.entries[0].topology
}

/// Step-indexed switcher used by the simulator, so switching lands exactly on the grid.
#[derive(Debug, Clone)]
pub struct StepSwitcher {
    ids: Vec<TopologyId>,
    boundaries: Vec<usize>,
    period_steps: usize,
}

impl StepSwitcher {
    pub fn new(schedule: &SwitchingSchedule, dt: f64) -> Result<Self> {
        let steps = schedule.dwell_steps(dt)?;
        let mut boundaries = Vec::with_capacity(steps.len());
        let mut acc = 0;
        for s in &steps {
            acc += s;
            boundaries.push(acc);
        }
        Ok(StepSwitcher { ids: schedule.entries.iter().map(|e| e.topology).collect(), boundaries, period_steps: acc })
    }

    /// Active topology and its entry index for the step starting at `step * dt`.
    pub fn at(&self, step: usize) -> (usize, TopologyId) {
        let local = step % self.period_steps;
        let k = self.boundaries.iter().position(|&b| local < b).unwrap_or(0);
        (k, self.ids[k])
    }

    /// Global window counter for the step.
    pub fn window_index(&self, step: usize) -> usize {
        let (k, _) = self.at(step);
        (step / self.period_steps) * self.ids.len() + k
    }
}

/// `mu_P(A) = 0.5 * lambda_max(P^{1/2} A P^{-1/2} + (P^{1/2} A P^{-1/2})^T)`.
pub fn matrix_measure(a: &DMatrix<f64>, p: &DMatrix<f64>) -> Result<f64> {
    if a.nrows() != a.ncols() || p.shape() != a.shape() {
        return Err(Error::DimensionMismatch("A and P must be square of equal size".into()));
    }
    let (s, si) = linalg::spd_sqrt_pair(p)?;
    let b = &s * a * &si;
    let (vals, _) = linalg::sorted_symmetric_eigen(&((&b + b.transpose()) * 0.5))?;
    Ok(*vals.last().expect("nonempty"))
}

/// Laplacian of `l_s` expressed in the eigenbasis of the reference decomposition,
/// with the consensus direction removed, embedded in the second-order error dynamics.
/// Size `2(n-1)`.
pub fn reduced_consensus_matrix(reference: &SpectralDecomposition, l_s: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l_s.nrows();
    let ups = reference.q.transpose() * l_s * &reference.q;
    let sub = ups.view((1, 1), (n - 1, n - 1)).into_owned();
    system_matrix(&sub)
}

#[derive(Debug, Clone)]
pub struct StabilityCertificate {
    pub p: DMatrix<f64>,
    /// `(topology, nu_s, mu_P)` for each distinct topology in the schedule.
    pub measures: Vec<(TopologyId, f64, f64)>,
    pub convex_combination: f64,
    pub passed: bool,
}

fn lookup<'a>(topologies: &'a [Topology], id: TopologyId) -> Result<&'a Topology> {
    topologies
        .iter()
        .find(|t| t.id == id)
        .ok_or_else(|| Error::InvalidInput(format!("schedule references unknown topology {id}")))
}

/// Connected topology with the largest total dwell, used as the reference system.
fn reference_topology<'a>(schedule: &SwitchingSchedule, topologies: &'a [Topology]) -> Result<Option<&'a Topology>> {
    let mut best: Option<(&Topology, f64)> = None;
    for (id, w) in schedule.weights() {
        let t = lookup(topologies, id)?;
        if graph::is_connected(&t.laplacian(), 1e-9)? && best.map_or(true, |(_, bw)| w > bw) {
            best = Some((t, w));
        }
    }
    Ok(best.map(|(t, _)| t))
}

/// Lyapunov matrix for `A^T P + P A = -I`.
pub fn lyapunov_p(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let dim = a.nrows();
    linalg::solve_lyapunov(a, &DMatrix::identity(dim, dim))
}

/// Certifies that the switched consensus error dynamics contract over each period.
///
/// Without `p`, the Lyapunov matrix of the reduced dynamics of the heaviest connected
/// topology is used.
pub fn certify_consensus(
    schedule: &SwitchingSchedule,
    topologies: &[Topology],
    p: Option<&DMatrix<f64>>,
) -> Result<StabilityCertificate> {
    let reference = reference_topology(schedule, topologies)?
        .ok_or_else(|| Error::HypothesisViolation("schedule contains no connected topology".into()))?;
    let sd = graph::spectral_decompose(&reference.laplacian())?;
    let p = match p {
        Some(p) => p.clone(),
        None => lyapunov_p(&reduced_consensus_matrix(&sd, &reference.laplacian()))?,
    };
    let mut measures = Vec::new();
    let mut total = 0.0;
    for (id, w) in schedule.weights() {
        let t = lookup(topologies, id)?;
        let mu = matrix_measure(&reduced_consensus_matrix(&sd, &t.laplacian()), &p)?;
        measures.push((id, w, mu));
        total += w * mu;
    }
    Ok(StabilityCertificate { p, measures, convex_combination: total, passed: total < 0.0 })
}

/// Observer error matrix `[[0, I], [-L - C_hat, -I]]`.
pub fn observer_error_matrix(l: &DMatrix<f64>, c_hat: &DMatrix<f64>) -> DMatrix<f64> {
    system_matrix(&(l + c_hat))
}

/// Certifies the observer error dynamics, with injection gain `c_hat` (`n x n`, nonnegative, nonzero).
pub fn certify_observer(
    schedule: &SwitchingSchedule,
    topologies: &[Topology],
    c_hat: &DMatrix<f64>,
    p: Option<&DMatrix<f64>>,
) -> Result<StabilityCertificate> {
    if c_hat.iter().any(|&c| c < 0.0) {
        return invalid("observer gain has a negative entry");
    }
    if c_hat.iter().all(|&c| c == 0.0) {
        return invalid("observer gain must be nonzero");
    }
    let reference = reference_topology(schedule, topologies)?;
    let p = match (p, reference) {
        (Some(p), _) => p.clone(),
        (None, Some(r)) => lyapunov_p(&observer_error_matrix(&r.laplacian(), c_hat))?,
        (None, None) => {
            // no connected topology: fall back to the first one; the certificate will fail
            let t = lookup(topologies, schedule.entries[0].topology)?;
            let a = observer_error_matrix(&t.laplacian(), c_hat);
            lyapunov_p(&a).unwrap_or_else(|_| DMatrix::identity(a.nrows(), a.nrows()))
        }
    };
    let mut measures = Vec::new();
    let mut total = 0.0;
    for (id, w) in schedule.weights() {
        let t = lookup(topologies, id)?;
        let mu = matrix_measure(&observer_error_matrix(&t.laplacian(), c_hat), &p)?;
        measures.push((id, w, mu));
        total += w * mu;
    }
    let passed = reference.is_some() && total < 0.0;
    Ok(StabilityCertificate { p, measures, convex_combination: total, passed })
}

/// Doubles the dwell of the reference topology until the consensus certificate passes.
/// Returns the adjusted schedule and its certificate, or `None` after `max_doublings`.
pub fn tune_dwell(
    schedule: &SwitchingSchedule,
    topologies: &[Topology],
    max_doublings: usize,
) -> Result<Option<(SwitchingSchedule, StabilityCertificate)>> {
    let reference = reference_topology(schedule, topologies)?
        .ok_or_else(|| Error::HypothesisViolation("schedule contains no connected topology".into()))?
        .id;
    let mut current = schedule.clone();
    for _ in 0..=max_doublings {
        let cert = certify_consensus(&current, topologies, None)?;
        if cert.passed {
            return Ok(Some((current, cert)));
        }
        let entries = current
            .entries
            .iter()
            .map(|e| (e.topology, if e.topology == reference { e.dwell * 2.0 } else { e.dwell }))
            .collect();
        current = SwitchingSchedule::new(entries)?;
    }
    Ok(None)
}

/// True when every eigenvalue has negative real part.
pub fn is_hurwitz(a: &DMatrix<f64>) -> bool {
    linalg::eigenvalues(a).map_or(false, |ev| ev.iter().all(|e| e.re < 0.0))
}
