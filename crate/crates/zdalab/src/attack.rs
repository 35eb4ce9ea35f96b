//! Zero-dynamics attack synthesis, intermittent planning, and topology attacks.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dynamics::{output_matrices, rk4_step, system_matrix, OutputConfig, Trajectory};
use crate::error::{invalid, Error, Result};
use crate::graph::{Edge, Topology, TopologyId};
use crate::linalg::{self, normalize_phase, to_complex, RANK_TOL};
use crate::observability::{unobservable_kernel, Kernel};
use crate::switching::{StepSwitcher, SwitchingSchedule};

/// Relative tolerance for accepting an invariant zero computed by the eigen-solver.
pub const ZERO_TOL: f64 = 1e-7;

/// Default bound on the state norm before a run is declared divergent.
pub const DIVERGENCE_LIMIT: f64 = 1e150;

#[derive(Debug, Clone)]
pub struct ZdaCandidate {
    pub eta: Complex64,
    /// Initial deviation, length `2n`, unit norm.
    pub z0: DVector<Complex64>,
    /// Input direction, length `2n`, zero position block, support inside the misbehaving set.
    pub g: DVector<Complex64>,
}

/// Pencil description of the zero-dynamics problem. Several system matrices may be
/// stacked to ask for a single attack that is valid on all of them at once.
#[derive(Debug, Clone)]
pub struct ZdaProblem {
    pub systems: Vec<DMatrix<f64>>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    /// 0-based misbehaving agents.
    pub misbehaving: Vec<usize>,
    /// Optional orthonormal basis the initial deviation must lie in.
    pub constraint: Option<DMatrix<f64>>,
    /// Values of `eta` tried when the pencil has a kernel for every `eta`.
    pub eta_grid: Vec<Complex64>,
}

pub fn default_eta_grid() -> Vec<Complex64> {
    [(1.0, 0.0), (0.5, 0.0), (0.1, 0.0), (0.08, -2.0), (0.08, 2.0), (-0.5, 0.0), (2.0, 0.0)]
        .iter()
        .map(|&(r, i)| Complex64::new(r, i))
        .collect()
}

impl ZdaProblem {
    pub fn single(topology: &Topology, cfg: &OutputConfig, misbehaving: Vec<usize>) -> Result<Self> {
        let (c, d) = output_matrices(cfg);
        let p = ZdaProblem {
            systems: vec![system_matrix(&topology.laplacian())],
            c,
            d,
            misbehaving,
            constraint: None,
            eta_grid: default_eta_grid(),
        };
        p.check()?;
        Ok(p)
    }

    /// Problem whose initial deviation must stay invisible both with and without the
    /// attack input, i.e. lie in the intersection of the standard and shifted
    /// unobservable kernels. Such an attack can be paused at any instant without
    /// leaving a trace in the output.
    pub fn pause_compatible(topology: &Topology, cfg: &OutputConfig, misbehaving: Vec<usize>) -> Result<Self> {
        let mut p = Self::single(topology, cfg, misbehaving)?;
        let a = &p.systems[0];
        let hidden = unobservable_kernel(a, &p.c, Kernel::Standard).intersect(&unobservable_kernel(a, &p.c, Kernel::Shifted));
        p.constraint = Some(hidden.basis);
        Ok(p)
    }

    fn check(&self) -> Result<()> {
        let dim = self.dim();
        if self.systems.iter().any(|a| a.shape() != (dim, dim)) || self.c.ncols() != dim || self.d.shape() != self.c.shape() {
            return Err(Error::DimensionMismatch("inconsistent pencil blocks".into()));
        }
        if self.misbehaving.is_empty() {
            return invalid("misbehaving set is empty");
        }
        if self.misbehaving.iter().any(|&k| k >= dim / 2) {
            return invalid("misbehaving agent out of range");
        }
        if let Some(v) = &self.constraint {
            if v.nrows() != dim {
                return Err(Error::DimensionMismatch("constraint basis has wrong height".into()));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.systems[0].nrows()
    }

    fn b_k(&self) -> DMatrix<f64> {
        let dim = self.dim();
        let n = dim / 2;
        let mut b = DMatrix::zeros(dim, self.misbehaving.len());
        for (j, &k) in self.misbehaving.iter().enumerate() {
            b[(n + k, j)] = 1.0;
        }
        b
    }

    fn basis(&self) -> DMatrix<f64> {
        self.constraint.clone().unwrap_or_else(|| DMatrix::identity(self.dim(), self.dim()))
    }

    /// Real blocks `(M, N)` with pencil `R(eta) = M - eta N` acting on `[a; u]`,
    /// where the deviation is `z0 = V a` and the input is `g = B_K u`.
    fn pencil_parts(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let dim = self.dim();
        let v = self.basis();
        let k = v.ncols();
        let bk = self.b_k();
        let nk = bk.ncols();
        let m = self.c.nrows();
        let rows = self.systems.len() * dim + m;
        let mut mm = DMatrix::zeros(rows, k + nk);
        let mut nn = DMatrix::zeros(rows, k + nk);
        for (r, a) in self.systems.iter().enumerate() {
            mm.view_mut((r * dim, 0), (dim, k)).copy_from(&(a * &v));
            mm.view_mut((r * dim, k), (dim, nk)).copy_from(&bk);
            nn.view_mut((r * dim, 0), (dim, k)).copy_from(&v);
        }
        let off = self.systems.len() * dim;
        mm.view_mut((off, 0), (m, k)).copy_from(&(&self.c * &v));
        mm.view_mut((off, k), (m, nk)).copy_from(&(&self.d * &bk));
        (mm, nn)
    }

    pub fn pencil(&self, eta: Complex64) -> DMatrix<Complex64> {
        let (mm, nn) = self.pencil_parts();
        to_complex(&mm) - to_complex(&nn) * eta
    }

    fn rel_sigma_min(&self, eta: Complex64) -> f64 {
        let r = self.pencil(eta);
        let (p, q) = r.shape();
        if q > p {
            return 0.0;
        }
        let s = linalg::svd(&r, false, false).singular_values;
        let smax = s.iter().cloned().fold(0.0, f64::max).max(1.0);
        s.iter().cloned().fold(f64::INFINITY, f64::min) / smax
    }

    /// True when the pencil drops column rank for every `eta`.
    pub fn is_singular_for_all_eta(&self) -> bool {
        let (p, q) = {
            let (mm, _) = self.pencil_parts();
            mm.shape()
        };
        if q > p {
            return true;
        }
        [Complex64::new(0.3719, 0.6113), Complex64::new(-0.8271, 1.1337)]
            .iter()
            .all(|&e| self.rel_sigma_min(e) < RANK_TOL)
    }

    /// Eigenvalues of one randomly squared-down pencil, via a real shift-and-invert.
    fn squared_eigenvalues(&self, seed: u64, shifts: &[f64]) -> Result<Vec<Complex64>> {
        let (mm, nn) = self.pencil_parts();
        let (p, q) = mm.shape();
        let (sm, sn) = if p > q {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = DMatrix::from_fn(q, p, |_, _| rng.random_range(-1.0..1.0));
            (&w * &mm, &w * &nn)
        } else {
            (mm, nn)
        };
        for &alpha in shifts {
            let lhs = &sm - &sn * alpha;
            if let Some(inv) = lhs.clone().try_inverse() {
                if inv.iter().all(|v| v.is_finite()) && linalg::spectral_norm(&inv) < 1e10 {
                    let s = inv * &sn;
                    let mus = match linalg::eigenvalues(&s) {
                        Ok(m) => m,
                        Err(_) => continue,
                    };
                    let scale = mus.iter().map(|m| m.norm()).fold(0.0, f64::max);
                    return Ok(mus
                        .iter()
                        .filter(|mu| mu.norm() > 1e-10 * scale.max(1e-300))
                        .map(|mu| Complex64::new(alpha, 0.0) + mu.inv())
                        .collect());
                }
            }
        }
        Err(Error::Numerical("no regular shift for the zero pencil".into()))
    }

    /// Finite invariant zeros of a pencil with full normal column rank.
    ///
    /// Two independent square-downs are solved; values not reproduced by both are
    /// artefacts of the squaring or of infinite eigenvalues and are dropped.
    pub fn invariant_zeros(&self) -> Result<Vec<Complex64>> {
        let first = self.squared_eigenvalues(0x5eed, &[0.5731, -1.2917, 2.1143, 0.0917])?;
        let second = self.squared_eigenvalues(0xbeef, &[-0.3877, 1.6061, -2.4423, 0.2213])?;
        let mut zeros: Vec<Complex64> = Vec::new();
        for eta in first {
            let confirmed = second.iter().any(|e| (e - eta).norm() <= 1e-6 * (1.0 + eta.norm()));
            if confirmed
                && self.rel_sigma_min(eta) <= ZERO_TOL
                && !zeros.iter().any(|z| (z - eta).norm() <= 1e-7 * (1.0 + eta.norm()))
            {
                zeros.push(eta);
            }
        }
        zeros.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
        Ok(zeros)
    }

    /// Kernel of `R(eta)`, returned as `(z-part, g-part, u-part)` with matching columns.
    pub fn kernel(&self, eta: Complex64, tol: f64) -> (DMatrix<Complex64>, DMatrix<Complex64>, DMatrix<Complex64>) {
        let r = self.pencil(eta);
        let w = linalg::null_space(&r, tol);
        let v = to_complex(&self.basis());
        let k = v.ncols();
        let nk = self.misbehaving.len();
        let a = w.rows(0, k).into_owned();
        let u = w.rows(k, nk).into_owned();
        let z = &v * &a;
        let g = to_complex(&self.b_k()) * &u;
        (z, g, u)
    }

    /// Nontrivial (`g != 0`) kernel directions at a fixed `eta`.
    pub fn candidates_at(&self, eta: Complex64, tol: f64) -> Vec<ZdaCandidate> {
        let (z, g, u) = self.kernel(eta, tol);
        if z.ncols() == 0 {
            return Vec::new();
        }
        let svd = linalg::svd(&u, false, true);
        let v_t = match svd.v_t {
            Some(v) => v,
            None => return Vec::new(),
        };
        let mut out = Vec::new();
        for (i, &s) in svd.singular_values.iter().enumerate() {
            if s <= 1e-9 {
                continue;
            }
            let coef = v_t.row(i).transpose().map(|c| c.conj());
            let z0 = &z * &coef;
            let gg = &g * &coef;
            let nz = z0.norm();
            if nz == 0.0 {
                continue;
            }
            let z0n = normalize_phase(&z0, 1e-10);
            // same phase and scaling applied to g
            let factor = if z0.norm() > 0.0 {
                let idx = z0n.iter().position(|c| c.norm() > 1e-10).unwrap_or(0);
                z0n[idx] / z0[idx]
            } else {
                Complex64::new(1.0, 0.0)
            };
            out.push(ZdaCandidate { eta, z0: z0n, g: gg * factor });
        }
        out
    }
}

/// All nontrivial zero-dynamics attacks of the problem, one per kernel direction.
pub fn synthesize(problem: &ZdaProblem) -> Result<Vec<ZdaCandidate>> {
    problem.check()?;
    let mut out = Vec::new();
    if problem.is_singular_for_all_eta() {
        for &eta in &problem.eta_grid {
            out.extend(problem.candidates_at(eta, RANK_TOL));
        }
    } else {
        for eta in problem.invariant_zeros()? {
            out.extend(problem.candidates_at(eta, ZERO_TOL));
        }
    }
    Ok(out)
}

/// Attacks on a single topology with misbehaving agents `misbehaving` (0-based).
pub fn synthesize_zda(
    topology: &Topology,
    cfg: &OutputConfig,
    misbehaving: &[usize],
    eta_grid: Option<Vec<Complex64>>,
) -> Result<Vec<ZdaCandidate>> {
    let mut p = ZdaProblem::single(topology, cfg, misbehaving.to_vec())?;
    if let Some(g) = eta_grid {
        p.eta_grid = g;
    }
    synthesize(&p)
}

/// `max(||(eta I - A) z0 - g||, ||C z0 + D g||)`.
pub fn pencil_residual(a: &DMatrix<f64>, c: &DMatrix<f64>, d: &DMatrix<f64>, cand: &ZdaCandidate) -> f64 {
    let dim = a.nrows();
    let lhs = (DMatrix::<Complex64>::identity(dim, dim) * cand.eta - to_complex(a)) * &cand.z0 - &cand.g;
    let out = to_complex(c) * &cand.z0 + to_complex(d) * &cand.g;
    lhs.norm().max(out.norm())
}

#[derive(Debug, Clone)]
pub struct AttackWindow {
    pub topology: TopologyId,
    /// Resume instant `xi_k`.
    pub resume: f64,
    /// Pause instant `zeta_k` (exclusive).
    pub pause: f64,
    pub eta: Complex64,
    /// Complex deviation at `resume`; its real part is the physical deviation.
    pub z: DVector<Complex64>,
    pub g: DVector<Complex64>,
}

impl AttackWindow {
    fn scale(&self, t: f64) -> Complex64 {
        (self.eta * (t - self.resume)).exp()
    }

    pub fn input(&self, t: f64) -> DVector<f64> {
        let s = self.scale(t);
        self.g.map(|c| (c * s).re)
    }

    pub fn deviation(&self, t: f64) -> DVector<f64> {
        let s = self.scale(t);
        self.z.map(|c| (c * s).re)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackPolicy {
    /// Pause at every switch and resume with a plan fitted to the new topology.
    Intermittent,
    /// Keep injecting through switches.
    Persistent,
}

#[derive(Debug, Clone)]
pub struct ZdaPlan {
    pub n: usize,
    pub misbehaving: Vec<usize>,
    /// Output feed-through used for the output injection, `m x 2n`.
    pub d: DMatrix<f64>,
    /// `eta` used on each targeted topology.
    pub etas: Vec<(TopologyId, Complex64)>,
    pub windows: Vec<AttackWindow>,
    pub policy: AttackPolicy,
    pub t0: f64,
    pub horizon: f64,
    /// Physical deviation at `t0`.
    pub initial_deviation: DVector<f64>,
}

impl ZdaPlan {
    pub fn z0(&self) -> Option<&DVector<Complex64>> {
        self.windows.first().map(|w| &w.z)
    }

    pub fn g(&self) -> Option<&DVector<Complex64>> {
        self.windows.first().map(|w| &w.g)
    }

    /// Value to add to the observer's initial condition so it tracks the attacked plant
    /// without a residual.
    pub fn observer_false_data(&self) -> DVector<f64> {
        -&self.initial_deviation
    }

    /// Topology ids the attack is active on.
    pub fn targeted(&self) -> Vec<TopologyId> {
        let mut ids: Vec<TopologyId> = self.windows.iter().map(|w| w.topology).collect();
        ids.sort();
        ids.dedup();
        ids
    }

    /// Structural checks: input support, zero position block, and for intermittent
    /// plans, windows contained in dwell windows of the schedule.
    pub fn validate(&self, schedule: &SwitchingSchedule) -> Result<()> {
        let n = self.n;
        for w in &self.windows {
            if !(w.resume < w.pause) {
                return invalid(format!("empty attack interval [{}, {})", w.resume, w.pause));
            }
            for i in 0..2 * n {
                let inside = i >= n && self.misbehaving.contains(&(i - n));
                if !inside && w.g[i].norm() > 1e-12 * w.g.norm().max(1.0) {
                    return invalid("attack input outside the misbehaving velocity channels");
                }
            }
        }
        if self.policy == AttackPolicy::Intermittent {
            let dwells = schedule.windows(self.t0, self.horizon);
            for w in &self.windows {
                let ok = dwells
                    .iter()
                    .any(|d| d.start - 1e-9 <= w.resume && w.pause <= d.end + 1e-9 && d.topology == w.topology);
                if !ok {
                    return invalid(format!("attack interval [{}, {}) crosses a switching instant", w.resume, w.pause));
                }
            }
        }
        Ok(())
    }

    /// Window whose `[resume, pause)` contains `anchor`.
    pub fn active_window(&self, anchor: f64) -> Option<&AttackWindow> {
        self.windows.iter().find(|w| w.resume <= anchor && anchor < w.pause)
    }

    /// Input (`2n`) and output injection (`m`) at time `t`, with the window chosen
    /// by `anchor` so that a whole integration step uses one branch.
    pub fn injection(&self, t: f64, anchor: f64) -> (DVector<f64>, DVector<f64>) {
        let dim = 2 * self.n;
        if let Some(w) = self.active_window(anchor) {
            let u = w.input(t);
            let y = &self.d * &u;
            return (u, y);
        }
        // paused: no input, output injection held at its value right before the pause
        let last = self.windows.iter().filter(|w| w.pause <= anchor).max_by(|a, b| a.pause.total_cmp(&b.pause));
        let y = match last {
            Some(w) => &self.d * w.input(w.pause),
            None => DVector::zeros(self.d.nrows()),
        };
        (DVector::zeros(dim), y)
    }
}

/// `(input, output injection)` at time `t`.
pub fn attack_signal(plan: &ZdaPlan, t: f64) -> (DVector<f64>, DVector<f64>) {
    plan.injection(t, t)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Capability {
    /// Knows the first topology, so the first resume needs no inference time.
    pub knows_initial_topology: bool,
    /// After recording one full period, resumes synchronously with every switch.
    pub learns_period: bool,
}

impl Default for Capability {
    fn default() -> Self {
        Capability { knows_initial_topology: true, learns_period: true }
    }
}

/// What the attacker knows about the network.
#[derive(Debug, Clone)]
pub struct AttackerModel<'a> {
    pub topologies: &'a [Topology],
    pub cfg: &'a OutputConfig,
    pub misbehaving: Vec<usize>,
    pub etas: Vec<(TopologyId, Complex64)>,
    pub default_eta: Complex64,
    pub eta_grid: Vec<Complex64>,
    pub capability: Capability,
}

#[derive(Debug, Clone)]
pub struct PlanOptions {
    /// Earliest resume time.
    pub start: f64,
    pub inference_delay: f64,
    /// Scale applied to a freshly chosen unit-norm candidate.
    pub amplitude: f64,
    /// Explicit first-window attack instead of a synthesized one.
    pub initial: Option<ZdaCandidate>,
}

impl<'a> AttackerModel<'a> {
    fn topology(&self, id: TopologyId) -> Result<&'a Topology> {
        self.topologies
            .iter()
            .find(|t| t.id == id)
            .ok_or_else(|| Error::InvalidInput(format!("unknown topology {id}")))
    }

    pub fn eta_for(&self, id: TopologyId) -> Complex64 {
        self.etas.iter().find(|(t, _)| *t == id).map(|(_, e)| *e).unwrap_or(self.default_eta)
    }

    fn problem(&self, id: TopologyId) -> Result<ZdaProblem> {
        let mut p = ZdaProblem::single(self.topology(id)?, self.cfg, self.misbehaving.clone())?;
        let mut grid = vec![self.eta_for(id)];
        grid.extend(self.eta_grid.iter().cloned());
        p.eta_grid = grid;
        Ok(p)
    }

    fn system(&self, id: TopologyId) -> Result<DMatrix<f64>> {
        Ok(system_matrix(&self.topology(id)?.laplacian()))
    }

    /// Fresh attack for topology `id`, preferring the requested `eta` and a real part
    /// that stays unobservable while the attack has not started yet.
    fn fresh_candidate(&self, id: TopologyId, hidden_before: bool) -> Result<ZdaCandidate> {
        let p = self.problem(id)?;
        let want = self.eta_for(id);
        let mut cands = synthesize(&p)?;
        if cands.is_empty() {
            return Err(Error::HypothesisViolation(format!("no zero-dynamics attack exists on topology {id}")));
        }
        cands.sort_by(|a, b| (a.eta - want).norm().total_cmp(&(b.eta - want).norm()));
        if hidden_before {
            let n0 = unobservable_kernel(&p.systems[0], &p.c, Kernel::Standard);
            if let Some(c) = cands.iter().find(|c| n0.contains(&c.z0.map(|v| v.re), 1e-8)) {
                return Ok(c.clone());
            }
        }
        Ok(cands[0].clone())
    }

    /// Window plan on topology `id` whose real part matches the current deviation `d`.
    fn fit(&self, id: TopologyId, d: &DVector<f64>) -> Result<Option<(Complex64, DVector<Complex64>, DVector<Complex64>)>> {
        let p = self.problem(id)?;
        let dn = d.norm();
        for &eta in &p.eta_grid {
            let (z, g, _) = p.kernel(eta, RANK_TOL);
            let k = z.ncols();
            if k == 0 {
                continue;
            }
            let dim = z.nrows();
            let mut m = DMatrix::<f64>::zeros(dim, 2 * k);
            for i in 0..dim {
                for j in 0..k {
                    m[(i, j)] = z[(i, j)].re;
                    m[(i, k + j)] = -z[(i, j)].im;
                }
            }
            let svd = linalg::svd(&m, true, true);
            let sol = match svd.solve(d, 1e-12) {
                Ok(s) => s,
                Err(_) => continue,
            };
            if (&m * &sol - d).norm() <= 1e-8 * dn.max(1e-300) {
                let a = DVector::from_iterator(k, (0..k).map(|j| Complex64::new(sol[j], sol[k + j])));
                return Ok(Some((eta, &z * &a, &g * &a)));
            }
        }
        Ok(None)
    }
}

fn evolve(a: &DMatrix<f64>, z: &DVector<f64>, h: f64) -> DVector<f64> {
    if h == 0.0 {
        return z.clone();
    }
    (a * h).exp() * z
}

/// Deviation at `t0` that free evolution through the schedule maps to `dev` at `xi`.
fn backward_deviation(
    model: &AttackerModel,
    schedule: &SwitchingSchedule,
    t0: f64,
    xi: f64,
    dev: &DVector<f64>,
) -> Result<DVector<f64>> {
    let mut z = dev.clone();
    let wins = schedule.windows(t0, xi + 1e-12);
    for w in wins.iter().rev() {
        let lo = w.start.max(t0);
        let hi = w.end.min(xi);
        if hi > lo {
            z = evolve(&model.system(w.topology)?, &z, -(hi - lo));
        }
    }
    Ok(z)
}

/// Intermittent plan: on each dwell window resume at `t_k` (or `t_k + delay` while the
/// upcoming topology is not yet known) and pause right before the next switch.
/// Windows where no attack matches the current deviation are skipped.
pub fn plan_intermittent(
    model: &AttackerModel,
    schedule: &SwitchingSchedule,
    t0: f64,
    horizon: f64,
    opts: &PlanOptions,
) -> Result<ZdaPlan> {
    let n = model.cfg.n;
    let nentries = schedule.entries.len();
    let mut windows: Vec<AttackWindow> = Vec::new();
    // physical deviation and the time it refers to, once the attack has started
    let mut state: Option<(DVector<f64>, f64)> = None;
    let mut initial_deviation = DVector::zeros(2 * n);
    for dw in schedule.windows(t0, horizon) {
        let known = (dw.index == 0 && model.capability.knows_initial_topology)
            || (model.capability.learns_period && dw.index >= nentries);
        let xi = if known { dw.start } else { dw.start + opts.inference_delay }.max(opts.start);
        let zeta = dw.end.min(horizon);
        if xi >= zeta - 1e-12 {
            continue;
        }
        match &state {
            None => {
                let mut cand = match &opts.initial {
                    Some(c) => c.clone(),
                    None => model.fresh_candidate(dw.topology, xi > t0)?,
                };
                if opts.initial.is_none() {
                    cand.z0 *= Complex64::new(opts.amplitude, 0.0);
                    cand.g *= Complex64::new(opts.amplitude, 0.0);
                }
                initial_deviation = backward_deviation(model, schedule, t0, xi, &cand.z0.map(|c| c.re))?;
                let w = AttackWindow { topology: dw.topology, resume: xi, pause: zeta, eta: cand.eta, z: cand.z0, g: cand.g };
                state = Some((w.deviation(zeta), zeta));
                windows.push(w);
            }
            Some((dev, t_dev)) => {
                // free evolution from the last pause up to this resume
                let mut z = dev.clone();
                let mut t = *t_dev;
                for seg in schedule.windows(t0, xi + 1e-12) {
                    let lo = seg.start.max(t);
                    let hi = seg.end.min(xi);
                    if hi > lo {
                        z = evolve(&model.system(seg.topology)?, &z, hi - lo);
                        t = hi;
                    }
                }
                match model.fit(dw.topology, &z)? {
                    Some((eta, zc, g)) => {
                        let w = AttackWindow { topology: dw.topology, resume: xi, pause: zeta, eta, z: zc, g };
                        state = Some((w.deviation(zeta), zeta));
                        windows.push(w);
                    }
                    None => state = Some((z, xi)),
                }
            }
        }
    }
    let etas = windows
        .iter()
        .fold(Vec::<(TopologyId, Complex64)>::new(), |mut acc, w| {
            if !acc.iter().any(|(t, _)| *t == w.topology) {
                acc.push((w.topology, w.eta));
            }
            acc
        });
    let (_, d) = output_matrices(model.cfg);
    Ok(ZdaPlan {
        n,
        misbehaving: model.misbehaving.clone(),
        d,
        etas,
        windows,
        policy: AttackPolicy::Intermittent,
        t0,
        horizon,
        initial_deviation,
    })
}

/// Single uninterrupted attack from `opts.start` to the horizon, built for the topology
/// active at the start and never updated.
pub fn plan_persistent(
    model: &AttackerModel,
    schedule: &SwitchingSchedule,
    t0: f64,
    horizon: f64,
    opts: &PlanOptions,
) -> Result<ZdaPlan> {
    let n = model.cfg.n;
    let xi = opts.start.max(t0);
    let id = crate::switching::active_topology(schedule, t0, xi);
    let cand = match &opts.initial {
        Some(c) => c.clone(),
        None => {
            let mut c = model.fresh_candidate(id, xi > t0)?;
            c.z0 *= Complex64::new(opts.amplitude, 0.0);
            c.g *= Complex64::new(opts.amplitude, 0.0);
            c
        }
    };
    let initial_deviation = backward_deviation(model, schedule, t0, xi, &cand.z0.map(|c| c.re))?;
    let (_, d) = output_matrices(model.cfg);
    Ok(ZdaPlan {
        n,
        misbehaving: model.misbehaving.clone(),
        d,
        etas: vec![(id, cand.eta)],
        windows: vec![AttackWindow { topology: id, resume: xi, pause: f64::INFINITY, eta: cand.eta, z: cand.z0, g: cand.g }],
        policy: AttackPolicy::Persistent,
        t0,
        horizon,
        initial_deviation,
    })
}

/// Modification of the links among compromised monitored agents, applied on every
/// dwell window of `target` from `start` on.
#[derive(Debug, Clone, PartialEq)]
pub struct TopologyAttack {
    pub target: TopologyId,
    /// New weights, 1-based agents.
    pub edges: Vec<Edge>,
    pub start: f64,
}

impl TopologyAttack {
    /// Checks that every modified link joins two monitored agents.
    pub fn new(target: TopologyId, edges: Vec<Edge>, start: f64, cfg: &OutputConfig) -> Result<Self> {
        for &Edge(i, j, w) in &edges {
            if i == 0 || j == 0 || i > cfg.n || j > cfg.n || i == j {
                return invalid(format!("invalid attacked link ({i}, {j})"));
            }
            if !cfg.is_monitored(i - 1) || !cfg.is_monitored(j - 1) {
                return invalid(format!("attacked link ({i}, {j}) leaves the monitored set"));
            }
            if w < 0.0 || !w.is_finite() {
                return invalid(format!("negative weight {w} on attacked link ({i}, {j})"));
            }
        }
        Ok(TopologyAttack { target, edges, start })
    }

    /// Agents touched by the attack, 0-based.
    pub fn compromised_agents(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self.edges.iter().flat_map(|e| [e.0 - 1, e.1 - 1]).collect();
        out.sort();
        out.dedup();
        out
    }
}

pub fn apply_topology_attack(t: &Topology, atk: &TopologyAttack) -> Result<Topology> {
    let mut a = t.adjacency.clone();
    for &Edge(i, j, w) in &atk.edges {
        if w < 0.0 || !w.is_finite() {
            return invalid(format!("negative weight {w} on attacked link ({i}, {j})"));
        }
        if i == 0 || j == 0 || i > t.n || j > t.n {
            return invalid(format!("attacked link ({i}, {j}) out of range"));
        }
        a[(i - 1, j - 1)] = w;
        a[(j - 1, i - 1)] = w;
    }
    Topology::new(t.id, a)
}

/// Whether a topology attack leaves the monitored outputs unchanged for the given
/// clean states (columns `[x; v]`), by testing `C2 dL L^k x = 0` and `C2 dL L^k v = 0`
/// for `k = 0..=depth`. With a basis of a subspace in place of states the test is
/// state independent.
pub fn cooperative_feasible(
    atk: &TopologyAttack,
    base: &Topology,
    cfg: &OutputConfig,
    states: &DMatrix<f64>,
    depth: Option<usize>,
) -> Result<bool> {
    let n = base.n;
    let depth = depth.unwrap_or(2 * n);
    if depth < 1 {
        return invalid("Cayley-Hamilton depth must be at least 1");
    }
    if states.nrows() != 2 * n {
        return Err(Error::DimensionMismatch("states must have 2n rows".into()));
    }
    let l = base.laplacian();
    let dl = apply_topology_attack(base, atk)?.laplacian() - &l;
    let mut c2 = DMatrix::zeros(cfg.m(), n);
    for (k, &i) in cfg.monitored.iter().enumerate() {
        c2[(k, i)] = cfg.c2[k];
    }
    let scale = linalg::spectral_norm(&dl).max(1e-300);
    let lnorm = linalg::spectral_norm(&l).max(1.0);
    for col in 0..states.ncols() {
        for part in [states.column(col).rows(0, n).into_owned(), states.column(col).rows(n, n).into_owned()] {
            let mut w = part;
            let base_norm = w.norm();
            for k in 0..=depth {
                let r = &c2 * &dl * &w;
                if r.norm() > 1e-9 * scale * lnorm.powi(k as i32) * base_norm.max(1e-300) && r.norm() > 1e-14 {
                    return Ok(false);
                }
                w = &l * w;
            }
        }
    }
    Ok(true)
}

/// Plant run setup shared by the stealth check and the experiment runner.
#[derive(Debug, Clone)]
pub struct PlantSetup<'a> {
    pub topologies: &'a [Topology],
    pub schedule: &'a SwitchingSchedule,
    pub cfg: &'a OutputConfig,
    /// Stacked initial state `[x; v]`.
    pub init: DVector<f64>,
    pub t0: f64,
    pub horizon: f64,
    pub dt: f64,
}

impl PlantSetup<'_> {
    pub fn steps(&self) -> usize {
        ((self.horizon - self.t0) / self.dt).round() as usize
    }
}

/// Simulates the plant, optionally under a zero-dynamics plan and a topology attack.
/// Samples are taken at every grid point, the output including the output injection.
pub fn simulate_plant(setup: &PlantSetup, plan: Option<&ZdaPlan>, topo: Option<&TopologyAttack>) -> Result<Trajectory> {
    let n = setup.cfg.n;
    if setup.init.len() != 2 * n {
        return Err(Error::DimensionMismatch("initial state must have length 2n".into()));
    }
    let switcher = StepSwitcher::new(setup.schedule, setup.dt)?;
    let mut nominal: HashMap<TopologyId, DMatrix<f64>> = HashMap::new();
    let mut corrupted: HashMap<TopologyId, DMatrix<f64>> = HashMap::new();
    for t in setup.topologies {
        nominal.insert(t.id, system_matrix(&t.laplacian()));
        if let Some(atk) = topo {
            if atk.target == t.id {
                corrupted.insert(t.id, system_matrix(&apply_topology_attack(t, atk)?.laplacian()));
            }
        }
    }
    for e in &setup.schedule.entries {
        if !nominal.contains_key(&e.topology) {
            return invalid(format!("schedule references unknown topology {}", e.topology));
        }
    }
    let (c, _) = output_matrices(setup.cfg);
    let steps = setup.steps();
    let dim = 2 * n;
    let mut tr = Trajectory::default();
    tr.times.reserve(steps + 1);
    let mut z = setup.init.clone();
    let zero_in = DVector::zeros(dim);
    let zero_out = DVector::zeros(setup.cfg.m());
    for k in 0..=steps {
        let t = setup.t0 + k as f64 * setup.dt;
        let (_, id) = switcher.at(k);
        let (_, y_inj) = match plan {
            Some(p) => p.injection(t, t),
            None => (zero_in.clone(), zero_out.clone()),
        };
        tr.times.push(t);
        tr.outputs.push(&c * &z + y_inj);
        tr.states.push(z.clone());
        tr.active_topology.push(id);
        if k == steps {
            break;
        }
        let use_corrupt = topo.map_or(false, |a| a.target == id && t >= a.start - 1e-12);
        let a = if use_corrupt { &corrupted[&id] } else { &nominal[&id] };
        z = match plan {
            Some(p) => rk4_step(a, &z, t, setup.dt, &|s| p.injection(s, t).0),
            None => rk4_step(a, &z, t, setup.dt, &|_| zero_in.clone()),
        };
        if z.iter().any(|v| !v.is_finite()) || z.amax() > DIVERGENCE_LIMIT {
            return Err(Error::Divergence { time: t + setup.dt });
        }
    }
    Ok(tr)
}

/// Compares the attacked plant with the unattacked plant started from `init` minus the
/// attack's initial deviation. Returns `(stealthy, max output gap)`.
pub fn verify_stealthy(
    setup: &PlantSetup,
    plan: Option<&ZdaPlan>,
    topo: Option<&TopologyAttack>,
    tol: f64,
) -> Result<(bool, f64)> {
    let attacked = simulate_plant(setup, plan, topo)?;
    let mut clean_setup = setup.clone();
    if let Some(p) = plan {
        clean_setup.init = &setup.init - &p.initial_deviation;
    }
    let clean = simulate_plant(&clean_setup, None, None)?;
    let gap = attacked
        .outputs
        .iter()
        .zip(&clean.outputs)
        .map(|(a, b)| (a - b).amax())
        .fold(0.0, f64::max);
    Ok((gap <= tol, gap))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p3() -> Topology {
        Topology::from_edges(1, 3, &[Edge(1, 2, 1.0), Edge(2, 3, 1.0)]).unwrap()
    }

    fn proportional(a: &DVector<Complex64>, b: &DVector<Complex64>) -> bool {
        let idx = b.iter().position(|c| c.norm() > 1e-12).unwrap();
        let s = a[idx] / b[idx];
        (a - b * s).norm() < 1e-9 * a.norm()
    }

    #[test]
    fn p3_middle_monitored_example() {
        let cfg = OutputConfig::velocity(3, vec![1]).unwrap();
        let c = synthesize_zda(&p3(), &cfg, &[0, 2], Some(vec![Complex64::new(1.0, 0.0)])).unwrap();
        assert_eq!(c.len(), 1);
        let z = DVector::from_vec(vec![1.0, 0.0, -1.0, 1.0, 0.0, -1.0]).map(|v| Complex64::new(v, 0.0));
        assert!(proportional(&c[0].z0, &z));
        // g velocity block is 3 times the position pattern, with the same scale as z0
        let s = c[0].z0[0];
        let gv = DVector::from_vec(vec![0.0, 0.0, 0.0, 3.0, 0.0, -3.0]).map(|v| Complex64::new(v, 0.0));
        assert!((&c[0].g - gv * s).norm() < 1e-9);
        let a = system_matrix(&p3().laplacian());
        let (cc, dd) = output_matrices(&cfg);
        assert!(pencil_residual(&a, &cc, &dd, &c[0]) < 1e-9);
    }

    #[test]
    fn k2_has_no_attack() {
        let k2 = Topology::from_edges(1, 2, &[Edge(1, 2, 1.0)]).unwrap();
        let cfg = OutputConfig::velocity(2, vec![0]).unwrap();
        let p = ZdaProblem::single(&k2, &cfg, vec![1]).unwrap();
        assert!(!p.is_singular_for_all_eta());
        assert!(synthesize(&p).unwrap().is_empty());
    }

    #[test]
    fn invariant_zeros_are_found() {
        // P3 observed at agent 1, attacker at agent 2: zeros solve eta^2 + eta + 1 = 0
        let cfg = OutputConfig::velocity(3, vec![0]).unwrap();
        let p = ZdaProblem::single(&p3(), &cfg, vec![1]).unwrap();
        let zeros = p.invariant_zeros().unwrap();
        let c = synthesize(&p).unwrap();
        assert!(!c.is_empty());
        for cand in &c {
            let e = cand.eta;
            assert!((e * e + e + 1.0).norm() < 1e-8 || e.norm() < 1e-8, "unexpected zero {e}");
        }
        assert!(zeros.iter().any(|e| (e.im - 3f64.sqrt() / 2.0).abs() < 1e-8));
    }

    #[test]
    fn examples_signal_values() {
        let eta = Complex64::new(0.08, -2.0);
        let g4 = Complex64::new(2.9136, 2.32);
        let mut g = DVector::zeros(6);
        g[3] = g4;
        g[4] = -g4;
        let w = AttackWindow { topology: 1, resume: 0.2, pause: 3.0, eta, z: DVector::zeros(6), g };
        let u = w.input(0.2);
        assert!((u[3] - 2.9136).abs() < 1e-12 && (u[4] + 2.9136).abs() < 1e-12);
        let u = w.input(1.2);
        let want = (g4 * eta.exp()).re;
        assert!((u[3] - want).abs() < 1e-12);
    }

    #[test]
    fn topology_attack_rules() {
        let cfg = OutputConfig::velocity(3, vec![0, 1]).unwrap();
        assert!(TopologyAttack::new(1, vec![Edge(1, 2, 0.5)], 0.0, &cfg).is_ok());
        assert!(TopologyAttack::new(1, vec![Edge(1, 3, 0.5)], 0.0, &cfg).is_err());
        assert!(TopologyAttack::new(1, vec![Edge(1, 2, -0.5)], 0.0, &cfg).is_err());
        let atk = TopologyAttack { target: 1, edges: vec![Edge(1, 2, -1.0)], start: 0.0 };
        assert!(apply_topology_attack(&p3(), &atk).is_err());
    }

    #[test]
    fn cooperative_depth_must_be_positive() {
        let cfg = OutputConfig::velocity(3, vec![0, 1]).unwrap();
        let atk = TopologyAttack::new(1, vec![Edge(1, 2, 2.0)], 0.0, &cfg).unwrap();
        let s = DMatrix::from_element(6, 1, 1.0);
        assert!(cooperative_feasible(&atk, &p3(), &cfg, &s, Some(0)).is_err());
        // consensus states are never disturbed by a change of weights
        assert!(cooperative_feasible(&atk, &p3(), &cfg, &s, None).unwrap());
        let mut s2 = s.clone();
        s2[(0, 0)] = 2.0;
        assert!(!cooperative_feasible(&atk, &p3(), &cfg, &s2, None).unwrap());
    }
}
