use std::path::{Path, PathBuf};

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::Scenario;
use crate::attack::{self, AttackPolicy, AttackerModel, PlanOptions, PlantSetup, ZdaPlan};
use crate::dynamics::{consensus_error, target_location, Trajectory};
use crate::error::{Error, Result};
use crate::observability::{defense_check, DefenseReport};
use crate::observer::{initialize_observer, run_observer, Detection, ResidualTrace};
use crate::switching::{certify_consensus, certify_observer, StabilityCertificate};

/// Environment variable that overrides the default output directory.
pub const OUT_DIR_ENV: &str = "ZDALAB_OUT_DIR";

/// Run summary, recomputable from the CSV artifacts alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub samples: usize,
    pub final_time: f64,
    pub target_location: f64,
    pub final_position_spread: f64,
    pub final_max_velocity: f64,
    pub final_max_target_offset: f64,
    pub max_residual: f64,
    pub first_detection: Option<f64>,
}

#[derive(Debug)]
pub struct RunArtifacts {
    pub out_dir: PathBuf,
    pub trajectory_csv: PathBuf,
    pub residual_csv: PathBuf,
    pub summary_json: PathBuf,
    pub report: DefenseReport,
    pub consensus_certificate: std::result::Result<StabilityCertificate, String>,
    pub observer_certificate: std::result::Result<StabilityCertificate, String>,
    pub plan: Option<ZdaPlan>,
    pub detection: Detection,
    pub trajectory: Trajectory,
    pub residuals: ResidualTrace,
    pub summary: Summary,
}

pub fn summarize(tr: &Trajectory, res: &ResidualTrace) -> Result<Summary> {
    let first = tr.states.first().ok_or_else(|| Error::InvalidInput("empty trajectory".into()))?;
    let last = tr.states.last().expect("nonempty");
    let n = first.len() / 2;
    let x0 = first.rows(0, n).into_owned();
    let v0 = first.rows(n, n).into_owned();
    let target = target_location(&x0, &v0);
    let x = last.rows(0, n).into_owned();
    let v = last.rows(n, n).into_owned();
    let (spread, vmax) = consensus_error(&x, &v);
    Ok(Summary {
        n,
        samples: tr.len(),
        final_time: *tr.times.last().expect("nonempty"),
        target_location: target,
        final_position_spread: spread,
        final_max_velocity: vmax,
        final_max_target_offset: x.iter().map(|xi| (xi - target).abs()).fold(0.0, f64::max),
        max_residual: res.max_abs(),
        first_detection: res.first_detection,
    })
}

/// Recomputes the summary from the trajectory and residual CSV files.
pub fn summary_from_csv(trajectory_csv: &Path, residual_csv: &Path) -> Result<Summary> {
    let tr = Trajectory::read_csv(trajectory_csv)?;
    let res = ResidualTrace::read_csv(residual_csv)?;
    summarize(&tr, &res)
}

fn build_plan(sc: &Scenario) -> Result<Option<ZdaPlan>> {
    let spec = match &sc.attack {
        Some(a) => a,
        None => return Ok(None),
    };
    let model = AttackerModel {
        topologies: &sc.topologies,
        cfg: &sc.cfg,
        misbehaving: spec.misbehaving.clone(),
        etas: spec.etas.clone(),
        default_eta: spec.default_eta,
        eta_grid: spec.eta_grid.clone(),
        capability: spec.capability,
    };
    let opts = PlanOptions {
        start: spec.start,
        inference_delay: spec.inference_delay,
        amplitude: spec.amplitude,
        initial: spec.initial.clone(),
    };
    let plan = match spec.policy {
        AttackPolicy::Intermittent => attack::plan_intermittent(&model, &sc.schedule, sc.t0, sc.horizon, &opts)?,
        AttackPolicy::Persistent => attack::plan_persistent(&model, &sc.schedule, sc.t0, sc.horizon, &opts)?,
    };
    plan.validate(&sc.schedule)?;
    Ok(Some(plan))
}

/// Plant setup of a scenario.
pub fn plant_setup(sc: &Scenario) -> PlantSetup<'_> {
    PlantSetup {
        topologies: &sc.topologies,
        schedule: &sc.schedule,
        cfg: &sc.cfg,
        init: sc.init.clone(),
        t0: sc.t0,
        horizon: sc.horizon,
        dt: sc.dt,
    }
}

/// Runs the scenario and writes `trajectory.csv`, `residuals.csv` and `summary.json`
/// into `out_dir`.
pub fn run_experiment(sc: &Scenario, out_dir: &Path) -> Result<RunArtifacts> {
    std::fs::create_dir_all(out_dir)?;
    let set = sc.scheduled_topologies();
    let report = defense_check(&set, &sc.cfg, None)?;
    let consensus_certificate = certify_consensus(&sc.schedule, &sc.topologies, None).map_err(|e| e.to_string());
    let observer_certificate =
        certify_observer(&sc.schedule, &sc.topologies, &sc.cfg.observer_gain(), None).map_err(|e| e.to_string());

    let plan = build_plan(sc)?;
    let setup = plant_setup(sc);
    let trajectory = attack::simulate_plant(&setup, plan.as_ref(), sc.topology_attack.as_ref())?;

    let false_data: Option<DVector<Complex64>> = match (&plan, sc.observer_false_data) {
        (Some(p), true) => Some(p.observer_false_data().map(|v| Complex64::new(v, 0.0))),
        _ => None,
    };
    let mut obs0 = initialize_observer(&sc.init, false_data.as_ref(), sc.cfg.m())?;
    if let Some(mm) = &sc.observer_mismatch {
        let n = sc.cfg.n;
        obs0.q += mm.rows(0, n);
        obs0.w += mm.rows(n, n);
    }
    let (_, residuals) = run_observer(&trajectory, &sc.topologies, &sc.cfg, obs0, sc.dt, sc.threshold)?;
    let detection = match residuals.first_detection {
        Some(t) => Detection::AttackDetected(t),
        None => Detection::Clean,
    };

    let trajectory_csv = out_dir.join("trajectory.csv");
    let residual_csv = out_dir.join("residuals.csv");
    let summary_json = out_dir.join("summary.json");
    trajectory.write_csv(&trajectory_csv)?;
    residuals.write_csv(&residual_csv)?;
    let summary = summarize(&trajectory, &residuals)?;
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Numerical(e.to_string()))?;
    std::fs::write(&summary_json, json)?;

    Ok(RunArtifacts {
        out_dir: out_dir.to_path_buf(),
        trajectory_csv,
        residual_csv,
        summary_json,
        report,
        consensus_certificate,
        observer_certificate,
        plan,
        detection,
        trajectory,
        residuals,
        summary,
    })
}

fn py_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:e}")
    } else if v > 0.0 {
        "float(\"inf\")".into()
    } else {
        "float(\"-inf\")".into()
    }
}

/// Writes a matplotlib script plotting velocities and residuals (with the detection
/// threshold) from the run's CSV files.
pub fn emit_plot_script(trajectory_csv: &Path, residual_csv: &Path, threshold: f64, out: &Path) -> Result<PathBuf> {
    for p in [trajectory_csv, residual_csv] {
        if !p.exists() {
            return Err(Error::InvalidInput(format!("missing CSV artifact {}", p.display())));
        }
    }
    let script = format!(
        r#"import csv
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt


def load(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    cols = {{name: [float(r[k]) for r in body] for k, name in enumerate(header)}}
    return header, cols


th, traj = load({traj:?})
rh, res = load({res:?})
fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(8, 7), sharex=True)
for name in th:
    if name.startswith("v"):
        ax1.plot(traj["t"], traj[name], lw=0.8, label=name)
ax1.set_ylabel("velocity")
ax1.set_title("agent velocities")
for name in rh:
    if name.startswith("r"):
        ax2.plot(res["t"], [abs(v) for v in res[name]], lw=0.8, label=name)
ax2.axhline({th_py}, color="k", ls="--", lw=0.8, label="threshold")
ax2.set_yscale("symlog", linthresh={lin_py})
ax2.set_xlabel("t")
ax2.set_ylabel("|residual|")
ax2.legend(loc="upper left", fontsize="small")
fig.tight_layout()
fig.savefig({png:?}, dpi=150)
"#,
        th_py = py_float(threshold),
        lin_py = py_float(if threshold.is_finite() && threshold > 0.0 { threshold } else { 1e-4 }),
        traj = trajectory_csv.display().to_string(),
        res = residual_csv.display().to_string(),
        png = out.with_extension("png").display().to_string(),
    );
    std::fs::write(out, script)?;
    Ok(out.to_path_buf())
}
