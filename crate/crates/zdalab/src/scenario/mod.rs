//! Scenario configuration, experiment runner, artifact export, and the command line.

pub mod cli;
pub mod reproduce;
mod run;

pub use run::{
    emit_plot_script, run_experiment, summarize, summary_from_csv, RunArtifacts, Summary, OUT_DIR_ENV,
};

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::attack::{AttackPolicy, Capability, TopologyAttack, ZdaCandidate};
use crate::dynamics::{OutputConfig, DEFAULT_DT};
use crate::error::{Error, Result};
use crate::graph::{Edge, Topology, TopologyId};
use crate::observer::DEFAULT_THRESHOLD;
use crate::switching::SwitchingSchedule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub n: usize,
    #[serde(default)]
    pub t0: f64,
    pub horizon: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub seed: u64,
    pub topologies: Vec<TopologyConfig>,
    pub schedule: Vec<ScheduleConfig>,
    pub outputs: OutputsConfig,
    pub initial: InitialConfig,
    #[serde(default)]
    pub observer: Option<ObserverConfig>,
    #[serde(default)]
    pub attack: Option<AttackConfig>,
    #[serde(default)]
    pub topology_attack: Option<TopologyAttackConfig>,
}

fn default_dt() -> f64 {
    DEFAULT_DT
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

fn default_one() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    pub id: TopologyId,
    /// `(i, j, weight)` with 1-based agents.
    pub edges: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub topology: TopologyId,
    pub dwell: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputsConfig {
    /// 1-based monitored agents.
    pub monitored: Vec<usize>,
    /// Per-agent position gains; defaults to zeros.
    #[serde(default)]
    pub c1: Option<Vec<f64>>,
    /// Per-agent velocity gains; defaults to ones.
    #[serde(default)]
    pub c2: Option<Vec<f64>>,
    #[serde(default)]
    pub d: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserverConfig {
    /// Added to the observer's initial state on top of any false data.
    #[serde(default)]
    pub mismatch: Option<InitialConfig>,
    /// Whether the attacker's false data reaches the observer initialization.
    #[serde(default = "default_true")]
    pub false_data: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyConfig {
    Intermittent,
    Persistent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EtaConfig {
    pub topology: TopologyId,
    /// `(re, im)`.
    pub eta: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapabilityConfig {
    #[serde(default = "default_true")]
    pub knows_initial_topology: bool,
    #[serde(default = "default_true")]
    pub learns_period: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    /// 1-based misbehaving agents.
    pub misbehaving: Vec<usize>,
    #[serde(default = "default_policy")]
    pub policy: PolicyConfig,
    /// Default `(re, im)` exponent.
    #[serde(default = "default_eta")]
    pub eta: (f64, f64),
    #[serde(default)]
    pub etas: Vec<EtaConfig>,
    #[serde(default)]
    pub eta_grid: Vec<(f64, f64)>,
    /// Earliest resume time; defaults to `t0`.
    #[serde(default)]
    pub start: Option<f64>,
    #[serde(default)]
    pub inference_delay: f64,
    #[serde(default = "default_one")]
    pub amplitude: f64,
    /// Explicit first-window deviation as `(re, im)` pairs, length `2n`.
    #[serde(default)]
    pub z0: Option<Vec<(f64, f64)>>,
    /// Explicit first-window input direction, length `2n`.
    #[serde(default)]
    pub g: Option<Vec<(f64, f64)>>,
    #[serde(default)]
    pub capability: Option<CapabilityConfig>,
}

fn default_policy() -> PolicyConfig {
    PolicyConfig::Intermittent
}

fn default_eta() -> (f64, f64) {
    (1.0, 0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyAttackConfig {
    pub target: TopologyId,
    pub edges: Vec<(usize, usize, f64)>,
    #[serde(default)]
    pub start: f64,
}

/// Attack settings after validation, with 0-based agents.
#[derive(Debug, Clone)]
pub struct AttackSpec {
    pub misbehaving: Vec<usize>,
    pub policy: AttackPolicy,
    pub default_eta: Complex64,
    pub etas: Vec<(TopologyId, Complex64)>,
    pub eta_grid: Vec<Complex64>,
    pub start: f64,
    pub inference_delay: f64,
    pub amplitude: f64,
    pub initial: Option<ZdaCandidate>,
    pub capability: Capability,
}

/// Validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub topologies: Vec<Topology>,
    pub schedule: SwitchingSchedule,
    pub cfg: OutputConfig,
    pub init: DVector<f64>,
    pub t0: f64,
    pub horizon: f64,
    pub dt: f64,
    pub threshold: f64,
    pub seed: u64,
    pub observer_mismatch: Option<DVector<f64>>,
    pub observer_false_data: bool,
    pub attack: Option<AttackSpec>,
    pub topology_attack: Option<TopologyAttack>,
}

fn cfg_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

fn on_grid(value: f64, dt: f64) -> bool {
    let k = (value / dt).round();
    (k * dt - value).abs() <= 1e-9 * value.abs().max(1.0)
}

fn complex_vec(v: &[(f64, f64)], len: usize, what: &str) -> Result<DVector<Complex64>> {
    if v.len() != len {
        return cfg_err(format!("{what} must have {len} entries, got {}", v.len()));
    }
    Ok(DVector::from_iterator(len, v.iter().map(|&(r, i)| Complex64::new(r, i))))
}

fn agents_zero_based(list: &[usize], n: usize, what: &str) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(list.len());
    for &i in list {
        if i == 0 || i > n {
            return cfg_err(format!("{what} contains agent {i}, outside 1..={n}"));
        }
        out.push(i - 1);
    }
    Ok(out)
}

impl ScenarioConfig {
    /// Parses TOML text; parse errors carry line and column information.
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<Scenario> {
        let n = self.n;
        if n < 2 {
            return cfg_err("n must be at least 2");
        }
        if !(self.dt > 0.0) {
            return cfg_err("dt must be positive");
        }
        if !(self.horizon > self.t0) {
            return cfg_err("horizon must exceed t0");
        }
        if !on_grid(self.horizon - self.t0, self.dt) {
            return cfg_err(format!("horizon {} is not on the dt = {} grid", self.horizon, self.dt));
        }
        let mut topologies = Vec::new();
        for t in &self.topologies {
            if topologies.iter().any(|o: &Topology| o.id == t.id) {
                return cfg_err(format!("duplicate topology id {}", t.id));
            }
            let edges: Vec<Edge> = t.edges.iter().map(|&(i, j, w)| Edge(i, j, w)).collect();
            topologies.push(
                Topology::from_edges(t.id, n, &edges).map_err(|e| Error::Config(format!("topology {}: {e}", t.id)))?,
            );
        }
        if self.schedule.is_empty() {
            return cfg_err("schedule is empty");
        }
        for e in &self.schedule {
            if !topologies.iter().any(|t| t.id == e.topology) {
                return cfg_err(format!("schedule references unknown topology {}", e.topology));
            }
        }
        let schedule = SwitchingSchedule::new(self.schedule.iter().map(|e| (e.topology, e.dwell)).collect())
            .map_err(|e| Error::Config(e.to_string()))?;
        schedule.dwell_steps(self.dt).map_err(|e| Error::Config(e.to_string()))?;

        let monitored = agents_zero_based(&self.outputs.monitored, n, "outputs.monitored")?;
        let m = monitored.len();
        let c1 = self.outputs.c1.clone().unwrap_or_else(|| vec![0.0; m]);
        let c2 = self.outputs.c2.clone().unwrap_or_else(|| vec![1.0; m]);
        let d = self.outputs.d.clone().unwrap_or_else(|| vec![0.0; m]);
        let cfg = OutputConfig::new(n, monitored, c1, c2, d).map_err(|e| Error::Config(format!("outputs: {e}")))?;

        if self.initial.x.len() != n || self.initial.v.len() != n {
            return cfg_err(format!("initial x and v must have {n} entries"));
        }
        let mut init = DVector::zeros(2 * n);
        for i in 0..n {
            init[i] = self.initial.x[i];
            init[n + i] = self.initial.v[i];
        }

        let (observer_mismatch, observer_false_data) = match &self.observer {
            Some(o) => {
                let mm = match &o.mismatch {
                    Some(mm) => {
                        if mm.x.len() != n || mm.v.len() != n {
                            return cfg_err(format!("observer mismatch must have {n} entries per block"));
                        }
                        Some(DVector::from_iterator(2 * n, mm.x.iter().chain(&mm.v).cloned()))
                    }
                    None => None,
                };
                (mm, o.false_data)
            }
            None => (None, true),
        };

        let attack = match &self.attack {
            None => None,
            Some(a) => {
                let misbehaving = agents_zero_based(&a.misbehaving, n, "attack.misbehaving")?;
                if misbehaving.is_empty() {
                    return cfg_err("attack.misbehaving is empty");
                }
                let start = a.start.unwrap_or(self.t0);
                if start < self.t0 || !on_grid(start - self.t0, self.dt) {
                    return cfg_err(format!("attack.start {start} must lie on the dt grid after t0"));
                }
                if a.inference_delay < 0.0 || !on_grid(a.inference_delay, self.dt) {
                    return cfg_err("attack.inference_delay must be a nonnegative multiple of dt");
                }
                for e in &a.etas {
                    if !topologies.iter().any(|t| t.id == e.topology) {
                        return cfg_err(format!("attack.etas references unknown topology {}", e.topology));
                    }
                }
                let initial = match (&a.z0, &a.g) {
                    (Some(z), Some(g)) => Some(ZdaCandidate {
                        eta: Complex64::new(a.eta.0, a.eta.1),
                        z0: complex_vec(z, 2 * n, "attack.z0")?,
                        g: complex_vec(g, 2 * n, "attack.g")?,
                    }),
                    (None, None) => None,
                    _ => return cfg_err("attack.z0 and attack.g must be given together"),
                };
                let cap = a.capability.unwrap_or(CapabilityConfig { knows_initial_topology: true, learns_period: true });
                Some(AttackSpec {
                    misbehaving,
                    policy: match a.policy {
                        PolicyConfig::Intermittent => AttackPolicy::Intermittent,
                        PolicyConfig::Persistent => AttackPolicy::Persistent,
                    },
                    default_eta: Complex64::new(a.eta.0, a.eta.1),
                    etas: a.etas.iter().map(|e| (e.topology, Complex64::new(e.eta.0, e.eta.1))).collect(),
                    eta_grid: a.eta_grid.iter().map(|&(r, i)| Complex64::new(r, i)).collect(),
                    start,
                    inference_delay: a.inference_delay,
                    amplitude: a.amplitude,
                    initial,
                    capability: Capability {
                        knows_initial_topology: cap.knows_initial_topology,
                        learns_period: cap.learns_period,
                    },
                })
            }
        };

        let topology_attack = match &self.topology_attack {
            None => None,
            Some(t) => {
                if !topologies.iter().any(|o| o.id == t.target) {
                    return cfg_err(format!("topology_attack.target {} is unknown", t.target));
                }
                let edges = t.edges.iter().map(|&(i, j, w)| Edge(i, j, w)).collect();
                Some(TopologyAttack::new(t.target, edges, t.start, &cfg).map_err(|e| Error::Config(e.to_string()))?)
            }
        };

        Ok(Scenario {
            name: self.name.clone().unwrap_or_else(|| "scenario".into()),
            topologies,
            schedule,
            cfg,
            init,
            t0: self.t0,
            horizon: self.horizon,
            dt: self.dt,
            threshold: self.threshold,
            seed: self.seed,
            observer_mismatch,
            observer_false_data,
            attack,
            topology_attack,
        })
    }
}

impl Scenario {
    pub fn topology(&self, id: TopologyId) -> Option<&Topology> {
        self.topologies.iter().find(|t| t.id == id)
    }

    /// Topologies appearing in the schedule, in order of first appearance.
    pub fn scheduled_topologies(&self) -> Vec<&Topology> {
        self.schedule.topology_ids().into_iter().filter_map(|id| self.topology(id)).collect()
    }
}
