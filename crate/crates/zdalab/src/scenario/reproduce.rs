//! Built-in demonstration scenarios on 16-agent analog networks.
//!
//! The original experiments publish neither their graphs nor every constant, so the
//! topologies here are stand-ins built to have the structural properties each
//! experiment relies on. They are labelled as analogs in their names.

use super::{
    AttackConfig, CapabilityConfig, InitialConfig, OutputsConfig, PolicyConfig, ScenarioConfig, ScheduleConfig,
    TopologyAttackConfig, TopologyConfig,
};
use crate::error::{Error, Result};

pub const FIGURES: [&str; 4] = ["fig2", "fig3", "fig5", "fig6"];

fn unit(edges: &[(usize, usize)]) -> Vec<(usize, usize, f64)> {
    edges.iter().map(|&(i, j)| (i, j, 1.0)).collect()
}

fn with(base: &[(usize, usize)], extra: &[(usize, usize)]) -> Vec<(usize, usize, f64)> {
    let mut all = base.to_vec();
    all.extend_from_slice(extra);
    unit(&all)
}

/// Sixteen agents on a ring with chords; agents 4, 5 hang off agent 3 and 12, 13 off
/// agent 11, so both pairs are structurally identical.
const RING_WITH_TWINS: [(usize, usize); 18] = [
    (1, 2),
    (2, 3),
    (3, 4),
    (3, 5),
    (3, 6),
    (6, 7),
    (7, 8),
    (8, 9),
    (9, 10),
    (10, 11),
    (11, 12),
    (11, 13),
    (11, 14),
    (14, 15),
    (15, 16),
    (16, 1),
    (2, 9),
    (6, 14),
];

/// Agents 2 and 3 share the neighbours 1 and 4.
const TWIN_MONITORS: [(usize, usize); 20] = [
    (1, 2),
    (1, 3),
    (2, 4),
    (3, 4),
    (4, 5),
    (5, 6),
    (6, 7),
    (7, 8),
    (8, 9),
    (9, 10),
    (10, 11),
    (11, 12),
    (12, 13),
    (13, 14),
    (14, 15),
    (15, 16),
    (16, 1),
    (5, 12),
    (7, 15),
    (1, 9),
];

/// Irregular network without structural symmetry among agents 1, 2, 3.
const IRREGULAR: [(usize, usize); 21] = [
    (1, 2),
    (1, 4),
    (2, 5),
    (3, 5),
    (3, 6),
    (4, 7),
    (5, 8),
    (6, 9),
    (7, 10),
    (8, 11),
    (9, 12),
    (10, 13),
    (11, 14),
    (12, 15),
    (13, 16),
    (14, 16),
    (15, 16),
    (2, 10),
    (6, 13),
    (4, 11),
    (1, 14),
];

fn split_init(n: usize) -> InitialConfig {
    let half = n / 2;
    InitialConfig {
        x: (0..n).map(|i| if i < half { 2.0 } else { 4.0 }).collect(),
        v: (0..n).map(|i| if i < half { 6.0 } else { 8.0 }).collect(),
    }
}

fn base(name: &str, horizon: f64) -> ScenarioConfig {
    ScenarioConfig {
        name: Some(name.into()),
        n: 16,
        t0: 0.0,
        horizon,
        dt: 1e-3,
        threshold: 1e-4,
        seed: 0,
        topologies: Vec::new(),
        schedule: Vec::new(),
        outputs: OutputsConfig { monitored: vec![1], c1: None, c2: None, d: None },
        initial: split_init(16),
        observer: None,
        attack: None,
        topology_attack: None,
    }
}

/// Intermittent attack against a scheme with repeated Laplacian eigenvalues.
pub fn fig2() -> ScenarioConfig {
    let mut c = base("fig2-analog: intermittent attack, repeated eigenvalues", 30.0);
    c.topologies = vec![
        TopologyConfig { id: 1, edges: with(&RING_WITH_TWINS, &[(1, 7)]) },
        TopologyConfig { id: 2, edges: unit(&RING_WITH_TWINS) },
    ];
    c.schedule = vec![ScheduleConfig { topology: 1, dwell: 3.0 }, ScheduleConfig { topology: 2, dwell: 6.0 }];
    let eta = (0.08, -2.0);
    // deviation [u; eta u] and input (eta^2 + eta + 1) u with u = e5 - e4, an
    // eigenvector for eigenvalue 1 of both topologies
    let mut z0 = vec![(0.0, 0.0); 32];
    z0[3] = (-1.0, 0.0);
    z0[4] = (1.0, 0.0);
    z0[19] = (-eta.0, -eta.1);
    z0[20] = (eta.0, eta.1);
    let mut g = vec![(0.0, 0.0); 32];
    g[19] = (2.9136, 2.32);
    g[20] = (-2.9136, -2.32);
    c.attack = Some(AttackConfig {
        misbehaving: vec![4, 5],
        policy: PolicyConfig::Intermittent,
        eta,
        etas: Vec::new(),
        eta_grid: Vec::new(),
        start: Some(0.2),
        inference_delay: 0.2,
        amplitude: 1.0,
        z0: Some(z0),
        g: Some(g),
        capability: Some(CapabilityConfig { knows_initial_topology: true, learns_period: true }),
    });
    c
}

/// The same attacker against a scheme with distinct eigenvalues and a fully
/// informative monitored agent.
pub fn fig3() -> ScenarioConfig {
    let mut c = base("fig3-analog: intermittent attack, defended switching", 12.0);
    c.topologies = vec![
        TopologyConfig { id: 3, edges: with(&RING_WITH_TWINS, &[(1, 7), (4, 6), (12, 14)]) },
        TopologyConfig { id: 4, edges: with(&RING_WITH_TWINS, &[(5, 8), (13, 10)]) },
    ];
    c.schedule = vec![ScheduleConfig { topology: 3, dwell: 3.0 }, ScheduleConfig { topology: 4, dwell: 6.0 }];
    c.attack = Some(AttackConfig {
        misbehaving: vec![4, 5],
        policy: PolicyConfig::Intermittent,
        eta: (0.08, -2.0),
        etas: Vec::new(),
        eta_grid: Vec::new(),
        start: None,
        inference_delay: 0.2,
        amplitude: 1.0,
        z0: None,
        g: None,
        capability: Some(CapabilityConfig { knows_initial_topology: true, learns_period: true }),
    });
    c
}

fn cooperative(name: &str, edges: &[(usize, usize)], ids: (u32, u32)) -> ScenarioConfig {
    let mut c = base(name, 8.0);
    c.outputs = OutputsConfig { monitored: vec![1, 2, 3], c1: None, c2: None, d: None };
    c.topologies = vec![
        TopologyConfig { id: ids.0, edges: with(edges, &[(2, 3)]) },
        TopologyConfig { id: ids.1, edges: unit(edges) },
    ];
    c.schedule = vec![ScheduleConfig { topology: ids.0, dwell: 3.0 }, ScheduleConfig { topology: ids.1, dwell: 1.0 }];
    c.attack = Some(AttackConfig {
        misbehaving: vec![1, 3, 4, 5, 6, 7],
        policy: PolicyConfig::Persistent,
        eta: (1.0, 0.0),
        etas: Vec::new(),
        eta_grid: Vec::new(),
        start: None,
        inference_delay: 0.0,
        amplitude: 1.0,
        z0: None,
        g: None,
        capability: None,
    });
    // keep the controlled link 2-3 switched on while the defender turns it off
    c.topology_attack = Some(TopologyAttackConfig { target: ids.1, edges: vec![(2, 3, 1.0)], start: 0.0 });
    c
}

/// Cooperative attack where two monitored agents are structurally identical.
pub fn fig5() -> ScenarioConfig {
    cooperative("fig5-analog: cooperative attack, indistinguishable monitors", &TWIN_MONITORS, (5, 6))
}

/// Cooperative attack against monitors that every eigenvector separates.
pub fn fig6() -> ScenarioConfig {
    cooperative("fig6-analog: cooperative attack, distinguishable monitors", &IRREGULAR, (7, 8))
}

pub fn by_name(name: &str) -> Result<ScenarioConfig> {
    match name {
        "fig2" => Ok(fig2()),
        "fig3" => Ok(fig3()),
        "fig5" => Ok(fig5()),
        "fig6" => Ok(fig6()),
        other => Err(Error::Config(format!("unknown figure {other:?}; expected one of {}", FIGURES.join(", ")))),
    }
}
