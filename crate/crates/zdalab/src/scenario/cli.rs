use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use num_complex::Complex64;

use super::{reproduce, run_experiment, emit_plot_script, Scenario, ScenarioConfig, OUT_DIR_ENV};
use crate::attack::synthesize_zda;
use crate::error::Error;
use crate::graph::{self, TopologyId};
use crate::observability::defense_check;
use crate::observer::Detection;
use crate::switching::{certify_consensus, certify_observer, StabilityCertificate};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_DIVERGENCE: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "zdalab", version, about = "Zero-dynamics attack and switching-defense experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a scenario and write CSV artifacts
    Run {
        config: PathBuf,
        /// Output directory (overrides the environment variable)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write a matplotlib script next to the CSV files
        #[arg(long)]
        plot: bool,
    },
    /// Evaluate the structural defense conditions
    CheckDefense { config: PathBuf },
    /// List zero-dynamics attacks on one topology
    SynthesizeAttack {
        config: PathBuf,
        #[arg(long)]
        topology: TopologyId,
    },
    /// Compute consensus and observer stability certificates
    Certify { config: PathBuf },
    /// Run one of the built-in analog scenarios
    Reproduce {
        /// fig2, fig3, fig5 or fig6
        figure: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Divergence { .. } => EXIT_DIVERGENCE,
        Error::Numerical(_) | Error::Io(_) => EXIT_INTERNAL,
        _ => EXIT_VALIDATION,
    }
}

fn out_root(explicit: Option<PathBuf>) -> PathBuf {
    explicit
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("zdalab-out"))
}

fn load(path: &Path) -> Result<Scenario, Error> {
    ScenarioConfig::load(path)?.validate()
}

fn fmt_c(c: Complex64) -> String {
    if c.im >= 0.0 {
        format!("{:.6}+{:.6}i", c.re, c.im)
    } else {
        format!("{:.6}-{:.6}i", c.re, -c.im)
    }
}

fn pass(b: bool) -> &'static str {
    if b {
        "pass"
    } else {
        "fail"
    }
}

fn print_certificate(out: &mut dyn Write, label: &str, cert: &Result<StabilityCertificate, Error>) -> std::io::Result<()> {
    match cert {
        Ok(c) => {
            for (id, nu, mu) in &c.measures {
                writeln!(out, "{label}.topology.{id}.weight={nu:.6}")?;
                writeln!(out, "{label}.topology.{id}.mu={mu:.9e}")?;
            }
            writeln!(out, "{label}.convex_combination={:.9e}", c.convex_combination)?;
            writeln!(out, "{label}.verdict={}", pass(c.passed))
        }
        Err(e) => writeln!(out, "{label}.verdict=fail\n{label}.error={e}"),
    }
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<(), Error> {
    match cli.command {
        Command::Run { config, out: dir, plot } => {
            let sc = load(&config)?;
            let dir = out_root(dir).join(sanitize(&sc.name));
            let art = run_experiment(&sc, &dir)?;
            write_run(out, &sc, &art, plot)?;
        }
        Command::CheckDefense { config } => {
            let sc = load(&config)?;
            let set = sc.scheduled_topologies();
            let report = defense_check(&set, &sc.cfg, None)?;
            writeln!(out, "{:>8}  {:>9}  eigenvalues", "topology", "distinct")?;
            for t in &set {
                let sd = graph::spectral_decompose(&t.laplacian())?;
                let ok = report.distinct_eigenvalues_ok.iter().find(|(id, _)| *id == t.id).map_or(false, |x| x.1);
                let eig: Vec<String> = sd.eigenvalues.iter().map(|v| format!("{v:.4}")).collect();
                writeln!(out, "{:>8}  {:>9}  {}", t.id, ok, eig.join(" "))?;
            }
            let f: Vec<String> = report.f_set.iter().map(|i| (i + 1).to_string()).collect();
            writeln!(out, "distinct_eigenvalues={}", report.all_distinct())?;
            writeln!(out, "f_set=[{}]", f.join(","))?;
            writeln!(out, "f_nonempty={}", report.f_nonempty)?;
            writeln!(out, "c2_positive={}", report.c2_positive_ok)?;
            writeln!(out, "row_difference={}", report.row_difference_ok)?;
            writeln!(out, "intermittent_verdict={}", pass(report.intermittent_verdict))?;
            writeln!(out, "cooperative_verdict={}", pass(report.cooperative_verdict))?;
        }
        Command::SynthesizeAttack { config, topology } => {
            let sc = load(&config)?;
            let t = sc.topology(topology).ok_or_else(|| Error::Config(format!("unknown topology {topology}")))?;
            let spec = sc.attack.as_ref().ok_or_else(|| Error::Config("config has no [attack] section".into()))?;
            let mut grid = vec![spec.etas.iter().find(|e| e.0 == topology).map_or(spec.default_eta, |e| e.1)];
            grid.extend(spec.eta_grid.iter().cloned());
            let cands = synthesize_zda(t, &sc.cfg, &spec.misbehaving, Some(grid))?;
            writeln!(out, "candidates={}", cands.len())?;
            for (k, c) in cands.iter().enumerate() {
                writeln!(out, "candidate.{k}.eta={}", fmt_c(c.eta))?;
                let z: Vec<String> = c.z0.iter().map(|v| fmt_c(*v)).collect();
                let g: Vec<String> = c.g.iter().map(|v| fmt_c(*v)).collect();
                writeln!(out, "candidate.{k}.z0=[{}]", z.join(","))?;
                writeln!(out, "candidate.{k}.g=[{}]", g.join(","))?;
            }
        }
        Command::Certify { config } => {
            let sc = load(&config)?;
            print_certificate(out, "consensus", &certify_consensus(&sc.schedule, &sc.topologies, None))?;
            print_certificate(
                out,
                "observer",
                &certify_observer(&sc.schedule, &sc.topologies, &sc.cfg.observer_gain(), None),
            )?;
        }
        Command::Reproduce { figure, out: dir } => {
            let sc = reproduce::by_name(&figure)?.validate()?;
            let dir = out_root(dir).join(&figure);
            let art = run_experiment(&sc, &dir)?;
            write_run(out, &sc, &art, true)?;
        }
    }
    Ok(())
}

fn sanitize(name: &str) -> String {
    let s: String = name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect();
    if s.is_empty() {
        "scenario".into()
    } else {
        s
    }
}

fn write_run(out: &mut dyn Write, sc: &Scenario, art: &super::RunArtifacts, plot: bool) -> Result<(), Error> {
    writeln!(out, "scenario={}", sc.name)?;
    writeln!(out, "trajectory_csv={}", art.trajectory_csv.display())?;
    writeln!(out, "residual_csv={}", art.residual_csv.display())?;
    writeln!(out, "summary_json={}", art.summary_json.display())?;
    if plot {
        let p = emit_plot_script(&art.trajectory_csv, &art.residual_csv, sc.threshold, &art.out_dir.join("plot.py"))?;
        writeln!(out, "plot_script={}", p.display())?;
    }
    writeln!(out, "intermittent_verdict={}", pass(art.report.intermittent_verdict))?;
    writeln!(out, "cooperative_verdict={}", pass(art.report.cooperative_verdict))?;
    writeln!(out, "consensus_certificate={}", pass(art.consensus_certificate.as_ref().map_or(false, |c| c.passed)))?;
    writeln!(out, "observer_certificate={}", pass(art.observer_certificate.as_ref().map_or(false, |c| c.passed)))?;
    match art.detection {
        Detection::Clean => writeln!(out, "detection=clean")?,
        Detection::AttackDetected(t) => writeln!(out, "detection=attack_detected({t:.3})")?,
    }
    writeln!(out, "max_residual={:.6e}", art.summary.max_residual)?;
    writeln!(out, "target_location={:.12}", art.summary.target_location)?;
    writeln!(out, "final_position_spread={:.6e}", art.summary.final_position_spread)?;
    writeln!(out, "final_max_velocity={:.6e}", art.summary.final_max_velocity)?;
    Ok(())
}

/// Runs the command line with explicit arguments (including the program name) and
/// returns the process exit code.
pub fn run(args: &[String], out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_VALIDATION,
            };
            let _ = if code == EXIT_OK { write!(out, "{e}") } else { write!(err, "{e}") };
            return code;
        }
    };
    match dispatch(cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}
