//! `clwn`: batch front end for Loewner flows on hyperbolic surfaces.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 configuration error, 3 numerical
//! abort, 4 failed check. Every error is reported on stderr as one JSON
//! object.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod output;

use clap::{Parser, Subcommand};
use clwn_core::annulus::AnnulusSchedule;
use clwn_core::automorphic::{GroupVelocity, Snapshot};
use clwn_core::checks::{run_suite, Suite};
use clwn_core::chordal::{chordal_flow, ChordalRun};
use clwn_core::driving::sample_path;
use clwn_core::field::FieldContext;
use clwn_core::ode::OdeOptions;
use clwn_core::surface_flow::{
    conjugacy_residuals, evolve_triples, integrate_seeds, invariant_domain_check, GroupPath,
    InvariantReport, SurfaceSchedule,
};
use clwn_core::{Complex64, Exec};
use config::*;
use output::{flow_rows, num, trajectories, write_csv, write_json, write_svg, FLOW_HEADER};
use serde::Serialize;
use serde_json::json;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Debug, Parser)]
#[command(name = "clwn", version, about = "Loewner flows on the universal cover of hyperbolic Riemann surfaces")]
struct Cli {
    /// Directory for output files.
    #[arg(long, global = true, env = "CLWN_OUTPUT", default_value = ".")]
    output: PathBuf,
    /// Also write an SVG plot where the subcommand has one.
    #[arg(long, global = true, env = "CLWN_SVG")]
    svg: bool,
    /// Worker threads; 1 runs sequentially.
    #[arg(long, global = true, env = "CLWN_THREADS")]
    threads: Option<usize>,
    #[arg(long, global = true, env = "CLWN_LOG_LEVEL", default_value = "warn",
          value_parser = ["error", "warn", "info", "debug"])]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Chordal flow in the upper half-plane.
    SimulateChordal(ConfigArg),
    /// Annulus flow with a closed-form field.
    SimulateAnnulus(ConfigArg),
    /// General flow driven by a moving Fuchsian group.
    SimulateSurface(ConfigArg),
    /// List the reduced words of a ball and a limit-set sample.
    EnumerateGroup(ConfigArg),
    /// Evaluate the vector field at a list of points.
    EvalField {
        #[command(flatten)]
        config: ConfigArg,
        /// Also write the assembled δ-system as JSON.
        #[arg(long)]
        dump_system: bool,
    },
    /// Sample a driving function on a uniform grid.
    ExportDriving(ConfigArg),
    /// Run the invariant suites and print a pass/fail table.
    Check {
        #[arg(long, env = "CLWN_SUITE", default_value = "all", value_parser = Suite::NAMES)]
        suite: String,
    },
}

#[derive(Debug, clap::Args)]
struct ConfigArg {
    #[arg(long, env = "CLWN_CONFIG")]
    config: PathBuf,
}

#[derive(Debug)]
pub enum CliError {
    Config {
        kind: String,
        key: Option<String>,
        message: String,
    },
    Core(clwn_core::Error),
    Io {
        path: PathBuf,
        message: String,
    },
    CheckFailed(Vec<u32>),
}

impl CliError {
    pub fn config(kind: &str, key: Option<&str>, message: impl Into<String>) -> Self {
        CliError::Config {
            kind: kind.into(),
            key: key.map(Into::into),
            message: message.into(),
        }
    }

    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Io { .. } => 1,
            CliError::Config { .. } => 2,
            CliError::Core(e) if e.is_numerical_abort() => 3,
            CliError::Core(_) => 2,
            CliError::CheckFailed(_) => 4,
        }
    }

    fn to_json(&self) -> serde_json::Value {
        let code = self.exit_code();
        match self {
            CliError::Config { kind, key, message } => json!({
                "error": "ConfigError", "kind": kind, "key": key, "message": message, "exit_code": code,
            }),
            CliError::Core(e) => json!({
                "error": if code == 3 { "NumericalAbort" } else { "ConfigError" },
                "kind": e.kind(), "message": e.to_string(), "exit_code": code,
            }),
            CliError::Io { path, message } => json!({
                "error": "IoError", "path": path, "message": message, "exit_code": code,
            }),
            CliError::CheckFailed(ids) => json!({
                "error": "CheckFailed", "criteria": ids, "exit_code": code,
            }),
        }
    }
}

impl From<clwn_core::Error> for CliError {
    fn from(e: clwn_core::Error) -> Self {
        CliError::Core(e)
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::config("Usage", None, e.to_string().trim_end());
            eprintln!("{}", err.to_json());
            return ExitCode::from(err.exit_code());
        }
    };
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code())
        }
    }
}

fn exec_mode(cli: &Cli) -> Result<Exec> {
    match cli.threads {
        Some(0) => Err(CliError::config("Invalid", Some("threads"), "--threads must be at least 1")),
        Some(1) => Ok(Exec::Sequential),
        Some(n) => {
            #[cfg(feature = "parallel")]
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| CliError::config("Invalid", Some("threads"), e.to_string()))?;
            #[cfg(not(feature = "parallel"))]
            log::warn!("built without the parallel feature; ignoring --threads {n}");
            Ok(Exec::Parallel)
        }
        None => Ok(Exec::Parallel),
    }
}

fn run(cli: &Cli) -> Result<()> {
    let exec = exec_mode(cli)?;
    if !matches!(cli.command, Command::Check { .. }) {
        std::fs::create_dir_all(&cli.output).map_err(|e| CliError::io(&cli.output, e))?;
    }
    let out = |name: &str| cli.output.join(name);
    match &cli.command {
        Command::SimulateChordal(a) => {
            let cfg: ChordalConfig = load(&a.config)?;
            let run = ChordalRun {
                driving: cfg.driving,
                seeds: cfg.seeds,
                t_end: cfg.t_end,
                tol: cfg.tol,
            };
            let flows = chordal_flow(&run, exec)?;
            write_csv(&out("chordal.csv"), &FLOW_HEADER, flow_rows(&flows))?;
            if cli.svg {
                write_svg(&out("chordal.svg"), &trajectories(&flows))?;
            }
        }
        Command::SimulateAnnulus(a) => {
            let cfg: AnnulusConfig = load(&a.config)?;
            let sched = AnnulusSchedule {
                tau: cfg.tau()?,
                xi: cfg.xi.clone(),
                lambda: cfg.lambda.clone(),
                c: cfg.c,
            };
            if !(cfg.t_end >= 0.0 && cfg.tol > 0.0) {
                return Err(CliError::config("Invalid", None, "t_end must be >= 0 and tol > 0"));
            }
            check_seeds(&cfg.seeds)?;
            let field = sched.realize(cfg.t_end)?;
            let flows = field.forward_flows(&cfg.seeds, cfg.t_end, &OdeOptions::with_tol(cfg.tol), exec)?;
            write_csv(&out("annulus.csv"), &FLOW_HEADER, flow_rows(&flows))?;
            if cli.svg {
                write_svg(&out("annulus.svg"), &trajectories(&flows))?;
            }
        }
        Command::SimulateSurface(a) => simulate_surface(cli, &load(&a.config)?, exec)?,
        Command::EnumerateGroup(a) => {
            let cfg: EnumerateConfig = load(&a.config)?;
            let g = group(&cfg.generators)?;
            let ball = g.enumerate_ball(cfg.word_length, cfg.cap)?;
            let rows = ball.entries().iter().map(|e| {
                let [a, b, c, d] = e.map.coefficients();
                vec![
                    e.word.to_string(),
                    e.word.len().to_string(),
                    num(a),
                    num(b),
                    num(c),
                    num(d),
                    num(e.map.trace()),
                ]
            });
            write_csv(&out("words.csv"), &["word", "length", "a", "b", "c", "d", "trace"], rows)?;
            let sample = ball.limit_set_sample();
            write_csv(&out("limit_set.csv"), &["x"], sample.iter().map(|&x| vec![num(x)]))?;
            println!(
                "{}",
                json!({"words": ball.len(), "limit_set_points": sample.len(), "ping_pong": g.ping_pong_ok()})
            );
        }
        Command::EvalField { config, dump_system } => {
            let cfg: FieldConfig = load(&config.config)?;
            eval_field(cli, &cfg, *dump_system, exec)?;
        }
        Command::ExportDriving(a) => {
            let cfg: DrivingConfig = load(&a.config)?;
            if !(cfg.t_end >= 0.0 && cfg.dt > 0.0) {
                return Err(CliError::config("Invalid", None, "t_end must be >= 0 and dt > 0"));
            }
            let path = sample_path(&cfg.driving.realize(cfg.t_end)?, cfg.t_end, cfg.dt);
            write_csv(&out("driving.csv"), &["t", "xi"], path.iter().map(|&(t, x)| vec![num(t), num(x)]))?;
            if cli.svg {
                write_svg(&out("driving.svg"), &[path])?;
            }
        }
        Command::Check { suite } => {
            let suite: Suite = suite.parse()?;
            let results = run_suite(suite, exec);
            for r in &results {
                println!("{}", r.line());
            }
            let failed: Vec<u32> = results.iter().filter(|r| !r.passed).map(|r| r.id).collect();
            println!("{} of {} criteria passed", results.len() - failed.len(), results.len());
            if !failed.is_empty() {
                return Err(CliError::CheckFailed(failed));
            }
        }
    }
    Ok(())
}

fn check_seeds(seeds: &[Complex64]) -> Result<()> {
    match seeds.iter().position(|z| !(z.im > 0.0)) {
        Some(i) => Err(CliError::config(
            "Invalid",
            Some("seeds"),
            format!("seed {i} ({}) is not in the upper half-plane", seeds[i]),
        )),
        None => Ok(()),
    }
}

#[derive(Serialize)]
struct ConjugacyEntry {
    generator: usize,
    point: Complex64,
    max_residual: Option<f64>,
    final_residual: Option<f64>,
    error: Option<String>,
}

#[derive(Serialize)]
struct SurfaceReport {
    triple_error: f64,
    max_path_drift: f64,
    min_trace_margin: f64,
    min_c_margin: f64,
    min_xi_margin: f64,
    conjugacy: Vec<ConjugacyEntry>,
    invariant_domain: InvariantReport,
}

fn simulate_surface(cli: &Cli, cfg: &SurfaceConfig, exec: Exec) -> Result<()> {
    check_seeds(&cfg.seeds)?;
    let sched = SurfaceSchedule {
        group: group(&cfg.generators)?,
        base_triple: cfg.base_triple,
        c: cfg.c,
        xi: cfg.driving.clone(),
        lambda: cfg.lambda.clone(),
        t_end: cfg.t_end,
        mesh_dt: cfg.mesh_dt,
        tol: cfg.tol,
        policy: cfg.policy(),
    };
    let (_, tl) = evolve_triples(&sched)?;
    let flows = integrate_seeds(&tl, &cfg.seeds, exec)?;

    let point = cfg.check_point.unwrap_or(Complex64::new(0.0, 2.0));
    let conjugacy = (0..sched.group.rank())
        .map(|l| match conjugacy_residuals(&tl, l, point, exec) {
            Ok(r) => ConjugacyEntry {
                generator: l + 1,
                point,
                max_residual: Some(r.iter().map(|x| x.1).fold(0.0, f64::max)),
                final_residual: r.last().map(|x| x.1),
                error: None,
            },
            Err(e) => ConjugacyEntry {
                generator: l + 1,
                point,
                max_residual: None,
                final_residual: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    let nodes = tl.nodes();
    let min = |f: fn(&clwn_core::surface_flow::TimelineNode) -> f64| {
        nodes.iter().map(f).fold(f64::INFINITY, f64::min)
    };
    let report = SurfaceReport {
        triple_error: tl.triple_error(),
        max_path_drift: nodes.iter().map(|n| n.path_drift).fold(0.0, f64::max),
        min_trace_margin: min(|n| n.margins.trace),
        min_c_margin: min(|n| n.margins.c),
        min_xi_margin: min(|n| n.margins.xi),
        conjugacy,
        invariant_domain: invariant_domain_check(&tl, &cfg.seeds, tl.horizon(), exec)?,
    };

    let out = |name: &str| cli.output.join(name);
    write_json(
        &out("surface_timeline.json"),
        &json!({"mesh_dt": tl.mesh_dt(), "horizon": tl.horizon(), "nodes": nodes}),
    )?;
    write_csv(&out("surface.csv"), &FLOW_HEADER, flow_rows(&flows))?;
    write_json(&out("surface_checks.json"), &report)?;
    if cli.svg {
        write_svg(&out("surface.svg"), &trajectories(&flows))?;
    }
    Ok(())
}

fn eval_field(cli: &Cli, cfg: &FieldConfig, dump_system: bool, exec: Exec) -> Result<()> {
    let g = group(&cfg.generators)?;
    let velocity = match (&cfg.velocities, cfg.base_triple) {
        (Some(v), None) => GroupVelocity::new(&g, v.clone())?,
        (None, Some(p)) => GroupVelocity::new(&g, GroupPath::chordal(&g, p, cfg.xi)?.at(0.0)?.1)?,
        (Some(_), Some(_)) => {
            return Err(CliError::config("Conflict", None, "give either velocities or base_triple, not both"))
        }
        (None, None) => {
            return Err(CliError::config(
                "MissingKey",
                Some("velocities"),
                "missing field `velocities` (or `base_triple`)",
            ))
        }
    };
    let snap = Snapshot::new(g, velocity, cfg.c, cfg.policy())?;
    let ctx = FieldContext::new(snap, cfg.xi, cfg.lambda, cfg.mode)?;
    let values = exec.map(&cfg.points, |&z| ctx.eval(z));
    let rows = cfg.points.iter().zip(&values).map(|(z, v)| match v {
        Ok(v) => vec![num(z.re), num(z.im), num(v.value.re), num(v.value.im), num(v.tail_estimate), "ok".into()],
        Err(e) => vec![num(z.re), num(z.im), "NaN".into(), "NaN".into(), "NaN".into(), e.kind().into()],
    });
    let path = cli.output.join("field.csv");
    write_csv(&path, &["z_re", "z_im", "p_re", "p_im", "tail_estimate", "status"], rows)?;
    if dump_system {
        write_json(
            &cli.output.join("field_system.json"),
            &json!({
                "mode": ctx.mode(),
                "sigma": ctx.sigma(),
                "velocity_scale": ctx.velocity_scale(),
                "deltas": ctx.deltas(),
                "system": ctx.system(),
            }),
        )?;
    }
    Ok(())
}
