#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hyperbolic_core::verify::Suite;

use commands::{Context, Failure, Outcome};
use report::Envelope;

#[derive(Parser, Debug)]
#[command(name = "hyperbolic", version, about = "Hyperbolic N-body motions: shooting, limit shapes, action potentials, Busemann functions")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON run configuration.
    #[arg(long, global = true, env = "HYPERBOLIC_CONFIG")]
    config: Option<PathBuf>,

    /// Directory for the JSON report and CSV tables.
    #[arg(long, global = true, env = "HYPERBOLIC_OUT", default_value = "hyperbolic-out")]
    out: PathBuf,

    /// Overrides the seed of the configuration.
    #[arg(long, global = true, env = "HYPERBOLIC_SEED")]
    seed: Option<u64>,

    /// Worker threads (all cores when absent).
    #[arg(long, global = true, env = "HYPERBOLIC_THREADS")]
    threads: Option<usize>,

    /// Multiplies every tolerance.
    #[arg(long, global = true, env = "HYPERBOLIC_TOL_SCALE", default_value_t = 1.0)]
    tol_scale: f64,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Asymptotic velocity for the target limit shape and the resulting ray.
    Shoot,
    /// Limit shape of each (configuration, velocity) pair.
    LimitShape,
    /// Free-time (and optionally fixed-time) action potentials for point pairs.
    Action,
    /// Busemann estimates, gradients and eikonal residuals at the configurations.
    Busemann,
    /// Cone constants and confinement runs.
    Cone,
    /// Residual of the asymptotic expansion along one motion.
    Chazy,
    /// The acceptance suite.
    Verify,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Shoot => "shoot",
            Command::LimitShape => "limit-shape",
            Command::Action => "action",
            Command::Busemann => "busemann",
            Command::Cone => "cone",
            Command::Chazy => "chazy",
            Command::Verify => "verify",
        }
    }
}

fn dispatch(cmd: Command, ctx: &Context) -> Result<Outcome, Failure> {
    match cmd {
        Command::Shoot => commands::shoot(ctx),
        Command::LimitShape => commands::limit_shape_cmd(ctx),
        Command::Action => commands::action(ctx),
        Command::Busemann => commands::busemann(ctx),
        Command::Cone => commands::cone(ctx),
        Command::Chazy => commands::chazy(ctx),
        Command::Verify => commands::verify(ctx),
    }
}

fn run(cli: &Cli) -> ExitCode {
    let config_error = |msg: String| {
        eprintln!("config error: {msg}");
        ExitCode::from(2)
    };
    let Some(path) = &cli.config else {
        return config_error("--config is required".into());
    };
    if !(cli.tol_scale > 0.0 && cli.tol_scale.is_finite()) {
        return config_error(format!("--tol-scale must be positive, got {}", cli.tol_scale));
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            return config_error("--threads must be at least 1".into());
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("warning: {e}");
        }
    }
    let cfg = match config::load(&path.to_string_lossy()) {
        Ok(c) => c,
        Err(e) => return config_error(e.to_string()),
    };
    let seed = cli.seed.or(cfg.raw.seed).unwrap_or(Suite::default().seed);
    let ctx = Context { cfg: &cfg, seed, tol_scale: cli.tol_scale };
    let name = cli.command.name();
    let env = Envelope { command: name, config_sha256: &cfg.sha256, seed, tol_scale: cli.tol_scale };
    let (code, doc, csv) = match dispatch(cli.command, &ctx) {
        Ok(o) => {
            for l in &o.lines {
                println!("{l}");
            }
            let csv = if cfg.raw.output.csv { o.csv } else { Vec::new() };
            (if o.ok { 0 } else { 1 }, env.wrap(o.ok, o.result), csv)
        }
        Err(Failure::Config(e)) => return config_error(e.to_string()),
        Err(e @ Failure::Numerical(_)) => {
            eprintln!("{e}");
            (1, env.wrap(false, serde_json::json!({ "error": e.to_string() })), Vec::new())
        }
    };
    let file = format!("{name}.json");
    let written = report::write(&cli.out, &file, &report::to_string(&doc))
        .and_then(|_| csv.iter().try_for_each(|(f, body)| report::write(&cli.out, f, body)));
    if let Err(e) = written {
        eprintln!("cannot write to {}: {e}", cli.out.display());
        return ExitCode::from(1);
    }
    println!("{name}: {} -> {}", if code == 0 { "ok" } else { "FAILED" }, cli.out.join(file).display());
    ExitCode::from(code)
}

fn main() -> ExitCode {
    run(&Cli::parse())
}
