use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sdpc::baselines::SelectionPolicy;
use sdpc::scenario::{grouped_run, run_scenario, ScenarioConfig};
use sdpc::sweep::sweep;

#[derive(Parser)]
#[command(name = "sdpc", version, about = "Vehicular clustering simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML). Built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Override the selection policy.
        #[arg(long)]
        policy: Option<SelectionPolicy>,
        /// Override the maximum velocity, m/s.
        #[arg(long)]
        max_velocity: Option<f64>,
    },
    /// Run every (policy, velocity, seed) combination.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated velocities, m/s.
        #[arg(long, value_delimiter = ',')]
        velocities: Option<Vec<f64>>,
        /// Comma-separated policies: sdpc, velocity, central, degree.
        #[arg(long, value_delimiter = ',')]
        policies: Option<Vec<SelectionPolicy>>,
        /// Seed range `a..b` (inclusive) or comma-separated list.
        #[arg(long)]
        seeds: Option<String>,
        /// Write one CSV per figure into this directory.
        #[arg(long)]
        emit_plot_data: Option<PathBuf>,
    },
    /// Run the straight-only, occasional and frequent groups and combine them.
    GroupedRun {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn parse_seeds(s: &str) -> Result<Vec<u64>, String> {
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a
            .trim()
            .parse()
            .map_err(|_| format!("bad seed range `{s}`"))?;
        let b: u64 = b
            .trim()
            .trim_start_matches('=')
            .parse()
            .map_err(|_| format!("bad seed range `{s}`"))?;
        if b < a {
            return Err(format!("empty seed range `{s}`"));
        }
        return Ok((a..=b).collect());
    }
    s.split(',')
        .map(|x| x.trim().parse().map_err(|_| format!("bad seed `{x}`")))
        .collect()
}

fn load(path: &Option<PathBuf>) -> Result<ScenarioConfig, String> {
    match path {
        Some(p) => ScenarioConfig::load(p).map_err(|e| format!("{}: {e}", p.display())),
        None => Ok(ScenarioConfig::default()),
    }
}

fn header(cfg: &ScenarioConfig, seeds: &[u64]) -> String {
    let mut h = format!("# config-hash: {}\n# seeds: {seeds:?}\n", cfg.hash());
    for line in cfg.to_toml().lines() {
        h.push_str("# ");
        h.push_str(line);
        h.push('\n');
    }
    h
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into())
}

fn real_main() -> Result<(), String> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            common,
            seed,
            policy,
            max_velocity,
        } => {
            let mut cfg = load(&common.config)?;
            if let Some(p) = policy {
                cfg.protocol.policy = p;
            }
            if let Some(v) = max_velocity {
                cfg.max_velocity = v;
            }
            cfg.resolve().map_err(|e| e.to_string())?;
            let out = run_scenario(&cfg, seed).map_err(|e| e.to_string())?;
            let dir = out.write(&common.out).map_err(|e| e.to_string())?;
            let r = &out.report;
            println!("run directory: {}", dir.display());
            println!("window: [{}, {}) s", r.window.start, r.window.end);
            println!("ch_change_rate: {:.4} /s", r.ch_change_rate);
            println!("avg_ch_duration: {} s", fmt_opt(r.avg_ch_duration));
            println!("avg_cm_duration: {} s", fmt_opt(r.avg_cm_duration));
            println!("overhead: {}", fmt_opt(r.overhead));
            println!("avg_clusters: {:.4}", r.avg_clusters);
            println!("invariant violations: {}", out.violations.len());
        }
        Command::Sweep {
            common,
            velocities,
            policies,
            seeds,
            emit_plot_data,
        } => {
            let mut cfg = load(&common.config)?;
            if let Some(v) = velocities {
                cfg.velocities = v;
            }
            if let Some(s) = seeds {
                cfg.seeds = parse_seeds(&s)?;
            }
            cfg.resolve().map_err(|e| e.to_string())?;
            let policies = policies.unwrap_or_else(|| SelectionPolicy::ALL.to_vec());
            let runs_dir = common.out.join("runs");
            let result = sweep(&cfg, &policies, &cfg.velocities, &cfg.seeds, |run| {
                run.write(&runs_dir)
                    .map(|_| ())
                    .map_err(|e| sdpc::sweep::SweepError::Io(std::io::Error::other(e.to_string())))
            })
            .map_err(|e| e.to_string())?;
            let head = header(&cfg, &cfg.seeds);
            let path = common.out.join(format!("sweep-{}.csv", cfg.hash()));
            result.write_csv(&path, &head).map_err(|e| e.to_string())?;
            println!(
                "sweep: {} runs, {} invariant violations",
                result.runs.len(),
                result.violations
            );
            println!("rows written to {}", path.display());
            if let Some(dir) = emit_plot_data {
                result
                    .write_plot_data(&dir, &head)
                    .map_err(|e| e.to_string())?;
                println!("plot data written to {}", dir.display());
            }
        }
        Command::GroupedRun { common, seed } => {
            let cfg = load(&common.config)?;
            let out = grouped_run(&cfg, seed).map_err(|e| e.to_string())?;
            let dir = out
                .write(&common.out, &cfg, seed)
                .map_err(|e| e.to_string())?;
            let c = &out.report.composite;
            println!("run directory: {}", dir.display());
            println!("ch_change_rate: {:.4} /s", c.ch_change_rate);
            println!(
                "avg_ch_duration: {} s (per-100 s reading: {} s)",
                fmt_opt(c.avg_ch_duration),
                fmt_opt(out.report.avg_ch_duration_halved)
            );
            println!(
                "avg_cm_duration: {} s (per-100 s reading: {} s)",
                fmt_opt(c.avg_cm_duration),
                fmt_opt(out.report.avg_cm_duration_halved)
            );
            println!("overhead: {}", fmt_opt(c.overhead));
            println!("avg_clusters: {:.4}", c.avg_clusters);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
