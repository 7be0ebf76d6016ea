use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pilotwave::scenario::{
    convergence_table, emit_plot_data, parse_scenario, residual_series, run, scenario_to_text, PlotKind, RunManifest,
    RunOptions, Scenario,
};

/// Exit status for runs whose thresholds or check failed.
const EXIT_FAILED: u8 = 1;
/// Exit status for unreadable scenarios and pipeline errors.
const EXIT_ERROR: u8 = 2;

#[derive(Parser)]
#[command(name = "pilotwave", version, about = "Run and check pilot-wave scenarios")]
struct Cli {
    /// Ignore unknown keys in scenario files instead of rejecting them.
    #[arg(long, global = true)]
    lenient: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a scenario without running it.
    Validate {
        config: PathBuf,
        /// Print the canonical form with all defaults filled in.
        #[arg(long)]
        canonical: bool,
    },
    /// Run a scenario and write its outputs and manifest.
    Run {
        config: PathBuf,
        /// Override the ensemble seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: runs/<scenario name>).
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Write columnar plot data from a finished run.
    Plot {
        manifest: PathBuf,
        /// One of density_vs_t, trajectories, residual_convergence, fringe_histogram.
        #[arg(long)]
        kind: PlotKind,
    },
    /// Residual norms over a refinement series.
    Residuals {
        config: PathBuf,
        /// Number of halvings of (h, dt).
        #[arg(long, default_value_t = 1)]
        refine: usize,
        /// Write convergence.json and plot data here.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn load(path: &Path, lenient: bool) -> Result<Scenario, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    parse_scenario(&text, !lenient).map_err(|e| format!("{}: {e}", path.display()))
}

fn report(m: &RunManifest, dir: &Path) {
    println!("scenario   {}", m.scenario);
    println!("manifest   {}", dir.join("manifest.json").display());
    println!("sha256     {}", m.manifest_sha256);
    let s = &m.summary;
    if s.steps > 0 {
        println!("solver     {} steps of {} ({}), {} snapshots", s.steps, s.dt, s.scheme, s.snapshots);
    }
    if let Some(r) = &s.residuals {
        println!("residuals  max_a {:.3e}  max_b {:.3e}  over {} points", r.max_a, r.max_b, r.points);
    }
    if let Some(d) = s.norm_drift {
        println!("norm drift {d:.3e}");
    }
    if let Some(e) = &s.ensemble {
        let ks = e.max_ks.map(|k| format!("{k:.4}")).unwrap_or_else(|| "n/a".into());
        println!("ensemble   {} particles, {} valid, max KS {ks}, max L1 {:.4}", e.n, e.valid, e.max_l1);
    }
    for f in &m.flags {
        println!("flag       {f}");
    }
    for f in &m.failures {
        println!("failed     {f}");
    }
    if let Some(c) = &m.check {
        println!("check      {} {}: {}", c.criterion, if c.passed { "PASS" } else { "FAIL" }, c.summary());
    }
    println!("result     {}", if m.passed { "pass" } else { "fail" });
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { config, canonical } => load(&config, cli.lenient).map(|s| {
            if canonical {
                print!("{}", scenario_to_text(&s));
            } else {
                println!("{}: ok ({})", config.display(), s.name);
            }
            true
        }),
        Command::Run { config, seed, out_dir } => load(&config, cli.lenient).and_then(|s| {
            let dir = out_dir.unwrap_or_else(|| PathBuf::from("runs").join(&s.name));
            log::info!("running {} into {}", s.name, dir.display());
            let m = run(&s, &RunOptions { out_dir: dir.clone(), seed }).map_err(|e| e.to_string())?;
            report(&m, &dir);
            Ok(m.passed)
        }),
        Command::Plot { manifest, kind } => emit_plot_data(&manifest, kind).map_err(|e| e.to_string()).map(|p| {
            println!("{}", p.display());
            true
        }),
        Command::Residuals { config, refine, out_dir } => load(&config, cli.lenient).and_then(|s| {
            let levels = residual_series(&s, refine).map_err(|e| e.to_string())?;
            println!("{:>12} {:>12} {:>12} {:>12} {:>8} {:>8}", "h", "dt", "max_a", "max_b", "ratio_a", "ratio_b");
            for (k, l) in levels.iter().enumerate() {
                let ratio = |f: fn(&pilotwave::wave::ResidualNorms) -> f64| {
                    if k == 0 {
                        String::from("-")
                    } else {
                        format!("{:.2}", f(&levels[k - 1].norms) / f(&l.norms))
                    }
                };
                println!(
                    "{:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e} {:>8} {:>8}",
                    l.h,
                    l.dt,
                    l.norms.max_a,
                    l.norms.max_b,
                    ratio(|n| n.max_a),
                    ratio(|n| n.max_b)
                );
            }
            if let Some(dir) = out_dir {
                fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
                let json = serde_json::to_string_pretty(&levels).map_err(|e| e.to_string())?;
                fs::write(dir.join("convergence.json"), json + "\n").map_err(|e| e.to_string())?;
                let plot = dir.join(format!("plot_{}.dat", PlotKind::ResidualConvergence.name()));
                fs::write(&plot, convergence_table(&levels)).map_err(|e| e.to_string())?;
                println!("{}", plot.display());
            }
            Ok(true)
        }),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_FAILED),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
