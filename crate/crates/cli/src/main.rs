use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pirate::config::{ConfigError, ExperimentConfig};
use pirate::experiment::{self, Manifest, SweepSpec};
use pirate::report;

const EXIT_CONFIG: u8 = 2;
const EXIT_LIVENESS: u8 = 3;
const EXIT_REPLAY_MISMATCH: u8 = 4;

#[derive(Parser)]
#[command(name = "pirate", version, about = "Sharded BFT decentralized SGD simulator")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Run one scenario. Also accepts a run manifest, which is replayed and checked.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        plots: bool,
    },
    /// Run the cross product of a base config and varied fields.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        plots: bool,
    },
    /// Compare metrics files.
    Report {
        files: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        plots: bool,
    },
}

fn read(path: &Path) -> Result<String, ConfigError> {
    fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn config_error(e: impl std::fmt::Display) -> ExitCode {
    eprintln!("config error: {e}");
    ExitCode::from(EXIT_CONFIG)
}

fn plots(dir: &Path, files: &[PathBuf]) {
    let (series, warnings) = report::load(files);
    for w in warnings {
        log::warn!("{w}");
    }
    match report::write_plots(dir, &series) {
        Ok(paths) => paths.iter().for_each(|p| println!("plot {}", p.display())),
        Err(e) => eprintln!("could not write plots: {e}"),
    }
}

fn run(config: &Path, out: Option<PathBuf>, seed: Option<u64>, want_plots: bool) -> ExitCode {
    let text = match read(config) {
        Ok(t) => t,
        Err(e) => return config_error(e),
    };
    let value: serde_json::Value = match serde_json::from_str(&text) {
        Ok(v) => v,
        Err(e) => return config_error(format!("{}: {e}", config.display())),
    };
    let manifest = if value.get("trace_digest").is_some() {
        match serde_json::from_value::<Manifest>(value.clone()) {
            Ok(m) => Some(m),
            Err(e) => return config_error(format!("manifest {}: {e}", config.display())),
        }
    } else {
        None
    };
    let mut cfg = match &manifest {
        Some(m) => m.config.clone(),
        None => match ExperimentConfig::from_json(&text) {
            Ok(c) => c,
            Err(e) => return config_error(e),
        },
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let report = match experiment::run(&cfg) {
        Ok(r) => r,
        Err(e) => return config_error(e),
    };
    let dir = out.or_else(|| cfg.output.clone().map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("out"));
    let stem = format!("{}-n{}-seed{}", framework_name(&cfg), cfg.n, cfg.seed);
    let files = match experiment::write_run(&dir, &stem, &cfg, &report) {
        Ok(f) => f,
        Err(e) => return config_error(e),
    };
    println!("metrics {}", files.metrics.display());
    println!("manifest {}", files.manifest.display());
    println!(
        "iterations {} mean_iteration_time_s {:.6} final_storage_bytes {} final_loss {:.6e}",
        report.rows.len(),
        report.mean_iteration_time(),
        report.final_storage(),
        report.final_loss
    );
    if want_plots {
        plots(&dir, std::slice::from_ref(&files.metrics));
    }
    if let Some(m) = manifest.filter(|_| seed.is_none()) {
        let again = Manifest::new(&cfg, &report);
        let same = again.trace_digest == m.trace_digest && again.metrics_sha256 == m.metrics_sha256;
        println!("replay {}", if same { "identical" } else { "DIFFERS" });
        if !same {
            return ExitCode::from(EXIT_REPLAY_MISMATCH);
        }
    }
    if let Some(f) = &report.liveness_failure {
        eprintln!("liveness failure: {f}");
        return ExitCode::from(EXIT_LIVENESS);
    }
    ExitCode::SUCCESS
}

fn framework_name(cfg: &ExperimentConfig) -> &'static str {
    match cfg.framework {
        pirate::config::Framework::Pirate => "pirate",
        pirate::config::Framework::Learningchain => "learningchain",
    }
}

fn sweep(config: &Path, out: Option<PathBuf>, seed: Option<u64>, want_plots: bool) -> ExitCode {
    let text = match read(config) {
        Ok(t) => t,
        Err(e) => return config_error(e),
    };
    let de = &mut serde_json::Deserializer::from_str(&text);
    let mut spec: SweepSpec = match serde_path_to_error::deserialize(de) {
        Ok(s) => s,
        Err(e) => return config_error(format!("{}: {}", e.path(), e.inner())),
    };
    if let Some(s) = seed {
        spec.base.seed = s;
    }
    let points = match experiment::sweep(&spec) {
        Ok(p) => p,
        Err(e) => return config_error(e),
    };
    let dir = out.unwrap_or_else(|| PathBuf::from("out"));
    let summary = match experiment::write_sweep(&dir, &points) {
        Ok(p) => p,
        Err(e) => return config_error(e),
    };
    for p in &points {
        println!("{} {}", p.label, p.status());
    }
    println!("summary {}", summary.display());
    if want_plots {
        let files: Vec<PathBuf> = (0..points.len())
            .filter(|&i| points[i].outcome.is_ok())
            .map(|i| dir.join(format!("{}.csv", experiment::point_stem(i))))
            .collect();
        plots(&dir, &files);
    }
    ExitCode::SUCCESS
}

fn report_cmd(files: &[PathBuf], out: Option<PathBuf>, want_plots: bool) -> ExitCode {
    if files.is_empty() {
        return config_error("report needs at least one metrics file");
    }
    let (series, warnings) = report::load(files);
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    if series.is_empty() {
        return config_error("no readable metrics files");
    }
    print!("{}", report::table(&series));
    if want_plots {
        let dir = out.unwrap_or_else(|| PathBuf::from("."));
        match report::write_plots(&dir, &series) {
            Ok(paths) => paths.iter().for_each(|p| println!("plot {}", p.display())),
            Err(e) => eprintln!("could not write plots: {e}"),
        }
    }
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.verb {
        Verb::Run { config, out, seed, plots } => run(&config, out, seed, plots),
        Verb::Sweep { config, out, seed, plots } => sweep(&config, out, seed, plots),
        Verb::Report { files, out, plots } => report_cmd(&files, out, plots),
    }
}
