//! Run dispatch, manifests, replay and parameter sweeps.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest as _, Sha256};

use crate::config::{ConfigError, ExperimentConfig, Framework};
use crate::metrics::{hex, to_csv, RunReport};
use crate::{baseline, world::World};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Runs one scenario with whichever framework the config names.
pub fn run(cfg: &ExperimentConfig) -> Result<RunReport, String> {
    cfg.validate().map_err(|e| e.to_string())?;
    match cfg.framework {
        Framework::Pirate => World::run(cfg),
        Framework::Learningchain => baseline::run(cfg),
    }
}

/// Everything needed to reproduce a run bit for bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub trace_digest: String,
    pub metrics_sha256: String,
    pub liveness_failure: Option<String>,
}

impl Manifest {
    pub fn new(cfg: &ExperimentConfig, report: &RunReport) -> Self {
        Manifest {
            version: VERSION.to_string(),
            seed: cfg.seed,
            config: cfg.clone(),
            trace_digest: report.trace_digest.clone(),
            metrics_sha256: hex(&Sha256::digest(to_csv(&report.rows).as_bytes())),
            liveness_failure: report.liveness_failure.clone(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        m.config.validate()?;
        Ok(m)
    }
}

/// Outcome of re-running a manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct Replay {
    pub report: RunReport,
    pub trace_matches: bool,
    pub metrics_match: bool,
}

impl Replay {
    pub fn identical(&self) -> bool {
        self.trace_matches && self.metrics_match
    }
}

pub fn replay(m: &Manifest) -> Result<Replay, String> {
    let report = run(&m.config)?;
    let again = Manifest::new(&m.config, &report);
    Ok(Replay {
        trace_matches: again.trace_digest == m.trace_digest,
        metrics_match: again.metrics_sha256 == m.metrics_sha256,
        report,
    })
}

fn io_err(path: &Path, e: std::io::Error) -> ConfigError {
    ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Paths of the files written for one run.
#[derive(Clone, Debug)]
pub struct RunFiles {
    pub metrics: PathBuf,
    pub manifest: PathBuf,
}

/// Writes `<stem>.csv` and `<stem>.manifest.json` under `dir`.
pub fn write_run(dir: &Path, stem: &str, cfg: &ExperimentConfig, report: &RunReport) -> Result<RunFiles, ConfigError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let metrics = dir.join(format!("{stem}.csv"));
    let manifest = dir.join(format!("{stem}.manifest.json"));
    fs::write(&metrics, to_csv(&report.rows)).map_err(|e| io_err(&metrics, e))?;
    let m = serde_json::to_string_pretty(&Manifest::new(cfg, report)).expect("manifest serializes");
    fs::write(&manifest, m).map_err(|e| io_err(&manifest, e))?;
    Ok(RunFiles { metrics, manifest })
}

/// One varied field: a dotted path into the config document and its values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Vary {
    pub field: String,
    pub values: Vec<Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub base: ExperimentConfig,
    pub vary: Vec<Vary>,
}

fn set_path(doc: &mut Value, field: &str, v: Value) -> Result<(), ConfigError> {
    let missing = || ConfigError::Invalid(format!("sweep field {field} does not exist in the config"));
    let mut cur = doc;
    for part in field.split('.') {
        cur = cur.as_object_mut().and_then(|o| o.get_mut(part)).ok_or_else(missing)?;
    }
    *cur = v;
    Ok(())
}

/// Expands the cross product of all varied fields into validated configs,
/// each labelled `field=value,...`.
pub fn expand(spec: &SweepSpec) -> Result<Vec<(String, ExperimentConfig)>, ConfigError> {
    if spec.vary.is_empty() {
        return Err(ConfigError::Invalid("sweep needs at least one varied field".into()));
    }
    let base = serde_json::to_value(&spec.base).expect("config serializes");
    let mut points: Vec<(Vec<String>, Value)> = vec![(Vec::new(), base)];
    for vary in &spec.vary {
        if vary.values.is_empty() {
            return Err(ConfigError::Invalid(format!("sweep field {} has no values", vary.field)));
        }
        let mut next = Vec::with_capacity(points.len() * vary.values.len());
        for (label, doc) in &points {
            for v in &vary.values {
                let mut d = doc.clone();
                set_path(&mut d, &vary.field, v.clone())?;
                let mut l = label.clone();
                let shown = v.as_str().map_or_else(|| v.to_string(), str::to_string);
                l.push(format!("{}={shown}", vary.field));
                next.push((l, d));
            }
        }
        points = next;
    }
    points
        .into_iter()
        .map(|(l, d)| Ok((l.join(","), ExperimentConfig::from_value(d)?)))
        .collect()
}

/// Result of one sweep point; failures are kept, not propagated.
#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub label: String,
    pub config: ExperimentConfig,
    pub outcome: Result<RunReport, String>,
}

impl SweepPoint {
    pub fn status(&self) -> String {
        match &self.outcome {
            Ok(r) => match &r.liveness_failure {
                None => "ok".into(),
                Some(f) => format!("liveness: {f}"),
            },
            Err(e) => format!("error: {e}"),
        }
    }
}

/// Runs every point, in parallel, in label order.
pub fn sweep(spec: &SweepSpec) -> Result<Vec<SweepPoint>, ConfigError> {
    let points = expand(spec)?;
    Ok(points
        .into_par_iter()
        .map(|(label, config)| {
            let outcome = run(&config);
            SweepPoint { label, config, outcome }
        })
        .collect())
}

pub const SUMMARY_HEADER: &str = "point,framework,n,c,payload_bytes,iterations,mean_iteration_time_s,final_storage_bytes,final_loss,status";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn summary_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for p in points {
        let fw = match p.config.framework {
            Framework::Pirate => "pirate",
            Framework::Learningchain => "learningchain",
        };
        let (mean, storage, loss) = match &p.outcome {
            Ok(r) => (
                format!("{:.6}", r.mean_iteration_time()),
                r.final_storage().to_string(),
                format!("{:.6e}", r.final_loss),
            ),
            Err(_) => (String::new(), String::new(), String::new()),
        };
        out.push_str(&format!(
            "{},{fw},{},{},{},{},{mean},{storage},{loss},{}\n",
            csv_field(&p.label),
            p.config.n,
            p.config.committee_size(),
            p.config.payload_bytes,
            p.config.iterations,
            csv_field(&p.status()),
        ));
    }
    out
}

/// File stem for a sweep point.
pub fn point_stem(index: usize) -> String {
    format!("point-{index:03}")
}

/// Writes per-point metrics and manifests plus `summary.csv`.
pub fn write_sweep(dir: &Path, points: &[SweepPoint]) -> Result<PathBuf, ConfigError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    for (i, p) in points.iter().enumerate() {
        if let Ok(r) = &p.outcome {
            write_run(dir, &point_stem(i), &p.config, r)?;
        }
    }
    let path = dir.join("summary.csv");
    fs::write(&path, summary_csv(points)).map_err(|e| io_err(&path, e))?;
    Ok(path)
}
