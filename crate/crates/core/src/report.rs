//! Comparison tables and SVG plots over metrics files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::Framework;
use crate::experiment::Manifest;
use crate::metrics::{from_csv, MetricsRow};

/// One loaded metrics file with whatever its manifest tells us.
#[derive(Clone, Debug)]
pub struct Series {
    pub name: String,
    pub rows: Vec<MetricsRow>,
    pub framework: Option<Framework>,
    pub n: Option<usize>,
    pub payload_bytes: Option<u64>,
}

impl Series {
    pub fn mean_iteration_time(&self) -> f64 {
        let mut prev = 0.0;
        let mut total = 0.0;
        for r in &self.rows {
            total += r.simulated_time_s - prev;
            prev = r.simulated_time_s;
        }
        total / self.rows.len().max(1) as f64
    }

    pub fn final_storage(&self) -> u64 {
        self.rows.last().map_or(0, |r| r.per_node_storage_bytes)
    }

    /// Largest storage increase between consecutive rows.
    pub fn max_storage_step(&self) -> i128 {
        self.rows
            .windows(2)
            .map(|w| w[1].per_node_storage_bytes as i128 - w[0].per_node_storage_bytes as i128)
            .max()
            .unwrap_or(0)
    }

    fn label(&self) -> String {
        match (self.framework, self.n, self.payload_bytes) {
            (Some(f), Some(n), Some(p)) => format!("{} n={n} {}", fw_name(f), size(p)),
            _ => self.name.clone(),
        }
    }
}

fn size(bytes: u64) -> String {
    if bytes >= 1_000_000 && bytes.is_multiple_of(1_000_000) {
        format!("{}MB", bytes / 1_000_000)
    } else {
        format!("{bytes}B")
    }
}

fn fw_name(f: Framework) -> &'static str {
    match f {
        Framework::Pirate => "pirate",
        Framework::Learningchain => "learningchain",
    }
}

/// Sibling manifest path for `x.csv`: `x.manifest.json`.
pub fn manifest_path(metrics: &Path) -> PathBuf {
    metrics.with_extension("manifest.json")
}

/// Loads every readable file; problems come back as warnings.
pub fn load(paths: &[PathBuf]) -> (Vec<Series>, Vec<String>) {
    let mut out = Vec::new();
    let mut warnings = Vec::new();
    for p in paths {
        let name = p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned());
        let rows = match fs::read_to_string(p).map_err(|e| e.to_string()).and_then(|t| from_csv(&t)) {
            Ok(r) => r,
            Err(e) => {
                warnings.push(format!("skipping {}: {e}", p.display()));
                continue;
            }
        };
        if rows.is_empty() {
            warnings.push(format!("skipping {}: no rows", p.display()));
            continue;
        }
        let m = Manifest::load(&manifest_path(p)).ok();
        out.push(Series {
            name,
            rows,
            framework: m.as_ref().map(|m| m.config.framework),
            n: m.as_ref().map(|m| m.config.n),
            payload_bytes: m.as_ref().map(|m| m.config.payload_bytes),
        });
    }
    (out, warnings)
}

/// Plain-text table, one column per series.
pub fn table(series: &[Series]) -> String {
    let mut out = String::new();
    let width = series.iter().map(|s| s.label().len()).max().unwrap_or(0).max(14);
    let _ = write!(out, "{:<24}", "metric");
    for s in series {
        let _ = write!(out, " {:>width$}", s.label());
    }
    out.push('\n');
    let mut line = |name: &str, f: &dyn Fn(&Series) -> String| {
        let _ = write!(out, "{name:<24}");
        for s in series {
            let _ = write!(out, " {:>width$}", f(s));
        }
        out.push('\n');
    };
    line("iterations", &|s| s.rows.len().to_string());
    line("mean iteration time s", &|s| format!("{:.3}", s.mean_iteration_time()));
    line("first storage MB", &|s| format!("{:.1}", s.rows[0].per_node_storage_bytes as f64 / 1e6));
    line("final storage MB", &|s| format!("{:.1}", s.final_storage() as f64 / 1e6));
    line("max storage step MB", &|s| format!("{:.1}", s.max_storage_step() as f64 / 1e6));
    line("final loss", &|s| format!("{:.4e}", s.rows.last().map_or(f64::NAN, |r| r.global_loss)));
    out
}

const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// Minimal line chart; each series is a list of (x, y) points.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let (w, h, ml, mr, mt, mb) = (640.0, 400.0, 70.0, 160.0, 30.0, 50.0);
    let pts = series.iter().flat_map(|s| s.1.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, 0.0_f64, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y1) = (0.0, 1.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let pw = w - ml - mr;
    let ph = h - mt - mb;
    let sx = |x: f64| ml + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| mt + ph - (y - y0) / (y1 - y0) * ph;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#, ml + pw / 2.0, esc(title));
    let _ = writeln!(s, r#"<line x1="{ml}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, mt + ph, ml + pw, mt + ph);
    let _ = writeln!(s, r#"<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{}" stroke="black"/>"#, mt + ph);
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, sx(xv), mt + ph + 16.0, tick(xv));
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, ml - 4.0, sy(yv) + 4.0, tick(yv));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, ml + pw / 2.0, h - 10.0, esc(x_label));
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        mt + ph / 2.0,
        mt + ph / 2.0,
        esc(y_label)
    );
    for (i, (name, p)) in series.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        let path: Vec<String> = p.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{}"/>"#, path.join(" "));
        let ly = mt + 14.0 * i as f64 + 10.0;
        let _ = writeln!(s, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{c}" stroke-width="2"/>"#, w - mr + 10.0, w - mr + 30.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, w - mr + 34.0, ly + 4.0, esc(name));
    }
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    if v.abs() >= 1e4 {
        format!("{v:.2e}")
    } else if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn storage_plot(series: &[Series]) -> String {
    let data: Vec<(String, Vec<(f64, f64)>)> = series
        .iter()
        .map(|s| {
            let p = s.rows.iter().map(|r| (r.iteration as f64, r.per_node_storage_bytes as f64 / 1e6)).collect();
            (s.label(), p)
        })
        .collect();
    line_chart("Per-node gradient storage", "iteration", "storage (MB)", &data)
}

/// Mean iteration time against n, one line per (framework, payload). Needs
/// manifests; series without one are left out.
pub fn iteration_time_plot(series: &[Series]) -> String {
    let mut groups: std::collections::BTreeMap<String, Vec<(f64, f64)>> = Default::default();
    for s in series {
        if let (Some(f), Some(n), Some(p)) = (s.framework, s.n, s.payload_bytes) {
            groups
                .entry(format!("{} {}", fw_name(f), size(p)))
                .or_default()
                .push((n as f64, s.mean_iteration_time()));
        }
    }
    let data: Vec<(String, Vec<(f64, f64)>)> = groups
        .into_iter()
        .map(|(k, mut v)| {
            v.sort_by(|a, b| a.0.total_cmp(&b.0));
            (k, v)
        })
        .collect();
    line_chart("Iteration time vs number of nodes", "n", "mean iteration time (s)", &data)
}

/// Writes both plots into `dir` and returns their paths.
pub fn write_plots(dir: &Path, series: &[Series]) -> std::io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let a = dir.join("storage.svg");
    let b = dir.join("iteration_time.svg");
    fs::write(&a, storage_plot(series))?;
    fs::write(&b, iteration_time_plot(series))?;
    Ok(vec![a, b])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(i: u64, t: f64, s: u64) -> MetricsRow {
        MetricsRow {
            iteration: i,
            simulated_time_s: t,
            per_node_storage_bytes: s,
            global_loss: 1.0,
            committed_blocks: 0,
            rejected_blocks: 0,
            evictions: 0,
        }
    }

    fn series(name: &str, rows: Vec<MetricsRow>) -> Series {
        Series {
            name: name.into(),
            rows,
            framework: None,
            n: None,
            payload_bytes: None,
        }
    }

    #[test]
    fn table_shows_constant_and_linear_columns() {
        let flat = series("flat", (1..=3).map(|i| row(i, i as f64, 56_000_000)).collect());
        let lin = series("linear", (1..=3).map(|i| row(i, 2.0 * i as f64, i * 7_000_000)).collect());
        let t = table(&[flat, lin]);
        assert!(t.contains("flat") && t.contains("linear"));
        let step = t.lines().find(|l| l.starts_with("max storage step")).unwrap();
        assert!(step.contains("0.0") && step.contains("7.0"));
        let time = t.lines().find(|l| l.starts_with("mean iteration time")).unwrap();
        assert!(time.contains("1.000") && time.contains("2.000"));
    }

    #[test]
    fn single_file_gives_single_column() {
        let t = table(&[series("only", vec![row(1, 1.0, 1)])]);
        assert_eq!(t.lines().next().unwrap().split_whitespace().count(), 2);
    }

    #[test]
    fn empty_and_malformed_files_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let empty = dir.path().join("empty.csv");
        let bad = dir.path().join("bad.csv");
        fs::write(&empty, format!("{}\n", crate::metrics::CSV_HEADER)).unwrap();
        fs::write(&bad, "nonsense\n").unwrap();
        let (s, w) = load(&[empty, bad]);
        assert!(s.is_empty());
        assert_eq!(w.len(), 2);
    }

    #[test]
    fn svg_is_well_formed() {
        let svg = storage_plot(&[series("a<b", vec![row(1, 1.0, 1), row(2, 2.0, 2)])]);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a&lt;b"));
        assert!(iteration_time_plot(&[]).contains("</svg>"));
    }
}
