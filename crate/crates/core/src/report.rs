//! Run artifacts: metric CSVs, summaries, manifests, config files and SVG
//! plots.
//!
//! Every file written for a run carries the hash of its [`RunManifest`]: a
//! `# manifest <hash>` first line in CSVs, a `manifest` field in JSON, and a
//! `<metadata>` element in SVGs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::metrics::MetricsRecord;
use crate::train::{RunResult, TrainConfig};

/// Column order of `metrics.csv`.
pub const METRICS_COLUMNS: [&str; 6] = [
    "iteration",
    "modes_captured",
    "hq_fraction",
    "mode_kl",
    "ivo_mse",
    "wall_seconds",
];

/// Configuration snapshot identifying a run or a batch of runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: TrainConfig,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    /// First 12 hex digits of the SHA-256 of the command, config and seeds.
    pub hash: String,
}

impl RunManifest {
    pub fn new(command: &str, config: &TrainConfig, seeds: &[u64], out_dir: &Path) -> Result<Self> {
        let hash = content_hash(command, config, seeds)?;
        Ok(Self {
            command: command.into(),
            config: config.clone(),
            seeds: seeds.to_vec(),
            out_dir: out_dir.into(),
            hash,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// Hash of everything that determines a run's results. The output directory
/// is left out, so moving a run does not change its identity.
pub fn content_hash(command: &str, config: &TrainConfig, seeds: &[u64]) -> Result<String> {
    let canonical = serde_json::to_string(&(command, config, seeds))?;
    let digest = Sha256::digest(canonical.as_bytes());
    Ok(digest.iter().take(6).map(|b| format!("{b:02x}")).collect())
}

/// 17 significant digits: enough for any `f64` to parse back to itself.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn emit_metrics_csv(records: &[MetricsRecord], manifest: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(h) = manifest {
        writeln!(out, "# manifest {h}").unwrap();
    }
    writeln!(out, "{}", METRICS_COLUMNS.join(",")).unwrap();
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.iteration,
            r.modes_captured,
            format_f64(r.hq_fraction),
            format_f64(r.mode_kl),
            r.ivo_mse.map(format_f64).unwrap_or_default(),
            format_f64(r.wall_seconds),
        )
        .unwrap();
    }
    out
}

/// Inverse of [`emit_metrics_csv`]. Lines starting with `#` are skipped; an
/// empty `ivo_mse` field means no value.
pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRecord>> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty());
    match lines.next() {
        Some((_, header)) if header.trim() == METRICS_COLUMNS.join(",") => {}
        Some((n, header)) => {
            return Err(Error::Parse(format!(
                "line {}: expected header `{}`, found `{header}`",
                n + 1,
                METRICS_COLUMNS.join(",")
            )))
        }
        None => return Err(Error::Parse("metrics CSV has no header".into())),
    }
    lines
        .map(|(n, line)| {
            let fields: Vec<&str> = line.trim().split(',').collect();
            if fields.len() != METRICS_COLUMNS.len() {
                return Err(Error::Parse(format!(
                    "line {}: {} fields, expected {}",
                    n + 1,
                    fields.len(),
                    METRICS_COLUMNS.len()
                )));
            }
            let bad = |col: usize| {
                Error::Parse(format!(
                    "line {}: bad `{}` value `{}`",
                    n + 1,
                    METRICS_COLUMNS[col],
                    fields[col]
                ))
            };
            let float = |col: usize| fields[col].parse::<f64>().map_err(|_| bad(col));
            Ok(MetricsRecord {
                iteration: fields[0].parse().map_err(|_| bad(0))?,
                modes_captured: fields[1].parse().map_err(|_| bad(1))?,
                hq_fraction: float(2)?,
                mode_kl: float(3)?,
                ivo_mse: if fields[4].is_empty() { None } else { Some(float(4)?) },
                wall_seconds: float(5)?,
            })
        })
        .collect()
}

/// Contents of `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub manifest: String,
    pub label: String,
    pub seed: u64,
    pub iterations: usize,
    pub batch: usize,
    pub final_metrics: MetricsRecord,
    pub avg_iteration_seconds: f64,
}

impl Summary {
    pub fn from_run(run: &RunResult, manifest: &str) -> Self {
        Self {
            manifest: manifest.into(),
            label: run.config.label(),
            seed: run.config.seed,
            iterations: run.config.iterations,
            batch: run.config.batch,
            final_metrics: run.last().clone(),
            avg_iteration_seconds: run.avg_iteration_seconds,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Metrics of one configuration pooled over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedAggregate {
    pub runs: usize,
    pub mean_modes: f64,
    /// Middle value, or the mean of the two middle values for an even count.
    pub median_modes: f64,
    pub mean_hq: f64,
    pub mean_kl: f64,
}

impl SeedAggregate {
    /// `None` for an empty slice.
    pub fn of(records: &[&MetricsRecord]) -> Option<Self> {
        if records.is_empty() {
            return None;
        }
        let n = records.len() as f64;
        let mean = |f: &dyn Fn(&MetricsRecord) -> f64| records.iter().map(|r| f(r)).sum::<f64>() / n;
        Some(Self {
            runs: records.len(),
            mean_modes: mean(&|r| r.modes_captured as f64),
            median_modes: median(records.iter().map(|r| r.modes_captured as f64).collect()),
            mean_hq: mean(&|r| r.hq_fraction),
            mean_kl: mean(&|r| r.mode_kl),
        })
    }
}

pub fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => values[n / 2],
        _ => 0.5 * (values[n / 2 - 1] + values[n / 2]),
    }
}

/// Parses a flat `key = value` file. Blank lines and lines starting with `#`
/// are ignored; a repeated key is an error.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, found `{line}`", n + 1)))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", n + 1)));
        }
        if out.insert(key.to_string(), value.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: `{key}` set twice", n + 1)));
        }
    }
    Ok(out)
}

/// Applies parsed settings to `config` in key order.
pub fn apply_settings(config: &mut TrainConfig, settings: &BTreeMap<String, String>) -> Result<()> {
    for (k, v) in settings {
        config.set(k, v)?;
    }
    Ok(())
}

const REAL_COLOR: &str = "#2ca02c";
const FAKE_COLOR: &str = "#1f77b4";
const PLOT_SIZE: f64 = 480.0;
const MARGIN: f64 = 48.0;

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn around(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let bounds = |it: &mut dyn Iterator<Item = f64>| {
            let (lo, hi) = it
                .filter(|v| v.is_finite())
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            if lo > hi {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 {
                (lo - 0.5, hi + 0.5)
            } else {
                let pad = 0.05 * (hi - lo);
                (lo - pad, hi + pad)
            }
        };
        let (x0, x1) = bounds(&mut xs.clone());
        let (y0, y1) = bounds(&mut ys.clone());
        Self { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) / (self.x1 - self.x0) * (PLOT_SIZE - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        PLOT_SIZE - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (PLOT_SIZE - 2.0 * MARGIN)
    }
}

fn svg_open(out: &mut String, title: &str, manifest: Option<&str>) {
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{PLOT_SIZE}" height="{PLOT_SIZE}" viewBox="0 0 {PLOT_SIZE} {PLOT_SIZE}">"#
    )
    .unwrap();
    if let Some(h) = manifest {
        writeln!(out, "<metadata>manifest {}</metadata>", xml_escape(h)).unwrap();
    }
    writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(
        out,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="14">{}</text>"#,
        PLOT_SIZE / 2.0,
        xml_escape(title)
    )
    .unwrap();
}

/// Scatter of the first two coordinates: one green circle per real row and
/// one blue circle per generated row.
pub fn scatter_svg(real: &Matrix, generated: &Matrix, title: &str, manifest: Option<&str>) -> String {
    let rows = |m: &Matrix| {
        (0..m.rows())
            .map(|i| (m.get(i, 0), if m.cols() > 1 { m.get(i, 1) } else { 0.0 }))
            .collect::<Vec<_>>()
    };
    let (r, g) = (rows(real), rows(generated));
    let all = r.iter().chain(&g);
    let frame = Frame::around(all.clone().map(|p| p.0), all.map(|p| p.1));

    let mut out = String::new();
    svg_open(&mut out, title, manifest);
    for (class, color, points) in [("real", REAL_COLOR, &r), ("generated", FAKE_COLOR, &g)] {
        writeln!(out, r#"<g class="{class}" fill="{color}" fill-opacity="0.6">"#).unwrap();
        for &(x, y) in points.iter() {
            writeln!(
                out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="1.5"/>"#,
                frame.px(x),
                frame.py(y)
            )
            .unwrap();
        }
        writeln!(out, "</g>").unwrap();
    }
    out.push_str("</svg>\n");
    out
}

/// One line of a [`line_plot_svg`].
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

/// Metric-versus-x line plot with a circle marker at every point.
pub fn line_plot_svg(title: &str, x_label: &str, y_label: &str, series: &[Series], manifest: Option<&str>) -> String {
    let pts = series.iter().flat_map(|s| s.points.iter());
    let frame = Frame::around(pts.clone().map(|p| p.0), pts.map(|p| p.1));

    let mut out = String::new();
    svg_open(&mut out, title, manifest);
    let (lo, hi) = (MARGIN, PLOT_SIZE - MARGIN);
    writeln!(out, r#"<path d="M{lo} {lo} V{hi} H{hi}" stroke="black" fill="none"/>"#).unwrap();
    for (x, y, label, anchor) in [
        (PLOT_SIZE / 2.0, PLOT_SIZE - 12.0, x_label, "middle"),
        (12.0, PLOT_SIZE / 2.0, y_label, "start"),
    ] {
        writeln!(
            out,
            r#"<text x="{x}" y="{y}" text-anchor="{anchor}" font-family="sans-serif" font-size="12">{}</text>"#,
            xml_escape(label)
        )
        .unwrap();
    }
    for (x, y, v, anchor) in [
        (lo, hi + 14.0, frame.x0, "start"),
        (hi, hi + 14.0, frame.x1, "end"),
        (lo - 4.0, hi, frame.y0, "end"),
        (lo - 4.0, lo + 10.0, frame.y1, "end"),
    ] {
        writeln!(
            out,
            r#"<text x="{x}" y="{y}" text-anchor="{anchor}" font-family="sans-serif" font-size="10">{v:.3}</text>"#
        )
        .unwrap();
    }
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        writeln!(
            out,
            r#"<g class="series" data-name="{}" stroke="{color}" fill="{color}">"#,
            xml_escape(&s.name)
        )
        .unwrap();
        let path: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", frame.px(x), frame.py(y)))
            .collect();
        writeln!(out, r#"<polyline points="{}" fill="none"/>"#, path.join(" ")).unwrap();
        for &(x, y) in &s.points {
            writeln!(
                out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="2.5"/>"#,
                frame.px(x),
                frame.py(y)
            )
            .unwrap();
        }
        writeln!(
            out,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" stroke="none">{}</text>"#,
            hi - 100.0,
            lo + 14.0 * (k as f64 + 1.0),
            xml_escape(&s.name)
        )
        .unwrap();
        writeln!(out, "</g>").unwrap();
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(i: usize, ivo: Option<f64>) -> MetricsRecord {
        MetricsRecord {
            iteration: i,
            modes_captured: 3,
            hq_fraction: 1.0 / 3.0,
            mode_kl: std::f64::consts::LN_2 * 1e-7,
            ivo_mse: ivo,
            wall_seconds: 12.345678901234567,
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let records = vec![
            record(0, None),
            record(500, Some(0.1 + 0.2)),
            record(1000, Some(f64::MIN_POSITIVE)),
        ];
        let text = emit_metrics_csv(&records, Some("abc123"));
        assert!(
            text.starts_with("# manifest abc123\niteration,modes_captured,hq_fraction,mode_kl,ivo_mse,wall_seconds\n")
        );
        assert_eq!(parse_metrics_csv(&text).unwrap(), records);
    }

    #[test]
    fn csv_errors_name_the_line() {
        let err = parse_metrics_csv("iteration,modes_captured,hq_fraction,mode_kl,ivo_mse,wall_seconds\n1,2,x,0,,0\n")
            .unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(parse_metrics_csv("a,b\n").is_err());
        assert!(parse_metrics_csv("").is_err());
    }

    #[test]
    fn hash_ignores_output_dir() {
        let c = TrainConfig::default();
        let a = RunManifest::new("train", &c, &[0], Path::new("/a")).unwrap();
        let b = RunManifest::new("train", &c, &[0], Path::new("/b")).unwrap();
        assert_eq!(a.hash, b.hash);
        assert_eq!(a.hash.len(), 12);
        let other = RunManifest::new("train", &c, &[1], Path::new("/a")).unwrap();
        assert_ne!(a.hash, other.hash);
    }

    #[test]
    fn aggregates() {
        let rs: Vec<MetricsRecord> = [8, 1, 6, 8]
            .iter()
            .map(|&m| MetricsRecord {
                modes_captured: m,
                ..record(0, None)
            })
            .collect();
        let a = SeedAggregate::of(&rs.iter().collect::<Vec<_>>()).unwrap();
        assert_eq!((a.runs, a.mean_modes, a.median_modes), (4, 5.75, 7.0));
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert!(SeedAggregate::of(&[]).is_none());
    }

    #[test]
    fn config_text() {
        let m = parse_config_text("# comment\n\nbenchmark = grid\n batch=64 \n").unwrap();
        assert_eq!(m["benchmark"], "grid");
        assert_eq!(m["batch"], "64");
        assert!(parse_config_text("batch 64")
            .unwrap_err()
            .to_string()
            .contains("line 1"));
        assert!(parse_config_text("a = 1\na = 2").is_err());
        let mut c = TrainConfig::default();
        apply_settings(&mut c, &m).unwrap();
        assert_eq!((c.batch, c.benchmark), (64, crate::data::Benchmark::Grid));
    }

    #[test]
    fn scatter_has_one_marker_per_sample() {
        let real = Matrix::from_fn(7, 2, |i, j| (i + j) as f64);
        let fake = Matrix::from_fn(5, 2, |i, j| (i * j) as f64 * 0.5);
        let svg = scatter_svg(&real, &fake, "a < b", Some("h"));
        assert_eq!(svg.matches("<circle").count(), 12);
        assert!(svg.contains("<metadata>manifest h</metadata>"));
        assert!(svg.contains("a &lt; b"));
    }

    #[test]
    fn line_plot_markers() {
        let s = vec![
            Series {
                name: "gan".into(),
                points: vec![(64.0, 1.0), (128.0, 2.0)],
            },
            Series {
                name: "gdpp".into(),
                points: vec![(64.0, 3.0), (128.0, 8.0), (256.0, 8.0)],
            },
        ];
        let svg = line_plot_svg("modes", "batch", "modes", &s, None);
        assert_eq!(svg.matches("<circle").count(), 5);
        assert_eq!(svg.matches("<polyline").count(), 2);
    }
}
