//! Artifact emission: metrics CSV, coverage graymaps, Q-map heatmaps,
//! overlay images, SVG curves and the JSON run manifest. All outputs are
//! byte-deterministic for identical inputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use thiserror::Error;

use super::metrics::{decisions_to_csv, metrics_to_csv, DecisionRow, MetricsRow, VisitationMask};
use crate::env::Action;
use crate::qmap::QMapTensor;

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), ArtifactError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|source| ArtifactError::Io { path: parent.to_path_buf(), source })?;
    }
    std::fs::write(path, bytes).map_err(|source| ArtifactError::Io { path: path.to_path_buf(), source })
}

/// One P2 graymap per action, values clipped to [0,1] and scaled to 0..255.
pub fn qmap_heatmap_pgm(tensor: &QMapTensor, action: Action) -> String {
    let mut out = format!("P2\n{} {}\n255\n", tensor.wq, tensor.hq);
    for y in 0..tensor.hq {
        let line: Vec<String> = (0..tensor.wq)
            .map(|x| {
                let v = tensor.get(y, x, action).clamp(0.0, 1.0);
                format!("{}", (v * 255.0).round() as u32)
            })
            .collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

/// P3 overlay of two masks: `green` vs `red`, overlap drawn yellow.
pub fn coverage_overlay_ppm(green: &VisitationMask, red: &VisitationMask) -> String {
    assert_eq!((green.w, green.h), (red.w, red.h), "mask dimensions must match");
    let mut out = format!("P3\n{} {}\n255\n", green.w, green.h);
    for row in 0..green.h {
        let mut line = Vec::with_capacity(green.w);
        for col in 0..green.w {
            let g = green.is_visited(col, row);
            let r = red.is_visited(col, row);
            line.push(match (g, r) {
                (true, true) => "255 255 0",
                (true, false) => "0 200 0",
                (false, true) => "220 0 0",
                (false, false) => "0 0 0",
            });
        }
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

/// Minimal SVG polyline chart of (x, y) series.
pub fn svg_line_chart(series: &[(&str, &str, Vec<(f64, f64)>)], title: &str) -> String {
    let (w, h, pad) = (800.0, 400.0, 50.0);
    let mut all_x = Vec::new();
    let mut all_y = Vec::new();
    for (_, _, pts) in series {
        for (x, y) in pts {
            if x.is_finite() && y.is_finite() {
                all_x.push(*x);
                all_y.push(*y);
            }
        }
    }
    let (x0, x1) = bounds(&all_x);
    let (y0, y1) = bounds(&all_y);
    let sx = |x: f64| pad + (x - x0) / (x1 - x0).max(1e-12) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - y0) / (y1 - y0).max(1e-12) * (h - 2.0 * pad);
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" font-family=\"monospace\" font-size=\"16\">{title}</text>\n",
        pad
    );
    out.push_str(&format!(
        "<line x1=\"{pad}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{}\" stroke=\"black\"/>\n\
         <text x=\"{pad}\" y=\"{}\" font-family=\"monospace\" font-size=\"11\">{}</text>\n\
         <text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"11\">{}</text>\n",
        h - pad,
        w - pad,
        h - pad,
        h - pad,
        h - pad + 24.0,
        fmt_tick(x0),
        w - pad - 40.0,
        h - pad + 24.0,
        fmt_tick(x1),
    ));
    out.push_str(&format!(
        "<text x=\"4\" y=\"{}\" font-family=\"monospace\" font-size=\"11\">{}</text>\n\
         <text x=\"4\" y=\"{}\" font-family=\"monospace\" font-size=\"11\">{}</text>\n",
        h - pad,
        fmt_tick(y0),
        pad,
        fmt_tick(y1),
    ));
    for (name, color, pts) in series {
        if pts.is_empty() {
            continue;
        }
        let path: Vec<String> = pts
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y)))
            .collect();
        out.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            path.join(" ")
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"12\" fill=\"{color}\">{name}</text>\n",
            w - pad - 160.0,
            pad + 16.0 * (1.0 + series.iter().position(|(n, _, _)| n == name).unwrap() as f64),
        ));
    }
    out.push_str("</svg>\n");
    out
}

fn bounds(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 1.0);
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 1000.0 {
        format!("{:.0}", v)
    } else {
        format!("{v:.2}")
    }
}

/// Deterministic run manifest (sorted keys, no timestamps).
pub fn manifest_json(
    config: &BTreeMap<String, String>,
    seed: u64,
    summary: &BTreeMap<String, Value>,
) -> String {
    let cfg: BTreeMap<&str, &str> = config.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
    let value = json!({
        "artifact": "qmaplab",
        "version": env!("CARGO_PKG_VERSION"),
        "seed": seed,
        "config": cfg,
        "summary": summary,
    });
    let mut out = serde_json::to_string_pretty(&value).expect("manifest serializes");
    out.push('\n');
    out
}

pub struct ArtifactSet<'a> {
    pub rows: &'a [MetricsRow],
    pub mask: &'a VisitationMask,
    pub decisions: Option<&'a [DecisionRow]>,
    pub learned_qmap: Option<&'a QMapTensor>,
    pub truth_qmap: Option<&'a QMapTensor>,
    pub config: &'a BTreeMap<String, String>,
    pub seed: u64,
    pub summary: BTreeMap<String, Value>,
}

/// Writes the full artifact set under `outdir`; returns the paths written.
pub fn emit_artifacts(set: &ArtifactSet<'_>, outdir: &Path) -> Result<Vec<PathBuf>, ArtifactError> {
    let mut written = Vec::new();
    let emit = |name: &str, bytes: &[u8]| -> Result<PathBuf, ArtifactError> {
        let path = outdir.join(name);
        write_file(&path, bytes)?;
        Ok(path)
    };
    written.push(emit("metrics.csv", metrics_to_csv(set.rows).as_bytes())?);
    written.push(emit("mask.pgm", set.mask.to_pgm().as_bytes())?);
    if let Some(decisions) = set.decisions {
        written.push(emit("decisions.csv", decisions_to_csv(decisions).as_bytes())?);
    }
    if let Some(t) = set.learned_qmap {
        for action in Action::ALL {
            let name = format!("qmap_learned_a{}.pgm", action.code());
            written.push(emit(&name, qmap_heatmap_pgm(t, action).as_bytes())?);
        }
    }
    if let Some(t) = set.truth_qmap {
        for action in Action::ALL {
            let name = format!("qmap_truth_a{}.pgm", action.code());
            written.push(emit(&name, qmap_heatmap_pgm(t, action).as_bytes())?);
        }
    }
    written.push(emit(
        "manifest.json",
        manifest_json(set.config, set.seed, &set.summary).as_bytes(),
    )?);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heatmap_scales_values() {
        let mut t = QMapTensor::zeros(1, 3);
        t.set(0, 0, Action::Noop, 1.0);
        t.set(0, 1, Action::Noop, 0.5);
        t.set(0, 2, Action::Noop, -2.0);
        let pgm = qmap_heatmap_pgm(&t, Action::Noop);
        assert_eq!(pgm, "P2\n3 1\n255\n255 128 0\n");
    }

    #[test]
    fn overlay_distinguishes_sources() {
        let mut a = VisitationMask::new(2, 1);
        let mut b = VisitationMask::new(2, 1);
        a.visit(0, 0);
        b.visit(0, 0);
        b.visit(1, 0);
        let ppm = coverage_overlay_ppm(&a, &b);
        assert!(ppm.contains("255 255 0"));
        assert!(ppm.contains("220 0 0"));
    }

    #[test]
    fn manifest_is_deterministic() {
        let mut cfg = BTreeMap::new();
        cfg.insert("mode".to_string(), "qmap_dqn".to_string());
        let mut summary = BTreeMap::new();
        summary.insert("flags".to_string(), serde_json::json!(3));
        let a = manifest_json(&cfg, 7, &summary);
        let b = manifest_json(&cfg, 7, &summary);
        assert_eq!(a, b);
        assert!(a.contains("\"seed\": 7"));
    }

    #[test]
    fn empty_rows_give_header_only_csv() {
        let csv = metrics_to_csv(&[]);
        assert_eq!(csv, format!("{}\n", super::super::metrics::METRICS_HEADER));
    }
}
