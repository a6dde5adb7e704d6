//! Report emission: a long-format metrics CSV (phase,metric,key,value) that
//! round-trips exactly, a summary JSON, and standalone SVG line charts for
//! accuracy-vs-epoch and accuracy-vs-epsilon.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::train::{AttackMetrics, CorruptionMetrics, EpochMetrics, MetricsReport};

// ── CSV ──────────────────────────────────────────────────────────────────

/// Serialize to the long format `phase,metric,key,value`. Values use the
/// shortest f64 representation, which parses back bit-exactly.
pub fn metrics_to_csv(report: &MetricsReport) -> String {
    let mut out = String::from("phase,metric,key,value\n");
    for e in &report.epochs {
        let _ = writeln!(out, "train,loss,epoch={},{}", e.epoch, e.train_loss);
        let _ = writeln!(out, "train,penalty,epoch={},{}", e.epoch, e.penalty);
        let _ = writeln!(out, "train,wall_secs,epoch={},{}", e.epoch, e.wall_secs);
        if let Some(acc) = e.clean_accuracy {
            let _ = writeln!(out, "eval,clean_accuracy,epoch={},{}", e.epoch, acc);
        }
    }
    if let Some(acc) = report.final_clean_accuracy {
        let _ = writeln!(out, "eval,clean_accuracy,final,{acc}");
    }
    for a in &report.attacks {
        let _ = writeln!(
            out,
            "attack,accuracy,eps={};steps={},{}",
            a.eps, a.steps, a.accuracy
        );
    }
    for c in &report.corruptions {
        let _ = writeln!(
            out,
            "corruption,accuracy,{}:{},{}",
            c.kind, c.severity, c.accuracy
        );
    }
    out
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| Error::Invalid(format!("bad numeric value '{s}'")))
}

/// Parse the long-format CSV back into a report; inverse of
/// [`metrics_to_csv`].
pub fn metrics_from_csv(csv: &str) -> Result<MetricsReport> {
    let mut epochs: BTreeMap<usize, EpochMetrics> = BTreeMap::new();
    let mut report = MetricsReport::default();
    for (lineno, line) in csv.lines().enumerate() {
        if lineno == 0 || line.is_empty() {
            continue;
        }
        let mut parts = line.splitn(4, ',');
        let (phase, metric, key, value) = match (
            parts.next(),
            parts.next(),
            parts.next(),
            parts.next(),
        ) {
            (Some(a), Some(b), Some(c), Some(d)) => (a, b, c, d),
            _ => return Err(Error::Invalid(format!("bad csv line {}", lineno + 1))),
        };
        let value = parse_f64(value)?;
        let epoch_of = |key: &str| -> Result<usize> {
            key.strip_prefix("epoch=")
                .and_then(|e| e.parse::<usize>().ok())
                .ok_or_else(|| Error::Invalid(format!("bad epoch key '{key}'")))
        };
        match (phase, metric) {
            ("train", m) => {
                let epoch = epoch_of(key)?;
                let e = epochs.entry(epoch).or_insert(EpochMetrics {
                    epoch,
                    train_loss: 0.0,
                    penalty: 0.0,
                    clean_accuracy: None,
                    wall_secs: 0.0,
                });
                match m {
                    "loss" => e.train_loss = value,
                    "penalty" => e.penalty = value,
                    "wall_secs" => e.wall_secs = value,
                    other => {
                        return Err(Error::Invalid(format!("unknown train metric '{other}'")))
                    }
                }
            }
            ("eval", "clean_accuracy") if key == "final" => {
                report.final_clean_accuracy = Some(value);
            }
            ("eval", "clean_accuracy") => {
                let epoch = epoch_of(key)?;
                let e = epochs.entry(epoch).or_insert(EpochMetrics {
                    epoch,
                    train_loss: 0.0,
                    penalty: 0.0,
                    clean_accuracy: None,
                    wall_secs: 0.0,
                });
                e.clean_accuracy = Some(value);
            }
            ("attack", "accuracy") => {
                let (eps_part, steps_part) = key
                    .split_once(';')
                    .ok_or_else(|| Error::Invalid(format!("bad attack key '{key}'")))?;
                let eps = parse_f64(
                    eps_part
                        .strip_prefix("eps=")
                        .ok_or_else(|| Error::Invalid(format!("bad attack key '{key}'")))?,
                )?;
                let steps = steps_part
                    .strip_prefix("steps=")
                    .and_then(|s| s.parse::<usize>().ok())
                    .ok_or_else(|| Error::Invalid(format!("bad attack key '{key}'")))?;
                report.attacks.push(AttackMetrics {
                    eps,
                    steps,
                    accuracy: value,
                });
            }
            ("corruption", "accuracy") => {
                let (kind, sev) = key
                    .rsplit_once(':')
                    .ok_or_else(|| Error::Invalid(format!("bad corruption key '{key}'")))?;
                let severity = sev
                    .parse::<u8>()
                    .map_err(|_| Error::Invalid(format!("bad severity '{sev}'")))?;
                report.corruptions.push(CorruptionMetrics {
                    kind: kind.to_string(),
                    severity,
                    accuracy: value,
                });
            }
            (p, m) => {
                return Err(Error::Invalid(format!("unknown row kind '{p},{m}'")));
            }
        }
    }
    report.epochs = epochs.into_values().collect();
    Ok(report)
}

/// Literal-column CSV for attack results (eps,steps,accuracy).
pub fn attacks_to_csv(attacks: &[AttackMetrics]) -> String {
    let mut out = String::from("eps,steps,accuracy\n");
    for a in attacks {
        let _ = writeln!(out, "{},{},{}", a.eps, a.steps, a.accuracy);
    }
    out
}

// ── SVG charts ───────────────────────────────────────────────────────────

const W: f64 = 640.0;
const H: f64 = 400.0;
const ML: f64 = 64.0;
const MR: f64 = 24.0;
const MT: f64 = 44.0;
const MB: f64 = 56.0;

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 100.0 || v.fract() == 0.0 && v.abs() < 1e6 {
        format!("{v}")
    } else {
        format!("{v:.4}")
            .trim_end_matches('0')
            .trim_end_matches('.')
            .to_string()
    }
}

/// A deterministic standalone line chart. One `class="x-tick"` group is
/// emitted per tick; when the series has ≤ 12 points every x value gets its
/// own tick.
pub fn line_chart_svg(title: &str, x_label: &str, y_label: &str, points: &[(f64, f64)]) -> String {
    assert!(!points.is_empty(), "chart needs at least one point");
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x0 == x1 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y0 == y1 {
        y0 -= 0.05;
        y1 += 0.05;
    }
    let pad = (y1 - y0) * 0.08;
    let (y0, y1) = (y0 - pad, y1 + pad);
    let px = |x: f64| ML + (x - x0) / (x1 - x0) * (W - ML - MR);
    let py = |y: f64| H - MB - (y - y0) / (y1 - y0) * (H - MT - MB);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(
        s,
        r#"<rect width="{W}" height="{H}" fill="white"/><text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">{title}</text>"#,
        W / 2.0
    );
    // Axes.
    let _ = writeln!(
        s,
        r#"<line x1="{ML}" y1="{MT}" x2="{ML}" y2="{}" stroke="black"/><line x1="{ML}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        H - MB,
        H - MB,
        W - MR,
        H - MB
    );
    // X ticks: every distinct x when few, else evenly thinned.
    let mut xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    xs.dedup();
    let tick_xs: Vec<f64> = if xs.len() <= 12 {
        xs
    } else {
        let step = (xs.len() - 1) as f64 / 9.0;
        (0..10).map(|i| xs[(i as f64 * step).round() as usize]).collect()
    };
    for &tx in &tick_xs {
        let x = px(tx);
        let _ = writeln!(
            s,
            r#"<g class="x-tick"><line x1="{x}" y1="{}" x2="{x}" y2="{}" stroke="black"/><text x="{x}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="11">{}</text></g>"#,
            H - MB,
            H - MB + 5.0,
            H - MB + 18.0,
            fmt_tick(tx)
        );
    }
    // Y ticks.
    for i in 0..=4 {
        let ty = y0 + (y1 - y0) * i as f64 / 4.0;
        let y = py(ty);
        let _ = writeln!(
            s,
            r#"<g class="y-tick"><line x1="{}" y1="{y}" x2="{ML}" y2="{y}" stroke="black"/><text x="{}" y="{}" text-anchor="end" font-family="sans-serif" font-size="11">{}</text></g>"#,
            ML - 5.0,
            ML - 8.0,
            y + 4.0,
            fmt_tick(ty)
        );
    }
    // Labels.
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">{x_label}</text>"#,
        ML + (W - ML - MR) / 2.0,
        H - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 16 {})">{y_label}</text>"#,
        MT + (H - MT - MB) / 2.0,
        MT + (H - MT - MB) / 2.0
    );
    // Series.
    let path: Vec<String> = points
        .iter()
        .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
        .collect();
    let _ = writeln!(
        s,
        r##"<polyline points="{}" fill="none" stroke="#1f6fb2" stroke-width="2"/>"##,
        path.join(" ")
    );
    for &(x, y) in points {
        let _ = writeln!(
            s,
            r##"<circle cx="{:.2}" cy="{:.2}" r="3" fill="#1f6fb2"/>"##,
            px(x),
            py(y)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Write metrics.csv, summary.json, and the SVG charts that have data.
/// Returns the written paths. The attack chart is omitted when there are no
/// attack rows; the epoch chart when no per-epoch accuracy was recorded.
pub fn emit_report(report: &MetricsReport, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    report.validate()?;
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let csv_path = dir.join("metrics.csv");
    std::fs::write(&csv_path, metrics_to_csv(report))?;
    written.push(csv_path);

    let json_path = dir.join("summary.json");
    std::fs::write(&json_path, serde_json::to_string_pretty(report)?)?;
    written.push(json_path);

    let epoch_points: Vec<(f64, f64)> = report
        .epochs
        .iter()
        .filter_map(|e| e.clean_accuracy.map(|a| (e.epoch as f64, a)))
        .collect();
    if !epoch_points.is_empty() {
        let p = dir.join("accuracy-vs-epoch.svg");
        std::fs::write(
            &p,
            line_chart_svg("Clean accuracy by epoch", "epoch", "accuracy", &epoch_points),
        )?;
        written.push(p);
    }

    if !report.attacks.is_empty() {
        let mut pts: Vec<(f64, f64)> = report
            .attacks
            .iter()
            .map(|a| (a.eps, a.accuracy))
            .collect();
        pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let p = dir.join("accuracy-vs-epsilon.svg");
        std::fs::write(
            &p,
            line_chart_svg("Robust accuracy by attack budget", "epsilon", "accuracy", &pts),
        )?;
        written.push(p);
    }
    Ok(written)
}
