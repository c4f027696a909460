//! ROC curves, AUC, operating points and their file formats.
//!
//! CSV: header `threshold,fpr,tpr`, one point per row in curve order. The
//! first row has threshold `inf`. Plot: a standalone SVG.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Scores `>= threshold` are called positive.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// Decreasing threshold, from `(0, 0)` to `(1, 1)`.
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

impl RocCurve {
    pub fn from_points(points: Vec<RocPoint>) -> Self {
        let auc = points
            .windows(2)
            .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
            .sum();
        RocCurve { points, auc }
    }
}

fn class_counts(scores: &[(f64, u8)]) -> Result<(usize, usize)> {
    let mut pos = 0;
    for &(s, l) in scores {
        if !s.is_finite() {
            return Err(Error::Numeric(format!("non-finite score {s}")));
        }
        match l {
            0 => {}
            1 => pos += 1,
            _ => return Err(Error::Validation(format!("label {l} is not 0 or 1"))),
        }
    }
    let neg = scores.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Validation(format!(
            "ROC needs both classes, got {pos} positive and {neg} negative"
        )));
    }
    Ok((pos, neg))
}

/// One threshold per distinct score; tied scores move the curve in a single
/// diagonal step. AUC by the trapezoidal rule.
pub fn roc(scores: &[(f64, u8)]) -> Result<RocCurve> {
    let (p, n) = class_counts(scores)?;
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let s = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == s {
            if sorted[i].1 == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: s,
            fpr: fp as f64 / n as f64,
            tpr: tp as f64 / p as f64,
        });
    }
    Ok(RocCurve::from_points(points))
}

/// Mann-Whitney estimate: fraction of (positive, negative) pairs ranked
/// correctly, ties counting one half. Quadratic brute force.
pub fn auc_oracle(scores: &[(f64, u8)]) -> Result<f64> {
    let (p, n) = class_counts(scores)?;
    let mut wins = 0.0;
    for &(sp, _) in scores.iter().filter(|s| s.1 == 1) {
        for &(sn, _) in scores.iter().filter(|s| s.1 == 0) {
            if sp > sn {
                wins += 1.0;
            } else if sp == sn {
                wins += 0.5;
            }
        }
    }
    Ok(wins / (p as f64 * n as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

/// Lowest-FPR point of the curve whose sensitivity reaches `target`.
pub fn operating_point(curve: &RocCurve, target: f64) -> Result<OperatingPoint> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::Validation(format!("target sensitivity {target} not in (0, 1]")));
    }
    let p = curve
        .points
        .iter()
        .find(|p| p.tpr >= target)
        .ok_or_else(|| Error::State("ROC curve never reaches TPR 1".into()))?;
    Ok(OperatingPoint {
        threshold: p.threshold,
        sensitivity: p.tpr,
        specificity: 1.0 - p.fpr,
    })
}

pub fn roc_to_csv(curve: &RocCurve) -> String {
    let mut s = String::from("threshold,fpr,tpr\n");
    for p in &curve.points {
        writeln!(s, "{},{},{}", p.threshold, p.fpr, p.tpr).unwrap();
    }
    s
}

pub fn roc_from_csv(text: &str) -> Result<RocCurve> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "threshold,fpr,tpr")) => {}
        _ => {
            return Err(Error::Format {
                offset: 0,
                reason: "missing header 'threshold,fpr,tpr'".into(),
            })
        }
    }
    let mut points = Vec::new();
    let mut offset = text.find('\n').map_or(text.len(), |i| i + 1);
    for (_, line) in lines {
        let f: Vec<&str> = line.split(',').collect();
        let parsed: Option<Vec<f64>> = (f.len() == 3).then(|| f.iter().map(|v| v.trim().parse().ok()).collect()).flatten();
        let Some(v) = parsed else {
            return Err(Error::Format {
                offset: offset as u64,
                reason: format!("bad ROC row '{line}'"),
            });
        };
        points.push(RocPoint {
            threshold: v[0],
            fpr: v[1],
            tpr: v[2],
        });
        offset += line.len() + 1;
    }
    Ok(RocCurve::from_points(points))
}

pub fn write_roc_csv(curve: &RocCurve, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, roc_to_csv(curve)).map_err(|e| Error::io(path, e))
}

pub fn read_roc_csv(path: impl AsRef<Path>) -> Result<RocCurve> {
    let path = path.as_ref();
    roc_from_csv(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

const COLORS: [&str; 4] = ["#1f5fa8", "#c0392b", "#27864a", "#8e44ad"];

/// Renders one or more named curves on the unit square.
pub fn roc_svg(title: &str, curves: &[(&str, &RocCurve)]) -> String {
    let (size, m) = (400.0, 50.0);
    let x = |f: f64| m + f * size;
    let y = |t: f64| m + (1.0 - t) * size;
    let mut s = String::new();
    let full = size + 2.0 * m;
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{full}" height="{}" font-family="sans-serif" font-size="12">"#, full + 20.0 * curves.len() as f64).unwrap();
    writeln!(s, r#"<rect x="{m}" y="{m}" width="{size}" height="{size}" fill="none" stroke="black"/>"#).unwrap();
    writeln!(s, r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#999" stroke-dasharray="4 4"/>"##, x(0.0), y(0.0), x(1.0), y(1.0)).unwrap();
    for k in 0..=4 {
        let v = k as f64 / 4.0;
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{v}</text>"#, x(v), y(0.0) + 16.0).unwrap();
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{v}</text>"#, x(0.0) - 6.0, y(v) + 4.0).unwrap();
    }
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">False positive rate</text>"#, x(0.5), y(0.0) + 34.0).unwrap();
    writeln!(s, r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">True positive rate</text>"#, y(0.5), y(0.5)).unwrap();
    writeln!(s, r#"<text x="{}" y="30" text-anchor="middle" font-size="14">{}</text>"#, x(0.5), escape(title)).unwrap();
    for (i, (name, c)) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = c.points.iter().map(|p| format!("{:.2},{:.2}", x(p.fpr), y(p.tpr))).collect();
        writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, pts.join(" ")).unwrap();
        let ly = full + 20.0 * i as f64;
        writeln!(s, r#"<text x="{m}" y="{ly}" fill="{color}">{} (AUC {:.4})</text>"#, escape(name), c.auc).unwrap();
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub auc: f64,
    pub positives: usize,
    pub negatives: usize,
    pub operating_points: Vec<OperatingPoint>,
}

impl EvalSummary {
    pub fn new(scores: &[(f64, u8)], curve: &RocCurve, targets: &[f64]) -> Result<Self> {
        let positives = scores.iter().filter(|s| s.1 == 1).count();
        Ok(EvalSummary {
            auc: curve.auc,
            positives,
            negatives: scores.len() - positives,
            operating_points: targets.iter().map(|&t| operating_point(curve, t)).collect::<Result<_>>()?,
        })
    }
}

/// Writes `roc.csv`, `roc.svg` and `summary.json` into `dir`.
pub fn export_evaluation(dir: impl AsRef<Path>, title: &str, scores: &[(f64, u8)], targets: &[f64]) -> Result<(RocCurve, EvalSummary)> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let curve = roc(scores)?;
    let summary = EvalSummary::new(scores, &curve, targets)?;
    write_roc_csv(&curve, dir.join("roc.csv"))?;
    let svg = dir.join("roc.svg");
    fs::write(&svg, roc_svg(title, &[(title, &curve)])).map_err(|e| Error::io(&svg, e))?;
    let js = dir.join("summary.json");
    fs::write(&js, serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n").map_err(|e| Error::io(&js, e))?;
    Ok((curve, summary))
}
