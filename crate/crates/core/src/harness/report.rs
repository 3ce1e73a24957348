//! Report files for an experiment.
//!
//! * `arms.csv`: one row per (method, ε) arm, averaged over replications;
//!   `flag` is `*` when any replication's IPF hit the iteration cap.
//! * `replications.csv`: one row per synthesis.
//! * `ru_curve.csv`: `(dataset, log10_epsilon, ru_pct_of_p1)` points, with
//!   the non-private arm placed at abscissa 3.
//! * `ru_curve.meta.json`: how the figure data was built.
//! * `ru_curve.svg`: a line chart of the figure data.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dp_noise::Method;
use crate::error::{Error, Result};
use crate::harness::experiment::AggregateReport;

/// Abscissa of the non-private arm in the figure data.
pub const NON_DP_ABSCISSA: f64 = 3.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmRow {
    pub dataset: String,
    pub method: Method,
    /// Empty for the non-private arm.
    pub epsilon: Option<f64>,
    pub flag: String,
    pub completed: usize,
    pub failed: usize,
    pub nonconverged: usize,
    pub p1: f64,
    pub p0: f64,
    pub ru: Option<f64>,
    pub ru_pct_of_p1: Option<f64>,
    pub two_way_u: Option<f64>,
    pub three_way_u: Option<f64>,
    pub worst_three_way_u: Option<f64>,
    pub worst_three_way_margin: Option<String>,
    pub grade: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRow {
    pub dataset: String,
    pub method: Method,
    pub epsilon: Option<f64>,
    pub replication: usize,
    pub stream_id: u64,
    pub status: String,
    pub ru: Option<f64>,
    pub ru_pct_of_p1: Option<f64>,
    pub two_way_u: Option<f64>,
    pub three_way_u: Option<f64>,
    pub worst_three_way_u: Option<f64>,
    pub converged: Option<bool>,
    pub ipf_iterations: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FigurePoint {
    pub dataset: String,
    pub log10_epsilon: f64,
    pub ru_pct_of_p1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FigureMeta {
    pub method: Method,
    pub non_dp_abscissa: f64,
    pub note: String,
}

#[derive(Clone, Debug)]
pub struct ReportFiles {
    pub arms: PathBuf,
    pub replications: PathBuf,
    pub figure: PathBuf,
    pub figure_meta: PathBuf,
    pub figure_svg: PathBuf,
}

pub fn arm_rows(report: &AggregateReport) -> Vec<ArmRow> {
    report
        .arms
        .iter()
        .map(|a| ArmRow {
            dataset: report.dataset.clone(),
            method: a.arm.method,
            epsilon: a.arm.epsilon,
            flag: if a.nonconverged > 0 {
                "*".into()
            } else {
                String::new()
            },
            completed: a.completed,
            failed: a.failed,
            nonconverged: a.nonconverged,
            p1: report.p1,
            p0: report.p0,
            ru: a.ru,
            ru_pct_of_p1: a.ru_of_p1,
            two_way_u: a.two_way_u,
            three_way_u: a.three_way_u,
            worst_three_way_u: a.worst_three_way_u,
            worst_three_way_margin: report.worst_three_way_margin.clone(),
            grade: a.grade.map(|g| g.to_string()),
        })
        .collect()
}

pub fn replication_rows(report: &AggregateReport) -> Vec<ReplicationRow> {
    report
        .runs
        .iter()
        .map(|r| ReplicationRow {
            dataset: report.dataset.clone(),
            method: r.arm.method,
            epsilon: r.arm.epsilon,
            replication: r.replication,
            stream_id: r.stream_id,
            status: match &r.failure {
                None => "ok".into(),
                Some(m) => format!("failed: {m}"),
            },
            ru: r.disclosure.map(|d| d.ru),
            ru_pct_of_p1: r.disclosure.and_then(|d| d.ru_of_p1),
            two_way_u: r.two_way_u,
            three_way_u: r.three_way_u,
            worst_three_way_u: r.worst_three_way_u,
            converged: r.converged,
            ipf_iterations: r.ipf_iterations,
        })
        .collect()
}

/// Method plotted in the figure: ipf when the report has it.
fn figure_method(report: &AggregateReport) -> Option<Method> {
    let methods: Vec<Method> = report.arms.iter().map(|a| a.arm.method).collect();
    if methods.contains(&Method::Ipf) {
        Some(Method::Ipf)
    } else {
        methods.first().copied()
    }
}

/// Points of `ru` as a percentage of `p1` against `log10 ε`.
pub fn figure_points(report: &AggregateReport) -> Vec<FigurePoint> {
    let Some(method) = figure_method(report) else {
        return Vec::new();
    };
    let mut points: Vec<FigurePoint> = report
        .arms
        .iter()
        .filter(|a| a.arm.method == method)
        .map(|a| FigurePoint {
            dataset: report.dataset.clone(),
            log10_epsilon: a.arm.epsilon.map_or(NON_DP_ABSCISSA, f64::log10),
            ru_pct_of_p1: a.ru_of_p1,
        })
        .collect();
    points.sort_by(|a, b| a.log10_epsilon.total_cmp(&b.log10_epsilon));
    points
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Config(format!("{other:?}")),
    })?;
    if rows.is_empty() {
        w.write_record(header)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Minimal SVG line chart of the figure points.
pub fn figure_svg(points: &[FigurePoint]) -> String {
    let (w, h, pad) = (480.0, 320.0, 48.0);
    let xs: Vec<f64> = points.iter().map(|p| p.log10_epsilon).collect();
    let (x0, x1) = (
        xs.iter().copied().fold(-2.0f64, f64::min),
        xs.iter().copied().fold(NON_DP_ABSCISSA, f64::max),
    );
    let x = |v: f64| pad + (v - x0) / (x1 - x0) * (w - 2.0 * pad);
    let y = |v: f64| h - pad - v / 100.0 * (h - 2.0 * pad);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<line x1="{pad}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{pad}" y1="{pad}" x2="{pad}" y2="{b}" stroke="black"/>"#,
        b = h - pad,
        r = w - pad
    );
    let mut tick = x0.ceil();
    while tick <= x1 {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{tick}</text>"#,
            x(tick),
            h - pad + 16.0
        );
        tick += 1.0;
    }
    for pct in [0.0, 50.0, 100.0] {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{pct}</text>"#,
            pad - 6.0,
            y(pct) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">log10(epsilon); non-DP at {NON_DP_ABSCISSA}</text>"#,
        w / 2.0,
        h - 8.0
    );
    let path: Vec<String> = points
        .iter()
        .filter_map(|p| {
            p.ru_pct_of_p1
                .map(|r| format!("{:.1},{:.1}", x(p.log10_epsilon), y(r)))
        })
        .collect();
    if !path.is_empty() {
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="steelblue" stroke-width="2" points="{}"/>"#,
            path.join(" ")
        );
        for pt in &path {
            let (cx, cy) = pt.split_once(',').unwrap();
            let _ = writeln!(s, r#"<circle cx="{cx}" cy="{cy}" r="3" fill="steelblue"/>"#);
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Writes all report files into `outdir`, creating it if needed.
pub fn emit_reports(report: &AggregateReport, outdir: &Path) -> Result<ReportFiles> {
    fs::create_dir_all(outdir).map_err(|e| Error::io(outdir, e))?;
    let files = ReportFiles {
        arms: outdir.join("arms.csv"),
        replications: outdir.join("replications.csv"),
        figure: outdir.join("ru_curve.csv"),
        figure_meta: outdir.join("ru_curve.meta.json"),
        figure_svg: outdir.join("ru_curve.svg"),
    };
    write_rows(&files.arms, &arm_rows(report), &["dataset"])?;
    write_rows(&files.replications, &replication_rows(report), &["dataset"])?;
    let points = figure_points(report);
    write_rows(
        &files.figure,
        &points,
        &["dataset", "log10_epsilon", "ru_pct_of_p1"],
    )?;
    let meta = FigureMeta {
        method: figure_method(report).unwrap_or(Method::Ipf),
        non_dp_abscissa: NON_DP_ABSCISSA,
        note: "the non-private arm is plotted at log10(epsilon) = 3 by convention; \
               it is described as equivalent to epsilon = 100, whose log10 is 2"
            .into(),
    };
    let json = serde_json::to_string_pretty(&meta).expect("meta serialises");
    fs::write(&files.figure_meta, json + "\n").map_err(|e| Error::io(&files.figure_meta, e))?;
    fs::write(&files.figure_svg, figure_svg(&points))
        .map_err(|e| Error::io(&files.figure_svg, e))?;
    Ok(files)
}
