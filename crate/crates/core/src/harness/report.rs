//! Report files: the summary grid as CSV and JSON, per-sample tables, and
//! plot-ready CSV/SVG per study.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::Study;
use super::study::{ExperimentReport, SampleTable, SummaryRow};
use crate::error::{Error, Result};

pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_JSON: &str = "report.json";
pub const SAMPLES_DIR: &str = "samples";

const REPORT_HEADER: [&str; 7] = ["dataset", "method", "study", "rho_mean", "ci_low", "ci_high", "n_runs"];
const PLOT_HEADER: [&str; 5] = ["dataset", "method", "rho_mean", "ci_low", "ci_high"];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Summary grid as CSV; failed cells keep their row with empty numeric fields.
pub fn summary_csv(rows: &[SummaryRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(REPORT_HEADER)?;
    for r in rows {
        w.write_record([
            r.dataset.clone(),
            r.method.clone(),
            r.study.name().to_string(),
            opt(r.rho_mean),
            opt(r.ci_low),
            opt(r.ci_high),
            r.n_runs.to_string(),
        ])?;
    }
    finish(w)
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

fn sample_csv(table: &SampleTable) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["sample_index", "source_row", "method", "uncertainty", "reference"])?;
    for (method, u, y) in &table.methods {
        for (i, (ui, yi)) in u.iter().zip(y).enumerate() {
            let row = table.source_rows.get(i).map(|r| r.to_string()).unwrap_or_default();
            w.write_record([i.to_string(), row, method.clone(), ui.to_string(), yi.to_string()])?;
        }
    }
    finish(w)
}

fn sample_file_name(table: &SampleTable) -> String {
    let safe: String = table
        .dataset
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{safe}_seed{}_{}.csv", table.seed, table.study.name())
}

/// Write report.csv, report.json, per-sample tables and plot data into `dir`.
/// Returns the written paths.
pub fn write_report(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    create_dir(dir)?;
    let mut written = Vec::new();

    let csv_path = dir.join(REPORT_CSV);
    write_file(&csv_path, summary_csv(&report.summary)?.as_bytes())?;
    written.push(csv_path);

    let json_path = dir.join(REPORT_JSON);
    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    write_file(&json_path, json.as_bytes())?;
    written.push(json_path);

    if !report.samples.is_empty() {
        let samples = dir.join(SAMPLES_DIR);
        create_dir(&samples)?;
        for table in &report.samples {
            let path = samples.join(sample_file_name(table));
            write_file(&path, sample_csv(table)?.as_bytes())?;
            written.push(path);
        }
    }

    written.extend(emit_plot_data(report, dir)?);
    Ok(written)
}

pub fn load_report(path: &Path) -> Result<ExperimentReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// One bar of a plot: a (dataset, method) cell of one study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub dataset: String,
    pub method: String,
    pub rho_mean: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

pub fn plot_rows(report: &ExperimentReport, study: Study) -> Vec<PlotRow> {
    report
        .summary
        .iter()
        .filter(|r| r.study == study)
        .map(|r| PlotRow {
            dataset: r.dataset.clone(),
            method: r.method.clone(),
            rho_mean: r.rho_mean,
            ci_low: r.ci_low,
            ci_high: r.ci_high,
        })
        .collect()
}

pub fn plot_file_stem(study: Study) -> String {
    format!("plot_{}", study.name())
}

/// Write `plot_<study>.csv` and `plot_<study>.svg` for each study the report
/// ran (both when it names none). A study without summary rows yields a
/// header-only CSV and an empty chart.
pub fn emit_plot_data(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    create_dir(dir)?;
    let studies = if report.provenance.studies.is_empty() {
        vec![Study::Ood, Study::Mse]
    } else {
        report.provenance.studies.clone()
    };
    let mut written = Vec::new();
    for study in studies {
        let rows = plot_rows(report, study);
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(PLOT_HEADER)?;
        for r in &rows {
            w.write_record([r.dataset.clone(), r.method.clone(), opt(r.rho_mean), opt(r.ci_low), opt(r.ci_high)])?;
        }
        let csv_path = dir.join(format!("{}.csv", plot_file_stem(study)));
        write_file(&csv_path, finish(w)?.as_bytes())?;
        written.push(csv_path);

        let svg_path = dir.join(format!("{}.svg", plot_file_stem(study)));
        write_file(&svg_path, bar_chart_svg(study, &rows).as_bytes())?;
        written.push(svg_path);
    }
    Ok(written)
}

fn parse_opt(field: &str, name: &str) -> Result<Option<f64>> {
    if field.is_empty() {
        return Ok(None);
    }
    field
        .parse()
        .map(Some)
        .map_err(|_| Error::Format(format!("column {name}: not a number: {field:?}")))
}

pub fn read_plot_csv(path: &Path) -> Result<Vec<PlotRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{other:?}")),
    })?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != PLOT_HEADER {
        return Err(Error::Format(format!("unexpected plot header {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        rows.push(PlotRow {
            dataset: rec[0].to_string(),
            method: rec[1].to_string(),
            rho_mean: parse_opt(&rec[2], "rho_mean")?,
            ci_low: parse_opt(&rec[3], "ci_low")?,
            ci_high: parse_opt(&rec[4], "ci_high")?,
        });
    }
    Ok(rows)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Grouped bar chart of rho per dataset and method with CI whiskers, on a
/// fixed [-1, 1] axis.
pub fn bar_chart_svg(study: Study, rows: &[PlotRow]) -> String {
    let mut datasets: Vec<&str> = Vec::new();
    let mut methods: Vec<&str> = Vec::new();
    for r in rows {
        if !datasets.contains(&r.dataset.as_str()) {
            datasets.push(&r.dataset);
        }
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    const PALETTE: [&str; 6] = ["#4477aa", "#ee6677", "#228833", "#ccbb44", "#66ccee", "#aa3377"];
    let (left, top, plot_h, group_w, bar_w) = (60.0, 40.0, 300.0, 40.0 + 30.0 * methods.len() as f64, 24.0);
    let width = left + group_w * datasets.len().max(1) as f64 + 160.0;
    let height = top + plot_h + 60.0;
    let y = |v: f64| top + (1.0 - v.clamp(-1.0, 1.0)) / 2.0 * plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<text x="{left}" y="20">rho ({})</text>"#, study.name());
    for tick in [-1.0, -0.5, 0.0, 0.5, 1.0] {
        let ty = y(tick);
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{ty}" x2="{}" y2="{ty}" stroke="#ddd"/><text x="{}" y="{}" text-anchor="end">{tick}</text>"##,
            width - 160.0,
            left - 6.0,
            ty + 4.0
        );
    }
    for (d, ds) in datasets.iter().enumerate() {
        let gx = left + group_w * d as f64 + 20.0;
        let _ = writeln!(s, r#"<text x="{gx}" y="{}">{}</text>"#, top + plot_h + 20.0, escape(ds));
        for (m, method) in methods.iter().enumerate() {
            let Some(r) = rows.iter().find(|r| r.dataset == *ds && r.method == *method) else {
                continue;
            };
            let Some(rho) = r.rho_mean else { continue };
            let x = gx + 30.0 * m as f64;
            let (y0, y1) = (y(rho.max(0.0)), y(rho.min(0.0)));
            let _ = writeln!(
                s,
                r#"<rect x="{x}" y="{y0}" width="{bar_w}" height="{}" fill="{}"/>"#,
                y1 - y0,
                PALETTE[m % PALETTE.len()]
            );
            if let (Some(lo), Some(hi)) = (r.ci_low, r.ci_high) {
                let cx = x + bar_w / 2.0;
                let _ = writeln!(s, r#"<line x1="{cx}" y1="{}" x2="{cx}" y2="{}" stroke="black"/>"#, y(hi), y(lo));
            }
        }
    }
    let lx = width - 150.0;
    for (m, method) in methods.iter().enumerate() {
        let ly = top + 18.0 * m as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{lx}" y="{ly}" width="12" height="12" fill="{}"/><text x="{}" y="{}">{}</text>"#,
            PALETTE[m % PALETTE.len()],
            lx + 18.0,
            ly + 10.0,
            escape(method)
        );
    }
    s.push_str("</svg>\n");
    s
}
