//! CSV tables and SVG curve plots of an experiment bundle.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::config::Phase;
use super::experiments::Bundle;
use super::metrics::{convergence_epoch, fmt_f, mean_std, MetricsRow, METRICS_HEADER};
use crate::error::Result;

/// Per-epoch rows: one per (config, fraction, seed, phase, epoch).
pub const EPOCHS_HEADER_PREFIX: &str = "experiment,config,fraction,seed,phase,";
pub const SUMMARY_HEADER: &str = "experiment,config,fraction,n_runs,final_acc_mean,final_acc_std,final_steer_mean,final_steer_std,convergence_epoch,ae_final_test_recon";

/// Epochs averaged for the final metric of a run.
pub const FINAL_EPOCHS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub config: String,
    pub fraction: f64,
    pub n_runs: usize,
    pub final_acc_mean: f64,
    pub final_acc_std: f64,
    pub final_steer_mean: f64,
    pub final_steer_std: f64,
    /// First epoch at which the seed-mean accuracy curve reaches the reference
    /// cell's final mean accuracy.
    pub convergence_epoch: Option<usize>,
    pub ae_final_test_recon: Option<f64>,
}

fn mean_and_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt())
}

fn acc(r: &MetricsRow) -> Option<f64> {
    r.test_acc
}

fn steer(r: &MetricsRow) -> Option<f64> {
    r.test_steer
}

pub fn summarize(bundle: &Bundle) -> Vec<SummaryRow> {
    let mut rows: Vec<SummaryRow> = bundle
        .cells()
        .into_iter()
        .filter_map(|(config, fraction)| {
            let runs = bundle.policy_runs(&config, fraction);
            if runs.is_empty() {
                return None;
            }
            let finals_acc: Vec<f64> = runs.iter().filter_map(|r| r.log.tail_mean(FINAL_EPOCHS, acc)).collect();
            let finals_steer: Vec<f64> = runs.iter().filter_map(|r| r.log.tail_mean(FINAL_EPOCHS, steer)).collect();
            let (am, asd) = mean_and_std(&finals_acc);
            let (sm, ssd) = mean_and_std(&finals_steer);
            let ae = bundle
                .runs
                .iter()
                .find(|r| r.phase == Phase::EncoderDecoder && r.config == config && r.fraction == fraction)
                .and_then(|r| r.log.rows.last().and_then(|x| x.test_recon));
            Some(SummaryRow {
                config,
                fraction,
                n_runs: runs.len(),
                final_acc_mean: am,
                final_acc_std: asd,
                final_steer_mean: sm,
                final_steer_std: ssd,
                convergence_epoch: None,
                ae_final_test_recon: ae,
            })
        })
        .collect();
    let target = rows
        .iter()
        .find(|r| r.config == bundle.reference.0 && r.fraction == bundle.reference.1)
        .map(|r| r.final_acc_mean);
    if let Some(target) = target {
        for row in &mut rows {
            let curves: Vec<Vec<f64>> =
                bundle.policy_runs(&row.config, row.fraction).iter().map(|r| r.log.column(acc)).collect();
            row.convergence_epoch = convergence_epoch(&mean_std(&curves).0, target);
        }
    }
    rows
}

pub fn epochs_csv(bundle: &Bundle) -> String {
    let mut out = format!("{EPOCHS_HEADER_PREFIX}{METRICS_HEADER}\n");
    for r in &bundle.runs {
        let phase = match r.phase {
            Phase::EncoderDecoder => "encoder_decoder",
            Phase::Policy => "policy",
        };
        for row in &r.log.rows {
            let _ = writeln!(out, "{},{},{},{},{},{}", bundle.experiment, r.config, r.fraction, r.seed, phase, row.csv_fields());
        }
    }
    out
}

pub fn summary_csv(bundle: &Bundle) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for s in summarize(bundle) {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            bundle.experiment,
            s.config,
            s.fraction,
            s.n_runs,
            fmt_f(s.final_acc_mean),
            fmt_f(s.final_acc_std),
            fmt_f(s.final_steer_mean),
            fmt_f(s.final_steer_std),
            s.convergence_epoch.map(|e| e.to_string()).unwrap_or_default(),
            s.ae_final_test_recon.map(fmt_f).unwrap_or_default(),
        );
    }
    out
}

const PALETTE: [&str; 10] =
    ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22"];

/// Seed-mean curve of `metric` per cell with a ±1 standard deviation band.
pub fn curve_svg(bundle: &Bundle, title: &str, metric: fn(&MetricsRow) -> Option<f64>) -> String {
    let (w, h) = (720.0, 440.0);
    let (left, right, top, bottom) = (70.0, 200.0, 40.0, 50.0);
    let series: Vec<(String, Vec<f64>, Vec<f64>)> = bundle
        .cells()
        .into_iter()
        .filter_map(|(config, fraction)| {
            let curves: Vec<Vec<f64>> =
                bundle.policy_runs(&config, fraction).iter().map(|r| r.log.column(metric)).collect();
            if curves.is_empty() {
                return None;
            }
            let (m, s) = mean_std(&curves);
            let label = if bundle.cells().iter().all(|(_, f)| *f == 1.0) { config } else { format!("{config} @{fraction}") };
            Some((label, m, s))
        })
        .collect();
    let epochs = series.iter().map(|s| s.1.len()).max().unwrap_or(1).max(2);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (_, m, s) in &series {
        for (a, b) in m.iter().zip(s) {
            lo = lo.min(a - b);
            hi = hi.max(a + b);
        }
    }
    if !lo.is_finite() || hi - lo < 1e-12 {
        lo = 0.0;
        hi = 1.0;
    }
    let pad = (hi - lo) * 0.05;
    let (lo, hi) = (lo - pad, hi + pad);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let x = |e: usize| left + pw * (e as f64 - 1.0) / (epochs as f64 - 1.0);
    let y = |v: f64| top + ph * (1.0 - (v - lo) / (hi - lo));

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="15">{}</text>"#, left + pw / 2.0, xml(title));
    let _ = writeln!(svg, r##"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##);
    for k in 0..=5 {
        let v = lo + (hi - lo) * k as f64 / 5.0;
        let _ = writeln!(
            svg,
            r##"<line x1="{left}" y1="{yy:.2}" x2="{:.2}" y2="{yy:.2}" stroke="#ddd"/><text x="{:.1}" y="{:.2}" text-anchor="end">{v:.3}</text>"##,
            left + pw,
            left - 6.0,
            y(v) + 4.0,
            yy = y(v)
        );
    }
    let step = (epochs / 10).max(1);
    for e in (1..=epochs).filter(|e| (e - 1) % step == 0 || *e == epochs) {
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.1}" text-anchor="middle">{e}</text>"#, x(e), top + ph + 18.0);
    }
    let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">epoch</text>"#, left + pw / 2.0, h - 10.0);
    for (i, (label, m, s)) in series.iter().enumerate() {
        let c = PALETTE[i % PALETTE.len()];
        let mut band = String::new();
        for (e, (a, b)) in m.iter().zip(s).enumerate() {
            let _ = write!(band, "{:.2},{:.2} ", x(e + 1), y(a + b));
        }
        for (e, (a, b)) in m.iter().zip(s).enumerate().rev() {
            let _ = write!(band, "{:.2},{:.2} ", x(e + 1), y(a - b));
        }
        let _ = writeln!(svg, r#"<polygon points="{}" fill="{c}" fill-opacity="0.18" stroke="none"/>"#, band.trim_end());
        let line: Vec<String> = m.iter().enumerate().map(|(e, v)| format!("{:.2},{:.2}", x(e + 1), y(*v))).collect();
        let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="1.8"/>"#, line.join(" "));
        let ly = top + 14.0 + 18.0 * i as f64;
        let lx = left + pw + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{c}" stroke-width="3"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            ly - 4.0,
            lx + 18.0,
            ly - 4.0,
            lx + 24.0,
            ly,
            xml(label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes `<experiment>_epochs.csv`, `<experiment>_summary.csv` and the two
/// curve plots into `dir`.
pub fn write_report(bundle: &Bundle, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let name = &bundle.experiment;
    let files = [
        (format!("{name}_epochs.csv"), epochs_csv(bundle)),
        (format!("{name}_summary.csv"), summary_csv(bundle)),
        (format!("{name}_steer.svg"), curve_svg(bundle, &format!("{name}: steering smooth-L1 (test)"), steer)),
        (format!("{name}_acc.svg"), curve_svg(bundle, &format!("{name}: acceleration accuracy (test)"), acc)),
    ];
    let mut out = Vec::new();
    for (file, text) in files {
        let p = dir.join(file);
        std::fs::write(&p, text)?;
        out.push(p);
    }
    Ok(out)
}
