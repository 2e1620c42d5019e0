//! CSV tables and self-contained SVG line charts.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::units::fmt_sig9;

use super::config::{reported_decays, RunConfig};
use super::train::RunOutput;

pub const RUN_COLUMNS: [&str; 16] = [
    "config_id",
    "variant",
    "B",
    "T",
    "accum_steps",
    "lr",
    "beta1",
    "beta2",
    "t1_tokens",
    "t2_tokens",
    "weight_decay",
    "seed",
    "step",
    "tokens_seen",
    "train_loss",
    "eval_loss",
];

fn opt(x: Option<f64>) -> String {
    x.map(fmt_sig9).unwrap_or_default()
}

/// One row per record; `B` is the micro-batch size.
pub fn write_runs_csv<W: Write>(out: W, runs: &[(&RunConfig, &RunOutput)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RUN_COLUMNS)?;
    for (cfg, run) in runs {
        let decays = reported_decays(&run.optimizer, cfg.tokens_per_step()?);
        for r in &run.records {
            w.write_record([
                run.config_id.clone(),
                cfg.optimizer.variant.to_string(),
                cfg.batch_size.to_string(),
                cfg.seq_len.to_string(),
                cfg.accum_steps.to_string(),
                fmt_sig9(run.optimizer.lr),
                opt(decays.beta1),
                opt(decays.beta2),
                opt(decays.t1_tokens),
                opt(decays.t2_tokens),
                fmt_sig9(run.optimizer.weight_decay),
                cfg.seed.to_string(),
                r.step.to_string(),
                r.tokens_seen.to_string(),
                fmt_sig9(r.train_loss),
                opt(r.eval_loss),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn emit_csv(path: &Path, runs: &[(&RunConfig, &RunOutput)]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| io_at(path, e))?;
    write_runs_csv(std::io::BufWriter::new(file), runs)
}

/// Writes any header plus rows of cells.
pub fn emit_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| io_at(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

fn io_at(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Axes {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 170.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Renders a line chart. Points that are non-finite, or non-positive on a
/// log axis, are dropped.
pub fn render_svg(series: &[Series], axes: &Axes) -> String {
    let tx = |v: f64| if axes.log_x { v.log10() } else { v };
    let ty = |v: f64| if axes.log_y { v.log10() } else { v };
    let keep = |&(x, y): &(f64, f64)| {
        x.is_finite() && y.is_finite() && (!axes.log_x || x > 0.0) && (!axes.log_y || y > 0.0)
    };
    let plotted: Vec<Vec<(f64, f64)>> = series
        .iter()
        .map(|s| s.points.iter().filter(|p| keep(p)).map(|&(x, y)| (tx(x), ty(y))).collect())
        .collect();
    let all = plotted.iter().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = all.fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |(a, b, c, d), &(x, y)| (a.min(x), b.max(x), c.min(y), d.max(y)),
    );
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 == y0 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let pw = WIDTH - MARGIN_L - MARGIN_R;
    let ph = HEIGHT - MARGIN_T - MARGIN_B;
    let px = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * pw;
    let py = |y: f64| MARGIN_T + (1.0 - (y - y0) / (y1 - y0)) * ph;
    let tick = |v: f64, log: bool| if log { fmt_sig(10f64.powf(v)) } else { fmt_sig(v) };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        MARGIN_L + pw / 2.0,
        escape(&axes.title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = x0 + f * (x1 - x0);
        let yv = y0 + f * (y1 - y0);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            px(xv),
            MARGIN_T + ph + 16.0,
            tick(xv, axes.log_x)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            MARGIN_L - 6.0,
            py(yv) + 4.0,
            tick(yv, axes.log_y)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        MARGIN_L + pw / 2.0,
        HEIGHT - 12.0,
        escape(&axes.x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        MARGIN_T + ph / 2.0,
        MARGIN_T + ph / 2.0,
        escape(&axes.y_label)
    );
    for (i, (ser, pts)) in series.iter().zip(&plotted).enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            coords.join(" ")
        );
        for &(x, y) in pts {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="{color}"/>"#, px(x), py(y));
        }
        let ly = MARGIN_T + 10.0 + 16.0 * i as f64;
        let lx = WIDTH - MARGIN_R + 10.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            lx + 18.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}">{}</text>"#,
            lx + 24.0,
            ly + 4.0,
            escape(&ser.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn fmt_sig(v: f64) -> String {
    crate::units::fmt_sig(v, 3)
}

pub fn emit_svg_lines(path: &Path, series: &[Series], axes: &Axes) -> Result<()> {
    std::fs::write(path, render_svg(series, axes)).map_err(|e| io_at(path, e))
}

/// Eval-loss-versus-tokens series, one per run, labelled by config id.
pub fn loss_series(runs: &[(&RunConfig, &RunOutput)]) -> Vec<Series> {
    runs.iter()
        .map(|(_, run)| Series {
            label: run.config_id.clone(),
            points: run
                .records
                .iter()
                .filter_map(|r| r.eval_loss.map(|e| (r.tokens_seen as f64, e)))
                .collect(),
        })
        .collect()
}
