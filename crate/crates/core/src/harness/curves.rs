//! Learning curves as standalone SVG.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::experiment::{aggregate_header, MetricsRow, METRICS_HEADER};
use crate::error::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 8] =
    ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

/// Mean ± std of one metric per epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64, f64)>,
}

/// Reads one series from a per-seed metrics CSV (rows averaged per epoch)
/// or from an aggregate CSV (mean and std columns used directly).
pub fn load_series(path: &Path, metric: &str) -> Result<(String, Series)> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let label = path
        .parent()
        .and_then(|p| p.file_name())
        .map(|d| format!("{}/{}", d.to_string_lossy(), path.file_stem().unwrap_or_default().to_string_lossy()))
        .unwrap_or_else(|| path.display().to_string());
    let joined = header.join(",");
    if joined == METRICS_HEADER {
        if MetricsRow::METRICS.iter().all(|m| *m != metric) {
            return Err(Error::Schema(format!("unknown metric `{metric}`")));
        }
        let mut by_epoch: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for row in r.deserialize::<MetricsRow>() {
            let row = row?;
            by_epoch.entry(row.epoch).or_default().push(row.metric(metric).unwrap());
        }
        let points = by_epoch
            .into_iter()
            .map(|(e, v)| {
                let n = v.len() as f64;
                let mean = v.iter().sum::<f64>() / n;
                let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
                (e as f64, mean, var.sqrt())
            })
            .collect();
        return Ok((joined, Series { label, points }));
    }
    if header == aggregate_header() {
        let col = |name: String| {
            header.iter().position(|h| *h == name).ok_or_else(|| Error::Schema(format!("unknown metric `{metric}`")))
        };
        let (mi, si) = (col(format!("{metric}_mean"))?, col(format!("{metric}_std"))?);
        let mut points = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let parse = |i: usize| -> Result<f64> {
                rec[i].parse().map_err(|_| Error::Schema(format!("bad number `{}`", &rec[i])))
            };
            points.push((parse(0)?, parse(mi)?, parse(si)?));
        }
        return Ok((joined, Series { label, points }));
    }
    Err(Error::Schema(format!("{}: unrecognized header", path.display())))
}

/// Plots `metric` from every CSV into one SVG. All inputs must share a
/// header.
pub fn emit_curves(paths: &[&Path], metric: &str, output: &Path) -> Result<()> {
    if paths.is_empty() {
        return Err(Error::Config("no input CSVs".into()));
    }
    let mut schema: Option<String> = None;
    let mut series = Vec::with_capacity(paths.len());
    for p in paths {
        let (h, s) = load_series(p, metric)?;
        match &schema {
            Some(first) if *first != h => {
                return Err(Error::Schema(format!("{} does not share the first file's header", p.display())))
            }
            None => schema = Some(h),
            _ => {}
        }
        series.push(s);
    }
    std::fs::write(output, render_svg(&series, metric))?;
    Ok(())
}

pub fn render_svg(series: &[Series], metric: &str) -> String {
    let all = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, m, sd) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(m - sd);
        y1 = y1.max(m + sd);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    let sx = |x: f64| {
        if x1 > x0 {
            MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN)
        } else {
            WIDTH / 2.0
        }
    };
    let sy = |y: f64| {
        if y1 > y0 {
            HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN)
        } else {
            HEIGHT / 2.0
        }
    };
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#).unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    let (left, right, top, bottom) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    writeln!(s, r#"<line class="axis" x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}" stroke="black"/>"#).unwrap();
    writeln!(s, r#"<line class="axis" x1="{left}" y1="{top}" x2="{left}" y2="{bottom}" stroke="black"/>"#).unwrap();
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-size="14">epoch</text>"#, WIDTH / 2.0, HEIGHT - 16.0).unwrap();
    writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" font-size="14" transform="rotate(-90 16 {})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(metric)
    )
    .unwrap();
    for (v, anchor_y) in [(y0, bottom), (y1, top)] {
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="end" font-size="11">{:.3}</text>"#, left - 4.0, anchor_y + 4.0, v).unwrap();
    }
    for (v, anchor_x) in [(x0, left), (x1, right)] {
        writeln!(s, r#"<text x="{anchor_x}" y="{}" text-anchor="middle" font-size="11">{v}</text>"#, bottom + 16.0).unwrap();
    }
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let upper = ser.points.iter().map(|&(x, m, sd)| format!("{:.3},{:.3}", sx(x), sy(m + sd)));
        let lower = ser.points.iter().rev().map(|&(x, m, sd)| format!("{:.3},{:.3}", sx(x), sy(m - sd)));
        let band: Vec<String> = upper.chain(lower).collect();
        writeln!(s, r#"<polygon class="band" points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#, band.join(" ")).unwrap();
        let line: Vec<String> = ser.points.iter().map(|&(x, m, _)| format!("{:.3},{:.3}", sx(x), sy(m))).collect();
        writeln!(s, r#"<polyline class="mean" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, line.join(" ")).unwrap();
        writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="11" fill="{color}">{}</text>"#,
            right - 150.0,
            top + 14.0 * (i as f64 + 1.0),
            escape(&ser.label)
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// `(x, y)` pairs of every `<polyline>` in an SVG produced by
/// [`render_svg`].
pub fn parse_polylines(svg: &str) -> Vec<Vec<(f64, f64)>> {
    svg.lines()
        .filter(|l| l.starts_with("<polyline"))
        .filter_map(|l| l.split("points=\"").nth(1)?.split('"').next())
        .map(|pts| {
            pts.split_whitespace()
                .filter_map(|p| {
                    let (x, y) = p.split_once(',')?;
                    Some((x.parse().ok()?, y.parse().ok()?))
                })
                .collect()
        })
        .collect()
}
