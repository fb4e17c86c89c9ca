//! Learning-curve plots as standalone SVG.
//!
//! Accepts per-seed CSVs (plots `team_return`) and summary CSVs (plots
//! `team_return_mean` with a one-std band). Curves are smoothed before
//! drawing.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{HarnessError, Result};
use crate::metrics::{smooth, Table};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const MARGIN_LEFT: f64 = 64.0;
const MARGIN_RIGHT: f64 = 160.0;
const MARGIN_Y: f64 = 36.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub band: Option<Vec<f64>>,
}

/// Reads the team-return curve from a per-seed or summary table.
pub fn curve_from_table(label: &str, table: &Table, alpha: f64) -> Result<Curve> {
    let x = table
        .column("timestep")
        .ok_or_else(|| HarnessError::Schema(format!("{label}: no `timestep` column")))?;
    let (y, band) = if let Some(mean) = table.column("team_return_mean") {
        let std = table
            .column("team_return_std")
            .ok_or_else(|| HarnessError::Schema(format!("{label}: `team_return_mean` without `team_return_std`")))?;
        (mean, Some(std))
    } else if let Some(y) = table.column("team_return") {
        (y, None)
    } else {
        return Err(HarnessError::Schema(format!(
            "{label}: neither `team_return` nor `team_return_mean` present"
        )));
    };
    Ok(Curve {
        label: label.to_string(),
        x,
        y: smooth(&y, alpha),
        band: band.map(|b| smooth(&b, alpha)),
    })
}

fn label_for(path: &Path) -> String {
    match (path.parent().and_then(|p| p.file_name()), path.file_stem()) {
        (Some(dir), Some(stem)) => format!("{}/{}", dir.to_string_lossy(), stem.to_string_lossy()),
        (None, Some(stem)) => stem.to_string_lossy().into_owned(),
        _ => path.display().to_string(),
    }
}

/// Reads every CSV, checks they share one schema, and writes the SVG.
pub fn plot_files(inputs: &[impl AsRef<Path>], alpha: f64, out: &Path) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(HarnessError::Config(format!("smoothing alpha {alpha} must lie in (0, 1]")));
    }
    let mut curves = Vec::new();
    let mut schema: Option<(String, Vec<String>)> = None;
    for path in inputs {
        let path = path.as_ref();
        let table = Table::read(path)?;
        match &schema {
            None => schema = Some((path.display().to_string(), table.columns.clone())),
            Some((first, cols)) if *cols != table.columns => {
                return Err(HarnessError::Schema(format!(
                    "{} does not share the columns of {first}",
                    path.display()
                )))
            }
            Some(_) => {}
        }
        curves.push(curve_from_table(&label_for(path), &table, alpha)?);
    }
    if curves.is_empty() {
        return Err(HarnessError::Config("plot needs at least one input CSV".into()));
    }
    std::fs::write(out, render_svg(&curves, "team return")).map_err(HarnessError::io(format!("writing {}", out.display())))
}

fn bounds(curves: &[Curve]) -> (f64, f64, f64, f64) {
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for c in curves {
        for (i, (&x, &y)) in c.x.iter().zip(&c.y).enumerate() {
            if !y.is_finite() {
                continue;
            }
            let s = c.band.as_ref().map_or(0.0, |b| if b[i].is_finite() { b[i] } else { 0.0 });
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y - s);
            y1 = y1.max(y + s);
        }
    }
    if !x0.is_finite() {
        return (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    (x0, x1, y0, y1)
}

pub fn render_svg(curves: &[Curve], title: &str) -> String {
    let (x0, x1, y0, y1) = bounds(curves);
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - 2.0 * MARGIN_Y;
    let px = |x: f64| MARGIN_LEFT + (x - x0) / (x1 - x0) * plot_w;
    let py = |y: f64| MARGIN_Y + (y1 - y) / (y1 - y0) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        escape(title)
    );
    let _ = writeln!(
        svg,
        r#"<rect x="{MARGIN_LEFT}" y="{MARGIN_Y}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            px(xv),
            HEIGHT - MARGIN_Y + 16.0,
            tick(xv)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            MARGIN_LEFT - 6.0,
            py(yv) + 4.0,
            tick(yv)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">environment steps</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 4.0
    );

    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<(f64, f64, f64)> = c
            .x
            .iter()
            .zip(&c.y)
            .enumerate()
            .filter(|(_, (_, y))| y.is_finite())
            .map(|(j, (&x, &y))| {
                let s = c.band.as_ref().map_or(0.0, |b| if b[j].is_finite() { b[j] } else { 0.0 });
                (x, y, s)
            })
            .collect();
        if pts.is_empty() {
            continue;
        }
        if c.band.is_some() {
            let upper = pts.iter().map(|&(x, y, s)| format!("{:.2},{:.2}", px(x), py(y + s)));
            let lower = pts.iter().rev().map(|&(x, y, s)| format!("{:.2},{:.2}", px(x), py(y - s)));
            let poly: Vec<String> = upper.chain(lower).collect();
            let _ = writeln!(
                svg,
                r#"<polygon points="{}" fill="{color}" fill-opacity="0.18" stroke="none"/>"#,
                poly.join(" ")
            );
        }
        let line: Vec<String> = pts.iter().map(|&(x, y, _)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.8"/>"#,
            line.join(" ")
        );
        let ly = MARGIN_Y + 14.0 + 18.0 * i as f64;
        let lx = WIDTH - MARGIN_RIGHT + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="3"/><text x="{}" y="{}">{}</text>"#,
            lx + 18.0,
            lx + 24.0,
            ly + 4.0,
            escape(&c.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn tick(v: f64) -> String {
    if v.abs() >= 1000.0 {
        format!("{:.0}", v)
    } else {
        format!("{:.2}", v)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(cols: &[&str], rows: Vec<Vec<f64>>) -> Table {
        Table {
            columns: cols.iter().map(|c| c.to_string()).collect(),
            rows,
        }
    }

    #[test]
    fn summary_tables_get_a_band() {
        let t = table(
            &["timestep", "seeds", "team_return_mean", "team_return_std"],
            vec![vec![0.0, 3.0, 1.0, 0.5], vec![1000.0, 3.0, 3.0, 0.5]],
        );
        let c = curve_from_table("s", &t, 0.5).unwrap();
        assert_eq!(c.y, vec![1.0, 2.0]);
        assert_eq!(c.band, Some(vec![0.5, 0.5]));
        let svg = render_svg(&[c], "team return");
        assert!(svg.contains("<polygon") && svg.contains("<polyline"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn seed_tables_plot_without_band() {
        let t = table(&["timestep", "team_return"], vec![vec![0.0, f64::NAN], vec![10.0, 2.0]]);
        let c = curve_from_table("s", &t, 1.0).unwrap();
        assert!(c.band.is_none());
        assert!(!render_svg(&[c], "x").contains("<polygon"));
    }

    #[test]
    fn missing_columns_are_schema_errors() {
        let t = table(&["timestep", "loss"], vec![]);
        assert_eq!(curve_from_table("s", &t, 0.3).unwrap_err().exit_code(), 2);
        let t = table(&["step", "team_return"], vec![]);
        assert_eq!(curve_from_table("s", &t, 0.3).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn labels_are_escaped() {
        let c = Curve {
            label: "a<b".into(),
            x: vec![0.0],
            y: vec![1.0],
            band: None,
        };
        assert!(render_svg(&[c], "t&t").contains("a&lt;b"));
    }
}
