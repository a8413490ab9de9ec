//! Minimal standalone SVG line charts assembled as text.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::run::CliError;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    /// Drawn as markers instead of a polyline.
    pub scatter: bool,
}

/// Pull `x` against each `y` column out of a headed CSV. Empty cells are
/// skipped; a column with gaps is drawn as markers.
pub fn series_from_csv(text: &str, x: &str, ys: &[String]) -> Result<Vec<Series>, String> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or("empty CSV")?.split(',').map(str::trim).collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| format!("no column `{name}` (have {})", header.join(", ")))
    };
    let xi = col(x)?;
    let yi: Vec<usize> = ys.iter().map(|y| col(y)).collect::<Result<_, _>>()?;
    let mut out: Vec<Series> = ys
        .iter()
        .map(|name| Series {
            name: name.clone(),
            points: vec![],
            scatter: false,
        })
        .collect();
    for (n, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let get = |i: usize| -> Result<Option<f64>, String> {
            match cells.get(i).copied().unwrap_or("") {
                "" => Ok(None),
                c => c
                    .parse()
                    .map(Some)
                    .map_err(|_| format!("row {}: bad number `{c}`", n + 2)),
            }
        };
        let Some(xv) = get(xi)? else { continue };
        for (s, &i) in out.iter_mut().zip(&yi) {
            match get(i)? {
                Some(v) => s.points.push((xv, v)),
                None => s.scatter = true,
            }
        }
    }
    Ok(out)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn bounds(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

pub fn render(series: &[Series], x_label: &str, title: &str, log_y: bool) -> String {
    let ty = |v: f64| if log_y { v.log10() } else { v };
    let keep = |&(x, y): &(f64, f64)| x.is_finite() && y.is_finite() && (!log_y || y > 0.0);
    let all: Vec<(f64, f64)> = series.iter().flat_map(|s| s.points.iter().copied().filter(keep)).collect();
    let (x0, x1) = bounds(all.iter().map(|p| p.0));
    let (y0, y1) = bounds(all.iter().map(|p| ty(p.1)));
    let pw = WIDTH - 2.0 * MARGIN;
    let ph = HEIGHT - 2.0 * MARGIN;
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * pw;
    let py = |y: f64| HEIGHT - MARGIN - (ty(y) - y0) / (y1 - y0) * ph;

    let mut o = String::new();
    let _ = writeln!(
        o,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(o, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        o,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let xv = x0 + f * (x1 - x0);
        let yv = y0 + f * (y1 - y0);
        let label_y = if log_y { format!("1e{yv:.1}") } else { format!("{yv:.3}") };
        let _ = writeln!(
            o,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{xv:.3}</text>"#,
            px(xv),
            HEIGHT - MARGIN + 16.0
        );
        let _ = writeln!(
            o,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{label_y}</text>"#,
            MARGIN - 4.0,
            HEIGHT - MARGIN - f * ph + 4.0
        );
    }
    let _ = writeln!(
        o,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    if !title.is_empty() {
        let _ = writeln!(
            o,
            r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
            WIDTH / 2.0,
            escape(title)
        );
    }
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<(f64, f64)> = s.points.iter().copied().filter(keep).collect();
        if s.scatter {
            for (x, y) in &pts {
                let _ = writeln!(
                    o,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#,
                    px(*x),
                    py(*y)
                );
            }
        } else if !pts.is_empty() {
            let path: Vec<String> = pts.iter().map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y))).collect();
            let _ = writeln!(
                o,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                path.join(" ")
            );
        }
        let ly = MARGIN + 14.0 + 16.0 * i as f64;
        let _ = writeln!(
            o,
            r#"<text x="{:.2}" y="{ly:.2}" text-anchor="end" fill="{color}">{}</text>"#,
            WIDTH - MARGIN - 6.0,
            escape(&s.name)
        );
    }
    o.push_str("</svg>\n");
    o
}

pub fn render_file(csv: &Path, x: &str, ys: &[String], output: &Path, title: &str, log_y: bool) -> Result<(), CliError> {
    let text = fs::read_to_string(csv).map_err(|e| CliError::io(csv, e))?;
    let series = series_from_csv(&text, x, ys).map_err(|m| CliError::Input(format!("{}: {m}", csv.display())))?;
    fs::write(output, render(&series, x, title, log_y)).map_err(|e| CliError::io(output, e))
}
