//! Static SVG line charts rendered from the experiment CSVs alone.

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::error::{Error, Result};

const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 250.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#2ca02c", "#d62728", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Default)]
struct Series {
    name: String,
    /// `(layer, value, std)`
    points: Vec<(f64, f64, f64)>,
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Format(format!("csv line {line}: `{s}` is not a number")))
}

fn parse_series(csv: &str) -> Result<Vec<Series>> {
    let mut lines = csv.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::Format("empty csv".into()))?;
    let mut order: Vec<String> = Vec::new();
    let mut by_name: BTreeMap<String, Series> = BTreeMap::new();
    let mut add = |name: String, p: (f64, f64, f64)| {
        if !by_name.contains_key(&name) {
            order.push(name.clone());
        }
        let s = by_name.entry(name.clone()).or_insert_with(|| Series { name, points: vec![] });
        s.points.push(p);
    };
    match header.trim() {
        "layer,score,std,condition" => {
            for (i, l) in lines {
                let f: Vec<&str> = l.splitn(4, ',').collect();
                if f.len() != 4 {
                    return Err(Error::Format(format!("csv line {}: expected 4 fields", i + 1)));
                }
                add(f[3].to_string(), (parse_f64(f[0], i + 1)?, parse_f64(f[1], i + 1)?, parse_f64(f[2], i + 1)?));
            }
        }
        "layer,syntactic,semantic,residual" => {
            for (i, l) in lines {
                let f: Vec<&str> = l.split(',').collect();
                if f.len() != 4 {
                    return Err(Error::Format(format!("csv line {}: expected 4 fields", i + 1)));
                }
                let layer = parse_f64(f[0], i + 1)?;
                for (name, v) in ["syntactic", "semantic", "residual"].iter().zip(&f[1..]) {
                    add(name.to_string(), (layer, parse_f64(v, i + 1)?, 0.0));
                }
            }
        }
        "layer,condition,metric,value" => {
            for (i, l) in lines {
                let f: Vec<&str> = l.split(',').collect();
                if f.len() != 4 {
                    return Err(Error::Format(format!("csv line {}: expected 4 fields", i + 1)));
                }
                if f[2] == "best_c" {
                    continue;
                }
                add(format!("{} {}", f[2], f[1]), (parse_f64(f[0], i + 1)?, parse_f64(f[3], i + 1)?, 0.0));
            }
        }
        other => return Err(Error::Format(format!("unrecognized csv header `{other}`"))),
    }
    Ok(order.into_iter().map(|n| by_name.remove(&n).expect("series")).collect())
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders every series of the CSV as a line with a shaded +-1 std band.
pub fn render_svg(csv: &str, title: &str) -> Result<String> {
    let series = parse_series(csv)?;
    let all: Vec<&(f64, f64, f64)> = series.iter().flat_map(|s| &s.points).collect();
    if all.is_empty() {
        return Err(Error::Format("csv has no data rows".into()));
    }
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (0.0f64, 1.0f64);
    for &&(x, y, s) in &all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y - s);
        y1 = y1.max(y + s);
    }
    if x1 == x0 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * plot_w;
    let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * plot_h;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{LEFT}" y="22" font-size="14">{}</text>"#, escape(title));
    let _ = writeln!(
        out,
        r##"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#444"/>"##
    );
    for i in 0..=5 {
        let v = y0 + (y1 - y0) * i as f64 / 5.0;
        let y = sy(v);
        let _ = writeln!(
            out,
            r##"<line x1="{LEFT}" x2="{:.2}" y1="{y:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{v:.2}</text>"##,
            LEFT + plot_w,
            LEFT - 6.0,
            y + 4.0
        );
    }
    let mut layers: Vec<f64> = all.iter().map(|p| p.0).collect();
    layers.sort_by(f64::total_cmp);
    layers.dedup();
    let step = (layers.len() / 12).max(1);
    for x in layers.iter().step_by(step) {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{x}</text>"#,
            sx(*x),
            TOP + plot_h + 16.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">layer</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 12.0
    );

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut pts = s.points.clone();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        if pts.iter().any(|p| p.2 > 0.0) {
            let upper = pts.iter().map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1 + p.2)));
            let lower = pts.iter().rev().map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1 - p.2)));
            let poly: Vec<String> = upper.chain(lower).collect();
            let _ = writeln!(
                out,
                r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
                poly.join(" ")
            );
        }
        let line: Vec<String> = pts.iter().map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1))).collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.8"/>"#,
            line.join(" ")
        );
        let ly = TOP + 14.0 * i as f64 + 6.0;
        let lx = LEFT + plot_w + 12.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx}" x2="{:.2}" y1="{ly:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}" font-size="9">{}</text>"#,
            lx + 16.0,
            lx + 20.0,
            ly + 3.0,
            escape(&s.name)
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}
