//! Expected generalization error and bound total against `R` as an SVG 1.1 chart.

use std::fmt::Write;

use crate::error::{Error, Result};
use crate::experiment::sweep::ResultsTable;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 60.0;

pub(crate) fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// Maps `(R, value)` to screen coordinates: log-scaled `R`, value growing upwards.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Frame {
    lx_min: f64,
    lx_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    pub(crate) fn x(&self, r: f64) -> f64 {
        let span = self.lx_max - self.lx_min;
        let t = if span > 0.0 { (r.ln() - self.lx_min) / span } else { 0.5 };
        LEFT + t * (WIDTH - LEFT - RIGHT)
    }

    pub(crate) fn y(&self, v: f64) -> f64 {
        let t = (v - self.y_min) / (self.y_max - self.y_min);
        HEIGHT - BOTTOM - t * (HEIGHT - TOP - BOTTOM)
    }
}

fn points(pts: impl Iterator<Item = (f64, f64)>) -> String {
    pts.map(|(x, y)| format!("{x:.3},{y:.3}")).collect::<Vec<_>>().join(" ")
}

pub(crate) fn frame_for(rs: &[f64], values: impl Iterator<Item = f64>) -> Frame {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    lo = lo.min(0.0);
    if hi <= lo {
        hi = lo + 1.0;
    }
    let pad = 0.05 * (hi - lo);
    let lx = rs.iter().map(|r| r.ln());
    Frame {
        lx_min: lx.clone().fold(f64::INFINITY, f64::min),
        lx_max: lx.fold(f64::NEG_INFINITY, f64::max),
        y_min: lo,
        y_max: hi + pad,
    }
}

pub fn emit_svg_plot(table: &ResultsTable) -> Result<String> {
    if table.rows.len() < 2 {
        return Err(Error::TooFewRows { needed: 2, got: table.rows.len() });
    }
    let mut series = Vec::with_capacity(table.rows.len());
    for row in &table.rows {
        match (row.gen, row.total) {
            (Some(g), Some(b)) => series.push((row.rounds as f64, g.mean, g.se, b.mean)),
            _ => return Err(Error::WrongShape("the plot needs both the generalization and the bound columns".into())),
        }
    }
    let rs: Vec<f64> = series.iter().map(|s| s.0).collect();
    let frame = frame_for(&rs, series.iter().flat_map(|&(_, g, se, b)| [g - se, g + se, b]));

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8" standalone="no"?>"#);
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, "<title>Expected generalization error versus communication rounds</title>");
    let _ = writeln!(
        svg,
        "<desc>seed={} version={}\n{}</desc>",
        table.metadata.seed,
        xml_escape(&table.metadata.version),
        xml_escape(&table.metadata.spec_echo)
    );
    let _ = writeln!(svg, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);

    let (x0, x1) = (LEFT, WIDTH - RIGHT);
    let (y0, y1) = (HEIGHT - BOTTOM, TOP);
    let _ = writeln!(svg, r#"<g stroke="black" stroke-width="1">"#);
    let _ = writeln!(svg, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}"/>"#);
    let _ = writeln!(svg, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}"/>"#);
    for &r in &rs {
        let x = frame.x(r);
        let _ = writeln!(svg, r#"<line x1="{x:.3}" y1="{y0}" x2="{x:.3}" y2="{:.3}"/>"#, y0 + 5.0);
    }
    for i in 0..=4 {
        let v = frame.y_min + (frame.y_max - frame.y_min) * i as f64 / 4.0;
        let y = frame.y(v);
        let _ = writeln!(svg, r#"<line x1="{:.3}" y1="{y:.3}" x2="{x0}" y2="{y:.3}"/>"#, x0 - 5.0);
    }
    let _ = writeln!(svg, "</g>");

    let _ = writeln!(svg, r#"<g font-family="sans-serif" font-size="11" fill="black">"#);
    for &r in &rs {
        let _ = writeln!(svg, r#"<text x="{:.3}" y="{:.3}" text-anchor="middle">{r}</text>"#, frame.x(r), y0 + 18.0);
    }
    for i in 0..=4 {
        let v = frame.y_min + (frame.y_max - frame.y_min) * i as f64 / 4.0;
        let _ = writeln!(svg, r#"<text x="{:.3}" y="{:.3}" text-anchor="end">{v:.3e}</text>"#, x0 - 8.0, frame.y(v) + 4.0);
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.3}" y="{:.3}" text-anchor="middle" font-size="13">communication rounds R (log scale)</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 15.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{:.3}" text-anchor="middle" font-size="13" transform="rotate(-90 18 {:.3})">expected generalization error</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );
    let _ = writeln!(svg, "</g>");

    let upper = series.iter().map(|&(r, g, se, _)| (frame.x(r), frame.y(g + se)));
    let lower = series.iter().rev().map(|&(r, g, se, _)| (frame.x(r), frame.y(g - se)));
    let _ = writeln!(
        svg,
        r##"<polygon class="gen-band" points="{}" fill="#1f77b4" fill-opacity="0.2" stroke="none"/>"##,
        points(upper.chain(lower))
    );
    let _ = writeln!(
        svg,
        r##"<polyline class="gen" points="{}" fill="none" stroke="#1f77b4" stroke-width="2"/>"##,
        points(series.iter().map(|&(r, g, _, _)| (frame.x(r), frame.y(g))))
    );
    let _ = writeln!(
        svg,
        r##"<polyline class="bound" points="{}" fill="none" stroke="#d62728" stroke-width="2" stroke-dasharray="6,3"/>"##,
        points(series.iter().map(|&(r, _, _, b)| (frame.x(r), frame.y(b))))
    );

    let lx = x1 + 15.0;
    let _ = writeln!(svg, r#"<g font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(svg, r##"<rect x="{lx}" y="{}" width="24" height="10" fill="#1f77b4" fill-opacity="0.2"/>"##, TOP + 4.0);
    let _ = writeln!(svg, r##"<line x1="{lx}" y1="{}" x2="{}" y2="{}" stroke="#1f77b4" stroke-width="2"/>"##, TOP + 9.0, lx + 24.0, TOP + 9.0);
    let _ = writeln!(svg, r#"<text x="{}" y="{}">measured gen ± SE</text>"#, lx + 30.0, TOP + 13.0);
    let _ = writeln!(
        svg,
        r##"<line x1="{lx}" y1="{}" x2="{}" y2="{}" stroke="#d62728" stroke-width="2" stroke-dasharray="6,3"/>"##,
        TOP + 29.0,
        lx + 24.0,
        TOP + 29.0
    );
    let _ = writeln!(svg, r#"<text x="{}" y="{}">bound total</text>"#, lx + 30.0, TOP + 33.0);
    let _ = writeln!(svg, "</g>");
    svg.push_str("</svg>\n");
    Ok(svg)
}
