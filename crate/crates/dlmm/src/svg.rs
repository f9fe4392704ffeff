//! Minimal SVG rendering: boxplot panels and correlogram panels.
//!
//! Coordinates are printed with two decimals so the output is stable
//! across platforms.

use std::fmt::Write;

use dlmm_core::diagnostics::AcfResult;
use dlmm_core::experiments::Quantiles;

const PANEL_W: f64 = 320.0;
const PANEL_H: f64 = 240.0;
const MARGIN_L: f64 = 52.0;
const MARGIN_R: f64 = 12.0;
const MARGIN_T: f64 = 28.0;
const MARGIN_B: f64 = 44.0;
const TITLE_H: f64 = 30.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn open(out: &mut String, width: f64, height: f64, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="20" text-anchor="middle" font-size="15">{}</text>"#,
        width / 2.0,
        escape(title)
    );
}

/// Roughly five round tick values covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    if !(span > 0.0) || !span.is_finite() {
        return vec![lo];
    }
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let mut v = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while v <= hi + step * 1e-9 {
        out.push(if v.abs() < step * 1e-9 { 0.0 } else { v });
        v += step;
    }
    out
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.to_string() }
}

/// Plot area of one panel and its vertical scale.
struct Frame {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    lo: f64,
    hi: f64,
}

impl Frame {
    fn new(col: usize, row: usize, lo: f64, hi: f64) -> Self {
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 1.0, hi + 1.0) };
        let pad = (hi - lo) * 0.05;
        Frame {
            x0: col as f64 * PANEL_W + MARGIN_L,
            y0: TITLE_H + row as f64 * PANEL_H + MARGIN_T,
            w: PANEL_W - MARGIN_L - MARGIN_R,
            h: PANEL_H - MARGIN_T - MARGIN_B,
            lo: lo - pad,
            hi: hi + pad,
        }
    }

    fn y(&self, v: f64) -> f64 {
        self.y0 + self.h * (self.hi - v) / (self.hi - self.lo)
    }

    fn axes(&self, out: &mut String, title: &str, x_label: &str) {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="12">{}</text>"#,
            self.x0 + self.w / 2.0,
            self.y0 - 10.0,
            escape(title)
        );
        let _ = writeln!(
            out,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
            self.x0, self.y0, self.w, self.h
        );
        for t in ticks(self.lo, self.hi) {
            let y = self.y(t);
            let _ = writeln!(
                out,
                r#"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end" font-size="10">{}</text>"#,
                self.x0 - 4.0,
                self.x0,
                self.x0 - 6.0,
                y + 3.5,
                tick_label(t)
            );
        }
        if !x_label.is_empty() {
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="11">{}</text>"#,
                self.x0 + self.w / 2.0,
                self.y0 + self.h + 34.0,
                escape(x_label)
            );
        }
    }
}

/// One panel of boxes sharing a vertical axis.
#[derive(Debug, Clone)]
pub struct BoxPanel {
    pub title: String,
    pub boxes: Vec<(String, Quantiles)>,
}

/// Box-and-whisker panels laid out in rows of `columns`. Whiskers span
/// min to max.
pub fn boxplot_svg(title: &str, panels: &[BoxPanel], columns: usize) -> String {
    let columns = columns.clamp(1, panels.len().max(1));
    let rows = panels.len().div_ceil(columns).max(1);
    let mut out = String::new();
    open(&mut out, PANEL_W * columns as f64, TITLE_H + PANEL_H * rows as f64, title);
    for (i, p) in panels.iter().enumerate() {
        let lo = p.boxes.iter().map(|(_, q)| q.min).fold(f64::INFINITY, f64::min);
        let hi = p.boxes.iter().map(|(_, q)| q.max).fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 1.0) };
        let fr = Frame::new(i % columns, i / columns, lo, hi);
        fr.axes(&mut out, &p.title, "");
        let slot = fr.w / p.boxes.len().max(1) as f64;
        for (j, (name, q)) in p.boxes.iter().enumerate() {
            let cx = fr.x0 + slot * (j as f64 + 0.5);
            let half = (slot * 0.3).min(24.0);
            let _ = writeln!(
                out,
                r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="black"/>"#,
                fr.y(q.max),
                fr.y(q.min)
            );
            let _ = writeln!(
                out,
                r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#9ecae1" stroke="black"/>"##,
                cx - half,
                fr.y(q.q3),
                2.0 * half,
                (fr.y(q.q1) - fr.y(q.q3)).max(0.5)
            );
            let _ = writeln!(
                out,
                r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black" stroke-width="2"/>"#,
                cx - half,
                fr.y(q.median),
                cx + half,
                fr.y(q.median)
            );
            let _ = writeln!(
                out,
                r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle" font-size="10">{}</text>"#,
                fr.y0 + fr.h + 14.0,
                escape(name)
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

/// One correlogram panel per `(eu, group)` series: vertical lollipops from
/// zero and dashed lines at `±band`.
pub fn correlogram_svg(title: &str, results: &[AcfResult], columns: usize) -> String {
    let columns = columns.clamp(1, results.len().max(1));
    let rows = results.len().div_ceil(columns).max(1);
    let mut out = String::new();
    open(&mut out, PANEL_W * columns as f64, TITLE_H + PANEL_H * rows as f64, title);
    for (i, r) in results.iter().enumerate() {
        let fr = Frame::new(i % columns, i / columns, -1.0, 1.0);
        fr.axes(&mut out, &format!("eu {}, group {}", r.eu, r.group), "lag");
        let zero = fr.y(0.0);
        let _ = writeln!(
            out,
            r#"<line x1="{:.2}" y1="{zero:.2}" x2="{:.2}" y2="{zero:.2}" stroke="gray"/>"#,
            fr.x0,
            fr.x0 + fr.w
        );
        for b in [r.band, -r.band] {
            let y = fr.y(b);
            let _ = writeln!(
                out,
                r#"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="blue" stroke-dasharray="5,4"/>"#,
                fr.x0,
                fr.x0 + fr.w
            );
        }
        let slot = fr.w / (r.acf.len() + 1) as f64;
        for (h, &v) in r.acf.iter().enumerate() {
            let x = fr.x0 + slot * (h + 1) as f64;
            let y = fr.y(v);
            let _ = writeln!(
                out,
                r#"<line x1="{x:.2}" y1="{zero:.2}" x2="{x:.2}" y2="{y:.2}" stroke="black"/><circle cx="{x:.2}" cy="{y:.2}" r="2.5"/>"#
            );
            let _ = writeln!(
                out,
                r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle" font-size="9">{}</text>"#,
                fr.y0 + fr.h + 12.0,
                h + 1
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tick_values() {
        assert_eq!(ticks(0.0, 1.0), vec![0.0, 0.2, 0.4, 0.6000000000000001, 0.8, 1.0]);
        assert_eq!(ticks(-1.1, 1.1), vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
    }

    #[test]
    fn labels_are_escaped() {
        let q = Quantiles::of(&[1.0, 2.0, 3.0]).unwrap();
        let s = boxplot_svg(
            "a<b",
            &[BoxPanel {
                title: "x&y".into(),
                boxes: vec![("m".into(), q)],
            }],
            3,
        );
        assert!(s.contains("a&lt;b") && s.contains("x&amp;y"));
        assert!(s.ends_with("</svg>\n"));
    }
}
