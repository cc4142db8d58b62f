//! Minimal deterministic SVG charts.

use std::fmt::Write;

pub const INK: &str = "#222222";
pub const ACCENT: &str = "#c0392b";
pub const MUTED: &str = "#b0b0b0";
pub const BLUE: &str = "#2c6fbb";
pub const GREEN: &str = "#2e8b57";
const GRID: &str = "#eeeeee";

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Line { name: Option<String>, points: Vec<(f64, f64)>, color: &'static str, width: f64, dashed: bool },
    /// Shaded region between two curves sharing x values.
    Band { name: Option<String>, x: Vec<f64>, lower: Vec<f64>, upper: Vec<f64>, color: &'static str },
    Bars { name: Option<String>, points: Vec<(f64, f64)>, color: &'static str, labels: Vec<String> },
    VRule { x: f64, label: Option<String> },
    HRule { y: f64 },
}

impl Layer {
    pub fn line(name: &str, points: Vec<(f64, f64)>, color: &'static str) -> Self {
        Layer::Line { name: Some(name.into()), points, color, width: 2.0, dashed: false }
    }

    pub fn dashed(name: &str, points: Vec<(f64, f64)>, color: &'static str) -> Self {
        Layer::Line { name: Some(name.into()), points, color, width: 2.0, dashed: true }
    }

    /// Thin unnamed line for spaghetti plots.
    pub fn faint(points: Vec<(f64, f64)>) -> Self {
        Layer::Line { name: None, points, color: MUTED, width: 1.0, dashed: false }
    }

    fn name(&self) -> Option<(&str, &'static str)> {
        match self {
            Layer::Line { name: Some(n), color, .. }
            | Layer::Band { name: Some(n), color, .. }
            | Layer::Bars { name: Some(n), color, .. } => Some((n, color)),
            _ => None,
        }
    }

    fn extend(&self, xs: &mut Vec<f64>, ys: &mut Vec<f64>) {
        match self {
            Layer::Line { points, .. } => {
                xs.extend(points.iter().map(|p| p.0));
                ys.extend(points.iter().map(|p| p.1));
            }
            Layer::Band { x, lower, upper, .. } => {
                xs.extend(x);
                ys.extend(lower);
                ys.extend(upper);
            }
            Layer::Bars { points, .. } => {
                xs.extend(points.iter().map(|p| p.0 - 0.5));
                xs.extend(points.iter().map(|p| p.0 + 0.5));
                ys.extend(points.iter().map(|p| p.1));
                ys.push(0.0);
            }
            Layer::VRule { x, .. } => xs.push(*x),
            Layer::HRule { y } => ys.push(*y),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub width: f64,
    pub height: f64,
    pub layers: Vec<Layer>,
    /// Embedded verbatim (escaped) in `<metadata>`.
    pub provenance: String,
}

const LEFT: f64 = 78.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 44.0;
const BOTTOM: f64 = 56.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Tick step from {1, 2, 5} × 10^k giving about `target` intervals.
fn tick_step(span: f64, target: f64) -> f64 {
    let raw = span / target;
    let mag = 10f64.powf(raw.log10().floor());
    let f = raw / mag;
    let nice = if f <= 1.0 {
        1.0
    } else if f <= 2.0 {
        2.0
    } else if f <= 5.0 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn bounds(v: &[f64]) -> (f64, f64) {
    let lo = v.iter().copied().filter(|x| x.is_finite()).fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().filter(|x| x.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 * (1.0 + lo.abs()) {
        return (lo - 1.0, hi + 1.0);
    }
    (lo, hi)
}

fn label(v: f64, step: f64) -> String {
    let decimals = if step >= 1.0 { 0 } else { (-step.log10().floor()) as usize };
    let s = format!("{v:.decimals$}");
    if s == "-0" { "0".into() } else { s }
}

fn path(points: impl Iterator<Item = (f64, f64)>) -> String {
    let mut d = String::new();
    for (i, (x, y)) in points.enumerate() {
        let _ = write!(d, "{}{x:.2},{y:.2}", if i == 0 { "M" } else { " L" });
    }
    d
}

impl Chart {
    pub fn new(title: &str, x_label: &str, y_label: &str, provenance: &str) -> Self {
        Chart {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            width: 760.0,
            height: 440.0,
            layers: Vec::new(),
            provenance: provenance.into(),
        }
    }

    pub fn layer(mut self, layer: Layer) -> Self {
        self.layers.push(layer);
        self
    }

    pub fn render(&self) -> String {
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for l in &self.layers {
            l.extend(&mut xs, &mut ys);
        }
        let (x0, x1) = bounds(&xs);
        let (ylo, yhi) = bounds(&ys);
        let ystep = tick_step(yhi - ylo, 6.0);
        let (y0, y1) = ((ylo / ystep).floor() * ystep, (yhi / ystep).ceil() * ystep);
        let xstep = tick_step(x1 - x0, 8.0).max(1.0);
        let (pw, ph) = (self.width - LEFT - RIGHT, self.height - TOP - BOTTOM);
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#,
            w = self.width,
            h = self.height
        );
        let _ = writeln!(s, "<metadata>{}</metadata>", escape(&self.provenance));
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            self.width / 2.0,
            escape(&self.title)
        );

        let mut t = y0;
        while t <= y1 + ystep * 1e-9 {
            let y = sy(t);
            let _ = writeln!(
                s,
                r#"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{GRID}"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
                LEFT + pw,
                LEFT - 6.0,
                y + 4.0,
                label(t, ystep)
            );
            t += ystep;
        }
        let mut t = (x0 / xstep).ceil() * xstep;
        while t <= x1 + xstep * 1e-9 {
            let x = sx(t);
            let _ = writeln!(
                s,
                r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="{INK}"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                TOP + ph,
                TOP + ph + 5.0,
                TOP + ph + 19.0,
                label(t, xstep)
            );
            t += xstep;
        }
        let _ = writeln!(
            s,
            r#"<rect x="{LEFT}" y="{TOP}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="{INK}"/>"#
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            self.height - 12.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            escape(&self.y_label)
        );

        for l in &self.layers {
            match l {
                Layer::Band { x, lower, upper, color, .. } => {
                    let pts = x.iter().zip(upper).chain(x.iter().zip(lower).rev()).map(|(a, b)| (sx(*a), sy(*b)));
                    let _ = writeln!(s, r#"<path d="{} Z" fill="{color}" fill-opacity="0.25" stroke="none"/>"#, path(pts));
                }
                Layer::Bars { points, color, labels, .. } => {
                    let gap = points.windows(2).map(|w| (w[1].0 - w[0].0).abs()).fold(1.0, f64::min);
                    let bw = 0.7 * gap / (x1 - x0) * pw;
                    for (i, (x, y)) in points.iter().enumerate() {
                        let (top, bottom) = (sy(y.max(0.0)), sy(y.min(0.0)));
                        let _ = writeln!(
                            s,
                            r#"<rect x="{:.2}" y="{top:.2}" width="{bw:.2}" height="{:.2}" fill="{color}"/>"#,
                            sx(*x) - bw / 2.0,
                            bottom - top
                        );
                        if let Some(text) = labels.get(i) {
                            let _ = writeln!(
                                s,
                                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="10">{}</text>"#,
                                sx(*x),
                                top - 4.0,
                                escape(text)
                            );
                        }
                    }
                }
                _ => {}
            }
        }
        for l in &self.layers {
            match l {
                Layer::Line { points, color, width, dashed, .. } => {
                    let pts: Vec<(f64, f64)> =
                        points.iter().filter(|p| p.1.is_finite()).map(|&(x, y)| (sx(x), sy(y))).collect();
                    let dash = if *dashed { r#" stroke-dasharray="6 4""# } else { "" };
                    let _ = writeln!(
                        s,
                        r#"<path d="{}" fill="none" stroke="{color}" stroke-width="{width}"{dash}/>"#,
                        path(pts.into_iter())
                    );
                }
                Layer::VRule { x, label } => {
                    let _ = writeln!(
                        s,
                        r#"<line x1="{:.2}" y1="{TOP}" x2="{:.2}" y2="{:.2}" stroke="{INK}" stroke-dasharray="3 3"/>"#,
                        sx(*x),
                        sx(*x),
                        TOP + ph
                    );
                    if let Some(text) = label {
                        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, sx(*x) + 4.0, TOP + 14.0, escape(text));
                    }
                }
                Layer::HRule { y } => {
                    let _ = writeln!(
                        s,
                        r#"<line x1="{LEFT}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{INK}"/>"#,
                        sy(*y),
                        LEFT + pw,
                        sy(*y)
                    );
                }
                _ => {}
            }
        }

        let named: Vec<(&str, &str)> = self.layers.iter().filter_map(Layer::name).collect();
        for (i, (name, color)) in named.iter().enumerate() {
            let y = TOP + 12.0 + 16.0 * i as f64;
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="14" height="4" fill="{color}"/><text x="{:.2}" y="{:.2}">{}</text>"#,
                LEFT + 10.0,
                y - 4.0,
                LEFT + 30.0,
                y + 1.0,
                escape(name)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}
