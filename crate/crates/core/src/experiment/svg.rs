//! Minimal self-contained SVG writers: heatmaps, quiver overlays, line plots.

use std::fmt::Write;

use crate::griddiag::ScalarGrid;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 560.0;
const LEFT: f64 = 70.0;
const TOP: f64 = 40.0;
const PLOT_W: f64 = 500.0;
const PLOT_H: f64 = 460.0;
/// Heatmaps are block-averaged down to at most this many cells per axis.
const MAX_CELLS: usize = 125;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn header(out: &mut String, title: &str) {
    let _ = write!(
        out,
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n\
         <svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
        LEFT + PLOT_W / 2.0,
        escape(title)
    );
}

fn lerp(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

fn ramp(stops: &[[f64; 3]], t: f64) -> String {
    let t = t.clamp(0.0, 1.0) * (stops.len() - 1) as f64;
    let k = (t.floor() as usize).min(stops.len() - 2);
    let c = lerp(stops[k], stops[k + 1], t - k as f64);
    format!("#{:02x}{:02x}{:02x}", c[0].round() as u8, c[1].round() as u8, c[2].round() as u8)
}

const SEQUENTIAL: [[f64; 3]; 5] = [
    [68.0, 1.0, 84.0],
    [59.0, 82.0, 139.0],
    [33.0, 145.0, 140.0],
    [94.0, 201.0, 98.0],
    [253.0, 231.0, 37.0],
];
const DIVERGING: [[f64; 3]; 3] = [[33.0, 102.0, 172.0], [247.0, 247.0, 247.0], [178.0, 24.0, 43.0]];

/// Colour scale for a heatmap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Palette {
    /// Min to max.
    Sequential,
    /// Symmetric about zero.
    Diverging,
}

/// One arrow: tail `(x, y)` and displacement `(u, v)` in data units.
pub type Arrow = [f64; 4];

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * PLOT_W
    }
    fn py(&self, y: f64) -> f64 {
        TOP + PLOT_H - (y - self.y0) / (self.y1 - self.y0) * PLOT_H
    }
}

fn axes(out: &mut String, f: &Frame, x_label: &str, y_label: &str, xticks: &[(f64, String)], yticks: &[(f64, String)]) {
    let _ = writeln!(
        out,
        "<rect x=\"{LEFT}\" y=\"{TOP}\" width=\"{PLOT_W}\" height=\"{PLOT_H}\" fill=\"none\" stroke=\"black\"/>"
    );
    for (v, label) in xticks {
        let x = f.px(*v);
        let _ = writeln!(
            out,
            "<line x1=\"{x:.2}\" y1=\"{b}\" x2=\"{x:.2}\" y2=\"{b2}\" stroke=\"black\"/>\
             <text x=\"{x:.2}\" y=\"{t}\" text-anchor=\"middle\">{}</text>",
            escape(label),
            b = TOP + PLOT_H,
            b2 = TOP + PLOT_H + 5.0,
            t = TOP + PLOT_H + 18.0
        );
    }
    for (v, label) in yticks {
        let y = f.py(*v);
        let _ = writeln!(
            out,
            "<line x1=\"{l2}\" y1=\"{y:.2}\" x2=\"{LEFT}\" y2=\"{y:.2}\" stroke=\"black\"/>\
             <text x=\"{t}\" y=\"{yt:.2}\" text-anchor=\"end\">{}</text>",
            escape(label),
            l2 = LEFT - 5.0,
            t = LEFT - 8.0,
            yt = y + 4.0
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n\
         <text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>",
        LEFT + PLOT_W / 2.0,
        HEIGHT - 12.0,
        escape(x_label),
        TOP + PLOT_H / 2.0,
        TOP + PLOT_H / 2.0,
        escape(y_label)
    );
}

fn linear_ticks(lo: f64, hi: f64) -> Vec<(f64, String)> {
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let mut ticks = Vec::new();
    let mut k = (lo / step).ceil();
    while k * step <= hi + 1e-9 * step {
        let v = k * step;
        ticks.push((v, format!("{}", (v / step).round() * step)));
        k += 1.0;
    }
    ticks
}

fn colorbar(out: &mut String, lo: f64, hi: f64, palette: Palette) {
    let x = LEFT + PLOT_W + 15.0;
    let steps = 50;
    let h = PLOT_H / steps as f64;
    for s in 0..steps {
        let t = 1.0 - (s as f64 + 0.5) / steps as f64;
        let _ = writeln!(
            out,
            "<rect x=\"{x}\" y=\"{:.2}\" width=\"16\" height=\"{:.2}\" fill=\"{}\"/>",
            TOP + s as f64 * h,
            h + 0.5,
            color(palette, t)
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{x}\" y=\"{}\" font-size=\"10\">{hi:.3e}</text>\n<text x=\"{x}\" y=\"{}\" font-size=\"10\">{lo:.3e}</text>",
        TOP - 4.0,
        TOP + PLOT_H + 14.0
    );
}

fn color(palette: Palette, t: f64) -> String {
    match palette {
        Palette::Sequential => ramp(&SEQUENTIAL, t),
        Palette::Diverging => ramp(&DIVERGING, t),
    }
}

fn heatmap_body(out: &mut String, grid: &ScalarGrid, palette: Palette, f: &Frame) {
    let spec = grid.spec;
    let (bx, by) = (spec.nx.div_ceil(MAX_CELLS), spec.ny.div_ceil(MAX_CELLS));
    let (cx, cy) = (spec.nx.div_ceil(bx), spec.ny.div_ceil(by));
    let mut cells = Vec::with_capacity(cx * cy);
    for cj in 0..cy {
        for ci in 0..cx {
            let (mut s, mut c) = (0.0, 0usize);
            for j in cj * by..((cj + 1) * by).min(spec.ny) {
                for i in ci * bx..((ci + 1) * bx).min(spec.nx) {
                    s += grid.get(i, j);
                    c += 1;
                }
            }
            cells.push(s / c as f64);
        }
    }
    let (lo, hi) = match palette {
        Palette::Sequential => (grid.min(), grid.max()),
        Palette::Diverging => {
            let m = grid.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            (-m, m)
        }
    };
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (w, h) = (spec.dx() * bx as f64, spec.dy() * by as f64);
    let (pw, ph) = (w / (f.x1 - f.x0) * PLOT_W, h / (f.y1 - f.y0) * PLOT_H);
    let _ = writeln!(out, "<g shape-rendering=\"crispEdges\">");
    for cj in 0..cy {
        for ci in 0..cx {
            let v = cells[cj * cx + ci];
            let t = if hi > lo { (v - lo) / span } else { 0.5 };
            let x = f.px(spec.x_min + ci as f64 * w);
            let y = f.py(spec.y_min + (cj + 1) as f64 * h).max(TOP);
            let _ = writeln!(
                out,
                "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\"/>",
                pw.min(LEFT + PLOT_W - x) + 0.3,
                ph.min(TOP + PLOT_H - y) + 0.3,
                color(palette, t)
            );
        }
    }
    let _ = writeln!(out, "</g>");
    colorbar(out, lo, hi, palette);
}

fn grid_frame(grid: &ScalarGrid) -> Frame {
    Frame {
        x0: grid.spec.x_min,
        x1: grid.spec.x_max,
        y0: grid.spec.y_min,
        y1: grid.spec.y_max,
    }
}

/// Heatmap of a scalar grid with a colour bar.
pub fn heatmap(grid: &ScalarGrid, title: &str, palette: Palette) -> String {
    heatmap_with_arrows(grid, &[], title, palette)
}

/// Heatmap with arrows drawn on top; arrow lengths are rescaled so that the
/// longest is 6% of the plot width.
pub fn heatmap_with_arrows(grid: &ScalarGrid, arrows: &[Arrow], title: &str, palette: Palette) -> String {
    let f = grid_frame(grid);
    let mut out = String::new();
    header(&mut out, title);
    heatmap_body(&mut out, grid, palette, &f);
    let longest = arrows
        .iter()
        .map(|a| (a[2] * a[2] + a[3] * a[3]).sqrt())
        .fold(0.0f64, f64::max);
    if longest > 0.0 {
        let k = 0.06 * PLOT_W / longest;
        let _ = writeln!(out, "<g stroke=\"black\" stroke-width=\"0.8\" fill=\"black\">");
        for a in arrows {
            let (x, y) = (f.px(a[0]), f.py(a[1]));
            let (u, v) = (a[2] * k, -a[3] * k);
            let len = (u * u + v * v).sqrt();
            if len < 1e-3 {
                continue;
            }
            let (tx, ty) = (x + u, y + v);
            let (ux, uy) = (u / len, v / len);
            let head = (0.35 * len).min(4.0);
            let (hx, hy) = (tx - head * ux, ty - head * uy);
            let _ = writeln!(
                out,
                "<line x1=\"{x:.2}\" y1=\"{y:.2}\" x2=\"{tx:.2}\" y2=\"{ty:.2}\"/>\
                 <path d=\"M{tx:.2},{ty:.2} L{:.2},{:.2} L{:.2},{:.2} Z\" stroke=\"none\"/>",
                hx - 0.5 * head * uy,
                hy + 0.5 * head * ux,
                hx + 0.5 * head * uy,
                hy - 0.5 * head * ux
            );
        }
        let _ = writeln!(out, "</g>");
    }
    axes(&mut out, &f, "x", "y", &linear_ticks(f.x0, f.x1), &linear_ticks(f.y0, f.y1));
    out.push_str("</svg>\n");
    out
}

/// A named polyline with optional ±error band.
pub struct Series<'a> {
    pub name: &'a str,
    pub color: &'a str,
    pub x: &'a [f64],
    pub y: &'a [f64],
    pub err: Option<&'a [f64]>,
}

/// Log-x line plot with a symmetric-log y axis (values may be negative).
pub fn line_plot(series: &[Series<'_>], title: &str, x_label: &str, y_label: &str) -> String {
    let xs = series.iter().flat_map(|s| s.x.iter().copied()).filter(|x| *x > 0.0);
    let (xmin, xmax) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    let (xmin, xmax) = if xmin < xmax { (xmin, xmax) } else { (xmin / 10.0, xmin * 10.0) };
    let ymax_abs = series
        .iter()
        .flat_map(|s| {
            s.y.iter()
                .enumerate()
                .map(move |(k, y)| y.abs() + s.err.map_or(0.0, |e| e[k]))
        })
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max);
    let lin = if ymax_abs > 0.0 { 1e-3 * ymax_abs } else { 1.0 };
    let sl = |y: f64| y.signum() * (1.0 + y.abs() / lin).log10();
    let ytop = sl(ymax_abs.max(lin));
    let has_neg = series.iter().any(|s| {
        s.y.iter()
            .enumerate()
            .any(|(k, y)| y - s.err.map_or(0.0, |e| e[k]) < 0.0)
    });
    let ybot = if has_neg { -ytop } else { 0.0 };
    let f = Frame {
        x0: xmin.log10(),
        x1: xmax.log10(),
        y0: ybot,
        y1: ytop,
    };

    let mut out = String::new();
    header(&mut out, title);
    for s in series {
        if let Some(err) = s.err {
            let mut d = String::new();
            for (k, x) in s.x.iter().enumerate() {
                let _ = write!(d, "{}{:.2},{:.2} ", if k == 0 { "M" } else { "L" }, f.px(x.log10()), f.py(sl(s.y[k] + err[k])));
            }
            for (k, x) in s.x.iter().enumerate().rev() {
                let _ = write!(d, "L{:.2},{:.2} ", f.px(x.log10()), f.py(sl(s.y[k] - err[k])));
            }
            let _ = writeln!(out, "<path d=\"{}Z\" fill=\"{}\" fill-opacity=\"0.18\" stroke=\"none\"/>", d, s.color);
        }
        let pts: Vec<String> = s
            .x
            .iter()
            .zip(s.y)
            .map(|(x, y)| format!("{:.2},{:.2}", f.px(x.log10()), f.py(sl(*y))))
            .collect();
        let _ = writeln!(
            out,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"/>",
            pts.join(" "),
            s.color
        );
        for p in &pts {
            let (px, py) = p.split_once(',').expect("formatted pair");
            let _ = writeln!(out, "<circle cx=\"{px}\" cy=\"{py}\" r=\"3\" fill=\"{}\"/>", s.color);
        }
    }
    for (k, s) in series.iter().enumerate() {
        let y = TOP + 16.0 + 18.0 * k as f64;
        let x = LEFT + 12.0;
        let _ = writeln!(
            out,
            "<line x1=\"{x}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"{}\" stroke-width=\"2\"/>\
             <text x=\"{}\" y=\"{}\">{}</text>",
            x + 24.0,
            s.color,
            x + 30.0,
            y + 4.0,
            escape(s.name)
        );
    }

    let xticks: Vec<(f64, String)> = (f.x0.ceil() as i32..=f.x1.floor() as i32)
        .map(|e| (e as f64, format!("1e{e}")))
        .collect();
    let mut yticks = vec![(0.0, "0".to_string())];
    let top_exp = ymax_abs.max(lin).log10().floor() as i32;
    for e in (top_exp - 3)..=top_exp {
        let v = 10f64.powi(e);
        if v < lin {
            continue;
        }
        yticks.push((sl(v), format!("1e{e}")));
        if has_neg {
            yticks.push((sl(-v), format!("-1e{e}")));
        }
    }
    axes(&mut out, &f, x_label, y_label, &xticks, &yticks);
    out.push_str("</svg>\n");
    out
}
