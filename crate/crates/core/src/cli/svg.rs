//! Self-contained SVG charts. Every chart carries its plotted numbers in XML comments
//! so the files can be diffed and re-read without a plotting stack.

use std::fmt::Write as _;

use nalgebra::{DMatrix, Matrix2, SymmetricEigen};

use crate::dagger::MetricsRecord;
use crate::error::{Error, Result};
use crate::reachtube::{ReachTube, TubeSlice};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 60.0;
const ELLIPSE_POINTS: usize = 64;

const BETA_MINUS_COLOR: &str = "#2ca02c";
const BETA_PLUS_COLOR: &str = "#e6c229";
const EVAL_COLOR: &str = "#1f77b4";
const COMBINED_COLOR: &str = "#ff7f0e";

/// Maps data coordinates onto the plotting area.
struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn new(x: (f64, f64), y: (f64, f64)) -> Self {
        Frame {
            x: widen(x),
            y: widen(y),
        }
    }

    fn px(&self, x: f64) -> f64 {
        let w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
        MARGIN_LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * w
    }

    fn py(&self, y: f64) -> f64 {
        let h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
        HEIGHT - MARGIN_BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * h
    }

    fn axes(&self, out: &mut String, title: &str, xlabel: &str, ylabel: &str, x_ticks: bool) {
        let (l, r) = (MARGIN_LEFT, WIDTH - MARGIN_RIGHT);
        let (t, b) = (MARGIN_TOP, HEIGHT - MARGIN_BOTTOM);
        let _ = writeln!(
            out,
            r##"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="#333"/>"##,
            r - l,
            b - t
        );
        for k in 0..=4 {
            let v = self.y.0 + (self.y.1 - self.y.0) * k as f64 / 4.0;
            let y = self.py(v);
            let _ = writeln!(
                out,
                r##"<line x1="{}" y1="{y:.2}" x2="{l}" y2="{y:.2}" stroke="#333"/><text x="{}" y="{:.2}" font-size="11" text-anchor="end">{}</text>"##,
                l - 5.0,
                l - 8.0,
                y + 4.0,
                tick(v)
            );
            if x_ticks {
                let v = self.x.0 + (self.x.1 - self.x.0) * k as f64 / 4.0;
                let x = self.px(v);
                let _ = writeln!(
                    out,
                    r##"<line x1="{x:.2}" y1="{b}" x2="{x:.2}" y2="{}" stroke="#333"/><text x="{x:.2}" y="{}" font-size="11" text-anchor="middle">{}</text>"##,
                    b + 5.0,
                    b + 18.0,
                    tick(v)
                );
            }
        }
        let _ = writeln!(
            out,
            r#"<text x="{}" y="24" font-size="15" text-anchor="middle">{}</text>"#,
            WIDTH / 2.0,
            escape(title)
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{}</text>"#,
            (l + r) / 2.0,
            HEIGHT - 18.0,
            escape(xlabel)
        );
        let _ = writeln!(
            out,
            r#"<text x="18" y="{0}" font-size="12" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#,
            (t + b) / 2.0,
            escape(ylabel)
        );
    }
}

fn widen((lo, hi): (f64, f64)) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) {
        return (0.0, 1.0);
    }
    if hi - lo > 1e-12 * lo.abs().max(hi.abs()).max(1.0) {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    } else {
        let pad = 0.5 * lo.abs().max(1.0);
        (lo - pad, hi + pad)
    }
}

fn tick(v: f64) -> String {
    if v.abs() >= 1e4 || (v != 0.0 && v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{}", (v * 1000.0).round() / 1000.0)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Text safe inside an XML comment.
fn comment(s: &str) -> String {
    let mut t = s.replace("--", "- -");
    if t.ends_with('-') {
        t.push(' ');
    }
    format!("<!-- {t} -->\n")
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn document(body: &str, data: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n\
         {data}<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{body}</svg>\n"
    )
}

fn polyline(out: &mut String, points: &[(f64, f64)], color: &str, width: f64, extra: &str) {
    let pts: Vec<String> = points.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    let _ = writeln!(
        out,
        r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="{width}"{extra}/>"#,
        pts.join(" ")
    );
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Box-and-whisker chart, one box per group; whiskers span min to max.
pub fn boxplot(title: &str, ylabel: &str, groups: &[(String, Vec<f64>)]) -> String {
    let all: Vec<f64> = groups.iter().flat_map(|(_, v)| v.iter().copied()).collect();
    let lo = all.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let n = groups.len().max(1) as f64;
    let frame = Frame::new((0.0, n), (lo, hi));
    let mut data = String::new();
    let mut body = String::new();
    frame.axes(&mut body, title, "thresholds", ylabel, false);
    let slot = (WIDTH - MARGIN_LEFT - MARGIN_RIGHT) / n;
    for (k, (label, values)) in groups.iter().enumerate() {
        data.push_str(&comment(&format!("group {label}: {}", join(values))));
        let cx = MARGIN_LEFT + slot * (k as f64 + 0.5);
        let _ = writeln!(
            body,
            r#"<text x="{cx:.2}" y="{}" font-size="11" text-anchor="middle">{}</text>"#,
            HEIGHT - MARGIN_BOTTOM + 18.0,
            escape(label)
        );
        if values.is_empty() {
            continue;
        }
        let mut v = values.clone();
        v.sort_by(f64::total_cmp);
        let q: Vec<f64> = [0.0, 0.25, 0.5, 0.75, 1.0]
            .iter()
            .map(|&p| frame.py(quantile(&v, p)))
            .collect();
        let half = (0.25 * slot).min(40.0);
        let _ = writeln!(
            body,
            r##"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="#333"/>"##,
            q[0], q[4]
        );
        for &y in &[q[0], q[4]] {
            let _ = writeln!(
                body,
                r##"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#333"/>"##,
                cx - half / 2.0,
                cx + half / 2.0
            );
        }
        let _ = writeln!(
            body,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#9ecae1" stroke="#333"/>"##,
            cx - half,
            q[3],
            2.0 * half,
            (q[1] - q[3]).max(0.5)
        );
        let _ = writeln!(
            body,
            r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#d62728" stroke-width="2"/>"##,
            cx - half,
            q[2],
            cx + half,
            q[2]
        );
    }
    document(&body, &data)
}

/// Outline of the projection of `slice` (scaled by `scale`) onto coordinates `(i, j)`.
fn projected_ellipse(slice: &TubeSlice, i: usize, j: usize, scale: f64) -> Result<Vec<(f64, f64)>> {
    let a = slice.metric();
    let gram: DMatrix<f64> = a.transpose() * &a;
    let shape = gram
        .try_inverse()
        .ok_or_else(|| Error::Validation(format!("slice at tau {} has a singular metric", slice.tau)))?;
    let r2 = (slice.r * scale).powi(2);
    let sub = Matrix2::new(shape[(i, i)], shape[(i, j)], shape[(j, i)], shape[(j, j)]) * r2;
    let eig = SymmetricEigen::new(sub);
    let axes = eig.eigenvectors * Matrix2::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    Ok((0..=ELLIPSE_POINTS)
        .map(|k| {
            let t = std::f64::consts::TAU * k as f64 / ELLIPSE_POINTS as f64;
            let (c, s) = (t.cos(), t.sin());
            (
                slice.c[i] + axes[(0, 0)] * c + axes[(0, 1)] * s,
                slice.c[j] + axes[(1, 0)] * c + axes[(1, 1)] * s,
            )
        })
        .collect())
}

/// Time colour ramp from dark to light blue.
fn time_color(frac: f64) -> String {
    let lerp = |a: f64, b: f64| (a + (b - a) * frac).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(31.0, 158.0), lerp(59.0, 202.0), lerp(115.0, 225.0))
}

/// Slice ellipses projected onto dimensions `(i, j)` for every `every`-th slice, coloured
/// by time, optionally with the `beta_minus` and `beta_plus` scaled boundaries.
pub fn tube_plot(
    tube: &ReachTube,
    (i, j): (usize, usize),
    every: usize,
    overlay: Option<(f64, f64)>,
) -> Result<String> {
    let dim = tube.dim();
    if dim < 2 {
        return Err(Error::Config(format!("a 2-D plot needs at least 2 state dimensions, tube has {dim}")));
    }
    if i >= dim || j >= dim || i == j {
        return Err(Error::Config(format!(
            "plot dimensions ({i}, {j}) must be distinct and below {dim}"
        )));
    }
    if every == 0 {
        return Err(Error::Config("slice stride must be at least 1".into()));
    }
    let last = tube.len() - 1;
    let mut shown: Vec<usize> = (0..tube.len()).step_by(every).collect();
    if shown.last() != Some(&last) {
        shown.push(last);
    }
    let mut curves = Vec::with_capacity(shown.len());
    for &k in &shown {
        let s = &tube.slices[k];
        let mut set = vec![(1.0, projected_ellipse(s, i, j, 1.0)?)];
        if let Some((lo, hi)) = overlay {
            set.push((lo, projected_ellipse(s, i, j, lo)?));
            set.push((hi, projected_ellipse(s, i, j, hi)?));
        }
        curves.push((k, set));
    }
    let pts = curves.iter().flat_map(|(_, set)| set.iter().flat_map(|(_, p)| p.iter()));
    let (mut x, mut y) = ((f64::INFINITY, f64::NEG_INFINITY), (f64::INFINITY, f64::NEG_INFINITY));
    for &(px, py) in pts {
        x = (x.0.min(px), x.1.max(px));
        y = (y.0.min(py), y.1.max(py));
    }
    let frame = Frame::new(x, y);
    let mut data = comment(&format!(
        "tube system={} gamma={} mu={} slices={} dims={i},{j} every={every}",
        tube.source.system,
        tube.gamma,
        tube.mu,
        tube.len()
    ));
    if let Some((lo, hi)) = overlay {
        data.push_str(&comment(&format!("overlay beta_minus={lo} beta_plus={hi}")));
    }
    let mut body = String::new();
    frame.axes(
        &mut body,
        &format!("{} reach-tube", tube.source.system),
        &format!("x{i}"),
        &format!("x{j}"),
        true,
    );
    for (k, set) in &curves {
        let s = &tube.slices[*k];
        data.push_str(&comment(&format!(
            "slice step={k} tau={} c={},{} r={}",
            s.tau, s.c[i], s.c[j], s.r
        )));
        let frac = *k as f64 / last.max(1) as f64;
        for (n, (scale, outline)) in set.iter().enumerate() {
            let px: Vec<(f64, f64)> = outline.iter().map(|&(a, b)| (frame.px(a), frame.py(b))).collect();
            let (color, width) = match n {
                0 => (time_color(frac), 1.2),
                1 => (BETA_MINUS_COLOR.to_string(), 0.8),
                _ => (BETA_PLUS_COLOR.to_string(), 0.8),
            };
            let dash = if n == 0 { "" } else { r#" stroke-dasharray="4 3""# };
            polyline(&mut body, &px, &color, width, &format!(r#"{dash} data-scale="{scale}""#));
        }
    }
    Ok(document(&body, &data))
}

/// Evaluation reward and combined-agent reward per episode, one pair of curves per series.
pub fn metrics_plot(series: &[(String, Vec<MetricsRecord>)]) -> Result<String> {
    if series.iter().all(|(_, m)| m.is_empty()) {
        return Err(Error::EmptyBatch);
    }
    let recs = || series.iter().flat_map(|(_, m)| m.iter());
    let ep_max = recs().map(|r| r.episode as f64).fold(0.0, f64::max);
    let (lo, hi) = recs()
        .flat_map(|r| [r.eval_reward_median, r.combined_reward])
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let frame = Frame::new((0.0, ep_max), (lo, hi));
    let mut body = String::new();
    let mut data = String::new();
    frame.axes(&mut body, "training progress", "episode", "reward", true);
    for (label, m) in series {
        let eval: Vec<f64> = m.iter().map(|r| r.eval_reward_median).collect();
        let comb: Vec<f64> = m.iter().map(|r| r.combined_reward).collect();
        data.push_str(&comment(&format!("series {label} eval_reward_median: {}", join(&eval))));
        data.push_str(&comment(&format!("series {label} combined_reward: {}", join(&comb))));
        for (values, color) in [(&eval, EVAL_COLOR), (&comb, COMBINED_COLOR)] {
            let px: Vec<(f64, f64)> = m
                .iter()
                .zip(values.iter())
                .map(|(r, &v)| (frame.px(r.episode as f64), frame.py(v)))
                .collect();
            polyline(&mut body, &px, color, 1.5, "");
        }
    }
    for (k, (name, color)) in [("imitator eval", EVAL_COLOR), ("combined agent", COMBINED_COLOR)]
        .iter()
        .enumerate()
    {
        let y = MARGIN_TOP + 14.0 + 16.0 * k as f64;
        let x = WIDTH - MARGIN_RIGHT - 140.0;
        let _ = writeln!(
            body,
            r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}" font-size="11">{name}</text>"#,
            x + 20.0,
            x + 26.0,
            y + 4.0
        );
    }
    Ok(document(&body, &data))
}
