//! Static SVG figures of a result bundle.
//!
//! Each figure embeds its plotted numbers in an XML comment so it can be
//! regenerated or re-plotted elsewhere. Output is a pure function of the
//! bundle files.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use zobilevel::problems::oed::softmax;

use crate::config::ExperimentKind;
use crate::error::{HarnessError, Result};
use crate::experiment::ResultBundle;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

#[derive(Clone, Debug)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(name: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Series { name: name.into(), points }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(title: &str) -> String {
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, escape(title)).unwrap();
    s
}

fn data_comment(out: &mut String, series: &[Series]) {
    for se in series {
        write!(out, "<!-- data {}:", se.name.replace("--", "-")).unwrap();
        for (x, y) in &se.points {
            write!(out, " {x:e},{y:e}").unwrap();
        }
        out.push_str(" -->\n");
    }
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// Roughly five round tick values covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| span / s <= 6.0).unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * step {
        out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
        t += step;
    }
    out
}

fn range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 * lo.abs().max(1.0) {
        return (lo - 0.5 * lo.abs().max(1.0), hi + 0.5 * hi.abs().max(1.0));
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (W - LEFT - RIGHT)
    }
    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (H - TOP - BOTTOM)
    }

    fn axes(&self, out: &mut String, x_label: &str, y_label: &str, log_y: bool, x_ticks: bool) {
        let (x0, x1, y0, y1) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
        writeln!(out, r#"<rect x="{x0}" y="{y0}" width="{}" height="{}" fill="none" stroke="black"/>"#, x1 - x0, y1 - y0).unwrap();
        if x_ticks {
            for t in ticks(self.x.0, self.x.1) {
                let p = self.px(t);
                writeln!(out, r#"<line x1="{p:.2}" y1="{y1}" x2="{p:.2}" y2="{}" stroke="black"/>"#, y1 + 5.0).unwrap();
                writeln!(out, r#"<text x="{p:.2}" y="{}" text-anchor="middle">{}</text>"#, y1 + 18.0, tick_label(t)).unwrap();
            }
        }
        for t in ticks(self.y.0, self.y.1) {
            let p = self.py(t);
            let label = if log_y { format!("1e{}", tick_label(t)) } else { tick_label(t) };
            writeln!(out, r##"<line x1="{x0}" y1="{p:.2}" x2="{x1}" y2="{p:.2}" stroke="#dddddd"/>"##).unwrap();
            writeln!(out, r#"<text x="{}" y="{:.2}" text-anchor="end">{label}</text>"#, x0 - 6.0, p + 4.0).unwrap();
        }
        writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, H - 12.0, escape(x_label)).unwrap();
        writeln!(
            out,
            r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            escape(y_label)
        )
        .unwrap();
    }
}

fn legend(out: &mut String, names: &[&str]) {
    for (i, name) in names.iter().enumerate() {
        let y = TOP + 14.0 + 18.0 * i as f64;
        let x = W - RIGHT + 12.0;
        let c = PALETTE[i % PALETTE.len()];
        writeln!(out, r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{c}" stroke-width="2"/>"#, x + 18.0).unwrap();
        writeln!(out, r#"<text x="{}" y="{}">{}</text>"#, x + 24.0, y + 4.0, escape(name)).unwrap();
    }
}

/// Line chart; with `log_y` the values are plotted as `log10`, non-positive ones dropped.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series], log_y: bool) -> String {
    let shown: Vec<Series> = series
        .iter()
        .map(|s| {
            let pts = s.points.iter().filter(|(_, y)| !log_y || *y > 0.0).map(|&(x, y)| (x, if log_y { y.log10() } else { y })).collect();
            Series::new(s.name.clone(), pts)
        })
        .collect();
    let frame = Frame {
        x: range(shown.iter().flat_map(|s| s.points.iter().map(|p| p.0))),
        y: range(shown.iter().flat_map(|s| s.points.iter().map(|p| p.1))),
    };
    let mut out = header(title);
    data_comment(&mut out, series);
    frame.axes(&mut out, x_label, y_label, log_y, true);
    for (i, s) in shown.iter().enumerate() {
        if s.points.is_empty() {
            continue;
        }
        let mut d = String::new();
        for (j, (x, y)) in s.points.iter().enumerate() {
            write!(d, "{}{:.2},{:.2}", if j == 0 { "M" } else { " L" }, frame.px(*x), frame.py(*y)).unwrap();
        }
        writeln!(out, r#"<path d="{d}" fill="none" stroke="{}" stroke-width="1.5"/>"#, PALETTE[i % PALETTE.len()]).unwrap();
    }
    legend(&mut out, &series.iter().map(|s| s.name.as_str()).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}

/// Box plot (quartiles and median) overlaid with the individual values of each group.
pub fn strip_chart(title: &str, y_label: &str, groups: &[(String, Vec<f64>)]) -> String {
    let frame = Frame { x: (0.0, groups.len().max(1) as f64), y: range(groups.iter().flat_map(|g| g.1.iter().copied())) };
    let mut out = header(title);
    data_comment(
        &mut out,
        &groups
            .iter()
            .map(|(n, v)| Series::new(n.clone(), v.iter().enumerate().map(|(i, e)| (i as f64, *e)).collect()))
            .collect::<Vec<_>>(),
    );
    frame.axes(&mut out, "", y_label, false, false);
    for (gi, (name, vals)) in groups.iter().enumerate() {
        let c = PALETTE[gi % PALETTE.len()];
        let cx = frame.px(gi as f64 + 0.5);
        let mut sorted = vals.clone();
        sorted.sort_by(f64::total_cmp);
        if !sorted.is_empty() {
            let q = |p: f64| sorted[((sorted.len() - 1) as f64 * p).round() as usize];
            let (q1, q2, q3) = (frame.py(q(0.25)), frame.py(q(0.5)), frame.py(q(0.75)));
            writeln!(out, r#"<rect x="{:.2}" y="{q3:.2}" width="40" height="{:.2}" fill="none" stroke="{c}"/>"#, cx - 20.0, q1 - q3)
                .unwrap();
            writeln!(out, r#"<line x1="{:.2}" y1="{q2:.2}" x2="{:.2}" y2="{q2:.2}" stroke="{c}" stroke-width="2"/>"#, cx - 20.0, cx + 20.0)
                .unwrap();
        }
        for (i, v) in vals.iter().enumerate() {
            // Deterministic horizontal jitter.
            let dx = ((i * 37) % 21) as f64 - 10.0;
            writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="{c}" fill-opacity="0.6"/>"#, cx + dx, frame.py(*v)).unwrap();
        }
        writeln!(out, r#"<text x="{cx:.2}" y="{}" text-anchor="middle" font-size="10">{}</text>"#, H - BOTTOM + 16.0, escape(name))
            .unwrap();
    }
    out.push_str("</svg>\n");
    out
}

/// Bar chart of one value per category.
pub fn bar_chart(title: &str, x_label: &str, y_label: &str, values: &[f64]) -> String {
    let top = values.iter().copied().fold(0.0, f64::max).max(1e-12) * 1.05;
    let frame = Frame { x: (0.0, values.len().max(1) as f64), y: (0.0, top) };
    let mut out = header(title);
    data_comment(&mut out, &[Series::new("bars", values.iter().enumerate().map(|(i, v)| (i as f64, *v)).collect())]);
    frame.axes(&mut out, x_label, y_label, false, false);
    let width = (frame.px(1.0) - frame.px(0.0)) * 0.8;
    for (i, v) in values.iter().enumerate() {
        let x = frame.px(i as f64 + 0.1);
        let y = frame.py(*v);
        writeln!(out, r#"<rect x="{x:.2}" y="{y:.2}" width="{width:.2}" height="{:.2}" fill="{}"/>"#, frame.py(0.0) - y, PALETTE[0])
            .unwrap();
    }
    out.push_str("</svg>\n");
    out
}

/// Grayscale renderings of square images side by side.
pub fn image_panel(title: &str, side: usize, images: &[(&str, &[f64])]) -> String {
    let mut out = header(title);
    data_comment(
        &mut out,
        &images.iter().map(|(n, img)| Series::new(*n, img.iter().enumerate().map(|(i, v)| (i as f64, *v)).collect())).collect::<Vec<_>>(),
    );
    let cell = ((H - TOP - BOTTOM) / side as f64).min((W - 40.0) / (images.len() as f64 * side as f64 + 2.0));
    for (k, (name, img)) in images.iter().enumerate() {
        let x0 = 20.0 + k as f64 * (side as f64 * cell + 20.0);
        for (i, v) in img.iter().enumerate() {
            let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            let (r, c) = (i / side, i % side);
            writeln!(
                out,
                r#"<rect x="{:.2}" y="{:.2}" width="{cell:.2}" height="{cell:.2}" fill="rgb({g},{g},{g})"/>"#,
                x0 + c as f64 * cell,
                TOP + r as f64 * cell
            )
            .unwrap();
        }
        writeln!(out, r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#, x0 + side as f64 * cell / 2.0, H - 20.0, escape(name))
            .unwrap();
    }
    out.push_str("</svg>\n");
    out
}

/// Header and rows of a numeric CSV with a header line.
fn read_table(path: &std::path::Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::Bundle(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<String> =
        lines.next().ok_or_else(|| HarnessError::Bundle(format!("{} is empty", path.display())))?.split(',').map(str::to_string).collect();
    let rows = lines
        .map(|l| {
            l.split(',').map(|f| if f.is_empty() { Ok(f64::NAN) } else { f.parse::<f64>() }).collect::<std::result::Result<Vec<_>, _>>()
        })
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| HarnessError::Bundle(format!("{}: {e}", path.display())))?;
    Ok((header, rows))
}

fn column(header: &[String], rows: &[Vec<f64>], name: &str) -> Result<Vec<f64>> {
    let i = header.iter().position(|h| h == name).ok_or_else(|| HarnessError::Bundle(format!("column `{name}` is missing")))?;
    Ok(rows.iter().map(|r| r[i]).collect())
}

/// Renders the figures of a bundle into `<dir>/plots` and returns their paths.
/// Nothing is written when an input is missing or the run record is empty.
pub fn emit_plots(bundle: &ResultBundle) -> Result<Vec<PathBuf>> {
    let kind = bundle.config.experiment;
    let (header, rows) = read_table(&bundle.run_csv())?;
    if rows.is_empty() {
        return Err(HarnessError::Bundle("the run record has no iterations".into()));
    }
    let k = column(&header, &rows, "k")?;
    let mut figures: Vec<(String, String)> = Vec::new();

    let coord_names: Vec<String> = match kind {
        ExperimentKind::Denoise | ExperimentKind::Oed => vec!["log10 lambda".into(), "log10 tau".into(), "log10 nu".into()],
        ExperimentKind::ToyConvex => (0..bundle.config.dim()).map(|i| format!("y{i}")).collect(),
    };
    let params: Vec<Series> = coord_names
        .iter()
        .enumerate()
        .map(|(i, name)| Ok(Series::new(name.clone(), k.iter().copied().zip(column(&header, &rows, &format!("y{i}"))?).collect())))
        .collect::<Result<_>>()?;
    figures.push(("params".into(), line_chart("Upper-level parameters", "iteration k", "value", &params, false)));

    let delta = Series::new("||Delta_k||", k.iter().copied().zip(column(&header, &rows, "delta_norm")?).collect());
    figures.push(("delta".into(), line_chart("Accumulated map norm", "iteration k", "||Delta_k||", &[delta], false)));

    match kind {
        ExperimentKind::ToyConvex => {
            let map = Series::new("||G_k||", k.iter().copied().zip(column(&header, &rows, "map_norm")?).collect());
            figures.push(("map_norm".into(), line_chart("Prox-gradient map norm", "iteration k", "log10 ||G_k||", &[map], true)));
        }
        ExperimentKind::Denoise | ExperimentKind::Oed => {
            let groups = bundle.validation()?;
            figures.push(("validation".into(), strip_chart("Validation errors", "relative error", &groups)));
            let (rh, rr) = read_table(&bundle.reconstruction_csv())?;
            let truth = column(&rh, &rr, "truth")?;
            let estimate = column(&rh, &rr, "reconstruction")?;
            if kind == ExperimentKind::Denoise {
                let n = truth.len() as f64;
                let xs = |v: &[f64]| (0..v.len()).map(|i| ((i + 1) as f64 / n, v[i])).collect::<Vec<_>>();
                let noisy = column(&rh, &rr, "noisy")?;
                let series =
                    [Series::new("truth", xs(&truth)), Series::new("noisy", xs(&noisy)), Series::new("reconstruction", xs(&estimate))];
                figures.push(("reconstruction".into(), line_chart("Validation sample 0", "t", "signal", &series, false)));
            } else {
                let side = (truth.len() as f64).sqrt().round() as usize;
                if side * side != truth.len() {
                    return Err(HarnessError::Bundle("reconstruction is not a square image".into()));
                }
                figures.push((
                    "reconstruction".into(),
                    image_panel("Validation image 0", side, &[("truth", &truth), ("reconstruction", &estimate)]),
                ));
                let logits = &bundle.summary.learned_y[3..];
                figures.push(("policy".into(), bar_chart("Learned angle policy", "angle index", "probability", &softmax(logits))));
            }
        }
    }

    let dir = bundle.dir.join("plots");
    fs::create_dir_all(&dir)?;
    let mut paths = Vec::new();
    for (name, svg) in figures {
        let path = dir.join(format!("{}_{name}.svg", kind.name()));
        fs::write(&path, svg)?;
        paths.push(path);
    }
    Ok(paths)
}
