//! Static SVG figures: AIC against scale or perplexity, one panel per dataset.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{Context, Result};
use psyeval_core::metastats::Architecture;
use serde::Deserialize;

use crate::stages::{Run, StageReport};
use crate::tables::{AIC_FILE, AicRow, PERPLEXITY_FILE, PerplexityRow, read_table};

const STYLE: &str = include_str!("../assets/style.toml");

#[derive(Debug, Clone, Deserialize)]
pub struct Style {
    pub font_family: String,
    pub font_size: f64,
    pub title_size: f64,
    pub panel_width: f64,
    pub panel_height: f64,
    pub panel_columns: usize,
    pub margin_left: f64,
    pub margin_right: f64,
    pub margin_top: f64,
    pub margin_bottom: f64,
    pub header_height: f64,
    pub legend_height: f64,
    pub line_width: f64,
    pub marker_radius: f64,
    pub axis_color: String,
    pub grid_color: String,
    pub background: String,
    pub ticks: usize,
    pub colors: BTreeMap<String, String>,
}

impl Style {
    pub fn builtin() -> Self {
        toml::from_str(STYLE).expect("bundled style parses")
    }

    fn color(&self, arch: Architecture) -> &str {
        self.colors.get(arch.as_str()).map_or("#000000", String::as_str)
    }
}

#[derive(Debug, Clone)]
pub struct Series {
    pub architecture: Architecture,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct Panel {
    pub title: String,
    pub series: Vec<Series>,
}

#[derive(Debug, Clone)]
pub struct Figure {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub panels: Vec<Panel>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Round tick positions covering `[lo, hi]`.
fn nice_ticks(lo: f64, hi: f64, target: usize) -> (Vec<f64>, usize) {
    let raw = (hi - lo) / target.max(1) as f64;
    let mag = 10f64.powf(raw.log10().floor());
    // largest round step that still leaves target - 1 intervals
    let span = hi - lo;
    let floor = target.saturating_sub(1).max(1) as f64;
    let step = [10.0, 5.0, 2.0, 1.0].iter().map(|m| m * mag).find(|s| span / s >= floor).unwrap_or(mag);
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    ((first..=last).map(|k| k as f64 * step).collect(), decimals)
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = if hi > lo { 0.06 * (hi - lo) } else { 1.0 };
    (lo - pad, hi + pad)
}

impl Figure {
    pub fn render(&self, style: &Style) -> String {
        let cols = style.panel_columns.max(1).min(self.panels.len().max(1));
        let rows = self.panels.len().div_ceil(cols).max(1);
        let cell_w = style.margin_left + style.panel_width + style.margin_right;
        let cell_h = style.margin_top + style.panel_height + style.margin_bottom;
        let width = cols as f64 * cell_w;
        let height = style.header_height + rows as f64 * cell_h + style.legend_height;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="{}" font-size="{}">"#,
            escape(&style.font_family),
            style.font_size
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="{}"/>"#, style.background);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="{}" font-weight="bold">{}</text>"#,
            width / 2.0,
            style.header_height * 0.65,
            style.title_size,
            escape(&self.title)
        );
        if self.panels.is_empty() {
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">no datasets</text>"#,
                width / 2.0,
                style.header_height + cell_h / 2.0
            );
        }
        for (i, panel) in self.panels.iter().enumerate() {
            let ox = (i % cols) as f64 * cell_w + style.margin_left;
            let oy = style.header_height + (i / cols) as f64 * cell_h + style.margin_top;
            self.render_panel(&mut s, style, panel, ox, oy);
        }
        let ly = height - style.legend_height / 2.0;
        for (k, arch) in Architecture::ALL.iter().enumerate() {
            let lx = width / 2.0 - 150.0 + k as f64 * 100.0;
            let _ = writeln!(
                s,
                r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{}" stroke-width="{}"/>"#,
                lx,
                lx + 18.0,
                style.color(*arch),
                style.line_width
            );
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, lx + 22.0, ly + 4.0, legend_name(*arch));
        }
        s.push_str("</svg>\n");
        s
    }

    fn render_panel(&self, s: &mut String, style: &Style, panel: &Panel, ox: f64, oy: f64) {
        let (w, h) = (style.panel_width, style.panel_height);
        let points = || panel.series.iter().flat_map(|se| se.points.iter());
        let (x0, x1) = range(points().map(|p| p.0));
        let (y0, y1) = range(points().map(|p| p.1));
        let px = |x: f64| ox + (x - x0) / (x1 - x0) * w;
        let py = |y: f64| oy + h - (y - y0) / (y1 - y0) * h;

        let _ = writeln!(s, r#"<g>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-weight="bold">{}</text>"#,
            ox + w / 2.0,
            oy - 8.0,
            escape(&panel.title)
        );
        let (xt, xd) = nice_ticks(x0, x1, style.ticks);
        for t in xt {
            let x = px(t);
            let _ = writeln!(
                s,
                r#"<line x1="{x:.1}" y1="{oy:.1}" x2="{x:.1}" y2="{:.1}" stroke="{}"/>"#,
                oy + h,
                style.grid_color
            );
            let _ = writeln!(s, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{t:.xd$}</text>"#, oy + h + 14.0);
        }
        let (yt, yd) = nice_ticks(y0, y1, style.ticks);
        for t in yt {
            let y = py(t);
            let _ = writeln!(
                s,
                r#"<line x1="{ox:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="{}"/>"#,
                ox + w,
                style.grid_color
            );
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{t:.yd$}</text>"#, ox - 4.0, y + 4.0);
        }
        let _ = writeln!(
            s,
            r#"<rect x="{ox:.1}" y="{oy:.1}" width="{w:.1}" height="{h:.1}" fill="none" stroke="{}"/>"#,
            style.axis_color
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            ox + w / 2.0,
            oy + h + 30.0,
            escape(&self.x_label)
        );
        let (lx, ly) = (ox - 44.0, oy + h / 2.0);
        let _ = writeln!(
            s,
            r#"<text x="{lx:.1}" y="{ly:.1}" text-anchor="middle" transform="rotate(-90 {lx:.1} {ly:.1})">{}</text>"#,
            escape(&self.y_label)
        );
        for series in &panel.series {
            let color = style.color(series.architecture);
            let path: Vec<String> = series.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="{}"/>"#,
                path.join(" "),
                style.line_width
            );
            for &(x, y) in &series.points {
                let _ = writeln!(
                    s,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="{}" fill="{color}"/>"#,
                    px(x),
                    py(y),
                    style.marker_radius
                );
            }
        }
        let _ = writeln!(s, "</g>");
    }
}

fn legend_name(a: Architecture) -> &'static str {
    match a {
        Architecture::Pythia => "Pythia",
        Architecture::Rwkv => "RWKV",
        Architecture::Mamba => "Mamba",
    }
}

/// One panel per dataset of `group`, points sorted by x within each architecture.
pub fn aic_figure(rows: &[AicRow], group: &str, title: &str, x_label: &str, x_of: &dyn Fn(&AicRow) -> Option<f64>) -> Figure {
    let mut order: Vec<&str> = Vec::new();
    for r in rows.iter().filter(|r| r.group == group) {
        if !order.contains(&r.dataset.as_str()) {
            order.push(&r.dataset);
        }
    }
    let panels = order
        .into_iter()
        .map(|d| {
            let series = Architecture::ALL
                .iter()
                .filter_map(|&arch| {
                    let mut points: Vec<(f64, f64)> = rows
                        .iter()
                        .filter(|r| r.dataset == d && r.architecture == arch.as_str())
                        .filter_map(|r| Some((x_of(r)?, r.aic?)))
                        .collect();
                    points.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
                    (!points.is_empty()).then_some(Series { architecture: arch, points })
                })
                .collect();
            Panel { title: d.to_string(), series }
        })
        .collect();
    Figure { title: title.to_string(), x_label: x_label.to_string(), y_label: "AIC".into(), panels }
}

pub fn perplexity_figure(rows: &[PerplexityRow]) -> Figure {
    let series = Architecture::ALL
        .iter()
        .filter_map(|&arch| {
            let mut points: Vec<(f64, f64)> = rows
                .iter()
                .filter(|r| r.architecture == arch.as_str())
                .map(|r| ((r.param_count as f64).ln(), r.perplexity))
                .collect();
            points.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
            (!points.is_empty()).then_some(Series { architecture: arch, points })
        })
        .collect();
    let panels = if rows.is_empty() { Vec::new() } else { vec![Panel { title: "Perplexity corpus".into(), series }] };
    Figure {
        title: "Word-level perplexity".into(),
        x_label: "ln(parameters)".into(),
        y_label: "perplexity".into(),
        panels,
    }
}

pub fn plot(run: &Run) -> Result<StageReport> {
    let start = Instant::now();
    let style = Style::builtin();
    let aic: Vec<AicRow> = read_table(&run.out.join(AIC_FILE)).context("run the fit stage first")?;
    let ppl_path = run.out.join(PERPLEXITY_FILE);
    let ppl: Vec<PerplexityRow> = if ppl_path.exists() { read_table(&ppl_path)? } else { Vec::new() };
    let ppl_of: BTreeMap<&str, f64> = ppl.iter().map(|r| (r.engine.as_str(), r.perplexity)).collect();
    if aic.is_empty() {
        log::warn!("no fits to plot; writing empty figures");
    }

    let mut figures: Vec<(String, Figure)> = Vec::new();
    for (group, label) in [("N400", "n400"), ("RT", "rt")] {
        let scale = |r: &AicRow| Some((r.param_count as f64).ln());
        figures.push((
            format!("aic_scale_{label}.svg"),
            aic_figure(&aic, group, &format!("{group}: AIC by model scale"), "ln(parameters)", &scale),
        ));
        if !ppl.is_empty() {
            let neg_log_ppl = |r: &AicRow| ppl_of.get(r.engine.as_str()).map(|p| -p.ln());
            let fig = aic_figure(&aic, group, &format!("{group}: AIC by perplexity"), "-ln(perplexity)", &neg_log_ppl);
            figures.push((format!("aic_perplexity_{label}.svg"), fig));
        }
    }
    if ppl.is_empty() {
        log::warn!("no perplexity table; perplexity figures skipped");
    } else {
        figures.push(("perplexity.svg".into(), perplexity_figure(&ppl)));
    }
    let mut outputs: Vec<PathBuf> = Vec::new();
    for (name, fig) in figures {
        let path = run.out.join(name);
        std::fs::write(&path, fig.render(&style)).with_context(|| format!("writing {}", path.display()))?;
        outputs.push(path);
    }
    Ok(StageReport { name: "plot", outputs, failures: Vec::new(), seconds: start.elapsed().as_secs_f64() })
}
