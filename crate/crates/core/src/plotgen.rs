//! CSV tables and static SVG charts built from sweep records.
//!
//! Every chart is first reduced to a table of aggregated points with fixed
//! columns; the SVG is drawn from that table alone, so a marker's position
//! can always be recomputed from its CSV row. Output bytes depend only on
//! the input records.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::splitsweep::{self, Metric, SweepRecord};

pub const CSV_HEADER: &str = "budget_params,budget_std_units,N,k,member_params,metric,mean,stddev,n_replicates";

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 150.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChartKind {
    /// Quality against ensemble size, one line per budget.
    MemorySplit,
    /// Optimal ensemble size against budget.
    OptimalTrajectory,
    /// Quality against member width, one line per ensemble size.
    WidthQuality,
    /// Memory-split chart of calibrated NLL.
    NllSplit,
}

impl ChartKind {
    pub const ALL: [ChartKind; 4] = [
        ChartKind::MemorySplit,
        ChartKind::OptimalTrajectory,
        ChartKind::WidthQuality,
        ChartKind::NllSplit,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ChartKind::MemorySplit => "memory-split",
            ChartKind::OptimalTrajectory => "optimal-trajectory",
            ChartKind::WidthQuality => "width-quality",
            ChartKind::NllSplit => "nll-split",
        }
    }

    pub fn x_axis(self) -> XAxis {
        match self {
            ChartKind::MemorySplit | ChartKind::NllSplit => XAxis::Log2N,
            ChartKind::OptimalTrajectory => XAxis::BudgetStdUnits,
            ChartKind::WidthQuality => XAxis::WidthFactor,
        }
    }
}

impl fmt::Display for ChartKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ChartKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ChartKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown chart kind '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XAxis {
    Log2N,
    BudgetStdUnits,
    WidthFactor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChartSpec {
    pub kind: ChartKind,
    pub metric: Metric,
}

impl ChartSpec {
    /// `nll-split` always plots calibrated NLL; the others default to
    /// accuracy.
    pub fn new(kind: ChartKind) -> Self {
        let metric = match kind {
            ChartKind::NllSplit => Metric::CalibratedNll,
            _ => Metric::Accuracy,
        };
        ChartSpec { kind, metric }
    }

    pub fn with_metric(kind: ChartKind, metric: Metric) -> Self {
        ChartSpec { kind, metric }
    }
}

/// One aggregated point, a CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct ChartRow {
    pub budget_params: u64,
    pub budget_std_units: f64,
    pub n: u64,
    pub k: u64,
    pub member_params: u64,
    pub metric: Metric,
    pub mean: f64,
    pub stddev: f64,
    pub n_replicates: usize,
    pub sources: Vec<String>,
}

impl ChartRow {
    /// Data-space coordinates of this row's marker.
    pub fn xy(&self, kind: ChartKind) -> (f64, f64) {
        match kind.x_axis() {
            XAxis::Log2N => ((self.n as f64).log2(), self.mean),
            XAxis::BudgetStdUnits => (self.budget_std_units.log2(), (self.n as f64).log2()),
            XAxis::WidthFactor => (self.k as f64, self.mean),
        }
    }

    /// Key of the line this row belongs to.
    fn series(&self, kind: ChartKind) -> (u64, String) {
        match kind.x_axis() {
            XAxis::Log2N => (self.budget_params, format!("B = {}", self.budget_params)),
            XAxis::BudgetStdUnits => (0, format!("N* ({})", self.metric.as_str())),
            XAxis::WidthFactor => (self.n, format!("N = {}", self.n)),
        }
    }
}

/// Aggregates records into chart rows. Ordering: by budget then `N` for
/// split charts, by budget for the trajectory, by `N` then `k` for width
/// charts.
pub fn chart_rows(records: &[SweepRecord], spec: ChartSpec) -> Result<Vec<ChartRow>> {
    if records.is_empty() {
        return Err(Error::EmptySelection(format!(
            "no records selected for chart '{}' (metric {})",
            spec.kind,
            spec.metric.as_str()
        )));
    }
    if let Some(r) = records.iter().find(|r| r.family != records[0].family) {
        return Err(Error::InvalidInput(format!(
            "records mix families {} and {}",
            records[0].family, r.family
        )));
    }
    let curves = splitsweep::split_curves(records, spec.metric)?;
    let mut rows = Vec::new();
    for c in &curves {
        let make = |p: &splitsweep::SplitPoint| ChartRow {
            budget_params: c.budget.params,
            budget_std_units: c.budget.standard_units,
            n: p.n,
            k: p.k,
            member_params: p.member_params,
            metric: spec.metric,
            mean: p.mean,
            stddev: p.stddev,
            n_replicates: p.replicates,
            sources: p.sources.clone(),
        };
        match spec.kind {
            ChartKind::OptimalTrajectory => rows.push(make(c.optimum())),
            _ => rows.extend(c.points.iter().map(make)),
        }
    }
    if spec.kind == ChartKind::WidthQuality {
        rows.sort_by_key(|r| (r.n, r.k, r.budget_params));
    }
    Ok(rows)
}

pub fn to_csv(rows: &[ChartRow]) -> Vec<u8> {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.budget_params,
            r.budget_std_units,
            r.n,
            r.k,
            r.member_params,
            r.metric.as_str(),
            r.mean,
            r.stddev,
            r.n_replicates
        );
    }
    out.into_bytes()
}

/// Maps data coordinates to the plot area.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub x_lo: f64,
    pub x_hi: f64,
    pub y_lo: f64,
    pub y_hi: f64,
}

impl Frame {
    /// Bounds covering every marker and error bar, padded by 5%.
    pub fn fit(rows: &[ChartRow], kind: ChartKind) -> Self {
        let mut f = Frame {
            x_lo: f64::INFINITY,
            x_hi: f64::NEG_INFINITY,
            y_lo: f64::INFINITY,
            y_hi: f64::NEG_INFINITY,
        };
        for r in rows {
            let (x, y) = r.xy(kind);
            let bar = if kind.x_axis() == XAxis::BudgetStdUnits { 0.0 } else { r.stddev };
            f.x_lo = f.x_lo.min(x);
            f.x_hi = f.x_hi.max(x);
            f.y_lo = f.y_lo.min(y - bar);
            f.y_hi = f.y_hi.max(y + bar);
        }
        let pad = |lo: &mut f64, hi: &mut f64| {
            let span = *hi - *lo;
            let p = if span > 0.0 { 0.05 * span } else { 0.5 * lo.abs().max(1.0) };
            *lo -= p;
            *hi += p;
        };
        pad(&mut f.x_lo, &mut f.x_hi);
        pad(&mut f.y_lo, &mut f.y_hi);
        f
    }

    pub fn px(&self, x: f64) -> f64 {
        MARGIN_LEFT + (x - self.x_lo) / (self.x_hi - self.x_lo) * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
    }

    pub fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN_BOTTOM - (y - self.y_lo) / (self.y_hi - self.y_lo) * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn axis_labels(kind: ChartKind, metric: Metric) -> (&'static str, String) {
    let y = match kind {
        ChartKind::OptimalTrajectory => "optimal N (log2)".to_string(),
        _ => format!("test {}", metric.as_str().replace('_', " ")),
    };
    let x = match kind.x_axis() {
        XAxis::Log2N => "ensemble size N (log2)",
        XAxis::BudgetStdUnits => "budget in standard units (log2)",
        XAxis::WidthFactor => "width factor k",
    };
    (x, y)
}

fn tick_label(axis: XAxis, v: f64) -> String {
    match axis {
        XAxis::Log2N => format!("{}", 2f64.powf(v).round()),
        XAxis::BudgetStdUnits => format!("{:.3}", 2f64.powf(v)),
        XAxis::WidthFactor => format!("{v:.0}"),
    }
}

pub fn to_svg(rows: &[ChartRow], spec: ChartSpec) -> String {
    let kind = spec.kind;
    let frame = Frame::fit(rows, kind);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    s.push_str("<metadata>\n");
    for (i, r) in rows.iter().enumerate() {
        let _ = writeln!(s, r#"<point row="{i}" sources="{}"/>"#, escape(&r.sources.join(" ")));
    }
    s.push_str("</metadata>\n");
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);

    let (x0, x1) = (frame.px(frame.x_lo), frame.px(frame.x_hi));
    let (y0, y1) = (frame.py(frame.y_lo), frame.py(frame.y_hi));
    let _ = writeln!(
        s,
        r#"<path d="M{x0:.2},{y1:.2} L{x0:.2},{y0:.2} L{x1:.2},{y0:.2}" fill="none" stroke="black"/>"#
    );

    // Ticks at every distinct x value; five evenly spaced y ticks.
    let mut xs: Vec<f64> = rows.iter().map(|r| r.xy(kind).0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    for x in xs {
        let px = frame.px(x);
        let _ = writeln!(
            s,
            r#"<line x1="{px:.2}" y1="{y0:.2}" x2="{px:.2}" y2="{:.2}" stroke="black"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            y0 + 4.0,
            y0 + 16.0,
            tick_label(kind.x_axis(), x)
        );
    }
    for i in 0..=4 {
        let y = frame.y_lo + (frame.y_hi - frame.y_lo) * i as f64 / 4.0;
        let py = frame.py(y);
        let label = if kind == ChartKind::OptimalTrajectory {
            format!("{:.1}", 2f64.powf(y))
        } else {
            format!("{y:.4}")
        };
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{py:.2}" x2="{x0:.2}" y2="{py:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{label}</text>"#,
            x0 - 4.0,
            x0 - 6.0,
            py + 4.0
        );
    }
    let (xl, yl) = axis_labels(kind, spec.metric);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{xl}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(&yl)
    );

    let mut series: BTreeMap<u64, (String, Vec<usize>)> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        let (key, label) = r.series(kind);
        series.entry(key).or_insert_with(|| (label, Vec::new())).1.push(i);
    }
    for (si, (_, (label, idx))) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        let _ = writeln!(s, r#"<g class="series" stroke="{color}" fill="{color}">"#);
        let path: Vec<String> = idx
            .iter()
            .map(|&i| {
                let (x, y) = rows[i].xy(kind);
                format!("{:.2},{:.2}", frame.px(x), frame.py(y))
            })
            .collect();
        if path.len() > 1 {
            let _ = writeln!(s, r#"<polyline points="{}" fill="none"/>"#, path.join(" "));
        }
        for &i in idx {
            let r = &rows[i];
            let (x, y) = r.xy(kind);
            let (px, py) = (frame.px(x), frame.py(y));
            if r.n_replicates > 1 && kind != ChartKind::OptimalTrajectory {
                let _ = writeln!(
                    s,
                    r#"<path class="errorbar" d="M{px:.2},{:.2} L{px:.2},{:.2} M{:.2},{:.2} L{:.2},{:.2} M{:.2},{:.2} L{:.2},{:.2}" fill="none"/>"#,
                    frame.py(y - r.stddev),
                    frame.py(y + r.stddev),
                    px - 3.0,
                    frame.py(y - r.stddev),
                    px + 3.0,
                    frame.py(y - r.stddev),
                    px - 3.0,
                    frame.py(y + r.stddev),
                    px + 3.0,
                    frame.py(y + r.stddev)
                );
            }
            let _ = writeln!(s, r#"<circle class="marker" data-row="{i}" cx="{px:.2}" cy="{py:.2}" r="3"/>"#);
        }
        let ly = MARGIN_TOP + 16.0 * si as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{:.2}" y="{:.2}" width="10" height="10"/><text x="{:.2}" y="{:.2}" stroke="none" fill="black">{}</text>"#,
            WIDTH - MARGIN_RIGHT + 15.0,
            ly,
            WIDTH - MARGIN_RIGHT + 30.0,
            ly + 9.0,
            escape(label)
        );
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub rows: Vec<ChartRow>,
    pub csv: Vec<u8>,
    pub svg: Vec<u8>,
}

impl Rendered {
    /// Short content hash used in output file names.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(&self.csv);
        h.update(&self.svg);
        hex::encode(&h.finalize()[..8])
    }
}

pub fn render(records: &[SweepRecord], spec: ChartSpec) -> Result<Rendered> {
    let rows = chart_rows(records, spec)?;
    let csv = to_csv(&rows);
    let svg = to_svg(&rows, spec).into_bytes();
    Ok(Rendered { rows, csv, svg })
}

/// Renders and writes `<kind>-<hash>.csv` and `.svg` into `dir`.
pub fn write_chart(dir: &Path, records: &[SweepRecord], spec: ChartSpec) -> Result<(PathBuf, PathBuf, Rendered)> {
    let out = render(records, spec)?;
    let stem = format!("{}-{}", spec.kind, out.hash());
    let csv_path = dir.join(format!("{stem}.csv"));
    let svg_path = dir.join(format!("{stem}.svg"));
    std::fs::write(&csv_path, &out.csv)?;
    std::fs::write(&svg_path, &out.svg)?;
    Ok((csv_path, svg_path, out))
}
