//! Trajectory files and plots.
//!
//! The trajectory CSV has a fixed column contract: `t`, then `z_tilde[k][l]`,
//! `xi[i][l]`, `eta_tilde[i][l]`, `theta_tilde[i][l]`, `xi_tilde[i][l]`
//! (blocks the controller lacks are left out), `V`, `znorm1`, `u[i][l]`,
//! `flips_total`. Indices are 1-based; `i` is the agent, so the leader has no
//! `eta_tilde` columns. Floats carry 17 significant digits and re-read
//! bit-for-bit. Positions go to a side file with columns `t`, `x[i][l]`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::control::ClosedLoop;
use crate::engine::TrajectoryRecord;
use crate::error::{Error, Result};

/// Block sizes needed to name CSV columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnLayout {
    pub n_edges: usize,
    pub p: usize,
    /// State dimension per agent.
    pub xi: Vec<usize>,
    /// `(agent, dim)` for every agent carrying a velocity internal model.
    pub eta: Vec<(usize, usize)>,
    /// Disturbance internal-model dimension per agent (empty if none).
    pub theta: Vec<usize>,
    /// Observer state dimension per agent (empty if none).
    pub xi_tilde: Vec<usize>,
}

impl ColumnLayout {
    pub fn from_closed_loop(cl: &ClosedLoop) -> Self {
        let l = cl.layout();
        let dims = |v: &[Option<std::ops::Range<usize>>]| -> Vec<usize> {
            if v.iter().all(Option::is_none) {
                Vec::new()
            } else {
                v.iter().map(|r| r.as_ref().map_or(0, |r| r.len())).collect()
            }
        };
        Self {
            n_edges: cl.graph().n_edges(),
            p: cl.p(),
            xi: l.xi.iter().map(|r| r.len()).collect(),
            eta: l
                .eta
                .iter()
                .enumerate()
                .filter_map(|(i, r)| r.as_ref().map(|r| (i, r.len())))
                .collect(),
            theta: dims(&l.theta),
            xi_tilde: dims(&l.xi_hat),
        }
    }

    pub fn n_agents(&self) -> usize {
        self.xi.len()
    }

    pub fn headers(&self) -> Vec<String> {
        let mut h = vec!["t".to_string()];
        for k in 0..self.n_edges {
            push_block(&mut h, "z_tilde", k, self.p);
        }
        for (i, &n) in self.xi.iter().enumerate() {
            push_block(&mut h, "xi", i, n);
        }
        for &(i, n) in &self.eta {
            push_block(&mut h, "eta_tilde", i, n);
        }
        for (i, &n) in self.theta.iter().enumerate() {
            push_block(&mut h, "theta_tilde", i, n);
        }
        for (i, &n) in self.xi_tilde.iter().enumerate() {
            push_block(&mut h, "xi_tilde", i, n);
        }
        h.push("V".into());
        h.push("znorm1".into());
        for i in 0..self.n_agents() {
            push_block(&mut h, "u", i, self.p);
        }
        h.push("flips_total".into());
        h
    }

    /// Numeric row of one record, in `headers()` order.
    pub fn values(&self, r: &TrajectoryRecord) -> Result<Vec<f64>> {
        let check = |name: &str, v: &[f64], n: usize| {
            if v.len() == n {
                Ok(())
            } else {
                Err(Error::dims(
                    format!("record block {name} at t = {}", r.t),
                    n,
                    v.len(),
                ))
            }
        };
        check("z_tilde", &r.z_tilde, self.n_edges * self.p)?;
        check("xi", &r.xi, self.xi.iter().sum())?;
        check("eta_tilde", &r.eta_tilde, self.eta.iter().map(|e| e.1).sum())?;
        check("theta_tilde", &r.theta_tilde, self.theta.iter().sum())?;
        check("xi_tilde", &r.xi_tilde, self.xi_tilde.iter().sum())?;
        check("u", &r.u, self.n_agents() * self.p)?;
        let mut row = vec![r.t];
        for block in [&r.z_tilde, &r.xi, &r.eta_tilde, &r.theta_tilde, &r.xi_tilde] {
            row.extend_from_slice(block);
        }
        row.push(r.v);
        row.push(r.znorm1);
        row.extend_from_slice(&r.u);
        row.push(r.flips_total as f64);
        Ok(row)
    }

    fn row(&self, r: &TrajectoryRecord) -> Result<Vec<String>> {
        let mut v = self.values(r)?;
        v.pop();
        let mut row: Vec<String> = v.into_iter().map(fmt_f64).collect();
        row.push(r.flips_total.to_string());
        Ok(row)
    }
}

fn push_block(h: &mut Vec<String>, name: &str, index: usize, n: usize) {
    for l in 0..n {
        h.push(format!("{name}[{}][{}]", index + 1, l + 1));
    }
}

/// 17 significant digits: enough to re-read every `f64` exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_rows(
    path: &Path,
    headers: &[String],
    rows: impl Iterator<Item = Result<Vec<String>>>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(headers)?;
    for row in rows {
        w.write_record(row?)?;
    }
    let mut inner = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    inner.flush().map_err(|e| Error::io(path, e))
}

pub fn write_csv(records: &[TrajectoryRecord], layout: &ColumnLayout, path: impl AsRef<Path>) -> Result<()> {
    if records.is_empty() {
        return Err(Error::param("records", "nothing to write (empty record list)"));
    }
    write_rows(
        path.as_ref(),
        &layout.headers(),
        records.iter().map(|r| layout.row(r)),
    )
}

/// Side file with agent positions: `t`, `x[i][l]`.
pub fn write_positions(records: &[TrajectoryRecord], p: usize, path: impl AsRef<Path>) -> Result<()> {
    let first = records
        .first()
        .ok_or_else(|| Error::param("records", "nothing to write (empty record list)"))?;
    if p == 0 || first.x.len() % p != 0 {
        return Err(Error::dims("positions", p, first.x.len()));
    }
    let mut headers = vec!["t".to_string()];
    for i in 0..first.x.len() / p {
        push_block(&mut headers, "x", i, p);
    }
    write_rows(
        path.as_ref(),
        &headers,
        records.iter().map(|r| {
            let mut row = vec![fmt_f64(r.t)];
            row.extend(r.x.iter().copied().map(fmt_f64));
            Ok(row)
        }),
    )
}

/// A numeric CSV read back into memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = csv::Reader::from_reader(file);
        let headers: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let row = rec
                .iter()
                .zip(&headers)
                .map(|(s, h)| {
                    s.parse::<f64>().map_err(|_| {
                        Error::Schema(format!(
                            "{}: row {}, column {h}: not a number: `{s}`",
                            path.display(),
                            line + 2
                        ))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Ok(Self { headers, rows })
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.headers.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    /// Indices of columns named `prefix[...]`.
    pub fn block(&self, prefix: &str) -> Vec<usize> {
        let tag = format!("{prefix}[");
        (0..self.headers.len())
            .filter(|&j| self.headers[j].starts_with(&tag))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    ZTilde,
    Xi,
    EtaTilde,
    ThetaTilde,
    XiTilde,
    U,
    V,
    Trajectory2d,
}

impl Quantity {
    pub const ALL: [Quantity; 8] = [
        Quantity::ZTilde,
        Quantity::Xi,
        Quantity::EtaTilde,
        Quantity::ThetaTilde,
        Quantity::XiTilde,
        Quantity::U,
        Quantity::V,
        Quantity::Trajectory2d,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Quantity::ZTilde => "ztilde",
            Quantity::Xi => "xi",
            Quantity::EtaTilde => "eta_tilde",
            Quantity::ThetaTilde => "theta_tilde",
            Quantity::XiTilde => "xi_tilde",
            Quantity::U => "u",
            Quantity::V => "V",
            Quantity::Trajectory2d => "trajectory2d",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|q| q.name() == s).ok_or_else(|| {
            Error::param(
                "quantity",
                format!(
                    "unknown quantity `{s}` (expected one of {})",
                    Self::ALL.map(|q| q.name()).join(", ")
                ),
            )
        })
    }

    fn column_prefix(&self) -> &'static str {
        match self {
            Quantity::ZTilde => "z_tilde",
            Quantity::Trajectory2d => "x",
            q => q.name(),
        }
    }

    fn y_label(&self) -> &'static str {
        match self {
            Quantity::ZTilde => "formation error z_tilde [m]",
            Quantity::Xi => "velocity error xi [m/s]",
            Quantity::EtaTilde => "reference estimate error eta_tilde [m/s]",
            Quantity::ThetaTilde => "disturbance estimate error theta_tilde [m/s^2]",
            Quantity::XiTilde => "observer error xi_tilde [m/s]",
            Quantity::U => "control input u [m/s^2]",
            Quantity::V => "Lyapunov function V [-]",
            Quantity::Trajectory2d => "y [m]",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotData {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Mark the start (circle) and end (square) of each series.
    pub endpoints: bool,
}

/// Series to draw for `q`. Trajectory plots read a table with `x[i][l]`
/// columns (the positions side file), everything else the trajectory CSV.
pub fn plot_data(table: &Table, q: Quantity) -> Result<PlotData> {
    if table.rows.is_empty() {
        return Err(Error::param("records", "nothing to plot (no rows)"));
    }
    let t = table
        .column("t")
        .ok_or_else(|| Error::Missing("column `t`".into()))?;
    let missing = || {
        Error::Missing(format!(
            "{} columns in input (quantity {})",
            q.column_prefix(),
            q.name()
        ))
    };
    if q == Quantity::Trajectory2d {
        let cols = table.block("x");
        if cols.is_empty() || !cols.len().is_multiple_of(2) {
            return Err(if cols.is_empty() {
                missing()
            } else {
                Error::Unsupported("trajectory2d needs planar positions (p = 2)".into())
            });
        }
        let series = cols
            .chunks(2)
            .enumerate()
            .map(|(i, c)| Series {
                name: format!("agent {}", i + 1),
                points: table.rows.iter().map(|r| (r[c[0]], r[c[1]])).collect(),
            })
            .collect();
        return Ok(PlotData {
            title: "agent paths".into(),
            x_label: "x [m]".into(),
            y_label: q.y_label().into(),
            series,
            endpoints: true,
        });
    }
    let cols: Vec<usize> = if q == Quantity::V {
        table.headers.iter().position(|h| h == "V").into_iter().collect()
    } else {
        table.block(q.column_prefix())
    };
    if cols.is_empty() {
        return Err(missing());
    }
    let series = cols
        .iter()
        .map(|&j| Series {
            name: table.headers[j].clone(),
            points: t.iter().zip(&table.rows).map(|(&t, r)| (t, r[j])).collect(),
        })
        .collect();
    Ok(PlotData {
        title: q.name().into(),
        x_label: "time t [s]".into(),
        y_label: q.y_label().into(),
        series,
        endpoints: false,
    })
}

const W: f64 = 900.0;
const H: f64 = 540.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 190.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const MAX_POINTS: usize = 4000;
const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22",
    "#17becf",
];

/// Tick positions at 1, 2 or 5 times a power of ten.
fn ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let span = hi - lo;
    let raw = span / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .into_iter()
        .map(|m| m * mag)
        .find(|s| span / s <= target as f64)
        .unwrap_or(10.0 * mag);
    let mut v = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while v <= hi + 1e-9 * step {
        out.push(if v.abs() < 1e-12 * step { 0.0 } else { v });
        v += step;
    }
    out
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 * (1.0 + lo.abs()) {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.04 * (hi - lo);
    (lo - pad, hi + pad)
}

/// Keeps the first and last point of each bucket plus its extremes, so
/// chattering envelopes survive thinning.
fn thin(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    if points.len() <= MAX_POINTS {
        return points.to_vec();
    }
    let bucket = points.len().div_ceil(MAX_POINTS / 4);
    let mut out = Vec::with_capacity(MAX_POINTS + 4);
    for chunk in points.chunks(bucket) {
        let (mut imin, mut imax) = (0, 0);
        for (k, p) in chunk.iter().enumerate() {
            if p.1 < chunk[imin].1 {
                imin = k;
            }
            if p.1 > chunk[imax].1 {
                imax = k;
            }
        }
        let mut idx = vec![0, imin, imax, chunk.len() - 1];
        idx.sort_unstable();
        idx.dedup();
        out.extend(idx.into_iter().map(|k| chunk[k]));
    }
    out
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

pub fn render_svg(plot: &PlotData) -> String {
    let all = || plot.series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1) = range(all().map(|p| p.0));
    let (mut y0, mut y1) = range(all().map(|p| p.1));
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    if plot.endpoints {
        // equal aspect for paths in the plane
        let scale = ((x1 - x0) / pw).max((y1 - y0) / ph);
        let (cx, cy) = (0.5 * (x0 + x1), 0.5 * (y0 + y1));
        x0 = cx - 0.5 * scale * pw;
        x1 = cx + 0.5 * scale * pw;
        y0 = cy - 0.5 * scale * ph;
        y1 = cy + 0.5 * scale * ph;
    }
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;

    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    s.push_str(&format!("<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"));
    s.push_str(&format!(
        "<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
        LEFT + pw / 2.0,
        esc(&plot.title)
    ));
    for v in ticks(x0, x1, 8) {
        let x = sx(v);
        s.push_str(&format!(
            "<line x1=\"{x:.2}\" y1=\"{TOP}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"#e5e5e5\"/>\n<text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>\n",
            TOP + ph,
            TOP + ph + 16.0,
            fmt_tick(v)
        ));
    }
    for v in ticks(y0, y1, 7) {
        let y = sy(v);
        s.push_str(&format!(
            "<line x1=\"{LEFT}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"#e5e5e5\"/>\n<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>\n",
            LEFT + pw,
            LEFT - 6.0,
            y + 4.0,
            fmt_tick(v)
        ));
    }
    s.push_str(&format!(
        "<rect x=\"{LEFT}\" y=\"{TOP}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"black\"/>\n"
    ));
    s.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>\n",
        LEFT + pw / 2.0,
        H - 14.0,
        esc(&plot.x_label)
    ));
    s.push_str(&format!(
        "<text transform=\"translate(20 {:.2}) rotate(-90)\" text-anchor=\"middle\">{}</text>\n",
        TOP + ph / 2.0,
        esc(&plot.y_label)
    ));
    for (k, series) in plot.series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = thin(&series.points)
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        s.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.2\" points=\"{}\"><title>{}</title></polyline>\n",
            pts.join(" "),
            esc(&series.name)
        ));
        if plot.endpoints {
            if let (Some(a), Some(b)) = (series.points.first(), series.points.last()) {
                s.push_str(&format!(
                    "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"{color}\"/>\n<rect x=\"{:.2}\" y=\"{:.2}\" width=\"8\" height=\"8\" fill=\"{color}\"/>\n",
                    sx(a.0),
                    sy(a.1),
                    sx(b.0) - 4.0,
                    sy(b.1) - 4.0
                ));
            }
        }
        let ly = TOP + 14.0 + 16.0 * k as f64;
        if ly < H - BOTTOM {
            s.push_str(&format!(
                "<line x1=\"{:.2}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{ly:.2}\" stroke=\"{color}\" stroke-width=\"2\"/>\n<text x=\"{:.2}\" y=\"{:.2}\">{}</text>\n",
                LEFT + pw + 12.0,
                LEFT + pw + 32.0,
                LEFT + pw + 38.0,
                ly + 4.0,
                esc(&series.name)
            ));
        }
    }
    s.push_str("</svg>\n");
    s
}

pub fn emit_plot(table: &Table, q: Quantity, path: impl AsRef<Path>) -> Result<()> {
    let svg = render_svg(&plot_data(table, q)?);
    let path = path.as_ref();
    let mut w = create(path)?;
    w.write_all(svg.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}
