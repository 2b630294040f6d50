//! CSV and SVG output for sweeps. All formatting is fixed so reruns are byte-identical.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::sweep::SweepResult;

pub const SWEEP_HEADER: [&str; 5] = ["beta", "objective_value", "delta_at_opt", "unconstrained_value", "converged"];

/// 17 significant digits.
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// `<stem>.policies.csv` next to `path`.
pub fn policy_sidecar(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("sweep");
    path.with_file_name(format!("{stem}.policies.csv"))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Ingest(format!("{}: {other:?}", path.display())),
    }
}

/// Writes the sweep table to `path` and the per-β policies to its sidecar.
pub fn emit_csv(res: &SweepResult, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(SWEEP_HEADER).map_err(|e| csv_err(path, e))?;
    for p in &res.points {
        w.write_record([
            num(p.beta),
            num(p.objective_value),
            num(p.delta_at_opt),
            num(res.unconstrained_value),
            p.converged.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;

    let side = policy_sidecar(path);
    let mut w = csv::Writer::from_path(&side).map_err(|e| csv_err(&side, e))?;
    let d = res.points.first().map(|p| p.policy.len()).unwrap_or(0);
    let mut header = vec!["beta".to_string()];
    header.extend((0..d).map(|i| format!("w{i}")));
    w.write_record(&header).map_err(|e| csv_err(&side, e))?;
    for p in &res.points {
        let mut row = vec![num(p.beta)];
        row.extend(p.policy.iter().map(|&x| num(x)));
        w.write_record(&row).map_err(|e| csv_err(&side, e))?;
    }
    w.flush().map_err(|e| Error::io(&side, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub beta: f64,
    pub objective_value: f64,
    pub delta_at_opt: f64,
    pub unconstrained_value: f64,
    pub converged: bool,
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header: Vec<String> = r
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if header != SWEEP_HEADER {
        return Err(Error::Ingest(format!("{}: unexpected header {header:?}", path.display())));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let f = |k: usize| -> Result<f64> {
            rec[k]
                .parse()
                .map_err(|_| Error::Ingest(format!("row {}, column '{}': bad number", i + 1, SWEEP_HEADER[k])))
        };
        rows.push(SweepRow {
            beta: f(0)?,
            objective_value: f(1)?,
            delta_at_opt: f(2)?,
            unconstrained_value: f(3)?,
            converged: &rec[4] == "true",
        });
    }
    Ok(rows)
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 72.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 52.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn fit(vals: impl Iterator<Item = f64> + Clone, allow_log: bool) -> Axis {
        let finite = vals.filter(|x| x.is_finite());
        let lo = finite.clone().fold(f64::INFINITY, f64::min);
        let hi = finite.clone().fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() {
            return Axis { lo: 0.0, hi: 1.0, log: false };
        }
        let log = allow_log && lo > 0.0 && hi / lo > 100.0;
        let (lo, hi) = if log {
            (lo.log10(), hi.log10())
        } else if hi - lo < 1e-12 * (1.0 + hi.abs()) {
            (lo - 0.5, hi + 0.5)
        } else {
            let pad = 0.05 * (hi - lo);
            (lo - pad, hi + pad)
        };
        Axis { lo, hi, log }
    }

    fn unit(&self, x: f64) -> f64 {
        let x = if self.log { x.log10() } else { x };
        (x - self.lo) / (self.hi - self.lo)
    }

    fn ticks(&self) -> Vec<f64> {
        (0..=4)
            .map(|i| {
                let t = self.lo + (self.hi - self.lo) * i as f64 / 4.0;
                if self.log {
                    10f64.powf(t)
                } else {
                    t
                }
            })
            .collect()
    }
}

fn label(x: f64) -> String {
    if x != 0.0 && (x.abs() < 1e-2 || x.abs() >= 1e4) {
        format!("{x:.2e}")
    } else {
        format!("{x:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Line chart of objective value against β: one polyline per result and a
/// dashed line at each unconstrained optimum.
pub fn render_svg(results: &[SweepResult], title: &str) -> String {
    let xs = results.iter().flat_map(|r| r.points.iter().map(|p| p.beta));
    let ys = results.iter().flat_map(|r| {
        r.points
            .iter()
            .map(|p| p.objective_value)
            .chain(std::iter::once(r.unconstrained_value))
    });
    let xa = Axis::fit(xs.collect::<Vec<_>>().into_iter(), true);
    let ya = Axis::fit(ys.collect::<Vec<_>>().into_iter(), false);
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + pw * xa.unit(x);
    let py = |y: f64| TOP + ph * (1.0 - ya.unit(y));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="20" text-anchor="middle" font-size="13">{}</text>"#,
        LEFT + pw / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT:.2}" y="{TOP:.2}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="black"/>"#
    );
    for t in xa.ticks() {
        let x = px(t);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            TOP + ph,
            TOP + ph + 5.0,
            TOP + ph + 18.0,
            label(t)
        );
    }
    for t in ya.ticks() {
        let y = py(t);
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{LEFT:.2}" y2="{y:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 5.0,
            LEFT - 8.0,
            y + 4.0,
            label(t)
        );
    }
    let xlab = if xa.log { "beta (log scale)" } else { "beta" };
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{xlab}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 12.0
    );
    let ylab = results.first().map(|r| r.objective.label()).unwrap_or("value");
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{ylab}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );
    for (k, r) in results.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = r
            .points
            .iter()
            .filter(|p| p.objective_value.is_finite())
            .map(|p| format!("{:.2},{:.2}", px(p.beta), py(p.objective_value)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        let y = py(r.unconstrained_value);
        let _ = writeln!(
            s,
            r#"<line x1="{LEFT:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{color}" stroke-dasharray="6 4"/>"#,
            LEFT + pw
        );
        let ly = TOP + 14.0 + 18.0 * k as f64;
        let lx = LEFT + pw + 12.0;
        let name = if r.meta.label.is_empty() { format!("series {}", k + 1) } else { r.meta.label.clone() };
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="1.5"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(&name)
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn emit_plot(results: &[SweepResult], path: &Path, title: &str) -> Result<()> {
    std::fs::write(path, render_svg(results, title)).map_err(|e| Error::io(path, e))
}
