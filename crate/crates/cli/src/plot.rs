//! Deterministic SVG figures drawn from primitives.
//!
//! Coordinates are printed with two decimals and series are drawn in input
//! order, so the same table always yields byte-identical files.

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::table::Table;
use vaerobust::numerics::stats::{mean, quantile};
use vaerobust::{Error, Result};

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Axis range padded by 5%, widened when degenerate.
fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.1e}")
    } else {
        format!("{v:.2}")
    }
}

struct Canvas {
    svg: String,
    x: (f64, f64),
    y: (f64, f64),
}

impl Canvas {
    fn new(title: &str, xlabel: &str, ylabel: &str, x: (f64, f64), y: (f64, f64)) -> Self {
        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
            W / 2.0,
            esc(title)
        );
        let mut c = Self { svg, x, y };
        c.axes(xlabel, ylabel);
        c
    }

    fn px(&self, v: f64) -> f64 {
        LEFT + (v - self.x.0) / (self.x.1 - self.x.0) * (W - LEFT - RIGHT)
    }

    fn py(&self, v: f64) -> f64 {
        H - BOTTOM - (v - self.y.0) / (self.y.1 - self.y.0) * (H - TOP - BOTTOM)
    }

    fn axes(&mut self, xlabel: &str, ylabel: &str) {
        let (x0, x1, y0, y1) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
        let _ = writeln!(
            self.svg,
            r#"<path d="M{x0:.2},{y0:.2} L{x0:.2},{y1:.2} L{x1:.2},{y1:.2}" fill="none" stroke="black"/>"#
        );
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let xv = self.x.0 + f * (self.x.1 - self.x.0);
            let yv = self.y.0 + f * (self.y.1 - self.y.0);
            let (tx, ty) = (self.px(xv), self.py(yv));
            let _ = writeln!(
                self.svg,
                r#"<line x1="{tx:.2}" y1="{y1:.2}" x2="{tx:.2}" y2="{:.2}" stroke="black"/><text x="{tx:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                y1 + 5.0,
                y1 + 18.0,
                tick_label(xv)
            );
            let _ = writeln!(
                self.svg,
                r#"<line x1="{:.2}" y1="{ty:.2}" x2="{x0:.2}" y2="{ty:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
                x0 - 5.0,
                x0 - 8.0,
                ty + 4.0,
                tick_label(yv)
            );
        }
        let _ = writeln!(
            self.svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            (x0 + x1) / 2.0,
            H - 15.0,
            esc(xlabel)
        );
        let _ = writeln!(
            self.svg,
            r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            esc(ylabel)
        );
    }

    fn no_data(&mut self) {
        let _ = writeln!(
            self.svg,
            r##"<text x="{:.2}" y="{:.2}" text-anchor="middle" fill="#888">no data</text>"##,
            W / 2.0,
            H / 2.0
        );
    }

    fn polyline(&mut self, pts: &[(f64, f64)], color: &str, dashed: bool) {
        if pts.is_empty() {
            return;
        }
        let d: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", self.px(x), self.py(y)))
            .collect();
        let dash = if dashed { r#" stroke-dasharray="6,4""# } else { "" };
        let _ = writeln!(
            self.svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>"#,
            d.join(" ")
        );
    }

    fn dot(&mut self, x: f64, y: f64, color: &str) {
        let _ = writeln!(
            self.svg,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}" fill-opacity="0.7"/>"#,
            self.px(x),
            self.py(y)
        );
    }

    fn legend(&mut self, names: &[String]) {
        for (i, n) in names.iter().enumerate() {
            let y = TOP + 8.0 + 16.0 * i as f64;
            let x = W - RIGHT - 150.0;
            let _ = writeln!(
                self.svg,
                r#"<rect x="{x:.2}" y="{:.2}" width="12" height="4" fill="{}"/><text x="{:.2}" y="{:.2}">{}</text>"#,
                y - 4.0,
                PALETTE[i % PALETTE.len()],
                x + 18.0,
                y,
                esc(n)
            );
        }
    }

    fn finish(mut self) -> String {
        self.svg.push_str("</svg>\n");
        self.svg
    }
}

/// Scatter plot with an optional `y = x` reference line.
pub fn scatter(title: &str, xlabel: &str, ylabel: &str, pts: &[(f64, f64)], identity: bool) -> String {
    let all = pts.iter().flat_map(|&(x, y)| [x, y]);
    let (xr, yr) = if identity {
        let r = range(all);
        (r, r)
    } else {
        (range(pts.iter().map(|p| p.0)), range(pts.iter().map(|p| p.1)))
    };
    let mut c = Canvas::new(title, xlabel, ylabel, xr, yr);
    if pts.is_empty() {
        c.no_data();
    }
    if identity {
        let lo = xr.0.max(yr.0);
        let hi = xr.1.min(yr.1);
        c.polyline(&[(lo, lo), (hi, hi)], "red", false);
    }
    for &(x, y) in pts.iter().filter(|(x, y)| x.is_finite() && y.is_finite()) {
        c.dot(x, y, PALETTE[0]);
    }
    c.finish()
}

/// One polyline per named series.
pub fn lines(title: &str, xlabel: &str, ylabel: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let pts = || series.iter().flat_map(|s| s.1.iter().copied());
    let mut c = Canvas::new(title, xlabel, ylabel, range(pts().map(|p| p.0)), range(pts().map(|p| p.1)));
    if pts().next().is_none() {
        c.no_data();
    }
    for (i, (_, s)) in series.iter().enumerate() {
        c.polyline(s, PALETTE[i % PALETTE.len()], false);
        for &(x, y) in s {
            c.dot(x, y, PALETTE[i % PALETTE.len()]);
        }
    }
    c.legend(&series.iter().map(|s| s.0.clone()).collect::<Vec<_>>());
    c.finish()
}

/// Bars with optional symmetric error whiskers.
pub fn bars(title: &str, ylabel: &str, items: &[(String, f64, f64)]) -> String {
    let yr = range(items.iter().flat_map(|b| [0.0, b.1 + b.2, b.1 - b.2]));
    let n = items.len().max(1) as f64;
    let mut c = Canvas::new(title, "", ylabel, (0.0, n), yr);
    if items.is_empty() {
        c.no_data();
    }
    for (i, (name, v, e)) in items.iter().enumerate() {
        let (x0, x1) = (c.px(i as f64 + 0.2), c.px(i as f64 + 0.8));
        let (yv, y0) = (c.py(*v), c.py(0.0f64.clamp(yr.0, yr.1)));
        let _ = writeln!(
            c.svg,
            r#"<rect x="{x0:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
            yv.min(y0),
            x1 - x0,
            (y0 - yv).abs(),
            PALETTE[i % PALETTE.len()]
        );
        let xm = (x0 + x1) / 2.0;
        let _ = writeln!(
            c.svg,
            r#"<line x1="{xm:.2}" y1="{:.2}" x2="{xm:.2}" y2="{:.2}" stroke="black"/><text x="{xm:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            c.py(v - e),
            c.py(v + e),
            H - BOTTOM + 32.0,
            esc(name)
        );
    }
    c.finish()
}

/// Violin-style summary: a mirrored histogram outline per group with a
/// median tick.
pub fn violins(title: &str, ylabel: &str, groups: &[(String, Vec<f64>)]) -> String {
    let yr = range(groups.iter().flat_map(|g| g.1.iter().copied()));
    let n = groups.len().max(1) as f64;
    let mut c = Canvas::new(title, "", ylabel, (0.0, n), yr);
    if groups.iter().all(|g| g.1.is_empty()) {
        c.no_data();
    }
    const BINS: usize = 16;
    for (i, (name, vals)) in groups.iter().enumerate() {
        let centre = i as f64 + 0.5;
        let xm = c.px(centre);
        let _ = writeln!(
            c.svg,
            r#"<text x="{xm:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            H - BOTTOM + 32.0,
            esc(name)
        );
        let vals: Vec<f64> = vals.iter().copied().filter(|v| v.is_finite()).collect();
        if vals.is_empty() {
            continue;
        }
        let (lo, hi) = (yr.0, yr.1);
        let mut counts = [0usize; BINS];
        for v in &vals {
            let b = (((v - lo) / (hi - lo)) * BINS as f64).floor() as usize;
            counts[b.min(BINS - 1)] += 1;
        }
        let peak = *counts.iter().max().unwrap_or(&1) as f64;
        let half = |k: usize| 0.4 * counts[k] as f64 / peak;
        let mid = |k: usize| lo + (k as f64 + 0.5) / BINS as f64 * (hi - lo);
        let mut outline: Vec<(f64, f64)> = (0..BINS).map(|k| (centre + half(k), mid(k))).collect();
        outline.extend((0..BINS).rev().map(|k| (centre - half(k), mid(k))));
        outline.push(outline[0]);
        c.polyline(&outline, PALETTE[i % PALETTE.len()], false);
        let med = quantile(&vals, 0.5);
        c.polyline(&[(centre - 0.15, med), (centre + 0.15, med)], "black", false);
    }
    c.finish()
}

/// Groups `(key, x, y)` rows into mean-y series keyed by `key`, x ascending.
fn mean_series(keys: &[&str], xs: &[f64], ys: &[f64]) -> Vec<(String, Vec<(f64, f64)>)> {
    let mut by_key: Vec<(String, BTreeMap<u64, Vec<f64>>)> = Vec::new();
    for ((k, &x), &y) in keys.iter().zip(xs).zip(ys) {
        let idx = match by_key.iter().position(|e| e.0 == *k) {
            Some(i) => i,
            None => {
                by_key.push((k.to_string(), BTreeMap::new()));
                by_key.len() - 1
            }
        };
        by_key[idx].1.entry(x.to_bits()).or_default().push(y);
    }
    by_key
        .into_iter()
        .map(|(k, m)| {
            let mut pts: Vec<(f64, f64)> = m.into_iter().map(|(x, ys)| (f64::from_bits(x), mean(&ys))).collect();
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            (k, pts)
        })
        .collect()
}

/// Figures for a result table, as `(file name, svg)` pairs.
pub fn figures_for(table: &Table) -> Result<Vec<(String, String)>> {
    match table.schema.as_str() {
        "correlation" => {
            let x = table.f64_column("margin_bound")?;
            let y = table.f64_column("margin_estimate")?;
            let pts: Vec<(f64, f64)> = x.into_iter().zip(y).collect();
            Ok(vec![(
                "correlation.svg".into(),
                scatter("Margin estimate against bound", "bound", "estimate", &pts, true),
            )])
        }
        "attack_targets" => {
            let targets = table.str_column("target")?;
            let d = table.f64_column("median_distance")?;
            let mut groups: Vec<(String, Vec<f64>)> = Vec::new();
            for (t, v) in targets.iter().zip(d) {
                match groups.iter_mut().find(|g| g.0 == *t) {
                    Some(g) => g.1.push(v),
                    None => groups.push((t.to_string(), vec![v])),
                }
            }
            Ok(vec![(
                "attack_targets.svg".into(),
                violins("Reconstruction distance under attack", "median distance", &groups),
            )])
        }
        "tau_curves" => {
            let tau: Vec<String> = table.str_column("tau")?.iter().map(|t| format!("tau={t}")).collect();
            let keys: Vec<&str> = tau.iter().map(String::as_str).collect();
            let b = table.f64_column("budget")?;
            let p = table.f64_column("p_inside")?;
            let ll = table.f64_column("attack_log_likelihood")?;
            Ok(vec![
                (
                    "tau_inside_probability.svg".into(),
                    lines("Inside probability under attack", "perturbation norm", "p inside", &mean_series(&keys, &b, &p)),
                ),
                (
                    "tau_attack_likelihood.svg".into(),
                    lines("Likelihood under attack", "perturbation norm", "log p(x|z*)", &mean_series(&keys, &b, &ll)),
                ),
            ])
        }
        "tau_noise" => {
            let tau: Vec<String> = table.str_column("tau")?.iter().map(|t| format!("tau={t}")).collect();
            let keys: Vec<&str> = tau.iter().map(String::as_str).collect();
            let s = table.f64_column("sigma_eps")?;
            let ll = table.f64_column("mean_log_likelihood")?;
            Ok(vec![(
                "tau_noise.svg".into(),
                lines("Likelihood under input noise", "noise std", "log p(x|z)", &mean_series(&keys, &s, &ll)),
            )])
        }
        "beta_summary" => {
            let beta = table.str_column("beta")?;
            let mut out = Vec::new();
            for (col, se, label) in [
                ("mean_min_sigma", "se_min_sigma", "smallest encoder std"),
                ("mean_jac_norm", "se_jac_norm", "encoder Jacobian norm"),
                ("mean_margin", "se_margin", "estimated margin"),
                ("mean_bound", "se_bound", "margin bound"),
            ] {
                let v = table.f64_column(col)?;
                let e = table.f64_column(se)?;
                let items: Vec<(String, f64, f64)> = beta
                    .iter()
                    .zip(v)
                    .zip(e)
                    .map(|((b, v), e)| (format!("beta={b}"), v, e))
                    .collect();
                out.push((format!("beta_{col}.svg"), bars(label, label, &items)));
            }
            Ok(out)
        }
        other => Err(Error::Config(format!("no figure is defined for schema {other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_series_draw_axes_and_a_note() {
        let s = scatter("t", "x", "y", &[], true);
        assert!(s.contains("no data") && s.contains("<path"));
        assert!(lines("t", "x", "y", &[]).contains("no data"));
        assert!(bars("t", "y", &[]).contains("no data"));
        assert!(violins("t", "y", &[("a".into(), vec![])]).contains("no data"));
    }

    #[test]
    fn scatter_has_identity_line_and_is_deterministic() {
        let pts = [(0.1, 0.2), (0.5, 0.4), (1.0, 1.3)];
        let a = scatter("t", "x", "y", &pts, true);
        assert_eq!(a, scatter("t", "x", "y", &pts, true));
        assert!(a.contains(r#"stroke="red""#));
        assert_eq!(a.matches("<circle").count(), 3);
    }

    #[test]
    fn figures_name_missing_columns() {
        let t = Table::parse("#schema=correlation/1\nmargin_bound\n1\n").unwrap();
        let err = figures_for(&t).unwrap_err().to_string();
        assert!(err.contains("margin_estimate"), "{err}");
        let u = Table::parse("#schema=unknown/1\na\n").unwrap();
        assert!(figures_for(&u).is_err());
    }
}
