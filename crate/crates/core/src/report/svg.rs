//! Grouped bar charts as standalone SVG.

use std::fmt::Write;

use super::{normalize, Metric, ReportError, SweepResult};

const PALETTE: [&str; 8] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860", "#da8bc3", "#8c8c8c"];

#[derive(Clone, Debug)]
pub struct ChartOptions {
    pub log_scale: bool,
    pub title: Option<String>,
    pub width: u32,
    pub height: u32,
}

impl Default for ChartOptions {
    fn default() -> Self {
        ChartOptions { log_scale: false, title: None, width: 960, height: 420 }
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// One group of bars per workload, one bar per policy cell. Normalized
/// metrics are plotted relative to Uncached. On a log axis, zero values sit
/// on the axis floor and are labelled `0`; missing ratios are labelled `N/A`.
pub fn bar_chart(sweeps: &[SweepResult], metric: Metric, opts: &ChartOptions) -> Result<String, ReportError> {
    if sweeps.is_empty() {
        return Err(ReportError::EmptySweep);
    }
    let groups: Vec<(&str, Vec<(String, Option<f64>)>)> = sweeps
        .iter()
        .map(|s| {
            let vals = normalize(s, metric)?.into_iter().map(|(c, v)| (c.label(), v)).collect();
            Ok((s.workload.as_str(), vals))
        })
        .collect::<Result<_, ReportError>>()?;

    // legend order: first appearance
    let mut series: Vec<String> = Vec::new();
    for (_, vals) in &groups {
        for (label, _) in vals {
            if !series.contains(label) {
                series.push(label.clone());
            }
        }
    }

    let values = groups.iter().flat_map(|(_, v)| v.iter().filter_map(|(_, x)| *x));
    let max = values.clone().fold(0.0f64, f64::max);
    let min_pos = values.filter(|x| *x > 0.0).fold(f64::INFINITY, f64::min);

    let (w, h) = (opts.width as f64, opts.height as f64);
    let (left, right, top, bottom) = (60.0, 150.0, 36.0, 48.0);
    let plot_w = w - left - right;
    let plot_h = h - top - bottom;

    let (lo, hi) = if opts.log_scale {
        let lo = if min_pos.is_finite() { 10f64.powf(min_pos.log10().floor()) } else { 0.1 };
        let hi = if max > 0.0 { 10f64.powf(max.log10().ceil()) } else { 1.0 };
        (lo, if hi <= lo { lo * 10.0 } else { hi })
    } else {
        (0.0, if max > 0.0 { max * 1.1 } else { 1.0 })
    };
    let y_of = |v: f64| -> f64 {
        let frac = if opts.log_scale {
            (v.max(lo).log10() - lo.log10()) / (hi.log10() - lo.log10())
        } else {
            (v - lo) / (hi - lo)
        };
        top + plot_h * (1.0 - frac.clamp(0.0, 1.0))
    };

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let title = opts.title.clone().unwrap_or_else(|| {
        let norm = if metric.is_normalized() { " (normalized to Uncached)" } else { "" };
        format!("{}{}{}", metric.name(), norm, if opts.log_scale { ", log scale" } else { "" })
    });
    let _ = writeln!(out, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, esc(&title));

    // axes and ticks
    let _ = writeln!(
        out,
        r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{}" stroke="black"/><line x1="{left}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        top + plot_h,
        top + plot_h,
        left + plot_w,
        top + plot_h
    );
    let ticks: Vec<f64> = if opts.log_scale {
        let mut t = Vec::new();
        let mut v = lo;
        while v <= hi * 1.0001 {
            t.push(v);
            v *= 10.0;
        }
        t
    } else {
        (0..=5).map(|i| lo + (hi - lo) * i as f64 / 5.0).collect()
    };
    for t in ticks {
        let y = y_of(t);
        let _ = writeln!(
            out,
            r##"<line x1="{}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#ddd"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"##,
            left,
            left + plot_w,
            left - 4.0,
            y + 4.0,
            fmt_tick(t)
        );
    }
    if metric.is_normalized() && !opts.log_scale && hi > 1.0 {
        let y = y_of(1.0);
        let _ = writeln!(
            out,
            r#"<line x1="{left}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="black" stroke-dasharray="4 3"/>"#,
            left + plot_w
        );
    }

    let group_w = plot_w / groups.len() as f64;
    let bar_w = (group_w * 0.8) / series.len().max(1) as f64;
    for (gi, (name, vals)) in groups.iter().enumerate() {
        let gx = left + gi as f64 * group_w + group_w * 0.1;
        for (label, v) in vals {
            let si = series.iter().position(|s| s == label).unwrap_or(0);
            let x = gx + si as f64 * bar_w;
            let cx = x + bar_w / 2.0;
            match v {
                Some(v) if *v > 0.0 => {
                    let y = y_of(*v);
                    let _ = writeln!(
                        out,
                        r#"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="{}"><title>{} {}: {v}</title></rect>"#,
                        bar_w * 0.9,
                        top + plot_h - y,
                        PALETTE[si % PALETTE.len()],
                        esc(name),
                        esc(label)
                    );
                }
                other => {
                    let text = if other.is_some() { "0" } else { "N/A" };
                    let _ = writeln!(
                        out,
                        r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle" font-size="9">{text}</text>"#,
                        top + plot_h - 3.0
                    );
                }
            }
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            left + gi as f64 * group_w + group_w / 2.0,
            top + plot_h + 16.0,
            esc(name)
        );
    }

    for (si, label) in series.iter().enumerate() {
        let y = top + 14.0 * si as f64;
        let x = left + plot_w + 12.0;
        let _ = writeln!(
            out,
            r#"<rect x="{x}" y="{y}" width="10" height="10" fill="{}"/><text x="{}" y="{}">{}</text>"#,
            PALETTE[si % PALETTE.len()],
            x + 14.0,
            y + 9.0,
            esc(label)
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 0.01 || v.abs() >= 1e4) {
        format!("{v:.0e}")
    } else {
        let s = format!("{v:.2}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}
