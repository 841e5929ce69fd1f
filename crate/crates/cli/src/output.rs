//! Output assembly: atomic file writes, the JSON run summary, and the
//! static SVG charts.

use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use swipt_core::harness::{
    aggregate, converged_phase_mean, convergence_iterations, extract_series, queue_cdf,
    state_dims_consistent, Controller, ExperimentSpec, MetricsRow, RunOutput,
};

/// Writes via a temp file in the same directory, then renames into place.
pub fn write_atomic(path: &Path, contents: &str) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension(format!(
        "{}tmp-{}",
        path.extension().map(|e| format!("{}.", e.to_string_lossy())).unwrap_or_default(),
        std::process::id()
    ));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}

pub fn sha256_hex(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn summary_of(values: &[f64]) -> Value {
    match aggregate(values.iter().map(|v| ((), *v))) {
        Ok(groups) => {
            let s = &groups[0].1;
            json!({ "count": s.count, "mean": s.mean, "median": s.median, "q1": s.q1, "q3": s.q3 })
        }
        Err(_) => Value::Null,
    }
}

/// Per-(controller, domain, task) aggregates plus run-level checks.
pub fn build_summary(
    name: &str,
    command: &str,
    spec: Option<&ExperimentSpec>,
    config_text: Option<&str>,
    rows: &[MetricsRow],
    runs: &[RunOutput],
) -> Value {
    let mut controllers: BTreeMap<&'static str, Value> = BTreeMap::new();
    let mut keys: Vec<(Controller, u32, usize)> = rows
        .iter()
        .map(|r| (r.controller, r.domain, r.task))
        .collect();
    keys.sort();
    keys.dedup();
    let seeds: Vec<u64> = {
        let mut s: Vec<u64> = rows.iter().map(|r| r.seed).collect();
        s.sort();
        s.dedup();
        s
    };

    let mut by_controller: BTreeMap<Controller, BTreeMap<String, Value>> = BTreeMap::new();
    for (controller, domain, task) in keys {
        let mut finals = Vec::new();
        let mut convergence = Vec::new();
        let mut energy = Vec::new();
        for seed in &seeds {
            let rewards = extract_series(rows, controller, domain, task, *seed, |r| r.avg_reward);
            if rewards.is_empty() {
                continue;
            }
            finals.push(*rewards.last().unwrap());
            if let Ok(c) = convergence_iterations(&rewards, 0.95, 5) {
                convergence.push(c as f64);
            }
            let energies =
                extract_series(rows, controller, domain, task, *seed, |r| r.avg_energy_mj_per_slot);
            if let Ok(e) = converged_phase_mean(&energies) {
                energy.push(e);
            }
        }
        let entry = json!({
            "final_avg_reward": summary_of(&finals),
            "convergence_iterations": summary_of(&convergence),
            "converged_energy_mj_per_slot": summary_of(&energy),
        });
        by_controller
            .entry(controller)
            .or_default()
            .insert(format!("domain{domain}.task{task}"), entry);
    }
    for (c, tasks) in by_controller {
        controllers.insert(c.as_str(), json!(tasks));
    }

    let rows_finite = rows.iter().all(|r| {
        r.avg_reward.is_finite()
            && r.avg_energy_mj_per_slot.is_finite()
            && r.avg_queue_bits.is_finite()
            && r.harvested_cumulative_mj.is_finite()
    });
    let cdf_monotone = {
        let mut any = false;
        let mut ok = true;
        for run in runs {
            for samples in run.queue_samples.values() {
                if let Ok(cdf) = queue_cdf(samples) {
                    any = true;
                    ok &= cdf.windows(2).all(|w| w[1].1 >= w[0].1)
                        && (cdf.last().unwrap().1 - 1.0).abs() < 1e-12;
                }
            }
        }
        if any { Value::Bool(ok) } else { Value::Null }
    };
    let lifelong_loss_monotone = {
        let mut any = false;
        let mut ok = true;
        for run in runs {
            for t in &run.lifelong_trace {
                any = true;
                ok &= t.loss_after_updates <= t.loss_before_updates * (1.0 + 1e-9) + 1e-9;
            }
        }
        if any { Value::Bool(ok) } else { Value::Null }
    };

    let mut out = json!({
        "name": name,
        "command": command,
        "seeds": seeds,
        "controllers": controllers,
        "checks": {
            "rows_finite": rows_finite,
            "queue_cdf_monotone": cdf_monotone,
            "lifelong_loss_non_increasing": lifelong_loss_monotone,
            "state_dims_4n_plus_2": spec.map(state_dims_consistent),
        },
        "metadata": {
            "reward_shift": "series are min-shifted before the 95% convergence threshold",
            "converged_phase": "final 25% of iterations",
            "lyapunov_iterations": "evaluation episodes (the per-slot policy does not learn)",
        },
    });
    if let Some(spec) = spec {
        out["iterations"] = json!(spec.iterations);
    }
    if let Some(text) = config_text {
        out["config_sha256"] = json!(sha256_hex(text));
        out["config_echo"] = json!(text);
    }
    out
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn axis_bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if (hi - lo).abs() < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

/// Multi-series line chart; `boundaries` draws dashed vertical lines at the
/// given x positions (task transitions).
pub fn svg_line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[(String, Vec<(f64, f64)>)],
    boundaries: &[f64],
) -> String {
    let (w, h) = (720.0, 420.0);
    let (ml, mr, mt, mb) = (70.0, 20.0, 40.0, 50.0);
    let (xlo, xhi) = axis_bounds(series.iter().flat_map(|(_, pts)| pts.iter().map(|p| p.0)));
    let (ylo, yhi) = axis_bounds(series.iter().flat_map(|(_, pts)| pts.iter().map(|p| p.1)));
    let sx = |x: f64| ml + (x - xlo) / (xhi - xlo) * (w - ml - mr);
    let sy = |y: f64| h - mb - (y - ylo) / (yhi - ylo) * (h - mt - mb);
    let mut svg = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">
<rect width="{w}" height="{h}" fill="white"/>
<text x="{tx}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{title}</text>
<line x1="{ml}" y1="{yb}" x2="{xr}" y2="{yb}" stroke="black"/>
<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{yb}" stroke="black"/>
<text x="{tx}" y="{h2}" font-family="sans-serif" font-size="12" text-anchor="middle">{x_label}</text>
<text x="16" y="{my}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 16 {my})">{y_label}</text>
<text x="{ml}" y="{h3}" font-family="sans-serif" font-size="10" text-anchor="middle">{xlo:.3}</text>
<text x="{xr}" y="{h3}" font-family="sans-serif" font-size="10" text-anchor="middle">{xhi:.3}</text>
<text x="{ml2}" y="{yb}" font-family="sans-serif" font-size="10" text-anchor="end">{ylo:.3}</text>
<text x="{ml2}" y="{mt2}" font-family="sans-serif" font-size="10" text-anchor="end">{yhi:.3}</text>
"#,
        tx = w / 2.0,
        yb = h - mb,
        xr = w - mr,
        h2 = h - 12.0,
        h3 = h - mb + 16.0,
        my = (h - mb + mt) / 2.0,
        ml2 = ml - 6.0,
        mt2 = mt + 4.0,
    );
    for b in boundaries {
        let x = sx(*b);
        svg.push_str(&format!(
            r##"<line x1="{x}" y1="{mt}" x2="{x}" y2="{yb}" stroke="#999" stroke-dasharray="4 3"/>
"##,
            yb = h - mb
        ));
    }
    for (i, (label, pts)) in series.iter().enumerate() {
        if pts.is_empty() {
            continue;
        }
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> =
            pts.iter().map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y))).collect();
        svg.push_str(&format!(
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>
<text x="{lx}" y="{ly}" font-family="sans-serif" font-size="12" fill="{color}">{label}</text>
"#,
            path.join(" "),
            lx = w - mr - 120.0,
            ly = mt + 16.0 * (i as f64 + 1.0),
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Simple grouped bar chart of one value per label.
pub fn svg_bar_chart(title: &str, y_label: &str, bars: &[(String, f64)]) -> String {
    let (w, h) = (720.0, 420.0);
    let (ml, mr, mt, mb) = (70.0, 20.0, 40.0, 60.0);
    let (_, yhi) = axis_bounds(bars.iter().map(|b| b.1).chain(std::iter::once(0.0)));
    let ylo = bars.iter().map(|b| b.1).fold(0.0_f64, f64::min);
    let span = (yhi - ylo).max(1e-12);
    let sy = |y: f64| h - mb - (y - ylo) / span * (h - mt - mb);
    let n = bars.len().max(1) as f64;
    let slot = (w - ml - mr) / n;
    let bw = slot * 0.6;
    let mut svg = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">
<rect width="{w}" height="{h}" fill="white"/>
<text x="{tx}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{title}</text>
<line x1="{ml}" y1="{yb}" x2="{xr}" y2="{yb}" stroke="black"/>
<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{yb}" stroke="black"/>
<text x="16" y="{my}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 16 {my})">{y_label}</text>
<text x="{ml2}" y="{yb}" font-family="sans-serif" font-size="10" text-anchor="end">{ylo:.3}</text>
<text x="{ml2}" y="{mt2}" font-family="sans-serif" font-size="10" text-anchor="end">{yhi:.3}</text>
"#,
        tx = w / 2.0,
        yb = h - mb,
        xr = w - mr,
        my = (h - mb + mt) / 2.0,
        ml2 = ml - 6.0,
        mt2 = mt + 4.0,
    );
    for (i, (label, value)) in bars.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let x = ml + slot * i as f64 + (slot - bw) / 2.0;
        let y = sy(*value);
        let base = sy(0.0);
        let (top, height) = if y <= base { (y, base - y) } else { (base, y - base) };
        svg.push_str(&format!(
            r#"<rect x="{x:.2}" y="{top:.2}" width="{bw:.2}" height="{height:.2}" fill="{color}"/>
<text x="{cx:.2}" y="{ly}" font-family="sans-serif" font-size="11" text-anchor="middle">{label}</text>
"#,
            cx = x + bw / 2.0,
            ly = h - mb + 16.0,
        ));
    }
    svg.push_str("</svg>\n");
    svg
}
