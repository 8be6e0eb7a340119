use std::fmt::Write as _;

use serde::Serialize;

use infoflow::error::Result;
use infoflow::estimator::FlowMatrix;
use infoflow::panel::TimeSeriesPanel;
use infoflow::significance::PairAnalysis;
use infoflow::window::WindowedFlowSeries;

pub const ESTIMATE_SCHEMA: &str = "infoflow-estimate/1";
pub const MATRIX_SCHEMA: &str = "infoflow-matrix/1";
pub const WINDOW_SCHEMA: &str = "infoflow-window/1";

fn units(per_step: bool) -> &'static str {
    if per_step {
        "nats per step"
    } else {
        "nats per unit time"
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

#[derive(Serialize)]
struct EstimateReport<'a> {
    schema: &'static str,
    source: &'a str,
    target: &'a str,
    flow: f64,
    stderr: f64,
    z_score: f64,
    p_asymptotic: f64,
    p_surrogate: Option<f64>,
    n_surrogates: usize,
    significant: bool,
    alpha: f64,
    normalized: Option<f64>,
    self_influence: f64,
    self_influence_p: Option<f64>,
    units: &'static str,
    k: usize,
    n_eff: usize,
    dt: f64,
    warnings: &'a [String],
}

pub fn estimate_json(
    panel: &TimeSeriesPanel,
    a: &PairAnalysis,
    alpha: f64,
    scale: f64,
    per_step: bool,
) -> Result<String> {
    let r = &a.report;
    to_json(&EstimateReport {
        schema: ESTIMATE_SCHEMA,
        source: panel.label(a.flow.source),
        target: panel.label(a.flow.target),
        flow: a.flow.value * scale,
        stderr: r.stderr * scale,
        z_score: r.z_score,
        p_asymptotic: r.p_asymptotic,
        p_surrogate: r.p_surrogate,
        n_surrogates: r.n_surrogates,
        significant: r.p_value() <= alpha,
        alpha,
        normalized: a.flow.normalized,
        self_influence: a.self_influence.value * scale,
        self_influence_p: a.self_influence.p_value_asymptotic,
        units: units(per_step),
        k: a.flow.k,
        n_eff: a.flow.n_eff,
        dt: panel.dt(),
        warnings: &r.warnings,
    })
}

pub fn estimate_text(panel: &TimeSeriesPanel, a: &PairAnalysis, alpha: f64, scale: f64, per_step: bool) -> String {
    let r = &a.report;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "flow {} -> {}: {:.6e} {}",
        panel.label(a.flow.source),
        panel.label(a.flow.target),
        a.flow.value * scale,
        units(per_step)
    );
    let _ = writeln!(s, "stderr: {:.6e}", r.stderr * scale);
    let _ = writeln!(s, "z: {:.4}", r.z_score);
    let _ = writeln!(s, "p_asymptotic: {:.6e}", r.p_asymptotic);
    if let Some(p) = r.p_surrogate {
        let _ = writeln!(s, "p_surrogate: {:.6e} ({} surrogates)", p, r.n_surrogates);
    }
    let _ = writeln!(s, "significant at alpha={alpha}: {}", if r.p_value() <= alpha { "yes" } else { "no" });
    if let Some(n) = a.flow.normalized {
        let _ = writeln!(s, "normalized: {n:.6}");
    }
    let _ = writeln!(s, "self_influence {}: {:.6e}", panel.label(a.flow.target), a.self_influence.value * scale);
    let _ = writeln!(s, "k: {}  n_eff: {}  dt: {}", a.flow.k, a.flow.n_eff, panel.dt());
    for w in &r.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    s
}

#[derive(Serialize)]
struct MatrixCell {
    flow: f64,
    stderr: Option<f64>,
    p_asymptotic: Option<f64>,
    p_surrogate: Option<f64>,
    normalized: Option<f64>,
}

#[derive(Serialize)]
struct SelfCell {
    value: f64,
    stderr: Option<f64>,
    p_asymptotic: Option<f64>,
}

#[derive(Serialize)]
struct MatrixReport<'a> {
    schema: &'static str,
    labels: &'a [String],
    /// `flows[target][source]`; null on the diagonal.
    flows: Vec<Vec<Option<MatrixCell>>>,
    self_influence: Vec<SelfCell>,
    units: &'static str,
    k: usize,
    n_eff: usize,
    dt: f64,
}

pub fn matrix_json(m: &FlowMatrix, scale: f64, per_step: bool) -> Result<String> {
    let flows = m
        .flows
        .iter()
        .map(|row| {
            row.iter()
                .map(|f| {
                    f.as_ref().map(|f| MatrixCell {
                        flow: f.value * scale,
                        stderr: f.stderr.map(|s| s * scale),
                        p_asymptotic: f.p_value_asymptotic,
                        p_surrogate: f.p_value_surrogate,
                        normalized: f.normalized,
                    })
                })
                .collect()
        })
        .collect();
    let self_influence = m
        .self_influence
        .iter()
        .map(|s| SelfCell {
            value: s.value * scale,
            stderr: s.stderr.map(|v| v * scale),
            p_asymptotic: s.p_value_asymptotic,
        })
        .collect();
    to_json(&MatrixReport {
        schema: MATRIX_SCHEMA,
        labels: &m.labels,
        flows,
        self_influence,
        units: units(per_step),
        k: m.k,
        n_eff: m.n_eff,
        dt: m.dt,
    })
}

/// Targets as rows, sources as columns, then a self-influence column.
pub fn matrix_text(m: &FlowMatrix, scale: f64) -> String {
    let width = m.labels.iter().map(String::len).max().unwrap_or(0).max(14);
    let mut s = format!("{:<width$}", "target\\source");
    for l in &m.labels {
        let _ = write!(s, " {l:>width$}");
    }
    let _ = writeln!(s, " {:>width$}", "self");
    for (i, row) in m.flows.iter().enumerate() {
        let _ = write!(s, "{:<width$}", m.labels[i]);
        for f in row {
            match f {
                Some(f) => {
                    let _ = write!(s, " {:>width$.6e}", f.value * scale);
                }
                None => {
                    let _ = write!(s, " {:>width$}", "-");
                }
            }
        }
        let _ = writeln!(s, " {:>width$.6e}", m.self_influence[i].value * scale);
    }
    s
}

#[derive(Serialize)]
struct WindowPoint {
    center: f64,
    flow: Option<f64>,
    stderr: Option<f64>,
    p_asymptotic: Option<f64>,
    p_surrogate: Option<f64>,
    normalized: Option<f64>,
}

#[derive(Serialize)]
struct WindowPair {
    source: String,
    target: String,
    points: Vec<WindowPoint>,
}

#[derive(Serialize)]
struct WindowReport<'a> {
    schema: &'static str,
    window_length: usize,
    step: usize,
    units: &'static str,
    starts: &'a [usize],
    centers: &'a [f64],
    pairs: Vec<WindowPair>,
}

pub fn window_json(series: &WindowedFlowSeries, scale: f64, per_step: bool) -> Result<String> {
    let pairs = series
        .pairs
        .iter()
        .zip(&series.flows)
        .map(|(&(j, i), flows)| WindowPair {
            source: series.labels[j].clone(),
            target: series.labels[i].clone(),
            points: series
                .centers
                .iter()
                .zip(flows)
                .map(|(&center, f)| WindowPoint {
                    center,
                    flow: f.as_ref().map(|f| f.value * scale),
                    stderr: f.as_ref().and_then(|f| f.stderr).map(|s| s * scale),
                    p_asymptotic: f.as_ref().and_then(|f| f.p_value_asymptotic),
                    p_surrogate: f.as_ref().and_then(|f| f.p_value_surrogate),
                    normalized: f.as_ref().and_then(|f| f.normalized),
                })
                .collect(),
        })
        .collect();
    to_json(&WindowReport {
        schema: WINDOW_SCHEMA,
        window_length: series.window_length,
        step: series.step,
        units: units(per_step),
        starts: &series.starts,
        centers: &series.centers,
        pairs,
    })
}
