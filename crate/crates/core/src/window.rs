//! Running-window flow analysis.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ErrorKind, InfoFlowError, Result};
use crate::estimator::FlowEstimate;
use crate::panel::{format_f64, TimeSeriesPanel};
use crate::significance::{analyze_pair, InferenceOptions, SurrogateConfig};

#[derive(Debug, Clone)]
pub struct WindowConfig {
    /// Window length in samples.
    pub window: usize,
    /// Offset between consecutive window starts, in samples.
    pub step: usize,
    pub k: usize,
    /// Ordered `(source, target)` pairs.
    pub pairs: Vec<(usize, usize)>,
    pub inference: InferenceOptions,
}

/// Flow estimates per ordered pair, aligned to window centers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowedFlowSeries {
    pub window_length: usize,
    pub step: usize,
    pub labels: Vec<String>,
    pub pairs: Vec<(usize, usize)>,
    pub starts: Vec<usize>,
    pub centers: Vec<f64>,
    /// `flows[p][w]`: pair `p` in window `w`; `None` when the window is degenerate.
    pub flows: Vec<Vec<Option<FlowEstimate>>>,
}

/// Number of windows: `floor((n - window) / step) + 1`.
pub fn window_count(n: usize, window: usize, step: usize) -> usize {
    if window > n || step == 0 {
        0
    } else {
        (n - window) / step + 1
    }
}

fn window_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add((index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

pub fn sliding_window_flows(panel: &TimeSeriesPanel, config: &WindowConfig) -> Result<WindowedFlowSeries> {
    let n = panel.n();
    if config.window == 0 || config.step == 0 {
        return Err(InfoFlowError::InvalidArgument("window and step must be positive".into()));
    }
    if config.window > n {
        return Err(InfoFlowError::InvalidArgument(format!(
            "window length {} exceeds series length {n}",
            config.window
        )));
    }
    if config.k == 0 || config.k >= config.window {
        return Err(InfoFlowError::InvalidStride { k: config.k, n: config.window });
    }
    if config.pairs.is_empty() {
        return Err(InfoFlowError::InvalidArgument("no pairs selected".into()));
    }
    for &(j, i) in &config.pairs {
        panel.check_index(j)?;
        panel.check_index(i)?;
        if i == j {
            return Err(InfoFlowError::InvalidPair("source equals target".into()));
        }
    }

    let count = window_count(n, config.window, config.step);
    let starts: Vec<usize> = (0..count).map(|w| w * config.step).collect();
    let half = (config.window - 1) as f64 / 2.0;
    let centers = starts.iter().map(|&s| panel.t0() + (s as f64 + half) * panel.dt()).collect();

    let per_window: Vec<Vec<Option<FlowEstimate>>> = starts
        .par_iter()
        .enumerate()
        .map(|(w, &start)| {
            let sub = panel.window(start, config.window)?;
            let mut options = config.inference;
            options.surrogates =
                options.surrogates.map(|cfg| SurrogateConfig { seed: window_seed(cfg.seed, w), ..cfg });
            config
                .pairs
                .iter()
                .map(|&(j, i)| match analyze_pair(&sub, j, i, config.k, &options) {
                    Ok(a) => Ok(Some(a.flow)),
                    Err(e) if is_window_degeneracy(&e) => Ok(None),
                    Err(e) => Err(e),
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let flows = (0..config.pairs.len()).map(|p| per_window.iter().map(|row| row[p].clone()).collect()).collect();
    Ok(WindowedFlowSeries {
        window_length: config.window,
        step: config.step,
        labels: panel.labels().to_vec(),
        pairs: config.pairs.clone(),
        starts,
        centers,
        flows,
    })
}

fn is_window_degeneracy(e: &InfoFlowError) -> bool {
    e.kind() == ErrorKind::Numerical || matches!(e, InfoFlowError::InsufficientData(_))
}

impl WindowedFlowSeries {
    fn pair_name(&self, p: usize) -> String {
        let (j, i) = self.pairs[p];
        format!("{}->{}", self.labels[j], self.labels[i])
    }

    /// One row per window; absent values are empty cells. `scale` multiplies
    /// flows and standard errors (e.g. `dt` for per-step units).
    pub fn to_csv(&self, scale: f64) -> String {
        let with_surr = self.flows.iter().flatten().flatten().any(|f| f.p_value_surrogate.is_some());
        let with_norm = self.flows.iter().flatten().flatten().any(|f| f.normalized.is_some());
        let mut header = vec!["center".to_string()];
        for p in 0..self.pairs.len() {
            let name = self.pair_name(p);
            header.push(format!("flow:{name}"));
            header.push(format!("stderr:{name}"));
            header.push(format!("p:{name}"));
            if with_surr {
                header.push(format!("p_surrogate:{name}"));
            }
            if with_norm {
                header.push(format!("normalized:{name}"));
            }
        }
        let opt = |v: Option<f64>| v.map(format_f64).unwrap_or_default();
        let mut out = header.join(",");
        out.push('\n');
        for (w, center) in self.centers.iter().enumerate() {
            let mut row = vec![format_f64(*center)];
            for series in &self.flows {
                let f = series[w].as_ref();
                row.push(opt(f.map(|f| f.value * scale)));
                row.push(opt(f.and_then(|f| f.stderr).map(|s| s * scale)));
                row.push(opt(f.and_then(|f| f.p_value_asymptotic)));
                if with_surr {
                    row.push(opt(f.and_then(|f| f.p_value_surrogate)));
                }
                if with_norm {
                    row.push(opt(f.and_then(|f| f.normalized)));
                }
            }
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}
