//! Uniformly sampled multivariate time series, CSV ingestion/export, and
//! Euler forward differencing.

use std::collections::HashSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{InfoFlowError, Result};

/// Relative tolerance used when checking that a time column is uniform.
pub const TIME_GRID_RTOL: f64 = 1e-6;

/// `d` named series sampled at a uniform step `dt`.
///
/// Storage is row-major by component: `values[j][m]` is sample `m` of series `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesPanel {
    labels: Vec<String>,
    values: Vec<Vec<f64>>,
    dt: f64,
    t0: f64,
}

impl TimeSeriesPanel {
    /// Builds a validated panel starting at time 0.
    pub fn new(labels: Vec<String>, values: Vec<Vec<f64>>, dt: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(InfoFlowError::InsufficientData("panel needs at least one series".into()));
        }
        if labels.len() != values.len() {
            return Err(InfoFlowError::DimensionMismatch(format!(
                "{} labels for {} series",
                labels.len(),
                values.len()
            )));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(InfoFlowError::InvalidArgument(format!("dt must be positive and finite, got {dt}")));
        }
        let mut seen = HashSet::new();
        for label in &labels {
            if !seen.insert(label.as_str()) {
                return Err(InfoFlowError::Format(format!("duplicate series label '{label}'")));
            }
        }
        let n = values[0].len();
        if values.iter().any(|row| row.len() != n) {
            return Err(InfoFlowError::DimensionMismatch("all series must have the same length".into()));
        }
        if n < 2 {
            return Err(InfoFlowError::InsufficientData(format!("need at least 2 samples, got {n}")));
        }
        for (j, row) in values.iter().enumerate() {
            if let Some(m) = row.iter().position(|v| !v.is_finite()) {
                return Err(InfoFlowError::NonFinite { row: m + 1, column: j + 1 });
            }
        }
        Ok(Self { labels, values, dt, t0: 0.0 })
    }

    /// Builds a panel with default labels `c0`, `c1`, ...
    pub fn from_rows(values: Vec<Vec<f64>>, dt: f64) -> Result<Self> {
        let labels = (0..values.len()).map(|j| format!("c{j}")).collect();
        Self::new(labels, values, dt)
    }

    pub fn with_start_time(mut self, t0: f64) -> Self {
        self.t0 = t0;
        self
    }

    pub fn d(&self) -> usize {
        self.values.len()
    }

    pub fn n(&self) -> usize {
        self.values[0].len()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Time stamp of the first sample.
    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, j: usize) -> &str {
        &self.labels[j]
    }

    pub fn series(&self, j: usize) -> &[f64] {
        &self.values[j]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.values
    }

    /// Time stamp of sample `m`.
    pub fn time_at(&self, m: usize) -> f64 {
        self.t0 + m as f64 * self.dt
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Resolves a series by label, falling back to a 0-based index.
    pub fn resolve(&self, key: &str) -> Result<usize> {
        if let Some(j) = self.index_of(key) {
            return Ok(j);
        }
        match key.parse::<usize>() {
            Ok(j) if j < self.d() => Ok(j),
            Ok(j) => Err(InfoFlowError::IndexOutOfRange { index: j, d: self.d() }),
            Err(_) => Err(InfoFlowError::UnknownLabel(key.to_string())),
        }
    }

    pub(crate) fn check_index(&self, j: usize) -> Result<()> {
        if j < self.d() {
            Ok(())
        } else {
            Err(InfoFlowError::IndexOutOfRange { index: j, d: self.d() })
        }
    }

    /// Contiguous sub-panel `[start, start + len)`, keeping absolute time stamps.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.n() {
            return Err(InfoFlowError::InvalidArgument(format!(
                "window [{start}, {}) exceeds series length {}",
                start + len,
                self.n()
            )));
        }
        let values = self.values.iter().map(|row| row[start..start + len].to_vec()).collect();
        Ok(Self::new(self.labels.clone(), values, self.dt)?.with_start_time(self.time_at(start)))
    }

    /// Returns a copy with series `j` replaced.
    pub fn with_series(&self, j: usize, values: Vec<f64>) -> Result<Self> {
        self.check_index(j)?;
        let mut rows = self.values.clone();
        rows[j] = values;
        Ok(Self::new(self.labels.clone(), rows, self.dt)?.with_start_time(self.t0))
    }
}

/// Euler forward-differenced derivative estimate of one series.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferencedSeries {
    pub values: Vec<f64>,
    pub k: usize,
    pub source_label: String,
}

/// `(X[m + k] - X[m]) / (k dt)` for `m = 0 .. n - k`.
pub fn forward_difference(panel: &TimeSeriesPanel, j: usize, k: usize) -> Result<DifferencedSeries> {
    panel.check_index(j)?;
    let n = panel.n();
    if k == 0 || k >= n {
        return Err(InfoFlowError::InvalidStride { k, n });
    }
    let x = panel.series(j);
    let scale = 1.0 / (k as f64 * panel.dt());
    let values = x.iter().zip(&x[k..]).map(|(a, b)| (b - a) * scale).collect();
    Ok(DifferencedSeries { values, k, source_label: panel.label(j).to_string() })
}

/// CSV ingestion options.
#[derive(Debug, Clone)]
pub struct CsvOptions {
    pub delimiter: u8,
    pub has_header: bool,
    /// Name of a leading time column, if any. Requires a header.
    pub time_column: Option<String>,
    /// Step used when there is no time column. Defaults to 1.0.
    pub dt_override: Option<f64>,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self { delimiter: b',', has_header: true, time_column: None, dt_override: None }
    }
}

pub fn ingest_csv(path: impl AsRef<Path>, options: &CsvOptions) -> Result<TimeSeriesPanel> {
    let path = path.as_ref();
    let mut text = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|source| InfoFlowError::Io { path: path.to_path_buf(), source })?;
    parse_csv(&text, options)
}

/// Parses CSV text into a panel; see [`ingest_csv`].
pub fn parse_csv(text: &str, options: &CsvOptions) -> Result<TimeSeriesPanel> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(options.delimiter)
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let mut records = reader.records();
    let header: Option<Vec<String>> = if options.has_header {
        match records.next() {
            Some(rec) => Some(rec.map_err(csv_error)?.iter().map(str::to_string).collect()),
            None => return Err(InfoFlowError::InsufficientData("empty CSV".into())),
        }
    } else {
        None
    };

    let time_idx = match (&options.time_column, &header) {
        (None, _) => None,
        (Some(name), Some(h)) => Some(
            h.iter()
                .position(|c| c == name)
                .ok_or_else(|| InfoFlowError::Format(format!("time column '{name}' not found in header")))?,
        ),
        (Some(_), None) => return Err(InfoFlowError::Format("a named time column requires a header row".into())),
    };

    let first_line = if options.has_header { 2 } else { 1 };
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut width = header.as_ref().map(Vec::len);
    for (r, rec) in records.enumerate() {
        let rec = rec.map_err(csv_error)?;
        let line = first_line + r;
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        let w = *width.get_or_insert(rec.len());
        if rec.len() != w {
            return Err(InfoFlowError::Format(format!("row {line} has {} fields, expected {w}", rec.len())));
        }
        if columns.is_empty() {
            columns = vec![Vec::new(); w];
        }
        for (c, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| InfoFlowError::Parse {
                row: line,
                column: c + 1,
                message: format!("'{cell}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(InfoFlowError::NonFinite { row: line, column: c + 1 });
            }
            columns[c].push(v);
        }
    }

    let n = columns.first().map_or(0, Vec::len);
    if n < 2 {
        return Err(InfoFlowError::InsufficientData(format!("need at least 2 data rows, got {n}")));
    }
    let width = columns.len();
    let names: Vec<String> = match &header {
        Some(h) => h.clone(),
        None => (0..width).map(|c| format!("c{c}")).collect(),
    };

    let (dt, t0) = match time_idx {
        Some(ti) => infer_time_step(&columns[ti])?,
        None => (options.dt_override.unwrap_or(1.0), 0.0),
    };

    let mut labels = Vec::with_capacity(width);
    let mut values = Vec::with_capacity(width);
    for (c, col) in columns.into_iter().enumerate() {
        if Some(c) == time_idx {
            continue;
        }
        labels.push(names[c].clone());
        values.push(col);
    }
    if values.is_empty() {
        return Err(InfoFlowError::InsufficientData("no data columns besides time".into()));
    }
    Ok(TimeSeriesPanel::new(labels, values, dt)?.with_start_time(t0))
}

fn infer_time_step(t: &[f64]) -> Result<(f64, f64)> {
    let n = t.len();
    let dt = (t[n - 1] - t[0]) / (n - 1) as f64;
    if dt.is_nan() || dt <= 0.0 {
        return Err(InfoFlowError::Format("time column is not increasing".into()));
    }
    for (m, w) in t.windows(2).enumerate() {
        let step = w[1] - w[0];
        if ((step - dt) / dt).abs() > TIME_GRID_RTOL {
            return Err(InfoFlowError::Format(format!(
                "non-uniform time column at row {}: step {step} vs mean step {dt}",
                m + 2
            )));
        }
    }
    Ok((dt, t[0]))
}

fn csv_error(e: csv::Error) -> InfoFlowError {
    InfoFlowError::Format(e.to_string())
}

/// Formats a value at 17 significant digits, enough to round-trip any f64.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes the panel as CSV with a header, optionally preceded by a `t` column.
pub fn write_csv<W: Write>(panel: &TimeSeriesPanel, mut out: W, time_column: bool) -> std::io::Result<()> {
    let mut header: Vec<&str> = Vec::with_capacity(panel.d() + 1);
    if time_column {
        header.push("t");
    }
    header.extend(panel.labels().iter().map(String::as_str));
    writeln!(out, "{}", header.join(","))?;
    let mut line = String::new();
    for m in 0..panel.n() {
        line.clear();
        if time_column {
            line.push_str(&format_f64(panel.time_at(m)));
            line.push(',');
        }
        for j in 0..panel.d() {
            if j > 0 {
                line.push(',');
            }
            line.push_str(&format_f64(panel.series(j)[m]));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}
