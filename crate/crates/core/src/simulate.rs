//! Euler–Maruyama integration of linear SDEs and planted-structure benchmarks.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::analytic::{LinearSDE, SystemFile};
use crate::error::{InfoFlowError, Result};
use crate::panel::TimeSeriesPanel;

pub const DEFAULT_BURN_IN: usize = 10_000;
pub const DEFAULT_DT: f64 = 0.01;
pub const DEFAULT_COUPLING: f64 = 0.5;
const BLOWUP: f64 = 1e12;

/// Recorded in simulation metadata so runs can be reproduced elsewhere.
pub const RNG_ALGORITHM: &str = "ChaCha20 (rand_chacha 0.9, seed_from_u64) + StandardNormal ziggurat (rand_distr 0.5)";

#[derive(Debug, Clone)]
pub struct SimulationSpec {
    pub sys: LinearSDE,
    pub n: usize,
    pub dt: f64,
    pub burn_in: usize,
    pub seed: u64,
    pub x0: Option<Vec<f64>>,
}

impl SimulationSpec {
    pub fn new(sys: LinearSDE, n: usize, dt: f64) -> Self {
        Self { sys, n, dt, burn_in: DEFAULT_BURN_IN, seed: 0, x0: None }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_burn_in(mut self, burn_in: usize) -> Self {
        self.burn_in = burn_in;
        self
    }

    pub fn with_x0(mut self, x0: Vec<f64>) -> Self {
        self.x0 = Some(x0);
        self
    }

    fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(InfoFlowError::InvalidArgument("simulation needs n >= 2 samples".into()));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(InfoFlowError::InvalidArgument(format!("dt must be positive, got {}", self.dt)));
        }
        if let Some(x0) = &self.x0 {
            if x0.len() != self.sys.d() {
                return Err(InfoFlowError::DimensionMismatch(format!(
                    "x0 has length {}, expected {}",
                    x0.len(),
                    self.sys.d()
                )));
            }
        }
        Ok(())
    }
}

fn default_labels(d: usize) -> Vec<String> {
    (1..=d).map(|j| format!("x{j}")).collect()
}

/// `X[m+1] = X[m] + (f + A X[m]) dt + B sqrt(dt) xi[m]`, discarding the first
/// `burn_in` steps. Identical specs give bit-identical panels.
pub fn euler_maruyama(spec: &SimulationSpec) -> Result<TimeSeriesPanel> {
    spec.validate()?;
    let sys = &spec.sys;
    let (d, m) = (sys.d(), sys.m());
    let (a, b, f) = (sys.a(), sys.b(), sys.f());
    let sqrt_dt = spec.dt.sqrt();
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);

    let mut x = spec.x0.clone().unwrap_or_else(|| vec![0.0; d]);
    let mut next = vec![0.0; d];
    let mut xi = vec![0.0; m];
    let mut rows = vec![Vec::with_capacity(spec.n); d];

    for step in 0..spec.burn_in + spec.n {
        if step >= spec.burn_in {
            for (row, v) in rows.iter_mut().zip(&x) {
                row.push(*v);
            }
            if step + 1 == spec.burn_in + spec.n {
                break;
            }
        }
        for v in xi.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        for r in 0..d {
            let mut drift = f[r];
            for c in 0..d {
                drift += a[(r, c)] * x[c];
            }
            let mut noise = 0.0;
            for c in 0..m {
                noise += b[(r, c)] * xi[c];
            }
            next[r] = x[r] + drift * spec.dt + noise * sqrt_dt;
        }
        std::mem::swap(&mut x, &mut next);
        if x.iter().any(|v| !v.is_finite() || v.abs() > BLOWUP) {
            return Err(InfoFlowError::Unstable { step: step + 1 });
        }
    }
    TimeSeriesPanel::new(default_labels(d), rows, spec.dt)
}

/// Named generators with a known causal structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Benchmark {
    OneWay2d,
    Chain3,
    Confounder3,
    IndependentD,
    Henon,
}

impl Benchmark {
    pub const ALL: [Benchmark; 5] =
        [Benchmark::OneWay2d, Benchmark::Chain3, Benchmark::Confounder3, Benchmark::IndependentD, Benchmark::Henon];

    pub fn name(self) -> &'static str {
        match self {
            Benchmark::OneWay2d => "one_way_2d",
            Benchmark::Chain3 => "chain_3",
            Benchmark::Confounder3 => "confounder_3",
            Benchmark::IndependentD => "independent_d",
            Benchmark::Henon => "henon",
        }
    }

    /// The linear system behind the benchmark; `None` for the Hénon map.
    pub fn system(self, params: &BenchmarkParams) -> Result<Option<LinearSDE>> {
        let c = params.coupling.unwrap_or(DEFAULT_COUPLING);
        let a = match self {
            Benchmark::OneWay2d => DMatrix::from_row_slice(2, 2, &[-1.0, c, 0.0, -1.0]),
            Benchmark::Chain3 => DMatrix::from_row_slice(3, 3, &[-1.0, 0.0, 0.0, c, -1.0, 0.0, 0.0, c, -1.0]),
            Benchmark::Confounder3 => DMatrix::from_row_slice(3, 3, &[-1.0, 0.0, c, 0.0, -1.0, c, 0.0, 0.0, -1.0]),
            Benchmark::IndependentD => {
                let d = params.d.unwrap_or(4);
                if d == 0 {
                    return Err(InfoFlowError::InvalidArgument("independent_d needs d >= 1".into()));
                }
                -DMatrix::identity(d, d)
            }
            Benchmark::Henon => return Ok(None),
        };
        LinearSDE::with_unit_noise(a).map(Some)
    }
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Benchmark {
    type Err = InfoFlowError;

    fn from_str(s: &str) -> Result<Self> {
        Benchmark::ALL.into_iter().find(|b| b.name() == s).ok_or_else(|| InfoFlowError::UnknownBenchmark(s.to_string()))
    }
}

#[derive(Debug, Clone, Default)]
pub struct BenchmarkParams {
    /// Off-diagonal drift strength of the planted edges.
    pub coupling: Option<f64>,
    /// Dimension of `independent_d`.
    pub d: Option<usize>,
    pub dt: Option<f64>,
    pub burn_in: Option<usize>,
}

/// A generated panel together with its planted structure.
#[derive(Debug, Clone)]
pub struct BenchmarkRun {
    pub panel: TimeSeriesPanel,
    /// `(source, target)`, 0-based.
    pub true_edges: Vec<(usize, usize)>,
    pub system: Option<LinearSDE>,
    pub burn_in: usize,
}

/// Formats 0-based edges as 1-based `"j->i"` descriptors.
pub fn edge_descriptors(edges: &[(usize, usize)]) -> Vec<String> {
    edges.iter().map(|(j, i)| format!("{}->{}", j + 1, i + 1)).collect()
}

pub fn benchmark(which: Benchmark, params: &BenchmarkParams, n: usize, seed: u64) -> Result<BenchmarkRun> {
    let burn_in = params.burn_in.unwrap_or(DEFAULT_BURN_IN);
    match which.system(params)? {
        Some(sys) => {
            let dt = params.dt.unwrap_or(DEFAULT_DT);
            let spec = SimulationSpec::new(sys.clone(), n, dt).with_seed(seed).with_burn_in(burn_in);
            let panel = euler_maruyama(&spec)?;
            Ok(BenchmarkRun { panel, true_edges: sys.cross_edges(), system: Some(sys), burn_in })
        }
        None => {
            let panel = henon(n, burn_in, params.dt.unwrap_or(1.0))?;
            Ok(BenchmarkRun { panel, true_edges: vec![(0, 1), (1, 0)], system: None, burn_in })
        }
    }
}

/// Hénon map `x' = 1 - 1.4 x^2 + y`, `y' = 0.3 x`, started at the origin.
pub fn henon(n: usize, burn_in: usize, dt: f64) -> Result<TimeSeriesPanel> {
    let (mut x, mut y) = (0.0f64, 0.0f64);
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for step in 0..burn_in + n {
        if step >= burn_in {
            xs.push(x);
            ys.push(y);
        }
        let nx = 1.0 - 1.4 * x * x + y;
        y = 0.3 * x;
        x = nx;
    }
    TimeSeriesPanel::new(default_labels(2), vec![xs, ys], dt)
}

/// JSON sidecar written next to a simulated panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationMetadata {
    pub schema: String,
    pub generator: String,
    pub benchmark: Option<String>,
    pub system: Option<SystemFile>,
    pub n: usize,
    pub dt: f64,
    pub burn_in: usize,
    pub seed: u64,
    pub labels: Vec<String>,
    pub true_edges: Vec<String>,
}

impl SimulationMetadata {
    pub const SCHEMA: &'static str = "infoflow-sim/1";

    pub fn new(
        benchmark: Option<Benchmark>,
        system: Option<&LinearSDE>,
        panel: &TimeSeriesPanel,
        burn_in: usize,
        seed: u64,
        true_edges: &[(usize, usize)],
    ) -> Self {
        Self {
            schema: Self::SCHEMA.into(),
            generator: if benchmark == Some(Benchmark::Henon) { "deterministic".into() } else { RNG_ALGORITHM.into() },
            benchmark: benchmark.map(|b| b.name().to_string()),
            system: system.map(LinearSDE::to_file),
            n: panel.n(),
            dt: panel.dt(),
            burn_in,
            seed,
            labels: panel.labels().to_vec(),
            true_edges: edge_descriptors(true_edges),
        }
    }
}
