use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use infoflow::analytic::LinearSDE;
use infoflow::error::{InfoFlowError, Result};
use infoflow::estimator::estimate_flow_matrix;
use infoflow::graph::{export_graph, reconstruct_graph, Correction, GraphFormat};
use infoflow::panel::{parse_csv, write_csv, CsvOptions, TimeSeriesPanel};
use infoflow::significance::{analyze_pair, annotate_matrix, InferenceOptions, SurrogateConfig};
use infoflow::simulate::{
    benchmark, euler_maruyama, Benchmark, BenchmarkParams, SimulationMetadata, SimulationSpec, DEFAULT_BURN_IN,
    DEFAULT_DT,
};
use infoflow::window::{sliding_window_flows, WindowConfig};

use super::report;
use super::{Cli, Command, GlobalArgs, InputArgs};

pub fn execute(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Estimate { input, source, target } => estimate(g, input, source, target),
        Command::Matrix { input } => matrix(g, input),
        Command::Graph { input, format, output } => graph(g, input, format, output.as_deref()),
        Command::Window { input, window, step, pairs } => sliding(g, input, *window, step.unwrap_or(*window), pairs),
        Command::Simulate { benchmark, system, n, burn_in, coupling, d, output, meta } => simulate(
            g,
            &SimulateArgs {
                benchmark: benchmark.as_deref(),
                system: system.as_deref(),
                n: *n,
                burn_in: *burn_in,
                coupling: *coupling,
                d: *d,
                output: output.as_deref(),
                meta: meta.as_deref(),
            },
        ),
    }
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| InfoFlowError::Io { path: path.to_path_buf(), source })
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|source| InfoFlowError::Io { path: path.to_path_buf(), source })
}

fn stdout(contents: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(contents.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|source| InfoFlowError::Io { path: PathBuf::from("<stdout>"), source })
}

fn load_panel(g: &GlobalArgs, input: &InputArgs) -> Result<TimeSeriesPanel> {
    if !input.delimiter.is_ascii() {
        return Err(InfoFlowError::InvalidArgument("delimiter must be a single ASCII character".into()));
    }
    let text = read_file(&input.input)?;
    let delimiter = input.delimiter as u8;
    let time_column = match (&input.time_column, input.no_header) {
        (Some(name), _) => Some(name.clone()),
        (None, true) => None,
        (None, false) => detect_time_column(&text, delimiter),
    };
    let options = CsvOptions { delimiter, has_header: !input.no_header, time_column, dt_override: g.dt };
    let panel = parse_csv(&text, &options)?;
    match g.dt {
        Some(dt) if dt != panel.dt() => {
            Ok(TimeSeriesPanel::new(panel.labels().to_vec(), panel.rows().to_vec(), dt)?.with_start_time(panel.t0()))
        }
        _ => Ok(panel),
    }
}

fn detect_time_column(text: &str, delimiter: u8) -> Option<String> {
    let first = text.lines().next()?;
    let name = first.split(delimiter as char).next()?.trim().trim_matches('"');
    matches!(name, "t" | "time").then(|| name.to_string())
}

/// Seed for randomized commands: explicit, or generated and announced on stderr.
fn resolve_seed(g: &GlobalArgs) -> Result<u64> {
    match (g.seed, g.strict_repro) {
        (Some(s), _) => Ok(s),
        (None, true) => Err(InfoFlowError::InvalidArgument(
            "--strict-repro requires an explicit --seed for randomized commands".into(),
        )),
        (None, false) => {
            let s = rand::random::<u64>();
            eprintln!("seed: {s}");
            Ok(s)
        }
    }
}

fn inference(g: &GlobalArgs) -> Result<InferenceOptions> {
    let surrogates = if g.surrogates == 0 {
        None
    } else {
        Some(SurrogateConfig {
            method: g.surrogate_method.parse()?,
            statistic: g.surrogate_statistic.parse()?,
            ..SurrogateConfig::new(g.surrogates, resolve_seed(g)?)
        })
    };
    Ok(InferenceOptions { surrogates, normalize: g.normalize })
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(InfoFlowError::InvalidArgument(format!("--alpha must lie in [0, 1], got {alpha}")))
    }
}

fn scale(g: &GlobalArgs, panel: &TimeSeriesPanel) -> f64 {
    if g.per_step {
        panel.dt()
    } else {
        1.0
    }
}

fn estimate(g: &GlobalArgs, input: &InputArgs, source: &str, target: &str) -> Result<()> {
    check_alpha(g.alpha)?;
    let panel = load_panel(g, input)?;
    let j = panel.resolve(source)?;
    let i = panel.resolve(target)?;
    if i == j {
        return Err(InfoFlowError::InvalidPair(format!("source equals target ('{}')", panel.label(i))));
    }
    let opts = inference(g)?;
    let analysis = analyze_pair(&panel, j, i, g.k, &opts)?;
    let s = scale(g, &panel);
    let text = if g.json {
        report::estimate_json(&panel, &analysis, g.alpha, s, g.per_step)?
    } else {
        report::estimate_text(&panel, &analysis, g.alpha, s, g.per_step)
    };
    stdout(&text)
}

fn matrix(g: &GlobalArgs, input: &InputArgs) -> Result<()> {
    let panel = load_panel(g, input)?;
    let mut m = estimate_flow_matrix(&panel, g.k)?;
    annotate_matrix(&panel, &mut m, &inference(g)?)?;
    let s = scale(g, &panel);
    let text = if g.json { report::matrix_json(&m, s, g.per_step)? } else { report::matrix_text(&m, s) };
    stdout(&text)
}

fn graph(g: &GlobalArgs, input: &InputArgs, format: &str, output: Option<&Path>) -> Result<()> {
    check_alpha(g.alpha)?;
    let correction: Correction = g.correction.parse()?;
    let format: GraphFormat = format.parse()?;
    let panel = load_panel(g, input)?;
    let mut m = estimate_flow_matrix(&panel, g.k)?;
    annotate_matrix(&panel, &mut m, &inference(g)?)?;
    let mut graph = reconstruct_graph(&m, g.alpha, correction)?;
    let s = scale(g, &panel);
    for e in &mut graph.edges {
        e.flow *= s;
    }
    for l in &mut graph.self_loops {
        l.value *= s;
    }
    let text = export_graph(&graph, format)?;
    match output {
        Some(path) => write_file(path, text.as_bytes()),
        None => stdout(&text),
    }
}

fn parse_pair(panel: &TimeSeriesPanel, spec: &str) -> Result<(usize, usize)> {
    let (a, b) = spec
        .split_once(',')
        .ok_or_else(|| InfoFlowError::InvalidArgument(format!("--pair expects SOURCE,TARGET, got '{spec}'")))?;
    Ok((panel.resolve(a.trim())?, panel.resolve(b.trim())?))
}

fn sliding(g: &GlobalArgs, input: &InputArgs, window: usize, step: usize, pairs: &[String]) -> Result<()> {
    let panel = load_panel(g, input)?;
    let pairs = if pairs.is_empty() {
        let d = panel.d();
        (0..d).flat_map(|j| (0..d).filter(move |&i| i != j).map(move |i| (j, i))).collect()
    } else {
        pairs.iter().map(|p| parse_pair(&panel, p)).collect::<Result<Vec<_>>>()?
    };
    let config = WindowConfig { window, step, k: g.k, pairs, inference: inference(g)? };
    let series = sliding_window_flows(&panel, &config)?;
    let s = scale(g, &panel);
    let text = if g.json { report::window_json(&series, s, g.per_step)? } else { series.to_csv(s) };
    stdout(&text)
}

struct SimulateArgs<'a> {
    benchmark: Option<&'a str>,
    system: Option<&'a Path>,
    n: usize,
    burn_in: Option<usize>,
    coupling: Option<f64>,
    d: Option<usize>,
    output: Option<&'a Path>,
    meta: Option<&'a Path>,
}

fn simulate(g: &GlobalArgs, args: &SimulateArgs) -> Result<()> {
    let (panel, meta) = match (args.benchmark, args.system) {
        (Some(name), _) => {
            let which: Benchmark = name.parse()?;
            let params = BenchmarkParams { coupling: args.coupling, d: args.d, dt: g.dt, burn_in: args.burn_in };
            if let Some(sys) = which.system(&params)? {
                sys.ensure_hurwitz()?;
            }
            let seed = if which == Benchmark::Henon { g.seed.unwrap_or(0) } else { resolve_seed(g)? };
            let run = benchmark(which, &params, args.n, seed)?;
            let meta = SimulationMetadata::new(
                Some(which),
                run.system.as_ref(),
                &run.panel,
                run.burn_in,
                seed,
                &run.true_edges,
            );
            (run.panel, meta)
        }
        (None, Some(path)) => {
            let sys = LinearSDE::from_json(&read_file(path)?)?;
            sys.ensure_hurwitz()?;
            let seed = resolve_seed(g)?;
            let burn_in = args.burn_in.unwrap_or(DEFAULT_BURN_IN);
            let spec = SimulationSpec::new(sys.clone(), args.n, g.dt.unwrap_or(DEFAULT_DT))
                .with_seed(seed)
                .with_burn_in(burn_in);
            let panel = euler_maruyama(&spec)?;
            let meta = SimulationMetadata::new(None, Some(&sys), &panel, burn_in, seed, &sys.cross_edges());
            (panel, meta)
        }
        (None, None) => {
            return Err(InfoFlowError::InvalidArgument("either --benchmark or --system is required".into()))
        }
    };

    let mut csv = Vec::new();
    write_csv(&panel, &mut csv, true)
        .map_err(|source| InfoFlowError::Io { path: PathBuf::from("<buffer>"), source })?;
    let mut meta_text = serde_json::to_string_pretty(&meta)?;
    meta_text.push('\n');

    let meta_path = args.meta.map(Path::to_path_buf).or_else(|| args.output.map(|p| p.with_extension("meta.json")));
    match args.output {
        Some(path) => write_file(path, &csv)?,
        None => stdout(std::str::from_utf8(&csv).expect("CSV output is ASCII"))?,
    }
    if let Some(path) = meta_path {
        write_file(&path, meta_text.as_bytes())?;
    }
    if g.json && args.output.is_some() {
        stdout(&meta_text)?;
    }
    Ok(())
}
