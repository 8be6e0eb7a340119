//! Significance-filtered causal graphs and their DOT / JSON export.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{InfoFlowError, Result};
use crate::estimator::FlowMatrix;

pub const GRAPH_SCHEMA: &str = "infoflow-graph/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correction {
    #[default]
    None,
    Bonferroni,
    BenjaminiHochberg,
}

impl FromStr for Correction {
    type Err = InfoFlowError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "bonferroni" => Ok(Self::Bonferroni),
            "benjamini_hochberg" | "bh" | "fdr" => Ok(Self::BenjaminiHochberg),
            other => Err(InfoFlowError::InvalidArgument(format!("unknown correction '{other}'"))),
        }
    }
}

impl Correction {
    /// Adjusted p values, in input order.
    pub fn adjust(self, p: &[f64]) -> Vec<f64> {
        let m = p.len() as f64;
        match self {
            Correction::None => p.to_vec(),
            Correction::Bonferroni => p.iter().map(|v| (v * m).min(1.0)).collect(),
            Correction::BenjaminiHochberg => {
                let mut order: Vec<usize> = (0..p.len()).collect();
                order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
                let mut adjusted = vec![0.0; p.len()];
                let mut running = 1.0f64;
                for (rank, &idx) in order.iter().enumerate().rev() {
                    running = running.min(p[idx] * m / (rank + 1) as f64);
                    adjusted[idx] = running.min(1.0);
                }
                adjusted
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub source: String,
    pub target: String,
    pub flow: f64,
    pub normalized: Option<f64>,
    /// p value after correction.
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfLoop {
    pub node: String,
    pub value: f64,
    pub p: f64,
    pub included: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphMeta {
    pub alpha: f64,
    pub correction: Correction,
    pub k: usize,
    pub dt: f64,
    pub n_eff: usize,
}

/// Weighted directed graph; arrows point from cause (source) to effect (target).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalGraph {
    pub schema: String,
    pub nodes: Vec<String>,
    pub edges: Vec<Edge>,
    pub self_loops: Vec<SelfLoop>,
    pub meta: GraphMeta,
}

impl CausalGraph {
    pub fn has_edge(&self, source: &str, target: &str) -> bool {
        self.edges.iter().any(|e| e.source == source && e.target == target)
    }

    /// `(source, target)` label pairs, in canonical order.
    pub fn edge_pairs(&self) -> Vec<(String, String)> {
        self.edges.iter().map(|e| (e.source.clone(), e.target.clone())).collect()
    }
}

/// Keeps edge `j -> i` iff its corrected p value is at most `alpha`.
///
/// The matrix must carry p values (see `significance::annotate_matrix`).
/// Self loops are corrected as their own family of `d` tests.
pub fn reconstruct_graph(matrix: &FlowMatrix, alpha: f64, correction: Correction) -> Result<CausalGraph> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(InfoFlowError::InvalidArgument(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let d = matrix.d();
    if matrix.flows.len() != d || matrix.flows.iter().any(|row| row.len() != d) || matrix.self_influence.len() != d {
        return Err(InfoFlowError::DimensionMismatch(format!(
            "flow matrix does not cover all ordered pairs of {d} nodes"
        )));
    }

    let mut candidates = Vec::with_capacity(d * (d - 1));
    for i in 0..d {
        for j in (0..d).filter(|&j| j != i) {
            let flow = matrix.flows[i][j]
                .as_ref()
                .ok_or_else(|| InfoFlowError::DimensionMismatch(format!("missing estimate for {j} -> {i}")))?;
            let p = flow.p_value().ok_or_else(|| {
                InfoFlowError::InvalidArgument(format!("no p value for {j} -> {i}; run significance first"))
            })?;
            candidates.push((flow, p));
        }
    }
    let raw: Vec<f64> = candidates.iter().map(|(_, p)| *p).collect();
    let adjusted = correction.adjust(&raw);

    let label = |idx: usize| matrix.labels[idx].clone();
    let mut edges: Vec<Edge> = candidates
        .iter()
        .zip(&adjusted)
        .filter(|(_, &p)| p <= alpha)
        .map(|((flow, _), &p)| Edge {
            source: label(flow.source),
            target: label(flow.target),
            flow: flow.value,
            normalized: flow.normalized,
            p,
        })
        .collect();
    edges.sort_by(|a, b| (&a.source, &a.target).cmp(&(&b.source, &b.target)));

    let self_raw: Vec<f64> = matrix
        .self_influence
        .iter()
        .map(|s| {
            s.p_value_asymptotic
                .ok_or_else(|| InfoFlowError::InvalidArgument(format!("no p value for self loop {}", s.target)))
        })
        .collect::<Result<_>>()?;
    let self_adj = correction.adjust(&self_raw);
    let self_loops = matrix
        .self_influence
        .iter()
        .zip(self_adj)
        .map(|(s, p)| SelfLoop { node: label(s.target), value: s.value, p, included: s.value != 0.0 && p <= alpha })
        .collect();

    Ok(CausalGraph {
        schema: GRAPH_SCHEMA.into(),
        nodes: matrix.labels.clone(),
        edges,
        self_loops,
        meta: GraphMeta { alpha, correction, k: matrix.k, dt: matrix.dt, n_eff: matrix.n_eff },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphFormat {
    Dot,
    Json,
}

impl FromStr for GraphFormat {
    type Err = InfoFlowError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dot" => Ok(Self::Dot),
            "json" => Ok(Self::Json),
            other => Err(InfoFlowError::InvalidArgument(format!("unknown graph format '{other}'"))),
        }
    }
}

/// Formats `v` with 4 significant digits.
pub fn format_sig4(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let exp = v.abs().log10().floor() as i32;
    if !(-4..4).contains(&exp) {
        return format!("{v:.3e}");
    }
    format!("{:.*}", (3 - exp).max(0) as usize, v)
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

fn penwidth(normalized: Option<f64>) -> f64 {
    normalized.map_or(1.0, |n| (5.0 * n.abs()).max(0.25))
}

pub fn export_graph(graph: &CausalGraph, format: GraphFormat) -> Result<String> {
    match format {
        GraphFormat::Json => {
            let mut s = serde_json::to_string_pretty(graph)?;
            s.push('\n');
            Ok(s)
        }
        GraphFormat::Dot => {
            let mut s = String::from("digraph G {");
            for node in &graph.nodes {
                let _ = write!(s, " {};", quote(node));
            }
            for e in &graph.edges {
                let _ = write!(
                    s,
                    " {} -> {} [label=\"{}\", penwidth={:.3}];",
                    quote(&e.source),
                    quote(&e.target),
                    format_sig4(e.flow),
                    penwidth(e.normalized)
                );
            }
            for l in graph.self_loops.iter().filter(|l| l.included) {
                let _ = write!(
                    s,
                    " {} -> {} [label=\"{}\", style=dashed];",
                    quote(&l.node),
                    quote(&l.node),
                    format_sig4(l.value)
                );
            }
            s.push_str(" }\n");
            Ok(s)
        }
    }
}

pub fn import_graph_json(text: &str) -> Result<CausalGraph> {
    let graph: CausalGraph = serde_json::from_str(text)?;
    if graph.schema != GRAPH_SCHEMA {
        return Err(InfoFlowError::Format(format!(
            "unsupported graph schema '{}', expected '{GRAPH_SCHEMA}'",
            graph.schema
        )));
    }
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::estimate_flow_matrix;
    use crate::significance::{annotate_matrix, InferenceOptions};
    use crate::simulate::{benchmark, Benchmark, BenchmarkParams};
    use proptest::prelude::*;

    fn meta() -> GraphMeta {
        GraphMeta { alpha: 0.05, correction: Correction::None, k: 1, dt: 0.01, n_eff: 999 }
    }

    fn empty(nodes: &[&str]) -> CausalGraph {
        CausalGraph {
            schema: GRAPH_SCHEMA.into(),
            nodes: nodes.iter().map(|s| s.to_string()).collect(),
            edges: vec![],
            self_loops: vec![],
            meta: meta(),
        }
    }

    fn annotated(which: Benchmark, n: usize, seed: u64) -> FlowMatrix {
        let run = benchmark(which, &BenchmarkParams::default(), n, seed).unwrap();
        let mut m = estimate_flow_matrix(&run.panel, 1).unwrap();
        annotate_matrix(&run.panel, &mut m, &InferenceOptions { surrogates: None, normalize: true }).unwrap();
        m
    }

    #[test]
    fn empty_graph_dot() {
        assert_eq!(export_graph(&empty(&["a", "b"]), GraphFormat::Dot).unwrap(), "digraph G { \"a\"; \"b\"; }\n");
    }

    #[test]
    fn single_edge_json_shape() {
        let mut g = empty(&["a", "b"]);
        g.edges.push(Edge { source: "a".into(), target: "b".into(), flow: 0.25, normalized: None, p: 0.001 });
        let v: serde_json::Value = serde_json::from_str(&export_graph(&g, GraphFormat::Json).unwrap()).unwrap();
        let edges = v["edges"].as_array().unwrap();
        assert_eq!(edges.len(), 1);
        for key in ["source", "target", "flow", "normalized", "p"] {
            assert!(edges[0].get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["schema"], GRAPH_SCHEMA);
        for key in ["alpha", "correction", "k", "dt", "n_eff"] {
            assert!(v["meta"].get(key).is_some());
        }
    }

    #[test]
    fn json_round_trip() {
        let g = reconstruct_graph(&annotated(Benchmark::Chain3, 20_000, 4), 0.05, Correction::None).unwrap();
        let text = export_graph(&g, GraphFormat::Json).unwrap();
        assert_eq!(import_graph_json(&text).unwrap(), g);
        assert_eq!(text, export_graph(&g, GraphFormat::Json).unwrap());
    }

    #[test]
    fn wrong_schema_rejected() {
        let text = export_graph(&empty(&["a"]), GraphFormat::Json).unwrap().replace("infoflow-graph/1", "other/2");
        assert!(matches!(import_graph_json(&text), Err(InfoFlowError::Format(_))));
    }

    #[test]
    fn unknown_format() {
        assert!("svg".parse::<GraphFormat>().is_err());
    }

    #[test]
    fn nothing_significant_means_no_edges() {
        let mut m = annotated(Benchmark::Chain3, 5_000, 1);
        for row in m.flows.iter_mut() {
            for f in row.iter_mut().flatten() {
                f.p_value_asymptotic = Some(1.0);
            }
        }
        let g = reconstruct_graph(&m, 0.05, Correction::None).unwrap();
        assert!(g.edges.is_empty());
    }

    #[test]
    fn alpha_zero_gives_empty_graph() {
        let g = reconstruct_graph(&annotated(Benchmark::Chain3, 50_000, 1), 0.0, Correction::None).unwrap();
        assert!(g.edges.is_empty());
        assert!(g.self_loops.iter().all(|l| !l.included));
    }

    #[test]
    fn missing_p_values_rejected() {
        let run = benchmark(Benchmark::Chain3, &BenchmarkParams::default(), 5_000, 1).unwrap();
        let m = estimate_flow_matrix(&run.panel, 1).unwrap();
        assert!(reconstruct_graph(&m, 0.05, Correction::None).is_err());
    }

    #[test]
    fn mismatched_dimensions_rejected() {
        let mut m = annotated(Benchmark::Chain3, 5_000, 1);
        m.flows.pop();
        assert!(matches!(reconstruct_graph(&m, 0.05, Correction::None), Err(InfoFlowError::DimensionMismatch(_))));
    }

    #[test]
    fn edges_sorted_and_self_loops_found() {
        let g = reconstruct_graph(&annotated(Benchmark::Chain3, 50_000, 3), 0.05, Correction::Bonferroni).unwrap();
        let pairs = g.edge_pairs();
        let mut sorted = pairs.clone();
        sorted.sort();
        assert_eq!(pairs, sorted);
        assert!(g.has_edge("x1", "x2") && g.has_edge("x2", "x3"));
        assert!(g.self_loops.iter().all(|l| l.included && l.value < 0.0));
        assert!(g.edges.iter().all(|e| e.p <= 0.05 && e.source != e.target));
        let dot = export_graph(&g, GraphFormat::Dot).unwrap();
        assert!(dot.starts_with("digraph"));
        assert!(dot.contains("\"x1\" -> \"x2\""));
        assert!(dot.contains("\"x1\" -> \"x1\""));
    }

    #[test]
    fn sig_digits() {
        assert_eq!(format_sig4(1.0 / 9.0), "0.1111");
        assert_eq!(format_sig4(-0.5), "-0.5000");
        assert_eq!(format_sig4(12.3456), "12.35");
        assert_eq!(format_sig4(0.0), "0");
        assert_eq!(format_sig4(1.234e-7), "1.234e-7");
    }

    #[test]
    fn bonferroni_and_bh() {
        let p = [0.01, 0.04, 0.03, 0.5];
        assert_eq!(Correction::Bonferroni.adjust(&p), vec![0.04, 0.16, 0.12, 1.0]);
        let bh = Correction::BenjaminiHochberg.adjust(&p);
        let want = [0.04, 0.16 / 3.0, 0.16 / 3.0, 0.5];
        for (a, b) in bh.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn edges_monotone_in_alpha(a1 in 0.0f64..0.5, a2 in 0.0f64..0.5, which in 0usize..3, seed in 0u64..1000) {
            let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
            let corr = [Correction::None, Correction::Bonferroni, Correction::BenjaminiHochberg][which];
            let m = annotated(Benchmark::IndependentD, 2_000, seed);
            let small = reconstruct_graph(&m, lo, corr).unwrap();
            let big = reconstruct_graph(&m, hi, corr).unwrap();
            for e in &small.edges {
                prop_assert!(big.has_edge(&e.source, &e.target));
            }
        }
    }
}
