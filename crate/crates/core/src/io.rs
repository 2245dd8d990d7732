//! File formats: the line-delimited JSON dataset, topology-summary CSV and
//! the analysis report bundle.
//!
//! Dataset files start with a header line
//! `{"format":"topognn-dataset","version":1,"feat_dim":D}` followed by one
//! graph per line:
//! `{"id":..,"label":0|1,"num_nodes":n,"root":r,"edges":[[u,v],..],"features":[[..],..],"split":"train"}`
//! where `split` is optional (omitted when the dataset is not split).

use crate::analysis::{AnalysisError, TopoReport};
use crate::graph::{GraphDataset, GraphError, PropagationGraph, Split};
use crate::topo::TopoSummary;
use crate::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use thiserror::Error;

pub const DATASET_FORMAT: &str = "topognn-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("dataset format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("line {line}: invalid graph: {source}")]
    ValidationFailed { line: usize, source: GraphError },
    #[error("invalid dataset: {0}")]
    InvalidDataset(#[from] GraphError),
    #[error("csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    feat_dim: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    label: u8,
    num_nodes: usize,
    root: usize,
    edges: Vec<(usize, usize)>,
    features: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<Split>,
}

/// Serializes a dataset; see the module docs for the layout.
pub fn write_dataset<W: Write>(ds: &GraphDataset, out: W) -> Result<(), IoError> {
    ds.validate()?;
    let mut out = BufWriter::new(out);
    let header = Header { format: DATASET_FORMAT.into(), version: DATASET_VERSION, feat_dim: ds.feat_dim().unwrap_or(0) };
    let write = |out: &mut BufWriter<W>, s: String| writeln!(out, "{s}");
    let map = |e: std::io::Error| IoError::Io { path: "<output>".into(), source: e };
    write(&mut out, serde_json::to_string(&header).expect("header serializes")).map_err(map)?;
    for g in &ds.graphs {
        let rec = Record {
            id: g.id.clone(),
            label: g.label,
            num_nodes: g.num_nodes,
            root: g.root,
            edges: g.edges.clone(),
            features: g.features.to_rows(),
            split: ds.split_of(&g.id),
        };
        write(&mut out, serde_json::to_string(&rec).expect("record serializes")).map_err(map)?;
    }
    out.flush().map_err(map)
}

/// Parses a dataset; every graph is validated as it is read.
pub fn read_dataset<R: BufRead>(input: R) -> Result<GraphDataset, IoError> {
    let mut lines = input.lines().enumerate().map(|(i, l)| (i + 1, l));
    let read_err = |e: std::io::Error| IoError::Io { path: "<input>".into(), source: e };
    let (_, first) = lines.next().ok_or(IoError::Parse { line: 1, reason: "missing header".into() })?;
    let first = first.map_err(read_err)?;
    let header: Header =
        serde_json::from_str(&first).map_err(|e| IoError::Parse { line: 1, reason: format!("bad header: {e}") })?;
    if header.format != DATASET_FORMAT {
        return Err(IoError::Parse { line: 1, reason: format!("unknown format '{}'", header.format) });
    }
    if header.version != DATASET_VERSION {
        return Err(IoError::VersionMismatch { found: header.version, expected: DATASET_VERSION });
    }

    let mut graphs = Vec::new();
    let mut splits = BTreeMap::new();
    let mut line_of = BTreeMap::new();
    for (line, text) in lines {
        let text = text.map_err(read_err)?;
        if text.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&text).map_err(|e| IoError::Parse { line, reason: e.to_string() })?;
        if let Some(row) = rec.features.iter().position(|r| r.len() != header.feat_dim) {
            return Err(IoError::Parse {
                line,
                reason: format!(
                    "feature row {row} has {} values but the header declares feat_dim {}",
                    rec.features[row].len(),
                    header.feat_dim
                ),
            });
        }
        let features = Tensor::from_vec(rec.features.len(), header.feat_dim, rec.features.concat())
            .ok_or_else(|| IoError::Parse { line, reason: "feature matrix shape mismatch".into() })?;
        let g = PropagationGraph::new(rec.id, rec.num_nodes, rec.edges, features, rec.root, rec.label)
            .map_err(|source| IoError::ValidationFailed { line, source })?;
        if let Some(s) = rec.split {
            splits.insert(g.id.clone(), s);
        }
        line_of.insert(g.id.clone(), line);
        graphs.push(g);
    }
    let ds = GraphDataset { graphs, splits };
    ds.validate().map_err(|source| match &source {
        GraphError::DuplicateGraphId(id) => IoError::ValidationFailed { line: line_of[id], source },
        _ => IoError::InvalidDataset(source),
    })?;
    Ok(ds)
}

pub fn save_dataset(ds: &GraphDataset, path: &Path) -> Result<(), IoError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    write_dataset(ds, file)
}

pub fn load_dataset(path: &Path) -> Result<GraphDataset, IoError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    read_dataset(BufReader::new(file))
}

/// Topology summaries as CSV with header
/// `graph_id,label,avg_degree,mean_degree_centrality,mean_clustering,density,node_count`.
pub fn write_summaries<W: Write>(summaries: &[TopoSummary], out: W) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    for s in summaries {
        w.serialize(s).map_err(|e| IoError::Csv(e.to_string()))?;
    }
    if summaries.is_empty() {
        w.write_record(SUMMARY_HEADER).map_err(|e| IoError::Csv(e.to_string()))?;
    }
    w.flush().map_err(|e| IoError::Csv(e.to_string()))
}

pub const SUMMARY_HEADER: [&str; 7] =
    ["graph_id", "label", "avg_degree", "mean_degree_centrality", "mean_clustering", "density", "node_count"];

pub fn read_summaries<R: std::io::Read>(input: R) -> Result<Vec<TopoSummary>, IoError> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(|e| IoError::Csv(e.to_string()))?;
    if header.iter().ne(SUMMARY_HEADER) {
        return Err(IoError::Csv(format!("expected header {}", SUMMARY_HEADER.join(","))));
    }
    r.deserialize()
        .enumerate()
        .map(|(i, rec)| rec.map_err(|e| IoError::Parse { line: i + 2, reason: e.to_string() }))
        .collect()
}

pub fn save_summaries(summaries: &[TopoSummary], path: &Path) -> Result<(), IoError> {
    write_summaries(summaries, fs::File::create(path).map_err(io_err(path))?)
}

pub fn load_summaries(path: &Path) -> Result<Vec<TopoSummary>, IoError> {
    read_summaries(fs::File::open(path).map_err(io_err(path))?)
}

/// File names written by [`save_report`], in order.
pub const REPORT_FILES: [&str; 5] = ["report.json", "boxstats.csv", "scatter.csv", "histogram.csv", "correlation.csv"];

/// Writes `report.json` and the four plot CSVs into `dir` (created if needed).
pub fn save_report(report: &TopoReport, dir: &Path) -> Result<(), IoError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let contents = [
        serde_json::to_string_pretty(report).expect("report serializes"),
        report.boxstats_csv()?,
        report.scatter_csv()?,
        report.histogram_csv()?,
        report.correlation_csv()?,
    ];
    for (name, body) in REPORT_FILES.iter().zip(contents) {
        let path = dir.join(name);
        fs::write(&path, body).map_err(io_err(&path))?;
    }
    Ok(())
}
