//! File formats: the long-format dataset CSV, edge-list CSVs, the graph JSON
//! document, score files for external methods, and experiment reports.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a file
//! read back reproduces the in-memory values exactly.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bench::ExperimentReport;
use crate::error::{Error, Result};
use crate::funcrep::FunctionalDataset;
use crate::graph::{GraphDiff, ScoredGraph, TuningRecord};
use crate::simgen::GroundTruth;

// =============================================================================
// Dataset CSV: subject,node,time,value (1-based subject and node)
// =============================================================================

pub fn write_dataset_csv(path: &Path, dataset: &FunctionalDataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["subject", "node", "time", "value"]).map_err(csv_err)?;
    for a in 0..dataset.n() {
        for i in 0..dataset.p() {
            let grid = dataset.grid(a);
            let vals = dataset.values(a, i);
            for (t, v) in grid.iter().zip(vals) {
                w.write_record([
                    (a + 1).to_string(),
                    (i + 1).to_string(),
                    format!("{t}"),
                    format!("{v}"),
                ])
                .map_err(csv_err)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::parse(e.to_string())
}

pub fn read_dataset_csv(path: &Path) -> Result<FunctionalDataset> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    {
        let headers = r.headers().map_err(csv_err)?;
        let want = ["subject", "node", "time", "value"];
        if headers.len() != 4 || headers.iter().zip(want).any(|(h, w)| h != w) {
            return Err(Error::parse(format!(
                "expected header 'subject,node,time,value', got '{}'",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
    }
    // (subject, node) -> list of (time, value)
    let mut cells: BTreeMap<(usize, usize), Vec<(f64, f64)>> = BTreeMap::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let ctx = || format!("row {}", line + 2);
        if rec.len() != 4 {
            return Err(Error::parse(format!("{}: expected 4 fields", ctx())));
        }
        let subject: usize = rec[0]
            .parse()
            .map_err(|_| Error::parse(format!("{}: bad subject '{}'", ctx(), &rec[0])))?;
        let node: usize = rec[1]
            .parse()
            .map_err(|_| Error::parse(format!("{}: bad node '{}'", ctx(), &rec[1])))?;
        let time: f64 = rec[2]
            .parse()
            .map_err(|_| Error::parse(format!("{}: bad time '{}'", ctx(), &rec[2])))?;
        let value: f64 = rec[3]
            .parse()
            .map_err(|_| Error::parse(format!("{}: bad value '{}'", ctx(), &rec[3])))?;
        if subject == 0 || node == 0 {
            return Err(Error::validation(format!(
                "{}: subject and node are 1-based",
                ctx()
            )));
        }
        cells.entry((subject, node)).or_default().push((time, value));
    }
    if cells.is_empty() {
        return Err(Error::validation("dataset file contains no observations"));
    }
    let n = cells.keys().map(|k| k.0).max().unwrap();
    let p = cells.keys().map(|k| k.1).max().unwrap();

    let mut grids: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut values: Vec<Vec<Vec<f64>>> = Vec::with_capacity(n);
    for a in 1..=n {
        let mut subject_grid: Option<Vec<f64>> = None;
        let mut subject_values = Vec::with_capacity(p);
        for i in 1..=p {
            let mut obs = cells.remove(&(a, i)).ok_or_else(|| {
                Error::validation(format!("subject {a}: missing node {i}"))
            })?;
            obs.sort_by(|x, y| x.0.total_cmp(&y.0));
            let times: Vec<f64> = obs.iter().map(|o| o.0).collect();
            let vals: Vec<f64> = obs.iter().map(|o| o.1).collect();
            match &subject_grid {
                None => subject_grid = Some(times),
                Some(g) => {
                    if g.len() != times.len() || g.iter().zip(&times).any(|(x, y)| x != y) {
                        return Err(Error::validation(format!(
                            "subject {a}: node {i} observed on a different grid than node 1"
                        )));
                    }
                }
            }
            subject_values.push(vals);
        }
        grids.push(subject_grid.unwrap());
        values.push(subject_values);
    }
    FunctionalDataset::new(grids, values)
}

// =============================================================================
// Edge lists and ground truth
// =============================================================================

pub fn write_truth_csv(path: &Path, truth: &GroundTruth) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["i", "j"]).map_err(csv_err)?;
    for &(i, j) in &truth.edges {
        w.write_record([(i + 1).to_string(), (j + 1).to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Read an edge list; p is taken as the largest index seen unless supplied.
pub fn read_truth_csv(path: &Path, p_hint: Option<usize>) -> Result<GroundTruth> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut edges = BTreeSet::new();
    let mut max_node = 0usize;
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() < 2 {
            return Err(Error::parse("edge rows need two fields".to_string()));
        }
        let i: usize = rec[0].parse().map_err(|_| Error::parse(format!("bad index '{}'", &rec[0])))?;
        let j: usize = rec[1].parse().map_err(|_| Error::parse(format!("bad index '{}'", &rec[1])))?;
        if i == 0 || j == 0 || i == j {
            return Err(Error::validation(format!("invalid edge ({i}, {j})")));
        }
        max_node = max_node.max(i).max(j);
        edges.insert(((i - 1).min(j - 1), (i - 1).max(j - 1)));
    }
    let p = p_hint.unwrap_or(max_node);
    if max_node > p {
        return Err(Error::validation(format!(
            "edge index {max_node} exceeds node count {p}"
        )));
    }
    Ok(GroundTruth { p, edges })
}

// =============================================================================
// Graph document
// =============================================================================

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreDoc {
    pub i: usize,
    pub j: usize,
    pub hs: f64,
}

/// The JSON layout of a fitted graph. Node indices are 1-based.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphDoc {
    pub p: usize,
    pub scores: Vec<ScoreDoc>,
    pub threshold: f64,
    pub edges: Vec<(usize, usize)>,
    pub tuning: serde_json::Value,
}

impl GraphDoc {
    pub fn from_graph(graph: &ScoredGraph) -> Result<Self> {
        let scores = graph
            .scores
            .iter()
            .map(|s| ScoreDoc { i: s.pair.0 + 1, j: s.pair.1 + 1, hs: s.hs_norm })
            .collect();
        let edges = graph.edges.iter().map(|&(i, j)| (i + 1, j + 1)).collect();
        let tuning = serde_json::to_value(&graph.tuning)
            .map_err(|e| Error::parse(format!("tuning record: {e}")))?;
        Ok(GraphDoc { p: graph.p, scores, threshold: graph.threshold, edges, tuning })
    }

    pub fn score_map(&self) -> Result<Vec<((usize, usize), f64)>> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::with_capacity(self.scores.len());
        for s in &self.scores {
            if s.i == 0 || s.j == 0 || s.i >= s.j || s.j > self.p {
                return Err(Error::validation(format!("invalid scored pair ({}, {})", s.i, s.j)));
            }
            if !seen.insert((s.i, s.j)) {
                return Err(Error::validation(format!("duplicate scored pair ({}, {})", s.i, s.j)));
            }
            out.push(((s.i - 1, s.j - 1), s.hs));
        }
        Ok(out)
    }

    pub fn edge_set(&self) -> BTreeSet<(usize, usize)> {
        self.edges.iter().map(|&(i, j)| (i - 1, j - 1)).collect()
    }

    pub fn tuning_record(&self) -> Option<TuningRecord> {
        serde_json::from_value(self.tuning.clone()).ok()
    }
}

pub fn write_graph_json(path: &Path, graph: &ScoredGraph) -> Result<()> {
    let doc = GraphDoc::from_graph(graph)?;
    write_json(path, &doc)
}

pub fn read_graph_json(path: &Path) -> Result<GraphDoc> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::parse(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::parse(format!("serialize: {e}")))?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}

/// Edge CSV: i,j,score,is_edge for every scored pair.
pub fn write_edges_csv(path: &Path, graph: &ScoredGraph) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["i", "j", "score", "is_edge"]).map_err(csv_err)?;
    for s in &graph.scores {
        let is_edge = s.hs_norm > graph.threshold;
        w.write_record([
            (s.pair.0 + 1).to_string(),
            (s.pair.1 + 1).to_string(),
            format!("{}", s.hs_norm),
            (is_edge as u8).to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

// =============================================================================
// External score files
// =============================================================================

/// Read a per-pair score CSV (header i,j,score) as produced by other
/// estimators; every pair over 1..=p must appear exactly once.
pub fn read_scores_csv(path: &Path, p_hint: Option<usize>) -> Result<Vec<((usize, usize), f64)>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut map: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut max_node = 0;
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() < 3 {
            return Err(Error::parse("score rows need three fields".to_string()));
        }
        let i: usize = rec[0].parse().map_err(|_| Error::parse(format!("bad index '{}'", &rec[0])))?;
        let j: usize = rec[1].parse().map_err(|_| Error::parse(format!("bad index '{}'", &rec[1])))?;
        let s: f64 = rec[2].parse().map_err(|_| Error::parse(format!("bad score '{}'", &rec[2])))?;
        if i == 0 || j == 0 || i == j {
            return Err(Error::validation(format!("invalid pair ({i}, {j})")));
        }
        let key = ((i - 1).min(j - 1), (i - 1).max(j - 1));
        if map.insert(key, s).is_some() {
            return Err(Error::validation(format!("duplicate pair ({i}, {j})")));
        }
        max_node = max_node.max(i).max(j);
    }
    let p = p_hint.unwrap_or(max_node);
    for i in 0..p {
        for j in (i + 1)..p {
            if !map.contains_key(&(i, j)) {
                return Err(Error::validation(format!(
                    "score file is missing pair ({}, {})",
                    i + 1,
                    j + 1
                )));
            }
        }
    }
    Ok(map.into_iter().collect())
}

// =============================================================================
// ROC, reports, diffs
// =============================================================================

pub fn write_roc_csv(path: &Path, points: &[(f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["fpr", "tpr"]).map_err(csv_err)?;
    for (fpr, tpr) in points {
        w.write_record([format!("{fpr}"), format!("{tpr}")]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Report CSV: one row per replicate.
pub fn write_report_csv(path: &Path, report: &ExperimentReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["model", "n", "grid_mode", "replicate", "auc"]).map_err(csv_err)?;
    for r in &report.replicates {
        w.write_record([
            report.model.clone(),
            report.n.to_string(),
            report.grid_mode.clone(),
            r.replicate.to_string(),
            r.auc.map_or("".to_string(), |a| format!("{a}")),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Edge-difference CSV with a status column: a_only, b_only, or common.
pub fn write_diff_csv(path: &Path, diff: &GraphDiff) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["i", "j", "status"]).map_err(csv_err)?;
    for ((i, j), status) in diff
        .only_a
        .iter()
        .map(|e| (*e, "a_only"))
        .chain(diff.only_b.iter().map(|e| (*e, "b_only")))
        .chain(diff.common.iter().map(|e| (*e, "common")))
    {
        w.write_record([i.to_string(), j.to_string(), status.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgen::{gen_model, GridMode, ModelId, ModelSpec};

    #[test]
    fn dataset_round_trips_exactly() {
        let spec = ModelSpec {
            model: ModelId::III,
            n: 6,
            grid_mode: GridMode::Unbalanced,
            m: 7,
            seed: 12,
        };
        let (ds, _) = gen_model(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        write_dataset_csv(&path, &ds).unwrap();
        let back = read_dataset_csv(&path).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn missing_node_is_named_in_the_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        std::fs::write(
            &path,
            "subject,node,time,value\n1,1,0.1,1.0\n1,1,0.2,2.0\n1,2,0.1,0.0\n1,2,0.2,0.5\n2,1,0.1,1.0\n2,1,0.2,2.0\n",
        )
        .unwrap();
        let err = read_dataset_csv(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("subject 2") && msg.contains("node 2"), "{msg}");
    }

    #[test]
    fn truth_round_trips() {
        let truth = crate::simgen::ground_truth(ModelId::II);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("truth.csv");
        write_truth_csv(&path, &truth).unwrap();
        let back = read_truth_csv(&path, Some(10)).unwrap();
        assert_eq!(truth.edges, back.edges);
    }

    #[test]
    fn score_file_must_cover_every_pair() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.csv");
        std::fs::write(&path, "i,j,score\n1,2,0.5\n1,3,0.25\n").unwrap();
        let err = read_scores_csv(&path, Some(3)).unwrap_err();
        assert!(err.to_string().contains("missing pair (2, 3)"));
        std::fs::write(&path, "i,j,score\n1,2,0.5\n1,3,0.25\n2,3,0.1\n").unwrap();
        let scores = read_scores_csv(&path, Some(3)).unwrap();
        assert_eq!(scores.len(), 3);
    }
}
