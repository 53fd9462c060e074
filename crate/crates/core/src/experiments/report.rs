use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::CandidateSource;
use crate::error::Result;

pub const REPORT_VERSION: u32 = 1;

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Mean VQA accuracy of a reader trained on `train` lists and read on `test` lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub train: CandidateSource,
    pub test: CandidateSource,
    pub per_seed: Vec<f64>,
    pub mean: f64,
    pub median: f64,
}

impl CellReport {
    pub(super) fn new(train: CandidateSource, test: CandidateSource) -> Self {
        Self {
            train,
            test,
            per_seed: Vec::new(),
            mean: 0.0,
            median: 0.0,
        }
    }

    pub(super) fn finish(&mut self) {
        self.mean = mean(&self.per_seed);
        self.median = median(&self.per_seed);
    }
}

/// Hits@k of one source's test lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitsRow {
    pub source: CandidateSource,
    pub k: usize,
    pub per_seed: Vec<f64>,
    pub mean: f64,
}

impl HitsRow {
    pub(super) fn new(source: CandidateSource, k: usize, per_seed: Vec<f64>) -> Self {
        let mean = mean(&per_seed);
        Self {
            source,
            k,
            per_seed,
            mean,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SeedDiagnostics {
    pub seed: u64,
    pub reranker_best_step: Option<usize>,
    pub reranker_dev_hits: Option<f64>,
    /// Hits@k of reranked lists on the reader's train and test questions.
    pub reranked_train_hits: Option<f64>,
    pub reranked_test_hits: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub report_version: u32,
    pub kind: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub cells: Vec<CellReport>,
    pub hits: Vec<HitsRow>,
    pub diagnostics: Vec<SeedDiagnostics>,
}

impl Report {
    pub(super) fn new(
        kind: &str,
        config: serde_json::Value,
        seeds: Vec<u64>,
        cells: Vec<CellReport>,
        hits: Vec<HitsRow>,
        diagnostics: Vec<SeedDiagnostics>,
    ) -> Self {
        Self {
            report_version: REPORT_VERSION,
            kind: kind.to_owned(),
            config,
            seeds,
            cells,
            hits,
            diagnostics,
        }
    }

    pub fn cell(&self, train: CandidateSource, test: CandidateSource) -> Option<&CellReport> {
        self.cells.iter().find(|c| c.train == train && c.test == test)
    }

    pub fn hits_at(&self, source: CandidateSource, k: usize) -> Option<&HitsRow> {
        self.hits.iter().find(|h| h.source == source && h.k == k)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Plain-text rendering with one row per cell and one per Hits@k entry.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let seeds: Vec<String> = self.seeds.iter().map(|s| format!("s{s}")).collect();
        let _ = writeln!(
            out,
            "{:<18} {:<18} {:>7} {:>7}  {}",
            "train",
            "test",
            "mean",
            "median",
            seeds.join(" ")
        );
        for c in &self.cells {
            let per: Vec<String> = c.per_seed.iter().map(|v| format!("{v:.3}")).collect();
            let _ = writeln!(
                out,
                "{:<18} {:<18} {:>7.4} {:>7.4}  {}",
                c.train.name(),
                c.test.name(),
                c.mean,
                c.median,
                per.join(" ")
            );
        }
        if !self.hits.is_empty() {
            let _ = writeln!(
                out,
                "\n{:<18} {:>5} {:>7}  {}",
                "source",
                "k",
                "hits",
                seeds.join(" ")
            );
            for h in &self.hits {
                let per: Vec<String> = h.per_seed.iter().map(|v| format!("{v:.3}")).collect();
                let _ = writeln!(
                    out,
                    "{:<18} {:>5} {:>7.4}  {}",
                    h.source.name(),
                    h.k,
                    h.mean,
                    per.join(" ")
                );
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn table_lists_every_cell() {
        let mut c = CellReport::new(CandidateSource::Retrieval, CandidateSource::Oracle);
        c.per_seed = vec![0.5, 0.7];
        c.finish();
        let r = Report::new(
            "discrepancy",
            serde_json::json!({}),
            vec![0, 1],
            vec![c],
            vec![HitsRow::new(CandidateSource::Oracle, 5, vec![1.0, 0.5])],
            vec![],
        );
        let t = r.to_table();
        assert!(t.contains("retrieval"), "{t}");
        assert!(t.contains("0.6000"), "{t}");
        assert!(t.contains("0.7500"), "{t}");
        let back: Report = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
