//! Patch-based dense retrieval: sliding-window grid, exact inner-product
//! top-k, and max-score aggregation of per-patch result lists.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{dot, patch_id, EmbeddingTable, Question};
use crate::error::{Error, Result};
use crate::io;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchRect {
    pub patch_index: usize,
    pub x: u32,
    pub y: u32,
    pub kernel: u32,
}

fn axis_offsets(extent: u32, kernel: u32, stride: u32) -> Vec<u32> {
    let last = extent - kernel;
    let mut out: Vec<u32> = (0..=last).step_by(stride as usize).collect();
    if last % stride != 0 {
        out.push(last);
    }
    out
}

/// Sliding-window patches in row-major order. When the stride does not
/// divide `extent - kernel`, a final window flush with the far edge is added.
pub fn patch_grid(width: u32, height: u32, kernel: u32, stride: u32) -> Result<Vec<PatchRect>> {
    if stride == 0 || kernel == 0 {
        return Err(Error::InvalidArgument(
            "kernel and stride must be positive".into(),
        ));
    }
    if kernel > width.min(height) {
        return Err(Error::InvalidArgument(format!(
            "kernel {kernel} exceeds image extent {width}x{height}"
        )));
    }
    let xs = axis_offsets(width, kernel, stride);
    let ys = axis_offsets(height, kernel, stride);
    let mut out = Vec::with_capacity(xs.len() * ys.len());
    for &y in &ys {
        for &x in &xs {
            out.push(PatchRect {
                patch_index: out.len(),
                x,
                y,
                kernel,
            });
        }
    }
    Ok(out)
}

/// Ordered (candidate id, score) pairs for one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub question_id: String,
    pub items: Vec<(String, f64)>,
}

impl RankedList {
    pub fn new(question_id: impl Into<String>, items: Vec<(String, f64)>) -> Self {
        Self {
            question_id: question_id.into(),
            items,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> + '_ {
        self.items.iter().map(|(id, _)| id.as_str())
    }

    /// First `k` items as a new list.
    pub fn truncated(&self, k: usize) -> RankedList {
        RankedList::new(
            self.question_id.clone(),
            self.items.iter().take(k).cloned().collect(),
        )
    }

    /// Checks non-increasing scores, finite values and unique ids.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for (i, (id, s)) in self.items.iter().enumerate() {
            if !s.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "{}: non-finite score for {id}",
                    self.question_id
                )));
            }
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId {
                    kind: "candidate in list",
                    id: id.clone(),
                });
            }
            if i > 0 && self.items[i - 1].1 < *s {
                return Err(Error::InvalidArgument(format!(
                    "{}: scores increase at position {i}",
                    self.question_id
                )));
            }
        }
        Ok(())
    }
}

/// Orders scores high to low. A total order in which `-0.0 == 0.0`, so equal
/// scores always fall through to the caller's tie-break.
pub fn score_desc(a: f64, b: f64) -> Ordering {
    let canon = |x: f64| if x == 0.0 { 0.0 } else { x };
    canon(b).total_cmp(&canon(a))
}

/// Descending score, then ascending id.
pub fn rank_order(a: &(String, f64), b: &(String, f64)) -> Ordering {
    score_desc(a.1, b.1).then_with(|| a.0.cmp(&b.0))
}

fn check_dim(query: &[f32], table: &EmbeddingTable) -> Result<()> {
    if query.len() != table.dim() {
        return Err(Error::DimMismatch {
            id: "<query>".into(),
            expected: table.dim(),
            found: query.len(),
        });
    }
    Ok(())
}

/// Exact top-k by inner product, sorted by score descending with ties broken
/// by ascending id.
pub fn top_k(query: &[f32], table: &EmbeddingTable, k: usize) -> Result<Vec<(String, f64)>> {
    check_dim(query, table)?;
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let mut scored: Vec<(usize, f64)> = (0..table.len()).map(|i| (i, dot(query, table.row(i)))).collect();
    let cmp = |a: &(usize, f64), b: &(usize, f64)| {
        score_desc(a.1, b.1).then_with(|| table.id(a.0).cmp(table.id(b.0)))
    };
    if scored.len() > k {
        scored.select_nth_unstable_by(k - 1, cmp);
        scored.truncate(k);
    }
    scored.sort_unstable_by(cmp);
    Ok(scored
        .into_iter()
        .map(|(i, s)| (table.id(i).to_owned(), s))
        .collect())
}

/// Runs `top_k` per patch and merges the lists, keeping each candidate's
/// highest score, then truncates to `aggregate_k`.
pub fn retrieve_and_aggregate(
    question_id: &str,
    patches: &[&[f32]],
    table: &EmbeddingTable,
    per_patch_k: usize,
    aggregate_k: usize,
) -> Result<RankedList> {
    if patches.is_empty() {
        return Err(Error::Empty(format!("no patch vectors for {question_id}")));
    }
    if aggregate_k == 0 {
        return Err(Error::InvalidArgument("aggregate k must be at least 1".into()));
    }
    let mut best: HashMap<String, f64> = HashMap::new();
    for patch in patches {
        for (id, score) in top_k(patch, table, per_patch_k)? {
            best.entry(id).and_modify(|s| *s = s.max(score)).or_insert(score);
        }
    }
    let mut items: Vec<(String, f64)> = best.into_iter().collect();
    items.sort_unstable_by(rank_order);
    items.truncate(aggregate_k);
    Ok(RankedList::new(question_id, items))
}

/// Patch vectors `<image_id>#0`, `#1`, ... up to the first missing index.
pub fn question_patches<'a>(table: &'a EmbeddingTable, image_id: &str) -> Vec<&'a [f32]> {
    (0..).map_while(|i| table.get(&patch_id(image_id, i))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalParams {
    pub per_patch_k: usize,
    pub aggregate_k: usize,
}

impl Default for RetrievalParams {
    fn default() -> Self {
        Self {
            per_patch_k: 20,
            aggregate_k: 20,
        }
    }
}

/// Retrieval for every question, in question order. Per-question work runs on
/// the current rayon pool.
pub fn retrieve_all(
    questions: &[Question],
    patches: &EmbeddingTable,
    candidate_texts: &EmbeddingTable,
    params: RetrievalParams,
) -> Result<Vec<RankedList>> {
    questions
        .par_iter()
        .map(|q| {
            let vecs = question_patches(patches, &q.image_id);
            if vecs.is_empty() {
                return Err(Error::MissingEmbedding(patch_id(&q.image_id, 0)));
            }
            retrieve_and_aggregate(
                &q.question_id,
                &vecs,
                candidate_texts,
                params.per_patch_k,
                params.aggregate_k,
            )
        })
        .collect()
}

pub fn write_ranked_lists(lists: &[RankedList], path: &Path) -> Result<()> {
    io::write_jsonl(path, lists)
}

pub fn load_ranked_lists(path: &Path) -> Result<Vec<RankedList>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (line, list) in io::read_jsonl::<RankedList>(path)? {
        list.validate().map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        if !seen.insert(list.question_id.clone()) {
            return Err(Error::DuplicateId {
                kind: "ranked list for",
                id: list.question_id,
            });
        }
        out.push(list);
    }
    Ok(out)
}
