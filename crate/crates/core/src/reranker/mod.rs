//! Multi-modal cross-item reranker.
//!
//! Each (question, candidate) pair is turned into a fixed vector of
//! interaction features between both modalities of both sides, scored by a
//! small tanh network, and trained with the pairwise logistic loss on
//! distantly supervised labels.

mod loss;
mod model;
mod train;

use rayon::prelude::*;

use crate::corpus::{EmbeddingTable, Question};
use crate::error::{Error, Result};
use crate::retrieval::{question_patches, rank_order, RankedList};
use crate::supervision::LabelSet;

pub use loss::{pairwise_grad, pairwise_loss, pairwise_loss_and_grad, sigmoid, softplus};
pub use model::{
    build_features, load_reranker, save_reranker, CandidateContext, Features, QuestionContext,
    RerankerCheckpoint, RerankerModel, DEFAULT_HIDDEN_WIDTH, FEATURE_DIM,
};
pub use train::{batch_loss_and_grad, dev_hits, train_reranker, RerankerTrainConfig, TrainOutcome};

/// The four embedding tables the pipeline consumes.
#[derive(Debug, Clone)]
pub struct EmbeddingSet {
    /// Patch vectors keyed `<image_id>#<patch_index>`.
    pub question_patches: EmbeddingTable,
    /// Keyed by question_id.
    pub question_texts: EmbeddingTable,
    /// Keyed by candidate_id; text-only candidates are absent.
    pub candidate_images: EmbeddingTable,
    /// Keyed by candidate_id.
    pub candidate_texts: EmbeddingTable,
}

fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

impl EmbeddingSet {
    pub fn validate(&self) -> Result<()> {
        let dim = self.candidate_texts.dim();
        for (name, t) in [
            ("question patches", &self.question_patches),
            ("question texts", &self.question_texts),
            ("candidate images", &self.candidate_images),
        ] {
            if t.dim() != dim {
                return Err(Error::InvalidArgument(format!(
                    "{name} table has dim {}, candidate texts have {dim}",
                    t.dim()
                )));
            }
        }
        Ok(())
    }

    pub fn question_context(&self, q: &Question) -> Result<QuestionContext> {
        let patches: Vec<Vec<f64>> = question_patches(&self.question_patches, &q.image_id)
            .into_iter()
            .map(widen)
            .collect();
        if patches.is_empty() {
            return Err(Error::MissingEmbedding(format!("{}#0", q.image_id)));
        }
        let qtext = self
            .question_texts
            .get(&q.question_id)
            .ok_or_else(|| Error::MissingEmbedding(q.question_id.clone()))?;
        QuestionContext::new(patches, widen(qtext))
    }

    pub fn candidate_context(&self, candidate_id: &str) -> Result<CandidateContext> {
        let text = self
            .candidate_texts
            .get(candidate_id)
            .ok_or_else(|| Error::MissingEmbedding(candidate_id.to_owned()))?;
        Ok(CandidateContext {
            cimg_vec: self.candidate_images.get(candidate_id).map(widen),
            ctext_vec: widen(text),
        })
    }

    /// Features for every item of a list, using the list scores as retrieval scores.
    pub fn list_features(&self, q: &Question, list: &RankedList) -> Result<Vec<Features>> {
        let qc = self.question_context(q)?;
        list.items
            .iter()
            .map(|(cid, s)| build_features(&qc, &self.candidate_context(cid)?, *s))
            .collect()
    }
}

/// Reorders `list` by model score (descending, ties by ascending id). Output
/// scores are the model scores.
pub fn rerank(
    model: &RerankerModel,
    q: &QuestionContext,
    list: &RankedList,
    candidates: &dyn Fn(&str) -> Result<CandidateContext>,
) -> Result<RankedList> {
    let mut items = list
        .items
        .iter()
        .map(|(cid, s)| {
            let f = build_features(q, &candidates(cid)?, *s)?;
            Ok((cid.clone(), model.score(&f)?))
        })
        .collect::<Result<Vec<_>>>()?;
    items.sort_by(rank_order);
    Ok(RankedList::new(list.question_id.clone(), items))
}

/// Reranks each list against its question. Lists and questions are matched by id.
pub fn rerank_all(
    model: &RerankerModel,
    questions: &[Question],
    lists: &[RankedList],
    embeddings: &EmbeddingSet,
) -> Result<Vec<RankedList>> {
    let by_id: std::collections::HashMap<&str, &Question> =
        questions.iter().map(|q| (q.question_id.as_str(), q)).collect();
    lists
        .par_iter()
        .map(|list| {
            let q = by_id
                .get(list.question_id.as_str())
                .ok_or_else(|| Error::InvalidArgument(format!("unknown question {}", list.question_id)))?;
            let qc = embeddings.question_context(q)?;
            rerank(model, &qc, list, &|cid| embeddings.candidate_context(cid))
        })
        .collect()
}

/// One question's candidates with precomputed features and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct RerankExample {
    pub question_id: String,
    pub candidate_ids: Vec<String>,
    pub features: Vec<Features>,
    pub labels: Vec<f64>,
}

/// Builds training/dev examples from retrieval lists. Every list's question
/// must have at least one label entry.
pub fn build_examples(
    questions: &[Question],
    lists: &[RankedList],
    labels: &LabelSet,
    embeddings: &EmbeddingSet,
) -> Result<Vec<RerankExample>> {
    let by_id: std::collections::HashMap<&str, &Question> =
        questions.iter().map(|q| (q.question_id.as_str(), q)).collect();
    lists
        .par_iter()
        .map(|list| {
            let q = by_id
                .get(list.question_id.as_str())
                .ok_or_else(|| Error::InvalidArgument(format!("unknown question {}", list.question_id)))?;
            if !labels.has_question(&q.question_id) {
                return Err(Error::MissingLabels(q.question_id.clone()));
            }
            Ok(RerankExample {
                question_id: q.question_id.clone(),
                candidate_ids: list.ids().map(str::to_owned).collect(),
                features: embeddings.list_features(q, list)?,
                labels: list.ids().map(|c| labels.get(&q.question_id, c)).collect(),
            })
        })
        .collect()
}
