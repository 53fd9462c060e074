//! Extractive log-linear answer reader.
//!
//! The reader consumes the question and the top `k` candidates of a ranked
//! list and scores every answer in its vocabulary that either occurs in one
//! of those candidates or is among the `top_v` most frequent training
//! answers. Scores are `w · f(a)` over seven features; with no candidates
//! only the prior and question-text features vary, which is the
//! no-knowledge path.

mod train;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{contains_normalized, normalize_answer, Candidate, KnowledgeBase, Question};
use crate::error::{Error, Result};
use crate::io;
use crate::retrieval::{score_desc, RankedList};

pub use train::{
    build_reader_examples, reader_loss, train_reader, ReaderExample, ReaderTrainConfig, ReaderTrainOutcome,
};

pub const READER_FEATURES: usize = 7;
pub const DEFAULT_TOP_V: usize = 100;

pub type ReaderFeatures = [f64; READER_FEATURES];

/// Normalized training answers with `ln(1 + count)` priors, sorted lexicographically.
#[derive(Debug, Clone, PartialEq)]
pub struct AnswerVocab {
    entries: Vec<String>,
    prior_logfreq: Vec<f64>,
    index: HashMap<String, usize>,
    max_tokens: usize,
    /// Indices by prior descending, ties by entry.
    by_prior: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    entries: Vec<String>,
    prior_logfreq: Vec<f64>,
}

impl AnswerVocab {
    pub fn from_entries(entries: Vec<String>, prior_logfreq: Vec<f64>) -> Result<Self> {
        if entries.len() != prior_logfreq.len() {
            return Err(Error::LengthMismatch {
                left: entries.len(),
                right: prior_logfreq.len(),
            });
        }
        let mut index = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if e.is_empty() || normalize_answer(e) != *e {
                return Err(Error::InvalidArgument(format!(
                    "vocab entry {e:?} is empty or not normalized"
                )));
            }
            if index.insert(e.clone(), i).is_some() {
                return Err(Error::DuplicateId {
                    kind: "vocab entry",
                    id: e.clone(),
                });
            }
        }
        if prior_logfreq.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument("vocab priors must be finite".into()));
        }
        let max_tokens = entries.iter().map(|e| e.split(' ').count()).max().unwrap_or(0);
        let mut by_prior: Vec<usize> = (0..entries.len()).collect();
        by_prior.sort_by(|&a, &b| {
            score_desc(prior_logfreq[a], prior_logfreq[b]).then_with(|| entries[a].cmp(&entries[b]))
        });
        Ok(Self {
            entries,
            prior_logfreq,
            index,
            max_tokens,
            by_prior,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn entry(&self, i: usize) -> &str {
        &self.entries[i]
    }

    pub fn index_of(&self, answer: &str) -> Option<usize> {
        self.index.get(answer).copied()
    }

    /// Prior of a normalized answer, 0 when it is not in the vocabulary.
    pub fn prior(&self, answer: &str) -> f64 {
        self.index_of(answer).map_or(0.0, |i| self.prior_logfreq[i])
    }

    pub fn prior_at(&self, i: usize) -> f64 {
        self.prior_logfreq[i]
    }

    /// Vocabulary indices occurring in a normalized text on token boundaries.
    pub fn occurrences(&self, normalized_text: &str) -> Vec<usize> {
        if normalized_text.is_empty() || self.max_tokens == 0 {
            return Vec::new();
        }
        let mut starts = vec![0];
        let mut ends = Vec::new();
        for (i, b) in normalized_text.bytes().enumerate() {
            if b == b' ' {
                ends.push(i);
                starts.push(i + 1);
            }
        }
        ends.push(normalized_text.len());
        let mut found = Vec::new();
        for s in 0..starts.len() {
            for n in 1..=self.max_tokens.min(starts.len() - s) {
                let gram = &normalized_text[starts[s]..ends[s + n - 1]];
                if let Some(&i) = self.index.get(gram) {
                    found.push(i);
                }
            }
        }
        found.sort_unstable();
        found.dedup();
        found
    }

    fn to_file(&self) -> VocabFile {
        VocabFile {
            entries: self.entries.clone(),
            prior_logfreq: self.prior_logfreq.clone(),
        }
    }
}

/// Vocabulary of every normalized training annotation; prior = ln(1 + count).
pub fn build_answer_vocab(questions: &[Question]) -> Result<AnswerVocab> {
    if questions.is_empty() {
        return Err(Error::Empty("answer vocabulary needs training questions".into()));
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for q in questions {
        for a in &q.answers {
            let n = normalize_answer(a);
            if !n.is_empty() {
                *counts.entry(n).or_default() += 1;
            }
        }
    }
    if counts.is_empty() {
        return Err(Error::Empty("no non-empty training answers".into()));
    }
    let (entries, priors) = counts
        .into_iter()
        .map(|(e, c)| (e, (1.0 + c as f64).ln()))
        .unzip();
    AnswerVocab::from_entries(entries, priors)
}

/// One candidate as seen by the reader: normalized knowledge text and list score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReadCandidate<'a> {
    pub text: &'a str,
    pub score: f64,
}

/// Min-max normalized scores; an all-equal list maps to 1.
fn normalized_scores(candidates: &[ReadCandidate]) -> Vec<f64> {
    let (lo, hi) = candidates
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
            (lo.min(c.score), hi.max(c.score))
        });
    candidates
        .iter()
        .map(|c| if hi > lo { (c.score - lo) / (hi - lo) } else { 1.0 })
        .collect()
}

fn rank_discount(rank: usize) -> f64 {
    1.0 / ((rank + 2) as f64).log2()
}

/// Features of answer `answer` (normalized) given the question and the read candidates:
///
/// 1. 1 if the answer occurs in any candidate
/// 2. number of candidates containing it / number of candidates
/// 3. Σ over 1-based ranks r of containing candidates of 1/log2(r + 2)
/// 4. max min-max-normalized score among containing candidates (0 if none)
/// 5. vocabulary prior
/// 6. 1 if the answer occurs in the question text
/// 7. constant 1
pub fn reader_features(
    vocab: &AnswerVocab,
    question: &Question,
    candidates: &[ReadCandidate],
    answer: &str,
) -> ReaderFeatures {
    let norm = normalized_scores(candidates);
    let containing: Vec<usize> = candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| contains_normalized(c.text, answer))
        .map(|(i, _)| i)
        .collect();
    let qtext = normalize_answer(&question.text);
    assemble(
        &containing,
        candidates.len(),
        &norm,
        vocab.prior(answer),
        contains_normalized(&qtext, answer),
    )
}

fn assemble(containing: &[usize], k: usize, norm: &[f64], prior: f64, in_question: bool) -> ReaderFeatures {
    let any = !containing.is_empty();
    [
        if any { 1.0 } else { 0.0 },
        if k > 0 {
            containing.len() as f64 / k as f64
        } else {
            0.0
        },
        containing.iter().map(|&i| rank_discount(i + 1)).sum(),
        containing.iter().map(|&i| norm[i]).fold(0.0, f64::max),
        prior,
        if in_question { 1.0 } else { 0.0 },
        1.0,
    ]
}

/// Answer set and features for one (question, candidates) input, computed
/// through vocabulary n-gram lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct ReaderInput {
    /// Vocabulary indices, ascending (= lexicographic).
    pub answers: Vec<usize>,
    pub features: Vec<ReaderFeatures>,
}

impl ReaderInput {
    pub fn build(
        vocab: &AnswerVocab,
        top_v: usize,
        question: &Question,
        candidates: &[ReadCandidate],
    ) -> Self {
        let occ: Vec<Vec<usize>> = candidates.iter().map(|c| vocab.occurrences(c.text)).collect();
        let q_occ: HashSet<usize> = vocab
            .occurrences(&normalize_answer(&question.text))
            .into_iter()
            .collect();
        let mut containing: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (ci, found) in occ.iter().enumerate() {
            for &a in found {
                containing.entry(a).or_default().push(ci);
            }
        }
        for &a in vocab.by_prior.iter().take(top_v) {
            containing.entry(a).or_default();
        }
        let norm = normalized_scores(candidates);
        let (answers, features) = containing
            .into_iter()
            .map(|(a, cs)| {
                let f = assemble(
                    &cs,
                    candidates.len(),
                    &norm,
                    vocab.prior_at(a),
                    q_occ.contains(&a),
                );
                (a, f)
            })
            .unzip();
        ReaderInput { answers, features }
    }

    pub fn logits(&self, weights: &ReaderFeatures) -> Vec<f64> {
        self.features
            .iter()
            .map(|f| f.iter().zip(weights).map(|(x, w)| x * w).sum())
            .collect()
    }
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReaderModel {
    pub weights: ReaderFeatures,
    pub vocab: AnswerVocab,
    /// Candidates consumed from the head of each list.
    pub k: usize,
    pub top_v: usize,
}

impl ReaderModel {
    pub fn new(vocab: AnswerVocab, k: usize, top_v: usize) -> Self {
        Self {
            weights: [0.0; READER_FEATURES],
            vocab,
            k,
            top_v,
        }
    }

    pub fn is_untrained(&self) -> bool {
        self.weights.iter().all(|&w| w == 0.0)
    }

    /// Top-`k` candidates of a list with their normalized texts.
    pub fn read<'a>(&self, list: &RankedList, kb: &'a KnowledgeBase) -> Result<Vec<ReadCandidate<'a>>> {
        list.items
            .iter()
            .take(self.k)
            .map(|(cid, score)| {
                Ok(ReadCandidate {
                    text: kb.text(cid)?,
                    score: *score,
                })
            })
            .collect()
    }

    pub fn input(&self, question: &Question, list: &RankedList, kb: &KnowledgeBase) -> Result<ReaderInput> {
        if self.vocab.is_empty() {
            return Err(Error::Empty("reader vocabulary".into()));
        }
        Ok(ReaderInput::build(
            &self.vocab,
            self.top_v,
            question,
            &self.read(list, kb)?,
        ))
    }

    fn best(&self, input: &ReaderInput) -> Result<(usize, Vec<f64>)> {
        if input.answers.is_empty() {
            return Err(Error::Empty("reader answer set".into()));
        }
        let logits = input.logits(&self.weights);
        // answers are ascending, so strict > keeps the lexicographically first on ties
        let mut best = 0;
        for i in 1..logits.len() {
            if logits[i] > logits[best] {
                best = i;
            }
        }
        Ok((best, logits))
    }

    pub fn predict(&self, question: &Question, list: &RankedList, kb: &KnowledgeBase) -> Result<String> {
        let input = self.input(question, list, kb)?;
        let (best, _) = self.best(&input)?;
        Ok(self.vocab.entry(input.answers[best]).to_owned())
    }

    /// Prediction from already-read candidates (normalized texts, rank order).
    /// Candidates past `k` are ignored.
    pub fn predict_read(&self, question: &Question, candidates: &[ReadCandidate]) -> Result<&str> {
        let n = candidates.len().min(self.k);
        let input = ReaderInput::build(&self.vocab, self.top_v, question, &candidates[..n]);
        let (best, _) = self.best(&input)?;
        Ok(self.vocab.entry(input.answers[best]))
    }

    /// Prediction and its softmax probability over the answer set.
    pub fn predict_with_probability(
        &self,
        question: &Question,
        list: &RankedList,
        kb: &KnowledgeBase,
    ) -> Result<(String, f64)> {
        let input = self.input(question, list, kb)?;
        let (best, logits) = self.best(&input)?;
        let p = softmax(&logits)[best];
        Ok((self.vocab.entry(input.answers[best]).to_owned(), p))
    }

    /// Probability of `answer` for this input; 0 when it is outside the answer set.
    pub fn answer_probability(
        &self,
        question: &Question,
        list: &RankedList,
        kb: &KnowledgeBase,
        answer: &str,
    ) -> Result<f64> {
        let input = self.input(question, list, kb)?;
        let Some(target) = self.vocab.index_of(answer) else {
            return Ok(0.0);
        };
        match input.answers.binary_search(&target) {
            Ok(pos) => Ok(softmax(&input.logits(&self.weights))[pos]),
            Err(_) => Ok(0.0),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ReaderFile<C> {
    weights: Vec<f64>,
    k: usize,
    top_v: usize,
    vocab: VocabFile,
    config: C,
}

pub fn save_reader<C: Serialize>(model: &ReaderModel, config: &C, path: &Path) -> Result<()> {
    io::write_json(
        path,
        &ReaderFile {
            weights: model.weights.to_vec(),
            k: model.k,
            top_v: model.top_v,
            vocab: model.vocab.to_file(),
            config,
        },
    )
}

pub fn load_reader(path: &Path) -> Result<ReaderModel> {
    let f: ReaderFile<serde_json::Value> = io::read_json(path)?;
    let weights: ReaderFeatures = f.weights.as_slice().try_into().map_err(|_| {
        Error::InvalidArgument(format!(
            "reader has {} weights, expected {READER_FEATURES}",
            f.weights.len()
        ))
    })?;
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::InvalidArgument("reader weights must be finite".into()));
    }
    Ok(ReaderModel {
        weights,
        vocab: AnswerVocab::from_entries(f.vocab.entries, f.vocab.prior_logfreq)?,
        k: f.k,
        top_v: f.top_v,
    })
}

/// Replaces the last `m` items of `list` with the first `m` external
/// candidates. Injected scores continue below the preceding item, 1e-6 apart.
pub fn inject_candidates(list: &RankedList, external: &[Candidate], m: usize) -> Result<RankedList> {
    if m > list.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot replace {m} candidates of a {}-item list",
            list.len()
        )));
    }
    if m > external.len() {
        return Err(Error::InvalidArgument(format!(
            "need {m} external candidates, got {}",
            external.len()
        )));
    }
    let keep = list.len() - m;
    let mut items: Vec<(String, f64)> = list.items[..keep].to_vec();
    let mut score = match items.last() {
        Some((_, s)) => *s,
        None => list.items.first().map_or(0.0, |(_, s)| *s) + 1e-6,
    };
    for c in &external[..m] {
        if items.iter().any(|(id, _)| *id == c.candidate_id) {
            return Err(Error::DuplicateId {
                kind: "candidate in list",
                id: c.candidate_id.clone(),
            });
        }
        score -= 1e-6;
        items.push((c.candidate_id.clone(), score));
    }
    Ok(RankedList::new(list.question_id.clone(), items))
}
