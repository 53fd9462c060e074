use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{build_answer_vocab, softmax, ReaderFeatures, ReaderInput, ReaderModel, READER_FEATURES};
use crate::corpus::{KnowledgeBase, Question};
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};
use crate::retrieval::RankedList;
use crate::supervision::vqa_accuracy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReaderTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Candidates read from the head of each list.
    pub k: usize,
    pub top_v: usize,
    pub seed: u64,
}

impl Default for ReaderTrainConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            batch_size: 32,
            adam: AdamConfig::with_lr(0.05),
            k: 5,
            top_v: super::DEFAULT_TOP_V,
            seed: 0,
        }
    }
}

/// Answer-set features with the normalized soft target.
#[derive(Debug, Clone, PartialEq)]
pub struct ReaderExample {
    pub question_id: String,
    pub features: Vec<ReaderFeatures>,
    pub target: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ReaderTrainOutcome {
    pub model: ReaderModel,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub examples: usize,
    /// Questions whose answer set scores zero against every annotation.
    pub skipped: usize,
}

/// Builds one example per question whose answer set contains an answer with
/// nonzero accuracy. Returns the examples and the number of skipped questions.
pub fn build_reader_examples(
    model: &ReaderModel,
    questions: &[Question],
    lists: &[RankedList],
    kb: &KnowledgeBase,
) -> Result<(Vec<ReaderExample>, usize)> {
    let by_id: HashMap<&str, &RankedList> = lists.iter().map(|l| (l.question_id.as_str(), l)).collect();
    let mut examples = Vec::new();
    let mut skipped = 0;
    for q in questions {
        let list = by_id.get(q.question_id.as_str()).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "no candidate list for training question {}",
                q.question_id
            ))
        })?;
        let ReaderInput { answers, features } = model.input(q, list, kb)?;
        let acc: Vec<f64> = answers
            .iter()
            .map(|&a| vqa_accuracy(model.vocab.entry(a), &q.answers))
            .collect();
        let z: f64 = acc.iter().sum();
        if z <= 0.0 {
            skipped += 1;
            continue;
        }
        examples.push(ReaderExample {
            question_id: q.question_id.clone(),
            features,
            target: acc.into_iter().map(|x| x / z).collect(),
        });
    }
    Ok((examples, skipped))
}

fn example_loss_and_grad(weights: &ReaderFeatures, ex: &ReaderExample, grad: &mut ReaderFeatures) -> f64 {
    let logits: Vec<f64> = ex
        .features
        .iter()
        .map(|f| f.iter().zip(weights).map(|(x, w)| x * w).sum())
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_z = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    let p = softmax(&logits);
    let mut loss = 0.0;
    for ((f, &t), (&l, &pa)) in ex.features.iter().zip(&ex.target).zip(logits.iter().zip(&p)) {
        if t > 0.0 {
            loss -= t * (l - log_z);
        }
        for (g, x) in grad.iter_mut().zip(f) {
            *g += (pa - t) * x;
        }
    }
    loss
}

/// Mean soft-target cross-entropy over `examples`.
pub fn reader_loss(weights: &ReaderFeatures, examples: &[ReaderExample]) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    let mut sink = [0.0; READER_FEATURES];
    let total: f64 = examples
        .iter()
        .map(|ex| example_loss_and_grad(weights, ex, &mut sink))
        .sum();
    total / examples.len() as f64
}

/// Trains the reader on candidate lists from one source. The vocabulary is
/// built from `questions`; weights start at zero and follow Adam on
/// minibatches drawn with replacement.
pub fn train_reader(
    questions: &[Question],
    lists: &[RankedList],
    kb: &KnowledgeBase,
    config: &ReaderTrainConfig,
) -> Result<ReaderTrainOutcome> {
    if config.batch_size == 0 {
        return Err(Error::InvalidConfig("reader batch_size must be >= 1".into()));
    }
    let vocab = build_answer_vocab(questions)?;
    let mut model = ReaderModel::new(vocab, config.k, config.top_v);
    let (examples, skipped) = build_reader_examples(&model, questions, lists, kb)?;
    if examples.is_empty() {
        return Err(Error::Empty("no trainable reader questions".into()));
    }
    let initial_loss = reader_loss(&model.weights, &examples);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x4ead));
    let mut adam = Adam::new(READER_FEATURES, config.adam);
    for _ in 0..config.steps {
        let mut grad = [0.0; READER_FEATURES];
        for _ in 0..config.batch_size {
            let ex = &examples[rng.random_range(0..examples.len())];
            example_loss_and_grad(&model.weights, ex, &mut grad);
        }
        grad.iter_mut().for_each(|g| *g /= config.batch_size as f64);
        adam.step(&mut model.weights, &grad);
    }
    let final_loss = reader_loss(&model.weights, &examples);
    Ok(ReaderTrainOutcome {
        model,
        initial_loss,
        final_loss,
        examples: examples.len(),
        skipped,
    })
}
