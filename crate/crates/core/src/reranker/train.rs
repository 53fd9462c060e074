//! Pairwise training loop with candidate sampling and Hits@k checkpointing.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::pairwise_loss_and_grad;
use super::model::RerankerModel;
use super::RerankExample;
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};
use crate::retrieval::score_desc;
use crate::supervision::POSITIVE_THRESHOLD;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankerTrainConfig {
    pub steps: usize,
    /// Questions per step.
    pub batch_size: usize,
    /// Candidates sampled per question per step.
    pub sample_size: usize,
    pub adam: AdamConfig,
    pub eval_interval: usize,
    pub hits_k: usize,
    pub hidden_width: usize,
    pub seed: u64,
}

impl Default for RerankerTrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 8,
            sample_size: 20,
            adam: AdamConfig::default(),
            eval_interval: 100,
            hits_k: 5,
            hidden_width: super::DEFAULT_HIDDEN_WIDTH,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: RerankerModel,
    pub best_step: usize,
    pub best_dev_hits: f64,
    /// (step, dev Hits@k) at every evaluation.
    pub history: Vec<(usize, f64)>,
}

/// Mean pairwise loss over `batch` and its gradient w.r.t. all parameters.
/// Each entry selects an example and the candidate indices to score.
pub fn batch_loss_and_grad(
    model: &RerankerModel,
    examples: &[RerankExample],
    batch: &[(usize, Vec<usize>)],
) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; model.params().len()];
    let mut total = 0.0;
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (ex_idx, picks) in batch {
        let ex = &examples[*ex_idx];
        if picks.len() < 2 {
            continue;
        }
        scores.clear();
        labels.clear();
        for &i in picks {
            scores.push(model.score(&ex.features[i])?);
            labels.push(ex.labels[i]);
        }
        let (loss, g_scores) = pairwise_loss_and_grad(&labels, &scores)?;
        total += loss;
        for (&i, &g) in picks.iter().zip(&g_scores) {
            if g != 0.0 {
                model.accumulate_grad(&ex.features[i], g, &mut grad)?;
            }
        }
    }
    let n = batch.len().max(1) as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((total / n, grad))
}

/// Dev Hits@k of the model's own ordering (score desc, id asc).
pub fn dev_hits(model: &RerankerModel, dev: &[RerankExample], k: usize) -> Result<f64> {
    if dev.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for ex in dev {
        let mut order: Vec<(f64, &str, f64)> = ex
            .features
            .iter()
            .zip(&ex.candidate_ids)
            .zip(&ex.labels)
            .map(|((f, id), &l)| Ok((model.score(f)?, id.as_str(), l)))
            .collect::<Result<_>>()?;
        order.sort_by(|a, b| score_desc(a.0, b.0).then_with(|| a.1.cmp(b.1)));
        if order.iter().take(k).any(|(_, _, l)| *l >= POSITIVE_THRESHOLD) {
            hits += 1;
        }
    }
    Ok(hits as f64 / dev.len() as f64)
}

/// Trains from a seeded initialization. Each step draws `batch_size`
/// questions uniformly and, for each, `min(sample_size, len)` candidates
/// without replacement. The returned parameters are those with the best dev
/// Hits@k among the evaluations (initialization included; later wins ties).
pub fn train_reranker(
    train: &[RerankExample],
    dev: &[RerankExample],
    config: &RerankerTrainConfig,
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::Empty("reranker training set".into()));
    }
    if config.batch_size == 0 || config.sample_size < 2 || config.hits_k == 0 {
        return Err(Error::InvalidConfig(
            "batch_size >= 1, sample_size >= 2 and hits_k >= 1 required".into(),
        ));
    }
    let mut model = RerankerModel::init(config.hidden_width, config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed));
    let mut adam = Adam::new(model.params().len(), config.adam);
    let eval_interval = config.eval_interval.max(1);

    let mut best = model.clone();
    let mut best_step = 0;
    let mut best_hits = dev_hits(&model, dev, config.hits_k)?;
    let mut history = vec![(0, best_hits)];

    for step in 1..=config.steps {
        let batch: Vec<(usize, Vec<usize>)> = (0..config.batch_size)
            .map(|_| {
                let e = rng.random_range(0..train.len());
                let n = train[e].labels.len();
                let picks = index::sample(&mut rng, n, config.sample_size.min(n)).into_vec();
                (e, picks)
            })
            .collect();
        let (_, grad) = batch_loss_and_grad(&model, train, &batch)?;
        adam.step(model.params_mut(), &grad);

        if step % eval_interval == 0 || step == config.steps {
            let h = dev_hits(&model, dev, config.hits_k)?;
            history.push((step, h));
            if h >= best_hits {
                best_hits = h;
                best_step = step;
                best = model.clone();
            }
        }
    }

    Ok(TrainOutcome {
        model: best,
        best_step,
        best_dev_hits: best_hits,
        history,
    })
}
