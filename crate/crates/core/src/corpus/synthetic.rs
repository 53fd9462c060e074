//! Deterministic desk-scale corpus with planted patch distractors.
//!
//! Every topic owns a unit direction and an answer word. A question's image
//! patches point along its topic direction, except that each patch is
//! independently replaced by another topic's direction with probability
//! `distractor_rate`, so a single patch can retrieve confidently wrong
//! knowledge. Candidates of the question's topic are the positives; their
//! captions mention the topic answer with probability `answer_injection_rate`.

use std::collections::{BTreeMap, HashSet};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{patch_id, Candidate, EmbeddingTable, Question, NUM_ANSWERS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_questions: usize,
    pub n_candidates: usize,
    pub n_topics: usize,
    pub dim: usize,
    pub patches_per_image: usize,
    pub noise_sigma: f64,
    pub distractor_rate: f64,
    pub answer_injection_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_questions: 600,
            n_candidates: 1200,
            n_topics: 10,
            dim: 32,
            patches_per_image: 6,
            noise_sigma: 0.4,
            distractor_rate: 0.5,
            answer_injection_rate: 0.6,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_questions", self.n_questions),
            ("n_candidates", self.n_candidates),
            ("n_topics", self.n_topics),
            ("dim", self.dim),
            ("patches_per_image", self.patches_per_image),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.n_topics > self.n_candidates {
            return Err(Error::InvalidConfig(
                "n_topics must not exceed n_candidates".into(),
            ));
        }
        if self.dim < 2 {
            return Err(Error::InvalidConfig("dim must be at least 2".into()));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::InvalidConfig("noise_sigma must be finite and >= 0".into()));
        }
        for (name, r) in [
            ("distractor_rate", self.distractor_rate),
            ("answer_injection_rate", self.answer_injection_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::InvalidConfig(format!("{name} must lie in [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub questions: Vec<Question>,
    pub candidates: Vec<Candidate>,
    /// Patch embeddings keyed `<image_id>#<patch_index>`.
    pub question_patches: EmbeddingTable,
    pub question_texts: EmbeddingTable,
    pub candidate_images: EmbeddingTable,
    pub candidate_texts: EmbeddingTable,
    /// question_id → topic index.
    pub gold_topics: BTreeMap<String, usize>,
    /// candidate_id → topic index.
    pub candidate_topics: BTreeMap<String, usize>,
    pub topic_answers: Vec<String>,
    pub topic_directions: Vec<Vec<f64>>,
}

const FILLER: &[&str] = &[
    "photo",
    "view",
    "of",
    "old",
    "building",
    "street",
    "people",
    "near",
    "river",
    "during",
    "summer",
    "image",
    "showing",
    "local",
    "historic",
    "famous",
    "small",
    "large",
    "early",
    "modern",
    "public",
    "market",
    "museum",
    "park",
    "station",
    "collection",
    "taken",
    "from",
    "north",
    "south",
    "square",
    "bridge",
    "festival",
    "in",
    "with",
    "and",
    "display",
];

const QUESTION_TEMPLATES: &[&str] = &[
    "what is this thing associated with",
    "what is the name of what is shown here",
    "which word describes the object in this picture",
    "what is this usually called",
    "what place is connected to this",
];

const ONSETS: &[&str] = &[
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];
const CODAS: &[&str] = &["", "", "n", "r", "x", "l"];

fn answer_word(rng: &mut impl Rng, taken: &HashSet<String>) -> String {
    loop {
        let mut w = String::new();
        for _ in 0..3 {
            w.push_str(ONSETS.choose(rng).unwrap());
            w.push_str(VOWELS.choose(rng).unwrap());
        }
        w.push_str(CODAS.choose(rng).unwrap());
        if !taken.contains(&w) && !FILLER.contains(&w.as_str()) {
            return w;
        }
    }
}

fn unit_gaussian(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    let std = Normal::new(0.0, 1.0).unwrap();
    loop {
        let v: Vec<f64> = (0..dim).map(|_| std.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn noisy(rng: &mut impl Rng, direction: &[f64], sigma: f64) -> Vec<f32> {
    if sigma == 0.0 {
        return direction.iter().map(|&x| x as f32).collect();
    }
    let noise = Normal::new(0.0, sigma).unwrap();
    direction
        .iter()
        .map(|&x| (x + noise.sample(rng)) as f32)
        .collect()
}

fn caption(rng: &mut impl Rng, answer: Option<&str>) -> String {
    let n = rng.random_range(4..=7);
    let mut words: Vec<&str> = (0..n).map(|_| *FILLER.choose(rng).unwrap()).collect();
    if let Some(a) = answer {
        let at = rng.random_range(0..=words.len());
        words.insert(at, a);
    }
    words.join(" ")
}

pub fn generate_synthetic(config: &SyntheticConfig) -> Result<SyntheticCorpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dim = config.dim;
    let sigma = config.noise_sigma;

    let mut taken = HashSet::new();
    let mut topic_answers = Vec::with_capacity(config.n_topics);
    let mut topic_directions = Vec::with_capacity(config.n_topics);
    for _ in 0..config.n_topics {
        let word = answer_word(&mut rng, &taken);
        taken.insert(word.clone());
        topic_answers.push(word);
        topic_directions.push(unit_gaussian(&mut rng, dim));
    }

    let mut candidates = Vec::with_capacity(config.n_candidates);
    let mut candidate_images = EmbeddingTable::new(dim)?;
    let mut candidate_texts = EmbeddingTable::new(dim)?;
    let mut candidate_topics = BTreeMap::new();
    for j in 0..config.n_candidates {
        let topic = j % config.n_topics;
        let id = format!("c{j:05}");
        let image_id = format!("wimg{j:05}");
        let inject = rng.random_bool(config.answer_injection_rate);
        let cap = caption(&mut rng, inject.then(|| topic_answers[topic].as_str()));
        candidate_images.insert(id.clone(), &noisy(&mut rng, &topic_directions[topic], sigma))?;
        candidate_texts.insert(id.clone(), &noisy(&mut rng, &topic_directions[topic], sigma))?;
        candidate_topics.insert(id.clone(), topic);
        candidates.push(Candidate {
            candidate_id: id,
            image_id: Some(image_id),
            caption: cap,
            section_text: None,
        });
    }

    let mut questions = Vec::with_capacity(config.n_questions);
    let mut question_patches = EmbeddingTable::new(dim)?;
    let mut question_texts = EmbeddingTable::new(dim)?;
    let mut gold_topics = BTreeMap::new();
    for i in 0..config.n_questions {
        let topic = rng.random_range(0..config.n_topics);
        let qid = format!("q{i:05}");
        let image_id = format!("qimg{i:05}");
        for p in 0..config.patches_per_image {
            let source = if config.n_topics > 1 && rng.random_bool(config.distractor_rate) {
                let other = rng.random_range(0..config.n_topics - 1);
                if other >= topic {
                    other + 1
                } else {
                    other
                }
            } else {
                topic
            };
            question_patches.insert(
                patch_id(&image_id, p),
                &noisy(&mut rng, &topic_directions[source], sigma),
            )?;
        }
        question_texts.insert(qid.clone(), &noisy(&mut rng, &topic_directions[topic], sigma))?;
        let text = QUESTION_TEMPLATES.choose(&mut rng).unwrap().to_string();
        gold_topics.insert(qid.clone(), topic);
        questions.push(Question {
            question_id: qid,
            image_id,
            text,
            answers: vec![topic_answers[topic].clone(); NUM_ANSWERS],
        });
    }

    Ok(SyntheticCorpus {
        questions,
        candidates,
        question_patches,
        question_texts,
        candidate_images,
        candidate_texts,
        gold_topics,
        candidate_topics,
        topic_answers,
        topic_directions,
    })
}

impl SyntheticCorpus {
    /// Simulated externally generated knowledge: `per_question` text-only
    /// candidates per question, each naming the gold answer with probability
    /// `hit_rate` and a random other topic's answer otherwise.
    pub fn external_candidates(
        &self,
        per_question: usize,
        hit_rate: f64,
        seed: u64,
    ) -> BTreeMap<String, Vec<Candidate>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let mut out = BTreeMap::new();
        for q in &self.questions {
            let topic = self.gold_topics[&q.question_id];
            let list = (0..per_question)
                .map(|g| {
                    let answer_topic = if rng.random_bool(hit_rate) {
                        topic
                    } else {
                        rng.random_range(0..self.topic_answers.len())
                    };
                    let cap = caption(&mut rng, Some(&self.topic_answers[answer_topic]));
                    Candidate::text_only(format!("{}#g{g}", q.question_id), cap)
                })
                .collect();
            out.insert(q.question_id.clone(), list);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::dot;

    fn small(seed: u64) -> SyntheticConfig {
        SyntheticConfig {
            n_questions: 30,
            n_candidates: 60,
            n_topics: 6,
            dim: 16,
            patches_per_image: 4,
            noise_sigma: 0.05,
            distractor_rate: 0.5,
            answer_injection_rate: 0.7,
            seed,
        }
    }

    #[test]
    fn same_seed_is_identical() {
        let a = generate_synthetic(&small(3)).unwrap();
        let b = generate_synthetic(&small(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            a.question_patches.to_emb1_bytes(),
            b.question_patches.to_emb1_bytes()
        );
        let c = generate_synthetic(&small(4)).unwrap();
        assert_ne!(a.question_patches, c.question_patches);
    }

    #[test]
    fn no_distractors_means_every_patch_follows_topic() {
        let mut cfg = small(1);
        cfg.distractor_rate = 0.0;
        let corpus = generate_synthetic(&cfg).unwrap();
        for q in &corpus.questions {
            let dir: Vec<f32> = corpus.topic_directions[corpus.gold_topics[&q.question_id]]
                .iter()
                .map(|&x| x as f32)
                .collect();
            for p in 0..cfg.patches_per_image {
                let v = corpus.question_patches.get(&patch_id(&q.image_id, p)).unwrap();
                // unit direction plus noise with norm ~ sigma * sqrt(dim) = 0.2
                assert!(dot(v, &dir) > 0.5, "{} patch {p}", q.question_id);
            }
        }
    }

    #[test]
    fn answers_are_topic_answer_repeated() {
        let corpus = generate_synthetic(&small(2)).unwrap();
        for q in &corpus.questions {
            let t = corpus.gold_topics[&q.question_id];
            assert_eq!(q.answers, vec![corpus.topic_answers[t].clone(); 10]);
        }
        let unique: HashSet<_> = corpus.topic_answers.iter().collect();
        assert_eq!(unique.len(), corpus.topic_answers.len());
    }

    #[test]
    fn config_validation() {
        let mut c = small(0);
        c.n_topics = 100;
        assert!(generate_synthetic(&c).is_err());
        let mut c = small(0);
        c.dim = 1;
        assert!(generate_synthetic(&c).is_err());
        let mut c = small(0);
        c.distractor_rate = 1.5;
        assert!(generate_synthetic(&c).is_err());
        let mut c = small(0);
        c.noise_sigma = -0.1;
        assert!(generate_synthetic(&c).is_err());
    }

    #[test]
    fn external_candidates_are_text_only_and_deterministic() {
        let corpus = generate_synthetic(&small(5)).unwrap();
        let a = corpus.external_candidates(5, 0.5, 1);
        assert_eq!(a, corpus.external_candidates(5, 0.5, 1));
        assert_eq!(a.len(), corpus.questions.len());
        assert!(a.values().flatten().all(|c| c.image_id.is_none()));
    }
}
