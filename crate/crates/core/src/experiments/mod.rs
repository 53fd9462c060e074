//! Ablation and train/test candidate-source discrepancy experiments.
//!
//! Every seed splits the questions into train and test, splits train again
//! into sub-train and dev for the reranker, trains one reader per training
//! source on all train questions and evaluates it on the test questions
//! under each test source. Reranked training lists come from the same
//! reranker applied to the questions it was fit on; the per-seed diagnostics
//! record how much better those lists are than the reranked test lists.

mod report;

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Candidate, KnowledgeBase, Question, SyntheticCorpus};
use crate::error::{Error, Result};
use crate::reader::{inject_candidates, train_reader, ReaderModel, ReaderTrainConfig};
use crate::reranker::{build_examples, rerank_all, train_reranker, EmbeddingSet, RerankerTrainConfig};
use crate::retrieval::{retrieve_all, RankedList, RetrievalParams};
use crate::supervision::{label_lists, mean_hits_at_k, oracle_rank, vqa_accuracy, LabelSet};

pub use report::{median, CellReport, HitsRow, Report, SeedDiagnostics, REPORT_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CandidateSource {
    NoRetrieval,
    Retrieval,
    Reranked,
    Oracle,
    RerankedWithInjection,
}

impl CandidateSource {
    pub const ALL: [CandidateSource; 5] = [
        Self::NoRetrieval,
        Self::Retrieval,
        Self::Reranked,
        Self::Oracle,
        Self::RerankedWithInjection,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::NoRetrieval => "no-retrieval",
            Self::Retrieval => "retrieval",
            Self::Reranked => "reranked",
            Self::Oracle => "oracle",
            Self::RerankedWithInjection => "reranked-injected",
        }
    }

    fn needs_reranker(self) -> bool {
        matches!(self, Self::Reranked | Self::RerankedWithInjection)
    }
}

impl fmt::Display for CandidateSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CandidateSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown candidate source {s:?}")))
    }
}

/// Everything an experiment consumes.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub questions: Vec<Question>,
    pub kb: KnowledgeBase,
    pub embeddings: EmbeddingSet,
    /// Relevance labels; distant labels over the retrieval lists when absent.
    pub labels: Option<LabelSet>,
    /// question_id → externally generated candidates, in injection order.
    pub external: BTreeMap<String, Vec<Candidate>>,
}

impl Bundle {
    pub fn from_synthetic(corpus: &SyntheticCorpus, include_section: bool) -> Result<Self> {
        Ok(Self {
            questions: corpus.questions.clone(),
            kb: KnowledgeBase::new(corpus.candidates.clone(), include_section)?,
            embeddings: EmbeddingSet {
                question_patches: corpus.question_patches.clone(),
                question_texts: corpus.question_texts.clone(),
                candidate_images: corpus.candidate_images.clone(),
                candidate_texts: corpus.candidate_texts.clone(),
            },
            labels: None,
            external: BTreeMap::new(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub retrieval: RetrievalParams,
    pub reranker: RerankerTrainConfig,
    pub reader: ReaderTrainConfig,
    /// Fraction of questions held out for evaluation.
    pub test_fraction: f64,
    /// Fraction of the train questions used as reranker dev set.
    pub dev_fraction: f64,
    pub injection_m: usize,
    pub hits_ks: Vec<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            retrieval: RetrievalParams::default(),
            reranker: RerankerTrainConfig::default(),
            reader: ReaderTrainConfig::default(),
            test_fraction: 0.3,
            dev_fraction: 0.2,
            injection_m: 5,
            hits_ks: vec![1, 5, 20],
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, f) in [
            ("test_fraction", self.test_fraction),
            ("dev_fraction", self.dev_fraction),
        ] {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::InvalidConfig(format!("{name} must lie in (0, 1)")));
            }
        }
        if self.retrieval.per_patch_k == 0 || self.retrieval.aggregate_k == 0 {
            return Err(Error::InvalidConfig("retrieval k values must be positive".into()));
        }
        if self.hits_ks.contains(&0) {
            return Err(Error::InvalidConfig("hits_ks must be positive".into()));
        }
        Ok(())
    }
}

/// Seeded train/test split, then sub-train/dev split of train. Returns
/// (sub-train, dev, test) index lists, each sorted.
pub fn split_indices(
    n: usize,
    test_fraction: f64,
    dev_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    let n_test = ((n as f64) * test_fraction).round() as usize;
    let n_train = n.saturating_sub(n_test);
    let n_dev = ((n_train as f64) * dev_fraction).round() as usize;
    if n_test == 0 || n_dev == 0 || n_train <= n_dev {
        return Err(Error::InvalidArgument(format!(
            "{n} questions are too few for the requested splits"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test = order[..n_test].to_vec();
    let mut dev = order[n_test..n_test + n_dev].to_vec();
    let mut sub = order[n_test + n_dev..].to_vec();
    test.sort_unstable();
    dev.sort_unstable();
    sub.sort_unstable();
    Ok((sub, dev, test))
}

/// Candidate lists of every source for one seed, aligned with the question order.
struct SeedLists {
    train: Vec<usize>,
    test: Vec<usize>,
    by_source: HashMap<CandidateSource, Vec<RankedList>>,
    diagnostics: SeedDiagnostics,
}

struct Runner<'a> {
    bundle: &'a Bundle,
    config: &'a ExperimentConfig,
    /// Knowledge base including external candidates.
    kb: KnowledgeBase,
    retrieval: Vec<RankedList>,
    labels: LabelSet,
}

impl<'a> Runner<'a> {
    fn new(
        bundle: &'a Bundle,
        config: &'a ExperimentConfig,
        sources: &BTreeSet<CandidateSource>,
    ) -> Result<Self> {
        config.validate()?;
        if bundle.questions.is_empty() {
            return Err(Error::Empty("bundle has no questions".into()));
        }
        bundle.embeddings.validate()?;
        let retrieval = retrieve_all(
            &bundle.questions,
            &bundle.embeddings.question_patches,
            &bundle.embeddings.candidate_texts,
            config.retrieval,
        )?;
        let mut labels = match &bundle.labels {
            Some(l) => l.clone(),
            None => label_lists(&bundle.questions, &retrieval, &bundle.kb)?,
        };
        let mut kb = bundle.kb.clone();
        if sources.contains(&CandidateSource::RerankedWithInjection) {
            let mut ext_lists = Vec::new();
            for q in &bundle.questions {
                let ext = bundle.external.get(&q.question_id).ok_or_else(|| {
                    Error::MissingCandidate(format!("external candidates for {}", q.question_id))
                })?;
                kb.extend(ext.iter().cloned())?;
                ext_lists.push(RankedList::new(
                    q.question_id.clone(),
                    ext.iter().map(|c| (c.candidate_id.clone(), 0.0)).collect(),
                ));
            }
            labels.merge(label_lists(&bundle.questions, &ext_lists, &kb)?)?;
        }
        Ok(Self {
            bundle,
            config,
            kb,
            retrieval,
            labels,
        })
    }

    fn select<T: Clone>(items: &[T], idx: &[usize]) -> Vec<T> {
        idx.iter().map(|&i| items[i].clone()).collect()
    }

    fn seed_lists(&self, seed: u64, sources: &BTreeSet<CandidateSource>) -> Result<SeedLists> {
        let qs = &self.bundle.questions;
        let (sub, dev, test) = split_indices(
            qs.len(),
            self.config.test_fraction,
            self.config.dev_fraction,
            seed,
        )?;
        let mut train: Vec<usize> = sub.iter().chain(&dev).copied().collect();
        train.sort_unstable();

        let mut by_source = HashMap::new();
        let mut diagnostics = SeedDiagnostics {
            seed,
            ..Default::default()
        };
        for &s in sources {
            let lists = match s {
                CandidateSource::NoRetrieval => qs
                    .iter()
                    .map(|q| RankedList::new(q.question_id.clone(), vec![]))
                    .collect(),
                CandidateSource::Retrieval => self.retrieval.clone(),
                CandidateSource::Oracle => self
                    .retrieval
                    .iter()
                    .map(|l| oracle_rank(l, &self.labels))
                    .collect(),
                CandidateSource::Reranked | CandidateSource::RerankedWithInjection => continue,
            };
            by_source.insert(s, lists);
        }
        if sources.iter().any(|s| s.needs_reranker()) {
            let embeddings = &self.bundle.embeddings;
            let train_ex = build_examples(
                &Self::select(qs, &sub),
                &Self::select(&self.retrieval, &sub),
                &self.labels,
                embeddings,
            )?;
            let dev_ex = build_examples(
                &Self::select(qs, &dev),
                &Self::select(&self.retrieval, &dev),
                &self.labels,
                embeddings,
            )?;
            let cfg = RerankerTrainConfig {
                seed,
                ..self.config.reranker.clone()
            };
            let outcome = train_reranker(&train_ex, &dev_ex, &cfg)?;
            diagnostics.reranker_best_step = Some(outcome.best_step);
            diagnostics.reranker_dev_hits = Some(outcome.best_dev_hits);
            let reranked = rerank_all(&outcome.model, qs, &self.retrieval, embeddings)?;
            let k = self.config.reranker.hits_k;
            diagnostics.reranked_train_hits =
                Some(mean_hits_at_k(&Self::select(&reranked, &train), &self.labels, k));
            diagnostics.reranked_test_hits =
                Some(mean_hits_at_k(&Self::select(&reranked, &test), &self.labels, k));
            if sources.contains(&CandidateSource::RerankedWithInjection) {
                let read = self.config.reader.k;
                let injected = qs
                    .iter()
                    .zip(&reranked)
                    .map(|(q, l)| {
                        let window = l.truncated(read);
                        let m = self.config.injection_m.min(window.len());
                        inject_candidates(&window, &self.bundle.external[&q.question_id], m)
                    })
                    .collect::<Result<Vec<_>>>()?;
                by_source.insert(CandidateSource::RerankedWithInjection, injected);
            }
            by_source.insert(CandidateSource::Reranked, reranked);
        }
        Ok(SeedLists {
            train,
            test,
            by_source,
            diagnostics,
        })
    }

    fn train(&self, lists: &SeedLists, source: CandidateSource, seed: u64) -> Result<ReaderModel> {
        let qs = Self::select(&self.bundle.questions, &lists.train);
        let ls = Self::select(&lists.by_source[&source], &lists.train);
        let cfg = ReaderTrainConfig {
            seed,
            ..self.config.reader.clone()
        };
        Ok(train_reader(&qs, &ls, &self.kb, &cfg)?.model)
    }

    fn accuracy(&self, reader: &ReaderModel, lists: &SeedLists, source: CandidateSource) -> Result<f64> {
        let all = &lists.by_source[&source];
        let scores = lists
            .test
            .par_iter()
            .map(|&i| {
                let q = &self.bundle.questions[i];
                Ok(vqa_accuracy(&reader.predict(q, &all[i], &self.kb)?, &q.answers))
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(scores.iter().sum::<f64>() / scores.len() as f64)
    }

    fn hits(&self, lists: &SeedLists) -> Vec<(CandidateSource, usize, f64)> {
        let mut out = Vec::new();
        let mut sources: Vec<_> = lists.by_source.keys().copied().collect();
        sources.sort();
        for s in sources {
            if s == CandidateSource::NoRetrieval {
                continue;
            }
            let test = Self::select(&lists.by_source[&s], &lists.test);
            for &k in &self.config.hits_ks {
                out.push((s, k, mean_hits_at_k(&test, &self.labels, k)));
            }
        }
        out
    }

    /// Accuracy of every (train, test) pair for every seed.
    fn run(&self, pairs: &[(CandidateSource, CandidateSource)], seeds: &[u64], kind: &str) -> Result<Report> {
        if seeds.is_empty() {
            return Err(Error::InvalidArgument("at least one seed is required".into()));
        }
        let sources: BTreeSet<CandidateSource> = pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
        let mut cells: Vec<CellReport> = pairs
            .iter()
            .map(|&(train, test)| CellReport::new(train, test))
            .collect();
        let mut hits: BTreeMap<(CandidateSource, usize), Vec<f64>> = BTreeMap::new();
        let mut diagnostics = Vec::new();
        for &seed in seeds {
            let lists = self.seed_lists(seed, &sources)?;
            let mut readers: BTreeMap<CandidateSource, ReaderModel> = BTreeMap::new();
            for (cell, &(train, test)) in cells.iter_mut().zip(pairs) {
                if let Entry::Vacant(slot) = readers.entry(train) {
                    slot.insert(self.train(&lists, train, seed)?);
                }
                cell.per_seed.push(self.accuracy(&readers[&train], &lists, test)?);
            }
            for (s, k, h) in self.hits(&lists) {
                hits.entry((s, k)).or_default().push(h);
            }
            diagnostics.push(lists.diagnostics);
        }
        cells.iter_mut().for_each(CellReport::finish);
        Ok(Report::new(
            kind,
            serde_json::to_value(self.config)?,
            seeds.to_vec(),
            cells,
            hits.into_iter()
                .map(|((s, k), v)| HitsRow::new(s, k, v))
                .collect(),
            diagnostics,
        ))
    }
}

/// Ablation rows: no retrieval, retrieval, and retrieval-trained reader read
/// on reranked lists; plus reranked-with-injection when external candidates
/// are present.
pub fn ablation_pairs(with_injection: bool) -> Vec<(CandidateSource, CandidateSource)> {
    use CandidateSource::*;
    let mut pairs = vec![
        (NoRetrieval, NoRetrieval),
        (Retrieval, Retrieval),
        (Retrieval, Reranked),
    ];
    if with_injection {
        pairs.push((Retrieval, RerankedWithInjection));
    }
    pairs
}

pub fn run_ablation(bundle: &Bundle, config: &ExperimentConfig, seeds: &[u64]) -> Result<Report> {
    let pairs = ablation_pairs(!bundle.external.is_empty());
    let sources = pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
    Runner::new(bundle, config, &sources)?.run(&pairs, seeds, "ablation")
}

pub fn run_discrepancy_matrix(
    bundle: &Bundle,
    config: &ExperimentConfig,
    train_sources: &[CandidateSource],
    test_sources: &[CandidateSource],
    seeds: &[u64],
) -> Result<Report> {
    if train_sources.is_empty() || test_sources.is_empty() {
        return Err(Error::InvalidArgument(
            "train and test sources must be non-empty".into(),
        ));
    }
    let pairs: Vec<_> = train_sources
        .iter()
        .flat_map(|&a| test_sources.iter().map(move |&b| (a, b)))
        .collect();
    let sources = pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
    Runner::new(bundle, config, &sources)?.run(&pairs, seeds, "discrepancy")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, SyntheticConfig};
    use crate::optim::AdamConfig;

    fn bundle(seed: u64) -> Bundle {
        let corpus = generate_synthetic(&SyntheticConfig {
            n_questions: 120,
            n_candidates: 240,
            n_topics: 12,
            dim: 16,
            seed,
            ..Default::default()
        })
        .unwrap();
        let mut b = Bundle::from_synthetic(&corpus, true).unwrap();
        b.external = corpus.external_candidates(5, 0.5, seed);
        b
    }

    fn quick() -> ExperimentConfig {
        ExperimentConfig {
            reranker: RerankerTrainConfig {
                steps: 60,
                eval_interval: 20,
                hidden_width: 8,
                adam: AdamConfig::with_lr(1e-2),
                ..Default::default()
            },
            reader: ReaderTrainConfig {
                steps: 40,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn split_is_a_seeded_partition() {
        let (s, d, t) = split_indices(100, 0.3, 0.2, 4).unwrap();
        assert_eq!((s.len(), d.len(), t.len()), (56, 14, 30));
        let mut all: Vec<usize> = s.iter().chain(&d).chain(&t).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(split_indices(100, 0.3, 0.2, 4).unwrap().2, t);
        assert_ne!(split_indices(100, 0.3, 0.2, 5).unwrap().2, t);
        assert!(split_indices(2, 0.3, 0.2, 0).is_err());
    }

    #[test]
    fn source_names_roundtrip() {
        for s in CandidateSource::ALL {
            assert_eq!(s.name().parse::<CandidateSource>().unwrap(), s);
        }
        assert!("bogus".parse::<CandidateSource>().is_err());
    }

    #[test]
    fn ablation_is_deterministic_and_consistent() {
        let b = bundle(1);
        let cfg = quick();
        let a = run_ablation(&b, &cfg, &[3]).unwrap();
        let again = run_ablation(&b, &cfg, &[3]).unwrap();
        assert_eq!(a.to_json().unwrap(), again.to_json().unwrap());
        assert_eq!(a.cells.len(), 4);
        for c in &a.cells {
            assert_eq!(c.mean, c.per_seed.iter().sum::<f64>() / c.per_seed.len() as f64);
        }

        use CandidateSource::*;
        let m = run_discrepancy_matrix(&b, &cfg, &[Retrieval], &[Retrieval, Reranked], &[3]).unwrap();
        assert_eq!(
            m.cell(Retrieval, Retrieval).unwrap().per_seed,
            a.cell(Retrieval, Retrieval).unwrap().per_seed
        );
        assert_eq!(
            m.cell(Retrieval, Reranked).unwrap().per_seed,
            a.cell(Retrieval, Reranked).unwrap().per_seed
        );
    }

    #[test]
    fn injection_requires_external_candidates() {
        let mut b = bundle(2);
        b.external.clear();
        use CandidateSource::*;
        let err =
            run_discrepancy_matrix(&b, &quick(), &[Retrieval], &[RerankedWithInjection], &[0]).unwrap_err();
        assert!(matches!(err, Error::MissingCandidate(_)), "{err}");
        assert!(run_discrepancy_matrix(&b, &quick(), &[], &[Retrieval], &[0]).is_err());
        assert!(run_ablation(&b, &quick(), &[]).is_err());
    }
}
