//! Pipeline configuration: a flat `key = value` text format.
//!
//! Blank lines and lines starting with `#` are ignored. Relative paths are
//! resolved against the directory of the file that sets them. Every key can
//! also be given on the command line as `--kebab-case-key value`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::SyntheticConfig;
use crate::error::{Error, Result};
use crate::experiments::{CandidateSource, ExperimentConfig};
use crate::optim::AdamConfig;
use crate::reader::ReaderTrainConfig;
use crate::reranker::RerankerTrainConfig;
use crate::retrieval::RetrievalParams;

trait ConfigValue: Sized {
    fn parse_value(raw: &str) -> std::result::Result<Self, String>;
    fn render(&self) -> String;
    fn is_path() -> bool {
        false
    }
}

macro_rules! from_str_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(raw: &str) -> std::result::Result<Self, String> {
                raw.parse().map_err(|e| format!("{e}"))
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}
from_str_value!(usize, u64, u32, f64, bool);

impl ConfigValue for Option<PathBuf> {
    fn parse_value(raw: &str) -> std::result::Result<Self, String> {
        Ok(if raw.is_empty() {
            None
        } else {
            Some(PathBuf::from(raw))
        })
    }
    fn render(&self) -> String {
        self.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
    }
    fn is_path() -> bool {
        true
    }
}

impl ConfigValue for Vec<u64> {
    fn parse_value(raw: &str) -> std::result::Result<Self, String> {
        raw.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e| format!("{s:?}: {e}")))
            .collect()
    }
    fn render(&self) -> String {
        self.iter().map(u64::to_string).collect::<Vec<_>>().join(",")
    }
}

impl ConfigValue for Vec<CandidateSource> {
    fn parse_value(raw: &str) -> std::result::Result<Self, String> {
        raw.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e: Error| e.to_string()))
            .collect()
    }
    fn render(&self) -> String {
        self.iter().map(|s| s.name()).collect::<Vec<_>>().join(",")
    }
}

macro_rules! pipeline_config {
    ($($name:ident : $ty:ty = $default:expr, $help:literal;)*) => {
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        pub struct PipelineConfig {
            $(#[doc = $help] pub $name: $ty,)*
        }

        impl Default for PipelineConfig {
            fn default() -> Self {
                Self { $($name: $default,)* }
            }
        }

        /// (key, help) for every configuration key, in declaration order.
        pub const CONFIG_KEYS: &[(&str, &str)] = &[$((stringify!($name), $help),)*];

        impl PipelineConfig {
            /// Sets `key` from its textual form. Relative paths are joined onto `base`.
            pub fn set(&mut self, key: &str, raw: &str, base: Option<&Path>) -> Result<()> {
                let raw = raw.trim();
                match key {
                    $(stringify!($name) => {
                        let mut v = <$ty as ConfigValue>::parse_value(raw)
                            .map_err(|e| Error::InvalidConfig(format!("{key}: {e}")))?;
                        if <$ty as ConfigValue>::is_path() {
                            v = <$ty as ConfigValue>::parse_value(&resolve(raw, base)).unwrap();
                        }
                        self.$name = v;
                    })*
                    _ => return Err(Error::InvalidConfig(format!("unknown config key {key:?}"))),
                }
                Ok(())
            }

            /// The configuration in its own file format.
            pub fn render(&self) -> String {
                let mut out = String::new();
                $(let _ = writeln!(out, "{} = {}", stringify!($name), ConfigValue::render(&self.$name));)*
                out
            }
        }
    };
}

fn resolve(raw: &str, base: Option<&Path>) -> String {
    match base {
        Some(b) if !raw.is_empty() && Path::new(raw).is_relative() => b.join(raw).display().to_string(),
        _ => raw.to_owned(),
    }
}

pipeline_config! {
    questions: Option<PathBuf> = None, "questions JSONL";
    candidates: Option<PathBuf> = None, "knowledge candidates JSONL";
    question_patches: Option<PathBuf> = None, "question patch embeddings (EMB1 or JSONL)";
    question_texts: Option<PathBuf> = None, "question text embeddings";
    candidate_images: Option<PathBuf> = None, "candidate image embeddings";
    candidate_texts: Option<PathBuf> = None, "candidate text embeddings";
    labels: Option<PathBuf> = None, "relevance labels JSONL";
    external: Option<PathBuf> = None, "external candidates JSONL";
    lists: Option<PathBuf> = None, "ranked lists JSONL consumed by the stage";
    reranker: Option<PathBuf> = None, "reranker checkpoint";
    reader: Option<PathBuf> = None, "reader checkpoint";
    predictions: Option<PathBuf> = None, "predictions JSONL";
    include_section: bool = true, "append section text to captions when matching answers";
    kernel: u32 = 224, "patch kernel size in pixels";
    stride: u32 = 64, "patch stride in pixels";
    per_patch_k: usize = 20, "candidates kept per patch";
    aggregate_k: usize = 20, "candidates kept after aggregation";
    sample_size: usize = 20, "candidates sampled per question per reranker step";
    reranker_lr: f64 = 1e-4, "reranker Adam learning rate";
    reranker_steps: usize = 2000, "reranker training steps";
    reranker_batch: usize = 8, "questions per reranker step";
    reranker_hidden: usize = 32, "reranker hidden width";
    eval_interval: usize = 100, "steps between reranker dev evaluations";
    hits_k: usize = 5, "k of the Hits@k checkpoint metric";
    reader_lr: f64 = 0.05, "reader Adam learning rate";
    reader_steps: usize = 300, "reader training steps";
    reader_batch: usize = 32, "questions per reader step";
    reader_k: usize = 5, "candidates read per question";
    top_v: usize = 100, "most frequent answers always scored by the reader";
    injection_m: usize = 5, "trailing candidates replaced by external ones";
    test_fraction: f64 = 0.3, "held-out fraction in experiments";
    dev_fraction: f64 = 0.2, "reranker dev fraction of the training questions";
    seed: u64 = 0, "seed of single training runs";
    seeds: Vec<u64> = vec![0, 1, 2, 3, 4], "experiment seeds";
    train_sources: Vec<CandidateSource> = vec![CandidateSource::Retrieval, CandidateSource::Reranked, CandidateSource::Oracle], "discrepancy training sources";
    test_sources: Vec<CandidateSource> = vec![CandidateSource::Retrieval, CandidateSource::Reranked, CandidateSource::Oracle], "discrepancy test sources";
    synth_questions: usize = 600, "synthetic questions";
    synth_candidates: usize = 1200, "synthetic candidates";
    synth_topics: usize = 10, "synthetic topics";
    synth_dim: usize = 32, "synthetic embedding dimension";
    synth_patches: usize = 6, "synthetic patches per image";
    synth_noise: f64 = 0.4, "synthetic embedding noise";
    synth_distractor_rate: f64 = 0.5, "probability a patch shows another topic";
    synth_injection_rate: f64 = 0.6, "probability a candidate caption names its answer";
    synth_external_per_question: usize = 5, "external candidates per synthetic question";
    synth_external_hit_rate: f64 = 0.5, "probability an external candidate names the gold answer";
}

/// Parses `key = value` lines into `(line number, key, value)`.
pub fn parse_pairs(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let (k, v) = t.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            message: "expected key = value".into(),
        })?;
        out.push((i + 1, k.trim().to_owned(), v.trim().to_owned()));
    }
    Ok(out)
}

impl PipelineConfig {
    /// The path stored under a path-valued key.
    pub fn path(&self, key: &str) -> Option<&Path> {
        let p = match key {
            "questions" => &self.questions,
            "candidates" => &self.candidates,
            "question_patches" => &self.question_patches,
            "question_texts" => &self.question_texts,
            "candidate_images" => &self.candidate_images,
            "candidate_texts" => &self.candidate_texts,
            "labels" => &self.labels,
            "external" => &self.external,
            "lists" => &self.lists,
            "reranker" => &self.reranker,
            "reader" => &self.reader,
            "predictions" => &self.predictions,
            _ => return None,
        };
        p.as_deref()
    }

    pub fn apply_text(&mut self, text: &str, base: Option<&Path>) -> Result<()> {
        for (line, k, v) in parse_pairs(text)? {
            self.set(&k, &v, base).map_err(|e| Error::Parse {
                line,
                message: match e {
                    Error::InvalidConfig(m) => m,
                    e => e.to_string(),
                },
            })?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty());
        self.apply_text(&text, base).map_err(|e| match e {
            Error::Parse { line, message } => {
                Error::InvalidConfig(format!("{}: line {line}: {message}", path.display()))
            }
            e => e,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("kernel", self.kernel as usize),
            ("stride", self.stride as usize),
            ("per_patch_k", self.per_patch_k),
            ("aggregate_k", self.aggregate_k),
            ("sample_size", self.sample_size),
            ("reranker_batch", self.reranker_batch),
            ("reranker_hidden", self.reranker_hidden),
            ("eval_interval", self.eval_interval),
            ("hits_k", self.hits_k),
            ("reader_batch", self.reader_batch),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{k} must be positive")));
            }
        }
        if self.sample_size < 2 {
            return Err(Error::InvalidConfig("sample_size must be at least 2".into()));
        }
        for (k, v) in [("reranker_lr", self.reranker_lr), ("reader_lr", self.reader_lr)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!("{k} must be positive")));
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("seeds must list at least one seed".into()));
        }
        self.experiment().validate()?;
        self.synthetic(0).validate()
    }

    pub fn retrieval(&self) -> RetrievalParams {
        RetrievalParams {
            per_patch_k: self.per_patch_k,
            aggregate_k: self.aggregate_k,
        }
    }

    pub fn reranker_train(&self) -> RerankerTrainConfig {
        RerankerTrainConfig {
            steps: self.reranker_steps,
            batch_size: self.reranker_batch,
            sample_size: self.sample_size,
            adam: AdamConfig::with_lr(self.reranker_lr),
            eval_interval: self.eval_interval,
            hits_k: self.hits_k,
            hidden_width: self.reranker_hidden,
            seed: self.seed,
        }
    }

    pub fn reader_train(&self) -> ReaderTrainConfig {
        ReaderTrainConfig {
            steps: self.reader_steps,
            batch_size: self.reader_batch,
            adam: AdamConfig::with_lr(self.reader_lr),
            k: self.reader_k,
            top_v: self.top_v,
            seed: self.seed,
        }
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            retrieval: self.retrieval(),
            reranker: self.reranker_train(),
            reader: self.reader_train(),
            test_fraction: self.test_fraction,
            dev_fraction: self.dev_fraction,
            injection_m: self.injection_m,
            hits_ks: vec![1, 5, 20],
        }
    }

    pub fn synthetic(&self, seed: u64) -> SyntheticConfig {
        SyntheticConfig {
            n_questions: self.synth_questions,
            n_candidates: self.synth_candidates,
            n_topics: self.synth_topics,
            dim: self.synth_dim,
            patches_per_image: self.synth_patches,
            noise_sigma: self.synth_noise,
            distractor_rate: self.synth_distractor_rate,
            answer_injection_rate: self.synth_injection_rate,
            seed,
        }
    }
}
