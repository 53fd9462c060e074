//! Command-line driver. Every stage reads its inputs from the layered
//! configuration, validates them up front, and writes one artifact.

use std::collections::{BTreeMap, HashMap};
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Arg, ArgAction, ArgMatches, Command};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{PipelineConfig, CONFIG_KEYS};
use crate::corpus::{
    generate_synthetic, load_candidates, load_embeddings, load_external_candidates, load_questions,
    write_candidates, write_embeddings, write_external_candidates, write_questions, Candidate, KnowledgeBase,
    Question,
};
use crate::experiments::{run_ablation, run_discrepancy_matrix, Bundle, Report};
use crate::io;
use crate::reader::{inject_candidates, load_reader, save_reader, train_reader};
use crate::reranker::{
    build_examples, load_reranker, rerank_all, save_reranker, train_reranker, EmbeddingSet,
};
use crate::retrieval::{load_ranked_lists, patch_grid, retrieve_all, write_ranked_lists, RankedList};
use crate::supervision::{label_lists, load_labels, mean_hits_at_k, oracle_rank, vqa_accuracy, write_labels};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub question_id: String,
    pub answer: String,
}

#[derive(Serialize)]
struct Meta<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config: &'a PipelineConfig,
}

fn kebab(key: &str) -> String {
    key.replace('_', "-")
}

fn out_arg() -> Arg {
    Arg::new("out")
        .long("out")
        .short('o')
        .value_name("PATH")
        .required(true)
        .value_parser(clap::value_parser!(PathBuf))
        .help("artifact to write")
}

pub fn command() -> Command {
    let mut cmd = Command::new("mmrerank")
        .version(VERSION)
        .about("Retrieve, rerank and read pipeline for knowledge-intensive VQA")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("config")
                .long("config")
                .short('c')
                .value_name("FILE")
                .action(ArgAction::Append)
                .global(true)
                .value_parser(clap::value_parser!(PathBuf))
                .help("key = value config file; repeat to layer, later files win"),
        )
        .arg(
            Arg::new("jobs")
                .long("jobs")
                .short('j')
                .value_name("N")
                .global(true)
                .value_parser(clap::value_parser!(usize))
                .help("worker threads for per-question work"),
        );
    for (key, help) in CONFIG_KEYS {
        cmd = cmd.arg(
            Arg::new(*key)
                .long(kebab(key))
                .value_name("VALUE")
                .global(true)
                .hide_short_help(true)
                .help(*help),
        );
    }
    cmd.subcommand(
        Command::new("gen-synth")
            .about("generate a synthetic bundle into a directory")
            .arg(out_arg()),
    )
    .subcommand(
        Command::new("retrieve")
            .about("patch retrieval with max-score aggregation")
            .arg(out_arg()),
    )
    .subcommand(
        Command::new("label")
            .about("distant labels for every listed candidate")
            .arg(out_arg()),
    )
    .subcommand(
        Command::new("train-reranker")
            .about("train the reranker on labeled lists")
            .arg(out_arg()),
    )
    .subcommand(
        Command::new("rerank")
            .about("rerank lists with a trained reranker")
            .arg(out_arg()),
    )
    .subcommand(
        Command::new("oracle-rank")
            .about("reorder lists by their labels")
            .arg(out_arg()),
    )
    .subcommand(
        Command::new("train-reader")
            .about("train the reader on one candidate source")
            .arg(out_arg()),
    )
    .subcommand(
        Command::new("predict")
            .about("answer questions from ranked lists")
            .arg(out_arg())
            .arg(
                Arg::new("inject")
                    .long("inject")
                    .action(ArgAction::SetTrue)
                    .help("replace the tail of each read window with external candidates"),
            ),
    )
    .subcommand(
        Command::new("evaluate")
            .about("VQA accuracy of predictions")
            .arg(out_arg().required(false)),
    )
    .subcommand(
        Command::new("ablation")
            .about("no retrieval / retrieval / reranked ablation")
            .arg(out_arg()),
    )
    .subcommand(
        Command::new("discrepancy")
            .about("train/test candidate-source matrix")
            .arg(out_arg()),
    )
    .subcommand(
        Command::new("patch-grid")
            .about("print the patch grid of an image size as JSON")
            .arg(
                Arg::new("width")
                    .long("width")
                    .required(true)
                    .value_parser(clap::value_parser!(u32)),
            )
            .arg(
                Arg::new("height")
                    .long("height")
                    .required(true)
                    .value_parser(clap::value_parser!(u32)),
            ),
    )
}

/// Runs the CLI and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(&matches) {
        Ok(output) => {
            println!("{output}");
            0
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

/// Parses `args` (program name first) and runs the subcommand, returning
/// what would be printed on success.
pub fn run_args<I, T>(args: I) -> anyhow::Result<String>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run(&command().try_get_matches_from(args)?)
}

fn effective_config(m: &ArgMatches) -> anyhow::Result<PipelineConfig> {
    let mut cfg = PipelineConfig::default();
    if let Some(files) = m.get_many::<PathBuf>("config") {
        for f in files {
            cfg.apply_file(f)?;
        }
    }
    for (key, _) in CONFIG_KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v, None)
                .with_context(|| format!("--{}", kebab(key)))?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(m: &ArgMatches) -> anyhow::Result<String> {
    let (name, sub) = m.subcommand().expect("subcommand required");
    let cfg = effective_config(sub)?;
    let jobs = sub.get_one::<usize>("jobs").copied();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        if n == 0 {
            bail!("--jobs must be at least 1");
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build()?;
    let stage = Stage { name, cfg, m: sub };
    pool.install(|| stage.run())
}

struct Stage<'a> {
    name: &'a str,
    cfg: PipelineConfig,
    m: &'a ArgMatches,
}

impl Stage<'_> {
    fn run(&self) -> anyhow::Result<String> {
        match self.name {
            "gen-synth" => self.gen_synth(),
            "retrieve" => self.retrieve(),
            "label" => self.label(),
            "train-reranker" => self.train_reranker(),
            "rerank" => self.rerank(),
            "oracle-rank" => self.oracle_rank(),
            "train-reader" => self.train_reader(),
            "predict" => self.predict(),
            "evaluate" => self.evaluate(),
            "ablation" => self.experiment(false),
            "discrepancy" => self.experiment(true),
            "patch-grid" => self.patch_grid(),
            other => bail!("unknown subcommand {other}"),
        }
    }

    fn out(&self) -> &Path {
        self.m.get_one::<PathBuf>("out").expect("required by clap")
    }

    /// Checks that every key is set and names an existing file, before any work.
    fn require(&self, keys: &[&str]) -> anyhow::Result<()> {
        for key in keys {
            let p = self.cfg.path(key).ok_or_else(|| {
                anyhow!(
                    "missing input {key}: set --{} or `{key} = ...` in a config file",
                    kebab(key)
                )
            })?;
            if !p.is_file() {
                bail!("input {key} not found: {}", p.display());
            }
        }
        Ok(())
    }

    fn optional(&self, keys: &[&str]) -> anyhow::Result<()> {
        for key in keys {
            if let Some(p) = self.cfg.path(key) {
                if !p.is_file() {
                    bail!("input {key} not found: {}", p.display());
                }
            }
        }
        Ok(())
    }

    fn path(&self, key: &str) -> &Path {
        self.cfg.path(key).expect("checked by require")
    }

    fn write_meta(&self, artifact: &Path) -> anyhow::Result<()> {
        let mut name = artifact.as_os_str().to_owned();
        name.push(".meta.json");
        io::write_json(Path::new(&name), &self.meta())?;
        Ok(())
    }

    fn meta(&self) -> Meta<'_> {
        Meta {
            tool: "mmrerank",
            version: VERSION,
            command: self.name,
            config: &self.cfg,
        }
    }

    fn questions(&self) -> anyhow::Result<Vec<Question>> {
        Ok(load_questions(self.path("questions"))?.questions)
    }

    fn kb(&self, with_external: bool) -> anyhow::Result<KnowledgeBase> {
        let mut kb = KnowledgeBase::new(
            load_candidates(self.path("candidates"))?,
            self.cfg.include_section,
        )?;
        if with_external {
            if let Some(p) = self.cfg.path("external") {
                kb.extend(load_external_candidates(p)?.into_values().flatten())?;
            }
        }
        Ok(kb)
    }

    fn lists(&self) -> anyhow::Result<Vec<RankedList>> {
        Ok(load_ranked_lists(self.path("lists"))?)
    }

    fn embeddings(&self) -> anyhow::Result<EmbeddingSet> {
        let load = |k: &str| load_embeddings(self.path(k)).with_context(|| k.to_owned());
        let set = EmbeddingSet {
            question_patches: load("question_patches")?,
            question_texts: load("question_texts")?,
            candidate_images: load("candidate_images")?,
            candidate_texts: load("candidate_texts")?,
        };
        set.validate()?;
        Ok(set)
    }

    fn hits_note(&self, lists: &[RankedList]) -> anyhow::Result<String> {
        Ok(match self.cfg.path("labels") {
            Some(p) => {
                let labels = load_labels(p)?;
                format!(
                    ", Hits@{}={:.4}",
                    self.cfg.hits_k,
                    mean_hits_at_k(lists, &labels, self.cfg.hits_k)
                )
            }
            None => String::new(),
        })
    }

    fn gen_synth(&self) -> anyhow::Result<String> {
        let dir = self.out();
        let corpus = generate_synthetic(&self.cfg.synthetic(self.cfg.seed))?;
        let external = corpus.external_candidates(
            self.cfg.synth_external_per_question,
            self.cfg.synth_external_hit_rate,
            self.cfg.seed,
        );
        std::fs::create_dir_all(dir).with_context(|| dir.display().to_string())?;
        let files = [
            ("questions", "questions.jsonl"),
            ("candidates", "candidates.jsonl"),
            ("question_patches", "question_patches.emb"),
            ("question_texts", "question_texts.emb"),
            ("candidate_images", "candidate_images.emb"),
            ("candidate_texts", "candidate_texts.emb"),
            ("external", "external.jsonl"),
        ];
        let at = |f: &str| dir.join(f);
        write_questions(&corpus.questions, &at(files[0].1))?;
        write_candidates(&corpus.candidates, &at(files[1].1))?;
        write_embeddings(&corpus.question_patches, &at(files[2].1))?;
        write_embeddings(&corpus.question_texts, &at(files[3].1))?;
        write_embeddings(&corpus.candidate_images, &at(files[4].1))?;
        write_embeddings(&corpus.candidate_texts, &at(files[5].1))?;
        write_external_candidates(&external, &at(files[6].1))?;
        for (_, f) in files {
            self.write_meta(&at(f))?;
        }
        let conf: String = files.iter().map(|(k, f)| format!("{k} = {f}\n")).collect();
        io::write_atomic(&at("bundle.conf"), conf.as_bytes())?;
        Ok(format!(
            "gen-synth: {} questions, {} candidates, {} topics -> {}",
            corpus.questions.len(),
            corpus.candidates.len(),
            self.cfg.synth_topics,
            dir.display()
        ))
    }

    fn retrieve(&self) -> anyhow::Result<String> {
        self.require(&["questions", "question_patches", "candidate_texts"])?;
        self.optional(&["labels"])?;
        let questions = self.questions()?;
        let patches = load_embeddings(self.path("question_patches"))?;
        let texts = load_embeddings(self.path("candidate_texts"))?;
        let lists = retrieve_all(&questions, &patches, &texts, self.cfg.retrieval())?;
        write_ranked_lists(&lists, self.out())?;
        self.write_meta(self.out())?;
        let mean_len = lists.iter().map(RankedList::len).sum::<usize>() as f64 / lists.len().max(1) as f64;
        Ok(format!(
            "retrieve: {} lists, mean length {mean_len:.1}{} -> {}",
            lists.len(),
            self.hits_note(&lists)?,
            self.out().display()
        ))
    }

    fn label(&self) -> anyhow::Result<String> {
        self.require(&["questions", "candidates", "lists"])?;
        self.optional(&["external"])?;
        let questions = self.questions()?;
        let kb = self.kb(true)?;
        let lists = self.lists()?;
        let labels = label_lists(&questions, &lists, &kb)?;
        write_labels(&labels, self.out())?;
        self.write_meta(self.out())?;
        Ok(format!(
            "label: {} labels, Hits@{}={:.4} -> {}",
            labels.len(),
            self.cfg.hits_k,
            mean_hits_at_k(&lists, &labels, self.cfg.hits_k),
            self.out().display()
        ))
    }

    fn train_reranker(&self) -> anyhow::Result<String> {
        self.require(&[
            "questions",
            "lists",
            "labels",
            "question_patches",
            "question_texts",
            "candidate_images",
            "candidate_texts",
        ])?;
        let questions = self.questions()?;
        let lists = self.lists()?;
        let labels = load_labels(self.path("labels"))?;
        let embeddings = self.embeddings()?;
        let (sub, dev) = dev_split(lists.len(), self.cfg.dev_fraction, self.cfg.seed)?;
        let pick = |idx: &[usize]| idx.iter().map(|&i| lists[i].clone()).collect::<Vec<_>>();
        let train_ex = build_examples(&questions, &pick(&sub), &labels, &embeddings)?;
        let dev_ex = build_examples(&questions, &pick(&dev), &labels, &embeddings)?;
        let outcome = train_reranker(&train_ex, &dev_ex, &self.cfg.reranker_train())?;
        save_reranker(&outcome.model, &self.meta(), self.out())?;
        Ok(format!(
            "train-reranker: best dev Hits@{}={:.4} at step {} ({} train, {} dev questions) -> {}",
            self.cfg.hits_k,
            outcome.best_dev_hits,
            outcome.best_step,
            sub.len(),
            dev.len(),
            self.out().display()
        ))
    }

    fn rerank(&self) -> anyhow::Result<String> {
        self.require(&[
            "questions",
            "lists",
            "reranker",
            "question_patches",
            "question_texts",
            "candidate_images",
            "candidate_texts",
        ])?;
        self.optional(&["labels"])?;
        let questions = self.questions()?;
        let lists = self.lists()?;
        let model = load_reranker(self.path("reranker"))?;
        let reranked = rerank_all(&model, &questions, &lists, &self.embeddings()?)?;
        write_ranked_lists(&reranked, self.out())?;
        self.write_meta(self.out())?;
        Ok(format!(
            "rerank: {} lists{} -> {}",
            reranked.len(),
            self.hits_note(&reranked)?,
            self.out().display()
        ))
    }

    fn oracle_rank(&self) -> anyhow::Result<String> {
        self.require(&["lists", "labels"])?;
        let labels = load_labels(self.path("labels"))?;
        let lists: Vec<RankedList> = self.lists()?.iter().map(|l| oracle_rank(l, &labels)).collect();
        write_ranked_lists(&lists, self.out())?;
        self.write_meta(self.out())?;
        Ok(format!(
            "oracle-rank: {} lists, Hits@{}={:.4} -> {}",
            lists.len(),
            self.cfg.hits_k,
            mean_hits_at_k(&lists, &labels, self.cfg.hits_k),
            self.out().display()
        ))
    }

    fn train_reader(&self) -> anyhow::Result<String> {
        self.require(&["questions", "candidates", "lists"])?;
        self.optional(&["external"])?;
        let questions = self.questions()?;
        let kb = self.kb(true)?;
        let lists = self.lists()?;
        let outcome = train_reader(&questions, &lists, &kb, &self.cfg.reader_train())?;
        save_reader(&outcome.model, &self.meta(), self.out())?;
        Ok(format!(
            "train-reader: loss {:.4} -> {:.4} over {} questions ({} skipped) -> {}",
            outcome.initial_loss,
            outcome.final_loss,
            outcome.examples,
            outcome.skipped,
            self.out().display()
        ))
    }

    fn predict(&self) -> anyhow::Result<String> {
        let inject = self.m.get_flag("inject");
        self.require(&["questions", "candidates", "lists", "reader"])?;
        if inject {
            self.require(&["external"])?;
        } else {
            self.optional(&["external"])?;
        }
        let questions = self.questions()?;
        let by_id: HashMap<&str, &Question> = questions.iter().map(|q| (q.question_id.as_str(), q)).collect();
        let kb = self.kb(true)?;
        let reader = load_reader(self.path("reader"))?;
        let external: BTreeMap<String, Vec<Candidate>> = match (inject, self.cfg.path("external")) {
            (true, Some(p)) => load_external_candidates(p)?,
            _ => BTreeMap::new(),
        };
        let lists = self.lists()?;
        use rayon::prelude::*;
        let out: Vec<(Prediction, f64)> = lists
            .par_iter()
            .map(|list| {
                let q = by_id
                    .get(list.question_id.as_str())
                    .ok_or_else(|| anyhow!("list for unknown question {}", list.question_id))?;
                let list = if inject {
                    let ext = external
                        .get(&q.question_id)
                        .ok_or_else(|| anyhow!("no external candidates for {}", q.question_id))?;
                    let window = list.truncated(reader.k);
                    inject_candidates(&window, ext, self.cfg.injection_m.min(window.len()))?
                } else {
                    list.clone()
                };
                let answer = reader.predict(q, &list, &kb)?;
                let acc = vqa_accuracy(&answer, &q.answers);
                Ok((
                    Prediction {
                        question_id: q.question_id.clone(),
                        answer,
                    },
                    acc,
                ))
            })
            .collect::<anyhow::Result<_>>()?;
        let accuracy = out.iter().map(|(_, a)| a).sum::<f64>() / out.len().max(1) as f64;
        io::write_jsonl(self.out(), out.iter().map(|(p, _)| p))?;
        self.write_meta(self.out())?;
        Ok(format!(
            "predict: {} answers, VQA accuracy {accuracy:.4} -> {}",
            out.len(),
            self.out().display()
        ))
    }

    fn evaluate(&self) -> anyhow::Result<String> {
        self.require(&["questions", "predictions"])?;
        let questions = self.questions()?;
        let by_id: HashMap<&str, &Question> = questions.iter().map(|q| (q.question_id.as_str(), q)).collect();
        let preds: Vec<(usize, Prediction)> = io::read_jsonl(self.path("predictions"))?;
        if preds.is_empty() {
            bail!("no predictions in {}", self.path("predictions").display());
        }
        let mut total = 0.0;
        for (line, p) in &preds {
            let q = by_id
                .get(p.question_id.as_str())
                .ok_or_else(|| anyhow!("line {line}: unknown question {}", p.question_id))?;
            total += vqa_accuracy(&p.answer, &q.answers);
        }
        let accuracy = total / preds.len() as f64;
        if let Some(out) = self.m.get_one::<PathBuf>("out") {
            #[derive(Serialize)]
            struct Eval<'a> {
                accuracy: f64,
                questions: usize,
                #[serde(flatten)]
                meta: Meta<'a>,
            }
            io::write_json(
                out,
                &Eval {
                    accuracy,
                    questions: preds.len(),
                    meta: self.meta(),
                },
            )?;
        }
        Ok(format!(
            "evaluate: accuracy {accuracy:.4} over {} questions",
            preds.len()
        ))
    }

    fn bundle(&self) -> anyhow::Result<Bundle> {
        self.require(&[
            "questions",
            "candidates",
            "question_patches",
            "question_texts",
            "candidate_images",
            "candidate_texts",
        ])?;
        self.optional(&["labels", "external"])?;
        Ok(Bundle {
            questions: self.questions()?,
            kb: self.kb(false)?,
            embeddings: self.embeddings()?,
            labels: self.cfg.path("labels").map(load_labels).transpose()?,
            external: self
                .cfg
                .path("external")
                .map(load_external_candidates)
                .transpose()?
                .unwrap_or_default(),
        })
    }

    fn experiment(&self, matrix: bool) -> anyhow::Result<String> {
        let bundle = self.bundle()?;
        let exp = self.cfg.experiment();
        let mut report: Report = if matrix {
            run_discrepancy_matrix(
                &bundle,
                &exp,
                &self.cfg.train_sources,
                &self.cfg.test_sources,
                &self.cfg.seeds,
            )?
        } else {
            run_ablation(&bundle, &exp, &self.cfg.seeds)?
        };
        report.config = serde_json::to_value(self.meta())?;
        io::write_atomic(self.out(), report.to_json()?.as_bytes())?;
        let cells: Vec<String> = report
            .cells
            .iter()
            .map(|c| format!("{}->{} {:.4}", c.train, c.test, c.mean))
            .collect();
        Ok(format!(
            "{}{}: {} -> {}",
            report.to_table(),
            report.kind,
            cells.join(", "),
            self.out().display()
        ))
    }

    fn patch_grid(&self) -> anyhow::Result<String> {
        let w = *self.m.get_one::<u32>("width").expect("required");
        let h = *self.m.get_one::<u32>("height").expect("required");
        let grid = patch_grid(w, h, self.cfg.kernel, self.cfg.stride)?;
        Ok(serde_json::to_string(&grid)?)
    }
}

/// Seeded (sub-train, dev) split of `n` items; both parts sorted and non-empty.
pub fn dev_split(n: usize, dev_fraction: f64, seed: u64) -> anyhow::Result<(Vec<usize>, Vec<usize>)> {
    let n_dev = ((n as f64) * dev_fraction).round() as usize;
    if n_dev == 0 || n_dev >= n {
        bail!("{n} questions are too few for dev_fraction {dev_fraction}");
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut dev = order[..n_dev].to_vec();
    let mut sub = order[n_dev..].to_vec();
    dev.sort_unstable();
    sub.sort_unstable();
    Ok((sub, dev))
}
