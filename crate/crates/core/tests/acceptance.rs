//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Tolerances and thresholds are pinned
//! here, next to the checks that use them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mmrerank::cli::{dev_split, run_args};
use mmrerank::config::PipelineConfig;
use mmrerank::corpus::{generate_synthetic, EmbeddingTable, SyntheticCorpus};
use mmrerank::experiments::{run_ablation, run_discrepancy_matrix, Bundle, CandidateSource, Report};
use mmrerank::reranker::{
    batch_loss_and_grad, build_examples, dev_hits, pairwise_loss, pairwise_loss_and_grad, rerank_all,
    train_reranker, RerankExample, RerankerModel, FEATURE_DIM,
};
use mmrerank::retrieval::{retrieve_all, retrieve_and_aggregate, top_k, RankedList};
use mmrerank::supervision::{distant_label, label_lists, oracle_rank, vqa_accuracy, LabelSet};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn desk_config() -> PipelineConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.conf");
    let mut cfg = PipelineConfig::default();
    cfg.apply_file(&path).expect("desk profile loads");
    cfg.validate().expect("desk profile is valid");
    cfg
}

fn synthetic_bundle(cfg: &PipelineConfig, seed: u64) -> (SyntheticCorpus, Bundle) {
    let corpus = generate_synthetic(&cfg.synthetic(seed)).expect("synthetic corpus");
    let mut bundle = Bundle::from_synthetic(&corpus, cfg.include_section).expect("bundle");
    bundle.external =
        corpus.external_candidates(cfg.synth_external_per_question, cfg.synth_external_hit_rate, seed);
    (corpus, bundle)
}

fn cell(r: &Report, train: CandidateSource, test: CandidateSource) -> f64 {
    r.cell(train, test)
        .unwrap_or_else(|| panic!("missing cell {train}->{test}"))
        .per_seed[0]
}

fn fmt_seeds(v: &[String]) -> String {
    format!("[{}]", v.join(" "))
}

// ----- formula exactness ------------------------------------------------

fn formula_exactness() -> Outcome {
    let mut bad = Vec::new();
    for o in 0..=10usize {
        let expected = (o as f64 / 3.0).min(1.0);
        if distant_label(o).to_bits() != expected.to_bits() {
            bad.push(format!("distant_label({o})"));
        }
    }
    let answers = |n: usize| -> Vec<String> {
        let mut a = vec!["cat".to_string(); n];
        a.resize(10, "dog".to_string());
        a
    };
    for (n, expected) in [(0usize, 0.0), (2, 2.0 / 3.0), (3, 1.0), (7, 1.0)] {
        if vqa_accuracy("cat", &answers(n)) != expected {
            bad.push(format!("vqa_accuracy with {n} matches"));
        }
    }
    outcome(
        bad.is_empty(),
        if bad.is_empty() {
            "11 labels, 4 accuracy cases exact".into()
        } else {
            bad.join(", ")
        },
    )
}

// ----- retrieval vs brute force -----------------------------------------

fn oracle_dot(a: &[f32], b: &[f32]) -> f64 {
    let mut s = 0.0f64;
    for i in 0..a.len() {
        s += f64::from(a[i]) * f64::from(b[i]);
    }
    s
}

fn oracle_sorted(mut all: Vec<(String, f64)>) -> Vec<(String, f64)> {
    all.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then(x.0.cmp(&y.0)));
    all
}

fn oracle_top_k(q: &[f32], rows: &[(String, Vec<f32>)], k: usize) -> Vec<(String, f64)> {
    let all = rows
        .iter()
        .map(|(id, v)| (id.clone(), oracle_dot(q, v)))
        .collect();
    oracle_sorted(all).into_iter().take(k).collect()
}

fn retrieval_oracle() -> Outcome {
    const INSTANCES: u64 = 120;
    const DIM: usize = 8;
    const CANDIDATES: usize = 200;
    const PATCHES: usize = 3;
    const K: usize = 20;
    let mut mismatches = 0;
    let mut ties_seen = 0usize;
    for inst in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + inst);
        // small integer grid makes exact score ties common
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f32> {
            (0..DIM)
                .map(|_| rng.random_range(-2i32..=2) as f32 * 0.5)
                .collect()
        };
        let mut order: Vec<usize> = (0..CANDIDATES).collect();
        order.shuffle(&mut rng);
        let rows: Vec<(String, Vec<f32>)> = order
            .iter()
            .map(|i| (format!("c{i:03}"), draw(&mut rng)))
            .collect();
        let mut table = EmbeddingTable::new(DIM).unwrap();
        for (id, v) in &rows {
            table.insert(id.clone(), v).unwrap();
        }
        let patches: Vec<Vec<f32>> = (0..PATCHES).map(|_| draw(&mut rng)).collect();

        for p in &patches {
            let expect = oracle_top_k(p, &rows, K);
            ties_seen += expect.windows(2).filter(|w| w[0].1 == w[1].1).count();
            if top_k(p, &table, K).unwrap() != expect {
                mismatches += 1;
            }
        }

        let mut best: BTreeMap<String, f64> = BTreeMap::new();
        for p in &patches {
            for (id, s) in oracle_top_k(p, &rows, K) {
                let e = best.entry(id).or_insert(f64::NEG_INFINITY);
                if s > *e {
                    *e = s;
                }
            }
        }
        let expect: Vec<(String, f64)> = oracle_sorted(best.into_iter().collect())
            .into_iter()
            .take(K)
            .collect();
        let refs: Vec<&[f32]> = patches.iter().map(Vec::as_slice).collect();
        let got = retrieve_and_aggregate("q", &refs, &table, K, K).unwrap();
        if got.items != expect {
            mismatches += 1;
        }
    }
    outcome(
        mismatches == 0 && ties_seen > 0,
        format!("{INSTANCES} instances, {mismatches} mismatches, {ties_seen} tied adjacent pairs"),
    )
}

// ----- gradient checks --------------------------------------------------

const FD_STEP: f64 = 1e-6;
const LOSS_REL_TOL: f64 = 1e-5;
const PARAM_REL_TOL: f64 = 1e-4;

/// ||a - b|| / max(||a||, ||b||, 1e-12)
fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-12)
}

fn random_labels(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let l: Vec<f64> = (0..n).map(|_| rng.random_range(0..4usize) as f64 / 3.0).collect();
        if l.iter().any(|&x| x != l[0]) {
            return l;
        }
    }
}

fn gradient_checks() -> Outcome {
    const INSTANCES: u64 = 60;
    let mut worst_loss: f64 = 0.0;
    let mut worst_param: f64 = 0.0;
    for inst in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + inst);
        let n = rng.random_range(2..12usize);
        let labels = random_labels(&mut rng, n);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let (_, grad) = pairwise_loss_and_grad(&labels, &scores).unwrap();
        let numeric: Vec<f64> = (0..n)
            .map(|i| {
                let (mut p, mut m) = (scores.clone(), scores.clone());
                p[i] += FD_STEP;
                m[i] -= FD_STEP;
                (pairwise_loss(&labels, &p).unwrap() - pairwise_loss(&labels, &m).unwrap()) / (2.0 * FD_STEP)
            })
            .collect();
        worst_loss = worst_loss.max(rel_error(&grad, &numeric));

        let width = rng.random_range(2..10usize);
        let mut model = RerankerModel::init(width, inst).unwrap();
        for p in model.params_mut() {
            *p += rng.random_range(-0.2..0.2);
        }
        let examples: Vec<RerankExample> = (0..3)
            .map(|e| {
                let m = rng.random_range(3..8usize);
                RerankExample {
                    question_id: format!("q{e}"),
                    candidate_ids: (0..m).map(|i| format!("c{i}")).collect(),
                    features: (0..m)
                        .map(|_| {
                            let mut f = [0.0; FEATURE_DIM];
                            f.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
                            f
                        })
                        .collect(),
                    labels: random_labels(&mut rng, m),
                }
            })
            .collect();
        let batch: Vec<(usize, Vec<usize>)> = examples
            .iter()
            .enumerate()
            .map(|(i, ex)| (i, (0..ex.labels.len()).collect()))
            .collect();
        let (_, analytic) = batch_loss_and_grad(&model, &examples, &batch).unwrap();
        let mut numeric = vec![0.0; analytic.len()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let orig = model.params()[i];
            model.params_mut()[i] = orig + FD_STEP;
            let lp = batch_loss_and_grad(&model, &examples, &batch).unwrap().0;
            model.params_mut()[i] = orig - FD_STEP;
            let lm = batch_loss_and_grad(&model, &examples, &batch).unwrap().0;
            model.params_mut()[i] = orig;
            *slot = (lp - lm) / (2.0 * FD_STEP);
        }
        worst_param = worst_param.max(rel_error(&analytic, &numeric));
    }
    outcome(
        worst_loss <= LOSS_REL_TOL && worst_param <= PARAM_REL_TOL,
        format!(
            "{INSTANCES} instances, worst rel err loss {worst_loss:.2e} (tol {LOSS_REL_TOL:.0e}), params {worst_param:.2e} (tol {PARAM_REL_TOL:.0e})"
        ),
    )
}

// ----- hand values ------------------------------------------------------

fn hand_values() -> Outcome {
    const TOL: f64 = 1e-9;
    let expected_loss = (1.0 + (-2.0f64).exp()).ln();
    let loss = pairwise_loss(&[1.0, 0.0], &[2.0, 0.0]).unwrap();
    let (_, g) = pairwise_loss_and_grad(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
    let pass = (loss - expected_loss).abs() <= TOL
        && (loss - 0.126928).abs() <= 5e-7
        && (g[0] + 0.5).abs() <= TOL
        && (g[1] - 0.5).abs() <= TOL;
    outcome(
        pass,
        format!(
            "loss {loss:.9}, symmetric grad ({:.9}, {:.9}), tol {TOL:.0e}",
            g[0], g[1]
        ),
    )
}

// ----- reranker learning ------------------------------------------------

const LEARNING_MIN_SEEDS: usize = 4;
const LEARNING_MIN_MEDIAN_GAIN: f64 = 0.05;

fn hits1_in_order(lists: &[RankedList], labels: &LabelSet) -> f64 {
    let hits = lists
        .iter()
        .filter(|l| {
            l.items
                .first()
                .is_some_and(|(id, _)| labels.get(&l.question_id, id) >= 1.0 / 3.0)
        })
        .count();
    hits as f64 / lists.len() as f64
}

fn reranker_learning() -> Outcome {
    let cfg = desk_config();
    let mut wins = 0;
    let mut gains = Vec::new();
    let mut per_seed = Vec::new();
    for seed in SEEDS {
        let (corpus, bundle) = synthetic_bundle(&cfg, seed);
        assert!(corpus.questions.len() >= 500 && cfg.synth_distractor_rate == 0.5);
        let texts = &bundle.embeddings.candidate_texts;
        let lists = retrieve_all(
            &corpus.questions,
            &bundle.embeddings.question_patches,
            texts,
            cfg.retrieval(),
        )
        .unwrap();
        let labels = label_lists(&corpus.questions, &lists, &bundle.kb).unwrap();
        let (sub, dev) = dev_split(lists.len(), cfg.dev_fraction, seed).unwrap();
        let pick = |idx: &[usize]| idx.iter().map(|&i| lists[i].clone()).collect::<Vec<_>>();
        let (sub_lists, dev_lists) = (pick(&sub), pick(&dev));
        let train = build_examples(&corpus.questions, &sub_lists, &labels, &bundle.embeddings).unwrap();
        let dev_ex = build_examples(&corpus.questions, &dev_lists, &labels, &bundle.embeddings).unwrap();
        let mut rcfg = cfg.reranker_train();
        rcfg.seed = seed;
        let model = train_reranker(&train, &dev_ex, &rcfg).unwrap().model;
        let trained = dev_hits(&model, &dev_ex, 1).unwrap();
        let baseline = hits1_in_order(&dev_lists, &labels);
        wins += usize::from(trained > baseline);
        gains.push(trained - baseline);
        per_seed.push(format!("{baseline:.3}->{trained:.3}"));
    }
    let med = mmrerank::experiments::median(&gains);
    outcome(
        wins >= LEARNING_MIN_SEEDS && med >= LEARNING_MIN_MEDIAN_GAIN,
        format!(
            "dev Hits@1 retrieval->reranked {}, improved {wins}/5 (need {LEARNING_MIN_SEEDS}), median gain {med:+.3} (need {LEARNING_MIN_MEDIAN_GAIN})",
            fmt_seeds(&per_seed)
        ),
    )
}

// ----- ablation and discrepancy -----------------------------------------

fn ablation() -> Outcome {
    use CandidateSource::*;
    let cfg = desk_config();
    let mut wins = 0;
    let mut per_seed = Vec::new();
    for seed in SEEDS {
        let (_, bundle) = synthetic_bundle(&cfg, seed);
        let r = run_ablation(&bundle, &cfg.experiment(), &[seed]).unwrap();
        let (n, ret, rer) = (
            cell(&r, NoRetrieval, NoRetrieval),
            cell(&r, Retrieval, Retrieval),
            cell(&r, Retrieval, Reranked),
        );
        wins += usize::from(n < ret && ret < rer);
        per_seed.push(format!("{n:.3}<{ret:.3}<{rer:.3}"));
    }
    outcome(
        wins >= 4,
        format!(
            "no-retrieval < retrieval < reranked {} holds {wins}/5 (need 4)",
            fmt_seeds(&per_seed)
        ),
    )
}

struct Discrepancy {
    strong: Outcome,
    oracle_max: Outcome,
    weak: Outcome,
}

fn discrepancy() -> Discrepancy {
    use CandidateSource::*;
    let cfg = desk_config();
    let sources = [Retrieval, Reranked, Oracle];
    let (mut strong, mut max, mut weak) = (0, 0, 0);
    let (mut s_detail, mut m_detail, mut w_detail) = (Vec::new(), Vec::new(), Vec::new());
    for seed in SEEDS {
        let (_, bundle) = synthetic_bundle(&cfg, seed);
        let r = run_discrepancy_matrix(&bundle, &cfg.experiment(), &sources, &sources, &[seed]).unwrap();
        let g = |a, b| cell(&r, a, b);
        let (ro, rr, or) = (
            g(Retrieval, Oracle),
            g(Retrieval, Retrieval),
            g(Oracle, Retrieval),
        );
        strong += usize::from(ro > rr && rr > or);
        s_detail.push(format!("{ro:.3}>{rr:.3}>{or:.3}"));
        let oo = g(Oracle, Oracle);
        let rest = r
            .cells
            .iter()
            .filter(|c| !(c.train == Oracle && c.test == Oracle))
            .map(|c| c.per_seed[0])
            .fold(f64::NEG_INFINITY, f64::max);
        max += usize::from(oo > rest);
        m_detail.push(format!("{oo:.3}>{rest:.3}"));
        let (a, b) = (g(Retrieval, Reranked), g(Reranked, Reranked));
        weak += usize::from(a >= b);
        w_detail.push(format!("{:+.3}", a - b));
    }
    Discrepancy {
        strong: outcome(
            strong >= 4,
            format!(
                "ret->oracle > ret->ret > oracle->ret {} holds {strong}/5 (need 4)",
                fmt_seeds(&s_detail)
            ),
        ),
        oracle_max: outcome(
            max >= 4,
            format!(
                "oracle->oracle above every other cell {} holds {max}/5 (need 4)",
                fmt_seeds(&m_detail)
            ),
        ),
        weak: outcome(
            weak >= 3,
            format!(
                "ret->reranked minus reranked->reranked {} non-negative {weak}/5 (need 3)",
                fmt_seeds(&w_detail)
            ),
        ),
    }
}

// ----- oracle upper bound -----------------------------------------------

fn oracle_upper_bound() -> Outcome {
    let cfg = desk_config();
    let mut violations = 0;
    let mut checked = 0;
    for seed in [0u64, 1] {
        let (corpus, bundle) = synthetic_bundle(&cfg, seed);
        let texts = &bundle.embeddings.candidate_texts;
        let lists = retrieve_all(
            &corpus.questions,
            &bundle.embeddings.question_patches,
            texts,
            cfg.retrieval(),
        )
        .unwrap();
        let labels = label_lists(&corpus.questions, &lists, &bundle.kb).unwrap();
        let examples = build_examples(&corpus.questions, &lists, &labels, &bundle.embeddings).unwrap();
        let mut rcfg = cfg.reranker_train();
        rcfg.steps = 300;
        rcfg.seed = seed;
        let model = train_reranker(&examples, &examples, &rcfg).unwrap().model;
        let reranked = rerank_all(&model, &corpus.questions, &lists, &bundle.embeddings).unwrap();
        let no_retrieval: Vec<RankedList> = lists
            .iter()
            .map(|l| RankedList::new(l.question_id.clone(), vec![]))
            .collect();
        let oracle: Vec<RankedList> = lists.iter().map(|l| oracle_rank(l, &labels)).collect();
        let hit = |l: &RankedList, k: usize| {
            l.items
                .iter()
                .take(k)
                .any(|(id, _)| labels.get(&l.question_id, id) >= 1.0 / 3.0)
        };
        for k in [1, 5, 20] {
            for (i, o) in oracle.iter().enumerate() {
                for other in [&lists[i], &reranked[i], &no_retrieval[i]] {
                    checked += 1;
                    if hit(other, k) && !hit(o, k) {
                        violations += 1;
                    }
                }
            }
        }
    }
    outcome(
        violations == 0,
        format!("{checked} (question, source, k) comparisons, {violations} violations"),
    )
}

// ----- determinism ------------------------------------------------------

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    std::fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

fn run_pipeline(dir: &Path, jobs: &str) -> anyhow::Result<()> {
    let d = |f: &str| dir.join(f).to_str().unwrap().to_owned();
    let small = [
        "--synth-questions",
        "160",
        "--synth-candidates",
        "320",
        "--reranker-steps",
        "150",
        "--eval-interval",
        "50",
        "--reader-steps",
        "60",
        "--seeds",
        "0,1",
        "--jobs",
        jobs,
    ];
    let run = |sub: &str, extra: &[&str]| -> anyhow::Result<()> {
        let mut args = vec!["mmrerank".to_string(), sub.to_string()];
        args.extend(small.iter().map(|s| s.to_string()));
        if sub != "gen-synth" {
            args.extend(["--config".to_string(), d("data/bundle.conf")]);
        }
        args.extend(extra.iter().map(|s| s.to_string()));
        run_args(args).map(drop)
    };
    run("gen-synth", &["-o", &d("data")])?;
    run("retrieve", &["-o", &d("ret.jsonl")])?;
    run("label", &["--lists", &d("ret.jsonl"), "-o", &d("labels.jsonl")])?;
    let labeled = ["--lists", &d("ret.jsonl"), "--labels", &d("labels.jsonl")];
    run("train-reranker", &[&labeled[..], &["-o", &d("rr.json")]].concat())?;
    run(
        "rerank",
        &[
            &labeled[..],
            &["--reranker", &d("rr.json"), "-o", &d("rer.jsonl")],
        ]
        .concat(),
    )?;
    run(
        "oracle-rank",
        &[&labeled[..], &["-o", &d("oracle.jsonl")]].concat(),
    )?;
    run(
        "train-reader",
        &["--lists", &d("ret.jsonl"), "-o", &d("reader.json")],
    )?;
    let read = ["--lists", &d("rer.jsonl"), "--reader", &d("reader.json")];
    run("predict", &[&read[..], &["-o", &d("pred.jsonl")]].concat())?;
    run(
        "predict",
        &[&read[..], &["--inject", "-o", &d("pred_inj.jsonl")]].concat(),
    )?;
    run(
        "evaluate",
        &["--predictions", &d("pred.jsonl"), "-o", &d("eval.json")],
    )?;
    run("ablation", &["-o", &d("ablation.json")])?;
    run("discrepancy", &["-o", &d("discrepancy.json")])?;
    Ok(())
}

fn determinism() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let work = root.path().join("work");
    let mut snaps = Vec::new();
    for jobs in ["4", "1"] {
        if work.exists() {
            std::fs::remove_dir_all(&work).unwrap();
        }
        std::fs::create_dir_all(&work).unwrap();
        if let Err(e) = run_pipeline(&work, jobs) {
            return outcome(false, format!("pipeline failed: {e:#}"));
        }
        snaps.push(snapshot(&work));
    }
    let differing: Vec<String> = snaps[0]
        .iter()
        .filter(|(p, bytes)| snaps[1].get(*p) != Some(*bytes))
        .map(|(p, _)| p.display().to_string())
        .collect();
    let same_set = snaps[0].keys().eq(snaps[1].keys());
    outcome(
        differing.is_empty() && same_set,
        if differing.is_empty() {
            format!(
                "{} artifacts byte-identical across two runs (4 and 1 threads)",
                snaps[0].len()
            )
        } else {
            format!("differing: {}", differing.join(", "))
        },
    )
}

// ----- driver -----------------------------------------------------------

fn report(name: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let o = f();
    let elapsed = t.elapsed();
    let in_time = limit.is_none_or(|l| elapsed <= l);
    let pass = o.pass && in_time;
    let budget = limit.map_or(String::new(), |l| format!(" / {}s", l.as_secs()));
    println!(
        "{} {name}: {} ({:.1}s{budget})",
        if pass { "PASS" } else { "FAIL" },
        o.detail,
        elapsed.as_secs_f64()
    );
    pass
}

fn main() {
    let secs = |s| Some(Duration::from_secs(s));
    let mut results = vec![
        report("formula exactness", secs(1), formula_exactness),
        report("retrieval oracle equivalence", secs(10), retrieval_oracle),
        report("gradient checks", secs(30), gradient_checks),
        report("hand values", None, hand_values),
        report("reranker learning", secs(300), reranker_learning),
        report("ablation ordering", secs(600), ablation),
    ];
    let t = Instant::now();
    let d = discrepancy();
    let elapsed = t.elapsed().as_secs_f64();
    let in_time = elapsed <= 900.0;
    for (name, o) in [
        ("discrepancy ordering", d.strong),
        ("discrepancy oracle->oracle maximal", d.oracle_max),
        ("discrepancy ret->reranked >= reranked->reranked", d.weak),
    ] {
        let pass = o.pass && in_time;
        println!(
            "{} {name}: {} ({elapsed:.1}s shared / 900s)",
            if pass { "PASS" } else { "FAIL" },
            o.detail
        );
        results.push(pass);
    }
    results.push(report("oracle upper bound", None, oracle_upper_bound));
    results.push(report("determinism", None, determinism));
    let failed = results.iter().filter(|p| !**p).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
