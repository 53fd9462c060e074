//! Relevance supervision and ranking/answer metrics.
//!
//! Distant labels count how many of a question's ten annotations appear in
//! a candidate's knowledge text and map the count `o` to `min(o/3, 1)`. The
//! same clamp scores an answer prediction against the annotations.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{contains_normalized, normalize_answer, KnowledgeBase, Question};
use crate::error::{Error, Result};
use crate::io;
use crate::reader::ReaderModel;
use crate::retrieval::{score_desc, RankedList};

/// Smallest nonzero distant label; a candidate at or above it counts as a hit.
pub const POSITIVE_THRESHOLD: f64 = 1.0 / 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Label {
    pub question_id: String,
    pub candidate_id: String,
    pub relevance: f64,
}

/// (question, candidate) → relevance, 0 for absent pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelSet {
    by_question: BTreeMap<String, BTreeMap<String, f64>>,
}

impl LabelSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, label: Label) -> Result<()> {
        if !(0.0..=1.0).contains(&label.relevance) {
            return Err(Error::InvalidArgument(format!(
                "relevance {} for ({}, {}) outside [0, 1]",
                label.relevance, label.question_id, label.candidate_id
            )));
        }
        let per_q = self.by_question.entry(label.question_id.clone()).or_default();
        if per_q
            .insert(label.candidate_id.clone(), label.relevance)
            .is_some()
        {
            return Err(Error::DuplicateId {
                kind: "label",
                id: format!("{}/{}", label.question_id, label.candidate_id),
            });
        }
        Ok(())
    }

    pub fn get(&self, question_id: &str, candidate_id: &str) -> f64 {
        self.by_question
            .get(question_id)
            .and_then(|m| m.get(candidate_id))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn has_question(&self, question_id: &str) -> bool {
        self.by_question.contains_key(question_id)
    }

    pub fn len(&self) -> usize {
        self.by_question.values().map(|m| m.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = Label> + '_ {
        self.by_question.iter().flat_map(|(q, m)| {
            m.iter().map(move |(c, &r)| Label {
                question_id: q.clone(),
                candidate_id: c.clone(),
                relevance: r,
            })
        })
    }

    pub fn merge(&mut self, other: LabelSet) -> Result<()> {
        for l in other.iter() {
            self.insert(l)?;
        }
        Ok(())
    }
}

pub fn write_labels(labels: &LabelSet, path: &Path) -> Result<()> {
    io::write_jsonl(path, labels.iter())
}

pub fn load_labels(path: &Path) -> Result<LabelSet> {
    let mut set = LabelSet::new();
    for (line, label) in io::read_jsonl::<Label>(path)? {
        set.insert(label).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
    }
    Ok(set)
}

/// Number of annotations (with multiplicity) whose normalized form occurs in
/// the normalized candidate text on token boundaries.
pub fn match_count(answers: &[String], candidate_text: &str) -> usize {
    let text = normalize_answer(candidate_text);
    count_in_normalized(answers, &text)
}

fn count_in_normalized(answers: &[String], normalized_text: &str) -> usize {
    answers
        .iter()
        .filter(|a| contains_normalized(normalized_text, &normalize_answer(a)))
        .count()
}

pub fn distant_label(o: usize) -> f64 {
    (o as f64 / 3.0).min(1.0)
}

/// `min(m/3, 1)` with `m` the number of annotations equal to the prediction
/// after normalization.
pub fn vqa_accuracy(prediction: &str, answers: &[String]) -> f64 {
    let p = normalize_answer(prediction);
    let m = answers.iter().filter(|a| normalize_answer(a) == p).count();
    distant_label(m)
}

/// Distant labels for every candidate of every list.
pub fn label_lists(questions: &[Question], lists: &[RankedList], kb: &KnowledgeBase) -> Result<LabelSet> {
    let by_id: BTreeMap<&str, &Question> = questions.iter().map(|q| (q.question_id.as_str(), q)).collect();
    let mut set = LabelSet::new();
    for list in lists {
        let q = by_id
            .get(list.question_id.as_str())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown question {}", list.question_id)))?;
        for cid in list.ids() {
            let o = count_in_normalized(&q.answers, kb.text(cid)?);
            set.insert(Label {
                question_id: q.question_id.clone(),
                candidate_id: cid.to_owned(),
                relevance: distant_label(o),
            })?;
        }
    }
    Ok(set)
}

pub fn hits_at_k(list: &RankedList, labels: &LabelSet, k: usize) -> bool {
    list.ids()
        .take(k)
        .any(|c| labels.get(&list.question_id, c) >= POSITIVE_THRESHOLD)
}

/// Fraction of lists with a hit in the top `k`. Empty input gives 0.
pub fn mean_hits_at_k(lists: &[RankedList], labels: &LabelSet, k: usize) -> f64 {
    if lists.is_empty() {
        return 0.0;
    }
    let hits = lists.iter().filter(|l| hits_at_k(l, labels, k)).count();
    hits as f64 / lists.len() as f64
}

/// Reorders by label descending, then original score descending, then id.
/// Output scores are the labels.
pub fn oracle_rank(list: &RankedList, labels: &LabelSet) -> RankedList {
    let mut items: Vec<(f64, &String, f64)> = list
        .items
        .iter()
        .map(|(c, s)| (labels.get(&list.question_id, c), c, *s))
        .collect();
    items.sort_by(|a, b| {
        score_desc(a.0, b.0)
            .then_with(|| score_desc(a.2, b.2))
            .then_with(|| a.1.cmp(b.1))
    });
    RankedList::new(
        list.question_id.clone(),
        items.into_iter().map(|(r, c, _)| (c.clone(), r)).collect(),
    )
}

/// Leave-one-out reader labels. For each candidate the raw score is the drop
/// in the reader's probability of its own full-list answer when that
/// candidate is removed; raw scores are min-max normalized per question
/// (all-equal → 0.5).
pub fn distillation_labels(
    reader: &ReaderModel,
    question: &Question,
    list: &RankedList,
    kb: &KnowledgeBase,
) -> Result<Vec<Label>> {
    if reader.is_untrained() {
        return Err(Error::Untrained);
    }
    let raw = distillation_deltas(reader, question, list, kb)?;
    let (lo, hi) = raw
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| {
            (lo.min(r), hi.max(r))
        });
    Ok(list
        .ids()
        .zip(&raw)
        .map(|(cid, &r)| Label {
            question_id: question.question_id.clone(),
            candidate_id: cid.to_owned(),
            relevance: if hi - lo > 0.0 { (r - lo) / (hi - lo) } else { 0.5 },
        })
        .collect())
}

/// Raw leave-one-out deltas, before normalization.
pub fn distillation_deltas(
    reader: &ReaderModel,
    question: &Question,
    list: &RankedList,
    kb: &KnowledgeBase,
) -> Result<Vec<f64>> {
    let (answer, p_full) = reader.predict_with_probability(question, list, kb)?;
    (0..list.len())
        .map(|skip| {
            let mut reduced = list.clone();
            reduced.items.remove(skip);
            reader
                .answer_probability(question, &reduced, kb, &answer)
                .map(|p| p_full - p)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn strs(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn match_count_examples() {
        assert_eq!(
            match_count(&strs(&["chicago"; 10]), "Chicago-style deep dish"),
            10
        );
        assert_eq!(match_count(&strs(&["paris"; 10]), "Chicago-style deep dish"), 0);
        let answers = strs(&["cat", "cat", "dog", "x1", "x2", "x3", "x4", "x5", "x6", "x7"]);
        assert_eq!(match_count(&answers, "a cat and a dog"), 3);
        // empty normalized answers never match
        assert_eq!(match_count(&strs(&["the", "!!"]), "the cat"), 0);
    }

    #[test]
    fn distant_label_is_exact() {
        assert_eq!(distant_label(0), 0.0);
        assert_eq!(distant_label(1), 1.0 / 3.0);
        assert_eq!(distant_label(2), 2.0 / 3.0);
        for o in 3..=10 {
            assert_eq!(distant_label(o), 1.0);
        }
    }

    #[test]
    fn vqa_accuracy_clamps() {
        let mut answers = strs(&["red"; 5]);
        answers.extend(strs(&["blue"; 3]));
        answers.extend(strs(&["green"; 2]));
        assert_eq!(vqa_accuracy("Red", &answers), 1.0);
        assert_eq!(vqa_accuracy("green!", &answers), 2.0 / 3.0);
        assert_eq!(vqa_accuracy("pink", &answers), 0.0);
    }

    fn labels(q: &str, pairs: &[(&str, f64)]) -> LabelSet {
        let mut s = LabelSet::new();
        for (c, r) in pairs {
            s.insert(Label {
                question_id: q.into(),
                candidate_id: (*c).into(),
                relevance: *r,
            })
            .unwrap();
        }
        s
    }

    #[test]
    fn hits_examples() {
        let list = RankedList::new("q", vec![("a".into(), 3.0), ("b".into(), 2.0)]);
        assert!(hits_at_k(&list, &labels("q", &[("a", 1.0)]), 1));
        assert!(!hits_at_k(&list, &labels("q", &[("b", 1.0)]), 1));
        assert!(hits_at_k(&list, &labels("q", &[("b", 1.0)]), 2));
        assert!(!hits_at_k(&list, &labels("q", &[]), 5));
    }

    #[test]
    fn oracle_examples() {
        let list = RankedList::new(
            "q",
            vec![("c1".into(), 0.9), ("c2".into(), 0.8), ("c3".into(), 0.7)],
        );
        let l = labels("q", &[("c1", 1.0), ("c2", 0.0), ("c3", 2.0 / 3.0)]);
        let ranked = oracle_rank(&list, &l);
        assert_eq!(ranked.ids().collect::<Vec<_>>(), vec!["c1", "c3", "c2"]);

        let none = oracle_rank(&list, &LabelSet::new());
        assert_eq!(none.ids().collect::<Vec<_>>(), vec!["c1", "c2", "c3"]);
        none.validate().unwrap();
    }

    #[test]
    fn label_set_rejects_out_of_range_and_duplicates() {
        let mut s = LabelSet::new();
        let l = Label {
            question_id: "q".into(),
            candidate_id: "c".into(),
            relevance: 1.5,
        };
        assert!(s.insert(l).is_err());
        let l = Label {
            question_id: "q".into(),
            candidate_id: "c".into(),
            relevance: 0.5,
        };
        s.insert(l.clone()).unwrap();
        assert!(s.insert(l).is_err());
        assert_eq!(s.get("q", "zzz"), 0.0);
    }

    #[test]
    fn labels_roundtrip_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.jsonl");
        let l = labels("q", &[("a", 1.0), ("b", 1.0 / 3.0)]);
        write_labels(&l, &p).unwrap();
        assert_eq!(load_labels(&p).unwrap(), l);
    }

    fn arb_list() -> impl Strategy<Value = (RankedList, LabelSet)> {
        proptest::collection::vec((0u8..4, -5.0f64..5.0), 1..25).prop_map(|rows| {
            let mut items: Vec<(String, f64)> = rows
                .iter()
                .enumerate()
                .map(|(i, (_, s))| (format!("c{i:02}"), *s))
                .collect();
            items.sort_by(crate::retrieval::rank_order);
            let mut set = LabelSet::new();
            for (i, (lab, _)) in rows.iter().enumerate() {
                set.insert(Label {
                    question_id: "q".into(),
                    candidate_id: format!("c{i:02}"),
                    relevance: distant_label(*lab as usize),
                })
                .unwrap();
            }
            (RankedList::new("q", items), set)
        })
    }

    proptest! {
        #[test]
        fn distant_label_monotone(o in 0usize..10) {
            prop_assert!(distant_label(o) <= distant_label(o + 1));
        }

        #[test]
        fn vqa_accuracy_shares_distant_label(m in 0usize..=10) {
            let mut answers = vec!["yes".to_string(); m];
            answers.extend(vec!["no".to_string(); 10 - m]);
            prop_assert_eq!(vqa_accuracy("yes", &answers), distant_label(m));
        }

        #[test]
        fn hits_monotone_in_k((list, labels) in arb_list(), k in 1usize..25) {
            prop_assert!(hits_at_k(&list, &labels, k) <= hits_at_k(&list, &labels, k + 1));
        }

        #[test]
        fn oracle_is_sorted_permutation((list, labels) in arb_list(), k in 1usize..25) {
            let o = oracle_rank(&list, &labels);
            let mut a: Vec<&str> = list.ids().collect();
            let mut b: Vec<&str> = o.ids().collect();
            a.sort();
            b.sort();
            prop_assert_eq!(a, b);
            let rel: Vec<f64> = o.ids().map(|c| labels.get("q", c)).collect();
            prop_assert!(rel.windows(2).all(|w| w[0] >= w[1]));
            o.validate().unwrap();
            // oracle upper bound, and a guaranteed hit whenever any positive exists
            prop_assert!(hits_at_k(&o, &labels, k) >= hits_at_k(&list, &labels, k));
            let any_pos = list.ids().any(|c| labels.get("q", c) >= POSITIVE_THRESHOLD);
            prop_assert_eq!(hits_at_k(&o, &labels, 1), any_pos);
        }
    }
}
