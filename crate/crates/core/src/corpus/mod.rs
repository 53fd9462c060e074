//! Questions, knowledge candidates, embeddings and the synthetic corpus.

mod embeddings;
mod normalize;
mod synthetic;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

pub use embeddings::{
    dot, load_embeddings, write_embeddings, write_embeddings_jsonl, EmbeddingTable, EMB1_MAGIC,
};
pub use normalize::{contains_normalized, normalize_answer};
pub use synthetic::{generate_synthetic, SyntheticConfig, SyntheticCorpus};

/// Number of answer annotations carried by every question.
pub const NUM_ANSWERS: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub question_id: String,
    pub image_id: String,
    pub text: String,
    pub answers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub candidate_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_id: Option<String>,
    pub caption: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub section_text: Option<String>,
}

impl Candidate {
    pub fn text_only(id: impl Into<String>, caption: impl Into<String>) -> Self {
        Candidate {
            candidate_id: id.into(),
            image_id: None,
            caption: caption.into(),
            section_text: None,
        }
    }

    /// Caption, plus the section text when present and requested, joined by a space.
    pub fn knowledge_text(&self, include_section: bool) -> String {
        match (&self.section_text, include_section) {
            (Some(section), true) => format!("{} {}", self.caption, section),
            _ => self.caption.clone(),
        }
    }
}

/// Loaded questions plus how many annotations each padded question received.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QuestionSet {
    pub questions: Vec<Question>,
    /// question_id → number of padded annotations (only questions that needed padding).
    pub padding: BTreeMap<String, usize>,
}

/// Pads an annotation list to [`NUM_ANSWERS`] by repeating its most frequent
/// entry (first occurrence wins ties). Returns the number of entries added.
pub fn pad_answers(answers: &mut Vec<String>) -> Result<usize> {
    if answers.is_empty() {
        return Err(Error::InvalidArgument("question has no answers".into()));
    }
    if answers.len() > NUM_ANSWERS {
        return Err(Error::InvalidArgument(format!(
            "question has {} answers, at most {NUM_ANSWERS} allowed",
            answers.len()
        )));
    }
    let missing = NUM_ANSWERS - answers.len();
    if missing > 0 {
        let mut best = &answers[0];
        let mut best_count = 0;
        for a in answers.iter() {
            let c = answers.iter().filter(|b| *b == a).count();
            if c > best_count {
                best = a;
                best_count = c;
            }
        }
        let modal = best.clone();
        answers.extend(std::iter::repeat_n(modal, missing));
    }
    Ok(missing)
}

pub fn load_questions(path: &Path) -> Result<QuestionSet> {
    let mut set = QuestionSet::default();
    let mut seen = HashSet::new();
    for (line, mut q) in io::read_jsonl::<Question>(path)? {
        if q.question_id.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty question_id".into(),
            });
        }
        if !seen.insert(q.question_id.clone()) {
            return Err(Error::DuplicateId {
                kind: "question_id",
                id: q.question_id,
            });
        }
        let padded = pad_answers(&mut q.answers).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        if padded > 0 {
            set.padding.insert(q.question_id.clone(), padded);
        }
        set.questions.push(q);
    }
    Ok(set)
}

pub fn load_candidates(path: &Path) -> Result<Vec<Candidate>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (line, c) in io::read_jsonl::<Candidate>(path)? {
        validate_candidate(&c).map_err(|message| Error::Parse { line, message })?;
        if !seen.insert(c.candidate_id.clone()) {
            return Err(Error::DuplicateId {
                kind: "candidate_id",
                id: c.candidate_id,
            });
        }
        out.push(c);
    }
    Ok(out)
}

fn validate_candidate(c: &Candidate) -> std::result::Result<(), String> {
    if c.candidate_id.is_empty() {
        return Err("empty candidate_id".into());
    }
    if c.caption.trim().is_empty() {
        return Err(format!("candidate {} has an empty caption", c.candidate_id));
    }
    Ok(())
}

/// An externally generated candidate attached to one question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalCandidate {
    pub question_id: String,
    #[serde(flatten)]
    pub candidate: Candidate,
}

/// Loads external candidates grouped by question, preserving file order within each group.
pub fn load_external_candidates(path: &Path) -> Result<BTreeMap<String, Vec<Candidate>>> {
    let mut out: BTreeMap<String, Vec<Candidate>> = BTreeMap::new();
    let mut seen = HashSet::new();
    for (line, e) in io::read_jsonl::<ExternalCandidate>(path)? {
        validate_candidate(&e.candidate).map_err(|message| Error::Parse { line, message })?;
        if !seen.insert(e.candidate.candidate_id.clone()) {
            return Err(Error::DuplicateId {
                kind: "candidate_id",
                id: e.candidate.candidate_id,
            });
        }
        out.entry(e.question_id).or_default().push(e.candidate);
    }
    Ok(out)
}

pub fn write_questions(questions: &[Question], path: &Path) -> Result<()> {
    io::write_jsonl(path, questions)
}

pub fn write_candidates(candidates: &[Candidate], path: &Path) -> Result<()> {
    io::write_jsonl(path, candidates)
}

pub fn write_external_candidates(external: &BTreeMap<String, Vec<Candidate>>, path: &Path) -> Result<()> {
    io::write_jsonl(
        path,
        external.iter().flat_map(|(qid, cs)| {
            cs.iter().map(move |c| ExternalCandidate {
                question_id: qid.clone(),
                candidate: c.clone(),
            })
        }),
    )
}

/// Candidates indexed by id, with their normalized knowledge text cached.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeBase {
    candidates: Vec<Candidate>,
    normalized: Vec<String>,
    index: HashMap<String, usize>,
    include_section: bool,
}

impl KnowledgeBase {
    pub fn new(candidates: Vec<Candidate>, include_section: bool) -> Result<Self> {
        let mut kb = KnowledgeBase {
            include_section,
            ..Default::default()
        };
        kb.extend(candidates)?;
        Ok(kb)
    }

    pub fn extend(&mut self, candidates: impl IntoIterator<Item = Candidate>) -> Result<()> {
        for c in candidates {
            if self.index.contains_key(&c.candidate_id) {
                return Err(Error::DuplicateId {
                    kind: "candidate_id",
                    id: c.candidate_id,
                });
            }
            self.index.insert(c.candidate_id.clone(), self.candidates.len());
            self.normalized
                .push(normalize_answer(&c.knowledge_text(self.include_section)));
            self.candidates.push(c);
        }
        Ok(())
    }

    pub fn include_section(&self) -> bool {
        self.include_section
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Candidate> {
        self.index.get(id).map(|&i| &self.candidates[i])
    }

    /// Normalized caption (+ section) text of a candidate.
    pub fn text(&self, id: &str) -> Result<&str> {
        self.index
            .get(id)
            .map(|&i| self.normalized[i].as_str())
            .ok_or_else(|| Error::MissingCandidate(id.to_owned()))
    }

    pub fn candidates(&self) -> &[Candidate] {
        &self.candidates
    }
}

/// Embedding id of patch `index` of `image_id`.
pub fn patch_id(image_id: &str, index: usize) -> String {
    format!("{image_id}#{index}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    fn ten(s: &str) -> String {
        serde_json::to_string(&vec![s; 10]).unwrap()
    }

    #[test]
    fn parses_question_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "q.jsonl",
            &format!(
                "{{\"question_id\":\"q1\",\"image_id\":\"i1\",\"text\":\"what city?\",\"answers\":{}}}\n",
                ten("chicago")
            ),
        );
        let set = load_questions(&p).unwrap();
        assert_eq!(set.questions.len(), 1);
        assert_eq!(set.questions[0].question_id, "q1");
        assert_eq!(set.questions[0].answers.len(), 10);
        assert!(set.padding.is_empty());
    }

    #[test]
    fn duplicate_question_id_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let line = format!(
            "{{\"question_id\":\"q1\",\"image_id\":\"i1\",\"text\":\"t\",\"answers\":{}}}\n",
            ten("x")
        );
        let p = write(&dir, "q.jsonl", &format!("{line}{line}"));
        let err = load_questions(&p).unwrap_err();
        assert_eq!(err.to_string(), "duplicate question_id q1");
    }

    #[test]
    fn malformed_line_names_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let good = format!(
            "{{\"question_id\":\"q1\",\"image_id\":\"i1\",\"text\":\"t\",\"answers\":{}}}\n",
            ten("x")
        );
        let p = write(&dir, "q.jsonl", &format!("{good}{{not json\n"));
        match load_questions(&p).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn short_answer_list_is_padded_with_mode() {
        let dir = tempfile::tempdir().unwrap();
        let answers = ["dog", "cat", "cat", "dog", "cat", "cat", "bird", "cat", "dog"];
        let p = write(
            &dir,
            "q.jsonl",
            &format!(
                "{{\"question_id\":\"q9\",\"image_id\":\"i\",\"text\":\"t\",\"answers\":{}}}\n",
                serde_json::to_string(&answers).unwrap()
            ),
        );
        let set = load_questions(&p).unwrap();
        let q = &set.questions[0];
        assert_eq!(q.answers.len(), 10);
        assert_eq!(q.answers[9], "cat");
        assert_eq!(set.padding.get("q9"), Some(&1));
    }

    #[test]
    fn pad_rejects_empty_and_oversized() {
        assert!(pad_answers(&mut vec![]).is_err());
        assert!(pad_answers(&mut vec!["a".to_string(); 11]).is_err());
        let mut tie = vec!["x".to_string(), "y".to_string()];
        assert_eq!(pad_answers(&mut tie).unwrap(), 8);
        assert!(tie[2..].iter().all(|a| a == "x"));
    }

    #[test]
    fn candidate_variants() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "c.jsonl",
            "{\"candidate_id\":\"c1\",\"image_id\":\"wi1\",\"caption\":\"Deep-dish pizza\"}\n\
             {\"candidate_id\":\"g1\",\"caption\":\"chicago style pizza\"}\n",
        );
        let cs = load_candidates(&p).unwrap();
        assert_eq!(cs[0].image_id.as_deref(), Some("wi1"));
        assert_eq!(cs[1].image_id, None);
        assert_eq!(cs[1].caption, "chicago style pizza");

        let missing = write(&dir, "m.jsonl", "{\"candidate_id\":\"c2\"}\n");
        assert!(matches!(
            load_candidates(&missing),
            Err(Error::Parse { line: 1, .. })
        ));

        let dup = write(
            &dir,
            "d.jsonl",
            "{\"candidate_id\":\"c\",\"caption\":\"a\"}\n{\"candidate_id\":\"c\",\"caption\":\"b\"}\n",
        );
        assert_eq!(
            load_candidates(&dup).unwrap_err().to_string(),
            "duplicate candidate_id c"
        );
    }

    #[test]
    fn knowledge_text_joins_section() {
        let mut c = Candidate::text_only("c", "cap");
        assert_eq!(c.knowledge_text(true), "cap");
        c.section_text = Some("sec".into());
        assert_eq!(c.knowledge_text(true), "cap sec");
        assert_eq!(c.knowledge_text(false), "cap");
    }

    #[test]
    fn external_candidates_group_by_question() {
        let dir = tempfile::tempdir().unwrap();
        let mut ext = BTreeMap::new();
        ext.insert(
            "q1".to_string(),
            vec![
                Candidate::text_only("g1", "one"),
                Candidate::text_only("g2", "two"),
            ],
        );
        let p = dir.path().join("ext.jsonl");
        write_external_candidates(&ext, &p).unwrap();
        assert_eq!(load_external_candidates(&p).unwrap(), ext);
    }
}
