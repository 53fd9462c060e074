//! Answer string normalization shared by labeling, evaluation and the reader.
//!
//! Rules, applied in order:
//! - lowercase (Unicode)
//! - every character that is neither alphanumeric nor whitespace becomes a space
//! - whitespace runs collapse to a single space, ends trimmed
//! - leading articles `a`, `an`, `the` are removed (repeatedly)

const ARTICLES: [&str; 3] = ["a", "an", "the"];

pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let mapped: String = lowered
        .chars()
        .map(|c| {
            if c.is_alphanumeric() || c.is_whitespace() {
                c
            } else {
                ' '
            }
        })
        .collect();
    let mut tokens: &[&str] = &mapped.split_whitespace().collect::<Vec<_>>();
    while let Some((first, rest)) = tokens.split_first() {
        if ARTICLES.contains(first) {
            tokens = rest;
        } else {
            break;
        }
    }
    tokens.join(" ")
}

/// True when `needle` occurs in `haystack` on token boundaries. Both inputs
/// must already be normalized. An empty needle never matches.
pub fn contains_normalized(haystack: &str, needle: &str) -> bool {
    if needle.is_empty() || haystack.len() < needle.len() {
        return false;
    }
    haystack.match_indices(needle).any(|(start, _)| {
        let end = start + needle.len();
        let left_ok = start == 0 || haystack.as_bytes()[start - 1] == b' ';
        let right_ok = end == haystack.len() || haystack.as_bytes()[end] == b' ';
        left_ok && right_ok
    })
}
