//! Finding the object categories a question talks about.
//!
//! Matching is case-insensitive and whole-word: a match must be bounded by
//! non-word characters or the ends of the text, where word characters are
//! ASCII letters, digits and `-`. Surface forms include each category, its
//! `s`/`es` plural, and the explicit plural and synonym entries; each form is
//! mapped to its canonical category. A category whose every match lies inside
//! a longer match of a different category (`box` inside `tissue box`) is
//! dropped.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Vocabulary {
    pub categories: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub plural_map: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub synonym_map: BTreeMap<String, String>,
}

impl Vocabulary {
    pub fn new<S: AsRef<str>>(categories: impl IntoIterator<Item = S>) -> Self {
        let mut seen = BTreeSet::new();
        let categories = categories
            .into_iter()
            .map(|c| squash(c.as_ref()))
            .filter(|c| !c.is_empty() && seen.insert(c.clone()))
            .collect();
        Vocabulary { categories, ..Default::default() }
    }

    pub fn with_plural(mut self, plural: &str, singular: &str) -> Self {
        self.plural_map.insert(squash(plural), squash(singular));
        self
    }

    pub fn with_synonym(mut self, term: &str, canonical: &str) -> Self {
        self.synonym_map.insert(squash(term), squash(canonical));
        self
    }

    pub fn contains(&self, category: &str) -> bool {
        self.categories.iter().any(|c| c == category)
    }

    /// Every map entry must resolve to a category.
    pub fn validate(&self) -> Result<()> {
        for c in &self.categories {
            if c != &squash(c) || c.is_empty() {
                return Err(Error::invalid(format!("category `{c}` must be lowercase, trimmed and nonempty")));
            }
        }
        for target in self.plural_map.keys().chain(self.synonym_map.keys()) {
            let canon = normalize_term(target, self);
            if !self.contains(&canon) {
                return Err(Error::invalid(format!("`{target}` normalizes to `{canon}`, which is not a category")));
            }
        }
        Ok(())
    }

    fn is_known(&self, term: &str) -> bool {
        self.contains(term) || self.synonym_map.contains_key(term)
    }

    /// All matchable surface forms, paired with their canonical category.
    fn surface_forms(&self) -> Vec<(String, String)> {
        let mut forms = BTreeMap::new();
        let bases = self.categories.iter().chain(self.synonym_map.keys());
        let candidates = bases
            .flat_map(|b| [b.clone(), format!("{b}s"), format!("{b}es")])
            .chain(self.plural_map.keys().cloned());
        for form in candidates {
            let canon = normalize_term(&form, self);
            if self.contains(&canon) {
                forms.entry(form).or_insert(canon);
            }
        }
        forms.into_iter().collect()
    }
}

fn squash(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn is_word_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '-'
}

/// Plural map (or default `s`/`es` stripping), then synonym map.
pub fn normalize_term(token: &str, vocab: &Vocabulary) -> String {
    let mut t = squash(token);
    if let Some(s) = vocab.plural_map.get(&t) {
        t = s.clone();
    } else if !vocab.is_known(&t) {
        let stripped = ["es", "s"]
            .iter()
            .filter_map(|suf| t.strip_suffix(suf))
            .find(|s| !s.is_empty() && vocab.is_known(s))
            .map(str::to_string);
        if let Some(s) = stripped {
            t = s;
        }
    }
    match vocab.synonym_map.get(&t) {
        Some(c) => c.clone(),
        None => t,
    }
}

/// Byte span of a whole-word match in the normalized question.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub category: String,
}

/// Whole-word occurrences of every surface form, on the squashed question.
pub fn find_spans(question: &str, vocab: &Vocabulary) -> Vec<Span> {
    let text = squash(question);
    let mut spans = Vec::new();
    for (form, canon) in vocab.surface_forms() {
        let mut from = 0;
        while let Some(pos) = text[from..].find(&form) {
            let start = from + pos;
            let end = start + form.len();
            let before_ok = text[..start].chars().next_back().is_none_or(|c| !is_word_char(c));
            let after_ok = text[end..].chars().next().is_none_or(|c| !is_word_char(c));
            if before_ok && after_ok {
                spans.push(Span { start, end, category: canon.clone() });
            }
            from = start + text[start..].chars().next().map_or(1, char::len_utf8);
        }
    }
    spans.sort_by(|a, b| a.start.cmp(&b.start).then(b.end.cmp(&a.end)).then(a.category.cmp(&b.category)));
    spans.dedup();
    spans
}

/// Categories mentioned in `question`, in order of first free-standing
/// occurrence, deduplicated by canonical form.
pub fn extract_categories(question: &str, vocab: &Vocabulary) -> Vec<String> {
    let spans = find_spans(question, vocab);
    let contained = |s: &Span| {
        spans.iter().any(|t| {
            t.category != s.category && t.start <= s.start && s.end <= t.end && (t.end - t.start) > (s.end - s.start)
        })
    };
    let mut found: Vec<(usize, String)> = Vec::new();
    for s in spans.iter().filter(|s| !contained(s)) {
        if !found.iter().any(|(_, c)| c == &s.category) {
            found.push((s.start, s.category.clone()));
        }
    }
    found.sort();
    found.into_iter().map(|(_, c)| c).collect()
}

/// One grounded question.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundingResult {
    pub question_id: String,
    pub scene_id: String,
    pub question: String,
    pub found_categories: Vec<String>,
}

impl GroundingResult {
    pub fn new(question_id: &str, scene_id: &str, question: &str, vocab: &Vocabulary) -> Self {
        GroundingResult {
            question_id: question_id.to_string(),
            scene_id: scene_id.to_string(),
            question: question.to_string(),
            found_categories: extract_categories(question, vocab),
        }
    }
}
