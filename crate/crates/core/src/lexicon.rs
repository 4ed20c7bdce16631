use std::collections::HashMap;

use crate::text::tokens;

/// Token-sequence dictionary scanned with longest-match, left-to-right,
/// non-overlapping semantics.
#[derive(Debug, Clone, Default)]
pub(crate) struct Lexicon {
    forms: HashMap<Vec<String>, usize>,
    longest: usize,
}

impl Lexicon {
    /// `entries` pairs every surface form with the index of the entity it names.
    pub(crate) fn new<'a>(entries: impl IntoIterator<Item = (&'a str, usize)>) -> Self {
        let mut lexicon = Lexicon::default();
        for (form, index) in entries {
            let toks = tokens(form);
            if toks.is_empty() {
                continue;
            }
            lexicon.longest = lexicon.longest.max(toks.len());
            lexicon.forms.insert(toks, index);
        }
        lexicon
    }

    /// Entity indices in text order.
    pub(crate) fn scan_tokens(&self, toks: &[String]) -> Vec<usize> {
        let mut found = Vec::new();
        let mut start = 0;
        'outer: while start < toks.len() {
            let max = self.longest.min(toks.len() - start);
            for len in (1..=max).rev() {
                if let Some(&index) = self.forms.get(&toks[start..start + len]) {
                    found.push(index);
                    start += len;
                    continue 'outer;
                }
            }
            start += 1;
        }
        found
    }

    pub(crate) fn scan(&self, text: &str) -> Vec<usize> {
        self.scan_tokens(&tokens(text))
    }
}
