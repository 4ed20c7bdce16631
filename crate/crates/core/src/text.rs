//! Surface-form normalization shared by loading, matching and id derivation.
//!
//! Names and utterances are compared as sequences of lowercase alphanumeric
//! tokens, so case, runs of whitespace and punctuation (terminal or internal,
//! e.g. "First-degree" vs "first degree") never affect a match.

/// Lowercase alphanumeric tokens of `text`.
pub fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Comparison key for a name: its tokens joined by single spaces.
pub fn name_key(text: &str) -> String {
    tokens(text).join(" ")
}

/// Identifier derived from a canonical name: "Stuffy nose" -> "stuffy-nose".
pub fn slug(text: &str) -> String {
    tokens(text).join("-")
}

/// Uppercases the first character, as entity names appear in rendered dialogue.
pub fn capitalize_first(text: &str) -> String {
    let mut chars = text.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Whitespace-delimited word count; punctuation stays attached to its word.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}
