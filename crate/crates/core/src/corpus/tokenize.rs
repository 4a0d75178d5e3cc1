use std::collections::HashSet;

use once_cell::sync::Lazy;

static STOP_WORDS: Lazy<HashSet<&'static str>> = Lazy::new(|| {
    include_str!("stopwords.txt")
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .collect()
});

pub fn is_stop_word(token: &str) -> bool {
    STOP_WORDS.contains(token)
}

/// Lowercase unigrams with stop words and non-alphabetic tokens removed.
///
/// Text is split on every character that is neither alphanumeric nor an
/// apostrophe, so hyphenated words and section symbols break apart before
/// filtering. Apostrophes are then dropped from the surviving pieces.
pub fn tokenize(text: &str) -> Vec<String> {
    raw_tokens(text).filter(|t| !is_stop_word(t)).collect()
}

/// Same pipeline as [`tokenize`] but stop words are retained.
pub fn tokenize_keep_stop_words(text: &str) -> Vec<String> {
    raw_tokens(text).collect()
}

fn raw_tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !(c.is_alphanumeric() || is_apostrophe(c)))
        .filter_map(|piece| {
            let token: String = piece
                .chars()
                .filter(|c| !is_apostrophe(*c))
                .flat_map(char::to_lowercase)
                .collect();
            if token.chars().any(char::is_alphabetic) {
                Some(token)
            } else {
                None
            }
        })
}

fn is_apostrophe(c: char) -> bool {
    c == '\'' || c == '\u{2019}'
}
