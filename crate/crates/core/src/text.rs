//! Whitespace handling and tokenization shared by every stage.

use unicode_normalization::UnicodeNormalization;

/// Collapses every run of whitespace to a single space and trims both ends.
pub fn normalize_ws(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for token in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(token);
    }
    out
}

/// Label normalization: NFC followed by whitespace collapsing.
pub fn normalize_label(text: &str) -> String {
    let nfc: String = text.nfc().collect();
    normalize_ws(&nfc)
}

/// Whitespace tokens: maximal runs of non-whitespace characters.
pub fn tokens(text: &str) -> impl Iterator<Item = &str> {
    text.split_whitespace()
}

pub fn token_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Joins the non-empty pieces with single spaces.
pub fn join_nonempty<'a, I>(parts: I) -> String
where
    I: IntoIterator<Item = &'a str>,
{
    let mut out = String::new();
    for part in parts {
        if part.is_empty() {
            continue;
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(part);
    }
    out
}
