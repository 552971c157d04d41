//! Surface-form normalization used to compare answers.

use alloc::string::String;

/// Punctuation stripped from the ends of an answer before comparison.
fn is_edge_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '\u{2018}' | '\u{2019}' | '\u{201C}' | '\u{201D}' | '\u{00AB}' | '\u{00BB}'
                | '\u{2013}' | '\u{2014}' | '\u{2026}' | '\u{00BF}' | '\u{00A1}'
        )
}

/// Trim, strip surrounding punctuation, collapse internal whitespace and
/// case-fold.
///
/// Two answers that only differ in these respects compare equal.
pub fn normalize(text: &str) -> String {
    let stripped = text
        .trim()
        .trim_matches(|c: char| is_edge_punct(c) || c.is_whitespace());
    let mut out = String::with_capacity(stripped.len());
    for word in stripped.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out.to_lowercase()
}

/// `normalize(a) == normalize(b)`.
pub fn same_answer(a: &str, b: &str) -> bool {
    normalize(a) == normalize(b)
}
