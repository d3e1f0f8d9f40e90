//! Tokenization and character-offset helpers.
//!
//! All offsets in this crate count Unicode scalar values, not bytes, so they
//! line up with the offsets produced by Python-side adapters.

use serde::{Deserialize, Serialize};

/// A token with its half-open `[char_start, char_end)` span in the source text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub char_start: usize,
    pub char_end: usize,
}

/// Whitespace tokenization with every non-alphanumeric character split off as
/// its own token.
///
/// Tokenization of a prefix never depends on what follows it, except that a
/// trailing alphanumeric run can be extended by appended alphanumerics.
/// Appending text that starts with whitespace leaves every prefix token
/// untouched.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut current_start = 0;

    for (pos, ch) in text.chars().enumerate() {
        if ch.is_alphanumeric() {
            if current.is_empty() {
                current_start = pos;
            }
            current.push(ch);
            continue;
        }
        if !current.is_empty() {
            tokens.push(Token {
                text: std::mem::take(&mut current),
                char_start: current_start,
                char_end: pos,
            });
        }
        if !ch.is_whitespace() {
            tokens.push(Token {
                text: ch.to_string(),
                char_start: pos,
                char_end: pos + 1,
            });
        }
    }
    if !current.is_empty() {
        let len = current.chars().count();
        tokens.push(Token {
            text: current,
            char_start: current_start,
            char_end: current_start + len,
        });
    }
    tokens
}

/// Number of Unicode scalar values in `s`.
pub fn char_len(s: &str) -> usize {
    s.chars().count()
}

/// Substring by `[start, end)` char offsets. Out-of-range bounds are clamped.
pub fn char_slice(s: &str, start: usize, end: usize) -> &str {
    let byte_at = |n: usize| s.char_indices().nth(n).map_or(s.len(), |(b, _)| b);
    let end = end.max(start);
    let b_start = byte_at(start);
    let b_end = byte_at(end);
    &s[b_start..b_end]
}

/// Maps a `[char_start, char_start + answer_len)` answer span onto the token
/// range that covers it: the first token ending after the start and the last
/// token beginning before the end.
pub fn char_span_to_tokens(
    tokens: &[Token],
    char_start: usize,
    char_len: usize,
) -> Option<(usize, usize)> {
    let char_end = char_start + char_len.max(1);
    let first = tokens.iter().position(|t| t.char_end > char_start)?;
    let last = tokens.iter().rposition(|t| t.char_start < char_end)?;
    (first <= last).then_some((first, last))
}
