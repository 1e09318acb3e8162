use serde::{Deserialize, Serialize};

use super::ScoringError;

/// Lowercased tokens with byte spans into the source text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<String>,
    pub offsets: Vec<(usize, usize)>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Anything that is neither alphanumeric nor whitespace becomes its own token.
pub fn is_punctuation(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

pub fn is_punctuation_token(token: &str) -> bool {
    !token.is_empty() && token.chars().all(is_punctuation)
}

/// Splits on Unicode whitespace, then splits punctuation characters into
/// single-character tokens. Tokens are lowercased; offsets refer to the
/// original text.
pub fn tokenize(text: &str) -> Result<TokenSequence, ScoringError> {
    if text.trim().is_empty() {
        return Err(ScoringError::EmptyText);
    }
    let mut tokens = Vec::new();
    let mut offsets = Vec::new();
    let mut start: Option<usize> = None;

    let flush = |start: &mut Option<usize>, end: usize, tokens: &mut Vec<String>, offsets: &mut Vec<(usize, usize)>| {
        if let Some(s) = start.take() {
            tokens.push(text[s..end].to_lowercase());
            offsets.push((s, end));
        }
    };

    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            flush(&mut start, i, &mut tokens, &mut offsets);
        } else if is_punctuation(c) {
            flush(&mut start, i, &mut tokens, &mut offsets);
            let end = i + c.len_utf8();
            tokens.push(text[i..end].to_lowercase());
            offsets.push((i, end));
        } else if start.is_none() {
            start = Some(i);
        }
    }
    flush(&mut start, text.len(), &mut tokens, &mut offsets);

    Ok(TokenSequence { tokens, offsets })
}
