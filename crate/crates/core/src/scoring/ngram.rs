//! Laplace-smoothed trigram masked model.
//!
//! The masked probability of a token depends only on its immediate
//! neighbours: `P(w | l, r) = (c(l, w, r) + α) / (c(l, ·, r) + α·|V|)`.
//! Sentence edges are padded with boundary markers that never appear in the
//! vocabulary.

use std::collections::{BTreeSet, HashMap};

use super::tokenize::{tokenize, TokenSequence};
use super::{MaskedTokenModel, ScoringError};

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

#[derive(Debug, Clone, PartialEq)]
pub struct NgramMaskedModel {
    trigram_counts: HashMap<(String, String, String), u64>,
    context_totals: HashMap<(String, String), u64>,
    vocabulary: BTreeSet<String>,
    alpha: f64,
}

impl NgramMaskedModel {
    pub fn train<S: AsRef<str>>(texts: &[S], alpha: f64) -> Result<Self, ScoringError> {
        if texts.is_empty() {
            return Err(ScoringError::EmptyCorpus);
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(ScoringError::InvalidAlpha(alpha));
        }
        let mut trigram_counts: HashMap<(String, String, String), u64> = HashMap::new();
        let mut context_totals: HashMap<(String, String), u64> = HashMap::new();
        let mut vocabulary = BTreeSet::new();
        vocabulary.insert(UNK.to_string());

        for text in texts {
            let seq = tokenize(text.as_ref())?;
            let padded: Vec<&str> = std::iter::once(BOS)
                .chain(seq.tokens.iter().map(String::as_str))
                .chain(std::iter::once(EOS))
                .collect();
            for window in padded.windows(3) {
                let (l, w, r) = (window[0], window[1], window[2]);
                vocabulary.insert(w.to_string());
                *trigram_counts.entry((l.to_string(), w.to_string(), r.to_string())).or_default() += 1;
                *context_totals.entry((l.to_string(), r.to_string())).or_default() += 1;
            }
        }
        Ok(NgramMaskedModel { trigram_counts, context_totals, vocabulary, alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Vocabulary including the unknown-token symbol.
    pub fn vocabulary(&self) -> &BTreeSet<String> {
        &self.vocabulary
    }

    pub fn trigram_count(&self, left: &str, middle: &str, right: &str) -> u64 {
        self.trigram_counts
            .get(&(left.to_string(), middle.to_string(), right.to_string()))
            .copied()
            .unwrap_or(0)
    }

    pub fn context_total(&self, left: &str, right: &str) -> u64 {
        self.context_totals.get(&(left.to_string(), right.to_string())).copied().unwrap_or(0)
    }

    pub fn trigrams(&self) -> impl Iterator<Item = (&(String, String, String), &u64)> {
        self.trigram_counts.iter()
    }

    fn in_vocab<'a>(&self, token: &'a str) -> &'a str {
        if token == BOS || token == EOS || self.vocabulary.contains(token) {
            token
        } else {
            UNK
        }
    }

    /// Log-probability of `middle` filling the gap between `left` and `right`.
    pub fn context_log_prob(&self, left: &str, middle: &str, right: &str) -> f64 {
        let (l, w, r) = (self.in_vocab(left), self.in_vocab(middle), self.in_vocab(right));
        let w = if w == BOS || w == EOS { UNK } else { w };
        let numerator = self.trigram_count(l, w, r) as f64 + self.alpha;
        let denominator = self.context_total(l, r) as f64 + self.alpha * self.vocabulary.len() as f64;
        (numerator / denominator).ln()
    }

    /// Masked log-probability of the token at `position`, using its neighbours as context.
    pub fn masked_logprob(&self, tokens: &TokenSequence, position: usize) -> f64 {
        assert!(position < tokens.len(), "position {position} out of range");
        let left = if position == 0 { BOS } else { tokens.tokens[position - 1].as_str() };
        let right = tokens.tokens.get(position + 1).map(String::as_str).unwrap_or(EOS);
        self.context_log_prob(left, &tokens.tokens[position], right)
    }
}

impl MaskedTokenModel for NgramMaskedModel {
    fn masked_log_prob(&self, tokens: &TokenSequence, position: usize) -> Result<f64, ScoringError> {
        if position >= tokens.len() {
            return Err(ScoringError::Provider {
                position: Some(position),
                cause: format!("position out of range for {} tokens", tokens.len()),
            });
        }
        Ok(self.masked_logprob(tokens, position))
    }
}
