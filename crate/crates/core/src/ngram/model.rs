use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{Vocab, BOS_ID, EOS_ID, MAX_ORDER, UNK_ID};

/// Stored values for one n-gram: conditional log10 probability of its last
/// word given the rest, and the log10 backoff weight when it is a context.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NGramEntry {
    pub log_prob: f64,
    pub backoff: Option<f64>,
}

/// Modified Kneser-Ney discounts for one order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Discounts {
    pub d1: f64,
    pub d2: f64,
    pub d3_plus: f64,
    /// Set when count-of-counts forced plain absolute discounting.
    pub fallback: bool,
}

/// Scoring summary. `token_count` includes `</s>` and excludes `<s>`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerplexityReport {
    pub token_count: u64,
    pub total_log10_prob: f64,
    pub perplexity: f64,
    pub oov_count: u64,
}

impl Default for PerplexityReport {
    fn default() -> Self {
        PerplexityReport {
            token_count: 0,
            total_log10_prob: 0.0,
            perplexity: 1.0,
            oov_count: 0,
        }
    }
}

impl PerplexityReport {
    /// Accumulates another report's statistics.
    pub fn add(&mut self, other: &PerplexityReport) {
        self.token_count += other.token_count;
        self.total_log10_prob += other.total_log10_prob;
        self.oov_count += other.oov_count;
        self.perplexity = perplexity_of(self.total_log10_prob, self.token_count);
    }
}

fn perplexity_of(total_log10_prob: f64, tokens: u64) -> f64 {
    if tokens == 0 {
        1.0
    } else {
        10f64.powf(-total_log10_prob / tokens as f64)
    }
}

/// An n-gram model in backoff form.
///
/// `P(w | ctx)` is the stored probability of `ctx w` when present, otherwise
/// `backoff(ctx) * P(w | ctx[1..])`, with a missing backoff counting as 1.
#[derive(Debug, Clone)]
pub struct NGramModel {
    order: usize,
    vocab: Vocab,
    tables: Vec<HashMap<Box<[u32]>, NGramEntry>>,
    discounts: Vec<Discounts>,
}

impl NGramModel {
    /// Conventional placeholder probability for `<s>`, which is never predicted.
    pub const BOS_LOG_PROB: f64 = -99.0;

    pub(crate) fn from_parts(
        order: usize,
        vocab: Vocab,
        tables: Vec<HashMap<Box<[u32]>, NGramEntry>>,
        discounts: Vec<Discounts>,
    ) -> Self {
        debug_assert_eq!(tables.len(), order);
        NGramModel {
            order,
            vocab,
            tables,
            discounts,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    /// Per-order discounts. Empty for models loaded from ARPA files without
    /// discount annotations.
    pub fn discounts(&self) -> &[Discounts] {
        &self.discounts
    }

    /// Number of stored n-grams of the given order.
    pub fn ngram_count(&self, order: usize) -> usize {
        self.tables.get(order.wrapping_sub(1)).map_or(0, HashMap::len)
    }

    /// Stored entry for an n-gram given as words.
    pub fn entry(&self, ngram: &[&str]) -> Option<NGramEntry> {
        if ngram.is_empty() || ngram.len() > self.order {
            return None;
        }
        let ids: Option<Vec<u32>> = ngram.iter().map(|w| self.vocab.id(w)).collect();
        self.tables[ngram.len() - 1].get(ids?.as_slice()).copied()
    }

    /// All stored n-grams of one order as words, sorted.
    pub fn ngrams(&self, order: usize) -> Vec<(Vec<&str>, NGramEntry)> {
        let mut out: Vec<(Vec<&str>, NGramEntry)> = self
            .tables
            .get(order.wrapping_sub(1))
            .into_iter()
            .flatten()
            .map(|(k, e)| (k.iter().map(|&id| self.vocab.word(id)).collect(), *e))
            .collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    /// Words that can be predicted: the vocabulary minus `<s>`.
    pub fn predictable_words(&self) -> impl Iterator<Item = &str> {
        self.vocab
            .words()
            .enumerate()
            .filter(|(id, _)| *id as u32 != BOS_ID)
            .map(|(_, w)| w)
    }

    /// Conditional log10 probability of `word` after `context`. Unknown
    /// words score as `<unk>`; only the last `order - 1` context words matter.
    pub fn cond_log10(&self, context: &[&str], word: &str) -> f64 {
        let ctx: Vec<u32> = context.iter().map(|w| self.vocab.id_or_unk(w)).collect();
        let w = self.predict_id(word);
        self.cond_log10_ids(&ctx, w)
    }

    fn predict_id(&self, word: &str) -> u32 {
        match self.vocab.id_or_unk(word) {
            BOS_ID => UNK_ID,
            id => id,
        }
    }

    pub(crate) fn cond_log10_ids(&self, context: &[u32], word: u32) -> f64 {
        let keep = context.len().min(self.order - 1);
        let ctx = &context[context.len() - keep..];
        let mut key = [0u32; MAX_ORDER];
        let mut backoff = 0.0;
        for start in 0..=ctx.len() {
            let hist = &ctx[start..];
            let len = hist.len() + 1;
            key[..hist.len()].copy_from_slice(hist);
            key[hist.len()] = word;
            if let Some(e) = self.tables[len - 1].get(&key[..len]) {
                return backoff + e.log_prob;
            }
            if !hist.is_empty() {
                if let Some(bo) = self.tables[hist.len() - 1]
                    .get(hist)
                    .and_then(|e| e.backoff)
                {
                    backoff += bo;
                }
            }
        }
        // Loaded models may lack a unigram for this id; score it as <unk>.
        backoff
            + self.tables[0]
                .get(&[UNK_ID][..])
                .map_or(Self::BOS_LOG_PROB, |e| e.log_prob)
    }

    /// Scores one sentence with `<s>` padding and a `</s>` terminator.
    pub fn sentence_report<S: AsRef<str>>(&self, tokens: &[S]) -> PerplexityReport {
        let mut context: Vec<u32> = Vec::with_capacity(tokens.len() + 1);
        context.push(BOS_ID);
        let mut total = 0.0;
        let mut oov = 0;
        for t in tokens {
            let id = self.predict_id(t.as_ref());
            if id == UNK_ID {
                oov += 1;
            }
            total += self.cond_log10_ids(&context, id);
            context.push(id);
        }
        total += self.cond_log10_ids(&context, EOS_ID);
        let token_count = tokens.len() as u64 + 1;
        PerplexityReport {
            token_count,
            total_log10_prob: total,
            perplexity: perplexity_of(total, token_count),
            oov_count: oov,
        }
    }
}
