//! Word-level n-gram language models with interpolated modified Kneser-Ney
//! smoothing, stored and queried in ARPA backoff form.

mod arpa;
mod counts;
mod model;

use std::collections::HashMap;

pub use counts::NGramCounts;
pub use model::{Discounts, NGramEntry, NGramModel, PerplexityReport};

/// Sentence start marker. Only ever used as context.
pub const BOS: &str = "<s>";
/// Sentence end marker.
pub const EOS: &str = "</s>";
/// Out-of-vocabulary token.
pub const UNK: &str = "<unk>";

pub(crate) const UNK_ID: u32 = 0;
pub(crate) const BOS_ID: u32 = 1;
pub(crate) const EOS_ID: u32 = 2;

/// Highest supported model order.
pub const MAX_ORDER: usize = 8;

/// Default model order used for quality filtering.
pub const DEFAULT_ORDER: usize = 3;

/// Discount used when count-of-counts cannot support the modified estimate.
pub const FALLBACK_DISCOUNT: f64 = 0.75;

#[derive(Debug, thiserror::Error)]
pub enum NgramError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("order must be between 1 and {MAX_ORDER}, got {0}")]
    InvalidOrder(usize),
    #[error("degenerate corpus: {0} distinct token(s), need at least 2")]
    Degenerate(usize),
    #[error("cannot merge counts of order {0} into order {1}")]
    OrderMismatch(usize, usize),
    #[error("ARPA line {line}: {msg}")]
    Arpa { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Token ids for a model. Ids 0..3 are `<unk>`, `<s>`, `</s>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Default for Vocab {
    fn default() -> Self {
        let mut vocab = Vocab {
            words: Vec::new(),
            ids: HashMap::new(),
        };
        for w in [UNK, BOS, EOS] {
            vocab.intern(w);
        }
        vocab
    }
}

impl Vocab {
    pub fn intern(&mut self, word: &str) -> u32 {
        if let Some(&id) = self.ids.get(word) {
            return id;
        }
        let id = self.words.len() as u32;
        self.words.push(word.to_owned());
        self.ids.insert(word.to_owned(), id);
        id
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.ids.get(word).copied()
    }

    /// Id of `word`, or the `<unk>` id.
    pub fn id_or_unk(&self, word: &str) -> u32 {
        self.id(word).unwrap_or(UNK_ID)
    }

    pub fn word(&self, id: u32) -> &str {
        &self.words[id as usize]
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.words.iter().map(String::as_str)
    }
}

/// Canonical tokenizer for perplexity scoring: lowercase, split on Unicode
/// whitespace, strip non-alphanumeric characters from both ends of each token,
/// and map every digit to `0`. Tokens left empty are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|raw| {
            let trimmed = raw.trim_matches(|c: char| !c.is_alphanumeric());
            if trimmed.is_empty() {
                return None;
            }
            let mut out = String::with_capacity(trimmed.len());
            for c in trimmed.chars() {
                if c.is_numeric() {
                    out.push('0');
                } else {
                    out.extend(c.to_lowercase());
                }
            }
            Some(out)
        })
        .collect()
}

/// Trains an interpolated modified Kneser-Ney model over tokenized sentences.
pub fn train_ngram<S, I>(corpus: I, order: usize) -> Result<NGramModel, NgramError>
where
    I: IntoIterator,
    I::Item: AsRef<[S]>,
    S: AsRef<str>,
{
    let mut counts = NGramCounts::new(order)?;
    for sentence in corpus {
        counts.add_sentence(sentence.as_ref());
    }
    counts.build()
}

/// Trains a model on raw text, one sentence per non-empty line, using [`tokenize`].
pub fn train_on_text(text: &str, order: usize) -> Result<NGramModel, NgramError> {
    let sentences: Vec<Vec<String>> = text
        .lines()
        .map(tokenize)
        .filter(|t| !t.is_empty())
        .collect();
    train_ngram(&sentences, order)
}

/// Log10 probability of one tokenized sentence, including `</s>`.
pub fn log_prob<S: AsRef<str>>(model: &NGramModel, tokens: &[S]) -> f64 {
    model.sentence_report(tokens).total_log10_prob
}

/// Perplexity of a text under `model`. Each non-empty line is one sentence.
pub fn perplexity(model: &NGramModel, text: &str) -> PerplexityReport {
    let mut report = PerplexityReport::default();
    for line in text.lines() {
        let tokens = tokenize(line);
        if !tokens.is_empty() {
            report.add(&model.sentence_report(&tokens));
        }
    }
    if report.token_count == 0 {
        report = model.sentence_report::<&str>(&[]);
    }
    report
}
