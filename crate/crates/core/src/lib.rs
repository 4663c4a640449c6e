//! Web-crawl corpus curation and language-model data preparation.
//!
//! The crate turns raw WARC archives into a cleaned, deduplicated,
//! quality-filtered text corpus and prepares training data from it:
//!
//! * [`warc`] streams archive records and selects HTML responses in a target language.
//! * [`html`] parses tag soup and extracts the main article text.
//! * [`ngram`] trains modified Kneser-Ney n-gram models and scores perplexity.
//! * [`filter`] applies the length, keyword and perplexity rules.
//! * [`dedup`] drops exact duplicates by content digest.
//! * [`bpe`] trains and applies a byte-fallback BPE vocabulary.
//! * [`prep`] packs sequences, applies dynamic masking and prepares fine-tuning data.
//! * [`pipeline`] runs the stages end to end and writes the corpus manifest.

pub mod bpe;
pub mod dedup;
pub mod filter;
pub mod html;
pub mod jsonl;
pub mod langid;
pub mod ngram;
pub mod pipeline;
pub mod prep;
pub mod warc;
