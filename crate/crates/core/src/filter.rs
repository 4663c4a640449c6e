//! Document quality rules: minimum length, cookie/script notice keywords on
//! short pages, and a perplexity ceiling under a reference language model.

use serde::{Deserialize, Serialize};

use crate::html::ExtractedDoc;
use crate::ngram::{perplexity, NGramModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Keep,
    Reject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    TooShort,
    BoilerplateKeywords,
    HighPerplexity,
    Passed,
}

impl Reason {
    pub fn as_str(self) -> &'static str {
        match self {
            Reason::TooShort => "too_short",
            Reason::BoilerplateKeywords => "boilerplate_keywords",
            Reason::HighPerplexity => "high_perplexity",
            Reason::Passed => "passed",
        }
    }
}

/// Outcome of a rule. `verdict == Keep` exactly when `reason == Passed`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterDecision {
    pub verdict: Verdict,
    pub reason: Reason,
    pub metric: Option<f64>,
}

impl FilterDecision {
    pub fn keep() -> Self {
        FilterDecision { verdict: Verdict::Keep, reason: Reason::Passed, metric: None }
    }

    pub fn reject(reason: Reason, metric: f64) -> Self {
        debug_assert_ne!(reason, Reason::Passed);
        FilterDecision { verdict: Verdict::Reject, reason, metric: Some(metric) }
    }

    pub fn is_keep(&self) -> bool {
        self.verdict == Verdict::Keep
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FilterError {
    #[error("perplexity of {url} is not finite ({value})")]
    NonFinitePerplexity { url: String, value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Texts with fewer characters are rejected.
    pub min_chars: usize,
    /// Keyword texts with fewer characters are rejected.
    pub keyword_min_chars: usize,
    /// Lowercase keywords matched as substrings of the case-folded text.
    pub keywords: Vec<String>,
    /// Texts with a strictly higher perplexity are rejected.
    pub ppl_threshold: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            min_chars: 100,
            keyword_min_chars: 500,
            keywords: ["przeglądarka", "ciasteczka", "cookies", "javascript"]
                .map(String::from)
                .to_vec(),
            ppl_threshold: 1000.0,
        }
    }
}

fn char_count(doc: &ExtractedDoc) -> usize {
    doc.text.chars().count()
}

/// Rejects texts shorter than `min_chars` characters.
pub fn filter_length(doc: &ExtractedDoc, cfg: &FilterConfig) -> FilterDecision {
    let n = char_count(doc);
    if n < cfg.min_chars {
        FilterDecision::reject(Reason::TooShort, n as f64)
    } else {
        FilterDecision::keep()
    }
}

/// Rejects short texts that mention one of the notice keywords.
pub fn filter_keywords(doc: &ExtractedDoc, cfg: &FilterConfig) -> FilterDecision {
    let n = char_count(doc);
    if n >= cfg.keyword_min_chars {
        return FilterDecision::keep();
    }
    let folded = doc.text.to_lowercase();
    if cfg.keywords.iter().any(|k| folded.contains(k.as_str())) {
        FilterDecision::reject(Reason::BoilerplateKeywords, n as f64)
    } else {
        FilterDecision::keep()
    }
}

/// Rejects texts whose perplexity under `model` exceeds the threshold.
pub fn filter_perplexity(
    doc: &ExtractedDoc,
    model: &NGramModel,
    cfg: &FilterConfig,
) -> Result<FilterDecision, FilterError> {
    let ppl = perplexity(model, &doc.text).perplexity;
    if !ppl.is_finite() {
        return Err(FilterError::NonFinitePerplexity { url: doc.url.clone(), value: ppl });
    }
    Ok(if ppl > cfg.ppl_threshold {
        FilterDecision::reject(Reason::HighPerplexity, ppl)
    } else {
        FilterDecision { metric: Some(ppl), ..FilterDecision::keep() }
    })
}

/// Length, then keywords, then perplexity. The first rejection wins.
pub fn apply_filters(
    doc: &ExtractedDoc,
    model: &NGramModel,
    cfg: &FilterConfig,
) -> Result<FilterDecision, FilterError> {
    let d = filter_length(doc, cfg);
    if !d.is_keep() {
        return Ok(d);
    }
    let d = filter_keywords(doc, cfg);
    if !d.is_keep() {
        return Ok(d);
    }
    filter_perplexity(doc, model, cfg)
}
