//! Character-trigram language identification, used when an archive record
//! carries no language annotation. Each profile is an n-gram model over
//! characters trained on a short sample; the lowest perplexity wins.

use std::sync::OnceLock;

use crate::ngram::{train_ngram, NGramModel, NgramError, PerplexityReport};

const SAMPLES: &[(&str, &str)] = &[
    ("pol", include_str!("pol.txt")),
    ("eng", include_str!("eng.txt")),
    ("deu", include_str!("deu.txt")),
];

/// Characters of input considered when scoring.
const MAX_SCORED_CHARS: usize = 4000;

const ORDER: usize = 3;

pub struct LanguageIdentifier {
    profiles: Vec<(String, NGramModel)>,
}

impl LanguageIdentifier {
    /// Identifier over the bundled Polish, English and German samples.
    pub fn builtin() -> &'static LanguageIdentifier {
        static BUILTIN: OnceLock<LanguageIdentifier> = OnceLock::new();
        BUILTIN.get_or_init(|| {
            LanguageIdentifier::from_samples(SAMPLES).expect("bundled samples train")
        })
    }

    pub fn from_samples(samples: &[(&str, &str)]) -> Result<Self, NgramError> {
        let profiles = samples
            .iter()
            .map(|(code, text)| Ok((code.to_string(), train_ngram(&char_lines(text), ORDER)?)))
            .collect::<Result<_, NgramError>>()?;
        Ok(LanguageIdentifier { profiles })
    }

    pub fn languages(&self) -> impl Iterator<Item = &str> {
        self.profiles.iter().map(|(c, _)| c.as_str())
    }

    /// Per-language character perplexity, in profile order.
    pub fn scores(&self, text: &str) -> Vec<(&str, f64)> {
        let truncated: String = text.chars().take(MAX_SCORED_CHARS).collect();
        let lines = char_lines(&truncated);
        self.profiles
            .iter()
            .map(|(code, model)| {
                let mut r = PerplexityReport::default();
                for l in &lines {
                    r.add(&model.sentence_report(l));
                }
                (code.as_str(), r.perplexity)
            })
            .collect()
    }

    /// Best-scoring language, or None for text without letters.
    pub fn identify(&self, text: &str) -> Option<&str> {
        if !text.chars().any(char::is_alphabetic) {
            return None;
        }
        self.scores(text)
            .into_iter()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(code, _)| code)
    }
}

fn char_lines(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .map(|line| {
            line.split_whitespace()
                .collect::<Vec<_>>()
                .join(" ")
                .to_lowercase()
                .chars()
                .map(|c| if c == ' ' { "_".to_string() } else { c.to_string() })
                .collect::<Vec<_>>()
        })
        .filter(|l| !l.is_empty())
        .collect()
}
