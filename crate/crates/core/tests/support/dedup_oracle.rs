//! Quadratic reference for exact deduplication.

use unicode_normalization::UnicodeNormalization;

pub fn canonical(text: &str) -> String {
    let nfc: String = text.nfc().collect();
    nfc.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Indices of documents with no earlier document of equal canonical form.
pub fn kept_indices(texts: &[String]) -> Vec<usize> {
    let canon: Vec<String> = texts.iter().map(|t| canonical(t)).collect();
    (0..canon.len())
        .filter(|&i| (0..i).all(|j| canon[j] != canon[i]))
        .collect()
}
