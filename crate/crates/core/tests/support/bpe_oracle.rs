//! Naive BPE trainer: recounts every pair from scratch at each step.

use std::collections::{BTreeMap, HashSet};

const MARKER: char = '\u{2581}';
const SPECIALS: [&str; 5] = ["<s>", "</s>", "<pad>", "<unk>", "<mask>"];

fn byte_token(b: u8) -> String {
    format!("<0x{b:02X}>")
}

fn is_byte_token(s: &str) -> bool {
    (0..=255u8).any(|b| byte_token(b) == s)
}

fn reserved(s: &str) -> bool {
    SPECIALS.contains(&s) || is_byte_token(s) || s == MARKER.to_string()
}

fn initial_symbols(word: &str) -> Vec<String> {
    let mut out = Vec::new();
    for (i, c) in word.chars().enumerate() {
        if c == MARKER {
            if i == 0 {
                out.push(MARKER.to_string());
            }
            let mut buf = [0u8; 4];
            out.extend(c.encode_utf8(&mut buf).bytes().map(byte_token));
        } else if i == 0 {
            out.push(format!("{MARKER}{c}"));
        } else {
            out.push(c.to_string());
        }
    }
    out
}

/// Merge sequence for `text` under the given vocabulary budget.
pub fn merges(text: &str, vocab_size: usize) -> Vec<(String, String)> {
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    for w in text.split_whitespace() {
        *counts.entry(w).or_default() += 1;
    }
    let mut words: Vec<(Vec<String>, u64)> =
        counts.iter().map(|(w, c)| (initial_symbols(w), *c)).collect();
    let mut vocab: HashSet<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    vocab.extend((0..=255u8).map(byte_token));
    vocab.insert(MARKER.to_string());
    for (syms, _) in &words {
        vocab.extend(syms.iter().cloned());
    }
    let mut out = Vec::new();
    while vocab.len() < vocab_size {
        let mut pairs: BTreeMap<(String, String), u64> = BTreeMap::new();
        for (syms, c) in &words {
            for w in syms.windows(2) {
                if is_byte_token(&w[0]) || is_byte_token(&w[1]) || reserved(&format!("{}{}", w[0], w[1])) {
                    continue;
                }
                *pairs.entry((w[0].clone(), w[1].clone())).or_default() += c;
            }
        }
        // BTreeMap iterates pairs in ascending order, so the first maximum is
        // the lexicographically smallest among ties.
        let mut best: Option<(&(String, String), u64)> = None;
        for (p, &c) in &pairs {
            if best.map_or(true, |(_, bc)| c > bc) {
                best = Some((p, c));
            }
        }
        let Some((pair, count)) = best else { break };
        if count < 2 {
            break;
        }
        let (a, b) = pair.clone();
        let joined = format!("{a}{b}");
        for (syms, _) in &mut words {
            let mut next = Vec::new();
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == a && syms[i + 1] == b {
                    next.push(joined.clone());
                    i += 2;
                } else {
                    next.push(syms[i].clone());
                    i += 1;
                }
            }
            *syms = next;
        }
        vocab.insert(joined);
        out.push((a, b));
    }
    out
}
