//! Exact document deduplication on a 128-bit digest of canonical text.

use std::collections::HashSet;
use std::fmt;
use std::io::{self, BufRead, Write};

use unicode_normalization::UnicodeNormalization;
use xxhash_rust::xxh3::xxh3_128;

use crate::html::ExtractedDoc;

/// Content digest of a canonical text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest(pub u128);

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:032x}", self.0)
    }
}

impl std::str::FromStr for Digest {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        u128::from_str_radix(s.trim(), 16).map(Digest)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DedupError {
    #[error(
        "digest set reached its cap of {cap} entries; split the input into shards and \
         dedup in shard-merge mode"
    )]
    CapacityExceeded { cap: usize },
    #[error("digest log line {line}: {text:?} is not a hex digest")]
    BadDigest { line: usize, text: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// NFC, whitespace runs collapsed to one space, ends trimmed. Case is kept.
pub fn canonicalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending_space = false;
    for c in text.nfc() {
        if c.is_whitespace() {
            pending_space = !out.is_empty();
        } else {
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            out.push(c);
        }
    }
    out
}

pub fn digest(text: &str) -> Digest {
    Digest(xxh3_128(canonicalize(text).as_bytes()))
}

/// Seen-set with counters. `cap` bounds the number of stored digests.
#[derive(Debug, Default, Clone)]
pub struct DedupState {
    seen: HashSet<Digest>,
    pub kept_count: u64,
    pub dropped_count: u64,
    cap: Option<usize>,
}

impl DedupState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_cap(cap: usize) -> Self {
        DedupState { cap: Some(cap), ..Self::default() }
    }

    /// Records a digest; true when it was not seen before.
    pub fn insert(&mut self, d: Digest) -> Result<bool, DedupError> {
        if self.seen.contains(&d) {
            self.dropped_count += 1;
            return Ok(false);
        }
        if let Some(cap) = self.cap {
            if self.seen.len() >= cap {
                return Err(DedupError::CapacityExceeded { cap });
            }
        }
        self.seen.insert(d);
        self.kept_count += 1;
        Ok(true)
    }

    pub fn check_text(&mut self, text: &str) -> Result<bool, DedupError> {
        self.insert(digest(text))
    }

    pub fn processed(&self) -> u64 {
        self.kept_count + self.dropped_count
    }

    pub fn seen_len(&self) -> usize {
        self.seen.len()
    }

    pub fn contains(&self, d: &Digest) -> bool {
        self.seen.contains(d)
    }
}

/// Keeps the first document of each canonical text, in input order.
pub fn dedup_stream<I>(docs: I, state: &mut DedupState) -> Result<Vec<ExtractedDoc>, DedupError>
where
    I: IntoIterator<Item = ExtractedDoc>,
{
    let mut out = Vec::new();
    for doc in docs {
        if state.check_text(&doc.text)? {
            out.push(doc);
        }
    }
    Ok(out)
}

/// Shard-merge mode: each shard is deduplicated on its own, then a merge
/// pass over the shards in order drops documents seen in earlier shards.
/// Returns the kept documents per shard.
pub fn dedup_shards(
    shards: Vec<Vec<ExtractedDoc>>,
) -> Result<Vec<Vec<ExtractedDoc>>, DedupError> {
    use rayon::prelude::*;
    let local: Vec<Vec<(Digest, ExtractedDoc)>> = shards
        .into_par_iter()
        .map(|shard| {
            let mut seen = HashSet::new();
            shard
                .into_iter()
                .map(|d| (digest(&d.text), d))
                .filter(|(g, _)| seen.insert(*g))
                .collect()
        })
        .collect();
    let mut global = DedupState::new();
    local
        .into_iter()
        .map(|shard| {
            let mut kept = Vec::new();
            for (g, d) in shard {
                if global.insert(g)? {
                    kept.push(d);
                }
            }
            Ok(kept)
        })
        .collect()
}

/// Writes one lowercase hex digest per line.
pub fn write_digest_log<W: Write>(mut w: W, digests: &[Digest]) -> io::Result<()> {
    for d in digests {
        writeln!(w, "{d}")?;
    }
    w.flush()
}

pub fn read_digest_log<R: BufRead>(r: R) -> Result<Vec<Digest>, DedupError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let d = line
            .parse()
            .map_err(|_| DedupError::BadDigest { line: i + 1, text: line.clone() })?;
        out.push(d);
    }
    Ok(out)
}
