//! Byte-pair-encoding subword vocabulary with byte fallback.
//!
//! Words are whitespace-separated. The boundary marker `▁` is fused with the
//! first character of each word, so `"ab"` starts as `["▁a", "b"]`. Every
//! byte has its own token, which makes encoding total and lossless.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap, HashSet};
use std::io::{self, BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

/// Word-boundary marker.
pub const MARKER: char = '\u{2581}';
pub const MARKER_STR: &str = "\u{2581}";

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const MASK: &str = "<mask>";

pub const BOS_ID: u32 = 0;
pub const EOS_ID: u32 = 1;
pub const PAD_ID: u32 = 2;
pub const UNK_ID: u32 = 3;
pub const MASK_ID: u32 = 4;

/// Specials in id order.
pub const SPECIALS: [&str; 5] = [BOS, EOS, PAD, UNK, MASK];
pub const NUM_SPECIALS: u32 = SPECIALS.len() as u32;
/// Id of the byte token `<0x00>`.
pub const FIRST_BYTE_ID: u32 = NUM_SPECIALS;
/// Id of the bare marker piece.
pub const MARKER_ID: u32 = FIRST_BYTE_ID + 256;
/// Largest vocabulary that may be requested.
pub const MAX_VOCAB_SIZE: usize = 50_000;
/// Pairs seen fewer times than this are never merged.
pub const MIN_PAIR_COUNT: u64 = 2;

#[derive(Debug, thiserror::Error)]
pub enum BpeError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("vocab size {requested} must exceed the {base} base symbols")]
    VocabTooSmall { requested: usize, base: usize },
    #[error("vocab size {0} exceeds the cap of {MAX_VOCAB_SIZE}")]
    VocabTooLarge(usize),
    #[error("token id {id} out of range for a vocabulary of {len}")]
    IdOutOfRange { id: u32, len: usize },
    #[error("invalid vocabulary file: {0}")]
    Format(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn byte_piece(b: u8) -> String {
    format!("<0x{b:02X}>")
}

/// Whether `piece` is one of the 256 byte tokens.
pub fn parse_byte_piece(piece: &str) -> Option<u8> {
    let hex = piece.strip_prefix("<0x")?.strip_suffix('>')?;
    if hex.len() != 2 || !hex.bytes().all(|b| matches!(b, b'0'..=b'9' | b'A'..=b'F')) {
        return None;
    }
    u8::from_str_radix(hex, 16).ok()
}

fn is_reserved(piece: &str) -> bool {
    SPECIALS.contains(&piece) || parse_byte_piece(piece).is_some() || piece == MARKER_STR
}

/// Word frequency table. Tables built on separate shards combine with [`merge`](Self::merge).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WordCounts(BTreeMap<String, u64>);

impl WordCounts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_text(text: &str) -> Self {
        let mut wc = Self::new();
        wc.add_text(text);
        wc
    }

    pub fn add_text(&mut self, text: &str) {
        for w in text.split_whitespace() {
            self.add(w, 1);
        }
    }

    pub fn add(&mut self, word: &str, count: u64) {
        if count > 0 && !word.is_empty() {
            *self.0.entry(word.to_string()).or_default() += count;
        }
    }

    pub fn from_reader<R: BufRead>(r: R) -> io::Result<Self> {
        let mut wc = Self::new();
        for line in r.lines() {
            wc.add_text(&line?);
        }
        Ok(wc)
    }

    pub fn merge(&mut self, other: &WordCounts) {
        for (w, c) in &other.0 {
            self.add(w, *c);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u64)> {
        self.0.iter().map(|(w, c)| (w.as_str(), *c))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Pieces of one character: either the (possibly marked) character itself
/// when `known` accepts it, or its UTF-8 bytes after an optional bare marker.
fn char_pieces(c: char, initial: bool, known: impl Fn(&str) -> bool, out: &mut Vec<String>) {
    if c != MARKER {
        let piece = if initial { format!("{MARKER}{c}") } else { c.to_string() };
        if known(&piece) {
            out.push(piece);
            return;
        }
    }
    if initial {
        out.push(MARKER_STR.to_string());
        if c != MARKER && known(&c.to_string()) {
            out.push(c.to_string());
            return;
        }
    }
    let mut buf = [0u8; 4];
    out.extend(c.encode_utf8(&mut buf).bytes().map(byte_piece));
}

/// Initial segmentation of a training word.
pub fn word_base_symbols(word: &str) -> Vec<String> {
    let mut out = Vec::with_capacity(word.len());
    for (i, c) in word.chars().enumerate() {
        char_pieces(c, i == 0, |_| true, &mut out);
    }
    out
}

/// Trained vocabulary: pieces by id, merge list in rank order.
#[derive(Debug, Clone)]
pub struct BpeVocab {
    pieces: Vec<String>,
    token_to_id: HashMap<String, u32>,
    merges: Vec<(String, String)>,
    ranks: HashMap<(u32, u32), (usize, u32)>,
}

impl PartialEq for BpeVocab {
    fn eq(&self, other: &Self) -> bool {
        self.pieces == other.pieces && self.merges == other.merges
    }
}

impl BpeVocab {
    fn from_parts(pieces: Vec<String>, merges: Vec<(String, String)>) -> Result<Self, BpeError> {
        let mut token_to_id = HashMap::with_capacity(pieces.len());
        for (i, p) in pieces.iter().enumerate() {
            if token_to_id.insert(p.clone(), i as u32).is_some() {
                return Err(BpeError::Format(format!("duplicate piece {p:?}")));
            }
        }
        for (i, s) in SPECIALS.iter().enumerate() {
            if pieces.get(i).map(String::as_str) != Some(*s) {
                return Err(BpeError::Format(format!("special {s} must have id {i}")));
            }
        }
        for b in 0..=255u8 {
            if token_to_id.get(&byte_piece(b)) != Some(&(FIRST_BYTE_ID + b as u32)) {
                return Err(BpeError::Format(format!("byte token {} misplaced", byte_piece(b))));
            }
        }
        if token_to_id.get(MARKER_STR) != Some(&MARKER_ID) {
            return Err(BpeError::Format("marker piece misplaced".into()));
        }
        let mut ranks = HashMap::with_capacity(merges.len());
        for (rank, (l, r)) in merges.iter().enumerate() {
            let lookup = |p: &str| {
                token_to_id
                    .get(p)
                    .copied()
                    .ok_or_else(|| BpeError::Format(format!("merge {rank} uses unknown piece {p:?}")))
            };
            let key = (lookup(l)?, lookup(r)?);
            let out = lookup(&format!("{l}{r}"))?;
            if out <= MARKER_ID {
                return Err(BpeError::Format(format!("merge {rank} outputs a reserved piece")));
            }
            ranks.entry(key).or_insert((rank, out));
        }
        Ok(BpeVocab { pieces, token_to_id, merges, ranks })
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn piece(&self, id: u32) -> Option<&str> {
        self.pieces.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, piece: &str) -> Option<u32> {
        self.token_to_id.get(piece).copied()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }

    pub fn is_special(id: u32) -> bool {
        id < NUM_SPECIALS
    }

    fn known(&self, piece: &str) -> bool {
        self.token_to_id.contains_key(piece)
    }

    /// Ids of one word. `initial` marks a word preceded by a space.
    pub fn encode_word(&self, word: &str, initial: bool, out: &mut Vec<u32>) {
        let mut syms = Vec::with_capacity(word.len());
        for (i, c) in word.chars().enumerate() {
            char_pieces(c, initial && i == 0, |p| self.known(p), &mut syms);
        }
        let mut ids: Vec<u32> = syms.iter().map(|p| self.token_to_id[p.as_str()]).collect();
        loop {
            let best = ids
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0], w[1])).map(|&(rank, out)| (rank, w[0], w[1], out)))
                .min();
            let Some((_, a, b, merged)) = best else { break };
            let mut next = Vec::with_capacity(ids.len());
            let mut i = 0;
            while i < ids.len() {
                if i + 1 < ids.len() && ids[i] == a && ids[i + 1] == b {
                    next.push(merged);
                    i += 2;
                } else {
                    next.push(ids[i]);
                    i += 1;
                }
            }
            ids = next;
        }
        out.extend(ids);
    }

    /// Encodes any string. Never produces `<unk>`.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        if text.is_empty() {
            return out;
        }
        let padded = format!(" {text}");
        let mut rest = padded.as_str();
        while let Some(c) = rest.chars().next() {
            if c.is_whitespace() {
                let after = &rest[c.len_utf8()..];
                let starts_word = after.chars().next().is_some_and(|n| !n.is_whitespace());
                if c == ' ' && starts_word {
                    let end = after.find(char::is_whitespace).unwrap_or(after.len());
                    self.encode_word(&after[..end], true, &mut out);
                    rest = &after[end..];
                } else {
                    let mut buf = [0u8; 4];
                    out.extend(c.encode_utf8(&mut buf).bytes().map(|b| FIRST_BYTE_ID + b as u32));
                    rest = after;
                }
            } else {
                let end = rest.find(char::is_whitespace).unwrap_or(rest.len());
                self.encode_word(&rest[..end], false, &mut out);
                rest = &rest[end..];
            }
        }
        out
    }

    /// Inverse of [`encode`](Self::encode). Specials render as nothing.
    pub fn decode(&self, ids: &[u32]) -> Result<String, BpeError> {
        let mut bytes = Vec::new();
        for &id in ids {
            let piece = self
                .piece(id)
                .ok_or(BpeError::IdOutOfRange { id, len: self.len() })?;
            if Self::is_special(id) {
                continue;
            }
            if (FIRST_BYTE_ID..MARKER_ID).contains(&id) {
                bytes.push((id - FIRST_BYTE_ID) as u8);
            } else {
                bytes.extend_from_slice(piece.replace(MARKER, " ").as_bytes());
            }
        }
        let text = String::from_utf8(bytes)
            .unwrap_or_else(|e| String::from_utf8_lossy(e.as_bytes()).into_owned());
        Ok(match text.strip_prefix(' ') {
            Some(rest) => rest.to_string(),
            None => text,
        })
    }

    pub fn to_json(&self) -> Result<String, BpeError> {
        let file = VocabFile {
            merges: self.merges.iter().map(|(l, r)| [l.clone(), r.clone()]).collect(),
            vocab: self.pieces.iter().enumerate().map(|(i, p)| (p.clone(), i as u32)).collect(),
            specials: SPECIALS.iter().enumerate().map(|(i, s)| (s.to_string(), i as u32)).collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(json: &str) -> Result<Self, BpeError> {
        let file: VocabFile = serde_json::from_str(json)?;
        for (i, s) in SPECIALS.iter().enumerate() {
            if file.specials.get(*s) != Some(&(i as u32)) {
                return Err(BpeError::Format(format!("specials: {s} must map to {i}")));
            }
        }
        let mut pieces = vec![None; file.vocab.len()];
        for (p, id) in file.vocab {
            let slot = pieces
                .get_mut(id as usize)
                .ok_or_else(|| BpeError::Format(format!("vocab: id {id} is not dense")))?;
            if slot.replace(p).is_some() {
                return Err(BpeError::Format(format!("vocab: id {id} used twice")));
            }
        }
        let pieces = pieces
            .into_iter()
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| BpeError::Format("vocab: ids are not dense".into()))?;
        let merges = file.merges.into_iter().map(|[l, r]| (l, r)).collect();
        Self::from_parts(pieces, merges)
    }

    /// Plain merge list, one `left right` pair per line in rank order.
    pub fn merges_txt(&self) -> String {
        let mut s = String::new();
        for (l, r) in &self.merges {
            s.push_str(l);
            s.push(' ');
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    /// Writes `path` (JSON) and a sibling `merges.txt`.
    pub fn save(&self, path: &Path) -> Result<(), BpeError> {
        std::fs::write(path, self.to_json()?)?;
        let merges = path.with_file_name("merges.txt");
        let mut f = io::BufWriter::new(std::fs::File::create(merges)?);
        f.write_all(self.merges_txt().as_bytes())?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, BpeError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    merges: Vec<[String; 2]>,
    vocab: BTreeMap<String, u32>,
    specials: BTreeMap<String, u32>,
}

/// Number of base pieces a vocabulary trained on `words` starts with.
pub fn base_size(words: &WordCounts) -> usize {
    MARKER_ID as usize + 1 + alphabet(words).len()
}

fn alphabet(words: &WordCounts) -> BTreeSet<String> {
    words
        .iter()
        .flat_map(|(w, _)| word_base_symbols(w))
        .filter(|p| !is_reserved(p))
        .collect()
}

/// Greedy BPE: repeatedly merges the most frequent adjacent pair within
/// words, ties broken by the lexicographically smallest (left, right), until
/// the vocabulary holds `vocab_size` pieces or no pair occurs twice.
pub fn train_bpe(words: &WordCounts, vocab_size: usize) -> Result<BpeVocab, BpeError> {
    if words.is_empty() {
        return Err(BpeError::EmptyCorpus);
    }
    if vocab_size > MAX_VOCAB_SIZE {
        return Err(BpeError::VocabTooLarge(vocab_size));
    }
    let mut pieces: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    pieces.extend((0..=255u8).map(byte_piece));
    pieces.push(MARKER_STR.to_string());
    pieces.extend(alphabet(words));
    if vocab_size <= pieces.len() {
        return Err(BpeError::VocabTooSmall { requested: vocab_size, base: pieces.len() });
    }
    let mut ids: HashMap<String, u32> =
        pieces.iter().enumerate().map(|(i, p)| (p.clone(), i as u32)).collect();

    let mut trainer = Trainer::new(
        words
            .iter()
            .map(|(w, c)| (word_base_symbols(w).iter().map(|p| ids[p.as_str()]).collect(), c))
            .collect(),
    );
    let mut merges = Vec::new();
    let mut heap: BinaryHeap<(u64, Reverse<(String, String)>, u32, u32)> = trainer
        .counts
        .iter()
        .filter(|&(&p, _)| mergeable(&pieces, p))
        .map(|(&(a, b), &c)| (c, Reverse((pieces[a as usize].clone(), pieces[b as usize].clone())), a, b))
        .collect();

    while pieces.len() < vocab_size {
        let Some((count, Reverse((left, right)), a, b)) = heap.pop() else { break };
        if trainer.counts.get(&(a, b)).copied().unwrap_or(0) != count {
            continue;
        }
        if count < MIN_PAIR_COUNT {
            break;
        }
        let joined = format!("{left}{right}");
        let out = match ids.get(&joined) {
            Some(&id) => id,
            None => {
                let id = pieces.len() as u32;
                ids.insert(joined.clone(), id);
                pieces.push(joined);
                id
            }
        };
        merges.push((left, right));
        for (p, c) in trainer.apply(a, b, out) {
            if c > 0 && mergeable(&pieces, p) {
                heap.push((c, Reverse((pieces[p.0 as usize].clone(), pieces[p.1 as usize].clone())), p.0, p.1));
            }
        }
    }
    BpeVocab::from_parts(pieces, merges)
}

fn mergeable(pieces: &[String], (a, b): (u32, u32)) -> bool {
    let (l, r) = (&pieces[a as usize], &pieces[b as usize]);
    parse_byte_piece(l).is_none()
        && parse_byte_piece(r).is_none()
        && !is_reserved(&format!("{l}{r}"))
}

/// Incremental pair statistics over the training words.
struct Trainer {
    words: Vec<(Vec<u32>, u64)>,
    counts: HashMap<(u32, u32), u64>,
    where_: HashMap<(u32, u32), HashSet<usize>>,
}

impl Trainer {
    fn new(words: Vec<(Vec<u32>, u64)>) -> Self {
        let mut t = Trainer { words, counts: HashMap::new(), where_: HashMap::new() };
        for i in 0..t.words.len() {
            t.count_word(i, true);
        }
        t
    }

    fn count_word(&mut self, i: usize, add: bool) -> Vec<(u32, u32)> {
        let (syms, c) = &self.words[i];
        let mut touched = Vec::with_capacity(syms.len());
        for w in syms.windows(2) {
            let p = (w[0], w[1]);
            let e = self.counts.entry(p).or_default();
            if add {
                *e += c;
                self.where_.entry(p).or_default().insert(i);
            } else {
                *e -= c;
            }
            touched.push(p);
        }
        touched
    }

    /// Merges `(a, b)` into `out` everywhere; returns the pairs whose counts changed.
    fn apply(&mut self, a: u32, b: u32, out: u32) -> Vec<((u32, u32), u64)> {
        let mut affected: Vec<usize> = self
            .where_
            .remove(&(a, b))
            .map(|s| s.into_iter().collect())
            .unwrap_or_default();
        affected.sort_unstable();
        let mut touched = HashSet::new();
        for i in affected {
            if !self.words[i].0.windows(2).any(|w| w[0] == a && w[1] == b) {
                continue;
            }
            touched.extend(self.count_word(i, false));
            let syms = &self.words[i].0;
            let mut next = Vec::with_capacity(syms.len());
            let mut j = 0;
            while j < syms.len() {
                if j + 1 < syms.len() && syms[j] == a && syms[j + 1] == b {
                    next.push(out);
                    j += 2;
                } else {
                    next.push(syms[j]);
                    j += 1;
                }
            }
            self.words[i].0 = next;
            touched.extend(self.count_word(i, true));
        }
        self.counts.remove(&(a, b));
        let mut changed: Vec<_> = touched
            .into_iter()
            .filter(|p| *p != (a, b))
            .map(|p| (p, self.counts.get(&p).copied().unwrap_or(0)))
            .collect();
        changed.sort_unstable();
        changed
    }
}
