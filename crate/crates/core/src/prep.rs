//! Training data preparation: sequence packing, dynamic masking, learning
//! rate schedules, and fine-tuning dataset utilities.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bpe::{BOS_ID, EOS_ID, MASK_ID, NUM_SPECIALS};

#[derive(Debug, thiserror::Error)]
pub enum PrepError {
    #[error("step {step} outside 0..={total}")]
    StepOutOfRange { step: u64, total: u64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dataset must have exactly two classes, found {0}")]
    NotBinary(usize),
    #[error("majority factor {0} > 1; the majority class can only be reduced")]
    MajorityFactor(f64),
    #[error("target {y} outside [{lo}, {hi}]")]
    TargetOutOfRange { y: f64, lo: f64, hi: f64 },
    #[error("range [{lo}, {hi}] is empty")]
    BadRange { lo: f64, hi: f64 },
    #[error("truncated example record")]
    Truncated,
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Encoder pre-training constants. Only the schedule is computed here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub layers: u32,
    pub hidden: u32,
    pub heads: u32,
    pub batch_size: u32,
    pub total_steps: u64,
    pub warmup_steps: u64,
    pub peak_lr: f64,
    pub adam_eps: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub dropout: f64,
    pub max_seq_len: usize,
}

impl PretrainConfig {
    pub fn base() -> Self {
        PretrainConfig {
            layers: 12,
            hidden: 768,
            heads: 12,
            batch_size: 8000,
            total_steps: 125_000,
            warmup_steps: 10_000,
            peak_lr: 7e-4,
            adam_eps: 1e-6,
            adam_beta1: 0.9,
            adam_beta2: 0.98,
            dropout: 0.1,
            max_seq_len: 512,
        }
    }

    pub fn large() -> Self {
        PretrainConfig {
            layers: 24,
            hidden: 1024,
            heads: 16,
            batch_size: 30_000,
            total_steps: 50_000,
            ..Self::base()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "base" => Some(Self::base()),
            "large" => Some(Self::large()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), PrepError> {
        if self.warmup_steps >= self.total_steps {
            return Err(PrepError::Config("warmup_steps must be below total_steps".into()));
        }
        if !(self.peak_lr > 0.0) {
            return Err(PrepError::Config("peak_lr must be positive".into()));
        }
        if self.max_seq_len != 512 {
            return Err(PrepError::Config("max_seq_len must be 512".into()));
        }
        Ok(())
    }
}

/// Linear warmup from 0 to `peak`, then linear decay to 0 at `total`.
fn warmup_linear(peak: f64, warmup: u64, total: u64, step: u64) -> Result<f64, PrepError> {
    if step > total {
        return Err(PrepError::StepOutOfRange { step, total });
    }
    if warmup >= total {
        return Err(PrepError::Config(format!("warmup {warmup} must be below total {total}")));
    }
    Ok(if step <= warmup && warmup > 0 {
        peak * (step as f64 / warmup as f64)
    } else {
        peak * ((total - step) as f64 / (total - warmup) as f64)
    })
}

pub fn lr_at_step(cfg: &PretrainConfig, step: u64) -> Result<f64, PrepError> {
    warmup_linear(cfg.peak_lr, cfg.warmup_steps, cfg.total_steps, step)
}

pub const FINETUNE_PEAK_LR: f64 = 1e-5;
pub const FINETUNE_WARMUP_FRACTION: f64 = 0.06;

/// Warmup length for fine-tuning: `round(fraction * total)`, at least one step.
pub fn finetune_warmup_steps(total_steps: u64, warmup_fraction: f64) -> u64 {
    ((warmup_fraction * total_steps as f64).round() as u64).max(1)
}

/// Fine-tuning schedule. The decay after warmup is linear (degree 1).
pub fn finetune_lr_at_step(
    total_steps: u64,
    step: u64,
    peak: f64,
    warmup_fraction: f64,
) -> Result<f64, PrepError> {
    let warmup = finetune_warmup_steps(total_steps, warmup_fraction);
    warmup_linear(peak, warmup, total_steps, step)
}

/// Splits one document into `<s> … </s>` sequences of at most `max_len` ids.
/// Documents are never joined.
pub fn pack_document(tokens: &[u32], max_len: usize) -> Vec<Vec<u32>> {
    assert!(max_len > 2, "max_len must leave room for content");
    tokens
        .chunks(max_len - 2)
        .map(|chunk| {
            let mut seq = Vec::with_capacity(chunk.len() + 2);
            seq.push(BOS_ID);
            seq.extend_from_slice(chunk);
            seq.push(EOS_ID);
            seq
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskConfig {
    pub select_prob: f64,
    /// Share of selected positions replaced by `<mask>`.
    pub mask_frac: f64,
    /// Share of selected positions replaced by a random non-special id.
    pub random_frac: f64,
    /// Random replacements are drawn from `NUM_SPECIALS..vocab_size`.
    pub vocab_size: u32,
}

impl MaskConfig {
    pub fn new(vocab_size: u32) -> Self {
        MaskConfig { select_prob: 0.15, mask_frac: 0.8, random_frac: 0.1, vocab_size }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedExample {
    pub input_ids: Vec<u32>,
    pub mask_positions: Vec<u32>,
    pub labels: Vec<u32>,
    pub seed: u64,
    pub epoch: u32,
    pub index: u64,
}

/// Generator for one (seed, epoch, sequence index) triple.
pub fn example_rng(seed: u64, epoch: u32, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..12].copy_from_slice(&epoch.to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Masks a packed sequence. Special tokens are never selected.
pub fn apply_dynamic_mask(
    base: &[u32],
    cfg: &MaskConfig,
    seed: u64,
    epoch: u32,
    index: u64,
) -> MaskedExample {
    let mut rng = example_rng(seed, epoch, index);
    let mut input_ids = base.to_vec();
    let mut mask_positions = Vec::new();
    let mut labels = Vec::new();
    for (pos, id) in input_ids.iter_mut().enumerate() {
        if *id < NUM_SPECIALS {
            continue;
        }
        if rng.random::<f64>() >= cfg.select_prob {
            continue;
        }
        mask_positions.push(pos as u32);
        labels.push(*id);
        let action = rng.random::<f64>();
        if action < cfg.mask_frac {
            *id = MASK_ID;
        } else if action < cfg.mask_frac + cfg.random_frac && cfg.vocab_size > NUM_SPECIALS {
            *id = rng.random_range(NUM_SPECIALS..cfg.vocab_size);
        }
    }
    MaskedExample { input_ids, mask_positions, labels, seed, epoch, index }
}

/// Masks every sequence for one epoch; sequence `i` uses index `i`.
pub fn mask_epoch(bases: &[Vec<u32>], cfg: &MaskConfig, seed: u64, epoch: u32) -> Vec<MaskedExample> {
    use rayon::prelude::*;
    bases
        .par_iter()
        .enumerate()
        .map(|(i, b)| apply_dynamic_mask(b, cfg, seed, epoch, i as u64))
        .collect()
}

fn write_ids<W: Write>(w: &mut W, ids: &[u32]) -> io::Result<()> {
    w.write_all(&(ids.len() as u32).to_le_bytes())?;
    for id in ids {
        w.write_all(&id.to_le_bytes())?;
    }
    Ok(())
}

/// Binary record: u64 seed, u32 epoch, u64 index, then input ids, mask
/// positions and labels, each a u32 count followed by u32 values, all little-endian.
pub fn write_example<W: Write>(w: &mut W, ex: &MaskedExample) -> io::Result<()> {
    w.write_all(&ex.seed.to_le_bytes())?;
    w.write_all(&ex.epoch.to_le_bytes())?;
    w.write_all(&ex.index.to_le_bytes())?;
    write_ids(w, &ex.input_ids)?;
    write_ids(w, &ex.mask_positions)?;
    write_ids(w, &ex.labels)
}

fn read_exact_or_eof<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<bool, PrepError> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) if filled == 0 => return Ok(false),
            Ok(0) => return Err(PrepError::Truncated),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(true)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, PrepError> {
    let mut b = [0u8; 4];
    if !read_exact_or_eof(r, &mut b)? {
        return Err(PrepError::Truncated);
    }
    Ok(u32::from_le_bytes(b))
}

fn read_ids<R: Read>(r: &mut R) -> Result<Vec<u32>, PrepError> {
    let n = read_u32(r)?;
    (0..n).map(|_| read_u32(r)).collect()
}

/// Reads the next record, or None at a clean end of stream.
pub fn read_example<R: Read>(r: &mut R) -> Result<Option<MaskedExample>, PrepError> {
    let mut head = [0u8; 20];
    if !read_exact_or_eof(r, &mut head)? {
        return Ok(None);
    }
    Ok(Some(MaskedExample {
        seed: u64::from_le_bytes(head[..8].try_into().unwrap()),
        epoch: u32::from_le_bytes(head[8..12].try_into().unwrap()),
        index: u64::from_le_bytes(head[12..].try_into().unwrap()),
        input_ids: read_ids(r)?,
        mask_positions: read_ids(r)?,
        labels: read_ids(r)?,
    }))
}

pub fn read_examples<R: Read>(mut r: R) -> Result<Vec<MaskedExample>, PrepError> {
    let mut out = Vec::new();
    while let Some(ex) = read_example(&mut r)? {
        out.push(ex);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    Binary,
    Multiclass,
    Scalar,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Sample {
    pub text: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub samples: Vec<Sample>,
    pub label_kind: LabelKind,
}

impl LabeledDataset {
    pub fn new(samples: Vec<Sample>, label_kind: LabelKind) -> Self {
        LabeledDataset { samples, label_kind }
    }

    pub fn class_counts(&self) -> BTreeMap<&str, usize> {
        let mut counts = BTreeMap::new();
        for s in &self.samples {
            *counts.entry(s.label.as_str()).or_default() += 1;
        }
        counts
    }
}

/// Rounds half away from zero.
fn target_count(count: usize, factor: f64) -> usize {
    (count as f64 * factor).round() as usize
}

/// Oversamples the minority class to `round(n * minority_factor)` by whole-set
/// repetition plus a seeded top-up drawn without replacement, and reduces the
/// majority to `round(n * majority_factor)` by seeded sampling without
/// replacement. The result is shuffled. On equal counts the label that sorts
/// first is the majority.
pub fn resample_imbalanced(
    ds: &LabeledDataset,
    minority_factor: f64,
    majority_factor: f64,
    seed: u64,
) -> Result<LabeledDataset, PrepError> {
    if majority_factor > 1.0 {
        return Err(PrepError::MajorityFactor(majority_factor));
    }
    if !(minority_factor >= 0.0 && majority_factor >= 0.0) {
        return Err(PrepError::Config("resampling factors must be non-negative".into()));
    }
    let counts = ds.class_counts();
    if counts.len() != 2 {
        return Err(PrepError::NotBinary(counts.len()));
    }
    let mut classes: Vec<(&str, usize)> = counts.into_iter().collect();
    classes.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let (majority, minority) = (classes[0].0, classes[1].0);
    let of = |label: &str| -> Vec<&Sample> { ds.samples.iter().filter(|s| s.label == label).collect() };
    let (maj, min) = (of(majority), of(minority));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<Sample> = Vec::new();

    let want = target_count(min.len(), minority_factor);
    for _ in 0..want / min.len() {
        out.extend(min.iter().map(|s| (*s).clone()));
    }
    let top_up = rand::seq::index::sample(&mut rng, min.len(), want % min.len());
    let mut top_up = top_up.into_vec();
    top_up.sort_unstable();
    out.extend(top_up.into_iter().map(|i| min[i].clone()));

    let keep = target_count(maj.len(), majority_factor);
    let mut kept = rand::seq::index::sample(&mut rng, maj.len(), keep).into_vec();
    kept.sort_unstable();
    out.extend(kept.into_iter().map(|i| maj[i].clone()));

    out.shuffle(&mut rng);
    Ok(LabeledDataset::new(out, ds.label_kind))
}

fn check_range(lo: f64, hi: f64) -> Result<(), PrepError> {
    if lo < hi {
        Ok(())
    } else {
        Err(PrepError::BadRange { lo, hi })
    }
}

/// Maps a target in `[lo, hi]` onto `[0, 1]`.
pub fn scale_targets(y: f64, lo: f64, hi: f64) -> Result<f64, PrepError> {
    check_range(lo, hi)?;
    if !(lo..=hi).contains(&y) {
        return Err(PrepError::TargetOutOfRange { y, lo, hi });
    }
    Ok((y - lo) / (hi - lo))
}

/// Clamps a prediction to `[0, 1]` and maps it back onto `[lo, hi]`.
pub fn unscale_prediction(p: f64, lo: f64, hi: f64) -> Result<f64, PrepError> {
    check_range(lo, hi)?;
    Ok(lo + p.clamp(0.0, 1.0) * (hi - lo))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets() {
        let b = PretrainConfig::base();
        b.validate().unwrap();
        assert_eq!((b.layers, b.hidden, b.heads, b.batch_size), (12, 768, 12, 8000));
        let l = PretrainConfig::large();
        l.validate().unwrap();
        assert_eq!((l.layers, l.hidden, l.heads, l.batch_size, l.total_steps), (24, 1024, 16, 30000, 50000));
        assert_eq!((l.warmup_steps, l.peak_lr, l.adam_eps, l.adam_beta2), (10000, 7e-4, 1e-6, 0.98));
    }

    #[test]
    fn schedule_points() {
        let b = PretrainConfig::base();
        assert_eq!(lr_at_step(&b, 10_000).unwrap(), 7e-4);
        assert_eq!(lr_at_step(&b, 0).unwrap(), 0.0);
        assert_eq!(lr_at_step(&b, 125_000).unwrap(), 0.0);
        assert_eq!(lr_at_step(&b, 5_000).unwrap(), 3.5e-4);
        assert!(matches!(lr_at_step(&b, 125_001), Err(PrepError::StepOutOfRange { .. })));
        assert_eq!(finetune_lr_at_step(1000, 60, FINETUNE_PEAK_LR, 0.06).unwrap(), 1e-5);
        assert_eq!(finetune_lr_at_step(1000, 0, FINETUNE_PEAK_LR, 0.06).unwrap(), 0.0);
        assert_eq!(finetune_lr_at_step(1000, 1000, FINETUNE_PEAK_LR, 0.06).unwrap(), 0.0);
    }

    #[test]
    fn packing() {
        let toks: Vec<u32> = (0..1021).map(|i| 300 + i).collect();
        let seqs = pack_document(&toks, 512);
        assert_eq!(seqs.iter().map(Vec::len).collect::<Vec<_>>(), [512, 512, 3]);
        assert!(seqs.iter().all(|s| s[0] == BOS_ID && *s.last().unwrap() == EOS_ID));
        assert_eq!(pack_document(&toks[..510], 512).len(), 1);
        assert!(pack_document(&[], 512).is_empty());
    }

    #[test]
    fn masking_is_keyed() {
        let base = pack_document(&(300..800).collect::<Vec<_>>(), 512).remove(0);
        let cfg = MaskConfig::new(1000);
        let a = apply_dynamic_mask(&base, &cfg, 7, 1, 3);
        assert_eq!(a, apply_dynamic_mask(&base, &cfg, 7, 1, 3));
        assert_ne!(a.mask_positions, apply_dynamic_mask(&base, &cfg, 7, 2, 3).mask_positions);
        assert!(!a.mask_positions.contains(&0));
        assert_eq!(a.labels.len(), a.mask_positions.len());
        let only_specials = apply_dynamic_mask(&[BOS_ID, EOS_ID], &cfg, 1, 1, 1);
        assert!(only_specials.mask_positions.is_empty());
    }

    #[test]
    fn binary_roundtrip() {
        let cfg = MaskConfig::new(1000);
        let exs = mask_epoch(&[vec![0, 400, 500, 1], vec![0, 1]], &cfg, 1, 0);
        let mut buf = Vec::new();
        for e in &exs {
            write_example(&mut buf, e).unwrap();
        }
        assert_eq!(read_examples(&buf[..]).unwrap(), exs);
        assert!(matches!(read_examples(&buf[..buf.len() - 1]), Err(PrepError::Truncated)));
    }

    fn dataset(pos: usize, neg: usize) -> LabeledDataset {
        let mk = |label: &str, i: usize| Sample { text: format!("{label}{i}"), label: label.into() };
        let samples = (0..pos).map(|i| mk("1", i)).chain((0..neg).map(|i| mk("0", i))).collect();
        LabeledDataset::new(samples, LabelKind::Binary)
    }

    #[test]
    fn resampling_counts() {
        let ds = dataset(100, 1000);
        let out = resample_imbalanced(&ds, 3.0, 0.75, 5).unwrap();
        let c = out.class_counts();
        assert_eq!((c["1"], c["0"]), (300, 750));
        let same = resample_imbalanced(&ds, 1.0, 1.0, 5).unwrap();
        let (mut a, mut b) = (same.samples, ds.samples.clone());
        a.sort();
        b.sort();
        assert_eq!(a, b);
        assert!(matches!(resample_imbalanced(&ds, 3.0, 1.5, 5), Err(PrepError::MajorityFactor(_))));
    }

    #[test]
    fn scaling() {
        assert_eq!(scale_targets(3.0, 1.0, 5.0).unwrap(), 0.5);
        assert_eq!(unscale_prediction(0.5, 1.0, 5.0).unwrap(), 3.0);
        assert_eq!(unscale_prediction(-0.1, 1.0, 5.0).unwrap(), 1.0);
        assert_eq!(unscale_prediction(1.2, 1.0, 5.0).unwrap(), 5.0);
        assert!(scale_targets(6.0, 1.0, 5.0).is_err());
        assert!(scale_targets(1.0, 5.0, 5.0).is_err());
    }
}
