//! End-to-end corpus build: ingest, extract, filter, dedup.
//!
//! Every stage writes its shard outputs under `<output_dir>/<stage>/` and a
//! `_stage.json` marker when complete. A rerun with the same configuration
//! and inputs reuses completed stages.

pub mod manifest;
pub mod stages;

use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_128;

use crate::dedup::{write_digest_log, DedupError, DedupState};
use crate::filter::{FilterConfig, FilterError};
use crate::html::ExtractConfig;
use crate::jsonl::{AtomicFile, JsonlError};
use crate::ngram::{train_on_text, NGramModel, NgramError, MAX_ORDER};

pub use manifest::{render_table, CorpusManifest, CorpusSummary, StageStats};
use stages::{DEDUP, EXTRACT, FILTER, INGEST};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("language model: {0}")]
    Lm(#[from] NgramError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Dedup(#[from] DedupError),
    #[error("manifest self-check failed: {0}")]
    SelfCheck(String),
}

impl PipelineError {
    pub fn is_config(&self) -> bool {
        matches!(self, PipelineError::Config(_))
    }
}

fn io_at(path: &Path) -> impl Fn(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Glob patterns of WARC archives. Each matched file is one shard.
    pub inputs: Vec<String>,
    pub target_language: String,
    pub min_chars: usize,
    pub keyword_min_chars: usize,
    pub keywords: Vec<String>,
    pub ppl_threshold: f64,
    pub ngram_order: usize,
    /// Reference text for training the scoring model, one sentence per line.
    pub lm_reference: Option<PathBuf>,
    /// Pre-trained ARPA model; used instead of `lm_reference`.
    pub lm_model: Option<PathBuf>,
    pub max_link_density: f64,
    pub min_block_chars: usize,
    pub vocab_size: usize,
    /// Worker threads; 0 uses all cores. Does not affect outputs.
    pub workers: usize,
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Cap on stored dedup digests.
    pub max_digests: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let filter = FilterConfig::default();
        let extract = ExtractConfig::default();
        PipelineConfig {
            inputs: Vec::new(),
            target_language: "pol".into(),
            min_chars: filter.min_chars,
            keyword_min_chars: filter.keyword_min_chars,
            keywords: filter.keywords,
            ppl_threshold: filter.ppl_threshold,
            ngram_order: crate::ngram::DEFAULT_ORDER,
            lm_reference: None,
            lm_model: None,
            max_link_density: extract.max_link_density,
            min_block_chars: extract.min_block_chars,
            vocab_size: crate::bpe::MAX_VOCAB_SIZE,
            workers: 0,
            output_dir: PathBuf::from("out"),
            seed: 0,
            max_digests: None,
        }
    }
}

impl PipelineConfig {
    /// Parses `key = value` TOML. Relative paths resolve against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, PipelineError> {
        let mut cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        };
        cfg.lm_reference.as_mut().map(resolve);
        cfg.lm_model.as_mut().map(resolve);
        resolve(&mut cfg.output_dir);
        for pattern in &mut cfg.inputs {
            if Path::new(pattern).is_relative() {
                *pattern = base_dir.join(&*pattern).to_string_lossy().into_owned();
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        if self.target_language.trim().is_empty() {
            return bad("target_language is empty");
        }
        if self.min_chars == 0 || self.keyword_min_chars == 0 || self.min_block_chars == 0 {
            return bad("character thresholds must be positive");
        }
        if !(self.ppl_threshold > 0.0) {
            return bad("ppl_threshold must be positive");
        }
        if !(self.max_link_density > 0.0 && self.max_link_density <= 1.0) {
            return bad("max_link_density must be in (0, 1]");
        }
        if !(1..=MAX_ORDER).contains(&self.ngram_order) {
            return bad("ngram_order out of range");
        }
        if self.vocab_size == 0 || self.vocab_size > crate::bpe::MAX_VOCAB_SIZE {
            return bad("vocab_size must be in 1..=50000");
        }
        match (&self.lm_reference, &self.lm_model) {
            (None, None) => bad("one of lm_reference or lm_model is required"),
            (Some(_), Some(_)) => bad("lm_reference and lm_model are exclusive"),
            _ => Ok(()),
        }
    }

    pub fn filter_config(&self) -> FilterConfig {
        FilterConfig {
            min_chars: self.min_chars,
            keyword_min_chars: self.keyword_min_chars,
            keywords: self.keywords.iter().map(|k| k.to_lowercase()).collect(),
            ppl_threshold: self.ppl_threshold,
        }
    }

    pub fn extract_config(&self) -> ExtractConfig {
        ExtractConfig {
            max_link_density: self.max_link_density,
            min_block_chars: self.min_block_chars,
            ..ExtractConfig::default()
        }
    }

    /// Input archives in sorted order; shard ids follow this order.
    pub fn input_files(&self) -> Result<Vec<PathBuf>, PipelineError> {
        let mut files = Vec::new();
        for pattern in &self.inputs {
            let paths = glob::glob(pattern)
                .map_err(|e| PipelineError::Config(format!("input pattern {pattern:?}: {e}")))?;
            for p in paths {
                let p = p.map_err(|e| PipelineError::Config(e.to_string()))?;
                if p.is_file() {
                    files.push(p);
                }
            }
        }
        files.sort();
        files.dedup();
        Ok(files)
    }

    /// Digest of the settings that affect outputs, plus `extra` (model hash
    /// and input sizes). Worker count and file locations are excluded.
    pub fn digest(&self, extra: &[u8]) -> String {
        let mut c = self.clone();
        c.workers = 0;
        c.output_dir = PathBuf::new();
        c.inputs.clear();
        c.lm_reference = c.lm_reference.map(|_| PathBuf::from("reference"));
        c.lm_model = c.lm_model.map(|_| PathBuf::from("model"));
        let mut bytes = serde_json::to_vec(&c).expect("config serializes");
        bytes.extend_from_slice(extra);
        format!("{:032x}", xxh3_128(&bytes))
    }

    /// Trains or loads the scoring model.
    pub fn load_model(&self) -> Result<(NGramModel, u128), PipelineError> {
        let cfg_err = |p: &Path, e: std::io::Error| PipelineError::Config(format!("{}: {e}", p.display()));
        if let Some(p) = &self.lm_model {
            let text = fs::read_to_string(p).map_err(|e| cfg_err(p, e))?;
            Ok((NGramModel::from_arpa_str(&text)?, xxh3_128(text.as_bytes())))
        } else {
            let p = self.lm_reference.as_ref().expect("validated");
            let text = fs::read_to_string(p).map_err(|e| cfg_err(p, e))?;
            Ok((train_on_text(&text, self.ngram_order)?, xxh3_128(text.as_bytes())))
        }
    }
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct StageMarker {
    config_digest: String,
    inputs: Vec<(String, u64)>,
    stats: StageStats,
}

fn shard_name(i: usize) -> String {
    format!("shard-{i:05}.jsonl")
}

fn open_shard(dir: &Path, i: usize) -> Result<(BufReader<File>, String), PipelineError> {
    let p = dir.join(shard_name(i));
    let f = File::open(&p).map_err(io_at(&p))?;
    Ok((BufReader::new(f), p.display().to_string()))
}

/// Sums shard stats in shard order; the first failing shard's error wins.
fn combine(stage: &str, results: Vec<Result<StageStats, PipelineError>>) -> Result<StageStats, PipelineError> {
    let mut total = StageStats::new(stage);
    for r in results {
        total.absorb(&r?);
    }
    Ok(total)
}

struct Run<'a> {
    cfg: &'a PipelineConfig,
    files: Vec<PathBuf>,
    model: NGramModel,
    out: PathBuf,
}

impl Run<'_> {
    fn dir(&self, stage: &str) -> PathBuf {
        self.out.join(stage)
    }

    fn ingest(&self) -> Result<StageStats, PipelineError> {
        let dir = self.dir(INGEST);
        let results = self
            .files
            .par_iter()
            .enumerate()
            .map(|(i, path)| {
                let dest = dir.join(shard_name(i));
                let mut f = AtomicFile::create(&dest).map_err(io_at(&dest))?;
                let stats = stages::ingest_archive(path, &self.cfg.target_language, &mut f)?;
                f.finish().map_err(io_at(&dest))?;
                Ok(stats)
            })
            .collect();
        combine(INGEST, results)
    }

    fn extract(&self) -> Result<StageStats, PipelineError> {
        let (src, dir) = (self.dir(INGEST), self.dir(EXTRACT));
        let ecfg = self.cfg.extract_config();
        let results = (0..self.files.len())
            .into_par_iter()
            .map(|i| {
                let (input, name) = open_shard(&src, i)?;
                let dest = dir.join(shard_name(i));
                let mut f = AtomicFile::create(&dest).map_err(io_at(&dest))?;
                let stats = stages::extract_stream(input, &name, &ecfg, &mut f)?;
                f.finish().map_err(io_at(&dest))?;
                Ok(stats)
            })
            .collect();
        combine(EXTRACT, results)
    }

    fn filter(&self) -> Result<StageStats, PipelineError> {
        let (src, dir) = (self.dir(EXTRACT), self.dir(FILTER));
        let fcfg = self.cfg.filter_config();
        let results = (0..self.files.len())
            .into_par_iter()
            .map(|i| {
                let (input, name) = open_shard(&src, i)?;
                let dest = dir.join(shard_name(i));
                let ddest = dir.join(format!("decisions-{i:05}.jsonl"));
                let mut f = AtomicFile::create(&dest).map_err(io_at(&dest))?;
                let mut d = AtomicFile::create(&ddest).map_err(io_at(&ddest))?;
                let stats = stages::filter_stream(input, &name, &self.model, &fcfg, &mut f, Some(&mut d))?;
                f.finish().map_err(io_at(&dest))?;
                d.finish().map_err(io_at(&ddest))?;
                Ok(stats)
            })
            .collect();
        combine(FILTER, results)
    }

    fn dedup(&self) -> Result<StageStats, PipelineError> {
        let (src, dir) = (self.dir(FILTER), self.dir(DEDUP));
        let corpus_dir = self.out.join("corpus");
        if corpus_dir.exists() {
            fs::remove_dir_all(&corpus_dir).map_err(io_at(&corpus_dir))?;
        }
        fs::create_dir_all(&corpus_dir).map_err(io_at(&corpus_dir))?;

        let local = (0..self.files.len())
            .into_par_iter()
            .map(|i| {
                let (input, name) = open_shard(&src, i)?;
                Ok(stages::local_digests(input, &name)?.0)
            })
            .collect::<Result<Vec<_>, PipelineError>>()?;
        let mut state = match self.cfg.max_digests {
            Some(cap) => DedupState::with_cap(cap),
            None => DedupState::new(),
        };
        let kept = stages::merge_digests(&local, &mut state)?;

        let log_path = dir.join("digests.txt");
        let kept_digests: Vec<_> = local
            .iter()
            .zip(&kept)
            .flat_map(|(shard, k)| shard.iter().filter(|(o, _)| k.binary_search(o).is_ok()).map(|(_, g)| *g))
            .collect();
        let mut log = AtomicFile::create(&log_path).map_err(io_at(&log_path))?;
        write_digest_log(&mut log, &kept_digests).map_err(io_at(&log_path))?;
        log.finish().map_err(io_at(&log_path))?;

        let results = (0..self.files.len())
            .into_par_iter()
            .map(|i| {
                let (input, name) = open_shard(&src, i)?;
                let dest = dir.join(shard_name(i));
                let part = corpus_dir.join(format!("part-{i:05}.txt"));
                let mut f = AtomicFile::create(&dest).map_err(io_at(&dest))?;
                let mut c = AtomicFile::create(&part).map_err(io_at(&part))?;
                let stats = stages::write_kept(input, &name, &kept[i], &mut f, &mut c)?;
                f.finish().map_err(io_at(&dest))?;
                c.finish().map_err(io_at(&part))?;
                if stats.docs_out == 0 {
                    fs::remove_file(&part).map_err(io_at(&part))?;
                }
                Ok(stats)
            })
            .collect();
        combine(DEDUP, results)
    }
}

fn corpus_summary(dir: &Path, docs: u64) -> Result<CorpusSummary, PipelineError> {
    let mut s = CorpusSummary { docs, ..Default::default() };
    if !dir.exists() {
        return Ok(s);
    }
    for e in fs::read_dir(dir).map_err(io_at(dir))? {
        let e = e.map_err(io_at(dir))?;
        if e.file_name().to_string_lossy().starts_with("part-") {
            s.shards += 1;
            s.bytes += e.metadata().map_err(io_at(dir))?.len();
        }
    }
    Ok(s)
}

fn write_manifest(out: &Path, m: &CorpusManifest) -> Result<(), PipelineError> {
    let p = out.join("manifest.json");
    let mut f = AtomicFile::create(&p).map_err(io_at(&p))?;
    f.write_all(m.to_json().as_bytes()).map_err(io_at(&p))?;
    f.finish().map_err(io_at(&p))
}

/// Runs all stages and writes `manifest.json`. On a stage failure the
/// manifest records the completed stages and the failed one.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<CorpusManifest, PipelineError> {
    cfg.validate()?;
    let files = cfg.input_files()?;
    if files.is_empty() {
        log::warn!("no input archives matched {:?}", cfg.inputs);
    }
    let inputs: Vec<(String, u64)> = files
        .iter()
        .map(|p| {
            let size = fs::metadata(p).map_err(io_at(p))?.len();
            Ok((p.display().to_string(), size))
        })
        .collect::<Result<_, PipelineError>>()?;
    let (model, model_hash) = cfg.load_model()?;
    let mut extra = model_hash.to_le_bytes().to_vec();
    for (_, size) in &inputs {
        extra.extend_from_slice(&size.to_le_bytes());
    }
    let digest = cfg.digest(&extra);

    let out = cfg.output_dir.clone();
    fs::create_dir_all(&out).map_err(io_at(&out))?;
    let model_path = out.join("model.arpa");
    let mut mf = AtomicFile::create(&model_path).map_err(io_at(&model_path))?;
    model.write_arpa(&mut mf)?;
    mf.finish().map_err(io_at(&model_path))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| PipelineError::Config(format!("worker pool: {e}")))?;
    let run = Run { cfg, files, model, out: out.clone() };
    let mut manifest = CorpusManifest::new(digest.clone());
    let mut upstream_rerun = false;

    type Body<'r> = fn(&Run<'r>) -> Result<StageStats, PipelineError>;
    let bodies: [(&str, Body); 4] = [
        (INGEST, Run::ingest),
        (EXTRACT, Run::extract),
        (FILTER, Run::filter),
        (DEDUP, Run::dedup),
    ];
    for (stage, body) in bodies {
        let dir = run.dir(stage);
        let marker_path = dir.join("_stage.json");
        if !upstream_rerun {
            let marker = fs::read_to_string(&marker_path)
                .ok()
                .and_then(|t| serde_json::from_str::<StageMarker>(&t).ok());
            if let Some(m) = marker.filter(|m| m.config_digest == digest && m.inputs == inputs) {
                log::info!("{stage}: reusing completed outputs");
                manifest.stages.push(m.stats);
                continue;
            }
        }
        upstream_rerun = true;
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(io_at(&dir))?;
        }
        fs::create_dir_all(&dir).map_err(io_at(&dir))?;
        let start = Instant::now();
        match pool.install(|| body(&run)) {
            Ok(mut stats) => {
                stats.wall_time_ms = start.elapsed().as_millis() as u64;
                log::info!("{stage}: {} in, {} out", stats.docs_in, stats.docs_out);
                let marker = StageMarker { config_digest: digest.clone(), inputs: inputs.clone(), stats };
                let mut f = AtomicFile::create(&marker_path).map_err(io_at(&marker_path))?;
                let json = serde_json::to_string_pretty(&marker).expect("marker serializes");
                f.write_all(json.as_bytes()).map_err(io_at(&marker_path))?;
                f.finish().map_err(io_at(&marker_path))?;
                manifest.stages.push(marker.stats);
            }
            Err(e) => {
                manifest.failed_stage = Some(stage.to_string());
                write_manifest(&out, &manifest)?;
                return Err(e);
            }
        }
    }
    let kept = manifest.stages.last().map_or(0, |s| s.docs_out);
    manifest.corpus = corpus_summary(&out.join("corpus"), kept)?;
    manifest.check().map_err(PipelineError::SelfCheck)?;
    write_manifest(&out, &manifest)?;
    Ok(manifest)
}
