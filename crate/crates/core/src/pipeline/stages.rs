//! Per-shard stage bodies. Each reads one input stream, writes one JSONL
//! stream, and returns the shard's accounting.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::Serialize;

use super::manifest::{StageStats, BYTES_REJECTED};
use super::PipelineError;
use crate::dedup::{digest, DedupState, Digest};
use crate::filter::{apply_filters, FilterConfig, Reason, Verdict};
use crate::html::{extract_main_content, ExtractConfig, ExtractedDoc};
use crate::jsonl::{write_record, JsonlReader};
use crate::ngram::NGramModel;
use crate::warc::{iter_warc_records, to_raw_document, DocError, RawDocument, WarcError};

pub const INGEST: &str = "ingest";
pub const EXTRACT: &str = "extract";
pub const FILTER: &str = "filter";
pub const DEDUP: &str = "dedup";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.display().to_string(), source }
}

/// Opens an archive, detecting gzip from its magic bytes.
pub fn open_archive(path: &Path) -> Result<(Box<dyn Read>, bool, u64), PipelineError> {
    let file = File::open(path).map_err(io_err(path))?;
    let size = file.metadata().map_err(io_err(path))?.len();
    let mut reader = BufReader::new(file);
    let head = reader.fill_buf().map_err(io_err(path))?;
    let gzip = head.starts_with(&[0x1f, 0x8b]);
    Ok((Box::new(reader), gzip, size))
}

/// Selects target-language HTML responses from one archive.
pub fn ingest_archive<W: Write>(
    path: &Path,
    target_lang: &str,
    out: &mut W,
) -> Result<StageStats, PipelineError> {
    let (reader, gzip, size) = open_archive(path)?;
    let mut stats = StageStats::new(INGEST);
    stats.bytes_in = size;
    for item in iter_warc_records(reader, gzip) {
        stats.docs_in += 1;
        let record = match item {
            Ok(r) => r,
            Err(WarcError::Io(source)) => {
                return Err(PipelineError::Io { path: path.display().to_string(), source })
            }
            Err(e) => {
                log::warn!("{}: {e}", path.display());
                stats.reject("malformed_record");
                continue;
            }
        };
        match to_raw_document(&record, target_lang) {
            Ok(Some(doc)) => {
                if doc.lossy {
                    stats.note("lossy_decode", 1);
                }
                stats.docs_out += 1;
                stats.bytes_out += doc.html.len() as u64;
                write_record(out, &doc).map_err(io_err(path))?;
            }
            Ok(None) => stats.reject("language"),
            Err(e) => stats.reject(match e {
                DocError::WrongType => "non_response",
                DocError::MissingUrl => "missing_url",
                DocError::MalformedHttp => "malformed_http",
                DocError::NotHtml(_) => "not_html",
                DocError::Undecodable => "undecodable",
            }),
        }
    }
    Ok(stats)
}

/// Extracts main content from each raw document.
pub fn extract_stream<R: BufRead, W: Write>(
    input: R,
    source_name: &str,
    cfg: &ExtractConfig,
    out: &mut W,
) -> Result<StageStats, PipelineError> {
    let mut stats = StageStats::new(EXTRACT);
    for doc in JsonlReader::<R, RawDocument>::new(input, source_name) {
        let doc = doc?;
        stats.docs_in += 1;
        stats.bytes_in += doc.html.len() as u64;
        match extract_main_content(&doc, cfg) {
            Ok(Some(e)) => {
                stats.docs_out += 1;
                stats.bytes_out += e.text.len() as u64;
                write_record(out, &e)
                    .map_err(|source| PipelineError::Io { path: source_name.into(), source })?;
            }
            Ok(None) => stats.reject("no_content"),
            Err(e) => {
                log::warn!("{}: {e}", doc.url);
                stats.reject("extraction_failed");
            }
        }
    }
    Ok(stats)
}

#[derive(Serialize)]
struct DecisionRecord<'a> {
    url: &'a str,
    verdict: Verdict,
    reason: Reason,
    metric: Option<f64>,
}

/// Applies the quality rules; rejected documents are dropped.
pub fn filter_stream<R: BufRead, W: Write>(
    input: R,
    source_name: &str,
    model: &NGramModel,
    cfg: &FilterConfig,
    out: &mut W,
    mut decisions: Option<&mut dyn Write>,
) -> Result<StageStats, PipelineError> {
    let mut stats = StageStats::new(FILTER);
    let mut dropped = 0;
    let werr = |source| PipelineError::Io { path: source_name.into(), source };
    for doc in JsonlReader::<R, ExtractedDoc>::new(input, source_name) {
        let doc = doc?;
        stats.docs_in += 1;
        let n = doc.text.len() as u64;
        stats.bytes_in += n;
        let d = apply_filters(&doc, model, cfg)?;
        if let Some(w) = decisions.as_deref_mut() {
            let rec = DecisionRecord { url: &doc.url, verdict: d.verdict, reason: d.reason, metric: d.metric };
            write_record(w, &rec).map_err(werr)?;
        }
        if d.is_keep() {
            stats.docs_out += 1;
            stats.bytes_out += n;
            write_record(out, &doc).map_err(werr)?;
        } else {
            dropped += n;
            stats.reject(d.reason.as_str());
        }
    }
    stats.note(BYTES_REJECTED, dropped);
    Ok(stats)
}

/// Digests of the documents that survive deduplication within one shard,
/// with their ordinals.
pub fn local_digests<R: BufRead>(
    input: R,
    source_name: &str,
) -> Result<(Vec<(u64, Digest)>, u64), PipelineError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let mut total = 0;
    for (i, doc) in JsonlReader::<R, ExtractedDoc>::new(input, source_name).enumerate() {
        let g = digest(&doc?.text);
        total += 1;
        if seen.insert(g) {
            out.push((i as u64, g));
        }
    }
    Ok((out, total))
}

/// Global pass of shard-merge dedup: shards in order, first occurrence wins.
/// Returns the kept ordinals per shard.
pub fn merge_digests(
    shards: &[Vec<(u64, Digest)>],
    state: &mut DedupState,
) -> Result<Vec<Vec<u64>>, PipelineError> {
    shards
        .iter()
        .map(|shard| {
            let mut kept = Vec::new();
            for (ord, g) in shard {
                if state.insert(*g)? {
                    kept.push(*ord);
                }
            }
            Ok(kept)
        })
        .collect()
}

/// Copies the documents at `kept` ordinals (sorted) from `input` to `out`.
pub fn write_kept<R: BufRead, W: Write>(
    input: R,
    source_name: &str,
    kept: &[u64],
    out: &mut W,
    corpus: &mut dyn Write,
) -> Result<StageStats, PipelineError> {
    let mut stats = StageStats::new(DEDUP);
    let mut dropped = 0;
    let mut next = kept.iter().peekable();
    let werr = |source| PipelineError::Io { path: source_name.into(), source };
    for (i, doc) in JsonlReader::<R, ExtractedDoc>::new(input, source_name).enumerate() {
        let doc = doc?;
        stats.docs_in += 1;
        let n = doc.text.len() as u64;
        stats.bytes_in += n;
        if next.peek() == Some(&&(i as u64)) {
            next.next();
            stats.docs_out += 1;
            stats.bytes_out += n;
            write_record(out, &doc).map_err(werr)?;
            if stats.docs_out > 1 {
                corpus.write_all(b"\n").map_err(werr)?;
            }
            corpus.write_all(doc.text.as_bytes()).map_err(werr)?;
            corpus.write_all(b"\n").map_err(werr)?;
        } else {
            dropped += n;
            stats.reject("duplicate");
        }
    }
    stats.note(BYTES_REJECTED, dropped);
    Ok(stats)
}
