use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub const MANIFEST_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
/// Note key for bytes of rejected documents on filtering stages.
pub const BYTES_REJECTED: &str = "bytes_rejected";

/// Accounting for one stage over all shards.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageStats {
    pub stage: String,
    pub docs_in: u64,
    pub docs_out: u64,
    pub bytes_in: u64,
    pub bytes_out: u64,
    pub reject_reasons: BTreeMap<String, u64>,
    pub wall_time_ms: u64,
    #[serde(default)]
    pub notes: BTreeMap<String, u64>,
}

impl StageStats {
    pub fn new(stage: &str) -> Self {
        StageStats { stage: stage.to_string(), ..Default::default() }
    }

    pub fn reject(&mut self, reason: &str) {
        *self.reject_reasons.entry(reason.to_string()).or_default() += 1;
    }

    pub fn note(&mut self, key: &str, n: u64) {
        *self.notes.entry(key.to_string()).or_default() += n;
    }

    pub fn rejected(&self) -> u64 {
        self.reject_reasons.values().sum()
    }

    /// Adds a shard's counts. Wall time is not summed.
    pub fn absorb(&mut self, other: &StageStats) {
        self.docs_in += other.docs_in;
        self.docs_out += other.docs_out;
        self.bytes_in += other.bytes_in;
        self.bytes_out += other.bytes_out;
        for (k, v) in &other.reject_reasons {
            *self.reject_reasons.entry(k.clone()).or_default() += v;
        }
        for (k, v) in &other.notes {
            *self.notes.entry(k.clone()).or_default() += v;
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub shards: u64,
    pub docs: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub manifest_version: u32,
    pub tool_version: String,
    pub config_digest: String,
    pub dedup_digest: String,
    pub stages: Vec<StageStats>,
    pub corpus: CorpusSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
}

impl CorpusManifest {
    pub fn new(config_digest: String) -> Self {
        CorpusManifest {
            manifest_version: MANIFEST_VERSION,
            tool_version: TOOL_VERSION.to_string(),
            config_digest,
            dedup_digest: "xxh3-128 of NFC text with collapsed whitespace".to_string(),
            stages: Vec::new(),
            corpus: CorpusSummary::default(),
            failed_stage: None,
        }
    }

    pub fn stage(&self, name: &str) -> Option<&StageStats> {
        self.stages.iter().find(|s| s.stage == name)
    }

    /// Reject reasons summed over all stages.
    pub fn total_reject_reasons(&self) -> BTreeMap<String, u64> {
        let mut out = BTreeMap::new();
        for s in &self.stages {
            for (k, v) in &s.reject_reasons {
                *out.entry(k.clone()).or_default() += v;
            }
        }
        out
    }

    /// Conservation laws: each stage's output feeds the next, and every
    /// input document is either kept or rejected with a reason.
    pub fn check(&self) -> Result<(), String> {
        for s in &self.stages {
            if s.rejected() + s.docs_out != s.docs_in {
                return Err(format!(
                    "stage {}: {} rejected + {} out != {} in",
                    s.stage,
                    s.rejected(),
                    s.docs_out,
                    s.docs_in
                ));
            }
            if let Some(&dropped) = s.notes.get(BYTES_REJECTED) {
                if dropped + s.bytes_out != s.bytes_in {
                    return Err(format!("stage {}: bytes do not reconcile", s.stage));
                }
            }
        }
        for w in self.stages.windows(2) {
            if w[0].docs_out != w[1].docs_in || w[0].bytes_out != w[1].bytes_in {
                return Err(format!("stages {} -> {}: output does not match input", w[0].stage, w[1].stage));
            }
        }
        if let Some(last) = self.stages.last() {
            if self.failed_stage.is_none() && last.docs_out != self.corpus.docs {
                return Err("corpus document count differs from the last stage".into());
            }
        }
        Ok(())
    }

    /// Copy with wall times zeroed, for comparing runs.
    pub fn without_timing(&self) -> Self {
        let mut m = self.clone();
        for s in &mut m.stages {
            s.wall_time_ms = 0;
        }
        m
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

/// Human-readable summary of a manifest.
pub fn render_table(m: &CorpusManifest) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "manifest v{}  tool {}  config {}", m.manifest_version, m.tool_version, m.config_digest);
    let _ = writeln!(
        out,
        "{:<10} {:>10} {:>10} {:>14} {:>14} {:>10} {:>10}",
        "stage", "docs_in", "docs_out", "bytes_in", "bytes_out", "rejected", "time_ms"
    );
    for s in &m.stages {
        let _ = writeln!(
            out,
            "{:<10} {:>10} {:>10} {:>14} {:>14} {:>10} {:>10}",
            s.stage, s.docs_in, s.docs_out, s.bytes_in, s.bytes_out, s.rejected(), s.wall_time_ms
        );
    }
    let reasons: Vec<_> = m
        .stages
        .iter()
        .flat_map(|s| s.reject_reasons.iter().map(move |(k, v)| (&s.stage, k, v)))
        .collect();
    if !reasons.is_empty() {
        let _ = writeln!(out, "reject reasons:");
        for (stage, k, v) in reasons {
            let _ = writeln!(out, "  {:<32} {:>10}", format!("{stage}.{k}"), v);
        }
    }
    let _ = writeln!(
        out,
        "corpus: {} docs, {} bytes in {} shard(s)",
        m.corpus.docs, m.corpus.bytes, m.corpus.shards
    );
    if let Some(f) = &m.failed_stage {
        let _ = writeln!(out, "FAILED at stage {f}");
    }
    out
}
