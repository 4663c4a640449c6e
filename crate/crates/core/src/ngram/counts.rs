use std::collections::HashMap;

use super::model::{Discounts, NGramEntry, NGramModel};
use super::{NgramError, Vocab, BOS, BOS_ID, EOS_ID, FALLBACK_DISCOUNT, MAX_ORDER, UNK_ID};

type Key = Box<[u32]>;

/// Raw n-gram counts for orders `1..=order`.
///
/// Tables built from separate shards combine by [`NGramCounts::merge`]
/// before smoothing, so training can be split across workers.
#[derive(Debug, Clone)]
pub struct NGramCounts {
    order: usize,
    vocab: Vocab,
    sentences: u64,
    counts: Vec<HashMap<Key, u64>>,
}

#[derive(Debug, Default, Clone, Copy)]
struct ContextStats {
    total: u64,
    n1: u64,
    n2: u64,
    n3_plus: u64,
}

impl NGramCounts {
    pub fn new(order: usize) -> Result<Self, NgramError> {
        if order == 0 || order > MAX_ORDER {
            return Err(NgramError::InvalidOrder(order));
        }
        Ok(NGramCounts {
            order,
            vocab: Vocab::default(),
            sentences: 0,
            counts: vec![HashMap::new(); order],
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn add_sentence<S: AsRef<str>>(&mut self, tokens: &[S]) {
        let mut ids = Vec::with_capacity(tokens.len() + 2);
        ids.push(BOS_ID);
        for t in tokens {
            let t = t.as_ref();
            // A literal start marker cannot be predicted; count it as unknown.
            let id = if t == BOS { UNK_ID } else { self.vocab.intern(t) };
            ids.push(id);
        }
        ids.push(EOS_ID);
        self.add_ids(&ids, 1);
        self.sentences += 1;
    }

    fn add_ids(&mut self, ids: &[u32], times: u64) {
        for k in 1..=self.order.min(ids.len()) {
            let table = &mut self.counts[k - 1];
            for window in ids.windows(k) {
                if k == 1 && window[0] == BOS_ID {
                    continue;
                }
                *table.entry(window.into()).or_insert(0) += times;
            }
        }
    }

    /// Adds another shard's counts into this table.
    pub fn merge(&mut self, other: NGramCounts) -> Result<(), NgramError> {
        if other.order != self.order {
            return Err(NgramError::OrderMismatch(other.order, self.order));
        }
        let remap: Vec<u32> = other.vocab.words().map(|w| self.vocab.intern(w)).collect();
        for (k, table) in other.counts.into_iter().enumerate() {
            let mine = &mut self.counts[k];
            for (key, c) in table {
                let mapped: Key = key.iter().map(|&id| remap[id as usize]).collect();
                *mine.entry(mapped).or_insert(0) += c;
            }
        }
        self.sentences += other.sentences;
        Ok(())
    }

    /// Count of an n-gram given as words, mostly for inspection.
    pub fn count(&self, ngram: &[&str]) -> u64 {
        if ngram.is_empty() || ngram.len() > self.order {
            return 0;
        }
        let ids: Option<Vec<u32>> = ngram.iter().map(|w| self.vocab.id(w)).collect();
        ids.and_then(|ids| self.counts[ngram.len() - 1].get(ids.as_slice()).copied())
            .unwrap_or(0)
    }

    /// Smooths the counts into an interpolated modified Kneser-Ney model.
    pub fn build(self) -> Result<NGramModel, NgramError> {
        if self.sentences == 0 {
            return Err(NgramError::EmptyCorpus);
        }
        let distinct = self.counts[0]
            .keys()
            .filter(|k| k[0] != EOS_ID && k[0] != UNK_ID)
            .count();
        if distinct < 2 {
            return Err(NgramError::Degenerate(distinct));
        }

        let n = self.order;
        let adjusted = adjusted_counts(&self.counts);

        let discounts: Vec<Discounts> = adjusted
            .iter()
            .enumerate()
            .map(|(k, table)| estimate_discounts(k + 1, table))
            .collect();

        // Per-context totals and count-of-counts, per order.
        let contexts: Vec<HashMap<Key, ContextStats>> = adjusted
            .iter()
            .map(|table| {
                let mut stats: HashMap<Key, ContextStats> = HashMap::new();
                for (g, &a) in table {
                    let s = stats.entry(g[..g.len() - 1].into()).or_default();
                    s.total += a;
                    match a {
                        1 => s.n1 += 1,
                        2 => s.n2 += 1,
                        _ => s.n3_plus += 1,
                    }
                }
                stats
            })
            .collect();

        let gamma = |order: usize, s: &ContextStats| -> f64 {
            let d = &discounts[order - 1];
            (d.d1 * s.n1 as f64 + d.d2 * s.n2 as f64 + d.d3_plus * s.n3_plus as f64)
                / s.total as f64
        };

        // Linear-space probabilities, filled bottom-up.
        let mut linear: Vec<HashMap<Key, f64>> = Vec::with_capacity(n);

        let root = contexts[0]
            .get(&[][..])
            .copied()
            .expect("non-empty corpus has unigram mass");
        let uniform = 1.0 / (self.vocab.len() - 1) as f64;
        let root_gamma = gamma(1, &root);
        let mut unigrams = HashMap::with_capacity(self.vocab.len());
        for id in 0..self.vocab.len() as u32 {
            if id == BOS_ID {
                continue;
            }
            let a = adjusted[0].get(&[id][..]).copied().unwrap_or(0);
            let p = discounted(a, &discounts[0]) / root.total as f64 + root_gamma * uniform;
            unigrams.insert(Key::from([id]), p);
        }
        linear.push(unigrams);

        for k in 2..=n {
            let lower = &linear[k - 2];
            let mut probs = HashMap::with_capacity(adjusted[k - 1].len());
            for (g, &a) in &adjusted[k - 1] {
                let ctx = &contexts[k - 1][&g[..k - 1]];
                let backed = lower[&g[1..]];
                let p = discounted(a, &discounts[k - 1]) / ctx.total as f64
                    + gamma(k, ctx) * backed;
                probs.insert(g.clone(), p);
            }
            linear.push(probs);
        }

        let mut tables: Vec<HashMap<Key, NGramEntry>> = linear
            .into_iter()
            .map(|probs| {
                probs
                    .into_iter()
                    .map(|(g, p)| {
                        (
                            g,
                            NGramEntry {
                                log_prob: p.log10(),
                                backoff: None,
                            },
                        )
                    })
                    .collect()
            })
            .collect();
        tables[0].insert(
            Key::from([BOS_ID]),
            NGramEntry {
                log_prob: NGramModel::BOS_LOG_PROB,
                backoff: None,
            },
        );
        for k in 2..=n {
            for (h, stats) in &contexts[k - 1] {
                let entry = tables[k - 2]
                    .get_mut(h)
                    .expect("every context is itself a stored n-gram");
                entry.backoff = Some(gamma(k, stats).log10());
            }
        }

        Ok(NGramModel::from_parts(n, self.vocab, tables, discounts))
    }
}

fn discounted(a: u64, d: &Discounts) -> f64 {
    match a {
        0 => 0.0,
        1 => 1.0 - d.d1,
        2 => 2.0 - d.d2,
        _ => a as f64 - d.d3_plus,
    }
}

/// Highest order keeps raw counts. Lower orders use the number of distinct
/// left extensions, except n-grams starting with `<s>` which have none.
fn adjusted_counts(raw: &[HashMap<Key, u64>]) -> Vec<HashMap<Key, u64>> {
    let n = raw.len();
    let mut adjusted = Vec::with_capacity(n);
    for k in 1..=n {
        if k == n {
            adjusted.push(raw[k - 1].clone());
            continue;
        }
        let mut table: HashMap<Key, u64> = raw[k - 1]
            .iter()
            .filter(|(g, _)| g[0] == BOS_ID)
            .map(|(g, &c)| (g.clone(), c))
            .collect();
        for h in raw[k].keys() {
            *table.entry(h[1..].into()).or_insert(0) += 1;
        }
        adjusted.push(table);
    }
    adjusted
}

fn estimate_discounts(order: usize, table: &HashMap<Key, u64>) -> Discounts {
    let mut n = [0u64; 5];
    for &a in table.values() {
        if (1..=4).contains(&a) {
            n[a as usize] += 1;
        }
    }
    if n[1] > 0 && n[2] > 0 && n[3] > 0 {
        let y = n[1] as f64 / (n[1] + 2 * n[2]) as f64;
        let d = |k: usize| k as f64 - (k + 1) as f64 * y * n[k + 1] as f64 / n[k] as f64;
        let (d1, d2, d3) = (d(1), d(2), d(3));
        if d1 > 0.0 && d2 > 0.0 && d3 > 0.0 {
            return Discounts {
                d1,
                d2,
                d3_plus: d3,
                fallback: false,
            };
        }
    }
    log::debug!(
        "order {order}: count-of-counts {:?} cannot support modified discounts, using {FALLBACK_DISCOUNT}",
        &n[1..]
    );
    Discounts {
        d1: FALLBACK_DISCOUNT,
        d2: FALLBACK_DISCOUNT,
        d3_plus: FALLBACK_DISCOUNT,
        fallback: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts_of(sentences: &[&str], order: usize) -> NGramCounts {
        let mut c = NGramCounts::new(order).unwrap();
        for s in sentences {
            let toks: Vec<&str> = s.split_whitespace().collect();
            c.add_sentence(&toks);
        }
        c
    }

    #[test]
    fn raw_counts_include_boundaries() {
        let c = counts_of(&["a b a", "b a b"], 2);
        assert_eq!(c.count(&["a"]), 3);
        assert_eq!(c.count(&["</s>"]), 2);
        assert_eq!(c.count(&["<s>"]), 0);
        assert_eq!(c.count(&["<s>", "a"]), 1);
        assert_eq!(c.count(&["a", "b"]), 2);
    }

    #[test]
    fn merged_shards_equal_single_pass() {
        let whole = counts_of(&["a b c", "c b a", "a a b"], 3).build().unwrap();
        let mut left = counts_of(&["a b c"], 3);
        left.merge(counts_of(&["c b a", "a a b"], 3)).unwrap();
        let merged = left.build().unwrap();
        assert_eq!(whole.to_arpa_string(), merged.to_arpa_string());
    }

    #[test]
    fn merge_rejects_other_order() {
        let mut a = counts_of(&["a b"], 2);
        assert!(a.merge(counts_of(&["a b"], 3)).is_err());
    }

    #[test]
    fn fallback_when_count_of_counts_sparse() {
        let m = counts_of(&["a b"], 1).build().unwrap();
        assert!(m.discounts()[0].fallback);
        assert_eq!(m.discounts()[0].d1, FALLBACK_DISCOUNT);
    }

    #[test]
    fn modified_discounts_from_count_of_counts() {
        // unigram raw counts: x1 y1 z1 u2 v2 w3 q4 (+ </s> once per sentence)
        let mut table = HashMap::new();
        let mut id = 10u32;
        for c in [1u64, 1, 1, 2, 2, 3, 4] {
            table.insert(Key::from([id]), c);
            id += 1;
        }
        let d = estimate_discounts(1, &table);
        let y = 3.0 / (3.0 + 4.0);
        assert!(!d.fallback);
        assert!((d.d1 - (1.0 - 2.0 * y * 2.0 / 3.0)).abs() < 1e-15);
        assert!((d.d2 - (2.0 - 3.0 * y * 1.0 / 2.0)).abs() < 1e-15);
        assert!((d.d3_plus - (3.0 - 4.0 * y * 1.0 / 1.0)).abs() < 1e-15);
    }

    #[test]
    fn degenerate_and_empty_corpora_rejected() {
        assert!(matches!(
            counts_of(&["a", "a", "a a"], 2).build(),
            Err(NgramError::Degenerate(1))
        ));
        assert!(matches!(
            NGramCounts::new(2).unwrap().build(),
            Err(NgramError::EmptyCorpus)
        ));
        assert!(matches!(NGramCounts::new(0), Err(NgramError::InvalidOrder(0))));
    }

    #[test]
    fn literal_unk_is_not_a_distinct_word() {
        let r = counts_of(&[&format!("{} a", super::super::UNK)], 1).build();
        assert!(matches!(r, Err(NgramError::Degenerate(1))));
    }
}
