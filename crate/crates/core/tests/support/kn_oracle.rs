//! Brute-force interpolated modified Kneser-Ney computed directly from
//! sentence windows. Shares nothing with the library's counting code.

use std::collections::BTreeSet;

const BOS: &str = "<s>";
const EOS: &str = "</s>";
const UNK: &str = "<unk>";

pub struct KnOracle {
    padded: Vec<Vec<String>>,
    order: usize,
    pub vocab: Vec<String>,
    discounts: Vec<[f64; 4]>,
}

impl KnOracle {
    pub fn new(sentences: &[Vec<String>], order: usize) -> Self {
        let padded: Vec<Vec<String>> = sentences
            .iter()
            .map(|s| {
                let mut p = vec![BOS.to_string()];
                p.extend(s.iter().cloned());
                p.push(EOS.to_string());
                p
            })
            .collect();
        let mut vocab: BTreeSet<String> = padded
            .iter()
            .flatten()
            .filter(|w| *w != BOS)
            .cloned()
            .collect();
        vocab.insert(UNK.to_string());
        let mut oracle = KnOracle {
            padded,
            order,
            vocab: vocab.into_iter().collect(),
            discounts: Vec::new(),
        };
        oracle.discounts = (1..=order).map(|k| oracle.estimate(k)).collect();
        oracle
    }

    fn windows(&self, k: usize) -> Vec<Vec<String>> {
        let mut out = Vec::new();
        for s in &self.padded {
            if s.len() < k {
                continue;
            }
            for i in 0..=s.len() - k {
                let g = s[i..i + k].to_vec();
                if k == 1 && g[0] == BOS {
                    continue;
                }
                out.push(g);
            }
        }
        out
    }

    pub fn ngrams(&self, k: usize) -> BTreeSet<Vec<String>> {
        self.windows(k).into_iter().collect()
    }

    fn raw(&self, g: &[String]) -> u64 {
        self.windows(g.len()).iter().filter(|w| w.as_slice() == g).count() as u64
    }

    pub fn adjusted(&self, g: &[String]) -> u64 {
        let k = g.len();
        if k == self.order || g[0] == BOS {
            return self.raw(g);
        }
        let lefts: BTreeSet<String> = self
            .windows(k + 1)
            .into_iter()
            .filter(|w| &w[1..] == g)
            .map(|w| w[0].clone())
            .collect();
        lefts.len() as u64
    }

    fn estimate(&self, k: usize) -> [f64; 4] {
        let mut n = [0u64; 5];
        for g in self.ngrams(k) {
            let a = self.adjusted(&g);
            if (1..=4).contains(&a) {
                n[a as usize] += 1;
            }
        }
        if n[1] > 0 && n[2] > 0 && n[3] > 0 {
            let y = n[1] as f64 / (n[1] as f64 + 2.0 * n[2] as f64);
            let d1 = 1.0 - 2.0 * y * n[2] as f64 / n[1] as f64;
            let d2 = 2.0 - 3.0 * y * n[3] as f64 / n[2] as f64;
            let d3 = 3.0 - 4.0 * y * n[4] as f64 / n[3] as f64;
            if d1 > 0.0 && d2 > 0.0 && d3 > 0.0 {
                return [0.0, d1, d2, d3];
            }
        }
        [0.0, 0.75, 0.75, 0.75]
    }

    fn discount(&self, k: usize, a: u64) -> f64 {
        if a == 0 {
            0.0
        } else {
            self.discounts[k - 1][a.min(3) as usize]
        }
    }

    /// (total adjusted mass after h, total discount mass after h) at order |h|+1.
    fn context_mass(&self, h: &[String]) -> (f64, f64) {
        let k = h.len() + 1;
        let mut total = 0.0;
        let mut disc = 0.0;
        for g in self.ngrams(k) {
            if &g[..k - 1] == h {
                let a = self.adjusted(&g);
                total += a as f64;
                disc += self.discount(k, a);
            }
        }
        (total, disc)
    }

    /// Interpolation weight after `h`, or None when `h` was never a context.
    pub fn gamma(&self, h: &[String]) -> Option<f64> {
        let (total, disc) = self.context_mass(h);
        (total > 0.0).then(|| disc / total)
    }

    /// P(w | h) by the recursive interpolation formula.
    pub fn prob(&self, w: &str, h: &[String]) -> f64 {
        let h = if h.len() > self.order - 1 {
            &h[h.len() - (self.order - 1)..]
        } else {
            h
        };
        let w = if self.vocab.iter().any(|v| v == w) { w } else { UNK };
        let lower = if h.is_empty() {
            1.0 / self.vocab.len() as f64
        } else {
            self.prob(w, &h[1..])
        };
        let (total, disc) = self.context_mass(h);
        if total == 0.0 {
            return lower;
        }
        let mut g = h.to_vec();
        g.push(w.to_string());
        let a = self.adjusted(&g);
        let k = g.len();
        (a as f64 - self.discount(k, a)) / total + disc / total * lower
    }
}
