//! ARPA text format. Discounts are kept as `#` comment lines ahead of
//! `\data\`, which other readers skip.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use super::model::{Discounts, NGramEntry, NGramModel};
use super::{NgramError, Vocab, MAX_ORDER};

impl NGramModel {
    pub fn write_arpa<W: Write>(&self, mut out: W) -> Result<(), NgramError> {
        out.write_all(self.to_arpa_string().as_bytes())?;
        Ok(())
    }

    /// Serializes the model. Output is a pure function of the model contents.
    pub fn to_arpa_string(&self) -> String {
        let mut s = String::new();
        for (k, d) in self.discounts().iter().enumerate() {
            let _ = writeln!(
                s,
                "# discounts order={} d1={} d2={} d3+={} fallback={}",
                k + 1,
                d.d1,
                d.d2,
                d.d3_plus,
                d.fallback
            );
        }
        s.push_str("\n\\data\\\n");
        for k in 1..=self.order() {
            let _ = writeln!(s, "ngram {}={}", k, self.ngram_count(k));
        }
        for k in 1..=self.order() {
            let _ = write!(s, "\n\\{k}-grams:\n");
            for (words, e) in self.ngrams(k) {
                let _ = write!(s, "{}\t{}", e.log_prob, words.join(" "));
                if let Some(b) = e.backoff {
                    let _ = write!(s, "\t{b}");
                }
                s.push('\n');
            }
        }
        s.push_str("\n\\end\\\n");
        s
    }

    pub fn read_arpa<R: BufRead>(input: R) -> Result<NGramModel, NgramError> {
        let mut parser = Parser::default();
        for (i, line) in input.lines().enumerate() {
            parser.line(i + 1, line?.trim_end())?;
        }
        parser.finish()
    }

    pub fn from_arpa_str(text: &str) -> Result<NGramModel, NgramError> {
        Self::read_arpa(text.as_bytes())
    }
}

#[derive(Default)]
enum Section {
    #[default]
    Preamble,
    Data,
    Grams(usize),
    End,
}

#[derive(Default)]
struct Parser {
    section: Section,
    declared: Vec<usize>,
    discounts: Vec<Discounts>,
    vocab: Vocab,
    tables: Vec<HashMap<Box<[u32]>, NGramEntry>>,
}

fn err(line: usize, msg: impl Into<String>) -> NgramError {
    NgramError::Arpa {
        line,
        msg: msg.into(),
    }
}

fn parse_f64(line: usize, s: &str) -> Result<f64, NgramError> {
    s.parse::<f64>()
        .map_err(|_| err(line, format!("bad number `{s}`")))
}

impl Parser {
    fn line(&mut self, no: usize, line: &str) -> Result<(), NgramError> {
        match self.section {
            Section::Preamble => {
                if line == "\\data\\" {
                    self.section = Section::Data;
                } else if let Some(rest) = line.strip_prefix("# discounts ") {
                    self.discounts.push(parse_discounts(no, rest)?);
                }
            }
            Section::Data => {
                if line.is_empty() {
                    return Ok(());
                }
                if let Some(rest) = line.strip_prefix("ngram ") {
                    let (k, n) = rest
                        .split_once('=')
                        .ok_or_else(|| err(no, "expected `ngram k=count`"))?;
                    let k: usize = k.trim().parse().map_err(|_| err(no, "bad order"))?;
                    let n: usize = n.trim().parse().map_err(|_| err(no, "bad count"))?;
                    if k != self.declared.len() + 1 || k > MAX_ORDER {
                        return Err(err(no, format!("unexpected order {k}")));
                    }
                    self.declared.push(n);
                    self.tables.push(HashMap::with_capacity(n));
                } else {
                    self.section_header(no, line)?;
                }
            }
            Section::Grams(k) => {
                if line.is_empty() {
                    return Ok(());
                }
                if line.starts_with('\\') {
                    return self.section_header(no, line);
                }
                let mut fields = line.split_whitespace();
                let lp = parse_f64(no, fields.next().unwrap_or_default())?;
                let rest: Vec<&str> = fields.collect();
                let backoff = match rest.len() {
                    n if n == k => None,
                    n if n == k + 1 => Some(parse_f64(no, rest[k])?),
                    _ => return Err(err(no, format!("expected {k} words"))),
                };
                let mut key = Vec::with_capacity(k);
                for w in &rest[..k] {
                    let id = if k == 1 {
                        self.vocab.intern(w)
                    } else {
                        self.vocab
                            .id(w)
                            .ok_or_else(|| err(no, format!("word `{w}` missing from 1-grams")))?
                    };
                    key.push(id);
                }
                self.tables[k - 1].insert(
                    key.into_boxed_slice(),
                    NGramEntry {
                        log_prob: lp,
                        backoff,
                    },
                );
            }
            Section::End => {}
        }
        Ok(())
    }

    fn section_header(&mut self, no: usize, line: &str) -> Result<(), NgramError> {
        if line == "\\end\\" {
            self.section = Section::End;
            return Ok(());
        }
        let k = line
            .strip_prefix('\\')
            .and_then(|s| s.strip_suffix("-grams:"))
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| err(no, format!("unexpected line `{line}`")))?;
        if k == 0 || k > self.declared.len() {
            return Err(err(no, format!("section for undeclared order {k}")));
        }
        if let Section::Grams(prev) = self.section {
            self.check_count(no, prev)?;
        }
        self.section = Section::Grams(k);
        Ok(())
    }

    fn check_count(&self, no: usize, k: usize) -> Result<(), NgramError> {
        if self.tables[k - 1].len() != self.declared[k - 1] {
            return Err(err(
                no,
                format!(
                    "{k}-grams: declared {} entries, found {}",
                    self.declared[k - 1],
                    self.tables[k - 1].len()
                ),
            ));
        }
        Ok(())
    }

    fn finish(self) -> Result<NGramModel, NgramError> {
        if !matches!(self.section, Section::End) {
            return Err(err(0, "missing \\end\\ marker"));
        }
        if self.declared.is_empty() {
            return Err(err(0, "no n-gram orders declared"));
        }
        for k in 1..=self.declared.len() {
            self.check_count(0, k)?;
        }
        let discounts = if self.discounts.len() == self.declared.len() {
            self.discounts
        } else {
            Vec::new()
        };
        Ok(NGramModel::from_parts(
            self.declared.len(),
            self.vocab,
            self.tables,
            discounts,
        ))
    }
}

fn parse_discounts(no: usize, rest: &str) -> Result<Discounts, NgramError> {
    let mut d = Discounts {
        d1: 0.0,
        d2: 0.0,
        d3_plus: 0.0,
        fallback: false,
    };
    for field in rest.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| err(no, "bad discount field"))?;
        match key {
            "order" => {}
            "d1" => d.d1 = parse_f64(no, value)?,
            "d2" => d.d2 = parse_f64(no, value)?,
            "d3+" => d.d3_plus = parse_f64(no, value)?,
            "fallback" => d.fallback = value == "true",
            _ => return Err(err(no, format!("unknown discount field `{key}`"))),
        }
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::super::{perplexity, train_ngram};
    use super::*;

    #[test]
    fn roundtrip_is_byte_identical() {
        let m = train_ngram(
            &[vec!["a", "b", "c", "a"], vec!["b", "c", "a"], vec!["c", "c"]],
            3,
        )
        .unwrap();
        let text = m.to_arpa_string();
        let back = NGramModel::from_arpa_str(&text).unwrap();
        assert_eq!(back.to_arpa_string(), text);
        assert_eq!(back.discounts(), m.discounts());
        let r1 = perplexity(&m, "a b c\nc a");
        let r2 = perplexity(&back, "a b c\nc a");
        assert_eq!(r1, r2);
    }

    #[test]
    fn reads_plain_third_party_model() {
        let arpa = "\\data\\\nngram 1=4\nngram 2=1\n\n\\1-grams:\n-1.0\t<unk>\n-99\t<s>\t-0.5\n-0.3\tx\t-0.2\n-0.3\t</s>\n\n\\2-grams:\n-0.1\tx </s>\n\n\\end\\\n";
        let m = NGramModel::from_arpa_str(arpa).unwrap();
        assert_eq!(m.order(), 2);
        assert!(m.discounts().is_empty());
        // x </s> stored; <s> x backs off: -0.5 + -0.3
        assert!((m.cond_log10(&["<s>"], "x") - -0.8).abs() < 1e-12);
        assert!((m.cond_log10(&["x"], "</s>") - -0.1).abs() < 1e-12);
        // unknown scored as <unk> after backing off from x
        assert!((m.cond_log10(&["x"], "y") - -1.2).abs() < 1e-12);
    }

    #[test]
    fn rejects_count_mismatch_and_unknown_words() {
        let bad = "\\data\\\nngram 1=2\n\n\\1-grams:\n-1\t<unk>\n\n\\end\\\n";
        assert!(NGramModel::from_arpa_str(bad).is_err());
        let bad = "\\data\\\nngram 1=1\nngram 2=1\n\n\\1-grams:\n-1\t<unk>\n\n\\2-grams:\n-1\t<unk> zz\n\n\\end\\\n";
        assert!(matches!(
            NGramModel::from_arpa_str(bad),
            Err(NgramError::Arpa { line: 9, .. })
        ));
        assert!(NGramModel::from_arpa_str("\\data\\\nngram 1=0\n").is_err());
    }
}
