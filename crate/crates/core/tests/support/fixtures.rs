//! Hand-built archives and corpora shared by the integration tests.

use std::io::Write;
use std::path::{Path, PathBuf};

use flate2::write::GzEncoder;
use flate2::Compression;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use webcorpus::warc::{WarcRecord, LANGUAGE_HEADER};

pub const REFERENCE_PL: &str = include_str!("../fixtures/reference_pl.txt");

pub fn reference_lines() -> Vec<&'static str> {
    REFERENCE_PL.lines().filter(|l| !l.trim().is_empty()).collect()
}

/// A response record carrying an HTTP 200 with `body`.
pub fn response_record(uri: &str, lang: Option<&str>, content_type: &str, body: &str) -> WarcRecord {
    let payload = format!("HTTP/1.1 200 OK\r\nContent-Type: {content_type}\r\n\r\n{body}");
    let mut headers = vec![("WARC-Target-URI", uri), ("WARC-Date", "2020-01-01T00:00:00Z")];
    if let Some(l) = lang {
        headers.push((LANGUAGE_HEADER, l));
    }
    WarcRecord::new("response", &headers, payload.into_bytes())
}

pub fn html_response(uri: &str, lang: Option<&str>, body: &str) -> Vec<u8> {
    response_record(uri, lang, "text/html; charset=utf-8", body).to_bytes()
}

/// A page with navigation, header, footer and a comment box around the
/// given article paragraphs.
pub fn article_page(title: &str, paragraphs: &[&str]) -> String {
    let mut s = String::new();
    s.push_str("<!DOCTYPE html><html><head><title>");
    s.push_str(title);
    s.push_str("</title><style>p { color: red }</style><script>var x = '<p>nie</p>';</script></head><body>\n");
    s.push_str("<header><h1>Portal miejski</h1><p>Najnowsze wiadomości z regionu każdego dnia</p></header>\n");
    s.push_str("<nav><ul><li><a href=\"/\">Start</a></li><li><a href=\"/a\">Aktualności</a></li><li><a href=\"/k\">Kontakt</a></li></ul></nav>\n");
    s.push_str("<article>\n");
    for p in paragraphs {
        s.push_str("  <p>");
        s.push_str(&html_escape::encode_text(p));
        s.push_str("</p>\n");
    }
    s.push_str("</article>\n");
    s.push_str("<div class=\"comments\"><p>Świetny artykuł, pozdrawiam wszystkich czytelników!</p></div>\n");
    s.push_str("<footer><p>Wszelkie prawa zastrzeżone. Redakcja portalu miejskiego 2020.</p></footer>\n");
    s.push_str("</body></html>\n");
    s
}

/// Text the extractor is expected to return for [`article_page`].
pub fn article_text(paragraphs: &[&str]) -> String {
    paragraphs.join("\n")
}

pub fn good_paragraphs(start: usize) -> Vec<&'static str> {
    reference_lines()[start..start + 8].to_vec()
}

pub const SHORT_TEXT: &str = "Krótka notatka o pogodzie na dziś w naszym mieście.";
pub const COOKIE_TEXT: &str = "Ta strona używa plików cookies, aby zapewnić najlepszą jakość usług. \
    Korzystając ze strony, zgadzasz się na ich zapisywanie w pamięci urządzenia.";

/// Deterministic nonsense words: never in the reference vocabulary.
pub fn gibberish(words: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let letters: Vec<char> = "qxzvkwjfh".chars().collect();
    (0..words)
        .map(|_| {
            let n = rng.random_range(4..9);
            (0..n).map(|_| *letters.choose(&mut rng).unwrap()).collect::<String>()
        })
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn gibberish_paragraphs() -> Vec<String> {
    (0..6).map(|i| gibberish(14, 100 + i)).collect()
}

/// Seven records: one English page, one short page, one cookie notice, one
/// nonsense page, a duplicate pair and one more good page. Exactly one
/// rule fires for each reject and two documents survive.
pub fn filter_fixture_archive() -> Vec<u8> {
    let good_a = good_paragraphs(0);
    let good_b = good_paragraphs(10);
    let english = [
        "The city council met on Monday to discuss the new bridge over the river.",
        "Residents asked for more bicycle lanes and better bus connections to the centre.",
        "The mayor promised that the works would start before the end of the summer.",
    ];
    let gib = gibberish_paragraphs();
    let gib: Vec<&str> = gib.iter().map(String::as_str).collect();
    let mut out = Vec::new();
    out.extend(html_response("http://example.com/en", Some("eng"), &article_page("News", &english)));
    out.extend(html_response("http://example.pl/krotki", Some("pol"), &article_page("Pogoda", &[SHORT_TEXT])));
    out.extend(html_response("http://example.pl/cookies", Some("pol"), &article_page("Informacja", &[COOKIE_TEXT])));
    out.extend(html_response("http://example.pl/szum", Some("pol"), &article_page("Szum", &gib)));
    out.extend(html_response("http://example.pl/a", Some("pol"), &article_page("Miasto", &good_a)));
    out.extend(html_response("http://example.pl/a-kopia", Some("pol"), &article_page("Miasto kopia", &good_a)));
    out.extend(html_response("http://example.pl/b", Some("pol,eng"), &article_page("Szkoła", &good_b)));
    out
}

pub fn filter_fixture_kept_texts() -> Vec<String> {
    vec![article_text(&good_paragraphs(0)), article_text(&good_paragraphs(10))]
}

pub fn gzip_member(bytes: &[u8]) -> Vec<u8> {
    let mut enc = GzEncoder::new(Vec::new(), Compression::fast());
    enc.write_all(bytes).unwrap();
    enc.finish().unwrap()
}

pub fn write_file(path: &Path, bytes: &[u8]) {
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    std::fs::write(path, bytes).unwrap();
}

/// Pipeline config text for a run over `inputs` with the reference model.
pub fn pipeline_toml(dir: &Path, inputs: &str, out: &Path, workers: usize) -> String {
    let reference = dir.join("reference_pl.txt");
    if !reference.exists() {
        write_file(&reference, REFERENCE_PL.as_bytes());
    }
    format!(
        "inputs = [{inputs:?}]\ntarget_language = \"pol\"\nlm_reference = {:?}\noutput_dir = {:?}\nworkers = {workers}\n",
        reference.display().to_string(),
        out.display().to_string()
    )
}

/// Writes a synthetic crawl with about `total_bytes` of WARC records spread
/// over `shards` per-record-gzip archives and returns their paths.
pub fn synthetic_crawl(dir: &Path, shards: usize, total_bytes: usize, seed: u64) -> Vec<PathBuf> {
    std::fs::create_dir_all(dir).unwrap();
    let lines = reference_lines();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut paths = Vec::new();
    let per_shard = total_bytes / shards;
    let mut serial = 0u64;
    let mut previous: Vec<String> = Vec::new();
    for s in 0..shards {
        let path = dir.join(format!("crawl-{s:03}.warc.gz"));
        let mut file = std::io::BufWriter::new(std::fs::File::create(&path).unwrap());
        let mut written = 0usize;
        while written < per_shard {
            serial += 1;
            let uri = format!("http://site{}.pl/page/{serial}", rng.random_range(0..500));
            let kind = rng.random_range(0..100);
            let (lang, body) = match kind {
                0..=4 => (Some("eng"), article_page("News", &["The weather is fine and the market is open today for everyone."])),
                5..=9 => (Some("pol"), article_page("Krótko", &[SHORT_TEXT])),
                10..=14 => (Some("pol"), article_page("Info", &[COOKIE_TEXT])),
                15..=19 => {
                    let g: Vec<String> = (0..6).map(|i| gibberish(14, serial * 10 + i)).collect();
                    (Some("pol"), article_page("Szum", &g.iter().map(String::as_str).collect::<Vec<_>>()))
                }
                20..=29 if !previous.is_empty() => {
                    (Some("pol"), previous[rng.random_range(0..previous.len())].clone())
                }
                _ => {
                    let n = rng.random_range(8..30);
                    let paras: Vec<&str> = (0..n).map(|_| *lines.choose(&mut rng).unwrap()).collect();
                    let lang = if kind % 7 == 0 { None } else { Some("pol") };
                    let page = article_page("Artykuł", &paras);
                    if previous.len() < 64 {
                        previous.push(page.clone());
                    }
                    (lang, page)
                }
            };
            let record = html_response(&uri, lang, &body);
            written += record.len();
            file.write_all(&gzip_member(&record)).unwrap();
        }
        file.flush().unwrap();
        paths.push(path);
    }
    paths
}

/// Random string mixing ASCII, Polish letters, odd whitespace, the word
/// marker, control characters, byte-token lookalikes and astral characters.
pub fn random_utf8(rng: &mut ChaCha8Rng, max_chars: usize) -> String {
    const POOL: &[&str] = &[
        "a", "b", "ab", "s", "<", ">", "/", "0x", "<0x41>", "<s>", " ", "  ", "\t", "\n", "\r\n",
        "\u{a0}", "\u{3000}", "\u{2581}", "ą", "ł", "ż", "Ź", "é", "e\u{301}", "\u{0}", "\u{7f}",
        "😀", "🇵🇱", "中", "\u{10ffff}", "\u{fffd}",
    ];
    let n = rng.random_range(0..=max_chars);
    let mut s = String::new();
    while s.chars().count() < n {
        if rng.random_bool(0.2) {
            s.push(rng.random::<char>());
        } else {
            s.push_str(POOL[rng.random_range(0..POOL.len())]);
        }
    }
    s
}
