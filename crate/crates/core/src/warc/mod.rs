//! WARC archive ingestion.

mod reader;

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::langid::LanguageIdentifier;

pub use reader::{iter_warc_records, WarcReader, MAX_PAYLOAD};

/// Header carrying the crawler's detected languages, e.g. `pol,eng`.
pub const LANGUAGE_HEADER: &str = "WARC-Identified-Content-Language";

#[derive(Debug, thiserror::Error)]
pub enum WarcError {
    #[error("offset {offset}: expected a WARC/1.0 version line")]
    MalformedVersion { offset: u64 },
    #[error("offset {offset}: malformed header line {line:?}")]
    MalformedHeader { offset: u64, line: String },
    #[error("offset {offset}: missing {name} header")]
    MissingHeader { offset: u64, name: &'static str },
    #[error("offset {offset}: record of {length} bytes exceeds the payload limit")]
    TooLarge { offset: u64, length: u64 },
    #[error("offset {offset}: stream ended inside the record headers")]
    TruncatedHeaders { offset: u64 },
    #[error("offset {offset}: payload truncated, expected {expected} bytes, got {got}")]
    Truncated { offset: u64, expected: u64, got: u64 },
    #[error("read failed: {0}")]
    Io(#[from] std::io::Error),
}

impl WarcError {
    /// Byte offset of the failing record, when known.
    pub fn offset(&self) -> Option<u64> {
        match self {
            WarcError::MalformedVersion { offset }
            | WarcError::MalformedHeader { offset, .. }
            | WarcError::MissingHeader { offset, .. }
            | WarcError::TooLarge { offset, .. }
            | WarcError::TruncatedHeaders { offset }
            | WarcError::Truncated { offset, .. } => Some(*offset),
            WarcError::Io(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordType {
    Response,
    Request,
    Metadata,
    Other,
}

impl RecordType {
    fn from_header(value: &str) -> Self {
        match value.to_ascii_lowercase().as_str() {
            "response" => RecordType::Response,
            "request" => RecordType::Request,
            "metadata" => RecordType::Metadata,
            _ => RecordType::Other,
        }
    }
}

/// Header fields in file order. Lookups ignore ASCII case.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Headers(Vec<(String, String)>);

impl Headers {
    pub fn get(&self, name: &str) -> Option<&str> {
        self.0
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    pub fn push(&mut self, name: impl Into<String>, value: impl Into<String>) {
        self.0.push((name.into(), value.into()));
    }

    fn extend_last(&mut self, more: &str) {
        if let Some((_, v)) = self.0.last_mut() {
            if !v.is_empty() {
                v.push(' ');
            }
            v.push_str(more);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// One archive record. `content_length == payload.len()`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WarcRecord {
    pub version: String,
    pub headers: Headers,
    pub record_type: RecordType,
    pub content_length: u64,
    pub payload: Vec<u8>,
}

impl WarcRecord {
    /// Builds a record, setting `Content-Length` from the payload.
    pub fn new(record_type: &str, headers: &[(&str, &str)], payload: Vec<u8>) -> Self {
        let mut h = Headers::default();
        h.push("WARC-Type", record_type);
        for (k, v) in headers {
            h.push(*k, *v);
        }
        h.push("Content-Length", payload.len().to_string());
        WarcRecord {
            version: "WARC/1.0".into(),
            record_type: RecordType::from_header(record_type),
            content_length: payload.len() as u64,
            headers: h,
            payload,
        }
    }

    pub fn target_uri(&self) -> Option<&str> {
        self.headers.get("WARC-Target-URI")
    }

    /// Serializes the record in WARC framing, including the trailing blank lines.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.payload.len() + 256);
        out.extend_from_slice(self.version.as_bytes());
        out.extend_from_slice(b"\r\n");
        for (k, v) in self.headers.iter() {
            out.extend_from_slice(k.as_bytes());
            out.extend_from_slice(b": ");
            out.extend_from_slice(v.as_bytes());
            out.extend_from_slice(b"\r\n");
        }
        out.extend_from_slice(b"\r\n");
        out.extend_from_slice(&self.payload);
        out.extend_from_slice(b"\r\n\r\n");
        out
    }
}

/// An HTML page in the target language, decoded to UTF-8.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDocument {
    pub url: String,
    #[serde(rename = "lang")]
    pub language: String,
    pub html: String,
    /// Charset was missing, unknown or invalid and lossy UTF-8 was used.
    #[serde(skip)]
    pub lossy: bool,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum DocError {
    #[error("record is not a response")]
    WrongType,
    #[error("record has no target URI")]
    MissingUrl,
    #[error("payload has no HTTP header block")]
    MalformedHttp,
    #[error("response content type {0:?} is not HTML")]
    NotHtml(String),
    #[error("payload could not be decoded as text")]
    Undecodable,
}

/// Where the language decision came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LanguageSource {
    Header,
    Classifier,
}

/// Converts a response record into a document when its language matches.
///
/// The language comes from [`LANGUAGE_HEADER`] when present; otherwise the
/// built-in character n-gram classifier must rank `target_lang` first.
/// Returns `Ok(None)` for records in other languages.
pub fn to_raw_document(
    record: &WarcRecord,
    target_lang: &str,
) -> Result<Option<RawDocument>, DocError> {
    to_raw_document_with(record, target_lang, LanguageIdentifier::builtin()).map(|r| r.map(|(d, _)| d))
}

/// Like [`to_raw_document`], with an explicit classifier and the decision source.
pub fn to_raw_document_with(
    record: &WarcRecord,
    target_lang: &str,
    classifier: &LanguageIdentifier,
) -> Result<Option<(RawDocument, LanguageSource)>, DocError> {
    if record.record_type != RecordType::Response {
        return Err(DocError::WrongType);
    }
    let url = record.target_uri().unwrap_or("").trim();
    if url.is_empty() {
        return Err(DocError::MissingUrl);
    }
    let annotated = record.headers.get(LANGUAGE_HEADER);
    if let Some(langs) = annotated {
        if !langs.split(',').any(|l| l.trim().eq_ignore_ascii_case(target_lang)) {
            return Ok(None);
        }
    }

    let http = HttpResponse::parse(&record.payload).ok_or(DocError::MalformedHttp)?;
    let content_type = http.header("content-type").unwrap_or("");
    if !content_type.is_empty() && !content_type.to_ascii_lowercase().contains("html") {
        return Err(DocError::NotHtml(content_type.to_string()));
    }
    let (html, lossy) = decode_body(http.body, charset_of(content_type));
    let replaced = html.chars().filter(|&c| c == char::REPLACEMENT_CHARACTER).count();
    if replaced > 0 && replaced * 4 > html.chars().count() {
        return Err(DocError::Undecodable);
    }

    let source = if annotated.is_some() {
        LanguageSource::Header
    } else {
        let text = crate::html::visible_text(&html);
        if classifier.identify(&text) != Some(target_lang) {
            return Ok(None);
        }
        LanguageSource::Classifier
    };
    Ok(Some((
        RawDocument {
            url: url.to_string(),
            language: target_lang.to_string(),
            html: html.into_owned(),
            lossy,
        },
        source,
    )))
}

struct HttpResponse<'a> {
    headers: Vec<(&'a str, &'a str)>,
    body: &'a [u8],
}

impl<'a> HttpResponse<'a> {
    fn parse(payload: &'a [u8]) -> Option<Self> {
        let (head, body) = split_head(payload)?;
        let head = std::str::from_utf8(head).ok()?;
        let mut lines = head.lines();
        if !lines.next()?.starts_with("HTTP/") {
            return None;
        }
        let headers = lines
            .filter_map(|l| l.split_once(':'))
            .map(|(k, v)| (k.trim(), v.trim()))
            .collect();
        Some(HttpResponse { headers, body })
    }

    fn header(&self, name: &str) -> Option<&'a str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| *v)
    }
}

fn split_head(payload: &[u8]) -> Option<(&[u8], &[u8])> {
    let crlf = payload.windows(4).position(|w| w == b"\r\n\r\n");
    let lf = payload.windows(2).position(|w| w == b"\n\n");
    match (crlf, lf) {
        (Some(a), Some(b)) if b < a => Some((&payload[..b], &payload[b + 2..])),
        (Some(a), _) => Some((&payload[..a], &payload[a + 4..])),
        (None, Some(b)) => Some((&payload[..b], &payload[b + 2..])),
        (None, None) => None,
    }
}

fn charset_of(content_type: &str) -> Option<&str> {
    content_type.split(';').skip(1).find_map(|param| {
        let (k, v) = param.split_once('=')?;
        k.trim()
            .eq_ignore_ascii_case("charset")
            .then(|| v.trim().trim_matches(['"', '\'']))
    })
}

/// Decodes with the declared charset, falling back to lossy UTF-8. The flag
/// reports whether the fallback or replacement characters were needed.
fn decode_body<'a>(body: &'a [u8], charset: Option<&str>) -> (Cow<'a, str>, bool) {
    if let Some(enc) = charset.and_then(|c| encoding_rs::Encoding::for_label(c.as_bytes())) {
        let (text, had_errors) = enc.decode_without_bom_handling(body);
        return (text, had_errors);
    }
    match std::str::from_utf8(body) {
        Ok(s) => (Cow::Borrowed(s), charset.is_some()),
        Err(_) => (String::from_utf8_lossy(body), true),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn response(lang: Option<&str>, content_type: &str, body: &[u8]) -> WarcRecord {
        let mut payload =
            format!("HTTP/1.1 200 OK\r\nContent-Type: {content_type}\r\n\r\n").into_bytes();
        payload.extend_from_slice(body);
        let mut headers = vec![("WARC-Target-URI", "http://example.pl/a")];
        if let Some(l) = lang {
            headers.push((LANGUAGE_HEADER, l));
        }
        WarcRecord::new("response", &headers, payload)
    }

    #[test]
    fn header_language_match() {
        let r = response(Some("pol"), "text/html", b"<p>x</p>");
        let doc = to_raw_document(&r, "pol").unwrap().unwrap();
        assert_eq!(doc.url, "http://example.pl/a");
        assert_eq!(doc.html, "<p>x</p>");
        assert!(!doc.lossy);
        let r = response(Some("eng"), "text/html", b"<p>x</p>");
        assert_eq!(to_raw_document(&r, "pol").unwrap(), None);
        let r = response(Some("eng,pol"), "text/html", b"<p>x</p>");
        assert!(to_raw_document(&r, "pol").unwrap().is_some());
    }

    #[test]
    fn classifier_fallback_without_annotation() {
        let body = "<html><body><p>i w na z do że się nie to jest jak ale czy o po przez dla już tylko \
                    bardzo który także jednak może</p></body></html>";
        let r = response(None, "text/html; charset=utf-8", body.as_bytes());
        let (doc, source) = to_raw_document_with(&r, "pol", LanguageIdentifier::builtin())
            .unwrap()
            .unwrap();
        assert_eq!(source, LanguageSource::Classifier);
        assert_eq!(doc.language, "pol");
        let en = "<p>the quick brown fox jumps over the lazy dog and then it runs away</p>";
        let r = response(None, "text/html", en.as_bytes());
        assert_eq!(to_raw_document(&r, "pol").unwrap(), None);
    }

    #[test]
    fn charset_decoding() {
        // "zażółć" in ISO-8859-2
        let body = [b'z', b'a', 0xBF, 0xF3, 0xB3, 0xE6];
        let r = response(Some("pol"), "text/html; charset=\"ISO-8859-2\"", &body);
        let doc = to_raw_document(&r, "pol").unwrap().unwrap();
        assert_eq!(doc.html, "zażółć");
        assert!(!doc.lossy);

        let r = response(Some("pol"), "text/html; charset=bogus", "ąę".as_bytes());
        let doc = to_raw_document(&r, "pol").unwrap().unwrap();
        assert_eq!(doc.html, "ąę");
        assert!(doc.lossy);

        let r = response(Some("pol"), "text/html", b"ok text \xff here");
        let doc = to_raw_document(&r, "pol").unwrap().unwrap();
        assert!(doc.lossy);
        assert!(doc.html.contains('\u{FFFD}'));
    }

    #[test]
    fn rejects_non_response_and_non_html() {
        let mut r = response(Some("pol"), "text/html", b"x");
        r.record_type = RecordType::Request;
        assert_eq!(to_raw_document(&r, "pol"), Err(DocError::WrongType));
        let r = response(Some("pol"), "image/png", b"x");
        assert!(matches!(to_raw_document(&r, "pol"), Err(DocError::NotHtml(_))));
        let r = WarcRecord::new(
            "response",
            &[("WARC-Target-URI", "http://x"), (LANGUAGE_HEADER, "pol")],
            b"no http head".to_vec(),
        );
        assert_eq!(to_raw_document(&r, "pol"), Err(DocError::MalformedHttp));
        let r = response(Some("pol"), "text/html", &[0xff; 64]);
        assert_eq!(to_raw_document(&r, "pol"), Err(DocError::Undecodable));
        let r = WarcRecord::new("response", &[], b"HTTP/1.1 200 OK\r\n\r\n".to_vec());
        assert_eq!(to_raw_document(&r, "pol"), Err(DocError::MissingUrl));
    }

    #[test]
    fn headers_are_case_insensitive() {
        let mut h = Headers::default();
        h.push("Content-Length", "10");
        assert_eq!(h.get("content-length"), Some("10"));
        assert_eq!(h.get("CONTENT-LENGTH"), Some("10"));
    }
}
