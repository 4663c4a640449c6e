use serde::{Deserialize, Serialize};

use super::dom::{Document, NodeId, NodeKind};
use crate::warc::RawDocument;

/// Elements dropped together with their content.
const SKIPPED: &[&str] = &[
    "head", "script", "style", "noscript", "template", "iframe", "svg", "math", "object",
    "select", "textarea", "button", "title",
];

/// Elements that start and end a text block.
const BLOCK_LEVEL: &[&str] = &[
    "address", "article", "aside", "blockquote", "body", "caption", "center", "dd", "details",
    "dialog", "div", "dl", "dt", "fieldset", "figcaption", "figure", "footer", "form", "h1",
    "h2", "h3", "h4", "h5", "h6", "header", "hgroup", "hr", "html", "li", "main", "menu", "nav",
    "ol", "p", "pre", "section", "summary", "table", "tbody", "td", "tfoot", "th", "thead", "tr",
    "ul",
];

/// Tunables for main-content extraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractConfig {
    /// Blocks with a higher share of characters inside links are boilerplate.
    pub max_link_density: f64,
    /// Blocks shorter than this many characters are boilerplate.
    pub min_block_chars: usize,
    /// Any block inside one of these elements is boilerplate.
    pub boilerplate_tags: Vec<String>,
    /// class/id words that mark an element's blocks as boilerplate.
    pub lexicon: Vec<String>,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig {
            max_link_density: 0.33,
            min_block_chars: 25,
            boilerplate_tags: ["nav", "header", "footer", "aside", "form"]
                .map(String::from)
                .to_vec(),
            lexicon: [
                "comment", "sidebar", "menu", "share", "related", "cookie", "banner", "ad",
            ]
            .map(String::from)
            .to_vec(),
        }
    }
}

/// Main text of one page. Paragraphs are joined with `\n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedDoc {
    pub url: String,
    pub text: String,
    #[serde(rename = "chars")]
    pub char_count: usize,
    #[serde(skip)]
    pub block_count: usize,
}

impl ExtractedDoc {
    pub fn new(url: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        ExtractedDoc {
            url: url.into(),
            char_count: text.chars().count(),
            text,
            block_count: 0,
        }
    }
}

/// A run of inline text between block-level boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub text: String,
    pub text_length: usize,
    pub link_text_length: usize,
    /// Inside one of the configured boilerplate elements.
    pub in_boilerplate_tag: bool,
    /// Inside an element whose class or id hits the lexicon.
    pub lexicon_match: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TagClass {
    Content,
    BoilerplateSuspect,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockScore {
    pub text_length: usize,
    pub link_text_length: usize,
    pub link_density: f64,
    pub tag_class: TagClass,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ExtractError {
    #[error("input is not HTML text: {0}")]
    Malformed(&'static str),
}

pub fn score_block(block: &Block, cfg: &ExtractConfig) -> BlockScore {
    let link_density = block.link_text_length as f64 / block.text_length.max(1) as f64;
    let boilerplate = link_density > cfg.max_link_density
        || block.text_length < cfg.min_block_chars
        || block.in_boilerplate_tag
        || block.lexicon_match;
    BlockScore {
        text_length: block.text_length,
        link_text_length: block.link_text_length,
        link_density,
        tag_class: if boilerplate {
            TagClass::BoilerplateSuspect
        } else {
            TagClass::Content
        },
    }
}

/// Extracts the main content of a page, or None when no block qualifies.
pub fn extract_main_content(
    doc: &RawDocument,
    cfg: &ExtractConfig,
) -> Result<Option<ExtractedDoc>, ExtractError> {
    let Some((text, blocks)) = extract_text(&doc.html, cfg)? else {
        return Ok(None);
    };
    let mut out = ExtractedDoc::new(doc.url.clone(), text);
    out.block_count = blocks;
    Ok(Some(out))
}

/// Extracted text and number of retained blocks for raw HTML.
pub fn extract_text(
    html: &str,
    cfg: &ExtractConfig,
) -> Result<Option<(String, usize)>, ExtractError> {
    check_text_like(html)?;
    let doc = Document::parse(html);
    let kept: Vec<String> = segment_blocks(&doc, cfg)
        .into_iter()
        .filter(|b| score_block(b, cfg).tag_class == TagClass::Content)
        .map(|b| b.text)
        .collect();
    if kept.is_empty() {
        return Ok(None);
    }
    let n = kept.len();
    Ok(Some((kept.join("\n"), n)))
}

fn check_text_like(html: &str) -> Result<(), ExtractError> {
    if html.contains('\0') {
        return Err(ExtractError::Malformed("contains NUL bytes"));
    }
    let mut total = 0usize;
    let mut replaced = 0usize;
    for c in html.chars() {
        total += 1;
        if c == char::REPLACEMENT_CHARACTER {
            replaced += 1;
        }
    }
    if total > 0 && replaced * 10 > total {
        return Err(ExtractError::Malformed("mostly undecodable characters"));
    }
    Ok(())
}

/// Splits a parsed page into text blocks in document order.
pub fn segment_blocks(doc: &Document, cfg: &ExtractConfig) -> Vec<Block> {
    let mut seg = Segmenter {
        blocks: Vec::new(),
        acc: Accumulator::default(),
        boilerplate_depth: 0,
        lexicon_depth: 0,
        link_depth: 0,
    };
    enum Step {
        Enter(NodeId),
        Exit(Frame),
    }
    #[derive(Clone, Copy)]
    struct Frame {
        boundary: bool,
        boilerplate: bool,
        lexicon: bool,
        link: bool,
    }
    let mut stack = vec![Step::Enter(doc.root())];
    while let Some(step) = stack.pop() {
        match step {
            Step::Enter(id) => {
                let node = doc.node(id);
                match &node.kind {
                    NodeKind::Text(t) => seg.text(t),
                    NodeKind::Root => {
                        stack.extend(node.children.iter().rev().map(|&c| Step::Enter(c)));
                    }
                    NodeKind::Element { name, attrs } => {
                        let name = name.as_str();
                        if SKIPPED.contains(&name) || attrs.iter().any(|(k, _)| k == "hidden") {
                            continue;
                        }
                        if name == "br" {
                            seg.acc.space();
                            continue;
                        }
                        let boilerplate = cfg.boilerplate_tags.iter().any(|t| t == name);
                        let lexicon = ["class", "id"].iter().any(|key| {
                            doc.attr(id, key)
                                .is_some_and(|v| lexicon_hit(v, &cfg.lexicon))
                        });
                        let frame = Frame {
                            boundary: boilerplate || lexicon || BLOCK_LEVEL.contains(&name),
                            boilerplate,
                            lexicon,
                            link: name == "a",
                        };
                        if frame.boundary {
                            seg.flush();
                        }
                        seg.boilerplate_depth += frame.boilerplate as usize;
                        seg.lexicon_depth += frame.lexicon as usize;
                        seg.link_depth += frame.link as usize;
                        stack.push(Step::Exit(frame));
                        stack.extend(node.children.iter().rev().map(|&c| Step::Enter(c)));
                    }
                }
            }
            Step::Exit(frame) => {
                if frame.boundary {
                    seg.flush();
                }
                seg.boilerplate_depth -= frame.boilerplate as usize;
                seg.lexicon_depth -= frame.lexicon as usize;
                seg.link_depth -= frame.link as usize;
            }
        }
    }
    seg.flush();
    seg.blocks
}

/// True when a class/id value names a boilerplate region. Values are split
/// into alphanumeric words; a word hits when it equals a lexicon entry or its
/// plural, or starts with an entry of four or more letters.
pub fn lexicon_hit(value: &str, lexicon: &[String]) -> bool {
    value
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .any(|w| {
            let w = w.to_lowercase();
            lexicon.iter().any(|entry| {
                w == *entry
                    || w.strip_suffix('s') == Some(entry.as_str())
                    || (entry.chars().count() >= 4 && w.starts_with(entry.as_str()))
            })
        })
}

struct Segmenter {
    blocks: Vec<Block>,
    acc: Accumulator,
    boilerplate_depth: usize,
    lexicon_depth: usize,
    link_depth: usize,
}

impl Segmenter {
    fn text(&mut self, t: &str) {
        let in_link = self.link_depth > 0;
        for c in t.chars() {
            self.acc.push(c, in_link);
        }
    }

    fn flush(&mut self) {
        let acc = std::mem::take(&mut self.acc);
        if acc.text.is_empty() {
            return;
        }
        self.blocks.push(Block {
            text_length: acc.chars,
            link_text_length: acc.link_chars,
            text: acc.text,
            in_boilerplate_tag: self.boilerplate_depth > 0,
            lexicon_match: self.lexicon_depth > 0,
        });
    }
}

/// Builds whitespace-collapsed block text while counting link characters.
#[derive(Default)]
struct Accumulator {
    text: String,
    chars: usize,
    link_chars: usize,
    pending_space: bool,
    last_in_link: bool,
    last_char: Option<char>,
}

impl Accumulator {
    fn space(&mut self) {
        if !self.text.is_empty() {
            self.pending_space = true;
        }
    }

    fn emit(&mut self, c: char, link: bool) {
        self.text.push(c);
        self.chars += 1;
        self.link_chars += link as usize;
        self.last_char = Some(c);
    }

    fn push(&mut self, c: char, in_link: bool) {
        if c.is_whitespace() {
            self.space();
            return;
        }
        if self.pending_space {
            self.emit(' ', in_link && self.last_in_link);
            self.pending_space = false;
        } else if self.last_char == Some('<') && c.is_alphabetic() {
            // decoded `&lt;` must not read as a tag opener
            self.emit(' ', false);
        }
        self.emit(c, in_link);
        self.last_in_link = in_link;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block(len: usize, link: usize) -> Block {
        Block {
            text: "x".repeat(len),
            text_length: len,
            link_text_length: link,
            in_boilerplate_tag: false,
            lexicon_match: false,
        }
    }

    #[test]
    fn score_rules() {
        let cfg = ExtractConfig::default();
        let s = score_block(&block(200, 0), &cfg);
        assert_eq!(s.tag_class, TagClass::Content);
        assert_eq!(s.link_density, 0.0);

        let s = score_block(&block(100, 50), &cfg);
        assert_eq!(s.link_density, 0.5);
        assert_eq!(s.tag_class, TagClass::BoilerplateSuspect);

        let mut b = block(200, 0);
        b.in_boilerplate_tag = true;
        assert_eq!(score_block(&b, &cfg).tag_class, TagClass::BoilerplateSuspect);

        assert_eq!(
            score_block(&block(24, 0), &cfg).tag_class,
            TagClass::BoilerplateSuspect
        );
        assert_eq!(score_block(&block(25, 0), &cfg).tag_class, TagClass::Content);
        assert_eq!(score_block(&block(0, 0), &cfg).link_density, 0.0);
    }

    #[test]
    fn lexicon_matching() {
        let lex = ExtractConfig::default().lexicon;
        assert!(lexicon_hit("comments-area", &lex));
        assert!(lexicon_hit("main SIDEBAR", &lex));
        assert!(lexicon_hit("top_ad", &lex));
        assert!(lexicon_hit("ads", &lex));
        assert!(lexicon_hit("cookie-consent", &lex));
        assert!(!lexicon_hit("header-shadow address", &lex));
        assert!(!lexicon_hit("download", &lex));
        assert!(!lexicon_hit("content", &lex));
    }

    #[test]
    fn whitespace_collapse_and_link_count() {
        let d = Document::parse("<p>  Hello \n\t <a href=x> big  world </a> !</p>");
        let blocks = segment_blocks(&d, &ExtractConfig::default());
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0].text, "Hello big world !");
        assert_eq!(blocks[0].link_text_length, "big world".len());
        assert_eq!(blocks[0].text_length, 17);
    }

    #[test]
    fn block_boundaries_split_mixed_content() {
        let d = Document::parse("<div>before<p>inside</p>after<br>more</div>");
        let texts: Vec<String> = segment_blocks(&d, &ExtractConfig::default())
            .into_iter()
            .map(|b| b.text)
            .collect();
        assert_eq!(texts, ["before", "inside", "after more"]);
    }

    #[test]
    fn decoded_angle_bracket_never_opens_a_tag() {
        let html = "<p>Compare &lt;script&gt; and &lt;b with a long enough sentence here.</p>";
        let (text, _) = extract_text(html, &ExtractConfig::default())
            .unwrap()
            .unwrap();
        assert_eq!(text, "Compare < script> and < b with a long enough sentence here.");
    }

    #[test]
    fn binary_input_rejected() {
        assert!(extract_text("ab\0cd", &ExtractConfig::default()).is_err());
        let junk: String = std::iter::repeat_n('\u{FFFD}', 50).collect();
        assert!(extract_text(&junk, &ExtractConfig::default()).is_err());
    }

    #[test]
    fn hidden_and_script_content_dropped() {
        let html = "<body><p hidden>secret text that is long enough to keep</p>\
                    <p>visible text that is long enough to keep</p>\
                    <script>var x = 'also long enough to be a block';</script></body>";
        let (text, n) = extract_text(html, &ExtractConfig::default())
            .unwrap()
            .unwrap();
        assert_eq!(text, "visible text that is long enough to keep");
        assert_eq!(n, 1);
    }
}
