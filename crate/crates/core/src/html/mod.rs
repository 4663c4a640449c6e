//! HTML parsing and main-content extraction.

pub mod dom;
mod extract;

pub use dom::Document;
pub use extract::{
    extract_main_content, extract_text, lexicon_hit, score_block, segment_blocks, Block,
    BlockScore, ExtractConfig, ExtractError, ExtractedDoc, TagClass,
};

/// Visible text of a page with whitespace collapsed, for language detection.
pub fn visible_text(html: &str) -> String {
    Document::parse(html)
        .text_content()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}
