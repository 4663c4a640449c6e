//! A small error-tolerant HTML parser. It accepts arbitrary tag soup and
//! always produces a tree: unknown end tags are ignored, unclosed elements
//! are closed at end of input, and the usual implied end tags (`p`, `li`,
//! table cells, `option`) are applied.

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    Root,
    Element {
        name: String,
        attrs: Vec<(String, String)>,
    },
    Text(String),
}

#[derive(Debug, Clone)]
pub struct Node {
    pub kind: NodeKind,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
}

/// Arena-allocated document tree. Node 0 is the root.
#[derive(Debug, Clone)]
pub struct Document {
    nodes: Vec<Node>,
}

const VOID: &[&str] = &[
    "area", "base", "br", "col", "embed", "hr", "img", "input", "link", "meta", "param", "source",
    "track", "wbr",
];

/// Elements whose content is not markup.
const RAW_TEXT: &[&str] = &[
    "script", "style", "textarea", "title", "xmp", "iframe", "noembed", "noframes", "plaintext",
];

/// Start tags that close an open `p`.
const CLOSES_P: &[&str] = &[
    "address", "article", "aside", "blockquote", "details", "div", "dl", "fieldset",
    "figcaption", "figure", "footer", "form", "h1", "h2", "h3", "h4", "h5", "h6", "header",
    "hgroup", "hr", "main", "menu", "nav", "ol", "p", "pre", "section", "table", "ul",
];

const MAX_DEPTH: usize = 512;

impl Document {
    pub fn parse(html: &str) -> Document {
        let mut builder = TreeBuilder::new();
        Tokenizer::new(html).run(&mut builder);
        builder.doc
    }

    pub fn root(&self) -> NodeId {
        0
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.len() <= 1
    }

    /// Element name, or None for text and root nodes.
    pub fn name(&self, id: NodeId) -> Option<&str> {
        match &self.nodes[id].kind {
            NodeKind::Element { name, .. } => Some(name),
            _ => None,
        }
    }

    pub fn attr(&self, id: NodeId, key: &str) -> Option<&str> {
        match &self.nodes[id].kind {
            NodeKind::Element { attrs, .. } => attrs
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str()),
            _ => None,
        }
    }

    /// All text in document order, skipping script and style content.
    pub fn text_content(&self) -> String {
        let mut out = String::new();
        let mut stack = vec![self.root()];
        while let Some(id) = stack.pop() {
            match &self.nodes[id].kind {
                NodeKind::Text(t) => {
                    out.push_str(t);
                    out.push(' ');
                }
                NodeKind::Element { name, .. } if name == "script" || name == "style" => {}
                _ => stack.extend(self.nodes[id].children.iter().rev()),
            }
        }
        out
    }
}

struct TreeBuilder {
    doc: Document,
    open: Vec<NodeId>,
}

impl TreeBuilder {
    fn new() -> Self {
        TreeBuilder {
            doc: Document {
                nodes: vec![Node {
                    kind: NodeKind::Root,
                    parent: None,
                    children: Vec::new(),
                }],
            },
            open: vec![0],
        }
    }

    fn current(&self) -> NodeId {
        *self.open.last().expect("root is never popped")
    }

    fn append(&mut self, kind: NodeKind) -> NodeId {
        let parent = self.current();
        let id = self.doc.nodes.len();
        self.doc.nodes.push(Node {
            kind,
            parent: Some(parent),
            children: Vec::new(),
        });
        self.doc.nodes[parent].children.push(id);
        id
    }

    fn text(&mut self, text: String) {
        if text.is_empty() {
            return;
        }
        let cur = self.current();
        if let Some(&last) = self.doc.nodes[cur].children.last() {
            if let NodeKind::Text(t) = &mut self.doc.nodes[last].kind {
                t.push_str(&text);
                return;
            }
        }
        self.append(NodeKind::Text(text));
    }

    fn open_index(&self, name: &str, stop_at: &[&str]) -> Option<usize> {
        for (i, &id) in self.open.iter().enumerate().rev() {
            let n = self.doc.name(id)?;
            if n == name {
                return Some(i);
            }
            if stop_at.contains(&n) {
                return None;
            }
        }
        None
    }

    fn close_to(&mut self, index: usize) {
        self.open.truncate(index.max(1));
    }

    fn start_tag(&mut self, name: String, attrs: Vec<(String, String)>, self_closing: bool) {
        let n = name.as_str();
        if CLOSES_P.contains(&n) {
            if let Some(i) = self.open_index("p", &["button", "table", "td", "th"]) {
                self.close_to(i);
            }
        }
        match n {
            "li" => {
                if let Some(i) = self.open_index("li", &["ul", "ol", "menu"]) {
                    self.close_to(i);
                }
            }
            "dt" | "dd" => {
                let i = self
                    .open_index("dt", &["dl"])
                    .into_iter()
                    .chain(self.open_index("dd", &["dl"]))
                    .max();
                if let Some(i) = i {
                    self.close_to(i);
                }
            }
            "td" | "th" => {
                let i = self
                    .open_index("td", &["tr", "table"])
                    .into_iter()
                    .chain(self.open_index("th", &["tr", "table"]))
                    .max();
                if let Some(i) = i {
                    self.close_to(i);
                }
            }
            "tr" => {
                if let Some(i) = self.open_index("tr", &["table"]) {
                    self.close_to(i);
                }
            }
            "option" => {
                if let Some(i) = self.open_index("option", &["select"]) {
                    self.close_to(i);
                }
            }
            _ => {}
        }
        let is_void = VOID.contains(&n) || self_closing;
        // raw text content must stay inside its element even past the depth cap
        let must_open = RAW_TEXT.contains(&n);
        let id = self.append(NodeKind::Element { name, attrs });
        if !is_void && (self.open.len() < MAX_DEPTH || must_open) {
            self.open.push(id);
        }
    }

    fn end_tag(&mut self, name: &str) {
        if let Some(i) = self.open_index(name, &[]) {
            self.close_to(i);
        }
    }
}

struct Tokenizer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Tokenizer<'a> {
    fn new(src: &'a str) -> Self {
        Tokenizer { src, pos: 0 }
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn run(mut self, tb: &mut TreeBuilder) {
        while self.pos < self.src.len() {
            let rest = self.rest();
            let Some(lt) = rest.find('<') else {
                tb.text(decode(rest));
                break;
            };
            if lt > 0 {
                tb.text(decode(&rest[..lt]));
                self.pos += lt;
            }
            self.markup(tb);
        }
    }

    /// Called with `pos` at a `<`.
    fn markup(&mut self, tb: &mut TreeBuilder) {
        let rest = self.rest();
        let bytes = rest.as_bytes();
        let next = bytes.get(1).copied();
        if rest.starts_with("<!--") {
            self.pos += rest[4..].find("-->").map_or(rest.len(), |i| i + 7);
        } else if next == Some(b'!') || next == Some(b'?') {
            self.pos += rest.find('>').map_or(rest.len(), |i| i + 1);
        } else if next == Some(b'/') {
            match bytes.get(2) {
                Some(c) if c.is_ascii_alphabetic() => {
                    let end = rest.find('>').map_or(rest.len(), |i| i + 1);
                    let name = tag_name(&rest[2..end]);
                    self.pos += end;
                    tb.end_tag(&name);
                }
                // `</>` and `</ junk>` are dropped as bogus comments
                Some(_) => self.pos += rest.find('>').map_or(rest.len(), |i| i + 1),
                None => {
                    tb.text("<".into());
                    self.pos += 1;
                }
            }
        } else if next.is_some_and(|c| c.is_ascii_alphabetic()) {
            self.start_tag(tb);
        } else {
            tb.text("<".into());
            self.pos += 1;
        }
    }

    fn start_tag(&mut self, tb: &mut TreeBuilder) {
        let rest = self.rest();
        let (inner, consumed) = scan_tag(rest);
        let name = tag_name(inner);
        let (attrs, self_closing) = parse_attrs(&inner[name.len().min(inner.len())..]);
        self.pos += consumed;
        let raw = RAW_TEXT.contains(&name.as_str());
        tb.start_tag(name.clone(), attrs, self_closing);
        if raw && !self_closing {
            let body = self.rest();
            let end = find_end_tag(body, &name);
            let content = &body[..end];
            if name == "textarea" || name == "title" {
                tb.text(decode(content));
            } else if !content.is_empty() {
                tb.text(content.to_owned());
            }
            self.pos += end;
            let after = self.rest();
            if !after.is_empty() {
                self.pos += after.find('>').map_or(after.len(), |i| i + 1);
            }
            tb.end_tag(&name);
        }
    }
}

/// Returns the text between `<` and the closing `>`, honoring quoted
/// attribute values, and the number of bytes consumed.
fn scan_tag(s: &str) -> (&str, usize) {
    let bytes = s.as_bytes();
    let mut quote: Option<u8> = None;
    for (i, &b) in bytes.iter().enumerate().skip(1) {
        match quote {
            Some(q) if b == q => quote = None,
            Some(_) => {}
            None if b == b'"' || b == b'\'' => {
                // quotes only open inside attribute values
                if bytes[..i].iter().rev().find(|c| !c.is_ascii_whitespace()) == Some(&b'=') {
                    quote = Some(b);
                }
            }
            None if b == b'>' => return (&s[1..i], i + 1),
            None => {}
        }
    }
    (&s[1..], s.len())
}

fn tag_name(s: &str) -> String {
    s.split(|c: char| c.is_ascii_whitespace() || c == '/' || c == '>')
        .next()
        .unwrap_or("")
        .to_ascii_lowercase()
}

fn parse_attrs(s: &str) -> (Vec<(String, String)>, bool) {
    let mut attrs = Vec::new();
    let mut chars = s.char_indices().peekable();
    let mut self_closing = false;
    while let Some(&(i, c)) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
            continue;
        }
        if c == '/' {
            chars.next();
            self_closing = chars.peek().is_none();
            continue;
        }
        self_closing = false;
        let start = i;
        let mut end = s.len();
        while let Some(&(j, c)) = chars.peek() {
            if c.is_whitespace() || c == '=' || c == '/' {
                end = j;
                break;
            }
            chars.next();
        }
        let key = s[start..end].to_ascii_lowercase();
        while chars.peek().is_some_and(|&(_, c)| c.is_whitespace()) {
            chars.next();
        }
        let mut value = String::new();
        if chars.peek().is_some_and(|&(_, c)| c == '=') {
            chars.next();
            while chars.peek().is_some_and(|&(_, c)| c.is_whitespace()) {
                chars.next();
            }
            match chars.peek().copied() {
                Some((j, q)) if q == '"' || q == '\'' => {
                    chars.next();
                    let vstart = j + 1;
                    let mut vend = s.len();
                    for (k, c) in chars.by_ref() {
                        if c == q {
                            vend = k;
                            break;
                        }
                    }
                    value = decode(&s[vstart..vend]);
                }
                Some((j, _)) => {
                    let mut vend = s.len();
                    while let Some(&(k, c)) = chars.peek() {
                        if c.is_whitespace() {
                            vend = k;
                            break;
                        }
                        chars.next();
                    }
                    value = decode(&s[j..vend]);
                }
                None => {}
            }
        }
        if !key.is_empty() && !attrs.iter().any(|(k, _)| *k == key) {
            attrs.push((key, value));
        }
    }
    (attrs, self_closing)
}

/// Byte offset of `</name` (ASCII case-insensitive), or end of input.
fn find_end_tag(body: &str, name: &str) -> usize {
    let bytes = body.as_bytes();
    let n = name.len();
    let mut from = 0;
    while let Some(i) = body[from..].find("</") {
        let at = from + i;
        let cand = &bytes[at + 2..];
        if cand.len() >= n
            && cand[..n].eq_ignore_ascii_case(name.as_bytes())
            && cand
                .get(n)
                .is_none_or(|c| c.is_ascii_whitespace() || *c == b'>' || *c == b'/')
        {
            return at;
        }
        from = at + 2;
    }
    body.len()
}

fn decode(s: &str) -> String {
    if s.contains('&') {
        html_escape::decode_html_entities(s).into_owned()
    } else {
        s.to_owned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(doc: &Document, id: NodeId) -> Vec<String> {
        doc.node(id)
            .children
            .iter()
            .map(|&c| match &doc.node(c).kind {
                NodeKind::Element { name, .. } => name.clone(),
                NodeKind::Text(t) => format!("#{t}"),
                NodeKind::Root => "root".into(),
            })
            .collect()
    }

    #[test]
    fn implied_paragraph_and_list_ends() {
        let d = Document::parse("<div><p>one<p>two<ul><li>a<li>b</ul></div>");
        let div = d.node(0).children[0];
        assert_eq!(names(&d, div), ["p", "p", "ul"]);
        let ul = d.node(div).children[2];
        assert_eq!(names(&d, ul), ["li", "li"]);
    }

    #[test]
    fn stray_end_tags_and_unclosed_elements() {
        let d = Document::parse("</span>text<b>bold<i>both</b>after");
        assert_eq!(names(&d, 0), ["#text", "b", "#after"]);
    }

    #[test]
    fn raw_text_elements_are_opaque() {
        let d = Document::parse("<script>if (a<b) { x('</p>') }</script><p>ok</p>");
        assert_eq!(names(&d, 0), ["script", "p"]);
        let s = d.node(0).children[0];
        assert_eq!(names(&d, s), ["#if (a<b) { x('</p>') }"]);
        assert!(!d.text_content().contains("if (a"));
    }

    #[test]
    fn attributes_quoted_and_bare() {
        let d = Document::parse(r#"<div class="a b" id=main data-x='1>2' hidden>x</div>"#);
        let div = d.node(0).children[0];
        assert_eq!(d.attr(div, "class"), Some("a b"));
        assert_eq!(d.attr(div, "id"), Some("main"));
        assert_eq!(d.attr(div, "data-x"), Some("1>2"));
        assert_eq!(d.attr(div, "hidden"), Some(""));
        assert_eq!(names(&d, div), ["#x"]);
    }

    #[test]
    fn entities_comments_and_lone_brackets() {
        let d = Document::parse("a &amp; b &lt;c&gt; <!-- hidden --> 3 < 4 <!doctype x>&#x105;");
        assert_eq!(names(&d, 0), ["#a & b <c>  3 < 4 ą"]);
    }

    #[test]
    fn deep_nesting_does_not_overflow() {
        let html = "<div>".repeat(100_000) + "deep";
        let d = Document::parse(&html);
        assert!(d.text_content().contains("deep"));
    }

    #[test]
    fn truncated_markup() {
        let d = Document::parse("<p>text<a href=\"x");
        assert_eq!(d.text_content().trim(), "text");
        let d = Document::parse("x <");
        assert_eq!(d.text_content().trim(), "x <");
    }
}
