//! Tolerant HTML tree builder.
//!
//! Never fails. The tree always has `html`, `head` and `body` (implied when
//! absent); explicit tags for those three merge into the implied nodes.
//! Unknown tags are kept, void elements never get children, unmatched end
//! tags are dropped, and anything left open at EOF is closed. `script`,
//! `style`, `textarea` and `title` hold raw text up to their end tag.

use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Element {
    pub name: String,
    pub attrs: Vec<(String, String)>,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Raw text content for raw-text elements.
    pub text: String,
    /// True when the element came from a tag in the source.
    pub explicit: bool,
}

impl Element {
    pub fn attr(&self, name: &str) -> Option<&str> {
        self.attrs.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_str())
    }

    pub fn has_attr(&self, name: &str) -> bool {
        self.attrs.iter().any(|(k, _)| k == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScriptSource {
    Inline,
    DataUrl,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptBlock {
    pub source: ScriptSource,
    pub code: String,
    /// Index of the `script` element.
    pub element: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HtmlDoc {
    /// Elements in document (creation) order; index 0 is `html`.
    pub elements: Vec<Element>,
    pub script_blocks: Vec<ScriptBlock>,
    /// `on*` attribute name → occurrences.
    pub event_attributes: BTreeMap<String, usize>,
    pub form_count: usize,
    pub iframe_count: usize,
    pub script_tag_count: usize,
    pub data_url_script_count: usize,
    pub node_count: usize,
}

impl HtmlDoc {
    pub fn root(&self) -> &Element {
        &self.elements[0]
    }

    pub fn by_name<'a>(&'a self, name: &'a str) -> impl Iterator<Item = (usize, &'a Element)> + 'a {
        self.elements.iter().enumerate().filter(move |(_, e)| e.name == name)
    }

    /// Nearest ancestor (or self) with the given name.
    pub fn ancestor(&self, mut idx: usize, name: &str) -> Option<usize> {
        loop {
            if self.elements[idx].name == name {
                return Some(idx);
            }
            idx = self.elements[idx].parent?;
        }
    }

    /// Descendants in document order.
    pub fn descendants(&self, idx: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack: Vec<usize> = self.elements[idx].children.iter().rev().copied().collect();
        while let Some(i) = stack.pop() {
            out.push(i);
            stack.extend(self.elements[i].children.iter().rev());
        }
        out
    }

    /// Element indices in tree (pre-order) order.
    pub fn document_order(&self) -> Vec<usize> {
        let mut v = vec![0];
        v.extend(self.descendants(0));
        v
    }

    pub fn event_count(&self) -> usize {
        self.event_attributes.values().sum()
    }
}

pub const VOID_ELEMENTS: &[&str] = &[
    "area", "base", "br", "col", "embed", "hr", "img", "input", "keygen", "link", "meta", "param", "source",
    "track", "wbr",
];

const RAW_TEXT: &[&str] = &["script", "style", "textarea", "title"];

const HEAD_CONTENT: &[&str] = &["base", "link", "meta", "noscript", "script", "style", "title"];

/// Start tags that close an open `p`.
const CLOSES_P: &[&str] = &[
    "address", "article", "aside", "blockquote", "div", "dl", "fieldset", "footer", "form", "h1", "h2", "h3",
    "h4", "h5", "h6", "header", "hr", "menu", "nav", "ol", "p", "pre", "section", "table", "ul",
];

fn is_js_type(t: &str) -> bool {
    let t = t.trim().to_ascii_lowercase();
    t.is_empty() || t == "module" || t.contains("javascript") || t.contains("ecmascript") || t.contains("jscript")
}

/// Decodes the character references that matter for attribute values.
pub fn decode_entities(s: &str) -> String {
    if !s.contains('&') {
        return s.to_string();
    }
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(pos) = rest.find('&') {
        out.push_str(&rest[..pos]);
        rest = &rest[pos..];
        let end = rest[1..].find(|c: char| !(c.is_ascii_alphanumeric() || c == '#')).map(|e| e + 1).unwrap_or(rest.len());
        let name = &rest[1..end];
        let decoded = match name {
            "amp" => Some('&'),
            "lt" => Some('<'),
            "gt" => Some('>'),
            "quot" => Some('"'),
            "apos" => Some('\''),
            "nbsp" => Some('\u{a0}'),
            _ if name.starts_with("#x") || name.starts_with("#X") => {
                u32::from_str_radix(&name[2..], 16).ok().and_then(char::from_u32)
            }
            _ if name.starts_with('#') => name[1..].parse::<u32>().ok().and_then(char::from_u32),
            _ => None,
        };
        match decoded {
            Some(c) => {
                out.push(c);
                rest = &rest[end..];
                if rest.starts_with(';') {
                    rest = &rest[1..];
                }
            }
            None => {
                out.push('&');
                rest = &rest[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

enum Token {
    Start { name: String, attrs: Vec<(String, String)>, self_closing: bool },
    End { name: String },
    Text(String),
}

struct Tokenizer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Tokenizer<'a> {
    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    /// Raw text up to `</name`, consuming the end tag.
    fn raw_text(&mut self, name: &str) -> String {
        let lower = self.rest().to_ascii_lowercase();
        let close = format!("</{name}");
        let mut search = 0;
        loop {
            match lower[search..].find(&close) {
                Some(i) => {
                    let at = search + i;
                    let after = lower.as_bytes().get(at + close.len()).copied();
                    if matches!(after, None | Some(b'>' | b'/' | b' ' | b'\t' | b'\n' | b'\r' | b'\x0c')) {
                        let text = self.rest()[..at].to_string();
                        self.pos += at;
                        // consume through '>'
                        match self.rest().find('>') {
                            Some(g) => self.pos += g + 1,
                            None => self.pos = self.src.len(),
                        }
                        return text;
                    }
                    search = at + close.len();
                }
                None => {
                    let text = self.rest().to_string();
                    self.pos = self.src.len();
                    return text;
                }
            }
        }
    }

    fn skip_past(&mut self, pat: &str) {
        match self.rest().find(pat) {
            Some(i) => self.pos += i + pat.len(),
            None => self.pos = self.src.len(),
        }
    }

    fn next(&mut self) -> Option<Token> {
        loop {
            if self.pos >= self.src.len() {
                return None;
            }
            let rest = self.rest();
            if !rest.starts_with('<') {
                let end = rest.find('<').unwrap_or(rest.len());
                let end = if end == 0 { 1 } else { end };
                self.pos += end;
                return Some(Token::Text(rest[..end].to_string()));
            }
            if rest.starts_with("<!--") {
                self.pos += 4;
                self.skip_past("-->");
                continue;
            }
            if rest.starts_with("<!") || rest.starts_with("<?") {
                self.skip_past(">");
                continue;
            }
            let bytes = rest.as_bytes();
            if rest.starts_with("</") {
                if bytes.get(2).is_some_and(u8::is_ascii_alphabetic) {
                    self.pos += 2;
                    let name = self.tag_name();
                    self.skip_past(">");
                    return Some(Token::End { name });
                }
                // "</>" or "</ 3": bogus comment
                self.skip_past(">");
                continue;
            }
            if bytes.get(1).is_some_and(u8::is_ascii_alphabetic) {
                self.pos += 1;
                let name = self.tag_name();
                let (attrs, self_closing) = self.attributes();
                return Some(Token::Start { name, attrs, self_closing });
            }
            self.pos += 1;
            return Some(Token::Text("<".to_string()));
        }
    }

    fn tag_name(&mut self) -> String {
        let rest = self.rest();
        let end = rest
            .find(|c: char| c.is_ascii_whitespace() || c == '/' || c == '>')
            .unwrap_or(rest.len());
        self.pos += end;
        rest[..end].to_ascii_lowercase()
    }

    fn skip_ws(&mut self) {
        let rest = self.rest();
        let n = rest.len() - rest.trim_start_matches(|c: char| c.is_ascii_whitespace()).len();
        self.pos += n;
    }

    fn attributes(&mut self) -> (Vec<(String, String)>, bool) {
        let mut attrs: Vec<(String, String)> = Vec::new();
        loop {
            self.skip_ws();
            let rest = self.rest();
            if rest.is_empty() {
                return (attrs, false);
            }
            if rest.starts_with('>') {
                self.pos += 1;
                return (attrs, false);
            }
            if rest.starts_with("/>") {
                self.pos += 2;
                return (attrs, true);
            }
            if rest.starts_with('/') {
                self.pos += 1;
                continue;
            }
            let end = rest
                .char_indices()
                .skip(1)
                .find(|&(_, c)| c.is_ascii_whitespace() || c == '/' || c == '>' || c == '=')
                .map(|(i, _)| i)
                .unwrap_or(rest.len());
            let name = rest[..end].to_ascii_lowercase();
            self.pos += end;
            self.skip_ws();
            let mut value = String::new();
            if self.rest().starts_with('=') {
                self.pos += 1;
                self.skip_ws();
                let rest = self.rest();
                if let Some(q) = rest.chars().next().filter(|c| *c == '"' || *c == '\'') {
                    let close = rest[1..].find(q).map(|i| i + 1).unwrap_or(rest.len());
                    value = decode_entities(&rest[1..close]);
                    self.pos += (close + 1).min(rest.len());
                } else {
                    let end = rest.find(|c: char| c.is_ascii_whitespace() || c == '>').unwrap_or(rest.len());
                    value = decode_entities(&rest[..end]);
                    self.pos += end;
                }
            }
            // first occurrence wins, as in browsers
            if !attrs.iter().any(|(k, _)| *k == name) {
                attrs.push((name, value));
            }
        }
    }
}

struct Builder {
    elements: Vec<Element>,
    stack: Vec<usize>,
    head: usize,
    body: Option<usize>,
    head_closed: bool,
}

impl Builder {
    fn new() -> Self {
        let mut b = Builder { elements: Vec::new(), stack: Vec::new(), head: 0, body: None, head_closed: false };
        b.add("html", Vec::new(), None, false);
        b.head = b.add("head", Vec::new(), Some(0), false);
        b.stack = vec![0];
        b
    }

    fn add(&mut self, name: &str, attrs: Vec<(String, String)>, parent: Option<usize>, explicit: bool) -> usize {
        let idx = self.elements.len();
        self.elements.push(Element { name: name.to_string(), attrs, parent, children: Vec::new(), text: String::new(), explicit });
        if let Some(p) = parent {
            self.elements[p].children.push(idx);
        }
        idx
    }

    fn merge_attrs(&mut self, idx: usize, attrs: Vec<(String, String)>) {
        let el = &mut self.elements[idx];
        el.explicit = true;
        for (k, v) in attrs {
            if !el.has_attr(&k) {
                el.attrs.push((k, v));
            }
        }
    }

    fn ensure_body(&mut self) -> usize {
        if let Some(b) = self.body {
            return b;
        }
        self.head_closed = true;
        let b = self.add("body", Vec::new(), Some(0), false);
        self.body = Some(b);
        self.stack = vec![0, b];
        b
    }

    fn current(&self) -> usize {
        *self.stack.last().expect("html stays on the stack")
    }

    fn open_index(&self, name: &str) -> Option<usize> {
        self.stack.iter().rposition(|&i| self.elements[i].name == name)
    }

    fn close(&mut self, name: &str) {
        if let Some(pos) = self.open_index(name) {
            if pos > 0 {
                self.stack.truncate(pos);
            }
        }
    }

    /// Returns the new element, or `None` when the tag merged or was ignored.
    fn start(&mut self, name: &str, attrs: Vec<(String, String)>, self_closing: bool) -> Option<usize> {
        match name {
            "html" => {
                self.merge_attrs(0, attrs);
                return None;
            }
            "head" => {
                if !self.head_closed {
                    self.merge_attrs(self.head, attrs);
                    self.stack = vec![0, self.head];
                }
                return None;
            }
            "body" => {
                let b = self.ensure_body();
                self.merge_attrs(b, attrs);
                return None;
            }
            _ => {}
        }
        let parent = if self.body.is_none() && HEAD_CONTENT.contains(&name) && !self.head_closed {
            self.head
        } else {
            self.ensure_body();
            if CLOSES_P.contains(&name) {
                self.close_in_scope("p");
            }
            match name {
                "li" => self.close_in_scope("li"),
                "option" => self.close_in_scope("option"),
                "td" | "th" => {
                    self.close_in_scope("td");
                    self.close_in_scope("th");
                }
                "tr" => self.close_in_scope("tr"),
                // forms do not nest
                "form" if self.open_index("form").is_some() => return None,
                _ => {}
            }
            self.current()
        };
        let idx = self.add(name, attrs, Some(parent), true);
        if !VOID_ELEMENTS.contains(&name) && !self_closing && !RAW_TEXT.contains(&name) {
            if parent == self.head {
                self.stack = vec![0, self.head, idx];
            } else {
                self.stack.push(idx);
            }
        }
        Some(idx)
    }

    /// Closes `name` if open above the nearest `body`.
    fn close_in_scope(&mut self, name: &str) {
        if let Some(pos) = self.open_index(name) {
            if pos >= 2 {
                self.stack.truncate(pos);
            }
        }
    }

    fn end(&mut self, name: &str) {
        match name {
            "html" | "body" => {}
            "head" => {
                if self.stack.get(1) == Some(&self.head) {
                    self.stack.truncate(1);
                }
                self.head_closed = true;
            }
            _ => self.close(name),
        }
    }
}

pub fn parse_html(text: &str) -> HtmlDoc {
    let mut tok = Tokenizer { src: text, pos: 0 };
    let mut b = Builder::new();
    let mut script_blocks = Vec::new();
    while let Some(t) = tok.next() {
        match t {
            Token::Text(s) => {
                if b.body.is_none() && !s.trim().is_empty() {
                    let cur = b.current();
                    if cur == 0 || cur == b.head {
                        b.ensure_body();
                    }
                }
            }
            Token::End { name } => b.end(&name),
            Token::Start { name, attrs, self_closing } => {
                let raw = RAW_TEXT.contains(&name.as_str());
                let idx = b.start(&name, attrs, self_closing);
                if raw && !self_closing {
                    let content = tok.raw_text(&name);
                    if let Some(i) = idx {
                        b.elements[i].text = content;
                    }
                }
                if let (Some(i), "script") = (idx, name.as_str()) {
                    let el = &b.elements[i];
                    if !is_js_type(el.attr("type").unwrap_or("")) {
                        continue;
                    }
                    match el.attr("src") {
                        Some(src) if src.trim().len() >= 5 && src.trim()[..5].eq_ignore_ascii_case("data:") => {
                            let code = decode_data_url(src.trim()).unwrap_or_default();
                            script_blocks.push(ScriptBlock { source: ScriptSource::DataUrl, code, element: i });
                        }
                        Some(_) => {}
                        None => script_blocks.push(ScriptBlock {
                            source: ScriptSource::Inline,
                            code: el.text.clone(),
                            element: i,
                        }),
                    }
                }
            }
        }
    }
    b.ensure_body();

    let elements = b.elements;
    let mut event_attributes = BTreeMap::new();
    for e in &elements {
        for (k, _) in &e.attrs {
            if k.len() > 2 && k.starts_with("on") {
                *event_attributes.entry(k.clone()).or_insert(0) += 1;
            }
        }
    }
    let count = |n: &str| elements.iter().filter(|e| e.name == n).count();
    let data_url_script_count = elements
        .iter()
        .filter(|e| e.name == "script")
        .filter(|e| e.attr("src").is_some_and(|s| s.trim().to_ascii_lowercase().starts_with("data:")))
        .count();
    HtmlDoc {
        form_count: count("form"),
        iframe_count: count("iframe"),
        script_tag_count: count("script"),
        data_url_script_count,
        node_count: elements.len(),
        event_attributes,
        script_blocks,
        elements,
    }
}

/// Payload of a `data:` URL as text.
pub fn decode_data_url(url: &str) -> Option<String> {
    use base64::Engine;
    let rest = url.get(5..)?;
    let (meta, data) = rest.split_once(',')?;
    let bytes = if meta.to_ascii_lowercase().ends_with(";base64") {
        let cleaned: String = data.chars().filter(|c| !c.is_ascii_whitespace()).collect();
        base64::engine::general_purpose::STANDARD
            .decode(cleaned.trim_end_matches('='))
            .or_else(|_| base64::engine::general_purpose::STANDARD_NO_PAD.decode(cleaned.trim_end_matches('=')))
            .ok()?
    } else {
        percent_decode(data)
    };
    Some(String::from_utf8_lossy(&bytes).into_owned())
}

fn percent_decode(s: &str) -> Vec<u8> {
    let b = s.as_bytes();
    let mut out = Vec::with_capacity(b.len());
    let mut i = 0;
    while i < b.len() {
        if b[i] == b'%' && i + 2 < b.len() {
            let h = (b[i + 1] as char).to_digit(16);
            let l = (b[i + 2] as char).to_digit(16);
            if let (Some(h), Some(l)) = (h, l) {
                out.push((h * 16 + l) as u8);
                i += 3;
                continue;
            }
        }
        out.push(b[i]);
        i += 1;
    }
    out
}
