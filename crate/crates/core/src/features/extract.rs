//! Body → [`FeatureVector`]. Column definitions live in `docs/features.md`.

use std::sync::OnceLock;

use regex::Regex;

use crate::contentprep::DecodedBody;
use crate::exec::Exec;

use super::entropy::{entropy_of_counts, shannon_entropy, shellcode_probability, string_bytes, ShellcodeParams};
use super::html::{parse_html, HtmlDoc};
use super::js::{parse_js, JsCounts, Tok};
use super::vector::FeatureVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DocKind {
    Html,
    Js,
    Other,
}

pub const HTML_TYPES: &[&str] = &["text/html", "application/xhtml+xml"];

pub const JS_TYPES: &[&str] = &[
    "application/javascript",
    "application/x-javascript",
    "application/ecmascript",
    "application/x-ecmascript",
    "text/javascript",
    "text/ecmascript",
    "text/jscript",
];

/// Media types that say nothing useful and trigger sniffing.
const SNIFFED_TYPES: &[&str] = &["", "application/octet-stream", "text/plain"];

/// Tag names that make a `<`-leading body look like HTML.
const SNIFF_TAGS: &[&str] = &[
    "a", "b", "body", "br", "center", "div", "font", "form", "frameset", "h1", "head", "html", "iframe", "img",
    "link", "meta", "p", "script", "span", "style", "table", "title",
];

pub const LONG_STRING_LEN: usize = 40;

/// Word tokens counted case-insensitively across the whole text, in
/// feature-name order.
pub const TEXT_TOKEN_FEATURES: &[(&str, &str)] = &[
    ("crypt", "crypt"),
    ("evil", "evil"),
    ("embed", "embed"),
    ("Numeval", "eval"),
    ("form", "form"),
    ("frame", "frame"),
    ("iframe", "iframe"),
    ("object", "object"),
    ("script", "script"),
    ("shell", "shell"),
    ("spray", "spray"),
    ("onbeforeload", "onbeforeload"),
    ("onerror", "onerror"),
    ("onload", "onload"),
    ("onunload", "onunload"),
];

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ExtractConfig {
    pub shellcode: ShellcodeParams,
}

fn sniff_html(text: &str) -> bool {
    let t = text.trim_start_matches(|c: char| c.is_whitespace() || c == '\u{feff}');
    let head: String = t.chars().take(64).collect::<String>().to_ascii_lowercase();
    if head.starts_with("<!doctype html") || head.starts_with("<!--") {
        return true;
    }
    let Some(rest) = head.strip_prefix('<') else {
        return false;
    };
    let name: String = rest.chars().take_while(|c| c.is_ascii_alphanumeric()).collect();
    SNIFF_TAGS.contains(&name.as_str())
}

fn sniff_js(bytes: &[u8], text: &str) -> bool {
    if bytes.contains(&0) || text.trim().is_empty() {
        return false;
    }
    let ast = parse_js(text);
    ast.parse_ok && ast.tokens.iter().any(|t| matches!(t.tok, Tok::Punct("(" | "=" | ";" | "{")))
}

/// Declared HTML/JS types win; uninformative types are sniffed.
pub fn doc_kind(declared: &str, bytes: &[u8], text: &str) -> DocKind {
    if HTML_TYPES.contains(&declared) {
        DocKind::Html
    } else if JS_TYPES.contains(&declared) {
        DocKind::Js
    } else if SNIFFED_TYPES.contains(&declared) {
        if sniff_html(text) {
            DocKind::Html
        } else if sniff_js(bytes, text) {
            DocKind::Js
        } else {
            DocKind::Other
        }
    } else {
        DocKind::Other
    }
}

fn is_word_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_' || b == b'$'
}

/// Case-insensitive whole-token counts for [`TEXT_TOKEN_FEATURES`].
pub fn text_token_counts(bytes: &[u8]) -> [usize; 15] {
    let mut out = [0usize; 15];
    let mut i = 0;
    while i < bytes.len() {
        if !is_word_byte(bytes[i]) {
            i += 1;
            continue;
        }
        let start = i;
        while i < bytes.len() && is_word_byte(bytes[i]) {
            i += 1;
        }
        let word = &bytes[start..i];
        if word.len() <= 12 {
            for (k, (_, kw)) in TEXT_TOKEN_FEATURES.iter().enumerate() {
                if word.eq_ignore_ascii_case(kw.as_bytes()) {
                    out[k] += 1;
                }
            }
        }
    }
    out
}

fn ip_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b[0-9]{1,3}\.[0-9]{1,3}\.[0-9]{1,3}\.[0-9]{1,3}\b").expect("valid"))
}

/// Non-overlapping dotted quads with every octet at most 255.
pub fn count_ip_addresses(text: &str) -> usize {
    ip_regex()
        .find_iter(text)
        .filter(|m| m.as_str().split('.').all(|o| o.parse::<u16>().is_ok_and(|v| v <= 255)))
        .count()
}

pub fn count_words(bytes: &[u8]) -> usize {
    bytes.split(|b| b.is_ascii_whitespace()).filter(|w| !w.is_empty()).count()
}

/// `(Filesize - newlines) / (newlines + 1)`.
pub fn avg_line_size(bytes: &[u8]) -> f64 {
    let newlines = bytes.iter().filter(|&&b| b == b'\n').count();
    (bytes.len() - newlines) as f64 / (newlines + 1) as f64
}

pub fn extract_features(decoded: &DecodedBody) -> FeatureVector {
    extract_with(&decoded.bytes, &decoded.declared_type, &ExtractConfig::default())
}

pub fn extract_with(bytes: &[u8], declared_type: &str, cfg: &ExtractConfig) -> FeatureVector {
    let text = String::from_utf8_lossy(bytes);
    let kind = doc_kind(declared_type, bytes, &text);

    let html: Option<HtmlDoc> = (kind == DocKind::Html).then(|| parse_html(&text));
    let units: Vec<String> = match (&html, kind) {
        (Some(doc), _) => doc.script_blocks.iter().map(|b| b.code.clone()).collect(),
        (None, DocKind::Js) => vec![text.to_string()],
        _ => Vec::new(),
    };

    let mut js = JsCounts::default();
    let mut strings: Vec<Vec<u16>> = Vec::new();
    let mut parse_error = false;
    let mut e4x = false;
    for code in &units {
        let ast = parse_js(code);
        js.add(ast.counts());
        parse_error |= !ast.parse_ok;
        e4x |= ast.e4x;
        strings.extend(ast.strings);
    }

    let mut v = FeatureVector::default();
    let flag = |b: bool| if b { 1.0 } else { 0.0 };

    let total_entropy = shannon_entropy(bytes);
    v.set("Filesize", bytes.len() as f64);
    v.set("NumWords", count_words(bytes) as f64);
    v.set("TotalEntropy", total_entropy);
    v.set("EntropyDensity", total_entropy / 8.0);
    v.set("AvgLinesize", avg_line_size(bytes));
    v.set("IP_address", count_ip_addresses(&text) as f64);
    for ((name, _), n) in TEXT_TOKEN_FEATURES.iter().zip(text_token_counts(bytes)) {
        v.set(name, n as f64);
    }

    v.set("ishtml", flag(kind == DocKind::Html));
    v.set("isjs", flag(kind == DocKind::Js && !parse_error && !e4x));
    v.set("isjse4x", flag(kind == DocKind::Js && e4x));
    v.set("ishtmlwithjs", flag(kind == DocKind::Html && !units.is_empty() && !e4x));
    v.set("ishtmlwithjse4x", flag(kind == DocKind::Html && e4x));
    v.set("parsingerror", flag(parse_error));

    if let Some(doc) = &html {
        v.set("containsjstags", doc.script_tag_count as f64);
        v.set("NumHTMLNodes", doc.node_count as f64);
        v.set("scriptTagDataURLCount", doc.data_url_script_count as f64);
        v.set("htmlEventCount", doc.event_count() as f64);
    }

    // string literal statistics
    let lens: Vec<usize> = strings.iter().map(Vec::len).collect();
    let total_len: usize = lens.iter().sum();
    v.set("NumStrings", strings.len() as f64);
    v.set("NumLongStrings", lens.iter().filter(|&&l| l >= LONG_STRING_LEN).count() as f64);
    v.set("MaxStrLen", lens.iter().copied().max().unwrap_or(0) as f64);
    v.set("TotalStringLength", total_len as f64);
    v.set("AvgStringLength", if strings.is_empty() { 0.0 } else { total_len as f64 / strings.len() as f64 });
    let mut all_counts = [0u64; 256];
    let mut all_total = 0u64;
    let mut max_entropy = 0.0f64;
    for s in &strings {
        let b = string_bytes(s);
        max_entropy = max_entropy.max(shannon_entropy(&b));
        for &x in &b {
            all_counts[x as usize] += 1;
        }
        all_total += b.len() as u64;
    }
    v.set("MaxStringEntropy", max_entropy);
    v.set("TotalStringEntropy", entropy_of_counts(&all_counts, all_total));
    v.set("ShellcodeProbability", shellcode_probability(&strings, &cfg.shellcode));
    v.set(
        "NumiframeString",
        strings.iter().filter(|s| String::from_utf16_lossy(s).to_ascii_lowercase().contains("iframe")).count() as f64,
    );

    // AST counts
    v.set("NumNodes", js.nodes as f64);
    v.set("NumKeywords", js.keywords as f64);
    v.set("NumFunctionCalls", js.function_calls as f64);
    v.set("NumBracketCalls", js.bracket_calls as f64);
    v.set("NumBracketLookups", js.bracket_lookups as f64);
    v.set("NumReassignmentOfSpecialObject", js.special_reassignments as f64);
    v.set("NumPackerFunctions", js.packer_functions as f64);
    v.set("NumLongVarOrFunNames", js.long_names.len() as f64);
    for (feature, call) in [
        ("NumclearAttributes", "clearAttributes"),
        ("NumActiveXObject", "ActiveXObject"),
        ("NumfireEvent", "fireEvent"),
        ("NumreplaceNode", "replaceNode"),
        ("NumattachEvent", "attachEvent"),
        ("NuminsertAdjacentElement", "insertAdjacentElement"),
        ("NumaddEventListener", "addEventListener"),
        ("NumsetInterval", "setInterval"),
        ("NumsetTimeout", "setTimeout"),
        ("NumdispatchEvent", "dispatchEvent"),
    ] {
        v.set(feature, js.tracked(call) as f64);
    }
    v
}

/// Extracts a batch, in input order.
pub fn extract_batch(bodies: &[DecodedBody], exec: Exec) -> Vec<FeatureVector> {
    exec.map(bodies, extract_features)
}

/// Derived report metric: total string length over file size.
pub fn strings_to_script_ratio(v: &FeatureVector) -> f64 {
    let size = v.get("Filesize");
    if size == 0.0 {
        0.0
    } else {
        v.get("TotalStringLength") / size
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fx(body: &str) -> FeatureVector {
        extract_with(body.as_bytes(), "", &ExtractConfig::default())
    }

    #[test]
    fn html_with_eval() {
        let v = fx("<html><script>eval(\"x\")</script></html>");
        assert_eq!(v.get("ishtml"), 1.0);
        assert_eq!(v.get("ishtmlwithjs"), 1.0);
        assert_eq!(v.get("containsjstags"), 1.0);
        assert_eq!(v.get("Numeval"), 1.0);
        assert_eq!(v.get("script"), 2.0);
        assert_eq!(v.get("NumFunctionCalls"), 1.0);
        v.check_bounds().unwrap();
    }

    #[test]
    fn long_string() {
        let s = "q".repeat(45);
        let v = extract_with(format!("var s = '{s}';").as_bytes(), "application/javascript", &ExtractConfig::default());
        assert_eq!(v.get("isjs"), 1.0);
        assert_eq!(v.get("NumLongStrings"), 1.0);
        assert_eq!(v.get("MaxStrLen"), 45.0);
    }

    #[test]
    fn empty_body() {
        let v = fx("");
        assert_eq!(v.get("Filesize"), 0.0);
        assert_eq!(v.get("TotalEntropy"), 0.0);
        assert_eq!(v.get("ishtml"), 0.0);
        assert!(v.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn malformed_js_sets_parsingerror() {
        let v = fx("<html><script>function(</script></html>");
        assert_eq!(v.get("parsingerror"), 1.0);
        assert_eq!(v.get("ishtmlwithjs"), 1.0);
    }

    #[test]
    fn appending_iframe_adds_one() {
        let base = "<html><body><p>hello</p></body></html>";
        let a = fx(base);
        let b = fx(&format!("{base}<iframe>"));
        assert_eq!(b.get("iframe"), a.get("iframe") + 1.0);
    }

    #[test]
    fn ip_patterns() {
        assert_eq!(count_ip_addresses("a 10.0.0.1 b 256.1.1.1 c 1.2.3.4.5 d 192.168.1.255"), 3);
        assert_eq!(count_ip_addresses("v1.2.3.4"), 0);
    }

    #[test]
    fn declared_type_overrides_sniffing() {
        let v = extract_with(b"<html></html>", "image/png", &ExtractConfig::default());
        assert_eq!(v.get("ishtml"), 0.0);
        let v = extract_with(b"alert(1)", "text/html", &ExtractConfig::default());
        assert_eq!(v.get("ishtml"), 1.0);
        assert_eq!(v.get("isjs"), 0.0);
    }

    #[test]
    fn e4x_documents() {
        let v = extract_with(b"var x = <a>b</a>;", "application/javascript", &ExtractConfig::default());
        assert_eq!((v.get("isjs"), v.get("isjse4x")), (0.0, 1.0));
        let v = fx("<html><script>var x = <a>b</a>;</script></html>");
        assert_eq!((v.get("ishtmlwithjs"), v.get("ishtmlwithjse4x")), (0.0, 1.0));
    }
}
