//! JavaScript tokenizer. Total: every input produces a token stream.

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    Num(f64),
    /// Cooked UTF-16 code units.
    Str(Vec<u16>),
    /// Template literal text (substitutions left in place).
    Template(Vec<u16>),
    Regex(String),
    /// E4X XML literal.
    Xml(String),
    Punct(&'static str),
    /// A character no JS token starts with.
    Unknown(char),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub start: usize,
    /// A line terminator separates this token from the previous one.
    pub nl_before: bool,
}

pub const KEYWORDS: &[&str] = &[
    "await", "break", "case", "catch", "class", "const", "continue", "debugger", "default", "delete", "do",
    "else", "enum", "export", "extends", "false", "finally", "for", "function", "if", "implements", "import",
    "in", "instanceof", "interface", "let", "new", "null", "package", "private", "protected", "public",
    "return", "static", "super", "switch", "this", "throw", "true", "try", "typeof", "var", "void", "while",
    "with", "yield",
];

pub fn is_keyword(s: &str) -> bool {
    KEYWORDS.binary_search(&s).is_ok()
}

const PUNCTS: &[&str] = &[
    ">>>=", "...", "===", "!==", "**=", "<<=", ">>=", ">>>", "&&=", "||=", "??=", "=>", "==", "!=", "<=", ">=",
    "&&", "||", "??", "?.", "++", "--", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "**", "<<", ">>", "{",
    "}", "(", ")", "[", "]", ";", ",", "<", ">", "+", "-", "*", "/", "%", "&", "|", "^", "!", "~", "?", ":",
    "=", ".", "@", "#",
];

/// Keywords after which `/` starts a regex and `<` an XML literal.
const OPERAND_KEYWORDS: &[&str] = &[
    "return", "typeof", "instanceof", "in", "of", "new", "delete", "void", "throw", "case", "do", "else",
    "yield", "await",
];

fn is_id_start(c: char) -> bool {
    c == '_' || c == '$' || c.is_alphabetic()
}

fn is_id_part(c: char) -> bool {
    c == '_' || c == '$' || c.is_alphanumeric() || c == '\u{200c}' || c == '\u{200d}'
}

pub struct Lexed {
    pub tokens: Vec<Token>,
    pub e4x: bool,
}

pub fn tokenize(src: &str) -> Lexed {
    let mut lx = Lexer { src, chars: src.char_indices().collect(), i: 0, tokens: Vec::new(), e4x: false };
    lx.run();
    Lexed { tokens: lx.tokens, e4x: lx.e4x }
}

struct Lexer<'a> {
    src: &'a str,
    chars: Vec<(usize, char)>,
    i: usize,
    tokens: Vec<Token>,
    e4x: bool,
}

impl<'a> Lexer<'a> {
    fn peek(&self, k: usize) -> Option<char> {
        self.chars.get(self.i + k).map(|&(_, c)| c)
    }

    fn offset(&self) -> usize {
        self.chars.get(self.i).map_or(self.src.len(), |&(o, _)| o)
    }

    fn operand_expected(&self) -> bool {
        match self.tokens.last().map(|t| &t.tok) {
            None => true,
            Some(Tok::Punct(p)) => !matches!(*p, ")" | "]" | "}" | "++" | "--"),
            Some(Tok::Ident(name)) => OPERAND_KEYWORDS.contains(&name.as_str()),
            Some(Tok::Unknown(_)) => true,
            _ => false,
        }
    }

    fn line_start_only_ws(&self) -> bool {
        let off = self.offset();
        let line_start = self.src[..off].rfind(['\n', '\r', '\u{2028}', '\u{2029}']).map_or(0, |p| p + 1);
        self.src[line_start..off].chars().all(char::is_whitespace)
    }

    fn skip_line(&mut self) {
        while let Some(c) = self.peek(0) {
            if matches!(c, '\n' | '\r' | '\u{2028}' | '\u{2029}') {
                break;
            }
            self.i += 1;
        }
    }

    fn run(&mut self) {
        let mut nl = false;
        while let Some(c) = self.peek(0) {
            if matches!(c, '\n' | '\r' | '\u{2028}' | '\u{2029}') {
                nl = true;
                self.i += 1;
                continue;
            }
            if c.is_whitespace() || c == '\u{feff}' {
                self.i += 1;
                continue;
            }
            if c == '/' && self.peek(1) == Some('/') {
                self.skip_line();
                continue;
            }
            if c == '/' && self.peek(1) == Some('*') {
                self.i += 2;
                loop {
                    match self.peek(0) {
                        None => break,
                        Some('*') if self.peek(1) == Some('/') => {
                            self.i += 2;
                            break;
                        }
                        Some(ch) => {
                            if matches!(ch, '\n' | '\r' | '\u{2028}' | '\u{2029}') {
                                nl = true;
                            }
                            self.i += 1;
                        }
                    }
                }
                continue;
            }
            // legacy HTML-like comments inside script blocks
            if c == '<' && self.peek(1) == Some('!') && self.peek(2) == Some('-') && self.peek(3) == Some('-') {
                self.skip_line();
                continue;
            }
            if c == '-' && self.peek(1) == Some('-') && self.peek(2) == Some('>') && (nl || self.tokens.is_empty()) && self.line_start_only_ws() {
                self.skip_line();
                continue;
            }
            let start = self.offset();
            let tok = self.token(c);
            self.tokens.push(Token { tok, start, nl_before: nl });
            nl = false;
        }
    }

    fn token(&mut self, c: char) -> Tok {
        if is_id_start(c) {
            let s = self.i;
            while self.peek(0).is_some_and(is_id_part) {
                self.i += 1;
            }
            return Tok::Ident(self.chars[s..self.i].iter().map(|&(_, c)| c).collect());
        }
        if c.is_ascii_digit() || (c == '.' && self.peek(1).is_some_and(|d| d.is_ascii_digit())) {
            return self.number();
        }
        if c == '"' || c == '\'' {
            return Tok::Str(self.string(c));
        }
        if c == '`' {
            return Tok::Template(self.template());
        }
        if c == '/' && self.operand_expected() {
            return self.regex();
        }
        if c == '<' && self.operand_expected() && self.peek(1).is_some_and(|d| d.is_ascii_alphabetic()) {
            self.e4x = true;
            return self.xml();
        }
        let rest = &self.src[self.offset()..];
        for p in PUNCTS {
            if rest.starts_with(p) {
                self.i += p.chars().count();
                return Tok::Punct(p);
            }
        }
        self.i += 1;
        Tok::Unknown(c)
    }

    fn number(&mut self) -> Tok {
        let s = self.offset();
        let radix = match (self.peek(0), self.peek(1).map(|c| c.to_ascii_lowercase())) {
            (Some('0'), Some('x')) => 16,
            (Some('0'), Some('o')) => 8,
            (Some('0'), Some('b')) => 2,
            _ => 10,
        };
        if radix != 10 {
            self.i += 2;
            let ds = self.offset();
            while self.peek(0).is_some_and(|c| c.is_digit(radix) || c == '_') {
                self.i += 1;
            }
            let digits: String = self.src[ds..self.offset()].chars().filter(|&c| c != '_').collect();
            if self.peek(0) == Some('n') {
                self.i += 1;
            }
            return Tok::Num(u64::from_str_radix(&digits, radix).map_or(f64::NAN, |v| v as f64));
        }
        while self.peek(0).is_some_and(|c| c.is_ascii_digit() || c == '_') {
            self.i += 1;
        }
        if self.peek(0) == Some('.') {
            self.i += 1;
            while self.peek(0).is_some_and(|c| c.is_ascii_digit() || c == '_') {
                self.i += 1;
            }
        }
        if matches!(self.peek(0), Some('e' | 'E'))
            && (self.peek(1).is_some_and(|c| c.is_ascii_digit())
                || (matches!(self.peek(1), Some('+' | '-')) && self.peek(2).is_some_and(|c| c.is_ascii_digit())))
        {
            self.i += 2;
            while self.peek(0).is_some_and(|c| c.is_ascii_digit()) {
                self.i += 1;
            }
        }
        let text: String = self.src[s..self.offset()].chars().filter(|&c| c != '_').collect();
        if self.peek(0) == Some('n') {
            self.i += 1;
        }
        Tok::Num(text.parse().unwrap_or(f64::NAN))
    }

    fn hex_digits(&self, from: usize, n: usize) -> Option<u32> {
        let mut v = 0u32;
        for k in 0..n {
            v = v * 16 + self.peek(from + k)?.to_digit(16)?;
        }
        Some(v)
    }

    /// Handles the character after a backslash; returns code units.
    fn escape(&mut self, out: &mut Vec<u16>) {
        let Some(c) = self.peek(0) else {
            return;
        };
        self.i += 1;
        let unit = |c: char, out: &mut Vec<u16>| {
            let mut buf = [0u16; 2];
            out.extend_from_slice(c.encode_utf16(&mut buf));
        };
        match c {
            'n' => out.push(0x0a),
            't' => out.push(0x09),
            'r' => out.push(0x0d),
            'b' => out.push(0x08),
            'f' => out.push(0x0c),
            'v' => out.push(0x0b),
            '0' if !self.peek(0).is_some_and(|d| d.is_ascii_digit()) => out.push(0),
            'x' => match self.hex_digits(0, 2) {
                Some(v) => {
                    self.i += 2;
                    out.push(v as u16);
                }
                None => out.push('x' as u16),
            },
            'u' => {
                if self.peek(0) == Some('{') {
                    let mut k = 1;
                    let mut v: u32 = 0;
                    while let Some(d) = self.peek(k).and_then(|d| d.to_digit(16)) {
                        v = v.saturating_mul(16).saturating_add(d);
                        k += 1;
                    }
                    if self.peek(k) == Some('}') && k > 1 {
                        self.i += k + 1;
                        match char::from_u32(v) {
                            Some(ch) => unit(ch, out),
                            None => out.push(0xfffd),
                        }
                        return;
                    }
                    out.push('u' as u16);
                } else if let Some(v) = self.hex_digits(0, 4) {
                    self.i += 4;
                    out.push(v as u16);
                } else {
                    out.push('u' as u16);
                }
            }
            '\r' => {
                if self.peek(0) == Some('\n') {
                    self.i += 1;
                }
            }
            '\n' | '\u{2028}' | '\u{2029}' => {}
            c if c.is_digit(8) => {
                // legacy octal escape, up to three digits and at most 0o377
                let mut v = c.to_digit(8).unwrap();
                let mut k = 0;
                while k < 2 {
                    match self.peek(0).and_then(|d| d.to_digit(8)) {
                        Some(d) if v * 8 + d <= 0o377 => {
                            v = v * 8 + d;
                            self.i += 1;
                            k += 1;
                        }
                        _ => break,
                    }
                }
                out.push(v as u16);
            }
            other => unit(other, out),
        }
    }

    fn string(&mut self, quote: char) -> Vec<u16> {
        self.i += 1;
        let mut out = Vec::new();
        let mut buf = [0u16; 2];
        while let Some(c) = self.peek(0) {
            if c == quote {
                self.i += 1;
                break;
            }
            // unterminated at end of line
            if c == '\n' || c == '\r' {
                break;
            }
            self.i += 1;
            if c == '\\' {
                self.escape(&mut out);
            } else {
                out.extend_from_slice(c.encode_utf16(&mut buf));
            }
        }
        out
    }

    fn template(&mut self) -> Vec<u16> {
        self.i += 1;
        let mut out = Vec::new();
        let mut buf = [0u16; 2];
        while let Some(c) = self.peek(0) {
            self.i += 1;
            match c {
                '`' => break,
                '\\' => self.escape(&mut out),
                _ => out.extend_from_slice(c.encode_utf16(&mut buf)),
            }
        }
        out
    }

    fn regex(&mut self) -> Tok {
        let s = self.offset();
        self.i += 1;
        let mut in_class = false;
        while let Some(c) = self.peek(0) {
            if c == '\n' || c == '\r' {
                break;
            }
            self.i += 1;
            match c {
                '\\' => {
                    if self.peek(0).is_some_and(|d| d != '\n' && d != '\r') {
                        self.i += 1;
                    }
                }
                '[' => in_class = true,
                ']' => in_class = false,
                '/' if !in_class => {
                    while self.peek(0).is_some_and(is_id_part) {
                        self.i += 1;
                    }
                    break;
                }
                _ => {}
            }
        }
        Tok::Regex(self.src[s..self.offset()].to_string())
    }

    /// Balanced XML element; runs to EOF when unbalanced.
    fn xml(&mut self) -> Tok {
        let s = self.offset();
        let mut depth: i64 = 0;
        while let Some(c) = self.peek(0) {
            if c == '<' {
                match self.peek(1) {
                    Some('/') => {
                        depth -= 1;
                        while let Some(d) = self.peek(0) {
                            self.i += 1;
                            if d == '>' {
                                break;
                            }
                        }
                        if depth <= 0 {
                            break;
                        }
                        continue;
                    }
                    Some('!') | Some('?') => {
                        while let Some(d) = self.peek(0) {
                            self.i += 1;
                            if d == '>' {
                                break;
                            }
                        }
                        continue;
                    }
                    _ => {
                        depth += 1;
                        let mut quote = None;
                        let mut prev = '<';
                        self.i += 1;
                        while let Some(d) = self.peek(0) {
                            self.i += 1;
                            match quote {
                                Some(q) if d == q => quote = None,
                                Some(_) => {}
                                None if d == '"' || d == '\'' => quote = Some(d),
                                None if d == '>' => {
                                    if prev == '/' {
                                        depth -= 1;
                                    }
                                    break;
                                }
                                None => {}
                            }
                            prev = d;
                        }
                        if depth <= 0 {
                            break;
                        }
                        continue;
                    }
                }
            }
            self.i += 1;
        }
        Tok::Xml(self.src[s..self.offset()].to_string())
    }
}
