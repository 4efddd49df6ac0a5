//! Recursive-descent parser over the token stream.
//!
//! Covers the statement and expression forms seen in page scripts. On a
//! syntax error the current statement is dropped, tokens are skipped to the
//! next statement boundary and parsing resumes; `errors` counts how often.

use super::lexer::{Tok, Token};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Kind {
    Program,
    Block,
    VarDecl,
    Declarator,
    Function,
    Arrow,
    Class,
    Return,
    If,
    For,
    ForIn,
    While,
    DoWhile,
    Break,
    Continue,
    Throw,
    Try,
    Catch,
    Switch,
    Case,
    With,
    Labeled,
    Debugger,
    Empty,
    ExprStmt,
    Ident,
    This,
    Super,
    /// `true`, `false`, `null`.
    Literal,
    Number,
    Str,
    Template,
    Regex,
    Xml,
    Array,
    Object,
    Property,
    Call,
    New,
    /// `a.b`; the property name is in `name`.
    Member,
    /// `a[b]`.
    Index,
    Assign,
    Binary,
    Unary,
    Update,
    Conditional,
    Sequence,
    Spread,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub kind: Kind,
    /// Identifier, property or function name; operator for operator nodes;
    /// cooked value for string literals.
    pub name: String,
    pub children: Vec<Node>,
}

impl Node {
    fn new(kind: Kind) -> Self {
        Node { kind, name: String::new(), children: Vec::new() }
    }

    fn named(kind: Kind, name: impl Into<String>) -> Self {
        Node { kind, name: name.into(), children: Vec::new() }
    }

    fn with(kind: Kind, name: impl Into<String>, children: Vec<Node>) -> Self {
        Node { kind, name: name.into(), children }
    }

    pub fn count(&self) -> usize {
        let mut n = 0;
        self.walk(&mut |_| n += 1);
        n
    }

    /// Pre-order traversal.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Node)) {
        let mut stack = vec![self];
        while let Some(n) = stack.pop() {
            f(n);
            stack.extend(n.children.iter().rev());
        }
    }
}

// Left-deep chains (`a+b+c+...`) can be far deeper than the call stack allows
// for a recursive drop.
impl Drop for Node {
    fn drop(&mut self) {
        let mut stack = std::mem::take(&mut self.children);
        while let Some(mut n) = stack.pop() {
            stack.append(&mut n.children);
        }
    }
}

/// Nesting beyond this is treated as a syntax error.
pub const MAX_DEPTH: usize = 96;

type PResult<T> = Result<T, ()>;

pub struct Parser<'t> {
    toks: &'t [Token],
    pos: usize,
    depth: usize,
    pub errors: usize,
}

fn prec(op: &str) -> Option<u8> {
    Some(match op {
        "??" => 1,
        "||" => 2,
        "&&" => 3,
        "|" => 4,
        "^" => 5,
        "&" => 6,
        "==" | "!=" | "===" | "!==" => 7,
        "<" | ">" | "<=" | ">=" | "instanceof" | "in" => 8,
        "<<" | ">>" | ">>>" => 9,
        "+" | "-" => 10,
        "*" | "/" | "%" => 11,
        "**" => 12,
        _ => return None,
    })
}

const ASSIGN_OPS: &[&str] = &["=", "+=", "-=", "*=", "/=", "%=", "**=", "<<=", ">>=", ">>>=", "&=", "|=", "^=", "&&=", "||=", "??="];

impl<'t> Parser<'t> {
    pub fn new(toks: &'t [Token]) -> Self {
        Parser { toks, pos: 0, depth: 0, errors: 0 }
    }

    fn peek(&self) -> Option<&'t Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn peek_at(&self, k: usize) -> Option<&'t Tok> {
        self.toks.get(self.pos + k).map(|t| &t.tok)
    }

    fn nl_before(&self) -> bool {
        self.toks.get(self.pos).is_some_and(|t| t.nl_before)
    }

    fn at_punct(&self, p: &str) -> bool {
        matches!(self.peek(), Some(Tok::Punct(q)) if *q == p)
    }

    fn at_word(&self, w: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(n)) if n == w)
    }

    fn eat_punct(&mut self, p: &str) -> bool {
        if self.at_punct(p) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn eat_word(&mut self, w: &str) -> bool {
        if self.at_word(w) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, p: &str) -> PResult<()> {
        if self.eat_punct(p) {
            Ok(())
        } else {
            Err(())
        }
    }

    fn enter(&mut self) -> PResult<()> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            Err(())
        } else {
            Ok(())
        }
    }

    fn leave(&mut self) {
        self.depth -= 1;
    }

    /// Statement terminator with automatic semicolon insertion.
    fn semicolon(&mut self) -> PResult<()> {
        if self.eat_punct(";") || self.at_punct("}") || self.peek().is_none() || self.nl_before() {
            Ok(())
        } else {
            Err(())
        }
    }

    /// Resumes at the first statement boundary after the failed statement's
    /// first token.
    fn recover(&mut self, start: usize) {
        self.errors += 1;
        self.depth = 0;
        self.pos = start + 1;
        while let Some(t) = self.toks.get(self.pos) {
            if t.nl_before {
                return;
            }
            self.pos += 1;
            if matches!(t.tok, Tok::Punct(";") | Tok::Punct("}")) {
                return;
            }
        }
    }

    pub fn program(&mut self) -> Node {
        let mut body = Vec::new();
        while self.peek().is_some() {
            let start = self.pos;
            match self.statement() {
                Ok(s) => body.push(s),
                Err(()) => self.recover(start),
            }
        }
        Node::with(Kind::Program, "", body)
    }

    fn statement(&mut self) -> PResult<Node> {
        self.enter()?;
        let r = self.statement_inner();
        self.leave();
        r
    }

    fn block(&mut self) -> PResult<Node> {
        self.expect("{")?;
        let mut body = Vec::new();
        while !self.eat_punct("}") {
            if self.peek().is_none() {
                return Err(());
            }
            body.push(self.statement()?);
        }
        Ok(Node::with(Kind::Block, "", body))
    }

    fn statement_inner(&mut self) -> PResult<Node> {
        let Some(tok) = self.peek() else {
            return Err(());
        };
        match tok {
            Tok::Punct("{") => self.block(),
            Tok::Punct(";") => {
                self.pos += 1;
                Ok(Node::new(Kind::Empty))
            }
            Tok::Ident(w) => match w.as_str() {
                "var" | "const" => {
                    let d = self.var_decl(false)?;
                    self.semicolon()?;
                    Ok(d)
                }
                "let" if matches!(self.peek_at(1), Some(Tok::Ident(_)) | Some(Tok::Punct("[")) | Some(Tok::Punct("{"))) => {
                    let d = self.var_decl(false)?;
                    self.semicolon()?;
                    Ok(d)
                }
                "function" => self.function(),
                "async" if matches!(self.peek_at(1), Some(Tok::Ident(f)) if f == "function") && !self.toks[self.pos + 1].nl_before => {
                    self.pos += 1;
                    self.function()
                }
                "class" => self.class(),
                "if" => {
                    self.pos += 1;
                    self.expect("(")?;
                    let test = self.expression(false)?;
                    self.expect(")")?;
                    let mut kids = vec![test, self.statement()?];
                    if self.eat_word("else") {
                        kids.push(self.statement()?);
                    }
                    Ok(Node::with(Kind::If, "", kids))
                }
                "for" => self.for_statement(),
                "while" => {
                    self.pos += 1;
                    self.expect("(")?;
                    let test = self.expression(false)?;
                    self.expect(")")?;
                    let body = self.statement()?;
                    Ok(Node::with(Kind::While, "", vec![test, body]))
                }
                "do" => {
                    self.pos += 1;
                    let body = self.statement()?;
                    if !self.eat_word("while") {
                        return Err(());
                    }
                    self.expect("(")?;
                    let test = self.expression(false)?;
                    self.expect(")")?;
                    self.eat_punct(";");
                    Ok(Node::with(Kind::DoWhile, "", vec![body, test]))
                }
                "return" | "throw" => {
                    let kind = if w == "return" { Kind::Return } else { Kind::Throw };
                    self.pos += 1;
                    let mut kids = Vec::new();
                    if !(self.at_punct(";") || self.at_punct("}") || self.peek().is_none() || self.nl_before()) {
                        kids.push(self.expression(false)?);
                    } else if kind == Kind::Throw {
                        return Err(());
                    }
                    self.semicolon()?;
                    Ok(Node::with(kind, "", kids))
                }
                "break" | "continue" => {
                    let kind = if w == "break" { Kind::Break } else { Kind::Continue };
                    self.pos += 1;
                    let mut label = String::new();
                    if !self.nl_before() {
                        if let Some(Tok::Ident(l)) = self.peek() {
                            if !super::lexer::is_keyword(l) {
                                label = l.clone();
                                self.pos += 1;
                            }
                        }
                    }
                    self.semicolon()?;
                    Ok(Node::named(kind, label))
                }
                "try" => {
                    self.pos += 1;
                    let mut kids = vec![self.block()?];
                    let mut handled = false;
                    if self.eat_word("catch") {
                        let mut c = Vec::new();
                        if self.eat_punct("(") {
                            c.push(self.binding_target()?);
                            self.expect(")")?;
                        }
                        c.push(self.block()?);
                        kids.push(Node::with(Kind::Catch, "", c));
                        handled = true;
                    }
                    if self.eat_word("finally") {
                        kids.push(self.block()?);
                        handled = true;
                    }
                    if !handled {
                        return Err(());
                    }
                    Ok(Node::with(Kind::Try, "", kids))
                }
                "switch" => {
                    self.pos += 1;
                    self.expect("(")?;
                    let mut kids = vec![self.expression(false)?];
                    self.expect(")")?;
                    self.expect("{")?;
                    while !self.eat_punct("}") {
                        let mut case = Vec::new();
                        if self.eat_word("case") {
                            case.push(self.expression(false)?);
                        } else if !self.eat_word("default") {
                            return Err(());
                        }
                        self.expect(":")?;
                        while !(self.at_word("case") || self.at_word("default") || self.at_punct("}")) {
                            if self.peek().is_none() {
                                return Err(());
                            }
                            case.push(self.statement()?);
                        }
                        kids.push(Node::with(Kind::Case, "", case));
                    }
                    Ok(Node::with(Kind::Switch, "", kids))
                }
                "with" => {
                    self.pos += 1;
                    self.expect("(")?;
                    let obj = self.expression(false)?;
                    self.expect(")")?;
                    let body = self.statement()?;
                    Ok(Node::with(Kind::With, "", vec![obj, body]))
                }
                "debugger" => {
                    self.pos += 1;
                    self.semicolon()?;
                    Ok(Node::new(Kind::Debugger))
                }
                "import" | "export" | "else" | "case" | "default" | "catch" | "finally" | "extends" | "enum" => Err(()),
                _ if !super::lexer::is_keyword(w) && matches!(self.peek_at(1), Some(Tok::Punct(":"))) => {
                    let label = w.clone();
                    self.pos += 2;
                    let body = self.statement()?;
                    Ok(Node::with(Kind::Labeled, label, vec![body]))
                }
                _ => self.expression_statement(),
            },
            _ => self.expression_statement(),
        }
    }

    fn expression_statement(&mut self) -> PResult<Node> {
        let e = self.expression(false)?;
        self.semicolon()?;
        Ok(Node::with(Kind::ExprStmt, "", vec![e]))
    }

    fn var_decl(&mut self, no_in: bool) -> PResult<Node> {
        let kw = match self.peek() {
            Some(Tok::Ident(w)) => w.clone(),
            _ => return Err(()),
        };
        self.pos += 1;
        let mut decls = Vec::new();
        loop {
            let mut d = vec![self.binding_target()?];
            if self.eat_punct("=") {
                d.push(self.assignment(no_in)?);
            }
            decls.push(Node::with(Kind::Declarator, "", d));
            if !self.eat_punct(",") {
                break;
            }
        }
        Ok(Node::with(Kind::VarDecl, kw, decls))
    }

    /// Identifier or destructuring pattern.
    fn binding_target(&mut self) -> PResult<Node> {
        match self.peek() {
            Some(Tok::Ident(n)) if !super::lexer::is_keyword(n) || matches!(n.as_str(), "let" | "yield" | "await" | "static") => {
                self.pos += 1;
                Ok(Node::named(Kind::Ident, n.clone()))
            }
            Some(Tok::Punct("[")) | Some(Tok::Punct("{")) => self.primary(),
            _ => Err(()),
        }
    }

    fn for_statement(&mut self) -> PResult<Node> {
        self.pos += 1;
        self.eat_word("await");
        self.expect("(")?;
        let mut init = None;
        if !self.at_punct(";") {
            let is_decl = self.at_word("var")
                || self.at_word("const")
                || (self.at_word("let") && matches!(self.peek_at(1), Some(Tok::Ident(_)) | Some(Tok::Punct("[")) | Some(Tok::Punct("{"))));
            init = Some(if is_decl { self.var_decl(true)? } else { self.expression(true)? });
        }
        if self.at_word("in") || self.at_word("of") {
            let kind_name = if self.at_word("in") { "in" } else { "of" };
            self.pos += 1;
            let right = if kind_name == "in" { self.expression(false)? } else { self.assignment(false)? };
            self.expect(")")?;
            let body = self.statement()?;
            return Ok(Node::with(Kind::ForIn, kind_name, vec![init.ok_or(())?, right, body]));
        }
        self.expect(";")?;
        let mut kids: Vec<Node> = init.into_iter().collect();
        if !self.at_punct(";") {
            kids.push(self.expression(false)?);
        }
        self.expect(";")?;
        if !self.at_punct(")") {
            kids.push(self.expression(false)?);
        }
        self.expect(")")?;
        kids.push(self.statement()?);
        Ok(Node::with(Kind::For, "", kids))
    }

    fn params(&mut self) -> PResult<Vec<Node>> {
        self.expect("(")?;
        let mut ps = Vec::new();
        while !self.eat_punct(")") {
            if self.eat_punct("...") {
                ps.push(Node::with(Kind::Spread, "", vec![self.binding_target()?]));
            } else {
                let target = self.binding_target()?;
                if self.eat_punct("=") {
                    let def = self.assignment(false)?;
                    ps.push(Node::with(Kind::Assign, "=", vec![target, def]));
                } else {
                    ps.push(target);
                }
            }
            if !self.at_punct(")") {
                self.expect(",")?;
            }
        }
        Ok(ps)
    }

    /// `function [*] [name] (params) { body }`; the keyword is current.
    fn function(&mut self) -> PResult<Node> {
        self.pos += 1;
        self.eat_punct("*");
        let mut name = String::new();
        if let Some(Tok::Ident(n)) = self.peek() {
            if !super::lexer::is_keyword(n) || n == "yield" || n == "await" || n == "let" || n == "static" {
                name = n.clone();
                self.pos += 1;
            }
        }
        let mut kids = self.params()?;
        kids.push(self.block()?);
        Ok(Node::with(Kind::Function, name, kids))
    }

    fn class(&mut self) -> PResult<Node> {
        self.pos += 1;
        let mut name = String::new();
        if let Some(Tok::Ident(n)) = self.peek() {
            if n != "extends" {
                name = n.clone();
                self.pos += 1;
            }
        }
        let mut kids = Vec::new();
        if self.eat_word("extends") {
            kids.push(self.lhs()?);
        }
        self.expect("{")?;
        while !self.eat_punct("}") {
            if self.eat_punct(";") {
                continue;
            }
            if self.peek().is_none() {
                return Err(());
            }
            self.eat_word("static");
            kids.push(self.property(true)?);
        }
        Ok(Node::with(Kind::Class, name, kids))
    }

    pub fn expression(&mut self, no_in: bool) -> PResult<Node> {
        let first = self.assignment(no_in)?;
        if !self.at_punct(",") {
            return Ok(first);
        }
        let mut items = vec![first];
        while self.eat_punct(",") {
            items.push(self.assignment(no_in)?);
        }
        Ok(Node::with(Kind::Sequence, ",", items))
    }

    fn is_arrow_ahead(&self) -> bool {
        // (a, b) => ... : find the matching paren and look for "=>"
        let mut depth = 0usize;
        let mut i = self.pos;
        while let Some(t) = self.toks.get(i) {
            match t.tok {
                Tok::Punct("(") | Tok::Punct("[") | Tok::Punct("{") => depth += 1,
                Tok::Punct(")") | Tok::Punct("]") | Tok::Punct("}") => {
                    depth = depth.saturating_sub(1);
                    if depth == 0 {
                        return matches!(self.toks.get(i + 1), Some(Token { tok: Tok::Punct("=>"), nl_before: false, .. }));
                    }
                }
                _ => {}
            }
            i += 1;
        }
        false
    }

    fn arrow_body(&mut self, mut params: Vec<Node>) -> PResult<Node> {
        if self.at_punct("{") {
            params.push(self.block()?);
        } else {
            params.push(self.assignment(false)?);
        }
        Ok(Node::with(Kind::Arrow, "", params))
    }

    fn assignment(&mut self, no_in: bool) -> PResult<Node> {
        self.enter()?;
        let r = self.assignment_inner(no_in);
        self.leave();
        r
    }

    fn assignment_inner(&mut self, no_in: bool) -> PResult<Node> {
        // arrow functions
        match (self.peek(), self.peek_at(1)) {
            (Some(Tok::Ident(n)), Some(Tok::Punct("=>"))) if !super::lexer::is_keyword(n) => {
                let p = Node::named(Kind::Ident, n.clone());
                self.pos += 2;
                return self.arrow_body(vec![p]);
            }
            (Some(Tok::Ident(a)), Some(Tok::Ident(n)))
                if a == "async" && !super::lexer::is_keyword(n) && matches!(self.peek_at(2), Some(Tok::Punct("=>"))) =>
            {
                let p = Node::named(Kind::Ident, n.clone());
                self.pos += 3;
                return self.arrow_body(vec![p]);
            }
            (Some(Tok::Ident(a)), Some(Tok::Punct("("))) if a == "async" && {
                let save = self.pos + 1;
                let probe = Parser { toks: self.toks, pos: save, depth: 0, errors: 0 };
                probe.is_arrow_ahead()
            } =>
            {
                self.pos += 1;
                let ps = self.params()?;
                self.expect("=>")?;
                return self.arrow_body(ps);
            }
            (Some(Tok::Punct("(")), _) if self.is_arrow_ahead() => {
                let ps = self.params()?;
                self.expect("=>")?;
                return self.arrow_body(ps);
            }
            (Some(Tok::Ident(y)), _) if y == "yield" => {
                self.pos += 1;
                self.eat_punct("*");
                let mut kids = Vec::new();
                if !(self.nl_before()
                    || self.peek().is_none()
                    || matches!(self.peek(), Some(Tok::Punct(")" | "]" | "}" | ";" | "," | ":"))))
                {
                    kids.push(self.assignment(no_in)?);
                }
                return Ok(Node::with(Kind::Unary, "yield", kids));
            }
            _ => {}
        }
        let left = self.conditional(no_in)?;
        if let Some(Tok::Punct(op)) = self.peek() {
            if ASSIGN_OPS.contains(op) {
                if !matches!(left.kind, Kind::Ident | Kind::Member | Kind::Index | Kind::Array | Kind::Object) {
                    return Err(());
                }
                self.pos += 1;
                let right = self.assignment(no_in)?;
                return Ok(Node::with(Kind::Assign, *op, vec![left, right]));
            }
        }
        Ok(left)
    }

    fn conditional(&mut self, no_in: bool) -> PResult<Node> {
        let test = self.binary(0, no_in)?;
        if !self.eat_punct("?") {
            return Ok(test);
        }
        let cons = self.assignment(false)?;
        self.expect(":")?;
        let alt = self.assignment(no_in)?;
        Ok(Node::with(Kind::Conditional, "?:", vec![test, cons, alt]))
    }

    fn binary_op(&self, no_in: bool) -> Option<(&'static str, u8)> {
        match self.peek()? {
            Tok::Punct(p) => prec(p).map(|pr| (*p, pr)),
            Tok::Ident(w) if w == "instanceof" => Some(("instanceof", 8)),
            Tok::Ident(w) if w == "in" && !no_in => Some(("in", 8)),
            _ => None,
        }
    }

    fn binary(&mut self, min: u8, no_in: bool) -> PResult<Node> {
        let mut left = self.unary()?;
        while let Some((op, p)) = self.binary_op(no_in) {
            if p <= min {
                break;
            }
            self.pos += 1;
            // ** is right-associative
            let right = if op == "**" { self.binary(p - 1, no_in)? } else { self.binary(p, no_in)? };
            left = Node::with(Kind::Binary, op, vec![left, right]);
        }
        Ok(left)
    }

    fn unary(&mut self) -> PResult<Node> {
        self.enter()?;
        let r = self.unary_inner();
        self.leave();
        r
    }

    fn unary_inner(&mut self) -> PResult<Node> {
        match self.peek() {
            Some(Tok::Punct(op @ ("!" | "~" | "+" | "-"))) => {
                self.pos += 1;
                Ok(Node::with(Kind::Unary, *op, vec![self.unary()?]))
            }
            Some(Tok::Punct(op @ ("++" | "--"))) => {
                self.pos += 1;
                Ok(Node::with(Kind::Update, *op, vec![self.unary()?]))
            }
            Some(Tok::Punct("...")) => {
                self.pos += 1;
                Ok(Node::with(Kind::Spread, "...", vec![self.assignment(false)?]))
            }
            Some(Tok::Ident(w)) if matches!(w.as_str(), "typeof" | "void" | "delete" | "await") => {
                let op = w.clone();
                self.pos += 1;
                Ok(Node::with(Kind::Unary, op, vec![self.unary()?]))
            }
            _ => {
                let e = self.lhs()?;
                if !self.nl_before() {
                    if let Some(Tok::Punct(op @ ("++" | "--"))) = self.peek() {
                        self.pos += 1;
                        return Ok(Node::with(Kind::Update, *op, vec![e]));
                    }
                }
                Ok(e)
            }
        }
    }

    fn arguments(&mut self) -> PResult<Vec<Node>> {
        self.expect("(")?;
        let mut args = Vec::new();
        while !self.eat_punct(")") {
            args.push(self.assignment(false)?);
            if !self.at_punct(")") {
                self.expect(",")?;
            }
        }
        Ok(args)
    }

    fn member_name(&mut self) -> PResult<String> {
        match self.peek() {
            Some(Tok::Ident(n)) => {
                self.pos += 1;
                Ok(n.clone())
            }
            Some(Tok::Punct("#")) => {
                self.pos += 1;
                match self.peek() {
                    Some(Tok::Ident(n)) => {
                        self.pos += 1;
                        Ok(format!("#{n}"))
                    }
                    _ => Err(()),
                }
            }
            _ => Err(()),
        }
    }

    /// Member access, calls and `new`.
    fn lhs(&mut self) -> PResult<Node> {
        let mut e = if self.at_word("new") {
            self.pos += 1;
            if self.eat_punct(".") {
                // new.target
                let n = self.member_name()?;
                Node::named(Kind::Member, n)
            } else {
                self.enter()?;
                let callee = self.member_only();
                self.leave();
                let mut kids = vec![callee?];
                if self.at_punct("(") {
                    kids.extend(self.arguments()?);
                }
                Node::with(Kind::New, "new", kids)
            }
        } else {
            self.primary()?
        };
        loop {
            match self.peek() {
                Some(Tok::Punct(".")) => {
                    self.pos += 1;
                    let n = self.member_name()?;
                    e = Node::with(Kind::Member, n, vec![e]);
                }
                Some(Tok::Punct("?.")) => {
                    self.pos += 1;
                    if self.at_punct("(") {
                        let mut kids = vec![e];
                        kids.extend(self.arguments()?);
                        e = Node::with(Kind::Call, "", kids);
                    } else if self.eat_punct("[") {
                        let idx = self.expression(false)?;
                        self.expect("]")?;
                        e = Node::with(Kind::Index, "", vec![e, idx]);
                    } else {
                        let n = self.member_name()?;
                        e = Node::with(Kind::Member, n, vec![e]);
                    }
                }
                Some(Tok::Punct("[")) => {
                    self.pos += 1;
                    let idx = self.expression(false)?;
                    self.expect("]")?;
                    e = Node::with(Kind::Index, "", vec![e, idx]);
                }
                Some(Tok::Punct("(")) => {
                    let mut kids = vec![e];
                    kids.extend(self.arguments()?);
                    e = Node::with(Kind::Call, "", kids);
                }
                Some(Tok::Template(t)) => {
                    self.pos += 1;
                    let lit = Node::named(Kind::Template, String::from_utf16_lossy(t));
                    e = Node::with(Kind::Call, "", vec![e, lit]);
                }
                _ => return Ok(e),
            }
        }
    }

    /// Callee of `new`: member accesses without calls.
    fn member_only(&mut self) -> PResult<Node> {
        let mut e = if self.at_word("new") {
            self.pos += 1;
            self.enter()?;
            let c = self.member_only();
            self.leave();
            let c = c?;
            let mut kids = vec![c];
            if self.at_punct("(") {
                kids.extend(self.arguments()?);
            }
            Node::with(Kind::New, "new", kids)
        } else {
            self.primary()?
        };
        loop {
            if self.eat_punct(".") {
                let n = self.member_name()?;
                e = Node::with(Kind::Member, n, vec![e]);
            } else if self.eat_punct("[") {
                let idx = self.expression(false)?;
                self.expect("]")?;
                e = Node::with(Kind::Index, "", vec![e, idx]);
            } else {
                return Ok(e);
            }
        }
    }

    fn property_key(&mut self) -> PResult<Node> {
        let t = self.peek().ok_or(())?;
        let n = match t {
            Tok::Ident(n) => Node::named(Kind::Ident, n.clone()),
            Tok::Str(s) => Node::named(Kind::Str, String::from_utf16_lossy(s)),
            Tok::Num(v) => Node::named(Kind::Number, format_num(*v)),
            Tok::Punct("[") => {
                self.pos += 1;
                let k = self.assignment(false)?;
                self.expect("]")?;
                return Ok(k);
            }
            Tok::Punct("#") => {
                self.pos += 1;
                return Ok(Node::named(Kind::Ident, format!("#{}", self.member_name()?)));
            }
            _ => return Err(()),
        };
        self.pos += 1;
        Ok(n)
    }

    /// Object literal member or class element.
    fn property(&mut self, in_class: bool) -> PResult<Node> {
        if !in_class && self.eat_punct("...") {
            return Ok(Node::with(Kind::Spread, "...", vec![self.assignment(false)?]));
        }
        // get/set/async/* prefixes
        let mut prefixed = false;
        if let Some(Tok::Ident(w)) = self.peek() {
            if matches!(w.as_str(), "get" | "set" | "async")
                && !matches!(self.peek_at(1), Some(Tok::Punct("(" | ":" | "," | "}" | "=" | ";")))
            {
                self.pos += 1;
                prefixed = true;
            }
        }
        if self.eat_punct("*") {
            prefixed = true;
        }
        let key = self.property_key()?;
        if self.at_punct("(") {
            let mut f = self.params()?;
            f.push(self.block()?);
            let name = if key.kind == Kind::Ident || key.kind == Kind::Str { key.name.clone() } else { String::new() };
            return Ok(Node::with(Kind::Property, "", vec![key, Node::with(Kind::Function, name, f)]));
        }
        if prefixed {
            return Err(());
        }
        if in_class {
            let mut kids = vec![key];
            if self.eat_punct("=") {
                kids.push(self.assignment(false)?);
            }
            self.semicolon()?;
            return Ok(Node::with(Kind::Property, "", kids));
        }
        if self.eat_punct(":") {
            let v = self.assignment(false)?;
            return Ok(Node::with(Kind::Property, "", vec![key, v]));
        }
        if key.kind == Kind::Ident {
            // shorthand, possibly with a default in patterns
            if self.eat_punct("=") {
                let d = self.assignment(false)?;
                return Ok(Node::with(Kind::Property, "", vec![Node::with(Kind::Assign, "=", vec![key, d])]));
            }
            return Ok(Node::with(Kind::Property, "", vec![key]));
        }
        Err(())
    }

    fn primary(&mut self) -> PResult<Node> {
        let t = self.peek().ok_or(())?;
        let node = match t {
            Tok::Ident(n) => match n.as_str() {
                "function" => return self.function(),
                "async" if matches!(self.peek_at(1), Some(Tok::Ident(f)) if f == "function") => {
                    self.pos += 1;
                    return self.function();
                }
                "class" => return self.class(),
                "this" => Node::new(Kind::This),
                "super" => Node::new(Kind::Super),
                "true" | "false" | "null" => Node::named(Kind::Literal, n.clone()),
                _ if super::lexer::is_keyword(n) && !matches!(n.as_str(), "let" | "static" | "yield" | "await" | "implements" | "interface" | "package" | "private" | "protected" | "public") => {
                    return Err(())
                }
                _ => Node::named(Kind::Ident, n.clone()),
            },
            Tok::Num(v) => Node::named(Kind::Number, format_num(*v)),
            Tok::Str(s) => Node::named(Kind::Str, String::from_utf16_lossy(s)),
            Tok::Template(s) => Node::named(Kind::Template, String::from_utf16_lossy(s)),
            Tok::Regex(r) => Node::named(Kind::Regex, r.clone()),
            Tok::Xml(x) => Node::named(Kind::Xml, x.clone()),
            Tok::Punct("(") => {
                self.pos += 1;
                let e = self.expression(false)?;
                self.expect(")")?;
                return Ok(e);
            }
            Tok::Punct("[") => {
                self.pos += 1;
                let mut items = Vec::new();
                while !self.eat_punct("]") {
                    if self.eat_punct(",") {
                        continue;
                    }
                    items.push(self.assignment(false)?);
                    if !self.at_punct("]") {
                        self.expect(",")?;
                    }
                }
                return Ok(Node::with(Kind::Array, "", items));
            }
            Tok::Punct("{") => {
                self.pos += 1;
                let mut props = Vec::new();
                while !self.eat_punct("}") {
                    props.push(self.property(false)?);
                    if !self.at_punct("}") {
                        self.expect(",")?;
                    }
                }
                return Ok(Node::with(Kind::Object, "", props));
            }
            _ => return Err(()),
        };
        self.pos += 1;
        Ok(node)
    }
}

fn format_num(v: f64) -> String {
    if v.is_finite() && v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}
