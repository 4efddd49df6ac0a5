//! JavaScript tokens, AST and the counts derived from them.

pub mod lexer;
pub mod parser;

use std::collections::BTreeSet;

pub use lexer::{is_keyword, tokenize, Tok, Token, KEYWORDS};
pub use parser::{Kind, Node, Parser};

#[derive(Debug, Clone, PartialEq)]
pub struct JsAst {
    pub root: Node,
    /// String literals (and template texts) in source order, as UTF-16 units.
    pub strings: Vec<Vec<u16>>,
    pub tokens: Vec<Token>,
    pub parse_ok: bool,
    /// An E4X XML literal was seen.
    pub e4x: bool,
}

pub fn parse_js(src: &str) -> JsAst {
    let lexed = tokenize(src);
    let mut p = Parser::new(&lexed.tokens);
    let root = p.program();
    let parse_ok = p.errors == 0;
    let strings = lexed
        .tokens
        .iter()
        .filter_map(|t| match &t.tok {
            Tok::Str(s) | Tok::Template(s) => Some(s.clone()),
            _ => None,
        })
        .collect();
    JsAst { root, strings, tokens: lexed.tokens, parse_ok, e4x: lexed.e4x }
}

/// Identifiers whose aliasing counts as reassigning a special object.
pub const SPECIAL_OBJECTS: &[&str] = &[
    "Function", "document", "eval", "frames", "globalThis", "parent", "self", "top", "unescape", "window",
];

/// Call names tallied individually.
pub const TRACKED_CALLS: &[&str] = &[
    "ActiveXObject",
    "addEventListener",
    "attachEvent",
    "clearAttributes",
    "dispatchEvent",
    "fireEvent",
    "insertAdjacentElement",
    "replaceNode",
    "setInterval",
    "setTimeout",
];

const PACKER_CALLEES: &[&str] = &["unescape", "unpack"];

/// Counts gathered from one script.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct JsCounts {
    pub nodes: usize,
    pub keywords: usize,
    pub function_calls: usize,
    pub bracket_calls: usize,
    pub bracket_lookups: usize,
    pub special_reassignments: usize,
    pub packer_functions: usize,
    /// Per [`TRACKED_CALLS`] entry.
    pub tracked: [usize; TRACKED_CALLS.len()],
    pub long_names: BTreeSet<String>,
}

fn is_special(n: &Node) -> bool {
    n.kind == Kind::This || (n.kind == Kind::Ident && SPECIAL_OBJECTS.contains(&n.name.as_str()))
}

/// Name a call or `new` is made through: `f()`, `a.f()`, `a["f"]()`.
pub fn callee_name(callee: &Node) -> Option<&str> {
    match callee.kind {
        Kind::Ident | Kind::Member => Some(&callee.name),
        Kind::Index if callee.children.get(1).is_some_and(|k| k.kind == Kind::Str) => Some(&callee.children[1].name),
        _ => None,
    }
}

fn is_packer_signature(f: &Node) -> bool {
    let params: Vec<&str> = f
        .children
        .iter()
        .take(f.children.len().saturating_sub(1))
        .map(|p| if p.kind == Kind::Ident { p.name.as_str() } else { "" })
        .collect();
    params.len() == 6 && params[..5] == ["p", "a", "c", "k", "e"] && matches!(params[5], "d" | "r")
}

/// Minimum length of a long identifier.
pub const LONG_NAME_LEN: usize = 30;

impl JsAst {
    pub fn counts(&self) -> JsCounts {
        let mut c = JsCounts { nodes: self.root.count(), ..Default::default() };
        for t in &self.tokens {
            if let Tok::Ident(name) = &t.tok {
                if is_keyword(name) {
                    c.keywords += 1;
                } else if name.chars().count() >= LONG_NAME_LEN {
                    c.long_names.insert(name.clone());
                }
            }
        }
        self.root.walk(&mut |n| match n.kind {
            Kind::Call | Kind::New => {
                let callee = &n.children[0];
                if n.kind == Kind::Call {
                    match callee.kind {
                        Kind::Ident => c.function_calls += 1,
                        Kind::Index => c.bracket_calls += 1,
                        _ => {}
                    }
                }
                if let Some(name) = callee_name(callee) {
                    if let Some(i) = TRACKED_CALLS.iter().position(|t| *t == name) {
                        c.tracked[i] += 1;
                    }
                    if n.kind == Kind::Call && PACKER_CALLEES.contains(&name) {
                        c.packer_functions += 1;
                    }
                }
            }
            Kind::Index => c.bracket_lookups += 1,
            Kind::Function | Kind::Arrow => {
                if is_packer_signature(n) {
                    c.packer_functions += 1;
                }
            }
            Kind::Assign => {
                let (lhs, rhs) = (&n.children[0], &n.children[1]);
                if is_special(rhs) || (lhs.kind == Kind::Ident && SPECIAL_OBJECTS.contains(&lhs.name.as_str())) {
                    c.special_reassignments += 1;
                }
            }
            Kind::Declarator
                if n.children.get(1).is_some_and(is_special) => {
                    c.special_reassignments += 1;
                }
            _ => {}
        });
        c
    }
}

impl JsCounts {
    pub fn add(&mut self, o: JsCounts) {
        self.nodes += o.nodes;
        self.keywords += o.keywords;
        self.function_calls += o.function_calls;
        self.bracket_calls += o.bracket_calls;
        self.bracket_lookups += o.bracket_lookups;
        self.special_reassignments += o.special_reassignments;
        self.packer_functions += o.packer_functions;
        for (a, b) in self.tracked.iter_mut().zip(o.tracked) {
            *a += b;
        }
        self.long_names.extend(o.long_names);
    }

    pub fn tracked(&self, name: &str) -> usize {
        TRACKED_CALLS.iter().position(|t| *t == name).map_or(0, |i| self.tracked[i])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(src: &str) -> Vec<Kind> {
        let ast = parse_js(src);
        let mut v = Vec::new();
        ast.root.walk(&mut |n| v.push(n.kind));
        v
    }

    #[test]
    fn eval_call() {
        let ast = parse_js("eval('x')");
        assert!(ast.parse_ok);
        assert_eq!(kinds("eval('x')"), [Kind::Program, Kind::ExprStmt, Kind::Call, Kind::Ident, Kind::Str]);
        let c = ast.counts();
        assert_eq!(c.function_calls, 1);
        assert_eq!(callee_name(&ast.root.children[0].children[0].children[0]), Some("eval"));
        assert_eq!(ast.strings.len(), 1);
    }

    #[test]
    fn bracket_lookup_on_this() {
        // Program, ExprStmt, Index, This, Binary, Str, Str
        let ast = parse_js("this['ev'+'al']");
        assert!(ast.parse_ok);
        let c = ast.counts();
        assert_eq!(c.bracket_lookups, 1);
        assert_eq!(c.special_reassignments, 0);
        assert_eq!(c.nodes, 7);
    }

    #[test]
    fn malformed_function() {
        let ast = parse_js("function(");
        assert!(!ast.parse_ok);
        let ast = parse_js("var a = 1;\nfunction(\nvar b = 'kept';");
        assert!(!ast.parse_ok);
        assert_eq!(ast.strings.len(), 1);
        // both declarations survive recovery
        assert_eq!(ast.root.children.iter().filter(|n| n.kind == Kind::VarDecl).count(), 2);
    }

    #[test]
    fn calls_and_reassignment() {
        let src = "var w = window; x = this; document = 1; a.b(); a['c'](); f(g(1)); new ActiveXObject('x');\
                   el.attachEvent('onload', f); window['setTimeout'](f, 1);";
        let ast = parse_js(src);
        assert!(ast.parse_ok);
        let c = ast.counts();
        assert_eq!(c.special_reassignments, 3);
        assert_eq!(c.function_calls, 2);
        assert_eq!(c.bracket_calls, 2);
        assert_eq!(c.bracket_lookups, 2);
        assert_eq!(c.tracked("ActiveXObject"), 1);
        assert_eq!(c.tracked("attachEvent"), 1);
        assert_eq!(c.tracked("setTimeout"), 1);
    }

    #[test]
    fn packer_shapes() {
        let src = "eval(function(p,a,c,k,e,d){return p}('x',1,1,'a'.split('|'),0,{})); unescape('%41');";
        let ast = parse_js(src);
        assert!(ast.parse_ok, "{src}");
        assert_eq!(ast.counts().packer_functions, 2);
    }

    #[test]
    fn statement_forms_parse() {
        for src in [
            "for (var i = 0; i < 10; i++) { if (i in o) continue; else break; }",
            "for (const k of xs) f(k)",
            "for (k in o) ;",
            "do x++; while (x < 3)",
            "switch (a) { case 1: b(); break; default: c() }",
            "try { a() } catch (e) { b(e) } finally { c() }",
            "label: while (1) { break label }",
            "var f = (a, b = 2, ...r) => a + b; var g = x => x * 2; var h = async () => { await z };",
            "class A extends B { constructor() { super(); } static m() { return 1 } }",
            "var o = { a: 1, 'b': 2, [c]: 3, d, e() {}, get f() { return 1 }, ...g };",
            "var [a, , b] = arr; var {x, y: z} = obj;",
            "a ? b : c; a ?? b; a?.b?.[c]?.(d); x **= 2; typeof a === 'undefined'",
            "var s = `tpl ${x}`; tag`y`; var r = /a\\/b/gi.test(s);",
            "function* g() { yield 1; yield* h() }",
            "x = 1\ny = 2\n(function(){})()",
            "new Foo; new Foo.Bar(1); new new X()()",
            "if (a) b(); else if (c) d(); else { e() }",
            "with (Math) { r = cos(PI) }",
        ] {
            assert!(parse_js(src).parse_ok, "{src}");
        }
    }

    #[test]
    fn e4x_is_flagged() {
        let ast = parse_js("var x = <root><a href='q'>t</a></root>;");
        assert!(ast.e4x);
        assert!(ast.parse_ok);
    }

    #[test]
    fn deep_input_is_total() {
        let deep = "(".repeat(10_000);
        assert!(!parse_js(&deep).parse_ok);
        let long = "x = 'a'".to_string() + &" + 'a'".repeat(20_000);
        let ast = parse_js(&long);
        assert!(ast.parse_ok);
        assert_eq!(ast.strings.len(), 20_001);
        let news = "new ".repeat(5_000) + "x";
        parse_js(&news);
        let brackets = "[".repeat(5000) + &"{".repeat(5000);
        parse_js(&brackets);
    }

    #[test]
    fn long_names_are_distinct() {
        let n = "a".repeat(30);
        let ast = parse_js(&format!("var {n} = 1; {n}++; var short = 2; var {}x = 3;", "b".repeat(29)));
        assert_eq!(ast.counts().long_names.len(), 2);
    }
}
