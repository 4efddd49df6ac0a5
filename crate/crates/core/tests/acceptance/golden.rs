//! Hand-labelled documents for the extractor. Each entry lists the non-zero
//! count columns and the string literals the scripts contain; the byte and
//! string statistics are recomputed here from those inputs.

use std::collections::BTreeMap;

use flowlab_core::features::FEATURE_NAMES;

pub const FLOAT_COLUMNS: &[&str] = &[
    "TotalEntropy",
    "EntropyDensity",
    "AvgLinesize",
    "AvgStringLength",
    "MaxStringEntropy",
    "TotalStringEntropy",
    "ShellcodeProbability",
];

pub struct Doc {
    pub name: String,
    pub content_type: &'static str,
    pub body: Vec<u8>,
    counts: Vec<(&'static str, f64)>,
    strings: Vec<Vec<u16>>,
}

fn doc(
    n: usize,
    content_type: &'static str,
    body: impl Into<Vec<u8>>,
    counts: &[(&'static str, u32)],
    strings: &[&str],
) -> Doc {
    Doc {
        name: format!("D{n}"),
        content_type,
        body: body.into(),
        counts: counts.iter().map(|&(k, v)| (k, v as f64)).collect(),
        strings: strings.iter().map(|s| s.encode_utf16().collect()).collect(),
    }
}

fn entropy(bytes: &[u8]) -> f64 {
    let mut freq: BTreeMap<u8, usize> = BTreeMap::new();
    for &b in bytes {
        *freq.entry(b).or_default() += 1;
    }
    let n = bytes.len() as f64;
    freq.values().map(|&c| c as f64 / n).map(|p| -p * p.log2()).sum::<f64>().max(0.0)
}

fn units_to_bytes(units: &[u16]) -> Vec<u8> {
    units
        .iter()
        .flat_map(|&u| if u <= 0xff { vec![u as u8] } else { u.to_le_bytes().to_vec() })
        .collect()
}

pub fn expected(d: &Doc) -> Vec<(&'static str, f64)> {
    let mut m: BTreeMap<&'static str, f64> = FEATURE_NAMES.iter().map(|&n| (n, 0.0)).collect();
    let h = entropy(&d.body);
    m.insert("Filesize", d.body.len() as f64);
    m.insert("TotalEntropy", h);
    m.insert("EntropyDensity", h / 8.0);
    let lines: Vec<&[u8]> = d.body.split(|&b| b == b'\n').collect();
    m.insert("AvgLinesize", lines.iter().map(|l| l.len()).sum::<usize>() as f64 / lines.len() as f64);

    let s = &d.strings;
    if !s.is_empty() {
        let total: usize = s.iter().map(Vec::len).sum();
        m.insert("NumStrings", s.len() as f64);
        m.insert("NumLongStrings", s.iter().filter(|x| x.len() >= 40).count() as f64);
        m.insert("MaxStrLen", s.iter().map(Vec::len).max().unwrap() as f64);
        m.insert("TotalStringLength", total as f64);
        m.insert("AvgStringLength", total as f64 / s.len() as f64);
        m.insert("MaxStringEntropy", s.iter().map(|x| entropy(&units_to_bytes(x))).fold(0.0, f64::max));
        let all: Vec<u8> = s.iter().flat_map(|x| units_to_bytes(x)).collect();
        m.insert("TotalStringEntropy", entropy(&all));
        let sc = s
            .iter()
            .filter(|x| x.len() >= 20)
            .map(|x| ((entropy(&units_to_bytes(x)) - 4.0) / 2.0).clamp(0.0, 1.0))
            .fold(0.0, f64::max);
        m.insert("ShellcodeProbability", sc);
        let iframe = s.iter().filter(|x| String::from_utf16_lossy(x).to_lowercase().contains("iframe")).count();
        m.insert("NumiframeString", iframe as f64);
    }
    for &(k, v) in &d.counts {
        assert!(m.contains_key(k), "unknown column {k}");
        m.insert(k, v);
    }
    m.into_iter().collect()
}

pub fn corpus() -> Vec<Doc> {
    let long_q = "q".repeat(45);
    let escapes: String = (0..64).map(|i| format!("\\x{i:02x}")).collect();
    let all_bytes: String = (0u8..64).map(char::from).collect();
    let (a30, b29x) = ("a".repeat(30), format!("{}x", "b".repeat(29)));
    vec![
        doc(1, "", "", &[], &[]),
        doc(2, "text/plain", "hello world", &[("NumWords", 2)], &[]),
        doc(
            3,
            "",
            "<html><body><p>hi</p></body></html>",
            &[("ishtml", 1), ("NumHTMLNodes", 4), ("NumWords", 1)],
            &[],
        ),
        doc(
            4,
            "",
            r#"<html><script>eval("x")</script></html>"#,
            &[
                ("ishtml", 1),
                ("ishtmlwithjs", 1),
                ("containsjstags", 1),
                ("NumHTMLNodes", 4),
                ("Numeval", 1),
                ("script", 2),
                ("NumFunctionCalls", 1),
                ("NumNodes", 5),
                ("NumWords", 1),
            ],
            &["x"],
        ),
        doc(
            5,
            "application/javascript",
            "var s = 'abc';",
            &[("isjs", 1), ("NumNodes", 5), ("NumKeywords", 1), ("NumWords", 4)],
            &["abc"],
        ),
        doc(
            6,
            "text/javascript",
            r#"document.write("<iframe src=x>")"#,
            &[("isjs", 1), ("NumNodes", 6), ("iframe", 1), ("NumWords", 2)],
            &["<iframe src=x>"],
        ),
        doc(
            7,
            "application/x-javascript",
            "var w = window; x = this; document = 1;",
            &[
                ("isjs", 1),
                ("NumNodes", 13),
                ("NumKeywords", 2),
                ("NumReassignmentOfSpecialObject", 3),
                ("NumWords", 10),
            ],
            &[],
        ),
        doc(
            8,
            "application/javascript",
            "a['c'](); window['setTimeout'](f, 1); o[k];",
            &[
                ("isjs", 1),
                ("NumNodes", 17),
                ("NumBracketCalls", 2),
                ("NumBracketLookups", 3),
                ("NumsetTimeout", 1),
                ("NumWords", 4),
            ],
            &["c", "setTimeout"],
        ),
        doc(
            9,
            "application/javascript",
            "new ActiveXObject('x'); el.attachEvent('onload', f); el.fireEvent('onclick'); el.clearAttributes(); \
             el.replaceNode(n);",
            &[
                ("isjs", 1),
                ("NumNodes", 25),
                ("NumKeywords", 1),
                ("NumActiveXObject", 1),
                ("NumattachEvent", 1),
                ("NumfireEvent", 1),
                ("NumclearAttributes", 1),
                ("NumreplaceNode", 1),
                ("onload", 1),
                ("NumWords", 7),
            ],
            &["x", "onload", "onclick"],
        ),
        doc(
            10,
            "application/javascript",
            "el.insertAdjacentElement('a', n); el.addEventListener('load', g); el.dispatchEvent(e); \
             setInterval(g, 5); setTimeout(g, 1);",
            &[
                ("isjs", 1),
                ("NumNodes", 28),
                ("NumFunctionCalls", 2),
                ("NuminsertAdjacentElement", 1),
                ("NumaddEventListener", 1),
                ("NumdispatchEvent", 1),
                ("NumsetInterval", 1),
                ("NumsetTimeout", 1),
                ("NumWords", 9),
            ],
            &["a", "load"],
        ),
        doc(
            11,
            "application/javascript",
            "eval(function(p,a,c,k,e,d){return p}('x',1,1,'a'.split('|'),0,{}))",
            &[
                ("isjs", 1),
                ("NumNodes", 24),
                ("NumFunctionCalls", 1),
                ("NumPackerFunctions", 1),
                ("Numeval", 1),
                ("NumKeywords", 2),
                ("NumWords", 2),
            ],
            &["x", "a", "|"],
        ),
        doc(
            12,
            "text/javascript",
            "var s = unescape('%u9090%u9090'); eval(s);",
            &[
                ("isjs", 1),
                ("NumNodes", 11),
                ("NumFunctionCalls", 2),
                ("NumPackerFunctions", 1),
                ("Numeval", 1),
                ("NumKeywords", 1),
                ("NumWords", 5),
            ],
            &["%u9090%u9090"],
        ),
        doc(
            13,
            "application/javascript",
            format!("var s = '{long_q}';"),
            &[("isjs", 1), ("NumNodes", 5), ("NumKeywords", 1), ("NumWords", 4)],
            &[&long_q],
        ),
        doc(
            14,
            "application/javascript",
            format!("var s = \"{escapes}\";"),
            &[("isjs", 1), ("NumNodes", 5), ("NumKeywords", 1), ("NumWords", 4)],
            &[&all_bytes],
        ),
        doc(
            15,
            "text/plain",
            "Connect to 10.0.0.1 or 192.168.1.255 not 256.1.1.1",
            &[("IP_address", 2), ("NumWords", 7)],
            &[],
        ),
        doc(
            16,
            "text/plain",
            "EVAL eval Eval evaluate crypt CRYPTO shell shellcode spray heap_spray embed object frame iframe form \
             forms script onload onerror onunload onbeforeload evil.js",
            &[
                ("NumWords", 22),
                ("Numeval", 3),
                ("crypt", 1),
                ("shell", 1),
                ("spray", 1),
                ("embed", 1),
                ("object", 1),
                ("frame", 1),
                ("iframe", 1),
                ("form", 1),
                ("script", 1),
                ("onload", 1),
                ("onerror", 1),
                ("onunload", 1),
                ("onbeforeload", 1),
                ("evil", 1),
            ],
            &[],
        ),
        doc(
            17,
            "text/html",
            r#"<body onload="init()"><img src=a.png onerror="x()"><div onclick='y()' on="z">t</div></body>"#,
            &[
                ("ishtml", 1),
                ("NumHTMLNodes", 5),
                ("htmlEventCount", 3),
                ("onload", 1),
                ("onerror", 1),
                ("NumWords", 6),
            ],
            &[],
        ),
        doc(
            18,
            "text/html",
            "<form action=a><input name=q><form action=b></form></form><iframe src=x></iframe><iframe>",
            &[("ishtml", 1), ("NumHTMLNodes", 7), ("form", 4), ("iframe", 3), ("NumWords", 5)],
            &[],
        ),
        doc(
            19,
            "",
            r#"<script src="data:text/javascript;base64,ZXZhbCgnMScp"></script>"#,
            &[
                ("ishtml", 1),
                ("NumHTMLNodes", 4),
                ("containsjstags", 1),
                ("scriptTagDataURLCount", 1),
                ("ishtmlwithjs", 1),
                ("NumNodes", 5),
                ("NumFunctionCalls", 1),
                ("script", 2),
                ("NumWords", 2),
            ],
            &["1"],
        ),
        doc(
            20,
            "",
            r#"<script type="text/template"><b>eval</b></script><p>x</p>"#,
            &[("ishtml", 1), ("NumHTMLNodes", 5), ("containsjstags", 1), ("script", 2), ("Numeval", 1), ("NumWords", 2)],
            &[],
        ),
        doc(
            21,
            "",
            "<html><script></script></html>",
            &[
                ("ishtml", 1),
                ("NumHTMLNodes", 4),
                ("containsjstags", 1),
                ("ishtmlwithjs", 1),
                ("NumNodes", 1),
                ("script", 2),
                ("NumWords", 1),
            ],
            &[],
        ),
        doc(
            22,
            "",
            "<html><script>function(</script></html>",
            &[
                ("ishtml", 1),
                ("NumHTMLNodes", 4),
                ("containsjstags", 1),
                ("ishtmlwithjs", 1),
                ("parsingerror", 1),
                ("NumNodes", 1),
                ("NumKeywords", 1),
                ("script", 2),
                ("NumWords", 1),
            ],
            &[],
        ),
        doc(
            23,
            "application/javascript",
            "var x = <a>b</a>;",
            &[("isjse4x", 1), ("NumNodes", 5), ("NumKeywords", 1), ("NumWords", 4)],
            &[],
        ),
        doc(
            24,
            "",
            "<html><script>var x = <a>b</a>;</script></html>",
            &[
                ("ishtml", 1),
                ("ishtmlwithjse4x", 1),
                ("containsjstags", 1),
                ("NumHTMLNodes", 4),
                ("NumNodes", 5),
                ("NumKeywords", 1),
                ("script", 2),
                ("NumWords", 4),
            ],
            &[],
        ),
        doc(25, "", "x = 1;", &[("isjs", 1), ("NumNodes", 5), ("NumWords", 3)], &[]),
        doc(26, "application/octet-stream", b"\x00\x01\x02abc eval".to_vec(), &[("NumWords", 2), ("Numeval", 1)], &[]),
        doc(27, "image/png", "<html></html>", &[("NumWords", 1)], &[]),
        doc(28, "text/html", "alert(1)", &[("ishtml", 1), ("NumHTMLNodes", 3), ("NumWords", 1)], &[]),
        doc(
            29,
            "application/javascript",
            "var s = `ab${x}c`;",
            &[("isjs", 1), ("NumNodes", 5), ("NumKeywords", 1), ("NumWords", 4)],
            &["ab${x}c"],
        ),
        doc(
            30,
            "application/javascript",
            format!("var {a30} = 1; {a30}++; var {b29x} = 3;"),
            &[("isjs", 1), ("NumNodes", 12), ("NumKeywords", 2), ("NumLongVarOrFunNames", 2), ("NumWords", 9)],
            &[],
        ),
        doc(
            31,
            "application/javascript",
            r#"var s = "é中\x41";"#,
            &[("isjs", 1), ("NumNodes", 5), ("NumKeywords", 1), ("NumWords", 4)],
            &["\u{e9}\u{4e2d}A"],
        ),
        doc(
            32,
            "text/javascript",
            "if (typeof a === 'undefined') { a = null; } else { a = true; }",
            &[("isjs", 1), ("NumNodes", 16), ("NumKeywords", 5), ("NumWords", 16)],
            &["undefined"],
        ),
        doc(
            33,
            "text/javascript",
            "function F(a, b) { this.x = a; return new F(b); }",
            &[("isjs", 1), ("NumNodes", 14), ("NumKeywords", 4), ("NumWords", 11)],
            &[],
        ),
        doc(
            34,
            "application/javascript",
            "var o = { a: 1, 'b': [2, 3], f: () => eval };",
            &[("isjs", 1), ("NumNodes", 17), ("NumKeywords", 1), ("Numeval", 1), ("NumWords", 14)],
            &["b"],
        ),
        doc(
            35,
            "",
            r#"<html><head><title>eval test</title><script>var a = 1;</script></head><body onload="f()"><script type="text/javascript">f(a);</script><iframe src="http://10.1.2.3/x"></iframe></body></html>"#,
            &[
                ("ishtml", 1),
                ("ishtmlwithjs", 1),
                ("NumHTMLNodes", 7),
                ("containsjstags", 2),
                ("htmlEventCount", 1),
                ("NumNodes", 10),
                ("NumKeywords", 1),
                ("NumFunctionCalls", 1),
                ("IP_address", 1),
                ("script", 4),
                ("iframe", 2),
                ("onload", 1),
                ("Numeval", 1),
                ("NumWords", 8),
            ],
            &[],
        ),
        doc(
            36,
            "",
            "<!DOCTYPE html>\n<!-- eval -->\n<p>one two</p>\n",
            &[("ishtml", 1), ("NumHTMLNodes", 4), ("Numeval", 1), ("NumWords", 7)],
            &[],
        ),
        doc(37, "text/javascript", "a = 1\nb = 2\n", &[("isjs", 1), ("NumNodes", 9), ("NumWords", 6)], &[]),
        doc(
            38,
            "text/javascript",
            "for (var i = 0; i < 3; i++) { if (i in o) continue; }",
            &[("isjs", 1), ("NumNodes", 17), ("NumKeywords", 5), ("NumWords", 16)],
            &[],
        ),
        doc(
            39,
            "application/javascript",
            "var e = eval; var f = Function; top = 1; x = self;",
            &[
                ("isjs", 1),
                ("NumNodes", 17),
                ("NumReassignmentOfSpecialObject", 4),
                ("NumKeywords", 2),
                ("Numeval", 1),
                ("NumWords", 14),
            ],
            &[],
        ),
        doc(
            40,
            "application/xhtml+xml",
            "<p>hi<script>unpack(/a+b/g)</script></p>",
            &[
                ("ishtml", 1),
                ("NumHTMLNodes", 5),
                ("containsjstags", 1),
                ("ishtmlwithjs", 1),
                ("NumNodes", 5),
                ("NumFunctionCalls", 1),
                ("NumPackerFunctions", 1),
                ("script", 2),
                ("NumWords", 1),
            ],
            &[],
        ),
    ]
}
