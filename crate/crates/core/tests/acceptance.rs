//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when a criterion fails that is not listed in `KNOWN_GAPS`.

#[path = "acceptance/golden.rs"]
mod golden;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::time::{Duration, Instant};

use chrono::{TimeZone, Utc};
use sha1::{Digest, Sha1};

use flowlab_core::augment::AugmentInfo;
use flowlab_core::contentprep::{decode_body, encode_chain, DecodeLimits, DEFAULT_BOMB_RATIO, DEFAULT_OUTPUT_CAP};
use flowlab_core::features::{extract_with, ExtractConfig, FeatureVector};
use flowlab_core::flowstore::{FlowRecord, Store};
use flowlab_core::forest::{
    best_split, metrics, train_rows, Category, ConfusionMatrix, ForestConfig, Samples, SplitPolicy, XorShift64,
};
use flowlab_core::labels::{ground_truth, GroundTruth, ScanReport, ScanStatus, ScanTicket};
use flowlab_core::pipeline::{build_report, cmd_pipeline, cmd_train, generate, write_fixtures, Config, RunOverrides};
use flowlab_core::wire::http::{chunk_encode, Headers, RequestHead, ResponseHead};
use flowlab_core::wire::icap::{encapsulate, encapsulate_request, exchange_from_message, parse_icap, SectionToken};
use flowlab_core::wire::{ExchangeHead, HttpExchange, SeedFocus};
use flowlab_core::Exec;

type Outcome = Result<String, String>;

/// Criteria that cannot pass as stated, with the reason.
const KNOWN_GAPS: &[(usize, &str)] = &[(
    1,
    "the published figures are truncated, not rounded: 8001/8014 = 0.99838, 9987/12078 = 0.82688 and \
     17988/20092 = 0.89528 sit 0.00008 above the printed 0.9983, 0.8268 and 0.8952",
)];

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_secs: u64) -> Result<(), String> {
    check(elapsed <= Duration::from_secs(limit_secs), || format!("took {elapsed:.2?}, limit {limit_secs}s"))
}

// 1. metric reproduction

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let m = metrics(&ConfusionMatrix::new(8001, 13, 2091, 9987));
    let rows = [
        ("malware precision", m.malware.precision, 0.9983),
        ("malware recall", m.malware.recall, 0.7928),
        ("malware accuracy", m.malware.accuracy, 0.8952),
        ("benign precision", m.benign.precision, 0.8268),
        ("benign recall", m.benign.recall, 0.9987),
        ("benign accuracy", m.benign.accuracy, 0.8952),
    ];
    let mut bad = Vec::new();
    for (name, got, want) in rows {
        let got = got.ok_or(format!("{name} undefined"))?;
        if (got - want).abs() > 0.00005 {
            bad.push(format!("{name} {got:.6} vs {want}"));
        }
    }
    within(t.elapsed(), 1)?;
    if bad.is_empty() {
        Ok("all six metrics within 0.00005".into())
    } else {
        Err(bad.join("; "))
    }
}

// 2. ground-truth threshold and ticket lifecycle

fn report_with(detections: u32, total: u32, rng: &mut XorShift64) -> ScanReport {
    let mut idx: Vec<u32> = (0..total).collect();
    rng.shuffle(&mut idx);
    let hits: BTreeSet<u32> = idx[..detections as usize].iter().copied().collect();
    let verdicts = (0..total)
        .map(|i| (format!("engine{i:02}"), if hits.contains(&i) { "malicious" } else { "clean" }.to_string()))
        .collect();
    ScanReport { engines_total: total, verdicts }
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Submit,
    Finish,
    Fail,
}

/// Allowed edges, written out independently of the implementation.
fn oracle_next(from: ScanStatus, op: Op) -> Option<ScanStatus> {
    use ScanStatus::*;
    match (from, op) {
        (Unscanned, Op::Submit) => Some(ScanInProgress),
        (Unscanned, Op::Fail) => Some(Error),
        (ScanInProgress, Op::Finish) => Some(ScanFinished),
        (ScanInProgress, Op::Fail) => Some(Error),
        _ => None,
    }
}

fn criterion_2() -> Outcome {
    let t = Instant::now();
    let mut rng = XorShift64::new(2);
    for i in 0..1000 {
        let d = match i % 4 {
            0 => 10,
            1 => 9,
            _ => rng.below(56) as u32,
        };
        let mut ticket = ScanTicket::new();
        ticket.submit(format!("scan-{i}")).map_err(|e| e.to_string())?;
        ticket.finish(report_with(d, 55, &mut rng)).map_err(|e| e.to_string())?;
        let want = if d >= 10 { GroundTruth::Malicious } else { GroundTruth::Benign };
        check(ground_truth(&ticket) == want, || format!("{d} detections gave {:?}", ground_truth(&ticket)))?;
        check(ticket.detections == Some(d), || format!("detections {:?} vs {d}", ticket.detections))?;
    }

    // every sequence of operations up to length 5
    let ops = [Op::Submit, Op::Finish, Op::Fail];
    let mut sequences = 0usize;
    let mut rejected = 0usize;
    for len in 0..=5u32 {
        for code in 0..3usize.pow(len) {
            let mut ticket = ScanTicket::new();
            let mut c = code;
            for _ in 0..len {
                let op = ops[c % 3];
                c /= 3;
                let before = ticket.clone();
                let expected = oracle_next(before.status, op);
                let r = match op {
                    Op::Submit => ticket.submit("s"),
                    Op::Finish => ticket.finish(report_with(3, 55, &mut rng)),
                    Op::Fail => ticket.fail("backend"),
                };
                match (expected, r) {
                    (Some(next), Ok(())) => check(ticket.status == next, || format!("{op:?} led to {}", ticket.status))?,
                    (None, Err(_)) => {
                        rejected += 1;
                        check(ticket == before, || format!("rejected {op:?} changed the ticket"))?;
                    }
                    (Some(_), Err(e)) => return Err(format!("legal {op:?} from {} refused: {e}", before.status)),
                    (None, Ok(())) => return Err(format!("illegal {op:?} from {} accepted", before.status)),
                }
                check(ticket.detections.is_some() == (ticket.status == ScanStatus::ScanFinished), || {
                    format!("detections {:?} in {}", ticket.detections, ticket.status)
                })?;
                if let (Some(d), Some(n)) = (ticket.detections, ticket.engines_total) {
                    check(d <= n, || format!("{d} detections of {n}"))?;
                }
                check(
                    ground_truth(&ticket) == GroundTruth::Undetermined || ticket.status == ScanStatus::ScanFinished,
                    || "ground truth outside scan_finished".into(),
                )?;
            }
            sequences += 1;
        }
    }
    // the edge table itself, over all status pairs
    for from in ScanStatus::ALL {
        for to in ScanStatus::ALL {
            let legal = [Op::Submit, Op::Finish, Op::Fail].iter().any(|&op| oracle_next(from, op) == Some(to));
            check(from.can_transition(to) == legal, || format!("edge {from} -> {to}"))?;
        }
    }
    within(t.elapsed(), 5)?;
    Ok(format!("1000 tickets on the 10-detection boundary; {sequences} sequences, {rejected} illegal steps rejected"))
}

// 3. store deduplication and report tallies

const COUNTRIES: &[&str] = &["DE", "US", "NL", "RU", "CN", "FR", "BR", "UA", "GB", "JP", "KR", "IN", "CA"];
const SIGNATURES: &[&str] = &["Sig.A", "Sig.B", "Sig.C", "Sig.D", "Sig.E"];
const TYPES: &[&str] = &["text/html; charset=utf-8", "TEXT/HTML", "application/javascript", "application/x-shockwave-flash", ""];
const TREND: [&str; 4] = ["NumLongStrings", "Numeval", "iframe", "ShellcodeProbability"];

fn sha1_oracle(data: &[u8]) -> String {
    hex::encode(Sha1::digest(data))
}

fn criterion_3() -> Outcome {
    let t = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path().join("store");
    let mut store = Store::open(&root).map_err(|e| e.to_string())?;
    let mut rng = XorShift64::new(3);

    let pool: Vec<Vec<u8>> = (0..700)
        .map(|i| {
            let n = 20 + rng.below(400);
            let mut b: Vec<u8> = format!("<html>{i}:").into_bytes();
            b.extend((0..n).map(|_| b'a' + rng.below(26) as u8));
            b
        })
        .collect();
    let encoded: Vec<Vec<u8>> = pool.iter().map(|b| encode_chain(b, &["gzip"])).collect();

    let mut distinct: BTreeSet<Vec<u8>> = BTreeSet::new();
    let base = Utc.with_ymd_and_hms(2017, 1, 1, 0, 0, 0).unwrap().timestamp_millis();
    for _ in 0..5000 {
        let k = if rng.below(3) == 0 { rng.below(40) } else { rng.below(pool.len()) };
        let gz = rng.below(4) == 0;
        let mut rec = FlowRecord::new(ExchangeHead {
            request: RequestHead::new("GET", &format!("http://h{}.test/{k}", rng.below(50))),
            response: {
                let mut r = ResponseHead::new(200);
                let ty = TYPES[rng.below(TYPES.len())];
                if !ty.is_empty() {
                    r.headers.push("Content-Type", ty);
                }
                r
            },
            started_at: Utc.timestamp_millis_opt(base + (rng.below(180 * 86_400) as i64) * 1000).unwrap(),
            agent_id: "agent-00".into(),
            seeder_tag: SeedFocus::Malware,
        });
        if rng.below(20) != 0 {
            if gz {
                let a = store.put_blob(&encoded[k]).map_err(|e| e.to_string())?;
                let b = store.put_blob(&pool[k]).map_err(|e| e.to_string())?;
                // second insertion returns the same digest
                check(store.put_blob(&pool[k]).map_err(|e| e.to_string())? == b, || "re-put digest differs".into())?;
                distinct.insert(encoded[k].clone());
                distinct.insert(pool[k].clone());
                rec.body_sha1 = Some(a);
                rec.decoded_sha1 = Some(b);
            } else {
                rec.body_sha1 = Some(store.put_blob(&pool[k]).map_err(|e| e.to_string())?);
                distinct.insert(pool[k].clone());
            }
        }
        rec.labels.ground_truth = match rng.below(5) {
            0 | 1 => GroundTruth::Malicious,
            2 => GroundTruth::Benign,
            _ => GroundTruth::Undetermined,
        };
        for _ in 0..rng.below(4) {
            rec.labels.signature_hits.push(SIGNATURES[rng.below(SIGNATURES.len())].to_string());
        }
        if rng.below(6) != 0 {
            rec.augment = Some(AugmentInfo {
                country: Some(COUNTRIES[rng.below(COUNTRIES.len())].to_string()),
                ..Default::default()
            });
        }
        if rng.below(5) != 0 {
            let mut fv = FeatureVector::default();
            for f in TREND {
                fv.set(f, rng.below(9) as f64);
            }
            rec.features = Some(fv);
        }
        store.put_record(rec).map_err(|e| e.to_string())?;
    }
    store.flush().map_err(|e| e.to_string())?;
    drop(store);
    let store = Store::open_read_only(&root).map_err(|e| e.to_string())?;

    // dedup invariant
    check(store.len() == 5000, || format!("{} records after reopen", store.len()))?;
    check(store.blob_count() == distinct.len(), || format!("{} blobs for {} distinct bodies", store.blob_count(), distinct.len()))?;
    for r in store.records() {
        for d in [&r.body_sha1, &r.decoded_sha1].into_iter().flatten() {
            let data = store.get_blob(d).map_err(|e| e.to_string())?;
            check(sha1_oracle(&data) == *d, || format!("blob {d} does not hash to its name"))?;
        }
    }

    // brute-force tallies: scan everything once per distinct body
    let records: Vec<&FlowRecord> = store.records().collect();
    let key = |r: &FlowRecord| r.decoded_sha1.clone().or_else(|| r.body_sha1.clone());
    let malicious: Vec<&FlowRecord> =
        records.iter().copied().filter(|r| r.labels.ground_truth == GroundTruth::Malicious).collect();
    let keys: BTreeSet<String> = malicious.iter().filter_map(|r| key(r)).collect();
    let mut firsts: Vec<&FlowRecord> = Vec::new();
    for k in &keys {
        let mut best: Option<&FlowRecord> = None;
        for r in &malicious {
            if key(r).as_deref() == Some(k.as_str()) && best.is_none_or(|b| r.record_id < b.record_id) {
                best = Some(r);
            }
        }
        firsts.push(best.unwrap());
    }
    let rank = |m: HashMap<String, usize>, limit: usize| {
        let mut v: Vec<(String, usize)> = m.into_iter().collect();
        v.sort_by(|a, b| (std::cmp::Reverse(a.1), &a.0).cmp(&(std::cmp::Reverse(b.1), &b.0)));
        v.truncate(limit);
        v
    };
    let mut countries = HashMap::new();
    let mut sigs = HashMap::new();
    let mut types = HashMap::new();
    let mut days: BTreeMap<String, usize> = BTreeMap::new();
    let mut trend: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for r in &firsts {
        if let Some(c) = r.augment.as_ref().and_then(|a| a.country.clone()) {
            *countries.entry(c).or_insert(0) += 1;
        }
        for s in r.labels.signature_hits.iter().collect::<BTreeSet<_>>() {
            *sigs.entry(s.clone()).or_insert(0) += 1;
        }
        let ty = r
            .exchange
            .response
            .headers
            .get("content-type")
            .map(|v| v.split(';').next().unwrap().trim().to_lowercase())
            .filter(|v| !v.is_empty())
            .unwrap_or_else(|| "unknown".into());
        *types.entry(ty).or_insert(0) += 1;
        *days.entry(r.exchange.started_at.format("%Y-%m-%d").to_string()).or_insert(0) += 1;
        if let Some(fv) = &r.features {
            for f in TREND {
                trend
                    .entry((r.exchange.started_at.format("%Y-%m").to_string(), f.to_string()))
                    .or_default()
                    .push(fv.get(f));
            }
        }
    }
    let progress: Vec<(String, usize)> = days
        .iter()
        .scan(0, |acc, (d, n)| {
            *acc += n;
            Some((d.clone(), *acc))
        })
        .collect();

    let b = build_report(&store);
    check(b.malicious_records == malicious.len(), || format!("malicious {} vs {}", b.malicious_records, malicious.len()))?;
    check(b.unique_malicious == firsts.len(), || format!("unique {} vs {}", b.unique_malicious, firsts.len()))?;
    check(b.top_countries == rank(countries, 10), || "top countries differ".into())?;
    check(b.top_signatures == rank(sigs, 10), || "top signatures differ".into())?;
    check(b.content_type_breakdown == rank(types, usize::MAX), || "content types differ".into())?;
    check(b.collection_progress == progress, || "collection progress differs".into())?;
    check(b.feature_trends.len() == trend.len(), || "trend point count differs".into())?;
    for p in &b.feature_trends {
        let v = &trend[&(p.month.clone(), p.feature.clone())];
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        check(p.samples == v.len() && (p.mean - mean).abs() < 1e-12, || format!("trend {} {}", p.month, p.feature))?;
    }
    within(t.elapsed(), 30)?;
    Ok(format!("{} blobs, {} unique malicious bodies, tallies match", store.blob_count(), firsts.len()))
}

// 4. feature extractor

fn criterion_4() -> Outcome {
    let t = Instant::now();
    let docs = golden::corpus();
    check(docs.len() == 40, || format!("{} golden documents", docs.len()))?;
    let mut covered = BTreeSet::new();
    let mut mismatches = Vec::new();
    for d in &docs {
        let got = extract_with(&d.body, d.content_type, &ExtractConfig::default());
        let want = golden::expected(d);
        for (name, w) in want {
            let g = got.get(name);
            let ok = if golden::FLOAT_COLUMNS.contains(&name) { (g - w).abs() <= 1e-9 } else { g == w };
            if !ok {
                mismatches.push(format!("{}: {name} = {g}, expected {w}", d.name));
            }
            if w != 0.0 {
                covered.insert(name);
            }
        }
    }
    check(mismatches.is_empty(), || mismatches.join("; "))?;
    check(covered.len() == 58, || {
        let all: Vec<&str> = flowlab_core::features::FEATURE_NAMES.to_vec();
        format!("columns never nonzero: {:?}", all.iter().filter(|n| !covered.contains(*n)).collect::<Vec<_>>())
    })?;

    // totality over random bodies
    let mut rng = XorShift64::new(4);
    let alphabet: &[u8] = b"<>/=\"' ;(){}[]+.,\\`$-!?abcdefghijklmnopqrstuvwxyz0123456789\n\t%";
    let types = ["", "text/html", "application/javascript", "text/plain", "application/octet-stream"];
    for i in 0..10_000 {
        let n = rng.below(600);
        let body: Vec<u8> = if i % 2 == 0 {
            (0..n).map(|_| rng.next_u64() as u8).collect()
        } else {
            (0..n).map(|_| alphabet[rng.below(alphabet.len())]).collect()
        };
        let ty = types[rng.below(types.len())];
        let v = std::panic::catch_unwind(|| extract_with(&body, ty, &ExtractConfig::default()))
            .map_err(|_| format!("panic on random body #{i}"))?;
        v.check_bounds().map_err(|e| format!("body #{i}: {e}"))?;
        check(v.get("Filesize") == body.len() as f64, || format!("body #{i}: Filesize"))?;
    }
    within(t.elapsed(), 60)?;
    Ok("40 golden documents match on all 58 columns; 10000 random bodies within bounds".into())
}

// 5. end-to-end run

fn criterion_5() -> Outcome {
    let t = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = generate(5, 60, 40, 5);
    let fx = write_fixtures(&spec, dir.path()).map_err(|e| e.to_string())?;
    let cfg = Config::load(&fx.config).map_err(|e| e.to_string())?;
    let summary = cmd_pipeline(&cfg, &RunOverrides::default()).map_err(|e| e.to_string())?;
    check(Some(summary.records) == summary.synth_requests, || {
        format!("{} records, server ledger {:?}", summary.records, summary.synth_requests)
    })?;
    let store = Store::open_read_only(&cfg.store.root).map_err(|e| e.to_string())?;
    let (_, report) =
        cmd_train(&store, &cfg.forest, SplitPolicy::Scaled, 5, Exec::Parallel).map_err(|e| e.to_string())?;
    let acc = report.metrics.malware.accuracy.ok_or("accuracy undefined")?;
    check(acc >= 0.95, || format!("held-out accuracy {acc:.4}"))?;
    within(t.elapsed(), 120)?;
    Ok(format!(
        "{} records = server ledger; test {}+{}; accuracy {acc:.4}",
        summary.records, report.test_malicious, report.test_benign
    ))
}

// 6. ICAP framing

fn random_exchange(rng: &mut XorShift64) -> HttpExchange {
    let methods = ["GET", "POST", "HEAD", "PUT"];
    let names = ["Accept", "User-Agent", "Cookie", "X-Trace", "Cache-Control", "Referer"];
    let word = |rng: &mut XorShift64| -> String { (0..1 + rng.below(12)).map(|_| (b'a' + rng.below(26) as u8) as char).collect() };
    let mut request = RequestHead::new(
        methods[rng.below(methods.len())],
        &format!("http://{}.test/{}?q={}", word(rng), word(rng), rng.below(1000)),
    );
    request.headers.push("Host", "example.test");
    for _ in 0..rng.below(5) {
        let v = format!("{} {}", word(rng), word(rng));
        request.headers.push(names[rng.below(names.len())], v);
    }
    let mut response = ResponseHead::new([200, 204, 301, 404, 500][rng.below(5)]);
    for _ in 0..rng.below(5) {
        let v = word(rng);
        response.headers.push(names[rng.below(names.len())], v);
    }
    let body: Vec<u8> = if rng.below(5) == 0 { Vec::new() } else { (0..rng.below(3000)).map(|_| rng.next_u64() as u8).collect() };
    HttpExchange {
        head: ExchangeHead {
            request,
            response,
            started_at: Utc.timestamp_millis_opt(1_500_000_000_000 + rng.below(100_000_000_000) as i64).unwrap(),
            agent_id: format!("agent-{:02}", rng.below(100)),
            seeder_tag: [SeedFocus::Benign, SeedFocus::Malware, SeedFocus::Phishing][rng.below(3)],
        },
        body,
    }
}

fn encapsulated_line(msg: &[u8]) -> Option<String> {
    let text = String::from_utf8_lossy(msg);
    text.split("\r\n").find(|l| l.starts_with("Encapsulated: ")).map(str::to_string)
}

fn criterion_6() -> Outcome {
    let t = Instant::now();
    let mut rng = XorShift64::new(6);
    for i in 0..1000 {
        let ex = random_exchange(&mut rng);
        let bytes = encapsulate(&ex);
        let msg = parse_icap(&bytes).map_err(|e| format!("exchange #{i}: {e}"))?;
        let back = exchange_from_message(&msg).map_err(|e| format!("exchange #{i}: {e}"))?;
        check(back == ex, || format!("exchange #{i} changed in the round trip"))?;
        check(msg.to_bytes() == bytes, || format!("exchange #{i} re-serialises differently"))?;
    }

    // hand-built fixtures; header lengths counted by hand
    let head = |ty: Option<&str>| {
        let mut req = RequestHead::new("GET", "http://a.test/");
        req.headers.push("Host", "a.test"); // 29 + 14 + 2 = 45 bytes
        let mut res = ResponseHead::new(200);
        if let Some(ty) = ty {
            res.headers.push("Content-Type", ty); // 17 + 25 + 2 = 44 bytes
        }
        ExchangeHead { request: req, response: res, started_at: Utc.timestamp_millis_opt(0).unwrap(), agent_id: "a".into(), seeder_tag: SeedFocus::Benign }
    };
    let with_body = encapsulate(&HttpExchange { head: head(Some("text/html")), body: b"<p>x</p>".to_vec() });
    let empty = encapsulate(&HttpExchange { head: head(Some("text/html")), body: Vec::new() });
    let get = encapsulate_request("icap://localhost/reqmod", &head(None).request, b"", &Headers::new());
    let mut post_req = RequestHead::new("POST", "http://a.test/login");
    post_req.headers.push("Host", "a.test");
    post_req.headers.push("Content-Length", "7"); // 35 + 14 + 19 + 2 = 70 bytes
    let post = encapsulate_request("icap://localhost/reqmod", &post_req, b"u=a&p=b", &Headers::new());
    let literal: &[u8] = b"RESPMOD icap://x/y ICAP/1.0\r\nHost: x\r\nEncapsulated: res-hdr=0, res-body=38\r\n\r\n\
HTTP/1.1 200 OK\r\nContent-Length: 5\r\n\r\n5\r\nhello\r\n0\r\n\r\n";

    let fixtures: [(&str, &[u8], &str, Vec<(SectionToken, usize)>, &[u8]); 5] = [
        (
            "respmod with body",
            &with_body,
            "Encapsulated: req-hdr=0, res-hdr=45, res-body=89",
            vec![(SectionToken::ReqHdr, 0), (SectionToken::ResHdr, 45), (SectionToken::ResBody, 89)],
            b"<p>x</p>",
        ),
        (
            "respmod without body",
            &empty,
            "Encapsulated: req-hdr=0, res-hdr=45, null-body=89",
            vec![(SectionToken::ReqHdr, 0), (SectionToken::ResHdr, 45), (SectionToken::NullBody, 89)],
            b"",
        ),
        (
            "reqmod GET",
            &get,
            "Encapsulated: req-hdr=0, null-body=45",
            vec![(SectionToken::ReqHdr, 0), (SectionToken::NullBody, 45)],
            b"",
        ),
        (
            "reqmod POST",
            &post,
            "Encapsulated: req-hdr=0, req-body=70",
            vec![(SectionToken::ReqHdr, 0), (SectionToken::ReqBody, 70)],
            b"u=a&p=b",
        ),
        (
            "literal respmod",
            literal,
            "Encapsulated: res-hdr=0, res-body=38",
            vec![(SectionToken::ResHdr, 0), (SectionToken::ResBody, 38)],
            b"hello",
        ),
    ];
    for (name, bytes, line, offsets, body) in fixtures {
        check(encapsulated_line(bytes).as_deref() == Some(line), || {
            format!("{name}: {:?}", encapsulated_line(bytes))
        })?;
        let msg = parse_icap(bytes).map_err(|e| format!("{name}: {e}"))?;
        check(msg.encapsulated == offsets, || format!("{name}: parsed {:?}", msg.encapsulated))?;
        check(msg.body() == body, || format!("{name}: body {:?}", String::from_utf8_lossy(msg.body())))?;
        check(msg.to_bytes() == bytes, || format!("{name}: not byte-identical after re-serialising"))?;
    }
    within(t.elapsed(), 10)?;
    Ok("1000 exchanges round-trip; 5 fixtures byte-exact".into())
}

// 7. classifier mechanics

/// Exhaustive search with exact rational scores. Minimising the summed child
/// `w * gini` is the same as maximising `q_l / w_l + q_r / w_r` with
/// `q = a^2 + b^2`, compared here by cross-multiplication.
fn oracle_split(rows: &[Vec<f64>], labels: &[u8], weights: &[u64], features: &[usize]) -> Option<(usize, f64)> {
    let tally = |pick: &dyn Fn(usize) -> bool| {
        let mut c = [0u64; 2];
        for i in 0..rows.len() {
            if pick(i) {
                c[labels[i] as usize] += weights[i];
            }
        }
        c
    };
    // (numerator, denominator) of q_l / w_l + q_r / w_r
    let purity = |l: [u64; 2], r: [u64; 2]| -> (u128, u128) {
        let (wl, wr) = ((l[0] + l[1]) as u128, (r[0] + r[1]) as u128);
        let (ql, qr) = ((l[0] * l[0] + l[1] * l[1]) as u128, (r[0] * r[0] + r[1] * r[1]) as u128);
        (ql * wr + qr * wl, wl * wr)
    };
    let all = tally(&|_| true);
    let parent_frac = ((all[0] * all[0] + all[1] * all[1]) as u128, (all[0] + all[1]) as u128);
    let mut best: Option<(usize, f64, (u128, u128))> = None;
    for &f in features {
        let vals: BTreeSet<u64> = rows.iter().map(|r| r[f].to_bits()).collect();
        let mut vals: Vec<f64> = vals.into_iter().map(f64::from_bits).collect();
        vals.sort_by(f64::total_cmp);
        for w in vals.windows(2) {
            let thr = (w[0] + w[1]) / 2.0;
            let l = tally(&|i| rows[i][f] <= thr);
            let r = [all[0] - l[0], all[1] - l[1]];
            let p = purity(l, r);
            let better = match best {
                None => true,
                Some((_, _, b)) => p.0 * b.1 > b.0 * p.1,
            };
            if better {
                best = Some((f, thr, p));
            }
        }
    }
    best.filter(|(_, _, p)| p.0 * parent_frac.1 > parent_frac.0 * p.1).map(|(f, t, _)| (f, t))
}

fn criterion_7() -> Outcome {
    let t = Instant::now();
    let mut rng = XorShift64::new(7);
    let mut splits = 0;
    for inst in 0..200 {
        let n = 2 + rng.below(24);
        let nf = 1 + rng.below(5);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..nf).map(|_| rng.below(7) as f64 / 2.0).collect()).collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.below(2) as u8).collect();
        let weights: Vec<u64> = labels.iter().map(|&l| if l == 1 { 10 } else { 1 + rng.below(3) as u64 }).collect();
        let mut features: Vec<usize> = (0..nf).collect();
        rng.shuffle(&mut features);
        features.truncate(1 + rng.below(nf));

        let views: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let wf: Vec<f64> = weights.iter().map(|&w| w as f64).collect();
        let s = Samples { rows: &views, labels: &labels, weights: &wf };
        let idx: Vec<usize> = (0..n).collect();
        let got = best_split(&s, &idx, &features).map(|b| (b.feature, b.threshold));
        let want = oracle_split(&rows, &labels, &weights, &features);
        check(got == want, || format!("instance {inst}: best_split {got:?}, oracle {want:?}"))?;
        splits += usize::from(want.is_some());
    }

    // one unlimited tree on consistent data
    let rows: Vec<Vec<f64>> = (0..300).map(|_| (0..5).map(|_| rng.below(4) as f64).collect()).collect();
    let labels: Vec<Category> = rows
        .iter()
        .map(|r| if (r[0] as u32 ^ r[1] as u32 ^ r[2] as u32) & 1 == 1 { Category::Malicious } else { Category::Benign })
        .collect();
    let views: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    let cfg = ForestConfig { n_trees: 1, bootstrap: false, mtry: Some(5), ..ForestConfig::default() };
    let model = train_rows(&views, &labels, &cfg, Exec::Sequential).map_err(|e| e.to_string())?;
    let errors = rows
        .iter()
        .zip(&labels)
        .filter(|(r, &c)| model.predict_row(r).map(|p| p.category != c).unwrap_or(true))
        .count();
    check(errors == 0, || format!("{errors} training errors"))?;

    // same seed, same bytes
    let cfg = ForestConfig { n_trees: 16, seed: 99, ..ForestConfig::default() };
    let a = train_rows(&views, &labels, &cfg, Exec::Parallel).map_err(|e| e.to_string())?.to_json();
    let b = train_rows(&views, &labels, &cfg, Exec::Sequential).map_err(|e| e.to_string())?.to_json();
    let c = train_rows(&views, &labels, &ForestConfig { seed: 100, ..cfg.clone() }, Exec::Parallel)
        .map_err(|e| e.to_string())?
        .to_json();
    check(a == b, || "same seed gave different models".into())?;
    check(a != c, || "different seeds gave the same model".into())?;
    within(t.elapsed(), 30)?;
    Ok(format!("200 instances agree with the oracle ({splits} with a split); zero training error; deterministic"))
}

// 8. decoding

fn criterion_8() -> Outcome {
    let t = Instant::now();
    let limits = DecodeLimits::default();
    check(limits.bomb_ratio == 128 && DEFAULT_BOMB_RATIO == 128, || "bomb ratio is not 128".into())?;
    check(limits.cap == 64 << 20 && DEFAULT_OUTPUT_CAP == 64 << 20, || "output cap is not 64 MiB".into())?;

    let mut rng = XorShift64::new(8);
    let codings = ["gzip", "deflate", "deflate-raw"];
    for i in 0..500 {
        let n = rng.below(20_000);
        let payload: Vec<u8> = match i % 3 {
            0 => (0..n).map(|_| rng.next_u64() as u8).collect(),
            1 => (0..n).map(|_| b"abc <script>"[rng.below(12)]).collect(),
            _ => b"window.location = 'x';\n".repeat(n / 20),
        };
        let chain: Vec<&str> = (0..1 + rng.below(3)).map(|_| codings[rng.below(3)]).collect();
        let mut wire = encode_chain(&payload, &chain);
        let mut headers = Headers::new();
        let names: Vec<&str> = chain.iter().map(|c| if *c == "deflate-raw" { "deflate" } else { c }).collect();
        headers.push("Content-Encoding", names.join(", "));
        if rng.below(2) == 0 {
            wire = chunk_encode(&wire);
            headers.push("Transfer-Encoding", "chunked");
        }
        // repetitive payloads can expand past the guard; those must be cut
        // under the default limits and round-trip under a looser ratio
        let over = payload.len() > wire.len() * DEFAULT_BOMB_RATIO;
        if over {
            let d = decode_body(&wire, &headers, &limits).map_err(|e| format!("payload #{i} {chain:?}: {e}"))?;
            check(d.truncated, || format!("payload #{i}: {} bytes from {} not cut", payload.len(), wire.len()))?;
        }
        let lim = if over { DecodeLimits { bomb_ratio: 1 << 20, ..limits } } else { limits };
        let d = decode_body(&wire, &headers, &lim).map_err(|e| format!("payload #{i} {chain:?}: {e}"))?;
        check(d.bytes == payload && !d.truncated, || format!("payload #{i} {chain:?} did not round-trip"))?;
        let mut undone = names.clone();
        undone.reverse();
        check(d.applied_codings == undone, || format!("payload #{i}: applied {:?}", d.applied_codings))?;
    }

    // bomb guard: output is cut exactly at 128x the on-wire size
    let mut seen = (false, false);
    for n in (1000..9000).step_by(37) {
        let zeros = vec![0u8; n];
        let wire = encode_chain(&zeros, &["gzip"]);
        let mut headers = Headers::new();
        headers.push("Content-Encoding", "gzip");
        let d = decode_body(&wire, &headers, &limits).map_err(|e| e.to_string())?;
        let bound = wire.len() * 128;
        check(d.truncated == (n > bound), || format!("{n} zeros in {} bytes: truncated={}", wire.len(), d.truncated))?;
        check(d.bytes.len() == n.min(bound), || format!("{n} zeros: {} bytes out", d.bytes.len()))?;
        if d.truncated {
            seen.1 = true;
        } else {
            seen.0 = true;
        }
    }
    check(seen.0 && seen.1, || "boundary not crossed".into())?;
    let huge = encode_chain(&vec![0u8; 8 << 20], &["gzip", "gzip"]);
    let mut headers = Headers::new();
    headers.push("Content-Encoding", "gzip, gzip");
    let d = decode_body(&huge, &headers, &limits).map_err(|e| e.to_string())?;
    check(d.truncated && d.bytes.len() == huge.len() * 128, || "nested bomb not cut".into())?;
    within(t.elapsed(), 10)?;
    Ok("500 chains round-trip; guard cuts at 128x the input".into())
}

fn main() {
    let criteria: [(usize, &str, fn() -> Outcome); 8] = [
        (1, "metric reproduction", criterion_1),
        (2, "ground-truth threshold and ticket lifecycle", criterion_2),
        (3, "store dedup and report tallies", criterion_3),
        (4, "feature extractor", criterion_4),
        (5, "end-to-end synthetic run", criterion_5),
        (6, "ICAP conformance", criterion_6),
        (7, "classifier mechanics", criterion_7),
        (8, "decoding", criterion_8),
    ];
    let mut unexpected = 0;
    for (n, name, f) in criteria {
        let start = Instant::now();
        let r = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match r {
            Ok(msg) => println!("PASS {n} {name} ({secs:.2}s): {msg}"),
            Err(msg) => {
                let known = KNOWN_GAPS.iter().find(|(k, _)| *k == n);
                println!("FAIL {n} {name} ({secs:.2}s): {msg}");
                match known {
                    Some((_, why)) => println!("     known gap: {why}"),
                    None => unexpected += 1,
                }
            }
        }
    }
    if unexpected > 0 {
        std::process::exit(1);
    }
}
