//! Aggregates over ground-truth malicious records, written as CSV files.
//!
//! Every statistic counts distinct bodies: records sharing a sample digest
//! contribute once, through the record with the lowest id.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::Serialize;

use super::dataset::sample_digest;
use crate::contentprep::media_type;
use crate::flowstore::{FlowRecord, Store};
use crate::labels::GroundTruth;

/// Features averaged per month.
pub const TREND_FEATURES: [&str; 4] = ["NumLongStrings", "Numeval", "iframe", "ShellcodeProbability"];

pub const TOP_N: usize = 10;

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrendPoint {
    pub month: String,
    pub feature: String,
    pub mean: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ReportBundle {
    pub malicious_records: usize,
    pub unique_malicious: usize,
    /// Day (UTC) and the cumulative number of distinct malicious bodies seen by then.
    pub collection_progress: Vec<(String, usize)>,
    pub top_countries: Vec<(String, usize)>,
    pub top_signatures: Vec<(String, usize)>,
    pub feature_trends: Vec<TrendPoint>,
    pub content_type_breakdown: Vec<(String, usize)>,
}

/// Count descending, then key ascending.
fn ranked(counts: BTreeMap<String, usize>, limit: Option<usize>) -> Vec<(String, usize)> {
    let mut v: Vec<(String, usize)> = counts.into_iter().collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    if let Some(n) = limit {
        v.truncate(n);
    }
    v
}

fn day(ts: &DateTime<Utc>) -> String {
    ts.format("%Y-%m-%d").to_string()
}

fn month(ts: &DateTime<Utc>) -> String {
    ts.format("%Y-%m").to_string()
}

/// First record (by id) of each distinct ground-truth malicious body.
pub fn unique_malicious(store: &Store) -> (usize, Vec<&FlowRecord>) {
    let mut firsts: BTreeMap<&str, &FlowRecord> = BTreeMap::new();
    let mut total = 0;
    for r in store.records().filter(|r| r.labels.ground_truth == GroundTruth::Malicious) {
        total += 1;
        let Some(d) = sample_digest(r) else { continue };
        let e = firsts.entry(d).or_insert(r);
        if r.record_id < e.record_id {
            *e = r;
        }
    }
    let mut v: Vec<&FlowRecord> = firsts.into_values().collect();
    v.sort_by_key(|r| r.record_id);
    (total, v)
}

pub fn build_report(store: &Store) -> ReportBundle {
    let (malicious_records, uniq) = unique_malicious(store);
    let mut countries = BTreeMap::new();
    let mut sigs = BTreeMap::new();
    let mut types = BTreeMap::new();
    let mut per_day: BTreeMap<String, usize> = BTreeMap::new();
    let mut trend: BTreeMap<(String, &str), (f64, usize)> = BTreeMap::new();
    for r in &uniq {
        if let Some(c) = r.augment.as_ref().and_then(|a| a.country.clone()) {
            *countries.entry(c).or_default() += 1;
        }
        let mut names = r.labels.signature_hits.clone();
        names.sort();
        names.dedup();
        for n in names {
            *sigs.entry(n).or_default() += 1;
        }
        let t = media_type(&r.exchange.response.headers);
        *types.entry(if t.is_empty() { "unknown".to_string() } else { t }).or_default() += 1;
        *per_day.entry(day(&r.exchange.started_at)).or_default() += 1;
        if let Some(fv) = &r.features {
            for f in TREND_FEATURES {
                let e = trend.entry((month(&r.exchange.started_at), f)).or_default();
                e.0 += fv.get(f);
                e.1 += 1;
            }
        }
    }
    let mut cumulative = 0;
    let collection_progress = per_day
        .into_iter()
        .map(|(d, n)| {
            cumulative += n;
            (d, cumulative)
        })
        .collect();
    let feature_trends = trend
        .into_iter()
        .map(|((m, f), (sum, n))| TrendPoint { month: m, feature: f.to_string(), mean: sum / n as f64, samples: n })
        .collect();
    ReportBundle {
        malicious_records,
        unique_malicious: uniq.len(),
        collection_progress,
        top_countries: ranked(countries, Some(TOP_N)),
        top_signatures: ranked(sigs, Some(TOP_N)),
        feature_trends,
        content_type_breakdown: ranked(types, None),
    }
}

fn pairs_csv(header: &str, rows: &[(String, usize)]) -> io::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header.split(','))?;
    for (k, v) in rows {
        w.write_record([k.as_str(), &v.to_string()])?;
    }
    String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

/// Writes one CSV per figure plus `summary.json`; returns the file names.
pub fn write_report(bundle: &ReportBundle, out: &Path) -> io::Result<Vec<String>> {
    fs::create_dir_all(out)?;
    let mut files: Vec<(&str, String)> = vec![
        ("collection_progress.csv", pairs_csv("day,cumulative_malicious", &bundle.collection_progress)?),
        ("top_countries.csv", pairs_csv("country,unique_samples", &bundle.top_countries)?),
        ("top_signatures.csv", pairs_csv("signature,unique_samples", &bundle.top_signatures)?),
        ("content_types.csv", pairs_csv("content_type,unique_samples", &bundle.content_type_breakdown)?),
    ];
    let mut trends = String::from("month,feature,mean,samples\n");
    for t in &bundle.feature_trends {
        trends.push_str(&format!("{},{},{:.6},{}\n", t.month, t.feature, t.mean, t.samples));
    }
    files.push(("feature_trends.csv", trends));
    let summary = serde_json::json!({
        "malicious_records": bundle.malicious_records,
        "unique_malicious": bundle.unique_malicious,
    });
    files.push(("summary.json", format!("{}\n", serde_json::to_string_pretty(&summary)?)));
    for (name, text) in &files {
        fs::write(out.join(name), text)?;
    }
    Ok(files.into_iter().map(|(n, _)| n.to_string()).collect())
}

/// Builds the bundle for `store` and writes it under `out`.
pub fn cmd_report(store: &Store, out: &Path) -> io::Result<ReportBundle> {
    let b = build_report(store);
    write_report(&b, out)?;
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::AugmentInfo;
    use crate::labels::{ScanReport, ScanTicket};
    use crate::wire::{ExchangeHead, RequestHead, ResponseHead, SeedFocus};

    fn put(store: &mut Store, url: &str, body: &[u8], country: &str, detections: u32, ts: i64) {
        let mut response = ResponseHead::new(200);
        response.headers.push("Content-Type", "text/html; charset=utf-8");
        let mut r = FlowRecord::new(ExchangeHead {
            request: RequestHead::new("GET", url),
            response,
            started_at: DateTime::from_timestamp(ts, 0).unwrap(),
            agent_id: "a".into(),
            seeder_tag: SeedFocus::Malware,
        });
        r.body_sha1 = Some(store.put_blob(body).unwrap());
        let mut t = ScanTicket::new();
        t.submit("s").unwrap();
        let verdicts = (0..detections).map(|i| (format!("engine-{i:02}"), "malicious".to_string())).collect();
        t.finish(ScanReport { engines_total: 55, verdicts }).unwrap();
        r.labels.scan_ticket = Some(t);
        r.labels.signature_hits = vec!["Sig.A".into()];
        r.labels.refresh_ground_truth();
        r.augment = Some(AugmentInfo { country: Some(country.into()), ..Default::default() });
        store.put_record(r).unwrap();
    }

    #[test]
    fn countries_and_dedup() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = Store::open(dir.path()).unwrap();
        put(&mut s, "http://a.test/", b"1", "DE", 12, 0);
        put(&mut s, "http://b.test/", b"2", "DE", 12, 0);
        put(&mut s, "http://c.test/", b"3", "DE", 12, 86_400);
        put(&mut s, "http://d.test/", b"4", "US", 12, 86_400);
        put(&mut s, "http://e.test/", b"4", "FR", 12, 86_400);
        put(&mut s, "http://f.test/", b"5", "FR", 3, 86_400);
        let b = build_report(&s);
        assert_eq!(b.top_countries, [("DE".to_string(), 3), ("US".to_string(), 1)]);
        assert_eq!(b.malicious_records, 5);
        assert_eq!(b.unique_malicious, 4);
        assert_eq!(b.top_signatures, [("Sig.A".to_string(), 4)]);
        assert_eq!(b.collection_progress, [("1970-01-01".to_string(), 2), ("1970-01-02".to_string(), 4)]);
        assert_eq!(b.content_type_breakdown, [("text/html".to_string(), 4)]);
    }

    #[test]
    fn empty_store_gives_empty_bundle_and_stable_files() {
        let dir = tempfile::tempdir().unwrap();
        let s = Store::open(&dir.path().join("s")).unwrap();
        let b = build_report(&s);
        assert_eq!(b, ReportBundle::default());
        let out = dir.path().join("r");
        cmd_report(&s, &out).unwrap();
        let first = fs::read(out.join("top_countries.csv")).unwrap();
        cmd_report(&s, &out).unwrap();
        assert_eq!(first, fs::read(out.join("top_countries.csv")).unwrap());
        assert_eq!(first, b"country,unique_samples\n");
    }
}
