//! Turning gateway emissions into stored flow records.

use serde_json::Value;

use crate::augment::Augmenter;
use crate::contentprep::{decode_body, media_type, DecodeLimits, DecodedBody};
use crate::features::extract_features;
use crate::flowstore::{FlowRecord, Store, StoreError, FLAGS_KEY};
use crate::labels::{schedule_multiengine, LabelSet};
use crate::wire::http::split_http_url;
use crate::wire::FlowEmission;

/// Record flag set when the body could not be decoded.
pub const DECODE_ERROR: &str = "decode_error";
/// Record flag set when decoding stopped at the size cap.
pub const DECODE_TRUNCATED: &str = "decode_truncated";
/// Extra key holding the blob digest of an upload body.
pub const REQUEST_BODY_KEY: &str = "wire:request_body";

#[derive(Debug, Clone, Default)]
pub struct Committer {
    pub augmenter: Augmenter,
    pub limits: DecodeLimits,
}

impl Committer {
    pub fn new(augmenter: Augmenter) -> Self {
        Committer { augmenter, limits: DecodeLimits::default() }
    }

    /// Stores the bodies, derives labels, augmentation and features, and
    /// appends the record. Returns the new record id.
    pub fn commit(&self, store: &mut Store, em: FlowEmission) -> Result<u64, StoreError> {
        let FlowEmission { exchange, request_body, mut flags, verdict, server_ip } = em;
        let mut rec = FlowRecord::new(exchange.head);
        let body = exchange.body;
        rec.body_sha1 = Some(store.put_blob(&body)?);

        let headers = &rec.exchange.response.headers;
        let decoded = match decode_body(&body, headers, &self.limits) {
            Ok(d) => {
                if d.truncated {
                    flags.push(DECODE_TRUNCATED.into());
                }
                rec.decoded_sha1 = Some(store.put_blob(&d.bytes)?);
                d
            }
            Err(e) => {
                log::debug!("decode failed for {}: {e}", rec.exchange.request.url);
                flags.push(DECODE_ERROR.into());
                DecodedBody::plain(body, &media_type(headers))
            }
        };
        rec.features = Some(extract_features(&decoded));

        let mut labels = verdict.as_ref().map(LabelSet::from_verdict).unwrap_or_default();
        labels.scan_ticket = schedule_multiengine(&labels);
        labels.refresh_ground_truth();
        rec.labels = labels;

        let host = split_http_url(&rec.exchange.request.url).map(|(h, _, _)| h);
        rec.augment = self.augmenter.augment(server_ip.as_deref(), host.as_deref());

        if let Some(b) = request_body {
            let d = store.put_blob(&b)?;
            rec.extra.insert(REQUEST_BODY_KEY.into(), Value::String(d));
        }
        if !flags.is_empty() {
            flags.sort();
            flags.dedup();
            rec.extra.insert(FLAGS_KEY.into(), Value::Array(flags.into_iter().map(Value::String).collect()));
        }
        store.put_record(rec)
    }
}

/// Recomputes features for every record from its stored body.
///
/// Returns how many records changed.
pub fn reextract(store: &mut Store, limits: &DecodeLimits) -> Result<usize, StoreError> {
    let mut changed = 0;
    let recs: Vec<FlowRecord> = store.records().cloned().collect();
    for mut rec in recs {
        let Some(raw) = &rec.body_sha1 else { continue };
        let raw = store.get_blob(raw)?;
        let headers = &rec.exchange.response.headers;
        let decoded = decode_body(&raw, headers, limits).unwrap_or_else(|_| DecodedBody::plain(raw, &media_type(headers)));
        let fv = extract_features(&decoded);
        if rec.features.as_ref() != Some(&fv) {
            rec.features = Some(fv);
            store.update_record(rec)?;
            changed += 1;
        }
    }
    Ok(changed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::{GroundTruth, ScanStatus, ThreatType};
    use crate::wire::{ExchangeHead, HttpExchange, RequestHead, ResponseHead, SeedFocus, Verdict};
    use std::io::Write;

    fn emission(body: Vec<u8>, encoding: Option<&str>) -> FlowEmission {
        let mut response = ResponseHead::new(200);
        response.headers.push("Content-Type", "text/html");
        if let Some(e) = encoding {
            response.headers.push("Content-Encoding", e);
        }
        FlowEmission::new(HttpExchange {
            head: ExchangeHead {
                request: RequestHead::new("GET", "http://a.test/x"),
                response,
                started_at: chrono::DateTime::from_timestamp(1_500_000_000, 0).unwrap(),
                agent_id: "a1".into(),
                seeder_tag: SeedFocus::Malware,
            },
            body,
        })
    }

    #[test]
    fn gzip_body_gets_two_blobs_and_features() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = Store::open(dir.path()).unwrap();
        let mut enc = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::fast());
        enc.write_all(b"<script>eval('1')</script>").unwrap();
        let mut em = emission(enc.finish().unwrap(), Some("gzip"));
        em.verdict = Some(Verdict { blacklist: ThreatType::Malware, signature_hits: vec![] });
        let id = Committer::default().commit(&mut store, em).unwrap();
        let r = store.get(id).unwrap();
        assert_ne!(r.body_sha1, r.decoded_sha1);
        assert_eq!(store.blob_count(), 2);
        assert_eq!(r.features.as_ref().unwrap().get("Numeval"), 1.0);
        assert_eq!(r.labels.scan_ticket.as_ref().unwrap().status, ScanStatus::Unscanned);
        assert_eq!(r.labels.ground_truth, GroundTruth::Undetermined);
    }

    #[test]
    fn corrupt_body_is_flagged_not_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = Store::open(dir.path()).unwrap();
        let mut em = emission(b"not gzip at all".to_vec(), Some("gzip"));
        em.request_body = Some(b"q=1".to_vec());
        let id = Committer::default().commit(&mut store, em).unwrap();
        let r = store.get(id).unwrap();
        assert!(r.has_flag(DECODE_ERROR));
        assert!(r.decoded_sha1.is_none());
        assert!(r.labels.scan_ticket.is_none());
        assert!(r.extra.contains_key(REQUEST_BODY_KEY));
    }
}
