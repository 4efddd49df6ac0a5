//! The two multi-engine worker loops, one step at a time.
//!
//! Each step reads tickets from the store, talks to the backend and writes
//! the updated records back. Re-running a step after a crash only picks up
//! tickets still in the state it handles.

use crate::flowstore::{Store, StoreError};

use super::engines::ScanBackend;
use super::ticket::ScanStatus;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepReport {
    pub submitted: usize,
    pub finished: usize,
    pub errored: usize,
    pub pending: usize,
}

fn ids_with_status(store: &Store, status: ScanStatus) -> Vec<u64> {
    store
        .records()
        .filter(|r| r.labels.scan_ticket.as_ref().is_some_and(|t| t.status == status))
        .map(|r| r.record_id)
        .collect()
}

/// Uploads up to `capacity` unscanned bodies.
///
/// The decoded body is uploaded when one was stored, the raw body otherwise.
/// Upload rejections (size limit, backend failure) move the ticket to error.
pub fn submit_worker_step(
    store: &mut Store,
    backend: &mut dyn ScanBackend,
    capacity: usize,
) -> Result<StepReport, StoreError> {
    let mut report = StepReport::default();
    let ids = ids_with_status(store, ScanStatus::Unscanned);
    report.pending = ids.len().saturating_sub(capacity);
    for id in ids.into_iter().take(capacity) {
        let mut rec = store.get(id).expect("listed").clone();
        let digest = rec.decoded_sha1.clone().or_else(|| rec.body_sha1.clone());
        let outcome = match &digest {
            Some(d) => store.get_blob(d).map_err(|e| e.to_string()).and_then(|body| {
                backend.submit(d, &body).map_err(|e| e.to_string())
            }),
            None => Err("record has no body to scan".to_string()),
        };
        let ticket = rec.labels.scan_ticket.as_mut().expect("listed");
        match outcome {
            Ok(scan_id) => {
                ticket.submit(scan_id).expect("unscanned -> in progress");
                report.submitted += 1;
            }
            Err(e) => {
                log::warn!("scan submit for record {id} failed: {e}");
                ticket.fail(e).expect("unscanned -> error");
                report.errored += 1;
            }
        }
        store.update_record(rec)?;
    }
    Ok(report)
}

/// Polls every in-progress scan once.
pub fn fetch_worker_step(store: &mut Store, backend: &mut dyn ScanBackend) -> Result<StepReport, StoreError> {
    let mut report = StepReport::default();
    for id in ids_with_status(store, ScanStatus::ScanInProgress) {
        let mut rec = store.get(id).expect("listed").clone();
        let ticket = rec.labels.scan_ticket.as_mut().expect("listed");
        let scan_id = ticket.scan_id.clone().unwrap_or_default();
        match backend.poll(&scan_id) {
            Ok(None) => {
                report.pending += 1;
                continue;
            }
            Ok(Some(r)) => {
                ticket.finish(r).expect("in progress -> finished");
                report.finished += 1;
            }
            Err(e) => {
                log::warn!("scan fetch for record {id} failed: {e}");
                ticket.fail(e.to_string()).expect("in progress -> error");
                report.errored += 1;
            }
        }
        rec.labels.refresh_ground_truth();
        store.update_record(rec)?;
    }
    Ok(report)
}
