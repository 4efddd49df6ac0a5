//! Undo transfer and content codings on captured bodies.
//!
//! Chunked framing is removed first, then every content coding is reversed
//! from the last one applied to the first. Output is bounded both by an
//! absolute cap and by a ratio to the on-wire size; hitting either bound
//! truncates the result instead of failing.

use std::io::{self, Read, Write};

use flate2::read::{DeflateDecoder, MultiGzDecoder, ZlibDecoder};
use flate2::write::{DeflateEncoder, GzEncoder, ZlibEncoder};
use flate2::Compression;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::wire::http::{parse_chunk_size, Headers};

pub const DEFAULT_OUTPUT_CAP: usize = 64 * 1024 * 1024;
pub const DEFAULT_BOMB_RATIO: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeLimits {
    /// Absolute output cap in bytes.
    pub cap: usize,
    /// Largest allowed output/input ratio.
    pub bomb_ratio: usize,
}

impl Default for DecodeLimits {
    fn default() -> Self {
        DecodeLimits { cap: DEFAULT_OUTPUT_CAP, bomb_ratio: DEFAULT_BOMB_RATIO }
    }
}

impl DecodeLimits {
    /// Output bound for an input of `input_len` bytes.
    pub fn effective_cap(&self, input_len: usize) -> usize {
        self.cap.min(input_len.saturating_mul(self.bomb_ratio))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodedBody {
    pub bytes: Vec<u8>,
    /// Codings undone, outermost first.
    pub applied_codings: Vec<String>,
    /// Output hit the effective cap; `bytes.len()` equals `limit`.
    pub truncated: bool,
    /// The bound in force for this body.
    pub limit: usize,
    /// First coding that could not be undone; decoding stopped there.
    pub unknown_coding: Option<String>,
    /// Lowercased media type from `Content-Type`, without parameters.
    pub declared_type: String,
}

impl DecodedBody {
    /// Wraps bytes that need no decoding.
    pub fn plain(bytes: Vec<u8>, declared_type: &str) -> Self {
        let limit = bytes.len();
        DecodedBody {
            bytes,
            applied_codings: Vec::new(),
            truncated: false,
            limit,
            unknown_coding: None,
            declared_type: declared_type.to_ascii_lowercase(),
        }
    }

    pub fn text(&self) -> String {
        String::from_utf8_lossy(&self.bytes).into_owned()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("corrupt {coding} stream: {detail}")]
    Corrupt { coding: String, detail: String },
    #[error("malformed chunked framing at byte {0}")]
    Chunked(usize),
}

pub fn media_type(headers: &Headers) -> String {
    headers
        .get("content-type")
        .and_then(|v| v.split(';').next())
        .map(|v| v.trim().to_ascii_lowercase())
        .unwrap_or_default()
}

/// Decodes an on-wire body according to its response headers.
pub fn decode_body(raw: &[u8], headers: &Headers, limits: &DecodeLimits) -> Result<DecodedBody, DecodeError> {
    let limit = limits.effective_cap(raw.len());
    let declared_type = media_type(headers);

    // transfer codings: chunked must be last; anything else listed before it
    // is treated like a content coding applied after the content codings
    let mut transfer = headers.tokens("transfer-encoding");
    let mut data = if transfer.last().map(String::as_str) == Some("chunked") {
        transfer.pop();
        dechunk(raw)?
    } else {
        raw.to_vec()
    };
    let mut codings = headers.tokens("content-encoding");
    codings.extend(transfer);

    let mut applied = Vec::new();
    let mut truncated = false;
    let mut unknown = None;
    for coding in codings.iter().rev() {
        let step = match coding.as_str() {
            "identity" => {
                applied.push(coding.clone());
                continue;
            }
            "gzip" | "x-gzip" => inflate(MultiGzDecoder::new(&data[..]), limit),
            "deflate" => {
                if looks_like_zlib(&data) {
                    inflate(ZlibDecoder::new(&data[..]), limit)
                } else {
                    inflate(DeflateDecoder::new(&data[..]), limit)
                }
            }
            other => {
                unknown = Some(other.to_string());
                break;
            }
        };
        let (out, cut) = step.map_err(|e| DecodeError::Corrupt { coding: coding.clone(), detail: e.to_string() })?;
        applied.push(coding.clone());
        data = out;
        if cut {
            truncated = true;
            break;
        }
    }
    if data.len() > limit {
        data.truncate(limit);
        truncated = true;
    }
    Ok(DecodedBody { bytes: data, applied_codings: applied, truncated, limit, unknown_coding: unknown, declared_type })
}

fn looks_like_zlib(data: &[u8]) -> bool {
    data.len() >= 2 && data[0] & 0x0f == 8 && data[0] >> 4 <= 7 && (u16::from(data[0]) << 8 | u16::from(data[1])) % 31 == 0
}

fn inflate<R: Read>(decoder: R, limit: usize) -> io::Result<(Vec<u8>, bool)> {
    let mut out = Vec::new();
    decoder.take(limit as u64 + 1).read_to_end(&mut out)?;
    let cut = out.len() > limit;
    out.truncate(limit);
    Ok((out, cut))
}

/// Strips chunked transfer framing.
pub fn dechunk(raw: &[u8]) -> Result<Vec<u8>, DecodeError> {
    let mut out = Vec::with_capacity(raw.len());
    let mut pos = 0;
    loop {
        let nl = memchr::memchr(b'\n', &raw[pos..]).ok_or(DecodeError::Chunked(pos))?;
        let size = parse_chunk_size(&raw[pos..pos + nl + 1]).ok_or(DecodeError::Chunked(pos))?;
        pos += nl + 1;
        if size == 0 {
            return Ok(out);
        }
        let end = pos.checked_add(size).filter(|&e| e <= raw.len()).ok_or(DecodeError::Chunked(pos))?;
        out.extend_from_slice(&raw[pos..end]);
        pos = end;
        if raw[pos..].starts_with(b"\r\n") {
            pos += 2;
        } else if raw[pos..].starts_with(b"\n") {
            pos += 1;
        } else {
            return Err(DecodeError::Chunked(pos));
        }
    }
}

/// Applies `codings` in order (first listed is applied first), as a server would.
pub fn encode_chain(payload: &[u8], codings: &[&str]) -> Vec<u8> {
    let mut data = payload.to_vec();
    for c in codings {
        data = match *c {
            "gzip" => {
                let mut e = GzEncoder::new(Vec::new(), Compression::default());
                e.write_all(&data).expect("in-memory write");
                e.finish().expect("in-memory write")
            }
            "deflate" => {
                let mut e = ZlibEncoder::new(Vec::new(), Compression::default());
                e.write_all(&data).expect("in-memory write");
                e.finish().expect("in-memory write")
            }
            "deflate-raw" => {
                let mut e = DeflateEncoder::new(Vec::new(), Compression::default());
                e.write_all(&data).expect("in-memory write");
                e.finish().expect("in-memory write")
            }
            "identity" => data,
            other => panic!("encode_chain: unsupported coding {other}"),
        };
    }
    data
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn headers(ce: &str) -> Headers {
        let mut h = Headers::new();
        if !ce.is_empty() {
            h.push("Content-Encoding", ce);
        }
        h.push("Content-Type", "Text/HTML; charset=UTF-8");
        h
    }

    #[test]
    fn identity_is_untouched() {
        let d = decode_body(b"abc", &headers(""), &DecodeLimits::default()).unwrap();
        assert_eq!(d.bytes, b"abc");
        assert!(d.applied_codings.is_empty());
        assert_eq!(d.declared_type, "text/html");
        assert!(!d.truncated);
    }

    // Produced with `printf payload | gzip -n | od -An -tx1` (reference gzip tool).
    const GZIP_PAYLOAD: [u8; 27] = [
        0x1f, 0x8b, 0x08, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x03, 0x2b, 0x48, 0xac, 0xcc, 0xc9, 0x4f, 0x4c, 0x01,
        0x00, 0x15, 0x6a, 0x2c, 0x42, 0x07, 0x00, 0x00, 0x00,
    ];

    #[test]
    fn reference_gzip_fixture() {
        let d = decode_body(&GZIP_PAYLOAD, &headers("gzip"), &DecodeLimits::default()).unwrap();
        assert_eq!(d.bytes, b"payload");
        assert_eq!(d.applied_codings, vec!["gzip"]);
    }

    #[test]
    fn chained_gzip() {
        let twice = encode_chain(b"x marks the spot", &["gzip", "gzip"]);
        let d = decode_body(&twice, &headers("gzip, gzip"), &DecodeLimits::default()).unwrap();
        assert_eq!(d.bytes, b"x marks the spot");
        assert_eq!(d.applied_codings, vec!["gzip", "gzip"]);
    }

    #[test]
    fn deflate_accepts_zlib_and_raw() {
        for variant in ["deflate", "deflate-raw"] {
            let enc = encode_chain(b"hello deflate", &[variant]);
            let d = decode_body(&enc, &headers("deflate"), &DecodeLimits::default()).unwrap();
            assert_eq!(d.bytes, b"hello deflate", "{variant}");
        }
    }

    #[test]
    fn chunked_then_gzip() {
        let gz = encode_chain(b"chunky", &["gzip"]);
        let mut raw = format!("{:x}\r\n", 5).into_bytes();
        raw.extend_from_slice(&gz[..5]);
        raw.extend_from_slice(format!("\r\n{:x}\r\n", gz.len() - 5).as_bytes());
        raw.extend_from_slice(&gz[5..]);
        raw.extend_from_slice(b"\r\n0\r\n\r\n");
        let mut h = headers("gzip");
        h.push("Transfer-Encoding", "chunked");
        assert_eq!(decode_body(&raw, &h, &DecodeLimits::default()).unwrap().bytes, b"chunky");
    }

    #[test]
    fn corrupt_stream_names_coding() {
        let err = decode_body(b"\x1f\x8b\x08garbage", &headers("gzip"), &DecodeLimits::default()).unwrap_err();
        assert!(matches!(err, DecodeError::Corrupt { ref coding, .. } if coding == "gzip"));
    }

    #[test]
    fn unknown_coding_stops_with_partial_result() {
        let inner = encode_chain(b"abc", &["gzip"]);
        // applied order: gzip then br; decoding br first fails immediately
        let d = decode_body(&inner, &headers("gzip, br"), &DecodeLimits::default()).unwrap();
        assert_eq!(d.unknown_coding.as_deref(), Some("br"));
        assert_eq!(d.bytes, inner);
        // unknown inner coding: outer gzip is undone, then decoding stops
        let outer = encode_chain(b"abc", &["gzip"]);
        let d = decode_body(&outer, &headers("br, gzip"), &DecodeLimits::default()).unwrap();
        assert_eq!(d.bytes, b"abc");
        assert_eq!(d.applied_codings, vec!["gzip"]);
        assert_eq!(d.unknown_coding.as_deref(), Some("br"));
    }

    #[test]
    fn bomb_ratio_truncates() {
        let zeros = vec![0u8; 1 << 20];
        let enc = encode_chain(&zeros, &["gzip"]);
        assert!(enc.len() * 128 < zeros.len());
        let d = decode_body(&enc, &headers("gzip"), &DecodeLimits::default()).unwrap();
        assert!(d.truncated);
        assert_eq!(d.bytes.len(), enc.len() * 128);
        assert_eq!(d.limit, enc.len() * 128);
    }

    #[test]
    fn absolute_cap_truncates_identity() {
        let limits = DecodeLimits { cap: 4, bomb_ratio: 128 };
        let d = decode_body(b"abcdef", &headers(""), &limits).unwrap();
        assert!(d.truncated);
        assert_eq!(d.bytes, b"abcd");
    }

    proptest! {
        #[test]
        fn chain_round_trip(payload in proptest::collection::vec(any::<u8>(), 0..2048),
                            chain in proptest::collection::vec(prop_oneof![Just("gzip"), Just("deflate")], 0..=3)) {
            let enc = encode_chain(&payload, &chain);
            let d = decode_body(&enc, &headers(&chain.join(", ")), &DecodeLimits::default()).unwrap();
            if !d.truncated {
                prop_assert_eq!(d.bytes, payload);
            } else {
                prop_assert_eq!(d.bytes.len(), d.limit);
            }
        }

        // block headers occupy the low bits, so CM can never read as 8
        #[test]
        fn raw_deflate_never_sniffs_as_zlib(payload in proptest::collection::vec(any::<u8>(), 0..4096)) {
            prop_assert!(!looks_like_zlib(&encode_chain(&payload, &["deflate-raw"])));
        }
    }
}
