//! Byte entropy and the shellcode heuristic.

/// Shannon entropy in bits per byte; 0 for empty input.
pub fn shannon_entropy(data: &[u8]) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let mut counts = [0u64; 256];
    for &b in data {
        counts[b as usize] += 1;
    }
    entropy_of_counts(&counts, data.len() as u64)
}

pub(crate) fn entropy_of_counts(counts: &[u64; 256], total: u64) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    let mut h = 0.0;
    for &c in counts.iter() {
        if c > 0 {
            let p = c as f64 / n;
            h -= p * p.log2();
        }
    }
    // -0.0 for single-symbol input
    h.max(0.0)
}

/// Heuristic parameters for [`shellcode_probability`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShellcodeParams {
    pub floor_bits: f64,
    pub ceiling_bits: f64,
    pub min_len: usize,
}

impl Default for ShellcodeParams {
    fn default() -> Self {
        ShellcodeParams { floor_bits: 4.0, ceiling_bits: 6.0, min_len: 20 }
    }
}

/// Per-string `clamp((H - floor) / (ceiling - floor))` for strings of at
/// least `min_len` code units, maximised over the strings.
pub fn shellcode_probability<S: AsRef<[u16]>>(strings: &[S], params: &ShellcodeParams) -> f64 {
    strings
        .iter()
        .map(AsRef::as_ref)
        .filter(|s| s.len() >= params.min_len)
        .map(|s| {
            let h = shannon_entropy(&string_bytes(s));
            ((h - params.floor_bits) / (params.ceiling_bits - params.floor_bits)).clamp(0.0, 1.0)
        })
        .fold(0.0, f64::max)
}

/// Byte view of a JS string: one byte per code unit up to 0xFF, two
/// (little-endian) above.
pub fn string_bytes(units: &[u16]) -> Vec<u8> {
    let mut out = Vec::with_capacity(units.len());
    for &u in units {
        if u <= 0xff {
            out.push(u as u8);
        } else {
            out.extend_from_slice(&u.to_le_bytes());
        }
    }
    out
}
