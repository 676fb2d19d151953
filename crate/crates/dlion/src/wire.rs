//! Wire payload types and bit-exact codecs.
//!
//! Everything the simulated workers and server exchange is representable
//! here: ternary sign updates, integer vote sums, and sparse (index, value)
//! payloads. All packings are LSB-first within each byte; trailing padding
//! bits of the final byte are zero and are validated on decode.
//!
//! Layouts (frozen by golden-byte tests):
//!   binary   1 bit/coord: +1 -> 1, -1 -> 0, 0 -> 1 (lossy tie mapping)
//!   ternary  2 bits/coord: 0 -> 0b00, +1 -> 0b01, -1 -> 0b10; 0b11 reserved
//!   sum      ceil(log2(N+1)) bits/coord, level (s+N)/2, parity required
//!   signed   ceil(log2(2N+1)) bits/coord, level s+N, any parity
//!   sparse   count k (32 bits), then k * (index: ceil(log2 d) bits,
//!            value: 64-bit IEEE f64 bits)

use crate::error::{Error, Result};

/// Ternary per-coordinate update, entries in {-1, 0, +1}.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignUpdate {
    values: Vec<i8>,
}

impl SignUpdate {
    pub fn new(values: Vec<i8>) -> Result<Self> {
        for (k, &v) in values.iter().enumerate() {
            if !(-1..=1).contains(&v) {
                return Err(Error::InvalidInput(format!(
                    "sign update entry {v} at coordinate {k} is not in {{-1,0,+1}}"
                )));
            }
        }
        Ok(SignUpdate { values })
    }

    /// Trusted constructor for values already produced by a sign map.
    pub(crate) fn from_signs(values: Vec<i8>) -> Self {
        debug_assert!(values.iter().all(|v| (-1..=1).contains(v)));
        SignUpdate { values }
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// True when no entry is 0, i.e. the 1-bit codec round-trips losslessly.
    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|&v| v != 0)
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }
}

/// Integer sum of N sign updates, entries in [-N, N].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SumVector {
    values: Vec<i32>,
    workers: u32,
}

impl SumVector {
    pub fn new(values: Vec<i32>, workers: u32) -> Result<Self> {
        if workers == 0 {
            return Err(Error::invalid_input("sum vector needs workers >= 1"));
        }
        let n = workers as i32;
        for (k, &v) in values.iter().enumerate() {
            if v.abs() > n {
                return Err(Error::InvalidInput(format!(
                    "sum entry {v} at coordinate {k} exceeds worker count {n}"
                )));
            }
        }
        Ok(SumVector { values, workers })
    }

    /// Exact integer sum over a nonempty, equal-length list of updates.
    pub fn sum_of(deltas: &[SignUpdate]) -> Result<Self> {
        let first = deltas
            .first()
            .ok_or_else(|| Error::invalid_input("cannot sum an empty update list"))?;
        let d = first.len();
        let mut values = vec![0i32; d];
        for (i, u) in deltas.iter().enumerate() {
            if u.len() != d {
                return Err(Error::InvalidInput(format!(
                    "update {i} has length {} but expected {d}",
                    u.len()
                )));
            }
            for (acc, &v) in values.iter_mut().zip(u.as_slice()) {
                *acc += v as i32;
            }
        }
        Ok(SumVector {
            values,
            workers: deltas.len() as u32,
        })
    }

    pub fn values(&self) -> &[i32] {
        &self.values
    }

    pub fn workers(&self) -> u32 {
        self.workers
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Parity invariant of sums of strictly-binary updates: every entry has
    /// the parity of N.
    pub fn parity_ok(&self) -> bool {
        let n = self.workers as i32;
        self.values.iter().all(|&v| (v + n) % 2 == 0)
    }
}

/// Sparse payload: strictly increasing in-range indices, finite nonzero values.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseUpdate {
    indices: Vec<u32>,
    values: Vec<f64>,
    dim: usize,
}

impl SparseUpdate {
    pub fn new(indices: Vec<u32>, values: Vec<f64>, dim: usize) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::InvalidInput(format!(
                "sparse update has {} indices but {} values",
                indices.len(),
                values.len()
            )));
        }
        let mut prev: Option<u32> = None;
        for (&i, &v) in indices.iter().zip(&values) {
            if (i as usize) >= dim {
                return Err(Error::InvalidInput(format!(
                    "sparse index {i} out of range for dimension {dim}"
                )));
            }
            if let Some(p) = prev {
                if i <= p {
                    return Err(Error::InvalidInput(format!(
                        "sparse indices must be strictly increasing ({p} then {i})"
                    )));
                }
            }
            if !v.is_finite() || v == 0.0 {
                return Err(Error::InvalidInput(format!(
                    "sparse value at index {i} must be finite and nonzero, got {v}"
                )));
            }
            prev = Some(i);
        }
        Ok(SparseUpdate {
            indices,
            values,
            dim,
        })
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out[i as usize] = v;
        }
        out
    }
}

/// ceil(log2(levels)) — bits needed to address `levels` distinct values.
pub fn ceil_log2(levels: u64) -> u32 {
    if levels <= 1 {
        0
    } else {
        64 - (levels - 1).leading_zeros()
    }
}

/// Bits per coordinate for a sum of N strictly-binary updates (N+1 levels).
pub fn sum_level_bits(workers: u32) -> u32 {
    ceil_log2(workers as u64 + 1)
}

/// Bits per coordinate for an arbitrary-parity sum in [-N, N] (2N+1 levels).
pub fn signed_level_bits(workers: u32) -> u32 {
    ceil_log2(2 * workers as u64 + 1)
}

/// Bits per sparse index for dimension d.
pub fn index_bits(dim: usize) -> u32 {
    ceil_log2(dim as u64)
}

/// Exact (unpadded) payload bits for each codec; the ledger uses these.
pub fn binary_payload_bits(dim: usize) -> u64 {
    dim as u64
}

pub fn ternary_payload_bits(dim: usize) -> u64 {
    2 * dim as u64
}

pub fn sum_payload_bits(dim: usize, workers: u32) -> u64 {
    dim as u64 * sum_level_bits(workers) as u64
}

pub fn signed_payload_bits(dim: usize, workers: u32) -> u64 {
    dim as u64 * signed_level_bits(workers) as u64
}

pub fn sparse_payload_bits(entries: usize, dim: usize) -> u64 {
    32 + entries as u64 * (index_bits(dim) as u64 + 64)
}

struct BitWriter {
    bytes: Vec<u8>,
    bits: usize,
}

impl BitWriter {
    fn with_capacity(bits: usize) -> Self {
        BitWriter {
            bytes: vec![0u8; bits.div_ceil(8)],
            bits: 0,
        }
    }

    fn push(&mut self, value: u64, width: u32) {
        debug_assert!(width <= 64);
        debug_assert!(width == 64 || value < (1u64 << width));
        for i in 0..width {
            if (value >> i) & 1 == 1 {
                let pos = self.bits + i as usize;
                self.bytes[pos / 8] |= 1u8 << (pos % 8);
            }
        }
        self.bits += width as usize;
    }

    fn finish(self) -> Vec<u8> {
        debug_assert_eq!(self.bytes.len(), self.bits.div_ceil(8));
        self.bytes
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> BitReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        BitReader { bytes, pos: 0 }
    }

    fn read(&mut self, width: u32) -> Result<u64> {
        if self.pos + width as usize > self.bytes.len() * 8 {
            return Err(Error::CorruptStream(format!(
                "payload truncated: needed {width} bits at bit offset {}",
                self.pos
            )));
        }
        let mut out = 0u64;
        for i in 0..width {
            let pos = self.pos + i as usize;
            if (self.bytes[pos / 8] >> (pos % 8)) & 1 == 1 {
                out |= 1u64 << i;
            }
        }
        self.pos += width as usize;
        Ok(out)
    }

    /// All bits after the payload must be zero padding in the final byte,
    /// and no whole trailing byte may remain.
    fn expect_clean_end(&self) -> Result<()> {
        let expected_len = self.pos.div_ceil(8);
        if self.bytes.len() != expected_len {
            return Err(Error::CorruptStream(format!(
                "payload has {} bytes but {} bits imply {expected_len}",
                self.bytes.len(),
                self.pos
            )));
        }
        for pos in self.pos..expected_len * 8 {
            if (self.bytes[pos / 8] >> (pos % 8)) & 1 == 1 {
                return Err(Error::CorruptStream(format!(
                    "nonzero padding bit at position {pos}"
                )));
            }
        }
        Ok(())
    }
}

/// 1 bit per coordinate: +1 -> 1, -1 -> 0. The zero case maps to +1; this is
/// the documented lossy tie mapping of the 1-bit wire (the in-memory math
/// keeps sign(0) = 0, and runs that must preserve zeros use the 2-bit codec).
pub fn pack_binary(u: &SignUpdate) -> Vec<u8> {
    let mut w = BitWriter::with_capacity(u.len());
    for &v in u.as_slice() {
        w.push((v != -1) as u64, 1);
    }
    w.finish()
}

/// Inverse of `pack_binary`; output entries are strictly +1/-1.
pub fn unpack_binary(bytes: &[u8], dim: usize) -> Result<SignUpdate> {
    let mut r = BitReader::new(bytes);
    let mut values = Vec::with_capacity(dim);
    for _ in 0..dim {
        values.push(if r.read(1)? == 1 { 1 } else { -1 });
    }
    r.expect_clean_end()?;
    Ok(SignUpdate::from_signs(values))
}

/// 2 bits per coordinate, lossless for all ternary values.
pub fn pack_ternary(u: &SignUpdate) -> Vec<u8> {
    let mut w = BitWriter::with_capacity(2 * u.len());
    for &v in u.as_slice() {
        let code = match v {
            0 => 0b00u64,
            1 => 0b01,
            _ => 0b10,
        };
        w.push(code, 2);
    }
    w.finish()
}

pub fn unpack_ternary(bytes: &[u8], dim: usize) -> Result<SignUpdate> {
    let mut r = BitReader::new(bytes);
    let mut values = Vec::with_capacity(dim);
    for k in 0..dim {
        values.push(match r.read(2)? {
            0b00 => 0i8,
            0b01 => 1,
            0b10 => -1,
            _ => {
                return Err(Error::CorruptStream(format!(
                    "reserved ternary code 0b11 at coordinate {k}"
                )))
            }
        });
    }
    r.expect_clean_end()?;
    Ok(SignUpdate::from_signs(values))
}

/// Fixed-width level codec for sums of strictly-binary updates: coordinate k
/// stores (s_k + N)/2 in ceil(log2(N+1)) bits.
pub fn pack_sum(s: &SumVector) -> Result<Vec<u8>> {
    let n = s.workers() as i32;
    let width = sum_level_bits(s.workers());
    let mut w = BitWriter::with_capacity(s.len() * width as usize);
    for (k, &v) in s.values().iter().enumerate() {
        if (v + n) % 2 != 0 {
            return Err(Error::InvalidInput(format!(
                "sum entry {v} at coordinate {k} breaks the parity invariant for N={n}"
            )));
        }
        w.push(((v + n) / 2) as u64, width);
    }
    Ok(w.finish())
}

pub fn unpack_sum(bytes: &[u8], dim: usize, workers: u32) -> Result<SumVector> {
    let n = workers as i64;
    let width = sum_level_bits(workers);
    let mut r = BitReader::new(bytes);
    let mut values = Vec::with_capacity(dim);
    for k in 0..dim {
        let level = r.read(width)? as i64;
        if level > n {
            return Err(Error::CorruptStream(format!(
                "sum level {level} at coordinate {k} exceeds worker count {n}"
            )));
        }
        values.push((2 * level - n) as i32);
    }
    r.expect_clean_end()?;
    SumVector::new(values, workers)
}

/// Fixed-width level codec for arbitrary-parity sums in [-N, N] (2N+1 levels):
/// used for ternary-mode averaged downlinks and ternarized-gradient sums.
pub fn pack_signed_levels(values: &[i32], workers: u32) -> Result<Vec<u8>> {
    let n = workers as i32;
    let width = signed_level_bits(workers);
    let mut w = BitWriter::with_capacity(values.len() * width as usize);
    for (k, &v) in values.iter().enumerate() {
        if v.abs() > n {
            return Err(Error::InvalidInput(format!(
                "entry {v} at coordinate {k} outside [-{n}, {n}]"
            )));
        }
        w.push((v + n) as u64, width);
    }
    Ok(w.finish())
}

pub fn unpack_signed_levels(bytes: &[u8], dim: usize, workers: u32) -> Result<Vec<i32>> {
    let n = workers as i64;
    let width = signed_level_bits(workers);
    let mut r = BitReader::new(bytes);
    let mut values = Vec::with_capacity(dim);
    for k in 0..dim {
        let level = r.read(width)? as i64;
        if level > 2 * n {
            return Err(Error::CorruptStream(format!(
                "signed level {level} at coordinate {k} exceeds 2N={}",
                2 * n
            )));
        }
        values.push((level - n) as i32);
    }
    r.expect_clean_end()?;
    Ok(values)
}

/// Sparse payload: count k as 32 bits, then per entry the index in
/// ceil(log2 d) bits and the value as raw IEEE-754 bits (64).
pub fn pack_sparse(u: &SparseUpdate) -> Vec<u8> {
    let iw = index_bits(u.dim());
    let mut w = BitWriter::with_capacity(sparse_payload_bits(u.len(), u.dim()) as usize);
    w.push(u.len() as u64, 32);
    for (&i, &v) in u.indices().iter().zip(u.values()) {
        w.push(i as u64, iw);
        w.push(v.to_bits(), 64);
    }
    w.finish()
}

pub fn unpack_sparse(bytes: &[u8], dim: usize) -> Result<SparseUpdate> {
    let iw = index_bits(dim);
    let mut r = BitReader::new(bytes);
    let count = r.read(32)? as usize;
    if count > dim {
        return Err(Error::CorruptStream(format!(
            "sparse count {count} exceeds dimension {dim}"
        )));
    }
    let mut indices = Vec::with_capacity(count);
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        indices.push(r.read(iw)? as u32);
        values.push(f64::from_bits(r.read(64)?));
    }
    r.expect_clean_end()?;
    SparseUpdate::new(indices, values, dim)
        .map_err(|e| Error::CorruptStream(format!("sparse payload invalid: {e}")))
}
