//! Standard Bloom filter with deterministic seeded hashing.
//!
//! This is the backup-filter primitive used inside each partition region and
//! as the plain-filter baseline. Probe positions come from the double-hashing
//! composition `position_i = (h1 + i*h2) mod m`, with `h1`, `h2` two 64-bit
//! xxHash values derived from the element and the filter seed, so a filter is
//! bit-identical given the same parameters and insert sequence.
//!
//! Two sizing roles are kept apart on purpose:
//!
//! * physical sizing: the bit array a filter actually allocates to *achieve*
//!   a target false positive rate; this always uses the standard-construction
//!   constant log2(e) together with [`hashes_for_fpr`];
//! * space accounting: the `|S| * c * log2(1/f)` convention, where the
//!   [`VariantConstant`] `c` models the backup-filter family being compared
//!   (log2(e) for standard filters, 1.0 for the idealized optimal filter).
//!
//! With `c = 1` the accounted size of a filter is its standard size divided
//! by log2(e), which is how the idealized optimal filter is scored without
//! actually constructing one.

use crate::error::{Error, Result};
use xxhash_rust::xxh64::xxh64;

/// Space multiplier of the standard Bloom filter construction: log2(e).
pub const STANDARD_C: f64 = std::f64::consts::LOG2_E;

/// Space multiplier of a backup-filter family relative to the
/// information-theoretic bound `|S| * log2(1/f)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
#[serde(transparent)]
pub struct VariantConstant(f64);

impl VariantConstant {
    /// A multiplier must be finite and at least 1 (the lower bound itself).
    pub fn new(c: f64) -> Result<Self> {
        if !c.is_finite() || c < 1.0 {
            return Err(Error::InvalidParameter(format!(
                "variant constant {c} must be a finite value >= 1"
            )));
        }
        Ok(VariantConstant(c))
    }

    /// Standard Bloom filter family, `c = log2(e)`.
    pub fn standard() -> Self {
        VariantConstant(STANDARD_C)
    }

    /// Idealized space-optimal family, `c = 1`.
    pub fn optimal() -> Self {
        VariantConstant(1.0)
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl Default for VariantConstant {
    fn default() -> Self {
        VariantConstant::optimal()
    }
}

/// Accounted size in bits of a filter for `n_keys` keys at false positive
/// rate `fpr` under variant constant `c`: `ceil(c * n * log2(1/fpr))`.
///
/// An empty key set needs no filter and accounts for zero bits.
pub fn size_for_fpr(n_keys: u64, fpr: f64, c: VariantConstant) -> Result<u64> {
    check_fpr(fpr)?;
    if n_keys == 0 {
        return Ok(0);
    }
    let bits = c.get() * n_keys as f64 * (1.0 / fpr).log2();
    Ok(bits.ceil() as u64)
}

/// Hash-function count for a target false positive rate:
/// `max(1, round(log2(1/fpr)))`.
pub fn hashes_for_fpr(fpr: f64) -> Result<u32> {
    check_fpr(fpr)?;
    let k = (1.0 / fpr).log2().round();
    Ok((k as u32).max(1))
}

/// Asymptotic false positive rate of a standard Bloom filter with `m` bits,
/// `n` inserted keys and `k` hash functions: `(1 - (1 - 1/m)^(k*n))^k`.
pub fn theoretical_fpr(m: u64, n_keys: u64, k_hashes: u32) -> f64 {
    assert!(m >= 1 && k_hashes >= 1);
    if n_keys == 0 {
        return 0.0;
    }
    // (1 - 1/m)^(k*n) via exp(k*n * ln(1 - 1/m)) for precision at large m.
    let ln_miss = (-1.0 / m as f64).ln_1p();
    let all_probes = k_hashes as u64 * n_keys;
    let zero_prob = (all_probes as f64 * ln_miss).exp();
    (1.0 - zero_prob).powi(k_hashes as i32)
}

fn check_fpr(fpr: f64) -> Result<()> {
    if !(fpr > 0.0 && fpr < 1.0) {
        return Err(Error::FprOutOfRange(fpr));
    }
    Ok(())
}

/// Bit count, hash count and hash seed of a Bloom filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BloomParams {
    pub m: u64,
    pub k_hashes: u32,
    pub seed: u64,
}

impl BloomParams {
    pub fn new(m: u64, k_hashes: u32, seed: u64) -> Result<Self> {
        if m < 1 {
            return Err(Error::InvalidParameter("bit count m must be >= 1".into()));
        }
        if k_hashes < 1 {
            return Err(Error::InvalidParameter("hash count must be >= 1".into()));
        }
        Ok(BloomParams { m, k_hashes, seed })
    }
}

/// A standard Bloom filter over opaque byte-string elements.
///
/// Construction is single-writer; once built the filter is immutable and any
/// number of threads may query it concurrently.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BloomFilter {
    m: u64,
    k_hashes: u32,
    seed: u64,
    bits: Vec<u8>,
    n_inserted: u64,
}

impl BloomFilter {
    pub fn new(params: BloomParams) -> Self {
        BloomFilter {
            m: params.m,
            k_hashes: params.k_hashes,
            seed: params.seed,
            bits: vec![0u8; params.m.div_ceil(8) as usize],
            n_inserted: 0,
        }
    }

    /// A zero-bit filter that rejects everything. This is the convention for
    /// a region holding no keys: it occupies no space and has no false
    /// positives.
    pub fn empty(seed: u64) -> Self {
        BloomFilter {
            m: 0,
            k_hashes: 1,
            seed,
            bits: Vec::new(),
            n_inserted: 0,
        }
    }

    /// A filter physically sized to achieve `fpr` for `n_keys` keys using the
    /// standard construction: `m = ceil(log2(e) * n * log2(1/fpr))` bits and
    /// `round(log2(1/fpr))` hash functions.
    pub fn with_target_fpr(n_keys: u64, fpr: f64, seed: u64) -> Result<Self> {
        check_fpr(fpr)?;
        if n_keys == 0 {
            return Ok(BloomFilter::empty(seed));
        }
        let m = size_for_fpr(n_keys, fpr, VariantConstant::standard())?;
        let k_hashes = hashes_for_fpr(fpr)?;
        Ok(BloomFilter::new(BloomParams::new(m, k_hashes, seed)?))
    }

    /// Reassemble a filter from its serialized fields. The insert count is
    /// not part of the wire layout, so it restarts at zero.
    pub(crate) fn from_parts(m: u64, k_hashes: u32, seed: u64, bits: Vec<u8>) -> Result<Self> {
        if k_hashes < 1 || bits.len() as u64 != m.div_ceil(8) {
            return Err(Error::InvalidParameter(
                "inconsistent bloom filter payload".into(),
            ));
        }
        Ok(BloomFilter {
            m,
            k_hashes,
            seed,
            bits,
            n_inserted: 0,
        })
    }

    pub fn m(&self) -> u64 {
        self.m
    }

    pub fn k_hashes(&self) -> u32 {
        self.k_hashes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_inserted(&self) -> u64 {
        self.n_inserted
    }

    pub(crate) fn bit_bytes(&self) -> &[u8] {
        &self.bits
    }

    pub fn count_ones(&self) -> u64 {
        self.bits.iter().map(|b| b.count_ones() as u64).sum()
    }

    pub fn insert(&mut self, element: &[u8]) {
        assert!(self.m > 0, "cannot insert into a zero-bit filter");
        let (h1, h2) = self.hash_pair(element);
        for i in 0..self.k_hashes as u64 {
            let pos = h1.wrapping_add(i.wrapping_mul(h2)) % self.m;
            self.bits[(pos / 8) as usize] |= 1 << (pos % 8);
        }
        self.n_inserted += 1;
    }

    /// True iff every probed bit is set. Never false for an inserted element.
    pub fn contains(&self, element: &[u8]) -> bool {
        if self.m == 0 {
            return false;
        }
        let (h1, h2) = self.hash_pair(element);
        (0..self.k_hashes as u64).all(|i| {
            let pos = h1.wrapping_add(i.wrapping_mul(h2)) % self.m;
            self.bits[(pos / 8) as usize] >> (pos % 8) & 1 == 1
        })
    }

    fn hash_pair(&self, element: &[u8]) -> (u64, u64) {
        let h1 = xxh64(element, self.seed);
        let h2 = xxh64(element, self.seed ^ 0x9e37_79b9_7f4a_7c15);
        (h1, h2)
    }
}
