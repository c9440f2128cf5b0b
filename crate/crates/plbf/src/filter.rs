//! The assembled partitioned filter: score-routed backup Bloom filters.
//!
//! [`PlbfFilter::build`] routes each key to the region covering its score
//! and inserts it into that region's backup filter, so a key queried with
//! its own score is always found. A region whose rate is 1 keeps no filter
//! and accepts everything routed to it; a region holding no keys keeps a
//! zero-bit filter and rejects everything.
//!
//! Physical backup filters are standard Bloom filters sized to achieve each
//! region's rate; [`PlbfFilter::accounted_bits`] reports space under the
//! filter's variant constant (see the bloom module on the two sizing roles).

use crate::bloom::{self, BloomFilter, VariantConstant};
use crate::error::{Error, Result};
use crate::optimizer::PartitionPlan;

const MAGIC: &[u8; 4] = b"PLBF";
const FORMAT_VERSION: u16 = 1;

/// A built partitioned learned Bloom filter.
///
/// Immutable after construction; queries are safe from any number of
/// threads.
#[derive(Debug, Clone, PartialEq)]
pub struct PlbfFilter {
    n_segments: u32,
    boundaries: Vec<u32>,
    region_fprs: Vec<f64>,
    backups: Vec<BloomFilter>,
    c: f64,
    target_f: f64,
    n_keys: u64,
}

impl PlbfFilter {
    /// Build from scored keys and a partition plan.
    ///
    /// Each region's backup filter is physically sized for the keys actually
    /// routed to it at that region's rate; regions with rate 1 build no
    /// filter. The `seed` derives an independent hash seed per region.
    pub fn build<B: AsRef<[u8]>>(
        keys: &[(B, f64)],
        plan: &PartitionPlan,
        c: VariantConstant,
        seed: u64,
    ) -> Result<Self> {
        let k = plan.k();
        let mut routed: Vec<Vec<&[u8]>> = vec![Vec::new(); k];
        for (element, score) in keys {
            if !(0.0..=1.0).contains(score) {
                return Err(Error::ScoreOutOfRange(*score));
            }
            routed[plan.region_of_score(*score)].push(element.as_ref());
        }

        let mut backups = Vec::with_capacity(k);
        for (region, members) in routed.iter().enumerate() {
            let region_seed = splitmix64(seed ^ region as u64);
            let fpr = plan.fprs()[region];
            if fpr >= 1.0 || members.is_empty() {
                backups.push(BloomFilter::empty(region_seed));
                continue;
            }
            if fpr <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "region {region} has rate 0 but {} keys routed to it",
                    members.len()
                )));
            }
            let mut filter =
                BloomFilter::with_target_fpr(members.len() as u64, fpr, region_seed)?;
            for element in members {
                filter.insert(element);
            }
            backups.push(filter);
        }

        Ok(PlbfFilter {
            n_segments: plan.n_segments(),
            boundaries: plan.boundaries().to_vec(),
            region_fprs: plan.fprs().to_vec(),
            backups,
            c: c.get(),
            target_f: plan.target_f(),
            n_keys: keys.len() as u64,
        })
    }

    /// Route by score and consult the region's backup filter. Regions with
    /// rate 1 answer positive unconditionally.
    pub fn query(&self, element: &[u8], score: f64) -> Result<bool> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::ScoreOutOfRange(score));
        }
        let region = self.region_of_score(score);
        if self.region_fprs[region] >= 1.0 {
            return Ok(true);
        }
        Ok(self.backups[region].contains(element))
    }

    fn region_of_score(&self, score: f64) -> usize {
        let n = self.n_segments as f64;
        let (mut lo, mut hi) = (0usize, self.region_fprs.len() - 1);
        while lo < hi {
            let mid = (lo + hi) / 2;
            if score <= self.boundaries[mid + 1] as f64 / n {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        lo
    }

    pub fn k(&self) -> usize {
        self.region_fprs.len()
    }

    pub fn n_segments(&self) -> u32 {
        self.n_segments
    }

    pub fn boundaries(&self) -> &[u32] {
        &self.boundaries
    }

    /// Region thresholds `t_i = b_i / N`.
    pub fn thresholds(&self) -> Vec<f64> {
        self.boundaries
            .iter()
            .map(|&b| b as f64 / self.n_segments as f64)
            .collect()
    }

    pub fn region_fprs(&self) -> &[f64] {
        &self.region_fprs
    }

    pub fn variant_c(&self) -> f64 {
        self.c
    }

    pub fn target_f(&self) -> f64 {
        self.target_f
    }

    /// Keys inserted at build time. Zero on a deserialized filter: the wire
    /// format stores only what queries need.
    pub fn n_keys(&self) -> u64 {
        self.n_keys
    }

    pub fn backups(&self) -> &[BloomFilter] {
        &self.backups
    }

    /// Total space under the variant-constant accounting convention:
    /// per-region `ceil(n_i * c * log2(1 / f_i))`. Matches a solve report's
    /// predicted bits up to per-region rounding. Build-time only (the insert
    /// counts it needs are not serialized).
    pub fn accounted_bits(&self) -> u64 {
        let c = VariantConstant::new(self.c).expect("validated at build");
        self.backups
            .iter()
            .zip(&self.region_fprs)
            .filter(|(b, &f)| b.n_inserted() > 0 && f < 1.0)
            .map(|(b, &f)| bloom::size_for_fpr(b.n_inserted(), f, c).expect("validated rate"))
            .sum()
    }

    /// Bits actually allocated by the backup arrays.
    pub fn physical_bits(&self) -> u64 {
        self.backups.iter().map(|b| b.m()).sum()
    }

    /// Serialize to the fixed little-endian layout:
    /// magic `PLBF`, version u16, c f64, F f64, N u32, k u16,
    /// k+1 boundary u32s, k rate f64s, k backup blocks
    /// (m u64, k_hashes u32, seed u64, ceil(m/8) payload bytes, bit i at
    /// byte i/8 LSB-first), then CRC32C over all preceding bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.c.to_le_bytes());
        out.extend_from_slice(&self.target_f.to_le_bytes());
        out.extend_from_slice(&self.n_segments.to_le_bytes());
        out.extend_from_slice(&(self.k() as u16).to_le_bytes());
        for &b in &self.boundaries {
            out.extend_from_slice(&b.to_le_bytes());
        }
        for &f in &self.region_fprs {
            out.extend_from_slice(&f.to_le_bytes());
        }
        for backup in &self.backups {
            out.extend_from_slice(&backup.m().to_le_bytes());
            out.extend_from_slice(&backup.k_hashes().to_le_bytes());
            out.extend_from_slice(&backup.seed().to_le_bytes());
            out.extend_from_slice(backup.bit_bytes());
        }
        let crc = crc32c::crc32c(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = Cursor { bytes, pos: 0 };
        if cursor.take(4)? != MAGIC {
            return Err(Error::BadMagic);
        }
        let version = u16::from_le_bytes(cursor.take(2)?.try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let c = f64::from_le_bytes(cursor.take(8)?.try_into().unwrap());
        let target_f = f64::from_le_bytes(cursor.take(8)?.try_into().unwrap());
        let n_segments = u32::from_le_bytes(cursor.take(4)?.try_into().unwrap());
        let k = u16::from_le_bytes(cursor.take(2)?.try_into().unwrap()) as usize;

        let mut boundaries = Vec::with_capacity(k + 1);
        for _ in 0..=k {
            boundaries.push(u32::from_le_bytes(cursor.take(4)?.try_into().unwrap()));
        }
        let mut region_fprs = Vec::with_capacity(k);
        for _ in 0..k {
            region_fprs.push(f64::from_le_bytes(cursor.take(8)?.try_into().unwrap()));
        }
        let mut backups = Vec::with_capacity(k);
        for _ in 0..k {
            let m = u64::from_le_bytes(cursor.take(8)?.try_into().unwrap());
            let k_hashes = u32::from_le_bytes(cursor.take(4)?.try_into().unwrap());
            let seed = u64::from_le_bytes(cursor.take(8)?.try_into().unwrap());
            let payload = cursor.take(m.div_ceil(8) as usize)?.to_vec();
            backups.push(BloomFilter::from_parts(m, k_hashes, seed, payload)?);
        }

        let body_len = cursor.pos;
        let crc_stored = u32::from_le_bytes(cursor.take(4)?.try_into().unwrap());
        if cursor.pos != bytes.len() {
            return Err(Error::TrailingBytes);
        }
        if crc32c::crc32c(&bytes[..body_len]) != crc_stored {
            return Err(Error::ChecksumMismatch);
        }

        // Re-validate the structural invariants the plan type enforces.
        PartitionPlan::new(n_segments, boundaries.clone(), region_fprs.clone(), target_f)?;
        VariantConstant::new(c)?;
        Ok(PlbfFilter {
            n_segments,
            boundaries,
            region_fprs,
            backups,
            c,
            target_f,
            n_keys: 0,
        })
    }

    pub fn write_to(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())
            .map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn read_from(path: &std::path::Path) -> Result<Self> {
        let bytes =
            std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        PlbfFilter::from_bytes(&bytes)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).ok_or(Error::Truncated)?;
        if end > self.bytes.len() {
            return Err(Error::Truncated);
        }
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// A partitioned filter restated with a shared pre-filter: the pre-filter
/// takes the largest region rate `f_0` and every region keeps the residual
/// rate `f_i / f_0`, so composed per-region rates and the analytical bit
/// budget are unchanged. Queries then skip the score lookup for the
/// pre-filter's negatives.
#[derive(Debug, Clone)]
pub struct SandwichPlan {
    pub prefilter_fpr: f64,
    pub inner_fprs: Vec<f64>,
    pub prefilter: BloomFilter,
}

/// Restate `filter` in pre-filter form, building the pre-filter over `keys`.
///
/// Requires every region rate below 1 (a rate-1 region already accepts
/// everything, leaving nothing for a pre-filter to share). Zero-key regions
/// keep rate 0.
pub fn sandwich_transform<B: AsRef<[u8]>>(
    filter: &PlbfFilter,
    keys: &[(B, f64)],
) -> Result<SandwichPlan> {
    if filter.region_fprs().iter().any(|&f| f >= 1.0) {
        return Err(Error::InvalidParameter(
            "pre-filter form requires every region rate below 1".into(),
        ));
    }
    let prefilter_fpr = filter
        .region_fprs()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if prefilter_fpr <= 0.0 || prefilter_fpr.is_nan() {
        return Err(Error::InvalidParameter(
            "pre-filter form requires at least one region with positive rate".into(),
        ));
    }
    let inner_fprs = filter
        .region_fprs()
        .iter()
        .map(|&f| if f <= 0.0 { 0.0 } else { f / prefilter_fpr })
        .collect();

    let seed = splitmix64(!0 ^ filter.backups()[0].seed());
    let mut prefilter =
        BloomFilter::with_target_fpr(keys.len() as u64, prefilter_fpr, seed)?;
    for (element, _) in keys {
        prefilter.insert(element.as_ref());
    }
    Ok(SandwichPlan {
        prefilter_fpr,
        inner_fprs,
        prefilter,
    })
}

/// Analytical backup space of a partitioned filter in bits (no rounding):
/// `sum_i n_i * c * log2(1 / f_i)`.
pub fn analytical_plbf_bits(region_keys: &[u64], fprs: &[f64], c: VariantConstant) -> f64 {
    region_keys
        .iter()
        .zip(fprs)
        .filter(|(&n, &f)| n > 0 && f > 0.0 && f < 1.0)
        .map(|(&n, &f)| n as f64 * c.get() * (1.0 / f).log2())
        .sum()
}

/// Analytical space of the pre-filter form: the pre-filter over all keys at
/// `f_0` plus per-region residual filters at `f_i / f_0`.
pub fn analytical_sandwich_bits(
    region_keys: &[u64],
    fprs: &[f64],
    prefilter_fpr: f64,
    c: VariantConstant,
) -> f64 {
    let n_total: u64 = region_keys.iter().sum();
    let prefilter = n_total as f64 * c.get() * (1.0 / prefilter_fpr).log2();
    let inner: f64 = region_keys
        .iter()
        .zip(fprs)
        .filter(|(&n, &f)| n > 0 && f > 0.0 && f / prefilter_fpr < 1.0)
        .map(|(&n, &f)| n as f64 * c.get() * (prefilter_fpr / f).log2())
        .sum();
    prefilter + inner
}

/// A queryable two-stage realization of a [`SandwichPlan`].
#[derive(Debug, Clone)]
pub struct SandwichFilter {
    prefilter: BloomFilter,
    prefilter_fpr: f64,
    inner: PlbfFilter,
}

impl SandwichFilter {
    /// Build the pre-filter form of `plan` over `keys`: the shared
    /// pre-filter plus an inner partitioned filter at the residual rates.
    pub fn build<B: AsRef<[u8]>>(
        keys: &[(B, f64)],
        plan: &PartitionPlan,
        c: VariantConstant,
        seed: u64,
    ) -> Result<Self> {
        let base = PlbfFilter::build(keys, plan, c, seed)?;
        let sandwich = sandwich_transform(&base, keys)?;
        let inner_plan = PartitionPlan::new(
            plan.n_segments(),
            plan.boundaries().to_vec(),
            sandwich.inner_fprs.clone(),
            plan.target_f(),
        )?;
        let inner = PlbfFilter::build(keys, &inner_plan, c, splitmix64(seed))?;
        Ok(SandwichFilter {
            prefilter: sandwich.prefilter,
            prefilter_fpr: sandwich.prefilter_fpr,
            inner,
        })
    }

    pub fn query(&self, element: &[u8], score: f64) -> Result<bool> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::ScoreOutOfRange(score));
        }
        if !self.prefilter.contains(element) {
            return Ok(false);
        }
        self.inner.query(element, score)
    }

    pub fn prefilter(&self) -> &BloomFilter {
        &self.prefilter
    }

    pub fn inner(&self) -> &PlbfFilter {
        &self.inner
    }

    /// Rate the pre-filter was built for.
    pub fn prefilter_fpr(&self) -> f64 {
        self.prefilter_fpr
    }

    /// Accounted bits of pre-filter plus inner filters.
    pub fn accounted_bits(&self) -> Result<u64> {
        let c = VariantConstant::new(self.inner.variant_c())?;
        let prefilter_bits =
            bloom::size_for_fpr(self.prefilter.n_inserted(), self.prefilter_fpr, c)?;
        Ok(prefilter_bits + self.inner.accounted_bits())
    }
}

/// Wilson 95% interval around a measured false positive rate.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct FprEstimate {
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub positives: u64,
    pub queries: u64,
}

impl FprEstimate {
    fn from_counts(positives: u64, queries: u64) -> Self {
        let z = 1.959_963_984_540_054_f64; // 95% two-sided normal quantile
        let n = queries as f64;
        let p = positives as f64 / n;
        let z2 = z * z;
        let denom = 1.0 + z2 / n;
        let center = (p + z2 / (2.0 * n)) / denom;
        let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
        FprEstimate {
            estimate: p,
            ci_low: (center - half).max(0.0),
            ci_high: (center + half).min(1.0),
            positives,
            queries,
        }
    }
}

/// Measure the positive rate of an arbitrary scored-membership predicate
/// over a query stream.
pub fn measure_fpr_with<F>(mut query: F, queries_len: usize) -> Result<FprEstimate>
where
    F: FnMut(usize) -> Result<bool>,
{
    if queries_len == 0 {
        return Err(Error::EmptySample("query"));
    }
    let mut positives = 0u64;
    for i in 0..queries_len {
        if query(i)? {
            positives += 1;
        }
    }
    Ok(FprEstimate::from_counts(positives, queries_len as u64))
}

/// Measured false positive rate of `filter` over scored non-key queries,
/// with a Wilson 95% confidence interval. The queries must be disjoint from
/// the filter's keys for the estimate to mean anything.
pub fn measure_fpr<B: AsRef<[u8]>>(
    filter: &PlbfFilter,
    queries: &[(B, f64)],
) -> Result<FprEstimate> {
    measure_fpr_with(
        |i| filter.query(queries[i].0.as_ref(), queries[i].1),
        queries.len(),
    )
}
