//! Space-minimizing partition search.
//!
//! Given the N-segment score histogram, a region count k and an overall
//! false positive budget F, this module finds region boundaries and
//! per-region backup-filter rates minimizing total backup space:
//!
//! * boundaries maximizing the KL divergence `sum_i g_i * log2(g_i / h_i)`
//!   between the induced region-level key and non-key distributions, found
//!   by an O(N^2 k) dynamic program over segment prefixes; maximizing this
//!   divergence is equivalent to minimizing backup space when no per-region
//!   rate cap binds;
//! * the closed-form relaxed rates `f_i = F * g_i / h_i`, iteratively
//!   clamped to 1 and rebalanced (`f_i = g_i (F - H_cap) / (h_i (1 - G_cap))`
//!   over uncapped regions) until all rates are at most 1, which takes at
//!   most k passes since each pass caps at least one new region;
//! * a general solver that additionally sweeps every admissible boundary for
//!   the last region, because a capped region (rate 1, zero bits) in an
//!   optimal solution sits where the key/non-key density ratio is highest.
//!
//! All logarithms are base 2 so divergences and space read directly in bits.

use crate::bloom::VariantConstant;
use crate::error::{Error, Result};
use crate::score::ScoreHistogram;
use serde::Serialize;

/// Region boundaries and per-region false positive rates for one filter.
///
/// Boundaries are segment indices `0 = b_0 < b_1 < ... < b_k = N`; region i
/// (0-based) covers segments `b_i + 1 ..= b_{i+1}` (1-based), i.e. scores in
/// `(b_i / N, b_{i+1} / N]`, with region 0 also taking score 0. Storing the
/// integer indices rather than derived thresholds keeps routing exactly
/// reproducible.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartitionPlan {
    n_segments: u32,
    boundaries: Vec<u32>,
    fprs: Vec<f64>,
    target_f: f64,
}

impl PartitionPlan {
    pub fn new(
        n_segments: u32,
        boundaries: Vec<u32>,
        fprs: Vec<f64>,
        target_f: f64,
    ) -> Result<Self> {
        check_target_f(target_f)?;
        check_boundaries(&boundaries, n_segments)?;
        if fprs.len() + 1 != boundaries.len() {
            return Err(Error::InvalidParameter(format!(
                "{} rates for {} regions",
                fprs.len(),
                boundaries.len() - 1
            )));
        }
        // Rate 0 is the convention for a region holding no keys.
        for &f in &fprs {
            if !f.is_finite() || !(0.0..=1.0).contains(&f) {
                return Err(Error::InvalidParameter(format!(
                    "region false positive rate {f} outside [0, 1]"
                )));
            }
        }
        Ok(PartitionPlan {
            n_segments,
            boundaries,
            fprs,
            target_f,
        })
    }

    pub fn n_segments(&self) -> u32 {
        self.n_segments
    }

    pub fn k(&self) -> usize {
        self.fprs.len()
    }

    pub fn boundaries(&self) -> &[u32] {
        &self.boundaries
    }

    pub fn fprs(&self) -> &[f64] {
        &self.fprs
    }

    pub fn target_f(&self) -> f64 {
        self.target_f
    }

    /// Region thresholds `t_i = b_i / N` as reals.
    pub fn thresholds(&self) -> Vec<f64> {
        self.boundaries
            .iter()
            .map(|&b| b as f64 / self.n_segments as f64)
            .collect()
    }

    /// 0-based region receiving `score`: the first region whose upper
    /// threshold is at or above it.
    pub fn region_of_score(&self, score: f64) -> usize {
        let n = self.n_segments as f64;
        let (mut lo, mut hi) = (0usize, self.k() - 1);
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
}

fn check_boundaries(boundaries: &[u32], n_segments: u32) -> Result<()> {
    let spans = boundaries.first() == Some(&0) && boundaries.last() == Some(&n_segments);
    if !spans || boundaries.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidBoundaries);
    }
    Ok(())
}

fn check_target_f(target_f: f64) -> Result<()> {
    if !(target_f > 0.0 && target_f < 1.0) {
        return Err(Error::FprOutOfRange(target_f));
    }
    Ok(())
}

/// Divergence contribution of one region: `g * log2(g / h)`, with the
/// convention that a zero-key region contributes nothing.
fn region_term(g: f64, h: f64) -> f64 {
    debug_assert!(h > 0.0);
    if g <= 0.0 {
        0.0
    } else {
        g * (g / h).log2()
    }
}

/// Cumulative segment masses; `mass(a, b)` is the mass of segments
/// `a+1 ..= b` (1-based), i.e. of the half-open prefix difference.
struct PrefixMasses {
    g: Vec<f64>,
    h: Vec<f64>,
}

impl PrefixMasses {
    fn of(hist: &ScoreHistogram) -> Self {
        let accumulate = |seg: &[f64]| {
            let mut acc = 0.0;
            std::iter::once(0.0)
                .chain(seg.iter().map(|&v| {
                    acc += v;
                    acc
                }))
                .collect::<Vec<_>>()
        };
        PrefixMasses {
            g: accumulate(hist.g_seg()),
            h: accumulate(hist.h_seg()),
        }
    }

    fn g_mass(&self, a: u32, b: u32) -> f64 {
        (self.g[b as usize] - self.g[a as usize]).max(0.0)
    }

    fn h_mass(&self, a: u32, b: u32) -> f64 {
        self.h[b as usize] - self.h[a as usize]
    }

    fn region_masses(&self, boundaries: &[u32]) -> (Vec<f64>, Vec<f64>) {
        let g = boundaries
            .windows(2)
            .map(|w| self.g_mass(w[0], w[1]))
            .collect();
        let h = boundaries
            .windows(2)
            .map(|w| self.h_mass(w[0], w[1]))
            .collect();
        (g, h)
    }
}

/// Per-region key and non-key query masses induced by `boundaries`.
pub fn region_masses(hist: &ScoreHistogram, boundaries: &[u32]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_boundaries(boundaries, hist.n_segments() as u32)?;
    Ok(PrefixMasses::of(hist).region_masses(boundaries))
}

/// KL divergence in bits between the region-level key and non-key
/// distributions induced by `boundaries` over the histogram.
pub fn kl_divergence(hist: &ScoreHistogram, boundaries: &[u32]) -> Result<f64> {
    let (g, h) = region_masses(hist, boundaries)?;
    Ok(g.iter().zip(&h).map(|(&g, &h)| region_term(g, h)).sum())
}

/// Dynamic-programming table over segment prefixes.
///
/// `best[j][i]` is the maximum divergence achievable by splitting the first
/// `i` segments into exactly `j` regions; `split[j][i]` the boundary of the
/// last of those regions (the smallest index on ties, for determinism).
struct DivergenceTable {
    best: Vec<Vec<f64>>,
    split: Vec<Vec<u32>>,
}

impl DivergenceTable {
    fn fill(prefix: &PrefixMasses, n_segments: usize, k_max: usize) -> Self {
        let mut best = vec![vec![f64::NEG_INFINITY; n_segments + 1]; k_max + 1];
        let mut split = vec![vec![0u32; n_segments + 1]; k_max + 1];
        best[0][0] = 0.0;
        for j in 1..=k_max {
            for i in j..=n_segments {
                let mut cell = f64::NEG_INFINITY;
                let mut cell_split = 0u32;
                for (s, &prev) in best[j - 1].iter().enumerate().take(i).skip(j - 1) {
                    if prev == f64::NEG_INFINITY {
                        continue;
                    }
                    let g = prefix.g_mass(s as u32, i as u32);
                    let h = prefix.h_mass(s as u32, i as u32);
                    let cand = prev + region_term(g, h);
                    if cand > cell {
                        cell = cand;
                        cell_split = s as u32;
                    }
                }
                best[j][i] = cell;
                split[j][i] = cell_split;
            }
        }
        DivergenceTable { best, split }
    }

    /// Boundaries `[0, ..., end]` of the best j-region split of the first
    /// `end` segments.
    fn backtrack(&self, j: usize, end: u32) -> Vec<u32> {
        let mut boundaries = vec![end];
        let (mut j, mut i) = (j, end);
        while j > 0 {
            i = self.split[j][i as usize];
            boundaries.push(i);
            j -= 1;
        }
        boundaries.reverse();
        boundaries
    }
}

fn check_region_count(k: usize, n_segments: usize) -> Result<()> {
    if k < 1 || k > n_segments {
        return Err(Error::InvalidParameter(format!(
            "region count {k} outside 1..={n_segments}"
        )));
    }
    Ok(())
}

/// Boundaries splitting the histogram's N segments into k contiguous regions
/// with maximum KL divergence. O(N^2 k) table fill.
pub fn max_divergence_boundaries(hist: &ScoreHistogram, k: usize) -> Result<Vec<u32>> {
    check_region_count(k, hist.n_segments())?;
    let prefix = PrefixMasses::of(hist);
    let table = DivergenceTable::fill(&prefix, hist.n_segments(), k);
    Ok(table.backtrack(k, hist.n_segments() as u32))
}

/// Maximum divergence for every region count `1..=k_max`, from one shared
/// table fill. Entry `j - 1` corresponds to j regions.
pub fn divergence_by_region_count(hist: &ScoreHistogram, k_max: usize) -> Result<Vec<f64>> {
    check_region_count(k_max, hist.n_segments())?;
    let prefix = PrefixMasses::of(hist);
    let table = DivergenceTable::fill(&prefix, hist.n_segments(), k_max);
    Ok((1..=k_max)
        .map(|j| table.best[j][hist.n_segments()])
        .collect())
}

/// Optimal per-region false positive rates for fixed region masses.
///
/// Starts from the relaxed closed form `f_i = F * g_i / h_i`; while any rate
/// exceeds 1, caps those regions at 1 and recomputes the rest as
/// `f_i = g_i * (F - H_cap) / (h_i * (1 - G_cap))`, where `G_cap`, `H_cap`
/// are the capped regions' masses. Regions with no key mass get rate 0 (they
/// hold a zero-bit filter that rejects everything).
pub fn optimal_region_fprs(g: &[f64], h: &[f64], target_f: f64) -> Result<Vec<f64>> {
    check_target_f(target_f)?;
    if g.is_empty() || g.len() != h.len() {
        return Err(Error::InvalidParameter(
            "region mass arrays must be non-empty and equal-length".into(),
        ));
    }
    if h.iter().any(|&h| h <= 0.0 || h.is_nan()) || g.iter().any(|&g| g < 0.0 || g.is_nan()) {
        return Err(Error::InvalidParameter(
            "region masses must have h > 0 and g >= 0".into(),
        ));
    }

    let mut fprs: Vec<f64> = g
        .iter()
        .zip(h)
        .map(|(&g, &h)| target_f * g / h)
        .collect();
    loop {
        let mut newly_capped = false;
        for f in fprs.iter_mut() {
            if *f > 1.0 {
                *f = 1.0;
                newly_capped = true;
            }
        }
        if !newly_capped {
            break;
        }
        let (g_cap, h_cap) = fprs
            .iter()
            .zip(g.iter().zip(h))
            .filter(|(f, _)| **f == 1.0)
            .fold((0.0, 0.0), |(gs, hs), (_, (&g, &h))| (gs + g, hs + h));
        // Capped regions satisfy h_i < F * g_i, so the remaining budget
        // F - h_cap stays positive whenever F < 1.
        assert!(
            target_f - h_cap > 0.0,
            "false positive budget exhausted by capped regions"
        );
        for (f, (&g_i, &h_i)) in fprs.iter_mut().zip(g.iter().zip(h)) {
            if *f < 1.0 {
                *f = if g_i == 0.0 {
                    0.0
                } else {
                    g_i * (target_f - h_cap) / (h_i * (1.0 - g_cap))
                };
            }
        }
    }

    debug_assert!(fprs.iter().all(|&f| (0.0..=1.0).contains(&f)));
    debug_assert!({
        let spent: f64 = fprs.iter().zip(h).map(|(&f, &h)| f * h).sum();
        spent <= target_f + 1e-9
    });
    Ok(fprs)
}

/// Predicted backup-filter space in bits: per-region
/// `ceil(n * g_i * c * log2(1 / f_i))`, with capped and empty regions
/// contributing nothing.
pub fn space_used(g: &[f64], fprs: &[f64], n_keys: u64, c: VariantConstant) -> u64 {
    g.iter()
        .zip(fprs)
        .map(|(&g, &f)| region_bits(g, f, n_keys, c))
        .sum()
}

fn region_bits(g: f64, fpr: f64, n_keys: u64, c: VariantConstant) -> u64 {
    if g <= 0.0 || fpr >= 1.0 || fpr <= 0.0 {
        return 0;
    }
    (n_keys as f64 * g * c.get() * (1.0 / fpr).log2()).ceil() as u64
}

/// Real-valued backup space, used to rank candidate partitions without
/// rounding noise.
fn exact_space(g: &[f64], fprs: &[f64], n_keys: u64, c: VariantConstant) -> f64 {
    g.iter()
        .zip(fprs)
        .filter(|(&g, &f)| g > 0.0 && f < 1.0 && f > 0.0)
        .map(|(&g, &f)| n_keys as f64 * g * c.get() * (1.0 / f).log2())
        .sum()
}

/// Space saved versus a plain filter at the same target:
/// `c * n * D_KL - model_size` bits (may be negative).
pub fn space_saved(
    divergence_bits: f64,
    n_keys: u64,
    c: VariantConstant,
    model_size_bits: f64,
) -> f64 {
    c.get() * n_keys as f64 * divergence_bits - model_size_bits
}

/// Fraction of a plain filter's space saved:
/// `D_KL / log2(1/F) - model_size / (c * n * log2(1/F))`.
pub fn relative_space_saved(
    divergence_bits: f64,
    target_f: f64,
    n_keys: u64,
    c: VariantConstant,
    model_size_bits: f64,
) -> Result<f64> {
    check_target_f(target_f)?;
    let denom = (1.0 / target_f).log2();
    let model_term = if model_size_bits == 0.0 {
        0.0
    } else {
        model_size_bits / (c.get() * n_keys as f64 * denom)
    };
    Ok(divergence_bits / denom - model_term)
}

/// Inputs shared by the solvers.
#[derive(Debug, Clone, Copy)]
pub struct SolveConfig {
    pub target_f: f64,
    pub regions: usize,
    pub n_keys: u64,
    pub c: VariantConstant,
    pub model_size_bits: f64,
}

/// Per-region view of a solved plan.
#[derive(Debug, Clone, Serialize)]
pub struct RegionStat {
    pub g_i: f64,
    pub h_i: f64,
    pub f_i: f64,
    pub bits_i: u64,
}

/// A solved plan with its predicted space figures.
#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub plan: PartitionPlan,
    pub divergence_bits: f64,
    pub backup_bits: u64,
    pub saved_bits: f64,
    pub regions: Vec<RegionStat>,
}

fn build_report(
    hist: &ScoreHistogram,
    boundaries: Vec<u32>,
    cfg: &SolveConfig,
) -> Result<SolveReport> {
    let prefix = PrefixMasses::of(hist);
    let (g, h) = prefix.region_masses(&boundaries);
    let fprs = optimal_region_fprs(&g, &h, cfg.target_f)?;
    let divergence_bits = g.iter().zip(&h).map(|(&g, &h)| region_term(g, h)).sum();
    let backup_bits = space_used(&g, &fprs, cfg.n_keys, cfg.c);
    let regions = g
        .iter()
        .zip(&h)
        .zip(&fprs)
        .map(|((&g_i, &h_i), &f_i)| RegionStat {
            g_i,
            h_i,
            f_i,
            bits_i: region_bits(g_i, f_i, cfg.n_keys, cfg.c),
        })
        .collect();
    let plan = PartitionPlan::new(
        hist.n_segments() as u32,
        boundaries,
        fprs,
        cfg.target_f,
    )?;
    Ok(SolveReport {
        plan,
        divergence_bits,
        backup_bits,
        saved_bits: space_saved(divergence_bits, cfg.n_keys, cfg.c, cfg.model_size_bits),
        regions,
    })
}

/// Solve by maximizing divergence over all N segments, then assigning
/// optimal rates to the induced regions.
pub fn solve_relaxed(hist: &ScoreHistogram, cfg: &SolveConfig) -> Result<SolveReport> {
    check_target_f(cfg.target_f)?;
    let boundaries = max_divergence_boundaries(hist, cfg.regions)?;
    build_report(hist, boundaries, cfg)
}

/// Solve the capped problem: additionally try every admissible boundary for
/// the last region, since the divergence-maximizing split is no longer
/// optimal once some region's rate caps at 1.
///
/// For each candidate boundary `b` of the next-to-last threshold, the first
/// k-1 regions are the best divergence split of segments `1..=b` (one shared
/// O(N^2 k) table serves all candidates) and the last region covers the
/// rest; the candidate with the least backup space wins, earlier boundaries
/// winning ties.
pub fn solve_general(hist: &ScoreHistogram, cfg: &SolveConfig) -> Result<SolveReport> {
    check_target_f(cfg.target_f)?;
    let n = hist.n_segments();
    let k = cfg.regions;
    if k < 2 {
        return Err(Error::InvalidParameter(
            "general solver needs at least 2 regions (a 1-region plan is a plain filter)".into(),
        ));
    }
    check_region_count(k, n)?;

    let prefix = PrefixMasses::of(hist);
    let table = DivergenceTable::fill(&prefix, n, k - 1);

    let mut best: Option<(f64, Vec<u32>)> = None;
    for b in (k - 1) as u32..n as u32 {
        let mut boundaries = table.backtrack(k - 1, b);
        boundaries.push(n as u32);
        let (g, h) = prefix.region_masses(&boundaries);
        let fprs = optimal_region_fprs(&g, &h, cfg.target_f)?;
        let space = exact_space(&g, &fprs, cfg.n_keys, cfg.c);
        if best.as_ref().is_none_or(|(s, _)| space < *s) {
            best = Some((space, boundaries));
        }
    }
    let (_, boundaries) = best.expect("candidate range is non-empty for k <= N");
    build_report(hist, boundaries, cfg)
}
