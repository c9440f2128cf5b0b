//! Benchmark harness: space/FPR sweeps over methods and region counts.
//!
//! Reproduces the evaluation protocol at desk scale: the histogram is
//! estimated from all keys plus a held-in fraction of the non-keys
//! (40% by default), plans are realized as actual filters, and the false
//! positive rate is measured on the remaining held-out non-keys only.

use crate::bloom::{self, BloomFilter, VariantConstant};
use crate::error::{Error, Result};
use crate::filter::{measure_fpr_with, PlbfFilter, SandwichFilter};
use crate::optimizer::{
    self, divergence_by_region_count, solve_general, solve_relaxed, SolveConfig, SolveReport,
};
use crate::score::{split_indices, ScoreHistogram, ScoreRecord, ScoreSample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use std::io::Write;

/// Methods a sweep can compare.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    /// Plain standard Bloom filter over all keys.
    StandardBf,
    /// The same plain filter, with its space divided by log2(e): the
    /// accounting convention for an idealized space-optimal filter.
    OptimalBfAccounting,
    /// Two-region partitioned plan restated in pre-filter form.
    Sandwich2Region,
    /// The k-region partitioned filter.
    Plbf,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 4] = [
        BaselineKind::StandardBf,
        BaselineKind::OptimalBfAccounting,
        BaselineKind::Sandwich2Region,
        BaselineKind::Plbf,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BaselineKind::StandardBf => "standard_bf",
            BaselineKind::OptimalBfAccounting => "optimal_bf_accounting",
            BaselineKind::Sandwich2Region => "sandwich_2region",
            BaselineKind::Plbf => "plbf",
        }
    }
}

impl std::str::FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BaselineKind::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown method {s:?}")))
    }
}

/// One measured sweep point.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub method: String,
    pub target_f: f64,
    pub total_bits: f64,
    pub kib: f64,
    pub measured_fpr: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub divergence_bits: f64,
    pub k: u32,
    #[serde(rename = "N")]
    pub n_segments: u32,
    pub seed: u64,
}

/// Rows of a space/FPR sweep, sorted by (method, target rate).
#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| Error::io("<writer>", e))?;
        Ok(())
    }

    pub fn write_json<W: Write>(&self, mut writer: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut writer, &self.rows)
            .map_err(|e| Error::InvalidParameter(format!("json encode: {e}")))?;
        writer
            .write_all(b"\n")
            .map_err(|e| Error::io("<writer>", e))?;
        Ok(())
    }
}

/// Sweep parameters. `estimation_fraction` of the non-keys feeds the
/// histogram; the rest are the measurement stream. `queries`, when set,
/// resamples that stream with replacement to the requested size.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub target_fprs: Vec<f64>,
    pub regions: usize,
    pub n_segments: usize,
    pub methods: Vec<BaselineKind>,
    pub seed: u64,
    pub c: VariantConstant,
    pub model_size_bits: f64,
    pub estimation_fraction: f64,
    pub queries: Option<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            target_fprs: vec![0.05, 0.02, 0.01, 0.005, 0.002, 0.001, 0.0005],
            regions: 5,
            n_segments: 1000,
            methods: BaselineKind::ALL.to_vec(),
            seed: 42,
            c: VariantConstant::optimal(),
            model_size_bits: 0.0,
            estimation_fraction: 0.4,
            queries: None,
        }
    }
}

/// Keys plus the estimation/evaluation split of the non-keys.
struct SweepData<'a> {
    keys: Vec<(&'a [u8], f64)>,
    hist: ScoreHistogram,
    eval_queries: Vec<(&'a [u8], f64)>,
}

fn prepare<'a>(
    keys: &'a [ScoreRecord],
    nonkeys: &'a [ScoreRecord],
    cfg: &SweepConfig,
) -> Result<SweepData<'a>> {
    if keys.is_empty() {
        return Err(Error::EmptySample("key"));
    }
    if nonkeys.len() < 2 {
        return Err(Error::EmptySample("non-key"));
    }
    let (est_idx, eval_idx) =
        split_indices(nonkeys.len(), cfg.estimation_fraction, cfg.seed)?;
    // Held-out discipline: measurement never sees estimation non-keys.
    debug_assert!({
        let eval: std::collections::HashSet<_> = eval_idx.iter().collect();
        est_idx.iter().all(|i| !eval.contains(i))
    });
    if est_idx.is_empty() || eval_idx.is_empty() {
        return Err(Error::InvalidParameter(
            "non-key split left an empty part".into(),
        ));
    }

    let key_sample = ScoreSample::keys(keys.iter().map(|r| r.score).collect())?;
    let est_sample =
        ScoreSample::nonkeys(est_idx.iter().map(|&i| nonkeys[i].score).collect())?;
    let hist = ScoreHistogram::from_samples(&key_sample, &est_sample, cfg.n_segments)?;

    Ok(SweepData {
        keys: keys
            .iter()
            .map(|r| (r.id.as_bytes(), r.score))
            .collect(),
        hist,
        eval_queries: eval_idx
            .iter()
            .map(|&i| (nonkeys[i].id.as_bytes(), nonkeys[i].score))
            .collect(),
    })
}

fn measurement_stream<'a>(
    eval: &[(&'a [u8], f64)],
    queries: Option<usize>,
    seed: u64,
) -> Vec<(&'a [u8], f64)> {
    match queries {
        None => eval.to_vec(),
        Some(m) => {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            (0..m).map(|_| eval[rng.random_range(0..eval.len())]).collect()
        }
    }
}

fn solve_for(hist: &ScoreHistogram, cfg: &SolveConfig) -> Result<SolveReport> {
    if cfg.regions == 1 {
        solve_relaxed(hist, cfg)
    } else {
        solve_general(hist, cfg)
    }
}

/// Run the full sweep: one row per (method, target rate).
pub fn run_sweep(
    keys: &[ScoreRecord],
    nonkeys: &[ScoreRecord],
    cfg: &SweepConfig,
) -> Result<SweepReport> {
    let data = prepare(keys, nonkeys, cfg)?;
    let n_keys = data.keys.len() as u64;

    let mut rows = Vec::new();
    for (method_idx, &method) in cfg.methods.iter().enumerate() {
        for (f_idx, &target_f) in cfg.target_fprs.iter().enumerate() {
            let row_seed = splitmix64(
                cfg.seed ^ ((method_idx as u64) << 32) ^ (f_idx as u64 + 1),
            );
            match sweep_row(&data, cfg, method, target_f, n_keys, row_seed) {
                Ok(row) => rows.push(row),
                Err(e) => {
                    // A failed point must not sink the rest of the sweep.
                    eprintln!(
                        "sweep point ({}, {target_f}) failed: {e}",
                        method.as_str()
                    );
                }
            }
        }
    }
    rows.sort_by(|a, b| {
        a.method
            .cmp(&b.method)
            .then(a.target_f.total_cmp(&b.target_f))
    });
    Ok(SweepReport { rows })
}

fn sweep_row(
    data: &SweepData<'_>,
    cfg: &SweepConfig,
    method: BaselineKind,
    target_f: f64,
    n_keys: u64,
    row_seed: u64,
) -> Result<SweepRow> {
    let stream = measurement_stream(&data.eval_queries, cfg.queries, row_seed);
    let (total_bits, divergence_bits, k, estimate) = match method {
        BaselineKind::StandardBf | BaselineKind::OptimalBfAccounting => {
            let mut filter = BloomFilter::with_target_fpr(n_keys, target_f, row_seed)?;
            for (element, _) in &data.keys {
                filter.insert(element);
            }
            let estimate =
                measure_fpr_with(|i| Ok(filter.contains(stream[i].0)), stream.len())?;
            let standard_bits =
                bloom::size_for_fpr(n_keys, target_f, VariantConstant::standard())? as f64;
            let bits = match method {
                BaselineKind::StandardBf => standard_bits,
                _ => standard_bits / bloom::STANDARD_C,
            };
            (bits, 0.0, 1u32, estimate)
        }
        BaselineKind::Plbf => {
            let solve_cfg = SolveConfig {
                target_f,
                regions: cfg.regions,
                n_keys,
                c: cfg.c,
                model_size_bits: cfg.model_size_bits,
            };
            let report = solve_for(&data.hist, &solve_cfg)?;
            let filter = PlbfFilter::build(&data.keys, &report.plan, cfg.c, row_seed)?;
            let estimate = measure_fpr_with(
                |i| filter.query(stream[i].0, stream[i].1),
                stream.len(),
            )?;
            (
                filter.accounted_bits() as f64,
                report.divergence_bits,
                cfg.regions as u32,
                estimate,
            )
        }
        BaselineKind::Sandwich2Region => {
            let solve_cfg = SolveConfig {
                target_f,
                regions: 2,
                n_keys,
                c: cfg.c,
                model_size_bits: cfg.model_size_bits,
            };
            let report = solve_general(&data.hist, &solve_cfg)?;
            let estimate;
            let bits;
            if report.plan.fprs().iter().any(|&f| f >= 1.0) {
                // A capped region cannot be restated behind a pre-filter;
                // measure the plain two-region plan instead.
                let filter =
                    PlbfFilter::build(&data.keys, &report.plan, cfg.c, row_seed)?;
                estimate = measure_fpr_with(
                    |i| filter.query(stream[i].0, stream[i].1),
                    stream.len(),
                )?;
                bits = filter.accounted_bits() as f64;
            } else {
                let filter =
                    SandwichFilter::build(&data.keys, &report.plan, cfg.c, row_seed)?;
                estimate = measure_fpr_with(
                    |i| filter.query(stream[i].0, stream[i].1),
                    stream.len(),
                )?;
                bits = filter.accounted_bits()? as f64;
            }
            (bits, report.divergence_bits, 2u32, estimate)
        }
    };

    Ok(SweepRow {
        method: method.as_str().to_string(),
        target_f,
        total_bits,
        kib: total_bits / 1024.0,
        measured_fpr: estimate.estimate,
        ci_low: estimate.ci_low,
        ci_high: estimate.ci_high,
        divergence_bits,
        k,
        n_segments: cfg.n_segments as u32,
        seed: cfg.seed,
    })
}

/// One point of a region-count sweep.
#[derive(Debug, Clone, Serialize)]
pub struct RegionsSweepRow {
    pub k: u32,
    pub saved_bits: f64,
    pub divergence: f64,
}

pub const REFERENCE_REGION_COUNT: usize = 25;

/// Space saved versus a plain filter as the region count grows. A reference
/// row at 25 regions is always included.
pub fn run_regions_sweep(
    keys: &[ScoreRecord],
    nonkeys: &[ScoreRecord],
    k_list: &[usize],
    cfg: &SweepConfig,
) -> Result<Vec<RegionsSweepRow>> {
    if k_list.is_empty() {
        return Err(Error::InvalidParameter("empty region count list".into()));
    }
    if k_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter(
            "region counts must be strictly ascending".into(),
        ));
    }
    let data = prepare(keys, nonkeys, cfg)?;
    let n_keys = data.keys.len() as u64;

    let mut wanted: Vec<usize> = k_list.to_vec();
    if !wanted.contains(&REFERENCE_REGION_COUNT)
        && REFERENCE_REGION_COUNT <= cfg.n_segments
    {
        wanted.push(REFERENCE_REGION_COUNT);
        wanted.sort_unstable();
    }
    let k_max = *wanted.last().unwrap();
    if k_max > cfg.n_segments {
        return Err(Error::InvalidParameter(format!(
            "region count {k_max} exceeds segment count {}",
            cfg.n_segments
        )));
    }

    let divergences = divergence_by_region_count(&data.hist, k_max)?;
    Ok(wanted
        .into_iter()
        .map(|k| {
            let divergence = divergences[k - 1];
            RegionsSweepRow {
                k: k as u32,
                saved_bits: optimizer::space_saved(
                    divergence,
                    n_keys,
                    cfg.c,
                    cfg.model_size_bits,
                ),
                divergence,
            }
        })
        .collect())
}

pub fn write_regions_csv<W: Write>(rows: &[RegionsSweepRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io("<writer>", e))?;
    Ok(())
}

pub fn write_regions_json<W: Write>(rows: &[RegionsSweepRow], mut writer: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut writer, rows)
        .map_err(|e| Error::InvalidParameter(format!("json encode: {e}")))?;
    writer
        .write_all(b"\n")
        .map_err(|e| Error::io("<writer>", e))?;
    Ok(())
}

/// Solve, build and serialize one filter; the summary pairs the solver's
/// predicted space with the bits the built filter accounts for.
#[derive(Debug, Serialize)]
pub struct BuildSummary {
    pub n_keys: u64,
    pub n_nonkeys_estimation: usize,
    pub predicted_backup_bits: u64,
    pub realized_backup_bits: u64,
    pub physical_bits: u64,
    pub report: SolveReport,
}

pub fn build_filter(
    keys: &[ScoreRecord],
    nonkeys: &[ScoreRecord],
    cfg: &SweepConfig,
    target_f: f64,
) -> Result<(PlbfFilter, BuildSummary)> {
    let data = prepare(keys, nonkeys, cfg)?;
    let n_keys = data.keys.len() as u64;
    let solve_cfg = SolveConfig {
        target_f,
        regions: cfg.regions,
        n_keys,
        c: cfg.c,
        model_size_bits: cfg.model_size_bits,
    };
    let report = solve_for(&data.hist, &solve_cfg)?;
    let filter = PlbfFilter::build(&data.keys, &report.plan, cfg.c, cfg.seed)?;
    let summary = BuildSummary {
        n_keys,
        n_nonkeys_estimation: nonkeys.len() - data.eval_queries.len(),
        predicted_backup_bits: report.backup_bits,
        realized_backup_bits: filter.accounted_bits(),
        physical_bits: filter.physical_bits(),
        report,
    };
    Ok((filter, summary))
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}
