//! Score-space ingestion and discretization.
//!
//! A learned model (external to this crate) maps elements to scores in
//! [0, 1]. This module turns key / non-key score samples into the N-segment
//! histogram the optimizer consumes, generates the synthetic Zipfian score
//! distributions used by the benchmark harness, and reads/writes the score
//! CSV format.
//!
//! Segment convention: the score space splits into N equal-width segments,
//! segment j (1-indexed) covering `((j-1)/N, j/N]`, with segment 1 also
//! taking score 0. A score equal to a boundary `j/N` therefore always lands
//! in segment j, never j+1, and the same comparison rule routes queries in
//! the assembled filter.

use crate::error::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// Whether a scored element belongs to the represented set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Key,
    NonKey,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Key => "key",
            Label::NonKey => "nonkey",
        }
    }
}

impl std::str::FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "key" => Ok(Label::Key),
            "nonkey" => Ok(Label::NonKey),
            other => Err(Error::MalformedScoreFile(format!(
                "label {other:?} is neither \"key\" nor \"nonkey\""
            ))),
        }
    }
}

/// A labelled collection of scores, each in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSample {
    scores: Vec<f64>,
    label: Label,
}

impl ScoreSample {
    pub fn new(scores: Vec<f64>, label: Label) -> Result<Self> {
        for &s in &scores {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::ScoreOutOfRange(s));
            }
        }
        Ok(ScoreSample { scores, label })
    }

    pub fn keys(scores: Vec<f64>) -> Result<Self> {
        ScoreSample::new(scores, Label::Key)
    }

    pub fn nonkeys(scores: Vec<f64>) -> Result<Self> {
        ScoreSample::new(scores, Label::NonKey)
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn label(&self) -> Label {
        self.label
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// 0-based index of the segment holding `score`, under the right-closed
/// segment convention.
///
/// The multiplicative guess is corrected against the exact rational
/// boundaries `j/N` so that membership agrees with direct threshold
/// comparison everywhere, including scores that sit exactly on a boundary.
pub fn segment_of(score: f64, n_segments: usize) -> usize {
    debug_assert!((0.0..=1.0).contains(&score));
    let n = n_segments as f64;
    let mut j = (score * n).ceil() as usize;
    j = j.clamp(1, n_segments);
    while j > 1 && score <= (j - 1) as f64 / n {
        j -= 1;
    }
    while j < n_segments && score > j as f64 / n {
        j += 1;
    }
    j - 1
}

/// Per-segment key mass `g` and non-key query mass `h` over N segments.
///
/// `g` holds exact empirical frequencies. `h` is Laplace-smoothed with
/// `alpha = 1`, i.e. `h[j] = (count_j + 1) / (total + N)`, because the
/// optimizer divides by per-region non-key mass and empirically empty
/// segments would otherwise produce infinite rate ratios. Smoothing keeps
/// every `h` entry strictly positive; `g` entries may be zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreHistogram {
    n_segments: usize,
    g_seg: Vec<f64>,
    h_seg: Vec<f64>,
}

impl ScoreHistogram {
    /// Discretize key / non-key samples into N segments.
    pub fn from_samples(
        keys: &ScoreSample,
        nonkeys: &ScoreSample,
        n_segments: usize,
    ) -> Result<Self> {
        if n_segments == 0 {
            return Err(Error::InvalidParameter(
                "segment count must be >= 1".into(),
            ));
        }
        if keys.is_empty() {
            return Err(Error::EmptySample("key"));
        }
        if nonkeys.is_empty() {
            return Err(Error::EmptySample("non-key"));
        }
        let count = |sample: &ScoreSample| {
            let mut counts = vec![0u64; n_segments];
            for &s in sample.scores() {
                counts[segment_of(s, n_segments)] += 1;
            }
            counts
        };
        let key_counts = count(keys);
        let nonkey_counts = count(nonkeys);

        let g_total = keys.len() as f64;
        let g_seg = key_counts.iter().map(|&c| c as f64 / g_total).collect();
        let h_total = nonkeys.len() as f64 + n_segments as f64;
        let h_seg = nonkey_counts
            .iter()
            .map(|&c| (c as f64 + 1.0) / h_total)
            .collect();
        Ok(ScoreHistogram {
            n_segments,
            g_seg,
            h_seg,
        })
    }

    /// Build directly from per-segment masses. Both arrays must sum to 1 and
    /// every `h` entry must be strictly positive (as smoothing would ensure).
    pub fn from_masses(g_seg: Vec<f64>, h_seg: Vec<f64>) -> Result<Self> {
        if g_seg.is_empty() || g_seg.len() != h_seg.len() {
            return Err(Error::InvalidParameter(
                "mass arrays must be non-empty and equal-length".into(),
            ));
        }
        let g_bad = g_seg.iter().any(|&g| g < 0.0 || g.is_nan());
        let h_bad = h_seg.iter().any(|&h| h <= 0.0 || h.is_nan());
        if g_bad || h_bad {
            return Err(Error::InvalidParameter(
                "g masses must be >= 0 and h masses > 0".into(),
            ));
        }
        for (name, sum) in [
            ("g", g_seg.iter().sum::<f64>()),
            ("h", h_seg.iter().sum::<f64>()),
        ] {
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidParameter(format!(
                    "{name} masses sum to {sum}, expected 1"
                )));
            }
        }
        Ok(ScoreHistogram {
            n_segments: g_seg.len(),
            g_seg,
            h_seg,
        })
    }

    pub fn n_segments(&self) -> usize {
        self.n_segments
    }

    pub fn g_seg(&self) -> &[f64] {
        &self.g_seg
    }

    pub fn h_seg(&self) -> &[f64] {
        &self.h_seg
    }
}

/// Parameters of the synthetic Zipfian score generator.
#[derive(Debug, Clone, Copy)]
pub struct ZipfConfig {
    pub skew: f64,
    pub n_keys: usize,
    pub n_nonkeys: usize,
    pub seed: u64,
}

impl ZipfConfig {
    fn validate(&self) -> Result<()> {
        if self.skew <= 0.0 || !self.skew.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "zipf skew {} must be a positive finite value",
                self.skew
            )));
        }
        if self.n_keys == 0 || self.n_nonkeys == 0 {
            return Err(Error::InvalidParameter(
                "zipf sample sizes must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Draw synthetic key / non-key score samples from mirrored Zipfian
/// distributions over N segments.
///
/// Segment probabilities are proportional to `rank^(-skew)`: keys assign
/// rank 1 to the highest-score segment, non-keys to the lowest, so a larger
/// skew simulates a sharper (better) model. Scores are uniform within their
/// segment. Fully deterministic for a given seed.
pub fn zipf_scores(config: &ZipfConfig, n_segments: usize) -> Result<(ScoreSample, ScoreSample)> {
    config.validate()?;
    if n_segments == 0 {
        return Err(Error::InvalidParameter(
            "segment count must be >= 1".into(),
        ));
    }

    // cumulative[j] = total weight of segments 0..=j
    let cumulative = |highest_first: bool| -> Vec<f64> {
        let mut acc = 0.0;
        (0..n_segments)
            .map(|j| {
                let rank = if highest_first { n_segments - j } else { j + 1 };
                acc += (rank as f64).powf(-config.skew);
                acc
            })
            .collect()
    };
    let key_cdf = cumulative(true);
    let nonkey_cdf = cumulative(false);

    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut draw = |cdf: &[f64], count: usize, stream: u64| -> Vec<f64> {
        rng.set_stream(stream);
        let total = *cdf.last().unwrap();
        (0..count)
            .map(|_| {
                let target = rng.random::<f64>() * total;
                let j = cdf.partition_point(|&c| c < target); // 0-based segment
                // Uniform in ((j)/N, (j+1)/N]: (j + 1 - u)/N with u in [0,1).
                let u = rng.random::<f64>();
                ((j + 1) as f64 - u) / n_segments as f64
            })
            .collect()
    };
    let keys = ScoreSample::keys(draw(&key_cdf, config.n_keys, 0))?;
    let nonkeys = ScoreSample::nonkeys(draw(&nonkey_cdf, config.n_nonkeys, 1))?;
    Ok((keys, nonkeys))
}

/// Deterministic shuffled split of `0..len` into a `floor(fraction * len)`
/// part and its complement.
pub fn split_indices(len: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "split fraction {fraction} outside (0, 1)"
        )));
    }
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    // Fisher-Yates
    for i in (1..len).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let cut = (fraction * len as f64).floor() as usize;
    let rest = order.split_off(cut);
    Ok((order, rest))
}

/// Split a sample into disjoint estimation and evaluation parts. The
/// estimation part gets `floor(fraction * len)` scores.
pub fn split_sample(
    sample: &ScoreSample,
    fraction: f64,
    seed: u64,
) -> Result<(ScoreSample, ScoreSample)> {
    let (est_idx, eval_idx) = split_indices(sample.len(), fraction, seed)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| sample.scores()[i]).collect();
    Ok((
        ScoreSample::new(pick(&est_idx), sample.label())?,
        ScoreSample::new(pick(&eval_idx), sample.label())?,
    ))
}

/// One row of the score CSV format: `id,score,label`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub id: String,
    pub score: f64,
    pub label: Label,
}

/// Scored elements partitioned by label, as loaded from a score file.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub keys: Vec<ScoreRecord>,
    pub nonkeys: Vec<ScoreRecord>,
}

impl Dataset {
    pub fn key_sample(&self) -> Result<ScoreSample> {
        ScoreSample::keys(self.keys.iter().map(|r| r.score).collect())
    }

    pub fn nonkey_sample(&self) -> Result<ScoreSample> {
        ScoreSample::nonkeys(self.nonkeys.iter().map(|r| r.score).collect())
    }
}

/// Read a `id,score,label` CSV score file.
pub fn read_score_csv(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut dataset = Dataset::default();
    for (line, row) in reader.deserialize::<ScoreRecord>().enumerate() {
        let record: ScoreRecord = row.map_err(|e| match classify_csv_error(&e) {
            Some(io) => io,
            None => Error::MalformedScoreFile(format!("row {}: {e}", line + 2)),
        })?;
        if !(0.0..=1.0).contains(&record.score) {
            return Err(Error::MalformedScoreFile(format!(
                "row {}: score {} outside [0, 1]",
                line + 2,
                record.score
            )));
        }
        match record.label {
            Label::Key => dataset.keys.push(record),
            Label::NonKey => dataset.nonkeys.push(record),
        }
    }
    Ok(dataset)
}

/// Read a single-column file of scores (no header), all with one label.
pub fn read_score_column(path: &Path, label: Label) -> Result<Vec<ScoreRecord>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let prefix = match label {
        Label::Key => "key",
        Label::NonKey => "non",
    };
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let score: f64 = line.trim().parse().map_err(|_| {
                Error::MalformedScoreFile(format!("line {}: {line:?} is not a score", i + 1))
            })?;
            if !(0.0..=1.0).contains(&score) {
                return Err(Error::MalformedScoreFile(format!(
                    "line {}: score {score} outside [0, 1]",
                    i + 1
                )));
            }
            Ok(ScoreRecord {
                id: format!("{prefix}-{i:08}"),
                score,
                label,
            })
        })
        .collect()
}

/// Write samples as a score CSV, synthesizing sequential ids.
pub fn write_score_csv<W: Write>(
    writer: W,
    keys: &ScoreSample,
    nonkeys: &ScoreSample,
) -> Result<usize> {
    let mut w = csv::Writer::from_writer(writer);
    let mut rows = 0usize;
    for (i, &score) in keys.scores().iter().enumerate() {
        w.serialize(ScoreRecord {
            id: format!("key-{i:08}"),
            score,
            label: Label::Key,
        })?;
        rows += 1;
    }
    for (i, &score) in nonkeys.scores().iter().enumerate() {
        w.serialize(ScoreRecord {
            id: format!("non-{i:08}"),
            score,
            label: Label::NonKey,
        })?;
        rows += 1;
    }
    w.flush().map_err(|e| Error::io("<writer>", e))?;
    Ok(rows)
}

fn classify_csv_error(e: &csv::Error) -> Option<Error> {
    if let csv::ErrorKind::Io(_) = e.kind() {
        Some(Error::MalformedScoreFile(format!("I/O during parse: {e}")))
    } else {
        None
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::MalformedScoreFile(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn segment_boundaries_are_right_closed() {
        // A score of exactly j/N lands in segment j (0-based: j-1).
        for n in [1usize, 2, 3, 7, 10, 49, 1000] {
            for j in 1..=n {
                let s = j as f64 / n as f64;
                assert_eq!(segment_of(s, n), j - 1, "score {s} with N={n}");
            }
            assert_eq!(segment_of(0.0, n), 0);
        }
    }

    #[test]
    fn histogram_hand_count() {
        // 0.5 sits exactly on the N=2 boundary, so it belongs to segment 1.
        let keys = ScoreSample::keys(vec![0.9, 0.9, 0.1, 0.5]).unwrap();
        let nonkeys = ScoreSample::nonkeys(vec![0.1, 0.2]).unwrap();
        let hist = ScoreHistogram::from_samples(&keys, &nonkeys, 2).unwrap();
        assert_eq!(hist.g_seg(), &[0.5, 0.5]);
        // Non-key counts [2, 0], smoothed: [(2+1)/4, (0+1)/4].
        assert_eq!(hist.h_seg(), &[0.75, 0.25]);
        assert!(hist.h_seg().iter().all(|&h| h > 0.0));
    }

    #[test]
    fn histogram_uniform_symmetry() {
        let n = 5usize;
        let scores: Vec<f64> = (0..n).map(|j| (j as f64 + 0.5) / n as f64).collect();
        let keys = ScoreSample::keys(scores.clone()).unwrap();
        let nonkeys = ScoreSample::nonkeys(scores).unwrap();
        let hist = ScoreHistogram::from_samples(&keys, &nonkeys, n).unwrap();
        for j in 0..n {
            assert!((hist.g_seg()[j] - 0.2).abs() < 1e-12);
            assert!((hist.h_seg()[j] - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn histogram_boundary_score_lands_last() {
        let keys = ScoreSample::keys(vec![1.0]).unwrap();
        let nonkeys = ScoreSample::nonkeys(vec![0.2]).unwrap();
        let hist = ScoreHistogram::from_samples(&keys, &nonkeys, 4).unwrap();
        assert_eq!(hist.g_seg(), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn histogram_rejects_bad_inputs() {
        let keys = ScoreSample::keys(vec![0.5]).unwrap();
        let nonkeys = ScoreSample::nonkeys(vec![0.5]).unwrap();
        let empty = ScoreSample::keys(vec![]).unwrap();
        assert!(ScoreHistogram::from_samples(&keys, &nonkeys, 0).is_err());
        assert!(ScoreHistogram::from_samples(&empty, &nonkeys, 4).is_err());
        assert!(matches!(
            ScoreSample::keys(vec![1.2]),
            Err(Error::ScoreOutOfRange(_))
        ));
        assert!(ScoreSample::keys(vec![-0.1]).is_err());
    }

    #[test]
    fn zipf_is_deterministic() {
        let config = ZipfConfig {
            skew: 1.2,
            n_keys: 500,
            n_nonkeys: 300,
            seed: 42,
        };
        let (k1, n1) = zipf_scores(&config, 100).unwrap();
        let (k2, n2) = zipf_scores(&config, 100).unwrap();
        assert_eq!(k1, k2);
        assert_eq!(n1, n2);
    }

    #[test]
    fn zipf_rejects_nonpositive_skew() {
        let config = ZipfConfig {
            skew: 0.0,
            n_keys: 10,
            n_nonkeys: 10,
            seed: 1,
        };
        assert!(zipf_scores(&config, 10).is_err());
    }

    #[test]
    fn zipf_zero_skew_limit_is_uniform() {
        let config = ZipfConfig {
            skew: 1e-9,
            n_keys: 60_000,
            n_nonkeys: 60_000,
            seed: 7,
        };
        let n_segments = 10;
        let (keys, nonkeys) = zipf_scores(&config, n_segments).unwrap();
        let hist = ScoreHistogram::from_samples(&keys, &nonkeys, n_segments).unwrap();
        for j in 0..n_segments {
            assert!((hist.g_seg()[j] - 0.1).abs() < 0.01);
            assert!((hist.h_seg()[j] - 0.1).abs() < 0.01);
        }
        let divergence = crate::optimizer::kl_divergence(
            &hist,
            &(0..=n_segments as u32).collect::<Vec<_>>(),
        )
        .unwrap();
        assert!(divergence < 0.005, "divergence {divergence} not near zero");
    }

    #[test]
    fn zipf_key_mass_increases_nonkey_decreases() {
        let config = ZipfConfig {
            skew: 1.5,
            n_keys: 100_000,
            n_nonkeys: 100_000,
            seed: 3,
        };
        let n_segments = 1000;
        let (keys, nonkeys) = zipf_scores(&config, n_segments).unwrap();
        let hist = ScoreHistogram::from_samples(&keys, &nonkeys, n_segments).unwrap();
        // Rank correlation between segment index and mass: positive for keys,
        // negative for non-keys. Coarsen to deciles to suppress noise.
        let decile = |seg: &[f64]| -> Vec<f64> {
            seg.chunks(100).map(|c| c.iter().sum()).collect::<Vec<f64>>()
        };
        let g = decile(hist.g_seg());
        let h = decile(hist.h_seg());
        assert!(g.windows(2).all(|w| w[1] >= w[0]), "key mass not increasing: {g:?}");
        assert!(h.windows(2).all(|w| w[1] <= w[0]), "non-key mass not decreasing: {h:?}");
    }

    #[test]
    fn split_sample_partitions() {
        let sample = ScoreSample::keys((0..100).map(|i| i as f64 / 100.0).collect()).unwrap();
        let (est, eval) = split_sample(&sample, 0.4, 9).unwrap();
        assert_eq!(est.len(), 40);
        assert_eq!(eval.len(), 60);
        let mut all: Vec<f64> = est.scores().iter().chain(eval.scores()).copied().collect();
        all.sort_by(f64::total_cmp);
        let mut original = sample.scores().to_vec();
        original.sort_by(f64::total_cmp);
        assert_eq!(all, original);

        let (est2, _) = split_sample(&sample, 0.4, 9).unwrap();
        assert_eq!(est.scores(), est2.scores());

        assert!(split_sample(&sample, 0.0, 9).is_err());
        assert!(split_sample(&sample, 1.0, 9).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let keys = ScoreSample::keys(vec![0.25, 0.875]).unwrap();
        let nonkeys = ScoreSample::nonkeys(vec![0.125]).unwrap();
        let mut buf = Vec::new();
        let rows = write_score_csv(&mut buf, &keys, &nonkeys).unwrap();
        assert_eq!(rows, 3);
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("id,score,label\n"), "{text}");

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.csv");
        std::fs::write(&path, &buf).unwrap();
        let dataset = read_score_csv(&path).unwrap();
        assert_eq!(dataset.keys.len(), 2);
        assert_eq!(dataset.nonkeys.len(), 1);
        assert_eq!(dataset.keys[1].score, 0.875);
        assert_eq!(dataset.nonkeys[0].label, Label::NonKey);
    }

    #[test]
    fn csv_rejects_bad_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "id,score,label\nx,1.5,key\n").unwrap();
        assert!(matches!(
            read_score_csv(&path),
            Err(Error::MalformedScoreFile(_))
        ));
        std::fs::write(&path, "id,score,label\nx,0.5,banana\n").unwrap();
        assert!(matches!(
            read_score_csv(&path),
            Err(Error::MalformedScoreFile(_))
        ));
        assert!(matches!(
            read_score_csv(&dir.path().join("missing.csv")),
            Err(Error::Io { .. })
        ));
    }

    proptest! {
        #[test]
        fn histogram_masses_are_exact_frequencies(
            key_scores in proptest::collection::vec(0.0f64..=1.0, 1..200),
            nonkey_scores in proptest::collection::vec(0.0f64..=1.0, 1..200),
            n_segments in 1usize..40,
        ) {
            let keys = ScoreSample::keys(key_scores).unwrap();
            let nonkeys = ScoreSample::nonkeys(nonkey_scores).unwrap();
            let hist = ScoreHistogram::from_samples(&keys, &nonkeys, n_segments).unwrap();
            // g entries reconstruct to integer counts.
            for &g in hist.g_seg() {
                let count = g * keys.len() as f64;
                prop_assert!((count - count.round()).abs() < 1e-9);
            }
            // Cumulative sums are monotone and end at 1: the discretized G, H.
            for seg in [hist.g_seg(), hist.h_seg()] {
                let mut acc = 0.0;
                for &v in seg {
                    prop_assert!(v >= 0.0);
                    acc += v;
                }
                prop_assert!((acc - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn generated_scores_stay_in_segment(
            seed in any::<u64>(),
            n_segments in 1usize..64,
        ) {
            let config = ZipfConfig { skew: 1.0, n_keys: 64, n_nonkeys: 64, seed };
            let (keys, nonkeys) = zipf_scores(&config, n_segments).unwrap();
            for s in keys.scores().iter().chain(nonkeys.scores()) {
                prop_assert!(*s > 0.0 && *s <= 1.0);
            }
        }
    }
}
