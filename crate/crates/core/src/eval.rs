//! Scoring and evaluation: ROC curves, AUC, TPR/FPR at a fixed threshold,
//! and the three experiment sweeps (magnitude heat map, anomaly-frequency
//! sweep, retraining-scheme adaptivity comparison).
//!
//! The detection score of a slot is its normalized deviation
//! `|r - mu| / sigma` (see [`crate::detector::deviation_score`]); thresholding
//! that score at `p` is exactly the p-sigma flag rule, so ROC points at
//! threshold `p` reproduce the simulator's flag decisions bit for bit.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::derive_seed;
use crate::detector::DetectionThreshold;
use crate::error::{Error, Result};
use crate::sim::{run_simulation, SimConfig, SimResult};

/// One evaluated slot: its continuous detection score and ground-truth label.
///
/// Scores are nonnegative and may be `+inf` (zero-sigma slots with a nonzero
/// deviation), which sorts above every finite score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredPoint {
    pub score: f64,
    pub label: bool,
}

/// ROC curve as threshold-sweep points `(fpr, tpr)`, from `(0, 0)` to
/// `(1, 1)`, both coordinates non-decreasing; tied scores are grouped.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    points: Vec<(f64, f64)>,
}

impl RocCurve {
    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }
}

fn class_counts(points: &[ScoredPoint]) -> Result<(usize, usize)> {
    let positives = points.iter().filter(|p| p.label).count();
    let negatives = points.len() - positives;
    if positives == 0 {
        return Err(Error::MissingClass {
            missing: "positive",
        });
    }
    if negatives == 0 {
        return Err(Error::MissingClass {
            missing: "negative",
        });
    }
    Ok((positives, negatives))
}

/// Builds the ROC curve by sweeping a decision threshold over the distinct
/// score values (descending), grouping ties.
pub fn roc(points: &[ScoredPoint]) -> Result<RocCurve> {
    let (positives, negatives) = class_counts(points)?;
    if points.iter().any(|p| p.score.is_nan() || p.score < 0.0) {
        return Err(Error::invalid("score", "must be nonnegative and not NaN"));
    }

    let mut sorted: Vec<&ScoredPoint> = points.iter().collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));

    let mut curve = vec![(0.0, 0.0)];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0usize;
    while i < sorted.len() {
        let score = sorted[i].score;
        while i < sorted.len() && sorted[i].score == score {
            if sorted[i].label {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        curve.push((fp as f64 / negatives as f64, tp as f64 / positives as f64));
    }
    Ok(RocCurve { points: curve })
}

/// Trapezoidal area under the curve.
///
/// With ties grouped as in [`roc`], this equals the probability that a random
/// positive outscores a random negative, counting ties as one half.
pub fn auc(curve: &RocCurve) -> f64 {
    curve
        .points
        .windows(2)
        .map(|w| {
            let (x0, y0) = w[0];
            let (x1, y1) = w[1];
            (x1 - x0) * (y0 + y1) / 2.0
        })
        .sum()
}

/// Convenience: ROC then AUC.
pub fn auc_of_points(points: &[ScoredPoint]) -> Result<f64> {
    Ok(auc(&roc(points)?))
}

/// Confusion rates when deciding `score > p` (boundary equality is negative,
/// matching the p-sigma rule).
pub fn tpr_fpr_at(points: &[ScoredPoint], p: DetectionThreshold) -> Result<(f64, f64)> {
    let (positives, negatives) = class_counts(points)?;
    let mut tp = 0usize;
    let mut fp = 0usize;
    for point in points {
        if point.score > p.value() {
            if point.label {
                tp += 1;
            } else {
                fp += 1;
            }
        }
    }
    Ok((tp as f64 / positives as f64, fp as f64 / negatives as f64))
}

/// Extracts the scored points of every post-bootstrap slot of a run.
pub fn scored_points(result: &SimResult) -> Vec<ScoredPoint> {
    result
        .scores
        .iter()
        .zip(result.labels.iter())
        .map(|(score, label)| ScoredPoint {
            score: *score,
            label: *label != 0,
        })
        .collect()
}

/// AUC over every post-bootstrap slot of a run.
pub fn auc_of_result(result: &SimResult) -> Result<f64> {
    auc_of_points(&scored_points(result))
}

/// TPR/FPR of the decisions the sensors actually made (their stored flags).
pub fn flag_rates(result: &SimResult) -> Result<(f64, f64)> {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut positives = 0usize;
    let mut negatives = 0usize;
    for (flag, label) in result.flags.iter().zip(result.labels.iter()) {
        let flagged = *flag != 0;
        if *label != 0 {
            positives += 1;
            if flagged {
                tp += 1;
            }
        } else {
            negatives += 1;
            if flagged {
                fp += 1;
            }
        }
    }
    if positives == 0 {
        return Err(Error::MissingClass {
            missing: "positive",
        });
    }
    if negatives == 0 {
        return Err(Error::MissingClass {
            missing: "negative",
        });
    }
    Ok((tp as f64 / positives as f64, fp as f64 / negatives as f64))
}

// --- sweeps --------------------------------------------------------------------

/// One completed heat-map cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeatmapCell {
    pub mu_index: usize,
    pub var_index: usize,
    pub mu_v: f64,
    pub var_v: f64,
    pub auc: f64,
}

/// AUC grid over anomaly magnitude mean (rows) and variance (columns).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeatmapResult {
    pub mu_grid: Vec<f64>,
    pub var_grid: Vec<f64>,
    pub cells: Vec<HeatmapCell>,
}

impl HeatmapResult {
    pub fn auc_at(&self, mu_index: usize, var_index: usize) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.mu_index == mu_index && c.var_index == var_index)
            .map(|c| c.auc)
    }
}

/// Derives the per-cell configuration of the heat-map sweep: anomaly
/// magnitude distribution replaced, all module seeds rederived from a
/// cell-specific master seed.
pub fn heatmap_cell_config(base: &SimConfig, mu_v: f64, var_v: f64, tag: &str) -> SimConfig {
    let mut config = base.clone();
    config.anomalies.magnitude_mean = mu_v;
    config.anomalies.magnitude_var = var_v;
    config.reseed(derive_seed(base.seed, tag));
    config
}

/// Runs one simulation per `(mu_v, var_v)` cell and reports the AUC grid.
pub fn sweep_heatmap(base: &SimConfig, mu_grid: &[f64], var_grid: &[f64]) -> Result<HeatmapResult> {
    if mu_grid.is_empty() || var_grid.is_empty() {
        return Err(Error::EmptyInput("sweep grid"));
    }
    let mut jobs = Vec::new();
    for (i, mu_v) in mu_grid.iter().enumerate() {
        for (j, var_v) in var_grid.iter().enumerate() {
            jobs.push((i, j, *mu_v, *var_v));
        }
    }
    let cells = jobs
        .into_par_iter()
        .map(|(i, j, mu_v, var_v)| compute_heatmap_cell(base, i, j, mu_v, var_v))
        .collect::<Result<Vec<_>>>()?;
    Ok(HeatmapResult {
        mu_grid: mu_grid.to_vec(),
        var_grid: var_grid.to_vec(),
        cells,
    })
}

/// Computes a single heat-map cell; used by both the sweep above and the
/// resumable CLI driver.
pub fn compute_heatmap_cell(
    base: &SimConfig,
    mu_index: usize,
    var_index: usize,
    mu_v: f64,
    var_v: f64,
) -> Result<HeatmapCell> {
    let config = heatmap_cell_config(base, mu_v, var_v, &format!("heatmap/{mu_index}/{var_index}"));
    let result = run_simulation(&config)?;
    Ok(HeatmapCell {
        mu_index,
        var_index,
        mu_v,
        var_v,
        auc: auc_of_result(&result)?,
    })
}

/// One completed frequency-sweep cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrequencyCell {
    pub k_index: usize,
    pub k: usize,
    pub auc: f64,
}

/// Runs one simulation per anomaly frequency `K`; `K = 0` is rejected because
/// the ROC needs at least one positive.
pub fn sweep_frequency(base: &SimConfig, k_grid: &[usize]) -> Result<Vec<FrequencyCell>> {
    if k_grid.is_empty() {
        return Err(Error::EmptyInput("frequency grid"));
    }
    if k_grid.contains(&0) {
        return Err(Error::invalid(
            "k_grid",
            "K = 0 has no positive slots; drop it from the grid",
        ));
    }
    k_grid
        .par_iter()
        .enumerate()
        .map(|(idx, k)| compute_frequency_cell(base, idx, *k))
        .collect()
}

/// Computes a single frequency-sweep cell.
pub fn compute_frequency_cell(base: &SimConfig, k_index: usize, k: usize) -> Result<FrequencyCell> {
    let mut config = base.clone();
    config.anomalies.rate_per_day = k;
    config.reseed(derive_seed(base.seed, &format!("freq/{k_index}")));
    let result = run_simulation(&config)?;
    Ok(FrequencyCell {
        k_index,
        k,
        auc: auc_of_result(&result)?,
    })
}

/// One adaptivity run: scheme, anomaly frequency, seed index, and the rates
/// of the decisions the sensors actually made.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdaptivityRow {
    pub scheme: crate::cloud::Scheme,
    pub k: usize,
    pub seed_index: usize,
    pub tpr: f64,
    pub fpr: f64,
}

/// Median TPR/FPR per (scheme, K) over the seed set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdaptivitySummary {
    pub scheme: crate::cloud::Scheme,
    pub k: usize,
    pub median_tpr: f64,
    pub median_fpr: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdaptivityResult {
    pub rows: Vec<AdaptivityRow>,
    pub summaries: Vec<AdaptivitySummary>,
}

/// Runs the Random and Prioritized retraining schemes on identical datasets
/// (same per-seed data seeds) and reports per-run and median TPR/FPR.
///
/// The base config is expected to enable drift and use the above-mean label
/// mode; this function does not override those choices.
pub fn sweep_adaptivity(
    base: &SimConfig,
    k_grid: &[usize],
    num_seeds: usize,
) -> Result<AdaptivityResult> {
    use crate::cloud::Scheme;
    if k_grid.is_empty() {
        return Err(Error::EmptyInput("adaptivity grid"));
    }
    if num_seeds == 0 {
        return Err(Error::invalid("num_seeds", "must be >= 1"));
    }
    let mut jobs = Vec::new();
    for (k_index, k) in k_grid.iter().enumerate() {
        for seed_index in 0..num_seeds {
            for scheme in [Scheme::Random, Scheme::Prioritized] {
                jobs.push((k_index, *k, seed_index, scheme));
            }
        }
    }
    let rows: Vec<AdaptivityRow> = jobs
        .into_par_iter()
        .map(|(k_index, k, seed_index, scheme)| {
            compute_adaptivity_row(base, k_index, k, seed_index, scheme)
        })
        .collect::<Result<Vec<_>>>()?;
    let summaries = summarize_adaptivity(&rows);
    Ok(AdaptivityResult { rows, summaries })
}

/// Computes one adaptivity run. The master seed depends on the cell and seed
/// index but not on the scheme, so both schemes see identical data.
pub fn compute_adaptivity_row(
    base: &SimConfig,
    k_index: usize,
    k: usize,
    seed_index: usize,
    scheme: crate::cloud::Scheme,
) -> Result<AdaptivityRow> {
    let mut config = base.clone();
    config.anomalies.rate_per_day = k;
    config.policy.scheme = scheme;
    config.policy.stats_window_days = scheme.default_stats_window(config.policy.d_u);
    config.reseed(derive_seed(
        base.seed,
        &format!("adaptivity/{k_index}/{seed_index}"),
    ));
    let result = run_simulation(&config)?;
    let (tpr, fpr) = flag_rates(&result)?;
    Ok(AdaptivityRow {
        scheme,
        k,
        seed_index,
        tpr,
        fpr,
    })
}

/// Median of a non-empty slice.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty slice");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Groups adaptivity rows by (scheme, K) and takes medians over seeds.
pub fn summarize_adaptivity(rows: &[AdaptivityRow]) -> Vec<AdaptivitySummary> {
    use crate::cloud::Scheme;
    let mut summaries = Vec::new();
    let mut keys: Vec<(Scheme, usize)> = rows.iter().map(|r| (r.scheme, r.k)).collect();
    keys.sort_by_key(|(scheme, k)| (*scheme as u8, *k));
    keys.dedup();
    for (scheme, k) in keys {
        let tprs: Vec<f64> = rows
            .iter()
            .filter(|r| r.scheme == scheme && r.k == k)
            .map(|r| r.tpr)
            .collect();
        let fprs: Vec<f64> = rows
            .iter()
            .filter(|r| r.scheme == scheme && r.k == k)
            .map(|r| r.fpr)
            .collect();
        summaries.push(AdaptivitySummary {
            scheme,
            k,
            median_tpr: median(&tprs),
            median_fpr: median(&fprs),
        });
    }
    summaries
}

// --- CSV emission ---------------------------------------------------------------

/// Writes `heatmap.csv`: mu_v rows, var_v columns, AUC cells.
pub fn write_heatmap_csv(path: &Path, result: &HeatmapResult) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec!["mu_v".to_string()];
    header.extend(result.var_grid.iter().map(|v| format!("var={v}")));
    writer
        .write_record(&header)
        .map_err(|e| csv_error("heatmap.csv", e))?;
    for (i, mu) in result.mu_grid.iter().enumerate() {
        let mut row = vec![mu.to_string()];
        for j in 0..result.var_grid.len() {
            let cell = result
                .auc_at(i, j)
                .ok_or_else(|| Error::invalid("heatmap", format!("missing cell ({i}, {j})")))?;
            row.push(cell.to_string());
        }
        writer
            .write_record(&row)
            .map_err(|e| csv_error("heatmap.csv", e))?;
    }
    writer.flush()?;
    Ok(())
}

/// Writes `freq_sweep.csv` with one row per K.
pub fn write_frequency_csv(path: &Path, cells: &[FrequencyCell]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer
        .write_record(["k", "auc"])
        .map_err(|e| csv_error("freq_sweep.csv", e))?;
    for cell in cells {
        writer
            .write_record([cell.k.to_string(), cell.auc.to_string()])
            .map_err(|e| csv_error("freq_sweep.csv", e))?;
    }
    writer.flush()?;
    Ok(())
}

/// Writes `adaptivity.csv` with one row per (scheme, K, seed).
pub fn write_adaptivity_csv(path: &Path, rows: &[AdaptivityRow]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer
        .write_record(["scheme", "k", "seed_index", "tpr", "fpr"])
        .map_err(|e| csv_error("adaptivity.csv", e))?;
    for row in rows {
        writer
            .write_record([
                row.scheme.to_string(),
                row.k.to_string(),
                row.seed_index.to_string(),
                row.tpr.to_string(),
                row.fpr.to_string(),
            ])
            .map_err(|e| csv_error("adaptivity.csv", e))?;
    }
    writer.flush()?;
    Ok(())
}

fn csv_error(what: &str, e: csv::Error) -> Error {
    Error::Malformed {
        what: what.into(),
        detail: e.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pts(scores: &[f64], labels: &[bool]) -> Vec<ScoredPoint> {
        scores
            .iter()
            .zip(labels.iter())
            .map(|(s, l)| ScoredPoint {
                score: *s,
                label: *l,
            })
            .collect()
    }

    /// O(n^2) pair-counting AUC with ties credited one half; the independent
    /// oracle for the trapezoidal implementation.
    fn pair_count_auc(points: &[ScoredPoint]) -> f64 {
        let positives: Vec<f64> = points.iter().filter(|p| p.label).map(|p| p.score).collect();
        let negatives: Vec<f64> = points
            .iter()
            .filter(|p| !p.label)
            .map(|p| p.score)
            .collect();
        let mut total = 0.0;
        for p in &positives {
            for n in &negatives {
                total += if p > n {
                    1.0
                } else if p == n {
                    0.5
                } else {
                    0.0
                };
            }
        }
        total / (positives.len() as f64 * negatives.len() as f64)
    }

    #[test]
    fn perfect_separation_reaches_corner_and_auc_one() {
        let points = pts(&[2.0, 1.0], &[true, false]);
        let curve = roc(&points).unwrap();
        assert!(curve.points().contains(&(0.0, 1.0)));
        assert_eq!(auc(&curve), 1.0);
    }

    #[test]
    fn all_tied_scores_give_diagonal_and_half_auc() {
        let points = pts(&[0.7, 0.7, 0.7, 0.7], &[true, false, true, false]);
        let curve = roc(&points).unwrap();
        assert_eq!(curve.points(), &[(0.0, 0.0), (1.0, 1.0)]);
        assert_eq!(auc(&curve), 0.5);
    }

    #[test]
    fn roc_rejects_single_class_naming_it() {
        let only_pos = pts(&[1.0, 2.0], &[true, true]);
        match roc(&only_pos) {
            Err(Error::MissingClass { missing }) => assert_eq!(missing, "negative"),
            other => panic!("expected MissingClass, got {other:?}"),
        }
        let only_neg = pts(&[1.0, 2.0], &[false, false]);
        match roc(&only_neg) {
            Err(Error::MissingClass { missing }) => assert_eq!(missing, "positive"),
            other => panic!("expected MissingClass, got {other:?}"),
        }
    }

    #[test]
    fn roc_coordinates_are_monotone_and_anchored() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let points: Vec<ScoredPoint> = (0..300)
            .map(|_| ScoredPoint {
                score: rng.random_range(0.0..3.0),
                label: rng.random_range(0..2) == 1,
            })
            .collect();
        let curve = roc(&points).unwrap();
        assert_eq!(curve.points().first(), Some(&(0.0, 0.0)));
        assert_eq!(curve.points().last(), Some(&(1.0, 1.0)));
        for w in curve.points().windows(2) {
            assert!(w[1].0 >= w[0].0);
            assert!(w[1].1 >= w[0].1);
        }
    }

    #[test]
    fn trapezoid_matches_pair_count_oracle_on_random_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for case in 0..50 {
            let n = rng.random_range(5..200);
            // Coarse scores force plenty of ties.
            let points: Vec<ScoredPoint> = (0..n)
                .map(|_| ScoredPoint {
                    score: f64::from(rng.random_range(0..12u32)) / 4.0,
                    label: rng.random_range(0..2) == 1,
                })
                .collect();
            if class_counts(&points).is_err() {
                continue;
            }
            let trapezoid = auc_of_points(&points).unwrap();
            let oracle = pair_count_auc(&points);
            assert_relative_eq!(trapezoid, oracle, max_relative = 1e-12, epsilon = 1e-15);
            assert!((0.0..=1.0).contains(&trapezoid), "case {case}");
        }
    }

    #[test]
    fn auc_is_invariant_under_monotone_score_transforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let points: Vec<ScoredPoint> = (0..150)
            .map(|_| ScoredPoint {
                score: rng.random_range(0.0..5.0),
                label: rng.random_range(0..2) == 1,
            })
            .collect();
        let base = auc_of_points(&points).unwrap();
        let transformed: Vec<ScoredPoint> = points
            .iter()
            .map(|p| ScoredPoint {
                score: (p.score + 1.0).ln() * 3.0,
                label: p.label,
            })
            .collect();
        let mapped = auc_of_points(&transformed).unwrap();
        assert_relative_eq!(base, mapped, max_relative = 1e-12);
    }

    #[test]
    fn roc_is_permutation_invariant() {
        let mut points = pts(
            &[0.1, 2.0, 0.5, 0.5, 3.0, 0.2],
            &[false, true, false, true, true, false],
        );
        let before = roc(&points).unwrap();
        points.reverse();
        points.swap(0, 3);
        let after = roc(&points).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn infinite_scores_sort_to_the_top() {
        let points = pts(&[f64::INFINITY, 1.0, 0.5], &[true, false, false]);
        assert_eq!(auc_of_points(&points).unwrap(), 1.0);
    }

    #[test]
    fn tpr_fpr_extremes() {
        let points = pts(&[0.5, 1.0, 2.0, 3.0], &[false, true, false, true]);
        let all_in = tpr_fpr_at(&points, DetectionThreshold::new(1e-9).unwrap()).unwrap();
        assert_eq!(all_in, (1.0, 1.0));
        let none_in = tpr_fpr_at(&points, DetectionThreshold::new(1e12).unwrap()).unwrap();
        assert_eq!(none_in, (0.0, 0.0));
    }

    #[test]
    fn tpr_fpr_hand_built_confusion() {
        // Six points, threshold 1.0; boundary (score == 1.0) is negative.
        let points = pts(
            &[0.2, 1.0, 1.5, 2.0, 0.8, 1.2],
            &[false, true, true, false, false, true],
        );
        let (tpr, fpr) = tpr_fpr_at(&points, DetectionThreshold::new(1.0).unwrap()).unwrap();
        // Positives: scores 1.0 (not counted), 1.5, 1.2 -> tp = 2 of 3.
        // Negatives: 0.2, 2.0, 0.8 -> fp = 1 of 3.
        assert_relative_eq!(tpr, 2.0 / 3.0, max_relative = 1e-15);
        assert_relative_eq!(fpr, 1.0 / 3.0, max_relative = 1e-15);
    }

    #[test]
    fn median_of_odd_and_even_sets() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
