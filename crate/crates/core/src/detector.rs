//! Residuals, per-slot residual statistics, and the p-sigma anomaly rule.
//!
//! A slot `m` is flagged when its residual deviates from the residual mean by
//! more than `p` standard deviations:
//!
//! ```text
//! flag[m] = 1  iff  |r[m] - mu[m]| > p * sigma[m]
//! ```
//!
//! Boundary equality is non-anomalous. The same rule is applied on the
//! sensors (with their local statistics) and recomputed on the cloud after
//! every retraining.

use ndarray::{Array1, ArrayView1};

use crate::autoencoder::Sample;
use crate::error::{Error, Result};

/// Reconstruction residual `r = x - output` for one day; entries in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualVector(Array1<f64>);

impl ResidualVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        Self::from_array(Array1::from_vec(values))
    }

    pub fn from_array(values: Array1<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("residual"));
        }
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() || v.abs() > 1.0 {
                return Err(Error::invalid(
                    "residual",
                    format!("entry {i} is {v}, outside [-1, 1]"),
                ));
            }
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> ArrayView1<'_, f64> {
        self.0.view()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Per-slot mean and standard deviation of the residual population.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualStats {
    mu: Array1<f64>,
    sigma: Array1<f64>,
}

impl ResidualStats {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if mu.is_empty() {
            return Err(Error::EmptyInput("stats"));
        }
        if mu.len() != sigma.len() {
            return Err(Error::DimensionMismatch {
                context: "stats sigma",
                expected: mu.len(),
                actual: sigma.len(),
            });
        }
        if sigma.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::invalid("sigma", "entries must be finite and >= 0"));
        }
        if mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("mu", "entries must be finite"));
        }
        Ok(Self {
            mu: Array1::from_vec(mu),
            sigma: Array1::from_vec(sigma),
        })
    }

    pub fn mu(&self) -> ArrayView1<'_, f64> {
        self.mu.view()
    }

    pub fn sigma(&self) -> ArrayView1<'_, f64> {
        self.sigma.view()
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }
}

/// The `p` in the p-sigma rule; strictly positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionThreshold(f64);

impl DetectionThreshold {
    pub fn new(p: f64) -> Result<Self> {
        if !(p > 0.0) || !p.is_finite() {
            return Err(Error::invalid("p", "must be finite and > 0"));
        }
        Ok(Self(p))
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

/// Per-slot anomaly decisions for one sensor-day.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnomalyFlags(Vec<bool>);

impl AnomalyFlags {
    pub fn new(flags: Vec<bool>) -> Self {
        Self(flags)
    }

    pub fn from_bytes(bytes: &[u8]) -> Self {
        Self(bytes.iter().map(|b| *b != 0).collect())
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.0.iter().map(|f| u8::from(*f)).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of flagged slots.
    pub fn count(&self) -> usize {
        self.0.iter().filter(|f| **f).count()
    }

    pub fn any(&self) -> bool {
        self.0.iter().any(|f| *f)
    }
}

/// Elementwise residual `x - x_hat`.
pub fn residual(x: &Sample, x_hat: &Array1<f64>) -> Result<ResidualVector> {
    if x.len() != x_hat.len() {
        return Err(Error::DimensionMismatch {
            context: "residual",
            expected: x.len(),
            actual: x_hat.len(),
        });
    }
    ResidualVector::from_array(&x.values() - x_hat)
}

/// Normalized deviation `|r - mu| / sigma`, the continuous statistic behind
/// the p-sigma rule.
///
/// A zero-sigma slot scores `0` when the residual equals the mean exactly and
/// `+inf` otherwise, the limit of the rule as sigma shrinks. [`detect`] and
/// the ROC evaluation both threshold this exact value, so flag decisions and
/// score-based confusion counts agree bit for bit.
pub fn deviation_score(r: f64, mu: f64, sigma: f64) -> f64 {
    let dev = (r - mu).abs();
    if sigma == 0.0 {
        if dev == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        dev / sigma
    }
}

/// Applies the p-sigma rule to every slot.
///
/// Boundary equality (`|r - mu| = p * sigma`) yields a non-anomalous slot.
///
/// # Panics
///
/// Panics if the residual and statistics lengths differ; callers own that
/// consistency.
pub fn detect(r: &ResidualVector, stats: &ResidualStats, p: DetectionThreshold) -> AnomalyFlags {
    assert_eq!(
        r.len(),
        stats.len(),
        "residual/stats length mismatch in detect"
    );
    let flags = r
        .values()
        .iter()
        .zip(stats.mu.iter().zip(stats.sigma.iter()))
        .map(|(r_m, (mu_m, sigma_m))| deviation_score(*r_m, *mu_m, *sigma_m) > p.value())
        .collect();
    AnomalyFlags::new(flags)
}

/// Per-slot mean and population standard deviation over a residual
/// collection, optionally excluding flagged entries.
///
/// When `exclude` is given, entry `(i, m)` is skipped whenever
/// `exclude[i][m]` is set and the slot's divisor becomes its retained count.
/// A slot that retains nothing carries its value forward from `previous`;
/// omitting `previous` in that situation is a contract violation.
pub fn compute_stats(
    residuals: &[ResidualVector],
    exclude: Option<&[AnomalyFlags]>,
    previous: Option<&ResidualStats>,
) -> Result<ResidualStats> {
    if residuals.is_empty() {
        return Err(Error::EmptyInput("residual collection"));
    }
    let m = residuals[0].len();
    for r in residuals {
        if r.len() != m {
            return Err(Error::DimensionMismatch {
                context: "residual collection",
                expected: m,
                actual: r.len(),
            });
        }
    }
    if let Some(flags) = exclude {
        if flags.len() != residuals.len() {
            return Err(Error::DimensionMismatch {
                context: "exclusion flags count",
                expected: residuals.len(),
                actual: flags.len(),
            });
        }
        for f in flags {
            if f.len() != m {
                return Err(Error::DimensionMismatch {
                    context: "exclusion flags",
                    expected: m,
                    actual: f.len(),
                });
            }
        }
    }
    if let Some(prev) = previous {
        if prev.len() != m {
            return Err(Error::DimensionMismatch {
                context: "previous stats",
                expected: m,
                actual: prev.len(),
            });
        }
    }

    let retained = |i: usize, slot: usize| -> bool {
        exclude.map_or(true, |flags| !flags[i].as_slice()[slot])
    };

    let mut mu = vec![0.0f64; m];
    let mut sigma = vec![0.0f64; m];
    for slot in 0..m {
        let mut count = 0usize;
        let mut sum = 0.0f64;
        for (i, r) in residuals.iter().enumerate() {
            if retained(i, slot) {
                sum += r.values()[slot];
                count += 1;
            }
        }
        if count == 0 {
            let prev = previous.ok_or_else(|| {
                Error::invalid(
                    "previous",
                    format!("slot {slot} retained no entries and no previous stats were supplied"),
                )
            })?;
            mu[slot] = prev.mu[slot];
            sigma[slot] = prev.sigma[slot];
            continue;
        }
        let mean = sum / count as f64;
        let mut sq = 0.0f64;
        for (i, r) in residuals.iter().enumerate() {
            if retained(i, slot) {
                let d = r.values()[slot] - mean;
                sq += d * d;
            }
        }
        mu[slot] = mean;
        sigma[slot] = (sq / count as f64).sqrt();
    }
    ResidualStats::new(mu, sigma)
}
