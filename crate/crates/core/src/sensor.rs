//! The sensor-side state machine: buffer one day of readings, run local
//! inference and the p-sigma rule, emit the daily upload, and apply cloud
//! updates.
//!
//! Detection is fully local. A sensor owns copies of the model parameters and
//! residual statistics and never reads another sensor's state; the module has
//! no reference to any peer, which is the architecture's zero
//! sensor-to-sensor-communication guarantee.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::autoencoder::{forward, ModelParams, Sample};
use crate::cloud::ModelUpdate;
use crate::detector::{
    detect, deviation_score, residual, AnomalyFlags, DetectionThreshold, ResidualStats,
};
use crate::error::{Error, Result};

/// When a sensor evaluates the p-sigma rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectionMode {
    /// Evaluate once per day on the full buffer. This is the reference
    /// semantics; the daily upload always carries these flags.
    BatchDaily,
    /// Additionally evaluate each reading as it arrives, emitting an alert
    /// the moment a slot trips the rule.
    PerReading,
}

/// Real-time alert for a single reading (per-reading mode only); alerts are
/// emitted only for flagged slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadingAlert {
    pub sensor_id: usize,
    /// 1-based slot of the flagged reading.
    pub slot: usize,
    /// Normalized deviation |r - mu| / sigma at the flagged slot.
    pub score: f64,
}

/// The daily upload: readings, reconstruction, residual, and flags for one
/// sensor-day. Serialized as one JSON line in the simulator's message log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UploadMessage {
    pub sensor_id: usize,
    /// 1-based upload day.
    pub day_index: usize,
    pub x: Vec<f64>,
    pub x_hat: Vec<f64>,
    pub r: Vec<f64>,
    /// 0/1 per slot, consistent with the sensor's stats at send time.
    pub alpha: Vec<u8>,
}

impl UploadMessage {
    pub fn flags(&self) -> AnomalyFlags {
        AnomalyFlags::from_bytes(&self.alpha)
    }
}

/// Per-sensor state: local model and statistics plus the day buffer.
#[derive(Debug, Clone)]
pub struct SensorState {
    sensor_id: usize,
    params: ModelParams,
    stats: ResidualStats,
    threshold: DetectionThreshold,
    mode: DetectionMode,
    day_buffer: Vec<f64>,
    /// Exponentially weighted per-slot mean of completed days; pads the
    /// not-yet-observed tail of the day in per-reading inference.
    slot_mean: Option<Array1<f64>>,
}

impl SensorState {
    /// `sensor_id` is 1-based. Parameter and statistics lengths must agree.
    pub fn new(
        sensor_id: usize,
        params: ModelParams,
        stats: ResidualStats,
        threshold: DetectionThreshold,
        mode: DetectionMode,
    ) -> Result<Self> {
        if sensor_id == 0 {
            return Err(Error::invalid("sensor_id", "must be >= 1"));
        }
        params.validate()?;
        let m = params.shape().input_dim();
        if stats.len() != m {
            return Err(Error::DimensionMismatch {
                context: "sensor stats",
                expected: m,
                actual: stats.len(),
            });
        }
        Ok(Self {
            sensor_id,
            params,
            stats,
            threshold,
            mode,
            day_buffer: Vec::with_capacity(m),
            slot_mean: None,
        })
    }

    pub fn sensor_id(&self) -> usize {
        self.sensor_id
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn stats(&self) -> &ResidualStats {
        &self.stats
    }

    pub fn threshold(&self) -> DetectionThreshold {
        self.threshold
    }

    pub fn mode(&self) -> DetectionMode {
        self.mode
    }

    pub fn buffered(&self) -> usize {
        self.day_buffer.len()
    }

    fn readings_per_day(&self) -> usize {
        self.params.shape().input_dim()
    }

    /// Appends the reading for 1-based `slot`, which must be the next free
    /// slot (readings arrive in order).
    ///
    /// In per-reading mode this also evaluates the rule for the new slot
    /// against a forward pass over the day so far (future slots padded with
    /// the recent per-slot mean) and returns an alert when it trips. Until a
    /// first day has completed there is no padding history and no alert is
    /// raised. Batch mode always returns `None`.
    pub fn ingest_reading(&mut self, value: f64, slot: usize) -> Result<Option<ReadingAlert>> {
        let m = self.readings_per_day();
        if self.day_buffer.len() >= m {
            return Err(Error::invalid("slot", "day buffer is already full"));
        }
        if slot != self.day_buffer.len() + 1 {
            return Err(Error::invalid(
                "slot",
                format!(
                    "out-of-order reading: got slot {slot}, expected {}",
                    self.day_buffer.len() + 1
                ),
            ));
        }
        if !value.is_finite() || !(0.0..=1.0).contains(&value) {
            return Err(Error::invalid(
                "value",
                format!("reading {value} outside [0, 1]"),
            ));
        }
        self.day_buffer.push(value);

        if self.mode == DetectionMode::BatchDaily {
            return Ok(None);
        }
        let Some(slot_mean) = &self.slot_mean else {
            return Ok(None);
        };
        // Pad the unseen tail of the day with the recent per-slot mean, run
        // the full forward pass, and test only the just-observed slot. This
        // is an approximation; the daily upload recomputes flags on the real
        // full day.
        let mut padded = slot_mean.to_vec();
        padded[..self.day_buffer.len()].copy_from_slice(&self.day_buffer);
        let x = Sample::new(padded)?;
        let (_, x_hat) = forward(&self.params, &x)?;
        let idx = slot - 1;
        let r_m = value - x_hat[idx];
        let score = deviation_score(r_m, self.stats.mu()[idx], self.stats.sigma()[idx]);
        if score > self.threshold.value() {
            Ok(Some(ReadingAlert {
                sensor_id: self.sensor_id,
                slot,
                score,
            }))
        } else {
            Ok(None)
        }
    }

    /// Runs inference and detection on the completed day buffer, clears it,
    /// and returns the upload. The buffer must hold exactly one full day.
    ///
    /// Detection uses the sensor's current local statistics; it never waits
    /// for fresh values from the cloud.
    pub fn end_of_day(&mut self, day_index: usize) -> Result<UploadMessage> {
        let m = self.readings_per_day();
        if self.day_buffer.len() != m {
            return Err(Error::invalid(
                "day_buffer",
                format!(
                    "day is incomplete: {} of {m} readings buffered",
                    self.day_buffer.len()
                ),
            ));
        }
        if day_index == 0 {
            return Err(Error::invalid("day_index", "must be >= 1"));
        }
        let x = Sample::new(std::mem::take(&mut self.day_buffer))?;
        let (_, x_hat) = forward(&self.params, &x)?;
        let r = residual(&x, &x_hat)?;
        let alpha = detect(&r, &self.stats, self.threshold);

        let x_vec = x.values().to_vec();
        self.slot_mean = Some(match self.slot_mean.take() {
            None => x.values().to_owned(),
            // EWMA with weight 1/2 keeps the padding close to recent days.
            Some(old) => (&old + &x.values()) / 2.0,
        });

        Ok(UploadMessage {
            sensor_id: self.sensor_id,
            day_index,
            x: x_vec,
            x_hat: x_hat.to_vec(),
            r: r.values().to_vec(),
            alpha: alpha.to_bytes(),
        })
    }

    /// Replaces the local parameters and statistics atomically. The day
    /// buffer is untouched; detection from the next evaluation uses the new
    /// values.
    pub fn apply_update(&mut self, update: &ModelUpdate) -> Result<()> {
        update.params.validate()?;
        let m = self.readings_per_day();
        if update.params.shape().input_dim() != m {
            return Err(Error::DimensionMismatch {
                context: "update params",
                expected: m,
                actual: update.params.shape().input_dim(),
            });
        }
        if update.stats.len() != m {
            return Err(Error::DimensionMismatch {
                context: "update stats",
                expected: m,
                actual: update.stats.len(),
            });
        }
        self.params = update.params.clone();
        self.stats = update.stats.clone();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoencoder::{init_params, train, NetworkShape, TrainingConfig};
    use crate::detector::compute_stats;
    use crate::detector::ResidualVector;

    const M: usize = 12;

    fn day_pattern() -> Vec<f64> {
        (0..M)
            .map(|i| 0.5 + 0.3 * (2.0 * std::f64::consts::PI * i as f64 / M as f64).sin())
            .collect()
    }

    /// Trains a small model on the repeated day pattern and returns a sensor
    /// whose stats come from the training residuals plus a sigma floor.
    fn trained_sensor(mode: DetectionMode) -> SensorState {
        let shape = NetworkShape::new(M, 8).unwrap();
        let init = init_params(shape, 0.05, 3);
        let sample = Sample::new(day_pattern()).unwrap();
        let samples: Vec<Sample> = std::iter::repeat_n(sample.clone(), 8).collect();
        let config = TrainingConfig {
            epochs: 4000,
            step_size: 1.0,
            lambda: 0.0,
            ..TrainingConfig::default()
        };
        let report = train(&init, &samples, &config).unwrap();
        let (_, x_hat) = forward(&report.params, &sample).unwrap();
        let r = residual(&sample, &x_hat).unwrap();
        let stats = compute_stats(std::slice::from_ref(&r), None, None).unwrap();
        // A single training day has zero sigma; widen to a small envelope so
        // ordinary noise stays inside.
        let sigma = vec![0.05; M];
        let stats = ResidualStats::new(stats.mu().to_vec(), sigma).unwrap();
        SensorState::new(
            1,
            report.params,
            stats,
            DetectionThreshold::new(2.0).unwrap(),
            mode,
        )
        .unwrap()
    }

    fn zero_sensor(mode: DetectionMode) -> SensorState {
        let shape = NetworkShape::new(4, 2).unwrap();
        let params = ModelParams::zeros(shape);
        let stats = ResidualStats::new(vec![0.0; 4], vec![0.1; 4]).unwrap();
        SensorState::new(7, params, stats, DetectionThreshold::new(2.0).unwrap(), mode).unwrap()
    }

    #[test]
    fn batch_ingest_grows_buffer_without_alerts() {
        let mut sensor = zero_sensor(DetectionMode::BatchDaily);
        assert_eq!(sensor.ingest_reading(0.5, 1).unwrap(), None);
        assert_eq!(sensor.ingest_reading(0.9, 2).unwrap(), None);
        assert_eq!(sensor.buffered(), 2);
    }

    #[test]
    fn out_of_order_and_overflow_are_rejected() {
        let mut sensor = zero_sensor(DetectionMode::BatchDaily);
        assert!(sensor.ingest_reading(0.5, 2).is_err());
        for slot in 1..=4 {
            sensor.ingest_reading(0.5, slot).unwrap();
        }
        assert!(sensor.ingest_reading(0.5, 5).is_err());
    }

    #[test]
    fn end_of_day_requires_full_buffer() {
        let mut sensor = zero_sensor(DetectionMode::BatchDaily);
        sensor.ingest_reading(0.5, 1).unwrap();
        assert!(sensor.end_of_day(1).is_err());
    }

    #[test]
    fn end_of_day_on_trained_pattern_is_all_clear() {
        let mut sensor = trained_sensor(DetectionMode::BatchDaily);
        for (i, v) in day_pattern().into_iter().enumerate() {
            sensor.ingest_reading(v, i + 1).unwrap();
        }
        let msg = sensor.end_of_day(1).unwrap();
        assert_eq!(msg.flags().count(), 0, "clean day should raise no flags");
        assert_eq!(sensor.buffered(), 0);
    }

    #[test]
    fn end_of_day_is_deterministic_given_state() {
        let mut a = trained_sensor(DetectionMode::BatchDaily);
        let mut b = a.clone();
        for (i, v) in day_pattern().into_iter().enumerate() {
            a.ingest_reading(v, i + 1).unwrap();
            b.ingest_reading(v, i + 1).unwrap();
        }
        assert_eq!(a.end_of_day(1).unwrap(), b.end_of_day(1).unwrap());
    }

    #[test]
    fn burst_day_flags_most_burst_slots() {
        let mut sensor = trained_sensor(DetectionMode::BatchDaily);
        let mut day = day_pattern();
        // Offset 10 contiguous slots by 0.5 (clamped).
        for v in day.iter_mut().take(10) {
            *v = (*v + 0.5).min(1.0);
        }
        for (i, v) in day.into_iter().enumerate() {
            sensor.ingest_reading(v, i + 1).unwrap();
        }
        let msg = sensor.end_of_day(1).unwrap();
        let flagged_in_burst = msg.alpha[..10].iter().filter(|f| **f != 0).count();
        assert!(
            flagged_in_burst >= 8,
            "only {flagged_in_burst} of 10 burst slots flagged"
        );
    }

    #[test]
    fn per_reading_spike_alert_and_quiet_otherwise() {
        let mut sensor = trained_sensor(DetectionMode::PerReading);
        // Warm-up day builds the padding history.
        for (i, v) in day_pattern().into_iter().enumerate() {
            assert_eq!(sensor.ingest_reading(v, i + 1).unwrap(), None);
        }
        sensor.end_of_day(1).unwrap();

        let spike_slot = 6;
        let mut alerts = Vec::new();
        for (i, v) in day_pattern().into_iter().enumerate() {
            let v = if i + 1 == spike_slot {
                (v + 0.5).min(1.0)
            } else {
                v
            };
            if let Some(alert) = sensor.ingest_reading(v, i + 1).unwrap() {
                alerts.push(alert);
            }
        }
        assert!(
            alerts.iter().any(|a| a.slot == spike_slot),
            "spike slot did not alert: {alerts:?}"
        );
        assert!(
            alerts.iter().all(|a| a.slot == spike_slot),
            "non-spike slots alerted: {alerts:?}"
        );
    }

    #[test]
    fn per_reading_upload_flags_match_batch_mode() {
        // The daily upload is computed the same way in both modes.
        let mut batch = trained_sensor(DetectionMode::BatchDaily);
        let mut per_reading = trained_sensor(DetectionMode::PerReading);
        let mut day = day_pattern();
        day[3] = (day[3] + 0.4).min(1.0);
        for (i, v) in day.iter().enumerate() {
            batch.ingest_reading(*v, i + 1).unwrap();
            per_reading.ingest_reading(*v, i + 1).unwrap();
        }
        let msg_batch = batch.end_of_day(1).unwrap();
        let msg_rt = per_reading.end_of_day(1).unwrap();
        assert_eq!(msg_batch.alpha, msg_rt.alpha);
    }

    #[test]
    fn apply_update_swaps_params_and_stats_but_not_buffer() {
        let mut sensor = zero_sensor(DetectionMode::BatchDaily);
        sensor.ingest_reading(0.5, 1).unwrap();
        let update = ModelUpdate {
            params: sensor.params().clone(),
            stats: ResidualStats::new(vec![0.0; 4], vec![0.5; 4]).unwrap(),
            effective_day: 2,
        };
        sensor.apply_update(&update).unwrap();
        assert_eq!(sensor.buffered(), 1, "buffer must be untouched");
        assert_eq!(sensor.stats().sigma()[0], 0.5);
    }

    #[test]
    fn apply_identity_update_changes_nothing_observable() {
        let mut sensor = trained_sensor(DetectionMode::BatchDaily);
        let update = ModelUpdate {
            params: sensor.params().clone(),
            stats: sensor.stats().clone(),
            effective_day: 1,
        };
        let mut twin = sensor.clone();
        twin.apply_update(&update).unwrap();
        for (i, v) in day_pattern().into_iter().enumerate() {
            sensor.ingest_reading(v, i + 1).unwrap();
            twin.ingest_reading(v, i + 1).unwrap();
        }
        assert_eq!(sensor.end_of_day(1).unwrap(), twin.end_of_day(1).unwrap());
    }

    #[test]
    fn apply_update_rejects_shape_mismatch() {
        let mut sensor = zero_sensor(DetectionMode::BatchDaily);
        let other_shape = NetworkShape::new(6, 2).unwrap();
        let update = ModelUpdate {
            params: ModelParams::zeros(other_shape),
            stats: ResidualStats::new(vec![0.0; 6], vec![0.1; 6]).unwrap(),
            effective_day: 1,
        };
        assert!(sensor.apply_update(&update).is_err());
    }

    #[test]
    fn wider_sigma_unflags_borderline_residual() {
        // A residual flagged under the old sigma is accepted under a wider
        // one delivered by an update.
        let shape = NetworkShape::new(4, 2).unwrap();
        let params = ModelParams::zeros(shape);
        // Zero params reconstruct 0.5 everywhere, so x = 0.8 has r = 0.3.
        let tight = ResidualStats::new(vec![0.0; 4], vec![0.1; 4]).unwrap();
        let wide = ResidualStats::new(vec![0.0; 4], vec![0.2; 4]).unwrap();
        let mut sensor = SensorState::new(
            1,
            params.clone(),
            tight,
            DetectionThreshold::new(2.0).unwrap(),
            DetectionMode::BatchDaily,
        )
        .unwrap();
        for slot in 1..=4 {
            sensor.ingest_reading(0.8, slot).unwrap();
        }
        let flagged = sensor.end_of_day(1).unwrap();
        assert!(flagged.flags().any());

        sensor
            .apply_update(&ModelUpdate {
                params,
                stats: wide,
                effective_day: 2,
            })
            .unwrap();
        for slot in 1..=4 {
            sensor.ingest_reading(0.8, slot).unwrap();
        }
        let clear = sensor.end_of_day(2).unwrap();
        assert_eq!(clear.flags().count(), 0);
    }

    #[test]
    fn upload_serializes_to_json_line() {
        let mut sensor = zero_sensor(DetectionMode::BatchDaily);
        for slot in 1..=4 {
            sensor.ingest_reading(0.5, slot).unwrap();
        }
        let msg = sensor.end_of_day(1).unwrap();
        let line = serde_json::to_string(&msg).unwrap();
        assert!(!line.contains('\n'));
        let back: UploadMessage = serde_json::from_str(&line).unwrap();
        assert_eq!(msg, back);
    }
}
