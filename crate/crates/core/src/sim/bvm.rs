//! Bag-valve-mask model and ventilation metrics.

use serde::{Deserialize, Serialize};

use crate::error::MetricsError;

pub const TIDAL_RANGE_ML: (f64, f64) = (400.0, 600.0);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BagModel {
    pub rest_volume_ml: f64,
    pub compressible_ml: f64,
    /// Fraction of squeezed volume lost at the mask, in `[0, 1)`.
    pub leak: f64,
}

impl Default for BagModel {
    fn default() -> Self {
        BagModel {
            rest_volume_ml: 1600.0,
            compressible_ml: 600.0,
            leak: 0.1,
        }
    }
}

impl BagModel {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.compressible_ml > 0.0) || !(self.rest_volume_ml >= self.compressible_ml) {
            return Err("bag volumes must satisfy 0 < compressible <= rest".into());
        }
        if !(0.0..1.0).contains(&self.leak) {
            return Err("bag leak must lie in [0, 1)".into());
        }
        Ok(())
    }

    /// Volume delivered for a compression fraction (clamped to `[0, 1]`).
    pub fn delivered_volume(&self, compression: f64) -> f64 {
        self.compressible_ml * compression.clamp(0.0, 1.0) * (1.0 - self.leak)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Breath {
    pub peak_time_s: f64,
    pub peak_compression: f64,
    /// Time from 10 % to 90 % of this breath's peak compression.
    pub rise_time_s: f64,
    pub volume_ml: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BvmMetrics {
    /// Mean peak-to-peak spacing.
    pub interval_s: f64,
    /// Mean 10 %→90 % rise duration.
    pub ventilation_time_s: f64,
    pub mean_volume_ml: f64,
    pub fraction_in_range: f64,
    pub breaths: Vec<Breath>,
}

/// Time at which the signal first reaches `level` within `samples`, linearly
/// interpolated against the previous sample.
fn crossing(samples: &[(f64, f64)], start: usize, level: f64) -> f64 {
    for i in start..samples.len() {
        let (t, c) = samples[i];
        if c >= level {
            if i == 0 {
                return t;
            }
            let (t0, c0) = samples[i - 1];
            if c0 >= level || c == c0 {
                return t;
            }
            return t0 + (t - t0) * (level - c0) / (c - c0);
        }
    }
    samples.last().map_or(0.0, |s| s.0)
}

/// Segments a `(time, compression)` log into breaths: maximal runs above
/// `onset` (compression fraction).
pub fn bvm_metrics(samples: &[(f64, f64)], bag: &BagModel, onset: f64) -> Result<BvmMetrics, MetricsError> {
    let mut breaths = Vec::new();
    let mut i = 0;
    while i < samples.len() {
        if samples[i].1 <= onset {
            i += 1;
            continue;
        }
        let start = i;
        let mut peak = start;
        while i < samples.len() && samples[i].1 > onset {
            if samples[i].1 > samples[peak].1 {
                peak = i;
            }
            i += 1;
        }
        let search_from = start.saturating_sub(1);
        let pc = samples[peak].1;
        let window = &samples[..=peak];
        let t10 = crossing(window, search_from, 0.1 * pc);
        let t90 = crossing(window, search_from, 0.9 * pc);
        breaths.push(Breath {
            peak_time_s: samples[peak].0,
            peak_compression: pc,
            rise_time_s: t90 - t10,
            volume_ml: bag.delivered_volume(pc),
        });
    }
    if breaths.len() < 2 {
        return Err(MetricsError::InsufficientBreaths { found: breaths.len() });
    }
    let n = breaths.len() as f64;
    let interval_s = (breaths.last().unwrap().peak_time_s - breaths[0].peak_time_s) / (n - 1.0);
    let ventilation_time_s = breaths.iter().map(|b| b.rise_time_s).sum::<f64>() / n;
    let mean_volume_ml = breaths.iter().map(|b| b.volume_ml).sum::<f64>() / n;
    let in_range = breaths
        .iter()
        .filter(|b| b.volume_ml >= TIDAL_RANGE_ML.0 && b.volume_ml <= TIDAL_RANGE_ML.1)
        .count() as f64;
    Ok(BvmMetrics {
        interval_s,
        ventilation_time_s,
        mean_volume_ml,
        fraction_in_range: in_range / n,
        breaths,
    })
}
