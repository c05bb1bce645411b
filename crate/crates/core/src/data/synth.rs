//! Synthetic run-to-failure fleets in the 26-column layout.
//!
//! Each sensor reading is `baseline + regime offset + sensitivity * drift(t) +
//! engine offset + noise`, where `drift(t) = severity * exp(-(T - t) / 45)`
//! grows towards failure at step `T`. Baselines, regime offsets and
//! sensitivities are fixed constants so that fleets generated with different
//! seeds (train and test) share one sensor model; the seed only drives
//! lifetimes, regime sequences, engine offsets and noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{DataError, Result, Row, Trajectory, NUM_FEATURES, NUM_SENSORS, NUM_SETTINGS};
use crate::Real;

const MODEL_SEED: u64 = 0x7C3A_11F0;
const MIN_LIFE: usize = 120;
const MAX_LIFE: usize = 350;
const DRIFT_TIME_CONSTANT: Real = 45.0;

/// Sensor indices (0-based within the 21 sensors) that respond to degradation.
pub const INFORMATIVE_SENSORS: [usize; 14] = [1, 2, 3, 6, 7, 8, 10, 11, 12, 13, 14, 16, 19, 20];

struct SensorModel {
    baseline: [Real; NUM_SENSORS],
    sensitivity: [Real; NUM_SENSORS],
    noise: [Real; NUM_SENSORS],
    /// Six operating regimes: settings plus per-sensor offsets.
    regimes: Vec<([Real; NUM_SETTINGS], [Real; NUM_SENSORS])>,
}

impl SensorModel {
    fn fixed() -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(MODEL_SEED);
        let mut baseline = [0.0; NUM_SENSORS];
        let mut sensitivity = [0.0; NUM_SENSORS];
        let mut noise = [0.0; NUM_SENSORS];
        for j in 0..NUM_SENSORS {
            baseline[j] = rng.random_range(10.0..600.0);
            noise[j] = rng.random_range(0.05..0.25);
            if INFORMATIVE_SENSORS.contains(&j) {
                let magnitude = rng.random_range(0.8..2.5);
                sensitivity[j] = if rng.random_bool(0.5) {
                    magnitude
                } else {
                    -magnitude
                };
            }
        }
        let regimes = (0..6)
            .map(|r| {
                let settings = if r == 0 {
                    [0.0, 0.0, 100.0]
                } else {
                    [
                        rng.random_range(0.0..42.0),
                        rng.random_range(0.0..0.84),
                        if rng.random_bool(0.5) { 100.0 } else { 60.0 },
                    ]
                };
                let mut offsets = [0.0; NUM_SENSORS];
                if r > 0 {
                    for o in &mut offsets {
                        *o = rng.random_range(-30.0..30.0);
                    }
                }
                (settings, offsets)
            })
            .collect();
        Self {
            baseline,
            sensitivity,
            noise,
            regimes,
        }
    }
}

fn generate(
    n: usize,
    seed: u64,
    regime_count: usize,
    fault_severity: Real,
    cut_for_test: bool,
) -> Result<Vec<Trajectory>> {
    if n == 0 {
        return Err(DataError::Usage("synthetic fleet size must be >= 1".into()));
    }
    if !(1..=6).contains(&regime_count) {
        return Err(DataError::Usage(format!(
            "regime_count {regime_count} outside 1..=6"
        )));
    }
    if !(fault_severity.is_finite() && fault_severity >= 0.0) {
        return Err(DataError::Usage(format!(
            "fault_severity {fault_severity} must be a non-negative number"
        )));
    }
    let model = SensorModel::fixed();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut out = Vec::with_capacity(n);
    for e in 0..n {
        let life = rng.random_range(MIN_LIFE..=MAX_LIFE);
        let engine_offset: Vec<Real> = (0..NUM_SENSORS)
            .map(|j| 0.5 * model.noise[j] * unit.sample(&mut rng))
            .collect();
        let mut steps = Vec::with_capacity(life);
        for t in 1..=life {
            let regime = if regime_count == 1 {
                0
            } else {
                rng.random_range(0..regime_count)
            };
            let (settings, offsets) = &model.regimes[regime];
            let drift = fault_severity * (-((life - t) as Real) / DRIFT_TIME_CONSTANT).exp();
            let mut row: Row = [0.0; NUM_FEATURES];
            for (k, s) in settings.iter().enumerate() {
                row[k] = s + 0.002 * unit.sample(&mut rng);
            }
            for j in 0..NUM_SENSORS {
                row[NUM_SETTINGS + j] = model.baseline[j]
                    + offsets[j]
                    + model.sensitivity[j] * drift
                    + engine_offset[j]
                    + model.noise[j] * unit.sample(&mut rng);
            }
            steps.push(row);
        }
        let mut traj = Trajectory {
            engine_id: e as u32 + 1,
            cycles: (1..=life as u32).collect(),
            steps,
            true_final_rul: None,
        };
        if cut_for_test {
            let truth = rng.random_range(5..=150usize).min(life - 20);
            traj = traj.prefix(life - truth);
            traj.true_final_rul = Some(truth as u32);
        }
        out.push(traj);
    }
    Ok(out)
}

/// Complete run-to-failure trajectories with lifetimes in `[120, 350]`.
pub fn synth_trajectories(
    n: usize,
    seed: u64,
    regime_count: usize,
    fault_severity: Real,
) -> Result<Vec<Trajectory>> {
    generate(n, seed, regime_count, fault_severity, false)
}

/// Trajectories cut before failure, with the number of remaining cycles
/// attached as ground truth (between 5 and 150).
pub fn synth_test_set(
    n: usize,
    seed: u64,
    regime_count: usize,
    fault_severity: Real,
) -> Result<Vec<Trajectory>> {
    generate(n, seed, regime_count, fault_severity, true)
}
