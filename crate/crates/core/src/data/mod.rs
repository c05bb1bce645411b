//! Run-to-failure trajectories: ingestion, normalization, RUL targets,
//! truncation augmentation and window batching.

mod cmapss;
mod synth;

pub use cmapss::{
    parse_cmapss, parse_cmapss_str, parse_rul_truth, parse_rul_truth_str, write_cmapss,
    write_rul_truth,
};
pub use synth::{synth_test_set, synth_trajectories, INFORMATIVE_SENSORS};

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;
use crate::Real;

/// Operating settings plus sensor channels per time step.
pub const NUM_FEATURES: usize = 24;
pub const NUM_SETTINGS: usize = 3;
pub const NUM_SENSORS: usize = 21;
/// Whitespace-separated fields per row in the raw files.
pub const RAW_COLUMNS: usize = 2 + NUM_FEATURES;

/// Smallest standard deviation used for scaling; constant columns map to 0.
pub const STD_FLOOR: Real = 1e-8;
pub const DEFAULT_R_MAX: Real = 130.0;
pub const DEFAULT_SEQ_LEN: usize = 100;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("truth file has {truth} values but there are {trajectories} trajectories")]
    CountMismatch { truth: usize, trajectories: usize },
    #[error("engine {engine_id} has no ground-truth RUL")]
    MissingTruth { engine_id: u32 },
    #[error("usage error: {0}")]
    Usage(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;

pub type Row = [Real; NUM_FEATURES];

/// One component's multivariate series from its first recorded cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub engine_id: u32,
    pub cycles: Vec<u32>,
    pub steps: Vec<Row>,
    pub true_final_rul: Option<u32>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Steps `1..=n` of this trajectory.
    pub fn prefix(&self, n: usize) -> Trajectory {
        Trajectory {
            engine_id: self.engine_id,
            cycles: self.cycles[..n].to_vec(),
            steps: self.steps[..n].to_vec(),
            true_final_rul: None,
        }
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = Real> + '_ {
        self.steps.iter().map(move |r| r[j])
    }
}

/// Per-feature mean and (population) standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<Real>,
    pub std: Vec<Real>,
}

/// Fits per-column statistics over all steps of all training trajectories.
pub fn fit_norm_stats(train: &[Trajectory]) -> Result<NormStats> {
    let count: usize = train.iter().map(Trajectory::len).sum();
    if count == 0 {
        return Err(DataError::Usage(
            "normalization statistics need at least one training step".into(),
        ));
    }
    let n = count as Real;
    let mut mean = vec![0.0; NUM_FEATURES];
    for row in train.iter().flat_map(|t| &t.steps) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = [0.0; NUM_FEATURES];
    for row in train.iter().flat_map(|t| &t.steps) {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var.iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect();
    Ok(NormStats { mean, std })
}

pub fn apply_norm(t: &Trajectory, stats: &NormStats) -> Trajectory {
    let mut out = t.clone();
    for row in &mut out.steps {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - stats.mean[j]) / stats.std[j];
        }
    }
    out
}

pub fn invert_norm(t: &Trajectory, stats: &NormStats) -> Trajectory {
    let mut out = t.clone();
    for row in &mut out.steps {
        for (j, v) in row.iter_mut().enumerate() {
            *v = *v * stats.std[j] + stats.mean[j];
        }
    }
    out
}

/// Piecewise-linear RUL labels, one per step.
#[derive(Debug, Clone, PartialEq)]
pub struct RulSeries {
    pub values: Vec<Real>,
}

impl RulSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// 1-based step where the series first drops below its predecessor.
    pub fn knee(&self) -> Option<usize> {
        self.values
            .windows(2)
            .position(|w| w[1] < w[0])
            .map(|i| i + 2)
    }
}

/// `values[t-1] = min(r_max, T - t)` for `t = 1..=T`.
pub fn make_rul_targets(t: &Trajectory, r_max: Real) -> RulSeries {
    let len = t.len();
    RulSeries {
        values: (1..=len)
            .map(|step| r_max.min((len - step) as Real))
            .collect(),
    }
}

/// Truncation augmentation.
///
/// Every input pair is kept, and for each trajectory `lambda` prefixes are
/// appended: the cut point is drawn uniformly from `knee..=T` where `knee` is
/// the first step at which the target starts to decrease. A series that never
/// decreases (a single step) uses `knee = T`, so the output always holds
/// exactly `(lambda + 1) * N` trajectories.
pub fn augment(
    trajs: &[Trajectory],
    ruls: &[RulSeries],
    lambda: usize,
    rng: &mut impl rand::Rng,
) -> Result<(Vec<Trajectory>, Vec<RulSeries>)> {
    if lambda < 1 {
        return Err(DataError::Usage(
            "augmentation size must be a positive integer".into(),
        ));
    }
    if trajs.len() != ruls.len() {
        return Err(DataError::Usage(format!(
            "{} trajectories but {} RUL series",
            trajs.len(),
            ruls.len()
        )));
    }
    let mut out_x = trajs.to_vec();
    let mut out_r = ruls.to_vec();
    for (x, r) in trajs.iter().zip(ruls) {
        if x.len() != r.len() || x.is_empty() {
            return Err(DataError::Usage(format!(
                "engine {}: {} steps but {} RUL values",
                x.engine_id,
                x.len(),
                r.len()
            )));
        }
        let end = x.len();
        let knee = r.knee().unwrap_or(end);
        for _ in 0..lambda {
            let cut = rng.random_range(knee..=end);
            out_x.push(x.prefix(cut));
            out_r.push(RulSeries {
                values: r.values[..cut].to_vec(),
            });
        }
    }
    Ok((out_x, out_r))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowOrigin {
    pub engine_id: u32,
    /// 1-based index of the window's final step within its trajectory.
    pub end_step: usize,
}

/// `B` windows of `seq_len × channels`, stored contiguously, with one label each.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch {
    pub seq_len: usize,
    pub channels: usize,
    pub inputs: Vec<Real>,
    pub labels: Vec<Real>,
    pub origins: Vec<WindowOrigin>,
}

impl WindowBatch {
    pub fn empty(seq_len: usize, channels: usize) -> Self {
        Self {
            seq_len,
            channels,
            inputs: Vec::new(),
            labels: Vec::new(),
            origins: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn stride(&self) -> usize {
        self.seq_len * self.channels
    }

    pub fn window_data(&self, i: usize) -> &[Real] {
        &self.inputs[i * self.stride()..(i + 1) * self.stride()]
    }

    pub fn window(&self, i: usize) -> Tensor {
        Tensor::new(
            vec![self.seq_len, self.channels],
            self.window_data(i).to_vec(),
        )
        .expect("window geometry")
    }

    pub fn push(&mut self, window: &[Real], label: Real, origin: WindowOrigin) {
        assert_eq!(window.len(), self.stride(), "window size");
        self.inputs.extend_from_slice(window);
        self.labels.push(label);
        self.origins.push(origin);
    }

    pub fn extend(&mut self, other: &WindowBatch) {
        assert_eq!(
            (self.seq_len, self.channels),
            (other.seq_len, other.channels),
            "window geometry"
        );
        self.inputs.extend_from_slice(&other.inputs);
        self.labels.extend_from_slice(&other.labels);
        self.origins.extend_from_slice(&other.origins);
    }

    pub fn concat<'a>(
        seq_len: usize,
        channels: usize,
        parts: impl IntoIterator<Item = &'a WindowBatch>,
    ) -> Self {
        let mut out = Self::empty(seq_len, channels);
        for p in parts {
            out.extend(p);
        }
        out
    }

    pub fn subset(&self, indices: &[usize]) -> WindowBatch {
        let mut out = Self::empty(self.seq_len, self.channels);
        for &i in indices {
            out.push(self.window_data(i), self.labels[i], self.origins[i]);
        }
        out
    }

    /// Keeps only the listed feature channels, in the given order.
    pub fn select_channels(&self, channels: &[usize]) -> WindowBatch {
        let mut out = Self::empty(self.seq_len, channels.len());
        for i in 0..self.len() {
            let w = self.window_data(i);
            let picked: Vec<Real> = w
                .chunks(self.channels)
                .flat_map(|row| channels.iter().map(move |&c| row[c]))
                .collect();
            out.push(&picked, self.labels[i], self.origins[i]);
        }
        out
    }

    /// Labels as a `[B, 1]` tensor.
    pub fn label_tensor(&self) -> Tensor {
        Tensor::new(vec![self.len().max(1), 1], self.labels.clone()).expect("non-empty batch")
    }
}

/// Copies the `seq_len` steps ending at 1-based `end`, left-padding with the
/// first row when the trajectory is shorter than the window.
fn window_ending_at(t: &Trajectory, end: usize, seq_len: usize) -> Vec<Real> {
    let mut out = Vec::with_capacity(seq_len * NUM_FEATURES);
    let start = end as isize - seq_len as isize;
    for s in start..end as isize {
        let row = &t.steps[s.max(0) as usize];
        out.extend_from_slice(row);
    }
    out
}

/// Training windows at the given stride, aligned so the last window ends at
/// the final step; successive windows end `stride` steps apart and are
/// returned in increasing end order. Each label is the RUL at the window's
/// final step. A trajectory shorter than `seq_len` yields one padded window.
pub fn make_windows(
    t: &Trajectory,
    r: &RulSeries,
    seq_len: usize,
    stride: usize,
) -> Result<WindowBatch> {
    if seq_len == 0 || stride == 0 {
        return Err(DataError::Usage(format!(
            "seq_len={seq_len} stride={stride}; both must be >= 1"
        )));
    }
    if t.len() != r.len() || t.is_empty() {
        return Err(DataError::Usage(format!(
            "engine {}: {} steps but {} RUL values",
            t.engine_id,
            t.len(),
            r.len()
        )));
    }
    let len = t.len();
    let first_end = seq_len.min(len);
    let mut ends: Vec<usize> = (0..)
        .map(|k| len as isize - (k * stride) as isize)
        .take_while(|&e| e >= first_end as isize)
        .map(|e| e as usize)
        .collect();
    ends.reverse();
    let mut batch = WindowBatch::empty(seq_len, NUM_FEATURES);
    for end in ends {
        batch.push(
            &window_ending_at(t, end, seq_len),
            r.values[end - 1],
            WindowOrigin {
                engine_id: t.engine_id,
                end_step: end,
            },
        );
    }
    Ok(batch)
}

/// The single window ending at a test trajectory's last step, labelled with
/// its ground-truth RUL.
pub fn make_test_window(t: &Trajectory, seq_len: usize) -> Result<WindowBatch> {
    if seq_len == 0 || t.is_empty() {
        return Err(DataError::Usage(
            "test window needs seq_len >= 1 and a non-empty trajectory".into(),
        ));
    }
    let truth = t.true_final_rul.ok_or(DataError::MissingTruth {
        engine_id: t.engine_id,
    })?;
    let mut batch = WindowBatch::empty(seq_len, NUM_FEATURES);
    batch.push(
        &window_ending_at(t, t.len(), seq_len),
        truth as Real,
        WindowOrigin {
            engine_id: t.engine_id,
            end_step: t.len(),
        },
    );
    Ok(batch)
}

/// One window ending at every step of a trajectory (1..=T), for plotting
/// estimate-versus-truth curves. Labels are `truth + (T - end)`, i.e. the
/// true RUL at each step when the final truth is known, else the
/// run-to-failure countdown `T - end`.
pub fn make_curve_windows(t: &Trajectory, seq_len: usize) -> Result<WindowBatch> {
    if seq_len == 0 || t.is_empty() {
        return Err(DataError::Usage(
            "curve windows need seq_len >= 1 and a non-empty trajectory".into(),
        ));
    }
    let len = t.len();
    let offset = t.true_final_rul.unwrap_or(0) as Real;
    let mut batch = WindowBatch::empty(seq_len, NUM_FEATURES);
    for end in 1..=len {
        batch.push(
            &window_ending_at(t, end, seq_len),
            offset + (len - end) as Real,
            WindowOrigin {
                engine_id: t.engine_id,
                end_step: end,
            },
        );
    }
    Ok(batch)
}

/// Splits whole engines into (train, validation) using a seeded shuffle.
pub fn split_engines(
    trajs: &[Trajectory],
    validation_fraction: Real,
    rng: &mut impl rand::Rng,
) -> (Vec<Trajectory>, Vec<Trajectory>) {
    let n_val = ((trajs.len() as Real) * validation_fraction).round() as usize;
    if n_val == 0 {
        return (trajs.to_vec(), Vec::new());
    }
    let mut order: Vec<usize> = (0..trajs.len()).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), rng);
    let mut val_idx: Vec<usize> = order[..n_val.min(trajs.len())].to_vec();
    val_idx.sort_unstable();
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (i, t) in trajs.iter().enumerate() {
        if val_idx.binary_search(&i).is_ok() {
            val.push(t.clone());
        } else {
            train.push(t.clone());
        }
    }
    (train, val)
}
