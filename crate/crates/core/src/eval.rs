//! Prognostics metrics and the test-set evaluation protocol.
//!
//! The per-engine error is `estimate - truth`, so positive errors are late
//! predictions. The score is the asymmetric PHM08 form:
//!
//! ```text
//! S = Σ exp(-E/13) - 1   for E < 0
//!     Σ exp( E/10) - 1   for E >= 0
//! ```

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{
    apply_norm, make_curve_windows, make_test_window, DataError, NormStats, Trajectory, WindowBatch,
};
use crate::nn::{Network, NnError};
use crate::Real;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] NnError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, EvalError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreVariant {
    /// Standard PHM08 penalty: late errors grow faster, zero error costs 0.
    #[default]
    Phm08,
    /// `Σ exp(-E/13)` for `E < 0` and `Σ exp(-E/10)` for `E >= 0`, without
    /// the `-1` offsets. Kept only for comparison; it rewards late estimates.
    AsPrinted,
}

fn require_nonempty(errors: &[Real], what: &str) -> Result<()> {
    if errors.is_empty() {
        return Err(EvalError::Usage(format!("{what} of an empty error list")));
    }
    Ok(())
}

fn penalty(e: Real, variant: ScoreVariant) -> Real {
    match variant {
        ScoreVariant::Phm08 if e < 0.0 => (-e / 13.0).exp_m1(),
        ScoreVariant::Phm08 => (e / 10.0).exp_m1(),
        ScoreVariant::AsPrinted if e < 0.0 => (-e / 13.0).exp(),
        ScoreVariant::AsPrinted => (-e / 10.0).exp(),
    }
}

pub fn score(errors: &[Real]) -> Result<Real> {
    score_with(errors, ScoreVariant::Phm08)
}

pub fn score_with(errors: &[Real], variant: ScoreVariant) -> Result<Real> {
    require_nonempty(errors, "score")?;
    Ok(errors.iter().map(|&e| penalty(e, variant)).sum())
}

pub fn rmse(errors: &[Real]) -> Result<Real> {
    require_nonempty(errors, "rmse")?;
    let ss: Real = errors.iter().map(|e| e * e).sum();
    Ok((ss / errors.len() as Real).sqrt())
}

/// `(1 - with_aug / without_aug) * 100`, in percent.
pub fn performance_gain(with_aug: Real, without_aug: Real) -> Result<Real> {
    if without_aug == 0.0 || !without_aug.is_finite() {
        return Err(EvalError::Usage(format!(
            "performance gain needs a finite non-zero baseline, got {without_aug}"
        )));
    }
    Ok((1.0 - with_aug / without_aug) * 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineError {
    pub engine_id: u32,
    pub rul_true: Real,
    pub rul_est: Real,
    pub error: Real,
}

impl EngineError {
    pub fn new(engine_id: u32, rul_true: Real, rul_est: Real) -> Self {
        Self {
            engine_id,
            rul_true,
            rul_est,
            error: rul_est - rul_true,
        }
    }
}

/// Estimate-versus-truth series for one engine, one point per cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub engine_id: u32,
    pub cycles: Vec<u32>,
    pub rul_true: Vec<Real>,
    pub rul_est: Vec<Real>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub dataset: String,
    pub engines: Vec<EngineError>,
    pub score: Real,
    pub rmse: Real,
    pub curves: Vec<Curve>,
}

impl EvalReport {
    /// Builds a report from per-engine errors, sorted by engine id.
    pub fn from_errors(
        dataset: &str,
        mut engines: Vec<EngineError>,
        variant: ScoreVariant,
    ) -> Result<Self> {
        engines.sort_by_key(|e| e.engine_id);
        let errors: Vec<Real> = engines.iter().map(|e| e.error).collect();
        Ok(Self {
            dataset: dataset.to_string(),
            score: score_with(&errors, variant)?,
            rmse: rmse(&errors)?,
            engines,
            curves: Vec::new(),
        })
    }

    pub fn count(&self) -> usize {
        self.engines.len()
    }

    pub fn summary_line(&self) -> String {
        format!(
            "dataset={} n={} score={} rmse={}",
            self.dataset,
            self.count(),
            self.score,
            self.rmse
        )
    }

    pub fn engines_csv(&self) -> String {
        let mut out = String::from("engine_id,true,est,error\n");
        for e in &self.engines {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                e.engine_id, e.rul_true, e.rul_est, e.error
            );
        }
        out
    }

    pub fn curves_csv(&self) -> String {
        let mut out = String::from("engine_id,cycle,true,est\n");
        for c in &self.curves {
            for ((cycle, t), e) in c.cycles.iter().zip(&c.rul_true).zip(&c.rul_est) {
                let _ = writeln!(out, "{},{cycle},{t},{e}", c.engine_id);
            }
        }
        out
    }
}

/// Anything that maps windows to RUL estimates.
pub trait RulModel {
    fn seq_len(&self) -> usize;
    fn estimate(&self, batch: &WindowBatch) -> Result<Vec<Real>>;
}

impl RulModel for Network {
    fn seq_len(&self) -> usize {
        self.spec().seq_len
    }

    fn estimate(&self, batch: &WindowBatch) -> Result<Vec<Real>> {
        Ok(self.predict(batch)?)
    }
}

/// Feeds only a subset of the feature columns to the inner model.
pub struct SelectChannels<'a, M: RulModel + ?Sized> {
    pub inner: &'a M,
    pub channels: &'a [usize],
}

impl<M: RulModel + ?Sized> RulModel for SelectChannels<'_, M> {
    fn seq_len(&self) -> usize {
        self.inner.seq_len()
    }

    fn estimate(&self, batch: &WindowBatch) -> Result<Vec<Real>> {
        self.inner.estimate(&batch.select_channels(self.channels))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalConfig {
    pub dataset: String,
    pub variant: ScoreVariant,
    /// Engines whose full estimate curves are recorded.
    pub curve_engines: Vec<u32>,
}

/// Scores the model on the final window of every test trajectory. Inputs are
/// normalized with the training statistics; negative estimates are clamped
/// to 0. Every trajectory must carry its true final RUL.
pub fn evaluate(
    model: &dyn RulModel,
    test: &[Trajectory],
    stats: &NormStats,
    config: &EvalConfig,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(EvalError::Usage("no test trajectories".into()));
    }
    if let Some(t) = test.iter().find(|t| t.true_final_rul.is_none()) {
        return Err(EvalError::Usage(format!(
            "engine {} has no ground-truth RUL",
            t.engine_id
        )));
    }
    let seq_len = model.seq_len();
    let normalized: Vec<Trajectory> = test.iter().map(|t| apply_norm(t, stats)).collect();
    let mut windows = WindowBatch::empty(seq_len, crate::data::NUM_FEATURES);
    for t in &normalized {
        windows.extend(&make_test_window(t, seq_len)?);
    }
    let estimates = model.estimate(&windows)?;
    if estimates.len() != windows.len() {
        return Err(EvalError::Usage(format!(
            "model returned {} estimates for {} windows",
            estimates.len(),
            windows.len()
        )));
    }
    let engines = windows
        .origins
        .iter()
        .zip(&windows.labels)
        .zip(&estimates)
        .map(|((o, &truth), &est)| EngineError::new(o.engine_id, truth, est.max(0.0)))
        .collect();
    let mut report = EvalReport::from_errors(&config.dataset, engines, config.variant)?;
    for id in &config.curve_engines {
        let Some(t) = normalized.iter().find(|t| t.engine_id == *id) else {
            return Err(EvalError::Usage(format!(
                "curve engine {id} not in the test set"
            )));
        };
        let batch = make_curve_windows(t, seq_len)?;
        let est = model.estimate(&batch)?;
        report.curves.push(Curve {
            engine_id: *id,
            cycles: t.cycles.clone(),
            rul_true: batch.labels.clone(),
            rul_est: est.into_iter().map(|e| e.max(0.0)).collect(),
        });
    }
    Ok(report)
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result
}

/// Writes `summary.txt`, `engines.csv` and `curves.csv` into `dir`.
pub fn emit_report(report: &EvalReport, dir: &Path) -> Result<()> {
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| EvalError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let files = [
        ("summary.txt", format!("{}\n", report.summary_line())),
        ("engines.csv", report.engines_csv()),
        ("curves.csv", report.curves_csv()),
    ];
    for (name, body) in files {
        let path = dir.join(name);
        write_atomic(&path, body.as_bytes()).map_err(io(&path))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn score_examples() {
        assert_eq!(score(&[0.0, 0.0]).unwrap(), 0.0);
        assert!((score(&[10.0]).unwrap() - 1.718281828459045).abs() < 1e-12);
        assert!((score(&[-13.0]).unwrap() - 1.718281828459045).abs() < 1e-12);
        assert!(score(&[13.0]).unwrap() > score(&[-13.0]).unwrap());
        assert!(score(&[]).is_err());
    }

    #[test]
    fn printed_variant() {
        assert_eq!(score_with(&[0.0], ScoreVariant::AsPrinted).unwrap(), 1.0);
        let late = score_with(&[10.0], ScoreVariant::AsPrinted).unwrap();
        assert!((late - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert!((rmse(&[3.0, -4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-12);
        assert!(rmse(&[]).is_err());
    }

    #[test]
    fn gain_examples() {
        assert!((performance_gain(29.55, 31.60).unwrap() - 6.487).abs() < 0.01);
        assert!((performance_gain(21.03, 31.06).unwrap() - 32.29).abs() < 0.01);
        assert_eq!(performance_gain(5.0, 5.0).unwrap(), 0.0);
        assert!(performance_gain(1.0, 0.0).is_err());
    }

    struct Oracle(Vec<(u32, Real)>);

    impl RulModel for Oracle {
        fn seq_len(&self) -> usize {
            5
        }
        fn estimate(&self, batch: &WindowBatch) -> Result<Vec<Real>> {
            Ok(batch
                .origins
                .iter()
                .map(|o| self.0.iter().find(|(id, _)| *id == o.engine_id).unwrap().1)
                .collect())
        }
    }

    fn fleet(truths: &[u32]) -> (Vec<Trajectory>, NormStats) {
        let mut trajs = crate::data::synth_trajectories(truths.len(), 9, 1, 1.0).unwrap();
        for (t, &truth) in trajs.iter_mut().zip(truths) {
            t.true_final_rul = Some(truth);
        }
        let stats = crate::data::fit_norm_stats(&trajs).unwrap();
        (trajs, stats)
    }

    #[test]
    fn perfect_stub_scores_zero() {
        let (trajs, stats) = fleet(&[10, 20, 35]);
        let model = Oracle(vec![(1, 10.0), (2, 20.0), (3, 35.0)]);
        let r = evaluate(&model, &trajs, &stats, &EvalConfig::default()).unwrap();
        assert_eq!((r.score, r.rmse, r.count()), (0.0, 0.0, 3));
    }

    #[test]
    fn constant_zero_model() {
        let (trajs, stats) = fleet(&[10, 20]);
        let model = Oracle(vec![(1, 0.0), (2, 0.0)]);
        let r = evaluate(&model, &trajs, &stats, &EvalConfig::default()).unwrap();
        let errors: Vec<Real> = r.engines.iter().map(|e| e.error).collect();
        assert_eq!(errors, vec![-10.0, -20.0]);
        assert!((r.rmse - 15.811388300841896).abs() < 1e-9);
    }

    #[test]
    fn negative_estimates_clamped() {
        let (trajs, stats) = fleet(&[10]);
        let r = evaluate(
            &Oracle(vec![(1, -7.0)]),
            &trajs,
            &stats,
            &EvalConfig::default(),
        )
        .unwrap();
        assert_eq!(r.engines[0].rul_est, 0.0);
    }

    #[test]
    fn missing_truth_names_engine() {
        let (mut trajs, stats) = fleet(&[10, 20]);
        trajs[1].true_final_rul = None;
        let err = evaluate(&Oracle(vec![]), &trajs, &stats, &EvalConfig::default()).unwrap_err();
        assert!(err.to_string().contains("engine 2"), "{err}");
    }

    #[test]
    fn curves_recorded() {
        let (trajs, stats) = fleet(&[10]);
        let config = EvalConfig {
            curve_engines: vec![1],
            ..EvalConfig::default()
        };
        let r = evaluate(&Oracle(vec![(1, 3.0)]), &trajs, &stats, &config).unwrap();
        let c = &r.curves[0];
        assert_eq!(c.cycles.len(), trajs[0].len());
        assert_eq!(*c.rul_true.last().unwrap(), 10.0);
        assert!(r.curves_csv().lines().count() == trajs[0].len() + 1);
    }

    #[test]
    fn emitted_files_reparse_and_repeat() {
        let engines = vec![
            EngineError::new(2, 40.0, 31.7),
            EngineError::new(1, 12.0, 19.123456789),
            EngineError::new(3, 100.0, 88.0),
        ];
        let report = EvalReport::from_errors("demo", engines, ScoreVariant::Phm08).unwrap();
        let dir = tempfile::tempdir().unwrap();
        emit_report(&report, dir.path()).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("engines.csv")).unwrap();
        assert_eq!(csv.lines().count(), 4);
        let errors: Vec<Real> = csv
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(3).unwrap().parse().unwrap())
            .collect();
        assert!((rmse(&errors).unwrap() - report.rmse).abs() < 1e-9);
        let summary = std::fs::read_to_string(dir.path().join("summary.txt")).unwrap();
        assert!(summary.starts_with("dataset=demo n=3 score="));
        emit_report(&report, dir.path()).unwrap();
        assert_eq!(
            std::fs::read_to_string(dir.path().join("engines.csv")).unwrap(),
            csv
        );
        assert!(!dir.path().join("engines.csv.tmp").exists());
    }

    #[test]
    fn unwritable_destination() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("plain");
        std::fs::write(&file, "x").unwrap();
        let report = EvalReport::from_errors(
            "d",
            vec![EngineError::new(1, 1.0, 1.0)],
            ScoreVariant::Phm08,
        )
        .unwrap();
        assert!(matches!(
            emit_report(&report, &file),
            Err(EvalError::Io { .. })
        ));
    }

    proptest! {
        #[test]
        fn score_monotone_in_magnitude(e in -80.0f64..80.0, d in 0.01f64..20.0) {
            let grown = e + d * e.signum();
            prop_assume!(e != 0.0);
            prop_assert!(score(&[grown]).unwrap() > score(&[e]).unwrap());
        }

        #[test]
        fn score_additive_and_nonnegative(errs in proptest::collection::vec(-100.0f64..100.0, 1..20)) {
            let total = score(&errs).unwrap();
            let parts: Real = errs.iter().map(|e| score(&[*e]).unwrap()).sum();
            prop_assert!(total >= 0.0);
            prop_assert!((total - parts).abs() <= 1e-9 * total.max(1.0));
        }

        #[test]
        fn late_costs_more(m in 0.01f64..100.0) {
            prop_assert!(score(&[m]).unwrap() > score(&[-m]).unwrap());
        }

        #[test]
        fn rmse_matches_brute_force(errs in proptest::collection::vec(-1e3f64..1e3, 1..50)) {
            let mut acc = 0.0;
            for e in &errs {
                acc += e * e;
            }
            let brute = (acc / errs.len() as f64).sqrt();
            prop_assert!((rmse(&errs).unwrap() - brute).abs() <= 1e-12 * brute.max(1.0));
            let mut rev = errs.clone();
            rev.reverse();
            prop_assert!((rmse(&rev).unwrap() - rmse(&errs).unwrap()).abs() <= 1e-12 * brute.max(1.0));
        }
    }
}
