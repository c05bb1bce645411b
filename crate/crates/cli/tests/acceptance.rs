//! One PASS/FAIL/SKIP line per acceptance criterion.
//!
//! Criteria listed in `KNOWN_UNMET` are reported but do not fail the test
//! run; every other criterion must pass.

use std::io::Write as _;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng as _, SeedableRng};
use tcmn_cli::checkpoint::Checkpoint;
use tcmn_core::data::{self, WindowBatch};
use tcmn_core::eval::{self, EvalConfig, SelectChannels};
use tcmn_core::nn::{
    build_tcmn, Activation, Conv1d, LayerSpec, MaxPool1d, Mode, Module, NetworkSpec, Rng,
};
use tcmn_core::optim::{self, TrainConfig, TrainState};
use tcmn_core::tensor::Tensor;
use tcmn_core::Real;

const KNOWN_UNMET: &[&str] = &["AC7"];

type Criterion = (&'static str, fn() -> Verdict);

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn within(limit: Duration, start: Instant, v: Verdict) -> Verdict {
    let took = start.elapsed();
    match v {
        Verdict::Pass(d) if took > limit => {
            Verdict::Fail(format!("{d}; took {took:.1?}, limit {limit:?}"))
        }
        Verdict::Pass(d) => Verdict::Pass(format!("{d}; {took:.1?}")),
        other => other,
    }
}

fn ac1_gradcheck() -> Verdict {
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_tcmn"))
        .args(["gradcheck", "all"])
        .output()
        .expect("run tcmn");
    let text = String::from_utf8_lossy(&out.stdout);
    let passed = text.lines().filter(|l| l.starts_with("PASS ")).count();
    let failed = text.lines().filter(|l| l.starts_with("FAIL ")).count();
    let worst = text
        .lines()
        .filter_map(|l| l.split("max_rel_error=").nth(1))
        .filter_map(|r| r.split_whitespace().next()?.parse::<Real>().ok())
        .fold(0.0, Real::max);
    within(
        Duration::from_secs(120),
        start,
        check(
            out.status.success() && failed == 0 && passed >= 9,
            format!("{passed} targets passed, {failed} failed, worst rel error {worst:.2e}"),
        ),
    )
}

fn conv_reference(x: &[Real], t: usize, conv: &Conv1d) -> Vec<Real> {
    let (k, s, c_in, c_out) = (
        conv.kernel_size,
        conv.stride,
        conv.in_channels,
        conv.filters,
    );
    let w = conv.kernel.value.data();
    let pad = if k % 2 == 0 { k - 1 } else { (k - 1) / 2 } as isize;
    let mut out = Vec::new();
    for o in 0..t.div_ceil(s) {
        for f in 0..c_out {
            let mut acc = 0.0;
            for tap in 0..k {
                let pos = (o * s + tap) as isize - pad;
                if (0..t as isize).contains(&pos) {
                    for c in 0..c_in {
                        acc += x[pos as usize * c_in + c] * w[(tap * c_in + c) * c_out + f];
                    }
                }
            }
            acc += conv.bias.value.data()[f];
            out.push(match conv.activation {
                Activation::Relu if acc < 0.0 => 0.0,
                _ => acc,
            });
        }
    }
    out
}

fn pool_reference(x: &[Real], t: usize, c: usize, size: usize, stride: usize) -> Vec<Real> {
    let out_len = t.div_ceil(stride);
    let left = (((out_len - 1) * stride + size).saturating_sub(t) / 2) as isize;
    let mut out = Vec::new();
    for o in 0..out_len {
        for ch in 0..c {
            let mut best = Real::NEG_INFINITY;
            for p in 0..size {
                let pos = (o * stride + p) as isize - left;
                if (0..t as isize).contains(&pos) {
                    best = best.max(x[pos as usize * c + ch]);
                }
            }
            out.push(best);
        }
    }
    out
}

fn ac2_kernels() -> Verdict {
    let start = Instant::now();
    let mut rng = Rng::seed_from_u64(2024);
    let mut mismatches = 0;
    for i in 0..200 {
        let t = rng.random_range(1..=16);
        let c = rng.random_range(1..=4);
        let stride = rng.random_range(1..=3);
        // Quarter steps give frequent pooling ties.
        let x: Vec<Real> = (0..t * c)
            .map(|_| rng.random_range(-8..=8) as Real / 4.0)
            .collect();
        let input = Tensor::new(vec![t, c], x.clone()).unwrap();
        let act = if i % 2 == 0 {
            Activation::Relu
        } else {
            Activation::Identity
        };
        let mut conv = Conv1d::new(
            "c",
            c,
            rng.random_range(1..=4),
            rng.random_range(1..=5),
            stride,
            act,
            &mut rng,
        )
        .unwrap();
        for v in conv.bias.value.data_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
        let y = conv.forward(&input, Mode::Eval, &mut rng).unwrap().0;
        if y.data() != conv_reference(&x, t, &conv).as_slice() {
            mismatches += 1;
        }
        let size = rng.random_range(1..=4);
        let pool = MaxPool1d::new("p", size, stride).unwrap();
        let y = pool.forward(&input, Mode::Eval, &mut rng).unwrap().0;
        if y.data() != pool_reference(&x, t, c, size, stride).as_slice() {
            mismatches += 1;
        }
    }
    within(
        Duration::from_secs(10),
        start,
        check(
            mismatches == 0,
            format!("200 conv + 200 pool instances, {mismatches} mismatches"),
        ),
    )
}

fn ac3_shapes() -> Verdict {
    let spec = NetworkSpec::default();
    let want: Vec<Vec<usize>> = vec![
        vec![100, 18],
        vec![50, 18],
        vec![50, 36],
        vec![25, 36],
        vec![25, 72],
        vec![13, 72],
        vec![936],
        vec![2400],
        vec![100, 24],
        vec![100, 72],
        vec![100, 72],
        vec![72],
        vec![50],
        vec![1],
    ];
    let net = match build_tcmn(&spec, 0) {
        Ok(n) => n,
        Err(e) => return Verdict::Fail(format!("build failed: {e}")),
    };
    let got: Vec<Vec<usize>> = net
        .spec()
        .shape_trace()
        .unwrap()
        .into_iter()
        .zip(&spec.layers)
        .filter(|(_, l)| !matches!(l, LayerSpec::Dropout { .. }))
        .map(|(s, _)| s)
        .collect();
    if let Some(i) = (0..want.len()).find(|&i| got.get(i) != Some(&want[i])) {
        return Verdict::Fail(format!(
            "layer {i}: got {:?}, want {:?}",
            got.get(i),
            want[i]
        ));
    }
    // The built network must agree with the declared trace.
    let y = net.predict(&WindowBatch {
        seq_len: 100,
        channels: 24,
        inputs: vec![0.1; 2400],
        labels: vec![0.0],
        origins: vec![data::WindowOrigin {
            engine_id: 1,
            end_step: 100,
        }],
    });
    check(
        got.len() == want.len() && y.map(|v| v.len() == 1).unwrap_or(false),
        format!(
            "{} shapes matched, {} parameters",
            want.len(),
            net.parameter_count()
        ),
    )
}

fn ac4_augmentation() -> Verdict {
    let start = Instant::now();
    let trajs = data::synth_trajectories(20, 11, 1, 1.0).unwrap();
    let ruls: Vec<_> = trajs
        .iter()
        .map(|t| data::make_rul_targets(t, 130.0))
        .collect();
    let mut problems = Vec::new();
    for lambda in [1usize, 2, 5] {
        let mut rng = Rng::seed_from_u64(lambda as u64);
        let (xs, rs) = data::augment(&trajs, &ruls, lambda, &mut rng).unwrap();
        if xs.len() != (lambda + 1) * 20 || rs.len() != xs.len() {
            problems.push(format!("lambda={lambda}: {} outputs", xs.len()));
        }
        for (i, (x, r)) in xs.iter().zip(&rs).enumerate().skip(20) {
            let src = (i - 20) / lambda;
            let (sx, sr) = (&trajs[src], &ruls[src]);
            let n = x.len();
            let prefix = n <= sx.len()
                && x.engine_id == sx.engine_id
                && x.steps[..] == sx.steps[..n]
                && x.cycles[..] == sx.cycles[..n]
                && r.values[..] == sr.values[..n];
            if !prefix {
                problems.push(format!(
                    "lambda={lambda}: output {i} is not a prefix of engine {}",
                    sx.engine_id
                ));
            }
            if n < sr.knee().unwrap_or(sx.len()) {
                problems.push(format!(
                    "lambda={lambda}: output {i} cut at {n} before the knee"
                ));
            }
        }
    }
    within(
        Duration::from_secs(5),
        start,
        check(
            problems.is_empty(),
            if problems.is_empty() {
                "lambda 1, 2, 5: cardinality, prefixes and knees hold".into()
            } else {
                problems.join("; ")
            },
        ),
    )
}

fn ac5_metrics() -> Verdict {
    let rmse = eval::rmse(&[3.0, -4.0]).unwrap();
    let s10 = eval::score(&[10.0]).unwrap();
    let asym = [1.0, 10.0, 50.0]
        .iter()
        .all(|&m| eval::score(&[m]).unwrap() > eval::score(&[-m]).unwrap());
    let gain = eval::performance_gain(29.55, 31.60).unwrap();
    check(
        (rmse - 12.5f64.sqrt()).abs() <= 1e-12
            && (s10 - (1f64.exp() - 1.0)).abs() <= 1e-12
            && asym
            && (gain - 6.48).abs() <= 0.01,
        format!("rmse={rmse:.15} score(+10)={s10:.15} asymmetric={asym} gain={gain:.4}"),
    )
}

/// Eight windows from eight engines, ending 0..8 cycles before failure.
fn overfit_fixture() -> WindowBatch {
    let trajs = data::synth_trajectories(8, 3, 1, 1.0).unwrap();
    let stats = data::fit_norm_stats(&trajs).unwrap();
    let parts: Vec<WindowBatch> = trajs
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let t = data::apply_norm(t, &stats);
            let r = data::make_rul_targets(&t, 130.0);
            let w = data::make_windows(&t, &r, 12, 1).unwrap();
            w.subset(&[w.len() - 1 - k]).select_channels(&[4, 5, 6, 7])
        })
        .collect();
    WindowBatch::concat(12, 4, &parts)
}

fn overfit_run(fixture: &WindowBatch, seed: u64) -> (Real, Vec<u8>) {
    let spec = NetworkSpec::scaled(12, 4).with_dropout(0.0);
    let cfg = TrainConfig {
        epochs: 500,
        batch_size: 8,
        seed,
        ..TrainConfig::default()
    };
    let mut net = build_tcmn(&spec, seed).unwrap();
    let mut state = TrainState::new(seed);
    optim::train(&mut net, fixture, None, &cfg, &mut state, &mut |_, _, _| {
        Ok(())
    })
    .unwrap();
    let mse = optim::evaluate_mse(&net, fixture).unwrap();
    (
        mse,
        Checkpoint::capture(&net, &state, &cfg.snapshot(), None).encode(),
    )
}

fn ac6_overfit() -> Verdict {
    let start = Instant::now();
    let fixture = overfit_fixture();
    let (mse, a) = overfit_run(&fixture, 1);
    let (_, b) = overfit_run(&fixture, 1);
    let others = (0..8u64)
        .filter(|&s| s != 1)
        .filter(|&s| overfit_run(&fixture, s).0 < 1.0)
        .count();
    within(
        Duration::from_secs(120),
        start,
        check(
            mse < 1.0 && a == b,
            format!(
                "seed 1 training mse={mse:.3e}, checkpoints identical={} ({} bytes); {others}/7 other seeds also below 1.0",
                a == b,
                a.len()
            ),
        ),
    )
}

fn ac7_augmentation_benefit() -> Verdict {
    let start = Instant::now();
    let channels: Vec<usize> = data::INFORMATIVE_SENSORS.iter().map(|s| s + 3).collect();
    let mut wins = 0;
    let mut pairs = Vec::new();
    for seed in 0..5u64 {
        let train = data::synth_trajectories(40, seed, 1, 1.0).unwrap();
        let test = data::synth_test_set(100, seed.wrapping_add(0x7E57), 1, 1.0).unwrap();
        let stats = data::fit_norm_stats(&train).unwrap();
        let mut scores = [0.0; 2];
        for (slot, augment) in [false, true].into_iter().enumerate() {
            let cfg = TrainConfig {
                epochs: usize::MAX,
                max_steps: Some(1000),
                seed,
                augment,
                lambda: 3,
                ..TrainConfig::default()
            };
            let windows = optim::build_dataset(&train, &stats, 12, &cfg)
                .unwrap()
                .select_channels(&channels);
            let mut net = build_tcmn(&NetworkSpec::scaled(12, channels.len()), seed).unwrap();
            optim::train(
                &mut net,
                &windows,
                None,
                &cfg,
                &mut TrainState::new(seed),
                &mut |_, _, _| Ok(()),
            )
            .unwrap();
            let model = SelectChannels {
                inner: &net,
                channels: &channels,
            };
            let config = EvalConfig {
                dataset: "synthetic".into(),
                ..EvalConfig::default()
            };
            scores[slot] = eval::evaluate(&model, &test, &stats, &config)
                .unwrap()
                .score;
        }
        if scores[1] < scores[0] {
            wins += 1;
        }
        pairs.push(format!("{:.0}/{:.0}", scores[0], scores[1]));
    }
    within(
        Duration::from_secs(900),
        start,
        check(
            wins >= 4,
            format!(
                "augmented run scored lower in {wins}/5 seeds (off/on: {})",
                pairs.join(" ")
            ),
        ),
    )
}

fn ac8_full_pipeline() -> Verdict {
    match std::env::var_os("TCMN_CMAPSS_DIR") {
        None => Verdict::Skip("set TCMN_CMAPSS_DIR to a directory holding train_FD001.txt, test_FD001.txt and RUL_FD001.txt".into()),
        Some(dir) => {
            let dir = std::path::PathBuf::from(dir);
            let out = tempfile::tempdir().unwrap();
            let run = |args: &[&std::ffi::OsStr]| {
                Command::new(env!("CARGO_BIN_EXE_tcmn")).args(args).status().expect("run tcmn")
            };
            let data = dir.join("train_FD001.txt");
            let test = dir.join("test_FD001.txt");
            let truth = dir.join("RUL_FD001.txt");
            let model_dir = out.path().join("fd001");
            let status = run(&[
                "train".as_ref(),
                "--data".as_ref(),
                data.as_os_str(),
                "--out".as_ref(),
                model_dir.as_os_str(),
            ]);
            if !status.success() {
                return Verdict::Fail(format!("train exited with {status}"));
            }
            let eval_dir = out.path().join("eval");
            let status = run(&[
                "evaluate".as_ref(),
                "--checkpoint".as_ref(),
                model_dir.join("model.tcmn").as_os_str(),
                "--test".as_ref(),
                test.as_os_str(),
                "--truth".as_ref(),
                truth.as_os_str(),
                "--out".as_ref(),
                eval_dir.as_os_str(),
            ]);
            if !status.success() {
                return Verdict::Fail(format!("evaluate exited with {status}"));
            }
            let summary = std::fs::read_to_string(eval_dir.join("summary.txt")).unwrap_or_default();
            let rmse = summary
                .split_whitespace()
                .find_map(|f| f.strip_prefix("rmse=")?.parse::<Real>().ok());
            match rmse {
                Some(r) => check(r <= 30.0, format!("FD001 test rmse={r:.2}")),
                None => Verdict::Fail(format!("no rmse in summary: {summary}")),
            }
        }
    }
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 8] = [
        ("AC1", ac1_gradcheck),
        ("AC2", ac2_kernels),
        ("AC3", ac3_shapes),
        ("AC4", ac4_augmentation),
        ("AC5", ac5_metrics),
        ("AC6", ac6_overfit),
        ("AC7", ac7_augmentation_benefit),
        ("AC8", ac8_full_pipeline),
    ];
    // Written to the process stdout directly so the lines show up without
    // --nocapture.
    let mut stdout = std::io::stdout();
    let mut unexpected = Vec::new();
    for (id, run) in criteria {
        let line = match run() {
            Verdict::Pass(d) => format!("{id} PASS {d}"),
            Verdict::Skip(d) => format!("{id} SKIP {d}"),
            Verdict::Fail(d) => {
                if !KNOWN_UNMET.contains(&id) {
                    unexpected.push(id);
                }
                format!("{id} FAIL {d}")
            }
        };
        writeln!(stdout, "{line}").unwrap();
        stdout.flush().unwrap();
    }
    assert!(unexpected.is_empty(), "criteria failed: {unexpected:?}");
}
