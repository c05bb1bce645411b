use rand::SeedableRng;
use tcmn_core::data::{self, WindowBatch};
use tcmn_core::nn::{build_tcmn, LayerSpec, Mode, NetworkSpec, Rng};
use tcmn_core::optim::grad_check;

#[test]
fn default_shape_chain() {
    let spec = NetworkSpec::default();
    let trace: Vec<Vec<usize>> = spec
        .shape_trace()
        .unwrap()
        .into_iter()
        .zip(&spec.layers)
        .filter(|(_, l)| !matches!(l, LayerSpec::Dropout { .. }))
        .map(|(s, _)| s)
        .collect();
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
    assert_eq!(trace, want);
}

#[test]
fn end_to_end_jacobian() {
    for seed in 0..3 {
        let mut net = build_tcmn(&NetworkSpec::scaled(12, 4), seed).unwrap();
        let report = grad_check(&mut net, &[12, 4], Mode::Train, 1e-3, seed).unwrap();
        assert!(report.passed(), "{report}");
    }
}

fn fixture() -> WindowBatch {
    let trajs = data::synth_trajectories(3, 5, 1, 1.0).unwrap();
    let stats = data::fit_norm_stats(&trajs).unwrap();
    let t = data::apply_norm(&trajs[0], &stats);
    let r = data::make_rul_targets(&t, 130.0);
    data::make_windows(&t, &r, 12, 10)
        .unwrap()
        .select_channels(&[4, 5, 6, 7])
}

#[test]
fn train_mode_forward_is_seed_determined() {
    let net = build_tcmn(&NetworkSpec::scaled(12, 4), 9).unwrap();
    let batch = fixture();
    let run = |seed| {
        net.forward_batch(&batch, Mode::Train, &mut Rng::seed_from_u64(seed))
            .unwrap()
            .0
    };
    assert_eq!(run(1), run(1));
    assert_ne!(run(1), run(2));
    assert_eq!(net.predict(&batch).unwrap(), net.predict(&batch).unwrap());
}

#[test]
fn same_seed_same_weights() {
    let spec = NetworkSpec::scaled(12, 4);
    assert_eq!(build_tcmn(&spec, 4).unwrap(), build_tcmn(&spec, 4).unwrap());
    assert_ne!(build_tcmn(&spec, 4).unwrap(), build_tcmn(&spec, 5).unwrap());
}
