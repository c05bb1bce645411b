//! Central-difference verification of backward passes.
//!
//! The scalar probed is `L = Σ r ⊙ y` for a fixed random `r`, so the analytic
//! input to `backward` is `r` itself. Each coordinate's numeric derivative is
//! `(L(θ + h) - L(θ - h)) / 2h`. Relative error is
//! `|a - n| / max(|a|, |n|, REL_FLOOR)`; the floor keeps coordinates whose
//! true derivative is (numerically) zero from dividing round-off by round-off.

use std::fmt;

use rand::seq::index::sample;
use rand::{Rng as _, SeedableRng};

use super::{OptimError, Result};
use crate::nn::{
    Activation, Cache, Conv1d, Dense, Dropout, Lstm, MaxPool1d, Mode, Module, Network, NetworkSpec,
    Param, Rng, SeqReduction, SequenceReduce,
};
use crate::tensor::Tensor;
use crate::Real;

pub const STEP: Real = 1e-5;
pub const MAX_COORDS: usize = 500;
/// Inputs whose forward pass comes closer than this to a ReLU kink or a
/// max-pool tie are redrawn.
pub const KINK_MARGIN: Real = 1e-4;
pub const REL_FLOOR: Real = 1e-6;
const MAX_RESAMPLES: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub total: usize,
    pub max_rel_error: Real,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub target: String,
    pub tolerance: Real,
    pub resamples: usize,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> Real {
        self.tensors.iter().fold(0.0, |m, t| m.max(t.max_rel_error))
    }

    pub fn passed(&self) -> bool {
        !self.tensors.is_empty()
            && self
                .tensors
                .iter()
                .all(|t| t.max_rel_error < self.tolerance)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} {} max_rel_error={:.3e} tolerance={:.0e} resamples={}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.target,
            self.max_rel_error(),
            self.tolerance,
            self.resamples
        )?;
        for t in &self.tensors {
            writeln!(
                f,
                "  {:<24} coords={}/{} max_rel_error={:.3e}",
                t.name, t.checked, t.total, t.max_rel_error
            )?;
        }
        Ok(())
    }
}

fn probe(
    module: &dyn Module,
    x: &Tensor,
    r: &Tensor,
    mode: Mode,
    mask_seed: u64,
) -> Result<(Real, Cache)> {
    // Reseeding gives every evaluation the same dropout mask.
    let (y, cache) = module.forward(x, mode, &mut Rng::seed_from_u64(mask_seed))?;
    let loss = y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum();
    Ok((loss, cache))
}

fn coords(total: usize, rng: &mut Rng) -> Vec<usize> {
    if total <= MAX_COORDS {
        (0..total).collect()
    } else {
        let mut v = sample(rng, total, MAX_COORDS).into_vec();
        v.sort_unstable();
        v
    }
}

fn rel_error(a: Real, n: Real) -> Real {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

fn random_tensor(shape: &[usize], rng: &mut Rng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.random_range(-0.5..0.5);
    }
    t
}

/// Compares `module`'s analytic gradients (every parameter tensor and the
/// input) against central differences at a random input of `input_shape`.
pub fn grad_check(
    module: &mut dyn Module,
    input_shape: &[usize],
    mode: Mode,
    tolerance: Real,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut rng = Rng::seed_from_u64(seed);
    let mask_seed = rng.random::<u64>();
    let mut resamples = 0;
    let (x, cache) = loop {
        let x = random_tensor(input_shape, &mut rng);
        let (_, cache) = module.forward(&x, mode, &mut Rng::seed_from_u64(mask_seed))?;
        if cache.kink_distance() >= KINK_MARGIN {
            break (x, cache);
        }
        resamples += 1;
        if resamples > MAX_RESAMPLES {
            return Err(OptimError::Usage(format!(
                "{}: no input found at least {KINK_MARGIN} away from every kink",
                module.name()
            )));
        }
    };
    let (y, _) = module.forward(&x, mode, &mut Rng::seed_from_u64(mask_seed))?;
    let r = random_tensor(y.shape(), &mut rng);

    module.zero_grad();
    let grad_x = module.backward(&r, &cache)?;
    let analytic: Vec<Tensor> = module.params().iter().map(|p| p.grad.clone()).collect();
    let names: Vec<String> = module.params().iter().map(|p| p.name.clone()).collect();

    let mut tensors = Vec::new();
    for (pi, (name, grad)) in names.into_iter().zip(&analytic).enumerate() {
        let picked = coords(grad.len(), &mut rng);
        let mut worst: Real = 0.0;
        for &i in &picked {
            let original = module.params()[pi].value.data()[i];
            module.params_mut()[pi].value.data_mut()[i] = original + STEP;
            let (lp, _) = probe(module, &x, &r, mode, mask_seed)?;
            module.params_mut()[pi].value.data_mut()[i] = original - STEP;
            let (lm, _) = probe(module, &x, &r, mode, mask_seed)?;
            module.params_mut()[pi].value.data_mut()[i] = original;
            worst = worst.max(rel_error(grad.data()[i], (lp - lm) / (2.0 * STEP)));
        }
        tensors.push(TensorCheck {
            name,
            checked: picked.len(),
            total: grad.len(),
            max_rel_error: worst,
        });
    }

    let picked = coords(x.len(), &mut rng);
    let mut worst: Real = 0.0;
    let mut xp = x.clone();
    for &i in &picked {
        let original = x.data()[i];
        xp.data_mut()[i] = original + STEP;
        let (lp, _) = probe(module, &xp, &r, mode, mask_seed)?;
        xp.data_mut()[i] = original - STEP;
        let (lm, _) = probe(module, &xp, &r, mode, mask_seed)?;
        xp.data_mut()[i] = original;
        worst = worst.max(rel_error(grad_x.data()[i], (lp - lm) / (2.0 * STEP)));
    }
    tensors.push(TensorCheck {
        name: format!("{}.input", module.name()),
        checked: picked.len(),
        total: x.len(),
        max_rel_error: worst,
    });
    module.zero_grad();

    Ok(GradCheckReport {
        target: module.name().to_string(),
        tolerance,
        resamples,
        tensors,
    })
}

/// Wraps a module and negates every gradient its backward pass produces.
/// Used to confirm the checker catches a broken backward.
pub struct SignFlip<M>(pub M);

impl<M: Module> Module for SignFlip<M> {
    fn forward(&self, x: &Tensor, mode: Mode, rng: &mut Rng) -> crate::nn::Result<(Tensor, Cache)> {
        self.0.forward(x, mode, rng)
    }

    fn backward(&mut self, grad_out: &Tensor, cache: &Cache) -> crate::nn::Result<Tensor> {
        let before: Vec<Tensor> = self.0.params().iter().map(|p| p.grad.clone()).collect();
        let gx = self.0.backward(grad_out, cache)?;
        for (p, b) in self.0.params_mut().into_iter().zip(&before) {
            for (g, b) in p.grad.data_mut().iter_mut().zip(b.data()) {
                *g = b - (*g - b);
            }
        }
        Ok(gx.scale(-1.0))
    }

    fn params(&self) -> Vec<&Param> {
        self.0.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.0.params_mut()
    }

    fn name(&self) -> &str {
        self.0.name()
    }
}

/// Names accepted by [`run_checks`], in execution order.
pub fn registered_checks() -> &'static [&'static str] {
    &[
        "conv1d",
        "conv1d_strided",
        "maxpool1d",
        "dense",
        "dropout",
        "dropout_eval",
        "lstm",
        "sequence_reduce",
        "network",
    ]
}

/// Parameters are redrawn uniformly from [-0.5, 0.5] so that zero-initialised
/// terms such as the LSTM peepholes take part in the check.
fn check_one(name: &str, tolerance: Real, seed: u64, faulty: bool) -> Result<GradCheckReport> {
    let mut init = Rng::seed_from_u64(seed ^ 0x5EED);
    let run = |m: &mut dyn Module, shape: &[usize], mode: Mode| {
        grad_check(m, shape, mode, tolerance, seed)
    };
    macro_rules! go {
        ($module:expr, $shape:expr, $mode:expr) => {{
            let mut module = $module;
            for p in module.params_mut() {
                for v in p.value.data_mut() {
                    *v = init.random_range(-0.5..0.5);
                }
            }
            if faulty {
                run(&mut SignFlip(module), $shape, $mode)
            } else {
                run(&mut module, $shape, $mode)
            }
        }};
    }
    let mut report = match name {
        "conv1d" => go!(
            Conv1d::new("conv1d", 3, 4, 2, 1, Activation::Relu, &mut init)?,
            &[8, 3],
            Mode::Eval
        ),
        "conv1d_strided" => go!(
            Conv1d::new(
                "conv1d_strided",
                2,
                3,
                3,
                2,
                Activation::Identity,
                &mut init
            )?,
            &[9, 2],
            Mode::Eval
        ),
        "maxpool1d" => go!(MaxPool1d::new("maxpool1d", 2, 2)?, &[7, 3], Mode::Eval),
        "dense" => go!(
            Dense::new("dense", 4, 3, Activation::Relu, &mut init)?,
            &[4],
            Mode::Eval
        ),
        "dropout" => go!(Dropout::new("dropout", 0.3)?, &[6, 2], Mode::Train),
        "dropout_eval" => go!(Dropout::new("dropout_eval", 0.3)?, &[6, 2], Mode::Eval),
        "lstm" => go!(Lstm::new("lstm", 2, 3, &mut init)?, &[4, 2], Mode::Eval),
        "sequence_reduce" => go!(
            SequenceReduce::new("sequence_reduce", SeqReduction::Mean),
            &[5, 3],
            Mode::Eval
        ),
        "network" => go!(
            Network::new(NetworkSpec::scaled(12, 4), &mut init)?,
            &[12, 4],
            Mode::Train
        ),
        other => {
            return Err(OptimError::Usage(format!(
                "unknown gradcheck target '{other}'; expected one of {} or 'all'",
                registered_checks().join(", ")
            )))
        }
    }?;
    report.target = name.to_string();
    Ok(report)
}

/// Runs one registered check, or all of them for `scope == "all"`. Targets
/// listed in `faulty` run with their backward sign-flipped.
pub fn run_checks(
    scope: &str,
    tolerance: Real,
    seed: u64,
    faulty: &[String],
) -> Result<Vec<GradCheckReport>> {
    let names: Vec<&str> = if scope == "all" {
        registered_checks().to_vec()
    } else {
        vec![scope]
    };
    if let Some(bad) = faulty
        .iter()
        .find(|f| !registered_checks().contains(&f.as_str()))
    {
        return Err(OptimError::Usage(format!("unknown fault target '{bad}'")));
    }
    names
        .into_iter()
        .map(|n| check_one(n, tolerance, seed, faulty.iter().any(|f| f == n)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_four_by_three() {
        let r = run_checks("dense", 1e-4, 1, &[]).unwrap();
        assert!(r[0].passed(), "{}", r[0]);
        assert_eq!(r[0].tensors.len(), 3);
    }

    #[test]
    fn lstm_small() {
        let r = run_checks("lstm", 1e-4, 2, &[]).unwrap();
        assert!(r[0].passed(), "{}", r[0]);
    }

    #[test]
    fn sign_flip_is_detected() {
        for target in ["dense", "lstm", "conv1d"] {
            let r = run_checks(target, 1e-4, 3, &[target.to_string()]).unwrap();
            assert!(!r[0].passed());
            assert!(r[0].max_rel_error() > 0.1, "{}", r[0]);
        }
    }

    #[test]
    fn large_tensors_are_subsampled() {
        let mut init = Rng::seed_from_u64(0);
        let mut d = Dense::new("big", 40, 30, Activation::Identity, &mut init).unwrap();
        let r = grad_check(&mut d, &[40], Mode::Eval, 1e-4, 4).unwrap();
        assert_eq!(
            (r.tensors[0].checked, r.tensors[0].total),
            (MAX_COORDS, 1200)
        );
        assert!(r.passed(), "{r}");
        let again = grad_check(&mut d, &[40], Mode::Eval, 1e-4, 4).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn every_registered_check_passes() {
        for seed in 0..3 {
            for r in run_checks("all", 1e-4, seed, &[]).unwrap() {
                assert!(r.passed(), "{r}");
            }
        }
    }

    #[test]
    fn unknown_target() {
        assert!(run_checks("softmax", 1e-4, 0, &[]).is_err());
        assert!(run_checks("all", 1e-4, 0, &["nope".into()]).is_err());
    }
}
