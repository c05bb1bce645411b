use rand::Rng as _;

use super::{Cache, Mode, Module, NnError, Param, Result, Rng};
use crate::tensor::Tensor;
use crate::Real;

/// Inverted dropout: in training each element is zeroed with probability `p`
/// and survivors are scaled by `1 / (1 - p)`; evaluation is the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Dropout {
    name: String,
    pub p: Real,
}

impl Dropout {
    pub fn new(name: &str, p: Real) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(NnError::Hyper {
                layer: "dropout",
                reason: format!("probability {p} outside [0, 1)"),
            });
        }
        Ok(Self {
            name: name.to_string(),
            p,
        })
    }
}

impl Module for Dropout {
    fn forward(&self, x: &Tensor, mode: Mode, rng: &mut Rng) -> Result<(Tensor, Cache)> {
        if mode == Mode::Eval || self.p == 0.0 {
            return Ok((x.clone(), Cache::Dropout { mask: None }));
        }
        let keep = 1.0 / (1.0 - self.p);
        let mask: Vec<Real> = (0..x.len())
            .map(|_| {
                if rng.random::<Real>() < self.p {
                    0.0
                } else {
                    keep
                }
            })
            .collect();
        let out = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        Ok((
            Tensor::new(x.shape().to_vec(), out)?,
            Cache::Dropout { mask: Some(mask) },
        ))
    }

    fn backward(&mut self, grad_out: &Tensor, cache: &Cache) -> Result<Tensor> {
        let Cache::Dropout { mask } = cache else {
            return Err(NnError::MissingCache { layer: "dropout" });
        };
        match mask {
            None => Ok(grad_out.clone()),
            Some(m) => {
                if m.len() != grad_out.len() {
                    return Err(super::mismatch(
                        "dropout backward",
                        grad_out.shape(),
                        &[m.len()],
                    ));
                }
                let g = grad_out.data().iter().zip(m).map(|(g, m)| g * m).collect();
                Ok(Tensor::new(grad_out.shape().to_vec(), g)?)
            }
        }
    }

    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }

    fn name(&self) -> &str {
        &self.name
    }
}
