use serde::{Deserialize, Serialize};

use super::{ensure_rank2, Cache, Module, NnError, Param, Result, Rng};
use crate::tensor::Tensor;
use crate::Real;

/// Reinterprets the input with a new shape of equal element count.
#[derive(Debug, Clone, PartialEq)]
pub struct Reshape {
    name: String,
    pub dims: Vec<usize>,
}

impl Reshape {
    pub fn new(name: &str, dims: Vec<usize>) -> Self {
        Self {
            name: name.to_string(),
            dims,
        }
    }
}

impl Module for Reshape {
    fn forward(&self, x: &Tensor, _mode: super::Mode, _rng: &mut Rng) -> Result<(Tensor, Cache)> {
        Ok((
            x.reshape(&self.dims)?,
            Cache::Reshape {
                input_shape: x.shape().to_vec(),
            },
        ))
    }

    fn backward(&mut self, grad_out: &Tensor, cache: &Cache) -> Result<Tensor> {
        let Cache::Reshape { input_shape } = cache else {
            return Err(NnError::MissingCache { layer: "reshape" });
        };
        Ok(grad_out.reshape(input_shape)?)
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

/// How a `[T, U]` hidden sequence collapses to one `[U]` vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeqReduction {
    Last,
    Mean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceReduce {
    name: String,
    pub mode: SeqReduction,
}

impl SequenceReduce {
    pub fn new(name: &str, mode: SeqReduction) -> Self {
        Self {
            name: name.to_string(),
            mode,
        }
    }
}

impl Module for SequenceReduce {
    fn forward(&self, x: &Tensor, _mode: super::Mode, _rng: &mut Rng) -> Result<(Tensor, Cache)> {
        let (t, u) = ensure_rank2("sequence_reduce", x)?;
        let out = match self.mode {
            SeqReduction::Last => x.data()[(t - 1) * u..].to_vec(),
            SeqReduction::Mean => (0..u)
                .map(|k| (0..t).fold(0.0, |acc, s| acc + x.data()[s * u + k]) / t as Real)
                .collect(),
        };
        Ok((
            Tensor::new(vec![u], out)?,
            Cache::SequenceReduce {
                input_shape: x.shape().to_vec(),
            },
        ))
    }

    fn backward(&mut self, grad_out: &Tensor, cache: &Cache) -> Result<Tensor> {
        let Cache::SequenceReduce { input_shape } = cache else {
            return Err(NnError::MissingCache {
                layer: "sequence_reduce",
            });
        };
        let (t, u) = (input_shape[0], input_shape[1]);
        if grad_out.len() != u {
            return Err(super::mismatch(
                "sequence_reduce backward",
                grad_out.shape(),
                &[u],
            ));
        }
        let mut g = Tensor::zeros(input_shape);
        let gd = g.data_mut();
        match self.mode {
            SeqReduction::Last => gd[(t - 1) * u..].copy_from_slice(grad_out.data()),
            SeqReduction::Mean => {
                let scale = 1.0 / t as Real;
                for row in gd.chunks_mut(u) {
                    for (v, go) in row.iter_mut().zip(grad_out.data()) {
                        *v = go * scale;
                    }
                }
            }
        }
        Ok(g)
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Mode;
    use rand::SeedableRng;

    #[test]
    fn last_step_and_gradient() {
        let mut r = SequenceReduce::new("r", SeqReduction::Last);
        let x = Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let (y, cache) = r
            .forward(&x, Mode::Eval, &mut Rng::seed_from_u64(0))
            .unwrap();
        assert_eq!(y.data(), &[5.0, 6.0]);
        let g = r
            .backward(&Tensor::from_vec(vec![1.0, -1.0]), &cache)
            .unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 0.0, 0.0, 1.0, -1.0]);
    }

    #[test]
    fn mean_over_time() {
        let r = SequenceReduce::new("r", SeqReduction::Mean);
        let x = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, _) = r
            .forward(&x, Mode::Eval, &mut Rng::seed_from_u64(0))
            .unwrap();
        assert_eq!(y.data(), &[2.0, 3.0]);
    }

    #[test]
    fn reshape_backward_restores_shape() {
        let mut r = Reshape::new("r", vec![2, 3]);
        let x = Tensor::from_vec(vec![0.0; 6]);
        let (y, cache) = r
            .forward(&x, Mode::Eval, &mut Rng::seed_from_u64(0))
            .unwrap();
        assert_eq!(y.shape(), &[2, 3]);
        assert_eq!(r.backward(&y, &cache).unwrap().shape(), &[6]);
    }
}
