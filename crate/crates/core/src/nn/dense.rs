use super::{Activation, Cache, Module, NnError, Param, Result, Rng};
use crate::tensor::Tensor;

/// Fully-connected layer `h = f(W x + b)` on a flattened input.
///
/// `weight` is `[units, inputs]`; any input whose element count equals
/// `inputs` is accepted and read in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    name: String,
    pub inputs: usize,
    pub units: usize,
    pub activation: Activation,
    pub weight: Param,
    pub bias: Param,
}

impl Dense {
    pub fn new(
        name: &str,
        inputs: usize,
        units: usize,
        activation: Activation,
        rng: &mut Rng,
    ) -> Result<Self> {
        if inputs == 0 || units == 0 {
            return Err(NnError::Hyper {
                layer: "dense",
                reason: format!("inputs={inputs} units={units}; both must be >= 1"),
            });
        }
        Ok(Self {
            name: name.to_string(),
            inputs,
            units,
            activation,
            weight: Param::glorot(
                format!("{name}.weight"),
                &[units, inputs],
                inputs,
                units,
                rng,
            ),
            bias: Param::zeros(format!("{name}.bias"), &[units]),
        })
    }
}

impl Module for Dense {
    fn forward(&self, x: &Tensor, _mode: super::Mode, _rng: &mut Rng) -> Result<(Tensor, Cache)> {
        if x.len() != self.inputs {
            return Err(super::mismatch(
                "dense",
                x.shape(),
                self.weight.value.shape(),
            ));
        }
        let w = self.weight.value.data();
        let xs = x.data();
        let pre: Vec<_> = (0..self.units)
            .map(|j| {
                let row = &w[j * self.inputs..(j + 1) * self.inputs];
                let dot = row.iter().zip(xs).fold(0.0, |acc, (a, b)| acc + a * b);
                dot + self.bias.value.data()[j]
            })
            .collect();
        let out = pre.iter().map(|&v| self.activation.apply(v)).collect();
        Ok((
            Tensor::new(vec![self.units], out)?,
            Cache::Dense {
                input: x.clone(),
                pre: Tensor::new(vec![self.units], pre)?,
            },
        ))
    }

    fn backward(&mut self, grad_out: &Tensor, cache: &Cache) -> Result<Tensor> {
        let Cache::Dense { input, pre } = cache else {
            return Err(NnError::MissingCache { layer: "dense" });
        };
        if grad_out.len() != self.units {
            return Err(super::mismatch(
                "dense backward",
                grad_out.shape(),
                pre.shape(),
            ));
        }
        let xs = input.data();
        let n = self.inputs;
        let mut gx = vec![0.0; n];
        let w = self.weight.value.data();
        let gw = self.weight.grad.data_mut();
        let gb = self.bias.grad.data_mut();
        for j in 0..self.units {
            let g = grad_out.data()[j] * self.activation.derivative(pre.data()[j]);
            if g == 0.0 {
                continue;
            }
            gb[j] += g;
            let row = j * n..(j + 1) * n;
            for ((gwv, &xv), (gxv, &wv)) in gw[row.clone()]
                .iter_mut()
                .zip(xs)
                .zip(gx.iter_mut().zip(&w[row]))
            {
                *gwv += g * xv;
                *gxv += g * wv;
            }
        }
        Ok(Tensor::new(input.shape().to_vec(), gx)?)
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
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
    fn identity_weights() {
        let mut rng = Rng::seed_from_u64(0);
        let mut d = Dense::new("d", 3, 3, Activation::Identity, &mut rng).unwrap();
        d.weight.value = Tensor::identity(3);
        let x = Tensor::from_vec(vec![0.5, -1.0, 2.0]);
        assert_eq!(d.forward(&x, Mode::Eval, &mut rng).unwrap().0, x);
    }

    #[test]
    fn hand_computed_relu() {
        let mut rng = Rng::seed_from_u64(0);
        let mut d = Dense::new("d", 2, 1, Activation::Relu, &mut rng).unwrap();
        d.weight.value = Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap();
        d.bias.value = Tensor::from_vec(vec![1.0]);
        let (y, _) = d
            .forward(&Tensor::from_vec(vec![2.0, 3.0]), Mode::Eval, &mut rng)
            .unwrap();
        assert_eq!(y.data(), &[6.0]);
    }

    #[test]
    fn accepts_any_shape_with_matching_count() {
        let mut rng = Rng::seed_from_u64(0);
        let mut d = Dense::new("d", 6, 2, Activation::Identity, &mut rng).unwrap();
        let x = Tensor::full(&[3, 2], 1.0);
        let (y, cache) = d.forward(&x, Mode::Train, &mut rng).unwrap();
        let gx = d.backward(&Tensor::full(y.shape(), 1.0), &cache).unwrap();
        assert_eq!(gx.shape(), &[3, 2]);
        assert!(d
            .forward(&Tensor::zeros(&[5]), Mode::Eval, &mut rng)
            .is_err());
    }
}
