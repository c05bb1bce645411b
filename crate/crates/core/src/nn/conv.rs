use super::{ensure_rank2, Activation, Cache, Module, NnError, Param, Result, Rng};
use crate::tensor::Tensor;
use crate::Real;

/// Temporal convolution over a `[T, C_in]` sequence with "same" padding.
///
/// Output position `o` reads input steps `o*stride + k - pad_left` for
/// `k in 0..kernel_size`. Even kernels pad `kernel_size - 1` zeros on the left
/// (causal alignment), odd kernels pad `(kernel_size - 1) / 2` on each side.
///
/// Kernel layout is `[kernel_size, C_in, C_out]`. For each output element the
/// sum runs over `k` then over input channel, and the bias is added last.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    name: String,
    pub in_channels: usize,
    pub filters: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub activation: Activation,
    pub kernel: Param,
    pub bias: Param,
}

impl Conv1d {
    pub fn new(
        name: &str,
        in_channels: usize,
        filters: usize,
        kernel_size: usize,
        stride: usize,
        activation: Activation,
        rng: &mut Rng,
    ) -> Result<Self> {
        if kernel_size == 0 || stride == 0 || in_channels == 0 || filters == 0 {
            return Err(NnError::Hyper {
                layer: "conv1d",
                reason: format!(
                    "kernel_size={kernel_size} stride={stride} in={in_channels} filters={filters}; all must be >= 1"
                ),
            });
        }
        let kernel = Param::glorot(
            format!("{name}.kernel"),
            &[kernel_size, in_channels, filters],
            kernel_size * in_channels,
            kernel_size * filters,
            rng,
        );
        let bias = Param::zeros(format!("{name}.bias"), &[filters]);
        Ok(Self {
            name: name.to_string(),
            in_channels,
            filters,
            kernel_size,
            stride,
            activation,
            kernel,
            bias,
        })
    }

    pub fn pad_left(&self) -> usize {
        if self.kernel_size.is_multiple_of(2) {
            self.kernel_size - 1
        } else {
            (self.kernel_size - 1) / 2
        }
    }

    pub fn output_len(&self, t: usize) -> usize {
        t.div_ceil(self.stride)
    }

    /// Input index read by output `o` at tap `k`, if it falls inside the sequence.
    #[inline]
    fn tap(&self, o: usize, k: usize, t_len: usize) -> Option<usize> {
        let pos = (o * self.stride + k).checked_sub(self.pad_left())?;
        (pos < t_len).then_some(pos)
    }
}

impl Module for Conv1d {
    fn forward(&self, x: &Tensor, _mode: super::Mode, _rng: &mut Rng) -> Result<(Tensor, Cache)> {
        let (t_len, c_in) = ensure_rank2("conv1d", x)?;
        if c_in != self.in_channels {
            return Err(super::mismatch(
                "conv1d",
                x.shape(),
                self.kernel.value.shape(),
            ));
        }
        let c_out = self.filters;
        let out_len = self.output_len(t_len);
        let w = self.kernel.value.data();
        let xs = x.data();
        let mut pre = vec![0.0; out_len * c_out];
        for o in 0..out_len {
            let acc = &mut pre[o * c_out..(o + 1) * c_out];
            for k in 0..self.kernel_size {
                let Some(pos) = self.tap(o, k, t_len) else {
                    continue;
                };
                for c in 0..c_in {
                    let xv = xs[pos * c_in + c];
                    let wrow = &w[(k * c_in + c) * c_out..(k * c_in + c + 1) * c_out];
                    for (a, &wv) in acc.iter_mut().zip(wrow) {
                        *a += xv * wv;
                    }
                }
            }
            for (a, &b) in acc.iter_mut().zip(self.bias.value.data()) {
                *a += b;
            }
        }
        let pre = Tensor::new(vec![out_len, c_out], pre)?;
        let out = Tensor::new(
            pre.shape().to_vec(),
            pre.data()
                .iter()
                .map(|&v| self.activation.apply(v))
                .collect(),
        )?;
        Ok((
            out,
            Cache::Conv1d {
                input: x.clone(),
                pre,
            },
        ))
    }

    fn backward(&mut self, grad_out: &Tensor, cache: &Cache) -> Result<Tensor> {
        let Cache::Conv1d { input, pre } = cache else {
            return Err(NnError::MissingCache { layer: "conv1d" });
        };
        if grad_out.shape() != pre.shape() {
            return Err(super::mismatch(
                "conv1d backward",
                grad_out.shape(),
                pre.shape(),
            ));
        }
        let (t_len, c_in) = (input.shape()[0], input.shape()[1]);
        let c_out = self.filters;
        let out_len = pre.shape()[0];
        let gpre: Vec<Real> = grad_out
            .data()
            .iter()
            .zip(pre.data())
            .map(|(&g, &p)| g * self.activation.derivative(p))
            .collect();
        let xs = input.data();
        let w = self.kernel.value.data().to_vec();
        let mut gx = vec![0.0; t_len * c_in];
        let taps: Vec<Option<usize>> = (0..out_len)
            .flat_map(|o| (0..self.kernel_size).map(move |k| (o, k)))
            .map(|(o, k)| self.tap(o, k, t_len))
            .collect();
        let kernel_size = self.kernel_size;
        {
            let gw = self.kernel.grad.data_mut();
            for o in 0..out_len {
                let g = &gpre[o * c_out..(o + 1) * c_out];
                for k in 0..kernel_size {
                    let Some(pos) = taps[o * kernel_size + k] else {
                        continue;
                    };
                    for c in 0..c_in {
                        let base = (k * c_in + c) * c_out;
                        let xv = xs[pos * c_in + c];
                        let mut dx = 0.0;
                        for j in 0..c_out {
                            gw[base + j] += xv * g[j];
                            dx += w[base + j] * g[j];
                        }
                        gx[pos * c_in + c] += dx;
                    }
                }
            }
        }
        let gb = self.bias.grad.data_mut();
        for o in 0..out_len {
            for j in 0..c_out {
                gb[j] += gpre[o * c_out + j];
            }
        }
        Ok(Tensor::new(vec![t_len, c_in], gx)?)
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.kernel, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.kernel, &mut self.bias]
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

    fn conv(k: usize, weights: &[Real], act: Activation) -> Conv1d {
        let mut rng = Rng::seed_from_u64(0);
        let mut c = Conv1d::new("c", 1, 1, k, 1, act, &mut rng).unwrap();
        c.kernel.value = Tensor::new(vec![k, 1, 1], weights.to_vec()).unwrap();
        c
    }

    fn col(v: &[Real]) -> Tensor {
        Tensor::new(vec![v.len(), 1], v.to_vec()).unwrap()
    }

    #[test]
    fn identity_kernel() {
        let c = conv(1, &[1.0], Activation::Identity);
        let (y, _) = c
            .forward(
                &col(&[1.0, 2.0, 3.0]),
                Mode::Eval,
                &mut Rng::seed_from_u64(0),
            )
            .unwrap();
        assert_eq!(y.data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn even_kernel_pads_left() {
        let c = conv(2, &[1.0, 1.0], Activation::Identity);
        let (y, _) = c
            .forward(
                &col(&[1.0, 2.0, 3.0, 4.0]),
                Mode::Eval,
                &mut Rng::seed_from_u64(0),
            )
            .unwrap();
        assert_eq!(y.data(), &[1.0, 3.0, 5.0, 7.0]);
    }

    #[test]
    fn odd_kernel_pads_symmetrically() {
        let c = conv(3, &[1.0, 10.0, 100.0], Activation::Identity);
        let (y, _) = c
            .forward(
                &col(&[1.0, 2.0, 3.0]),
                Mode::Eval,
                &mut Rng::seed_from_u64(0),
            )
            .unwrap();
        // y_t = x_{t-1} + 10 x_t + 100 x_{t+1}
        assert_eq!(y.data(), &[210.0, 321.0, 32.0]);
    }

    #[test]
    fn relu_clamps() {
        let c = conv(1, &[1.0], Activation::Relu);
        let (y, _) = c
            .forward(&col(&[-5.0, 2.0]), Mode::Eval, &mut Rng::seed_from_u64(0))
            .unwrap();
        assert_eq!(y.data(), &[0.0, 2.0]);
    }

    #[test]
    fn strided_output_length() {
        let mut rng = Rng::seed_from_u64(1);
        let c = Conv1d::new("c", 2, 3, 2, 2, Activation::Relu, &mut rng).unwrap();
        let (y, _) = c
            .forward(&Tensor::zeros(&[5, 2]), Mode::Eval, &mut rng)
            .unwrap();
        assert_eq!(y.shape(), &[3, 3]);
    }

    #[test]
    fn channel_mismatch_is_dimension_error() {
        let c = conv(1, &[1.0], Activation::Identity);
        let err = c.forward(
            &Tensor::zeros(&[3, 2]),
            Mode::Eval,
            &mut Rng::seed_from_u64(0),
        );
        assert!(matches!(err, Err(NnError::Tensor(_))));
    }

    #[test]
    fn single_element_chain_rule() {
        let mut c = conv(1, &[3.0], Activation::Identity);
        let (_, cache) = c
            .forward(&col(&[2.0]), Mode::Train, &mut Rng::seed_from_u64(0))
            .unwrap();
        let gx = c.backward(&col(&[1.0]), &cache).unwrap();
        assert_eq!(c.kernel.grad.data(), &[2.0]);
        assert_eq!(c.bias.grad.data(), &[1.0]);
        assert_eq!(gx.data(), &[3.0]);
    }

    #[test]
    fn zero_upstream_gradient() {
        let mut rng = Rng::seed_from_u64(3);
        let mut c = Conv1d::new("c", 3, 4, 2, 1, Activation::Relu, &mut rng).unwrap();
        let x = Tensor::full(&[6, 3], 0.7);
        let (y, cache) = c.forward(&x, Mode::Train, &mut rng).unwrap();
        let gx = c.backward(&Tensor::zeros(y.shape()), &cache).unwrap();
        assert!(gx.data().iter().all(|&v| v == 0.0));
        assert!(c
            .params()
            .iter()
            .all(|p| p.grad.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn wrong_cache_is_usage_error() {
        let mut c = conv(1, &[1.0], Activation::Identity);
        let err = c.backward(&col(&[1.0]), &Cache::Dropout { mask: None });
        assert!(matches!(err, Err(NnError::MissingCache { .. })));
    }
}
