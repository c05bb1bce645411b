use super::{ensure_rank2, Cache, Module, NnError, Param, Result, Rng};
use crate::tensor::Tensor;
use crate::Real;

/// 1D max-pooling over time with "same" padding.
///
/// Output length is `ceil(T / stride)`. The padding needed to cover the last
/// window is split with the smaller half on the left; padded slots act as
/// negative infinity so they never win. Ties go to the lowest input index.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxPool1d {
    name: String,
    pub pool_size: usize,
    pub stride: usize,
}

impl MaxPool1d {
    pub fn new(name: &str, pool_size: usize, stride: usize) -> Result<Self> {
        if pool_size == 0 || stride == 0 {
            return Err(NnError::Hyper {
                layer: "maxpool1d",
                reason: format!("pool_size={pool_size} stride={stride}; both must be >= 1"),
            });
        }
        Ok(Self {
            name: name.to_string(),
            pool_size,
            stride,
        })
    }

    pub fn output_len(&self, t: usize) -> usize {
        t.div_ceil(self.stride)
    }

    pub fn pad_left(&self, t: usize) -> usize {
        let out = self.output_len(t);
        let total = ((out - 1) * self.stride + self.pool_size).saturating_sub(t);
        total / 2
    }
}

impl Module for MaxPool1d {
    fn forward(&self, x: &Tensor, _mode: super::Mode, _rng: &mut Rng) -> Result<(Tensor, Cache)> {
        let (t_len, c) = ensure_rank2("maxpool1d", x)?;
        let out_len = self.output_len(t_len);
        let pad = self.pad_left(t_len);
        let xs = x.data();
        let mut out = Vec::with_capacity(out_len * c);
        let mut argmax = Vec::with_capacity(out_len * c);
        let mut min_gap = Real::INFINITY;
        for o in 0..out_len {
            let start = (o * self.stride) as isize - pad as isize;
            for ch in 0..c {
                let mut best = Real::NEG_INFINITY;
                let mut second = Real::NEG_INFINITY;
                let mut best_idx = usize::MAX;
                for p in 0..self.pool_size {
                    let pos = start + p as isize;
                    if pos < 0 || pos as usize >= t_len {
                        continue;
                    }
                    let pos = pos as usize;
                    let v = xs[pos * c + ch];
                    if v > best {
                        second = best;
                        best = v;
                        best_idx = pos;
                    } else if v > second {
                        second = v;
                    }
                }
                // Exact zeros tying each other come from an upstream ReLU
                // clamp; that layer's own kink distance already covers them.
                if !(best == 0.0 && second == 0.0) {
                    min_gap = min_gap.min(best - second);
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
        Ok((
            Tensor::new(vec![out_len, c], out)?,
            Cache::MaxPool1d {
                input_shape: x.shape().to_vec(),
                argmax,
                min_gap,
            },
        ))
    }

    fn backward(&mut self, grad_out: &Tensor, cache: &Cache) -> Result<Tensor> {
        let Cache::MaxPool1d {
            input_shape,
            argmax,
            ..
        } = cache
        else {
            return Err(NnError::MissingCache { layer: "maxpool1d" });
        };
        if grad_out.len() != argmax.len() {
            return Err(super::mismatch(
                "maxpool1d backward",
                grad_out.shape(),
                &[argmax.len()],
            ));
        }
        let c = input_shape[1];
        let mut gx = Tensor::zeros(input_shape);
        let g = gx.data_mut();
        for (i, (&src, &go)) in argmax.iter().zip(grad_out.data()).enumerate() {
            g[src * c + i % c] += go;
        }
        Ok(gx)
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

    fn run(pool: &MaxPool1d, v: &[Real]) -> (Tensor, Cache) {
        let x = Tensor::new(vec![v.len(), 1], v.to_vec()).unwrap();
        pool.forward(&x, Mode::Eval, &mut Rng::seed_from_u64(0))
            .unwrap()
    }

    #[test]
    fn pairs() {
        let p = MaxPool1d::new("p", 2, 2).unwrap();
        assert_eq!(run(&p, &[1.0, 3.0, 2.0, 5.0]).0.data(), &[3.0, 5.0]);
        assert_eq!(run(&p, &[4.0; 6]).0.data(), &[4.0; 3]);
    }

    #[test]
    fn same_padding_odd_length() {
        let p = MaxPool1d::new("p", 2, 2).unwrap();
        let (y, cache) = run(&p, &[1.0, 2.0, 3.0, 4.0, -7.0]);
        assert_eq!(y.shape(), &[3, 1]);
        // Last window holds only the real element -7 and one padded slot.
        assert_eq!(y.data(), &[2.0, 4.0, -7.0]);
        let Cache::MaxPool1d { argmax, .. } = cache else {
            unreachable!()
        };
        assert_eq!(argmax, vec![1, 3, 4]);
    }

    #[test]
    fn routes_gradient_to_argmax() {
        let mut p = MaxPool1d::new("p", 2, 2).unwrap();
        let (_, cache) = run(&p, &[1.0, 3.0]);
        let g = p
            .backward(&Tensor::new(vec![1, 1], vec![1.0]).unwrap(), &cache)
            .unwrap();
        assert_eq!(g.data(), &[0.0, 1.0]);
    }

    #[test]
    fn tie_goes_to_lowest_index() {
        let mut p = MaxPool1d::new("p", 2, 2).unwrap();
        let (_, cache) = run(&p, &[2.0, 2.0]);
        assert_eq!(cache.kink_distance(), 0.0);
        let g = p
            .backward(&Tensor::new(vec![1, 1], vec![1.0]).unwrap(), &cache)
            .unwrap();
        assert_eq!(g.data(), &[1.0, 0.0]);
        let (_, cache) = run(&p, &[0.0, 0.0]);
        assert_eq!(cache.kink_distance(), Real::INFINITY);
    }

    #[test]
    fn overlapping_windows_accumulate() {
        let mut p = MaxPool1d::new("p", 3, 1).unwrap();
        let (y, cache) = run(&p, &[0.0, 9.0, 1.0]);
        assert_eq!(y.data(), &[9.0, 9.0, 9.0]);
        let g = p.backward(&Tensor::full(&[3, 1], 1.0), &cache).unwrap();
        assert_eq!(g.data(), &[0.0, 3.0, 0.0]);
    }

    #[test]
    fn zero_sizes_rejected() {
        assert!(MaxPool1d::new("p", 0, 1).is_err());
        assert!(MaxPool1d::new("p", 2, 0).is_err());
    }
}
