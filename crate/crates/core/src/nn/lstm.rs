//! LSTM layer with diagonal peephole connections.
//!
//! For each step `t` with `h⁰ = c⁰ = 0`:
//!
//! ```text
//! i = σ(Wix x + Wih h' + pi ⊙ c' + bi)
//! f = σ(Wfx x + Wfh h' + pf ⊙ c' + bf)
//! g = tanh(Wcx x + Wch h' + bc)
//! c = f ⊙ c' + i ⊙ g
//! o = σ(Wox x + Woh h' + po ⊙ c + bo)
//! h = o ⊙ tanh(c)
//! ```
//!
//! where `h'`, `c'` are the previous step's states. The four gate blocks are
//! stacked in `w_x` (`[4U, C_in]`), `w_h` (`[4U, U]`) and `bias` (`[4U]`) in the
//! order input, forget, candidate, output.

use super::{ensure_rank2, Cache, Module, NnError, Param, Result, Rng};
use crate::tensor::{sigmoid, Tensor};
use crate::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    name: String,
    pub inputs: usize,
    pub units: usize,
    pub w_x: Param,
    pub w_h: Param,
    pub bias: Param,
    pub peep_i: Param,
    pub peep_f: Param,
    pub peep_o: Param,
}

/// Per-step gate activations, each stored as `[T, U]` row-major.
#[derive(Debug, Clone)]
pub struct LstmCache {
    pub input: Tensor,
    pub i: Vec<Real>,
    pub f: Vec<Real>,
    pub g: Vec<Real>,
    pub o: Vec<Real>,
    pub c: Vec<Real>,
    pub tanh_c: Vec<Real>,
    pub h: Vec<Real>,
}

impl Lstm {
    pub fn new(name: &str, inputs: usize, units: usize, rng: &mut Rng) -> Result<Self> {
        if inputs == 0 || units == 0 {
            return Err(NnError::Hyper {
                layer: "lstm",
                reason: format!("inputs={inputs} units={units}; both must be >= 1"),
            });
        }
        let mut bias = Param::zeros(format!("{name}.bias"), &[4 * units]);
        // Forget gate starts open.
        bias.value.data_mut()[units..2 * units].fill(1.0);
        Ok(Self {
            name: name.to_string(),
            inputs,
            units,
            w_x: Param::glorot(
                format!("{name}.w_x"),
                &[4 * units, inputs],
                inputs,
                4 * units,
                rng,
            ),
            w_h: Param::glorot(
                format!("{name}.w_h"),
                &[4 * units, units],
                units,
                4 * units,
                rng,
            ),
            bias,
            peep_i: Param::zeros(format!("{name}.peep_i"), &[units]),
            peep_f: Param::zeros(format!("{name}.peep_f"), &[units]),
            peep_o: Param::zeros(format!("{name}.peep_o"), &[units]),
        })
    }

    /// `out[r] += Σ_k m[r, k] v[k]` for a row-major `[rows, v.len()]` matrix.
    #[inline]
    fn gemv_acc(m: &[Real], v: &[Real], out: &mut [Real]) {
        let n = v.len();
        for (r, o) in out.iter_mut().enumerate() {
            let row = &m[r * n..(r + 1) * n];
            *o += row.iter().zip(v).fold(0.0, |acc, (a, b)| acc + a * b);
        }
    }
}

impl Module for Lstm {
    fn forward(&self, x: &Tensor, _mode: super::Mode, _rng: &mut Rng) -> Result<(Tensor, Cache)> {
        let (t_len, c_in) = ensure_rank2("lstm", x)?;
        if c_in != self.inputs {
            return Err(super::mismatch("lstm", x.shape(), self.w_x.value.shape()));
        }
        let u = self.units;
        let n = t_len * u;
        let mut cache = LstmCache {
            input: x.clone(),
            i: vec![0.0; n],
            f: vec![0.0; n],
            g: vec![0.0; n],
            o: vec![0.0; n],
            c: vec![0.0; n],
            tanh_c: vec![0.0; n],
            h: vec![0.0; n],
        };
        let zeros = vec![0.0; u];
        let (pi, pf, po) = (
            self.peep_i.value.data(),
            self.peep_f.value.data(),
            self.peep_o.value.data(),
        );
        let mut a = vec![0.0; 4 * u];
        for t in 0..t_len {
            let xt = &x.data()[t * c_in..(t + 1) * c_in];
            let (h_prev, c_prev) = if t == 0 {
                (zeros.clone(), zeros.clone())
            } else {
                (
                    cache.h[(t - 1) * u..t * u].to_vec(),
                    cache.c[(t - 1) * u..t * u].to_vec(),
                )
            };
            a.copy_from_slice(self.bias.value.data());
            Self::gemv_acc(self.w_x.value.data(), xt, &mut a);
            Self::gemv_acc(self.w_h.value.data(), &h_prev, &mut a);
            let row = t * u..(t + 1) * u;
            for k in 0..u {
                let i = sigmoid(a[k] + pi[k] * c_prev[k]);
                let f = sigmoid(a[u + k] + pf[k] * c_prev[k]);
                let g = a[2 * u + k].tanh();
                let c = f * c_prev[k] + i * g;
                let o = sigmoid(a[3 * u + k] + po[k] * c);
                let tc = c.tanh();
                let idx = row.start + k;
                cache.i[idx] = i;
                cache.f[idx] = f;
                cache.g[idx] = g;
                cache.c[idx] = c;
                cache.o[idx] = o;
                cache.tanh_c[idx] = tc;
                cache.h[idx] = o * tc;
            }
        }
        let out = Tensor::new(vec![t_len, u], cache.h.clone())?;
        Ok((out, Cache::Lstm(Box::new(cache))))
    }

    fn backward(&mut self, grad_out: &Tensor, cache: &Cache) -> Result<Tensor> {
        let Cache::Lstm(cache) = cache else {
            return Err(NnError::MissingCache { layer: "lstm" });
        };
        let (t_len, c_in) = (cache.input.shape()[0], cache.input.shape()[1]);
        let u = self.units;
        if grad_out.shape() != [t_len, u] {
            return Err(super::mismatch(
                "lstm backward",
                grad_out.shape(),
                &[t_len, u],
            ));
        }
        let w_x = self.w_x.value.data().to_vec();
        let w_h = self.w_h.value.data().to_vec();
        let pi = self.peep_i.value.data().to_vec();
        let pf = self.peep_f.value.data().to_vec();
        let po = self.peep_o.value.data().to_vec();

        let mut gx = vec![0.0; t_len * c_in];
        let mut dh_next = vec![0.0; u];
        let mut dc_next = vec![0.0; u];
        let mut da = vec![0.0; 4 * u];
        let zeros = vec![0.0; u];

        for t in (0..t_len).rev() {
            let row = t * u..(t + 1) * u;
            let c_prev = if t == 0 {
                &zeros[..]
            } else {
                &cache.c[(t - 1) * u..t * u]
            };
            let h_prev = if t == 0 {
                &zeros[..]
            } else {
                &cache.h[(t - 1) * u..t * u]
            };
            let gout = &grad_out.data()[row.clone()];
            let mut dc_prev = vec![0.0; u];
            {
                let gpi = self.peep_i.grad.data_mut();
                for k in 0..u {
                    let idx = row.start + k;
                    let (i, f, g, o, tc) = (
                        cache.i[idx],
                        cache.f[idx],
                        cache.g[idx],
                        cache.o[idx],
                        cache.tanh_c[idx],
                    );
                    let dh = gout[k] + dh_next[k];
                    let dao = dh * tc * o * (1.0 - o);
                    let dc = dc_next[k] + dh * o * (1.0 - tc * tc) + dao * po[k];
                    let dag = dc * i * (1.0 - g * g);
                    let dai = dc * g * i * (1.0 - i);
                    let daf = dc * c_prev[k] * f * (1.0 - f);
                    da[k] = dai;
                    da[u + k] = daf;
                    da[2 * u + k] = dag;
                    da[3 * u + k] = dao;
                    gpi[k] += dai * c_prev[k];
                    dc_prev[k] = dc * f + dai * pi[k] + daf * pf[k];
                }
            }
            {
                let gpf = self.peep_f.grad.data_mut();
                for k in 0..u {
                    gpf[k] += da[u + k] * c_prev[k];
                }
                let gpo = self.peep_o.grad.data_mut();
                for k in 0..u {
                    gpo[k] += da[3 * u + k] * cache.c[row.start + k];
                }
            }
            let xt = &cache.input.data()[t * c_in..(t + 1) * c_in];
            {
                let gwx = self.w_x.grad.data_mut();
                for (r, &d) in da.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    for (gw, &xv) in gwx[r * c_in..(r + 1) * c_in].iter_mut().zip(xt) {
                        *gw += d * xv;
                    }
                }
                let gwh = self.w_h.grad.data_mut();
                for (r, &d) in da.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    for (gw, &hv) in gwh[r * u..(r + 1) * u].iter_mut().zip(h_prev) {
                        *gw += d * hv;
                    }
                }
                let gb = self.bias.grad.data_mut();
                for (b, &d) in gb.iter_mut().zip(&da) {
                    *b += d;
                }
            }
            let gxt = &mut gx[t * c_in..(t + 1) * c_in];
            let mut dh_prev = vec![0.0; u];
            for (r, &d) in da.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (g, &w) in gxt.iter_mut().zip(&w_x[r * c_in..(r + 1) * c_in]) {
                    *g += d * w;
                }
                for (g, &w) in dh_prev.iter_mut().zip(&w_h[r * u..(r + 1) * u]) {
                    *g += d * w;
                }
            }
            dh_next = dh_prev;
            dc_next = dc_prev;
        }
        Ok(Tensor::new(vec![t_len, c_in], gx)?)
    }

    fn params(&self) -> Vec<&Param> {
        vec![
            &self.w_x,
            &self.w_h,
            &self.bias,
            &self.peep_i,
            &self.peep_f,
            &self.peep_o,
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![
            &mut self.w_x,
            &mut self.w_h,
            &mut self.bias,
            &mut self.peep_i,
            &mut self.peep_f,
            &mut self.peep_o,
        ]
    }

    fn name(&self) -> &str {
        &self.name
    }
}
