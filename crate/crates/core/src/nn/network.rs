//! Network description, shape validation and the assembled model.

use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::SeqReduction;
use super::{
    Activation, Cache, Conv1d, Dense, Dropout, Lstm, MaxPool1d, Mode, Module, NnError, Param,
    Reshape, Result, Rng, SequenceReduce,
};
use crate::data::WindowBatch;
use crate::tensor::Tensor;
use crate::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv1d {
        filters: usize,
        kernel_size: usize,
        stride: usize,
        activation: Activation,
    },
    MaxPool1d {
        pool_size: usize,
        stride: usize,
    },
    Flatten,
    Dense {
        units: usize,
        activation: Activation,
    },
    Dropout {
        p: Real,
    },
    Reshape {
        dims: Vec<usize>,
    },
    Lstm {
        units: usize,
    },
    SequenceReduce {
        mode: SeqReduction,
    },
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv1d { .. } => "conv",
            LayerSpec::MaxPool1d { .. } => "pool",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Reshape { .. } => "reshape",
            LayerSpec::Lstm { .. } => "lstm",
            LayerSpec::SequenceReduce { .. } => "reduce",
        }
    }

    /// Output shape for a given input shape, or why the input is unacceptable.
    fn output_shape(&self, input: &[usize]) -> std::result::Result<Vec<usize>, String> {
        let seq = |what: &str| match input {
            [t, c] => Ok((*t, *c)),
            _ => Err(format!(
                "{what} needs a [time, channels] input, got {input:?}"
            )),
        };
        let count: usize = input.iter().product();
        match self {
            LayerSpec::Conv1d {
                filters,
                kernel_size,
                stride,
                ..
            } => {
                if *filters == 0 || *kernel_size == 0 || *stride == 0 {
                    return Err("conv filters, kernel_size and stride must be >= 1".into());
                }
                let (t, _) = seq("conv1d")?;
                Ok(vec![t.div_ceil(*stride), *filters])
            }
            LayerSpec::MaxPool1d { pool_size, stride } => {
                if *pool_size == 0 || *stride == 0 {
                    return Err("pool_size and stride must be >= 1".into());
                }
                let (t, c) = seq("maxpool1d")?;
                Ok(vec![t.div_ceil(*stride), c])
            }
            LayerSpec::Flatten => Ok(vec![count]),
            LayerSpec::Dense { units, .. } => {
                if input.len() != 1 {
                    return Err(format!("dense needs a flat vector, got {input:?}"));
                }
                if *units == 0 {
                    return Err("dense units must be >= 1".into());
                }
                Ok(vec![*units])
            }
            LayerSpec::Dropout { p } => {
                if !(0.0..1.0).contains(p) {
                    return Err(format!("dropout probability {p} outside [0, 1)"));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Reshape { dims } => {
                if dims.is_empty() || dims.contains(&0) || dims.iter().product::<usize>() != count {
                    return Err(format!("cannot reshape {input:?} to {dims:?}"));
                }
                Ok(dims.clone())
            }
            LayerSpec::Lstm { units } => {
                if *units == 0 {
                    return Err("lstm units must be >= 1".into());
                }
                let (t, _) = seq("lstm")?;
                Ok(vec![t, *units])
            }
            LayerSpec::SequenceReduce { .. } => {
                let (_, u) = seq("sequence reduction")?;
                Ok(vec![u])
            }
        }
    }
}

/// Ordered layer descriptors plus the input window geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub seq_len: usize,
    pub channels: usize,
    pub layers: Vec<LayerSpec>,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self::scaled(100, 24)
    }
}

impl NetworkSpec {
    /// The reference architecture for `seq_len × channels` windows.
    ///
    /// Convolution widths are 0.75, 1.5 and 3 times the channel count, the
    /// bridge layer holds `seq_len * channels` units and is reshaped back to a
    /// `[seq_len, channels]` sequence, both LSTMs use `3 * channels` units and
    /// the regression head narrows to `50 * channels / 24` before the scalar
    /// output. With 100 × 24 windows this gives filters 18/36/72, a 2400-unit
    /// bridge, 72 LSTM units and a 50-unit head.
    pub fn scaled(seq_len: usize, channels: usize) -> Self {
        let c = channels as Real;
        let conv = |filters: Real| LayerSpec::Conv1d {
            filters: (filters.round() as usize).max(1),
            kernel_size: 2,
            stride: 1,
            activation: Activation::Relu,
        };
        let pool = LayerSpec::MaxPool1d {
            pool_size: 2,
            stride: 2,
        };
        let drop = LayerSpec::Dropout { p: 0.2 };
        let head = ((50.0 * c / 24.0).round() as usize).max(1);
        Self {
            seq_len,
            channels,
            layers: vec![
                conv(0.75 * c),
                pool.clone(),
                conv(1.5 * c),
                pool.clone(),
                conv(3.0 * c),
                pool,
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    units: seq_len * channels,
                    activation: Activation::Relu,
                },
                drop.clone(),
                LayerSpec::Reshape {
                    dims: vec![seq_len, channels],
                },
                LayerSpec::Lstm {
                    units: 3 * channels,
                },
                drop.clone(),
                LayerSpec::Lstm {
                    units: 3 * channels,
                },
                drop.clone(),
                LayerSpec::SequenceReduce {
                    mode: SeqReduction::Last,
                },
                LayerSpec::Dense {
                    units: head,
                    activation: Activation::Relu,
                },
                drop,
                LayerSpec::Dense {
                    units: 1,
                    activation: Activation::Identity,
                },
            ],
        }
    }

    pub fn with_dropout(mut self, p: Real) -> Self {
        for l in &mut self.layers {
            if let LayerSpec::Dropout { p: q } = l {
                *q = p;
            }
        }
        self
    }

    pub fn with_reduction(mut self, mode: SeqReduction) -> Self {
        for l in &mut self.layers {
            if let LayerSpec::SequenceReduce { mode: m } = l {
                *m = mode;
            }
        }
        self
    }

    /// Layer names in order, numbered per kind (`conv1`, `pool1`, `conv2`, ...).
    pub fn layer_names(&self) -> Vec<String> {
        let mut counts = std::collections::HashMap::new();
        self.layers
            .iter()
            .map(|l| {
                let n = counts.entry(l.kind()).or_insert(0usize);
                *n += 1;
                format!("{}{}", l.kind(), n)
            })
            .collect()
    }

    /// Output shape of every layer, validated against its successor.
    pub fn shape_trace(&self) -> Result<Vec<Vec<usize>>> {
        let names = self.layer_names();
        let mut shape = vec![self.seq_len, self.channels];
        if shape.contains(&0) {
            return Err(NnError::Build {
                prev: "input".into(),
                next: names.first().cloned().unwrap_or_default(),
                reason: format!("input window {shape:?} has a zero dimension"),
            });
        }
        let mut trace = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            shape = layer
                .output_shape(&shape)
                .map_err(|reason| NnError::Build {
                    prev: if i == 0 {
                        "input".into()
                    } else {
                        names[i - 1].clone()
                    },
                    next: names[i].clone(),
                    reason,
                })?;
            trace.push(shape.clone());
        }
        match trace.last() {
            Some(s) if s == &[1] => Ok(trace),
            other => Err(NnError::Build {
                prev: names.last().cloned().unwrap_or_else(|| "input".into()),
                next: "output".into(),
                reason: format!("network must end in a single unit, ends in {other:?}"),
            }),
        }
    }

    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("spec serializes")
    }

    pub fn from_canonical(s: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv1d(Conv1d),
    MaxPool1d(MaxPool1d),
    Dense(Dense),
    Dropout(Dropout),
    Lstm(Lstm),
    Reshape(Reshape),
    SequenceReduce(SequenceReduce),
}

macro_rules! dispatch {
    ($self:expr, $l:ident => $e:expr) => {
        match $self {
            Layer::Conv1d($l) => $e,
            Layer::MaxPool1d($l) => $e,
            Layer::Dense($l) => $e,
            Layer::Dropout($l) => $e,
            Layer::Lstm($l) => $e,
            Layer::Reshape($l) => $e,
            Layer::SequenceReduce($l) => $e,
        }
    };
}

impl Module for Layer {
    fn forward(&self, x: &Tensor, mode: Mode, rng: &mut Rng) -> Result<(Tensor, Cache)> {
        dispatch!(self, l => l.forward(x, mode, rng))
    }

    fn backward(&mut self, grad_out: &Tensor, cache: &Cache) -> Result<Tensor> {
        dispatch!(self, l => l.backward(grad_out, cache))
    }

    fn params(&self) -> Vec<&Param> {
        dispatch!(self, l => l.params())
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        dispatch!(self, l => l.params_mut())
    }

    fn name(&self) -> &str {
        dispatch!(self, l => l.name())
    }
}

/// The assembled model: layers built from a validated [`NetworkSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    layers: Vec<Layer>,
    has_gradients: bool,
}

/// Builds the network described by `spec`, initialising weights from `seed`.
pub fn build_tcmn(spec: &NetworkSpec, seed: u64) -> Result<Network> {
    Network::new(spec.clone(), &mut Rng::seed_from_u64(seed))
}

impl Network {
    pub fn new(spec: NetworkSpec, rng: &mut Rng) -> Result<Self> {
        let trace = spec.shape_trace()?;
        let names = spec.layer_names();
        let mut input = vec![spec.seq_len, spec.channels];
        let mut layers = Vec::with_capacity(spec.layers.len());
        for ((ls, name), out) in spec.layers.iter().zip(&names).zip(&trace) {
            let layer = match ls {
                LayerSpec::Conv1d {
                    filters,
                    kernel_size,
                    stride,
                    activation,
                } => Layer::Conv1d(Conv1d::new(
                    name,
                    input[1],
                    *filters,
                    *kernel_size,
                    *stride,
                    *activation,
                    rng,
                )?),
                LayerSpec::MaxPool1d { pool_size, stride } => {
                    Layer::MaxPool1d(MaxPool1d::new(name, *pool_size, *stride)?)
                }
                LayerSpec::Flatten => Layer::Reshape(Reshape::new(name, out.clone())),
                LayerSpec::Dense { units, activation } => {
                    Layer::Dense(Dense::new(name, input[0], *units, *activation, rng)?)
                }
                LayerSpec::Dropout { p } => Layer::Dropout(Dropout::new(name, *p)?),
                LayerSpec::Reshape { dims } => Layer::Reshape(Reshape::new(name, dims.clone())),
                LayerSpec::Lstm { units } => Layer::Lstm(Lstm::new(name, input[1], *units, rng)?),
                LayerSpec::SequenceReduce { mode } => {
                    Layer::SequenceReduce(SequenceReduce::new(name, *mode))
                }
            };
            layers.push(layer);
            input = out.clone();
        }
        Ok(Self {
            spec,
            layers,
            has_gradients: false,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params().into_iter().find(|p| p.name == name)
    }

    /// True once a backward pass has populated the gradient buffers and no
    /// optimizer step has consumed them yet.
    pub fn has_gradients(&self) -> bool {
        self.has_gradients
    }

    pub(crate) fn clear_gradient_flag(&mut self) {
        self.has_gradients = false;
    }

    /// Forward pass over every window of a batch. Returns `[B, 1]` estimates
    /// and one cache per window.
    pub fn forward_batch(
        &self,
        batch: &WindowBatch,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<(Tensor, Vec<Cache>)> {
        if batch.seq_len != self.spec.seq_len || batch.channels != self.spec.channels {
            return Err(super::mismatch(
                "network input",
                &[batch.seq_len, batch.channels],
                &[self.spec.seq_len, self.spec.channels],
            ));
        }
        let mut out = Vec::with_capacity(batch.len());
        let mut caches = Vec::with_capacity(batch.len());
        for i in 0..batch.len() {
            let (y, cache) = self.forward(&batch.window(i), mode, rng)?;
            out.push(y.data()[0]);
            caches.push(cache);
        }
        let n = out.len().max(1);
        let out = if out.is_empty() {
            Tensor::zeros(&[1, 1])
        } else {
            Tensor::new(vec![n, 1], out)?
        };
        Ok((out, caches))
    }

    /// Backward pass for a batch; `grad_out` is `[B, 1]`.
    pub fn backward_batch(&mut self, grad_out: &Tensor, caches: &[Cache]) -> Result<()> {
        if grad_out.len() != caches.len() {
            return Err(super::mismatch(
                "network backward",
                grad_out.shape(),
                &[caches.len(), 1],
            ));
        }
        for (g, cache) in grad_out.data().iter().zip(caches) {
            self.backward(&Tensor::from_vec(vec![*g]), cache)?;
        }
        Ok(())
    }

    /// Eval-mode estimates for every window in the batch.
    pub fn predict(&self, batch: &WindowBatch) -> Result<Vec<Real>> {
        let mut rng = Rng::seed_from_u64(0);
        let (y, _) = self.forward_batch(batch, Mode::Eval, &mut rng)?;
        Ok(if batch.is_empty() {
            Vec::new()
        } else {
            y.into_data()
        })
    }
}

impl Module for Network {
    fn forward(&self, x: &Tensor, mode: Mode, rng: &mut Rng) -> Result<(Tensor, Cache)> {
        if x.shape() != [self.spec.seq_len, self.spec.channels] {
            return Err(super::mismatch(
                "network input",
                x.shape(),
                &[self.spec.seq_len, self.spec.channels],
            ));
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            let (y, cache) = layer.forward(&h, mode, rng)?;
            caches.push(cache);
            h = y;
        }
        Ok((h, Cache::Network(caches)))
    }

    fn backward(&mut self, grad_out: &Tensor, cache: &Cache) -> Result<Tensor> {
        let Cache::Network(caches) = cache else {
            return Err(NnError::MissingCache { layer: "network" });
        };
        if caches.len() != self.layers.len() {
            return Err(NnError::MissingCache { layer: "network" });
        }
        let mut g = grad_out.clone();
        for (layer, cache) in self.layers.iter_mut().zip(caches).rev() {
            g = layer.backward(&g, cache)?;
        }
        self.has_gradients = true;
        Ok(g)
    }

    fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params_mut())
            .collect()
    }

    fn name(&self) -> &str {
        "network"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_shape_trace() {
        let spec = NetworkSpec::default();
        let trace: Vec<Vec<usize>> = spec
            .shape_trace()
            .unwrap()
            .into_iter()
            .zip(&spec.layers)
            .filter(|(_, l)| !matches!(l, LayerSpec::Dropout { .. }))
            .map(|(s, _)| s)
            .collect();
        let expected: Vec<Vec<usize>> = vec![
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
        assert_eq!(trace, expected);
    }

    #[test]
    fn inconsistent_spec_names_layer_pair() {
        let mut spec = NetworkSpec::scaled(12, 4);
        // Drop the flatten so the bridge dense layer sees a sequence.
        spec.layers.remove(6);
        let err = spec.shape_trace().unwrap_err().to_string();
        assert!(err.contains("pool3") && err.contains("dense1"), "{err}");
    }

    #[test]
    fn bad_reshape_rejected() {
        let mut spec = NetworkSpec::scaled(12, 4);
        spec.layers[9] = LayerSpec::Reshape { dims: vec![5, 5] };
        assert!(matches!(spec.shape_trace(), Err(NnError::Build { .. })));
    }

    #[test]
    fn canonical_round_trip_and_fingerprint() {
        let spec = NetworkSpec::scaled(12, 4);
        let back = NetworkSpec::from_canonical(&spec.canonical()).unwrap();
        assert_eq!(back, spec);
        assert_eq!(back.fingerprint(), spec.fingerprint());
        assert_ne!(NetworkSpec::default().fingerprint(), spec.fingerprint());
    }

    #[test]
    fn parameter_names_unique() {
        let net = build_tcmn(&NetworkSpec::scaled(12, 4), 1).unwrap();
        let mut names: Vec<_> = net.params().iter().map(|p| p.name.clone()).collect();
        let n = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), n);
        assert!(net.param("lstm1.peep_o").is_some());
    }
}
