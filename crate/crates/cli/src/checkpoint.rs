//! Binary checkpoint format. All integers are little-endian.
//!
//! ```text
//! "TCMN"  u32 version  u32 tensor_count
//! tensor*: u32 name_len, name (UTF-8), u32 rank, u64 dims[rank], f32 values[prod(dims)]
//! optimizer: u64 step, u32 moment_count, tensor* (named m/<param> and v/<param>)
//! rng: [u8; 32] seed, u64 stream, u128 word_pos, u64 epochs_done
//! str fingerprint, str spec_json, str config   (str = u32 len + UTF-8)
//! norm: u8 present, then u32 n, f64 mean[n], f64 std[n]
//! ```
//!
//! Nothing may follow the norm section.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use tcmn_core::data::NormStats;
use tcmn_core::nn::{build_tcmn, Module, Network, NetworkSpec};
use tcmn_core::optim::{Adam, TrainState};
use tcmn_core::tensor::Tensor;
use tcmn_core::Real;

pub const MAGIC: &[u8; 4] = b"TCMN";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint decode error at byte {offset}: {reason}")]
    Decode { offset: usize, reason: String },
    #[error("checkpoint does not match the network: {0}")]
    Mismatch(String),
    #[error("checkpoint i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, CheckpointError>;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f32>,
}

impl NamedTensor {
    fn from_tensor(name: &str, t: &Tensor) -> Self {
        Self {
            name: name.to_string(),
            dims: t.shape().to_vec(),
            values: t.data().iter().map(|&v| v as f32).collect(),
        }
    }

    fn to_tensor(&self) -> Tensor {
        Tensor::new(
            self.dims.clone(),
            self.values.iter().map(|&v| v as Real).collect(),
        )
        .expect("decoded dims match value count")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub tensors: Vec<NamedTensor>,
    pub step: u64,
    pub moments: Vec<NamedTensor>,
    pub rng: RngState,
    pub epochs_done: u64,
    pub fingerprint: String,
    pub spec_json: String,
    /// `key=value` lines.
    pub config: String,
    pub norm: Option<NormStats>,
}

impl Checkpoint {
    /// Snapshot of a network and its training state. Values are stored as f32.
    pub fn capture(
        net: &Network,
        state: &TrainState,
        config: &str,
        norm: Option<&NormStats>,
    ) -> Self {
        let params = net.params();
        let tensors = params
            .iter()
            .map(|p| NamedTensor::from_tensor(&p.name, &p.value))
            .collect();
        let mut moments = Vec::new();
        if state.adam.m.len() == params.len() {
            for (p, m) in params.iter().zip(&state.adam.m) {
                moments.push(NamedTensor::from_tensor(&format!("m/{}", p.name), m));
            }
            for (p, v) in params.iter().zip(&state.adam.v) {
                moments.push(NamedTensor::from_tensor(&format!("v/{}", p.name), v));
            }
        }
        Self {
            version: VERSION,
            tensors,
            step: state.adam.step,
            moments,
            rng: RngState::capture(&state.rng),
            epochs_done: state.epochs_done as u64,
            fingerprint: net.spec().fingerprint(),
            spec_json: net.spec().canonical(),
            config: config.to_string(),
            norm: norm.cloned(),
        }
    }

    pub fn spec(&self) -> Result<NetworkSpec> {
        let spec = NetworkSpec::from_canonical(&self.spec_json).map_err(|e| {
            CheckpointError::Mismatch(format!("stored network spec is invalid: {e}"))
        })?;
        if spec.fingerprint() != self.fingerprint {
            return Err(CheckpointError::Mismatch(
                "stored fingerprint does not match the stored network spec".into(),
            ));
        }
        Ok(spec)
    }

    /// Copies the stored tensors into `net`, which must have the same spec.
    pub fn load_into(&self, net: &mut Network) -> Result<()> {
        let expected = net.spec().fingerprint();
        if expected != self.fingerprint {
            return Err(CheckpointError::Mismatch(format!(
                "network spec fingerprint {expected} differs from checkpoint fingerprint {}",
                self.fingerprint
            )));
        }
        let mut params = net.params_mut();
        if params.len() != self.tensors.len() {
            return Err(CheckpointError::Mismatch(format!(
                "network has {} parameter tensors, checkpoint has {}",
                params.len(),
                self.tensors.len()
            )));
        }
        for (p, t) in params.iter().zip(&self.tensors) {
            if p.name != t.name || p.value.shape() != t.dims.as_slice() {
                return Err(CheckpointError::Mismatch(format!(
                    "parameter {} {:?} vs stored {} {:?}",
                    p.name,
                    p.value.shape(),
                    t.name,
                    t.dims
                )));
            }
        }
        for (p, t) in params.iter_mut().zip(&self.tensors) {
            p.value = t.to_tensor();
            p.zero_grad();
        }
        Ok(())
    }

    /// Rebuilds the network described by the stored spec with the stored weights.
    pub fn network(&self) -> Result<Network> {
        let spec = self.spec()?;
        let mut net = build_tcmn(&spec, 0).map_err(|e| CheckpointError::Mismatch(e.to_string()))?;
        self.load_into(&mut net)?;
        Ok(net)
    }

    pub fn train_state(&self) -> Result<TrainState> {
        let n = self.tensors.len();
        let mut adam = Adam {
            step: self.step,
            m: Vec::new(),
            v: Vec::new(),
        };
        if !self.moments.is_empty() {
            if self.moments.len() != 2 * n {
                return Err(CheckpointError::Mismatch(format!(
                    "{} moment tensors for {n} parameters",
                    self.moments.len()
                )));
            }
            for (i, t) in self.tensors.iter().enumerate() {
                let (m, v) = (&self.moments[i], &self.moments[n + i]);
                if m.name != format!("m/{}", t.name)
                    || v.name != format!("v/{}", t.name)
                    || m.dims != t.dims
                    || v.dims != t.dims
                {
                    return Err(CheckpointError::Mismatch(format!(
                        "moments for {} are malformed",
                        t.name
                    )));
                }
                adam.m.push(m.to_tensor());
                adam.v.push(v.to_tensor());
            }
        }
        Ok(TrainState {
            adam,
            rng: self.rng.restore(),
            epochs_done: self.epochs_done as usize,
        })
    }

    /// Value of `key` in the config snapshot.
    pub fn config_value(&self, key: &str) -> Option<&str> {
        self.config
            .lines()
            .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            put_tensor(&mut out, t);
        }
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.moments.len() as u32).to_le_bytes());
        for t in &self.moments {
            put_tensor(&mut out, t);
        }
        out.extend_from_slice(&self.rng.seed);
        out.extend_from_slice(&self.rng.stream.to_le_bytes());
        out.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        out.extend_from_slice(&self.epochs_done.to_le_bytes());
        put_str(&mut out, &self.fingerprint);
        put_str(&mut out, &self.spec_json);
        put_str(&mut out, &self.config);
        match &self.norm {
            None => out.push(0),
            Some(n) => {
                out.push(1);
                out.extend_from_slice(&(n.mean.len() as u32).to_le_bytes());
                for v in n.mean.iter().chain(&n.std) {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(r.error_at(0, format!("bad magic {magic:?}, expected \"TCMN\"")));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(r.error_at(
                4,
                format!(
                    "unsupported checkpoint version {version} (this build reads version {VERSION})"
                ),
            ));
        }
        let count = r.u32("tensor count")?;
        let tensors = r.tensors(count, "tensor")?;
        let step = r.u64("optimizer step")?;
        let count = r.u32("moment count")?;
        let moments = r.tensors(count, "moment")?;
        let seed: [u8; 32] = r.take(32, "rng seed")?.try_into().expect("32 bytes");
        let stream = r.u64("rng stream")?;
        let word_pos =
            u128::from_le_bytes(r.take(16, "rng position")?.try_into().expect("16 bytes"));
        let epochs_done = r.u64("epoch counter")?;
        let fingerprint = r.string("fingerprint")?;
        let spec_json = r.string("network spec")?;
        let config = r.string("config snapshot")?;
        let norm = match r.take(1, "norm flag")?[0] {
            0 => None,
            1 => {
                let n = r.u32("norm width")? as usize;
                let mut vals = Vec::with_capacity(n.min(bytes.len() / 8) * 2);
                for _ in 0..2 * n {
                    vals.push(f64::from_le_bytes(
                        r.take(8, "norm value")?.try_into().expect("8 bytes"),
                    ));
                }
                let std = vals.split_off(n);
                Some(NormStats { mean: vals, std })
            }
            other => {
                return Err(r.error_at(r.pos - 1, format!("norm flag {other} is neither 0 nor 1")))
            }
        };
        if r.pos != bytes.len() {
            return Err(r.error_at(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let mut names: Vec<&str> = tensors.iter().map(|t| t.name.as_str()).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(r.error_at(12, format!("duplicate tensor name {}", w[0])));
        }
        Ok(Self {
            version,
            tensors,
            step,
            moments,
            rng: RngState {
                seed,
                stream,
                word_pos,
            },
            epochs_done,
            fingerprint,
            spec_json,
            config,
            norm,
        })
    }

    /// Atomic write (temporary file, then rename).
    pub fn save(&self, path: &Path) -> Result<()> {
        tcmn_core::eval::write_atomic(path, &self.encode()).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::decode(&bytes)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_tensor(out: &mut Vec<u8>, t: &NamedTensor) {
    put_str(out, &t.name);
    out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
    for &d in &t.dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in &t.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn error_at(&self, offset: usize, reason: String) -> CheckpointError {
        CheckpointError::Decode { offset, reason }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let remaining = self.bytes.len() - self.pos;
        if n > remaining {
            return Err(self.error_at(
                self.pos,
                format!("truncated {what}: need {n} bytes, {remaining} left"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let start = self.pos;
        let len = self.u32(what)? as usize;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| self.error_at(start + 4, format!("{what} is not valid UTF-8")))
    }

    fn tensors(&mut self, count: u32, what: &str) -> Result<Vec<NamedTensor>> {
        let mut out = Vec::new();
        for _ in 0..count {
            let name = self.string(&format!("{what} name"))?;
            let rank_at = self.pos;
            let rank = self.u32(&format!("rank of {name}"))? as usize;
            if rank == 0 || rank > 8 {
                return Err(self.error_at(
                    rank_at,
                    format!("tensor {name} has unsupported rank {rank}"),
                ));
            }
            let mut dims = Vec::with_capacity(rank);
            let mut len: usize = 1;
            for _ in 0..rank {
                let at = self.pos;
                let d = self.u64(&format!("dims of {name}"))?;
                let d = usize::try_from(d).ok().filter(|&d| d > 0).ok_or_else(|| {
                    self.error_at(at, format!("tensor {name} has invalid dimension {d}"))
                })?;
                len = len
                    .checked_mul(d)
                    .filter(|&l| l <= (self.bytes.len() - self.pos) / 4 + 1)
                    .ok_or_else(|| {
                        self.error_at(at, format!("tensor {name} is larger than the file"))
                    })?;
                dims.push(d);
            }
            let raw = self.take(len * 4, &format!("values of {name}"))?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            out.push(NamedTensor { name, dims, values });
        }
        Ok(out)
    }
}
