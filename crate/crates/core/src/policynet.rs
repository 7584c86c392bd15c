//! Policy-value network: a ReLU trunk with a softmax policy head and a tanh
//! value head, trained with mini-batch Adam on a squared-error loss.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Checkpoint magic bytes.
pub const MAGIC: &[u8; 8] = b"EXPDNET\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub policy_dim: usize,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            input_dim: 1,
            hidden: vec![50, 50],
            policy_dim: 2,
            seed: 0,
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("network: {m}")));
        if self.input_dim == 0 || self.policy_dim == 0 {
            return bad("input and policy widths must be positive");
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam constants out of range");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive");
        }
        Ok(())
    }
}

/// Dense layer `z = W x + b`, `W` stored as `out x in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { w: DMatrix::zeros(outputs, inputs), b: DVector::zeros(outputs) }
    }

    fn glorot(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / (inputs + outputs) as f64).sqrt();
        Self { w: DMatrix::from_fn(outputs, inputs, |_, _| rng.gen_range(-bound..=bound)), b: DVector::zeros(outputs) }
    }

    fn len(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainExample {
    pub features: Vec<f64>,
    /// Target policy over all actions; sums to 1.
    pub policy: Vec<f64>,
    /// Target value in `[-1, 1]`.
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyValueNet {
    pub config: NetConfig,
    /// Trunk layers followed by the policy head and the value head.
    pub layers: Vec<Layer>,
}

struct Trace {
    /// Inputs of every layer (the trunk activations).
    acts: Vec<DVector<f64>>,
    pre: Vec<DVector<f64>>,
    policy: DVector<f64>,
    value: f64,
}

pub fn softmax(z: &DVector<f64>) -> DVector<f64> {
    let m = z.max();
    let e = z.map(|v| (v - m).exp());
    let s = e.sum();
    e / s
}

impl PolicyValueNet {
    fn shapes(cfg: &NetConfig) -> Vec<(usize, usize)> {
        let mut dims = vec![cfg.input_dim];
        dims.extend(&cfg.hidden);
        let last = *dims.last().unwrap();
        let mut out: Vec<(usize, usize)> = dims.windows(2).map(|w| (w[0], w[1])).collect();
        out.push((last, cfg.policy_dim));
        out.push((last, 1));
        out
    }

    /// Glorot-uniform weights, zero biases.
    pub fn new(cfg: NetConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let layers = Self::shapes(&cfg).into_iter().map(|(i, o)| Layer::glorot(i, o, &mut rng)).collect();
        Ok(Self { config: cfg, layers })
    }

    /// All-zero parameters: uniform policy and zero value everywhere.
    pub fn zeros(cfg: NetConfig) -> Result<Self> {
        cfg.validate()?;
        let layers = Self::shapes(&cfg).into_iter().map(|(i, o)| Layer::zeros(i, o)).collect();
        Ok(Self { config: cfg, layers })
    }

    fn trunk(&self) -> &[Layer] {
        &self.layers[..self.layers.len() - 2]
    }

    fn policy_head(&self) -> &Layer {
        &self.layers[self.layers.len() - 2]
    }

    fn value_head(&self) -> &Layer {
        &self.layers[self.layers.len() - 1]
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Layer::len).sum()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.config.input_dim {
            return Err(Error::Dimension(format!("network expects {} features, got {}", self.config.input_dim, x.len())));
        }
        Ok(())
    }

    fn run(&self, x: &[f64]) -> Trace {
        let mut acts = vec![DVector::from_column_slice(x)];
        let mut pre = Vec::new();
        for l in self.trunk() {
            let z = &l.w * acts.last().unwrap() + &l.b;
            acts.push(z.map(|v| v.max(0.0)));
            pre.push(z);
        }
        let h = acts.last().unwrap();
        let p = self.policy_head();
        let policy = softmax(&(&p.w * h + &p.b));
        let v = self.value_head();
        let value = ((&v.w * h)[0] + v.b[0]).tanh();
        Trace { acts, pre, policy, value }
    }

    /// Policy over all actions and the value estimate.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check_input(x)?;
        let t = self.run(x);
        Ok((t.policy.as_slice().to_vec(), t.value))
    }

    fn check_example(&self, e: &TrainExample) -> Result<()> {
        self.check_input(&e.features)?;
        if e.features.iter().chain(&e.policy).any(|v| !v.is_finite()) || !e.value.is_finite() {
            return Err(Error::Training("non-finite training example".into()));
        }
        if e.policy.len() != self.config.policy_dim {
            return Err(Error::Dimension(format!(
                "policy target has {} entries, network has {}",
                e.policy.len(),
                self.config.policy_dim
            )));
        }
        Ok(())
    }

    /// Mean over `batch` of `|p - p_hat|^2 + (v - v_hat)^2`.
    pub fn loss(&self, batch: &[TrainExample]) -> Result<f64> {
        let mut total = 0.0;
        for e in batch {
            self.check_example(e)?;
            let t = self.run(&e.features);
            let dp: f64 = t.policy.iter().zip(&e.policy).map(|(a, b)| (a - b).powi(2)).sum();
            total += dp + (t.value - e.value).powi(2);
        }
        Ok(total / batch.len().max(1) as f64)
    }

    /// Loss and its gradient with respect to every layer.
    pub fn loss_and_gradient(&self, batch: &[TrainExample]) -> Result<(f64, Vec<Layer>)> {
        if batch.is_empty() {
            return Err(Error::Config("empty training batch".into()));
        }
        let mut grads: Vec<Layer> = self.layers.iter().map(|l| Layer::zeros(l.w.ncols(), l.w.nrows())).collect();
        let n_trunk = self.trunk().len();
        let mut total = 0.0;
        for e in batch {
            self.check_example(e)?;
            let t = self.run(&e.features);
            let target = DVector::from_column_slice(&e.policy);
            let diff = &t.policy - &target;
            total += diff.norm_squared() + (t.value - e.value).powi(2);

            let g = &diff * 2.0;
            let dlogits = t.policy.component_mul(&g.add_scalar(-t.policy.dot(&g)));
            let dzv = 2.0 * (t.value - e.value) * (1.0 - t.value * t.value);
            let h = t.acts.last().unwrap();

            grads[n_trunk].w += &dlogits * h.transpose();
            grads[n_trunk].b += &dlogits;
            grads[n_trunk + 1].w += h.transpose() * dzv;
            grads[n_trunk + 1].b[0] += dzv;

            let mut dh = self.policy_head().w.tr_mul(&dlogits) + self.value_head().w.transpose() * dzv;
            for l in (0..n_trunk).rev() {
                let dz = dh.zip_map(&t.pre[l], |d, z| if z > 0.0 { d } else { 0.0 });
                grads[l].w += &dz * t.acts[l].transpose();
                grads[l].b += &dz;
                dh = self.layers[l].w.tr_mul(&dz);
            }
        }
        let scale = 1.0 / batch.len() as f64;
        for g in grads.iter_mut() {
            g.w *= scale;
            g.b *= scale;
        }
        Ok((total * scale, grads))
    }

    /// Parameters flattened layer by layer (weights row-major, then bias).
    pub fn flat_params(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::Dimension(format!("{} values for {} parameters", flat.len(), self.n_params())));
        }
        let mut it = flat.iter().copied();
        for l in self.layers.iter_mut() {
            for r in 0..l.w.nrows() {
                for c in 0..l.w.ncols() {
                    l.w[(r, c)] = it.next().unwrap();
                }
            }
            for v in l.b.iter_mut() {
                *v = it.next().unwrap();
            }
        }
        Ok(())
    }

    /// Mini-batch Adam on `examples`, continuing from the current weights.
    /// Returns the mean loss of every epoch.
    pub fn train(&mut self, examples: &[TrainExample], seed: u64) -> Result<Vec<f64>> {
        if examples.is_empty() {
            return Err(Error::Config("no training examples".into()));
        }
        for e in examples {
            self.check_example(e)?;
        }
        let cfg = self.config.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..examples.len()).collect();
        let n = self.n_params();
        let mut m = vec![0.0; n];
        let mut v = vec![0.0; n];
        let mut step = 0i32;
        let mut history = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for chunk in order.chunks(cfg.batch_size) {
                let batch: Vec<TrainExample> = chunk.iter().map(|&i| examples[i].clone()).collect();
                let (loss, grads) = self.loss_and_gradient(&batch)?;
                if !loss.is_finite() {
                    return Err(Error::Training(format!("loss became {loss} at epoch {epoch} (step {step})")));
                }
                epoch_loss += loss * batch.len() as f64;
                step += 1;
                let g = flatten(&grads);
                let mut p = self.flat_params();
                let c1 = 1.0 - cfg.beta1.powi(step);
                let c2 = 1.0 - cfg.beta2.powi(step);
                for i in 0..n {
                    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                    p[i] -= cfg.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.adam_eps);
                }
                self.set_flat_params(&p)?;
            }
            history.push(epoch_loss / examples.len() as f64);
        }
        Ok(history)
    }

    /// Checkpoint layout (all integers and floats little-endian):
    /// magic (8 bytes), format version (u32), config length (u32), config as
    /// JSON, parameter count (u64), then the flat parameters as f64 in the
    /// order of [`Self::flat_params`].
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let cfg = serde_json::to_vec(&self.config).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut out = Vec::with_capacity(24 + cfg.len() + 8 * self.n_params());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        out.extend_from_slice(&cfg);
        out.extend_from_slice(&(self.n_params() as u64).to_le_bytes());
        for p in self.flat_params() {
            out.extend_from_slice(&p.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let end = pos.checked_add(n).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated checkpoint"))?;
            let out = &bytes[pos..end];
            pos = end;
            Ok(out)
        };
        if take(8)? != MAGIC {
            return Err(bad("not a network checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("checkpoint version {version}, expected {FORMAT_VERSION}")));
        }
        let cfg_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let config: NetConfig =
            serde_json::from_slice(take(cfg_len)?).map_err(|e| Error::Checkpoint(format!("bad config: {e}")))?;
        let mut net = Self::zeros(config)?;
        let count = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        if count != net.n_params() {
            return Err(Error::Checkpoint(format!("{count} parameters stored, config implies {}", net.n_params())));
        }
        let flat: Vec<f64> = take(8 * count)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(bad("non-finite parameter in checkpoint"));
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes after parameters"));
        }
        net.set_flat_params(&flat)?;
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    /// Errors unless the network fits a game with these widths.
    pub fn check_shape(&self, input_dim: usize, policy_dim: usize) -> Result<()> {
        if self.config.input_dim != input_dim || self.config.policy_dim != policy_dim {
            return Err(Error::Checkpoint(format!(
                "network is {}->{}, game needs {}->{}",
                self.config.input_dim, self.config.policy_dim, input_dim, policy_dim
            )));
        }
        Ok(())
    }
}

fn flatten(layers: &[Layer]) -> Vec<f64> {
    let mut out = Vec::with_capacity(layers.iter().map(Layer::len).sum());
    for l in layers {
        for r in 0..l.w.nrows() {
            out.extend(l.w.row(r).iter());
        }
        out.extend(l.b.iter());
    }
    out
}
