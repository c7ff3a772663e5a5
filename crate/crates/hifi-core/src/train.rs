//! Desk-scale training: adaptive-moment optimization of the composite loss
//! over paired images, with seeded shuffling/crops, checkpointing, and
//! bit-reproducible resumption.
//!
//! Reproducibility model: every random choice is derived from the config
//! seed and an absolute index (epoch for shuffles, step for crops), and the
//! checkpoint stores parameters plus optimizer moments at full width, so a
//! resumed run replays the exact step sequence of an uninterrupted one.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{GradTape, Var};
use crate::data::ImagePair;
use crate::error::{Error, Result};
use crate::loss::{total_loss_var, FeatureExtractor, LossWeights};
use crate::net::{hifi_forward_vars, init_params_with, NetworkConfig, NetworkParams};
use crate::rng;
use crate::tensor::{kernels, Shape, Tensor};
use crate::weights::{self, ScalarWidth};

/// Hyperparameters and bookkeeping for one training run.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Hard cap on optimizer steps (0 = no cap).
    pub max_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub loss: LossWeights,
    pub seed: u64,
    /// Write a checkpoint every N steps (0 = final checkpoint only).
    pub checkpoint_every: usize,
    /// Square crop size for training samples (0 = use full images).
    pub crop: usize,
    pub net: NetworkConfig,
    pub extractor_seed: u64,
    /// Force single-threaded kernels.
    pub deterministic: bool,
    /// Where checkpoints and the run manifest go; nothing is written when absent.
    pub out_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1,
            batch_size: 4,
            learning_rate: 1e-3,
            max_steps: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            loss: LossWeights::default(),
            seed: 42,
            checkpoint_every: 0,
            crop: 64,
            net: NetworkConfig::default(),
            extractor_seed: crate::loss::DEFAULT_EXTRACTOR_SEED,
            deterministic: false,
            out_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".to_string()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::Config(format!("adam_eps must be positive, got {}", self.adam_eps)));
        }
        self.loss.validate()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    /// Loss per optimizer step run in this call (resumed runs record only
    /// the steps after the checkpoint).
    pub history: Vec<StepRecord>,
    pub steps_run: usize,
}

/// Adaptive moment estimation over the named parameter tree.
struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: HashMap<String, Vec<f64>>,
    v: HashMap<String, Vec<f64>>,
}

impl Adam {
    fn new(cfg: &TrainConfig) -> Self {
        Adam {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            t: 0,
            m: HashMap::new(),
            v: HashMap::new(),
        }
    }

    fn step(&mut self, params: &mut NetworkParams, grads: &HashMap<String, Tensor>) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, tensor) in params.named_tensors_mut() {
            let grad = grads
                .get(&name)
                .ok_or_else(|| Error::Usage(format!("missing gradient for parameter '{name}'")))?;
            let g = grad.data();
            let n = g.len();
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let mut data = tensor.data().to_vec();
            for i in 0..n {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                data[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            *tensor = Tensor::from_vec(tensor.shape(), data)?;
        }
        Ok(())
    }
}

/// A checkpoint: parameters, optimizer moments and the absolute step count.
pub struct Checkpoint {
    pub params: NetworkParams,
    pub step: usize,
    m: HashMap<String, Vec<f64>>,
    v: HashMap<String, Vec<f64>>,
}

pub fn save_checkpoint(
    params: &NetworkParams,
    adam_m: &HashMap<String, Vec<f64>>,
    adam_v: &HashMap<String, Vec<f64>>,
    step: usize,
    last_loss: Option<f64>,
    path: &Path,
) -> Result<()> {
    let mut named: Vec<(String, Tensor)> = Vec::new();
    for (name, t) in params.named_tensors() {
        named.push((name.clone(), t.clone()));
        let shape = t.shape();
        if let Some(m) = adam_m.get(&name) {
            named.push((format!("optim.m.{name}"), Tensor::from_vec(shape, m.clone())?));
        }
        if let Some(v) = adam_v.get(&name) {
            named.push((format!("optim.v.{name}"), Tensor::from_vec(shape, v.clone())?));
        }
    }
    let refs: Vec<(String, &Tensor)> = named.iter().map(|(n, t)| (n.clone(), t)).collect();
    let bytes = weights::encode_archive(&refs, &params.config, ScalarWidth::F64)?;
    std::fs::write(path, bytes)?;

    let meta = serde_json::json!({
        "step": step,
        "last_loss": last_loss,
    });
    std::fs::write(path.with_extension("json"), serde_json::to_string_pretty(&meta).unwrap())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    let (_, manifest, tensors) = weights::decode_archive(&bytes)?;
    let cfg = manifest.flags.to_config()?;
    let params = weights::params_from_tensors(&cfg, &tensors)?;
    let mut m = HashMap::new();
    let mut v = HashMap::new();
    for (name, t) in &tensors {
        if let Some(rest) = name.strip_prefix("optim.m.") {
            m.insert(rest.to_string(), t.data().to_vec());
        } else if let Some(rest) = name.strip_prefix("optim.v.") {
            v.insert(rest.to_string(), t.data().to_vec());
        }
    }
    let meta_path = path.with_extension("json");
    let step = if meta_path.exists() {
        let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&meta_path)?)
            .map_err(|e| Error::Archive(format!("bad checkpoint manifest: {e}")))?;
        meta.get("step").and_then(|s| s.as_u64()).unwrap_or(0) as usize
    } else {
        0
    };
    Ok(Checkpoint { params, step, m, v })
}

/// Stacks same-shaped `(1, c, h, w)` tensors along the batch dim.
fn stack_batch(tensors: &[Tensor]) -> Result<Tensor> {
    let s = tensors[0].shape();
    let mut data = Vec::with_capacity(s.numel() * tensors.len());
    for t in tensors {
        if t.shape() != s {
            return Err(Error::Shape(format!(
                "batch members must share one shape: {} vs {}",
                t.shape(),
                s
            )));
        }
        data.extend_from_slice(t.data());
    }
    Tensor::from_vec(Shape::new(tensors.len(), s.c, s.h, s.w), data)
}

fn crop_pair(pair: &ImagePair, crop: usize, seed: u64) -> Result<(Tensor, Tensor)> {
    let s = pair.degraded.shape();
    if crop == 0 || (s.h == crop && s.w == crop) {
        return Ok((pair.degraded.clone(), pair.ground_truth.clone()));
    }
    if s.h < crop || s.w < crop {
        return Err(Error::Usage(format!(
            "pair '{}' is {}x{}, smaller than the {crop}x{crop} training crop",
            pair.id, s.h, s.w
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y0 = rng.random_range(0..=s.h - crop);
    let x0 = rng.random_range(0..=s.w - crop);
    let window = |t: &Tensor| -> Result<Tensor> {
        let mut out = vec![0.0; s.n * s.c * crop * crop];
        let os = Shape::new(s.n, s.c, crop, crop);
        let d = t.data();
        for n in 0..s.n {
            for c in 0..s.c {
                for y in 0..crop {
                    let src = s.idx(n, c, y0 + y, x0);
                    let dst = os.idx(n, c, y, 0);
                    out[dst..dst + crop].copy_from_slice(&d[src..src + crop]);
                }
            }
        }
        Tensor::from_vec(os, out)
    };
    Ok((window(&pair.degraded)?, window(&pair.ground_truth)?))
}

const SHUFFLE_STREAM: u64 = 0x5487;
const CROP_STREAM: u64 = 0xC209;

/// Trains from freshly initialized parameters.
pub fn train(pairs: &[ImagePair], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(pairs, cfg, None, |_| {})
}

/// Resumes from a checkpoint, replaying the exact step sequence the
/// uninterrupted run would have executed.
pub fn train_resume(pairs: &[ImagePair], cfg: &TrainConfig, checkpoint: &Path) -> Result<TrainOutcome> {
    let ckpt = load_checkpoint(checkpoint)?;
    train_with(pairs, cfg, Some(ckpt), |_| {})
}

pub fn train_with(
    pairs: &[ImagePair],
    cfg: &TrainConfig,
    resume: Option<Checkpoint>,
    mut on_step: impl FnMut(&StepRecord) + Send,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::Usage("training requires a non-empty pair list".to_string()));
    }
    if cfg.deterministic {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .map_err(|e| Error::Usage(format!("thread pool: {e}")))?;
        return pool.install(|| train_inner(pairs, cfg, resume, &mut on_step));
    }
    train_inner(pairs, cfg, resume, &mut on_step)
}

fn train_inner(
    pairs: &[ImagePair],
    cfg: &TrainConfig,
    resume: Option<Checkpoint>,
    on_step: &mut dyn FnMut(&StepRecord),
) -> Result<TrainOutcome> {
    let steps_per_epoch = pairs.len().div_ceil(cfg.batch_size);
    let mut total_steps = cfg.epochs * steps_per_epoch;
    if cfg.max_steps > 0 {
        total_steps = total_steps.min(cfg.max_steps);
    }

    let (mut params, mut adam, start_step) = match resume {
        Some(ckpt) => {
            if ckpt.params.config != cfg.net {
                return Err(Error::Config(
                    "checkpoint architecture flags do not match the configured ones".to_string(),
                ));
            }
            let mut adam = Adam::new(cfg);
            adam.t = ckpt.step as u64;
            adam.m = ckpt.m;
            adam.v = ckpt.v;
            (ckpt.params, adam, ckpt.step)
        }
        None => (init_params_with(&cfg.net, cfg.seed)?, Adam::new(cfg), 0),
    };

    let extractor = FeatureExtractor::with_seed(cfg.extractor_seed);
    let mut history = Vec::new();
    let mut order: Vec<usize> = Vec::new();
    let mut order_epoch = usize::MAX;

    if let Some(dir) = &cfg.out_dir {
        std::fs::create_dir_all(dir)?;
    }

    for step in start_step..total_steps {
        let epoch = step / steps_per_epoch;
        let pos = step % steps_per_epoch;
        if epoch != order_epoch {
            order = (0..pairs.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(rng::derive2(cfg.seed, SHUFFLE_STREAM, epoch as u64));
            order.shuffle(&mut rng);
            order_epoch = epoch;
        }
        let lo = pos * cfg.batch_size;
        let hi = (lo + cfg.batch_size).min(pairs.len());

        let mut degraded = Vec::with_capacity(hi - lo);
        let mut truth = Vec::with_capacity(hi - lo);
        for (slot, &idx) in order[lo..hi].iter().enumerate() {
            let crop_seed = rng::derive2(cfg.seed, CROP_STREAM ^ step as u64, slot as u64);
            let (d, g) = crop_pair(&pairs[idx], cfg.crop, crop_seed)?;
            degraded.push(d);
            truth.push(g);
        }
        let batch_in = Var::constant(stack_batch(&degraded)?);
        let batch_gt = Var::constant(stack_batch(&truth)?);

        let net_vars = params.vars(true);
        let pred = hifi_forward_vars(&batch_in, &net_vars)?;
        let loss = total_loss_var(&pred, &batch_gt, &cfg.loss, &extractor)?;
        let loss_value = loss.scalar_value()?;
        if !loss_value.is_finite() {
            return Err(Error::NonFinite(format!(
                "training aborted at step {}: loss = {loss_value}",
                step + 1
            )));
        }

        let tape = GradTape::backward(&loss)?;
        let mut grads: HashMap<String, Tensor> = HashMap::new();
        for (name, var) in net_vars.named_vars() {
            grads.insert(name, tape.grad_or_zeros(var));
        }
        adam.step(&mut params, &grads)?;

        let record = StepRecord { step: step + 1, loss: loss_value };
        history.push(record);
        on_step(&record);

        if let Some(dir) = &cfg.out_dir {
            let due = cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0;
            if due || step + 1 == total_steps {
                let path = dir.join(format!("checkpoint_step_{:06}.hifiw", step + 1));
                save_checkpoint(&params, &adam.m, &adam.v, step + 1, Some(loss_value), &path)?;
            }
        }
    }

    // Zero planned steps: still honor the final-checkpoint contract.
    if total_steps == start_step {
        if let Some(dir) = &cfg.out_dir {
            let path = dir.join(format!("checkpoint_step_{:06}.hifiw", start_step));
            save_checkpoint(&params, &adam.m, &adam.v, start_step, None, &path)?;
        }
    }

    if !params.all_finite() {
        return Err(Error::NonFinite("parameters are non-finite after training".to_string()));
    }

    Ok(TrainOutcome { params, history, steps_run: total_steps.saturating_sub(start_step) })
}

/// Smoothed loss: mean over the first and last `window` records.
pub fn smoothed_endpoints(history: &[StepRecord], window: usize) -> Option<(f64, f64)> {
    if history.is_empty() {
        return None;
    }
    let w = window.max(1).min(history.len());
    let head = kernels::pairwise_sum(&history[..w].iter().map(|r| r.loss).collect::<Vec<_>>()) / w as f64;
    let tail = kernels::pairwise_sum(
        &history[history.len() - w..].iter().map(|r| r.loss).collect::<Vec<_>>(),
    ) / w as f64;
    Some((head, tail))
}
