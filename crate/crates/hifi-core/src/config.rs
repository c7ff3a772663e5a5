//! Flat key-value training configuration: `key = value` lines, `#` comments,
//! typed parsing, unknown keys rejected. Required keys: `learning_rate`,
//! `epochs`, `batch_size`; everything else has documented defaults.

use std::collections::BTreeMap;

use crate::data::DegradationSpec;
use crate::error::{Error, Result};
use crate::loss::LossWeights;
use crate::net::{ConfidenceNorm, NetworkConfig};
use crate::train::TrainConfig;

/// Config-file knobs for generating the synthetic dataset (used by
/// `train --synthetic`).
#[derive(Clone, Copy, Debug)]
pub struct SyntheticDataConfig {
    pub pairs: usize,
    pub size: usize,
    pub spec: DegradationSpec,
}

impl Default for SyntheticDataConfig {
    fn default() -> Self {
        SyntheticDataConfig { pairs: 32, size: 80, spec: DegradationSpec::default() }
    }
}

/// Everything a training run reads from its config file.
#[derive(Clone, Debug, Default)]
pub struct TrainFileConfig {
    pub train: TrainConfig,
    pub synth: SyntheticDataConfig,
}

struct Parser {
    values: BTreeMap<String, String>,
    used: std::collections::BTreeSet<String>,
}

impl Parser {
    fn parse(text: &str) -> Result<Parser> {
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected 'key = value', got '{line}'",
                    lineno + 1
                )));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if values.insert(key.clone(), value).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key '{key}'", lineno + 1)));
            }
        }
        Ok(Parser { values, used: Default::default() })
    }

    fn required<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        self.used.insert(key.to_string());
        let raw = self
            .values
            .get(key)
            .ok_or_else(|| Error::Config(format!("missing required key '{key}'")))?;
        raw.parse()
            .map_err(|_| Error::Config(format!("key '{key}': cannot parse value '{raw}'")))
    }

    fn optional<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        self.used.insert(key.to_string());
        match self.values.get(key) {
            None => Ok(default),
            Some(raw) => raw
                .parse()
                .map_err(|_| Error::Config(format!("key '{key}': cannot parse value '{raw}'"))),
        }
    }

    fn optional_bool(&mut self, key: &str, default: bool) -> Result<bool> {
        self.used.insert(key.to_string());
        match self.values.get(key).map(|s| s.as_str()) {
            None => Ok(default),
            Some("true" | "1" | "yes" | "on") => Ok(true),
            Some("false" | "0" | "no" | "off") => Ok(false),
            Some(raw) => Err(Error::Config(format!("key '{key}': expected a boolean, got '{raw}'"))),
        }
    }

    fn finish(self) -> Result<()> {
        for key in self.values.keys() {
            if !self.used.contains(key) {
                return Err(Error::Config(format!("unknown key '{key}'")));
            }
        }
        Ok(())
    }
}

/// Parses a training config file.
pub fn parse_train_config(text: &str) -> Result<TrainFileConfig> {
    let mut p = Parser::parse(text)?;

    let train = TrainConfig {
        learning_rate: p.required("learning_rate")?,
        epochs: p.required("epochs")?,
        batch_size: p.required("batch_size")?,
        max_steps: p.optional("max_steps", 0)?,
        beta1: p.optional("beta1", 0.9)?,
        beta2: p.optional("beta2", 0.999)?,
        adam_eps: p.optional("adam_eps", 1e-8)?,
        loss: LossWeights {
            lambda_cha: p.optional("lambda_cha", 1.0)?,
            lambda_ssim: p.optional("lambda_ssim", 1.1)?,
            lambda_per: p.optional("lambda_per", 11.0)?,
            charbonnier_eps: p.optional("charbonnier_eps", 1e-3)?,
        },
        seed: p.optional("seed", 42)?,
        checkpoint_every: p.optional("checkpoint_every", 0)?,
        crop: p.optional("crop", 64)?,
        net: NetworkConfig {
            use_haar: p.optional_bool("use_haar", true)?,
            use_cbam: p.optional_bool("use_cbam", true)?,
            use_rfm: p.optional_bool("use_rfm", true)?,
            use_residual: p.optional_bool("use_residual", true)?,
            use_maxpool: p.optional_bool("use_maxpool", true)?,
            use_mlp: p.optional_bool("use_mlp", true)?,
            use_base: p.optional_bool("use_base", true)?,
            confidence_norm: ConfidenceNorm::parse(&p.optional(
                "confidence_norm",
                "raw".to_string(),
            )?)?,
        },
        extractor_seed: p.optional("extractor_seed", crate::loss::DEFAULT_EXTRACTOR_SEED)?,
        deterministic: p.optional_bool("deterministic", false)?,
        out_dir: None,
    };

    let synth = SyntheticDataConfig {
        pairs: p.optional("synth_pairs", 32)?,
        size: p.optional("synth_size", 80)?,
        spec: DegradationSpec {
            attenuation: [
                p.optional("atten_r", 1.0)?,
                p.optional("atten_g", 0.6)?,
                p.optional("atten_b", 0.5)?,
            ],
            beta: p.optional("haze_beta", 0.3)?,
            ambient: [
                p.optional("ambient_r", 0.2)?,
                p.optional("ambient_g", 0.5)?,
                p.optional("ambient_b", 0.6)?,
            ],
            noise_sigma: p.optional("noise_sigma", 0.01)?,
            seed: p.optional("degrade_seed", 1)?,
        },
    };

    p.finish()?;
    let cfg = TrainFileConfig { train, synth };
    cfg.train.validate()?;
    cfg.synth.spec.validate()?;
    Ok(cfg)
}

/// Renders the fully resolved configuration (including defaulted values) in
/// the same key-value syntax, for echoing before a run.
pub fn render_train_config(cfg: &TrainFileConfig) -> String {
    let t = &cfg.train;
    let s = &cfg.synth;
    let mut out = String::new();
    let mut kv = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
    kv("learning_rate", t.learning_rate.to_string());
    kv("epochs", t.epochs.to_string());
    kv("batch_size", t.batch_size.to_string());
    kv("max_steps", t.max_steps.to_string());
    kv("beta1", t.beta1.to_string());
    kv("beta2", t.beta2.to_string());
    kv("adam_eps", t.adam_eps.to_string());
    kv("lambda_cha", t.loss.lambda_cha.to_string());
    kv("lambda_ssim", t.loss.lambda_ssim.to_string());
    kv("lambda_per", t.loss.lambda_per.to_string());
    kv("charbonnier_eps", t.loss.charbonnier_eps.to_string());
    kv("seed", t.seed.to_string());
    kv("checkpoint_every", t.checkpoint_every.to_string());
    kv("crop", t.crop.to_string());
    kv("use_haar", t.net.use_haar.to_string());
    kv("use_cbam", t.net.use_cbam.to_string());
    kv("use_rfm", t.net.use_rfm.to_string());
    kv("use_residual", t.net.use_residual.to_string());
    kv("use_maxpool", t.net.use_maxpool.to_string());
    kv("use_mlp", t.net.use_mlp.to_string());
    kv("use_base", t.net.use_base.to_string());
    kv("confidence_norm", t.net.confidence_norm.as_str().to_string());
    kv("extractor_seed", t.extractor_seed.to_string());
    kv("deterministic", t.deterministic.to_string());
    kv("synth_pairs", s.pairs.to_string());
    kv("synth_size", s.size.to_string());
    kv("atten_r", s.spec.attenuation[0].to_string());
    kv("atten_g", s.spec.attenuation[1].to_string());
    kv("atten_b", s.spec.attenuation[2].to_string());
    kv("haze_beta", s.spec.beta.to_string());
    kv("ambient_r", s.spec.ambient[0].to_string());
    kv("ambient_g", s.spec.ambient[1].to_string());
    kv("ambient_b", s.spec.ambient[2].to_string());
    kv("noise_sigma", s.spec.noise_sigma.to_string());
    kv("degrade_seed", s.spec.seed.to_string());
    out
}
