//! Parameter tree of the network, its initialization, and the canonical
//! naming scheme used by the weight archive and the optimizer.
//!
//! Canonical tensor names follow the tree structure with dotted segments,
//! e.g. `rfm.rfu1.base_path.conv5.weight` or `weight_gen.conv3.bias`. The
//! archive stores tensors sorted by name; the optimizer walks them in tree
//! order. Ablation flags change which subtrees exist but never the output
//! shape of the network.

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{ConvParams, Tensor};

/// Normalization applied to the confidence maps produced by the weight
/// generator. The default leaves them raw; the alternatives make the four
/// maps compete.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
pub enum ConfidenceNorm {
    #[default]
    Raw,
    Sigmoid,
    Softmax,
}

impl ConfidenceNorm {
    pub fn as_str(&self) -> &'static str {
        match self {
            ConfidenceNorm::Raw => "raw",
            ConfidenceNorm::Sigmoid => "sigmoid",
            ConfidenceNorm::Softmax => "softmax",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(ConfidenceNorm::Raw),
            "sigmoid" => Ok(ConfidenceNorm::Sigmoid),
            "softmax" => Ok(ConfidenceNorm::Softmax),
            other => Err(Error::Config(format!(
                "unknown confidence_norm '{other}' (expected raw|sigmoid|softmax)"
            ))),
        }
    }
}

/// Architecture toggles. `use_haar`, `use_cbam` and `use_rfm` select the
/// structure variants of the published ablation grid; the remaining flags
/// remove individual components of the fusion units.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct NetworkConfig {
    /// Feed Haar bands as reinforcement inputs; when false the original
    /// image is fed in place of all four bands.
    pub use_haar: bool,
    /// Apply the attention block between fusion and gated output.
    pub use_cbam: bool,
    /// Use the reinforcement fusion module; when false a plain stack of six
    /// 3x3 convolutions consumes the channel-concatenated five inputs.
    pub use_rfm: bool,
    /// Keep the residual convolutions between fusion units.
    pub use_residual: bool,
    /// Keep the max-pooling inside each fusion unit.
    pub use_maxpool: bool,
    /// Keep the shared-MLP coefficient branch inside each fusion unit.
    pub use_mlp: bool,
    /// Keep the base-image branch inside each fusion unit; when false the
    /// unit outputs the coefficient matrix itself.
    pub use_base: bool,
    pub confidence_norm: ConfidenceNorm,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            use_haar: true,
            use_cbam: true,
            use_rfm: true,
            use_residual: true,
            use_maxpool: true,
            use_mlp: true,
            use_base: true,
            confidence_norm: ConfidenceNorm::Raw,
        }
    }
}

/// Fusion-unit channel width. Fixed at 16 for this architecture.
pub const RFU_CHANNELS: usize = 16;
/// Channels produced by the fusion stage (and consumed by attention).
pub const FUSED_CHANNELS: usize = 2 * RFU_CHANNELS;
/// Bottleneck width of the channel-attention MLP.
pub const CBAM_BOTTLENECK: usize = 2;
/// Channels of the projected feature map that gated fusion splits in four.
pub const GATED_CHANNELS: usize = 12;

/// Base-image branch: 1x1 conv to C/2, then 5x5 conv to C (ReLU after each).
#[derive(Clone, Debug)]
pub struct RfuBasePath {
    pub conv1: ConvParams,
    pub conv5: ConvParams,
}

/// Shared MLP branch: two 1x1 convolutions around one ReLU.
#[derive(Clone, Debug)]
pub struct RfuMlp {
    pub conv_a: ConvParams,
    pub conv_b: ConvParams,
}

/// Reinforcement branch: 1x1 conv then 3x3 conv, both to C channels.
#[derive(Clone, Debug)]
pub struct RfuReinfPath {
    pub conv1: ConvParams,
    pub conv3: ConvParams,
}

/// Parameters of one reinforcement fusion unit.
#[derive(Clone, Debug)]
pub struct RfuParams {
    pub base_path: Option<RfuBasePath>,
    pub mlp: Option<RfuMlp>,
    pub reinf_path: RfuReinfPath,
    pub use_maxpool: bool,
    pub channels: usize,
}

impl RfuParams {
    pub fn init(in1_ch: usize, in2_ch: usize, cfg: &NetworkConfig, seeds: &mut SeedStream) -> Result<Self> {
        let c = RFU_CHANNELS;
        debug_assert!(c % 2 == 0);
        let base_path = cfg
            .use_base
            .then(|| -> Result<RfuBasePath> {
                Ok(RfuBasePath {
                    conv1: ConvParams::init(c / 2, in1_ch, 1, seeds.next())?,
                    conv5: ConvParams::init(c, c / 2, 5, seeds.next())?,
                })
            })
            .transpose()?;
        let mlp = cfg
            .use_mlp
            .then(|| -> Result<RfuMlp> {
                Ok(RfuMlp {
                    conv_a: ConvParams::init(c / 2, in1_ch, 1, seeds.next())?,
                    conv_b: ConvParams::init(c, c / 2, 1, seeds.next())?,
                })
            })
            .transpose()?;
        let reinf_path = RfuReinfPath {
            conv1: ConvParams::init(c, in2_ch, 1, seeds.next())?,
            conv3: ConvParams::init(c, c, 3, seeds.next())?,
        };
        Ok(RfuParams { base_path, mlp, reinf_path, use_maxpool: cfg.use_maxpool, channels: c })
    }
}

/// Four fusion units plus (optionally) four residual 3x3 convolutions.
#[derive(Clone, Debug)]
pub struct RfmHaarParams {
    pub rfus: [RfuParams; 4],
    pub res: Option<[ConvParams; 4]>,
}

/// The plain convolution block used in place of the fusion module for
/// ablation: six same-padding 3x3 convolutions over the concatenated five
/// inputs, channels 15 -> 16 -> 16 -> 32 -> 32 -> 32 -> 32, ReLU between.
#[derive(Clone, Debug)]
pub struct ConvsParams {
    pub convs: Vec<ConvParams>,
}

#[derive(Clone, Debug)]
pub enum FusionParams {
    RfmHaar(RfmHaarParams),
    Convs(ConvsParams),
}

/// Channel attention MLP (shared between pooling branches) and the spatial
/// attention convolution.
#[derive(Clone, Debug)]
pub struct CbamParams {
    pub mlp_a: ConvParams,
    pub mlp_b: ConvParams,
    pub spatial: ConvParams,
}

/// Every learnable tensor of the network.
#[derive(Clone, Debug)]
pub struct NetworkParams {
    pub config: NetworkConfig,
    pub fusion: FusionParams,
    pub cbam: Option<CbamParams>,
    pub f3_proj: ConvParams,
    pub weight_gen: [ConvParams; 5],
}

/// Counter-based seed stream so each tensor gets an independent seed.
pub struct SeedStream {
    base: u64,
    counter: u64,
}

impl SeedStream {
    pub fn new(base: u64) -> Self {
        SeedStream { base, counter: 0 }
    }

    pub fn next(&mut self) -> u64 {
        let s = rng::derive(self.base, self.counter);
        self.counter += 1;
        s
    }
}

/// Fan-in scaled uniform initialization of the full parameter tree under the
/// default configuration. Deterministic per seed.
pub fn init_params(seed: u64) -> NetworkParams {
    init_params_with(&NetworkConfig::default(), seed).expect("default config is valid")
}

/// As [`init_params`] but honoring ablation flags.
pub fn init_params_with(cfg: &NetworkConfig, seed: u64) -> Result<NetworkParams> {
    let mut seeds = SeedStream::new(seed);
    let fusion = if cfg.use_rfm {
        let rfus = [
            RfuParams::init(3, 3, cfg, &mut seeds)?,
            RfuParams::init(RFU_CHANNELS, 3, cfg, &mut seeds)?,
            RfuParams::init(RFU_CHANNELS, 3, cfg, &mut seeds)?,
            RfuParams::init(FUSED_CHANNELS, 3, cfg, &mut seeds)?,
        ];
        let res = cfg
            .use_residual
            .then(|| -> Result<[ConvParams; 4]> {
                Ok([
                    ConvParams::init(RFU_CHANNELS, 3, 3, seeds.next())?,
                    ConvParams::init(RFU_CHANNELS, RFU_CHANNELS, 3, seeds.next())?,
                    ConvParams::init(RFU_CHANNELS, RFU_CHANNELS, 3, seeds.next())?,
                    ConvParams::init(RFU_CHANNELS, FUSED_CHANNELS, 3, seeds.next())?,
                ])
            })
            .transpose()?;
        FusionParams::RfmHaar(RfmHaarParams { rfus, res })
    } else {
        let plan = [15, 16, 16, 32, 32, 32, 32];
        let convs = plan
            .windows(2)
            .map(|io| ConvParams::init(io[1], io[0], 3, seeds.next()))
            .collect::<Result<Vec<_>>>()?;
        FusionParams::Convs(ConvsParams { convs })
    };

    let cbam = cfg
        .use_cbam
        .then(|| -> Result<CbamParams> {
            Ok(CbamParams {
                mlp_a: ConvParams::init(CBAM_BOTTLENECK, FUSED_CHANNELS, 1, seeds.next())?,
                mlp_b: ConvParams::init(FUSED_CHANNELS, CBAM_BOTTLENECK, 1, seeds.next())?,
                spatial: ConvParams::init(1, 2 * FUSED_CHANNELS, 7, seeds.next())?,
            })
        })
        .transpose()?;

    let f3_proj = ConvParams::init(GATED_CHANNELS, FUSED_CHANNELS, 3, seeds.next())?;
    let weight_gen = [
        ConvParams::init(32, FUSED_CHANNELS, 3, seeds.next())?,
        ConvParams::init(32, 32, 5, seeds.next())?,
        ConvParams::init(64, 32, 7, seeds.next())?,
        ConvParams::init(32, 64, 3, seeds.next())?,
        ConvParams::init(GATED_CHANNELS, 32, 5, seeds.next())?,
    ];

    Ok(NetworkParams { config: *cfg, fusion, cbam, f3_proj, weight_gen })
}

impl NetworkParams {
    /// Visits every convolution in canonical tree order.
    pub fn visit_convs<'a>(&'a self, f: &mut impl FnMut(String, &'a ConvParams)) {
        match &self.fusion {
            FusionParams::RfmHaar(rfm) => {
                for (i, rfu) in rfm.rfus.iter().enumerate() {
                    let p = format!("rfm.rfu{}", i + 1);
                    if let Some(base) = &rfu.base_path {
                        f(format!("{p}.base_path.conv1"), &base.conv1);
                        f(format!("{p}.base_path.conv5"), &base.conv5);
                    }
                    if let Some(mlp) = &rfu.mlp {
                        f(format!("{p}.mlp.conv_a"), &mlp.conv_a);
                        f(format!("{p}.mlp.conv_b"), &mlp.conv_b);
                    }
                    f(format!("{p}.reinf_path.conv1"), &rfu.reinf_path.conv1);
                    f(format!("{p}.reinf_path.conv3"), &rfu.reinf_path.conv3);
                }
                if let Some(res) = &rfm.res {
                    for (i, re) in res.iter().enumerate() {
                        f(format!("rfm.re{}", i + 1), re);
                    }
                }
            }
            FusionParams::Convs(convs) => {
                for (i, conv) in convs.convs.iter().enumerate() {
                    f(format!("convs.conv{}", i + 1), conv);
                }
            }
        }
        if let Some(cbam) = &self.cbam {
            f("cbam.mlp.conv_a".to_string(), &cbam.mlp_a);
            f("cbam.mlp.conv_b".to_string(), &cbam.mlp_b);
            f("cbam.spatial.conv7".to_string(), &cbam.spatial);
        }
        f("f3_proj".to_string(), &self.f3_proj);
        for (i, conv) in self.weight_gen.iter().enumerate() {
            f(format!("weight_gen.conv{}", i + 1), conv);
        }
    }

    /// Mutable variant of [`visit_convs`], same order.
    pub fn visit_convs_mut<'a>(&'a mut self, f: &mut impl FnMut(String, &'a mut ConvParams)) {
        match &mut self.fusion {
            FusionParams::RfmHaar(rfm) => {
                for (i, rfu) in rfm.rfus.iter_mut().enumerate() {
                    let p = format!("rfm.rfu{}", i + 1);
                    if let Some(base) = &mut rfu.base_path {
                        f(format!("{p}.base_path.conv1"), &mut base.conv1);
                        f(format!("{p}.base_path.conv5"), &mut base.conv5);
                    }
                    if let Some(mlp) = &mut rfu.mlp {
                        f(format!("{p}.mlp.conv_a"), &mut mlp.conv_a);
                        f(format!("{p}.mlp.conv_b"), &mut mlp.conv_b);
                    }
                    f(format!("{p}.reinf_path.conv1"), &mut rfu.reinf_path.conv1);
                    f(format!("{p}.reinf_path.conv3"), &mut rfu.reinf_path.conv3);
                }
                if let Some(res) = &mut rfm.res {
                    for (i, re) in res.iter_mut().enumerate() {
                        f(format!("rfm.re{}", i + 1), re);
                    }
                }
            }
            FusionParams::Convs(convs) => {
                for (i, conv) in convs.convs.iter_mut().enumerate() {
                    f(format!("convs.conv{}", i + 1), conv);
                }
            }
        }
        if let Some(cbam) = &mut self.cbam {
            f("cbam.mlp.conv_a".to_string(), &mut cbam.mlp_a);
            f("cbam.mlp.conv_b".to_string(), &mut cbam.mlp_b);
            f("cbam.spatial.conv7".to_string(), &mut cbam.spatial);
        }
        f("f3_proj".to_string(), &mut self.f3_proj);
        for (i, conv) in self.weight_gen.iter_mut().enumerate() {
            f(format!("weight_gen.conv{}", i + 1), conv);
        }
    }

    /// Named tensors in canonical tree order (`<conv>.weight`, `<conv>.bias`).
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.visit_convs(&mut |name, conv| {
            out.push((format!("{name}.weight"), &conv.weight));
            out.push((format!("{name}.bias"), &conv.bias));
        });
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        self.visit_convs_mut(&mut |name, conv| {
            out.push((format!("{name}.weight"), &mut conv.weight));
            out.push((format!("{name}.bias"), &mut conv.bias));
        });
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.named_tensors().iter().all(|(_, t)| t.is_finite())
    }
}

// ── Var mirrors for the differentiable forward pass ─────────────────────

#[derive(Clone)]
pub struct ConvVars {
    pub weight: Var,
    pub bias: Var,
}

impl ConvVars {
    fn lift(p: &ConvParams, trainable: bool) -> ConvVars {
        let mk = if trainable { Var::param } else { Var::constant };
        ConvVars { weight: mk(p.weight.clone()), bias: mk(p.bias.clone()) }
    }

    pub fn apply(&self, x: &Var, act: crate::tensor::Activation) -> Result<Var> {
        crate::autodiff::conv2d(x, &self.weight, &self.bias, act)
    }
}

pub struct RfuVars {
    pub base_path: Option<(ConvVars, ConvVars)>,
    pub mlp: Option<(ConvVars, ConvVars)>,
    pub reinf_conv1: ConvVars,
    pub reinf_conv3: ConvVars,
    pub use_maxpool: bool,
}

pub enum FusionVars {
    RfmHaar { rfus: [RfuVars; 4], res: Option<[ConvVars; 4]> },
    Convs(Vec<ConvVars>),
}

pub struct CbamVars {
    pub mlp_a: ConvVars,
    pub mlp_b: ConvVars,
    pub spatial: ConvVars,
}

/// The parameter tree lifted into graph leaves for one forward/backward run.
pub struct NetworkVars {
    pub config: NetworkConfig,
    pub fusion: FusionVars,
    pub cbam: Option<CbamVars>,
    pub f3_proj: ConvVars,
    pub weight_gen: [ConvVars; 5],
}

impl NetworkParams {
    /// Lifts the tree into graph leaves. With `trainable` the leaves are
    /// tracked and show up in the gradient tape; shared use of one leaf
    /// accumulates into a single gradient.
    pub fn vars(&self, trainable: bool) -> NetworkVars {
        let fusion = match &self.fusion {
            FusionParams::RfmHaar(rfm) => FusionVars::RfmHaar {
                rfus: std::array::from_fn(|i| {
                    let rfu = &rfm.rfus[i];
                    RfuVars {
                        base_path: rfu.base_path.as_ref().map(|b| {
                            (ConvVars::lift(&b.conv1, trainable), ConvVars::lift(&b.conv5, trainable))
                        }),
                        mlp: rfu.mlp.as_ref().map(|m| {
                            (ConvVars::lift(&m.conv_a, trainable), ConvVars::lift(&m.conv_b, trainable))
                        }),
                        reinf_conv1: ConvVars::lift(&rfu.reinf_path.conv1, trainable),
                        reinf_conv3: ConvVars::lift(&rfu.reinf_path.conv3, trainable),
                        use_maxpool: rfu.use_maxpool,
                    }
                }),
                res: rfm
                    .res
                    .as_ref()
                    .map(|res| std::array::from_fn(|i| ConvVars::lift(&res[i], trainable))),
            },
            FusionParams::Convs(convs) => {
                FusionVars::Convs(convs.convs.iter().map(|c| ConvVars::lift(c, trainable)).collect())
            }
        };
        NetworkVars {
            config: self.config,
            fusion,
            cbam: self.cbam.as_ref().map(|c| CbamVars {
                mlp_a: ConvVars::lift(&c.mlp_a, trainable),
                mlp_b: ConvVars::lift(&c.mlp_b, trainable),
                spatial: ConvVars::lift(&c.spatial, trainable),
            }),
            f3_proj: ConvVars::lift(&self.f3_proj, trainable),
            weight_gen: std::array::from_fn(|i| ConvVars::lift(&self.weight_gen[i], trainable)),
        }
    }
}

impl NetworkVars {
    /// Assembles the var tree from leaves given in canonical named order
    /// (one weight var and one bias var per convolution, tree order), the
    /// order produced by [`NetworkParams::named_tensors`].
    pub fn from_leaves(cfg: &NetworkConfig, leaves: &[Var]) -> Result<NetworkVars> {
        let mut iter = leaves.iter().cloned();
        let mut conv = || -> Result<ConvVars> {
            let weight = iter.next();
            let bias = iter.next();
            match (weight, bias) {
                (Some(weight), Some(bias)) => Ok(ConvVars { weight, bias }),
                _ => Err(Error::Usage("too few leaves for the configured architecture".to_string())),
            }
        };
        let fusion = if cfg.use_rfm {
            let mut rfus = Vec::with_capacity(4);
            for _ in 0..4 {
                rfus.push(RfuVars {
                    base_path: if cfg.use_base { Some((conv()?, conv()?)) } else { None },
                    mlp: if cfg.use_mlp { Some((conv()?, conv()?)) } else { None },
                    reinf_conv1: conv()?,
                    reinf_conv3: conv()?,
                    use_maxpool: cfg.use_maxpool,
                });
            }
            let Ok(rfus) = <[RfuVars; 4]>::try_from(rfus) else { unreachable!() };
            let res = if cfg.use_residual {
                Some([conv()?, conv()?, conv()?, conv()?])
            } else {
                None
            };
            FusionVars::RfmHaar { rfus, res }
        } else {
            let mut convs = Vec::with_capacity(6);
            for _ in 0..6 {
                convs.push(conv()?);
            }
            FusionVars::Convs(convs)
        };
        let cbam = if cfg.use_cbam {
            Some(CbamVars { mlp_a: conv()?, mlp_b: conv()?, spatial: conv()? })
        } else {
            None
        };
        let f3_proj = conv()?;
        let weight_gen = [conv()?, conv()?, conv()?, conv()?, conv()?];
        if iter.next().is_some() {
            return Err(Error::Usage("too many leaves for the configured architecture".to_string()));
        }
        Ok(NetworkVars { config: *cfg, fusion, cbam, f3_proj, weight_gen })
    }

    /// Named leaves in the same order as [`NetworkParams::named_tensors`].
    pub fn named_vars(&self) -> Vec<(String, &Var)> {
        let mut out: Vec<(String, &Var)> = Vec::new();
        fn add<'a>(out: &mut Vec<(String, &'a Var)>, name: &str, conv: &'a ConvVars) {
            out.push((format!("{name}.weight"), &conv.weight));
            out.push((format!("{name}.bias"), &conv.bias));
        }
        match &self.fusion {
            FusionVars::RfmHaar { rfus, res } => {
                for (i, rfu) in rfus.iter().enumerate() {
                    let p = format!("rfm.rfu{}", i + 1);
                    if let Some((c1, c5)) = &rfu.base_path {
                        add(&mut out, &format!("{p}.base_path.conv1"), c1);
                        add(&mut out, &format!("{p}.base_path.conv5"), c5);
                    }
                    if let Some((ca, cb)) = &rfu.mlp {
                        add(&mut out, &format!("{p}.mlp.conv_a"), ca);
                        add(&mut out, &format!("{p}.mlp.conv_b"), cb);
                    }
                    add(&mut out, &format!("{p}.reinf_path.conv1"), &rfu.reinf_conv1);
                    add(&mut out, &format!("{p}.reinf_path.conv3"), &rfu.reinf_conv3);
                }
                if let Some(res) = res {
                    for (i, re) in res.iter().enumerate() {
                        add(&mut out, &format!("rfm.re{}", i + 1), re);
                    }
                }
            }
            FusionVars::Convs(convs) => {
                for (i, conv) in convs.iter().enumerate() {
                    add(&mut out, &format!("convs.conv{}", i + 1), conv);
                }
            }
        }
        if let Some(cbam) = &self.cbam {
            add(&mut out, "cbam.mlp.conv_a", &cbam.mlp_a);
            add(&mut out, "cbam.mlp.conv_b", &cbam.mlp_b);
            add(&mut out, "cbam.spatial.conv7", &cbam.spatial);
        }
        add(&mut out, "f3_proj", &self.f3_proj);
        for (i, conv) in self.weight_gen.iter().enumerate() {
            add(&mut out, &format!("weight_gen.conv{}", i + 1), conv);
        }
        out
    }
}
