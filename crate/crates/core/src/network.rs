//! U-Net assembly: multi-scale attention in the encoder, positional
//! block attention on skip connections, channel aggregation in the decoder.

use ndarray::Array4;
use serde::{Deserialize, Serialize};

use crate::blocks::{
    Cab, Conv2dLayer, ImageNorm, Mseda, Pcbam, SpatialFusion, DEFAULT_HEAD_DILATIONS,
    DEFAULT_PAM_BUDGET,
};
use crate::error::{Error, Result};
use crate::params::{Binding, Params};
use crate::tape::conv::ConvGeom;
use crate::tape::{Tape, Var};

/// Network topology and block flags.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub in_channels: usize,
    pub base_channels: usize,
    pub depth: usize,
    /// length `depth + 1`; level `k` carries `base_channels * multipliers[k]`
    pub channel_multipliers: Vec<usize>,
    /// skip levels that run the positional block attention
    pub pcbam_levels: Vec<usize>,
    pub use_mseda: bool,
    pub use_pcbam: bool,
    pub use_cab: bool,
    pub head_count: usize,
    pub head_dilations: Vec<usize>,
    pub lambda_init: f64,
    pub pam_budget: usize,
    pub spatial_fusion: SpatialFusion,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            in_channels: 1,
            base_channels: 16,
            depth: 4,
            channel_multipliers: vec![1, 2, 4, 8, 16],
            pcbam_levels: default_pcbam_levels(4),
            use_mseda: true,
            use_pcbam: true,
            use_cab: true,
            head_count: DEFAULT_HEAD_DILATIONS.len(),
            head_dilations: DEFAULT_HEAD_DILATIONS.to_vec(),
            lambda_init: 0.0,
            pam_budget: DEFAULT_PAM_BUDGET,
            spatial_fusion: SpatialFusion::Additive,
        }
    }
}

/// The two deepest skip levels.
pub fn default_pcbam_levels(depth: usize) -> Vec<usize> {
    if depth >= 2 {
        vec![depth - 2, depth - 1]
    } else {
        vec![0]
    }
}

impl NetworkConfig {
    /// A small configuration for desk-scale experiments: depth 2, base 8,
    /// position attention on the deepest skip level only.
    pub fn tiny() -> Self {
        NetworkConfig {
            base_channels: 8,
            depth: 2,
            channel_multipliers: vec![1, 2, 4],
            pcbam_levels: vec![1],
            ..NetworkConfig::default()
        }
    }

    /// Baseline variant of `self` with every block flag off.
    pub fn ablation_row(&self, mseda: bool, pcbam: bool, cab: bool) -> Self {
        NetworkConfig {
            use_mseda: mseda,
            use_pcbam: pcbam,
            use_cab: cab,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            return Err(Error::Config("in_channels must be >= 1".into()));
        }
        if self.base_channels == 0 {
            return Err(Error::Config("base_channels must be >= 1".into()));
        }
        if self.depth == 0 {
            return Err(Error::Config("depth must be >= 1".into()));
        }
        if self.channel_multipliers.len() != self.depth + 1 {
            return Err(Error::Config(format!(
                "channel_multipliers must have depth + 1 = {} entries, got {}",
                self.depth + 1,
                self.channel_multipliers.len()
            )));
        }
        if self.channel_multipliers.iter().any(|&m| m == 0) {
            return Err(Error::Config("channel multipliers must be >= 1".into()));
        }
        if let Some(&bad) = self.pcbam_levels.iter().find(|&&l| l >= self.depth) {
            return Err(Error::Config(format!(
                "pcbam level {bad} out of range (levels are 0..{})",
                self.depth
            )));
        }
        if self.head_count == 0 {
            return Err(Error::Config("head_count must be >= 1".into()));
        }
        if self.head_dilations.len() != self.head_count {
            return Err(Error::Config(format!(
                "head_dilations must have head_count = {} entries, got {}",
                self.head_count,
                self.head_dilations.len()
            )));
        }
        if self.head_dilations.iter().any(|&d| d == 0) {
            return Err(Error::Config("head dilations must be >= 1".into()));
        }
        if self.pam_budget == 0 {
            return Err(Error::Config("pam_budget must be >= 1".into()));
        }
        Ok(())
    }

    /// Channels at level `k` (0 = finest, `depth` = bottleneck).
    pub fn channels_at(&self, level: usize) -> usize {
        self.base_channels * self.channel_multipliers[level]
    }

    pub fn divisor(&self) -> usize {
        1 << self.depth
    }
}

/// Two convolution + norm + GELU pairs.
#[derive(Debug, Clone)]
struct ConvStage {
    c1: Conv2dLayer,
    n1: ImageNorm,
    c2: Conv2dLayer,
    n2: ImageNorm,
}

impl ConvStage {
    fn new(params: &mut Params, name: &str, in_ch: usize, out_ch: usize) -> Self {
        let conv3 = |i, o| ConvGeom {
            in_ch: i,
            out_ch: o,
            kernel: 3,
            dilation: 1,
            groups: 1,
        };
        ConvStage {
            c1: Conv2dLayer::new(params, &format!("{name}.c1"), conv3(in_ch, out_ch)),
            n1: ImageNorm::new(params, &format!("{name}.n1"), out_ch),
            c2: Conv2dLayer::new(params, &format!("{name}.c2"), conv3(out_ch, out_ch)),
            n2: ImageNorm::new(params, &format!("{name}.n2"), out_ch),
        }
    }

    fn forward(&self, tape: &mut Tape, bind: &Binding, x: Var) -> Var {
        let x = self.c1.forward(tape, bind, x);
        let x = self.n1.forward(tape, bind, x);
        let x = tape.gelu(x);
        let x = self.c2.forward(tape, bind, x);
        let x = self.n2.forward(tape, bind, x);
        tape.gelu(x)
    }
}

#[derive(Debug, Clone)]
struct EncoderLevel {
    stage: ConvStage,
    mseda: Option<Mseda>,
}

#[derive(Debug, Clone)]
struct DecoderLevel {
    up: Conv2dLayer,
    stage: ConvStage,
    cab: Option<Cab>,
}

/// Layer plan of the network; parameters live in a separate [`Params`].
#[derive(Clone)]
pub struct Network {
    cfg: NetworkConfig,
    encoders: Vec<EncoderLevel>,
    bottleneck: ConvStage,
    skips: Vec<Option<Pcbam>>,
    decoders: Vec<DecoderLevel>,
    head: Conv2dLayer,
}

/// A network plus its parameter values.
#[derive(Clone)]
pub struct Model {
    pub net: Network,
    pub params: Params,
}

/// Build the full network; parameter initialization is deterministic in
/// `seed` and in each parameter's name.
pub fn build_mscanet(cfg: &NetworkConfig, seed: u64) -> Result<Model> {
    cfg.validate()?;
    let mut params = Params::new(seed);
    let net = Network::new(cfg, &mut params)?;
    Ok(Model { net, params })
}

impl Network {
    fn new(cfg: &NetworkConfig, params: &mut Params) -> Result<Self> {
        let mut encoders = Vec::with_capacity(cfg.depth);
        for k in 0..cfg.depth {
            let in_ch = if k == 0 {
                cfg.in_channels
            } else {
                cfg.channels_at(k - 1)
            };
            let out_ch = cfg.channels_at(k);
            let stage = ConvStage::new(params, &format!("enc{k}.stage"), in_ch, out_ch);
            let mseda = if cfg.use_mseda {
                Some(Mseda::new(
                    params,
                    &format!("enc{k}.mseda"),
                    out_ch,
                    &cfg.head_dilations,
                    cfg.lambda_init,
                )?)
            } else {
                None
            };
            encoders.push(EncoderLevel { stage, mseda });
        }

        let bottleneck = ConvStage::new(
            params,
            "bottleneck",
            cfg.channels_at(cfg.depth - 1),
            cfg.channels_at(cfg.depth),
        );

        let mut skips = Vec::with_capacity(cfg.depth);
        for k in 0..cfg.depth {
            if cfg.use_pcbam && cfg.pcbam_levels.contains(&k) {
                skips.push(Some(Pcbam::new(
                    params,
                    &format!("skip{k}.pcbam"),
                    cfg.channels_at(k),
                    cfg.pam_budget,
                    cfg.spatial_fusion,
                )));
            } else {
                skips.push(None);
            }
        }

        let mut decoders = Vec::with_capacity(cfg.depth);
        for k in 0..cfg.depth {
            let ch = cfg.channels_at(k);
            let up = Conv2dLayer::pointwise(
                params,
                &format!("dec{k}.up"),
                cfg.channels_at(k + 1),
                ch,
            );
            let stage = ConvStage::new(params, &format!("dec{k}.stage"), 2 * ch, ch);
            let cab = if cfg.use_cab {
                Some(Cab::new(params, &format!("dec{k}.cab"), ch))
            } else {
                None
            };
            decoders.push(DecoderLevel { up, stage, cab });
        }

        let head = Conv2dLayer::pointwise(params, "head", cfg.channels_at(0), 1);
        Ok(Network {
            cfg: cfg.clone(),
            encoders,
            bottleneck,
            skips,
            decoders,
            head,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    /// Full forward pass on an already-bound tape. Returns the sigmoid
    /// probability map node of shape `(B, 1, H, W)`.
    pub fn forward_tape(&self, tape: &mut Tape, bind: &Binding, images: Var) -> Result<Var> {
        let shape = tape.shape(images).to_vec();
        if shape.len() != 4 {
            return Err(Error::Shape(format!(
                "expected (B, C, H, W) input, got {shape:?}"
            )));
        }
        if shape[1] != self.cfg.in_channels {
            return Err(Error::ChannelMismatch {
                expected: self.cfg.in_channels,
                got: shape[1],
            });
        }
        let div = self.cfg.divisor();
        if shape[2] % div != 0 || shape[3] % div != 0 {
            return Err(Error::Divisibility {
                h: shape[2],
                w: shape[3],
                multiple: div,
                depth: self.cfg.depth,
            });
        }
        tape.check_finite(images, "network input")?;

        let mut x = images;
        let mut skip_vars = Vec::with_capacity(self.cfg.depth);
        for (k, level) in self.encoders.iter().enumerate() {
            let mut f = level.stage.forward(tape, bind, x);
            if let Some(mseda) = &level.mseda {
                f = mseda.forward(tape, bind, f)?;
            }
            let skip = match &self.skips[k] {
                Some(pcbam) => pcbam.forward(tape, bind, f)?,
                None => f,
            };
            skip_vars.push(skip);
            x = tape.max_pool2(f);
        }

        x = self.bottleneck.forward(tape, bind, x);

        for k in (0..self.cfg.depth).rev() {
            let level = &self.decoders[k];
            let up = tape.upsample_bilinear2(x);
            let up = level.up.forward(tape, bind, up);
            let cat = tape.concat_channels(&[skip_vars[k], up]);
            let mut f = level.stage.forward(tape, bind, cat);
            if let Some(cab) = &level.cab {
                f = cab.forward(tape, bind, f)?;
            }
            x = f;
        }

        let logits = self.head.forward(tape, bind, x);
        Ok(tape.sigmoid(logits))
    }
}

impl Model {
    /// Inference: probability map in `[0, 1]`, same spatial size as input.
    pub fn forward(&self, images: &Array4<f64>) -> Result<Array4<f64>> {
        let mut tape = Tape::new();
        let bind = self.params.bind(&mut tape);
        let x = tape.leaf(images.clone().into_dyn());
        let out = self.net.forward_tape(&mut tape, &bind, x)?;
        Ok(tape
            .value(out)
            .clone()
            .into_dimensionality::<ndarray::Ix4>()
            .expect("network output is rank 4"))
    }

    /// Total learnable scalar count; disabled blocks contribute nothing.
    pub fn count_parameters(&self) -> usize {
        self.params.total_scalars()
    }
}
