//! Positional convolutional block attention: channel attention, spatial
//! attention and dense position attention fused over one feature map.

use super::{Conv2dLayer, LinearLayer};
use crate::error::{Error, Result};
use crate::params::{Binding, Init, ParamId, Params};
use crate::tape::conv::ConvGeom;
use crate::tape::{Tape, Var};

/// Largest `H*W` the position attention accepts by default; the attention
/// matrix is `N x N`, so this bounds memory quadratically.
pub const DEFAULT_PAM_BUDGET: usize = 4096;

/// How the spatial attention map is fused into the block output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpatialFusion {
    /// Literal sum: `F_C' + F_S + F_P`, the map broadcast across channels.
    #[default]
    Additive,
    /// CBAM-style gating: `F_S ⊗ F_C' + F_P`.
    Multiplicative,
}

/// Channel attention: shared two-layer MLP over average- and max-pooled
/// channel vectors, sigmoid-squashed to `(B, C, 1, 1)`.
#[derive(Debug, Clone)]
pub struct Cam {
    channels: usize,
    hidden: usize,
    fc1: LinearLayer,
    fc2: LinearLayer,
}

impl Cam {
    pub fn new(params: &mut Params, name: &str, channels: usize) -> Self {
        let hidden = (channels / 8).max(1);
        Cam {
            channels,
            hidden,
            fc1: LinearLayer::new(params, &format!("{name}.fc1"), channels, hidden),
            fc2: LinearLayer::new(params, &format!("{name}.fc2"), hidden, channels),
        }
    }

    pub fn hidden_width(&self) -> usize {
        self.hidden
    }

    fn mlp(&self, tape: &mut Tape, bind: &Binding, x: Var) -> Var {
        let h = self.fc1.forward(tape, bind, x);
        let h = tape.relu(h);
        self.fc2.forward(tape, bind, h)
    }

    pub fn forward(&self, tape: &mut Tape, bind: &Binding, f: Var) -> Result<Var> {
        let shape = tape.shape(f).to_vec();
        if shape[1] != self.channels {
            return Err(Error::ChannelMismatch {
                expected: self.channels,
                got: shape[1],
            });
        }
        tape.check_finite(f, "cam input")?;
        let avg = tape.global_avg_pool(f);
        let mx = tape.global_max_pool(f);
        let a = self.mlp(tape, bind, avg);
        let m = self.mlp(tape, bind, mx);
        let s = tape.add(a, m);
        let s = tape.sigmoid(s);
        Ok(tape.reshape(s, &[shape[0], self.channels, 1, 1]))
    }
}

/// Spatial attention: channel-pooled maps, per-position dense transforms,
/// then a dilated 7x7 convolution squashed to a `(B, 1, H, W)` gate.
#[derive(Debug, Clone)]
pub struct Sam {
    dl_avg: Conv2dLayer,
    dl_max: Conv2dLayer,
    conv: Conv2dLayer,
}

impl Sam {
    pub fn new(params: &mut Params, name: &str) -> Self {
        Sam {
            dl_avg: Conv2dLayer::pointwise(params, &format!("{name}.dl_avg"), 1, 1),
            dl_max: Conv2dLayer::pointwise(params, &format!("{name}.dl_max"), 1, 1),
            conv: Conv2dLayer::new(
                params,
                &format!("{name}.conv"),
                ConvGeom {
                    in_ch: 2,
                    out_ch: 1,
                    kernel: 7,
                    dilation: 4,
                    groups: 1,
                },
            ),
        }
    }

    pub fn forward(&self, tape: &mut Tape, bind: &Binding, fc_prime: Var) -> Result<Var> {
        tape.check_finite(fc_prime, "sam input")?;
        let avg = tape.channel_mean(fc_prime);
        let mx = tape.channel_max(fc_prime);
        let avg = self.dl_avg.forward(tape, bind, avg);
        let mx = self.dl_max.forward(tape, bind, mx);
        let cat = tape.concat_channels(&[avg, mx]);
        let s = self.conv.forward(tape, bind, cat);
        Ok(tape.sigmoid(s))
    }
}

/// Position attention: dense softmax attention over all `N = H*W`
/// positions, scaled by a factor that starts at zero.
#[derive(Debug, Clone)]
pub struct Pam {
    channels: usize,
    budget: usize,
    key: Conv2dLayer,
    query: Conv2dLayer,
    value: Conv2dLayer,
    alpha: ParamId,
}

impl Pam {
    pub fn new(params: &mut Params, name: &str, channels: usize, budget: usize) -> Self {
        Pam {
            channels,
            budget,
            key: Conv2dLayer::pointwise(params, &format!("{name}.key"), channels, channels),
            query: Conv2dLayer::pointwise(params, &format!("{name}.query"), channels, channels),
            value: Conv2dLayer::pointwise(params, &format!("{name}.value"), channels, channels),
            alpha: params.register(&format!("{name}.alpha"), &[1], Init::Zeros),
        }
    }

    pub fn alpha_id(&self) -> ParamId {
        self.alpha
    }

    pub fn forward(&self, tape: &mut Tape, bind: &Binding, f: Var) -> Result<Var> {
        let shape = tape.shape(f).to_vec();
        if shape[1] != self.channels {
            return Err(Error::ChannelMismatch {
                expected: self.channels,
                got: shape[1],
            });
        }
        let n = shape[2] * shape[3];
        if n > self.budget {
            return Err(Error::AttentionBudget {
                positions: n,
                budget: self.budget,
            });
        }
        tape.check_finite(f, "pam input")?;
        let k = self.key.forward(tape, bind, f);
        let q = self.query.forward(tape, bind, f);
        let v = self.value.forward(tape, bind, f);
        let mixed = tape.position_attention(k, q, v);
        let scaled = tape.scale(bind.var(self.alpha), mixed);
        Ok(tape.add(scaled, f))
    }

    /// The key/query projections of `f`, for inspecting attention rows.
    pub fn kq(&self, tape: &mut Tape, bind: &Binding, f: Var) -> (Var, Var) {
        let k = self.key.forward(tape, bind, f);
        let q = self.query.forward(tape, bind, f);
        (k, q)
    }

    /// The value projection of `f`.
    pub fn project_value(&self, tape: &mut Tape, bind: &Binding, f: Var) -> Var {
        self.value.forward(tape, bind, f)
    }
}

#[derive(Debug, Clone)]
pub struct Pcbam {
    channels: usize,
    fusion: SpatialFusion,
    cam: Cam,
    sam: Sam,
    pam: Pam,
}

impl Pcbam {
    pub fn new(
        params: &mut Params,
        name: &str,
        channels: usize,
        budget: usize,
        fusion: SpatialFusion,
    ) -> Self {
        Pcbam {
            channels,
            fusion,
            cam: Cam::new(params, &format!("{name}.cam"), channels),
            sam: Sam::new(params, &format!("{name}.sam")),
            pam: Pam::new(params, &format!("{name}.pam"), channels, budget),
        }
    }

    pub fn cam(&self) -> &Cam {
        &self.cam
    }

    pub fn sam(&self) -> &Sam {
        &self.sam
    }

    pub fn pam(&self) -> &Pam {
        &self.pam
    }

    pub fn forward(&self, tape: &mut Tape, bind: &Binding, f: Var) -> Result<Var> {
        let c = tape.shape(f)[1];
        if c != self.channels {
            return Err(Error::ChannelMismatch {
                expected: self.channels,
                got: c,
            });
        }
        tape.check_finite(f, "pcbam input")?;
        let weights = self.cam.forward(tape, bind, f)?;
        let fc_prime = tape.mul_channel_map(weights, f);
        let fs = self.sam.forward(tape, bind, fc_prime)?;
        let fp = self.pam.forward(tape, bind, f)?;
        let spatial = match self.fusion {
            SpatialFusion::Additive => tape.add_spatial_map(fc_prime, fs),
            SpatialFusion::Multiplicative => tape.mul_spatial_map(fs, fc_prime),
        };
        Ok(tape.add(spatial, fp))
    }
}
