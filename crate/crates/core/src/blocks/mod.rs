//! The three building blocks of the segmentation network: multi-scale
//! enhanced detection attention (encoder), positional convolutional block
//! attention (skip connections) and channel aggregation (decoder).

mod cab;
mod mseda;
mod pcbam;

pub use cab::Cab;
pub use mseda::{Mseda, MultiDilateAttention, DEFAULT_HEAD_DILATIONS};
pub use pcbam::{Cam, Pam, Pcbam, Sam, SpatialFusion, DEFAULT_PAM_BUDGET};

use crate::params::{Binding, Init, ParamId, Params};
use crate::tape::conv::ConvGeom;
use crate::tape::{Tape, Var};

/// Convolution layer: weight + bias pair over a fixed geometry.
#[derive(Debug, Clone)]
pub struct Conv2dLayer {
    w: ParamId,
    b: ParamId,
    geom: ConvGeom,
}

impl Conv2dLayer {
    pub fn new(params: &mut Params, name: &str, geom: ConvGeom) -> Self {
        let fan_in = (geom.in_ch / geom.groups) * geom.kernel * geom.kernel;
        let w = params.register(
            &format!("{name}.w"),
            &[
                geom.out_ch,
                geom.in_ch / geom.groups,
                geom.kernel,
                geom.kernel,
            ],
            Init::FanIn(fan_in),
        );
        let b = params.register(&format!("{name}.b"), &[geom.out_ch], Init::Zeros);
        Conv2dLayer { w, b, geom }
    }

    pub fn pointwise(params: &mut Params, name: &str, in_ch: usize, out_ch: usize) -> Self {
        Self::new(params, name, ConvGeom::pointwise(in_ch, out_ch))
    }

    pub fn depthwise(
        params: &mut Params,
        name: &str,
        channels: usize,
        kernel: usize,
        dilation: usize,
    ) -> Self {
        Self::new(
            params,
            name,
            ConvGeom {
                in_ch: channels,
                out_ch: channels,
                kernel,
                dilation,
                groups: channels,
            },
        )
    }

    pub fn forward(&self, tape: &mut Tape, bind: &Binding, x: Var) -> Var {
        tape.conv2d(x, bind.var(self.w), bind.var(self.b), self.geom)
    }

    pub fn out_channels(&self) -> usize {
        self.geom.out_ch
    }
}

/// Channel layer norm with learnable affine.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    gamma: ParamId,
    beta: ParamId,
}

impl LayerNorm {
    pub fn new(params: &mut Params, name: &str, channels: usize) -> Self {
        LayerNorm {
            gamma: params.register(&format!("{name}.gamma"), &[channels], Init::Ones),
            beta: params.register(&format!("{name}.beta"), &[channels], Init::Zeros),
        }
    }

    pub fn forward(&self, tape: &mut Tape, bind: &Binding, x: Var) -> Var {
        tape.layer_norm_channels(x, bind.var(self.gamma), bind.var(self.beta))
    }
}

/// Per-image normalization with per-channel affine; preserves spatial
/// intensity contrast, which per-position channel norm would flatten.
#[derive(Debug, Clone)]
pub struct ImageNorm {
    gamma: ParamId,
    beta: ParamId,
}

impl ImageNorm {
    pub fn new(params: &mut Params, name: &str, channels: usize) -> Self {
        ImageNorm {
            gamma: params.register(&format!("{name}.gamma"), &[channels], Init::Ones),
            beta: params.register(&format!("{name}.beta"), &[channels], Init::Zeros),
        }
    }

    pub fn forward(&self, tape: &mut Tape, bind: &Binding, x: Var) -> Var {
        tape.instance_norm(x, bind.var(self.gamma), bind.var(self.beta))
    }
}

/// Dense layer on `(B, F)` activations.
#[derive(Debug, Clone)]
pub struct LinearLayer {
    w: ParamId,
    b: ParamId,
}

impl LinearLayer {
    pub fn new(params: &mut Params, name: &str, in_f: usize, out_f: usize) -> Self {
        LinearLayer {
            w: params.register(&format!("{name}.w"), &[out_f, in_f], Init::FanIn(in_f)),
            b: params.register(&format!("{name}.b"), &[out_f], Init::Zeros),
        }
    }

    pub fn forward(&self, tape: &mut Tape, bind: &Binding, x: Var) -> Var {
        tape.linear(x, bind.var(self.w), bind.var(self.b))
    }
}
