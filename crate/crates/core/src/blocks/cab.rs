//! Channel aggregation block: collects channel information through a
//! bottleneck and redistributes it with a per-channel gate that starts
//! at zero.

use super::{Conv2dLayer, LayerNorm};
use crate::error::{Error, Result};
use crate::params::{Binding, Init, ParamId, Params};
use crate::tape::conv::ConvGeom;
use crate::tape::{Tape, Var};

#[derive(Debug, Clone)]
pub struct Cab {
    channels: usize,
    ln: LayerNorm,
    expand: Conv2dLayer,  // 1x1
    spatial: Conv2dLayer, // 3x3
    gate: Conv2dLayer,    // 1x1 inside the redistribution term
    out: Conv2dLayer,     // 1x1 closing the residual
    gamma_c: ParamId,
}

/// Intermediate features of one forward pass.
pub struct CabParts {
    pub y: Var,
    pub ca: Var,
    pub out: Var,
}

impl Cab {
    pub fn new(params: &mut Params, name: &str, channels: usize) -> Self {
        Cab {
            channels,
            ln: LayerNorm::new(params, &format!("{name}.ln"), channels),
            expand: Conv2dLayer::pointwise(params, &format!("{name}.expand"), channels, channels),
            spatial: Conv2dLayer::new(
                params,
                &format!("{name}.spatial"),
                ConvGeom {
                    in_ch: channels,
                    out_ch: channels,
                    kernel: 3,
                    dilation: 1,
                    groups: 1,
                },
            ),
            gate: Conv2dLayer::pointwise(params, &format!("{name}.gate"), channels, channels),
            out: Conv2dLayer::pointwise(params, &format!("{name}.out"), channels, channels),
            gamma_c: params.register(&format!("{name}.gamma_c"), &[channels], Init::Zeros),
        }
    }

    pub fn gamma_id(&self) -> ParamId {
        self.gamma_c
    }

    pub fn forward(&self, tape: &mut Tape, bind: &Binding, x: Var) -> Result<Var> {
        Ok(self.forward_parts(tape, bind, x)?.out)
    }

    pub fn forward_parts(&self, tape: &mut Tape, bind: &Binding, x: Var) -> Result<CabParts> {
        let c = tape.shape(x)[1];
        if c != self.channels {
            return Err(Error::ChannelMismatch {
                expected: self.channels,
                got: c,
            });
        }
        tape.check_finite(x, "cab input")?;
        let n = self.ln.forward(tape, bind, x);
        let y = self.expand.forward(tape, bind, n);
        let y = self.spatial.forward(tape, bind, y);
        let y = tape.gelu(y);

        let gated = self.gate.forward(tape, bind, y);
        let gated = tape.gelu(gated);
        let residue = tape.sub(y, gated);
        let redistributed = tape.channel_scale(bind.var(self.gamma_c), residue);
        let ca = tape.add(y, redistributed);

        let closed = self.out.forward(tape, bind, ca);
        let out = tape.add(x, closed);
        Ok(CabParts { y, ca, out })
    }
}
