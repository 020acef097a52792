//! Multi-scale enhanced detection attention.
//!
//! Two gated residual stages mix a local 5x5 depthwise trunk with dilated
//! 7x7 depthwise branches, followed by an embedding projection and
//! sliding-window self-attention with one dilation rate per head.

use super::{Conv2dLayer, LayerNorm};
use crate::error::{Error, Result};
use crate::params::{Binding, Init, ParamId, Params};
use crate::tape::{Tape, Var};

pub const DEFAULT_HEAD_DILATIONS: [usize; 3] = [1, 2, 3];

/// Sliding-window multi-head self-attention where head `i` uses a 3x3
/// window dilated by `head_dilations[i]` (receptive field `2r+1`).
#[derive(Debug, Clone)]
pub struct MultiDilateAttention {
    channels: usize,
    head_dilations: Vec<usize>,
    q: Conv2dLayer,
    k: Conv2dLayer,
    v: Conv2dLayer,
    proj: Conv2dLayer,
}

impl MultiDilateAttention {
    /// `channels` is the attention width (must split evenly across heads);
    /// the final 1x1 projection maps back to `out_channels`.
    pub fn new(
        params: &mut Params,
        name: &str,
        channels: usize,
        out_channels: usize,
        head_dilations: &[usize],
    ) -> Result<Self> {
        if head_dilations.is_empty() {
            return Err(Error::Config("head_dilations must be non-empty".into()));
        }
        if channels % head_dilations.len() != 0 {
            return Err(Error::HeadSplit {
                channels,
                heads: head_dilations.len(),
            });
        }
        Ok(MultiDilateAttention {
            channels,
            head_dilations: head_dilations.to_vec(),
            q: Conv2dLayer::pointwise(params, &format!("{name}.q"), channels, channels),
            k: Conv2dLayer::pointwise(params, &format!("{name}.k"), channels, channels),
            v: Conv2dLayer::pointwise(params, &format!("{name}.v"), channels, channels),
            proj: Conv2dLayer::pointwise(params, &format!("{name}.proj"), channels, out_channels),
        })
    }

    pub fn head_dilations(&self) -> &[usize] {
        &self.head_dilations
    }

    pub fn forward(&self, tape: &mut Tape, bind: &Binding, x: Var) -> Result<Var> {
        let c = tape.shape(x)[1];
        if c != self.channels {
            return Err(Error::ChannelMismatch {
                expected: self.channels,
                got: c,
            });
        }
        let q = self.q.forward(tape, bind, x);
        let k = self.k.forward(tape, bind, x);
        let v = self.v.forward(tape, bind, x);
        let h = tape.windowed_attention(q, k, v, &self.head_dilations);
        Ok(self.proj.forward(tape, bind, h))
    }

    /// The q/k projections of `x`, for inspecting attention weights.
    pub fn qk(&self, tape: &mut Tape, bind: &Binding, x: Var) -> (Var, Var) {
        let q = self.q.forward(tape, bind, x);
        let k = self.k.forward(tape, bind, x);
        (q, k)
    }
}

/// One dilated mixing branch of the first residual stage.
#[derive(Debug, Clone)]
struct DilatedBranch {
    spread: Conv2dLayer, // depthwise 7x7, dilated
    proj: Conv2dLayer,   // 1x1
}

impl DilatedBranch {
    fn new(params: &mut Params, name: &str, channels: usize, dilation: usize) -> Self {
        DilatedBranch {
            spread: Conv2dLayer::depthwise(params, &format!("{name}.spread"), channels, 7, dilation),
            proj: Conv2dLayer::pointwise(params, &format!("{name}.proj"), channels, channels),
        }
    }

    /// `proj(spread(trunk)) ⊗ trunk`
    fn forward(&self, tape: &mut Tape, bind: &Binding, trunk: Var) -> Var {
        let s = self.spread.forward(tape, bind, trunk);
        let p = self.proj.forward(tape, bind, s);
        tape.mul(p, trunk)
    }
}

#[derive(Debug, Clone)]
pub struct Mseda {
    channels: usize,
    attn_channels: usize,
    ln1: LayerNorm,
    ln2: LayerNorm,
    trunk: Conv2dLayer, // shared depthwise 5x5 of stage one
    branch_a: DilatedBranch,
    branch_b: DilatedBranch,
    cat_proj: Conv2dLayer, // 1x1 fusing the two branch outputs
    gate1: Conv2dLayer,
    post1: Conv2dLayer,
    lambda1: ParamId,
    gate2: Conv2dLayer,
    local2: Conv2dLayer, // depthwise 5x5 of stage two
    mix2: Conv2dLayer,
    post2: Conv2dLayer,
    lambda2: ParamId,
    embed: Conv2dLayer,
    attn: MultiDilateAttention,
}

impl Mseda {
    pub fn new(
        params: &mut Params,
        name: &str,
        channels: usize,
        head_dilations: &[usize],
        lambda_init: f64,
    ) -> Result<Self> {
        let heads = head_dilations.len().max(1);
        // attention width: smallest multiple of the head count that fits the
        // block's channels, so any channel plan works with the default heads
        let attn_channels = channels.div_ceil(heads) * heads;
        Ok(Mseda {
            channels,
            attn_channels,
            ln1: LayerNorm::new(params, &format!("{name}.ln1"), channels),
            ln2: LayerNorm::new(params, &format!("{name}.ln2"), channels),
            trunk: Conv2dLayer::depthwise(params, &format!("{name}.trunk"), channels, 5, 1),
            branch_a: DilatedBranch::new(params, &format!("{name}.branch_a"), channels, 2),
            branch_b: DilatedBranch::new(params, &format!("{name}.branch_b"), channels, 3),
            cat_proj: Conv2dLayer::pointwise(
                params,
                &format!("{name}.cat_proj"),
                2 * channels,
                channels,
            ),
            gate1: Conv2dLayer::pointwise(params, &format!("{name}.gate1"), channels, channels),
            post1: Conv2dLayer::pointwise(params, &format!("{name}.post1"), channels, channels),
            lambda1: params.register(&format!("{name}.lambda1"), &[1], Init::Const(lambda_init)),
            gate2: Conv2dLayer::pointwise(params, &format!("{name}.gate2"), channels, channels),
            local2: Conv2dLayer::depthwise(params, &format!("{name}.local2"), channels, 5, 1),
            mix2: Conv2dLayer::pointwise(params, &format!("{name}.mix2"), channels, channels),
            post2: Conv2dLayer::pointwise(params, &format!("{name}.post2"), channels, channels),
            lambda2: params.register(&format!("{name}.lambda2"), &[1], Init::Const(lambda_init)),
            embed: Conv2dLayer::pointwise(params, &format!("{name}.embed"), channels, attn_channels),
            attn: MultiDilateAttention::new(
                params,
                &format!("{name}.attn"),
                attn_channels,
                channels,
                head_dilations,
            )?,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn attn_channels(&self) -> usize {
        self.attn_channels
    }

    pub fn attention(&self) -> &MultiDilateAttention {
        &self.attn
    }

    pub fn lambda_ids(&self) -> (ParamId, ParamId) {
        (self.lambda1, self.lambda2)
    }

    pub fn forward(&self, tape: &mut Tape, bind: &Binding, x: Var) -> Result<Var> {
        Ok(self.forward_parts(tape, bind, x)?.1)
    }

    /// Returns `(pre_embedding, output)`; the first is the feature after both
    /// gated residual stages and is exactly the input when both scaling
    /// factors are zero.
    pub fn forward_parts(&self, tape: &mut Tape, bind: &Binding, x: Var) -> Result<(Var, Var)> {
        let c = tape.shape(x)[1];
        if c != self.channels {
            return Err(Error::ChannelMismatch {
                expected: self.channels,
                got: c,
            });
        }
        tape.check_finite(x, "mseda input")?;

        // stage one: dilated branch mix, gated and scaled back into x
        let n1 = self.ln1.forward(tape, bind, x);
        let trunk = self.trunk.forward(tape, bind, n1);
        let fa = self.branch_a.forward(tape, bind, trunk);
        let fb = self.branch_b.forward(tape, bind, trunk);
        let cat = tape.concat_channels(&[fa, fb]);
        let fused = self.cat_proj.forward(tape, bind, cat);
        let g1 = self.gate1.forward(tape, bind, n1);
        let mixed1 = tape.mul(g1, fused);
        let r1 = self.post1.forward(tape, bind, mixed1);
        let r1 = tape.scale(bind.var(self.lambda1), r1);
        let x1 = tape.add(x, r1);

        // stage two: local 5x5 mix
        let n2 = self.ln2.forward(tape, bind, x1);
        let g2 = self.gate2.forward(tape, bind, n2);
        let l2 = self.local2.forward(tape, bind, n2);
        let m2 = self.mix2.forward(tape, bind, l2);
        let mixed2 = tape.mul(g2, m2);
        let r2 = self.post2.forward(tape, bind, mixed2);
        let r2 = tape.scale(bind.var(self.lambda2), r2);
        let x2 = tape.add(x1, r2);

        // embedding, then multi-dilation windowed attention
        let e = self.embed.forward(tape, bind, x2);
        let e = tape.gelu(e);
        let out = self.attn.forward(tape, bind, e)?;
        Ok((x2, out))
    }
}
