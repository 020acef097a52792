//! Reverse-mode automatic differentiation over `f64` ndarrays.
//!
//! A [`Tape`] is an append-only graph of tensor nodes. Every op records a
//! backward closure; [`Tape::backward`] walks the tape in reverse and
//! accumulates gradients. Node indices grow monotonically, so reverse
//! insertion order is a valid reverse topological order.
//!
//! Everything is `f64` and single-threaded: identical inputs produce
//! bitwise-identical outputs and gradients.

mod attention;
pub mod conv;
mod norm;
mod pool;

pub use attention::{pam_softmax, window_attention_weights};
pub use norm::LN_EPS;

use ndarray::{ArrayD, ArrayView2, ArrayView4, Ix2, Ix4, IxDyn};

use crate::error::{Error, Result};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// Backward closure: given all node values and the output gradient, return
/// `(parent, contribution)` pairs.
type BackFn = Box<dyn Fn(&[ArrayD<f64>], &ArrayD<f64>) -> Vec<(usize, ArrayD<f64>)>>;

pub struct Tape {
    values: Vec<ArrayD<f64>>,
    backfns: Vec<Option<BackFn>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<ArrayD<f64>>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&ArrayD<f64>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<ArrayD<f64>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            values: Vec::new(),
            backfns: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Insert a leaf node (input or parameter).
    pub fn leaf(&mut self, value: ArrayD<f64>) -> Var {
        self.push(value, None)
    }

    pub fn value(&self, v: Var) -> &ArrayD<f64> {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.values[v.0].shape()
    }

    fn push(&mut self, value: ArrayD<f64>, back: Option<BackFn>) -> Var {
        self.values.push(value);
        self.backfns.push(back);
        Var(self.values.len() - 1)
    }

    /// Reverse pass from a length-1 `root`. Gradients of interior nodes are
    /// freed as soon as they have been propagated; leaf gradients are kept.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(
            self.values[root.0].len(),
            1,
            "backward root must be a scalar node"
        );
        let mut grads: Vec<Option<ArrayD<f64>>> = Vec::new();
        grads.resize_with(self.values.len(), || None);
        grads[root.0] = Some(ArrayD::ones(self.values[root.0].raw_dim()));

        for i in (0..=root.0).rev() {
            let Some(back) = &self.backfns[i] else {
                continue; // leaf: keep its gradient
            };
            let Some(g) = grads[i].take() else {
                continue; // node does not influence the root
            };
            for (parent, contrib) in back(&self.values, &g) {
                match &mut grads[parent] {
                    Some(acc) => *acc += &contrib,
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        Gradients { grads }
    }

    /// Errors if the node holds any NaN/Inf entry.
    pub fn check_finite(&self, v: Var, context: &str) -> Result<()> {
        if self.values[v.0].iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite {
                context: context.to_string(),
            })
        }
    }
}

// ---------------------------------------------------------------------------
// shape helpers
// ---------------------------------------------------------------------------

pub(crate) fn view4(v: &ArrayD<f64>) -> ArrayView4<'_, f64> {
    v.view()
        .into_dimensionality::<Ix4>()
        .expect("expected a rank-4 tensor")
}

pub(crate) fn view2(v: &ArrayD<f64>) -> ArrayView2<'_, f64> {
    v.view()
        .into_dimensionality::<Ix2>()
        .expect("expected a rank-2 tensor")
}

pub(crate) fn dims4(v: &ArrayD<f64>) -> (usize, usize, usize, usize) {
    let s = v.shape();
    assert_eq!(s.len(), 4, "expected a rank-4 tensor, got shape {s:?}");
    (s[0], s[1], s[2], s[3])
}

fn scalar_of(v: &ArrayD<f64>) -> f64 {
    debug_assert_eq!(v.len(), 1);
    v.as_slice().unwrap()[0]
}

// ---------------------------------------------------------------------------
// elementwise and broadcast ops
// ---------------------------------------------------------------------------

impl Tape {
    /// `a + b`, identical shapes.
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let out = &self.values[a.0] + &self.values[b.0];
        self.push(
            out,
            Some(Box::new(move |_vals, g| {
                vec![(a.0, g.clone()), (b.0, g.clone())]
            })),
        )
    }

    /// `a - b`, identical shapes.
    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub: shape mismatch");
        let out = &self.values[a.0] - &self.values[b.0];
        self.push(
            out,
            Some(Box::new(move |_vals, g| {
                vec![(a.0, g.clone()), (b.0, -g)]
            })),
        )
    }

    /// Element-wise product, identical shapes.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul: shape mismatch");
        let out = &self.values[a.0] * &self.values[b.0];
        self.push(
            out,
            Some(Box::new(move |vals, g| {
                vec![(a.0, g * &vals[b.0]), (b.0, g * &vals[a.0])]
            })),
        )
    }

    /// `s * x` where `s` is a length-1 node (learnable scaling factor).
    pub fn scale(&mut self, s: Var, x: Var) -> Var {
        let sv = scalar_of(&self.values[s.0]);
        let out = &self.values[x.0] * sv;
        self.push(
            out,
            Some(Box::new(move |vals, g| {
                let sv = scalar_of(&vals[s.0]);
                let ds = (g * &vals[x.0]).sum();
                vec![
                    (x.0, g * sv),
                    (s.0, ArrayD::from_elem(IxDyn(&[1]), ds)),
                ]
            })),
        )
    }

    /// Per-channel scale: `gamma[c] * x[b,c,h,w]` with `gamma` of shape `[C]`.
    pub fn channel_scale(&mut self, gamma: Var, x: Var) -> Var {
        let (bb, c, _h, _w) = dims4(&self.values[x.0]);
        assert_eq!(self.shape(gamma), &[c], "channel_scale: gamma shape");
        let gv = self.values[gamma.0].as_slice().unwrap().to_vec();
        let xs = view4(&self.values[x.0]);
        let mut out = xs.to_owned();
        for b in 0..bb {
            for ch in 0..c {
                out.slice_mut(ndarray::s![b, ch, .., ..])
                    .mapv_inplace(|v| v * gv[ch]);
            }
        }
        self.push(
            out.into_dyn(),
            Some(Box::new(move |vals, g| {
                let gamma_v = vals[gamma.0].as_slice().unwrap();
                let g4 = view4(g);
                let x4 = view4(&vals[x.0]);
                let mut dx = g4.to_owned();
                let mut dgamma = vec![0.0; c];
                for b in 0..bb {
                    for ch in 0..c {
                        let gs = g4.slice(ndarray::s![b, ch, .., ..]);
                        let xs = x4.slice(ndarray::s![b, ch, .., ..]);
                        dgamma[ch] += (&gs * &xs).sum();
                        dx.slice_mut(ndarray::s![b, ch, .., ..])
                            .mapv_inplace(|v| v * gamma_v[ch]);
                    }
                }
                vec![
                    (x.0, dx.into_dyn()),
                    (gamma.0, ArrayD::from_shape_vec(IxDyn(&[c]), dgamma).unwrap()),
                ]
            })),
        )
    }

    /// Broadcast multiply by per-channel weights of shape `(B, C, 1, 1)`.
    pub fn mul_channel_map(&mut self, weights: Var, x: Var) -> Var {
        let (bb, c, h, w) = dims4(&self.values[x.0]);
        assert_eq!(
            self.shape(weights),
            &[bb, c, 1, 1],
            "mul_channel_map: weight shape"
        );
        let wv = view4(&self.values[weights.0]);
        let xs = view4(&self.values[x.0]);
        let mut out = xs.to_owned();
        for b in 0..bb {
            for ch in 0..c {
                let s = wv[[b, ch, 0, 0]];
                out.slice_mut(ndarray::s![b, ch, .., ..])
                    .mapv_inplace(|v| v * s);
            }
        }
        let _ = (h, w);
        self.push(
            out.into_dyn(),
            Some(Box::new(move |vals, g| {
                let wv = view4(&vals[weights.0]);
                let x4 = view4(&vals[x.0]);
                let g4 = view4(g);
                let mut dx = g4.to_owned();
                let mut dw = ndarray::Array4::<f64>::zeros((bb, c, 1, 1));
                for b in 0..bb {
                    for ch in 0..c {
                        let gs = g4.slice(ndarray::s![b, ch, .., ..]);
                        let xs = x4.slice(ndarray::s![b, ch, .., ..]);
                        dw[[b, ch, 0, 0]] = (&gs * &xs).sum();
                        let s = wv[[b, ch, 0, 0]];
                        dx.slice_mut(ndarray::s![b, ch, .., ..])
                            .mapv_inplace(|v| v * s);
                    }
                }
                vec![(x.0, dx.into_dyn()), (weights.0, dw.into_dyn())]
            })),
        )
    }

    /// Broadcast multiply by a spatial map of shape `(B, 1, H, W)`.
    pub fn mul_spatial_map(&mut self, map: Var, x: Var) -> Var {
        let (bb, c, h, w) = dims4(&self.values[x.0]);
        assert_eq!(
            self.shape(map),
            &[bb, 1, h, w],
            "mul_spatial_map: map shape"
        );
        let mv = view4(&self.values[map.0]);
        let xs = view4(&self.values[x.0]);
        let mut out = xs.to_owned();
        for b in 0..bb {
            let m = mv.slice(ndarray::s![b, 0, .., ..]);
            for ch in 0..c {
                let mut o = out.slice_mut(ndarray::s![b, ch, .., ..]);
                o *= &m;
            }
        }
        self.push(
            out.into_dyn(),
            Some(Box::new(move |vals, g| {
                let mv = view4(&vals[map.0]);
                let x4 = view4(&vals[x.0]);
                let g4 = view4(g);
                let mut dx = g4.to_owned();
                let mut dm = ndarray::Array4::<f64>::zeros((bb, 1, h, w));
                for b in 0..bb {
                    let m = mv.slice(ndarray::s![b, 0, .., ..]);
                    let mut dms = dm.slice_mut(ndarray::s![b, 0, .., ..]);
                    for ch in 0..c {
                        let gs = g4.slice(ndarray::s![b, ch, .., ..]);
                        let xs = x4.slice(ndarray::s![b, ch, .., ..]);
                        dms += &(&gs * &xs);
                        let mut d = dx.slice_mut(ndarray::s![b, ch, .., ..]);
                        d *= &m;
                    }
                }
                vec![(x.0, dx.into_dyn()), (map.0, dm.into_dyn())]
            })),
        )
    }

    /// Broadcast add of a spatial map `(B, 1, H, W)` across channels.
    pub fn add_spatial_map(&mut self, x: Var, map: Var) -> Var {
        let (bb, c, h, w) = dims4(&self.values[x.0]);
        assert_eq!(
            self.shape(map),
            &[bb, 1, h, w],
            "add_spatial_map: map shape"
        );
        let mv = view4(&self.values[map.0]);
        let xs = view4(&self.values[x.0]);
        let mut out = xs.to_owned();
        for b in 0..bb {
            let m = mv.slice(ndarray::s![b, 0, .., ..]);
            for ch in 0..c {
                let mut o = out.slice_mut(ndarray::s![b, ch, .., ..]);
                o += &m;
            }
        }
        self.push(
            out.into_dyn(),
            Some(Box::new(move |vals, g| {
                let _ = &vals[x.0];
                let g4 = view4(g);
                let mut dm = ndarray::Array4::<f64>::zeros((bb, 1, h, w));
                for b in 0..bb {
                    let mut dms = dm.slice_mut(ndarray::s![b, 0, .., ..]);
                    for ch in 0..c {
                        dms += &g4.slice(ndarray::s![b, ch, .., ..]);
                    }
                }
                vec![(x.0, g.clone()), (map.0, dm.into_dyn())]
            })),
        )
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.values[x.0].mapv(|v| 1.0 / (1.0 + (-v).exp()));
        self.push(
            out,
            Some(Box::new(move |vals, g| {
                let s = vals[x.0].mapv(|v| 1.0 / (1.0 + (-v).exp()));
                vec![(x.0, g * &(s.mapv(|sv| sv * (1.0 - sv))))]
            })),
        )
    }

    /// GELU, tanh form. The backward pass differentiates the same
    /// approximation, so finite differences of the forward match exactly.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.values[x.0].mapv(gelu_scalar);
        self.push(
            out,
            Some(Box::new(move |vals, g| {
                vec![(x.0, g * &vals[x.0].mapv(gelu_grad_scalar))]
            })),
        )
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.values[x.0].mapv(|v| v.max(0.0));
        self.push(
            out,
            Some(Box::new(move |vals, g| {
                let mask = vals[x.0].mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                vec![(x.0, g * &mask)]
            })),
        )
    }

    /// Concatenate along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let (bb, _, h, w) = dims4(&self.values[parts[0].0]);
        let mut channels = Vec::with_capacity(parts.len());
        for p in parts {
            let (pb, pc, ph, pw) = dims4(&self.values[p.0]);
            assert_eq!((pb, ph, pw), (bb, h, w), "concat_channels: shape mismatch");
            channels.push(pc);
        }
        let total: usize = channels.iter().sum();
        let mut out = ndarray::Array4::<f64>::zeros((bb, total, h, w));
        let mut at = 0;
        for (p, &pc) in parts.iter().zip(&channels) {
            out.slice_mut(ndarray::s![.., at..at + pc, .., ..])
                .assign(&view4(&self.values[p.0]));
            at += pc;
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        self.push(
            out.into_dyn(),
            Some(Box::new(move |_vals, g| {
                let g4 = view4(g);
                let mut grads = Vec::with_capacity(ids.len());
                let mut at = 0;
                for (&id, &pc) in ids.iter().zip(&channels) {
                    let part = g4.slice(ndarray::s![.., at..at + pc, .., ..]).to_owned();
                    grads.push((id, part.into_dyn()));
                    at += pc;
                }
                grads
            })),
        )
    }

    /// Reshape to a new shape with the same number of elements.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let old_shape: Vec<usize> = self.shape(x).to_vec();
        let out = reshape_std(self.values[x.0].clone(), shape);
        self.push(
            out,
            Some(Box::new(move |_vals, g| {
                vec![(x.0, reshape_std(g.clone(), &old_shape))]
            })),
        )
    }

    /// Sum of all entries, as a length-1 node.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.values[x.0].sum();
        self.push(
            ArrayD::from_elem(IxDyn(&[1]), s),
            Some(Box::new(move |vals, g| {
                let gv = scalar_of(g);
                vec![(x.0, ArrayD::from_elem(vals[x.0].raw_dim(), gv))]
            })),
        )
    }

    /// Sum of `x ⊗ weights` with constant weights, as a length-1 node.
    /// Used by gradient checks to probe with a non-degenerate functional.
    pub fn weighted_sum(&mut self, x: Var, weights: ArrayD<f64>) -> Var {
        assert_eq!(self.shape(x), weights.shape());
        let s = (&self.values[x.0] * &weights).sum();
        self.push(
            ArrayD::from_elem(IxDyn(&[1]), s),
            Some(Box::new(move |_vals, g| {
                let gv = scalar_of(g);
                vec![(x.0, &weights * gv)]
            })),
        )
    }

    /// Mean squared error against a constant target, as a length-1 node.
    pub fn mse(&mut self, pred: Var, target: ArrayD<f64>) -> Var {
        assert_eq!(self.shape(pred), target.shape(), "mse: shape mismatch");
        let n = target.len() as f64;
        let diff = &self.values[pred.0] - &target;
        let loss = diff.mapv(|d| d * d).sum() / n;
        self.push(
            ArrayD::from_elem(IxDyn(&[1]), loss),
            Some(Box::new(move |vals, g| {
                let gv = scalar_of(g);
                let dp = (&vals[pred.0] - &target) * (2.0 * gv / n);
                vec![(pred.0, dp)]
            })),
        )
    }

    /// Dense layer on `(B, F)`: `x · wᵀ + bias` with `w: (O, F)`, `bias: (O)`.
    pub fn linear(&mut self, x: Var, w: Var, bias: Var) -> Var {
        let xv = view2(&self.values[x.0]);
        let wv = view2(&self.values[w.0]);
        let (o, f) = (wv.nrows(), wv.ncols());
        assert_eq!(xv.ncols(), f, "linear: feature dim mismatch");
        assert_eq!(self.shape(bias), &[o], "linear: bias shape");
        let bv = self.values[bias.0].as_slice().unwrap();
        let mut out = xv.dot(&wv.t());
        for mut row in out.rows_mut() {
            for (v, b) in row.iter_mut().zip(bv) {
                *v += b;
            }
        }
        self.push(
            out.into_dyn(),
            Some(Box::new(move |vals, g| {
                let g2 = view2(g);
                let xv = view2(&vals[x.0]);
                let wv = view2(&vals[w.0]);
                let dx = g2.dot(&wv);
                let dw = g2.t().dot(&xv);
                let db = g2.sum_axis(ndarray::Axis(0));
                vec![
                    (x.0, dx.into_dyn()),
                    (w.0, dw.into_dyn()),
                    (bias.0, db.into_dyn()),
                ]
            })),
        )
    }
}

pub(crate) fn gelu_scalar(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const A: f64 = 0.044715;
    0.5 * x * (1.0 + (C * (x + A * x * x * x)).tanh())
}

pub(crate) fn gelu_grad_scalar(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    const A: f64 = 0.044715;
    let u = C * (x + A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * A * x * x)
}

/// Reshape an owned dyn array, going through a contiguous copy if needed.
pub(crate) fn reshape_std(arr: ArrayD<f64>, shape: &[usize]) -> ArrayD<f64> {
    let arr = if arr.is_standard_layout() {
        arr
    } else {
        ArrayD::from_shape_vec(arr.raw_dim(), arr.iter().copied().collect()).unwrap()
    };
    arr.into_shape_with_order(IxDyn(shape))
        .expect("reshape: element count mismatch")
}
