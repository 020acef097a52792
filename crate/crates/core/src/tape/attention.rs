//! Fused attention nodes: sliding-window multi-dilation self-attention and
//! dense position attention over flattened spatial locations.

use ndarray::{Array2, Array4, Array5, ArrayD, ArrayView4};

use super::{dims4, view4, BackFn, Tape, Var};

/// Offsets of the 3x3 window at dilation `r`, in scan order. A dilation of
/// `r` gives an effective receptive field of `2r+1`.
fn window_offsets(r: isize) -> [(isize, isize); 9] {
    let d = [-r, 0, r];
    let mut out = [(0, 0); 9];
    let mut t = 0;
    for &dy in &d {
        for &dx in &d {
            out[t] = (dy, dx);
            t += 1;
        }
    }
    out
}

/// Softmax attention weights for every query position of every head.
///
/// Returns `(B, heads, H, W, 9)`; window slots that fall outside the image
/// carry zero weight, so each row sums to 1 over its valid slots.
pub fn window_attention_weights(
    q: &ArrayView4<f64>,
    k: &ArrayView4<f64>,
    head_dilations: &[usize],
) -> Array5<f64> {
    let (b, c, h, w) = q.dim();
    let heads = head_dilations.len();
    assert_eq!(c % heads, 0, "channels must split evenly across heads");
    let cg = c / heads;
    let scale = 1.0 / (cg as f64).sqrt();
    let qs = q.to_slice().expect("q must be standard layout");
    let ks = k.to_slice().expect("k must be standard layout");
    let mut s = Array5::<f64>::zeros((b, heads, h, w, 9));
    let hw = h * w;
    for bi in 0..b {
        for (hd, &r) in head_dilations.iter().enumerate() {
            let offs = window_offsets(r as isize);
            let c0 = hd * cg;
            for y in 0..h {
                for x in 0..w {
                    let mut logits = [f64::NEG_INFINITY; 9];
                    let mut max = f64::NEG_INFINITY;
                    for (t, &(dy, dx)) in offs.iter().enumerate() {
                        let (sy, sx) = (y as isize + dy, x as isize + dx);
                        if sy < 0 || sy >= h as isize || sx < 0 || sx >= w as isize {
                            continue;
                        }
                        let (sy, sx) = (sy as usize, sx as usize);
                        let mut dot = 0.0;
                        for ci in c0..c0 + cg {
                            dot += qs[(bi * c + ci) * hw + y * w + x]
                                * ks[(bi * c + ci) * hw + sy * w + sx];
                        }
                        let l = dot * scale;
                        logits[t] = l;
                        if l > max {
                            max = l;
                        }
                    }
                    let mut denom = 0.0;
                    let mut e = [0.0f64; 9];
                    for t in 0..9 {
                        if logits[t] > f64::NEG_INFINITY {
                            e[t] = (logits[t] - max).exp();
                            denom += e[t];
                        }
                    }
                    for t in 0..9 {
                        s[[bi, hd, y, x, t]] = e[t] / denom;
                    }
                }
            }
        }
    }
    s
}

impl Tape {
    /// Sliding-window self-attention with one dilation rate per head.
    ///
    /// `q`, `k`, `v` all `(B, C, H, W)` with `C` divisible by the head count;
    /// head `i` attends over a 3x3 window dilated by `head_dilations[i]`
    /// (softmax over the valid slots of each window).
    pub fn windowed_attention(&mut self, q: Var, k: Var, v: Var, head_dilations: &[usize]) -> Var {
        let (b, c, h, w) = dims4(self.value(q));
        assert_eq!(self.shape(k), self.shape(q), "windowed_attention: k shape");
        assert_eq!(self.shape(v), self.shape(q), "windowed_attention: v shape");
        let heads = head_dilations.len();
        assert_eq!(c % heads, 0, "windowed_attention: head split");
        let cg = c / heads;
        let dil: Vec<usize> = head_dilations.to_vec();

        let s = window_attention_weights(&view4(self.value(q)), &view4(self.value(k)), &dil);
        let vs4 = view4(self.value(v));
        let vsl = vs4.to_slice().unwrap();
        let mut out = Array4::<f64>::zeros((b, c, h, w));
        let hw = h * w;
        {
            let os = out.as_slice_mut().unwrap();
            for bi in 0..b {
                for (hd, &r) in dil.iter().enumerate() {
                    let offs = window_offsets(r as isize);
                    let c0 = hd * cg;
                    for y in 0..h {
                        for x in 0..w {
                            for (t, &(dy, dx)) in offs.iter().enumerate() {
                                let wgt = s[[bi, hd, y, x, t]];
                                if wgt == 0.0 {
                                    continue;
                                }
                                let (sy, sx) =
                                    ((y as isize + dy) as usize, (x as isize + dx) as usize);
                                for ci in c0..c0 + cg {
                                    os[(bi * c + ci) * hw + y * w + x] +=
                                        wgt * vsl[(bi * c + ci) * hw + sy * w + sx];
                                }
                            }
                        }
                    }
                }
            }
        }

        let back: BackFn = Box::new(move |vals, g| {
            let g4 = view4(g);
            let gs = g4.to_slice().unwrap();
            let qs4 = view4(&vals[q.0]);
            let qs = qs4.to_slice().unwrap();
            let ks4 = view4(&vals[k.0]);
            let ks = ks4.to_slice().unwrap();
            let vs4 = view4(&vals[v.0]);
            let vsl = vs4.to_slice().unwrap();
            let scale = 1.0 / (cg as f64).sqrt();

            let mut dq = vec![0.0; b * c * hw];
            let mut dk = vec![0.0; b * c * hw];
            let mut dv = vec![0.0; b * c * hw];
            for bi in 0..b {
                for (hd, &r) in dil.iter().enumerate() {
                    let offs = window_offsets(r as isize);
                    let c0 = hd * cg;
                    for y in 0..h {
                        for x in 0..w {
                            // ds_t = sum_c g[c,y,x] * v[c,sy,sx]; dv += s_t * g
                            let mut ds = [0.0f64; 9];
                            let mut dot_ds_s = 0.0;
                            for (t, &(dy, dx)) in offs.iter().enumerate() {
                                let wgt = s[[bi, hd, y, x, t]];
                                if wgt == 0.0 {
                                    continue;
                                }
                                let (sy, sx) =
                                    ((y as isize + dy) as usize, (x as isize + dx) as usize);
                                let mut acc = 0.0;
                                for ci in c0..c0 + cg {
                                    let gi = gs[(bi * c + ci) * hw + y * w + x];
                                    acc += gi * vsl[(bi * c + ci) * hw + sy * w + sx];
                                    dv[(bi * c + ci) * hw + sy * w + sx] += wgt * gi;
                                }
                                ds[t] = acc;
                                dot_ds_s += acc * wgt;
                            }
                            // softmax backward, then into q and k
                            for (t, &(dy, dx)) in offs.iter().enumerate() {
                                let wgt = s[[bi, hd, y, x, t]];
                                if wgt == 0.0 {
                                    continue;
                                }
                                let dl = wgt * (ds[t] - dot_ds_s) * scale;
                                if dl == 0.0 {
                                    continue;
                                }
                                let (sy, sx) =
                                    ((y as isize + dy) as usize, (x as isize + dx) as usize);
                                for ci in c0..c0 + cg {
                                    dq[(bi * c + ci) * hw + y * w + x] +=
                                        dl * ks[(bi * c + ci) * hw + sy * w + sx];
                                    dk[(bi * c + ci) * hw + sy * w + sx] +=
                                        dl * qs[(bi * c + ci) * hw + y * w + x];
                                }
                            }
                        }
                    }
                }
            }
            let dim = vals[q.0].raw_dim();
            vec![
                (q.0, ArrayD::from_shape_vec(dim.clone(), dq).unwrap()),
                (k.0, ArrayD::from_shape_vec(dim.clone(), dk).unwrap()),
                (v.0, ArrayD::from_shape_vec(dim, dv).unwrap()),
            ]
        });
        self.push(out.into_dyn(), Some(back))
    }
}

/// Row-stochastic attention matrix of the position attention module.
///
/// `key` and `query` are the `(B, C, H, W)` projections that form the
/// logits `L[j, i] = key_i . query_j`; the returned `(B, N, N)` tensor is
/// softmax-normalized over `i` (last axis), `N = H * W`.
pub fn pam_softmax(key: &ArrayView4<f64>, query: &ArrayView4<f64>) -> ndarray::Array3<f64> {
    let (b, c, h, w) = key.dim();
    let n = h * w;
    let mut out = ndarray::Array3::<f64>::zeros((b, n, n));
    for bi in 0..b {
        let k_cn = key
            .slice(ndarray::s![bi, .., .., ..])
            .into_shape_with_order((c, n))
            .unwrap();
        let q_cn = query
            .slice(ndarray::s![bi, .., .., ..])
            .into_shape_with_order((c, n))
            .unwrap();
        let mut logits = q_cn.t().dot(&k_cn); // (N, N): [j, i]
        softmax_rows(&mut logits);
        out.slice_mut(ndarray::s![bi, .., ..]).assign(&logits);
    }
    out
}

fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            denom += *v;
        }
        for v in row.iter_mut() {
            *v /= denom;
        }
    }
}

impl Tape {
    /// Position attention mix: from projections `key`, `query`, `value`
    /// (all `(B, C, H, W)`), computes `out_j = sum_i s_ji * value_i` with
    /// `s = softmax_i(key_i . query_j)`. Quadratic in `N = H * W`.
    pub fn position_attention(&mut self, key: Var, query: Var, value: Var) -> Var {
        let (b, c, h, w) = dims4(self.value(key));
        assert_eq!(self.shape(query), self.shape(key));
        assert_eq!(self.shape(value), self.shape(key));
        let n = h * w;

        let s = pam_softmax(&view4(self.value(key)), &view4(self.value(query)));
        let mut out = Array4::<f64>::zeros((b, c, h, w));
        for bi in 0..b {
            let d_cn = view4(self.value(value))
                .slice_move(ndarray::s![bi, .., .., ..])
                .into_shape_with_order((c, n))
                .unwrap()
                .to_owned();
            let sm = s.slice(ndarray::s![bi, .., ..]);
            let o_cn = d_cn.dot(&sm.t()); // (C, N): out[c, j] = sum_i d[c, i] s[j, i]
            out.slice_mut(ndarray::s![bi, .., .., ..])
                .assign(&o_cn.into_shape_with_order((c, h, w)).unwrap());
        }

        let back: BackFn = Box::new(move |vals, g| {
            let g4 = view4(g);
            let mut dkey = Array4::<f64>::zeros((b, c, h, w));
            let mut dquery = Array4::<f64>::zeros((b, c, h, w));
            let mut dvalue = Array4::<f64>::zeros((b, c, h, w));
            for bi in 0..b {
                let go_cn = g4
                    .slice(ndarray::s![bi, .., .., ..])
                    .into_shape_with_order((c, n))
                    .unwrap();
                let k_cn = view4(&vals[key.0])
                    .slice_move(ndarray::s![bi, .., .., ..])
                    .into_shape_with_order((c, n))
                    .unwrap()
                    .to_owned();
                let q_cn = view4(&vals[query.0])
                    .slice_move(ndarray::s![bi, .., .., ..])
                    .into_shape_with_order((c, n))
                    .unwrap()
                    .to_owned();
                let d_cn = view4(&vals[value.0])
                    .slice_move(ndarray::s![bi, .., .., ..])
                    .into_shape_with_order((c, n))
                    .unwrap()
                    .to_owned();
                let sm = s.slice(ndarray::s![bi, .., ..]);

                // out = d . s^T
                let dd = go_cn.dot(&sm); // (C, N)
                let mut dsm = go_cn.t().dot(&d_cn); // (N, N): [j, i]
                // softmax backward per row
                for (mut drow, srow) in dsm.rows_mut().into_iter().zip(sm.rows()) {
                    let dot: f64 = drow
                        .iter()
                        .zip(srow.iter())
                        .map(|(a, b)| a * b)
                        .sum();
                    for (dv, sv) in drow.iter_mut().zip(srow.iter()) {
                        *dv = sv * (*dv - dot);
                    }
                }
                // L = q^T . k  =>  dq = k . dL^T, dk = q . dL
                let dq = k_cn.dot(&dsm.t());
                let dk = q_cn.dot(&dsm);
                dkey.slice_mut(ndarray::s![bi, .., .., ..])
                    .assign(&dk.into_shape_with_order((c, h, w)).unwrap());
                dquery
                    .slice_mut(ndarray::s![bi, .., .., ..])
                    .assign(&dq.into_shape_with_order((c, h, w)).unwrap());
                dvalue
                    .slice_mut(ndarray::s![bi, .., .., ..])
                    .assign(&dd.into_shape_with_order((c, h, w)).unwrap());
            }
            vec![
                (key.0, dkey.into_dyn()),
                (query.0, dquery.into_dyn()),
                (value.0, dvalue.into_dyn()),
            ]
        });
        self.push(out.into_dyn(), Some(back))
    }
}
