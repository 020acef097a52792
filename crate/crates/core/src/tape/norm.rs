//! Normalization layers: channel layer norm (per position) and image norm
//! (per sample, preserving spatial intensity contrast).

use ndarray::{ArrayD, IxDyn};

use super::{dims4, view4, BackFn, Tape, Var};

pub const LN_EPS: f64 = 1e-5;

impl Tape {
    /// Layer norm across channels at every `(b, h, w)` position, with
    /// per-channel affine parameters `gamma`, `beta` of shape `[C]`.
    pub fn layer_norm_channels(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (b, c, h, w) = dims4(self.value(x));
        assert_eq!(self.shape(gamma), &[c], "layer_norm: gamma shape");
        assert_eq!(self.shape(beta), &[c], "layer_norm: beta shape");
        let hw = h * w;

        let xs = self.value(x).as_slice().expect("ln input standard layout");
        let gamma_s = self.value(gamma).as_slice().unwrap();
        let beta_s = self.value(beta).as_slice().unwrap();

        let mut out = vec![0.0f64; b * c * hw];
        let mut xhat = vec![0.0f64; b * c * hw];
        let mut inv_std = vec![0.0f64; b * hw];
        let inv_c = 1.0 / c as f64;
        let mut mean = vec![0.0f64; hw];
        let mut var = vec![0.0f64; hw];
        for bi in 0..b {
            let base = bi * c * hw;
            mean.fill(0.0);
            var.fill(0.0);
            for ci in 0..c {
                let row = &xs[base + ci * hw..base + (ci + 1) * hw];
                for (m, &v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            for m in mean.iter_mut() {
                *m *= inv_c;
            }
            for ci in 0..c {
                let row = &xs[base + ci * hw..base + (ci + 1) * hw];
                for ((vv, &m), &v) in var.iter_mut().zip(&mean).zip(row) {
                    let d = v - m;
                    *vv += d * d;
                }
            }
            let istd_row = &mut inv_std[bi * hw..(bi + 1) * hw];
            for (dst, &v) in istd_row.iter_mut().zip(&var) {
                *dst = 1.0 / (v * inv_c + LN_EPS).sqrt();
            }
            for ci in 0..c {
                let (g, be) = (gamma_s[ci], beta_s[ci]);
                let row = &xs[base + ci * hw..base + (ci + 1) * hw];
                let xh_row = &mut xhat[base + ci * hw..base + (ci + 1) * hw];
                let out_row = &mut out[base + ci * hw..base + (ci + 1) * hw];
                for p in 0..hw {
                    let xh = (row[p] - mean[p]) * istd_row[p];
                    xh_row[p] = xh;
                    out_row[p] = g * xh + be;
                }
            }
        }
        let out = ArrayD::from_shape_vec(IxDyn(&[b, c, h, w]), out).unwrap();

        let back: BackFn = Box::new(move |vals, g| {
            let g4 = view4(g);
            let gs = g4.to_slice().unwrap();
            let gamma_s = vals[gamma.0].as_slice().unwrap();
            let mut dx = vec![0.0f64; b * c * hw];
            let mut dgamma = vec![0.0; c];
            let mut dbeta = vec![0.0; c];
            let inv_c = 1.0 / c as f64;
            let mut m1 = vec![0.0f64; hw];
            let mut m2 = vec![0.0f64; hw];
            for bi in 0..b {
                let base = bi * c * hw;
                m1.fill(0.0);
                m2.fill(0.0);
                for ci in 0..c {
                    let gam = gamma_s[ci];
                    let g_row = &gs[base + ci * hw..base + (ci + 1) * hw];
                    let xh_row = &xhat[base + ci * hw..base + (ci + 1) * hw];
                    let mut dg = 0.0;
                    let mut db = 0.0;
                    for p in 0..hw {
                        let gh = g_row[p] * gam;
                        m1[p] += gh;
                        m2[p] += gh * xh_row[p];
                        dg += g_row[p] * xh_row[p];
                        db += g_row[p];
                    }
                    dgamma[ci] += dg;
                    dbeta[ci] += db;
                }
                for p in 0..hw {
                    m1[p] *= inv_c;
                    m2[p] *= inv_c;
                }
                let istd_row = &inv_std[bi * hw..(bi + 1) * hw];
                for ci in 0..c {
                    let gam = gamma_s[ci];
                    let g_row = &gs[base + ci * hw..base + (ci + 1) * hw];
                    let xh_row = &xhat[base + ci * hw..base + (ci + 1) * hw];
                    let dx_row = &mut dx[base + ci * hw..base + (ci + 1) * hw];
                    for p in 0..hw {
                        dx_row[p] = istd_row[p] * (g_row[p] * gam - m1[p] - xh_row[p] * m2[p]);
                    }
                }
            }
            vec![
                (x.0, ArrayD::from_shape_vec(IxDyn(&[b, c, h, w]), dx).unwrap()),
                (
                    gamma.0,
                    ArrayD::from_shape_vec(IxDyn(&[c]), dgamma).unwrap(),
                ),
                (beta.0, ArrayD::from_shape_vec(IxDyn(&[c]), dbeta).unwrap()),
            ]
        });
        self.push(out, Some(back))
    }
}

impl Tape {
    /// Normalize each sample over all of `(C, H, W)`, then apply a
    /// per-channel affine. Unlike per-position channel norm this keeps
    /// bright pixels as outliers relative to the whole image.
    pub fn instance_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (b, c, h, w) = dims4(self.value(x));
        assert_eq!(self.shape(gamma), &[c], "instance_norm: gamma shape");
        assert_eq!(self.shape(beta), &[c], "instance_norm: beta shape");
        let chw = c * h * w;
        let hw = h * w;

        let xs = self.value(x).as_slice().expect("standard layout");
        let gamma_s = self.value(gamma).as_slice().unwrap();
        let beta_s = self.value(beta).as_slice().unwrap();

        let mut out = vec![0.0f64; b * chw];
        let mut xhat = vec![0.0f64; b * chw];
        let mut inv_std = vec![0.0f64; b];
        let inv_n = 1.0 / chw as f64;
        for bi in 0..b {
            let img = &xs[bi * chw..(bi + 1) * chw];
            let mean = img.iter().sum::<f64>() * inv_n;
            let var = img.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() * inv_n;
            let istd = 1.0 / (var + LN_EPS).sqrt();
            inv_std[bi] = istd;
            for ci in 0..c {
                let (g, be) = (gamma_s[ci], beta_s[ci]);
                let base = bi * chw + ci * hw;
                for p in 0..hw {
                    let xh = (xs[base + p] - mean) * istd;
                    xhat[base + p] = xh;
                    out[base + p] = g * xh + be;
                }
            }
        }
        let out = ArrayD::from_shape_vec(IxDyn(&[b, c, h, w]), out).unwrap();

        let back: BackFn = Box::new(move |vals, g| {
            let g4 = view4(g);
            let gs = g4.to_slice().unwrap();
            let gamma_s = vals[gamma.0].as_slice().unwrap();
            let mut dx = vec![0.0f64; b * chw];
            let mut dgamma = vec![0.0; c];
            let mut dbeta = vec![0.0; c];
            let inv_n = 1.0 / chw as f64;
            for bi in 0..b {
                // means over the whole sample of g*gamma and g*gamma*xhat
                let mut m1 = 0.0;
                let mut m2 = 0.0;
                for ci in 0..c {
                    let gam = gamma_s[ci];
                    let base = bi * chw + ci * hw;
                    let mut dg = 0.0;
                    let mut db = 0.0;
                    for p in 0..hw {
                        let gv = gs[base + p];
                        let gh = gv * gam;
                        m1 += gh;
                        m2 += gh * xhat[base + p];
                        dg += gv * xhat[base + p];
                        db += gv;
                    }
                    dgamma[ci] += dg;
                    dbeta[ci] += db;
                }
                m1 *= inv_n;
                m2 *= inv_n;
                let istd = inv_std[bi];
                for ci in 0..c {
                    let gam = gamma_s[ci];
                    let base = bi * chw + ci * hw;
                    for p in 0..hw {
                        dx[base + p] =
                            istd * (gs[base + p] * gam - m1 - xhat[base + p] * m2);
                    }
                }
            }
            vec![
                (x.0, ArrayD::from_shape_vec(IxDyn(&[b, c, h, w]), dx).unwrap()),
                (
                    gamma.0,
                    ArrayD::from_shape_vec(IxDyn(&[c]), dgamma).unwrap(),
                ),
                (beta.0, ArrayD::from_shape_vec(IxDyn(&[c]), dbeta).unwrap()),
            ]
        });
        self.push(out, Some(back))
    }
}
