//! Pooling, channel reductions and bilinear upsampling.

use ndarray::{Array2, Array4, ArrayD};

use super::{dims4, view4, BackFn, Tape, Var};

impl Tape {
    /// 2x2 max pooling with stride 2. Requires even spatial dims.
    pub fn max_pool2(&mut self, x: Var) -> Var {
        let (b, c, h, w) = dims4(self.value(x));
        assert!(
            h % 2 == 0 && w % 2 == 0,
            "max_pool2: spatial dims must be even, got {h}x{w}"
        );
        let (oh, ow) = (h / 2, w / 2);
        let x4 = view4(self.value(x));
        let mut out = Array4::<f64>::zeros((b, c, oh, ow));
        let mut argmax = vec![0u32; b * c * oh * ow];
        let mut oi = 0;
        for bi in 0..b {
            for ci in 0..c {
                let xc = x4.slice(ndarray::s![bi, ci, .., ..]);
                let xc = xc.to_slice().unwrap();
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_at = 0usize;
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let at = (oy * 2 + dy) * w + ox * 2 + dx;
                                if xc[at] > best {
                                    best = xc[at];
                                    best_at = at;
                                }
                            }
                        }
                        out[[bi, ci, oy, ox]] = best;
                        argmax[oi] = best_at as u32;
                        oi += 1;
                    }
                }
            }
        }
        let back: BackFn = Box::new(move |vals, g| {
            let g4 = view4(g);
            let mut dx = ArrayD::<f64>::zeros(vals[x.0].raw_dim());
            {
                let dxs = dx.as_slice_mut().unwrap();
                let hw = h * w;
                let mut oi = 0;
                for bi in 0..b {
                    for ci in 0..c {
                        let base = (bi * c + ci) * hw;
                        for oy in 0..oh {
                            for ox in 0..ow {
                                dxs[base + argmax[oi] as usize] += g4[[bi, ci, oy, ox]];
                                oi += 1;
                            }
                        }
                    }
                }
            }
            vec![(x.0, dx)]
        });
        self.push(out.into_dyn(), Some(back))
    }

    /// Global average pooling to `(B, C)`.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let (b, c, h, w) = dims4(self.value(x));
        let n = (h * w) as f64;
        let x4 = view4(self.value(x));
        let mut out = Array2::<f64>::zeros((b, c));
        for bi in 0..b {
            for ci in 0..c {
                out[[bi, ci]] = x4.slice(ndarray::s![bi, ci, .., ..]).sum() / n;
            }
        }
        let back: BackFn = Box::new(move |vals, g| {
            let g2 = super::view2(g);
            let mut dx = ArrayD::<f64>::zeros(vals[x.0].raw_dim());
            let mut dx4 = dx
                .view_mut()
                .into_dimensionality::<ndarray::Ix4>()
                .unwrap();
            for bi in 0..b {
                for ci in 0..c {
                    dx4.slice_mut(ndarray::s![bi, ci, .., ..])
                        .fill(g2[[bi, ci]] / n);
                }
            }
            vec![(x.0, dx)]
        });
        self.push(out.into_dyn(), Some(back))
    }

    /// Global max pooling to `(B, C)`.
    pub fn global_max_pool(&mut self, x: Var) -> Var {
        let (b, c, h, w) = dims4(self.value(x));
        let x4 = view4(self.value(x));
        let mut out = Array2::<f64>::zeros((b, c));
        let mut argmax = vec![0u32; b * c];
        for bi in 0..b {
            for ci in 0..c {
                let xc = x4.slice(ndarray::s![bi, ci, .., ..]);
                let xc = xc.to_slice().unwrap();
                let (mut best, mut at) = (f64::NEG_INFINITY, 0usize);
                for (i, &v) in xc.iter().enumerate() {
                    if v > best {
                        best = v;
                        at = i;
                    }
                }
                out[[bi, ci]] = best;
                argmax[bi * c + ci] = at as u32;
            }
        }
        let back: BackFn = Box::new(move |vals, g| {
            let g2 = super::view2(g);
            let mut dx = ArrayD::<f64>::zeros(vals[x.0].raw_dim());
            {
                let dxs = dx.as_slice_mut().unwrap();
                let hw = h * w;
                for bi in 0..b {
                    for ci in 0..c {
                        let base = (bi * c + ci) * hw;
                        dxs[base + argmax[bi * c + ci] as usize] += g2[[bi, ci]];
                    }
                }
            }
            vec![(x.0, dx)]
        });
        self.push(out.into_dyn(), Some(back))
    }

    /// Mean over channels to `(B, 1, H, W)`.
    pub fn channel_mean(&mut self, x: Var) -> Var {
        let (b, c, h, w) = dims4(self.value(x));
        let x4 = view4(self.value(x));
        let mut out = Array4::<f64>::zeros((b, 1, h, w));
        for bi in 0..b {
            let mut acc = out.slice_mut(ndarray::s![bi, 0, .., ..]);
            for ci in 0..c {
                acc += &x4.slice(ndarray::s![bi, ci, .., ..]);
            }
            acc.mapv_inplace(|v| v / c as f64);
        }
        let back: BackFn = Box::new(move |vals, g| {
            let g4 = view4(g);
            let mut dx = ArrayD::<f64>::zeros(vals[x.0].raw_dim());
            let mut dx4 = dx
                .view_mut()
                .into_dimensionality::<ndarray::Ix4>()
                .unwrap();
            for bi in 0..b {
                let gs = g4.slice(ndarray::s![bi, 0, .., ..]);
                for ci in 0..c {
                    let mut d = dx4.slice_mut(ndarray::s![bi, ci, .., ..]);
                    d.assign(&gs);
                    d.mapv_inplace(|v| v / c as f64);
                }
            }
            vec![(x.0, dx)]
        });
        self.push(out.into_dyn(), Some(back))
    }

    /// Max over channels to `(B, 1, H, W)`.
    pub fn channel_max(&mut self, x: Var) -> Var {
        let (b, c, h, w) = dims4(self.value(x));
        let x4 = view4(self.value(x));
        let mut out = Array4::<f64>::zeros((b, 1, h, w));
        let mut argmax = vec![0u16; b * h * w];
        for bi in 0..b {
            for y in 0..h {
                for xx in 0..w {
                    let (mut best, mut at) = (f64::NEG_INFINITY, 0usize);
                    for ci in 0..c {
                        let v = x4[[bi, ci, y, xx]];
                        if v > best {
                            best = v;
                            at = ci;
                        }
                    }
                    out[[bi, 0, y, xx]] = best;
                    argmax[(bi * h + y) * w + xx] = at as u16;
                }
            }
        }
        let back: BackFn = Box::new(move |vals, g| {
            let g4 = view4(g);
            let mut dx = ArrayD::<f64>::zeros(vals[x.0].raw_dim());
            let mut dx4 = dx
                .view_mut()
                .into_dimensionality::<ndarray::Ix4>()
                .unwrap();
            for bi in 0..b {
                for y in 0..h {
                    for xx in 0..w {
                        let ci = argmax[(bi * h + y) * w + xx] as usize;
                        dx4[[bi, ci, y, xx]] += g4[[bi, 0, y, xx]];
                    }
                }
            }
            vec![(x.0, dx)]
        });
        self.push(out.into_dyn(), Some(back))
    }

    /// Bilinear upsampling by a factor of 2 (half-pixel centers, clamped).
    pub fn upsample_bilinear2(&mut self, x: Var) -> Var {
        let (b, c, h, w) = dims4(self.value(x));
        let (oh, ow) = (h * 2, w * 2);
        let wy = axis_weights(h);
        let wx = axis_weights(w);
        let x4 = view4(self.value(x));
        let mut out = Array4::<f64>::zeros((b, c, oh, ow));
        for bi in 0..b {
            for ci in 0..c {
                let xc = x4.slice(ndarray::s![bi, ci, .., ..]);
                let xc = xc.to_slice().unwrap();
                let mut oc = out.slice_mut(ndarray::s![bi, ci, .., ..]);
                let oc = oc.as_slice_mut().unwrap();
                for oy in 0..oh {
                    let (y0, y1, ty) = wy[oy];
                    for ox in 0..ow {
                        let (x0, x1, tx) = wx[ox];
                        let v = (1.0 - ty) * ((1.0 - tx) * xc[y0 * w + x0] + tx * xc[y0 * w + x1])
                            + ty * ((1.0 - tx) * xc[y1 * w + x0] + tx * xc[y1 * w + x1]);
                        oc[oy * ow + ox] = v;
                    }
                }
            }
        }
        let back: BackFn = Box::new(move |vals, g| {
            let g4 = view4(g);
            let mut dx = ArrayD::<f64>::zeros(vals[x.0].raw_dim());
            {
                let dxs = dx.as_slice_mut().unwrap();
                let hw = h * w;
                for bi in 0..b {
                    for ci in 0..c {
                        let base = (bi * c + ci) * hw;
                        let gc = g4.slice(ndarray::s![bi, ci, .., ..]);
                        let gc = gc.to_slice().unwrap();
                        for oy in 0..oh {
                            let (y0, y1, ty) = wy[oy];
                            for ox in 0..ow {
                                let (x0, x1, tx) = wx[ox];
                                let gv = gc[oy * ow + ox];
                                dxs[base + y0 * w + x0] += (1.0 - ty) * (1.0 - tx) * gv;
                                dxs[base + y0 * w + x1] += (1.0 - ty) * tx * gv;
                                dxs[base + y1 * w + x0] += ty * (1.0 - tx) * gv;
                                dxs[base + y1 * w + x1] += ty * tx * gv;
                            }
                        }
                    }
                }
            }
            vec![(x.0, dx)]
        });
        self.push(out.into_dyn(), Some(back))
    }
}

/// For each output index along one axis: source indices and lerp weight.
fn axis_weights(src: usize) -> Vec<(usize, usize, f64)> {
    let dst = src * 2;
    (0..dst)
        .map(|o| {
            let s = (o as f64 + 0.5) / 2.0 - 0.5;
            let s = s.clamp(0.0, (src - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}
