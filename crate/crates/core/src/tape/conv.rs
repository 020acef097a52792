//! 2-D convolution nodes. Stride is always 1 and padding always preserves
//! the spatial shape (`pad = dilation * (k - 1) / 2`, odd kernels only).

use ndarray::{Array2, Array4, ArrayD, IxDyn};

use super::{dims4, view4, BackFn, Tape, Var};

/// Geometry of a convolution, fixed at layer construction.
#[derive(Debug, Clone, Copy)]
pub struct ConvGeom {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl ConvGeom {
    pub fn pointwise(in_ch: usize, out_ch: usize) -> Self {
        ConvGeom {
            in_ch,
            out_ch,
            kernel: 1,
            dilation: 1,
            groups: 1,
        }
    }

    pub fn pad(&self) -> usize {
        self.dilation * (self.kernel - 1) / 2
    }
}

impl Tape {
    /// `conv2d(x, w) + bias` with shape-preserving padding.
    ///
    /// `x: (B, Cin, H, W)`, `w: (Cout, Cin/G, k, k)`, `bias: (Cout)`.
    pub fn conv2d(&mut self, x: Var, w: Var, bias: Var, geom: ConvGeom) -> Var {
        let (_, c, _, _) = dims4(self.value(x));
        assert_eq!(c, geom.in_ch, "conv2d: input channel mismatch");
        assert_eq!(
            self.shape(w),
            &[
                geom.out_ch,
                geom.in_ch / geom.groups,
                geom.kernel,
                geom.kernel
            ],
            "conv2d: weight shape"
        );
        assert_eq!(geom.kernel % 2, 1, "conv2d: kernel must be odd");
        assert_eq!(self.shape(bias), &[geom.out_ch], "conv2d: bias shape");

        let out = conv_forward(self.value(x), self.value(w), self.value(bias), geom);
        let back: BackFn = Box::new(move |vals, g| {
            let (dx, dw, db) = conv_backward(&vals[x.0], &vals[w.0], g, geom);
            vec![(x.0, dx), (w.0, dw), (bias.0, db)]
        });
        self.push(out, Some(back))
    }
}

fn is_depthwise(geom: ConvGeom) -> bool {
    geom.groups == geom.in_ch && geom.out_ch == geom.in_ch
}

fn conv_forward(x: &ArrayD<f64>, w: &ArrayD<f64>, bias: &ArrayD<f64>, geom: ConvGeom) -> ArrayD<f64> {
    let (b, _, h, wd) = dims4(x);
    let mut out = Array4::<f64>::zeros((b, geom.out_ch, h, wd));
    let bias_s = bias.as_slice().unwrap();

    if is_depthwise(geom) {
        let xs = x.as_slice().unwrap();
        let ws = w.as_slice().unwrap();
        let os = out.as_slice_mut().unwrap();
        let (k, hw) = (geom.kernel, h * wd);
        let d = geom.dilation as isize;
        let p = geom.pad() as isize;
        for bc in 0..b * geom.in_ch {
            let c = bc % geom.in_ch;
            let xc = &xs[bc * hw..(bc + 1) * hw];
            let oc = &mut os[bc * hw..(bc + 1) * hw];
            for i in 0..k {
                let dy = i as isize * d - p;
                for j in 0..k {
                    let dxo = j as isize * d - p;
                    let wij = ws[c * k * k + i * k + j];
                    shifted_axpy(oc, xc, wij, dy, dxo, h, wd);
                }
            }
        }
        for bi in 0..b {
            for co in 0..geom.out_ch {
                out.slice_mut(ndarray::s![bi, co, .., ..])
                    .mapv_inplace(|v| v + bias_s[co]);
            }
        }
        return out.into_dyn();
    }

    if geom.kernel == 1 && geom.groups == 1 {
        // pointwise: one GEMM per image
        let hw = h * wd;
        let w2 = w
            .view()
            .into_shape_with_order((geom.out_ch, geom.in_ch))
            .unwrap();
        let x4 = view4(x);
        for bi in 0..b {
            let xm = x4
                .slice(ndarray::s![bi, .., .., ..])
                .into_shape_with_order((geom.in_ch, hw))
                .unwrap();
            let om = w2.dot(&xm); // (Cout, HW)
            out.slice_mut(ndarray::s![bi, .., .., ..])
                .assign(&om.into_shape_with_order((geom.out_ch, h, wd)).unwrap());
        }
    } else {
        let cg_in = geom.in_ch / geom.groups;
        let cg_out = geom.out_ch / geom.groups;
        let k2 = geom.kernel * geom.kernel;
        let hw = h * wd;
        let mut cols = Array2::<f64>::zeros((cg_in * k2, hw));
        let w2 = w
            .view()
            .into_shape_with_order((geom.out_ch, cg_in * k2))
            .unwrap();
        let x4 = view4(x);
        for bi in 0..b {
            for g in 0..geom.groups {
                im2col(&x4, bi, g * cg_in, cg_in, h, wd, geom, &mut cols);
                let wg = w2.slice(ndarray::s![g * cg_out..(g + 1) * cg_out, ..]);
                let om = wg.dot(&cols); // (CgOut, HW)
                out.slice_mut(ndarray::s![bi, g * cg_out..(g + 1) * cg_out, .., ..])
                    .assign(&om.into_shape_with_order((cg_out, h, wd)).unwrap());
            }
        }
    }

    for bi in 0..b {
        for co in 0..geom.out_ch {
            out.slice_mut(ndarray::s![bi, co, .., ..])
                .mapv_inplace(|v| v + bias_s[co]);
        }
    }
    out.into_dyn()
}

fn conv_backward(
    x: &ArrayD<f64>,
    w: &ArrayD<f64>,
    g: &ArrayD<f64>,
    geom: ConvGeom,
) -> (ArrayD<f64>, ArrayD<f64>, ArrayD<f64>) {
    let (b, _, h, wd) = dims4(x);
    let hw = h * wd;
    let g4 = view4(g);
    let x4 = view4(x);

    let mut db = vec![0.0; geom.out_ch];
    for bi in 0..b {
        for co in 0..geom.out_ch {
            db[co] += g4.slice(ndarray::s![bi, co, .., ..]).sum();
        }
    }
    let db = ArrayD::from_shape_vec(IxDyn(&[geom.out_ch]), db).unwrap();

    if is_depthwise(geom) {
        let xs = x.as_slice().unwrap();
        let ws = w.as_slice().unwrap();
        let gs = g4.to_slice().unwrap();
        let (k, hw) = (geom.kernel, h * wd);
        let d = geom.dilation as isize;
        let p = geom.pad() as isize;
        let mut dx = vec![0.0f64; b * geom.in_ch * hw];
        let mut dw = vec![0.0f64; geom.in_ch * k * k];
        for bc in 0..b * geom.in_ch {
            let c = bc % geom.in_ch;
            let xc = &xs[bc * hw..(bc + 1) * hw];
            let gc = &gs[bc * hw..(bc + 1) * hw];
            let dxc = &mut dx[bc * hw..(bc + 1) * hw];
            for i in 0..k {
                let dy = i as isize * d - p;
                for j in 0..k {
                    let dxo = j as isize * d - p;
                    // dW[c,i,j] += sum over positions of g * shifted x
                    dw[c * k * k + i * k + j] += shifted_dot(gc, xc, dy, dxo, h, wd);
                    // dx gets g scattered with the opposite shift
                    let wij = ws[c * k * k + i * k + j];
                    shifted_axpy_scatter(dxc, gc, wij, dy, dxo, h, wd);
                }
            }
        }
        let dx = ArrayD::from_shape_vec(IxDyn(&[b, geom.in_ch, h, wd]), dx).unwrap();
        let dw =
            ArrayD::from_shape_vec(IxDyn(&[geom.out_ch, 1, k, k]), dw).unwrap();
        return (dx, dw, db);
    }

    if geom.kernel == 1 && geom.groups == 1 {
        let w2 = w
            .view()
            .into_shape_with_order((geom.out_ch, geom.in_ch))
            .unwrap();
        let mut dx = Array4::<f64>::zeros((b, geom.in_ch, h, wd));
        let mut dw = Array2::<f64>::zeros((geom.out_ch, geom.in_ch));
        for bi in 0..b {
            let gm = g4
                .slice(ndarray::s![bi, .., .., ..])
                .into_shape_with_order((geom.out_ch, hw))
                .unwrap();
            let xm = x4
                .slice(ndarray::s![bi, .., .., ..])
                .into_shape_with_order((geom.in_ch, hw))
                .unwrap();
            dw += &gm.dot(&xm.t());
            let dxm = w2.t().dot(&gm); // (Cin, HW)
            dx.slice_mut(ndarray::s![bi, .., .., ..])
                .assign(&dxm.into_shape_with_order((geom.in_ch, h, wd)).unwrap());
        }
        let dw = dw
            .into_shape_with_order(IxDyn(&[geom.out_ch, geom.in_ch, 1, 1]))
            .unwrap();
        return (dx.into_dyn(), dw, db);
    }

    let cg_in = geom.in_ch / geom.groups;
    let cg_out = geom.out_ch / geom.groups;
    let k2 = geom.kernel * geom.kernel;
    let mut cols = Array2::<f64>::zeros((cg_in * k2, hw));
    let w2 = w
        .view()
        .into_shape_with_order((geom.out_ch, cg_in * k2))
        .unwrap();
    let mut dx = Array4::<f64>::zeros((b, geom.in_ch, h, wd));
    let mut dw = Array2::<f64>::zeros((geom.out_ch, cg_in * k2));
    for bi in 0..b {
        for g in 0..geom.groups {
            im2col(&x4, bi, g * cg_in, cg_in, h, wd, geom, &mut cols);
            let gm = g4
                .slice(ndarray::s![bi, g * cg_out..(g + 1) * cg_out, .., ..])
                .into_shape_with_order((cg_out, hw))
                .unwrap();
            dw.slice_mut(ndarray::s![g * cg_out..(g + 1) * cg_out, ..])
                .scaled_add(1.0, &gm.dot(&cols.t()));
            let wg = w2.slice(ndarray::s![g * cg_out..(g + 1) * cg_out, ..]);
            let dcols = wg.t().dot(&gm); // (CgIn*k2, HW)
            col2im(&mut dx, bi, g * cg_in, cg_in, h, wd, geom, &dcols);
        }
    }
    let dw = dw
        .into_shape_with_order(IxDyn(&[geom.out_ch, cg_in, geom.kernel, geom.kernel]))
        .unwrap();
    (dx.into_dyn(), dw, db)
}

/// Valid destination x range `[lo, hi)` for a horizontal shift `dxo`.
#[inline]
fn shift_range(w: usize, dxo: isize) -> (usize, usize) {
    let lo = ((-dxo).max(0) as usize).min(w);
    let hi = ((w as isize - dxo).clamp(0, w as isize)) as usize;
    (lo, hi.max(lo))
}

/// `out[y, x] += a * src[y + dy, x + dxo]` over the valid region.
fn shifted_axpy(out: &mut [f64], src: &[f64], a: f64, dy: isize, dxo: isize, h: usize, w: usize) {
    let (x_lo, x_hi) = shift_range(w, dxo);
    if x_hi <= x_lo {
        return;
    }
    for y in 0..h {
        let sy = y as isize + dy;
        if sy < 0 || sy >= h as isize {
            continue;
        }
        let s_lo = (x_lo as isize + dxo) as usize + sy as usize * w;
        let o = &mut out[y * w + x_lo..y * w + x_hi];
        let s = &src[s_lo..s_lo + (x_hi - x_lo)];
        for (ov, sv) in o.iter_mut().zip(s) {
            *ov += a * sv;
        }
    }
}

/// `sum over valid (y, x) of g[y, x] * src[y + dy, x + dxo]`.
fn shifted_dot(g: &[f64], src: &[f64], dy: isize, dxo: isize, h: usize, w: usize) -> f64 {
    let (x_lo, x_hi) = shift_range(w, dxo);
    if x_hi <= x_lo {
        return 0.0;
    }
    let mut acc = 0.0;
    for y in 0..h {
        let sy = y as isize + dy;
        if sy < 0 || sy >= h as isize {
            continue;
        }
        let s_lo = (x_lo as isize + dxo) as usize + sy as usize * w;
        let gr = &g[y * w + x_lo..y * w + x_hi];
        let sr = &src[s_lo..s_lo + (x_hi - x_lo)];
        for (gv, sv) in gr.iter().zip(sr) {
            acc += gv * sv;
        }
    }
    acc
}

/// `out[y + dy, x + dxo] += a * g[y, x]` over the valid region (the
/// transpose scatter of `shifted_axpy`).
fn shifted_axpy_scatter(
    out: &mut [f64],
    g: &[f64],
    a: f64,
    dy: isize,
    dxo: isize,
    h: usize,
    w: usize,
) {
    let (x_lo, x_hi) = shift_range(w, dxo);
    if x_hi <= x_lo {
        return;
    }
    for y in 0..h {
        let sy = y as isize + dy;
        if sy < 0 || sy >= h as isize {
            continue;
        }
        let s_lo = (x_lo as isize + dxo) as usize + sy as usize * w;
        let o = &mut out[s_lo..s_lo + (x_hi - x_lo)];
        let gr = &g[y * w + x_lo..y * w + x_hi];
        for (ov, gv) in o.iter_mut().zip(gr) {
            *ov += a * gv;
        }
    }
}

/// Fill `cols[(ci*k*k + i*k + j), y*W + x] = x[b, c0+ci, y + i*d - p, x + j*d - p]`
/// with zeros where the source index falls outside the image.
#[allow(clippy::too_many_arguments)]
fn im2col(
    x: &ndarray::ArrayView4<f64>,
    b: usize,
    c0: usize,
    cg: usize,
    h: usize,
    w: usize,
    geom: ConvGeom,
    cols: &mut Array2<f64>,
) {
    let k = geom.kernel;
    let d = geom.dilation as isize;
    let p = geom.pad() as isize;
    let cols_s = cols.as_slice_mut().unwrap();
    let hw = h * w;
    for ci in 0..cg {
        let xc = x.slice(ndarray::s![b, c0 + ci, .., ..]);
        let xc = xc.to_slice().expect("conv input must be standard layout");
        for i in 0..k {
            let dy = i as isize * d - p;
            for j in 0..k {
                let dxo = j as isize * d - p;
                let row = (ci * k * k + i * k + j) * hw;
                for y in 0..h {
                    let sy = y as isize + dy;
                    let dst = &mut cols_s[row + y * w..row + (y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src_row = sy as usize * w;
                    // valid destination x range for this shift
                    let x_lo = ((-dxo).max(0) as usize).min(w);
                    let x_hi = ((w as isize - dxo).clamp(0, w as isize)) as usize;
                    dst[..x_lo].fill(0.0);
                    if x_hi > x_lo {
                        let s_lo = (x_lo as isize + dxo) as usize;
                        dst[x_lo..x_hi]
                            .copy_from_slice(&xc[src_row + s_lo..src_row + s_lo + (x_hi - x_lo)]);
                    }
                    dst[x_hi.max(x_lo)..].fill(0.0);
                }
            }
        }
    }
}

/// Scatter-add the transpose of `im2col`: accumulate column gradients back
/// into the input gradient.
#[allow(clippy::too_many_arguments)]
fn col2im(
    dx: &mut Array4<f64>,
    b: usize,
    c0: usize,
    cg: usize,
    h: usize,
    w: usize,
    geom: ConvGeom,
    dcols: &Array2<f64>,
) {
    let k = geom.kernel;
    let d = geom.dilation as isize;
    let p = geom.pad() as isize;
    let dcols_s = dcols.as_slice().unwrap();
    let hw = h * w;
    for ci in 0..cg {
        let mut dxc = dx.slice_mut(ndarray::s![b, c0 + ci, .., ..]);
        let dxc = dxc
            .as_slice_mut()
            .expect("conv gradient must be standard layout");
        for i in 0..k {
            let dy = i as isize * d - p;
            for j in 0..k {
                let dxo = j as isize * d - p;
                let row = (ci * k * k + i * k + j) * hw;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src_row = sy as usize * w;
                    let x_lo = ((-dxo).max(0) as usize).min(w);
                    let x_hi = ((w as isize - dxo).clamp(0, w as isize)) as usize;
                    if x_hi > x_lo {
                        let s_lo = (x_lo as isize + dxo) as usize;
                        let src = &dcols_s[row + y * w + x_lo..row + y * w + x_hi];
                        let dst = &mut dxc[src_row + s_lo..src_row + s_lo + (x_hi - x_lo)];
                        for (o, v) in dst.iter_mut().zip(src) {
                            *o += v;
                        }
                    }
                }
            }
        }
    }
}
