use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::{gemm, Scalar};
use crate::tensor::Tensor;

/// Stride, zero padding and channel grouping of a 2D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dGeometry {
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl Conv2dGeometry {
    pub const fn new(stride: usize, pad: usize, groups: usize) -> Self {
        Self {
            stride,
            pad,
            groups,
        }
    }

    pub const fn pointwise() -> Self {
        Self::new(1, 0, 1)
    }

    pub fn output_extent(&self, h: usize, w: usize, kh: usize, kw: usize) -> Option<(usize, usize)> {
        let (ph, pw) = (h + 2 * self.pad, w + 2 * self.pad);
        if ph < kh || pw < kw || self.stride == 0 {
            return None;
        }
        Some(((ph - kh) / self.stride + 1, (pw - kw) / self.stride + 1))
    }
}

#[derive(Clone, Copy)]
struct Dims {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
    groups: usize,
}

impl Dims {
    fn cg(&self) -> usize {
        self.cin / self.groups
    }
    fn cog(&self) -> usize {
        self.cout / self.groups
    }
    fn k(&self) -> usize {
        self.cg() * self.kh * self.kw
    }
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
    fn is_depthwise(&self) -> bool {
        self.groups == self.cin && self.cout == self.cin && self.groups > 1
    }
}

/// Unfolds `cg` input planes into a `[cg·kh·kw, oh·ow]` column matrix.
fn im2col<T: Scalar>(src: &[T], d: &Dims, cols: &mut [T]) {
    let ohw = d.oh * d.ow;
    for ci in 0..d.cg() {
        let plane = &src[ci * d.h * d.w..(ci + 1) * d.h * d.w];
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let row = (ci * d.kh + ky) * d.kw + kx;
                let dst = &mut cols[row * ohw..(row + 1) * ohw];
                for oy in 0..d.oh {
                    let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                    let line = &mut dst[oy * d.ow..(oy + 1) * d.ow];
                    if iy < 0 || iy >= d.h as isize {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let srow = &plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                        *v = if ix < 0 || ix >= d.w as isize {
                            T::zero()
                        } else {
                            srow[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]; accumulates into `dst`.
fn col2im<T: Scalar>(cols: &[T], d: &Dims, dst: &mut [T]) {
    let ohw = d.oh * d.ow;
    for ci in 0..d.cg() {
        let plane = &mut dst[ci * d.h * d.w..(ci + 1) * d.h * d.w];
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let row = (ci * d.kh + ky) * d.kw + kx;
                let src = &cols[row * ohw..(row + 1) * ohw];
                for oy in 0..d.oh {
                    let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let prow = &mut plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    for ox in 0..d.ow {
                        let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                        if ix >= 0 && (ix as usize) < d.w {
                            prow[ix as usize] += src[oy * d.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

fn depthwise_forward<T: Scalar>(x: &[T], wt: &[T], d: &Dims, out: &mut [T]) {
    for plane in 0..d.n * d.cin {
        let ch = plane % d.cin;
        let src = &x[plane * d.h * d.w..(plane + 1) * d.h * d.w];
        let ker = &wt[ch * d.kh * d.kw..(ch + 1) * d.kh * d.kw];
        let dst = &mut out[plane * d.oh * d.ow..(plane + 1) * d.oh * d.ow];
        for oy in 0..d.oh {
            for ox in 0..d.ow {
                let mut acc = T::zero();
                for ky in 0..d.kh {
                    let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    for kx in 0..d.kw {
                        let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                        if ix < 0 || ix >= d.w as isize {
                            continue;
                        }
                        acc += ker[ky * d.kw + kx] * src[iy as usize * d.w + ix as usize];
                    }
                }
                dst[oy * d.ow + ox] += acc;
            }
        }
    }
}

fn depthwise_backward<T: Scalar>(
    x: &[T],
    wt: &[T],
    g: &[T],
    d: &Dims,
    mut gx: Option<&mut [T]>,
    mut gw: Option<&mut [T]>,
) {
    for plane in 0..d.n * d.cin {
        let ch = plane % d.cin;
        let src = &x[plane * d.h * d.w..(plane + 1) * d.h * d.w];
        let ker = &wt[ch * d.kh * d.kw..(ch + 1) * d.kh * d.kw];
        let gp = &g[plane * d.oh * d.ow..(plane + 1) * d.oh * d.ow];
        for oy in 0..d.oh {
            for ox in 0..d.ow {
                let go = gp[oy * d.ow + ox];
                for ky in 0..d.kh {
                    let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    for kx in 0..d.kw {
                        let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                        if ix < 0 || ix >= d.w as isize {
                            continue;
                        }
                        let si = iy as usize * d.w + ix as usize;
                        if let Some(gx) = gx.as_deref_mut() {
                            gx[plane * d.h * d.w + si] += go * ker[ky * d.kw + kx];
                        }
                        if let Some(gw) = gw.as_deref_mut() {
                            gw[ch * d.kh * d.kw + ky * d.kw + kx] += go * src[si];
                        }
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Tape<T> {
    /// 2D cross-correlation, `x: [N, Cin, H, W]`, `weight: [Cout, Cin/groups, kh, kw]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        geom: Conv2dGeometry,
    ) -> Result<Var> {
        let (n, cin, h, w) = self.value(x).dims4()?;
        let (cout, wcg, kh, kw) = self.value(weight).dims4()?;
        let groups = geom.groups.max(1);
        if cin % groups != 0 || cout % groups != 0 || wcg != cin / groups {
            return Err(Error::shape(format!(
                "conv2d: input {:?}, weight {:?}, groups {groups}",
                self.value(x).shape(),
                self.value(weight).shape()
            )));
        }
        let (oh, ow) = geom.output_extent(h, w, kh, kw).ok_or_else(|| {
            Error::shape(format!("conv2d: kernel {kh}x{kw} exceeds padded {h}x{w}"))
        })?;
        if let Some(b) = bias {
            if self.value(b).shape() != [cout] {
                return Err(Error::shape(format!(
                    "conv2d: bias {:?} for {cout} outputs",
                    self.value(b).shape()
                )));
            }
        }
        let d = Dims {
            n,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            oh,
            ow,
            stride: geom.stride,
            pad: geom.pad,
            groups,
        };
        let ohw = oh * ow;
        let mut out = Tensor::zeros([n, cout, oh, ow]);
        if let Some(b) = bias {
            let bv = self.value(b).data();
            for (i, plane) in out.data_mut().chunks_mut(ohw).enumerate() {
                plane.iter_mut().for_each(|v| *v = bv[i % cout]);
            }
        }
        {
            let xv = self.value(x).data();
            let wv = self.value(weight).data();
            let od = out.data_mut();
            if d.is_depthwise() {
                depthwise_forward(xv, wv, &d, od);
            } else {
                let (cg, cog, k) = (d.cg(), d.cog(), d.k());
                let mut cols = vec![T::zero(); if d.is_pointwise() { 0 } else { k * ohw }];
                for b in 0..n {
                    for gi in 0..groups {
                        let src = &xv[(b * cin + gi * cg) * h * w..(b * cin + (gi + 1) * cg) * h * w];
                        let cols_ref: &[T] = if d.is_pointwise() {
                            src
                        } else {
                            im2col(src, &d, &mut cols);
                            &cols
                        };
                        let wg = &wv[gi * cog * k..(gi + 1) * cog * k];
                        let dst = &mut od[(b * cout + gi * cog) * ohw..(b * cout + (gi + 1) * cog) * ohw];
                        gemm(cog, k, ohw, wg, false, cols_ref, false, T::one(), dst);
                    }
                }
            }
        }

        let mut parents = vec![x, weight];
        parents.extend(bias);
        Ok(self.push_op(
            out,
            &parents,
            Box::new(move |ctx| conv_backward(ctx, &d)),
        ))
    }
}

fn conv_backward<T: Scalar>(ctx: &super::BackwardCtx<'_, T>, d: &Dims) -> Vec<Option<Tensor<T>>> {
    let xv = ctx.inputs[0].data();
    let wv = ctx.inputs[1].data();
    let g = ctx.grad.data();
    let ohw = d.oh * d.ow;
    let mut gx = ctx.needs[0].then(|| Tensor::zeros([d.n, d.cin, d.h, d.w]));
    let mut gw = ctx.needs[1].then(|| Tensor::zeros(ctx.inputs[1].shape().to_vec()));

    if d.is_depthwise() {
        depthwise_backward(
            xv,
            wv,
            g,
            d,
            gx.as_mut().map(|t| t.data_mut()),
            gw.as_mut().map(|t| t.data_mut()),
        );
    } else {
        let (cg, cog, k) = (d.cg(), d.cog(), d.k());
        let pointwise = d.is_pointwise();
        let mut cols = vec![T::zero(); if pointwise { 0 } else { k * ohw }];
        let mut dcols = vec![T::zero(); if gx.is_some() { k * ohw } else { 0 }];
        for b in 0..d.n {
            for gi in 0..d.groups {
                let gout = &g[(b * d.cout + gi * cog) * ohw..(b * d.cout + (gi + 1) * cog) * ohw];
                let xrange = (b * d.cin + gi * cg) * d.h * d.w..(b * d.cin + (gi + 1) * cg) * d.h * d.w;
                if let Some(gw) = gw.as_mut() {
                    let src = &xv[xrange.clone()];
                    let cols_ref: &[T] = if pointwise {
                        src
                    } else {
                        im2col(src, d, &mut cols);
                        &cols
                    };
                    let dst = &mut gw.data_mut()[gi * cog * k..(gi + 1) * cog * k];
                    gemm(cog, ohw, k, gout, false, cols_ref, true, T::one(), dst);
                }
                if let Some(gx) = gx.as_mut() {
                    let wg = &wv[gi * cog * k..(gi + 1) * cog * k];
                    let dst = &mut gx.data_mut()[xrange];
                    if pointwise {
                        gemm(k, cog, ohw, wg, true, gout, false, T::one(), dst);
                    } else {
                        gemm(k, cog, ohw, wg, true, gout, false, T::zero(), &mut dcols);
                        col2im(&dcols, d, dst);
                    }
                }
            }
        }
    }

    let mut grads = vec![gx, gw];
    if ctx.inputs.len() == 3 {
        grads.push(ctx.needs[2].then(|| {
            let mut gb = Tensor::zeros([d.cout]);
            for (i, plane) in g.chunks(ohw).enumerate() {
                gb.data_mut()[i % d.cout] += plane.iter().copied().sum();
            }
            gb
        }));
    }
    grads
}
