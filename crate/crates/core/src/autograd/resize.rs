use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Half-pixel-centred bilinear taps `(lo, hi, frac)` for each output index.
///
/// Source coordinates below zero clamp to zero, matching the
/// `align_corners = false` convention.
pub fn bilinear_axis<T: Scalar>(input: usize, output: usize) -> Vec<(usize, usize, T)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            (lo, hi, T::lit(src - lo as f64))
        })
        .collect()
}

impl<T: Scalar> Tape<T> {
    /// Bilinear resampling of every plane of `[N, C, H, W]` to `[N, C, oh, ow]`.
    pub fn resize_bilinear(&mut self, x: Var, oh: usize, ow: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if oh == 0 || ow == 0 {
            return Err(Error::shape("resize_bilinear: empty target"));
        }
        if (oh, ow) == (h, w) {
            return Ok(x);
        }
        let ty = bilinear_axis::<T>(h, oh);
        let tx = bilinear_axis::<T>(w, ow);
        let xv = self.value(x).data();
        let mut out = Tensor::zeros([n, c, oh, ow]);
        for (plane, dst) in out.data_mut().chunks_mut(oh * ow).enumerate() {
            let src = &xv[plane * h * w..(plane + 1) * h * w];
            for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                let (r0, r1) = (&src[y0 * w..(y0 + 1) * w], &src[y1 * w..(y1 + 1) * w]);
                for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                    let top = r0[x0] + (r0[x1] - r0[x0]) * lx;
                    let bot = r1[x0] + (r1[x1] - r1[x0]) * lx;
                    dst[oy * ow + ox] = top + (bot - top) * ly;
                }
            }
        }
        Ok(self.push_op(
            out,
            &[x],
            Box::new(move |ctx| {
                let mut gx = Tensor::zeros([n, c, h, w]);
                let g = ctx.grad.data();
                for (plane, dst) in gx.data_mut().chunks_mut(h * w).enumerate() {
                    let gp = &g[plane * oh * ow..(plane + 1) * oh * ow];
                    for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                        for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                            let go = gp[oy * ow + ox];
                            let top = go * (T::one() - ly);
                            let bot = go * ly;
                            dst[y0 * w + x0] += top * (T::one() - lx);
                            dst[y0 * w + x1] += top * lx;
                            dst[y1 * w + x0] += bot * (T::one() - lx);
                            dst[y1 * w + x1] += bot * lx;
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }
}
