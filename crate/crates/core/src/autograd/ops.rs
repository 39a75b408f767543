use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn same_shape<T: Scalar>(tape: &Tape<T>, a: Var, b: Var, op: &str) -> Result<()> {
    let (sa, sb) = (tape.value(a).shape(), tape.value(b).shape());
    if sa != sb {
        return Err(Error::shape(format!("{op}: {sa:?} vs {sb:?}")));
    }
    Ok(())
}

/// Batch statistics produced by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased variance (divided by the element count).
    pub var: Vec<T>,
    pub count: usize,
}

impl<T: Scalar> Tape<T> {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, a, b, "add")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push_op(
            out,
            &[a, b],
            Box::new(|ctx| vec![Some(ctx.grad.clone()), Some(ctx.grad.clone())]),
        ))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, a, b, "sub")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push_op(
            out,
            &[a, b],
            Box::new(|ctx| vec![Some(ctx.grad.clone()), Some(ctx.grad.map(|g| -g))]),
        ))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, a, b, "mul")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push_op(
            out,
            &[a, b],
            Box::new(|ctx| {
                let ga = ctx.needs[0].then(|| ctx.grad.zip_map(ctx.inputs[1], |g, y| g * y));
                let gb = ctx.needs[1].then(|| ctx.grad.zip_map(ctx.inputs[0], |g, x| g * x));
                vec![ga, gb]
            }),
        ))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).scale(s);
        self.push_op(out, &[a], Box::new(move |ctx| vec![Some(ctx.grad.scale(s))]))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        self.push_op(
            out,
            &[a],
            Box::new(|ctx| {
                vec![Some(ctx.grad.zip_map(ctx.output, |g, y| {
                    if y > T::zero() {
                        g
                    } else {
                        T::zero()
                    }
                }))]
            }),
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push_op(
            out,
            &[a],
            Box::new(|ctx| {
                vec![Some(
                    ctx.grad
                        .zip_map(ctx.output, |g, y| g * y * (T::one() - y)),
                )]
            }),
        )
    }

    /// Sum of every element, as a one-element tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push_op(
            out,
            &[a],
            Box::new(|ctx| {
                let g = ctx.grad.data()[0];
                vec![Some(Tensor::full(ctx.inputs[0].shape().to_vec(), g))]
            }),
        )
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = T::lit(self.value(a).len().max(1) as f64);
        let s = self.sum(a);
        self.scale(s, T::one() / n)
    }

    /// `Σ x ⊙ weights` against a constant weight tensor.
    pub fn weighted_sum(&mut self, a: Var, weights: &Tensor<T>) -> Result<Var> {
        if self.value(a).shape() != weights.shape() {
            return Err(Error::shape(format!(
                "weighted_sum: {:?} vs {:?}",
                self.value(a).shape(),
                weights.shape()
            )));
        }
        let total = self
            .value(a)
            .data()
            .iter()
            .zip(weights.data())
            .map(|(&x, &w)| x * w)
            .sum();
        let w = weights.clone();
        Ok(self.push_op(
            Tensor::scalar(total),
            &[a],
            Box::new(move |ctx| vec![Some(w.scale(ctx.grad.data()[0]))]),
        ))
    }

    /// `x[n, c, :, :] * gate[n, c]`.
    pub fn mul_channel(&mut self, x: Var, gate: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if self.value(gate).shape() != [n, c] {
            return Err(Error::shape(format!(
                "mul_channel: gate {:?} for input {:?}",
                self.value(gate).shape(),
                self.value(x).shape()
            )));
        }
        let hw = h * w;
        let xv = self.value(x);
        let gv = self.value(gate);
        let mut out = xv.clone();
        for (plane, &g) in out.data_mut().chunks_mut(hw).zip(gv.data()) {
            plane.iter_mut().for_each(|v| *v *= g);
        }
        Ok(self.push_op(
            out,
            &[x, gate],
            Box::new(move |ctx| {
                let (xv, gv) = (ctx.inputs[0], ctx.inputs[1]);
                let gx = ctx.needs[0].then(|| {
                    let mut gx = ctx.grad.clone();
                    for (plane, &g) in gx.data_mut().chunks_mut(hw).zip(gv.data()) {
                        plane.iter_mut().for_each(|v| *v *= g);
                    }
                    gx
                });
                let gg = ctx.needs[1].then(|| {
                    let data = ctx
                        .grad
                        .data()
                        .chunks(hw)
                        .zip(xv.data().chunks(hw))
                        .map(|(gp, xp)| gp.iter().zip(xp).map(|(&a, &b)| a * b).sum())
                        .collect();
                    Tensor::new(gv.shape().to_vec(), data).expect("gate shape")
                });
                vec![gx, gg]
            }),
        ))
    }

    /// `x[n, c, i, j] * weight[n, 0, i, j]`.
    pub fn mul_spatial(&mut self, x: Var, weight: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if self.value(weight).shape() != [n, 1, h, w] {
            return Err(Error::shape(format!(
                "mul_spatial: weight {:?} for input {:?}",
                self.value(weight).shape(),
                self.value(x).shape()
            )));
        }
        let hw = h * w;
        let mut out = self.value(x).clone();
        let wv = self.value(weight);
        for (i, plane) in out.data_mut().chunks_mut(hw).enumerate() {
            let wp = &wv.data()[(i / c) * hw..(i / c + 1) * hw];
            plane.iter_mut().zip(wp).for_each(|(v, &s)| *v *= s);
        }
        Ok(self.push_op(
            out,
            &[x, weight],
            Box::new(move |ctx| {
                let (xv, wv) = (ctx.inputs[0], ctx.inputs[1]);
                let gx = ctx.needs[0].then(|| {
                    let mut gx = ctx.grad.clone();
                    for (i, plane) in gx.data_mut().chunks_mut(hw).enumerate() {
                        let wp = &wv.data()[(i / c) * hw..(i / c + 1) * hw];
                        plane.iter_mut().zip(wp).for_each(|(v, &s)| *v *= s);
                    }
                    gx
                });
                let gw = ctx.needs[1].then(|| {
                    let mut gw = Tensor::zeros([n, 1, h, w]);
                    for (i, (gp, xp)) in ctx
                        .grad
                        .data()
                        .chunks(hw)
                        .zip(xv.data().chunks(hw))
                        .enumerate()
                    {
                        let dst = &mut gw.data_mut()[(i / c) * hw..(i / c + 1) * hw];
                        for ((d, &g), &xv) in dst.iter_mut().zip(gp).zip(xp) {
                            *d += g * xv;
                        }
                    }
                    gw
                });
                vec![gx, gw]
            }),
        ))
    }

    /// Concatenation along the channel axis of rank-4 tensors.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Empty("concat of zero tensors".into()))?;
        let (n, _, h, w) = self.value(*first).dims4()?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pn, pc, ph, pw) = self.value(p).dims4()?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(Error::shape(format!(
                    "concat_channels: {:?} vs {:?}",
                    self.value(p).shape(),
                    self.value(*first).shape()
                )));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let hw = h * w;
        let mut data = Vec::with_capacity(n * total * hw);
        for b in 0..n {
            for (&p, &pc) in parts.iter().zip(&widths) {
                let src = self.value(p).data();
                data.extend_from_slice(&src[b * pc * hw..(b + 1) * pc * hw]);
            }
        }
        let out = Tensor::new([n, total, h, w], data)?;
        Ok(self.push_op(
            out,
            parts,
            Box::new(move |ctx| {
                let g = ctx.grad.data();
                let mut offset = 0;
                let mut grads = Vec::with_capacity(widths.len());
                for (k, &pc) in widths.iter().enumerate() {
                    if !ctx.needs[k] {
                        grads.push(None);
                        offset += pc;
                        continue;
                    }
                    let mut d = Vec::with_capacity(n * pc * hw);
                    for b in 0..n {
                        let start = (b * total + offset) * hw;
                        d.extend_from_slice(&g[start..start + pc * hw]);
                    }
                    grads.push(Some(Tensor::new([n, pc, h, w], d).expect("concat part")));
                    offset += pc;
                }
                grads
            }),
        ))
    }

    /// Concatenation along the leading axis.
    pub fn concat_batch(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Empty("concat of zero tensors".into()))?;
        let tail = self.value(*first).shape()[1..].to_vec();
        let mut counts = Vec::with_capacity(parts.len());
        let mut data = Vec::new();
        for &p in parts {
            let s = self.value(p).shape();
            if s[1..] != tail[..] {
                return Err(Error::shape(format!(
                    "concat_batch: {s:?} vs {:?}",
                    self.value(*first).shape()
                )));
            }
            counts.push(s[0]);
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![counts.iter().sum()];
        shape.extend_from_slice(&tail);
        let out = Tensor::new(shape, data)?;
        let per: usize = tail.iter().product();
        Ok(self.push_op(
            out,
            parts,
            Box::new(move |ctx| {
                let g = ctx.grad.data();
                let mut offset = 0;
                counts
                    .iter()
                    .enumerate()
                    .map(|(k, &n)| {
                        let range = offset * per..(offset + n) * per;
                        offset += n;
                        ctx.needs[k].then(|| {
                            let mut shape = vec![n];
                            shape.extend_from_slice(&tail);
                            Tensor::new(shape, g[range].to_vec()).expect("batch part")
                        })
                    })
                    .collect()
            }),
        ))
    }

    /// Items `start..start + len` of the leading axis.
    pub fn slice_batch(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        if start + len > shape[0] {
            return Err(Error::Index {
                axis: "batch",
                index: start + len,
                extent: shape[0] + 1,
            });
        }
        let per: usize = shape[1..].iter().product();
        let mut out_shape = shape.clone();
        out_shape[0] = len;
        let out = Tensor::new(
            out_shape,
            self.value(x).data()[start * per..(start + len) * per].to_vec(),
        )?;
        Ok(self.push_op(
            out,
            &[x],
            Box::new(move |ctx| {
                let mut g = Tensor::zeros(shape.clone());
                g.data_mut()[start * per..(start + len) * per].copy_from_slice(ctx.grad.data());
                vec![Some(g)]
            }),
        ))
    }

    /// Mean over channels: `[N, C, H, W] -> [N, 1, H, W]`.
    pub fn channel_mean(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let hw = h * w;
        let inv = T::one() / T::lit(c as f64);
        let xv = self.value(x).data();
        let mut out = Tensor::zeros([n, 1, h, w]);
        for b in 0..n {
            let dst = &mut out.data_mut()[b * hw..(b + 1) * hw];
            for ch in 0..c {
                let src = &xv[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
            }
            dst.iter_mut().for_each(|d| *d *= inv);
        }
        Ok(self.push_op(
            out,
            &[x],
            Box::new(move |ctx| {
                let mut gx = Tensor::zeros([n, c, h, w]);
                let g = ctx.grad.data();
                for (i, plane) in gx.data_mut().chunks_mut(hw).enumerate() {
                    let b = i / c;
                    plane
                        .iter_mut()
                        .zip(&g[b * hw..(b + 1) * hw])
                        .for_each(|(d, &s)| *d = s * inv);
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Max over channels: `[N, C, H, W] -> [N, 1, H, W]`; ties go to the lowest channel.
    pub fn channel_max(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let hw = h * w;
        let xv = self.value(x).data();
        let mut out = Tensor::zeros([n, 1, h, w]);
        let mut argmax = vec![0usize; n * hw];
        for b in 0..n {
            for p in 0..hw {
                let mut best = xv[b * c * hw + p];
                let mut arg = 0;
                for ch in 1..c {
                    let v = xv[(b * c + ch) * hw + p];
                    if v > best {
                        best = v;
                        arg = ch;
                    }
                }
                out.data_mut()[b * hw + p] = best;
                argmax[b * hw + p] = arg;
            }
        }
        Ok(self.push_op(
            out,
            &[x],
            Box::new(move |ctx| {
                let mut gx = Tensor::zeros([n, c, h, w]);
                let g = ctx.grad.data();
                for b in 0..n {
                    for p in 0..hw {
                        gx.data_mut()[(b * c + argmax[b * hw + p]) * hw + p] = g[b * hw + p];
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// `y = x · Wᵀ + b` with `x: [N, In]`, `W: [Out, In]`, `b: [Out]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(weight).shape().to_vec();
        let (&[n, fin], &[fout, win]) = (&xs[..], &ws[..]) else {
            return Err(Error::shape(format!("linear: input {xs:?}, weight {ws:?}")));
        };
        if fin != win {
            return Err(Error::shape(format!("linear: input {xs:?}, weight {ws:?}")));
        }
        let mut out = Tensor::zeros([n, fout]);
        if let Some(b) = bias {
            let bv = self.value(b);
            if bv.shape() != [fout] {
                return Err(Error::shape(format!("linear: bias {:?}", bv.shape())));
            }
            for row in out.data_mut().chunks_mut(fout) {
                row.copy_from_slice(bv.data());
            }
        }
        crate::scalar::gemm(
            n,
            fin,
            fout,
            self.value(x).data(),
            false,
            self.value(weight).data(),
            true,
            T::one(),
            out.data_mut(),
        );
        let mut parents = vec![x, weight];
        parents.extend(bias);
        Ok(self.push_op(
            out,
            &parents,
            Box::new(move |ctx| {
                let g = ctx.grad.data();
                let gx = ctx.needs[0].then(|| {
                    let mut gx = Tensor::zeros([n, fin]);
                    crate::scalar::gemm(
                        n,
                        fout,
                        fin,
                        g,
                        false,
                        ctx.inputs[1].data(),
                        false,
                        T::zero(),
                        gx.data_mut(),
                    );
                    gx
                });
                let gw = ctx.needs[1].then(|| {
                    let mut gw = Tensor::zeros([fout, fin]);
                    crate::scalar::gemm(
                        fout,
                        n,
                        fin,
                        g,
                        true,
                        ctx.inputs[0].data(),
                        false,
                        T::zero(),
                        gw.data_mut(),
                    );
                    gw
                });
                let mut grads = vec![gx, gw];
                if ctx.inputs.len() == 3 {
                    grads.push(ctx.needs[2].then(|| {
                        let mut gb = Tensor::zeros([fout]);
                        for row in g.chunks(fout) {
                            gb.data_mut()
                                .iter_mut()
                                .zip(row)
                                .for_each(|(d, &s)| *d += s);
                        }
                        gb
                    }));
                }
                grads
            }),
        ))
    }

    /// Per-channel normalisation by batch statistics plus affine transform.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: T,
    ) -> Result<(Var, BatchStats<T>)> {
        let (n, c, h, w) = self.value(x).dims4()?;
        check_channel_param(self, gamma, c, "gamma")?;
        check_channel_param(self, beta, c, "beta")?;
        let hw = h * w;
        let count = n * hw;
        let m = T::lit(count as f64);
        let xv = self.value(x).data();
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ch in 0..c {
            let mut s = T::zero();
            for b in 0..n {
                s += xv[(b * c + ch) * hw..(b * c + ch + 1) * hw].iter().copied().sum();
            }
            let mu = s / m;
            let mut ss = T::zero();
            for b in 0..n {
                for &v in &xv[(b * c + ch) * hw..(b * c + ch + 1) * hw] {
                    ss += (v - mu) * (v - mu);
                }
            }
            mean[ch] = mu;
            var[ch] = ss / m;
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut xhat = vec![T::zero(); xv.len()];
        let mut out = Tensor::zeros([n, c, h, w]);
        for (i, (dst, xh)) in out
            .data_mut()
            .chunks_mut(hw)
            .zip(xhat.chunks_mut(hw))
            .enumerate()
        {
            let ch = i % c;
            let src = &xv[i * hw..(i + 1) * hw];
            for ((d, e), &s) in dst.iter_mut().zip(xh.iter_mut()).zip(src) {
                *e = (s - mean[ch]) * inv_std[ch];
                *d = gv[ch] * *e + bv[ch];
            }
        }
        let stats = BatchStats {
            mean,
            var,
            count,
        };
        let v = self.push_op(
            out,
            &[x, gamma, beta],
            Box::new(move |ctx| {
                let g = ctx.grad.data();
                let gam = ctx.inputs[1].data();
                let mut sum_g = vec![T::zero(); c];
                let mut sum_gx = vec![T::zero(); c];
                for (i, (gp, xp)) in g.chunks(hw).zip(xhat.chunks(hw)).enumerate() {
                    let ch = i % c;
                    for (&a, &b) in gp.iter().zip(xp) {
                        sum_g[ch] += a;
                        sum_gx[ch] += a * b;
                    }
                }
                let gx = ctx.needs[0].then(|| {
                    let mut gx = Tensor::zeros([n, c, h, w]);
                    for (i, ((d, gp), xp)) in gx
                        .data_mut()
                        .chunks_mut(hw)
                        .zip(g.chunks(hw))
                        .zip(xhat.chunks(hw))
                        .enumerate()
                    {
                        let ch = i % c;
                        let k = gam[ch] * inv_std[ch] / m;
                        for ((dv, &a), &b) in d.iter_mut().zip(gp).zip(xp) {
                            *dv = k * (m * a - sum_g[ch] - b * sum_gx[ch]);
                        }
                    }
                    gx
                });
                let ggam = ctx.needs[1].then(|| Tensor::new([c], sum_gx.clone()).expect("c"));
                let gbeta = ctx.needs[2].then(|| Tensor::new([c], sum_g.clone()).expect("c"));
                vec![gx, ggam, gbeta]
            }),
        );
        Ok((v, stats))
    }

    /// Batch norm with frozen statistics (inference mode).
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[T],
        running_var: &[T],
        eps: T,
    ) -> Result<Var> {
        let (_, c, h, w) = self.value(x).dims4()?;
        check_channel_param(self, gamma, c, "gamma")?;
        check_channel_param(self, beta, c, "beta")?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(Error::shape("batch_norm_eval: running statistics width"));
        }
        let hw = h * w;
        let inv_std: Vec<T> = running_var
            .iter()
            .map(|&v| T::one() / (v + eps).sqrt())
            .collect();
        let mean = running_mean.to_vec();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut out = self.value(x).clone();
        for (i, plane) in out.data_mut().chunks_mut(hw).enumerate() {
            let ch = i % c;
            let (a, b) = (gv[ch] * inv_std[ch], bv[ch] - gv[ch] * inv_std[ch] * mean[ch]);
            plane.iter_mut().for_each(|v| *v = a * *v + b);
        }
        Ok(self.push_op(
            out,
            &[x, gamma, beta],
            Box::new(move |ctx| {
                let g = ctx.grad.data();
                let xv = ctx.inputs[0].data();
                let gam = ctx.inputs[1].data();
                let gx = ctx.needs[0].then(|| {
                    let mut gx = ctx.grad.clone();
                    for (i, plane) in gx.data_mut().chunks_mut(hw).enumerate() {
                        let k = gam[i % c] * inv_std[i % c];
                        plane.iter_mut().for_each(|v| *v *= k);
                    }
                    gx
                });
                let mut sum_g = vec![T::zero(); c];
                let mut sum_gx = vec![T::zero(); c];
                for (i, (gp, xp)) in g.chunks(hw).zip(xv.chunks(hw)).enumerate() {
                    let ch = i % c;
                    for (&a, &b) in gp.iter().zip(xp) {
                        sum_g[ch] += a;
                        sum_gx[ch] += a * (b - mean[ch]) * inv_std[ch];
                    }
                }
                let ggam = ctx.needs[1].then(|| Tensor::new([c], sum_gx).expect("c"));
                let gbeta = ctx.needs[2].then(|| Tensor::new([c], sum_g).expect("c"));
                vec![gx, ggam, gbeta]
            }),
        ))
    }

    /// Square-window max pooling with implicit `-inf` padding.
    pub fn max_pool2d(&mut self, x: Var, kernel: usize, stride: usize, pad: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if h + 2 * pad < kernel || w + 2 * pad < kernel {
            return Err(Error::shape(format!(
                "max_pool2d: window {kernel} larger than padded {h}x{w}"
            )));
        }
        let oh = (h + 2 * pad - kernel) / stride + 1;
        let ow = (w + 2 * pad - kernel) / stride + 1;
        let xv = self.value(x).data();
        let mut out = Tensor::zeros([n, c, oh, ow]);
        let mut argmax = vec![0usize; n * c * oh * ow];
        for plane in 0..n * c {
            let src = &xv[plane * h * w..(plane + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = T::neg_infinity();
                    let mut arg = 0;
                    for ky in 0..kernel {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kernel {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let idx = iy as usize * w + ix as usize;
                            if src[idx] > best {
                                best = src[idx];
                                arg = idx;
                            }
                        }
                    }
                    let o = (plane * oh + oy) * ow + ox;
                    out.data_mut()[o] = best;
                    argmax[o] = plane * h * w + arg;
                }
            }
        }
        Ok(self.push_op(
            out,
            &[x],
            Box::new(move |ctx| {
                let mut gx = Tensor::zeros([n, c, h, w]);
                for (&src, &g) in argmax.iter().zip(ctx.grad.data()) {
                    gx.data_mut()[src] += g;
                }
                vec![Some(gx)]
            }),
        ))
    }
}

fn check_channel_param<T: Scalar>(tape: &Tape<T>, p: Var, c: usize, what: &str) -> Result<()> {
    if tape.value(p).shape() != [c] {
        return Err(Error::shape(format!(
            "batch norm {what}: {:?} for {c} channels",
            tape.value(p).shape()
        )));
    }
    Ok(())
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
