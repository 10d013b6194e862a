//! Forward and backward kernels for the layer operations.
//!
//! Every kernel is a pure function over tensors; the tape in [`crate::graph`]
//! wires them together. All convolutions run at stride 1; the transposed
//! convolution is fixed at 2x2 kernels with stride 2 (exact spatial doubling).
//! Each output element is produced by exactly one accumulation loop with a
//! fixed reduction order, so results do not depend on scheduling.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::Element;
use crate::tensor::Tensor;

/// Zero-padding mode for stride-1 convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Output keeps the input's spatial size; zeros padded symmetrically.
    Same,
    /// No padding; output shrinks by `k - 1`.
    Valid,
}

impl Padding {
    /// Padding inserted before the first row/column for a kernel extent `k`.
    fn before(self, k: usize) -> usize {
        match self {
            Padding::Same => (k - 1) / 2,
            Padding::Valid => 0,
        }
    }

    fn out_extent(self, input: usize, k: usize) -> Result<usize> {
        match self {
            Padding::Same => Ok(input),
            Padding::Valid => {
                if input < k {
                    Err(Error::shape(
                        "conv2d",
                        format!("valid padding needs input >= kernel, got {input} < {k}"),
                    ))
                } else {
                    Ok(input - k + 1)
                }
            }
        }
    }
}

/// Stride-1 2D convolution: `x [n,cin,h,w]` * `k [cout,cin,kh,kw]` + bias.
pub fn conv2d_forward<E: Element>(
    x: &Tensor<E>,
    kernel: &Tensor<E>,
    bias: Option<&Tensor<E>>,
    padding: Padding,
) -> Result<Tensor<E>> {
    let (n, cin, h, w) = x.dims4("conv2d")?;
    let (cout, kcin, kh, kw) = kernel.dims4("conv2d")?;
    if kcin != cin {
        return Err(Error::shape(
            "conv2d",
            format!("kernel expects {kcin} input channels, input {:?} has {cin}", x.shape()),
        ));
    }
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(Error::shape(
                "conv2d",
                format!("bias shape {:?} does not match {cout} output channels", b.shape()),
            ));
        }
    }
    let oh = padding.out_extent(h, kh)?;
    let ow = padding.out_extent(w, kw)?;
    let ph = padding.before(kh);
    let pw = padding.before(kw);

    let mut out = Tensor::zeros(&[n, cout, oh, ow]);
    let xd = x.data();
    let kd = kernel.data();
    let od = out.data_mut();
    for ni in 0..n {
        for co in 0..cout {
            let out_plane = &mut od[((ni * cout + co) * oh) * ow..][..oh * ow];
            if let Some(b) = bias {
                let bv = b.data()[co];
                for v in out_plane.iter_mut() {
                    *v = bv;
                }
            }
            for ci in 0..cin {
                let x_plane = &xd[((ni * cin + ci) * h) * w..][..h * w];
                let k_block = &kd[((co * cin + ci) * kh) * kw..][..kh * kw];
                for ky in 0..kh {
                    for oy in 0..oh {
                        let iy = (oy + ky) as isize - ph as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let x_row = &x_plane[iy as usize * w..][..w];
                        let out_row = &mut out_plane[oy * ow..][..ow];
                        for kx in 0..kw {
                            let weight = k_block[ky * kw + kx];
                            let dx = kx as isize - pw as isize;
                            let lo = (-dx).max(0) as usize;
                            let hi = ow.min((w as isize - dx).max(0) as usize);
                            for ox in lo..hi {
                                out_row[ox] += weight * x_row[(ox as isize + dx) as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradient of a conv2d output w.r.t. its bias: sum over batch and space.
pub fn conv2d_grad_bias<E: Element>(gout: &Tensor<E>) -> Tensor<E> {
    let (n, cout, oh, ow) = gout.dims4("conv2d").expect("gout is rank 4");
    let mut gb = Tensor::zeros(&[cout]);
    let gd = gout.data();
    let gbd = gb.data_mut();
    for ni in 0..n {
        for co in 0..cout {
            let plane = &gd[((ni * cout + co) * oh) * ow..][..oh * ow];
            let mut acc = E::ZERO;
            for &g in plane {
                acc += g;
            }
            gbd[co] += acc;
        }
    }
    gb
}

/// Gradient of a conv2d output w.r.t. the kernel.
pub fn conv2d_grad_kernel<E: Element>(
    x: &Tensor<E>,
    gout: &Tensor<E>,
    kernel_shape: &[usize],
    padding: Padding,
) -> Tensor<E> {
    let (n, cin, h, w) = x.dims4("conv2d").expect("x is rank 4");
    let (_, cout, oh, ow) = gout.dims4("conv2d").expect("gout is rank 4");
    let (kh, kw) = (kernel_shape[2], kernel_shape[3]);
    let ph = padding.before(kh);
    let pw = padding.before(kw);

    let mut gk = Tensor::zeros(kernel_shape);
    let xd = x.data();
    let gd = gout.data();
    let gkd = gk.data_mut();
    for ni in 0..n {
        for co in 0..cout {
            let g_plane = &gd[((ni * cout + co) * oh) * ow..][..oh * ow];
            for ci in 0..cin {
                let x_plane = &xd[((ni * cin + ci) * h) * w..][..h * w];
                let k_block = &mut gkd[((co * cin + ci) * kh) * kw..][..kh * kw];
                for ky in 0..kh {
                    for oy in 0..oh {
                        let iy = (oy + ky) as isize - ph as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let x_row = &x_plane[iy as usize * w..][..w];
                        let g_row = &g_plane[oy * ow..][..ow];
                        for kx in 0..kw {
                            let dx = kx as isize - pw as isize;
                            let lo = (-dx).max(0) as usize;
                            let hi = ow.min((w as isize - dx).max(0) as usize);
                            let mut acc = E::ZERO;
                            for ox in lo..hi {
                                acc += g_row[ox] * x_row[(ox as isize + dx) as usize];
                            }
                            k_block[ky * kw + kx] += acc;
                        }
                    }
                }
            }
        }
    }
    gk
}

/// Gradient of a conv2d output w.r.t. its input.
pub fn conv2d_grad_input<E: Element>(
    kernel: &Tensor<E>,
    gout: &Tensor<E>,
    input_shape: &[usize],
    padding: Padding,
) -> Tensor<E> {
    let (cout, cin, kh, kw) = kernel.dims4("conv2d").expect("kernel is rank 4");
    let (n, _, oh, ow) = gout.dims4("conv2d").expect("gout is rank 4");
    let (h, w) = (input_shape[2], input_shape[3]);
    let ph = padding.before(kh);
    let pw = padding.before(kw);

    let mut gx = Tensor::zeros(input_shape);
    let kd = kernel.data();
    let gd = gout.data();
    let gxd = gx.data_mut();
    for ni in 0..n {
        for co in 0..cout {
            let g_plane = &gd[((ni * cout + co) * oh) * ow..][..oh * ow];
            for ci in 0..cin {
                let x_plane = &mut gxd[((ni * cin + ci) * h) * w..][..h * w];
                let k_block = &kd[((co * cin + ci) * kh) * kw..][..kh * kw];
                for ky in 0..kh {
                    for oy in 0..oh {
                        let iy = (oy + ky) as isize - ph as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let x_row = &mut x_plane[iy as usize * w..][..w];
                        let g_row = &g_plane[oy * ow..][..ow];
                        for kx in 0..kw {
                            let weight = k_block[ky * kw + kx];
                            let dx = kx as isize - pw as isize;
                            let lo = (-dx).max(0) as usize;
                            let hi = ow.min((w as isize - dx).max(0) as usize);
                            for ox in lo..hi {
                                x_row[(ox as isize + dx) as usize] += weight * g_row[ox];
                            }
                        }
                    }
                }
            }
        }
    }
    gx
}

/// Transposed convolution, kernel `[cin,cout,2,2]`, stride 2: `[n,cin,h,w] ->
/// [n,cout,2h,2w]`. Kernel extent equals the stride, so each output element
/// receives exactly one contribution per input channel.
pub fn tconv2_forward<E: Element>(x: &Tensor<E>, kernel: &Tensor<E>) -> Result<Tensor<E>> {
    let (n, cin, h, w) = x.dims4("transpose_conv2d")?;
    let (kcin, cout, kh, kw) = kernel.dims4("transpose_conv2d")?;
    if kcin != cin {
        return Err(Error::shape(
            "transpose_conv2d",
            format!("kernel expects {kcin} input channels, input {:?} has {cin}", x.shape()),
        ));
    }
    if kh != 2 || kw != 2 {
        return Err(Error::shape(
            "transpose_conv2d",
            format!("kernel spatial size must be 2x2, got {kh}x{kw}"),
        ));
    }
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = Tensor::zeros(&[n, cout, oh, ow]);
    let xd = x.data();
    let kd = kernel.data();
    let od = out.data_mut();
    for ni in 0..n {
        for ci in 0..cin {
            let x_plane = &xd[((ni * cin + ci) * h) * w..][..h * w];
            for co in 0..cout {
                let out_plane = &mut od[((ni * cout + co) * oh) * ow..][..oh * ow];
                let k_block = &kd[((ci * cout + co) * 2) * 2..][..4];
                for y in 0..h {
                    let x_row = &x_plane[y * w..][..w];
                    for ky in 0..2 {
                        let out_row = &mut out_plane[(2 * y + ky) * ow..][..ow];
                        for kx in 0..2 {
                            let weight = k_block[ky * 2 + kx];
                            for xi in 0..w {
                                out_row[2 * xi + kx] += weight * x_row[xi];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradient of [`tconv2_forward`] w.r.t. its input (the adjoint: a stride-2
/// gather with the same kernel).
pub fn tconv2_grad_input<E: Element>(
    kernel: &Tensor<E>,
    gout: &Tensor<E>,
    input_shape: &[usize],
) -> Tensor<E> {
    let (n, cout, oh, ow) = gout.dims4("transpose_conv2d").expect("gout is rank 4");
    let (cin, _, _, _) = kernel.dims4("transpose_conv2d").expect("kernel is rank 4");
    let (h, w) = (input_shape[2], input_shape[3]);
    let mut gx = Tensor::zeros(input_shape);
    let kd = kernel.data();
    let gd = gout.data();
    let gxd = gx.data_mut();
    for ni in 0..n {
        for ci in 0..cin {
            let gx_plane = &mut gxd[((ni * cin + ci) * h) * w..][..h * w];
            for co in 0..cout {
                let g_plane = &gd[((ni * cout + co) * oh) * ow..][..oh * ow];
                let k_block = &kd[((ci * cout + co) * 2) * 2..][..4];
                for y in 0..h {
                    let gx_row = &mut gx_plane[y * w..][..w];
                    for ky in 0..2 {
                        let g_row = &g_plane[(2 * y + ky) * ow..][..ow];
                        for kx in 0..2 {
                            let weight = k_block[ky * 2 + kx];
                            for xi in 0..w {
                                gx_row[xi] += weight * g_row[2 * xi + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    gx
}

/// Gradient of [`tconv2_forward`] w.r.t. the kernel.
pub fn tconv2_grad_kernel<E: Element>(
    x: &Tensor<E>,
    gout: &Tensor<E>,
    kernel_shape: &[usize],
) -> Tensor<E> {
    let (n, cin, h, w) = x.dims4("transpose_conv2d").expect("x is rank 4");
    let (_, cout, oh, ow) = gout.dims4("transpose_conv2d").expect("gout is rank 4");
    let mut gk = Tensor::zeros(kernel_shape);
    let xd = x.data();
    let gd = gout.data();
    let gkd = gk.data_mut();
    for ni in 0..n {
        for ci in 0..cin {
            let x_plane = &xd[((ni * cin + ci) * h) * w..][..h * w];
            for co in 0..cout {
                let g_plane = &gd[((ni * cout + co) * oh) * ow..][..oh * ow];
                let k_block = &mut gkd[((ci * cout + co) * 2) * 2..][..4];
                for y in 0..h {
                    let x_row = &x_plane[y * w..][..w];
                    for ky in 0..2 {
                        let g_row = &g_plane[(2 * y + ky) * ow..][..ow];
                        for kx in 0..2 {
                            let mut acc = E::ZERO;
                            for xi in 0..w {
                                acc += x_row[xi] * g_row[2 * xi + kx];
                            }
                            k_block[ky * 2 + kx] += acc;
                        }
                    }
                }
            }
        }
    }
    gk
}

/// 2x2 max pooling with stride 2. Returns the pooled tensor and the flat
/// input index of each window's argmax (first element in row-major order on
/// ties), which the backward pass routes gradients through.
pub fn maxpool2_forward<E: Element>(x: &Tensor<E>) -> Result<(Tensor<E>, Vec<u32>)> {
    let (n, c, h, w) = x.dims4("maxpool2d")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(
            "maxpool2d",
            format!("spatial dims must be even, got {h}x{w}"),
        ));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let mut argmax = vec![0u32; n * c * oh * ow];
    let xd = x.data();
    let od = out.data_mut();
    for plane in 0..n * c {
        let x_plane = &xd[plane * h * w..][..h * w];
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_idx = (2 * oy) * w + 2 * ox;
                let mut best = x_plane[best_idx];
                for (dy, dx) in [(0usize, 1usize), (1, 0), (1, 1)] {
                    let idx = (2 * oy + dy) * w + 2 * ox + dx;
                    let v = x_plane[idx];
                    if v > best {
                        best = v;
                        best_idx = idx;
                    }
                }
                let o = plane * oh * ow + oy * ow + ox;
                od[o] = best;
                argmax[o] = (base + best_idx) as u32;
            }
        }
    }
    Ok((out, argmax))
}

/// Scatter of the pooled gradient back to each window's argmax element.
pub fn maxpool2_backward<E: Element>(
    gout: &Tensor<E>,
    argmax: &[u32],
    input_shape: &[usize],
) -> Tensor<E> {
    let mut gx = Tensor::zeros(input_shape);
    let gxd = gx.data_mut();
    for (g, &idx) in gout.data().iter().zip(argmax) {
        gxd[idx as usize] += *g;
    }
    gx
}

/// Channel softmax with the max-shift trick: per pixel, `exp(x - max) / sum`.
pub fn softmax_channels_forward<E: Element>(x: &Tensor<E>) -> Result<Tensor<E>> {
    let (n, c, h, w) = x.dims4("softmax_channels")?;
    if c < 2 {
        return Err(Error::contract(
            "softmax_channels",
            format!("needs at least 2 channels, got {c}"),
        ));
    }
    let hw = h * w;
    let mut out = Tensor::zeros(&[n, c, h, w]);
    let xd = x.data();
    let od = out.data_mut();
    for ni in 0..n {
        let x_img = &xd[ni * c * hw..][..c * hw];
        let o_img = &mut od[ni * c * hw..][..c * hw];
        for p in 0..hw {
            let mut m = x_img[p];
            for ci in 1..c {
                let v = x_img[ci * hw + p];
                if v > m {
                    m = v;
                }
            }
            let mut sum = E::ZERO;
            for ci in 0..c {
                let e = (x_img[ci * hw + p] - m).exp();
                o_img[ci * hw + p] = e;
                sum += e;
            }
            for ci in 0..c {
                o_img[ci * hw + p] /= sum;
            }
        }
    }
    Ok(out)
}

/// Softmax backward from its own output: `gx_c = y_c (g_c - sum_k g_k y_k)`.
pub fn softmax_channels_backward<E: Element>(y: &Tensor<E>, gout: &Tensor<E>) -> Tensor<E> {
    let (n, c, h, w) = y.dims4("softmax_channels").expect("y is rank 4");
    let hw = h * w;
    let mut gx = Tensor::zeros(y.shape());
    let yd = y.data();
    let gd = gout.data();
    let gxd = gx.data_mut();
    for ni in 0..n {
        let y_img = &yd[ni * c * hw..][..c * hw];
        let g_img = &gd[ni * c * hw..][..c * hw];
        let gx_img = &mut gxd[ni * c * hw..][..c * hw];
        for p in 0..hw {
            let mut dot = E::ZERO;
            for ci in 0..c {
                dot += g_img[ci * hw + p] * y_img[ci * hw + p];
            }
            for ci in 0..c {
                let i = ci * hw + p;
                gx_img[i] = y_img[i] * (g_img[i] - dot);
            }
        }
    }
    gx
}

/// Channel-axis concatenation, `a` first.
pub fn concat_channels_forward<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    let (n, ca, h, w) = a.dims4("concat_channels")?;
    let (nb, cb, hb, wb) = b.dims4("concat_channels")?;
    if (n, h, w) != (nb, hb, wb) {
        return Err(Error::shape(
            "concat_channels",
            format!("incompatible shapes {:?} and {:?}", a.shape(), b.shape()),
        ));
    }
    let hw = h * w;
    let mut out = Tensor::zeros(&[n, ca + cb, h, w]);
    let od = out.data_mut();
    for ni in 0..n {
        let dst = &mut od[ni * (ca + cb) * hw..][..(ca + cb) * hw];
        dst[..ca * hw].copy_from_slice(&a.data()[ni * ca * hw..][..ca * hw]);
        dst[ca * hw..].copy_from_slice(&b.data()[ni * cb * hw..][..cb * hw]);
    }
    Ok(out)
}

/// Splits a concat gradient back into the two channel blocks.
pub fn concat_channels_backward<E: Element>(
    gout: &Tensor<E>,
    ca: usize,
    cb: usize,
) -> (Tensor<E>, Tensor<E>) {
    let (n, _, h, w) = gout.dims4("concat_channels").expect("gout is rank 4");
    let hw = h * w;
    let mut ga = Tensor::zeros(&[n, ca, h, w]);
    let mut gb = Tensor::zeros(&[n, cb, h, w]);
    for ni in 0..n {
        let src = &gout.data()[ni * (ca + cb) * hw..][..(ca + cb) * hw];
        ga.data_mut()[ni * ca * hw..][..ca * hw].copy_from_slice(&src[..ca * hw]);
        gb.data_mut()[ni * cb * hw..][..cb * hw].copy_from_slice(&src[ca * hw..]);
    }
    (ga, gb)
}

/// Hadamard product with a `[n,1,h,w]` gate broadcast over the channels of
/// `x [n,c,h,w]`.
pub fn mul_gate_forward<E: Element>(x: &Tensor<E>, gate: &Tensor<E>) -> Result<Tensor<E>> {
    let (n, c, h, w) = x.dims4("mul_elementwise")?;
    let (gn, gc, gh, gw) = gate.dims4("mul_elementwise")?;
    if (gn, gc, gh, gw) != (n, 1, h, w) {
        return Err(Error::shape(
            "mul_elementwise",
            format!("gate {:?} is not broadcastable over {:?}", gate.shape(), x.shape()),
        ));
    }
    let hw = h * w;
    let mut out = Tensor::zeros(x.shape());
    let od = out.data_mut();
    for ni in 0..n {
        let g_plane = &gate.data()[ni * hw..][..hw];
        for ci in 0..c {
            let x_plane = &x.data()[(ni * c + ci) * hw..][..hw];
            let o_plane = &mut od[(ni * c + ci) * hw..][..hw];
            for p in 0..hw {
                o_plane[p] = x_plane[p] * g_plane[p];
            }
        }
    }
    Ok(out)
}

/// Backward of [`mul_gate_forward`]: channel-broadcast for `x`, channel-sum
/// for the gate.
pub fn mul_gate_backward<E: Element>(
    x: &Tensor<E>,
    gate: &Tensor<E>,
    gout: &Tensor<E>,
) -> (Tensor<E>, Tensor<E>) {
    let (n, c, h, w) = x.dims4("mul_elementwise").expect("x is rank 4");
    let hw = h * w;
    let mut gx = Tensor::zeros(x.shape());
    let mut ggate = Tensor::zeros(gate.shape());
    for ni in 0..n {
        let g_plane = &gate.data()[ni * hw..][..hw];
        let gg_plane = &mut ggate.data_mut()[ni * hw..][..hw];
        for ci in 0..c {
            let x_plane = &x.data()[(ni * c + ci) * hw..][..hw];
            let go_plane = &gout.data()[(ni * c + ci) * hw..][..hw];
            let gx_plane = &mut gx.data_mut()[(ni * c + ci) * hw..][..hw];
            for p in 0..hw {
                gx_plane[p] += go_plane[p] * g_plane[p];
                gg_plane[p] += go_plane[p] * x_plane[p];
            }
        }
    }
    (gx, ggate)
}

/// Per-channel sums over batch and space: `[n,c,h,w] -> [c]`.
pub fn channel_sums_forward<E: Element>(x: &Tensor<E>) -> Result<Tensor<E>> {
    let (n, c, h, w) = x.dims4("channel_sums")?;
    let hw = h * w;
    let mut out = Tensor::zeros(&[c]);
    let od = out.data_mut();
    for ni in 0..n {
        for ci in 0..c {
            let plane = &x.data()[(ni * c + ci) * hw..][..hw];
            let mut acc = E::ZERO;
            for &v in plane {
                acc += v;
            }
            od[ci] += acc;
        }
    }
    Ok(out)
}

/// Broadcast of a `[c]` gradient back over `[n,c,h,w]`.
pub fn channel_sums_backward<E: Element>(gout: &Tensor<E>, input_shape: &[usize]) -> Tensor<E> {
    let (n, c, h, w) = (input_shape[0], input_shape[1], input_shape[2], input_shape[3]);
    let hw = h * w;
    let mut gx = Tensor::zeros(input_shape);
    let gxd = gx.data_mut();
    for ni in 0..n {
        for ci in 0..c {
            let g = gout.data()[ci];
            for v in gxd[(ni * c + ci) * hw..][..hw].iter_mut() {
                *v += g;
            }
        }
    }
    gx
}
