//! Convolution and transposed convolution with cross-correlation semantics,
//! as tape operations with hand-written backward passes.
//!
//! Layouts: activations `(N, C, H, W)`; conv kernels `(C_out, C_in, K, K)`;
//! transposed-conv kernels `(C_in, C_out, K, K)`. With that pairing,
//! `conv_transpose2d` applied to the same kernel tensor is the exact adjoint
//! of `conv2d` (`<conv(x), y> == <x, convT(y)>`).
//!
//! Plane-level loops are parallelized over disjoint output slices, so results
//! do not depend on the thread count.

use rayon::prelude::*;

use super::graph::{Graph, Var};
use super::tensor::Tensor;

/// Work threshold (multiply-adds) below which plane loops stay serial.
const PAR_THRESHOLD: usize = 1 << 15;

/// Output coordinates `o` in `[0, out_len)` with `0 <= o*stride + offset < in_len`.
#[inline]
fn valid_range(out_len: usize, stride: usize, offset: i64, in_len: usize) -> (usize, usize) {
    let lo = if offset >= 0 {
        0
    } else {
        ((-offset) as usize).div_ceil(stride)
    };
    let max_in = in_len as i64 - 1 - offset;
    if max_in < 0 {
        return (0, 0);
    }
    let hi = (max_in as usize / stride + 1).min(out_len);
    (lo.min(hi), hi)
}

/// Runs `f(plane_index, plane)` over consecutive `plane_len` chunks, in
/// parallel when `work` is large enough.
fn for_each_plane(
    data: &mut [f64],
    plane_len: usize,
    work: usize,
    f: impl Fn(usize, &mut [f64]) + Sync,
) {
    if work >= PAR_THRESHOLD && data.len() > plane_len {
        data.par_chunks_mut(plane_len)
            .enumerate()
            .for_each(|(i, chunk)| f(i, chunk));
    } else {
        for (i, chunk) in data.chunks_mut(plane_len).enumerate() {
            f(i, chunk);
        }
    }
}

pub fn conv2d_output_size(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    assert!(
        input + 2 * pad >= kernel,
        "conv2d: kernel {kernel} larger than padded input {input}+2*{pad}"
    );
    (input + 2 * pad - kernel) / stride + 1
}

pub fn conv_transpose2d_output_size(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    let unpadded = (input - 1) * stride + kernel;
    assert!(unpadded > 2 * pad, "conv_transpose2d: padding {pad} swallows the whole output");
    unpadded - 2 * pad
}

pub fn conv2d_forward(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (n, c_in, h, width) = x.dims4();
    let (c_out, wc_in, k, k2) = w.dims4();
    assert_eq!(k, k2, "conv2d kernels must be square");
    assert_eq!(c_in, wc_in, "conv2d: input has {c_in} channels, kernel expects {wc_in}");
    assert_eq!(b.shape(), &[c_out], "conv2d: bias must have one entry per output channel");
    let oh = conv2d_output_size(h, k, stride, pad);
    let ow = conv2d_output_size(width, k, stride, pad);
    let mut out = Tensor::zeros(&[n, c_out, oh, ow]);
    let plane = oh * ow;
    let work = n * c_out * plane * c_in * k * k;
    let (xd, wd, bd) = (x.data(), w.data(), b.data());
    for_each_plane(out.data_mut(), plane, work, |idx, out_plane| {
        let (ni, co) = (idx / c_out, idx % c_out);
        out_plane.fill(bd[co]);
        for ci in 0..c_in {
            let x_plane = &xd[(ni * c_in + ci) * h * width..(ni * c_in + ci + 1) * h * width];
            for ky in 0..k {
                let off_y = ky as i64 - pad as i64;
                let (oy_lo, oy_hi) = valid_range(oh, stride, off_y, h);
                for kx in 0..k {
                    let wv = wd[((co * c_in + ci) * k + ky) * k + kx];
                    let off_x = kx as i64 - pad as i64;
                    let (ox_lo, ox_hi) = valid_range(ow, stride, off_x, width);
                    for oy in oy_lo..oy_hi {
                        let iy = (oy * stride) as i64 + off_y;
                        let in_row = &x_plane[iy as usize * width..(iy as usize + 1) * width];
                        let out_row = &mut out_plane[oy * ow..(oy + 1) * ow];
                        for ox in ox_lo..ox_hi {
                            let ix = (ox * stride) as i64 + off_x;
                            out_row[ox] += wv * in_row[ix as usize];
                        }
                    }
                }
            }
        }
    });
    out
}

pub fn conv2d_backward_input(
    w: &Tensor,
    gout: &Tensor,
    stride: usize,
    pad: usize,
    input_shape: &[usize],
) -> Tensor {
    let (n, c_in, h, width) = (input_shape[0], input_shape[1], input_shape[2], input_shape[3]);
    let (c_out, _, k, _) = w.dims4();
    let (_, _, oh, ow) = gout.dims4();
    let mut gx = Tensor::zeros(input_shape);
    let plane = h * width;
    let work = n * c_in * plane * c_out * k * k;
    let (wd, gd) = (w.data(), gout.data());
    for_each_plane(gx.data_mut(), plane, work, |idx, gx_plane| {
        let (ni, ci) = (idx / c_in, idx % c_in);
        for co in 0..c_out {
            let g_plane = &gd[(ni * c_out + co) * oh * ow..(ni * c_out + co + 1) * oh * ow];
            for ky in 0..k {
                let off_y = ky as i64 - pad as i64;
                let (oy_lo, oy_hi) = valid_range(oh, stride, off_y, h);
                for kx in 0..k {
                    let wv = wd[((co * c_in + ci) * k + ky) * k + kx];
                    let off_x = kx as i64 - pad as i64;
                    let (ox_lo, ox_hi) = valid_range(ow, stride, off_x, width);
                    for oy in oy_lo..oy_hi {
                        let iy = ((oy * stride) as i64 + off_y) as usize;
                        let gx_row = &mut gx_plane[iy * width..(iy + 1) * width];
                        let g_row = &g_plane[oy * ow..(oy + 1) * ow];
                        for ox in ox_lo..ox_hi {
                            let ix = ((ox * stride) as i64 + off_x) as usize;
                            gx_row[ix] += wv * g_row[ox];
                        }
                    }
                }
            }
        }
    });
    gx
}

pub fn conv2d_backward_kernel(
    x: &Tensor,
    gout: &Tensor,
    stride: usize,
    pad: usize,
    kernel_shape: &[usize],
) -> Tensor {
    let (n, c_in, h, width) = x.dims4();
    let (_, _, oh, ow) = gout.dims4();
    let (c_out, k) = (kernel_shape[0], kernel_shape[2]);
    let mut gw = Tensor::zeros(kernel_shape);
    let per_co = c_in * k * k;
    let work = n * c_out * oh * ow * per_co;
    let (xd, gd) = (x.data(), gout.data());
    for_each_plane(gw.data_mut(), per_co, work, |co, gw_chunk| {
        for ni in 0..n {
            let g_plane = &gd[(ni * c_out + co) * oh * ow..(ni * c_out + co + 1) * oh * ow];
            for ci in 0..c_in {
                let x_plane = &xd[(ni * c_in + ci) * h * width..(ni * c_in + ci + 1) * h * width];
                for ky in 0..k {
                    let off_y = ky as i64 - pad as i64;
                    let (oy_lo, oy_hi) = valid_range(oh, stride, off_y, h);
                    for kx in 0..k {
                        let off_x = kx as i64 - pad as i64;
                        let (ox_lo, ox_hi) = valid_range(ow, stride, off_x, width);
                        let mut acc = 0.0;
                        for oy in oy_lo..oy_hi {
                            let iy = ((oy * stride) as i64 + off_y) as usize;
                            let in_row = &x_plane[iy * width..(iy + 1) * width];
                            let g_row = &g_plane[oy * ow..(oy + 1) * ow];
                            for ox in ox_lo..ox_hi {
                                let ix = ((ox * stride) as i64 + off_x) as usize;
                                acc += in_row[ix] * g_row[ox];
                            }
                        }
                        gw_chunk[(ci * k + ky) * k + kx] += acc;
                    }
                }
            }
        }
    });
    gw
}

/// Per-output-channel sum of the output gradient (bias gradient for both conv
/// flavors).
pub fn conv_backward_bias(gout: &Tensor) -> Tensor {
    let (n, c_out, oh, ow) = gout.dims4();
    let plane = oh * ow;
    let mut gb = Tensor::zeros(&[c_out]);
    for ni in 0..n {
        for (co, slot) in gb.data_mut().iter_mut().enumerate() {
            let base = (ni * c_out + co) * plane;
            *slot += gout.data()[base..base + plane].iter().sum::<f64>();
        }
    }
    gb
}

pub fn conv_transpose2d_forward(
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    stride: usize,
    pad: usize,
) -> Tensor {
    let (n, c_in, ih, iw) = x.dims4();
    let (wc_in, c_out, k, k2) = w.dims4();
    assert_eq!(k, k2, "conv_transpose2d kernels must be square");
    assert_eq!(c_in, wc_in, "conv_transpose2d: input has {c_in} channels, kernel expects {wc_in}");
    assert_eq!(b.shape(), &[c_out], "conv_transpose2d: bias must have one entry per output channel");
    let oh = conv_transpose2d_output_size(ih, k, stride, pad);
    let ow = conv_transpose2d_output_size(iw, k, stride, pad);
    let mut out = Tensor::zeros(&[n, c_out, oh, ow]);
    let plane = oh * ow;
    let work = n * c_out * ih * iw * c_in * k * k;
    let (xd, wd, bd) = (x.data(), w.data(), b.data());
    for_each_plane(out.data_mut(), plane, work, |idx, out_plane| {
        let (ni, co) = (idx / c_out, idx % c_out);
        out_plane.fill(bd[co]);
        for ci in 0..c_in {
            let x_plane = &xd[(ni * c_in + ci) * ih * iw..(ni * c_in + ci + 1) * ih * iw];
            for ky in 0..k {
                let off_y = ky as i64 - pad as i64;
                let (iy_lo, iy_hi) = valid_range(ih, stride, off_y, oh);
                for kx in 0..k {
                    let wv = wd[((ci * c_out + co) * k + ky) * k + kx];
                    let off_x = kx as i64 - pad as i64;
                    let (ix_lo, ix_hi) = valid_range(iw, stride, off_x, ow);
                    for iy in iy_lo..iy_hi {
                        let oy = ((iy * stride) as i64 + off_y) as usize;
                        let in_row = &x_plane[iy * iw..(iy + 1) * iw];
                        let out_row = &mut out_plane[oy * ow..(oy + 1) * ow];
                        for ix in ix_lo..ix_hi {
                            let ox = ((ix * stride) as i64 + off_x) as usize;
                            out_row[ox] += wv * in_row[ix];
                        }
                    }
                }
            }
        }
    });
    out
}

pub fn conv_transpose2d_backward_input(
    w: &Tensor,
    gout: &Tensor,
    stride: usize,
    pad: usize,
    input_shape: &[usize],
) -> Tensor {
    let (n, c_in, ih, iw) = (input_shape[0], input_shape[1], input_shape[2], input_shape[3]);
    let (_, c_out, k, _) = w.dims4();
    let (_, _, oh, ow) = gout.dims4();
    let mut gx = Tensor::zeros(input_shape);
    let plane = ih * iw;
    let work = n * c_in * plane * c_out * k * k;
    let (wd, gd) = (w.data(), gout.data());
    for_each_plane(gx.data_mut(), plane, work, |idx, gx_plane| {
        let (ni, ci) = (idx / c_in, idx % c_in);
        for co in 0..c_out {
            let g_plane = &gd[(ni * c_out + co) * oh * ow..(ni * c_out + co + 1) * oh * ow];
            for ky in 0..k {
                let off_y = ky as i64 - pad as i64;
                let (iy_lo, iy_hi) = valid_range(ih, stride, off_y, oh);
                for kx in 0..k {
                    let wv = wd[((ci * c_out + co) * k + ky) * k + kx];
                    let off_x = kx as i64 - pad as i64;
                    let (ix_lo, ix_hi) = valid_range(iw, stride, off_x, ow);
                    for iy in iy_lo..iy_hi {
                        let oy = ((iy * stride) as i64 + off_y) as usize;
                        let gx_row = &mut gx_plane[iy * iw..(iy + 1) * iw];
                        let g_row = &g_plane[oy * ow..(oy + 1) * ow];
                        for ix in ix_lo..ix_hi {
                            let ox = ((ix * stride) as i64 + off_x) as usize;
                            gx_row[ix] += wv * g_row[ox];
                        }
                    }
                }
            }
        }
    });
    gx
}

pub fn conv_transpose2d_backward_kernel(
    x: &Tensor,
    gout: &Tensor,
    stride: usize,
    pad: usize,
    kernel_shape: &[usize],
) -> Tensor {
    let (n, c_in, ih, iw) = x.dims4();
    let (_, c_out, oh, ow) = gout.dims4();
    let k = kernel_shape[2];
    let mut gw = Tensor::zeros(kernel_shape);
    let per_ci = c_out * k * k;
    let work = n * c_in * ih * iw * per_ci;
    let (xd, gd) = (x.data(), gout.data());
    for_each_plane(gw.data_mut(), per_ci, work, |ci, gw_chunk| {
        for ni in 0..n {
            let x_plane = &xd[(ni * c_in + ci) * ih * iw..(ni * c_in + ci + 1) * ih * iw];
            for co in 0..c_out {
                let g_plane = &gd[(ni * c_out + co) * oh * ow..(ni * c_out + co + 1) * oh * ow];
                for ky in 0..k {
                    let off_y = ky as i64 - pad as i64;
                    let (iy_lo, iy_hi) = valid_range(ih, stride, off_y, oh);
                    for kx in 0..k {
                        let off_x = kx as i64 - pad as i64;
                        let (ix_lo, ix_hi) = valid_range(iw, stride, off_x, ow);
                        let mut acc = 0.0;
                        for iy in iy_lo..iy_hi {
                            let oy = ((iy * stride) as i64 + off_y) as usize;
                            let in_row = &x_plane[iy * iw..(iy + 1) * iw];
                            let g_row = &g_plane[oy * ow..(oy + 1) * ow];
                            for ix in ix_lo..ix_hi {
                                let ox = ((ix * stride) as i64 + off_x) as usize;
                                acc += in_row[ix] * g_row[ox];
                            }
                        }
                        gw_chunk[(co * k + ky) * k + kx] += acc;
                    }
                }
            }
        }
    });
    gw
}

impl Graph {
    /// 2D cross-correlation, `out = x (*) w + b`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let out = conv2d_forward(self.value(x), self.value(w), self.value(b), stride, pad);
        self.custom(
            out,
            &[x, w, b],
            Box::new(move |g, grad, sink| {
                if g.needs_grad(x) {
                    sink.add(
                        x,
                        conv2d_backward_input(g.value(w), grad, stride, pad, g.value(x).shape()),
                    );
                }
                if g.needs_grad(w) {
                    sink.add(
                        w,
                        conv2d_backward_kernel(g.value(x), grad, stride, pad, g.value(w).shape()),
                    );
                }
                if g.needs_grad(b) {
                    sink.add(b, conv_backward_bias(grad));
                }
            }),
        )
    }

    /// Transposed 2D convolution (adjoint of [`Graph::conv2d`] with the same
    /// hyperparameters).
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let out = conv_transpose2d_forward(self.value(x), self.value(w), self.value(b), stride, pad);
        self.custom(
            out,
            &[x, w, b],
            Box::new(move |g, grad, sink| {
                if g.needs_grad(x) {
                    sink.add(
                        x,
                        conv_transpose2d_backward_input(
                            g.value(w),
                            grad,
                            stride,
                            pad,
                            g.value(x).shape(),
                        ),
                    );
                }
                if g.needs_grad(w) {
                    sink.add(
                        w,
                        conv_transpose2d_backward_kernel(
                            g.value(x),
                            grad,
                            stride,
                            pad,
                            g.value(w).shape(),
                        ),
                    );
                }
                if g.needs_grad(b) {
                    sink.add(b, conv_backward_bias(grad));
                }
            }),
        )
    }
}
