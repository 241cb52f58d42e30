//! Convolution forward and backward kernels. Both directions lower onto
//! im2col/col2im plus GEMM so the cost lives in one tight loop.
//!
//! Layouts (row-major):
//!   conv2d            input [C_in, H, W], weight [C_out, C_in/groups, k, k]
//!   conv_transpose2d  input [C_in, H, W], weight [C_in, C_out, k, k]
//!
//! Output extents are exact: a parameterization whose output extent is
//! not a positive integer is a config error, never a silent floor.

use crate::error::{Error, Result};
use crate::ops::gemm::{gemm_a_bt, gemm_acc, gemm_at_b};
use crate::scalar::Scalar;
use crate::tensor::{fmt_shape, Tensor};

#[derive(Debug, Clone, Copy)]
pub struct ConvDims {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub h_in: usize,
    pub w_in: usize,
    pub h_out: usize,
    pub w_out: usize,
    pub groups: usize,
}

fn out_extent(name: &str, n: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = n + 2 * pad;
    if padded < k {
        return Err(Error::Config(format!(
            "conv {name}: kernel {k} exceeds padded extent {padded}"
        )));
    }
    if (padded - k) % stride != 0 {
        return Err(Error::Config(format!(
            "conv {name}: ({n} + 2*{pad} - {k}) not divisible by stride {stride}; \
             output extent would not be an integer"
        )));
    }
    Ok((padded - k) / stride + 1)
}

pub fn conv2d_dims(
    input_shape: &[usize],
    weight_shape: &[usize],
    stride: usize,
    padding: usize,
    groups: usize,
) -> Result<ConvDims> {
    if input_shape.len() != 3 {
        return Err(Error::Dimension(format!(
            "conv2d input must be rank 3 (C,H,W), got {}",
            fmt_shape(input_shape)
        )));
    }
    if weight_shape.len() != 4 {
        return Err(Error::Dimension(format!(
            "conv2d weight must be rank 4 (C_out,C_in/groups,k,k), got {}",
            fmt_shape(weight_shape)
        )));
    }
    let (c_in, h_in, w_in) = (input_shape[0], input_shape[1], input_shape[2]);
    let (c_out, c_in_g, kh, kw) = (
        weight_shape[0],
        weight_shape[1],
        weight_shape[2],
        weight_shape[3],
    );
    if kh != kw {
        return Err(Error::Dimension(format!(
            "conv2d kernels are square, got {kh}x{kw}"
        )));
    }
    if stride == 0 {
        return Err(Error::Config("conv2d stride must be positive".into()));
    }
    if groups == 0 || c_in % groups != 0 || c_out % groups != 0 {
        return Err(Error::Dimension(format!(
            "conv2d groups={groups} must divide C_in={c_in} (axis 0 of input) and C_out={c_out}"
        )));
    }
    if c_in_g != c_in / groups {
        return Err(Error::Dimension(format!(
            "conv2d weight axis 1 is {c_in_g}, expected C_in/groups = {}",
            c_in / groups
        )));
    }
    let h_out = out_extent("height", h_in, kh, stride, padding)?;
    let w_out = out_extent("width", w_in, kw, stride, padding)?;
    Ok(ConvDims {
        c_in,
        c_out,
        k: kh,
        h_in,
        w_in,
        h_out,
        w_out,
        groups,
    })
}

/// Valid output-column range [lo, hi) for one kernel tap, i.e. the `o`
/// with 0 <= o*stride + kk - pad < n.
fn tap_range(n: usize, n_out: usize, kk: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if kk >= pad {
        0
    } else {
        (pad - kk + stride - 1) / stride
    };
    let max_i = n as isize - 1 + pad as isize - kk as isize;
    if max_i < 0 {
        return (0, 0);
    }
    let hi = (max_i as usize / stride + 1).min(n_out);
    (lo.min(hi), hi)
}

/// Expands `input` ([c, h, w], one group's channels) into the column
/// matrix [c*k*k, h_out*w_out] for the given conv geometry.
fn im2col<T: Scalar>(
    input: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    h_out: usize,
    w_out: usize,
    col: &mut [T],
) {
    debug_assert_eq!(col.len(), c * k * k * h_out * w_out);
    for v in col.iter_mut() {
        *v = T::zero();
    }
    for ci in 0..c {
        let chan = &input[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            let (oy_lo, oy_hi) = tap_range(h, h_out, ki, stride, pad);
            for kj in 0..k {
                let (ox_lo, ox_hi) = tap_range(w, w_out, kj, stride, pad);
                let row = (ci * k * k + ki * k + kj) * (h_out * w_out);
                for oy in oy_lo..oy_hi {
                    let iy = oy * stride + ki - pad;
                    let src = &chan[iy * w..(iy + 1) * w];
                    let dst = &mut col[row + oy * w_out..row + (oy + 1) * w_out];
                    if stride == 1 {
                        let ix0 = ox_lo + kj - pad;
                        dst[ox_lo..ox_hi].copy_from_slice(&src[ix0..ix0 + (ox_hi - ox_lo)]);
                    } else {
                        for ox in ox_lo..ox_hi {
                            dst[ox] = src[ox * stride + kj - pad];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of `im2col`: scatter-adds the column matrix back onto the
/// [c, h, w] grid.
fn col2im<T: Scalar>(
    col: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    h_out: usize,
    w_out: usize,
    out: &mut [T],
) {
    debug_assert_eq!(col.len(), c * k * k * h_out * w_out);
    debug_assert_eq!(out.len(), c * h * w);
    for ci in 0..c {
        let chan = &mut out[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            let (oy_lo, oy_hi) = tap_range(h, h_out, ki, stride, pad);
            for kj in 0..k {
                let (ox_lo, ox_hi) = tap_range(w, w_out, kj, stride, pad);
                let row = (ci * k * k + ki * k + kj) * (h_out * w_out);
                for oy in oy_lo..oy_hi {
                    let iy = oy * stride + ki - pad;
                    let src = &col[row + oy * w_out..row + (oy + 1) * w_out];
                    let dst = &mut chan[iy * w..(iy + 1) * w];
                    for ox in ox_lo..ox_hi {
                        dst[ox * stride + kj - pad] += src[ox];
                    }
                }
            }
        }
    }
}

pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Result<Tensor<T>> {
    let d = conv2d_dims(input.shape(), weight.shape(), stride, padding, groups)?;
    if let Some(b) = bias {
        if b.shape() != [d.c_out] {
            return Err(Error::Dimension(format!(
                "conv2d bias must be [{}], got {}",
                d.c_out,
                fmt_shape(b.shape())
            )));
        }
    }
    let (cg_in, cg_out) = (d.c_in / d.groups, d.c_out / d.groups);
    let hw_out = d.h_out * d.w_out;
    let kk = d.k * d.k;
    let mut out = vec![T::zero(); d.c_out * hw_out];
    let mut col = vec![T::zero(); cg_in * kk * hw_out];
    for g in 0..d.groups {
        im2col(
            &input.data()[g * cg_in * d.h_in * d.w_in..(g + 1) * cg_in * d.h_in * d.w_in],
            cg_in,
            d.h_in,
            d.w_in,
            d.k,
            stride,
            padding,
            d.h_out,
            d.w_out,
            &mut col,
        );
        gemm_acc(
            cg_out,
            cg_in * kk,
            hw_out,
            &weight.data()[g * cg_out * cg_in * kk..(g + 1) * cg_out * cg_in * kk],
            &col,
            &mut out[g * cg_out * hw_out..(g + 1) * cg_out * hw_out],
        );
    }
    if let Some(b) = bias {
        for co in 0..d.c_out {
            let bv = b.data()[co];
            for v in &mut out[co * hw_out..(co + 1) * hw_out] {
                *v += bv;
            }
        }
    }
    Tensor::from_vec(vec![d.c_out, d.h_out, d.w_out], out)
}

/// Gradients of conv2d w.r.t. input, weight and bias given the upstream
/// gradient on the output.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let d = conv2d_dims(input.shape(), weight.shape(), stride, padding, groups)?;
    debug_assert_eq!(grad_out.shape(), [d.c_out, d.h_out, d.w_out]);
    let (cg_in, cg_out) = (d.c_in / d.groups, d.c_out / d.groups);
    let hw_out = d.h_out * d.w_out;
    let kk = d.k * d.k;

    let mut d_in = vec![T::zero(); d.c_in * d.h_in * d.w_in];
    let mut d_w = vec![T::zero(); weight.numel()];
    let mut d_b = vec![T::zero(); d.c_out];

    let mut col = vec![T::zero(); cg_in * kk * hw_out];
    let mut col_grad = vec![T::zero(); cg_in * kk * hw_out];
    for g in 0..d.groups {
        let go = &grad_out.data()[g * cg_out * hw_out..(g + 1) * cg_out * hw_out];
        let w_g = &weight.data()[g * cg_out * cg_in * kk..(g + 1) * cg_out * cg_in * kk];

        im2col(
            &input.data()[g * cg_in * d.h_in * d.w_in..(g + 1) * cg_in * d.h_in * d.w_in],
            cg_in,
            d.h_in,
            d.w_in,
            d.k,
            stride,
            padding,
            d.h_out,
            d.w_out,
            &mut col,
        );
        // dW_g = gOut_g · colᵀ
        gemm_a_bt(
            cg_out,
            hw_out,
            cg_in * kk,
            go,
            &col,
            &mut d_w[g * cg_out * cg_in * kk..(g + 1) * cg_out * cg_in * kk],
        );
        // col_grad = W_gᵀ · gOut_g, then scatter back onto the input grid.
        for v in col_grad.iter_mut() {
            *v = T::zero();
        }
        gemm_at_b(cg_in * kk, cg_out, hw_out, w_g, go, &mut col_grad);
        col2im(
            &col_grad,
            cg_in,
            d.h_in,
            d.w_in,
            d.k,
            stride,
            padding,
            d.h_out,
            d.w_out,
            &mut d_in[g * cg_in * d.h_in * d.w_in..(g + 1) * cg_in * d.h_in * d.w_in],
        );
        for co in 0..cg_out {
            let mut acc = T::zero();
            for &v in &go[co * hw_out..(co + 1) * hw_out] {
                acc += v;
            }
            d_b[g * cg_out + co] = acc;
        }
    }
    Ok((
        Tensor::from_vec(input.shape().to_vec(), d_in)?,
        Tensor::from_vec(weight.shape().to_vec(), d_w)?,
        Tensor::from_vec(vec![d.c_out], d_b)?,
    ))
}

pub fn conv_transpose2d_dims(
    input_shape: &[usize],
    weight_shape: &[usize],
    stride: usize,
    padding: usize,
) -> Result<ConvDims> {
    if input_shape.len() != 3 {
        return Err(Error::Dimension(format!(
            "conv_transpose2d input must be rank 3 (C,H,W), got {}",
            fmt_shape(input_shape)
        )));
    }
    if weight_shape.len() != 4 {
        return Err(Error::Dimension(format!(
            "conv_transpose2d weight must be rank 4 (C_in,C_out,k,k), got {}",
            fmt_shape(weight_shape)
        )));
    }
    let (c_in, h_in, w_in) = (input_shape[0], input_shape[1], input_shape[2]);
    let (wc_in, c_out, kh, kw) = (
        weight_shape[0],
        weight_shape[1],
        weight_shape[2],
        weight_shape[3],
    );
    if kh != kw {
        return Err(Error::Dimension(format!(
            "conv_transpose2d kernels are square, got {kh}x{kw}"
        )));
    }
    if wc_in != c_in {
        return Err(Error::Dimension(format!(
            "conv_transpose2d weight axis 0 is {wc_in}, input has C_in={c_in}"
        )));
    }
    if stride == 0 {
        return Err(Error::Config("conv_transpose2d stride must be positive".into()));
    }
    let h_full = (h_in - 1) * stride + kh;
    let w_full = (w_in - 1) * stride + kw;
    if h_full <= 2 * padding || w_full <= 2 * padding {
        return Err(Error::Config(format!(
            "conv_transpose2d padding {padding} consumes the whole output ({h_full}x{w_full})"
        )));
    }
    Ok(ConvDims {
        c_in,
        c_out,
        k: kh,
        h_in,
        w_in,
        h_out: h_full - 2 * padding,
        w_out: w_full - 2 * padding,
        groups: 1,
    })
}

pub fn conv_transpose2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let d = conv_transpose2d_dims(input.shape(), weight.shape(), stride, padding)?;
    if let Some(b) = bias {
        if b.shape() != [d.c_out] {
            return Err(Error::Dimension(format!(
                "conv_transpose2d bias must be [{}], got {}",
                d.c_out,
                fmt_shape(b.shape())
            )));
        }
    }
    let kk = d.k * d.k;
    let hw_in = d.h_in * d.w_in;
    // col[(co,ki,kj), (y,x)] = Σ_ci w[ci,co,ki,kj] · in[ci,y,x]
    let mut col = vec![T::zero(); d.c_out * kk * hw_in];
    gemm_at_b(d.c_out * kk, d.c_in, hw_in, weight.data(), input.data(), &mut col);
    let mut out = vec![T::zero(); d.c_out * d.h_out * d.w_out];
    col2im(
        &col, d.c_out, d.h_out, d.w_out, d.k, stride, padding, d.h_in, d.w_in, &mut out,
    );
    if let Some(b) = bias {
        let hw_out = d.h_out * d.w_out;
        for co in 0..d.c_out {
            let bv = b.data()[co];
            for v in &mut out[co * hw_out..(co + 1) * hw_out] {
                *v += bv;
            }
        }
    }
    Tensor::from_vec(vec![d.c_out, d.h_out, d.w_out], out)
}

pub fn conv_transpose2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let d = conv_transpose2d_dims(input.shape(), weight.shape(), stride, padding)?;
    debug_assert_eq!(grad_out.shape(), [d.c_out, d.h_out, d.w_out]);
    let kk = d.k * d.k;
    let hw_in = d.h_in * d.w_in;

    // Gathering grad_out with the forward geometry linearizes both rules.
    let mut col = vec![T::zero(); d.c_out * kk * hw_in];
    im2col(
        grad_out.data(),
        d.c_out,
        d.h_out,
        d.w_out,
        d.k,
        stride,
        padding,
        d.h_in,
        d.w_in,
        &mut col,
    );
    // dIn = W · col, dW = in · colᵀ
    let mut d_in = vec![T::zero(); d.c_in * hw_in];
    gemm_acc(d.c_in, d.c_out * kk, hw_in, weight.data(), &col, &mut d_in);
    let mut d_w = vec![T::zero(); weight.numel()];
    gemm_a_bt(d.c_in, hw_in, d.c_out * kk, input.data(), &col, &mut d_w);

    let hw_out = d.h_out * d.w_out;
    let mut d_b = vec![T::zero(); d.c_out];
    for co in 0..d.c_out {
        let mut acc = T::zero();
        for &v in &grad_out.data()[co * hw_out..(co + 1) * hw_out] {
            acc += v;
        }
        d_b[co] = acc;
    }
    Ok((
        Tensor::from_vec(input.shape().to_vec(), d_in)?,
        Tensor::from_vec(weight.shape().to_vec(), d_w)?,
        Tensor::from_vec(vec![d.c_out], d_b)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct 7-loop reference, independent of the im2col path.
    fn conv2d_naive(
        input: &Tensor<f64>,
        weight: &Tensor<f64>,
        bias: Option<&Tensor<f64>>,
        stride: usize,
        pad: usize,
        groups: usize,
    ) -> Tensor<f64> {
        let d = conv2d_dims(input.shape(), weight.shape(), stride, pad, groups).unwrap();
        let (cg_in, cg_out) = (d.c_in / groups, d.c_out / groups);
        let mut out = vec![0.0; d.c_out * d.h_out * d.w_out];
        for g in 0..groups {
            for co_l in 0..cg_out {
                let co = g * cg_out + co_l;
                for oy in 0..d.h_out {
                    for ox in 0..d.w_out {
                        let mut acc = bias.map_or(0.0, |b| b.data()[co]);
                        for ci_l in 0..cg_in {
                            let ci = g * cg_in + ci_l;
                            for ki in 0..d.k {
                                for kj in 0..d.k {
                                    let iy = oy as isize * stride as isize + ki as isize
                                        - pad as isize;
                                    let ix = ox as isize * stride as isize + kj as isize
                                        - pad as isize;
                                    if iy < 0
                                        || ix < 0
                                        || iy >= d.h_in as isize
                                        || ix >= d.w_in as isize
                                    {
                                        continue;
                                    }
                                    let iv = input.data()
                                        [ci * d.h_in * d.w_in + iy as usize * d.w_in + ix as usize];
                                    let wv = weight.data()
                                        [((co * cg_in + ci_l) * d.k + ki) * d.k + kj];
                                    acc += iv * wv;
                                }
                            }
                        }
                        out[co * d.h_out * d.w_out + oy * d.w_out + ox] = acc;
                    }
                }
            }
        }
        Tensor::from_vec(vec![d.c_out, d.h_out, d.w_out], out).unwrap()
    }

    fn arb_tensor(seed: u64, shape: Vec<usize>) -> Tensor<f64> {
        let mut s = seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(1);
        Tensor::from_fn(shape, |_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    #[test]
    fn all_ones_3x3_same_conv_counts_overlap() {
        let input = Tensor::<f64>::ones(vec![1, 4, 4]);
        let weight = Tensor::<f64>::ones(vec![1, 1, 3, 3]);
        let out = conv2d(&input, &weight, None, 1, 1, 1).unwrap();
        assert_eq!(out.shape(), &[1, 4, 4]);
        // Corner sees 4 input cells, edge 6, interior 9.
        let d = out.data();
        assert_eq!(d[0], 4.0);
        assert_eq!(d[1], 6.0);
        assert_eq!(d[5], 9.0);
        assert_eq!(d[15], 4.0);
    }

    #[test]
    fn depthwise_1x1_is_per_channel_scaling() {
        let input = arb_tensor(3, vec![3, 2, 2]);
        let weight = Tensor::from_vec(vec![3, 1, 1, 1], vec![2.0, -1.0, 0.5]).unwrap();
        let out = conv2d(&input, &weight, None, 1, 0, 3).unwrap();
        for c in 0..3 {
            for i in 0..4 {
                let scale = [2.0, -1.0, 0.5][c];
                assert_eq!(out.data()[c * 4 + i], input.data()[c * 4 + i] * scale);
            }
        }
    }

    #[test]
    fn matches_naive_across_geometries() {
        let cases = [
            // (c_in, c_out, h, w, k, stride, pad, groups)
            (1, 1, 5, 5, 3, 1, 1, 1),
            (3, 4, 6, 8, 3, 1, 1, 1),
            (4, 6, 8, 6, 4, 2, 1, 2),
            (8, 8, 6, 6, 5, 1, 2, 4),
            (2, 3, 7, 7, 1, 1, 0, 1),
            (3, 2, 9, 9, 3, 3, 0, 1),
        ];
        for (i, &(ci, co, h, w, k, s, p, g)) in cases.iter().enumerate() {
            let input = arb_tensor(i as u64 * 7 + 1, vec![ci, h, w]);
            let weight = arb_tensor(i as u64 * 13 + 2, vec![co, ci / g, k, k]);
            let bias = arb_tensor(i as u64 * 17 + 3, vec![co]);
            let got = conv2d(&input, &weight, Some(&bias), s, p, g).unwrap();
            let want = conv2d_naive(&input, &weight, Some(&bias), s, p, g);
            assert!(got.max_abs_diff(&want).unwrap() < 1e-12, "case {i}");
        }
    }

    #[test]
    fn non_integer_output_extent_is_config_error() {
        // 4x4 input, k3 s2 p1: (4 + 2 - 3) = 3 not divisible by 2.
        let input = Tensor::<f64>::ones(vec![1, 4, 4]);
        let weight = Tensor::<f64>::ones(vec![1, 1, 3, 3]);
        let err = conv2d(&input, &weight, None, 2, 1, 1).unwrap_err();
        assert_eq!(err.category(), "config");
    }

    #[test]
    fn transpose_broadcasts_single_pixel() {
        let input = Tensor::from_vec(vec![1, 1, 1], vec![1.0]).unwrap();
        let weight = Tensor::<f64>::ones(vec![1, 1, 2, 2]);
        let out = conv_transpose2d(&input, &weight, None, 2, 0).unwrap();
        assert_eq!(out.shape(), &[1, 2, 2]);
        assert_eq!(out.data(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn transpose_k2_s2_doubles_extent() {
        let input = arb_tensor(11, vec![3, 4, 5]);
        let weight = arb_tensor(12, vec![3, 2, 2, 2]);
        let out = conv_transpose2d(&input, &weight, None, 2, 0).unwrap();
        assert_eq!(out.shape(), &[2, 8, 10]);
    }

    /// conv2d and conv_transpose2d sharing one weight buffer are
    /// adjoint maps: ⟨conv(x), y⟩ = ⟨x, convᵀ(y)⟩. A conv weight
    /// [c_out, c_in, k, k] read as a transposed-conv weight has
    /// C_in = c_out and C_out = c_in with no data movement. Catches
    /// geometry bugs in either direction.
    #[test]
    fn conv_and_transpose_are_adjoint() {
        for &(ci, co, h, w, k, s, p) in
            &[(2usize, 3usize, 6usize, 6usize, 3usize, 1usize, 1usize), (3, 2, 8, 6, 4, 2, 1), (1, 4, 5, 7, 2, 1, 0)]
        {
            let x = arb_tensor(21, vec![ci, h, w]);
            let wgt = arb_tensor(22, vec![co, ci, k, k]);
            let y_shape = conv2d_dims(x.shape(), wgt.shape(), s, p, 1).unwrap();
            let y = arb_tensor(23, vec![co, y_shape.h_out, y_shape.w_out]);

            let cx = conv2d(&x, &wgt, None, s, p, 1).unwrap();
            let lhs: f64 = cx.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();

            let ty = conv_transpose2d(&y, &wgt, None, s, p).unwrap();
            assert_eq!(ty.shape(), x.shape());
            let rhs: f64 = x.data().iter().zip(ty.data()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10, "adjoint mismatch {lhs} vs {rhs}");
        }
    }

    /// Backward rules against brute-force directional sums.
    #[test]
    fn conv2d_backward_matches_scatter_reference() {
        let (ci, co, h, w, k, s, p, g) = (4, 6, 6, 5, 3, 1, 1, 2);
        let input = arb_tensor(31, vec![ci, h, w]);
        let weight = arb_tensor(32, vec![co, ci / g, k, k]);
        let dims = conv2d_dims(input.shape(), weight.shape(), s, p, g).unwrap();
        let go = arb_tensor(33, vec![co, dims.h_out, dims.w_out]);
        let (d_in, d_w, d_b) = conv2d_backward(&input, &weight, &go, s, p, g).unwrap();

        // Reference: accumulate per-connection products directly.
        let cg_in = ci / g;
        let cg_out = co / g;
        let mut r_in = vec![0.0; input.numel()];
        let mut r_w = vec![0.0; weight.numel()];
        let mut r_b = vec![0.0; co];
        for gi in 0..g {
            for co_l in 0..cg_out {
                let coa = gi * cg_out + co_l;
                for oy in 0..dims.h_out {
                    for ox in 0..dims.w_out {
                        let gv = go.data()[coa * dims.h_out * dims.w_out + oy * dims.w_out + ox];
                        r_b[coa] += gv;
                        for ci_l in 0..cg_in {
                            let cia = gi * cg_in + ci_l;
                            for ki in 0..k {
                                for kj in 0..k {
                                    let iy = (oy * s + ki) as isize - p as isize;
                                    let ix = (ox * s + kj) as isize - p as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    let ii = cia * h * w + iy as usize * w + ix as usize;
                                    let wi = ((coa * cg_in + ci_l) * k + ki) * k + kj;
                                    r_in[ii] += gv * weight.data()[wi];
                                    r_w[wi] += gv * input.data()[ii];
                                }
                            }
                        }
                    }
                }
            }
        }
        for (a, b) in d_in.data().iter().zip(r_in.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in d_w.data().iter().zip(r_w.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in d_b.data().iter().zip(r_b.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_transpose_backward_matches_scatter_reference() {
        let (ci, co, h, w, k, s, p) = (3, 2, 4, 5, 3, 2, 1);
        let input = arb_tensor(41, vec![ci, h, w]);
        let weight = arb_tensor(42, vec![ci, co, k, k]);
        let dims = conv_transpose2d_dims(input.shape(), weight.shape(), s, p).unwrap();
        let go = arb_tensor(43, vec![co, dims.h_out, dims.w_out]);
        let (d_in, d_w, d_b) = conv_transpose2d_backward(&input, &weight, &go, s, p).unwrap();

        let mut r_in = vec![0.0; input.numel()];
        let mut r_w = vec![0.0; weight.numel()];
        let mut r_b = vec![0.0; co];
        for cia in 0..ci {
            for y in 0..h {
                for x in 0..w {
                    for coa in 0..co {
                        for ki in 0..k {
                            for kj in 0..k {
                                let oy = (y * s + ki) as isize - p as isize;
                                let ox = (x * s + kj) as isize - p as isize;
                                if oy < 0
                                    || ox < 0
                                    || oy >= dims.h_out as isize
                                    || ox >= dims.w_out as isize
                                {
                                    continue;
                                }
                                let go_i = coa * dims.h_out * dims.w_out
                                    + oy as usize * dims.w_out
                                    + ox as usize;
                                let in_i = cia * h * w + y * w + x;
                                let w_i = ((cia * co + coa) * k + ki) * k + kj;
                                r_in[in_i] += go.data()[go_i] * weight.data()[w_i];
                                r_w[w_i] += go.data()[go_i] * input.data()[in_i];
                            }
                        }
                    }
                }
            }
        }
        for coa in 0..co {
            for v in
                &go.data()[coa * dims.h_out * dims.w_out..(coa + 1) * dims.h_out * dims.w_out]
            {
                r_b[coa] += v;
            }
        }
        for (a, b) in d_in.data().iter().zip(r_in.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in d_w.data().iter().zip(r_w.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in d_b.data().iter().zip(r_b.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
