//! Spatial resampling kernels: non-overlapping average pooling and
//! bilinear resize with half-pixel source mapping (no corner
//! alignment). Backward passes are the exact adjoints.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{fmt_shape, Tensor};

fn chw(shape: &[usize], what: &str) -> Result<(usize, usize, usize)> {
    if shape.len() != 3 {
        return Err(Error::Dimension(format!(
            "{what} expects rank 3 (C,H,W), got {}",
            fmt_shape(shape)
        )));
    }
    Ok((shape[0], shape[1], shape[2]))
}

pub fn avg_pool2d<T: Scalar>(input: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
    let (c, h, w) = chw(input.shape(), "avg_pool2d")?;
    if k == 0 || h % k != 0 || w % k != 0 {
        return Err(Error::Dimension(format!(
            "avg_pool2d window {k} must divide H={h} (axis 1) and W={w} (axis 2)"
        )));
    }
    let (ho, wo) = (h / k, w / k);
    let inv = T::c(1.0 / (k * k) as f64);
    let mut out = vec![T::zero(); c * ho * wo];
    for ci in 0..c {
        let chan = &input.data()[ci * h * w..(ci + 1) * h * w];
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = T::zero();
                for dy in 0..k {
                    let row = (oy * k + dy) * w + ox * k;
                    for &v in &chan[row..row + k] {
                        acc += v;
                    }
                }
                out[ci * ho * wo + oy * wo + ox] = acc * inv;
            }
        }
    }
    Tensor::from_vec(vec![c, ho, wo], out)
}

pub fn avg_pool2d_backward<T: Scalar>(
    input_shape: &[usize],
    grad_out: &Tensor<T>,
    k: usize,
) -> Result<Tensor<T>> {
    let (c, h, w) = chw(input_shape, "avg_pool2d")?;
    let (ho, wo) = (h / k, w / k);
    let inv = T::c(1.0 / (k * k) as f64);
    let mut d_in = vec![T::zero(); c * h * w];
    for ci in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                let g = grad_out.data()[ci * ho * wo + oy * wo + ox] * inv;
                for dy in 0..k {
                    let row = ci * h * w + (oy * k + dy) * w + ox * k;
                    for v in &mut d_in[row..row + k] {
                        *v += g;
                    }
                }
            }
        }
    }
    Tensor::from_vec(input_shape.to_vec(), d_in)
}

/// Source taps and weight for one output coordinate under half-pixel
/// mapping: src = (i + 0.5) · n_in/n_out − 0.5, clamped to the grid.
fn lerp_taps(n_in: usize, n_out: usize, i: usize) -> (usize, usize, f64) {
    let src = (i as f64 + 0.5) * (n_in as f64 / n_out as f64) - 0.5;
    let floor = src.floor();
    let w1 = src - floor;
    let i0 = (floor.max(0.0) as usize).min(n_in - 1);
    let i1 = ((floor + 1.0).max(0.0) as usize).min(n_in - 1);
    (i0, i1, w1)
}

pub fn bilinear_resize<T: Scalar>(
    input: &Tensor<T>,
    h_out: usize,
    w_out: usize,
) -> Result<Tensor<T>> {
    let (c, h, w) = chw(input.shape(), "bilinear_resize")?;
    if h_out == 0 || w_out == 0 {
        return Err(Error::Dimension(
            "bilinear_resize target extents must be positive".into(),
        ));
    }
    let ytaps: Vec<_> = (0..h_out).map(|i| lerp_taps(h, h_out, i)).collect();
    let xtaps: Vec<_> = (0..w_out).map(|j| lerp_taps(w, w_out, j)).collect();
    let mut out = vec![T::zero(); c * h_out * w_out];
    for ci in 0..c {
        let chan = &input.data()[ci * h * w..(ci + 1) * h * w];
        for (oy, &(y0, y1, wy)) in ytaps.iter().enumerate() {
            let wy = T::c(wy);
            for (ox, &(x0, x1, wx)) in xtaps.iter().enumerate() {
                let wx = T::c(wx);
                let top = chan[y0 * w + x0] + (chan[y0 * w + x1] - chan[y0 * w + x0]) * wx;
                let bot = chan[y1 * w + x0] + (chan[y1 * w + x1] - chan[y1 * w + x0]) * wx;
                out[ci * h_out * w_out + oy * w_out + ox] = top + (bot - top) * wy;
            }
        }
    }
    Tensor::from_vec(vec![c, h_out, w_out], out)
}

pub fn bilinear_resize_backward<T: Scalar>(
    input_shape: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (c, h, w) = chw(input_shape, "bilinear_resize")?;
    let (h_out, w_out) = (grad_out.shape()[1], grad_out.shape()[2]);
    let ytaps: Vec<_> = (0..h_out).map(|i| lerp_taps(h, h_out, i)).collect();
    let xtaps: Vec<_> = (0..w_out).map(|j| lerp_taps(w, w_out, j)).collect();
    let mut d_in = vec![T::zero(); c * h * w];
    for ci in 0..c {
        let chan = &mut d_in[ci * h * w..(ci + 1) * h * w];
        for (oy, &(y0, y1, wy)) in ytaps.iter().enumerate() {
            for (ox, &(x0, x1, wx)) in xtaps.iter().enumerate() {
                let g = grad_out.data()[ci * h_out * w_out + oy * w_out + ox];
                let (wy1, wy0) = (T::c(wy), T::c(1.0 - wy));
                let (wx1, wx0) = (T::c(wx), T::c(1.0 - wx));
                chan[y0 * w + x0] += g * wy0 * wx0;
                chan[y0 * w + x1] += g * wy0 * wx1;
                chan[y1 * w + x0] += g * wy1 * wx0;
                chan[y1 * w + x1] += g * wy1 * wx1;
            }
        }
    }
    Tensor::from_vec(input_shape.to_vec(), d_in)
}
