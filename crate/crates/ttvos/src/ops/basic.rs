//! Pointwise and shape-moving kernels plus their backward rules.

use crate::error::{Error, Result};
use crate::ops::gemm::gemm;
use crate::scalar::Scalar;
use crate::tensor::{fmt_shape, Tensor};

pub fn leaky_relu<T: Scalar>(input: &Tensor<T>, alpha: T) -> Tensor<T> {
    // Slope is exactly 1 at x = 0 (the x >= 0 branch).
    input.map(|x| if x >= T::zero() { x } else { alpha * x })
}

pub fn leaky_relu_backward<T: Scalar>(
    input: &Tensor<T>,
    grad_out: &Tensor<T>,
    alpha: T,
) -> Tensor<T> {
    input
        .zip_map(grad_out, |x, g| if x >= T::zero() { g } else { alpha * g })
        .expect("leaky_relu grad shape checked at record time")
}

/// Lane decomposition for an axis: (outer, len, inner) with the lane
/// elements at outer_idx*len*inner + l*inner + inner_idx.
fn lanes(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::Dimension(format!(
            "axis {axis} out of range for shape {}",
            fmt_shape(shape)
        )));
    }
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

pub fn softmax<T: Scalar>(input: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let (outer, len, inner) = lanes(input.shape(), axis)?;
    let src = input.data();
    let mut out = vec![T::zero(); src.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut mx = src[base];
            for l in 1..len {
                mx = mx.max(src[base + l * inner]);
            }
            let mut sum = T::zero();
            for l in 0..len {
                let e = (src[base + l * inner] - mx).exp();
                out[base + l * inner] = e;
                sum += e;
            }
            for l in 0..len {
                out[base + l * inner] = out[base + l * inner] / sum;
            }
        }
    }
    Tensor::from_vec(input.shape().to_vec(), out)
}

/// dL/dx = s ⊙ (g − ⟨g, s⟩) per lane, where s is the forward output.
pub fn softmax_backward<T: Scalar>(
    output: &Tensor<T>,
    grad_out: &Tensor<T>,
    axis: usize,
) -> Result<Tensor<T>> {
    let (outer, len, inner) = lanes(output.shape(), axis)?;
    let s = output.data();
    let g = grad_out.data();
    let mut d = vec![T::zero(); s.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut dot = T::zero();
            for l in 0..len {
                dot += g[base + l * inner] * s[base + l * inner];
            }
            for l in 0..len {
                let idx = base + l * inner;
                d[idx] = s[idx] * (g[idx] - dot);
            }
        }
    }
    Tensor::from_vec(output.shape().to_vec(), d)
}

pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 || b.rank() != 2 {
        return Err(Error::Dimension(format!(
            "matmul needs two rank-2 tensors, got {} and {}",
            fmt_shape(a.shape()),
            fmt_shape(b.shape())
        )));
    }
    let (m, ka) = (a.shape()[0], a.shape()[1]);
    let (kb, n) = (b.shape()[0], b.shape()[1]);
    if ka != kb {
        return Err(Error::Dimension(format!(
            "matmul inner axes differ: {ka} (axis 1 of left) vs {kb} (axis 0 of right)"
        )));
    }
    Tensor::from_vec(vec![m, n], gemm(m, ka, n, a.data(), b.data()))
}

pub fn transpose2d<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    if input.rank() != 2 {
        return Err(Error::Dimension(format!(
            "transpose needs rank 2, got {}",
            fmt_shape(input.shape())
        )));
    }
    let (m, n) = (input.shape()[0], input.shape()[1]);
    let src = input.data();
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = src[i * n + j];
        }
    }
    Tensor::from_vec(vec![n, m], out)
}

pub fn concat<T: Scalar>(inputs: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::Dimension("concat needs at least one input".into()))?;
    let rank = first.rank();
    if axis >= rank {
        return Err(Error::Dimension(format!(
            "concat axis {axis} out of range for rank {rank}"
        )));
    }
    let mut axis_total = 0;
    for t in inputs {
        if t.rank() != rank {
            return Err(Error::Dimension("concat inputs must share rank".into()));
        }
        for (ax, (a, b)) in first.shape().iter().zip(t.shape().iter()).enumerate() {
            if ax != axis && a != b {
                return Err(Error::Dimension(format!(
                    "concat inputs differ on axis {ax}: {a} vs {b}"
                )));
            }
        }
        axis_total += t.shape()[axis];
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = axis_total;
    let outer: usize = first.shape()[..axis].iter().product();
    let inner: usize = first.shape()[axis + 1..].iter().product();
    let mut out = Vec::with_capacity(outer * axis_total * inner);
    for o in 0..outer {
        for t in inputs {
            let len = t.shape()[axis] * inner;
            out.extend_from_slice(&t.data()[o * len..(o + 1) * len]);
        }
    }
    Tensor::from_vec(shape, out)
}

/// Splits a gradient back into the concat inputs' shapes.
pub fn concat_backward<T: Scalar>(
    input_shapes: &[Vec<usize>],
    grad_out: &Tensor<T>,
    axis: usize,
) -> Vec<Tensor<T>> {
    let outer: usize = input_shapes[0][..axis].iter().product();
    let inner: usize = input_shapes[0][axis + 1..].iter().product();
    let total_axis: usize = input_shapes.iter().map(|s| s[axis]).sum();
    let mut grads: Vec<Vec<T>> = input_shapes
        .iter()
        .map(|s| Vec::with_capacity(s.iter().product()))
        .collect();
    let g = grad_out.data();
    for o in 0..outer {
        let mut off = o * total_axis * inner;
        for (gi, s) in input_shapes.iter().enumerate() {
            let len = s[axis] * inner;
            grads[gi].extend_from_slice(&g[off..off + len]);
            off += len;
        }
    }
    grads
        .into_iter()
        .zip(input_shapes.iter())
        .map(|(d, s)| Tensor::from_vec(s.clone(), d).expect("split sizes add up"))
        .collect()
}

/// out[c, h·r+i, w·r+j] = in[c·r² + i·r + j, h, w]
pub fn pixel_shuffle<T: Scalar>(input: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    if input.rank() != 3 {
        return Err(Error::Dimension(format!(
            "pixel_shuffle expects rank 3 (C,H,W), got {}",
            fmt_shape(input.shape())
        )));
    }
    let (c_in, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    if r == 0 || c_in % (r * r) != 0 {
        return Err(Error::Dimension(format!(
            "pixel_shuffle needs axis 0 ({c_in}) divisible by r² = {}",
            r * r
        )));
    }
    let c = c_in / (r * r);
    let (ho, wo) = (h * r, w * r);
    let src = input.data();
    let mut out = vec![T::zero(); c * ho * wo];
    for co in 0..c {
        for i in 0..r {
            for j in 0..r {
                let ci = co * r * r + i * r + j;
                for y in 0..h {
                    for x in 0..w {
                        out[co * ho * wo + (y * r + i) * wo + (x * r + j)] =
                            src[ci * h * w + y * w + x];
                    }
                }
            }
        }
    }
    Tensor::from_vec(vec![c, ho, wo], out)
}

pub fn pixel_shuffle_backward<T: Scalar>(
    input_shape: &[usize],
    grad_out: &Tensor<T>,
    r: usize,
) -> Tensor<T> {
    let (c_in, h, w) = (input_shape[0], input_shape[1], input_shape[2]);
    let c = c_in / (r * r);
    let (ho, wo) = (h * r, w * r);
    let g = grad_out.data();
    let mut d = vec![T::zero(); c_in * h * w];
    for co in 0..c {
        for i in 0..r {
            for j in 0..r {
                let ci = co * r * r + i * r + j;
                for y in 0..h {
                    for x in 0..w {
                        d[ci * h * w + y * w + x] =
                            g[co * ho * wo + (y * r + i) * wo + (x * r + j)];
                    }
                }
            }
        }
    }
    Tensor::from_vec(input_shape.to_vec(), d).expect("same element count")
}

pub fn sum_all<T: Scalar>(input: &Tensor<T>) -> T {
    input.data().iter().copied().sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn leaky_relu_slope_one_at_zero() {
        let x = Tensor::from_vec(vec![4], vec![-2.0, -0.5, 0.0, 3.0]).unwrap();
        let y = leaky_relu(&x, 0.01);
        assert_eq!(y.data(), &[-0.02, -0.005, 0.0, 3.0]);
        let g = leaky_relu_backward(&x, &Tensor::ones(vec![4]), 0.01);
        assert_eq!(g.data(), &[0.01, 0.01, 1.0, 1.0]);
    }

    #[test]
    fn softmax_shift_invariance_and_known_values() {
        let x = Tensor::from_vec(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let s = softmax(&x, 0).unwrap();
        let shifted = softmax(&x.map(|v| v + 100.0), 0).unwrap();
        assert!(s.max_abs_diff(&shifted).unwrap() < 1e-15);
        let sum: f64 = s.data().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        // e^1 : e^2 : e^3 normalized.
        let z: f64 = (1f64).exp() + (2f64).exp() + (3f64).exp();
        assert!((s.data()[0] - (1f64).exp() / z).abs() < 1e-12);
    }

    #[test]
    fn softmax_axis_selects_lanes() {
        let x = Tensor::from_vec(vec![2, 3], vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let s0 = softmax(&x, 0).unwrap();
        // Each column is softmax([0, 1]).
        let e = (1f64).exp();
        for j in 0..3 {
            assert!((s0.data()[j] - 1.0 / (1.0 + e)).abs() < 1e-12);
            assert!((s0.data()[3 + j] - e / (1.0 + e)).abs() < 1e-12);
        }
        let s1 = softmax(&x, 1).unwrap();
        for v in s1.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn transpose_round_trip() {
        let x = Tensor::from_vec(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let t = transpose2d(&x).unwrap();
        assert_eq!(t.shape(), &[3, 2]);
        assert_eq!(t.data(), &[1., 4., 2., 5., 3., 6.]);
        let back = transpose2d(&t).unwrap();
        assert!(back.max_abs_diff(&x).unwrap() == 0.0);
    }

    #[test]
    fn concat_channelwise_and_split_back() {
        let a = Tensor::from_vec(vec![2, 1, 2], vec![1., 2., 3., 4.]).unwrap();
        let b = Tensor::from_vec(vec![1, 1, 2], vec![5., 6.]).unwrap();
        let c = concat(&[&a, &b], 0).unwrap();
        assert_eq!(c.shape(), &[3, 1, 2]);
        assert_eq!(c.data(), &[1., 2., 3., 4., 5., 6.]);
        let parts = concat_backward(&[a.shape().to_vec(), b.shape().to_vec()], &c, 0);
        assert_eq!(parts[0].data(), a.data());
        assert_eq!(parts[1].data(), b.data());
    }

    #[test]
    fn concat_rejects_mismatched_off_axis_extents() {
        let a = Tensor::<f64>::zeros(vec![2, 3]);
        let b = Tensor::<f64>::zeros(vec![2, 4]);
        assert!(concat(&[&a, &b], 0).is_err());
        assert!(concat(&[&a, &b], 1).is_ok());
    }

    /// Normative index mapping, spelled out on a 2-channel case with
    /// r = 2: input channel c·4 + i·2 + j lands on sub-pixel (i, j).
    #[test]
    fn pixel_shuffle_index_mapping() {
        let x = Tensor::from_fn(vec![4, 1, 2], |i| i as f64);
        let y = pixel_shuffle(&x, 2).unwrap();
        assert_eq!(y.shape(), &[1, 2, 4]);
        // in[ch, 0, x] = ch*2 + x; out[0, i, x*2+j] = in[i*2+j, 0, x]
        assert_eq!(y.data(), &[0., 2., 1., 3., 4., 6., 5., 7.]);
    }

    #[test]
    fn pixel_shuffle_needs_divisible_channels() {
        let x = Tensor::<f64>::zeros(vec![3, 2, 2]);
        assert!(pixel_shuffle(&x, 2).is_err());
    }

    proptest! {
        /// Softmax outputs are a distribution along the chosen axis.
        #[test]
        fn softmax_rows_are_distributions(vals in proptest::collection::vec(-20.0f64..20.0, 12)) {
            let x = Tensor::from_vec(vec![3, 4], vals).unwrap();
            let s = softmax(&x, 1).unwrap();
            for r in 0..3 {
                let row = &s.data()[r * 4..(r + 1) * 4];
                let sum: f64 = row.iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-9);
                prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
        }

        /// Pixel shuffle is a bijection: values are conserved and the
        /// backward pass restores the input exactly.
        #[test]
        fn pixel_shuffle_is_a_permutation(vals in proptest::collection::vec(-5.0f64..5.0, 32)) {
            let x = Tensor::from_vec(vec![8, 2, 2], vals).unwrap();
            let y = pixel_shuffle(&x, 2).unwrap();
            let mut a = x.to_vec();
            let mut b = y.to_vec();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            prop_assert_eq!(a, b);
            let back = pixel_shuffle_backward(x.shape(), &y, 2);
            prop_assert_eq!(back.data(), x.data());
        }
    }
}
