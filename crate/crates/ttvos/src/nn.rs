//! Convolution layer wrappers: parameters, fan-in-scaled uniform init,
//! forward recording. No normalization layers anywhere by design.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Parameter, Var};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Uniform(−√(6/fan_in), +√(6/fan_in)) He-style init.
pub fn init_uniform<T: Scalar>(
    shape: Vec<usize>,
    fan_in: usize,
    rng: &mut ChaCha8Rng,
) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| T::c(rng.gen_range(-bound..bound)))
}

pub struct Conv2d<T: Scalar> {
    pub weight: Parameter<T>,
    pub bias: Parameter<T>,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl<T: Scalar> Conv2d<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        padding: usize,
        groups: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = (c_in / groups) * k * k;
        Conv2d {
            weight: Parameter::new(
                format!("{name}.weight"),
                init_uniform(vec![c_out, c_in / groups, k, k], fan_in, rng),
            ),
            bias: Parameter::new(format!("{name}.bias"), Tensor::zeros(vec![c_out])),
            stride,
            padding,
            groups,
        }
    }

    pub fn forward<'t>(&self, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let w = x.tape().param(&self.weight);
        let b = x.tape().param(&self.bias);
        x.conv2d(&w, Some(&b), self.stride, self.padding, self.groups)
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        vec![&self.weight, &self.bias]
    }
}

pub struct ConvTranspose2d<T: Scalar> {
    pub weight: Parameter<T>,
    pub bias: Parameter<T>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Scalar> ConvTranspose2d<T> {
    pub fn new(
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        padding: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = c_in * k * k;
        ConvTranspose2d {
            weight: Parameter::new(
                format!("{name}.weight"),
                init_uniform(vec![c_in, c_out, k, k], fan_in, rng),
            ),
            bias: Parameter::new(format!("{name}.bias"), Tensor::zeros(vec![c_out])),
            stride,
            padding,
        }
    }

    pub fn forward<'t>(&self, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let w = x.tape().param(&self.weight);
        let b = x.tape().param(&self.bias);
        x.conv_transpose2d(&w, Some(&b), self.stride, self.padding)
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        vec![&self.weight, &self.bias]
    }
}
