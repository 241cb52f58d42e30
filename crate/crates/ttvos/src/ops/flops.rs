//! FLOP accounting shared by the runtime op counters and the analytic
//! profiler. Convention: one multiply-accumulate is 2 FLOPs; bias adds,
//! elementwise ops, comparisons, exp and divide each count 1 FLOP per
//! scalar; pure data movement (reshape, concat, pixel shuffle,
//! transpose) counts 0. Both sides of the profiler equality check call
//! these functions, so the convention cannot drift.

pub fn conv2d(
    c_in: usize,
    c_out: usize,
    k: usize,
    groups: usize,
    h_out: usize,
    w_out: usize,
    bias: bool,
) -> u64 {
    let px = (h_out * w_out) as u64;
    let macs = (k * k * (c_in / groups) * c_out) as u64 * px;
    2 * macs + if bias { c_out as u64 * px } else { 0 }
}

pub fn conv_transpose2d(
    c_in: usize,
    c_out: usize,
    k: usize,
    h_in: usize,
    w_in: usize,
    h_out: usize,
    w_out: usize,
    bias: bool,
) -> u64 {
    // Every input pixel feeds k² taps of every output channel.
    let macs = (k * k * c_in * c_out * h_in * w_in) as u64;
    2 * macs + if bias { (c_out * h_out * w_out) as u64 } else { 0 }
}

pub fn matmul(m: usize, k: usize, n: usize) -> u64 {
    2 * (m * k * n) as u64
}

/// add, sub, mul, scale, leaky_relu: one op per element.
pub fn elementwise(numel: usize) -> u64 {
    numel as u64
}

/// Per element: max scan, shift, exp, sum accumulate, divide.
pub fn softmax(numel: usize) -> u64 {
    5 * numel as u64
}

/// k² accumulates plus one divide per output element.
pub fn avg_pool2d(out_numel: usize, k: usize) -> u64 {
    out_numel as u64 * (k * k + 1) as u64
}

/// Two horizontal lerps and one vertical lerp, 3 FLOPs each.
pub fn bilinear_resize(out_numel: usize) -> u64 {
    9 * out_numel as u64
}

/// Full-tensor sum (mean adds one divide, negligible and counted as 1).
pub fn reduce(numel: usize) -> u64 {
    numel as u64
}
