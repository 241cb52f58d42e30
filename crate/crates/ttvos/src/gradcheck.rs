//! Finite-difference verification of recorded gradients.
//!
//! `grad_check` evaluates a scalar loss twice per parameter coordinate
//! (central differences, default h = 1e-5) and compares against one
//! analytic backward pass. Relative error uses the denominator
//! max(|analytic|, |numeric|, 1e-3); the floor keeps FD round-off noise
//! on near-zero gradients from registering as disagreement. The harness
//! never raises on disagreement, it reports.

use crate::autodiff::{Parameter, Tape, Var};
use crate::error::Result;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-6;
const REL_ERR_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_err: f64,
    pub coords: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.max_rel_err)
            .fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.worst() < tol
    }
}

/// Checks d(loss)/d(param) for every coordinate of every parameter.
/// `f` must be a deterministic function of the parameter values; it is
/// re-recorded on a fresh tape for the analytic pass and evaluated on
/// no-grad tapes for the probes. Inputs under test are checked by
/// wrapping them in parameters.
pub fn grad_check<F>(params: &[&Parameter<f64>], f: F, h: f64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape<f64>) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let loss = f(&tape)?;
    let grads = tape.backward(&loss)?;

    let mut entries = Vec::with_capacity(params.len());
    for p in params {
        let analytic = grads.wrt_param(p).cloned();
        let orig = p.value();
        let mut max_rel = 0.0f64;
        for coord in 0..orig.numel() {
            let base = orig.data()[coord];
            let probe = |v: f64| -> Result<f64> {
                let mut d = orig.to_vec();
                d[coord] = v;
                p.set(crate::tensor::Tensor::from_vec(orig.shape().to_vec(), d)?)?;
                let t = Tape::no_grad();
                let out = f(&t)?;
                out.value().item()
            };
            let up = probe(base + h)?;
            let down = probe(base - h)?;
            p.set(orig.clone())?;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.as_ref().map_or(0.0, |g| g.data()[coord]);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
            max_rel = max_rel.max(rel);
        }
        entries.push(GradCheckEntry {
            name: p.name().to_string(),
            max_rel_err: max_rel,
            coords: orig.numel(),
        });
    }
    Ok(GradCheckReport { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn quadratic_analytic_matches_fd() {
        // f(x) = sum(x²) at x = 3: analytic gradient 6.
        let p = Parameter::new("x", Tensor::scalar(3.0f64));
        let report = grad_check(
            &[&p],
            |tape| {
                let x = tape.param(&p);
                x.mul(&x)
            },
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(report.passes(1e-9), "worst {}", report.worst());
    }

    #[test]
    fn linear_map_agrees_to_round_off() {
        let p = Parameter::new("w", Tensor::from_vec(vec![3], vec![0.2, -1.0, 0.7]).unwrap());
        let report = grad_check(
            &[&p],
            |tape| {
                let w = tape.param(&p);
                Ok(w.scale(2.5).sum_all())
            },
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(report.worst() < 1e-9);
    }

    #[test]
    fn reports_disagreement_instead_of_raising() {
        // Loss ignores the parameter, then claims nothing; analytic and
        // FD both say 0, which passes. A deliberate mismatch needs a
        // wrong backward rule, so instead check the report surface: an
        // unused parameter yields zero error entries, not a panic.
        let used = Parameter::new("a", Tensor::scalar(1.0f64));
        let unused = Parameter::new("b", Tensor::scalar(5.0f64));
        let report = grad_check(
            &[&used, &unused],
            |tape| {
                let a = tape.param(&used);
                Ok(a.scale(3.0))
            },
            DEFAULT_STEP,
        )
        .unwrap();
        assert_eq!(report.entries.len(), 2);
        assert!(report.passes(DEFAULT_TOLERANCE));
    }
}
