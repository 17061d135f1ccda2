//! Central finite-difference check of [`backward`](super::backward).

use super::loss::softmax_cross_entropy;
use super::model::{backward_with_fault, forward, init_params, BackwardFault, ModelSpec};
use super::tensor::{ParamSet, Tensor};
use crate::imagedata::{SoftLabel, CHANNELS, CLASS_COUNT};
use crate::rng::RngStream;
use crate::Result;

pub const EPSILON: f64 = 1e-4;
pub const COORDS_PER_TENSOR: usize = 200;
const BATCH: usize = 4;
/// Denominator floor for the relative error of near-zero gradients.
const REL_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameter tensor holding the worst coordinate.
    pub worst_param: String,
    pub checked: usize,
    /// Coordinates skipped because a ±ε step flipped some ReLU, where the
    /// loss is not differentiable and central differences are meaningless.
    pub skipped_kinks: usize,
}

/// Worst relative error between backward and central differences.
pub fn grad_check(spec: &ModelSpec, seed: u64) -> Result<f64> {
    grad_check_report(spec, seed).map(|r| r.max_relative_error)
}

pub fn grad_check_report(spec: &ModelSpec, seed: u64) -> Result<GradCheckReport> {
    grad_check_with_fault(spec, seed, BackwardFault::None)
}

#[doc(hidden)]
pub fn grad_check_with_fault(spec: &ModelSpec, seed: u64, fault: BackwardFault) -> Result<GradCheckReport> {
    let mut params = init_params(spec, seed)?;
    let mut rng = RngStream::derive(seed, &[0x6772_6164]);
    // non-zero biases so bias gradients and ReLU patterns are generic
    for (_, t) in params.iter_mut() {
        if t.shape().len() == 1 {
            t.data_mut().iter_mut().for_each(|b| *b = rng.uniform_range(-0.1, 0.1));
        }
    }
    let s = spec.input_size;
    let batch = Tensor::new(
        vec![BATCH, CHANNELS, s, s],
        (0..BATCH * CHANNELS * s * s).map(|_| rng.uniform_range(-1.0, 1.0)).collect(),
    )?;
    let targets: Vec<SoftLabel> = (0..BATCH)
        .map(|_| {
            let raw: Vec<f64> = (0..CLASS_COUNT).map(|_| rng.uniform() + 0.05).collect();
            let total: f64 = raw.iter().sum();
            let mut p = [0.0; CLASS_COUNT];
            p.iter_mut().zip(&raw).for_each(|(d, r)| *d = r / total);
            SoftLabel::new(p)
        })
        .collect::<Result<_>>()?;

    let (logits, cache) = forward(&params, spec, &batch)?;
    let base_signature = cache.activation_signature();
    let (_, dlogits) = softmax_cross_entropy(&logits, &targets)?;
    let analytic = backward_with_fault(&params, &cache, &dlogits, fault)?;

    let eval = |p: &ParamSet| -> Result<(f64, u64)> {
        let (l, c) = forward(p, spec, &batch)?;
        Ok((softmax_cross_entropy(&l, &targets)?.0, c.activation_signature()))
    };

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_param: String::new(),
        checked: 0,
        skipped_kinks: 0,
    };
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        let len = params.get(&name).expect("listed").len();
        let mut order: Vec<usize> = (0..len).collect();
        rng.shuffle(&mut order);
        let mut accepted = 0;
        for idx in order {
            if accepted == COORDS_PER_TENSOR {
                break;
            }
            let original = params.get(&name).expect("listed").data()[idx];
            params.get_mut(&name).expect("listed").data_mut()[idx] = original + EPSILON;
            let (plus, sig_plus) = eval(&params)?;
            params.get_mut(&name).expect("listed").data_mut()[idx] = original - EPSILON;
            let (minus, sig_minus) = eval(&params)?;
            params.get_mut(&name).expect("listed").data_mut()[idx] = original;
            if sig_plus != base_signature || sig_minus != base_signature {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * EPSILON);
            let a = analytic.get(&name).expect("same names").data()[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            if rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst_param = name.clone();
            }
            accepted += 1;
            report.checked += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelSpec {
        ModelSpec {
            input_size: 16,
            widths: vec![4, 8],
            se_reduction: 2,
            class_count: 7,
        }
    }

    #[test]
    fn small_model_passes() {
        let r = grad_check_report(&small(), 1).unwrap();
        assert!(r.max_relative_error <= 1e-3, "{r:?}");
        assert!(r.checked > 0);
    }

    #[test]
    fn broken_se_backward_is_caught() {
        let r = grad_check_with_fault(&small(), 1, BackwardFault::SeGateDerivative).unwrap();
        assert!(r.max_relative_error > 1e-1, "{r:?}");
        assert!(r.worst_param.contains(".se.") || r.worst_param.contains("conv"), "{r:?}");
    }

    #[test]
    fn deterministic() {
        assert_eq!(grad_check(&small(), 7).unwrap().to_bits(), grad_check(&small(), 7).unwrap().to_bits());
    }
}
