use super::tensor::Tensor;
use crate::imagedata::{SoftLabel, CLASS_COUNT};
use crate::{Error, Result};

fn check_logits(logits: &Tensor, context: &str) -> Result<usize> {
    match logits.shape() {
        [n, k] if *n >= 1 && *k == CLASS_COUNT => {
            if !logits.is_finite() {
                return Err(Error::Data(format!("{context}: non-finite logits")));
            }
            Ok(*n)
        }
        other => Err(Error::shape(context, format!("expected [N >= 1, {CLASS_COUNT}], got {other:?}"))),
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let n = check_logits(logits, "softmax")?;
    let mut out = Vec::with_capacity(n * CLASS_COUNT);
    for i in 0..n {
        out.extend(softmax_row(logits.row(i)));
    }
    Tensor::new(vec![n, CLASS_COUNT], out)
}

pub fn softmax_row(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|&v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Mean soft-target cross-entropy and its gradient `(softmax − t) / N`.
pub fn softmax_cross_entropy(logits: &Tensor, targets: &[SoftLabel]) -> Result<(f64, Tensor)> {
    let n = check_logits(logits, "softmax_cross_entropy")?;
    if targets.len() != n {
        return Err(Error::shape(
            "softmax_cross_entropy",
            format!("{n} logit rows vs {} targets", targets.len()),
        ));
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(n * CLASS_COUNT);
    for (i, t) in targets.iter().enumerate() {
        let row = logits.row(i);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
        for k in 0..CLASS_COUNT {
            let tk = t.probs()[k];
            if tk > 0.0 {
                loss -= tk * (row[k] - lse);
            }
            grad.push(((row[k] - lse).exp() - tk) / n as f64);
        }
    }
    Ok((loss / n as f64, Tensor::new(vec![n, CLASS_COUNT], grad)?))
}

/// `mean((s − t)²)` over all `N × 7` entries; gradient w.r.t. `s` only.
pub fn mse_consistency(student_probs: &Tensor, teacher_probs: &Tensor) -> Result<(f64, Tensor)> {
    if student_probs.shape() != teacher_probs.shape() || student_probs.shape().len() != 2 {
        return Err(Error::shape(
            "mse_consistency",
            format!("{:?} vs {:?}", student_probs.shape(), teacher_probs.shape()),
        ));
    }
    let count = student_probs.len() as f64;
    let mut loss = 0.0;
    let grad: Vec<f64> = student_probs
        .data()
        .iter()
        .zip(teacher_probs.data())
        .map(|(&s, &t)| {
            let d = s - t;
            loss += d * d;
            2.0 * d / count
        })
        .collect();
    Ok((loss / count, Tensor::new(student_probs.shape().to_vec(), grad)?))
}

/// Pulls a gradient w.r.t. softmax outputs back to the logits:
/// `dz = p ⊙ (dp − ⟨dp, p⟩)` row by row.
pub fn softmax_backward(probs: &Tensor, dprobs: &Tensor) -> Result<Tensor> {
    if probs.shape() != dprobs.shape() || probs.shape().len() != 2 {
        return Err(Error::shape("softmax_backward", format!("{:?} vs {:?}", probs.shape(), dprobs.shape())));
    }
    let n = probs.shape()[0];
    let mut out = Vec::with_capacity(probs.len());
    for i in 0..n {
        let (p, d) = (probs.row(i), dprobs.row(i));
        let dot: f64 = p.iter().zip(d).map(|(a, b)| a * b).sum();
        out.extend(p.iter().zip(d).map(|(a, b)| a * (b - dot)));
    }
    Tensor::new(probs.shape().to_vec(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagedata::Class;
    use crate::rng::RngStream;

    fn random_logits(n: usize, seed: u64) -> Tensor {
        let mut r = RngStream::new(seed, 0);
        Tensor::new(vec![n, 7], (0..n * 7).map(|_| r.uniform_range(-3.0, 3.0)).collect()).unwrap()
    }

    fn random_label(r: &mut RngStream) -> SoftLabel {
        let raw: Vec<f64> = (0..7).map(|_| r.uniform()).collect();
        let s: f64 = raw.iter().sum();
        let mut p = [0.0; 7];
        for k in 0..7 {
            p[k] = raw[k] / s;
        }
        SoftLabel::new(p).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
    }

    #[test]
    fn uniform_logits_give_ln7() {
        let logits = Tensor::zeros(&[2, 7]);
        let t = [SoftLabel::one_hot(Class::Bcc), SoftLabel::new([1.0 / 7.0; 7]).unwrap()];
        let (loss, _) = softmax_cross_entropy(&logits, &t).unwrap();
        assert!((loss - 7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn saturated_logit_gives_tiny_loss() {
        let mut row = [-30.0; 7];
        row[Class::Akiec.index()] = 30.0;
        let logits = Tensor::new(vec![1, 7], row.to_vec()).unwrap();
        let (loss, _) = softmax_cross_entropy(&logits, &[SoftLabel::one_hot(Class::Akiec)]).unwrap();
        assert!(loss < 1e-9);
    }

    #[test]
    fn non_finite_logits_are_rejected() {
        let mut l = Tensor::zeros(&[1, 7]);
        l.data_mut()[3] = f64::NAN;
        assert!(softmax_cross_entropy(&l, &[SoftLabel::one_hot(Class::Mel)]).is_err());
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let mut r = RngStream::new(5, 1);
        let logits = random_logits(3, 5);
        let targets: Vec<SoftLabel> = (0..3).map(|_| random_label(&mut r)).collect();
        let (_, grad) = softmax_cross_entropy(&logits, &targets).unwrap();
        let eps = 1e-5;
        for i in 0..logits.len() {
            let mut plus = logits.clone();
            plus.data_mut()[i] += eps;
            let mut minus = logits.clone();
            minus.data_mut()[i] -= eps;
            let fd = (softmax_cross_entropy(&plus, &targets).unwrap().0
                - softmax_cross_entropy(&minus, &targets).unwrap().0)
                / (2.0 * eps);
            assert!(rel(grad.data()[i], fd) < 1e-5, "coord {i}: {} vs {fd}", grad.data()[i]);
        }
    }

    #[test]
    fn cross_entropy_monotone_in_true_logit() {
        let mut logits = random_logits(1, 8);
        let t = [SoftLabel::one_hot(Class::Nv)];
        let mut prev = softmax_cross_entropy(&logits, &t).unwrap().0;
        for _ in 0..20 {
            logits.data_mut()[Class::Nv.index()] += 0.5;
            let cur = softmax_cross_entropy(&logits, &t).unwrap().0;
            assert!(cur <= prev);
            prev = cur;
        }
    }

    #[test]
    fn softmax_rows_are_distributions() {
        let p = softmax(&random_logits(5, 2)).unwrap();
        for i in 0..5 {
            let s: f64 = p.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(SoftLabel::new(p.row(i).try_into().unwrap()).is_ok());
        }
        let extreme = Tensor::new(vec![1, 7], vec![700.0, -700.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(softmax(&extreme).unwrap().is_finite());
    }

    #[test]
    fn mse_identical_is_zero() {
        let p = softmax(&random_logits(4, 3)).unwrap();
        let (loss, g) = mse_consistency(&p, &p).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mse_one_hot_vs_uniform() {
        let mut s = vec![0.0; 7];
        s[0] = 1.0;
        let s = Tensor::new(vec![1, 7], s).unwrap();
        let t = Tensor::filled(&[1, 7], 1.0 / 7.0);
        let (loss, _) = mse_consistency(&s, &t).unwrap();
        assert!((loss - 6.0 / 49.0).abs() < 1e-15);
    }

    #[test]
    fn mse_gradient_matches_finite_differences() {
        let s = softmax(&random_logits(2, 10)).unwrap();
        let t = softmax(&random_logits(2, 11)).unwrap();
        let (_, g) = mse_consistency(&s, &t).unwrap();
        let eps = 1e-5;
        for i in 0..s.len() {
            let mut plus = s.clone();
            plus.data_mut()[i] += eps;
            let mut minus = s.clone();
            minus.data_mut()[i] -= eps;
            let fd = (mse_consistency(&plus, &t).unwrap().0 - mse_consistency(&minus, &t).unwrap().0) / (2.0 * eps);
            assert!(rel(g.data()[i], fd) < 1e-5);
        }
    }

    #[test]
    fn softmax_backward_matches_finite_differences() {
        let logits = random_logits(2, 12);
        let target = softmax(&random_logits(2, 13)).unwrap();
        let f = |l: &Tensor| mse_consistency(&softmax(l).unwrap(), &target).unwrap().0;
        let p = softmax(&logits).unwrap();
        let (_, dp) = mse_consistency(&p, &target).unwrap();
        let dz = softmax_backward(&p, &dp).unwrap();
        let eps = 1e-5;
        for i in 0..logits.len() {
            let mut plus = logits.clone();
            plus.data_mut()[i] += eps;
            let mut minus = logits.clone();
            minus.data_mut()[i] -= eps;
            let fd = (f(&plus) - f(&minus)) / (2.0 * eps);
            assert!(rel(dz.data()[i], fd) < 1e-5, "{} vs {fd}", dz.data()[i]);
        }
    }

    #[test]
    fn shape_mismatch_is_error() {
        assert!(mse_consistency(&Tensor::zeros(&[2, 7]), &Tensor::zeros(&[3, 7])).is_err());
        assert!(softmax_cross_entropy(&Tensor::zeros(&[2, 7]), &[SoftLabel::one_hot(Class::Mel)]).is_err());
    }
}
