//! Confusion matrix, per-class recall and balanced accuracy.
//!
//! Balanced accuracy is the mean recall over classes that actually occur in
//! the gold labels. Classes with zero support are left out of the average,
//! not counted as zero recall; on partial validation sets this gives a
//! different (higher) score than a fixed seven-way average would.

use std::fmt::Write as _;

use crate::imagedata::{Class, SoftLabel, CLASS_COUNT};
use crate::{Error, Result};

/// `counts[gold][predicted]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    pub counts: [[u64; CLASS_COUNT]; CLASS_COUNT],
}

impl ConfusionMatrix {
    /// Gold and predicted classes are argmaxes with lowest-index tie-break.
    pub fn from_labels(preds: &[SoftLabel], golds: &[SoftLabel]) -> Result<Self> {
        if preds.len() != golds.len() {
            return Err(Error::shape(
                "confusion_matrix",
                format!("{} predictions vs {} gold labels", preds.len(), golds.len()),
            ));
        }
        if preds.is_empty() {
            return Err(Error::Data("confusion matrix needs at least one sample".into()));
        }
        let mut m = Self::default();
        for (p, g) in preds.iter().zip(golds) {
            m.counts[g.argmax().index()][p.argmax().index()] += 1;
        }
        Ok(m)
    }

    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

pub fn confusion_matrix(preds: &[SoftLabel], golds: &[SoftLabel]) -> Result<ConfusionMatrix> {
    ConfusionMatrix::from_labels(preds, golds)
}

/// Recall per class; `None` where the class has no gold samples.
pub fn per_class_recall(m: &ConfusionMatrix) -> [Option<f64>; CLASS_COUNT] {
    std::array::from_fn(|c| match m.support(c) {
        0 => None,
        s => Some(m.counts[c][c] as f64 / s as f64),
    })
}

pub fn balanced_accuracy(m: &ConfusionMatrix) -> Result<f64> {
    let recalls: Vec<f64> = per_class_recall(m).into_iter().flatten().collect();
    if recalls.is_empty() {
        return Err(Error::Data("balanced accuracy of an empty confusion matrix".into()));
    }
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}

/// Plain-text report: matrix, recalls, score.
pub fn render_report(m: &ConfusionMatrix) -> Result<String> {
    let bacc = balanced_accuracy(m)?;
    let recalls = per_class_recall(m);
    let mut s = String::new();
    let _ = writeln!(s, "confusion matrix (rows = gold, cols = predicted)");
    let _ = write!(s, "{:>6}", "");
    for c in Class::ALL {
        let _ = write!(s, "{:>7}", c.name());
    }
    s.push('\n');
    for g in Class::ALL {
        let _ = write!(s, "{:>6}", g.name());
        for p in Class::ALL {
            let _ = write!(s, "{:>7}", m.counts[g.index()][p.index()]);
        }
        s.push('\n');
    }
    s.push_str("\nper-class recall\n");
    for c in Class::ALL {
        let r = recalls[c.index()].map_or_else(|| "n/a (no support)".to_string(), |r| format!("{r:.4}"));
        let _ = writeln!(s, "{:>6}  {r}", c.name());
    }
    let _ = writeln!(s, "\nbalanced accuracy: {bacc:.4}");
    Ok(s)
}

/// CSV with one row per class plus a summary row:
/// `class,support,correct,recall` and `balanced_accuracy,,,<score>`.
pub fn render_report_csv(m: &ConfusionMatrix) -> Result<String> {
    let bacc = balanced_accuracy(m)?;
    let recalls = per_class_recall(m);
    let mut s = String::from("class,support,correct,recall");
    for c in Class::ALL {
        s.push('\n');
        s.push_str(&format!("{},{},{},", c.name(), m.support(c.index()), m.counts[c.index()][c.index()]));
        if let Some(r) = recalls[c.index()] {
            s.push_str(&r.to_string());
        }
    }
    s.push_str(&format!("\nbalanced_accuracy,,,{bacc}\n"));
    s.push_str("\ngold\\pred");
    for c in Class::ALL {
        s.push(',');
        s.push_str(c.name());
    }
    for g in Class::ALL {
        s.push_str(&format!("\n{}", g.name()));
        for p in Class::ALL {
            s.push_str(&format!(",{}", m.counts[g.index()][p.index()]));
        }
    }
    s.push('\n');
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn oh(k: usize) -> SoftLabel {
        SoftLabel::one_hot(Class::ALL[k])
    }

    #[test]
    fn perfect_predictions() {
        let golds: Vec<SoftLabel> = [0, 1, 1, 2, 6, 6, 6].iter().map(|&k| oh(k)).collect();
        let m = confusion_matrix(&golds, &golds).unwrap();
        for g in 0..7 {
            for p in 0..7 {
                if g != p {
                    assert_eq!(m.counts[g][p], 0);
                }
            }
        }
        assert_eq!(m.support(6), 3);
        assert_eq!(balanced_accuracy(&m).unwrap(), 1.0);
        assert_eq!(per_class_recall(&m)[0], Some(1.0));
        assert_eq!(per_class_recall(&m)[3], None);
    }

    #[test]
    fn constant_predictions_fill_one_column() {
        let golds: Vec<SoftLabel> = (0..7).map(oh).collect();
        let preds = vec![oh(1); 7];
        let m = confusion_matrix(&preds, &golds).unwrap();
        for g in 0..7 {
            for p in 0..7 {
                assert_eq!(m.counts[g][p], (p == 1) as u64);
            }
        }
    }

    #[test]
    fn recall_arithmetic() {
        let mut m = ConfusionMatrix::default();
        m.counts[0][0] = 8;
        m.counts[0][3] = 2;
        m.counts[2][2] = 6;
        m.counts[2][1] = 4;
        assert_eq!(per_class_recall(&m)[0], Some(0.8));
        assert!((balanced_accuracy(&m).unwrap() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn empty_matrix_is_error() {
        assert!(balanced_accuracy(&ConfusionMatrix::default()).is_err());
        assert!(confusion_matrix(&[], &[]).is_err());
        assert!(confusion_matrix(&[oh(0)], &[]).is_err());
    }

    #[test]
    fn soft_golds_use_argmax() {
        let gold = SoftLabel::new([0.3, 0.3, 0.4, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let tie = SoftLabel::new([0.0, 0.5, 0.5, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let m = confusion_matrix(&[tie], &[gold]).unwrap();
        assert_eq!(m.counts[2][1], 1);
    }

    #[test]
    fn relabeling_and_duplication_invariance() {
        let mut rng = RngStream::new(4, 0);
        let golds: Vec<SoftLabel> = (0..60).map(|_| oh(rng.int_inclusive(0, 6))).collect();
        let preds: Vec<SoftLabel> = (0..60).map(|_| oh(rng.int_inclusive(0, 6))).collect();
        let base = balanced_accuracy(&confusion_matrix(&preds, &golds).unwrap()).unwrap();
        let perm = [3, 5, 0, 6, 1, 2, 4];
        let relabel = |v: &[SoftLabel]| -> Vec<SoftLabel> { v.iter().map(|l| oh(perm[l.argmax().index()])).collect() };
        let permuted = balanced_accuracy(&confusion_matrix(&relabel(&preds), &relabel(&golds)).unwrap()).unwrap();
        assert!((base - permuted).abs() < 1e-12);
        let dup = |v: &[SoftLabel]| -> Vec<SoftLabel> { v.iter().chain(v).copied().collect() };
        let doubled = balanced_accuracy(&confusion_matrix(&dup(&preds), &dup(&golds)).unwrap()).unwrap();
        assert!((base - doubled).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&base));
    }

    #[test]
    fn equal_support_matches_plain_accuracy() {
        let golds: Vec<SoftLabel> = (0..70).map(|i| oh(i % 7)).collect();
        let preds: Vec<SoftLabel> = (0..70).map(|i| oh(if i % 3 == 0 { 0 } else { i % 7 })).collect();
        let m = confusion_matrix(&preds, &golds).unwrap();
        let acc = (0..7).map(|c| m.counts[c][c]).sum::<u64>() as f64 / 70.0;
        assert!((balanced_accuracy(&m).unwrap() - acc).abs() < 1e-12);
    }

    #[test]
    fn reports_render() {
        let golds: Vec<SoftLabel> = (0..7).map(oh).collect();
        let m = confusion_matrix(&golds, &golds).unwrap();
        let text = render_report(&m).unwrap();
        assert!(text.contains("balanced accuracy: 1.0000"));
        let csv = render_report_csv(&m).unwrap();
        assert!(csv.contains("balanced_accuracy,,,1"));
    }
}
