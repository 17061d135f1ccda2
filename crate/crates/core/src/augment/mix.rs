use crate::imagedata::{Image, Sample, SoftLabel, CLASS_COUNT};
use crate::rng::RngStream;
use crate::{Error, Result};

/// Between-class mixing with a ratio drawn uniformly from `(0, 1)`.
pub fn bc_mix(a: &Sample, b: &Sample, rng: &mut RngStream) -> Result<Sample> {
    bc_mix_with_ratio(a, b, rng.uniform_open())
}

/// `r·a + (1 − r)·b` for both the image and the label.
pub fn bc_mix_with_ratio(a: &Sample, b: &Sample, r: f64) -> Result<Sample> {
    let (la, lb) = match (a.label, b.label) {
        (Some(la), Some(lb)) => (la, lb),
        _ => return Err(Error::Data("between-class mixing needs two labelled samples".into())),
    };
    if !a.image.same_dims(&b.image) {
        return Err(Error::shape(
            "bc_mix",
            format!(
                "{}x{} vs {}x{}",
                a.image.height(),
                a.image.width(),
                b.image.height(),
                b.image.width()
            ),
        ));
    }
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::Data(format!("mixing ratio {r} outside [0, 1]")));
    }
    let s = 1.0 - r;
    let data: Vec<f64> = a
        .image
        .data()
        .iter()
        .zip(b.image.data())
        .map(|(&pa, &pb)| r * pa + s * pb)
        .collect();
    let mut probs = [0.0; CLASS_COUNT];
    for k in 0..CLASS_COUNT {
        probs[k] = (r * la.probs()[k] + s * lb.probs()[k]).clamp(0.0, 1.0);
    }
    Ok(Sample {
        image: Image::new(a.image.height(), a.image.width(), data)?,
        label: Some(SoftLabel::new(probs)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagedata::Class;

    #[test]
    fn ratio_one_returns_first() {
        let a = Sample::labeled(Image::filled(8, 8, 0.25), SoftLabel::one_hot(Class::Mel));
        let b = Sample::labeled(Image::filled(8, 8, 0.75), SoftLabel::one_hot(Class::Nv));
        assert_eq!(bc_mix_with_ratio(&a, &b, 1.0).unwrap(), a);
    }

    #[test]
    fn midpoint() {
        let a = Sample::labeled(Image::filled(8, 8, 0.0), SoftLabel::one_hot(Class::Mel));
        let b = Sample::labeled(Image::filled(8, 8, 1.0), SoftLabel::one_hot(Class::Nv));
        let m = bc_mix_with_ratio(&a, &b, 0.5).unwrap();
        assert!(m.image.data().iter().all(|&v| v == 0.5));
        assert_eq!(m.label.unwrap().probs(), &[0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn unlabeled_input_is_rejected() {
        let a = Sample::labeled(Image::filled(8, 8, 0.0), SoftLabel::one_hot(Class::Mel));
        let b = Sample::unlabeled(Image::filled(8, 8, 1.0));
        assert!(bc_mix(&a, &b, &mut RngStream::new(0, 0)).is_err());
        assert!(bc_mix(&b, &a, &mut RngStream::new(0, 0)).is_err());
    }

    #[test]
    fn size_mismatch_is_rejected() {
        let a = Sample::labeled(Image::filled(8, 8, 0.0), SoftLabel::one_hot(Class::Mel));
        let b = Sample::labeled(Image::filled(9, 8, 0.0), SoftLabel::one_hot(Class::Nv));
        assert!(bc_mix(&a, &b, &mut RngStream::new(0, 0)).is_err());
    }
}
