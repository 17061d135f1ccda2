//! Seeded synthetic lesion images.
//!
//! Each class renders as a textured ellipse on a skin-toned background. The
//! class families differ in hue, brightness, size and texture so that a small
//! CNN can separate them within a few seconds of training, while the class
//! histogram follows the ISIC-2018 training set imbalance.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::{Class, Dataset, Entry, Image, Sample, SoftLabel, CLASS_COUNT, MIN_SIDE};
use crate::rng::RngStream;
use crate::{Error, Result};

/// ISIC-2018 task 3 training-set class counts (MEL, NV, BCC, AKIEC, BKL, DF, VASC).
pub const ISIC2018_CLASS_COUNTS: [usize; CLASS_COUNT] = [1113, 6705, 514, 327, 1099, 115, 142];

/// Appearance family for one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobStyle {
    /// Hue in degrees, `[0, 360)`.
    pub hue_range: (f64, f64),
    pub saturation_range: (f64, f64),
    pub value_range: (f64, f64),
    /// Semi-major axis as a fraction of the image side.
    pub radius_range: (f64, f64),
    /// Peak brightness modulation of the lesion texture.
    pub texture_amplitude: f64,
}

impl BlobStyle {
    const fn new(
        hue: (f64, f64),
        sat: (f64, f64),
        val: (f64, f64),
        radius: (f64, f64),
        texture: f64,
    ) -> Self {
        Self {
            hue_range: hue,
            saturation_range: sat,
            value_range: val,
            radius_range: radius,
            texture_amplitude: texture,
        }
    }

    pub fn default_styles() -> [BlobStyle; CLASS_COUNT] {
        [
            // MEL: large, very dark, strongly mottled
            BlobStyle::new((15.0, 30.0), (0.55, 0.75), (0.12, 0.25), (0.3, 0.4), 0.18),
            // NV: medium brown, smooth
            BlobStyle::new((25.0, 38.0), (0.55, 0.7), (0.42, 0.55), (0.24, 0.32), 0.03),
            // BCC: pearly pink
            BlobStyle::new((330.0, 350.0), (0.3, 0.45), (0.78, 0.9), (0.22, 0.3), 0.08),
            // AKIEC: scaly red
            BlobStyle::new((0.0, 10.0), (0.6, 0.8), (0.62, 0.75), (0.24, 0.32), 0.14),
            // BKL: light tan, waxy
            BlobStyle::new((38.0, 50.0), (0.35, 0.5), (0.6, 0.72), (0.26, 0.36), 0.1),
            // DF: olive nodule, paler than NV
            BlobStyle::new((70.0, 90.0), (0.55, 0.7), (0.55, 0.66), (0.2, 0.28), 0.05),
            // VASC: saturated purple
            BlobStyle::new((275.0, 295.0), (0.65, 0.85), (0.42, 0.56), (0.2, 0.28), 0.06),
        ]
    }

    fn validate(&self, class: Class) -> Result<()> {
        let key = |f: &str| format!("synth.styles[{}].{f}", class.index());
        let check = |name: &str, (lo, hi): (f64, f64), min: f64, max: f64| {
            if !(lo.is_finite() && hi.is_finite() && min <= lo && lo <= hi && hi <= max) {
                Err(Error::config(key(name), format!("need {min} <= lo <= hi <= {max}, got ({lo}, {hi})")))
            } else {
                Ok(())
            }
        };
        check("hue_range", self.hue_range, 0.0, 360.0)?;
        check("saturation_range", self.saturation_range, 0.0, 1.0)?;
        check("value_range", self.value_range, 0.0, 1.0)?;
        check("radius_range", self.radius_range, 0.01, 0.5)?;
        if !(0.0..=0.5).contains(&self.texture_amplitude) {
            return Err(Error::config(key("texture_amplitude"), "must lie in [0, 0.5]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub image_size: usize,
    pub class_counts: [usize; CLASS_COUNT],
    pub unlabeled_count: usize,
    pub styles: [BlobStyle; CLASS_COUNT],
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            image_size: 32,
            class_counts: Self::isic2018_counts(50),
            unlabeled_count: 40,
            styles: BlobStyle::default_styles(),
        }
    }
}

impl SynthSpec {
    /// ISIC-2018 counts divided by `divisor`, rounded up.
    pub fn isic2018_counts(divisor: usize) -> [usize; CLASS_COUNT] {
        ISIC2018_CLASS_COUNTS.map(|c| c.div_ceil(divisor.max(1)))
    }

    pub fn labeled_count(&self) -> usize {
        self.class_counts.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size < MIN_SIDE {
            return Err(Error::config(
                "synth.image_size",
                format!("must be at least {MIN_SIDE}, got {}", self.image_size),
            ));
        }
        for class in Class::ALL {
            self.styles[class.index()].validate(class)?;
        }
        if self.class_counts.iter().filter(|&&c| c > 0).count() < 2 {
            return Err(Error::config("synth.class_counts", "at least two classes must be present"));
        }
        Ok(())
    }

    /// Validation plus the fold requirement: at least two classes must have
    /// `2k` or more samples so that stratified folds are non-degenerate.
    pub fn validate_for_folds(&self, k: usize) -> Result<()> {
        self.validate()?;
        let big = self.class_counts.iter().filter(|&&c| c >= 2 * k).count();
        if big < 2 {
            return Err(Error::config(
                "synth.class_counts",
                format!("at least two classes need >= {} samples for k = {k}", 2 * k),
            ));
        }
        Ok(())
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - ((h % 2.0) - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn render(size: usize, style: &BlobStyle, rng: &mut RngStream) -> Image {
    let n = size as f64;
    let skin = hsv_to_rgb(
        rng.uniform_range(20.0, 28.0),
        rng.uniform_range(0.25, 0.33),
        rng.uniform_range(0.85, 0.92),
    );
    let color = hsv_to_rgb(
        rng.uniform_range(style.hue_range.0, style.hue_range.1),
        rng.uniform_range(style.saturation_range.0, style.saturation_range.1),
        rng.uniform_range(style.value_range.0, style.value_range.1),
    );
    let cx = n / 2.0 + rng.uniform_range(-0.12, 0.12) * n;
    let cy = n / 2.0 + rng.uniform_range(-0.12, 0.12) * n;
    let a = rng.uniform_range(style.radius_range.0, style.radius_range.1) * n;
    let b = a * rng.uniform_range(0.7, 1.0);
    let phi = rng.uniform_range(0.0, PI);
    let (sin_phi, cos_phi) = phi.sin_cos();
    // boundary wobble and texture waves
    let lobes = rng.int_inclusive(3, 6) as f64;
    let wobble_phase = rng.uniform_range(0.0, 2.0 * PI);
    let wobble = 0.5 * style.texture_amplitude;
    let freq = rng.uniform_range(0.6, 1.2);
    let tex_phase = rng.uniform_range(0.0, 2.0 * PI);
    let tex_dir = rng.uniform_range(0.0, PI);
    let (tdy, tdx) = tex_dir.sin_cos();

    let mut data = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let (px, py) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            let u = (px * cos_phi + py * sin_phi) / a;
            let v = (-px * sin_phi + py * cos_phi) / b;
            let theta = v.atan2(u);
            let rad = (u * u + v * v).sqrt() / (1.0 + wobble * (lobes * theta + wobble_phase).sin());
            let alpha = 1.0 - smoothstep(0.85, 1.05, rad);
            let wave = (freq * (px * tdx + py * tdy) + tex_phase).sin();
            let grain = rng.uniform_range(-1.0, 1.0);
            let shade = 1.0 + style.texture_amplitude * (0.6 * wave + 0.4 * grain);
            let skin_grain = 1.0 + 0.02 * rng.uniform_range(-1.0, 1.0);
            for c in 0..3 {
                let lesion = (color[c] * shade).clamp(0.0, 1.0);
                let bg = (skin[c] * skin_grain).clamp(0.0, 1.0);
                data.push(alpha * lesion + (1.0 - alpha) * bg);
            }
        }
    }
    Image::new(size, size, data).expect("rendered image has consistent size")
}

/// Renders a dataset of labelled and unlabelled synthetic lesions.
///
/// Labelled samples come first (`syn_00000`, ...) with a seeded class order,
/// followed by unlabelled ones (`syn_u_00000`, ...) whose hidden class is drawn
/// in proportion to `class_counts`. Every sample has its own random stream, so
/// the output is a pure function of `(spec, seed)`.
pub fn make_synthetic_dataset(spec: &SynthSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut classes: Vec<Class> = Class::ALL
        .iter()
        .flat_map(|&c| std::iter::repeat_n(c, spec.class_counts[c.index()]))
        .collect();
    RngStream::derive(seed, &[0]).shuffle(&mut classes);

    let total: usize = spec.labeled_count();
    let mut pick = RngStream::derive(seed, &[1]);
    let hidden: Vec<Class> = (0..spec.unlabeled_count)
        .map(|_| {
            let mut t = pick.int_inclusive(0, total - 1);
            for c in Class::ALL {
                if t < spec.class_counts[c.index()] {
                    return c;
                }
                t -= spec.class_counts[c.index()];
            }
            unreachable!("draw below total count")
        })
        .collect();

    let labeled = classes.par_iter().enumerate().map(|(i, &c)| {
        let mut rng = RngStream::derive(seed, &[2, i as u64]);
        Entry {
            id: format!("syn_{i:05}"),
            sample: Sample::labeled(render(spec.image_size, &spec.styles[c.index()], &mut rng), SoftLabel::one_hot(c)),
        }
    });
    let unlabeled = hidden.par_iter().enumerate().map(|(i, &c)| {
        let mut rng = RngStream::derive(seed, &[3, i as u64]);
        Entry {
            id: format!("syn_u_{i:05}"),
            sample: Sample::unlabeled(render(spec.image_size, &spec.styles[c.index()], &mut rng)),
        }
    });
    let entries: Vec<Entry> = labeled.chain(unlabeled).collect();
    Dataset::new(entries)
}
