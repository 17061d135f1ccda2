//! Training-time augmentations and test-time views.
//!
//! Every function here is a pure function of its inputs, the caller's
//! [`RngStream`] position and the [`AugConfig`]. Raw-pixel inputs in
//! `[0, 1]` stay in `[0, 1]`.

mod erase;
mod geometric;
mod hair;
mod mix;
mod tta;

pub use erase::{random_erase, random_erase_traced, EraseRect};
pub use geometric::{flip_horizontal, geometric_augment, rotate_arbitrary, rotate_quarter};
pub use hair::{hair_overlay, hair_overlay_traced, render_stroke, sample_strokes, HairStroke};
pub use mix::{bc_mix, bc_mix_with_ratio};
pub use tta::{tta_inverse, tta_view, tta_views, TTA_VIEW_COUNT};

pub use crate::imagedata::Sample;
pub use crate::rng::RngStream;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RotationMode {
    /// Uniform over {0°, 90°, 180°, 270°}; exact, no resampling.
    QuarterTurns,
    /// Uniform angle in [0°, 360°), bilinear with reflect padding.
    Arbitrary,
    /// No rotation; consumes no random draw.
    Off,
}

/// All augmentation knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugConfig {
    pub crop_size: usize,
    pub flip_prob: f64,
    pub rotation_mode: RotationMode,
    pub erase_prob: f64,
    /// Erased area as a fraction of the image, `(s_l, s_h)`.
    pub erase_area_range: (f64, f64),
    /// Height/width ratio of the erased rectangle, `(r_1, r_2)`.
    pub erase_aspect_range: (f64, f64),
    pub bc_prob: f64,
    pub hair_prob: f64,
    pub hair_count_range: (usize, usize),
    /// Stroke length as a fraction of the image diagonal.
    pub hair_length_range: (f64, f64),
    /// Stroke width in pixels.
    pub hair_thickness_range: (f64, f64),
    pub hair_darkness_range: (f64, f64),
    /// Largest control-point offset, as a fraction of stroke length.
    pub hair_curvature_max: f64,
}

impl Default for AugConfig {
    fn default() -> Self {
        Self {
            crop_size: 32,
            flip_prob: 0.5,
            rotation_mode: RotationMode::QuarterTurns,
            erase_prob: 0.5,
            erase_area_range: (0.02, 0.4),
            erase_aspect_range: (0.3, 3.33),
            bc_prob: 0.5,
            hair_prob: 0.5,
            // sized for 32-pixel inputs; denser or thicker hair hides the lesion
            hair_count_range: (2, 8),
            hair_length_range: (0.1, 0.5),
            hair_thickness_range: (0.5, 1.5),
            hair_darkness_range: (0.6, 0.95),
            hair_curvature_max: 0.2,
        }
    }
}

impl AugConfig {
    /// Every stochastic stage switched off except the crop offset.
    pub fn disabled(crop_size: usize) -> Self {
        Self {
            crop_size,
            flip_prob: 0.0,
            erase_prob: 0.0,
            bc_prob: 0.0,
            hair_prob: 0.0,
            rotation_mode: RotationMode::Off,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |key: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::config(format!("aug.{key}"), format!("probability {p} outside [0, 1]")))
            }
        };
        prob("flip_prob", self.flip_prob)?;
        prob("erase_prob", self.erase_prob)?;
        prob("bc_prob", self.bc_prob)?;
        prob("hair_prob", self.hair_prob)?;
        if self.crop_size == 0 {
            return Err(Error::config("aug.crop_size", "must be positive"));
        }
        let (sl, sh) = self.erase_area_range;
        if !(0.0 < sl && sl <= sh && sh < 1.0) {
            return Err(Error::config("aug.erase_area_range", format!("need 0 < s_l <= s_h < 1, got ({sl}, {sh})")));
        }
        let (r1, r2) = self.erase_aspect_range;
        if !(0.0 < r1 && r1 <= r2 && r2.is_finite()) {
            return Err(Error::config("aug.erase_aspect_range", format!("need 0 < r_1 <= r_2, got ({r1}, {r2})")));
        }
        let (nmin, nmax) = self.hair_count_range;
        if nmin > nmax {
            return Err(Error::config("aug.hair_count_range", format!("n_min {nmin} > n_max {nmax}")));
        }
        let (lo, hi) = self.hair_length_range;
        if !(0.0 < lo && lo <= hi && hi.is_finite()) {
            return Err(Error::config("aug.hair_length_range", format!("need 0 < lo <= hi, got ({lo}, {hi})")));
        }
        let (lo, hi) = self.hair_thickness_range;
        if !(0.0 < lo && lo <= hi && hi.is_finite()) {
            return Err(Error::config("aug.hair_thickness_range", format!("need 0 < lo <= hi, got ({lo}, {hi})")));
        }
        let (lo, hi) = self.hair_darkness_range;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::config("aug.hair_darkness_range", format!("need 0 <= lo <= hi <= 1, got ({lo}, {hi})")));
        }
        if !(self.hair_curvature_max >= 0.0 && self.hair_curvature_max.is_finite()) {
            return Err(Error::config("aug.hair_curvature_max", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Geometry, hair and erasing on one sample, in that order.
pub fn augment_view(sample: &Sample, rng: &mut RngStream, cfg: &AugConfig) -> Result<Sample> {
    let mut out = geometric_augment(sample, rng, cfg)?;
    out.image = hair_overlay(&out.image, rng, cfg);
    out.image = random_erase(&out.image, rng, cfg);
    Ok(out)
}

/// The full training pipeline: geometry → hair → erase → between-class mix.
///
/// Stream consumption order: the sample's view (geometry, hair, erase), then
/// one uniform for the mixing coin, then, only if mixing fires, the partner's
/// view followed by the mixing ratio. Mixing fires when the coin succeeds and
/// both the sample and the partner are labelled.
pub fn apply_pipeline(
    sample: &Sample,
    partner: Option<&Sample>,
    rng: &mut RngStream,
    cfg: &AugConfig,
) -> Result<Sample> {
    pipeline(sample, partner, rng, None, cfg)
}

/// [`apply_pipeline`] with the mixing decisions (coin and ratio) drawn from
/// a separate stream.
///
/// Two views of the same sample generated with different `view_rng`s but
/// clones of one `mix_rng` share their partner mix, differing only in the
/// per-image noise.
pub fn apply_pipeline_split(
    sample: &Sample,
    partner: Option<&Sample>,
    view_rng: &mut RngStream,
    mix_rng: &mut RngStream,
    cfg: &AugConfig,
) -> Result<Sample> {
    pipeline(sample, partner, view_rng, Some(mix_rng), cfg)
}

fn pipeline(
    sample: &Sample,
    partner: Option<&Sample>,
    view_rng: &mut RngStream,
    mut mix_rng: Option<&mut RngStream>,
    cfg: &AugConfig,
) -> Result<Sample> {
    let a = augment_view(sample, view_rng, cfg)?;
    let coin = match mix_rng.as_deref_mut() {
        Some(m) => m.chance(cfg.bc_prob),
        None => view_rng.chance(cfg.bc_prob),
    };
    match partner {
        Some(p) if coin && sample.label.is_some() && p.label.is_some() => {
            let b = augment_view(p, view_rng, cfg)?;
            let r = match mix_rng {
                Some(m) => m.uniform_open(),
                None => view_rng.uniform_open(),
            };
            bc_mix_with_ratio(&a, &b, r)
        }
        _ => Ok(a),
    }
}
