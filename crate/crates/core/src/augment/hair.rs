//! Pseudo body-hair strokes.
//!
//! Strokes are dropped the way needles are in Buffon's experiment: a centre
//! uniform over the image and an orientation uniform on `[0, π)`. Each stroke
//! is a quadratic Bézier whose control point sits off the chord midpoint,
//! rendered with a one-pixel anti-aliasing ramp.

use std::f64::consts::PI;

use super::AugConfig;
use crate::imagedata::Image;
use crate::rng::RngStream;

/// One rendered hair. Coordinates are `(x, y)` in pixel units with pixel
/// `(row, col)` centred at `(col + 0.5, row + 0.5)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HairStroke {
    pub center: (f64, f64),
    /// Orientation of the chord, radians in `[0, π)`.
    pub theta: f64,
    pub length: f64,
    /// Signed offset of the control point perpendicular to the chord.
    pub bend: f64,
    pub thickness: f64,
    /// Opacity of the stroke core.
    pub darkness: f64,
    pub color: [f64; 3],
}

impl HairStroke {
    pub fn endpoints(&self) -> ((f64, f64), (f64, f64)) {
        let (s, c) = self.theta.sin_cos();
        let h = self.length / 2.0;
        (
            (self.center.0 - h * c, self.center.1 - h * s),
            (self.center.0 + h * c, self.center.1 + h * s),
        )
    }

    pub fn control(&self) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        (self.center.0 - self.bend * s, self.center.1 + self.bend * c)
    }

    fn polyline(&self) -> Vec<(f64, f64)> {
        let (p0, p2) = self.endpoints();
        if self.bend == 0.0 {
            return vec![p0, p2];
        }
        let p1 = self.control();
        let steps = 24;
        (0..=steps)
            .map(|i| {
                let t = i as f64 / steps as f64;
                let (a, b, c) = ((1.0 - t) * (1.0 - t), 2.0 * t * (1.0 - t), t * t);
                (a * p0.0 + b * p1.0 + c * p2.0, a * p0.1 + b * p1.1 + c * p2.1)
            })
            .collect()
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt()
}

/// Alpha-blends one stroke into `image` in place.
///
/// Coverage is `clamp(thickness/2 + 0.5 − d, 0, 1)` for distance `d` from the
/// pixel centre to the curve, so pixels farther than `thickness/2 + 0.5` are
/// left bit-identical.
pub fn render_stroke(image: &mut Image, stroke: &HairStroke) {
    let pts = stroke.polyline();
    let reach = stroke.thickness / 2.0 + 0.5;
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for &(x, y) in &pts {
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    let clip = |v: f64, n: usize| v.clamp(0.0, n as f64) as usize;
    let (cols, rows) = (image.width(), image.height());
    let (c0, c1) = (clip((x0 - reach - 1.0).floor(), cols), clip((x1 + reach + 1.0).ceil(), cols));
    let (r0, r1) = (clip((y0 - reach - 1.0).floor(), rows), clip((y1 + reach + 1.0).ceil(), rows));
    if r0 >= r1 || c0 >= c1 {
        return;
    }
    // nearest-segment distance, each segment visiting only its own reach box;
    // a pixel farther than `reach` from every segment gets no coverage anyway
    let bw = c1 - c0;
    let mut dist = vec![f64::INFINITY; (r1 - r0) * bw];
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let sc0 = clip((a.0.min(b.0) - reach - 1.0).floor(), cols).max(c0);
        let sc1 = clip((a.0.max(b.0) + reach + 1.0).ceil(), cols).min(c1);
        let sr0 = clip((a.1.min(b.1) - reach - 1.0).floor(), rows).max(r0);
        let sr1 = clip((a.1.max(b.1) + reach + 1.0).ceil(), rows).min(r1);
        for row in sr0..sr1 {
            for col in sc0..sc1 {
                let d = segment_distance((col as f64 + 0.5, row as f64 + 0.5), a, b);
                let slot = &mut dist[(row - r0) * bw + (col - c0)];
                if d < *slot {
                    *slot = d;
                }
            }
        }
    }
    for row in r0..r1 {
        for col in c0..c1 {
            let coverage = (reach - dist[(row - r0) * bw + (col - c0)]).clamp(0.0, 1.0);
            if coverage <= 0.0 {
                continue;
            }
            let alpha = coverage * stroke.darkness;
            let px = image.pixel(row, col);
            let mut out = [0.0; 3];
            for c in 0..3 {
                out[c] = (1.0 - alpha) * px[c] + alpha * stroke.color[c];
            }
            image.set_pixel(row, col, out);
        }
    }
}

/// Draws the strokes for one application, consuming the stream in this
/// order: apply coin, stroke count, then per stroke centre x, centre y,
/// orientation, length, bend, thickness, darkness, tint.
pub fn sample_strokes(height: usize, width: usize, rng: &mut RngStream, cfg: &AugConfig) -> Vec<HairStroke> {
    if !rng.chance(cfg.hair_prob) {
        return Vec::new();
    }
    let (nmin, nmax) = cfg.hair_count_range;
    let n = rng.int_inclusive(nmin, nmax);
    let diag = ((height * height + width * width) as f64).sqrt();
    (0..n)
        .map(|_| {
            let cx = rng.uniform() * width as f64;
            let cy = rng.uniform() * height as f64;
            let theta = rng.uniform() * PI;
            let length = rng.uniform_range(cfg.hair_length_range.0, cfg.hair_length_range.1) * diag;
            let bend = rng.uniform_range(-cfg.hair_curvature_max, cfg.hair_curvature_max) * length;
            let thickness = rng.uniform_range(cfg.hair_thickness_range.0, cfg.hair_thickness_range.1);
            let darkness = rng.uniform_range(cfg.hair_darkness_range.0, cfg.hair_darkness_range.1);
            // between near-black and dark brown
            let t = rng.uniform();
            let color = [0.04 + 0.26 * t, 0.03 + 0.15 * t, 0.02 + 0.08 * t];
            HairStroke {
                center: (cx, cy),
                theta,
                length,
                bend,
                thickness,
                darkness,
                color,
            }
        })
        .collect()
}

pub fn hair_overlay(image: &Image, rng: &mut RngStream, cfg: &AugConfig) -> Image {
    hair_overlay_traced(image, rng, cfg).0
}

/// Hair overlay that also returns the strokes it drew.
pub fn hair_overlay_traced(image: &Image, rng: &mut RngStream, cfg: &AugConfig) -> (Image, Vec<HairStroke>) {
    let strokes = sample_strokes(image.height(), image.width(), rng, cfg);
    let mut out = image.clone();
    for s in &strokes {
        render_stroke(&mut out, s);
    }
    (out, strokes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noisy(seed: u64, n: usize) -> Image {
        let mut r = RngStream::new(seed, 3);
        Image::from_fn(n, n, |_, _| [r.uniform(), r.uniform(), r.uniform()])
    }

    #[test]
    fn disabled_is_identity() {
        let im = noisy(0, 16);
        let off = AugConfig { hair_prob: 0.0, ..AugConfig::default() };
        let none = AugConfig { hair_prob: 1.0, hair_count_range: (0, 0), ..AugConfig::default() };
        for seed in 0..10 {
            assert_eq!(hair_overlay(&im, &mut RngStream::new(seed, 0), &off), im);
            assert_eq!(hair_overlay(&im, &mut RngStream::new(seed, 0), &none), im);
        }
    }

    #[test]
    fn horizontal_stroke_stays_in_band() {
        for thickness in [1.0, 2.0, 2.5, 3.0] {
            let im = Image::filled(32, 32, 0.8);
            let mut out = im.clone();
            let stroke = HairStroke {
                center: (16.0, 16.0),
                theta: 0.0,
                length: 20.0,
                bend: 0.0,
                thickness,
                darkness: 0.9,
                color: [0.1, 0.05, 0.02],
            };
            render_stroke(&mut out, &stroke);
            let rows: Vec<usize> = (0..32)
                .filter(|&y| (0..32).any(|x| out.pixel(y, x) != im.pixel(y, x)))
                .collect();
            assert!(!rows.is_empty());
            let band = rows.last().unwrap() - rows.first().unwrap() + 1;
            assert!(band as f64 <= thickness + 2.0, "band {band} for thickness {thickness}");
            let center_row = 16.0;
            for &r in &rows {
                assert!(((r as f64 + 0.5) - center_row).abs() <= thickness / 2.0 + 1.0);
            }
        }
    }

    #[test]
    fn untouched_pixels_are_bit_identical() {
        let im = noisy(4, 32);
        let cfg = AugConfig { hair_prob: 1.0, ..AugConfig::default() };
        let (out, strokes) = hair_overlay_traced(&im, &mut RngStream::new(1, 0), &cfg);
        assert!(!strokes.is_empty());
        for y in 0..32 {
            for x in 0..32 {
                let p = (x as f64 + 0.5, y as f64 + 0.5);
                let far = strokes.iter().all(|s| {
                    let pts = s.polyline();
                    let d = pts.windows(2).map(|w| segment_distance(p, w[0], w[1])).fold(f64::INFINITY, f64::min);
                    d >= s.thickness / 2.0 + 0.5
                });
                if far {
                    assert_eq!(out.pixel(y, x), im.pixel(y, x));
                }
            }
        }
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn strokes_respect_config_ranges() {
        let cfg = AugConfig { hair_prob: 1.0, ..AugConfig::default() };
        let diag = (2.0f64 * 40.0 * 40.0).sqrt();
        for seed in 0..50 {
            let strokes = sample_strokes(40, 40, &mut RngStream::new(seed, 0), &cfg);
            let (nmin, nmax) = cfg.hair_count_range;
            assert!((nmin..=nmax).contains(&strokes.len()));
            let (lmin, lmax) = cfg.hair_length_range;
            let (tmin, tmax) = cfg.hair_thickness_range;
            let (dmin, dmax) = cfg.hair_darkness_range;
            for s in strokes {
                assert!((0.0..PI).contains(&s.theta));
                assert!(s.length >= lmin * diag - 1e-9 && s.length <= lmax * diag + 1e-9);
                assert!(s.bend.abs() <= cfg.hair_curvature_max * s.length + 1e-12);
                assert!((tmin..=tmax).contains(&s.thickness));
                assert!((dmin..=dmax).contains(&s.darkness));
            }
        }
    }
}
