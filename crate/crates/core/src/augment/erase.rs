use super::AugConfig;
use crate::imagedata::Image;
use crate::rng::RngStream;

const MAX_ATTEMPTS: usize = 100;

/// Pixel rectangle, `top..top+height` × `left..left+width`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EraseRect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl EraseRect {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.top..self.top + self.height).contains(&y) && (self.left..self.left + self.width).contains(&x)
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }
}

pub fn random_erase(image: &Image, rng: &mut RngStream, cfg: &AugConfig) -> Image {
    random_erase_traced(image, rng, cfg).0
}

/// Random erasing that also reports the rectangle it filled, if any.
///
/// With probability `erase_prob` a rectangle is proposed by drawing an area
/// fraction in `erase_area_range` and an aspect ratio (height / width) in
/// `erase_aspect_range`. After rounding to whole pixels the proposal must
/// still satisfy both ranges and fit strictly inside the image, otherwise it
/// is redrawn, up to 100 times. The accepted rectangle is filled with
/// i.i.d. uniform noise per channel.
pub fn random_erase_traced(image: &Image, rng: &mut RngStream, cfg: &AugConfig) -> (Image, Option<EraseRect>) {
    if !rng.chance(cfg.erase_prob) {
        return (image.clone(), None);
    }
    let (h, w) = (image.height(), image.width());
    let total = (h * w) as f64;
    let (sl, sh) = cfg.erase_area_range;
    let (r1, r2) = cfg.erase_aspect_range;
    for _ in 0..MAX_ATTEMPTS {
        let target = rng.uniform_range(sl, sh) * total;
        let aspect = rng.uniform_range(r1, r2);
        let eh = (target * aspect).sqrt().round() as usize;
        let ew = (target / aspect).sqrt().round() as usize;
        if eh == 0 || ew == 0 || eh >= h || ew >= w {
            continue;
        }
        let frac = (eh * ew) as f64 / total;
        let ratio = eh as f64 / ew as f64;
        if frac < sl || frac > sh || ratio < r1 || ratio > r2 {
            continue;
        }
        let top = rng.int_inclusive(0, h - eh);
        let left = rng.int_inclusive(0, w - ew);
        let rect = EraseRect {
            top,
            left,
            height: eh,
            width: ew,
        };
        let mut out = image.clone();
        for y in top..top + eh {
            for x in left..left + ew {
                out.set_pixel(y, x, [rng.uniform(), rng.uniform(), rng.uniform()]);
            }
        }
        return (out, Some(rect));
    }
    (image.clone(), None)
}
