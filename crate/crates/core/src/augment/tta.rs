//! Dihedral test-time views.
//!
//! View `k` (0..8) is the image flipped horizontally when `k >= 4`, then
//! rotated counter-clockwise by `k mod 4` quarter turns. View 0 is the
//! identity.

use super::geometric::{flip_horizontal, rotate_quarter};
use crate::imagedata::Image;

pub const TTA_VIEW_COUNT: usize = 8;

pub fn tta_view(image: &Image, k: usize) -> Image {
    let base = if k >= 4 { flip_horizontal(image) } else { image.clone() };
    rotate_quarter(&base, k % 4)
}

pub fn tta_views(image: &Image) -> Vec<Image> {
    (0..TTA_VIEW_COUNT).map(|k| tta_view(image, k)).collect()
}

/// Undoes [`tta_view`] for view `k`.
pub fn tta_inverse(view: &Image, k: usize) -> Image {
    let unrotated = rotate_quarter(view, (4 - k % 4) % 4);
    if k >= 4 {
        flip_horizontal(&unrotated)
    } else {
        unrotated
    }
}
