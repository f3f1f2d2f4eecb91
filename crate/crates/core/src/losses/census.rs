//! Soft ternary census transform and the census photometric loss.
//!
//! For a pixel `p` and each neighbor `q` in its patch, the intensity
//! difference `d = I(q) - I(p)` is soft-ternarized as `t(d) = d / √(d² + ε²)`.
//! Two descriptors are compared with a normalized squared distance
//! `δ² / (0.1 + δ²)` summed over neighbors; the per-pixel cost is that sum
//! passed through a Charbonnier penalty. Neighbors outside the image are
//! dropped from the sum.

use alloc::vec;
use alloc::vec::Vec;

use super::{CensusParams, Charbonnier};
use crate::error::Result;
use crate::field::{ensure_same_dims, ImageBuffer, ValidMask};
use crate::par;

/// Denominator offset of the normalized descriptor distance.
const HAMMING_SCALE: f64 = 0.1;

pub(crate) fn neighbor_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut out = Vec::with_capacity((2 * radius + 1).pow(2) - 1);
    for dy in -r..=r {
        for dx in -r..=r {
            if dx != 0 || dy != 0 {
                out.push((dx, dy));
            }
        }
    }
    out
}

#[inline]
fn soft_ternary(d: f64, eps: f64) -> f64 {
    d / libm::sqrt(d * d + eps * eps)
}

#[inline]
fn soft_ternary_derivative(d: f64, eps: f64) -> f64 {
    let s = d * d + eps * eps;
    eps * eps / (s * libm::sqrt(s))
}

#[inline]
fn descriptor_distance(x: f64) -> f64 {
    let x2 = x * x;
    x2 / (HAMMING_SCALE + x2)
}

#[inline]
fn descriptor_distance_derivative(x: f64) -> f64 {
    let s = HAMMING_SCALE + x * x;
    2.0 * HAMMING_SCALE * x / (s * s)
}

/// Census descriptors of every pixel of a (grayscale-converted) image.
///
/// Neighbors are ordered row-major over the patch, center excluded.
/// Out-of-image neighbors read the clamped pixel and are flagged.
#[derive(Debug, Clone, PartialEq)]
pub struct CensusDescriptor {
    width: usize,
    height: usize,
    offsets: Vec<(isize, isize)>,
    diffs: Vec<f64>,
    inside: Vec<bool>,
    epsilon: f64,
}

impl CensusDescriptor {
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn offsets(&self) -> &[(isize, isize)] {
        &self.offsets
    }

    pub fn len_per_pixel(&self) -> usize {
        self.offsets.len()
    }

    /// Raw intensity difference to neighbor `k` of pixel `(x, y)`.
    pub fn difference(&self, x: usize, y: usize, k: usize) -> f64 {
        self.diffs[(y * self.width + x) * self.offsets.len() + k]
    }

    /// Whether neighbor `k` of pixel `(x, y)` lies inside the image.
    pub fn is_inside(&self, x: usize, y: usize, k: usize) -> bool {
        self.inside[(y * self.width + x) * self.offsets.len() + k]
    }

    /// Hard ternary sign in `{-1, 0, +1}` with threshold `epsilon`.
    pub fn ternary(&self, x: usize, y: usize, k: usize) -> i8 {
        let d = self.difference(x, y, k);
        if d > self.epsilon {
            1
        } else if d < -self.epsilon {
            -1
        } else {
            0
        }
    }

    /// Soft ternary value in `(-1, 1)`.
    pub fn soft(&self, x: usize, y: usize, k: usize) -> f64 {
        soft_ternary(self.difference(x, y, k), self.epsilon)
    }
}

pub fn census_descriptor(img: &ImageBuffer, params: &CensusParams) -> CensusDescriptor {
    let gray = img.to_gray();
    let (w, h) = gray.dims();
    let offsets = neighbor_offsets(params.radius);
    let per_pixel = par::map_indices(w * h, |i| {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        let center = gray.data()[i];
        offsets
            .iter()
            .map(|&(dx, dy)| {
                let (qx, qy) = (x + dx, y + dy);
                let inside = qx >= 0 && qy >= 0 && (qx as usize) < w && (qy as usize) < h;
                let cx = qx.clamp(0, w as isize - 1) as usize;
                let cy = qy.clamp(0, h as isize - 1) as usize;
                (gray.data()[cy * w + cx] - center, inside)
            })
            .collect::<Vec<_>>()
    });
    let mut diffs = Vec::with_capacity(w * h * offsets.len());
    let mut inside = Vec::with_capacity(w * h * offsets.len());
    for px in per_pixel {
        for (d, ok) in px {
            diffs.push(d);
            inside.push(ok);
        }
    }
    CensusDescriptor {
        width: w,
        height: h,
        offsets,
        diffs,
        inside,
        epsilon: params.epsilon,
    }
}

/// Census photometric loss and its gradient with respect to every sample
/// of the warped image.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotometricTerm {
    pub value: f64,
    /// Same layout as the warped image.
    pub grad_warped: Vec<f64>,
    /// The mask selected no pixel; `value` is zero.
    pub degenerate: bool,
}

pub fn photometric_loss(
    reference: &ImageBuffer,
    warped: &ImageBuffer,
    mask: &ValidMask,
    params: &CensusParams,
) -> Result<PhotometricTerm> {
    ensure_same_dims(reference.dims(), warped.dims())?;
    ensure_same_dims(reference.dims(), mask.dims())?;
    let (w, h) = reference.dims();
    let channels = warped.channels();
    let count = mask.count();
    if count == 0 {
        return Ok(PhotometricTerm {
            value: 0.0,
            grad_warped: vec![0.0; w * h * channels],
            degenerate: true,
        });
    }
    let ref_gray = reference.to_gray();
    let warp_gray = warped.to_gray();
    let (rg, wg) = (ref_gray.data(), warp_gray.data());
    let offsets = neighbor_offsets(params.radius);
    let eps = params.epsilon;
    let robust = Charbonnier(params.charbonnier_eps);
    let inv_count = 1.0 / count as f64;

    let mut grad = vec![0.0; w * h];
    let mut sum = 0.0;
    // (neighbor index, ∂h/∂(warped difference))
    let mut partials: Vec<(usize, f64)> = Vec::with_capacity(offsets.len());
    for p in (0..w * h).filter(|&i| mask.at(i)) {
        let (x, y) = ((p % w) as isize, (p / w) as isize);
        partials.clear();
        let mut hamming = 0.0;
        for &(dx, dy) in &offsets {
            let (qx, qy) = (x + dx, y + dy);
            if qx < 0 || qy < 0 || qx as usize >= w || qy as usize >= h {
                continue;
            }
            let q = qy as usize * w + qx as usize;
            let dw = wg[q] - wg[p];
            let delta = soft_ternary(rg[q] - rg[p], eps) - soft_ternary(dw, eps);
            hamming += descriptor_distance(delta);
            partials.push((
                q,
                -descriptor_distance_derivative(delta) * soft_ternary_derivative(dw, eps),
            ));
        }
        sum += robust.value(hamming);
        let scale = robust.derivative(hamming) * inv_count;
        for &(q, dh) in &partials {
            grad[q] += scale * dh;
            grad[p] -= scale * dh;
        }
    }

    let grad_warped = if channels == 1 {
        grad
    } else {
        let share = 1.0 / channels as f64;
        grad.iter()
            .flat_map(|g| core::iter::repeat_n(g * share, channels))
            .collect()
    };
    Ok(PhotometricTerm {
        value: sum * inv_count,
        grad_warped,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(w: usize, h: usize, phase: f64) -> ImageBuffer {
        ImageBuffer::from_fn(w, h, |x, y| {
            0.5 + 0.3 * libm::sin(0.9 * x as f64 + phase) * libm::cos(0.7 * y as f64 - 0.3 * phase)
        })
    }

    #[test]
    fn constant_image_has_zero_descriptor() {
        let d = census_descriptor(&ImageBuffer::filled(5, 4, 1, 0.3), &CensusParams::default());
        for y in 0..4 {
            for x in 0..5 {
                for k in 0..d.len_per_pixel() {
                    assert_eq!(d.ternary(x, y, k), 0);
                    assert_eq!(d.soft(x, y, k), 0.0);
                }
            }
        }
    }

    #[test]
    fn step_edge_signs_match_hand_enumeration() {
        // Column 2 is bright: | 0 0 1 |
        let img = ImageBuffer::from_fn(3, 3, |x, _| if x == 2 { 1.0 } else { 0.0 });
        let params = CensusParams::new(1, 0.01, 1e-3).unwrap();
        let d = census_descriptor(&img, &params);
        // Center pixel (1,1): neighbors row-major (-1,-1) (0,-1) (1,-1) (-1,0) (1,0) (-1,1) (0,1) (1,1)
        let signs: Vec<i8> = (0..8).map(|k| d.ternary(1, 1, k)).collect();
        assert_eq!(signs, vec![0, 0, 1, 0, 1, 0, 0, 1]);
        // Pixel (2,1) is on the bright side: left neighbors are darker.
        let signs: Vec<i8> = (0..8).map(|k| d.ternary(2, 1, k)).collect();
        assert_eq!(signs, vec![-1, 0, 0, -1, 0, -1, 0, 0]);
        assert!(!d.is_inside(2, 1, 2));
        assert!(d.is_inside(1, 1, 7));
    }

    #[test]
    fn brightness_offset_keeps_descriptor() {
        let img = textured(7, 6, 0.0);
        let a = census_descriptor(&img, &CensusParams::default());
        let b = census_descriptor(&img.offset(0.1), &CensusParams::default());
        for y in 0..6 {
            for x in 0..7 {
                for k in 0..8 {
                    assert_eq!(a.ternary(x, y, k), b.ternary(x, y, k));
                    assert!((a.soft(x, y, k) - b.soft(x, y, k)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn identical_images_cost_nothing() {
        let img = textured(8, 8, 0.4);
        let term = photometric_loss(&img, &img, &ValidMask::full(8, 8), &CensusParams::default()).unwrap();
        assert_eq!(term.value, 0.0);
        assert!(term.grad_warped.iter().all(|g| *g == 0.0));
        let shifted =
            photometric_loss(&img, &img.offset(0.1), &ValidMask::full(8, 8), &CensusParams::default()).unwrap();
        assert!(shifted.value < 1e-9);
    }

    #[test]
    fn empty_mask_is_degenerate() {
        let img = textured(4, 4, 0.0);
        let term = photometric_loss(
            &img,
            &textured(4, 4, 1.0),
            &ValidMask::empty(4, 4),
            &CensusParams::default(),
        )
        .unwrap();
        assert!(term.degenerate);
        assert_eq!(term.value, 0.0);
    }

    #[test]
    fn multichannel_gradient_is_shared() {
        let a = textured(5, 5, 0.0);
        let b = textured(5, 5, 0.8);
        let to_rgb =
            |img: &ImageBuffer| ImageBuffer::new(5, 5, 3, img.data().iter().flat_map(|v| [*v; 3]).collect()).unwrap();
        let mask = ValidMask::full(5, 5);
        let gray = photometric_loss(&a, &b, &mask, &CensusParams::default()).unwrap();
        let rgb = photometric_loss(&to_rgb(&a), &to_rgb(&b), &mask, &CensusParams::default()).unwrap();
        assert!((gray.value - rgb.value).abs() < 1e-12);
        for (i, g) in gray.grad_warped.iter().enumerate() {
            assert!((rgb.grad_warped[3 * i] * 3.0 - g).abs() < 1e-12);
        }
    }
}
