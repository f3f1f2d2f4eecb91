//! Bilinear sampling, inverse warping and 2×2 average-pooled pyramids.
//!
//! Samples outside `[0, W-1] × [0, H-1]` are taken at the clamped coordinate
//! and reported as out of bounds; the coordinate derivative along a clamped
//! axis is zero.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::field::{ensure_same_dims, DepthMap, FlowField, ImageBuffer, ValidMask};
use crate::par;

/// The four taps of a bilinear lookup and their weights.
///
/// Tap order is `(x0, y0), (x1, y0), (x0, y1), (x1, y1)`; `dw_dx`/`dw_dy` are
/// the weight derivatives with respect to the sample coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BilinearTap {
    pub index: [usize; 4],
    pub weight: [f64; 4],
    pub dw_dx: [f64; 4],
    pub dw_dy: [f64; 4],
    pub in_bounds: bool,
}

impl BilinearTap {
    pub fn new(width: usize, height: usize, x: f64, y: f64) -> Self {
        debug_assert!(width > 0 && height > 0);
        let (max_x, max_y) = ((width - 1) as f64, (height - 1) as f64);
        let in_x = (0.0..=max_x).contains(&x);
        let in_y = (0.0..=max_y).contains(&y);
        let xc = x.clamp(0.0, max_x);
        let yc = y.clamp(0.0, max_y);
        let x0 = (libm::floor(xc) as usize).min(width.saturating_sub(2));
        let y0 = (libm::floor(yc) as usize).min(height.saturating_sub(2));
        let x1 = (x0 + 1).min(width - 1);
        let y1 = (y0 + 1).min(height - 1);
        let ax = xc - x0 as f64;
        let ay = yc - y0 as f64;
        let gx = if in_x { 1.0 } else { 0.0 };
        let gy = if in_y { 1.0 } else { 0.0 };
        BilinearTap {
            index: [y0 * width + x0, y0 * width + x1, y1 * width + x0, y1 * width + x1],
            weight: [(1.0 - ax) * (1.0 - ay), ax * (1.0 - ay), (1.0 - ax) * ay, ax * ay],
            dw_dx: [-(1.0 - ay) * gx, (1.0 - ay) * gx, -ay * gx, ay * gx],
            dw_dy: [-(1.0 - ax) * gy, -ax * gy, (1.0 - ax) * gy, ax * gy],
            in_bounds: in_x && in_y,
        }
    }

    /// Interpolated value of a single-channel buffer.
    #[inline]
    pub fn sample(&self, values: &[f64]) -> f64 {
        (0..4).map(|k| self.weight[k] * values[self.index[k]]).sum()
    }

    /// `(∂/∂x, ∂/∂y)` of the interpolated value.
    #[inline]
    pub fn gradient(&self, values: &[f64]) -> (f64, f64) {
        let mut gx = 0.0;
        let mut gy = 0.0;
        for k in 0..4 {
            let v = values[self.index[k]];
            gx += self.dw_dx[k] * v;
            gy += self.dw_dy[k] * v;
        }
        (gx, gy)
    }

    /// Interpolated value of channel `c` of an interleaved buffer.
    #[inline]
    pub fn sample_channel(&self, data: &[f64], channels: usize, c: usize) -> f64 {
        (0..4)
            .map(|k| self.weight[k] * data[self.index[k] * channels + c])
            .sum()
    }

    #[inline]
    pub fn gradient_channel(&self, data: &[f64], channels: usize, c: usize) -> (f64, f64) {
        let mut gx = 0.0;
        let mut gy = 0.0;
        for k in 0..4 {
            let v = data[self.index[k] * channels + c];
            gx += self.dw_dx[k] * v;
            gy += self.dw_dy[k] * v;
        }
        (gx, gy)
    }
}

/// Bilinear lookup of every channel of `img` at `(x, y)`, plus the in-bounds flag.
pub fn bilinear_sample(img: &ImageBuffer, x: f64, y: f64) -> (Vec<f64>, bool) {
    let tap = BilinearTap::new(img.width(), img.height(), x, y);
    let values = (0..img.channels())
        .map(|c| tap.sample_channel(img.data(), img.channels(), c))
        .collect();
    (values, tap.in_bounds)
}

/// Per-pixel taps at `p + flow(p)`.
pub fn flow_taps(flow: &FlowField) -> Vec<BilinearTap> {
    let (w, h) = flow.dims();
    par::map_indices(w * h, |i| {
        let (u, v) = flow.at(i);
        BilinearTap::new(w, h, (i % w) as f64 + u, (i / w) as f64 + v)
    })
}

fn taps_mask(w: usize, h: usize, taps: &[BilinearTap]) -> ValidMask {
    ValidMask::new(w, h, taps.iter().map(|t| t.in_bounds).collect()).expect("sized from taps")
}

/// `warped(p) = target(p + flow(p))`, with the in-bounds mask.
pub fn inverse_warp(target: &ImageBuffer, flow: &FlowField) -> Result<(ImageBuffer, ValidMask)> {
    ensure_same_dims(target.dims(), flow.dims())?;
    let taps = flow_taps(flow);
    Ok((
        warp_with_taps(target, &taps),
        taps_mask(target.width(), target.height(), &taps),
    ))
}

pub(crate) fn warp_with_taps(target: &ImageBuffer, taps: &[BilinearTap]) -> ImageBuffer {
    let ch = target.channels();
    let mut data = Vec::with_capacity(taps.len() * ch);
    for tap in taps {
        for c in 0..ch {
            data.push(tap.sample_channel(target.data(), ch, c));
        }
    }
    ImageBuffer::new(target.width(), target.height(), ch, data).expect("warp preserves shape")
}

/// Depth map warped by `flow`. Bilinear weights are convex so the result
/// stays positive.
pub fn warp_depth(depth: &DepthMap, flow: &FlowField) -> Result<(DepthMap, ValidMask)> {
    ensure_same_dims(depth.dims(), flow.dims())?;
    let taps = flow_taps(flow);
    let values = taps.iter().map(|t| t.sample(depth.values())).collect();
    let (w, h) = depth.dims();
    Ok((DepthMap::new(w, h, values)?, taps_mask(w, h, &taps)))
}

/// Size of the next pyramid level.
pub fn pooled_dims(width: usize, height: usize) -> Result<(usize, usize)> {
    if width < 2 || height < 2 {
        return Err(Error::CannotDownsample { width, height });
    }
    Ok((width.div_ceil(2), height.div_ceil(2)))
}

/// 2×2 average pooling of an interleaved buffer. Trailing odd rows/columns
/// average the pixels that exist.
pub fn pool2x2(values: &[f64], width: usize, height: usize, channels: usize) -> Result<Vec<f64>> {
    let (cw, chh) = pooled_dims(width, height)?;
    let mut out = Vec::with_capacity(cw * chh * channels);
    for cy in 0..chh {
        for cx in 0..cw {
            let ys = 2 * cy..(2 * cy + 2).min(height);
            let xs = 2 * cx..(2 * cx + 2).min(width);
            let n = (ys.len() * xs.len()) as f64;
            for c in 0..channels {
                let mut acc = 0.0;
                for y in ys.clone() {
                    for x in xs.clone() {
                        acc += values[(y * width + x) * channels + c];
                    }
                }
                out.push(acc / n);
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`pool2x2`] for a single channel: spreads each coarse gradient
/// over its block, divided by the block size.
pub fn pool2x2_adjoint(grad: &[f64], width: usize, height: usize) -> Vec<f64> {
    let cw = width.div_ceil(2);
    let mut out = alloc::vec![0.0; width * height];
    for y in 0..height {
        let cy = y / 2;
        let ny = if 2 * cy + 1 < height { 2.0 } else { 1.0 };
        for x in 0..width {
            let cx = x / 2;
            let nx = if 2 * cx + 1 < width { 2.0 } else { 1.0 };
            out[y * width + x] = grad[cy * cw + cx] / (nx * ny);
        }
    }
    out
}

/// Types that can produce the next (half-resolution) pyramid level.
pub trait Downsample: Sized {
    fn downsample(&self) -> Result<Self>;
}

impl Downsample for ImageBuffer {
    fn downsample(&self) -> Result<Self> {
        let (w, h) = pooled_dims(self.width(), self.height())?;
        ImageBuffer::new(
            w,
            h,
            self.channels(),
            pool2x2(self.data(), self.width(), self.height(), self.channels())?,
        )
    }
}

impl Downsample for DepthMap {
    fn downsample(&self) -> Result<Self> {
        let (w, h) = pooled_dims(self.width(), self.height())?;
        DepthMap::new(w, h, pool2x2(self.values(), self.width(), self.height(), 1)?)
    }
}

impl Downsample for FlowField {
    /// Averages and halves the displacement, since pixels are twice as large.
    fn downsample(&self) -> Result<Self> {
        let (w, h) = pooled_dims(self.width(), self.height())?;
        let half = |c: &[f64]| -> Result<Vec<f64>> {
            Ok(pool2x2(c, self.width(), self.height(), 1)?
                .into_iter()
                .map(|v| v * 0.5)
                .collect())
        };
        FlowField::new(w, h, half(self.u())?, half(self.v())?)
    }
}

/// Multi-scale pyramid; level 0 is the finest.
#[derive(Debug, Clone, PartialEq)]
pub struct Pyramid<T> {
    levels: Vec<T>,
}

impl<T: Downsample + Clone> Pyramid<T> {
    pub fn build(base: &T, levels: usize) -> Result<Self> {
        if levels == 0 {
            return Err(Error::InvalidParameter("pyramid needs at least one level"));
        }
        let mut out = Vec::with_capacity(levels);
        out.push(base.clone());
        for _ in 1..levels {
            let next = out.last().expect("nonempty").downsample()?;
            out.push(next);
        }
        Ok(Self { levels: out })
    }
}

impl<T> Pyramid<T> {
    pub fn levels(&self) -> &[T] {
        &self.levels
    }

    pub fn level(&self, i: usize) -> &T {
        &self.levels[i]
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}
