//! First-order edge-aware smoothness.
//!
//! `Σ |∂x f| e^{-|∂x I|} + |∂y f| e^{-|∂y I|}` over all channels of `f`, with
//! the guide gradient averaged over the guide's channels, divided by the pixel
//! count. Depth is divided by its mean first so the penalty is scale-free.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::Result;
use crate::field::{ensure_same_dims, DepthMap, FlowField, ImageBuffer};

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothTerm {
    pub value: f64,
    /// One gradient buffer per field channel (`[depth]` or `[u, v]`).
    pub grad: Vec<Vec<f64>>,
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Horizontal and vertical edge weights of the guide image.
fn edge_weights(guide: &ImageBuffer) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = guide.dims();
    let ch = guide.channels();
    let inv = 1.0 / ch as f64;
    let mut wx = vec![0.0; w * h];
    let mut wy = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            if x + 1 < w {
                let g: f64 = (0..ch)
                    .map(|c| libm::fabs(guide.get(x + 1, y, c) - guide.get(x, y, c)))
                    .sum();
                wx[y * w + x] = libm::exp(-g * inv);
            }
            if y + 1 < h {
                let g: f64 = (0..ch)
                    .map(|c| libm::fabs(guide.get(x, y + 1, c) - guide.get(x, y, c)))
                    .sum();
                wy[y * w + x] = libm::exp(-g * inv);
            }
        }
    }
    (wx, wy)
}

fn edge_aware_l1(channels: &[&[f64]], w: usize, h: usize, guide: &ImageBuffer) -> SmoothTerm {
    let (wx, wy) = edge_weights(guide);
    let inv_n = 1.0 / (w * h) as f64;
    let mut sum = 0.0;
    let mut grads = Vec::with_capacity(channels.len());
    for f in channels {
        let mut g = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if x + 1 < w {
                    let d = f[i + 1] - f[i];
                    sum += wx[i] * libm::fabs(d);
                    let s = wx[i] * sign(d) * inv_n;
                    g[i + 1] += s;
                    g[i] -= s;
                }
                if y + 1 < h {
                    let d = f[i + w] - f[i];
                    sum += wy[i] * libm::fabs(d);
                    let s = wy[i] * sign(d) * inv_n;
                    g[i + w] += s;
                    g[i] -= s;
                }
            }
        }
        grads.push(g);
    }
    SmoothTerm {
        value: sum * inv_n,
        grad: grads,
    }
}

/// Smoothness of the mean-normalized depth; gradient is with respect to the
/// raw depth values.
pub fn depth_smoothness(depth: &DepthMap, guide: &ImageBuffer) -> Result<SmoothTerm> {
    ensure_same_dims(depth.dims(), guide.dims())?;
    let (w, h) = depth.dims();
    let mean = depth.mean();
    let normalized: Vec<f64> = depth.values().iter().map(|d| d / mean).collect();
    let mut term = edge_aware_l1(&[&normalized], w, h, guide);
    // d̃ᵢ = dᵢ / m, m = mean(d): ∂L/∂dⱼ = gⱼ/m - Σᵢ gᵢ dᵢ / (N m²)
    let g = &mut term.grad[0];
    let coupled: f64 =
        g.iter().zip(depth.values()).map(|(gi, di)| gi * di).sum::<f64>() / ((w * h) as f64 * mean * mean);
    for gi in g.iter_mut() {
        *gi = *gi / mean - coupled;
    }
    Ok(term)
}

pub fn flow_smoothness(flow: &FlowField, guide: &ImageBuffer) -> Result<SmoothTerm> {
    ensure_same_dims(flow.dims(), guide.dims())?;
    let (w, h) = flow.dims();
    Ok(edge_aware_l1(&[flow.u(), flow.v()], w, h, guide))
}
