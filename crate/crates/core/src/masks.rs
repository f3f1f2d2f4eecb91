//! Forward-backward consistency checking.
//!
//! A pixel is valid when following the forward flow and then the backward
//! flow (bilinearly sampled at the landing point) returns close to where it
//! started:
//!
//! `|f + b|² < α₁ (|f|² + |b|²) + α₂`, with `f = fwd(p)`, `b = bwd(p + f)`,
//!
//! and `p + f` lies inside the image.

use crate::error::{Error, Result};
use crate::field::{ensure_same_dims, FlowField, ValidMask};
use crate::par;
use crate::sampling::BilinearTap;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FBCheckParams {
    pub alpha1: f64,
    pub alpha2: f64,
}

impl Default for FBCheckParams {
    fn default() -> Self {
        Self {
            alpha1: 0.01,
            alpha2: 0.5,
        }
    }
}

impl FBCheckParams {
    pub fn new(alpha1: f64, alpha2: f64) -> Result<Self> {
        if !(alpha1 >= 0.0 && alpha2 >= 0.0 && alpha1.is_finite() && alpha2.is_finite()) {
            return Err(Error::InvalidParameter("consistency thresholds must be nonnegative"));
        }
        Ok(Self { alpha1, alpha2 })
    }
}

/// Validity mask of `fwd` against `bwd`. Swap the arguments for the
/// backward-direction mask.
pub fn fb_check(fwd: &FlowField, bwd: &FlowField, params: &FBCheckParams) -> Result<ValidMask> {
    ensure_same_dims(fwd.dims(), bwd.dims())?;
    let (w, h) = fwd.dims();
    let bits = par::map_indices(w * h, |i| {
        let (fu, fv) = fwd.at(i);
        let tap = BilinearTap::new(w, h, (i % w) as f64 + fu, (i / w) as f64 + fv);
        if !tap.in_bounds {
            return false;
        }
        let bu = tap.sample(bwd.u());
        let bv = tap.sample(bwd.v());
        let (ru, rv) = (fu + bu, fv + bv);
        let residual = ru * ru + rv * rv;
        let bound = params.alpha1 * (fu * fu + fv * fv + bu * bu + bv * bv) + params.alpha2;
        residual < bound
    });
    ValidMask::new(w, h, bits)
}

pub fn intersect(a: &ValidMask, b: &ValidMask) -> Result<ValidMask> {
    a.intersect(b)
}
