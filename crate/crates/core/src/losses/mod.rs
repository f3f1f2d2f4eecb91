//! Loss terms of the joint objective and their analytic gradients.
//!
//! Every term is normalized by the number of pixels it sums over (valid-pixel
//! count for masked terms, pixel count for smoothness). Masks are constants
//! during differentiation.

mod census;
mod consistency;
mod objective;
mod smooth;

pub use census::{census_descriptor, photometric_loss, CensusDescriptor, PhotometricTerm};
pub use consistency::{cross_task_loss, fb_depth_loss, fb_flow_loss, CrossTaskTerm, FbDepthTerm, FbFlowTerm};
pub use objective::{
    total_loss, LevelMasks, MaskGating, Objective, ObjectiveConfig, ObjectiveMasks, SceneGradient, SceneInputs,
    SceneVariables, Terms,
};
pub use smooth::{depth_smoothness, flow_smoothness, SmoothTerm};

use crate::error::{Error, Result};

/// Weights of the smoothness, forward-backward and cross-task terms; the
/// photometric term has weight one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_s: f64,
    pub lambda_f: f64,
    pub lambda_c: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_s: 3.0,
            lambda_f: 0.2,
            lambda_c: 0.2,
        }
    }
}

impl LossWeights {
    pub fn new(lambda_s: f64, lambda_f: f64, lambda_c: f64) -> Result<Self> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(ok(lambda_s) && ok(lambda_f) && ok(lambda_c)) {
            return Err(Error::InvalidParameter("loss weights must be nonnegative and finite"));
        }
        Ok(Self {
            lambda_s,
            lambda_f,
            lambda_c,
        })
    }

    pub const ZERO: LossWeights = LossWeights {
        lambda_s: 0.0,
        lambda_f: 0.0,
        lambda_c: 0.0,
    };
}

/// Soft ternary census parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CensusParams {
    /// Patch radius; the descriptor covers `(2r+1)² - 1` neighbors.
    pub radius: usize,
    /// Intensity scale of the soft ternarization `d / √(d² + ε²)`.
    pub epsilon: f64,
    /// Charbonnier stabilizer used by the photometric and consistency terms.
    pub charbonnier_eps: f64,
}

impl Default for CensusParams {
    fn default() -> Self {
        Self {
            radius: 1,
            epsilon: 0.02,
            charbonnier_eps: 1e-3,
        }
    }
}

impl CensusParams {
    pub fn new(radius: usize, epsilon: f64, charbonnier_eps: f64) -> Result<Self> {
        if radius < 1 {
            return Err(Error::InvalidParameter("census radius must be at least 1"));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidParameter("census epsilon must be positive"));
        }
        if !(charbonnier_eps > 0.0 && charbonnier_eps.is_finite()) {
            return Err(Error::InvalidParameter("charbonnier epsilon must be positive"));
        }
        Ok(Self {
            radius,
            epsilon,
            charbonnier_eps,
        })
    }
}

/// Values of the four terms and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    pub photometric: f64,
    pub smooth: f64,
    pub forward_backward: f64,
    pub cross: f64,
    pub total: f64,
}

impl LossReport {
    /// Builds a report with `total` accumulated from the terms.
    pub fn from_terms(photometric: f64, smooth: f64, forward_backward: f64, cross: f64, w: &LossWeights) -> Self {
        Self {
            photometric,
            smooth,
            forward_backward,
            cross,
            total: photometric + w.lambda_s * smooth + w.lambda_f * forward_backward + w.lambda_c * cross,
        }
    }

    /// Name of the first non-finite term, if any.
    pub fn non_finite_term(&self) -> Option<&'static str> {
        [
            ("photometric", self.photometric),
            ("smooth", self.smooth),
            ("forward_backward", self.forward_backward),
            ("cross", self.cross),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(name, _)| name)
    }
}

/// Robust penalty `√(x² + ε²) - ε`: zero at zero, smooth, tends to `|x|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Charbonnier(pub f64);

impl Charbonnier {
    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        libm::sqrt(x * x + self.0 * self.0) - self.0
    }

    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        x / libm::sqrt(x * x + self.0 * self.0)
    }
}
