//! Flow and depth evaluation metrics.
//!
//! Reductions run sequentially in row-major pixel order.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::field::{ensure_same_dims, DepthMap, FlowField, ValidMask};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowMetrics {
    /// Mean endpoint error in pixels.
    pub epe: f64,
    /// Fraction of outliers (error > 3 px and > 5% of the true magnitude).
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub log_rmse: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
}

const OUTLIER_PIXELS: f64 = 3.0;
const OUTLIER_RELATIVE: f64 = 0.05;

fn check_flow_inputs(est: &FlowField, gt: &FlowField, mask: &ValidMask) -> Result<()> {
    ensure_same_dims(gt.dims(), est.dims())?;
    ensure_same_dims(gt.dims(), mask.dims())?;
    if mask.is_empty() {
        return Err(Error::NoGroundTruth);
    }
    Ok(())
}

#[inline]
fn endpoint_error(est: &FlowField, gt: &FlowField, i: usize) -> f64 {
    let du = est.u()[i] - gt.u()[i];
    let dv = est.v()[i] - gt.v()[i];
    libm::sqrt(du * du + dv * dv)
}

/// Average endpoint error over the mask.
pub fn epe(est: &FlowField, gt: &FlowField, mask: &ValidMask) -> Result<f64> {
    check_flow_inputs(est, gt, mask)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in (0..mask.bits().len()).filter(|&i| mask.at(i)) {
        sum += endpoint_error(est, gt, i);
        n += 1;
    }
    Ok(sum / n as f64)
}

/// Outlier fraction over the mask.
pub fn f1(est: &FlowField, gt: &FlowField, mask: &ValidMask) -> Result<f64> {
    check_flow_inputs(est, gt, mask)?;
    let mut outliers = 0usize;
    let mut n = 0usize;
    for i in (0..mask.bits().len()).filter(|&i| mask.at(i)) {
        let err = endpoint_error(est, gt, i);
        let (gu, gv) = gt.at(i);
        let magnitude = libm::sqrt(gu * gu + gv * gv);
        if err > OUTLIER_PIXELS && err > OUTLIER_RELATIVE * magnitude {
            outliers += 1;
        }
        n += 1;
    }
    Ok(outliers as f64 / n as f64)
}

pub fn flow_metrics(est: &FlowField, gt: &FlowField, mask: &ValidMask) -> Result<FlowMetrics> {
    Ok(FlowMetrics {
        epe: epe(est, gt, mask)?,
        f1: f1(est, gt, mask)?,
    })
}

/// Options of the depth evaluation protocol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthEvalOptions {
    /// Pixels whose ground truth exceeds the cap are ignored.
    pub cap: Option<f64>,
    /// Rescale the estimate by `median(gt) / median(est)` over the evaluated pixels.
    pub median_scale: bool,
    /// Lower clamp applied to both depths before taking logarithms and ratios.
    pub min_depth: f64,
}

impl Default for DepthEvalOptions {
    fn default() -> Self {
        Self {
            cap: None,
            median_scale: true,
            min_depth: 1e-3,
        }
    }
}

/// Median of a nonempty slice; the mean of the two middle values for even
/// lengths.
pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn depth_metrics(est: &DepthMap, gt: &DepthMap, mask: &ValidMask, opts: &DepthEvalOptions) -> Result<DepthMetrics> {
    ensure_same_dims(gt.dims(), est.dims())?;
    ensure_same_dims(gt.dims(), mask.dims())?;
    let selected: Vec<usize> = (0..mask.bits().len())
        .filter(|&i| mask.at(i) && opts.cap.is_none_or(|cap| gt.values()[i] <= cap))
        .collect();
    if selected.is_empty() {
        return Err(Error::NoGroundTruth);
    }
    let scale = if opts.median_scale {
        let g: Vec<f64> = selected.iter().map(|&i| gt.values()[i]).collect();
        let e: Vec<f64> = selected.iter().map(|&i| est.values()[i]).collect();
        median(&g) / median(&e)
    } else {
        1.0
    };

    let (mut abs_rel, mut sq_rel, mut sq, mut log_sq) = (0.0, 0.0, 0.0, 0.0);
    let (mut a1, mut a2, mut a3) = (0usize, 0usize, 0usize);
    for &i in &selected {
        let e = (est.values()[i] * scale).max(opts.min_depth);
        let g = gt.values()[i].max(opts.min_depth);
        let diff = e - g;
        abs_rel += libm::fabs(diff) / g;
        sq_rel += diff * diff / g;
        sq += diff * diff;
        let ld = libm::log(e) - libm::log(g);
        log_sq += ld * ld;
        let ratio = (e / g).max(g / e);
        if ratio < 1.25 {
            a1 += 1;
        }
        if ratio < 1.25 * 1.25 {
            a2 += 1;
        }
        if ratio < 1.25 * 1.25 * 1.25 {
            a3 += 1;
        }
    }
    let n = selected.len() as f64;
    Ok(DepthMetrics {
        abs_rel: abs_rel / n,
        sq_rel: sq_rel / n,
        rmse: libm::sqrt(sq / n),
        log_rmse: libm::sqrt(log_sq / n),
        a1: a1 as f64 / n,
        a2: a2 as f64 / n,
        a3: a3 as f64 / n,
    })
}
