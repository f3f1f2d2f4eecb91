//! Forward-backward and cross-task consistency losses.
//!
//! All three are Charbonnier-robustified L1 penalties averaged over the mask.

use alloc::vec;
use alloc::vec::Vec;

use super::Charbonnier;
use crate::error::Result;
use crate::field::{ensure_same_dims, DepthMap, FlowField, ValidMask};
use crate::sampling::BilinearTap;

fn zero_flow(w: usize, h: usize) -> FlowField {
    FlowField::zeros(w, h)
}

fn flow_from(w: usize, h: usize, u: Vec<f64>, v: Vec<f64>) -> FlowField {
    FlowField::from_parts_unchecked(w, h, u, v)
}

/// Cycle loss `|F(p) + B(p + F(p))|₁` and its gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct FbFlowTerm {
    pub value: f64,
    pub grad_fwd: FlowField,
    pub grad_bwd: FlowField,
    pub degenerate: bool,
}

pub fn fb_flow_loss(fwd: &FlowField, bwd: &FlowField, mask: &ValidMask, charbonnier_eps: f64) -> Result<FbFlowTerm> {
    ensure_same_dims(fwd.dims(), bwd.dims())?;
    ensure_same_dims(fwd.dims(), mask.dims())?;
    let (w, h) = fwd.dims();
    let count = mask.count();
    if count == 0 {
        return Ok(FbFlowTerm {
            value: 0.0,
            grad_fwd: zero_flow(w, h),
            grad_bwd: zero_flow(w, h),
            degenerate: true,
        });
    }
    let robust = Charbonnier(charbonnier_eps);
    let inv = 1.0 / count as f64;
    let (mut gfu, mut gfv) = (vec![0.0; w * h], vec![0.0; w * h]);
    let (mut gbu, mut gbv) = (vec![0.0; w * h], vec![0.0; w * h]);
    let mut sum = 0.0;
    for p in (0..w * h).filter(|&i| mask.at(i)) {
        let (fu, fv) = fwd.at(p);
        let tap = BilinearTap::new(w, h, (p % w) as f64 + fu, (p / w) as f64 + fv);
        let (ru, rv) = (fu + tap.sample(bwd.u()), fv + tap.sample(bwd.v()));
        sum += robust.value(ru) + robust.value(rv);
        let (gu, gv) = (robust.derivative(ru) * inv, robust.derivative(rv) * inv);
        let (bu_x, bu_y) = tap.gradient(bwd.u());
        let (bv_x, bv_y) = tap.gradient(bwd.v());
        gfu[p] += gu * (1.0 + bu_x) + gv * bv_x;
        gfv[p] += gu * bu_y + gv * (1.0 + bv_y);
        for k in 0..4 {
            gbu[tap.index[k]] += gu * tap.weight[k];
            gbv[tap.index[k]] += gv * tap.weight[k];
        }
    }
    Ok(FbFlowTerm {
        value: sum * inv,
        grad_fwd: flow_from(w, h, gfu, gfv),
        grad_bwd: flow_from(w, h, gbu, gbv),
        degenerate: false,
    })
}

/// Depth consistency `|D_t(p) - D_{t+1}(p + R(p))|₁` where `R` is the rigid
/// flow from t to t+1.
#[derive(Debug, Clone, PartialEq)]
pub struct FbDepthTerm {
    pub value: f64,
    pub grad_depth_t: Vec<f64>,
    pub grad_depth_t1: Vec<f64>,
    pub grad_rigid: FlowField,
    pub degenerate: bool,
}

pub fn fb_depth_loss(
    depth_t: &DepthMap,
    depth_t1: &DepthMap,
    rigid_fwd: &FlowField,
    mask: &ValidMask,
    charbonnier_eps: f64,
) -> Result<FbDepthTerm> {
    ensure_same_dims(depth_t.dims(), depth_t1.dims())?;
    ensure_same_dims(depth_t.dims(), rigid_fwd.dims())?;
    ensure_same_dims(depth_t.dims(), mask.dims())?;
    let (w, h) = depth_t.dims();
    let count = mask.count();
    let mut g0 = vec![0.0; w * h];
    let mut g1 = vec![0.0; w * h];
    let (mut gu, mut gv) = (vec![0.0; w * h], vec![0.0; w * h]);
    if count == 0 {
        return Ok(FbDepthTerm {
            value: 0.0,
            grad_depth_t: g0,
            grad_depth_t1: g1,
            grad_rigid: flow_from(w, h, gu, gv),
            degenerate: true,
        });
    }
    let robust = Charbonnier(charbonnier_eps);
    let inv = 1.0 / count as f64;
    let mut sum = 0.0;
    for p in (0..w * h).filter(|&i| mask.at(i)) {
        let (fu, fv) = rigid_fwd.at(p);
        let tap = BilinearTap::new(w, h, (p % w) as f64 + fu, (p / w) as f64 + fv);
        let r = depth_t.values()[p] - tap.sample(depth_t1.values());
        sum += robust.value(r);
        let g = robust.derivative(r) * inv;
        g0[p] += g;
        for k in 0..4 {
            g1[tap.index[k]] -= g * tap.weight[k];
        }
        let (dx, dy) = tap.gradient(depth_t1.values());
        gu[p] -= g * dx;
        gv[p] -= g * dy;
    }
    Ok(FbDepthTerm {
        value: sum * inv,
        grad_depth_t: g0,
        grad_depth_t1: g1,
        grad_rigid: flow_from(w, h, gu, gv),
        degenerate: false,
    })
}

/// Endpoint distance `|F_rigid(p) - F_flow(p)|₁` between the two flow
/// estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossTaskTerm {
    pub value: f64,
    pub grad_rigid: FlowField,
    pub grad_flow: FlowField,
    pub degenerate: bool,
}

pub fn cross_task_loss(
    rigid: &FlowField,
    flow: &FlowField,
    mask: &ValidMask,
    charbonnier_eps: f64,
) -> Result<CrossTaskTerm> {
    ensure_same_dims(rigid.dims(), flow.dims())?;
    ensure_same_dims(rigid.dims(), mask.dims())?;
    let (w, h) = rigid.dims();
    let count = mask.count();
    let (mut gu, mut gv) = (vec![0.0; w * h], vec![0.0; w * h]);
    let mut sum = 0.0;
    if count > 0 {
        let robust = Charbonnier(charbonnier_eps);
        let inv = 1.0 / count as f64;
        for p in (0..w * h).filter(|&i| mask.at(i)) {
            let du = rigid.u()[p] - flow.u()[p];
            let dv = rigid.v()[p] - flow.v()[p];
            sum += robust.value(du) + robust.value(dv);
            gu[p] = robust.derivative(du) * inv;
            gv[p] = robust.derivative(dv) * inv;
        }
        sum *= inv;
    }
    let grad_flow = flow_from(w, h, gu.iter().map(|g| -g).collect(), gv.iter().map(|g| -g).collect());
    Ok(CrossTaskTerm {
        value: sum,
        grad_rigid: flow_from(w, h, gu, gv),
        grad_flow,
        degenerate: count == 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const EPS: f64 = 1e-3;

    #[test]
    fn exact_inverse_has_zero_cycle_loss() {
        let fwd = FlowField::constant(8, 8, 1.5, -0.5);
        let bwd = FlowField::constant(8, 8, -1.5, 0.5);
        let mask = ValidMask::from_fn(8, 8, |x, y| x < 6 && y > 0);
        let t = fb_flow_loss(&fwd, &bwd, &mask, EPS).unwrap();
        assert!(t.value.abs() < 1e-15);
    }

    #[test]
    fn unit_residual_per_pixel() {
        let t = fb_flow_loss(
            &FlowField::constant(6, 6, 1.0, 0.0),
            &FlowField::zeros(6, 6),
            &ValidMask::full(6, 6),
            EPS,
        )
        .unwrap();
        // Charbonnier(1) = √(1 + ε²) - ε
        assert!((t.value - 1.0).abs() < 1e-3);
        assert!((t.value - ((1.0 + EPS * EPS).sqrt() - EPS)).abs() < 1e-15);
    }

    #[test]
    fn depth_difference_per_pixel() {
        let t = fb_depth_loss(
            &DepthMap::constant(5, 4, 2.0),
            &DepthMap::constant(5, 4, 3.0),
            &FlowField::zeros(5, 4),
            &ValidMask::full(5, 4),
            EPS,
        )
        .unwrap();
        assert!((t.value - 1.0).abs() < 1e-3);
        let same = fb_depth_loss(
            &DepthMap::constant(5, 4, 2.0),
            &DepthMap::constant(5, 4, 2.0),
            &FlowField::zeros(5, 4),
            &ValidMask::full(5, 4),
            EPS,
        )
        .unwrap();
        assert_eq!(same.value, 0.0);
    }

    #[test]
    fn cross_task_endpoint_distance() {
        let rigid = FlowField::constant(4, 4, 2.0, 0.0);
        let full = ValidMask::full(4, 4);
        assert_eq!(cross_task_loss(&rigid, &rigid, &full, EPS).unwrap().value, 0.0);
        let t = cross_task_loss(&rigid, &FlowField::zeros(4, 4), &full, EPS).unwrap();
        assert!((t.value - 2.0).abs() < 1e-3);
        let empty = cross_task_loss(&rigid, &FlowField::zeros(4, 4), &ValidMask::empty(4, 4), EPS).unwrap();
        assert!(empty.degenerate && empty.value == 0.0);
    }
}
