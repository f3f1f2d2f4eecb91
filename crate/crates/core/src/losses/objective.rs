//! The assembled multi-scale objective
//!
//! `L = L_photometric + λs L_smooth + λf L_forward-backward + λc L_cross`,
//!
//! evaluated in both temporal directions at every pyramid level (cross-task
//! only at the finest `cross_scales` levels), with reverse-mode gradients with
//! respect to both depth maps, the pose parameters and both flow fields.

use alloc::vec;
use alloc::vec::Vec;

use super::census::photometric_loss;
use super::consistency::{cross_task_loss, fb_depth_loss, fb_flow_loss};
use super::smooth::{depth_smoothness, flow_smoothness};
use super::{CensusParams, LossReport, LossWeights};
use crate::error::{Error, Result};
use crate::field::{ensure_same_dims, DepthMap, FlowField, ImageBuffer, ValidMask};
use crate::geometry::{rigid_flow, rigid_flow_with_jacobian, Direction, FlowJacobian, Intrinsics, PoseParams};
use crate::masks::{fb_check, FBCheckParams};
use crate::sampling::{flow_taps, pool2x2_adjoint, warp_with_taps, Pyramid};

/// Which validity mask gates each photometric branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaskGating {
    /// Rigid branch by the rigid-flow mask, flow branch by the flow mask.
    #[default]
    OwnBranch,
    /// Both branches by the rigid-flow mask.
    Rigid,
    /// Both branches by the optical-flow mask.
    Flow,
    /// Both branches by the intersection of the two masks.
    Intersection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveConfig {
    pub weights: LossWeights,
    pub census: CensusParams,
    pub fb_params: FBCheckParams,
    /// Number of pyramid levels (1 = full resolution only).
    pub scales: usize,
    /// Number of finest levels that carry the cross-task term.
    pub cross_scales: usize,
    /// Per-level weights; `None` weighs every level equally.
    pub level_weights: Option<Vec<f64>>,
    pub gating: MaskGating,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            census: CensusParams::default(),
            fb_params: FBCheckParams::default(),
            scales: 4,
            cross_scales: 4,
            level_weights: None,
            gating: MaskGating::OwnBranch,
        }
    }
}

impl ObjectiveConfig {
    fn level_weight(&self, level: usize) -> f64 {
        self.level_weights
            .as_ref()
            .and_then(|w| w.get(level).copied())
            .unwrap_or(1.0)
    }
}

/// Selects which terms contribute; used to isolate terms for inspection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Terms {
    pub photometric: bool,
    pub smooth: bool,
    pub fb_flow: bool,
    pub fb_depth: bool,
    pub cross: bool,
}

impl Terms {
    pub const ALL: Terms = Terms {
        photometric: true,
        smooth: true,
        fb_flow: true,
        fb_depth: true,
        cross: true,
    };
    pub const NONE: Terms = Terms {
        photometric: false,
        smooth: false,
        fb_flow: false,
        fb_depth: false,
        cross: false,
    };
}

/// The fixed observations: two frames and the camera intrinsics.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneInputs {
    pub image_t: ImageBuffer,
    pub image_t1: ImageBuffer,
    pub intrinsics: Intrinsics,
}

/// The quantities the objective is a function of.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneVariables {
    pub depth_t: DepthMap,
    pub depth_t1: DepthMap,
    /// Pose from frame t to frame t+1.
    pub pose: PoseParams,
    pub flow_fwd: FlowField,
    pub flow_bwd: FlowField,
}

/// Gradient of the total loss with respect to [`SceneVariables`].
#[derive(Debug, Clone, PartialEq)]
pub struct SceneGradient {
    pub depth_t: Vec<f64>,
    pub depth_t1: Vec<f64>,
    pub pose: [f64; 6],
    pub flow_fwd: FlowField,
    pub flow_bwd: FlowField,
}

/// Validity masks of one pyramid level. The rigid masks include the
/// in-front-of-camera test.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelMasks {
    pub rigid_fwd: ValidMask,
    pub rigid_bwd: ValidMask,
    pub flow_fwd: ValidMask,
    pub flow_bwd: ValidMask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveMasks {
    pub levels: Vec<LevelMasks>,
}

/// Objective bound to one image pair; caches the image pyramids.
#[derive(Debug, Clone)]
pub struct Objective {
    config: ObjectiveConfig,
    images_t: Pyramid<ImageBuffer>,
    images_t1: Pyramid<ImageBuffer>,
    intrinsics: Vec<Intrinsics>,
}

struct VariablePyramids {
    depth_t: Pyramid<DepthMap>,
    depth_t1: Pyramid<DepthMap>,
    flow_fwd: Pyramid<FlowField>,
    flow_bwd: Pyramid<FlowField>,
}

#[derive(Clone)]
struct FlowGrad {
    u: Vec<f64>,
    v: Vec<f64>,
}

impl FlowGrad {
    fn zeros(n: usize) -> Self {
        Self {
            u: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    fn add_scaled(&mut self, g: &FlowField, s: f64) {
        for (a, b) in self.u.iter_mut().zip(g.u()) {
            *a += s * b;
        }
        for (a, b) in self.v.iter_mut().zip(g.v()) {
            *a += s * b;
        }
    }
}

fn add_scaled(acc: &mut [f64], g: &[f64], s: f64) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += s * b;
    }
}

/// Level gradients, chained back to full resolution at the end.
struct LevelGrad {
    depth_t: Vec<f64>,
    depth_t1: Vec<f64>,
    rigid_fwd: FlowGrad,
    rigid_bwd: FlowGrad,
    flow_fwd: FlowGrad,
    flow_bwd: FlowGrad,
}

impl Objective {
    pub fn new(inputs: &SceneInputs, config: ObjectiveConfig) -> Result<Self> {
        ensure_same_dims(inputs.image_t.dims(), inputs.image_t1.dims())?;
        if config.scales == 0 {
            return Err(Error::InvalidParameter("objective needs at least one scale"));
        }
        let images_t = Pyramid::build(&inputs.image_t, config.scales)?;
        let images_t1 = Pyramid::build(&inputs.image_t1, config.scales)?;
        let mut intrinsics = Vec::with_capacity(config.scales);
        intrinsics.push(inputs.intrinsics);
        for l in 1..config.scales {
            intrinsics.push(intrinsics[l - 1].downscaled());
        }
        Ok(Self {
            config,
            images_t,
            images_t1,
            intrinsics,
        })
    }

    pub fn config(&self) -> &ObjectiveConfig {
        &self.config
    }

    pub fn dims(&self) -> (usize, usize) {
        self.images_t.level(0).dims()
    }

    fn pyramids(&self, vars: &SceneVariables) -> Result<VariablePyramids> {
        let dims = self.dims();
        ensure_same_dims(dims, vars.depth_t.dims())?;
        ensure_same_dims(dims, vars.depth_t1.dims())?;
        ensure_same_dims(dims, vars.flow_fwd.dims())?;
        ensure_same_dims(dims, vars.flow_bwd.dims())?;
        let n = self.config.scales;
        Ok(VariablePyramids {
            depth_t: Pyramid::build(&vars.depth_t, n)?,
            depth_t1: Pyramid::build(&vars.depth_t1, n)?,
            flow_fwd: Pyramid::build(&vars.flow_fwd, n)?,
            flow_bwd: Pyramid::build(&vars.flow_bwd, n)?,
        })
    }

    /// Forward-backward validity masks at every level.
    pub fn masks(&self, vars: &SceneVariables) -> Result<ObjectiveMasks> {
        let pyr = self.pyramids(vars)?;
        let pose = vars.pose.to_pose();
        let inverse = pose.inverse();
        let fb = &self.config.fb_params;
        let mut levels = Vec::with_capacity(self.config.scales);
        for l in 0..self.config.scales {
            let k = &self.intrinsics[l];
            let (rf, front_f) = rigid_flow(pyr.depth_t.level(l), k, &pose);
            let (rb, front_b) = rigid_flow(pyr.depth_t1.level(l), k, &inverse);
            let (ff, fbw) = (pyr.flow_fwd.level(l), pyr.flow_bwd.level(l));
            levels.push(LevelMasks {
                rigid_fwd: fb_check(&rf, &rb, fb)?.intersect(&front_f)?,
                rigid_bwd: fb_check(&rb, &rf, fb)?.intersect(&front_b)?,
                flow_fwd: fb_check(ff, fbw, fb)?,
                flow_bwd: fb_check(fbw, ff, fb)?,
            });
        }
        Ok(ObjectiveMasks { levels })
    }

    /// Loss report with freshly computed masks and every term enabled.
    pub fn report(&self, vars: &SceneVariables) -> Result<LossReport> {
        let masks = self.masks(vars)?;
        Ok(self.evaluate(vars, &masks, Terms::ALL, false)?.0)
    }

    /// Evaluates the selected terms under fixed masks; optionally returns the
    /// gradient of `report.total`.
    pub fn evaluate(
        &self,
        vars: &SceneVariables,
        masks: &ObjectiveMasks,
        terms: Terms,
        with_gradient: bool,
    ) -> Result<(LossReport, Option<SceneGradient>)> {
        if masks.levels.len() != self.config.scales {
            return Err(Error::InvalidParameter(
                "mask pyramid depth does not match the objective",
            ));
        }
        let pyr = self.pyramids(vars)?;
        let cfg = &self.config;
        let weights = &cfg.weights;
        let eps = cfg.census.charbonnier_eps;
        let (mut photo, mut smooth, mut fb, mut cross) = (0.0, 0.0, 0.0, 0.0);

        let (w0, h0) = self.dims();
        let mut grad = SceneGradient {
            depth_t: vec![0.0; w0 * h0],
            depth_t1: vec![0.0; w0 * h0],
            pose: [0.0; 6],
            flow_fwd: FlowField::zeros(w0, h0),
            flow_bwd: FlowField::zeros(w0, h0),
        };

        for l in 0..cfg.scales {
            let lw = cfg.level_weight(l);
            let k = &self.intrinsics[l];
            let m = &masks.levels[l];
            let (img_t, img_t1) = (self.images_t.level(l), self.images_t1.level(l));
            let (d0, d1) = (pyr.depth_t.level(l), pyr.depth_t1.level(l));
            let (ff, fbw) = (pyr.flow_fwd.level(l), pyr.flow_bwd.level(l));
            let (w, h) = d0.dims();
            let n = w * h;
            ensure_same_dims((w, h), m.rigid_fwd.dims())?;

            let (rf, _, jac_f) = rigid_flow_with_jacobian(d0, k, &vars.pose, Direction::Forward);
            let (rb, _, jac_b) = rigid_flow_with_jacobian(d1, k, &vars.pose, Direction::Backward);

            let mut g = LevelGrad {
                depth_t: vec![0.0; n],
                depth_t1: vec![0.0; n],
                rigid_fwd: FlowGrad::zeros(n),
                rigid_bwd: FlowGrad::zeros(n),
                flow_fwd: FlowGrad::zeros(n),
                flow_bwd: FlowGrad::zeros(n),
            };

            if terms.photometric {
                let (rigid_mask_f, flow_mask_f) = gate(cfg.gating, &m.rigid_fwd, &m.flow_fwd)?;
                let (rigid_mask_b, flow_mask_b) = gate(cfg.gating, &m.rigid_bwd, &m.flow_bwd)?;
                let branches: [(&ImageBuffer, &ImageBuffer, &FlowField, &ValidMask, &mut FlowGrad); 4] = [
                    (img_t, img_t1, &rf, &rigid_mask_f, &mut g.rigid_fwd),
                    (img_t1, img_t, &rb, &rigid_mask_b, &mut g.rigid_bwd),
                    (img_t, img_t1, ff, &flow_mask_f, &mut g.flow_fwd),
                    (img_t1, img_t, fbw, &flow_mask_b, &mut g.flow_bwd),
                ];
                for (reference, target, flow, mask, acc) in branches {
                    let taps = flow_taps(flow);
                    let warped = warp_with_taps(target, &taps);
                    let term = photometric_loss(reference, &warped, mask, &cfg.census)?;
                    photo += lw * term.value;
                    if with_gradient && !term.degenerate {
                        let ch = target.channels();
                        for (p, tap) in taps.iter().enumerate() {
                            for c in 0..ch {
                                let gw = term.grad_warped[p * ch + c];
                                if gw != 0.0 {
                                    let (gx, gy) = tap.gradient_channel(target.data(), ch, c);
                                    acc.u[p] += lw * gw * gx;
                                    acc.v[p] += lw * gw * gy;
                                }
                            }
                        }
                    }
                }
            }

            if terms.smooth {
                let s = weights.lambda_s * lw;
                let a = depth_smoothness(d0, img_t)?;
                let b = depth_smoothness(d1, img_t1)?;
                let c = flow_smoothness(ff, img_t)?;
                let d = flow_smoothness(fbw, img_t1)?;
                smooth += lw * (a.value + b.value + c.value + d.value);
                if with_gradient {
                    add_scaled(&mut g.depth_t, &a.grad[0], s);
                    add_scaled(&mut g.depth_t1, &b.grad[0], s);
                    add_scaled(&mut g.flow_fwd.u, &c.grad[0], s);
                    add_scaled(&mut g.flow_fwd.v, &c.grad[1], s);
                    add_scaled(&mut g.flow_bwd.u, &d.grad[0], s);
                    add_scaled(&mut g.flow_bwd.v, &d.grad[1], s);
                }
            }

            let s_fb = weights.lambda_f * lw;
            if terms.fb_flow {
                let a = fb_flow_loss(ff, fbw, &m.flow_fwd, eps)?;
                let b = fb_flow_loss(fbw, ff, &m.flow_bwd, eps)?;
                fb += lw * (a.value + b.value);
                if with_gradient {
                    g.flow_fwd.add_scaled(&a.grad_fwd, s_fb);
                    g.flow_bwd.add_scaled(&a.grad_bwd, s_fb);
                    g.flow_bwd.add_scaled(&b.grad_fwd, s_fb);
                    g.flow_fwd.add_scaled(&b.grad_bwd, s_fb);
                }
            }
            if terms.fb_depth {
                let a = fb_depth_loss(d0, d1, &rf, &m.rigid_fwd, eps)?;
                let b = fb_depth_loss(d1, d0, &rb, &m.rigid_bwd, eps)?;
                fb += lw * (a.value + b.value);
                if with_gradient {
                    add_scaled(&mut g.depth_t, &a.grad_depth_t, s_fb);
                    add_scaled(&mut g.depth_t1, &a.grad_depth_t1, s_fb);
                    g.rigid_fwd.add_scaled(&a.grad_rigid, s_fb);
                    add_scaled(&mut g.depth_t1, &b.grad_depth_t, s_fb);
                    add_scaled(&mut g.depth_t, &b.grad_depth_t1, s_fb);
                    g.rigid_bwd.add_scaled(&b.grad_rigid, s_fb);
                }
            }

            if terms.cross && l < cfg.cross_scales {
                let s = weights.lambda_c * lw;
                let a = cross_task_loss(&rf, ff, &m.rigid_fwd.intersect(&m.flow_fwd)?, eps)?;
                let b = cross_task_loss(&rb, fbw, &m.rigid_bwd.intersect(&m.flow_bwd)?, eps)?;
                cross += lw * (a.value + b.value);
                if with_gradient {
                    g.rigid_fwd.add_scaled(&a.grad_rigid, s);
                    g.flow_fwd.add_scaled(&a.grad_flow, s);
                    g.rigid_bwd.add_scaled(&b.grad_rigid, s);
                    g.flow_bwd.add_scaled(&b.grad_flow, s);
                }
            }

            if with_gradient {
                chain_rigid(&g.rigid_fwd, &jac_f, &mut g.depth_t, &mut grad.pose);
                chain_rigid(&g.rigid_bwd, &jac_b, &mut g.depth_t1, &mut grad.pose);
                self.accumulate_level(l, g, &mut grad);
            }
        }

        let report = LossReport::from_terms(photo, smooth, fb, cross, weights);
        Ok((report, with_gradient.then_some(grad)))
    }

    /// Pulls level-`l` gradients back through the pooling chain.
    fn accumulate_level(&self, l: usize, g: LevelGrad, out: &mut SceneGradient) {
        let dims: Vec<(usize, usize)> = self.images_t.levels().iter().map(|i| i.dims()).collect();
        let lift = |mut v: Vec<f64>, scale: f64| -> Vec<f64> {
            for level in (0..l).rev() {
                let (w, h) = dims[level];
                v = pool2x2_adjoint(&v, w, h);
            }
            if scale != 1.0 {
                for x in v.iter_mut() {
                    *x *= scale;
                }
            }
            v
        };
        // Flow is halved at each level, so its adjoint carries the same factor.
        let flow_scale = libm::pow(0.5, l as f64);
        add_scaled(&mut out.depth_t, &lift(g.depth_t, 1.0), 1.0);
        add_scaled(&mut out.depth_t1, &lift(g.depth_t1, 1.0), 1.0);
        for (acc, lg) in [(&mut out.flow_fwd, g.flow_fwd), (&mut out.flow_bwd, g.flow_bwd)] {
            let u = lift(lg.u, flow_scale);
            let v = lift(lg.v, flow_scale);
            add_scaled(acc.u_mut(), &u, 1.0);
            add_scaled(acc.v_mut(), &v, 1.0);
        }
    }
}

fn gate(gating: MaskGating, rigid: &ValidMask, flow: &ValidMask) -> Result<(ValidMask, ValidMask)> {
    Ok(match gating {
        MaskGating::OwnBranch => (rigid.clone(), flow.clone()),
        MaskGating::Rigid => (rigid.clone(), rigid.clone()),
        MaskGating::Flow => (flow.clone(), flow.clone()),
        MaskGating::Intersection => {
            let both = rigid.intersect(flow)?;
            (both.clone(), both)
        }
    })
}

fn chain_rigid(g: &FlowGrad, jac: &[FlowJacobian], depth: &mut [f64], pose: &mut [f64; 6]) {
    for (p, j) in jac.iter().enumerate() {
        let (gu, gv) = (g.u[p], g.v[p]);
        if gu == 0.0 && gv == 0.0 {
            continue;
        }
        depth[p] += gu * j.depth[0] + gv * j.depth[1];
        for (k, acc) in pose.iter_mut().enumerate() {
            *acc += gu * j.params[0][k] + gv * j.params[1][k];
        }
    }
}

/// Full loss report for one set of variables, with masks computed from them.
pub fn total_loss(inputs: &SceneInputs, vars: &SceneVariables, config: &ObjectiveConfig) -> Result<LossReport> {
    Objective::new(inputs, config.clone())?.report(vars)
}
