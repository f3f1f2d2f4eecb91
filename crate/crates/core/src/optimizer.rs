//! Direct gradient-based refinement of depth, camera motion and optical flow.
//!
//! Depth is optimized in log space so it stays positive. Validity masks are
//! recomputed at the start of every iteration and held fixed while the
//! gradient is taken. Updates follow Adam with bias correction.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::field::{DepthMap, FlowField};
use crate::geometry::PoseParams;
use crate::losses::{
    LossReport, Objective, ObjectiveConfig, ObjectiveMasks, SceneGradient, SceneInputs, SceneVariables, Terms,
};
use crate::scene::GroundTruth;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Denominator stabilizer of the Adam update.
    pub epsilon: f64,
    pub iterations: usize,
    /// Step-size multiplier for the six pose parameters.
    pub pose_lr_scale: f64,
    /// Step-size multiplier for flow components (pixels).
    pub flow_lr_scale: f64,
    pub objective: ObjectiveConfig,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.99,
            epsilon: 1e-8,
            iterations: 2000,
            pose_lr_scale: 0.05,
            flow_lr_scale: 5.0,
            objective: ObjectiveConfig::default(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter("learning rate must be positive"));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::InvalidParameter("moment decay rates must lie in [0, 1)"));
        }
        if !(self.epsilon > 0.0 && self.pose_lr_scale >= 0.0 && self.flow_lr_scale >= 0.0) {
            return Err(Error::InvalidParameter("invalid step scaling"));
        }
        Ok(())
    }
}

/// The optimized quantities. Depths are stored as natural logarithms.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneState {
    width: usize,
    height: usize,
    pub log_depth_t: Vec<f64>,
    pub log_depth_t1: Vec<f64>,
    pub pose: PoseParams,
    pub flow_fwd: FlowField,
    pub flow_bwd: FlowField,
}

/// Multiplicative / additive noise used to build initial states.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Perturbation {
    /// Depth is multiplied by `U[1 - depth_noise, 1 + depth_noise]` per pixel.
    pub depth_noise: f64,
    /// Each flow component gets `U[-flow_noise, flow_noise]` pixels.
    pub flow_noise: f64,
    /// Each pose parameter gets `U[-pose_noise, pose_noise]`.
    pub pose_noise: f64,
}

impl SceneState {
    pub fn new(
        depth_t: &DepthMap,
        depth_t1: &DepthMap,
        pose: PoseParams,
        flow_fwd: FlowField,
        flow_bwd: FlowField,
    ) -> Result<Self> {
        let dims = depth_t.dims();
        crate::field::ensure_same_dims(dims, depth_t1.dims())?;
        crate::field::ensure_same_dims(dims, flow_fwd.dims())?;
        crate::field::ensure_same_dims(dims, flow_bwd.dims())?;
        Ok(Self {
            width: dims.0,
            height: dims.1,
            log_depth_t: depth_t.values().iter().map(|d| libm::log(*d)).collect(),
            log_depth_t1: depth_t1.values().iter().map(|d| libm::log(*d)).collect(),
            pose,
            flow_fwd,
            flow_bwd,
        })
    }

    pub fn from_ground_truth(gt: &GroundTruth) -> Self {
        Self::new(
            &gt.depth_t,
            &gt.depth_t1,
            gt.pose.to_params(),
            gt.flow_fwd.clone(),
            gt.flow_bwd.clone(),
        )
        .expect("ground truth fields share dimensions")
    }

    /// A copy with seeded noise added.
    pub fn perturbed(&self, noise: &Perturbation, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = self.clone();
        let factor = |rng: &mut ChaCha8Rng| {
            if noise.depth_noise > 0.0 {
                libm::log(rng.gen_range(1.0 - noise.depth_noise..=1.0 + noise.depth_noise))
            } else {
                0.0
            }
        };
        for v in state.log_depth_t.iter_mut() {
            *v += factor(&mut rng);
        }
        for v in state.log_depth_t1.iter_mut() {
            *v += factor(&mut rng);
        }
        let jitter = |rng: &mut ChaCha8Rng, a: f64| if a > 0.0 { rng.gen_range(-a..=a) } else { 0.0 };
        for flow in [&mut state.flow_fwd, &mut state.flow_bwd] {
            for v in flow.u_mut().iter_mut() {
                *v += jitter(&mut rng, noise.flow_noise);
            }
            for v in flow.v_mut().iter_mut() {
                *v += jitter(&mut rng, noise.flow_noise);
            }
        }
        for p in state.pose.0.iter_mut() {
            *p += jitter(&mut rng, noise.pose_noise);
        }
        state
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Fails when a log-depth is non-finite or overflows.
    pub fn depth_t(&self) -> Result<DepthMap> {
        exp_depth(self.width, self.height, &self.log_depth_t)
    }

    pub fn depth_t1(&self) -> Result<DepthMap> {
        exp_depth(self.width, self.height, &self.log_depth_t1)
    }

    pub fn variables(&self) -> Result<SceneVariables> {
        Ok(SceneVariables {
            depth_t: self.depth_t()?,
            depth_t1: self.depth_t1()?,
            pose: self.pose,
            flow_fwd: self.flow_fwd.clone(),
            flow_bwd: self.flow_bwd.clone(),
        })
    }

    /// Number of scalar parameters.
    pub fn len(&self) -> usize {
        4 * self.width * self.height + 2 * self.width * self.height + 6
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Parameter groups in a fixed order: log-depth t, log-depth t+1, pose,
    /// forward u, forward v, backward u, backward v.
    fn groups_mut(&mut self) -> [&mut [f64]; 7] {
        let (fu, fv) = self.flow_fwd.uv_mut();
        let (bu, bv) = self.flow_bwd.uv_mut();
        [
            &mut self.log_depth_t,
            &mut self.log_depth_t1,
            &mut self.pose.0,
            fu,
            fv,
            bu,
            bv,
        ]
    }

    /// Mutable access to parameter `index` in the [`Self::groups_mut`] order.
    pub fn parameter_mut(&mut self, mut index: usize) -> &mut f64 {
        for group in self.groups_mut() {
            if index < group.len() {
                return &mut group[index];
            }
            index -= group.len();
        }
        panic!("parameter index out of range");
    }
}

fn exp_depth(w: usize, h: usize, log_depth: &[f64]) -> Result<DepthMap> {
    DepthMap::new(w, h, log_depth.iter().map(|v| libm::exp(*v)).collect())
}

impl SceneGradient {
    /// Gradient entry `index` in the [`SceneState`] parameter order.
    pub fn component(&self, mut index: usize) -> f64 {
        let groups: [&[f64]; 7] = [
            &self.depth_t,
            &self.depth_t1,
            &self.pose,
            self.flow_fwd.u(),
            self.flow_fwd.v(),
            self.flow_bwd.u(),
            self.flow_bwd.v(),
        ];
        for g in groups {
            if index < g.len() {
                return g[index];
            }
            index -= g.len();
        }
        panic!("gradient index out of range");
    }

    fn groups(&self) -> [&[f64]; 7] {
        [
            &self.depth_t,
            &self.depth_t1,
            &self.pose,
            self.flow_fwd.u(),
            self.flow_fwd.v(),
            self.flow_bwd.u(),
            self.flow_bwd.v(),
        ]
    }
}

/// Adam first and second moments.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub steps: u64,
}

impl AdamMoments {
    pub fn zeros(len: usize) -> Self {
        Self {
            first: vec![0.0; len],
            second: vec![0.0; len],
            steps: 0,
        }
    }
}

/// One loss evaluation with the gradient taken with respect to the state
/// parameters (log-depth, pose parameters, flow components).
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: LossReport,
    pub gradient: SceneGradient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineOutput {
    pub state: SceneState,
    /// Loss before each update, one entry per iteration.
    pub trace: Vec<LossReport>,
}

/// Objective plus optimizer settings for one image pair.
#[derive(Debug, Clone)]
pub struct Harness {
    objective: Objective,
    config: OptimizerConfig,
}

impl Harness {
    pub fn new(inputs: &SceneInputs, config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            objective: Objective::new(inputs, config.objective.clone())?,
            config,
        })
    }

    pub fn objective(&self) -> &Objective {
        &self.objective
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    /// State variables, with an unusable depth reported as a non-finite loss.
    fn variables(state: &SceneState) -> Result<SceneVariables> {
        state.variables().map_err(|e| match e {
            Error::InvalidDepth { .. } => Error::NonFiniteLoss { term: "depth" },
            other => other,
        })
    }

    pub fn masks(&self, state: &SceneState) -> Result<ObjectiveMasks> {
        self.objective.masks(&Self::variables(state)?)
    }

    /// Loss and state gradient under fresh masks.
    pub fn evaluate(&self, state: &SceneState) -> Result<Evaluation> {
        let masks = self.masks(state)?;
        self.evaluate_with_masks(state, &masks, Terms::ALL)
    }

    /// Loss and state gradient of the selected terms under fixed masks.
    pub fn evaluate_with_masks(&self, state: &SceneState, masks: &ObjectiveMasks, terms: Terms) -> Result<Evaluation> {
        let vars = Self::variables(state)?;
        let (report, grad) = self.objective.evaluate(&vars, masks, terms, true)?;
        if let Some(term) = report.non_finite_term() {
            return Err(Error::NonFiniteLoss { term });
        }
        let mut gradient = grad.expect("gradient requested");
        // ∂L/∂log d = d ∂L/∂d
        for (g, d) in gradient.depth_t.iter_mut().zip(vars.depth_t.values()) {
            *g *= d;
        }
        for (g, d) in gradient.depth_t1.iter_mut().zip(vars.depth_t1.values()) {
            *g *= d;
        }
        Ok(Evaluation { report, gradient })
    }

    /// Loss value only (selected terms, fixed masks).
    pub fn loss_with_masks(&self, state: &SceneState, masks: &ObjectiveMasks, terms: Terms) -> Result<LossReport> {
        Ok(self
            .objective
            .evaluate(&Self::variables(state)?, masks, terms, false)?
            .0)
    }

    pub fn step(&self, state: &mut SceneState, gradient: &SceneGradient, moments: &mut AdamMoments) {
        step(state, gradient, moments, &self.config);
    }

    pub fn refine(&self, init: SceneState) -> Result<RefineOutput> {
        let mut state = init;
        let mut moments = AdamMoments::zeros(state.len());
        let mut trace = Vec::with_capacity(self.config.iterations);
        for iteration in 0..self.config.iterations {
            let eval = match self.evaluate(&state) {
                Ok(e) => e,
                Err(Error::NonFiniteLoss { term }) => return Err(Error::Diverged { iteration, term, trace }),
                Err(e) => return Err(e),
            };
            trace.push(eval.report);
            self.step(&mut state, &eval.gradient, &mut moments);
        }
        Ok(RefineOutput { state, trace })
    }
}

/// Adam update with bias correction, in place.
pub fn step(state: &mut SceneState, gradient: &SceneGradient, moments: &mut AdamMoments, cfg: &OptimizerConfig) {
    moments.steps += 1;
    let t = moments.steps as f64;
    let c1 = 1.0 - libm::pow(cfg.beta1, t);
    let c2 = 1.0 - libm::pow(cfg.beta2, t);
    let scales = [
        1.0,
        1.0,
        cfg.pose_lr_scale,
        cfg.flow_lr_scale,
        cfg.flow_lr_scale,
        cfg.flow_lr_scale,
        cfg.flow_lr_scale,
    ];
    let mut offset = 0;
    for ((params, grads), scale) in state.groups_mut().into_iter().zip(gradient.groups()).zip(scales) {
        let lr = cfg.learning_rate * scale;
        for (j, (p, &g)) in params.iter_mut().zip(grads).enumerate() {
            let k = offset + j;
            let m = cfg.beta1 * moments.first[k] + (1.0 - cfg.beta1) * g;
            let v = cfg.beta2 * moments.second[k] + (1.0 - cfg.beta2) * g * g;
            moments.first[k] = m;
            moments.second[k] = v;
            *p -= lr * (m / c1) / (libm::sqrt(v / c2) + cfg.epsilon);
        }
        offset += params.len();
    }
}

pub fn evaluate(state: &SceneState, inputs: &SceneInputs, cfg: &OptimizerConfig) -> Result<Evaluation> {
    Harness::new(inputs, cfg.clone())?.evaluate(state)
}

pub fn refine(inputs: &SceneInputs, init: SceneState, cfg: &OptimizerConfig) -> Result<RefineOutput> {
    Harness::new(inputs, cfg.clone())?.refine(init)
}
