//! Run configuration and scene description files.
//!
//! Both are TOML documents. The run configuration is a flat list of
//! `key = value` pairs; any key can also be overridden on the command line
//! with `--set key=value`. Unknown keys are rejected.
//!
//! ```toml
//! seed = 3
//! iterations = 2000
//! learning_rate = 0.01
//! lambda_c = 0.2
//! depth_noise = 0.2
//! scene_spec = "plane.toml"
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rigidflow_core::geometry::{Intrinsics, PoseParams, Vec3};
use rigidflow_core::losses::{MaskGating, ObjectiveConfig};
use rigidflow_core::optimizer::Perturbation;
use rigidflow_core::scene::{Mover, Plane, TextureParams};
use rigidflow_core::{CensusParams, FBCheckParams, LossWeights, OptimizerConfig, SceneSpec};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid configuration: {0}")]
    Parse(String),
    #[error("override {0:?} is not of the form key=value")]
    Override(String),
    #[error("referenced file {0} does not exist")]
    MissingFile(PathBuf),
    #[error(transparent)]
    Core(#[from] rigidflow_core::Error),
}

pub type Result<T, E = ConfigError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gating {
    #[default]
    OwnBranch,
    Rigid,
    Flow,
    Intersection,
}

impl From<Gating> for MaskGating {
    fn from(g: Gating) -> Self {
        match g {
            Gating::OwnBranch => MaskGating::OwnBranch,
            Gating::Rigid => MaskGating::Rigid,
            Gating::Flow => MaskGating::Flow,
            Gating::Intersection => MaskGating::Intersection,
        }
    }
}

/// Every tunable of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub pose_lr_scale: f64,
    pub flow_lr_scale: f64,
    pub lambda_s: f64,
    pub lambda_f: f64,
    pub lambda_c: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub census_radius: usize,
    pub census_epsilon: f64,
    pub charbonnier_eps: f64,
    pub scales: usize,
    pub cross_scales: usize,
    pub gating: Gating,
    pub depth_noise: f64,
    pub flow_noise: f64,
    pub pose_noise: f64,
    pub scene_spec: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let opt = OptimizerConfig::default();
        let obj = &opt.objective;
        Self {
            seed: 0,
            iterations: opt.iterations,
            learning_rate: opt.learning_rate,
            beta1: opt.beta1,
            beta2: opt.beta2,
            adam_epsilon: opt.epsilon,
            pose_lr_scale: opt.pose_lr_scale,
            flow_lr_scale: opt.flow_lr_scale,
            lambda_s: obj.weights.lambda_s,
            lambda_f: obj.weights.lambda_f,
            lambda_c: obj.weights.lambda_c,
            alpha1: obj.fb_params.alpha1,
            alpha2: obj.fb_params.alpha2,
            census_radius: obj.census.radius,
            census_epsilon: obj.census.epsilon,
            charbonnier_eps: obj.census.charbonnier_eps,
            scales: obj.scales,
            cross_scales: obj.cross_scales,
            gating: Gating::OwnBranch,
            depth_noise: 0.2,
            flow_noise: 0.0,
            pose_noise: 0.0,
            scene_spec: None,
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })
}

/// Parses the right-hand side of an override as a TOML value, falling back
/// to a bare string.
fn override_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

impl RunConfig {
    /// Parses a configuration document and applies `key=value` overrides.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for item in overrides {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| ConfigError::Override(item.clone()))?;
            table.insert(key.trim().to_string(), override_value(value.trim()));
        }
        let config: Self = table
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        config.optimizer()?;
        Ok(config)
    }

    /// Loads an optional configuration file, applies overrides and checks
    /// that referenced files exist.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => read_text(p)?,
            None => String::new(),
        };
        let config = Self::from_toml(&text, overrides)?;
        if let Some(spec) = &config.scene_spec {
            if !spec.exists() {
                return Err(ConfigError::MissingFile(spec.clone()));
            }
        }
        Ok(config)
    }

    pub fn objective(&self) -> Result<ObjectiveConfig> {
        Ok(ObjectiveConfig {
            weights: LossWeights::new(self.lambda_s, self.lambda_f, self.lambda_c)?,
            census: CensusParams::new(self.census_radius, self.census_epsilon, self.charbonnier_eps)?,
            fb_params: FBCheckParams::new(self.alpha1, self.alpha2)?,
            scales: self.scales,
            cross_scales: self.cross_scales,
            level_weights: None,
            gating: self.gating.into(),
        })
    }

    pub fn optimizer(&self) -> Result<OptimizerConfig> {
        let cfg = OptimizerConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.adam_epsilon,
            iterations: self.iterations,
            pose_lr_scale: self.pose_lr_scale,
            flow_lr_scale: self.flow_lr_scale,
            objective: self.objective()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn perturbation(&self) -> Perturbation {
        Perturbation {
            depth_noise: self.depth_noise,
            flow_noise: self.flow_noise,
            pose_noise: self.pose_noise,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat configuration serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    TexturedPlane,
    FrontoParallel,
    WithMover,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlaneEntry {
    pub normal: [f64; 3],
    pub offset: f64,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoverEntry {
    /// Inclusive pixel rectangle `[x0, y0, x1, y1]` in frame t.
    pub region: [f64; 4],
    pub depth: f64,
    pub motion: [f64; 2],
    #[serde(default)]
    pub seed: Option<u64>,
}

/// Scene description file.
///
/// ```toml
/// preset = "textured_plane"   # or "fronto_parallel", "with_mover"; optional
/// seed = 7
/// width = 64
/// height = 64
/// intrinsics = [64.0, 64.0, 31.5, 31.5]   # fx fy cx cy
/// motion = [0.0, 0.0, 0.0, 0.2, 0.0, 0.0] # axis-angle, translation
/// depth = 4.0                             # fronto_parallel preset only
/// texture_octaves = 3
/// texture_frequency = 0.8                 # cycles per meter
/// texture_persistence = 0.5
///
/// [[plane]]
/// normal = [0.0, 0.0, 1.0]
/// offset = 6.0
///
/// [[mover]]
/// region = [20, 20, 29, 29]
/// depth = 2.5
/// motion = [-16.0, 3.0]
/// ```
///
/// Explicit planes replace those of the preset; movers are added to them.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneFile {
    pub preset: Option<Preset>,
    pub seed: u64,
    pub width: Option<usize>,
    pub height: Option<usize>,
    pub depth: Option<f64>,
    pub intrinsics: Option<[f64; 4]>,
    pub motion: Option<[f64; 6]>,
    pub texture_octaves: Option<u32>,
    pub texture_frequency: Option<f64>,
    pub texture_persistence: Option<f64>,
    pub plane: Vec<PlaneEntry>,
    pub mover: Vec<MoverEntry>,
}

impl SceneFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?)
    }

    pub fn to_spec(&self) -> Result<SceneSpec> {
        let (w, h) = (self.width.unwrap_or(64), self.height.unwrap_or(64));
        let mut spec = match self.preset {
            Some(Preset::TexturedPlane) => SceneSpec::textured_plane(w, h, self.seed),
            Some(Preset::WithMover) => SceneSpec::with_mover(w, h, self.seed),
            Some(Preset::FrontoParallel) | None => {
                SceneSpec::fronto_parallel(w, h, self.depth.unwrap_or(4.0), Vec3::new(0.2, 0.0, 0.0), self.seed)
            }
        };
        if self.preset.is_none() {
            spec.texture = TextureParams::default();
            if self.plane.is_empty() {
                return Err(ConfigError::Parse(
                    "a scene without a preset needs at least one [[plane]]".into(),
                ));
            }
        }
        if let Some([fx, fy, cx, cy]) = self.intrinsics {
            spec.intrinsics = Intrinsics::new(fx, fy, cx, cy)?;
        }
        if let Some(m) = self.motion {
            spec.camera_motion = PoseParams(m).to_pose();
        }
        if let Some(o) = self.texture_octaves {
            spec.texture.octaves = o;
        }
        if let Some(f) = self.texture_frequency {
            spec.texture.base_frequency = f;
        }
        if let Some(p) = self.texture_persistence {
            spec.texture.persistence = p;
        }
        if !self.plane.is_empty() {
            spec.planes = self
                .plane
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let [x, y, z] = p.normal;
                    Plane::new(
                        Vec3::new(x, y, z),
                        p.offset,
                        p.seed.unwrap_or(self.seed.wrapping_add(i as u64)),
                    )
                })
                .collect();
        }
        for (i, m) in self.mover.iter().enumerate() {
            let [x0, y0, x1, y1] = m.region;
            spec.movers.push(Mover {
                region: (x0, y0, x1, y1),
                depth: m.depth,
                motion: (m.motion[0], m.motion[1]),
                seed: m.seed.unwrap_or(self.seed.wrapping_add(100 + i as u64)),
            });
        }
        spec.validate()?;
        Ok(spec)
    }
}
