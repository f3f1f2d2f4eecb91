//! Scene directories: the file layout shared by `render-scene`, `loss` and
//! `refine`.
//!
//! | file            | content                                      |
//! |-----------------|----------------------------------------------|
//! | `image_t.pfm`   | frame t                                      |
//! | `image_t1.pfm`  | frame t+1                                    |
//! | `depth_t.pfm`   | depth of frame t                             |
//! | `depth_t1.pfm`  | depth of frame t+1                           |
//! | `flow_fwd.flo`  | flow t → t+1                                 |
//! | `flow_bwd.flo`  | flow t+1 → t                                 |
//! | `camera.toml`   | `intrinsics = [fx, fy, cx, cy]`, `pose = [ωx, ωy, ωz, tx, ty, tz]` |
//! | `occlusion.pgm` | frame-t pixels hidden in t+1 (ground truth only) |
//! | `movers.pgm`    | frame-t mover pixels (ground truth only)     |
//!
//! A rendered ground-truth directory is therefore also a valid state.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use rigidflow_core::geometry::{Intrinsics, PoseParams};
use rigidflow_core::losses::SceneInputs;
use rigidflow_core::{GroundTruth, SceneState, ValidMask};
use serde::{Deserialize, Serialize};

use crate::formats::{read_depth, read_flo, read_image, read_mask, write_depth, write_flo, write_image, write_mask};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Camera {
    pub intrinsics: [f64; 4],
    pub pose: [f64; 6],
}

impl Camera {
    pub fn new(k: &Intrinsics, pose: &PoseParams) -> Self {
        Self {
            intrinsics: [k.fx, k.fy, k.cx, k.cy],
            pose: pose.0,
        }
    }

    pub fn intrinsics(&self) -> Result<Intrinsics> {
        let [fx, fy, cx, cy] = self.intrinsics;
        Ok(Intrinsics::new(fx, fy, cx, cy)?)
    }
}

pub fn read_camera(dir: &Path) -> Result<Camera> {
    let path = dir.join("camera.toml");
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_camera(dir: &Path, camera: &Camera) -> Result<()> {
    fs::write(dir.join("camera.toml"), toml::to_string(camera)?)?;
    Ok(())
}

fn load<T>(dir: &Path, name: &str, read: impl FnOnce(&Path) -> crate::formats::Result<T>) -> Result<T> {
    let path = dir.join(name);
    read(&path).with_context(|| format!("reading {}", path.display()))
}

pub fn write_ground_truth(dir: &Path, gt: &GroundTruth) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_image(dir.join("image_t.pfm"), &gt.image_t)?;
    write_image(dir.join("image_t1.pfm"), &gt.image_t1)?;
    write_depth(dir.join("depth_t.pfm"), &gt.depth_t)?;
    write_depth(dir.join("depth_t1.pfm"), &gt.depth_t1)?;
    write_flo(dir.join("flow_fwd.flo"), &gt.flow_fwd)?;
    write_flo(dir.join("flow_bwd.flo"), &gt.flow_bwd)?;
    write_mask(dir.join("occlusion.pgm"), &gt.occlusion)?;
    write_mask(dir.join("movers.pgm"), &gt.mover_mask)?;
    write_camera(dir, &Camera::new(&gt.intrinsics, &gt.pose.to_params()))
}

pub fn read_inputs(dir: &Path) -> Result<SceneInputs> {
    Ok(SceneInputs {
        image_t: load(dir, "image_t.pfm", |p| read_image(p))?,
        image_t1: load(dir, "image_t1.pfm", |p| read_image(p))?,
        intrinsics: read_camera(dir)?.intrinsics()?,
    })
}

pub fn read_state(dir: &Path) -> Result<SceneState> {
    let camera = read_camera(dir)?;
    Ok(SceneState::new(
        &load(dir, "depth_t.pfm", |p| read_depth(p))?,
        &load(dir, "depth_t1.pfm", |p| read_depth(p))?,
        PoseParams(camera.pose),
        load(dir, "flow_fwd.flo", |p| read_flo(p))?,
        load(dir, "flow_bwd.flo", |p| read_flo(p))?,
    )?)
}

pub fn write_state(dir: &Path, state: &SceneState, k: &Intrinsics) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_depth(dir.join("depth_t.pfm"), &state.depth_t()?)?;
    write_depth(dir.join("depth_t1.pfm"), &state.depth_t1()?)?;
    write_flo(dir.join("flow_fwd.flo"), &state.flow_fwd)?;
    write_flo(dir.join("flow_bwd.flo"), &state.flow_bwd)?;
    write_camera(dir, &Camera::new(k, &state.pose))
}

/// Frame-t pixels that are neither occluded nor movers, from whichever of the
/// two ground-truth masks exist in `dir`.
pub fn read_static_visible(dir: &Path, width: usize, height: usize) -> Result<ValidMask> {
    let mut mask = ValidMask::full(width, height);
    for name in ["occlusion.pgm", "movers.pgm"] {
        let path = dir.join(name);
        if path.exists() {
            mask = mask.intersect(&load(dir, name, |p| read_mask(p))?.invert())?;
        }
    }
    Ok(mask)
}
