//! Procedural scenes with exact ground truth.
//!
//! Geometry is a set of textured planes `n · X = offset`, expressed in the
//! frame-t camera coordinates, optionally with rectangular "movers": cards at
//! a fixed depth whose image motion is the rigid motion plus an independent
//! 2D displacement. Rendering is analytic ray-plane intersection, and textures
//! are value noise anchored on the surfaces, so both frames observe the same
//! signal.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::field::{DepthMap, FlowField, ImageBuffer, ValidMask};
use crate::geometry::{Intrinsics, PoseParams, PoseSE3, Vec3};
use crate::par;

/// Multi-octave value noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TextureParams {
    /// Number of octaves; 0 gives a flat 0.5 texture.
    pub octaves: u32,
    /// Frequency of the coarsest octave, in cycles per meter.
    pub base_frequency: f64,
    /// Amplitude ratio between consecutive octaves.
    pub persistence: f64,
}

impl Default for TextureParams {
    fn default() -> Self {
        Self {
            octaves: 3,
            base_frequency: 0.8,
            persistence: 0.5,
        }
    }
}

impl TextureParams {
    pub fn flat() -> Self {
        Self {
            octaves: 0,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    /// Unit normal pointing away from the camera.
    pub normal: Vec3,
    pub offset: f64,
    pub seed: u64,
}

impl Plane {
    /// Normalizes `normal` and rescales `offset` accordingly.
    pub fn new(normal: Vec3, offset: f64, seed: u64) -> Self {
        let n = normal.norm();
        Self {
            normal: normal * (1.0 / n),
            offset: offset / n,
            seed,
        }
    }

    /// Plane at constant depth.
    pub fn fronto_parallel(depth: f64, seed: u64) -> Self {
        Self::new(Vec3::new(0.0, 0.0, 1.0), depth, seed)
    }

    /// Orthonormal in-plane basis used for texture coordinates.
    fn basis(&self) -> (Vec3, Vec3) {
        let n = self.normal;
        let helper = if libm::fabs(n.x()) < 0.9 {
            Vec3::new(1.0, 0.0, 0.0)
        } else {
            Vec3::new(0.0, 1.0, 0.0)
        };
        let e1 = helper.cross(&n).normalized();
        (e1, n.cross(&e1))
    }
}

/// A card at constant frame-t depth covering a pixel rectangle, with an extra
/// image-space displacement on top of its rigid motion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mover {
    /// Inclusive frame-t pixel rectangle `(x0, y0, x1, y1)`.
    pub region: (f64, f64, f64, f64),
    pub depth: f64,
    /// Independent displacement in pixels.
    pub motion: (f64, f64),
    pub seed: u64,
}

impl Mover {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (x0, y0, x1, y1) = self.region;
        x >= x0 && x <= x1 && y >= y0 && y <= y1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub intrinsics: Intrinsics,
    pub planes: Vec<Plane>,
    /// Camera motion from frame t to frame t+1.
    pub camera_motion: PoseSE3,
    pub movers: Vec<Mover>,
    pub texture: TextureParams,
}

/// Everything [`render`] produces.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub image_t: ImageBuffer,
    pub image_t1: ImageBuffer,
    pub depth_t: DepthMap,
    pub depth_t1: DepthMap,
    pub pose: PoseSE3,
    pub intrinsics: Intrinsics,
    pub flow_fwd: FlowField,
    pub flow_bwd: FlowField,
    /// `true` where a frame-t pixel is hidden or out of view in frame t+1.
    pub occlusion: ValidMask,
    /// `true` where a frame-t+1 pixel is hidden or out of view in frame t.
    pub occlusion_bwd: ValidMask,
    /// `true` on frame-t pixels that belong to a mover.
    pub mover_mask: ValidMask,
    /// `true` on frame-t+1 pixels that belong to a mover.
    pub mover_mask_t1: ValidMask,
}

impl GroundTruth {
    /// Frame-t pixels that are neither occluded nor on a mover.
    pub fn static_visible(&self) -> ValidMask {
        let bits = self
            .occlusion
            .bits()
            .iter()
            .zip(self.mover_mask.bits())
            .map(|(o, m)| !o && !m)
            .collect();
        ValidMask::new(self.occlusion.width(), self.occlusion.height(), bits).expect("same size")
    }
}

impl SceneSpec {
    /// Square-pixel camera with focal length equal to the width and the
    /// principal point at the image center.
    pub fn default_intrinsics(width: usize, height: usize) -> Intrinsics {
        Intrinsics {
            fx: width as f64,
            fy: width as f64,
            cx: (width as f64 - 1.0) * 0.5,
            cy: (height as f64 - 1.0) * 0.5,
        }
    }

    /// Textured plane facing the camera, tilted slightly, at about 4 m; the
    /// camera moves mostly sideways with a small rotation. Texture features
    /// are sized at roughly 20, 10 and 5 pixels whatever the resolution.
    pub fn textured_plane(width: usize, height: usize, seed: u64) -> Self {
        let intrinsics = Self::default_intrinsics(width, height);
        let normal = Vec3::new(0.2, 0.1, 1.0);
        let plane = Plane::new(normal, 4.0 * normal.z(), seed);
        Self {
            width,
            height,
            intrinsics,
            planes: alloc::vec![plane],
            camera_motion: PoseParams([0.004, -0.01, 0.003, 0.2, 0.04, 0.02]).to_pose(),
            movers: Vec::new(),
            texture: TextureParams {
                octaves: 3,
                base_frequency: intrinsics.fx / (20.0 * 4.0),
                persistence: 0.5,
            },
        }
    }

    /// Fronto-parallel plane at `depth` seen by a camera translating by `translation`.
    pub fn fronto_parallel(width: usize, height: usize, depth: f64, translation: Vec3, seed: u64) -> Self {
        let intrinsics = Self::default_intrinsics(width, height);
        Self {
            width,
            height,
            intrinsics,
            planes: alloc::vec![Plane::fronto_parallel(depth, seed)],
            camera_motion: PoseSE3::from_translation(translation),
            movers: Vec::new(),
            texture: TextureParams {
                octaves: 3,
                base_frequency: intrinsics.fx / (20.0 * depth),
                persistence: 0.5,
            },
        }
    }

    /// Background plane at 8 m with a 10×10 card at 2.5 m moving against the
    /// camera-induced flow.
    pub fn with_mover(width: usize, height: usize, seed: u64) -> Self {
        let mut spec = Self::fronto_parallel(width, height, 8.0, Vec3::new(0.25, 0.0, 0.0), seed);
        let (cx, cy) = (width as f64 * 0.5, height as f64 * 0.5);
        spec.movers.push(Mover {
            region: (cx - 8.0, cy - 5.0, cx + 1.0, cy + 4.0),
            depth: 2.5,
            motion: (-16.0, 3.0),
            seed: seed.wrapping_add(1),
        });
        spec
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 2 || self.height < 2 {
            return Err(Error::InvalidParameter("scene must be at least 2x2"));
        }
        if self.planes.is_empty() {
            return Err(Error::InvalidParameter("scene needs at least one plane"));
        }
        if !self.camera_motion.is_valid(1e-9) {
            return Err(Error::InvalidParameter("camera motion is not a rigid transform"));
        }
        let k = &self.intrinsics;
        let (w, h) = ((self.width - 1) as f64, (self.height - 1) as f64);
        let corners = [(0.0, 0.0), (w, 0.0), (0.0, h), (w, h)];
        for (index, plane) in self.planes.iter().enumerate() {
            let (n1, off1) = plane_in_second_frame(plane.normal, plane.offset, &self.camera_motion);
            // n · K⁻¹p is affine in p, so checking the corners covers the image.
            let ok = plane.offset > 0.0
                && off1 > 0.0
                && corners
                    .iter()
                    .all(|&(x, y)| plane.normal.dot(&k.unproject(x, y)) > 0.0 && n1.dot(&k.unproject(x, y)) > 0.0);
            if !ok {
                return Err(Error::PlaneBehindCamera { index });
            }
        }
        for m in &self.movers {
            if !(m.depth > 0.0 && m.depth.is_finite()) {
                return Err(Error::InvalidParameter("mover depth must be positive"));
            }
        }
        Ok(())
    }
}

fn plane_in_second_frame(normal: Vec3, offset: f64, motion: &PoseSE3) -> (Vec3, f64) {
    // X₁ = R X + t and n · X = o  ⇒  (R n) · X₁ = o + (R n) · t
    let n1 = motion.rotation * normal;
    (n1, offset + n1.dot(&motion.translation))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Surface {
    Plane(usize),
    Mover(usize),
}

#[derive(Debug, Clone, Copy)]
struct Hit {
    surface: Surface,
    depth: f64,
    /// Surface point in frame-t camera coordinates.
    point_t: Vec3,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn lattice_value(ix: i64, iy: i64, seed: u64) -> f64 {
    let h = splitmix(seed ^ splitmix((ix as u64).wrapping_mul(0x1656_67B1_9E37_79F9) ^ (iy as u64)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

fn value_noise(x: f64, y: f64, seed: u64) -> f64 {
    let (fx, fy) = (libm::floor(x), libm::floor(y));
    let (ix, iy) = (fx as i64, fy as i64);
    let (sx, sy) = (fade(x - fx), fade(y - fy));
    let a = lattice_value(ix, iy, seed);
    let b = lattice_value(ix + 1, iy, seed);
    let c = lattice_value(ix, iy + 1, seed);
    let d = lattice_value(ix + 1, iy + 1, seed);
    let top = a + (b - a) * sx;
    let bottom = c + (d - c) * sx;
    top + (bottom - top) * sy
}

/// Texture value in `[0, 1]` at surface coordinates `(a, b)` in meters.
pub fn texture_value(params: &TextureParams, seed: u64, a: f64, b: f64) -> f64 {
    if params.octaves == 0 {
        return 0.5;
    }
    let mut sum = 0.0;
    let mut norm = 0.0;
    let mut amp = 1.0;
    let mut freq = params.base_frequency;
    for o in 0..params.octaves {
        sum += amp * value_noise(a * freq, b * freq, splitmix(seed.wrapping_add(o as u64)));
        norm += amp;
        amp *= params.persistence;
        freq *= 2.0;
    }
    sum / norm
}

/// Shade, depth, flow, occluded, on a mover.
type PixelSample = (f64, f64, (f64, f64), bool, bool);

struct Renderer<'a> {
    spec: &'a SceneSpec,
    bases: Vec<(Vec3, Vec3)>,
    planes_t1: Vec<(Vec3, f64)>,
    movers_t1: Vec<(Vec3, f64)>,
    inverse: PoseSE3,
}

impl<'a> Renderer<'a> {
    fn new(spec: &'a SceneSpec) -> Self {
        let motion = &spec.camera_motion;
        Self {
            spec,
            bases: spec.planes.iter().map(Plane::basis).collect(),
            planes_t1: spec
                .planes
                .iter()
                .map(|p| plane_in_second_frame(p.normal, p.offset, motion))
                .collect(),
            movers_t1: spec
                .movers
                .iter()
                .map(|m| plane_in_second_frame(Vec3::new(0.0, 0.0, 1.0), m.depth, motion))
                .collect(),
            inverse: motion.inverse(),
        }
    }

    fn k(&self) -> &Intrinsics {
        &self.spec.intrinsics
    }

    fn project(&self, p: Vec3) -> (f64, f64) {
        let k = self.k();
        (k.fx * p.x() / p.z() + k.cx, k.fy * p.y() / p.z() + k.cy)
    }

    fn nearest_plane(&self, ray: Vec3, planes: impl Iterator<Item = (Vec3, f64)>) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, (n, off)) in planes.enumerate() {
            let denom = n.dot(&ray);
            if denom <= 0.0 {
                continue;
            }
            let z = off / denom;
            if z > 0.0 && best.is_none_or(|(_, b)| z < b) {
                best = Some((i, z));
            }
        }
        best
    }

    fn hit_t(&self, x: f64, y: f64) -> Option<Hit> {
        let ray = self.k().unproject(x, y);
        let planes = self.spec.planes.iter().map(|p| (p.normal, p.offset));
        let mut hit = self.nearest_plane(ray, planes).map(|(i, z)| Hit {
            surface: Surface::Plane(i),
            depth: z,
            point_t: ray * z,
        });
        for (i, m) in self.spec.movers.iter().enumerate() {
            if m.contains(x, y) && hit.is_none_or(|h| m.depth < h.depth) {
                hit = Some(Hit {
                    surface: Surface::Mover(i),
                    depth: m.depth,
                    point_t: ray * m.depth,
                });
            }
        }
        hit
    }

    fn hit_t1(&self, x: f64, y: f64) -> Option<Hit> {
        let ray = self.k().unproject(x, y);
        let mut hit = self
            .nearest_plane(ray, self.planes_t1.iter().copied())
            .map(|(i, z)| Hit {
                surface: Surface::Plane(i),
                depth: z,
                point_t: self.inverse.transform(ray * z),
            });
        for (i, m) in self.spec.movers.iter().enumerate() {
            // The card shows at q what rigid motion alone would put at q - motion.
            let (n1, off1) = self.movers_t1[i];
            let shifted = self.k().unproject(x - m.motion.0, y - m.motion.1);
            let denom = n1.dot(&shifted);
            if denom <= 0.0 {
                continue;
            }
            let z = off1 / denom;
            if z <= 0.0 || hit.is_some_and(|h| z >= h.depth) {
                continue;
            }
            let point_t = self.inverse.transform(shifted * z);
            let (sx, sy) = self.project(point_t);
            if m.contains(sx, sy) {
                hit = Some(Hit {
                    surface: Surface::Mover(i),
                    depth: z,
                    point_t,
                });
            }
        }
        hit
    }

    fn shade(&self, hit: &Hit) -> f64 {
        let tex = &self.spec.texture;
        match hit.surface {
            Surface::Plane(i) => {
                let (e1, e2) = self.bases[i];
                texture_value(
                    tex,
                    self.spec.planes[i].seed,
                    hit.point_t.dot(&e1),
                    hit.point_t.dot(&e2),
                )
            }
            Surface::Mover(i) => texture_value(tex, self.spec.movers[i].seed, hit.point_t.x(), hit.point_t.y()),
        }
    }

    /// Where the surface seen at frame-t pixel `(x, y)` appears in frame t+1,
    /// with its depth there.
    fn forward(&self, hit: &Hit) -> (f64, f64, f64) {
        let p1 = self.spec.camera_motion.transform(hit.point_t);
        let (mut qx, mut qy) = self.project(p1);
        if let Surface::Mover(i) = hit.surface {
            qx += self.spec.movers[i].motion.0;
            qy += self.spec.movers[i].motion.1;
        }
        (qx, qy, p1.z())
    }

    fn in_view(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x <= (self.spec.width - 1) as f64 && y <= (self.spec.height - 1) as f64
    }
}

fn same_surface(a: &Hit, surface: Surface, depth: f64) -> bool {
    a.surface == surface && libm::fabs(a.depth - depth) <= 1e-6 * depth
}

/// Renders both frames and every ground-truth quantity.
pub fn render(spec: &SceneSpec) -> Result<GroundTruth> {
    spec.validate()?;
    let r = Renderer::new(spec);
    let (w, h) = (spec.width, spec.height);

    // Frame t: value, depth, flow, occluded, mover.
    let frame_t = par::map_indices(w * h, |i| {
        let (x, y) = ((i % w) as f64, (i / w) as f64);
        let hit = r.hit_t(x, y).expect("validated planes cover the image");
        let (qx, qy, z1) = r.forward(&hit);
        let visible =
            z1 > 0.0 && r.in_view(qx, qy) && r.hit_t1(qx, qy).is_some_and(|h1| same_surface(&h1, hit.surface, z1));
        (
            r.shade(&hit),
            hit.depth,
            (qx - x, qy - y),
            !visible,
            matches!(hit.surface, Surface::Mover(_)),
        )
    });
    // Frame t+1: the backward correspondence goes through the frame-t point.
    let frame_t1 = par::map_indices(w * h, |i| {
        let (x, y) = ((i % w) as f64, (i / w) as f64);
        let hit = r.hit_t1(x, y).expect("validated planes cover the image");
        let (px, py) = r.project(hit.point_t);
        let z0 = hit.point_t.z();
        let visible =
            z0 > 0.0 && r.in_view(px, py) && r.hit_t(px, py).is_some_and(|h0| same_surface(&h0, hit.surface, z0));
        (
            r.shade(&hit),
            hit.depth,
            (px - x, py - y),
            !visible,
            matches!(hit.surface, Surface::Mover(_)),
        )
    });

    let unpack = |rows: Vec<PixelSample>| -> Result<_> {
        let mut img = Vec::with_capacity(w * h);
        let mut depth = Vec::with_capacity(w * h);
        let (mut u, mut v) = (Vec::with_capacity(w * h), Vec::with_capacity(w * h));
        let (mut occ, mut mov) = (Vec::with_capacity(w * h), Vec::with_capacity(w * h));
        for (val, d, (fu, fv), o, m) in rows {
            img.push(val);
            depth.push(d);
            u.push(fu);
            v.push(fv);
            occ.push(o);
            mov.push(m);
        }
        Ok((
            ImageBuffer::new(w, h, 1, img)?,
            DepthMap::new(w, h, depth)?,
            FlowField::new(w, h, u, v)?,
            ValidMask::new(w, h, occ)?,
            ValidMask::new(w, h, mov)?,
        ))
    };
    let (image_t, depth_t, flow_fwd, occlusion, mover_mask) = unpack(frame_t)?;
    let (image_t1, depth_t1, flow_bwd, occlusion_bwd, mover_mask_t1) = unpack(frame_t1)?;
    Ok(GroundTruth {
        image_t,
        image_t1,
        depth_t,
        depth_t1,
        pose: spec.camera_motion,
        intrinsics: spec.intrinsics,
        flow_fwd,
        flow_bwd,
        occlusion,
        occlusion_bwd,
        mover_mask,
        mover_mask_t1,
    })
}
