//! Optical-flow color coding on the Middlebury color wheel.
//!
//! Hue encodes direction and saturation encodes magnitude relative to a
//! normalizer; zero motion is white.

use std::path::Path;

use rigidflow_core::FlowField;

use crate::formats::{encode_ppm, Result};

const SEGMENTS: [(usize, [u8; 3], [u8; 3]); 6] = [
    (15, [255, 0, 0], [255, 255, 0]),
    (6, [255, 255, 0], [0, 255, 0]),
    (4, [0, 255, 0], [0, 255, 255]),
    (11, [0, 255, 255], [0, 0, 255]),
    (13, [0, 0, 255], [255, 0, 255]),
    (6, [255, 0, 255], [255, 0, 0]),
];

/// The 55 wheel colors as RGB in `[0, 1]`.
pub fn color_wheel() -> Vec<[f64; 3]> {
    let mut wheel = Vec::with_capacity(55);
    for (n, from, to) in SEGMENTS {
        for i in 0..n {
            let t = i as f64 / n as f64;
            wheel.push(core::array::from_fn(|c| {
                (from[c] as f64 + t * (to[c] as f64 - from[c] as f64)) / 255.0
            }));
        }
    }
    wheel
}

/// Color of a flow vector already divided by the normalizer. Vectors longer
/// than one are drawn darker.
pub fn flow_color(wheel: &[[f64; 3]], u: f64, v: f64) -> [u8; 3] {
    let n = wheel.len();
    let radius = u.hypot(v);
    let angle = (-v).atan2(-u) / std::f64::consts::PI;
    let position = (angle + 1.0) * 0.5 * (n - 1) as f64;
    let k0 = position.floor() as usize % n;
    let k1 = (k0 + 1) % n;
    let f = position - position.floor();
    core::array::from_fn(|c| {
        let base = (1.0 - f) * wheel[k0][c] + f * wheel[k1][c];
        let shaded = if radius <= 1.0 {
            1.0 - radius * (1.0 - base)
        } else {
            base * 0.75
        };
        (255.0 * shaded).round().clamp(0.0, 255.0) as u8
    })
}

/// RGB pixels for the whole field. `max_magnitude` defaults to the largest
/// vector length in the field.
pub fn render_flow(flow: &FlowField, max_magnitude: Option<f64>) -> Vec<[u8; 3]> {
    let wheel = color_wheel();
    let max = max_magnitude.unwrap_or_else(|| {
        flow.u()
            .iter()
            .zip(flow.v())
            .map(|(u, v)| u.hypot(*v))
            .fold(0.0, f64::max)
    });
    let scale = if max > 0.0 { 1.0 / max } else { 0.0 };
    flow.u()
        .iter()
        .zip(flow.v())
        .map(|(u, v)| flow_color(&wheel, u * scale, v * scale))
        .collect()
}

pub fn write_flow_visualization(path: impl AsRef<Path>, flow: &FlowField, max_magnitude: Option<f64>) -> Result<()> {
    let (w, h) = flow.dims();
    Ok(std::fs::write(
        path,
        encode_ppm(w, h, &render_flow(flow, max_magnitude)),
    )?)
}
