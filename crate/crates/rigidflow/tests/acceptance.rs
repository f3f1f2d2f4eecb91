//! Acceptance run over the ten primary criteria.
//!
//! Prints one `PASS`/`FAIL` line per criterion and exits nonzero if any
//! criterion fails. Timed criteria run inside a one-thread pool.

#![allow(clippy::needless_range_loop)]

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rigidflow::formats::{read_depth, read_flo, read_image, write_depth, write_flo, write_image};
use rigidflow_core::geometry::{project_pixel, rigid_flow, PoseParams, PoseSE3, Vec3};
use rigidflow_core::losses::{LossReport, Objective, ObjectiveConfig, SceneInputs, SceneVariables, Terms};
use rigidflow_core::masks::fb_check;
use rigidflow_core::metrics::{depth_metrics, epe, f1, DepthEvalOptions};
use rigidflow_core::optimizer::{Harness, Perturbation};
use rigidflow_core::sampling::BilinearTap;
use rigidflow_core::scene::render;
use rigidflow_core::{
    DepthMap, FBCheckParams, FlowField, GroundTruth, ImageBuffer, Intrinsics, OptimizerConfig, SceneSpec, SceneState,
    ValidMask,
};

const FIXTURE_SEED: u64 = 7;

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: String) -> Self {
        Self { passed, detail }
    }
}

fn single_threaded<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(f)
}

fn fixture() -> GroundTruth {
    render(&SceneSpec::textured_plane(64, 64, FIXTURE_SEED)).unwrap()
}

fn inputs_of(gt: &GroundTruth) -> SceneInputs {
    SceneInputs {
        image_t: gt.image_t.clone(),
        image_t1: gt.image_t1.clone(),
        intrinsics: gt.intrinsics,
    }
}

fn geometry_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let depth = DepthMap::new(256, 256, (0..256 * 256).map(|_| rng.gen_range(0.5..80.0)).collect()).unwrap();
    let k = Intrinsics::new(240.0, 250.0, 127.5, 120.0).unwrap();
    let start = Instant::now();
    let (flow, mask) = single_threaded(|| rigid_flow(&depth, &k, &PoseSE3::IDENTITY));
    let elapsed = start.elapsed();
    let max = flow.u().iter().chain(flow.v()).fold(0.0f64, |m, v| m.max(v.abs()));
    Outcome::new(
        max <= 1e-12 && mask.count() == 256 * 256 && elapsed < Duration::from_secs(1),
        format!("max |flow| = {max:e}, {:.1} ms at 256x256", elapsed.as_secs_f64() * 1e3),
    )
}

fn closed_form_flow() -> Outcome {
    let settings = [(2.0, 0.1), (4.0, 0.2), (7.5, -0.35), (10.0, 1.0), (25.0, 0.05)];
    let mut worst = 0.0f64;
    for (d, tx) in settings {
        let spec = SceneSpec::fronto_parallel(48, 40, d, Vec3::new(tx, 0.0, 0.0), 3);
        let fx = spec.intrinsics.fx;
        let expected = fx * tx / d;
        let gt = render(&spec).unwrap();
        let (flow, _) = rigid_flow(&DepthMap::constant(48, 40, d), &spec.intrinsics, &spec.camera_motion);
        for field in [&flow, &gt.flow_fwd] {
            for (u, v) in field.u().iter().zip(field.v()) {
                worst = worst.max((u - expected).abs()).max(v.abs());
            }
        }
    }
    Outcome::new(worst <= 1e-6, format!("max deviation {worst:e} over 5 settings"))
}

#[derive(Clone, Copy)]
enum Class {
    Depth,
    Pose,
    Flow,
}

impl Class {
    fn name(self) -> &'static str {
        match self {
            Class::Depth => "depth",
            Class::Pose => "pose",
            Class::Flow => "flow",
        }
    }
}

fn nudged(vars: &SceneVariables, class: Class, index: usize, delta: f64) -> SceneVariables {
    let mut out = vars.clone();
    let (w, h) = vars.depth_t.dims();
    let n = w * h;
    match class {
        Class::Depth => {
            let target = if index < n { &mut out.depth_t } else { &mut out.depth_t1 };
            let mut values = target.values().to_vec();
            values[index % n] += delta;
            *target = DepthMap::new(w, h, values).unwrap();
        }
        Class::Pose => out.pose.0[index] += delta,
        Class::Flow => {
            let target = if index < 2 * n {
                &mut out.flow_fwd
            } else {
                &mut out.flow_bwd
            };
            let (mut u, mut v) = (target.u().to_vec(), target.v().to_vec());
            let k = index % (2 * n);
            if k < n {
                u[k] += delta;
            } else {
                v[k - n] += delta;
            }
            *target = FlowField::new(w, h, u, v).unwrap();
        }
    }
    out
}

fn inside_cell(x: f64, size: usize) -> bool {
    let f = x - x.floor();
    x > 0.0 && x < (size - 1) as f64 && (0.2..=0.8).contains(&f)
}

/// Sample positions either well inside a bilinear cell or clearly outside
/// the image, so a step of ±h never crosses a grid line or the border.
fn clear_of_grid(x: f64, y: f64, w: usize, h: usize) -> bool {
    let outside = |v: f64, n: usize| v < -0.2 || v > (n - 1) as f64 + 0.2;
    (inside_cell(x, w) && inside_cell(y, h)) || outside(x, w) || outside(y, h)
}

fn inside(x: f64, y: f64, w: usize, h: usize) -> bool {
    inside_cell(x, w) && inside_cell(y, h)
}

fn sample(values: &[f64], w: usize, h: usize, x: f64, y: f64) -> f64 {
    BilinearTap::new(w, h, x, y).sample(values)
}

/// A random state around ground truth on which every loss is smooth within
/// ±h of each coordinate. Bilinear samples stay 0.2 px away from grid lines,
/// and the arguments of every absolute value and Charbonnier penalty stay
/// away from zero. Offending pixels are redrawn until none remain.
fn smooth_configuration(gt: &GroundTruth, seed: u64) -> SceneVariables {
    let (w, h) = gt.depth_t.dims();
    let n = w * h;
    let k = gt.intrinsics;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pose = PoseParams(gt.pose.to_params().0.map(|p| p + rng.gen_range(-0.01..0.01)));
    let poses = [pose.to_pose(), pose.to_pose().inverse()];
    let base_depth = [gt.depth_t.values(), gt.depth_t1.values()];
    let base_flow = [&gt.flow_fwd, &gt.flow_bwd];
    let mut depth: [Vec<f64>; 2] = base_depth.map(|b| b.iter().map(|d| d * rng.gen_range(0.6..1.6)).collect());
    let mut flow: [(Vec<f64>, Vec<f64>); 2] = base_flow.map(|f| {
        (
            f.u().iter().map(|u| u + rng.gen_range(-1.0..1.0)).collect(),
            f.v().iter().map(|v| v + rng.gen_range(-1.0..1.0)).collect(),
        )
    });
    let xy = |p: usize| ((p % w) as f64, (p / w) as f64);
    let rough_neighbors = |values: &[f64], p: usize, margin: f64| {
        let (x, y) = (p % w, p / w);
        (x + 1 < w && (values[p] - values[p + 1]).abs() < margin)
            || (y + 1 < h && (values[p] - values[p + w]).abs() < margin)
    };
    for _round in 0..500 {
        let mut redraw_depth = [vec![false; n], vec![false; n]];
        let mut redraw_flow = [vec![false; n], vec![false; n]];
        let mut rigid = [(vec![0.0; n], vec![0.0; n]), (vec![0.0; n], vec![0.0; n])];
        for dir in 0..2 {
            let other = 1 - dir;
            for p in 0..n {
                let (x, y) = xy(p);
                let q = project_pixel(x, y, depth[dir][p], &k, &poses[dir]);
                rigid[dir].0[p] = q.x - x;
                rigid[dir].1[p] = q.y - y;
                let bad_position = !clear_of_grid(q.x, q.y, w, h);
                let bad_residual =
                    inside(q.x, q.y, w, h) && (depth[dir][p] - sample(&depth[other], w, h, q.x, q.y)).abs() < 0.01;
                if bad_position || bad_residual || rough_neighbors(&depth[dir], p, 0.01) {
                    redraw_depth[dir][p] = true;
                }
            }
        }
        for dir in 0..2 {
            let other = 1 - dir;
            for p in 0..n {
                let (x, y) = xy(p);
                let (u, v) = (flow[dir].0[p], flow[dir].1[p]);
                let (qx, qy) = (x + u, y + v);
                let mut bad = !clear_of_grid(qx, qy, w, h)
                    || (u - rigid[dir].0[p]).abs() < 0.05
                    || (v - rigid[dir].1[p]).abs() < 0.05
                    || rough_neighbors(&flow[dir].0, p, 0.01)
                    || rough_neighbors(&flow[dir].1, p, 0.01);
                if inside(qx, qy, w, h) {
                    bad |= (u + sample(&flow[other].0, w, h, qx, qy)).abs() < 0.02
                        || (v + sample(&flow[other].1, w, h, qx, qy)).abs() < 0.02;
                }
                redraw_flow[dir][p] = bad;
            }
        }
        let pending = redraw_depth
            .iter()
            .chain(&redraw_flow)
            .flatten()
            .filter(|b| **b)
            .count();
        if pending == 0 {
            let [d0, d1] = depth;
            let [(fu, fv), (bu, bv)] = flow;
            return SceneVariables {
                depth_t: DepthMap::new(w, h, d0).unwrap(),
                depth_t1: DepthMap::new(w, h, d1).unwrap(),
                pose,
                flow_fwd: FlowField::new(w, h, fu, fv).unwrap(),
                flow_bwd: FlowField::new(w, h, bu, bv).unwrap(),
            };
        }
        for dir in 0..2 {
            for p in 0..n {
                if redraw_depth[dir][p] {
                    depth[dir][p] = base_depth[dir][p] * rng.gen_range(0.6..1.6);
                }
                if redraw_flow[dir][p] {
                    flow[dir].0[p] = base_flow[dir].u()[p] + rng.gen_range(-1.0..1.0);
                    flow[dir].1[p] = base_flow[dir].v()[p] + rng.gen_range(-1.0..1.0);
                }
            }
        }
    }
    panic!("no smooth configuration found for seed {seed}");
}

fn gradient_suite() -> Outcome {
    const H: f64 = 1e-4;
    const FLOOR: f64 = 1e-8;
    let losses = [
        (
            "photometric",
            Terms {
                photometric: true,
                ..Terms::NONE
            },
        ),
        (
            "smoothness",
            Terms {
                smooth: true,
                ..Terms::NONE
            },
        ),
        (
            "fb-flow",
            Terms {
                fb_flow: true,
                ..Terms::NONE
            },
        ),
        (
            "fb-depth",
            Terms {
                fb_depth: true,
                ..Terms::NONE
            },
        ),
        (
            "cross-task",
            Terms {
                cross: true,
                ..Terms::NONE
            },
        ),
    ];
    let config = ObjectiveConfig {
        scales: 1,
        cross_scales: 1,
        ..Default::default()
    };
    let start = Instant::now();
    let (worst, where_, checked, min_valid) = single_threaded(|| {
        let mut worst = 0.0f64;
        let mut where_ = String::new();
        let mut checked = 0usize;
        let mut min_valid = usize::MAX;
        for scene in 0..3u64 {
            let mut spec = SceneSpec::textured_plane(16, 16, 100 + scene);
            // Diagonal motion so depth changes sweep samples across whole cells.
            spec.camera_motion = PoseParams([0.01, -0.02, 0.005, 0.4, 0.3, 0.05]).to_pose();
            let gt = render(&spec).unwrap();
            let vars = smooth_configuration(&gt, scene);
            let objective = Objective::new(&inputs_of(&gt), config.clone()).unwrap();
            let masks = objective.masks(&vars).unwrap();
            let m = &masks.levels[0];
            for mask in [&m.rigid_fwd, &m.rigid_bwd, &m.flow_fwd, &m.flow_bwd] {
                min_valid = min_valid.min(mask.count());
            }
            let loss = |v: &SceneVariables, terms| objective.evaluate(v, &masks, terms, false).unwrap().0.total;
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + scene);
            for (name, terms) in losses {
                let grad = objective.evaluate(&vars, &masks, terms, true).unwrap().1.unwrap();
                for (class, count) in [(Class::Depth, 2 * 256), (Class::Pose, 6), (Class::Flow, 4 * 256)] {
                    for _ in 0..100 {
                        let i = rng.gen_range(0..count);
                        let analytic = match class {
                            Class::Depth if i < 256 => grad.depth_t[i],
                            Class::Depth => grad.depth_t1[i - 256],
                            Class::Pose => grad.pose[i],
                            Class::Flow => {
                                let f = if i < 512 { &grad.flow_fwd } else { &grad.flow_bwd };
                                let k = i % 512;
                                if k < 256 {
                                    f.u()[k]
                                } else {
                                    f.v()[k - 256]
                                }
                            }
                        };
                        let numeric = (loss(&nudged(&vars, class, i, H), terms)
                            - loss(&nudged(&vars, class, i, -H), terms))
                            / (2.0 * H);
                        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR);
                        checked += 1;
                        if rel > worst {
                            worst = rel;
                            where_ = format!(
                                "{name} scene {scene} {} {i} ({analytic:e} vs {numeric:e})",
                                class.name()
                            );
                        }
                    }
                }
            }
        }
        (worst, where_, checked, min_valid)
    });
    let elapsed = start.elapsed();
    Outcome::new(
        worst < 1e-3 && min_valid >= 16 && elapsed < Duration::from_secs(120),
        format!(
            "{checked} checks (smallest mask {min_valid} px), worst relative error {worst:.2e} at {where_}, {:.1} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn published_weights(lambda_c: f64) -> OptimizerConfig {
    let mut cfg = OptimizerConfig {
        iterations: 2000,
        ..Default::default()
    };
    cfg.objective.weights.lambda_s = 3.0;
    cfg.objective.weights.lambda_f = 0.2;
    cfg.objective.weights.lambda_c = lambda_c;
    cfg
}

/// Median-scaled depth Abs Rel of frame t and rigid-flow EPE, both over the
/// whole image.
fn recovery_metrics(gt: &GroundTruth, state: &SceneState) -> (f64, f64) {
    let (w, h) = gt.depth_t.dims();
    let full = ValidMask::full(w, h);
    let depth = state.depth_t().unwrap();
    let abs_rel = depth_metrics(&depth, &gt.depth_t, &full, &DepthEvalOptions::default())
        .unwrap()
        .abs_rel;
    let (rigid, in_front) = rigid_flow(&depth, &gt.intrinsics, &state.pose.to_pose());
    (abs_rel, epe(&rigid, &gt.flow_fwd, &in_front).unwrap())
}

fn recovery() -> Outcome {
    let gt = fixture();
    let init = SceneState::from_ground_truth(&gt).perturbed(
        &Perturbation {
            depth_noise: 0.2,
            ..Default::default()
        },
        FIXTURE_SEED,
    );
    let (init_rel, _) = recovery_metrics(&gt, &init);
    let start = Instant::now();
    let out = single_threaded(|| {
        Harness::new(&inputs_of(&gt), published_weights(0.2))
            .unwrap()
            .refine(init)
            .unwrap()
    });
    let elapsed = start.elapsed();
    let (abs_rel, rigid_epe) = recovery_metrics(&gt, &out.state);
    Outcome::new(
        abs_rel < 0.05 && rigid_epe < 0.5 && out.trace.len() <= 2000 && elapsed < Duration::from_secs(120),
        format!(
            "abs_rel {init_rel:.4} -> {abs_rel:.4}, rigid EPE {rigid_epe:.4} px, {} iterations in {:.1} s",
            out.trace.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn cross_task_ablation() -> Outcome {
    let gt = fixture();
    let inputs = inputs_of(&gt);
    let with = Harness::new(&inputs, published_weights(0.2)).unwrap();
    let without = Harness::new(&inputs, published_weights(0.0)).unwrap();
    let noise = Perturbation {
        depth_noise: 0.2,
        flow_noise: 1.0,
        pose_noise: 0.0,
    };
    let mut wins = 0;
    let mut pairs = Vec::new();
    for seed in 1..=5u64 {
        let init = SceneState::from_ground_truth(&gt).perturbed(&noise, seed);
        let a = recovery_metrics(&gt, &with.refine(init.clone()).unwrap().state).0;
        let b = recovery_metrics(&gt, &without.refine(init).unwrap().state).0;
        if a < b {
            wins += 1;
        }
        pairs.push(format!("{a:.4}<{b:.4}"));
    }
    Outcome::new(
        wins == 5,
        format!("{wins}/5 seeds, abs_rel (with < without): {}", pairs.join(" ")),
    )
}

fn mover_detection() -> Outcome {
    let gt = render(&SceneSpec::with_mover(64, 64, 5)).unwrap();
    let (fwd, _) = rigid_flow(&gt.depth_t, &gt.intrinsics, &gt.pose);
    let (bwd, _) = rigid_flow(&gt.depth_t1, &gt.intrinsics, &gt.pose.inverse());
    let valid = fb_check(&fwd, &bwd, &FBCheckParams::default()).unwrap();
    let movers = gt.mover_mask.bits();
    let statics = gt.static_visible();
    let flagged = (0..movers.len()).filter(|&i| movers[i] && !valid.at(i)).count();
    let mover_count = movers.iter().filter(|b| **b).count();
    let kept = (0..movers.len()).filter(|&i| statics.at(i) && valid.at(i)).count();
    let mover_rate = flagged as f64 / mover_count as f64;
    let static_rate = kept as f64 / statics.count() as f64;
    Outcome::new(
        mover_rate >= 0.90 && static_rate >= 0.95,
        format!(
            "{:.1}% of {mover_count} mover pixels invalid, {:.1}% of {} static visible pixels valid",
            100.0 * mover_rate,
            100.0 * static_rate,
            statics.count()
        ),
    )
}

fn census_invariance() -> Outcome {
    let gt = fixture();
    let gt_state = SceneState::from_ground_truth(&gt);
    let noisy = gt_state.perturbed(
        &Perturbation {
            depth_noise: 0.2,
            flow_noise: 1.0,
            pose_noise: 0.01,
        },
        3,
    );
    let photometric = |inputs: &SceneInputs, state: &SceneState| {
        Objective::new(inputs, ObjectiveConfig::default())
            .unwrap()
            .report(&state.variables().unwrap())
            .unwrap()
            .photometric
    };
    let mut worst = 0.0f64;
    for state in [&gt_state, &noisy] {
        let base = photometric(&inputs_of(&gt), state);
        for shift in [0.1, -0.1] {
            let shifted = SceneInputs {
                image_t: gt.image_t.offset(shift),
                image_t1: gt.image_t1.offset(shift),
                intrinsics: gt.intrinsics,
            };
            worst = worst.max((photometric(&shifted, state) - base).abs());
        }
    }
    Outcome::new(worst < 1e-9, format!("max change {worst:e} under +/-0.1 shifts"))
}

fn oracle_epe(est: &FlowField, gt: &FlowField, mask: &ValidMask) -> f64 {
    let (w, h) = gt.dims();
    let mut sum = 0.0;
    let mut n = 0.0;
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) {
                let (a, b) = (est.get(x, y), gt.get(x, y));
                sum += ((a.0 - b.0) * (a.0 - b.0) + (a.1 - b.1) * (a.1 - b.1)).sqrt();
                n += 1.0;
            }
        }
    }
    sum / n
}

fn oracle_f1(est: &FlowField, gt: &FlowField, mask: &ValidMask) -> f64 {
    let (w, h) = gt.dims();
    let (mut bad, mut n) = (0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) {
                let (a, b) = (est.get(x, y), gt.get(x, y));
                let err = ((a.0 - b.0) * (a.0 - b.0) + (a.1 - b.1) * (a.1 - b.1)).sqrt();
                let mag = (b.0 * b.0 + b.1 * b.1).sqrt();
                if err > 3.0 && err > 0.05 * mag {
                    bad += 1.0;
                }
                n += 1.0;
            }
        }
    }
    bad / n
}

/// Abs Rel, Sq Rel, RMSE, log RMSE, δ<1.25, δ<1.25², δ<1.25³ after median scaling.
fn oracle_depth(est: &DepthMap, gt: &DepthMap, mask: &ValidMask) -> [f64; 7] {
    let (w, h) = gt.dims();
    let mut e = Vec::new();
    let mut g = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) {
                e.push(est.get(x, y));
                g.push(gt.get(x, y));
            }
        }
    }
    let median = |v: &[f64]| {
        let mut s = v.to_vec();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let m = s.len() / 2;
        if s.len() % 2 == 0 {
            (s[m - 1] + s[m]) / 2.0
        } else {
            s[m]
        }
    };
    let scale = median(&g) / median(&e);
    let mut acc = [0.0; 7];
    for (ei, gi) in e.iter().zip(&g) {
        let p = (ei * scale).max(1e-3);
        let t = gi.max(1e-3);
        acc[0] += (p - t).abs() / t;
        acc[1] += (p - t) * (p - t) / t;
        acc[2] += (p - t) * (p - t);
        acc[3] += (libm::log(p) - libm::log(t)) * (libm::log(p) - libm::log(t));
        let ratio = if p / t > t / p { p / t } else { t / p };
        acc[4] += if ratio < 1.25 { 1.0 } else { 0.0 };
        acc[5] += if ratio < 1.25 * 1.25 { 1.0 } else { 0.0 };
        acc[6] += if ratio < 1.25 * 1.25 * 1.25 { 1.0 } else { 0.0 };
    }
    let n = e.len() as f64;
    [
        acc[0] / n,
        acc[1] / n,
        (acc[2] / n).sqrt(),
        (acc[3] / n).sqrt(),
        acc[4] / n,
        acc[5] / n,
        acc[6] / n,
    ]
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut mismatches = 0;
    let trials = 20;
    for _ in 0..trials {
        let mut field = |scale: f64| {
            let u = (0..1024).map(|_| rng.gen_range(-scale..scale)).collect();
            let v = (0..1024).map(|_| rng.gen_range(-scale..scale)).collect();
            FlowField::new(32, 32, u, v).unwrap()
        };
        let gt = field(20.0);
        let est = FlowField::new(
            32,
            32,
            gt.u().iter().map(|u| u + rng.gen_range(-6.0..6.0)).collect(),
            gt.v().iter().map(|v| v + rng.gen_range(-6.0..6.0)).collect(),
        )
        .unwrap();
        let mask = ValidMask::new(32, 32, (0..1024).map(|_| rng.gen_bool(0.8)).collect()).unwrap();
        mismatches += usize::from(epe(&est, &gt, &mask).unwrap().to_bits() != oracle_epe(&est, &gt, &mask).to_bits());
        mismatches += usize::from(f1(&est, &gt, &mask).unwrap().to_bits() != oracle_f1(&est, &gt, &mask).to_bits());

        let gd = DepthMap::new(32, 32, (0..1024).map(|_| rng.gen_range(1.0..80.0)).collect()).unwrap();
        let ed = DepthMap::new(32, 32, (0..1024).map(|_| rng.gen_range(0.5..90.0)).collect()).unwrap();
        let m = depth_metrics(&ed, &gd, &mask, &DepthEvalOptions::default()).unwrap();
        let ours = [m.abs_rel, m.sq_rel, m.rmse, m.log_rmse, m.a1, m.a2, m.a3];
        let oracle = oracle_depth(&ed, &gd, &mask);
        mismatches += ours
            .iter()
            .zip(&oracle)
            .filter(|(a, b)| a.to_bits() != b.to_bits())
            .count();
    }
    let hand_excluded = f1(
        &FlowField::constant(4, 4, 104.0, 0.0),
        &FlowField::constant(4, 4, 100.0, 0.0),
        &ValidMask::full(4, 4),
    )
    .unwrap();
    let hand_counted = f1(
        &FlowField::constant(4, 4, 14.0, 0.0),
        &FlowField::constant(4, 4, 10.0, 0.0),
        &ValidMask::full(4, 4),
    )
    .unwrap();
    Outcome::new(
        mismatches == 0 && hand_excluded == 0.0 && hand_counted == 1.0,
        format!(
            "{mismatches} bitwise mismatches over {trials} random 32x32 trials (9 metrics each); \
             F1 hand cases {hand_excluded} and {hand_counted}"
        ),
    )
}

fn io_round_trips() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut mismatches = 0;
    let same = |a: &[f64], b: &[f64]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits());
    for i in 0..100 {
        let (w, h) = (rng.gen_range(1..40), rng.gen_range(1..40));
        let mut sample = |lo: f32, hi: f32| rng.gen_range(lo..hi) as f64;
        let u: Vec<f64> = (0..w * h).map(|_| sample(-500.0, 500.0)).collect();
        let v: Vec<f64> = (0..w * h).map(|_| sample(-500.0, 500.0)).collect();
        let flow = FlowField::new(w, h, u, v).unwrap();
        let path = dir.path().join(format!("f{i}.flo"));
        write_flo(&path, &flow).unwrap();
        let back = read_flo(&path).unwrap();
        mismatches += usize::from(!(same(flow.u(), back.u()) && same(flow.v(), back.v()) && back.dims() == (w, h)));

        let depth = DepthMap::new(w, h, (0..w * h).map(|_| sample(1e-3, 1e4)).collect()).unwrap();
        let path = dir.path().join(format!("d{i}.pfm"));
        write_depth(&path, &depth).unwrap();
        let back = read_depth(&path).unwrap();
        mismatches += usize::from(!(same(depth.values(), back.values()) && back.dims() == (w, h)));

        let image = ImageBuffer::new(w, h, 3, (0..w * h * 3).map(|_| sample(-1.0, 2.0)).collect()).unwrap();
        let path = dir.path().join(format!("i{i}.pfm"));
        write_image(&path, &image).unwrap();
        let back = read_image(&path).unwrap();
        mismatches += usize::from(!(same(image.data(), back.data()) && back.channels() == 3));
    }
    let tiny = dir.path().join("tiny.flo");
    write_flo(&tiny, &FlowField::constant(1, 1, 1.5, -2.0)).unwrap();
    let size = std::fs::metadata(&tiny).unwrap().len();
    Outcome::new(
        mismatches == 0 && size == 20,
        format!("{mismatches} mismatches over 100 flow, 100 depth and 100 color round trips; 1x1 .flo is {size} bytes"),
    )
}

fn determinism() -> Outcome {
    let gt = fixture();
    let inputs = inputs_of(&gt);
    let cfg = OptimizerConfig {
        iterations: 150,
        ..Default::default()
    };
    let init = SceneState::from_ground_truth(&gt).perturbed(
        &Perturbation {
            depth_noise: 0.2,
            flow_noise: 1.0,
            pose_noise: 0.005,
        },
        42,
    );
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            Harness::new(&inputs, cfg.clone())
                .unwrap()
                .refine(init.clone())
                .unwrap()
                .trace
        })
    };
    let bits = |t: &[LossReport]| -> Vec<[u64; 5]> {
        t.iter()
            .map(|r| [r.photometric, r.smooth, r.forward_backward, r.cross, r.total].map(f64::to_bits))
            .collect()
    };
    let n = std::thread::available_parallelism().map_or(4, |n| n.get()).max(4);
    let traces = [run(1), run(1), run(n), run(n)];
    let reference = bits(&traces[0]);
    let identical = traces.iter().all(|t| bits(t) == reference);
    Outcome::new(
        identical,
        format!(
            "{} iterations, runs at 1, 1, {n}, {n} threads bit-identical: {identical}",
            reference.len()
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("geometry identity", geometry_identity),
        ("closed-form flow", closed_form_flow),
        ("gradient suite", gradient_suite),
        ("recovery experiment", recovery),
        ("cross-task ablation direction", cross_task_ablation),
        ("mover detection", mover_detection),
        ("census invariance", census_invariance),
        ("metric oracles", metric_oracles),
        ("I/O round trips", io_round_trips),
        ("determinism", determinism),
    ];
    // A comma-separated list of criterion numbers restricts the run.
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|n| n.trim().parse().ok()).collect());
    let mut passed = 0;
    let mut ran = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if only.as_ref().is_some_and(|o| !o.contains(&(i + 1))) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome::new(false, format!("panicked: {msg}"))
        });
        passed += usize::from(outcome.passed);
        println!(
            "criterion {:>2} {} {name}: {} [{:.1} s]",
            i + 1,
            if outcome.passed { "PASS" } else { "FAIL" },
            outcome.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("{passed}/{ran} criteria passed");
    if passed == ran {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
