//! The `rigidflow` command line.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rigidflow_core::geometry::{rigid_flow, Intrinsics, PoseParams};
use rigidflow_core::masks::fb_check;
use rigidflow_core::metrics::{depth_metrics, epe, flow_metrics, DepthEvalOptions};
use rigidflow_core::optimizer::Harness;
use rigidflow_core::sampling::inverse_warp;
use rigidflow_core::scene::render;
use rigidflow_core::{DepthMap, ValidMask};

use crate::bundle::{self, read_camera};
use crate::config::{RunConfig, SceneFile};
use crate::formats::{read_depth, read_flo, read_image, read_mask, read_pfm, write_flo, write_image, write_mask};
use crate::report;
use crate::viz::write_flow_visualization;

/// Joint depth, camera-motion and optical-flow estimation by direct
/// optimization of geometric consistency losses.
#[derive(Debug, Parser)]
#[command(name = "rigidflow", version)]
pub struct Cli {
    /// Run configuration file (TOML key = value pairs).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set lambda_c=0`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Seed for every random choice; overrides the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rigid flow from a depth map, intrinsics and a relative pose.
    SynthFlow(SynthFlow),
    /// Inverse-warp an image by a flow field.
    Warp(Warp),
    /// Forward-backward validity mask of a flow pair.
    Mask(MaskCmd),
    /// Loss report of a scene state.
    Loss(LossCmd),
    /// Refine a scene state by gradient descent.
    Refine(Refine),
    /// Render a synthetic scene and its ground truth.
    RenderScene(RenderScene),
    /// Endpoint error and outlier rate of a flow estimate.
    EvalFlow(EvalFlow),
    /// Depth error metrics of a depth estimate.
    EvalDepth(EvalDepth),
    /// Color-coded flow image (binary PPM).
    VizFlow(VizFlow),
}

#[derive(Debug, Args)]
pub struct CameraArgs {
    /// camera.toml holding intrinsics and pose.
    #[arg(long, conflicts_with_all = ["intrinsics", "pose"])]
    pub camera: Option<PathBuf>,
    /// fx,fy,cx,cy
    #[arg(long, value_parser = float_list::<4>, allow_hyphen_values = true)]
    pub intrinsics: Option<[f64; 4]>,
    /// ωx,ωy,ωz,tx,ty,tz (axis-angle rotation, translation).
    #[arg(long, value_parser = float_list::<6>, allow_hyphen_values = true)]
    pub pose: Option<[f64; 6]>,
}

fn float_list<const N: usize>(text: &str) -> std::result::Result<[f64; N], String> {
    let values = text
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    values
        .try_into()
        .map_err(|v: Vec<f64>| format!("expected {N} comma-separated numbers, got {}", v.len()))
}

impl CameraArgs {
    fn resolve(&self) -> Result<(Intrinsics, PoseParams)> {
        if let Some(path) = &self.camera {
            let dir = path.parent().unwrap_or(Path::new("."));
            let camera = if path.file_name().is_some_and(|n| n == "camera.toml") {
                read_camera(dir)?
            } else {
                toml::from_str(&fs::read_to_string(path)?)?
            };
            return Ok((camera.intrinsics()?, PoseParams(camera.pose)));
        }
        let Some([fx, fy, cx, cy]) = self.intrinsics else {
            bail!("either --camera or --intrinsics is required");
        };
        Ok((
            Intrinsics::new(fx, fy, cx, cy)?,
            PoseParams(self.pose.unwrap_or([0.0; 6])),
        ))
    }
}

#[derive(Debug, Args)]
pub struct SynthFlow {
    /// Depth map (PFM).
    #[arg(long)]
    pub depth: PathBuf,
    #[command(flatten)]
    pub camera: CameraArgs,
    /// Output flow (.flo).
    #[arg(short, long)]
    pub output: PathBuf,
    /// Optional output mask of pixels that land in front of the camera (PGM).
    #[arg(long)]
    pub mask: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Warp {
    /// Image to sample (PFM).
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub flow: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Optional in-bounds mask output (PGM).
    #[arg(long)]
    pub mask: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MaskCmd {
    #[arg(long)]
    pub fwd: PathBuf,
    #[arg(long)]
    pub bwd: PathBuf,
    /// Output mask (PGM, 255 = valid).
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct LossCmd {
    /// Scene directory holding the two frames and camera.toml.
    #[arg(long)]
    pub inputs: PathBuf,
    /// State directory; defaults to the inputs directory.
    #[arg(long)]
    pub state: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Refine {
    /// Scene directory holding the two frames and camera.toml.
    #[arg(long)]
    pub inputs: PathBuf,
    /// Initial state directory. Without it the state is ground truth from
    /// `--gt` (or the inputs directory) with the configured noise.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Ground-truth directory used for the initial state and the final metrics.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Output directory for the refined state.
    #[arg(short, long)]
    pub output: PathBuf,
    /// Trace CSV path; defaults to `trace.csv` in the output directory.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderScene {
    /// Scene description; defaults to the configuration's `scene_spec`.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalFlow {
    #[arg(long)]
    pub est: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Evaluation mask (PGM); all pixels when absent.
    #[arg(long)]
    pub mask: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalDepth {
    #[arg(long)]
    pub est: PathBuf,
    /// Ground-truth depth (PFM); nonpositive or non-finite samples are ignored.
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Ignore pixels whose ground truth exceeds this depth.
    #[arg(long)]
    pub cap: Option<f64>,
    /// Evaluate raw depths instead of median-scaled ones.
    #[arg(long)]
    pub no_median_scale: bool,
}

#[derive(Debug, Args)]
pub struct VizFlow {
    #[arg(long)]
    pub flow: PathBuf,
    /// Output image (PPM).
    #[arg(short, long)]
    pub output: PathBuf,
    /// Magnitude drawn at full saturation; defaults to the field maximum.
    #[arg(long)]
    pub max_magnitude: Option<f64>,
}

/// Sets the global thread pool size from `RIGIDFLOW_THREADS`; all available
/// cores otherwise.
pub fn configure_threads() -> Result<()> {
    if let Ok(value) = std::env::var("RIGIDFLOW_THREADS") {
        let n: usize = value
            .parse()
            .with_context(|| format!("RIGIDFLOW_THREADS={value:?} is not a thread count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

impl Cli {
    pub fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(self.config.as_deref(), &self.overrides)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

fn optional_mask(path: Option<&Path>, w: usize, h: usize) -> Result<ValidMask> {
    match path {
        Some(p) => read_mask(p).with_context(|| format!("reading {}", p.display())),
        None => Ok(ValidMask::full(w, h)),
    }
}

/// Executes a parsed command line, writing reports to `out`.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let cfg = cli.run_config()?;
    match &cli.command {
        Command::SynthFlow(a) => {
            let depth = read_depth(&a.depth)?;
            let (k, pose) = a.camera.resolve()?;
            let (flow, mask) = rigid_flow(&depth, &k, &pose.to_pose());
            write_flo(&a.output, &flow)?;
            if let Some(m) = &a.mask {
                write_mask(m, &mask)?;
            }
        }
        Command::Warp(a) => {
            let (warped, mask) = inverse_warp(&read_image(&a.image)?, &read_flo(&a.flow)?)?;
            write_image(&a.output, &warped)?;
            if let Some(m) = &a.mask {
                write_mask(m, &mask)?;
            }
        }
        Command::Mask(a) => {
            let params = cfg.objective()?.fb_params;
            let mask = fb_check(&read_flo(&a.fwd)?, &read_flo(&a.bwd)?, &params)?;
            write_mask(&a.output, &mask)?;
            let (w, h) = mask.dims();
            write!(
                out,
                "{}",
                report::key_values(&[("valid_fraction", mask.count() as f64 / (w * h) as f64)])
            )?;
        }
        Command::Loss(a) => {
            let inputs = bundle::read_inputs(&a.inputs)?;
            let state = bundle::read_state(a.state.as_deref().unwrap_or(&a.inputs))?;
            let harness = Harness::new(&inputs, cfg.optimizer()?)?;
            let r = harness.objective().report(&state.variables()?)?;
            write!(out, "{}", report::loss_report(&r))?;
        }
        Command::Refine(a) => refine(a, &cfg, out)?,
        Command::RenderScene(a) => {
            let path = a
                .scene
                .as_ref()
                .or(cfg.scene_spec.as_ref())
                .context("no scene description: pass --scene or set scene_spec")?;
            let gt = render(&SceneFile::load(path)?.to_spec()?)?;
            bundle::write_ground_truth(&a.output, &gt)?;
        }
        Command::EvalFlow(a) => {
            let est = read_flo(&a.est)?;
            let gt = read_flo(&a.gt)?;
            let (w, h) = gt.dims();
            let m = flow_metrics(&est, &gt, &optional_mask(a.mask.as_deref(), w, h)?)?;
            write!(out, "{}", report::flow_report(&m))?;
        }
        Command::EvalDepth(a) => {
            let est = read_depth(&a.est)?;
            let raw = read_pfm(&a.gt)?;
            let values = raw.widened();
            let present = ValidMask::new(
                raw.width,
                raw.height,
                values.iter().map(|v| v.is_finite() && *v > 0.0).collect(),
            )?;
            let gt = DepthMap::new(
                raw.width,
                raw.height,
                values
                    .iter()
                    .map(|v| if v.is_finite() && *v > 0.0 { *v } else { 1.0 })
                    .collect(),
            )?;
            let mask = optional_mask(a.mask.as_deref(), raw.width, raw.height)?.intersect(&present)?;
            let opts = DepthEvalOptions {
                cap: a.cap,
                median_scale: !a.no_median_scale,
                ..Default::default()
            };
            write!(
                out,
                "{}",
                report::depth_report(&depth_metrics(&est, &gt, &mask, &opts)?)
            )?;
        }
        Command::VizFlow(a) => {
            write_flow_visualization(&a.output, &read_flo(&a.flow)?, a.max_magnitude)?;
        }
    }
    Ok(())
}

fn refine(a: &Refine, cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let inputs = bundle::read_inputs(&a.inputs)?;
    let gt_dir = a.gt.as_deref().unwrap_or(&a.inputs);
    let init = match &a.init {
        Some(dir) => bundle::read_state(dir)?,
        None => {
            let gt = bundle::read_state(gt_dir)?;
            gt.perturbed(&cfg.perturbation(), cfg.seed)
        }
    };
    let harness = Harness::new(&inputs, cfg.optimizer()?)?;
    let result = harness.refine(init)?;
    bundle::write_state(&a.output, &result.state, &inputs.intrinsics)?;
    let trace_path = a.trace.clone().unwrap_or_else(|| a.output.join("trace.csv"));
    let file = File::create(&trace_path).with_context(|| format!("creating {}", trace_path.display()))?;
    report::write_trace(BufWriter::new(file), &result.trace)?;

    let last = result.trace.last().copied();
    if let Some(r) = last {
        write!(out, "{}", report::loss_report(&r))?;
    }
    if gt_dir.join("depth_t.pfm").exists() && gt_dir.join("flow_fwd.flo").exists() {
        let gt = bundle::read_state(gt_dir)?;
        let (w, h) = gt.dims();
        let visible = bundle::read_static_visible(gt_dir, w, h)?;
        let est_depth = result.state.depth_t()?;
        let d = depth_metrics(&est_depth, &gt.depth_t()?, &visible, &DepthEvalOptions::default())?;
        let (rigid, in_front) = rigid_flow(&est_depth, &inputs.intrinsics, &result.state.pose.to_pose());
        let rigid_epe = epe(&rigid, &gt.flow_fwd, &visible.intersect(&in_front)?)?;
        let flow_epe = epe(&result.state.flow_fwd, &gt.flow_fwd, &visible)?;
        write!(
            out,
            "{}",
            report::key_values(&[("abs_rel", d.abs_rel), ("rigid_epe", rigid_epe), ("flow_epe", flow_epe)])
        )?;
    }
    Ok(())
}
