//! The commands behind the `mixdepth` binary. Each one reads its inputs,
//! writes its outputs plus the fully resolved configuration into an output
//! directory, and maps failures onto exit codes: 2 for bad input, 3 for a
//! numerical failure during fitting, 4 for a failed validation.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::Error;
use crate::io::{read_pfm, read_pnm, stack_planes, write_pfm, write_pnm};
use crate::loss::VarianceMode;
use crate::metrics::{evaluate, MetricsConfig, MetricsReport};
use crate::synth::{render, SceneSpec};
use crate::trainer::{SourceView, TrainConfig, TrainRecord, TrainScene, Trainer};
use crate::types::{disparity_to_depth, CameraRig, ImageGrid};
use crate::validation::{check_propagation, sub_seed, PropCheckConfig, PropReport};

pub const TARGET_IMAGE: &str = "target.ppm";
pub const SOURCE_IMAGE: &str = "source.ppm";
pub const TARGET_DEPTH: &str = "target_depth.pfm";
pub const SOURCE_DEPTH: &str = "source_depth.pfm";
pub const SCENE: &str = "scene.json";
/// Five stacked planes: `logit_mu1, logit_mu2, log_sigma1, log_sigma2, logit_alpha`.
pub const PARAMS: &str = "params.pfm";
pub const DISPARITY: &str = "disparity.pfm";
pub const DEPTH: &str = "depth.pfm";
pub const ALPHA: &str = "alpha.pfm";
pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const CONFIG: &str = "config.json";
pub const REPORT: &str = "report.json";

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{0}")]
    Input(#[from] Error),
    #[error("{context}: {source}")]
    File { context: String, source: Error },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("validation failed: {0}")]
    Validation(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Input(_) | RunError::File { .. } => 2,
            RunError::Numerical(_) => 3,
            RunError::Validation(_) => 4,
        }
    }
}

pub type RunResult<T> = std::result::Result<T, RunError>;

trait Context<T> {
    fn context(self, what: impl FnOnce() -> String) -> RunResult<T>;
}

impl<T, E: Into<Error>> Context<T> for std::result::Result<T, E> {
    fn context(self, what: impl FnOnce() -> String) -> RunResult<T> {
        self.map_err(|e| RunError::File {
            context: what(),
            source: e.into(),
        })
    }
}

/// Options shared by every command.
#[derive(Clone, Debug, Default)]
pub struct CommonArgs {
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: Option<u64>,
}

fn read_json_value(path: &Path) -> RunResult<Value> {
    let text = fs::read_to_string(path).context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).context(|| format!("parsing {}", path.display()))
}

/// Overlay `patch` onto `base`; objects merge key by key, anything else replaces.
pub fn merge_json(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// `defaults` with the JSON file at `path`, if any, merged on top.
fn resolve<T: Serialize + DeserializeOwned>(defaults: &T, path: Option<&Path>) -> RunResult<T> {
    let mut value = serde_json::to_value(defaults).map_err(Error::from)?;
    if let Some(p) = path {
        merge_json(&mut value, read_json_value(p)?);
    }
    serde_json::from_value(value).context(|| match path {
        Some(p) => format!("invalid config {}", p.display()),
        None => "invalid default config".into(),
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> RunResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    text.push('\n');
    fs::write(path, text).context(|| format!("writing {}", path.display()))
}

fn prepare_out(out: &Path) -> RunResult<()> {
    fs::create_dir_all(out).context(|| format!("creating {}", out.display()))
}

/// Parse a scene spec, reporting the line and column of syntax errors and
/// the violated invariant of well-formed but invalid specs.
pub fn parse_scene(text: &str) -> crate::Result<SceneSpec> {
    let spec: SceneSpec = serde_json::from_str(text)?;
    spec.validate()?;
    Ok(spec)
}

/// Render a scene and write both views, both depth maps and the resolved
/// spec. Without `--config` the default box scene is used; `--seed`
/// reseeds every texture.
pub fn cmd_synth(args: &CommonArgs) -> RunResult<SceneSpec> {
    let mut spec = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).context(|| format!("reading {}", p.display()))?;
            parse_scene(&text).context(|| format!("scene spec {}", p.display()))?
        }
        None => SceneSpec::default_box(),
    };
    if let Some(seed) = args.seed {
        spec.background.texture.seed = sub_seed(seed, "texture", 0);
        for (i, o) in spec.objects.iter_mut().enumerate() {
            o.texture.seed = sub_seed(seed, "texture", i as u64 + 1);
        }
    }
    let scene = render(&spec)?;
    for w in &scene.warnings {
        log::warn!("{w}");
    }
    prepare_out(&args.out)?;
    let out = |name: &str| args.out.join(name);
    write_pnm(out(TARGET_IMAGE), &scene.target.color)?;
    write_pnm(out(SOURCE_IMAGE), &scene.source.color)?;
    write_pfm(out(TARGET_DEPTH), &scene.target.depth)?;
    write_pfm(out(SOURCE_DEPTH), &scene.source.depth)?;
    write_json(&out(SCENE), &spec)?;
    Ok(spec)
}

/// Read the scene written by [`cmd_synth`]: images and the spec that holds
/// the rig and depth convention.
pub fn load_scene(dir: &Path) -> RunResult<(SceneSpec, TrainScene)> {
    let text = fs::read_to_string(dir.join(SCENE))
        .context(|| format!("reading {}", dir.join(SCENE).display()))?;
    let spec =
        parse_scene(&text).context(|| format!("scene spec {}", dir.join(SCENE).display()))?;
    let image = |name: &str| {
        read_pnm(dir.join(name)).context(|| format!("reading {}", dir.join(name).display()))
    };
    let (target, source) = (image(TARGET_IMAGE)?, image(SOURCE_IMAGE)?);
    if (target.width(), target.height()) != (spec.width, spec.height) {
        return Err(Error::DimensionMismatch(format!(
            "{TARGET_IMAGE} is {}x{} but the spec says {}x{}",
            target.width(),
            target.height(),
            spec.width,
            spec.height
        ))
        .into());
    }
    let scene = TrainScene::new(
        target,
        vec![SourceView {
            rig: spec.rig,
            image: source,
        }],
        spec.convention,
    )?;
    Ok((spec, scene))
}

#[derive(Clone, Debug, Default)]
pub struct FitArgs {
    pub common: CommonArgs,
    pub scene: PathBuf,
    pub baseline: bool,
    pub variance_mode: Option<VarianceMode>,
}

/// Everything a fit run depends on, written next to its outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitRunConfig {
    pub command: String,
    pub scene: PathBuf,
    pub train: TrainConfig,
}

/// Resolve the training config: the box-scene preset, then the config
/// file, then command-line flags.
pub fn resolve_train_config(args: &FitArgs) -> RunResult<TrainConfig> {
    let mut cfg = resolve(&TrainConfig::box_scene(), args.common.config.as_deref())?;
    if let Some(seed) = args.common.seed {
        cfg.seed = seed;
    }
    if args.baseline {
        cfg.baseline = true;
    }
    if let Some(mode) = args.variance_mode {
        cfg.variance_mode = mode;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_log(path: &Path, log: &[TrainRecord]) -> RunResult<()> {
    let mut buf = Vec::new();
    for r in log {
        serde_json::to_writer(&mut buf, r).map_err(Error::from)?;
        buf.push(b'\n');
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&buf))
        .context(|| format!("writing {}", path.display()))
}

/// Fit a mixture table and write the raw parameters, the selected disparity
/// and its depth, the mixture weights, the training log and the resolved
/// config. On a non-finite loss the last finite table is written before
/// failing.
pub fn cmd_fit(args: &FitArgs) -> RunResult<FitRunConfig> {
    let cfg = resolve_train_config(args)?;
    let (spec, scene) = load_scene(&args.scene)?;
    prepare_out(&args.common.out)?;
    let out = |name: &str| args.common.out.join(name);
    let run = FitRunConfig {
        command: "fit".into(),
        scene: args.scene.clone(),
        train: cfg,
    };
    write_json(&out(CONFIG), &run)?;
    let trainer = Trainer::new(&scene, cfg)?;
    let (table, log, failure) = match trainer.fit(|_, _| {}) {
        Ok(r) => (r.table, r.log, None),
        Err(f) => match f.last_good {
            Some(t) => (t, f.log, Some(f.error)),
            None => return Err(f.error.into()),
        },
    };
    write_log(&out(TRAIN_LOG), &log)?;
    write_pfm(out(PARAMS), &stack_planes(&table.to_planes()?)?)?;
    if let Some(e) = failure {
        return Err(RunError::Numerical(format!(
            "{e} after {} steps; last finite table kept in {PARAMS}",
            log.len()
        )));
    }
    let decoded = table.decode();
    let disparity = decoded.selected_disparity()?;
    let depth = depth_from_disparity(&disparity, &spec)?;
    write_pfm(out(DISPARITY), &disparity)?;
    write_pfm(out(DEPTH), &depth)?;
    write_pfm(out(ALPHA), &decoded.alpha_map()?)?;
    Ok(run)
}

#[derive(Clone, Debug, Default)]
pub struct EvalArgs {
    pub common: CommonArgs,
    pub pred: PathBuf,
    pub gt: PathBuf,
    /// A bare rig or any JSON object with a `rig` field, such as `scene.json`.
    pub rig: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRunConfig {
    pub command: String,
    pub pred: PathBuf,
    pub gt: PathBuf,
    pub rig: CameraRig,
    pub metrics: MetricsConfig,
}

fn read_rig(path: &Path) -> RunResult<CameraRig> {
    let value = read_json_value(path)?;
    let rig = match value.get("rig") {
        Some(r) => r.clone(),
        None => value,
    };
    serde_json::from_value(rig).context(|| format!("camera rig in {}", path.display()))
}

/// Score a predicted depth map against ground truth.
pub fn cmd_eval(args: &EvalArgs) -> RunResult<MetricsReport> {
    let metrics = resolve(&MetricsConfig::default(), args.common.config.as_deref())?;
    let pred = read_pfm(&args.pred).context(|| format!("reading {}", args.pred.display()))?;
    let gt = read_pfm(&args.gt).context(|| format!("reading {}", args.gt.display()))?;
    let rig = read_rig(&args.rig)?;
    let report = evaluate(&pred, &gt, &rig, &metrics)?;
    prepare_out(&args.common.out)?;
    let run = EvalRunConfig {
        command: "eval".into(),
        pred: args.pred.clone(),
        gt: args.gt.clone(),
        rig,
        metrics,
    };
    write_json(&args.common.out.join(CONFIG), &run)?;
    write_json(&args.common.out.join(REPORT), &report)?;
    Ok(report)
}

/// Run the propagation checks and write the report. A failed tolerance is
/// an error after the report is written.
pub fn cmd_check_prop(args: &CommonArgs) -> RunResult<PropReport> {
    let mut cfg = resolve(&PropCheckConfig::default(), args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let report = check_propagation(&cfg)?;
    prepare_out(&args.out)?;
    write_json(&args.out.join(CONFIG), &cfg)?;
    write_json(&args.out.join(REPORT), &report)?;
    if !report.pass {
        return Err(RunError::Validation(format!(
            "see {}",
            args.out.join(REPORT).display()
        )));
    }
    Ok(report)
}

/// Depth map from a selected-disparity map.
pub fn depth_from_disparity(disparity: &ImageGrid, spec: &SceneSpec) -> crate::Result<ImageGrid> {
    disparity.map(|d| disparity_to_depth(d, &spec.convention).unwrap_or(f64::NAN))
}
