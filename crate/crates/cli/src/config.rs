//! JSON run configuration shared by every subcommand.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use canvasrnn::model::{ModelConfig, VideoOptions};
use canvasrnn::train::TrainConfig;
use canvasrnn::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Overrides the model and training seeds when set.
    pub seed: Option<u64>,
    pub output_dir: PathBuf,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Training dataset manifest.
    pub dataset: Option<PathBuf>,
    /// Held-out dataset manifest for evaluation commands.
    pub eval_dataset: Option<PathBuf>,
    /// Trained checkpoint for evaluation commands.
    pub checkpoint: Option<PathBuf>,
    pub anytime: AnytimeConfig,
    pub video: VideoConfig,
    pub perturb: PerturbConfig,
    pub flops: FlopsConfig,
    pub psd: PsdConfig,
    pub gen_data: GenDataConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            output_dir: PathBuf::from("out"),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            dataset: None,
            eval_dataset: None,
            checkpoint: None,
            anytime: AnytimeConfig::default(),
            video: VideoConfig::default(),
            perturb: PerturbConfig::default(),
            flops: FlopsConfig::default(),
            psd: PsdConfig::default(),
            gen_data: GenDataConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnytimeConfig {
    pub max_iters: usize,
}

impl Default for AnytimeConfig {
    fn default() -> Self {
        AnytimeConfig { max_iters: 8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VideoConfig {
    /// A video manifest, or a directory whose subdirectories each hold one.
    pub videos: Option<PathBuf>,
    pub cold_iters: usize,
    pub warm_iters: usize,
    pub carry_state: bool,
}

impl Default for VideoConfig {
    fn default() -> Self {
        let o = VideoOptions::default();
        VideoConfig {
            videos: None,
            cold_iters: o.cold_iters,
            warm_iters: o.warm_iters,
            carry_state: o.carry_state,
        }
    }
}

impl VideoConfig {
    pub fn options(&self) -> VideoOptions {
        VideoOptions {
            cold_iters: self.cold_iters,
            warm_iters: self.warm_iters,
            carry_state: self.carry_state,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PerturbMode {
    #[default]
    Zeros,
    WrongClass,
    GroundTruth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbConfig {
    pub mode: PerturbMode,
    pub max_iters: usize,
    /// Sample indices into the evaluation set; all samples when absent.
    pub samples: Option<Vec<usize>>,
    /// Injected logit magnitude; calibrated from the model when absent.
    pub scale: Option<f64>,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        PerturbConfig {
            mode: PerturbMode::Zeros,
            max_iters: 8,
            samples: None,
            scale: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlopsConfig {
    /// Use the full-size dimensions instead of `model`.
    pub paper_scale: bool,
    /// Image extent; defaults to the model crop size.
    pub image_size: Option<usize>,
    pub iterations: usize,
    pub scales: Vec<f64>,
    pub flips: bool,
    pub video_frames: usize,
}

impl Default for FlopsConfig {
    fn default() -> Self {
        FlopsConfig {
            paper_scale: false,
            image_size: None,
            iterations: 6,
            scales: vec![0.5, 0.75, 1.0, 1.25, 1.5, 1.75],
            flips: true,
            video_frames: 10,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PsdConfig {
    /// Directory of predicted label maps named `NNNN.pgm` in evaluation-set order. When
    /// absent, predictions come from the checkpoint.
    pub predictions: Option<PathBuf>,
    /// Iterations for checkpoint predictions; defaults to the trained count.
    pub iterations: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    #[default]
    Shapes,
    Fine,
    Video,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenDataConfig {
    pub kind: DataKind,
    pub seed: u64,
    pub count: usize,
    pub size: usize,
    pub classes: usize,
    /// Frames per video.
    pub frames: usize,
    /// Pixels per frame; a random direction at this speed is drawn per video when
    /// `velocity` is absent.
    pub speed: f64,
    pub velocity: Option<[f64; 2]>,
}

impl Default for GenDataConfig {
    fn default() -> Self {
        GenDataConfig {
            kind: DataKind::Shapes,
            seed: 0,
            count: 64,
            size: 65,
            classes: 4,
            frames: 10,
            speed: 2.0,
            velocity: None,
        }
    }
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl RunConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))?;
        Ok(cfg)
    }

    /// Reads a config and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.dataset,
            &mut cfg.eval_dataset,
            &mut cfg.checkpoint,
            &mut cfg.video.videos,
            &mut cfg.psd.predictions,
        ] {
            resolve(base, p);
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    /// Applies command-line overrides.
    pub fn apply_overrides(&mut self, seed: Option<u64>, out: Option<PathBuf>) {
        if seed.is_some() {
            self.seed = seed;
        }
        if let Some(s) = self.seed {
            self.model.seed = s;
            self.train.seed = s;
            self.gen_data.seed = s;
        }
        if let Some(o) = out {
            self.output_dir = o;
        }
    }
}

pub fn require<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    let p = path
        .as_deref()
        .ok_or_else(|| Error::Config(format!("`{key}` is required for this command")))?;
    if !p.exists() {
        return Err(Error::Config(format!("{key}: {} does not exist", p.display())));
    }
    Ok(p)
}
