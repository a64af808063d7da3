//! Subcommand drivers: validate inputs, run an experiment, write outputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use canvasrnn::checkpoint;
use canvasrnn::data::{self, generate_fine_structures, generate_shapes, generate_video, load_dataset, pnm, LabelMap, SegSample};
use canvasrnn::flops::{estimate_flops, video_cost, MultiScale};
use canvasrnn::model::{ModelConfig, SegmentationModel};
use canvasrnn::parallel::eval_threads;
use canvasrnn::train::{train, StepRecord};
use canvasrnn::{Error, Result, DEFAULT_IGNORE_LABEL};

use crate::config::{require, DataKind, RunConfig};
use crate::experiments;
use crate::svg::{line_plot, Series};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Train,
    Anytime,
    Video,
    Perturb,
    Flops,
    Psd,
    GenData,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Anytime => "anytime",
            Command::Video => "video",
            Command::Perturb => "perturb",
            Command::Flops => "flops",
            Command::Psd => "psd",
            Command::GenData => "gen-data",
        }
    }
}

/// Files written by a command, recorded in `outputs.json`.
#[derive(Serialize)]
pub struct Outputs {
    pub command: String,
    pub seed: Option<u64>,
    pub files: Vec<String>,
    #[serde(skip)]
    dir: PathBuf,
}

impl Outputs {
    fn create(dir: &Path, command: Command, seed: Option<u64>) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Outputs {
            command: command.name().to_string(),
            seed,
            files: Vec::new(),
            dir: dir.to_path_buf(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn record(&mut self, name: &str) {
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
    }

    fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.record(name);
        Ok(())
    }

    fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(format!("{name}: {e}")))?;
        self.write(name, text + "\n")
    }

    fn finish(mut self) -> Result<PathBuf> {
        self.files.sort();
        let path = self.path("outputs.json");
        let text = serde_json::to_string_pretty(&self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

/// Runs a command and returns a one-line summary.
pub fn run(command: Command, cfg: &RunConfig) -> Result<String> {
    match command {
        Command::Train => cmd_train(cfg),
        Command::Anytime => cmd_anytime(cfg),
        Command::Video => cmd_video(cfg),
        Command::Perturb => cmd_perturb(cfg),
        Command::Flops => cmd_flops(cfg),
        Command::Psd => cmd_psd(cfg),
        Command::GenData => cmd_gen_data(cfg),
    }
}

pub fn loss_csv(steps: &[StepRecord]) -> String {
    let mut out = String::from("step,lr,loss\n");
    for s in steps {
        let _ = writeln!(out, "{},{},{}", s.step, s.lr, s.loss);
    }
    out
}

fn check_sizes(samples: &[SegSample], crop: usize) -> Result<()> {
    for (i, s) in samples.iter().enumerate() {
        if s.height() < crop || s.width() < crop {
            return Err(Error::Config(format!(
                "sample {i} is {}x{}, smaller than the {crop} crop",
                s.height(),
                s.width()
            )));
        }
    }
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig) -> Result<String> {
    cfg.model.validate()?;
    cfg.train.validate()?;
    let manifest = require(&cfg.dataset, "dataset")?;
    let (m, samples) = load_dataset(manifest, cfg.train.ignore_label)?;
    if m.classes != cfg.model.classes {
        return Err(Error::Config(format!(
            "dataset has {} classes, model has {}",
            m.classes, cfg.model.classes
        )));
    }
    if samples.is_empty() {
        return Err(Error::Config("training dataset is empty".into()));
    }
    check_sizes(&samples, cfg.model.crop_size)?;
    let mut model = SegmentationModel::new(cfg.model.clone())?;

    let mut out = Outputs::create(&cfg.output_dir, Command::Train, cfg.seed)?;
    let ckpt = out.path("checkpoint.bin");
    let every = cfg.train.checkpoint_every;
    let mut history = Vec::new();
    let result = train(&mut model, &samples, &cfg.train, |m, r| {
        history.push(*r);
        if every > 0 && (r.step + 1) % every == 0 {
            checkpoint::save(m, &ckpt)?;
        }
        Ok(())
    });
    out.write("loss.csv", loss_csv(&history))?;
    if every > 0 && ckpt.exists() {
        out.record("checkpoint.bin");
    }
    if let Err(e) = result {
        out.finish()?;
        return Err(e);
    }
    checkpoint::save(&model, &ckpt)?;
    out.record("checkpoint.bin");
    let points: Vec<(f64, f64)> = history.iter().map(|r| (r.step as f64, r.loss)).collect();
    out.write(
        "loss.svg",
        line_plot("training loss", "step", "loss", &[Series { label: "loss", points }]),
    )?;
    let last = history.last().map_or(f64::NAN, |r| r.loss);
    out.finish()?;
    Ok(format!("trained {} steps, final loss {last:.5}", history.len()))
}

fn load_eval(cfg: &RunConfig) -> Result<(SegmentationModel, Vec<SegSample>)> {
    let model = checkpoint::load(require(&cfg.checkpoint, "checkpoint")?)?;
    let (m, samples) = load_dataset(require(&cfg.eval_dataset, "eval_dataset")?, DEFAULT_IGNORE_LABEL)?;
    if m.classes != model.classes() {
        return Err(Error::Config(format!(
            "evaluation set has {} classes, checkpoint has {}",
            m.classes,
            model.classes()
        )));
    }
    if samples.is_empty() {
        return Err(Error::Config("evaluation set is empty".into()));
    }
    for s in &samples {
        model.check_input(s.image_shape())?;
    }
    Ok((model, samples))
}

pub fn cmd_anytime(cfg: &RunConfig) -> Result<String> {
    let threads = eval_threads()?;
    let (model, samples) = load_eval(cfg)?;
    let rows = experiments::anytime(&model, &samples, cfg.anytime.max_iters, threads)?;
    let mut out = Outputs::create(&cfg.output_dir, Command::Anytime, cfg.seed)?;
    let mut csv = String::from("iteration,flops,miou\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{},{}", r.iteration, r.flops, r.miou);
    }
    out.write("anytime.csv", csv)?;
    let points = rows.iter().map(|r| (r.flops as f64, r.miou)).collect();
    out.write(
        "anytime.svg",
        line_plot("accuracy vs cost", "FLOPs per image", "mIOU", &[Series { label: "mIOU", points }]),
    )?;
    out.finish()?;
    let last = rows.last().expect("max_iters >= 1");
    Ok(format!("{} iterations, final mIOU {:.4}", last.iteration, last.miou))
}

/// Video manifests: the path itself, or `*/manifest.json` under a directory, sorted.
fn video_manifests(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut found = Vec::new();
    for entry in std::fs::read_dir(path).map_err(|e| Error::io(path, e))? {
        let p = entry.map_err(|e| Error::io(path, e))?.path().join("manifest.json");
        if p.is_file() {
            found.push(p);
        }
    }
    found.sort();
    if found.is_empty() {
        return Err(Error::Config(format!("no video manifests under {}", path.display())));
    }
    Ok(found)
}

pub fn cmd_video(cfg: &RunConfig) -> Result<String> {
    let threads = eval_threads()?;
    let model = checkpoint::load(require(&cfg.checkpoint, "checkpoint")?)?;
    let manifests = video_manifests(require(&cfg.video.videos, "video.videos")?)?;
    let mut videos = Vec::new();
    for m in &manifests {
        let (man, frames) = load_dataset(m, DEFAULT_IGNORE_LABEL)?;
        if man.classes != model.classes() {
            return Err(Error::Config(format!("{}: class count differs from the checkpoint", m.display())));
        }
        for f in &frames {
            model.check_input(f.image_shape())?;
        }
        videos.push(frames);
    }
    let report = experiments::video(&model, &videos, cfg.video.options(), threads)?;
    let mut out = Outputs::create(&cfg.output_dir, Command::Video, cfg.seed)?;
    let mut csv = String::from("video,frame,warm_miou,cold_miou,cold_short_miou\n");
    for (v, r) in report.videos.iter().enumerate() {
        for (f, labels) in r.warm_labels.iter().enumerate() {
            let _ = writeln!(
                csv,
                "{v},{f},{},{},{}",
                r.warm_frame_miou[f], r.cold_frame_miou[f], r.cold_short_frame_miou[f]
            );
            let (h, w) = (videos[v][f].height(), videos[v][f].width());
            let map = LabelMap {
                height: h,
                width: w,
                data: labels.clone(),
            };
            out.write(&format!("video_{v:03}/{f:04}_pred.pgm"), pnm::encode_map(&map))?;
        }
    }
    out.write("video.csv", csv)?;
    out.write_json("video.json", &report)?;
    out.finish()?;
    Ok(format!(
        "warm mIOU {:.4}, cold mIOU {:.4}, FLOPs ratio {:.3}",
        report.mean_warm_miou, report.mean_cold_miou, report.flops_ratio
    ))
}

fn selected<'a>(samples: &'a [SegSample], indices: &Option<Vec<usize>>) -> Result<Vec<(usize, &'a SegSample)>> {
    match indices {
        None => Ok(samples.iter().enumerate().collect()),
        Some(idx) => idx
            .iter()
            .map(|&i| {
                samples
                    .get(i)
                    .map(|s| (i, s))
                    .ok_or_else(|| Error::Config(format!("sample index {i} out of range")))
            })
            .collect(),
    }
}

pub fn cmd_perturb(cfg: &RunConfig) -> Result<String> {
    let threads = eval_threads()?;
    let (model, samples) = load_eval(cfg)?;
    let chosen = selected(&samples, &cfg.perturb.samples)?;
    if let Some(s) = cfg.perturb.scale {
        if !(s.is_finite() && s >= 0.0) {
            return Err(Error::Config("perturb.scale must be a non-negative number".into()));
        }
    }
    let scale = match cfg.perturb.scale {
        Some(s) => s,
        None => experiments::logit_scale(&model, &samples, threads)?,
    };
    let report = experiments::perturb(&model, &chosen, cfg.perturb.mode, cfg.perturb.max_iters, scale, threads)?;
    let mut out = Outputs::create(&cfg.output_dir, Command::Perturb, cfg.seed)?;
    let mut csv = String::from("sample,iteration,agreement,fill\n");
    for s in &report.samples {
        for (t, a) in s.agreement.iter().enumerate() {
            let fill = s.fill.as_ref().map_or(String::new(), |f| f[t].to_string());
            let _ = writeln!(csv, "{},{},{a},{fill}", s.index, t + 1);
        }
    }
    out.write("agreement.csv", csv)?;
    out.write_json("perturb.json", &report)?;
    let n = report.samples.len().max(1) as f64;
    let iters = report.samples.first().map_or(0, |s| s.agreement.len());
    let mean: Vec<(f64, f64)> = (0..iters)
        .map(|t| ((t + 1) as f64, report.samples.iter().map(|s| s.agreement[t]).sum::<f64>() / n))
        .collect();
    out.write(
        "agreement.svg",
        line_plot("agreement with unperturbed prediction", "iteration", "agreement", &[Series {
            label: "mean",
            points: mean.clone(),
        }]),
    )?;
    out.finish()?;
    let last = mean.last().map_or(f64::NAN, |p| p.1);
    Ok(format!("{:?} at scale {scale:.3}: mean final agreement {last:.4}", cfg.perturb.mode))
}

#[derive(Serialize)]
struct FlopsReport {
    config: ModelConfig,
    image_size: usize,
    marginal_per_iteration: u64,
    single_scale: canvasrnn::flops::FlopEstimate,
    multiscale: canvasrnn::flops::FlopEstimate,
    video: canvasrnn::flops::VideoCost,
}

pub fn cmd_flops(cfg: &RunConfig) -> Result<String> {
    let model = if cfg.flops.paper_scale {
        ModelConfig::paper_scale()
    } else {
        cfg.model.clone()
    };
    model.validate()?;
    let size = cfg.flops.image_size.unwrap_or(model.crop_size);
    let single = estimate_flops(&model, size, size, cfg.flops.iterations, None)?;
    let ms = MultiScale {
        scales: cfg.flops.scales.clone(),
        flips: cfg.flops.flips,
    };
    let multiscale = estimate_flops(&model, size, size, cfg.flops.iterations, Some(&ms))?;
    let video = video_cost(&model, size, size, cfg.flops.video_frames, &cfg.video.options())?;
    let report = FlopsReport {
        marginal_per_iteration: single.marginal_per_iteration,
        config: model,
        image_size: size,
        single_scale: single,
        multiscale,
        video,
    };
    let mut out = Outputs::create(&cfg.output_dir, Command::Flops, cfg.seed)?;
    out.write_json("flops.json", &report)?;
    out.finish()?;
    Ok(format!(
        "marginal {:.4e} FLOPs/iteration, {} iterations {:.4e}, encoder share {:.3}",
        report.marginal_per_iteration as f64,
        report.single_scale.iterations,
        report.single_scale.total.total() as f64,
        report.single_scale.encoder_share
    ))
}

pub fn cmd_psd(cfg: &RunConfig) -> Result<String> {
    let threads = eval_threads()?;
    let (manifest, samples) = load_dataset(require(&cfg.eval_dataset, "eval_dataset")?, DEFAULT_IGNORE_LABEL)?;
    let predictions: Vec<Vec<u8>> = match &cfg.psd.predictions {
        Some(_) => {
            let dir = require(&cfg.psd.predictions, "psd.predictions")?;
            samples
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let map = pnm::read_map(&dir.join(format!("{i:04}.pgm")))?;
                    if (map.height, map.width) != (s.height(), s.width()) {
                        return Err(Error::Config(format!("prediction {i} does not match its label size")));
                    }
                    Ok(map.data)
                })
                .collect::<Result<_>>()?
        }
        None => {
            let model = checkpoint::load(require(&cfg.checkpoint, "checkpoint")?)?;
            let iters = cfg.psd.iterations.unwrap_or(model.config.iterations);
            for s in &samples {
                model.check_input(s.image_shape())?;
            }
            canvasrnn::parallel::map_ordered(&samples, threads, |s| {
                Ok(model.predict(&s.image, iters, None)?.final_labels().to_vec())
            })?
        }
    };
    let labels: Vec<&LabelMap> = samples.iter().map(|s| &s.label).collect();
    let spectra = experiments::psd(&labels, &predictions, manifest.classes)?;
    let mut out = Outputs::create(&cfg.output_dir, Command::Psd, cfg.seed)?;
    let mut csv = String::from("class,source,bin,power,cdf\n");
    for c in &spectra {
        for (source, p) in [("truth", &c.truth), ("prediction", &c.prediction)] {
            for (b, (pw, cdf)) in p.power.iter().zip(&p.cdf).enumerate() {
                let _ = writeln!(csv, "{},{source},{b},{pw},{cdf}", c.class);
            }
        }
    }
    out.write("psd.csv", csv)?;
    #[derive(Serialize)]
    struct Summary {
        class: u8,
        truth_high_frequency_mass: f64,
        prediction_high_frequency_mass: f64,
    }
    let summary: Vec<Summary> = spectra
        .iter()
        .map(|c| Summary {
            class: c.class,
            truth_high_frequency_mass: c.truth.high_frequency_mass(),
            prediction_high_frequency_mass: c.prediction.high_frequency_mass(),
        })
        .collect();
    out.write_json("psd_summary.json", &summary)?;
    out.finish()?;
    Ok(format!("spectra for {} classes over {} images", spectra.len(), samples.len()))
}

#[derive(Serialize)]
struct Motion {
    velocity: [f64; 2],
    displacements: Vec<[f64; 2]>,
}

pub fn cmd_gen_data(cfg: &RunConfig) -> Result<String> {
    let g = &cfg.gen_data;
    let out_dir = &cfg.output_dir;
    match g.kind {
        DataKind::Shapes | DataKind::Fine => {
            let samples = if g.kind == DataKind::Shapes {
                generate_shapes(g.seed, g.count, g.size, g.classes)?
            } else {
                generate_fine_structures(g.seed, g.count, g.size, g.classes)?
            };
            let mut out = Outputs::create(out_dir, Command::GenData, cfg.seed)?;
            data::save_dataset(out_dir, &samples, g.classes)?;
            for i in 0..samples.len() {
                for suffix in [".ppm", "_label.pgm", "_inst.pgm"] {
                    out.record(&format!("{i:04}{suffix}"));
                }
            }
            out.record("manifest.json");
            out.finish()?;
            Ok(format!("wrote {} samples", samples.len()))
        }
        DataKind::Video => {
            if !(g.speed.is_finite() && g.speed >= 0.0) {
                return Err(Error::Config("gen_data.speed must be a non-negative number".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(g.seed);
            let mut sequences = Vec::new();
            for v in 0..g.count {
                let velocity = g.velocity.unwrap_or_else(|| {
                    let a = rng.gen_range(0.0..std::f64::consts::TAU);
                    [g.speed * a.cos(), g.speed * a.sin()]
                });
                let seq = generate_video(g.seed.wrapping_add(v as u64), g.frames, g.size, g.classes, (velocity[0], velocity[1]))?;
                sequences.push((velocity, seq));
            }
            let mut out = Outputs::create(out_dir, Command::GenData, cfg.seed)?;
            for (v, (velocity, seq)) in sequences.iter().enumerate() {
                let name = format!("video_{v:03}");
                data::save_dataset(&out_dir.join(&name), &seq.frames, g.classes)?;
                for i in 0..seq.frames.len() {
                    for suffix in [".ppm", "_label.pgm", "_inst.pgm"] {
                        out.record(&format!("{name}/{i:04}{suffix}"));
                    }
                }
                out.record(&format!("{name}/manifest.json"));
                let motion = Motion {
                    velocity: *velocity,
                    displacements: seq.displacements.iter().map(|d| [d.0, d.1]).collect(),
                };
                out.write_json(&format!("{name}/motion.json"), &motion)?;
            }
            out.finish()?;
            Ok(format!("wrote {} videos of {} frames", g.count, g.frames))
        }
    }
}
