//! Evaluation experiments on a trained model, independent of file I/O.

use serde::Serialize;

use canvasrnn::data::{LabelMap, SegSample};
use canvasrnn::flops::{estimate_flops, video_cost, VideoCost};
use canvasrnn::metrics::{fill_fraction, hole_mask, ConfusionMatrix};
use canvasrnn::model::{SegmentationModel, VideoOptions};
use canvasrnn::parallel::map_ordered;
use canvasrnn::psd::{class_mask, power_spectral_density, RadialPsd};
use canvasrnn::{Error, Result, Shape, Tensor, DEFAULT_IGNORE_LABEL};

use crate::config::PerturbMode;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AnytimeRow {
    pub iteration: usize,
    /// Cumulative cost per image of producing every prediction up to this iteration.
    pub flops: u64,
    pub miou: f64,
}

fn single(sample: &SegSample) -> Result<()> {
    if sample.image.shape().n != 1 {
        return Err(Error::shape("evaluate", "samples must hold one image"));
    }
    Ok(())
}

/// mIOU and cost after every iteration up to `max_iters`, pooled over `samples`.
pub fn anytime(model: &SegmentationModel, samples: &[SegSample], max_iters: usize, threads: usize) -> Result<Vec<AnytimeRow>> {
    if max_iters == 0 {
        return Err(Error::Config("max_iters must be at least 1".into()));
    }
    let k = model.classes();
    let per_sample = map_ordered(samples, threads, |s| {
        single(s)?;
        let p = model.predict(&s.image, max_iters, None)?;
        p.labels
            .iter()
            .map(|l| {
                let mut cm = ConfusionMatrix::new(k);
                cm.add(l, &s.label.data, DEFAULT_IGNORE_LABEL)?;
                Ok(cm)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let (h, w) = samples
        .first()
        .map(|s| (s.height(), s.width()))
        .ok_or_else(|| Error::Config("evaluation set is empty".into()))?;
    (0..max_iters)
        .map(|t| {
            let mut cm = ConfusionMatrix::new(k);
            for s in &per_sample {
                cm.merge(&s[t]);
            }
            Ok(AnytimeRow {
                iteration: t + 1,
                flops: estimate_flops(&model.config, h, w, t + 1, None)?.total.total(),
                miou: cm.iou().mean,
            })
        })
        .collect()
}

/// Mean over feature positions of the largest logit of the final canvas after the
/// trained number of iterations from a zero canvas.
pub fn logit_scale(model: &SegmentationModel, samples: &[SegSample], threads: usize) -> Result<f64> {
    let k = model.classes();
    let sums = map_ordered(samples, threads, |s| {
        let p = model.predict(&s.image, model.config.iterations, None)?;
        let c = p.final_canvas();
        let sh = c.shape();
        let mut total = 0.0;
        for y in 0..sh.h {
            for x in 0..sh.w {
                total += (0..k).map(|j| c.at(0, j, y, x)).fold(f64::NEG_INFINITY, f64::max);
            }
        }
        Ok((total, sh.h * sh.w))
    })?;
    let (t, n) = sums.iter().fold((0.0, 0usize), |(a, b), (t, n)| (a + t, b + n));
    if n == 0 {
        return Err(Error::Config("evaluation set is empty".into()));
    }
    Ok(t / n as f64)
}

/// Label at each feature position, sampled at the image pixel it aligns with.
pub fn labels_at_features(label: &LabelMap, fh: usize, fw: usize) -> Vec<u8> {
    let map = |i: usize, n: usize, m: usize| if m <= 1 { 0 } else { (i * (n - 1) + (m - 1) / 2) / (m - 1) };
    let mut out = Vec::with_capacity(fh * fw);
    for y in 0..fh {
        for x in 0..fw {
            out.push(label.get(map(y, label.height, fh), map(x, label.width, fw)));
        }
    }
    out
}

/// Foreground class `c` of `k` classes replaced by the next foreground class, or by
/// background when there is only one foreground class.
pub fn wrong_class(c: u8, k: usize) -> u8 {
    match (c, k) {
        (0, _) => 0,
        (_, 2) => 0,
        _ => ((c as usize % (k - 1)) + 1) as u8,
    }
}

/// Initial canvas for a perturbation mode: `None` for zeros, otherwise one-hot logits of
/// magnitude `scale` from the ground truth, with foreground moved to another class in
/// `WrongClass` mode. Ignored pixels stay zero.
pub fn perturbed_canvas(mode: PerturbMode, label: &LabelMap, k: usize, fh: usize, fw: usize, scale: f64) -> Option<Tensor> {
    if mode == PerturbMode::Zeros {
        return None;
    }
    let labels = labels_at_features(label, fh, fw);
    let mut t = Tensor::zeros(Shape::new(1, k, fh, fw));
    for (i, &l) in labels.iter().enumerate() {
        if l as usize >= k {
            continue;
        }
        let c = match mode {
            PerturbMode::WrongClass => wrong_class(l, k),
            _ => l,
        };
        t.set(0, c as usize, i / fw, i % fw, scale);
    }
    Some(t)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PerturbSample {
    pub index: usize,
    /// Pixel agreement with the zero-canvas final prediction after each iteration.
    pub agreement: Vec<f64>,
    /// Fraction of enclosed background predicted as foreground after each iteration.
    pub fill: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PerturbReport {
    pub mode: PerturbMode,
    pub scale: f64,
    pub samples: Vec<PerturbSample>,
}

impl PerturbReport {
    /// First iteration (1-based) at which a sample's agreement reaches `level`.
    pub fn recovery_iteration(s: &PerturbSample, level: f64) -> Option<usize> {
        s.agreement.iter().position(|&a| a >= level).map(|i| i + 1)
    }

    /// Mean fill fraction per iteration over samples with holes.
    pub fn mean_fill(&self) -> Vec<f64> {
        let with: Vec<&Vec<f64>> = self.samples.iter().filter_map(|s| s.fill.as_ref()).collect();
        let n = self.samples.first().map_or(0, |s| s.agreement.len());
        (0..n)
            .map(|t| {
                if with.is_empty() {
                    0.0
                } else {
                    with.iter().map(|f| f[t]).sum::<f64>() / with.len() as f64
                }
            })
            .collect()
    }
}

pub fn perturb(
    model: &SegmentationModel,
    samples: &[(usize, &SegSample)],
    mode: PerturbMode,
    max_iters: usize,
    scale: f64,
    threads: usize,
) -> Result<PerturbReport> {
    if max_iters == 0 {
        return Err(Error::Config("max_iters must be at least 1".into()));
    }
    let k = model.classes();
    let rows = map_ordered(samples, threads, |&(index, s)| {
        single(s)?;
        let reference = model.predict(&s.image, model.config.iterations, None)?;
        let target = reference.final_labels();
        let fs = reference.features.shape();
        let canvas = perturbed_canvas(mode, &s.label, k, fs.h, fs.w, scale);
        let p = model.predict(&s.image, max_iters, canvas.as_ref())?;
        let agreement = p.labels.iter().map(|l| canvasrnn::data::agreement(l, target)).collect();
        let holes = hole_mask(&s.label);
        let fill = p
            .labels
            .iter()
            .map(|l| fill_fraction(l, &holes))
            .collect::<Option<Vec<f64>>>();
        Ok(PerturbSample { index, agreement, fill })
    })?;
    Ok(PerturbReport { mode, scale, samples: rows })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VideoResult {
    /// Per-frame predictions of the seeded pipeline.
    #[serde(skip)]
    pub warm_labels: Vec<Vec<u8>>,
    pub warm_miou: f64,
    pub cold_miou: f64,
    /// Cold pipeline limited to the warm iteration count.
    pub cold_short_miou: f64,
    pub warm_frame_miou: Vec<f64>,
    pub cold_frame_miou: Vec<f64>,
    pub cold_short_frame_miou: Vec<f64>,
    pub warm_flops: u64,
    pub cold_flops: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VideoReport {
    pub options: VideoOptions,
    pub videos: Vec<VideoResult>,
    pub mean_warm_miou: f64,
    pub mean_cold_miou: f64,
    pub warm_flops: u64,
    pub cold_flops: u64,
    pub flops_ratio: f64,
    pub estimate: VideoCost,
}

fn pooled(preds: &[Vec<u8>], frames: &[SegSample], k: usize) -> Result<(f64, Vec<f64>)> {
    let mut all = ConfusionMatrix::new(k);
    let mut per = Vec::new();
    for (p, f) in preds.iter().zip(frames) {
        let mut cm = ConfusionMatrix::new(k);
        cm.add(p, &f.label.data, DEFAULT_IGNORE_LABEL)?;
        per.push(cm.iou().mean);
        all.merge(&cm);
    }
    Ok((all.iou().mean, per))
}

/// Seeded (warm) versus per-frame cold segmentation of each video. mIOU is pooled over
/// the frames of a video; the summary averages videos.
pub fn video(model: &SegmentationModel, videos: &[Vec<SegSample>], opts: VideoOptions, threads: usize) -> Result<VideoReport> {
    let first = videos
        .first()
        .and_then(|v| v.first())
        .ok_or_else(|| Error::Config("no video frames to evaluate".into()))?;
    let (h, w) = (first.height(), first.width());
    let k = model.classes();
    let results = map_ordered(videos, threads, |frames| {
        let images: Vec<Tensor> = frames.iter().map(|f| f.image.clone()).collect();
        let warm = model.segment_video(&images, opts)?;
        let cold = model.segment_frames_cold(&images, opts.cold_iters)?;
        let short = model.segment_frames_cold(&images, opts.warm_iters)?;
        let labels = |v: &canvasrnn::model::VideoSegmentation| v.frames.iter().map(|f| f.labels.clone()).collect::<Vec<_>>();
        let warm_labels = labels(&warm);
        let (warm_miou, warm_frame_miou) = pooled(&warm_labels, frames, k)?;
        let (cold_miou, cold_frame_miou) = pooled(&labels(&cold), frames, k)?;
        let (cold_short_miou, cold_short_frame_miou) = pooled(&labels(&short), frames, k)?;
        Ok(VideoResult {
            warm_labels,
            warm_miou,
            cold_miou,
            cold_short_miou,
            warm_frame_miou,
            cold_frame_miou,
            cold_short_frame_miou,
            warm_flops: warm.flops.total(),
            cold_flops: cold.flops.total(),
        })
    })?;
    let n = results.len() as f64;
    let warm_flops: u64 = results.iter().map(|r| r.warm_flops).sum();
    let cold_flops: u64 = results.iter().map(|r| r.cold_flops).sum();
    Ok(VideoReport {
        options: opts,
        mean_warm_miou: results.iter().map(|r| r.warm_miou).sum::<f64>() / n,
        mean_cold_miou: results.iter().map(|r| r.cold_miou).sum::<f64>() / n,
        warm_flops,
        cold_flops,
        flops_ratio: warm_flops as f64 / cold_flops as f64,
        estimate: video_cost(&model.config, h, w, videos[0].len(), &opts)?,
        videos: results,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassPsd {
    pub class: u8,
    pub truth: RadialPsd,
    pub prediction: RadialPsd,
}

/// Radial spectra of the binary per-class masks of labels and predictions, summed over
/// images, for every class present in either.
pub fn psd(labels: &[&LabelMap], predictions: &[Vec<u8>], classes: usize) -> Result<Vec<ClassPsd>> {
    if labels.len() != predictions.len() || labels.is_empty() {
        return Err(Error::Config(format!(
            "{} label maps vs {} predictions",
            labels.len(),
            predictions.len()
        )));
    }
    let mut out = Vec::new();
    for c in 0..classes as u8 {
        let present = labels.iter().any(|l| l.data.contains(&c)) || predictions.iter().any(|p| p.contains(&c));
        if !present {
            continue;
        }
        let mut truth = Vec::new();
        let mut pred = Vec::new();
        for (l, p) in labels.iter().zip(predictions) {
            truth.push(power_spectral_density(&class_mask(&l.data, c), l.height, l.width)?);
            pred.push(power_spectral_density(&class_mask(p, c), l.height, l.width)?);
        }
        out.push(ClassPsd {
            class: c,
            truth: RadialPsd::accumulate(&truth)?,
            prediction: RadialPsd::accumulate(&pred)?,
        });
    }
    Ok(out)
}
