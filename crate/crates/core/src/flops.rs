//! Analytic cost model. Counts follow the graph's accounting exactly (one
//! multiply-accumulate = one FLOP, see [`FlopCount`]), so measured and estimated totals
//! agree to the unit at desk scale.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{cost, FlopCount};
use crate::model::{aligned_extent, encoder_layout, ModelConfig, Normalization, VideoOptions, ENCODER_KERNEL};

/// Cost of one named component.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LayerCost {
    pub name: String,
    pub conv_macs: u64,
    pub pointwise: u64,
}

impl LayerCost {
    pub fn flops(&self) -> FlopCount {
        FlopCount {
            conv_macs: self.conv_macs,
            pointwise: self.pointwise,
        }
    }
}

/// Per-component costs of one single-image pass at a fixed input size.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CostModel {
    pub image: [usize; 2],
    pub features: [usize; 2],
    /// Input centering and scaling.
    pub input_scaling: u64,
    pub encoder: Vec<LayerCost>,
    /// ConvLSTM layers, per iteration.
    pub rnn: Vec<LayerCost>,
    /// Canvas accumulation, per iteration.
    pub canvas_add: u64,
    /// Upsampling the canvas to image size, per emitted prediction.
    pub upsample: u64,
}

fn sum(layers: &[LayerCost]) -> FlopCount {
    layers.iter().fold(FlopCount::default(), |acc, l| acc + l.flops())
}

pub fn times(f: FlopCount, k: u64) -> FlopCount {
    FlopCount {
        conv_macs: f.conv_macs * k,
        pointwise: f.pointwise * k,
    }
}

fn pointwise(p: u64) -> FlopCount {
    FlopCount {
        conv_macs: 0,
        pointwise: p,
    }
}

/// Pointwise ops per output element of a ConvLSTM step: four gate sums and bias adds,
/// the forget offset, three sigmoids, two tanh, three products and the cell sum.
pub const LSTM_POINTWISE_PER_ELEMENT: u64 = 18;

impl CostModel {
    /// Costs for one `height`×`width` image at inference.
    pub fn new(config: &ModelConfig, height: usize, width: usize) -> Result<Self> {
        config.validate()?;
        if height == 0 || width == 0 {
            return Err(Error::Config("image extent must be positive".into()));
        }
        let k2 = (ENCODER_KERNEL * ENCODER_KERNEL) as u64;
        let (mut h, mut w) = (height, width);
        let mut encoder = Vec::new();
        for (i, (c_in, c_out, stride, _)) in encoder_layout(&config.encoder).into_iter().enumerate() {
            h = h.div_ceil(stride);
            w = w.div_ceil(stride);
            let out = (c_out * h * w) as u64;
            let norm = match config.encoder.normalization {
                Normalization::Instance => cost::NORM_PER_ELEMENT,
                Normalization::Batch => cost::AFFINE_PER_ELEMENT,
            };
            encoder.push(LayerCost {
                name: format!("encoder.{i}"),
                conv_macs: out * c_in as u64 * k2,
                // normalization, bias, relu
                pointwise: out * (norm + 2),
            });
        }
        let plane = (h * w) as u64;
        let rk2 = (config.rnn_kernel * config.rnn_kernel) as u64;
        let mut c_in = config.encoder.feature_depth + config.classes;
        let mut rnn = Vec::new();
        for (i, &c_out) in config.rnn_widths.iter().enumerate() {
            let out = plane * c_out as u64;
            rnn.push(LayerCost {
                name: format!("rnn.{i}"),
                conv_macs: 4 * out * (c_in + c_out) as u64 * rk2,
                pointwise: LSTM_POINTWISE_PER_ELEMENT * out,
            });
            c_in = c_out;
        }
        let image_plane = (height * width) as u64;
        Ok(CostModel {
            image: [height, width],
            features: [h, w],
            input_scaling: 2 * 3 * image_plane,
            encoder,
            rnn,
            canvas_add: plane * config.classes as u64,
            upsample: cost::UPSAMPLE_PER_ELEMENT * image_plane * config.classes as u64,
        })
    }

    pub fn encoder_total(&self) -> FlopCount {
        sum(&self.encoder) + pointwise(self.input_scaling)
    }

    /// One recurrent iteration without upsampling.
    pub fn iteration_total(&self) -> FlopCount {
        sum(&self.rnn) + pointwise(self.canvas_add)
    }

    pub fn upsample_total(&self) -> FlopCount {
        pointwise(self.upsample)
    }

    /// A pass of `iterations` steps that upsamples `emitted` canvases.
    pub fn pass(&self, iterations: usize, emitted: usize) -> FlopCount {
        self.encoder_total()
            + times(self.iteration_total(), iterations as u64)
            + times(self.upsample_total(), emitted as u64)
    }
}

/// Multi-scale evaluation settings.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MultiScale {
    pub scales: Vec<f64>,
    pub flips: bool,
}

impl MultiScale {
    /// Six scales with left-right flips.
    pub fn standard() -> Self {
        MultiScale {
            scales: vec![0.5, 0.75, 1.0, 1.25, 1.5, 1.75],
            flips: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlopEstimate {
    pub iterations: usize,
    /// Single-scale breakdown at the native size.
    pub model: CostModel,
    pub encoder: FlopCount,
    pub rnn: FlopCount,
    pub upsample: FlopCount,
    /// Logit accumulation across multi-scale passes.
    pub averaging: FlopCount,
    pub total: FlopCount,
    /// Added cost of one more iteration with its prediction.
    pub marginal_per_iteration: u64,
    /// Encoder share of the total.
    pub encoder_share: f64,
}

/// Cost of segmenting one `height`×`width` image with `iterations` steps. Without
/// `multiscale` every iteration's prediction is emitted, matching anytime inference;
/// with it, each pass emits its final canvas at native resolution.
pub fn estimate_flops(
    config: &ModelConfig,
    height: usize,
    width: usize,
    iterations: usize,
    multiscale: Option<&MultiScale>,
) -> Result<FlopEstimate> {
    if iterations == 0 {
        return Err(Error::Config("iterations must be at least 1".into()));
    }
    let model = CostModel::new(config, height, width)?;
    let marginal = (model.iteration_total() + model.upsample_total()).total();
    let (encoder, rnn, upsample, averaging) = match multiscale {
        None => (
            model.encoder_total(),
            times(model.iteration_total(), iterations as u64),
            times(model.upsample_total(), iterations as u64),
            FlopCount::default(),
        ),
        Some(ms) => {
            if ms.scales.is_empty() {
                return Err(Error::Config("multi-scale evaluation needs at least one scale".into()));
            }
            let copies = if ms.flips { 2 } else { 1 };
            let mut enc = FlopCount::default();
            let mut rnn = FlopCount::default();
            for &s in &ms.scales {
                if !(s.is_finite() && s > 0.0) {
                    return Err(Error::Config("scales must be positive".into()));
                }
                let scaled = CostModel::new(config, aligned_extent(height, s), aligned_extent(width, s))?;
                enc += times(scaled.encoder_total(), copies);
                rnn += times(scaled.iteration_total(), copies * iterations as u64);
            }
            let passes = copies * ms.scales.len() as u64;
            let logits = (config.classes * height * width) as u64;
            (
                enc,
                rnn,
                times(model.upsample_total(), passes),
                pointwise(logits * (passes + 1)),
            )
        }
    };
    let total = encoder + rnn + upsample + averaging;
    Ok(FlopEstimate {
        iterations,
        encoder_share: encoder.total() as f64 / total.total() as f64,
        model,
        encoder,
        rnn,
        upsample,
        averaging,
        total,
        marginal_per_iteration: marginal,
    })
}

/// Costs of segmenting a video with canvas seeding and with independent cold passes.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VideoCost {
    pub frames: usize,
    pub warm: FlopCount,
    pub cold: FlopCount,
    pub ratio: f64,
}

/// `frames` frames: the seeded pipeline runs `cold_iters` on the first frame and
/// `warm_iters` afterwards; the baseline runs `cold_iters` on every frame. Each frame
/// upsamples only its final canvas.
pub fn video_cost(
    config: &ModelConfig,
    height: usize,
    width: usize,
    frames: usize,
    opts: &VideoOptions,
) -> Result<VideoCost> {
    if frames == 0 {
        return Err(Error::Config("video has no frames".into()));
    }
    let m = CostModel::new(config, height, width)?;
    let warm = m.pass(opts.cold_iters, 1) + times(m.pass(opts.warm_iters, 1), frames as u64 - 1);
    let cold = times(m.pass(opts.cold_iters, 1), frames as u64);
    Ok(VideoCost {
        frames,
        warm,
        cold,
        ratio: warm.total() as f64 / cold.total() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_scale_marginal_is_under_seven_gflops() {
        let cfg = ModelConfig::paper_scale();
        let m = CostModel::new(&cfg, 513, 513).unwrap();
        assert_eq!(m.features, [33, 33]);
        let r = m.iteration_total().total() as f64;
        assert!((6.0e9..7.0e9).contains(&r), "{r}");
    }

    #[test]
    fn linear_in_iterations() {
        let cfg = ModelConfig::default();
        let a = estimate_flops(&cfg, 65, 65, 3, None).unwrap();
        let b = estimate_flops(&cfg, 65, 65, 4, None).unwrap();
        assert_eq!(b.total.total() - a.total.total(), a.marginal_per_iteration);
    }
}
