//! The recurrent segmentation network: encoder features, a three-layer ConvLSTM stack
//! that adds its output to a logit canvas every iteration, and argmax over the
//! bilinearly upsampled canvas.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::convlstm::{self, ConvLstmParams, ConvLstmState, ConvLstmVars, StateVars};
use crate::error::{Error, Result};
use crate::graph::{ChannelStats, FlopCount, Graph, Var};
use crate::kernels::ConvGeometry;
use crate::tensor::{resize_bilinear, Shape, Tensor};

/// Input extents must be one more than a multiple of this.
pub const SIZE_ALIGNMENT: usize = 32;
pub const NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_MOMENTUM: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Per-sample, per-channel standardization with no running state.
    Instance,
    /// Batch statistics while training, running statistics at inference.
    #[default]
    Batch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Widths of the stride-2 stages; their count fixes the output stride.
    pub stage_widths: Vec<usize>,
    /// Channel count of the emitted features.
    pub feature_depth: usize,
    pub output_stride: usize,
    /// Dilation of each unit in the final, full-resolution stage.
    pub dilations: Vec<usize>,
    pub normalization: Normalization,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            stage_widths: vec![16],
            feature_depth: 32,
            output_stride: 2,
            dilations: vec![1, 2, 4, 8],
            normalization: Normalization::Batch,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let s = self.output_stride;
        if s < 2 || !s.is_power_of_two() {
            return Err(Error::Config(format!("output stride {s} is not a power of two >= 2")));
        }
        if 1usize << self.stage_widths.len() != s {
            return Err(Error::Config(format!(
                "{} stride-2 stages cannot give output stride {s}",
                self.stage_widths.len()
            )));
        }
        if self.dilations.is_empty() || self.dilations.contains(&0) {
            return Err(Error::Config("final stage needs at least one positive dilation".into()));
        }
        if self.feature_depth == 0 || self.stage_widths.contains(&0) {
            return Err(Error::Config("encoder widths must be positive".into()));
        }
        Ok(())
    }

    /// Feature-map extent for an input extent.
    pub fn feature_extent(&self, input: usize) -> usize {
        input.div_ceil(self.output_stride)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    /// ConvLSTM output widths; the last must equal `classes`.
    pub rnn_widths: Vec<usize>,
    pub classes: usize,
    /// Unrolled iterations used for training.
    pub iterations: usize,
    pub crop_size: usize,
    pub rnn_kernel: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            rnn_widths: vec![32, 16, 4],
            classes: 4,
            iterations: 6,
            crop_size: 65,
            rnn_kernel: 1,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Dimensions of the full-size network used for cost accounting only: 2048 feature
    /// channels at output stride 16, ConvLSTM widths 512/256/21, 513×513 crops.
    pub fn paper_scale() -> Self {
        ModelConfig {
            encoder: EncoderConfig {
                stage_widths: vec![64, 128, 256, 512],
                feature_depth: 2048,
                output_stride: 16,
                dilations: vec![2, 4, 8],
                normalization: Normalization::Batch,
            },
            rnn_widths: vec![512, 256, 21],
            classes: 21,
            iterations: 6,
            crop_size: 513,
            rnn_kernel: 1,
            seed: 0,
        }
    }

    /// The small configuration used for whole-model gradient checks.
    pub fn tiny() -> Self {
        ModelConfig {
            encoder: EncoderConfig {
                stage_widths: vec![4, 4, 6],
                feature_depth: 6,
                output_stride: 8,
                dilations: vec![2, 4, 8],
                normalization: Normalization::Instance,
            },
            rnn_widths: vec![8, 8, 3],
            classes: 3,
            iterations: 6,
            crop_size: 33,
            rnn_kernel: 1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.rnn_widths.len() != 3 {
            return Err(Error::Config(format!(
                "expected 3 ConvLSTM layers, got {}",
                self.rnn_widths.len()
            )));
        }
        if self.rnn_widths.contains(&0) {
            return Err(Error::Config("ConvLSTM widths must be positive".into()));
        }
        if self.classes < 2 || self.classes > 255 {
            return Err(Error::Config(format!("class count {} outside 2..=255", self.classes)));
        }
        if self.rnn_widths[2] != self.classes {
            return Err(Error::Config(format!(
                "last ConvLSTM width {} must equal the class count {}",
                self.rnn_widths[2], self.classes
            )));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        check_extent("crop_size", self.crop_size)?;
        if self.rnn_kernel % 2 == 0 {
            return Err(Error::Config("ConvLSTM kernel must be odd".into()));
        }
        Ok(())
    }
}

fn check_extent(what: &str, extent: usize) -> Result<()> {
    if extent < SIZE_ALIGNMENT + 1 || (extent - 1) % SIZE_ALIGNMENT != 0 {
        return Err(Error::Config(format!(
            "{what} {extent} is not an integer divisible by {SIZE_ALIGNMENT}, plus one"
        )));
    }
    Ok(())
}

/// Rounds `extent * scale` to the nearest size of the form 32k + 1 (k >= 1).
pub fn aligned_extent(extent: usize, scale: f64) -> usize {
    let k = ((extent - 1) as f64 * scale / SIZE_ALIGNMENT as f64).round().max(1.0) as usize;
    k * SIZE_ALIGNMENT + 1
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer {
    pub name: String,
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub dilation: usize,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

impl EncoderLayer {
    pub fn geometry(&self) -> ConvGeometry {
        ConvGeometry::same(self.stride, self.dilation)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub encoder: Vec<EncoderLayer>,
    pub rnn: Vec<ConvLstmParams>,
}

/// Layout of encoder layers implied by a config: (c_in, c_out, stride, dilation).
pub fn encoder_layout(cfg: &EncoderConfig) -> Vec<(usize, usize, usize, usize)> {
    let mut layers = Vec::new();
    let mut c_in = 3;
    for &w in &cfg.stage_widths {
        layers.push((c_in, w, 2, 1));
        c_in = w;
    }
    for &d in &cfg.dilations {
        layers.push((c_in, cfg.feature_depth, 1, d));
        c_in = cfg.feature_depth;
    }
    layers
}

pub const ENCODER_KERNEL: usize = 3;

impl ModelParams {
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let layout = encoder_layout(&config.encoder);
        let n_strided = config.encoder.stage_widths.len();
        let encoder = layout
            .iter()
            .enumerate()
            .map(|(i, &(c_in, c_out, stride, dilation))| EncoderLayer {
                name: if i < n_strided {
                    format!("encoder.stage{i}")
                } else {
                    format!("encoder.final{}", i - n_strided)
                },
                weight: convlstm::glorot_normal(c_out, c_in, ENCODER_KERNEL, &mut rng),
                bias: Tensor::vector(vec![0.0; c_out]),
                stride,
                dilation,
                running_mean: Tensor::vector(vec![0.0; c_out]),
                running_var: Tensor::vector(vec![1.0; c_out]),
            })
            .collect();
        let w = &config.rnn_widths;
        let inputs = [config.encoder.feature_depth + config.classes, w[0], w[1]];
        let rnn = inputs
            .iter()
            .zip(w)
            .map(|(&c_in, &c_out)| ConvLstmParams::init(c_in, c_out, config.rnn_kernel, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(ModelParams { encoder, rnn })
    }

    /// Trainable tensors with stable names, in a fixed order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for l in &self.encoder {
            out.push((format!("{}.weight", l.name), &l.weight));
            out.push((format!("{}.bias", l.name), &l.bias));
        }
        for (i, p) in self.rnn.iter().enumerate() {
            for (name, t) in convlstm::PARAM_NAMES.iter().zip(p.tensors()) {
                out.push((format!("rnn.{i}.{name}"), t));
            }
        }
        out
    }

    /// Same order as [`ModelParams::named`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for l in &mut self.encoder {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        for p in &mut self.rnn {
            out.extend(p.tensors_mut());
        }
        out
    }

    /// Non-trainable running statistics of batch-normalized layers.
    pub fn buffers(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for l in &self.encoder {
            out.push((format!("{}.running_mean", l.name), &l.running_mean));
            out.push((format!("{}.running_var", l.name), &l.running_var));
        }
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for l in &mut self.encoder {
            out.push(&mut l.running_mean);
            out.push(&mut l.running_var);
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }
}

/// Parameters registered on a graph.
pub struct BoundModel {
    pub encoder: Vec<(Var, Var)>,
    pub rnn: Vec<ConvLstmVars>,
}

impl BoundModel {
    /// Leaves in the order of [`ModelParams::named`].
    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for &(w, b) in &self.encoder {
            out.push(w);
            out.push(b);
        }
        for r in &self.rnn {
            out.extend(r.all());
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-pixel, per-class logits at feature resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct Canvas {
    pub logits: Tensor,
    /// Number of additive updates applied since the canvas was created or seeded.
    pub iteration: usize,
}

impl Canvas {
    pub fn zeros(n: usize, classes: usize, h: usize, w: usize) -> Self {
        Canvas {
            logits: Tensor::zeros(Shape::new(n, classes, h, w)),
            iteration: 0,
        }
    }

    pub fn seeded(logits: Tensor) -> Self {
        Canvas {
            logits,
            iteration: 0,
        }
    }
}

/// Graph handles produced by one recurrent iteration.
#[derive(Clone, Copy, Debug)]
pub struct IterationVars {
    pub canvas: Var,
    /// Output of the last ConvLSTM layer, i.e. the additive update.
    pub delta: Var,
}

/// Anytime output: one prediction per iteration.
#[derive(Clone, Debug)]
pub struct Prediction {
    /// Per iteration, `n*h*w` class indices at input resolution.
    pub labels: Vec<Vec<u8>>,
    /// Per iteration, the canvas after that iteration.
    pub canvases: Vec<Tensor>,
    /// Per iteration, the update added to the canvas.
    pub deltas: Vec<Tensor>,
    pub features: Tensor,
    pub flops: FlopCount,
}

impl Prediction {
    pub fn final_labels(&self) -> &[u8] {
        self.labels.last().expect("at least one iteration")
    }

    pub fn final_canvas(&self) -> &Tensor {
        self.canvases.last().expect("at least one iteration")
    }
}

#[derive(Clone, Debug)]
pub struct MultiScalePrediction {
    pub labels: Vec<u8>,
    /// Averaged logits at input resolution.
    pub logits: Tensor,
    pub flops: FlopCount,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VideoOptions {
    pub cold_iters: usize,
    pub warm_iters: usize,
    /// Carry ConvLSTM hidden and cell maps across frames instead of resetting them.
    pub carry_state: bool,
}

impl Default for VideoOptions {
    fn default() -> Self {
        VideoOptions {
            cold_iters: 6,
            warm_iters: 2,
            carry_state: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FramePrediction {
    pub labels: Vec<u8>,
    pub canvas: Tensor,
    pub iterations: usize,
}

#[derive(Clone, Debug)]
pub struct VideoSegmentation {
    pub frames: Vec<FramePrediction>,
    pub flops: FlopCount,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationModel {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl SegmentationModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let params = ModelParams::init(&config)?;
        Ok(SegmentationModel { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        let expected = ModelParams::init(&config)?;
        let shapes = |p: &ModelParams| p.named().iter().map(|(n, t)| (n.clone(), t.shape())).collect::<Vec<_>>();
        if shapes(&expected) != shapes(&params) {
            return Err(Error::Config("parameter shapes do not match the model config".into()));
        }
        Ok(SegmentationModel { config, params })
    }

    pub fn classes(&self) -> usize {
        self.config.classes
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundModel {
        let leaf = |g: &mut Graph, t: &Tensor| {
            if trainable {
                g.variable(t.clone())
            } else {
                g.constant(t.clone())
            }
        };
        let encoder = self
            .params
            .encoder
            .iter()
            .map(|l| (leaf(g, &l.weight), leaf(g, &l.bias)))
            .collect();
        let rnn = self.params.rnn.iter().map(|p| p.bind(g, trainable)).collect();
        BoundModel { encoder, rnn }
    }

    /// Checks the input-size precondition of the encoder.
    pub fn check_input(&self, shape: Shape) -> Result<()> {
        if shape.c != 3 {
            return Err(Error::shape("encode", format!("expected 3 image channels, got {}", shape.c)));
        }
        check_extent("image height", shape.h)?;
        check_extent("image width", shape.w)
    }

    /// Records the encoder. In training mode with batch normalization the batch
    /// statistics of every layer are returned so running averages can be updated.
    pub fn encode_graph(
        &self,
        g: &mut Graph,
        bound: &BoundModel,
        image: Var,
        mode: Mode,
    ) -> Result<(Var, Vec<ChannelStats>)> {
        self.check_input(g.shape(image))?;
        let centered = g.add_scalar(image, -0.5)?;
        let mut x = g.mul_scalar(centered, 2.0)?;
        let mut stats = Vec::new();
        for (layer, &(w, b)) in self.params.encoder.iter().zip(&bound.encoder) {
            let y = g.conv2d(x, w, None, layer.geometry())?;
            let y = match (self.config.encoder.normalization, mode) {
                (Normalization::Instance, _) => g.channel_norm(y, false, NORM_EPS)?.0,
                (Normalization::Batch, Mode::Train) => {
                    let (v, s) = g.channel_norm(y, true, NORM_EPS)?;
                    stats.push(s);
                    v
                }
                (Normalization::Batch, Mode::Eval) => {
                    let (scale, shift): (Vec<f64>, Vec<f64>) = layer
                        .running_mean
                        .data()
                        .iter()
                        .zip(layer.running_var.data())
                        .map(|(&m, &v)| {
                            let s = 1.0 / (v + NORM_EPS).sqrt();
                            (s, -m * s)
                        })
                        .unzip();
                    g.channel_affine(y, &scale, &shift)?
                }
            };
            let y = g.add_channel_bias(y, b)?;
            x = g.relu(y)?;
        }
        Ok((x, stats))
    }

    /// Zero hidden and cell maps for every ConvLSTM layer.
    pub fn zero_state(&self, n: usize, h: usize, w: usize) -> Vec<ConvLstmState> {
        self.config
            .rnn_widths
            .iter()
            .map(|&c| ConvLstmState::zeros(n, c, h, w))
            .collect()
    }

    /// One recurrent iteration: layer 1 reads `features ⊕ canvas`, the layers run in
    /// sequence and the last layer's output is added to the canvas.
    pub fn iterate_graph(
        &self,
        g: &mut Graph,
        bound: &BoundModel,
        features: Var,
        canvas: Var,
        states: &mut [StateVars],
    ) -> Result<IterationVars> {
        let (fs, cs) = (g.shape(features), g.shape(canvas));
        if cs.c != self.classes() {
            return Err(Error::shape(
                "iterate",
                format!("canvas has {} classes, model has {}", cs.c, self.classes()),
            ));
        }
        if (fs.n, fs.h, fs.w) != (cs.n, cs.h, cs.w) {
            return Err(Error::shape("iterate", format!("features {fs} vs canvas {cs}")));
        }
        if states.len() != bound.rnn.len() {
            return Err(Error::shape("iterate", "one state per ConvLSTM layer required"));
        }
        let mut x = g.concat_channels(features, canvas)?;
        for (vars, state) in bound.rnn.iter().zip(states.iter_mut()) {
            let step = convlstm::lstm_step(g, vars, *state, x)?;
            *state = step.state;
            x = step.state.h;
        }
        let canvas = g.add(canvas, x)?;
        Ok(IterationVars { canvas, delta: x })
    }

    pub fn encode(&self, image: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let x = g.constant(image.clone());
        let (f, _) = self.encode_graph(&mut g, &bound, x, Mode::Eval)?;
        Ok(g.value(f).clone())
    }

    /// One iteration on explicit values.
    pub fn iterate(
        &self,
        features: &Tensor,
        canvas: &Canvas,
        state: &[ConvLstmState],
    ) -> Result<(Canvas, Vec<ConvLstmState>)> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let f = g.constant(features.clone());
        let c = g.constant(canvas.logits.clone());
        let mut sv: Vec<StateVars> = state.iter().map(|s| s.bind(&mut g)).collect();
        let out = self.iterate_graph(&mut g, &bound, f, c, &mut sv)?;
        let next = sv
            .iter()
            .map(|s| ConvLstmState {
                h: g.value(s.h).clone(),
                c: g.value(s.c).clone(),
            })
            .collect();
        Ok((
            Canvas {
                logits: g.value(out.canvas).clone(),
                iteration: canvas.iteration + 1,
            },
            next,
        ))
    }

    /// Runs `iterations` steps and returns the argmax of the upsampled canvas after each.
    pub fn predict(
        &self,
        image: &Tensor,
        iterations: usize,
        initial_canvas: Option<&Tensor>,
    ) -> Result<Prediction> {
        let mut pred = self.run(image, iterations, initial_canvas, None, true)?;
        pred.0.flops = pred.1;
        Ok(pred.0)
    }

    /// Shared driver for predictions. Returns the prediction, the FLOPs, and the final
    /// recurrent state. When `emit_all` is false only the final canvas is upsampled.
    fn run(
        &self,
        image: &Tensor,
        iterations: usize,
        initial_canvas: Option<&Tensor>,
        initial_state: Option<&[ConvLstmState]>,
        emit_all: bool,
    ) -> Result<(Prediction, FlopCount, Vec<ConvLstmState>)> {
        if iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        let is = image.shape();
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let x = g.constant(image.clone());
        let (features, _) = self.encode_graph(&mut g, &bound, x, Mode::Eval)?;
        let fs = g.shape(features);
        let canvas0 = match initial_canvas {
            Some(c) => {
                let want = Shape::new(fs.n, self.classes(), fs.h, fs.w);
                if c.shape() != want {
                    return Err(Error::shape(
                        "predict",
                        format!("initial canvas {} but expected {want}", c.shape()),
                    ));
                }
                c.clone()
            }
            None => Tensor::zeros(Shape::new(fs.n, self.classes(), fs.h, fs.w)),
        };
        let mut canvas = g.constant(canvas0);
        let mut states: Vec<StateVars> = match initial_state {
            Some(s) => s.iter().map(|s| s.bind(&mut g)).collect(),
            None => self.zero_state(fs.n, fs.h, fs.w).iter().map(|s| s.bind(&mut g)).collect(),
        };
        let mut pred = Prediction {
            labels: Vec::with_capacity(iterations),
            canvases: Vec::with_capacity(iterations),
            deltas: Vec::with_capacity(iterations),
            features: g.value(features).clone(),
            flops: FlopCount::default(),
        };
        for t in 0..iterations {
            let out = self.iterate_graph(&mut g, &bound, features, canvas, &mut states)?;
            canvas = out.canvas;
            if emit_all || t + 1 == iterations {
                let up = g.bilinear_upsample(canvas, is.h, is.w)?;
                pred.labels.push(g.value(up).argmax_channels());
            }
            pred.canvases.push(g.value(canvas).clone());
            pred.deltas.push(g.value(out.delta).clone());
        }
        let final_state = states
            .iter()
            .map(|s| ConvLstmState {
                h: g.value(s.h).clone(),
                c: g.value(s.c).clone(),
            })
            .collect();
        Ok((pred, g.flops(), final_state))
    }

    /// Averages upsampled logits over rescaled (and optionally mirrored) copies of the
    /// input, then takes the argmax at native resolution.
    pub fn predict_multiscale(
        &self,
        image: &Tensor,
        scales: &[f64],
        flips: bool,
        iterations: usize,
    ) -> Result<MultiScalePrediction> {
        if scales.is_empty() {
            return Err(Error::Config("multi-scale evaluation needs at least one scale".into()));
        }
        if scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Config("scales must be positive".into()));
        }
        let is = image.shape();
        self.check_input(is)?;
        let mut sum = Tensor::zeros(Shape::new(is.n, self.classes(), is.h, is.w));
        let mut flops = FlopCount::default();
        let mut passes = 0usize;
        for &scale in scales {
            let (sh, sw) = (aligned_extent(is.h, scale), aligned_extent(is.w, scale));
            let scaled = if (sh, sw) == (is.h, is.w) {
                image.clone()
            } else {
                resize_bilinear(image, sh, sw)
            };
            for flip in [false, true] {
                if flip && !flips {
                    continue;
                }
                let input = if flip { scaled.flip_horizontal() } else { scaled.clone() };
                let mut g = Graph::new();
                let bound = self.bind(&mut g, false);
                let x = g.constant(input);
                let (features, _) = self.encode_graph(&mut g, &bound, x, Mode::Eval)?;
                let fs = g.shape(features);
                let mut canvas = g.constant(Tensor::zeros(Shape::new(fs.n, self.classes(), fs.h, fs.w)));
                let mut states: Vec<StateVars> =
                    self.zero_state(fs.n, fs.h, fs.w).iter().map(|s| s.bind(&mut g)).collect();
                for _ in 0..iterations {
                    canvas = self.iterate_graph(&mut g, &bound, features, canvas, &mut states)?.canvas;
                }
                let mut up = g.bilinear_upsample(canvas, is.h, is.w)?;
                if flip {
                    up = g.flip_horizontal(up)?;
                }
                sum.add_assign(g.value(up));
                flops += g.flops();
                flops.pointwise += sum.numel() as u64;
                passes += 1;
            }
        }
        sum.scale(1.0 / passes as f64);
        flops.pointwise += sum.numel() as u64;
        Ok(MultiScalePrediction {
            labels: sum.argmax_channels(),
            logits: sum,
            flops,
        })
    }

    /// Segments frames in order. The first frame starts from a zero canvas and runs
    /// `cold_iters`; each later frame is seeded with the previous frame's final canvas
    /// and runs `warm_iters`. Hidden and cell maps are reset per frame unless
    /// `carry_state` is set.
    pub fn segment_video(&self, frames: &[Tensor], opts: VideoOptions) -> Result<VideoSegmentation> {
        let first = frames
            .first()
            .ok_or_else(|| Error::Config("video has no frames".into()))?
            .shape();
        if opts.cold_iters == 0 || opts.warm_iters == 0 {
            return Err(Error::Config("iteration counts must be at least 1".into()));
        }
        let mut out = Vec::with_capacity(frames.len());
        let mut flops = FlopCount::default();
        let mut prev_canvas: Option<Tensor> = None;
        let mut prev_state: Option<Vec<ConvLstmState>> = None;
        for frame in frames {
            if frame.shape() != first {
                return Err(Error::shape("segment_video", format!("frame {} vs {first}", frame.shape())));
            }
            let iters = if prev_canvas.is_some() { opts.warm_iters } else { opts.cold_iters };
            let state = if opts.carry_state { prev_state.as_deref() } else { None };
            let (pred, f, state) = self.run(frame, iters, prev_canvas.as_ref(), state, false)?;
            flops += f;
            let canvas = pred.final_canvas().clone();
            out.push(FramePrediction {
                labels: pred.final_labels().to_vec(),
                canvas: canvas.clone(),
                iterations: iters,
            });
            prev_canvas = Some(canvas);
            prev_state = Some(state);
        }
        Ok(VideoSegmentation { frames: out, flops })
    }

    /// Per-frame cold segmentation, each frame from a zero canvas with `iterations` steps.
    pub fn segment_frames_cold(&self, frames: &[Tensor], iterations: usize) -> Result<VideoSegmentation> {
        let mut out = Vec::with_capacity(frames.len());
        let mut flops = FlopCount::default();
        for frame in frames {
            let (pred, f, _) = self.run(frame, iterations, None, None, false)?;
            flops += f;
            out.push(FramePrediction {
                labels: pred.final_labels().to_vec(),
                canvas: pred.final_canvas().clone(),
                iterations,
            });
        }
        Ok(VideoSegmentation { frames: out, flops })
    }
}
