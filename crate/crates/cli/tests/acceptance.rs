//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Trains the desk-scale toy model once (about twenty to twenty-five minutes on one
//! core) and reuses it for the evaluation criteria. The target reports and exits zero;
//! set `CANVASRNN_ACCEPTANCE_STRICT=1` to make any failing criterion fail the run.

use std::f64::consts::TAU;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use canvasrnn::convlstm::{lstm_step, ConvLstmParams, ConvLstmState, ConvLstmVars};
use canvasrnn::data::{generate_fine_structures, generate_shapes, generate_video, save_dataset, SegSample};
use canvasrnn::flops::estimate_flops;
use canvasrnn::graph::Graph;
use canvasrnn::kernels::{ConvGeometry, Padding};
use canvasrnn::metrics::{iiou, miou, ConfusionMatrix, InstanceImage};
use canvasrnn::model::{Mode, ModelConfig, SegmentationModel, VideoOptions};
use canvasrnn::psd::power_spectrum;
use canvasrnn::train::{loss_graph, lr_at, train, SgdMomentum, TrainConfig};
use canvasrnn::{Result, Shape, Tensor, Var};
use canvasrnn_cli::commands::cmd_train;
use canvasrnn_cli::config::{PerturbMode, RunConfig};
use canvasrnn_cli::experiments::{self, PerturbReport};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const IGNORE: u8 = 255;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

// ---------------------------------------------------------------- criterion 1

const FD_STEP: f64 = 1e-5;

fn random(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_vec(shape, (0..shape.numel()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

fn weighted(g: &mut Graph, x: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = g.constant(random(g.shape(x), &mut rng));
    let p = g.mul(x, w)?;
    g.sum(p)
}

/// Worst relative error and number of checked scalars for one op graph.
fn op_check(inputs: &[Tensor], build: impl Fn(&mut Graph, &[Var]) -> Result<Var>) -> (f64, usize) {
    let eval = |values: &[Tensor]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.variable(t.clone())).collect();
        let l = build(&mut g, &vars).unwrap();
        g.value(l).data()[0]
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let l = build(&mut g, &vars).unwrap();
    let grads = g.backward(l).unwrap();
    let (mut worst, mut n) = (0.0f64, 0);
    for (i, t) in inputs.iter().enumerate() {
        for j in 0..t.numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= FD_STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(grads.wrt(vars[i]).data()[j], numeric));
            n += 1;
        }
    }
    (worst, n)
}

fn away_from_zero(t: Tensor) -> Tensor {
    t.map(|v| if v.abs() < 0.05 { v + 0.1_f64.copysign(v) } else { v })
}

fn per_op_checks() -> Vec<(&'static str, f64, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut out = Vec::new();
    let x = random(Shape::new(2, 2, 5, 5), &mut rng);
    let y = random(Shape::new(2, 2, 5, 5), &mut rng);
    let w = random(Shape::new(3, 2, 3, 3), &mut rng);
    let b = random(Shape::new(1, 3, 1, 1), &mut rng);
    let geos = [
        ("conv2d", ConvGeometry::same(1, 1)),
        ("conv2d strided", ConvGeometry::same(2, 1)),
        ("conv2d dilated", ConvGeometry::same(1, 2)),
        ("conv2d valid", ConvGeometry { stride: 1, dilation: 1, padding: Padding::Valid }),
    ];
    for (name, geo) in geos {
        let (e, n) = op_check(&[x.clone(), w.clone(), Tensor::vector(b.data().to_vec())], |g, v| {
            let c = g.conv2d(v[0], v[1], Some(v[2]), geo)?;
            weighted(g, c, 1)
        });
        out.push((name, e, n));
    }
    macro_rules! unary {
        ($name:expr, $input:expr, $f:expr) => {{
            let (e, n) = op_check(&[$input], |g, v| {
                let r = $f(g, v[0])?;
                weighted(g, r, 2)
            });
            out.push(($name, e, n));
        }};
    }
    unary!("sigmoid", x.clone(), |g: &mut Graph, a| g.sigmoid(a));
    unary!("tanh", x.clone(), |g: &mut Graph, a| g.tanh(a));
    unary!("relu", away_from_zero(x.clone()), |g: &mut Graph, a| g.relu(a));
    unary!("add_scalar", x.clone(), |g: &mut Graph, a| g.add_scalar(a, 0.7));
    unary!("mul_scalar", x.clone(), |g: &mut Graph, a| g.mul_scalar(a, -1.3));
    unary!("flip", x.clone(), |g: &mut Graph, a| g.flip_horizontal(a));
    unary!("slice", x.clone(), |g: &mut Graph, a| g.slice_channels(a, 1, 1));
    unary!("upsample", random(Shape::new(1, 2, 3, 4), &mut rng), |g: &mut Graph, a| g.bilinear_upsample(a, 9, 13));
    unary!("instance norm", x.clone(), |g: &mut Graph, a| g.channel_norm(a, false, 1e-5).map(|r| r.0));
    unary!("batch norm", x.clone(), |g: &mut Graph, a| g.channel_norm(a, true, 1e-5).map(|r| r.0));
    unary!("affine", x.clone(), |g: &mut Graph, a| g.channel_affine(a, &[0.5, -2.0], &[0.1, 0.3]));
    let (e, n) = op_check(&[x.clone(), y.clone()], |g, v| {
        let s = g.add(v[0], v[1])?;
        weighted(g, s, 3)
    });
    out.push(("add", e, n));
    let (e, n) = op_check(&[x.clone(), y.clone()], |g, v| {
        let s = g.mul(v[0], v[1])?;
        weighted(g, s, 4)
    });
    out.push(("mul", e, n));
    let (e, n) = op_check(&[x.clone(), y.clone()], |g, v| {
        let s = g.concat_channels(v[0], v[1])?;
        weighted(g, s, 5)
    });
    out.push(("concat", e, n));
    let (e, n) = op_check(&[x.clone(), Tensor::vector(vec![0.4, -0.2])], |g, v| {
        let s = g.add_channel_bias(v[0], v[1])?;
        weighted(g, s, 6)
    });
    out.push(("bias", e, n));
    let labels: Vec<u8> = (0..50).map(|i| if i % 7 == 0 { IGNORE } else { (i % 2) as u8 }).collect();
    let (e, n) = op_check(&[x.clone()], |g, v| g.softmax_cross_entropy(v[0], &labels, IGNORE));
    out.push(("cross entropy", e, n));

    let p = ConvLstmParams::init_seeded(3, 2, 12).unwrap();
    let mut inputs: Vec<Tensor> = p.tensors().iter().map(|t| (*t).clone()).collect();
    inputs[9] = Tensor::vector(vec![0.2, -0.3]);
    let xs = random(Shape::new(1, 3, 3, 3), &mut rng);
    let (e, n) = op_check(&inputs, |g, v| {
        let vars = ConvLstmVars {
            w_ih: v[0],
            w_ix: v[1],
            w_fh: v[2],
            w_fx: v[3],
            w_oh: v[4],
            w_ox: v[5],
            w_ch: v[6],
            w_cx: v[7],
            b_i: v[8],
            b_f: v[9],
            b_o: v[10],
            b_c: v[11],
        };
        let mut state = ConvLstmState::zeros(1, 2, 3, 3).bind(g);
        let x = g.constant(xs.clone());
        for _ in 0..3 {
            state = lstm_step(g, &vars, state, x)?.state;
        }
        weighted(g, state.h, 7)
    });
    out.push(("convlstm (3 steps)", e, n));
    out
}

/// Gradient of the iteration-6 loss of the tiny model at sampled coordinates.
fn model_check() -> (f64, usize) {
    let model = SegmentationModel::new(ModelConfig::tiny()).unwrap();
    let s = generate_shapes(21, 1, 33, 3).unwrap().remove(0);
    let loss = |m: &SegmentationModel| {
        let (g, l, _, _) = loss_graph(m, &s.image, &s.label.data, 6, IGNORE, Mode::Train).unwrap();
        g.value(l).data()[0]
    };
    let (g, l, vars, _) = loss_graph(&model, &s.image, &s.label.data, 6, IGNORE, Mode::Train).unwrap();
    let grads = g.backward(l).unwrap();
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v).clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let (mut worst, mut n) = (0.0f64, 0);
    for (ti, a) in analytic.iter().enumerate() {
        for _ in 0..2 {
            let j = rng.gen_range(0..a.numel());
            let mut plus = model.clone();
            plus.params.tensors_mut()[ti].data_mut()[j] += FD_STEP;
            let mut minus = model.clone();
            minus.params.tensors_mut()[ti].data_mut()[j] -= FD_STEP;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(a.data()[j], numeric));
            n += 1;
        }
    }
    (worst, n)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let ops = per_op_checks();
    let (op_worst, op_name) = ops
        .iter()
        .fold((0.0f64, ""), |acc, (name, e, _)| if *e > acc.0 { (*e, *name) } else { acc });
    let op_n: usize = ops.iter().map(|o| o.2).sum();
    let (model_worst, model_n) = model_check();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        op_worst <= 1e-4 && model_worst <= 1e-4 && model_n >= 50 && secs < 120.0,
        format!(
            "{} op checks over {op_n} scalars, worst {op_worst:.2e} ({op_name}); \
             tiny model, 6 iterations, {model_n} parameters, worst {model_worst:.2e}; {secs:.1}s",
            ops.len()
        ),
    )
}

// ---------------------------------------------------------------- criterion 2

fn criterion_2() -> Outcome {
    let e = estimate_flops(&ModelConfig::paper_scale(), 513, 513, 6, None).unwrap();
    let m = e.marginal_per_iteration as f64;
    outcome((6.0e9..=7.0e9).contains(&m), format!("marginal {m:.4e} per iteration"))
}

// ---------------------------------------------------------------- criterion 3

struct Trained {
    model: SegmentationModel,
    seconds: f64,
}

fn train_toy(train_set: &[SegSample]) -> Trained {
    let start = Instant::now();
    let mut model = SegmentationModel::new(ModelConfig::default()).unwrap();
    train(&mut model, train_set, &TrainConfig::default(), |_, _| Ok(())).unwrap();
    Trained {
        model,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn pooled_miou(model: &SegmentationModel, set: &[SegSample], iters: usize) -> Vec<f64> {
    let mut cms = vec![ConfusionMatrix::new(model.classes()); iters];
    for s in set {
        let p = model.predict(&s.image, iters, None).unwrap();
        for (cm, l) in cms.iter_mut().zip(&p.labels) {
            cm.add(l, &s.label.data, IGNORE).unwrap();
        }
    }
    cms.iter().map(|c| c.iou().mean).collect()
}

fn criterion_3(t: &Trained, test: &[SegSample]) -> Outcome {
    let m = pooled_miou(&t.model, test, 8);
    let (m1, m6, m8) = (m[0], m[5], m[7]);
    outcome(
        m6 >= m1 + 0.05 && m6 >= 0.90 && m8 >= m6 - 0.01 && t.seconds < 1800.0,
        format!("mIOU(1) {m1:.4}, mIOU(6) {m6:.4}, mIOU(8) {m8:.4}; trained in {:.0}s", t.seconds),
    )
}

// ---------------------------------------------------------------- criterion 4

fn criterion_4(model: &SegmentationModel, test: &[SegSample]) -> Outcome {
    let mut ok = true;
    for s in &test[..8] {
        let long = model.predict(&s.image, 8, None).unwrap();
        let mut sum = Tensor::zeros(long.canvases[0].shape());
        for (c, d) in long.canvases.iter().zip(&long.deltas) {
            sum.add_assign(d);
            ok &= &sum == c;
        }
        for t in 1..8 {
            let short = model.predict(&s.image, t, None).unwrap();
            ok &= short.canvases[..] == long.canvases[..t] && short.labels[..] == long.labels[..t];
        }
    }
    outcome(ok, "8 samples, 8 iterations, bitwise".into())
}

// ---------------------------------------------------------------- criterion 5

fn criterion_5(model: &SegmentationModel, test: &[SegSample]) -> Outcome {
    let scale = experiments::logit_scale(model, test, 1).unwrap();
    let chosen: Vec<(usize, &SegSample)> = test.iter().enumerate().collect();
    let r = experiments::perturb(model, &chosen, PerturbMode::WrongClass, 4, scale, 1).unwrap();
    let recovered = r
        .samples
        .iter()
        .filter(|s| PerturbReport::recovery_iteration(s, 0.95).is_some())
        .count();
    let frac = recovered as f64 / r.samples.len() as f64;
    let mean_first = r.samples.iter().map(|s| s.agreement[0]).sum::<f64>() / r.samples.len() as f64;
    outcome(
        frac >= 0.90,
        format!(
            "{recovered}/{} samples reach 95% agreement within 4 iterations (logit scale {scale:.2}, mean agreement after 1: {mean_first:.3})",
            r.samples.len()
        ),
    )
}

// ---------------------------------------------------------------- criterion 6

fn criterion_6(model: &SegmentationModel) -> Outcome {
    let videos: Vec<Vec<SegSample>> = (0..16u64)
        .map(|v| {
            let a = ChaCha8Rng::seed_from_u64(500 + v).gen_range(0.0..TAU);
            generate_video(500 + v, 10, 65, 4, (2.0 * a.cos(), 2.0 * a.sin())).unwrap().frames
        })
        .collect();
    let r = experiments::video(model, &videos, VideoOptions::default(), 1).unwrap();
    let gap = (r.mean_warm_miou - r.mean_cold_miou).abs();
    outcome(
        gap <= 0.02 && r.flops_ratio <= 0.60,
        format!(
            "warm mIOU {:.4}, cold mIOU {:.4}, FLOPs ratio {:.3}",
            r.mean_warm_miou, r.mean_cold_miou, r.flops_ratio
        ),
    )
}

// ---------------------------------------------------------------- criterion 7

fn brute_iou(pred: &[u8], truth: &[u8], k: u8) -> Vec<Option<f64>> {
    (0..k)
        .map(|c| {
            let inter = pred.iter().zip(truth).filter(|(p, t)| **t != IGNORE && **p == c && **t == c).count();
            let union = pred.iter().zip(truth).filter(|(p, t)| **t != IGNORE && (**p == c || **t == c)).count();
            (union > 0).then(|| inter as f64 / union as f64)
        })
        .collect()
}

fn brute_iiou(pred: &[u8], truth: &[u8], inst: &[u8], k: u8) -> Vec<Option<f64>> {
    (0..k)
        .map(|c| {
            let ids: Vec<u8> = (1..=255).filter(|&id| truth.iter().zip(inst).any(|(t, i)| *t == c && *i == id)).collect();
            let size = |id: u8| truth.iter().zip(inst).filter(|(t, i)| **t == c && **i == id).count() as f64;
            let avg = ids.iter().map(|&id| size(id)).sum::<f64>() / ids.len().max(1) as f64;
            let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
            for j in 0..truth.len() {
                if truth[j] == IGNORE {
                    continue;
                }
                let w = if truth[j] == c && inst[j] != 0 { avg / size(inst[j]) } else { 1.0 };
                match (truth[j] == c, pred[j] == c) {
                    (true, true) => tp += w,
                    (true, false) => fn_ += w,
                    (false, true) => fp += 1.0,
                    _ => {}
                }
            }
            (tp + fp + fn_ > 0.0).then(|| tp / (tp + fp + fn_))
        })
        .collect()
}

fn same(a: &[Option<f64>], b: &[Option<f64>]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| match (x, y) {
            (Some(x), Some(y)) => (x - y).abs() <= 1e-12,
            (None, None) => true,
            _ => false,
        })
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut agree = 0;
    let mut equal_ok = 0;
    for _ in 0..100 {
        let k = rng.gen_range(2..=4u8);
        let truth: Vec<u8> = (0..64).map(|_| if rng.gen_bool(0.05) { IGNORE } else { rng.gen_range(0..k) }).collect();
        let pred: Vec<u8> = (0..64).map(|_| rng.gen_range(0..k)).collect();
        let inst: Vec<u8> = truth.iter().map(|&t| if t == 0 || t == IGNORE { 0 } else { rng.gen_range(1..4) }).collect();
        let m = miou(&pred, &truth, k as usize, IGNORE).unwrap();
        let i = iiou(&[InstanceImage { pred: &pred, labels: &truth, instances: &inst }], k as usize, IGNORE).unwrap();
        if same(&m.per_class, &brute_iou(&pred, &truth, k)) && same(&i.per_class, &brute_iiou(&pred, &truth, &inst, k)) {
            agree += 1;
        }
        // Equal-sized instances: each class band of 16 pixels split into two 8-pixel halves.
        let band: Vec<u8> = (0..64).map(|j| (j / 16) as u8 % k).collect();
        let halves: Vec<u8> = (0..64).map(|j| 1 + ((j % 16) / 8) as u8).collect();
        let p2: Vec<u8> = (0..64).map(|_| rng.gen_range(0..k)).collect();
        let a = iiou(&[InstanceImage { pred: &p2, labels: &band, instances: &halves }], k as usize, IGNORE).unwrap();
        let b = miou(&p2, &band, k as usize, IGNORE).unwrap();
        let equal_sizes = (0..k).all(|c| {
            let n = band.iter().filter(|&&t| t == c).count();
            n == 0 || n % 16 == 0
        });
        if !equal_sizes || same(&a.per_class, &b.per_class) {
            equal_ok += 1;
        }
    }
    outcome(
        agree == 100 && equal_ok == 100,
        format!("{agree}/100 match brute force, iIOU == IOU on {equal_ok}/100 equal-instance cases"),
    )
}

// ---------------------------------------------------------------- criterion 8

fn criterion_8(model: &SegmentationModel) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let mut worst = 0.0f64;
    for (h, w) in [(65, 65), (33, 17), (8, 8), (64, 48)] {
        let map: Vec<f64> = (0..h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let energy: f64 = map.iter().map(|v| v * v).sum();
        let power: f64 = power_spectrum(&map, h, w).unwrap().iter().sum();
        worst = worst.max((energy - power).abs());
    }
    let fine = generate_fine_structures(303, 32, 65, 4).unwrap();
    let preds: Vec<Vec<u8>> = fine
        .iter()
        .map(|s| model.predict(&s.image, model.config.iterations, None).unwrap().final_labels().to_vec())
        .collect();
    let labels: Vec<_> = fine.iter().map(|s| &s.label).collect();
    let spectra = experiments::psd(&labels, &preds, 4).unwrap();
    let mut gaps = Vec::new();
    let mut ok = worst <= 1e-9;
    for c in spectra.iter().filter(|c| c.class != 0 && c.truth.total > 0.0) {
        let (t, p) = (c.truth.high_frequency_mass(), c.prediction.high_frequency_mass());
        ok &= t > p;
        gaps.push(format!("class {} truth {t:.2e} vs prediction {p:.2e}", c.class));
    }
    ok &= !gaps.is_empty();
    outcome(ok, format!("Parseval max error {worst:.1e}; top-quartile mass: {}", gaps.join(", ")))
}

// ---------------------------------------------------------------- criterion 9

fn criterion_9() -> Outcome {
    let cfg = TrainConfig::default();
    let (a, b) = (lr_at(&cfg, 0).unwrap(), lr_at(&cfg, cfg.total_steps).unwrap());
    let g = Tensor::vector(vec![0.37, -1.25, 4.0e-3, 2.5]);
    let mut p = Tensor::vector(vec![0.0; 4]);
    let mut opt = SgdMomentum::new(0.95, false, [&p]);
    for _ in 0..2 {
        opt.step(&mut [&mut p], &[&g], 1.0).unwrap();
    }
    let worst = p
        .data()
        .iter()
        .zip(g.data())
        .map(|(pv, gv)| (-pv - gv * (1.0 + 1.95)).abs())
        .fold(0.0, f64::max);
    outcome(
        a == 1e-3 && b == 1e-6 && worst <= 1e-15,
        format!("lr_at(0) = {a:e}, lr_at(total) = {b:e}, two-step displacement error {worst:.1e}"),
    )
}

// ---------------------------------------------------------------- criterion 10

fn criterion_10(dir: &Path) -> Outcome {
    let samples = generate_shapes(1010, 6, 65, 4).unwrap();
    let manifest = save_dataset(&dir.join("data"), &samples, 4).unwrap();
    let run = |name: &str| {
        let mut cfg = RunConfig::default();
        cfg.dataset = Some(manifest.clone());
        cfg.output_dir = dir.join(name);
        cfg.train.total_steps = 12;
        cfg.train.batch_size = 2;
        cmd_train(&cfg).unwrap();
        let read = |f: &str| std::fs::read(dir.join(name).join(f)).unwrap();
        (read("loss.csv"), read("checkpoint.bin"))
    };
    let (a, b) = (run("first"), run("second"));
    outcome(
        a == b,
        format!("loss.csv {} bytes, checkpoint.bin {} bytes, identical: {}", a.0.len(), a.1.len(), a == b),
    )
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }
    let report = |n: usize, o: Outcome| {
        println!("criterion {n:>2}: {}  {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        o.pass
    };
    let train_set = generate_shapes(1, 256, 65, 4).unwrap();
    let test_set = generate_shapes(2, 64, 65, 4).unwrap();
    let trained = train_toy(&train_set);
    let tmp = tempfile::tempdir().unwrap();
    let results = [
        report(1, criterion_1()),
        report(2, criterion_2()),
        report(3, criterion_3(&trained, &test_set)),
        report(4, criterion_4(&trained.model, &test_set)),
        report(5, criterion_5(&trained.model, &test_set)),
        report(6, criterion_6(&trained.model)),
        report(7, criterion_7()),
        report(8, criterion_8(&trained.model)),
        report(9, criterion_9()),
        report(10, criterion_10(tmp.path())),
    ];
    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    let strict = std::env::var_os("CANVASRNN_ACCEPTANCE_STRICT").is_some_and(|v| v != "0");
    if strict && passed < results.len() {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
