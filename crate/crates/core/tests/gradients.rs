//! Backward passes against central finite differences.

use canvasrnn::convlstm::{lstm_step, ConvLstmParams, ConvLstmState, ConvLstmVars};
use canvasrnn::kernels::{ConvGeometry, Padding};
use canvasrnn::{Graph, Result, Shape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;

fn random(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..shape.numel()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Builds a scalar loss from leaves holding `inputs`; returns the worst relative error
/// between backward and central differences over every input element.
fn check(inputs: &[Tensor], build: impl Fn(&mut Graph, &[Var]) -> Result<Var>) -> f64 {
    let eval = |values: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.variable(t.clone())).collect();
        let loss = build(&mut g, &vars).unwrap();
        g.value(loss).data()[0]
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let loss = build(&mut g, &vars).unwrap();
    let grads = g.backward(loss).unwrap();
    let mut worst = 0.0f64;
    for (i, t) in inputs.iter().enumerate() {
        let analytic = grads.wrt(vars[i]);
        assert_eq!(analytic.shape(), t.shape());
        for j in 0..t.numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * STEP);
            worst = worst.max(rel_err(analytic.data()[j], numeric));
        }
    }
    worst
}

/// Weighted sum with fixed random weights, so every output element matters differently.
fn weighted(g: &mut Graph, x: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = g.constant(random(g.shape(x), &mut rng));
    let p = g.mul(x, w)?;
    g.sum(p)
}

#[test]
fn conv2d_same_padding() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(Shape::new(1, 2, 6, 6), &mut rng);
    let k = random(Shape::new(3, 2, 5, 5), &mut rng);
    let b = random(Shape::new(1, 3, 1, 1), &mut rng);
    let err = check(&[x, k, b], |g, v| {
        let y = g.conv2d(v[0], v[1], Some(v[2]), ConvGeometry::same(1, 1))?;
        weighted(g, y, 7)
    });
    assert!(err <= 1e-6, "{err}");
}

#[test]
fn conv2d_strided_dilated_and_valid() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(Shape::new(2, 2, 9, 7), &mut rng);
    let k = random(Shape::new(3, 2, 3, 3), &mut rng);
    for geo in [
        ConvGeometry::same(2, 1),
        ConvGeometry::same(1, 2),
        ConvGeometry::same(2, 3),
        ConvGeometry {
            stride: 1,
            dilation: 2,
            padding: Padding::Valid,
        },
    ] {
        let err = check(&[x.clone(), k.clone()], |g, v| {
            let y = g.conv2d(v[0], v[1], None, geo)?;
            weighted(g, y, 3)
        });
        assert!(err <= 1e-6, "{geo:?}: {err}");
    }
}

#[test]
fn elementwise_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let s = Shape::new(2, 2, 3, 3);
    let a = random(s, &mut rng);
    let b = random(s, &mut rng);
    type Build = fn(&mut Graph, &[Var]) -> Result<Var>;
    let cases: [(&str, Build); 7] = [
        ("add", |g, v| g.add(v[0], v[1])),
        ("mul", |g, v| g.mul(v[0], v[1])),
        ("sigmoid", |g, v| g.sigmoid(v[0])),
        ("tanh", |g, v| g.tanh(v[0])),
        ("add_scalar", |g, v| g.add_scalar(v[0], 0.3)),
        ("mul_scalar", |g, v| g.mul_scalar(v[0], -1.7)),
        ("flip", |g, v| g.flip_horizontal(v[0])),
    ];
    for (name, op) in cases {
        let err = check(&[a.clone(), b.clone()], |g, v| {
            let y = op(g, v)?;
            weighted(g, y, 11)
        });
        assert!(err <= 1e-6, "{name}: {err}");
    }
}

#[test]
fn add_gradient_is_one() {
    let mut g = Graph::new();
    let s = Shape::new(1, 2, 2, 2);
    let a = g.variable(Tensor::full(s, 0.2));
    let b = g.variable(Tensor::full(s, -3.0));
    let y = g.add(a, b).unwrap();
    let l = g.sum(y).unwrap();
    let grads = g.backward(l).unwrap();
    assert!(grads.wrt(a).data().iter().all(|&v| v == 1.0));
    assert!(grads.wrt(b).data().iter().all(|&v| v == 1.0));
}

#[test]
fn relu_away_from_the_kink() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut a = random(Shape::new(1, 3, 4, 4), &mut rng);
    for v in a.data_mut() {
        if v.abs() < 0.01 {
            *v = 0.5;
        }
    }
    let err = check(&[a], |g, v| {
        let y = g.relu(v[0])?;
        weighted(g, y, 5)
    });
    assert!(err <= 1e-6, "{err}");
}

#[test]
fn concat_and_slice() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = random(Shape::new(1, 2, 4, 4), &mut rng);
    let b = random(Shape::new(1, 3, 4, 4), &mut rng);
    let err = check(&[a, b], |g, v| {
        let y = g.concat_channels(v[0], v[1])?;
        assert_eq!(g.shape(y), Shape::new(1, 5, 4, 4));
        let s = g.slice_channels(y, 1, 3)?;
        let t = g.tanh(y)?;
        let l1 = weighted(g, s, 1)?;
        let l2 = weighted(g, t, 2)?;
        g.add(l1, l2)
    });
    assert!(err <= 1e-6, "{err}");
}

#[test]
fn bilinear_upsample() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = random(Shape::new(2, 2, 3, 4), &mut rng);
    let err = check(&[a], |g, v| {
        let y = g.bilinear_upsample(v[0], 9, 7)?;
        weighted(g, y, 9)
    });
    assert!(err <= 1e-6, "{err}");
}

#[test]
fn normalization_and_affine() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = random(Shape::new(2, 3, 4, 4), &mut rng);
    let bias = random(Shape::new(1, 3, 1, 1), &mut rng);
    for over_batch in [false, true] {
        let err = check(&[a.clone(), bias.clone()], |g, v| {
            let (y, _) = g.channel_norm(v[0], over_batch, 1e-5)?;
            let y = g.channel_affine(y, &[0.5, -1.0, 2.0], &[0.1, 0.0, -0.3])?;
            let y = g.add_channel_bias(y, v[1])?;
            weighted(g, y, 13)
        });
        assert!(err <= 1e-6, "over_batch={over_batch}: {err}");
    }
}

#[test]
fn softmax_cross_entropy() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let logits = random(Shape::new(2, 4, 3, 3), &mut rng);
    let labels: Vec<u8> = (0..18).map(|i| if i % 7 == 3 { 255 } else { (i % 4) as u8 }).collect();
    let err = check(&[logits], |g, v| g.softmax_cross_entropy(v[0], &labels, 255));
    assert!(err <= 1e-6, "{err}");
}

#[test]
fn sum_of_losses_backpropagates_as_sum_of_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a = random(Shape::new(1, 2, 3, 3), &mut rng);
    let grads_of = |which: u8| {
        let mut g = Graph::new();
        let x = g.variable(a.clone());
        let t = g.tanh(x).unwrap();
        let l1 = weighted(&mut g, t, 1).unwrap();
        let s = g.sigmoid(x).unwrap();
        let l2 = weighted(&mut g, s, 2).unwrap();
        let loss = match which {
            1 => l1,
            2 => l2,
            _ => g.add(l1, l2).unwrap(),
        };
        g.backward(loss).unwrap().wrt(x).clone()
    };
    let (g1, g2, g12) = (grads_of(1), grads_of(2), grads_of(3));
    for i in 0..a.numel() {
        let sum = g1.data()[i] + g2.data()[i];
        assert!((sum - g12.data()[i]).abs() <= 1e-14 * sum.abs().max(1.0));
    }
}

#[test]
fn convlstm_bptt_over_three_steps() {
    let params = ConvLstmParams::init_seeded(3, 2, 21).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let xs: Vec<Tensor> = (0..3).map(|_| random(Shape::new(1, 3, 4, 4), &mut rng)).collect();
    let mut leaves: Vec<Tensor> = params.tensors().iter().map(|t| (*t).clone()).collect();
    // nonzero biases so their gradients are exercised away from symmetric points
    for b in &mut leaves[8..] {
        for v in b.data_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
    }
    leaves.extend(xs);
    let err = check(&leaves, |g, v| {
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
        let mut state = ConvLstmState::zeros(1, 2, 4, 4).bind(g);
        for &x in &v[12..] {
            state = lstm_step(g, &vars, state, x)?.state;
        }
        let h = weighted(g, state.h, 4)?;
        let c = weighted(g, state.c, 5)?;
        g.add(h, c)
    });
    assert!(err <= 1e-4, "{err}");
}
