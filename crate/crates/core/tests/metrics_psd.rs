//! IOU metrics against direct pixel counts, and spectral diagnostics.

use canvasrnn::metrics::{fill_fraction, hole_mask, iiou, miou, ConfusionMatrix, InstanceImage};
use canvasrnn::psd::{bin_count, class_mask, power_spectral_density, power_spectrum, RadialPsd};
use canvasrnn::data::LabelMap;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

const IGNORE: u8 = 255;

fn brute_iou(pred: &[u8], truth: &[u8], k: usize) -> (Vec<Option<f64>>, f64) {
    let mut per = Vec::new();
    for c in 0..k as u8 {
        let (mut inter, mut union) = (0usize, 0usize);
        for (&p, &t) in pred.iter().zip(truth) {
            if t == IGNORE {
                continue;
            }
            if p == c && t == c {
                inter += 1;
            }
            if p == c || t == c {
                union += 1;
            }
        }
        per.push((union > 0).then(|| inter as f64 / union as f64));
    }
    let present: Vec<f64> = per.iter().flatten().copied().collect();
    let mean = if present.is_empty() { 1.0 } else { present.iter().sum::<f64>() / present.len() as f64 };
    (per, mean)
}

fn brute_iiou(images: &[(Vec<u8>, Vec<u8>, Vec<u8>)], k: usize) -> Vec<Option<f64>> {
    let mut sizes: HashMap<(usize, u8, u8), f64> = HashMap::new();
    for (i, (_, t, inst)) in images.iter().enumerate() {
        for (&c, &id) in t.iter().zip(inst) {
            if c != IGNORE && id != 0 {
                *sizes.entry((i, c, id)).or_default() += 1.0;
            }
        }
    }
    (0..k as u8)
        .map(|c| {
            let mine: Vec<f64> = sizes.iter().filter(|((_, cc, _), _)| *cc == c).map(|(_, &n)| n).collect();
            let avg = mine.iter().sum::<f64>() / mine.len().max(1) as f64;
            let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
            for (i, (p, t, inst)) in images.iter().enumerate() {
                for j in 0..t.len() {
                    if t[j] == IGNORE {
                        continue;
                    }
                    let w = if inst[j] == 0 { 1.0 } else { avg / sizes[&(i, t[j], inst[j])] };
                    if t[j] == c && p[j] == c {
                        tp += w;
                    } else if t[j] == c {
                        fn_ += w;
                    } else if p[j] == c {
                        fp += 1.0;
                    }
                }
            }
            (tp + fp + fn_ > 0.0).then(|| tp / (tp + fp + fn_))
        })
        .collect()
}

fn random_instance(rng: &mut ChaCha8Rng, k: usize) -> (Vec<u8>, Vec<u8>, Vec<u8>) {
    let t: Vec<u8> = (0..64)
        .map(|_| if rng.gen_bool(0.05) { IGNORE } else { rng.gen_range(0..k as u8) })
        .collect();
    let p: Vec<u8> = (0..64).map(|_| rng.gen_range(0..k as u8)).collect();
    let inst: Vec<u8> = t.iter().map(|&c| if c == 0 || c == IGNORE { 0 } else { rng.gen_range(1..4) }).collect();
    (p, t, inst)
}

fn close(a: &[Option<f64>], b: &[Option<f64>]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| match (x, y) {
            (Some(x), Some(y)) => (x - y).abs() < 1e-12,
            (None, None) => true,
            _ => false,
        })
}

#[test]
fn iou_matches_direct_counts_on_random_grids() {
    let mut rng = ChaCha8Rng::seed_from_u64(70);
    for _ in 0..100 {
        let k = rng.gen_range(2..=4);
        let (p, t, inst) = random_instance(&mut rng, k);
        let r = miou(&p, &t, k, IGNORE).unwrap();
        let (per, mean) = brute_iou(&p, &t, k);
        assert!(close(&r.per_class, &per));
        assert!((r.mean - mean).abs() < 1e-12);
        let ir = iiou(&[InstanceImage { pred: &p, labels: &t, instances: &inst }], k, IGNORE).unwrap();
        assert!(close(&ir.per_class, &brute_iiou(&[(p, t, inst)], k)));
    }
}

#[test]
fn iiou_over_several_images_matches_direct_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let set: Vec<_> = (0..5).map(|_| random_instance(&mut rng, 4)).collect();
    let views: Vec<InstanceImage> = set
        .iter()
        .map(|(p, t, i)| InstanceImage { pred: p, labels: t, instances: i })
        .collect();
    assert!(close(&iiou(&views, 4, IGNORE).unwrap().per_class, &brute_iiou(&set, 4)));
}

#[test]
fn perfect_and_disjoint_predictions() {
    let t = vec![0, 1, 1, 0, 2, 2];
    assert_eq!(miou(&t, &t, 3, IGNORE).unwrap().mean, 1.0);
    let r = miou(&[0, 0, 1, 1], &[1, 1, 0, 0], 2, IGNORE).unwrap();
    assert_eq!(r.per_class, vec![Some(0.0), Some(0.0)]);
}

#[test]
fn four_by_four_half_overlap() {
    // Class 1: 12 true pixels, 8 of them hit, plus 4 false alarms.
    let truth: Vec<u8> = (0..16).map(|i| u8::from(i < 12)).collect();
    let pred: Vec<u8> = (0..16).map(|i| u8::from(i < 8 || i >= 12)).collect();
    let r = miou(&pred, &truth, 2, IGNORE).unwrap();
    assert_eq!(r.per_class[1], Some(0.5));
}

#[test]
fn equal_instances_give_plain_iou() {
    let mut rng = ChaCha8Rng::seed_from_u64(72);
    // Two 16-pixel instances per class in an 8x8 grid.
    let t: Vec<u8> = (0..64).map(|i| (i / 16) as u8).collect();
    let inst: Vec<u8> = (0..64).map(|i| if i < 16 { 0 } else { 1 + ((i % 16) / 8) as u8 }).collect();
    for _ in 0..20 {
        let p: Vec<u8> = (0..64).map(|_| rng.gen_range(0..4)).collect();
        let a = iiou(&[InstanceImage { pred: &p, labels: &t, instances: &inst }], 4, IGNORE).unwrap();
        let b = miou(&p, &t, 4, IGNORE).unwrap();
        assert!(close(&a.per_class, &b.per_class));
    }
}

#[test]
fn missing_a_small_instance_costs_more_under_iiou() {
    // Instance 1 covers 12 pixels, instance 2 covers 4; only instance 1 is found.
    let t: Vec<u8> = (0..16).map(|i| u8::from(i < 16)).collect();
    let inst: Vec<u8> = (0..16).map(|i| if i < 12 { 1 } else { 2 }).collect();
    let p: Vec<u8> = (0..16).map(|i| u8::from(i < 12)).collect();
    let mut t2 = t.clone();
    t2.extend(vec![0u8; 16]);
    let mut inst2 = inst.clone();
    inst2.extend(vec![0u8; 16]);
    let mut p2 = p.clone();
    p2.extend(vec![0u8; 16]);
    let a = iiou(&[InstanceImage { pred: &p2, labels: &t2, instances: &inst2 }], 2, IGNORE).unwrap();
    let b = miou(&p2, &t2, 2, IGNORE).unwrap();
    assert!(a.per_class[1].unwrap() < b.per_class[1].unwrap());
}

#[test]
fn three_instance_scene() {
    // Sizes 6, 3, 3: average 4, weights 2/3, 4/3, 4/3.
    let t = vec![1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0];
    let inst = vec![1, 1, 1, 1, 1, 1, 2, 2, 2, 3, 3, 3, 0, 0, 0, 0];
    let p = vec![1, 1, 1, 1, 0, 0, 1, 1, 1, 0, 0, 0, 1, 0, 0, 0];
    let tp = 4.0 * 2.0 / 3.0 + 3.0 * 4.0 / 3.0;
    let fn_ = 2.0 * 2.0 / 3.0 + 3.0 * 4.0 / 3.0;
    let want = tp / (tp + fn_ + 1.0);
    let r = iiou(&[InstanceImage { pred: &p, labels: &t, instances: &inst }], 2, IGNORE).unwrap();
    assert!((r.per_class[1].unwrap() - want).abs() < 1e-12);
}

proptest! {
    #[test]
    fn relabeling_classes_permutes_the_report(seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, t, _) = random_instance(&mut rng, 4);
        let perm = [2u8, 0, 3, 1];
        let map = |v: &[u8]| v.iter().map(|&c| if c == IGNORE { c } else { perm[c as usize] }).collect::<Vec<_>>();
        let a = miou(&p, &t, 4, IGNORE).unwrap();
        let b = miou(&map(&p), &map(&t), 4, IGNORE).unwrap();
        for c in 0..4 {
            prop_assert_eq!(a.per_class[c], b.per_class[perm[c] as usize]);
        }
        prop_assert!((a.mean - b.mean).abs() < 1e-12);
    }

    #[test]
    fn ignored_pixels_change_nothing(seed in 0u64..500, extra in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut p, mut t, _) = random_instance(&mut rng, 3);
        let a = miou(&p, &t, 3, IGNORE).unwrap();
        for _ in 0..extra {
            p.push(rng.gen_range(0..3));
            t.push(IGNORE);
        }
        prop_assert_eq!(a, miou(&p, &t, 3, IGNORE).unwrap());
    }
}

#[test]
fn confusion_totals_count_evaluated_pixels() {
    let mut cm = ConfusionMatrix::new(3);
    cm.add(&[0, 1, 2, 2], &[0, IGNORE, 2, 1], IGNORE).unwrap();
    assert_eq!((cm.total(), cm.ignored), (3, 1));
    assert!(cm.add(&[0], &[0, 1], IGNORE).is_err());
}

#[test]
fn holes_are_enclosed_background() {
    let mut m = LabelMap::new(7, 7);
    for i in 1..6 {
        for (y, x) in [(1, i), (5, i), (i, 1), (i, 5)] {
            m.set(y, x, 2);
        }
    }
    let holes = hole_mask(&m);
    assert_eq!(holes.iter().filter(|&&h| h).count(), 9);
    let mut pred = vec![0u8; 49];
    pred[3 * 7 + 3] = 2;
    assert!((fill_fraction(&pred, &holes).unwrap() - 1.0 / 9.0).abs() < 1e-15);
    assert_eq!(fill_fraction(&pred, &[false; 49]), None);
}

#[test]
fn parseval_on_random_maps() {
    let mut rng = ChaCha8Rng::seed_from_u64(73);
    for (h, w) in [(8, 8), (17, 33), (65, 65), (2, 5)] {
        let map: Vec<f64> = (0..h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let energy: f64 = map.iter().map(|v| v * v).sum();
        let spec: f64 = power_spectrum(&map, h, w).unwrap().iter().sum();
        assert!((energy - spec).abs() <= 1e-9, "{h}x{w}: {energy} vs {spec}");
        let psd = power_spectral_density(&map, h, w).unwrap();
        assert!((psd.total - spec).abs() <= 1e-9);
        assert_eq!(psd.power.len(), bin_count(h, w));
    }
}

#[test]
fn constant_map_is_all_dc() {
    let psd = power_spectral_density(&[1.0; 64], 8, 8).unwrap();
    assert!((psd.cdf[0] - 1.0).abs() < 1e-12);
    assert!(psd.power[1..].iter().all(|p| p.abs() < 1e-20));
    assert!(power_spectral_density(&[1.0], 1, 1).is_err());
    assert!(power_spectral_density(&[1.0; 5], 2, 3).is_err());
}

#[test]
fn checkerboard_is_high_frequency_and_disk_is_not() {
    let n = 32;
    let board: Vec<f64> = (0..n * n).map(|i| ((i / n + i % n) % 2) as f64).collect();
    let area = board.iter().sum::<f64>();
    let r = (area / std::f64::consts::PI).sqrt();
    let disk: Vec<f64> = (0..n * n)
        .map(|i| {
            let (y, x) = ((i / n) as f64 - 15.5, (i % n) as f64 - 15.5);
            f64::from(y * y + x * x <= r * r)
        })
        .collect();
    let (b, d) = (power_spectral_density(&board, n, n).unwrap(), power_spectral_density(&disk, n, n).unwrap());
    assert!(b.high_frequency_mass() > 0.4);
    assert!(d.high_frequency_mass() < 0.01);
    let mid = b.cdf.len() / 2;
    assert!(b.cdf[mid] < d.cdf[mid]);
}

#[test]
fn accumulated_spectra_sum_power() {
    let a = RadialPsd::from_power(vec![1.0, 2.0, 3.0]);
    let b = RadialPsd::from_power(vec![0.5, 0.0, 0.5]);
    let s = RadialPsd::accumulate(&[a, b]).unwrap();
    assert_eq!(s.power, vec![1.5, 2.0, 3.5]);
    assert_eq!(s.total, 7.0);
    assert_eq!(class_mask(&[0, 2, 2, 1], 2), vec![0.0, 1.0, 1.0, 0.0]);
}
