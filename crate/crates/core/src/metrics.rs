//! Segmentation metrics: confusion matrices, class IOU, instance-weighted IOU, and
//! hole fill-in measurements for thin structures.

use serde::Serialize;
use std::collections::{BTreeMap, VecDeque};

use crate::data::LabelMap;
use crate::error::{Error, Result};

/// K×K pixel counts, rows indexed by ground truth and columns by prediction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<u64>,
    pub ignored: u64,
}

/// Per-class IOU (`None` for classes absent from both prediction and truth) and their mean.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IouReport {
    pub per_class: Vec<Option<f64>>,
    pub mean: f64,
}

impl IouReport {
    fn from_parts(tp: &[f64], fp: &[f64], fn_: &[f64]) -> Self {
        let per_class: Vec<Option<f64>> = (0..tp.len())
            .map(|k| {
                let denom = tp[k] + fp[k] + fn_[k];
                (denom > 0.0).then(|| tp[k] / denom)
            })
            .collect();
        let present: Vec<f64> = per_class.iter().flatten().copied().collect();
        let mean = if present.is_empty() {
            1.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        };
        IouReport { per_class, mean }
    }
}

fn check_lengths(op: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, format!("{a} predictions vs {b} labels")));
    }
    Ok(())
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
            ignored: 0,
        }
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    /// Adds one image. Pixels labelled `ignore` are counted separately.
    pub fn add(&mut self, pred: &[u8], labels: &[u8], ignore: u8) -> Result<()> {
        check_lengths("confusion", pred.len(), labels.len())?;
        let k = self.classes;
        for (&p, &t) in pred.iter().zip(labels) {
            if t == ignore {
                self.ignored += 1;
                continue;
            }
            let (p, t) = (p as usize, t as usize);
            if p >= k || t >= k {
                return Err(Error::Config(format!("label {} outside {k} classes", p.max(t))));
            }
            self.counts[t * k + p] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.ignored += other.ignored;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn iou(&self) -> IouReport {
        let k = self.classes;
        let mut tp = vec![0.0; k];
        let mut fp = vec![0.0; k];
        let mut fn_ = vec![0.0; k];
        for t in 0..k {
            for p in 0..k {
                let c = self.get(t, p) as f64;
                if t == p {
                    tp[t] += c;
                } else {
                    fn_[t] += c;
                    fp[p] += c;
                }
            }
        }
        IouReport::from_parts(&tp, &fp, &fn_)
    }

    /// Fraction of non-ignored pixels predicted correctly.
    pub fn pixel_accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 1.0;
        }
        (0..self.classes).map(|k| self.get(k, k)).sum::<u64>() as f64 / total as f64
    }
}

pub fn miou(pred: &[u8], labels: &[u8], classes: usize, ignore: u8) -> Result<IouReport> {
    let mut cm = ConfusionMatrix::new(classes);
    cm.add(pred, labels, ignore)?;
    Ok(cm.iou())
}

/// One image for instance-weighted evaluation. Instance id 0 marks pixels outside any
/// instance; they are weighted 1.
#[derive(Clone, Copy, Debug)]
pub struct InstanceImage<'a> {
    pub pred: &'a [u8],
    pub labels: &'a [u8],
    pub instances: &'a [u8],
}

/// Instance-weighted IOU over a set of images. Each ground-truth pixel of class k in
/// instance j contributes `avg_k / size_j` to TP or FN, where `avg_k` is the mean size of
/// the class-k instances in the set; false positives are unweighted.
pub fn iiou(images: &[InstanceImage], classes: usize, ignore: u8) -> Result<IouReport> {
    let mut sizes: Vec<BTreeMap<(usize, u8), u64>> = Vec::with_capacity(images.len());
    let mut class_total = vec![0u64; classes];
    let mut class_count = vec![0u64; classes];
    for im in images {
        check_lengths("iiou", im.pred.len(), im.labels.len())?;
        check_lengths("iiou", im.instances.len(), im.labels.len())?;
        let mut s = BTreeMap::new();
        for (&t, &id) in im.labels.iter().zip(im.instances) {
            if t == ignore || id == 0 {
                continue;
            }
            if t as usize >= classes {
                return Err(Error::Config(format!("label {t} outside {classes} classes")));
            }
            *s.entry((t as usize, id)).or_insert(0) += 1;
        }
        for (&(k, _), &n) in &s {
            class_total[k] += n;
            class_count[k] += 1;
        }
        sizes.push(s);
    }
    let mut tp = vec![0.0; classes];
    let mut fp = vec![0.0; classes];
    let mut fn_ = vec![0.0; classes];
    for (im, s) in images.iter().zip(&sizes) {
        for ((&p, &t), &id) in im.pred.iter().zip(im.labels).zip(im.instances) {
            if t == ignore {
                continue;
            }
            let (p, t) = (p as usize, t as usize);
            if p >= classes {
                return Err(Error::Config(format!("prediction {p} outside {classes} classes")));
            }
            let weight = match s.get(&(t, id)) {
                Some(&n) if id != 0 => class_total[t] as f64 / class_count[t] as f64 / n as f64,
                _ => 1.0,
            };
            if p == t {
                tp[t] += weight;
            } else {
                fn_[t] += weight;
                fp[p] += 1.0;
            }
        }
    }
    Ok(IouReport::from_parts(&tp, &fp, &fn_))
}

/// Background pixels (label 0) that cannot reach the image border through
/// 4-connected background pixels, i.e. the interiors of closed outlines.
pub fn hole_mask(label: &LabelMap) -> Vec<bool> {
    let (h, w) = (label.height, label.width);
    let mut outside = vec![false; h * w];
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            if (y == 0 || x == 0 || y + 1 == h || x + 1 == w) && label.get(y, x) == 0 {
                outside[y * w + x] = true;
                queue.push_back((y, x));
            }
        }
    }
    while let Some((y, x)) = queue.pop_front() {
        let mut visit = |yy: usize, xx: usize| {
            let i = yy * w + xx;
            if !outside[i] && label.get(yy, xx) == 0 {
                outside[i] = true;
                queue.push_back((yy, xx));
            }
        };
        if y > 0 {
            visit(y - 1, x);
        }
        if y + 1 < h {
            visit(y + 1, x);
        }
        if x > 0 {
            visit(y, x - 1);
        }
        if x + 1 < w {
            visit(y, x + 1);
        }
    }
    (0..h * w).map(|i| label.data[i] == 0 && !outside[i]).collect()
}

/// Fraction of hole pixels predicted as foreground; `None` when there are no holes.
pub fn fill_fraction(pred: &[u8], holes: &[bool]) -> Option<f64> {
    let total = holes.iter().filter(|&&h| h).count();
    if total == 0 {
        return None;
    }
    let filled = pred.iter().zip(holes).filter(|(&p, &h)| h && p != 0).count();
    Some(filled as f64 / total as f64)
}
