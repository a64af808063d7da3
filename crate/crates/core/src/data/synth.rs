//! Deterministic synthetic scenes: solid shapes on a textured background, thin-structure
//! variants (rings, spoked wheels, outlines), and translating-shape videos.
//!
//! Each sample draws from its own ChaCha8 stream (`seed`, stream = sample index), so
//! datasets are reproducible bit for bit and samples can be generated independently.
//! Images are anti-aliased by 4×4 supersampling; labels come from the pixel centre only.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

use super::{pnm, LabelMap, SegSample};
use crate::error::{Error, Result};
use crate::model::SIZE_ALIGNMENT;
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Disk,
    Rectangle,
    Triangle,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Disk, ShapeKind::Rectangle, ShapeKind::Triangle];

    pub fn class(self) -> u8 {
        match self {
            ShapeKind::Disk => 1,
            ShapeKind::Rectangle => 2,
            ShapeKind::Triangle => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Geometry {
    Disk { cx: f64, cy: f64, r: f64 },
    Rect { cx: f64, cy: f64, hw: f64, hh: f64 },
    Triangle { v: [(f64, f64); 3] },
    /// Annulus, optionally crossed by `spokes` radial bars of half-width `spoke`.
    Ring { cx: f64, cy: f64, outer: f64, inner: f64, spokes: usize, spoke: f64, phase: f64 },
    /// Rectangle outline of the given thickness.
    Frame { cx: f64, cy: f64, hw: f64, hh: f64, thickness: f64 },
    /// Triangle outline: inside the outer triangle, outside the inset one.
    TriangleOutline { outer: [(f64, f64); 3], inner: [(f64, f64); 3] },
}

fn in_triangle(v: &[(f64, f64); 3], x: f64, y: f64) -> bool {
    let cross = |a: (f64, f64), b: (f64, f64)| (b.0 - a.0) * (y - a.1) - (b.1 - a.1) * (x - a.0);
    let d1 = cross(v[0], v[1]);
    let d2 = cross(v[1], v[2]);
    let d3 = cross(v[2], v[0]);
    let neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
    let pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
    !(neg && pos)
}

fn triangle(cx: f64, cy: f64, r: f64, angle: f64) -> [(f64, f64); 3] {
    let p = |k: f64| {
        let a = angle + k * 2.0 * PI / 3.0;
        (cx + r * a.cos(), cy + r * a.sin())
    };
    [p(0.0), p(1.0), p(2.0)]
}

impl Geometry {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Geometry::Disk { cx, cy, r } => (x - cx).powi(2) + (y - cy).powi(2) <= r * r,
            Geometry::Rect { cx, cy, hw, hh } => (x - cx).abs() <= hw && (y - cy).abs() <= hh,
            Geometry::Triangle { ref v } => in_triangle(v, x, y),
            Geometry::Ring {
                cx,
                cy,
                outer,
                inner,
                spokes,
                spoke,
                phase,
            } => {
                let (dx, dy) = (x - cx, y - cy);
                let d = (dx * dx + dy * dy).sqrt();
                if d > outer {
                    return false;
                }
                if d >= inner {
                    return true;
                }
                (0..spokes).any(|k| {
                    let a = phase + k as f64 * PI / spokes as f64;
                    // distance from the line through the centre at angle a
                    (dx * a.sin() - dy * a.cos()).abs() <= spoke
                })
            }
            Geometry::Frame {
                cx,
                cy,
                hw,
                hh,
                thickness,
            } => {
                let (ax, ay) = ((x - cx).abs(), (y - cy).abs());
                ax <= hw && ay <= hh && (ax > hw - thickness || ay > hh - thickness)
            }
            Geometry::TriangleOutline { ref outer, ref inner } => {
                in_triangle(outer, x, y) && !in_triangle(inner, x, y)
            }
        }
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Geometry {
        let mv = |v: &[(f64, f64); 3]| v.map(|(x, y)| (x + dx, y + dy));
        match self.clone() {
            Geometry::Disk { cx, cy, r } => Geometry::Disk { cx: cx + dx, cy: cy + dy, r },
            Geometry::Rect { cx, cy, hw, hh } => Geometry::Rect { cx: cx + dx, cy: cy + dy, hw, hh },
            Geometry::Triangle { v } => Geometry::Triangle { v: mv(&v) },
            Geometry::Ring {
                cx,
                cy,
                outer,
                inner,
                spokes,
                spoke,
                phase,
            } => Geometry::Ring {
                cx: cx + dx,
                cy: cy + dy,
                outer,
                inner,
                spokes,
                spoke,
                phase,
            },
            Geometry::Frame {
                cx,
                cy,
                hw,
                hh,
                thickness,
            } => Geometry::Frame {
                cx: cx + dx,
                cy: cy + dy,
                hw,
                hh,
                thickness,
            },
            Geometry::TriangleOutline { outer, inner } => Geometry::TriangleOutline {
                outer: mv(&outer),
                inner: mv(&inner),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlacedShape {
    pub class: u8,
    pub geometry: Geometry,
    pub color: [f64; 3],
}

/// Smooth sinusoidal texture plus fixed per-pixel noise.
#[derive(Clone, Debug, PartialEq)]
pub struct Background {
    pub base: [f64; 3],
    pub amplitude: f64,
    pub freq: (f64, f64),
    pub phase: f64,
    /// Per-pixel noise, `size * size` values shared by every channel.
    pub noise: Vec<f64>,
}

impl Background {
    fn random(rng: &mut ChaCha8Rng, size: usize) -> Self {
        let grey = rng.gen_range(0.35..0.65);
        let base = [0; 3].map(|_| grey + rng.gen_range(-0.04..0.04));
        let amplitude = rng.gen_range(0.04..0.10);
        let freq = (rng.gen_range(0.5..3.0), rng.gen_range(0.5..3.0));
        let phase = rng.gen_range(0.0..2.0 * PI);
        let noise = (0..size * size).map(|_| rng.gen_range(-0.03..0.03)).collect();
        Background {
            base,
            amplitude,
            freq,
            phase,
            noise,
        }
    }

    fn at(&self, size: usize, x: usize, y: usize) -> [f64; 3] {
        let s = size as f64;
        let t = 2.0 * PI * (self.freq.0 * x as f64 / s + self.freq.1 * y as f64 / s) + self.phase;
        let v = self.amplitude * t.sin() + self.noise[y * size + x];
        self.base.map(|b| b + v)
    }
}

/// A background with shapes, renderable at any translation of the shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub size: usize,
    pub background: Background,
    pub shapes: Vec<PlacedShape>,
}

const SUPERSAMPLE: usize = 4;

impl Scene {
    /// Renders with every shape moved by `offset`. Later shapes paint over earlier ones.
    pub fn render(&self, offset: (f64, f64)) -> SegSample {
        let n = self.size;
        let shapes: Vec<PlacedShape> = self
            .shapes
            .iter()
            .map(|s| PlacedShape {
                geometry: s.geometry.translated(offset.0, offset.1),
                ..s.clone()
            })
            .collect();
        let mut image = Tensor::zeros(Shape::new(1, 3, n, n));
        let mut label = LabelMap::new(n, n);
        let mut instances = LabelMap::new(n, n);
        let sub: Vec<f64> = (0..SUPERSAMPLE)
            .map(|i| (i as f64 + 0.5) / SUPERSAMPLE as f64 - 0.5)
            .collect();
        for y in 0..n {
            for x in 0..n {
                let mut px = self.background.at(n, x, y);
                for (id, s) in shapes.iter().enumerate() {
                    let (fx, fy) = (x as f64, y as f64);
                    let hits = sub
                        .iter()
                        .flat_map(|&oy| sub.iter().map(move |&ox| (ox, oy)))
                        .filter(|&(ox, oy)| s.geometry.contains(fx + ox, fy + oy))
                        .count();
                    if hits > 0 {
                        let cov = hits as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64;
                        let noise = self.background.noise[y * n + x];
                        for c in 0..3 {
                            px[c] = px[c] * (1.0 - cov) + (s.color[c] + noise) * cov;
                        }
                    }
                    if s.geometry.contains(fx, fy) {
                        label.set(y, x, s.class);
                        instances.set(y, x, (id + 1) as u8);
                    }
                }
                for (c, v) in px.iter().enumerate() {
                    image.set(0, c, y, x, pnm::quantize(*v) as f64 / 255.0);
                }
            }
        }
        SegSample {
            image,
            label,
            instances: Some(instances),
        }
    }
}

fn check_size(size: usize) -> Result<()> {
    if size < SIZE_ALIGNMENT + 1 {
        return Err(Error::Config(format!("size {size} is too small to place shapes")));
    }
    if (size - 1) % SIZE_ALIGNMENT != 0 {
        return Err(Error::Config(format!(
            "size {size} is not an integer divisible by {SIZE_ALIGNMENT}, plus one"
        )));
    }
    Ok(())
}

/// Class hues: reddish disks, greenish rectangles, bluish triangles.
const CLASS_TINTS: [[f64; 3]; 3] = [[0.9, 0.2, 0.2], [0.2, 0.85, 0.25], [0.15, 0.25, 0.95]];

fn shape_color(rng: &mut ChaCha8Rng, class: u8, bg: &Background) -> [f64; 3] {
    let tint = CLASS_TINTS[(class as usize - 1) % CLASS_TINTS.len()];
    let mut c = tint;
    for _ in 0..100 {
        c = tint.map(|t| (t + rng.gen_range(-0.08..0.08)).clamp(0.0, 1.0));
        let diff = c.iter().zip(&bg.base).map(|(a, b)| (a - b).abs()).sum::<f64>() / 3.0;
        if diff >= 0.2 {
            break;
        }
    }
    c
}

/// Pixel mask of a geometry, grown by `margin` pixels in every direction.
fn footprint(g: &Geometry, size: usize, margin: usize) -> Vec<bool> {
    let mut core = vec![false; size * size];
    for y in 0..size {
        for x in 0..size {
            core[y * size + x] = g.contains(x as f64, y as f64);
        }
    }
    let mut grown = core.clone();
    for y in 0..size {
        for x in 0..size {
            if !core[y * size + x] {
                continue;
            }
            for yy in y.saturating_sub(margin)..(y + margin + 1).min(size) {
                for xx in x.saturating_sub(margin)..(x + margin + 1).min(size) {
                    grown[yy * size + xx] = true;
                }
            }
        }
    }
    grown
}

/// Places up to `count` geometries drawn by `draw` without overlap (2-pixel gap).
fn place(
    rng: &mut ChaCha8Rng,
    size: usize,
    count: usize,
    mut draw: impl FnMut(&mut ChaCha8Rng) -> (u8, Geometry),
) -> Vec<(u8, Geometry)> {
    let mut occupied = vec![false; size * size];
    let mut placed = Vec::new();
    for _ in 0..count {
        for _attempt in 0..60 {
            let (class, g) = draw(rng);
            let fp = footprint(&g, size, 2);
            if fp.iter().zip(&occupied).any(|(a, b)| *a && *b) {
                continue;
            }
            if !fp.iter().any(|&v| v) {
                continue;
            }
            for (o, f) in occupied.iter_mut().zip(&fp) {
                *o |= *f;
            }
            placed.push((class, g));
            break;
        }
    }
    placed
}

fn solid_shape(rng: &mut ChaCha8Rng, size: usize, kinds: &[ShapeKind]) -> (u8, Geometry) {
    let s = size as f64;
    let kind = kinds[rng.gen_range(0..kinds.len())];
    let geometry = match kind {
        ShapeKind::Disk => {
            let r = rng.gen_range(0.18 * s..0.30 * s);
            let (cx, cy) = (rng.gen_range(r..s - 1.0 - r), rng.gen_range(r..s - 1.0 - r));
            Geometry::Disk { cx, cy, r }
        }
        ShapeKind::Rectangle => {
            let hw = rng.gen_range(0.16 * s..0.30 * s);
            let hh = rng.gen_range(0.16 * s..0.30 * s);
            let (cx, cy) = (rng.gen_range(hw..s - 1.0 - hw), rng.gen_range(hh..s - 1.0 - hh));
            Geometry::Rect { cx, cy, hw, hh }
        }
        ShapeKind::Triangle => {
            let r = rng.gen_range(0.24 * s..0.38 * s);
            let (cx, cy) = (rng.gen_range(r..s - 1.0 - r), rng.gen_range(r..s - 1.0 - r));
            Geometry::Triangle {
                v: triangle(cx, cy, r, rng.gen_range(0.0..2.0 * PI)),
            }
        }
    };
    (kind.class(), geometry)
}

fn kinds_for(classes: usize) -> Result<&'static [ShapeKind]> {
    match classes {
        2..=4 => Ok(&ShapeKind::ALL[..classes - 1]),
        _ => Err(Error::Config(format!(
            "shape datasets support 2 to 4 classes (background + shapes), got {classes}"
        ))),
    }
}

fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Random scene of 1–3 solid shapes.
pub fn shapes_scene(seed: u64, index: usize, size: usize, classes: usize) -> Result<Scene> {
    check_size(size)?;
    let kinds = kinds_for(classes)?;
    let mut rng = sample_rng(seed, index);
    let background = Background::random(&mut rng, size);
    let n = rng.gen_range(1..=3);
    let shapes = place(&mut rng, size, n, |r| solid_shape(r, size, kinds))
        .into_iter()
        .map(|(class, geometry)| PlacedShape {
            class,
            geometry,
            color: shape_color(&mut rng, class, &background),
        })
        .collect();
    Ok(Scene {
        size,
        background,
        shapes,
    })
}

/// `count` images of `size`×`size` with 1–3 non-overlapping disks, rectangles and
/// triangles (classes 1, 2, 3; only the first `classes - 1` kinds are used).
pub fn generate_shapes(seed: u64, count: usize, size: usize, classes: usize) -> Result<Vec<SegSample>> {
    (0..count)
        .map(|i| Ok(shapes_scene(seed, i, size, classes)?.render((0.0, 0.0))))
        .collect()
}

fn fine_shape(rng: &mut ChaCha8Rng, size: usize, classes: usize) -> (u8, Geometry) {
    let s = size as f64;
    let kind = rng.gen_range(1..classes);
    let thickness = rng.gen_range(2.0..3.0);
    match kind {
        1 => {
            let outer = rng.gen_range(0.2 * s..0.3 * s);
            let (cx, cy) = (rng.gen_range(outer..s - 1.0 - outer), rng.gen_range(outer..s - 1.0 - outer));
            let spokes = if rng.gen_bool(0.5) { 0 } else { rng.gen_range(2..=3) };
            let g = Geometry::Ring {
                cx,
                cy,
                outer,
                inner: outer - thickness,
                spokes,
                spoke: rng.gen_range(0.8..1.3),
                phase: rng.gen_range(0.0..PI),
            };
            (1, g)
        }
        2 => {
            let hw = rng.gen_range(0.16 * s..0.26 * s);
            let hh = rng.gen_range(0.16 * s..0.26 * s);
            let (cx, cy) = (rng.gen_range(hw..s - 1.0 - hw), rng.gen_range(hh..s - 1.0 - hh));
            (2, Geometry::Frame { cx, cy, hw, hh, thickness })
        }
        _ => {
            let r = rng.gen_range(0.24 * s..0.32 * s);
            let (cx, cy) = (rng.gen_range(r..s - 1.0 - r), rng.gen_range(r..s - 1.0 - r));
            let angle = rng.gen_range(0.0..2.0 * PI);
            // inset by `thickness` measured perpendicular to each edge
            let g = Geometry::TriangleOutline {
                outer: triangle(cx, cy, r, angle),
                inner: triangle(cx, cy, r - 2.0 * thickness, angle),
            };
            (3, g)
        }
    }
}

/// Thin-structure scenes: rings and spoked wheels (class 1), rectangle outlines
/// (class 2) and triangle outlines (class 3).
pub fn generate_fine_structures(seed: u64, count: usize, size: usize, classes: usize) -> Result<Vec<SegSample>> {
    check_size(size)?;
    kinds_for(classes)?;
    (0..count)
        .map(|i| {
            let mut rng = sample_rng(seed ^ 0x6669_6e65, i);
            let background = Background::random(&mut rng, size);
            let n = rng.gen_range(1..=2);
            let shapes = place(&mut rng, size, n, |r| fine_shape(r, size, classes))
                .into_iter()
                .map(|(class, geometry)| PlacedShape {
                    class,
                    geometry,
                    color: shape_color(&mut rng, class, &background),
                })
                .collect();
            Ok(Scene {
                size,
                background,
                shapes,
            }
            .render((0.0, 0.0)))
        })
        .collect()
}

/// Frames of a scene whose shapes translate rigidly over a fixed background.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoSequence {
    pub frames: Vec<SegSample>,
    /// Shape displacement of each frame relative to frame 0.
    pub displacements: Vec<(f64, f64)>,
}

pub const MAX_SPEED: f64 = 5.0;

pub fn video_from_scene(scene: &Scene, frames: usize, velocity: (f64, f64)) -> Result<VideoSequence> {
    let speed = (velocity.0 * velocity.0 + velocity.1 * velocity.1).sqrt();
    if !(speed <= MAX_SPEED) {
        return Err(Error::Config(format!(
            "speed {speed} exceeds {MAX_SPEED} pixels per frame"
        )));
    }
    if frames == 0 {
        return Err(Error::Config("a video needs at least one frame".into()));
    }
    let displacements: Vec<(f64, f64)> = (0..frames)
        .map(|t| (velocity.0 * t as f64, velocity.1 * t as f64))
        .collect();
    let frames = displacements.iter().map(|&d| scene.render(d)).collect();
    Ok(VideoSequence { frames, displacements })
}

/// A shapes scene (`classes` as in [`generate_shapes`]) translated by `velocity` pixels
/// per frame. Shapes leaving the frame are clipped.
pub fn generate_video(
    seed: u64,
    frames: usize,
    size: usize,
    classes: usize,
    velocity: (f64, f64),
) -> Result<VideoSequence> {
    let scene = shapes_scene(seed ^ 0x7669_6465, 0, size, classes)?;
    video_from_scene(&scene, frames, velocity)
}
