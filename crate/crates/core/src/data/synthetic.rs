//! Desk-scale stand-ins for three kinds of image domain.
//!
//! * `OrientedShapes`: filled silhouettes drawn upright, so the rotation
//!   pretext is solvable only by recognising the shape.
//! * `Glyphs`: jittered stroke characters, a symbolic domain.
//! * `Textures`: periodic tiles of isotropic or uniformly oriented elements.
//!   Their distribution is invariant under 90-degree rotation, so the rotation
//!   pretext cannot be solved on them.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{stratified_split, DatasetTable, Image, LabeledImage, SplitRatios};
use crate::error::{invalid, Error, Result};
use crate::seed::{stage_rng, stage_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    OrientedShapes,
    Glyphs,
    Textures,
}

impl SyntheticKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SyntheticKind::OrientedShapes => "oriented_shapes",
            SyntheticKind::Glyphs => "glyphs",
            SyntheticKind::Textures => "textures",
        }
    }

    /// Number of distinct classes the generator can draw.
    pub fn max_classes(self) -> usize {
        match self {
            SyntheticKind::OrientedShapes => SHAPES.len(),
            SyntheticKind::Glyphs => GLYPHS.len(),
            SyntheticKind::Textures => 12,
        }
    }
}

impl fmt::Display for SyntheticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "oriented_shapes" | "shapes" => Ok(SyntheticKind::OrientedShapes),
            "glyphs" => Ok(SyntheticKind::Glyphs),
            "textures" => Ok(SyntheticKind::Textures),
            other => Err(invalid(format!("unknown synthetic dataset kind {other:?}"))),
        }
    }
}

/// Generate `n_per_class * class_count` images of side `size`, split 60-20-20.
pub fn make_synthetic_dataset(
    kind: SyntheticKind,
    n_per_class: usize,
    class_count: usize,
    size: usize,
    seed: u64,
) -> Result<DatasetTable> {
    if size < 32 {
        return Err(invalid(format!("synthetic images need side >= 32, got {size}")));
    }
    if class_count < 2 {
        return Err(invalid(format!("synthetic datasets need at least 2 classes, got {class_count}")));
    }
    if class_count > kind.max_classes() {
        return Err(invalid(format!("{kind} supports at most {} classes", kind.max_classes())));
    }
    if n_per_class < 3 {
        return Err(invalid("need at least 3 images per class to split"));
    }
    let mut images = Vec::with_capacity(n_per_class * class_count);
    for _ in 0..n_per_class {
        for class_id in 0..class_count {
            let image_id = images.len();
            let mut rng = stage_rng(seed, &format!("synthetic/{kind}/{image_id}"));
            let canvas = match kind {
                SyntheticKind::OrientedShapes => draw_shape(class_id, size, &mut rng),
                SyntheticKind::Glyphs => draw_glyph(class_id, size, &mut rng),
                SyntheticKind::Textures => draw_texture(class_id, size, &mut rng),
            };
            images.push(LabeledImage::new(canvas.into_image(), class_id, image_id)?);
        }
    }
    let labels: Vec<usize> = images.iter().map(|i| i.class_id).collect();
    let splits = stratified_split(&labels, SplitRatios::default(), stage_seed(seed, "split"))?;
    let split: BTreeMap<usize, _> = images.iter().zip(splits).map(|(img, s)| (img.image_id, s)).collect();
    let names = (0..class_count).map(|c| format!("{}_{c:02}", kind.as_str())).collect();
    DatasetTable::new(kind.as_str(), images, class_count, names, split)
}

/// RGB canvas in `[0, 1]` with unit coordinates: `u` right, `v` up, both in `[-1, 1]`.
struct Canvas {
    size: usize,
    rgb: Vec<[f64; 3]>,
}

impl Canvas {
    fn new(size: usize, bg: [f64; 3]) -> Self {
        Self { size, rgb: vec![bg; size * size] }
    }

    fn coords(&self, y: f64, x: f64) -> (f64, f64) {
        let s = self.size as f64;
        (x / s * 2.0 - 1.0, 1.0 - y / s * 2.0)
    }

    /// Blend `color` with per-pixel coverage `cover(u, v, pixel_size)` in `[0, 1]`.
    fn paint(&mut self, color: [f64; 3], cover: impl Fn(f64, f64, f64) -> f64) {
        let px = 2.0 / self.size as f64;
        for y in 0..self.size {
            for x in 0..self.size {
                let (u, v) = self.coords(y as f64 + 0.5, x as f64 + 0.5);
                let a = cover(u, v, px).clamp(0.0, 1.0);
                if a > 0.0 {
                    let p = &mut self.rgb[y * self.size + x];
                    for c in 0..3 {
                        p[c] = p[c] * (1.0 - a) + color[c] * a;
                    }
                }
            }
        }
    }

    /// Supersampled (4x4) polygon fill with even-odd rule.
    fn fill_polygons(&mut self, polys: &[Vec<(f64, f64)>], color: [f64; 3]) {
        const SS: usize = 4;
        let s = self.size;
        for y in 0..s {
            for x in 0..s {
                let mut hits = 0;
                for sy in 0..SS {
                    for sx in 0..SS {
                        let (u, v) = self.coords(
                            y as f64 + (sy as f64 + 0.5) / SS as f64,
                            x as f64 + (sx as f64 + 0.5) / SS as f64,
                        );
                        if polys.iter().any(|p| point_in_polygon(p, u, v)) {
                            hits += 1;
                        }
                    }
                }
                if hits > 0 {
                    let a = hits as f64 / (SS * SS) as f64;
                    let p = &mut self.rgb[y * s + x];
                    for c in 0..3 {
                        p[c] = p[c] * (1.0 - a) + color[c] * a;
                    }
                }
            }
        }
    }

    fn add_noise(&mut self, sigma: f64, rng: &mut ChaCha8Rng) {
        for p in &mut self.rgb {
            for c in p.iter_mut() {
                *c += sigma * gaussian(rng);
            }
        }
    }

    fn into_image(self) -> Image<f32> {
        let s = self.size;
        Image::from_fn(3, s, s, |c, y, x| ((self.rgb[y * s + x][c] * 2.0 - 1.0).clamp(-1.0, 1.0)) as f32)
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller.
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

fn point_in_polygon(poly: &[(f64, f64)], u: f64, v: f64) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > v) != (yj > v) && u < (xj - xi) * (v - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<(f64, f64)> {
    vec![(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
}

fn arc(cx: f64, cy: f64, r: f64, from: f64, to: f64, steps: usize) -> Vec<(f64, f64)> {
    (0..=steps)
        .map(|i| {
            let t = from + (to - from) * i as f64 / steps as f64;
            (cx + r * t.cos(), cy + r * t.sin())
        })
        .collect()
}

type ShapeFn = fn() -> Vec<Vec<(f64, f64)>>;

/// Upright silhouettes, none invariant under a quarter turn.
const SHAPES: [ShapeFn; 8] = [
    // triangle, apex up
    || vec![vec![(-0.8, -0.7), (0.8, -0.7), (0.0, 0.8)]],
    // house
    || vec![rect(-0.6, -0.8, 0.6, 0.1), vec![(-0.85, 0.1), (0.85, 0.1), (0.0, 0.85)]],
    // arrow, pointing up
    || vec![rect(-0.18, -0.85, 0.18, 0.15), vec![(-0.65, 0.15), (0.65, 0.15), (0.0, 0.85)]],
    // letter T
    || vec![rect(-0.8, 0.45, 0.8, 0.8), rect(-0.2, -0.85, 0.2, 0.45)],
    // trapezoid, wide base
    || vec![vec![(-0.85, -0.6), (0.85, -0.6), (0.35, 0.6), (-0.35, 0.6)]],
    // dome with flat base
    || vec![arc(0.0, -0.45, 0.85, 0.0, PI, 24)],
    // fir tree on a trunk
    || {
        vec![
            vec![(-0.75, -0.35), (0.75, -0.35), (0.0, 0.3)],
            vec![(-0.55, 0.05), (0.55, 0.05), (0.0, 0.85)],
            rect(-0.12, -0.85, 0.12, -0.35),
        ]
    },
    // letter L
    || vec![rect(-0.6, -0.8, -0.2, 0.8), rect(-0.2, -0.8, 0.7, -0.4)],
];

fn contrasting_colors(rng: &mut ChaCha8Rng) -> ([f64; 3], [f64; 3]) {
    loop {
        let bg = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
        let fg = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
        let lum = |c: [f64; 3]| (c[0] + c[1] + c[2]) / 3.0;
        if (lum(bg) - lum(fg)).abs() >= 0.3 {
            return (bg, fg);
        }
    }
}

fn draw_shape(class_id: usize, size: usize, rng: &mut ChaCha8Rng) -> Canvas {
    let (bg, fg) = contrasting_colors(rng);
    let scale = rng.random_range(0.55..0.85);
    let aspect = rng.random_range(0.9..1.1);
    let tilt: f64 = rng.random_range(-10.0f64..10.0).to_radians();
    let room = (1.0 - scale) * 0.8;
    let (dx, dy) = (rng.random_range(-room..=room), rng.random_range(-room..=room));
    let (sin, cos) = tilt.sin_cos();
    let polys: Vec<Vec<(f64, f64)>> = SHAPES[class_id]()
        .into_iter()
        .map(|poly| {
            poly.into_iter()
                .map(|(u, v)| {
                    let (u, v) = (u * scale * aspect, v * scale / aspect);
                    (u * cos - v * sin + dx, u * sin + v * cos + dy)
                })
                .collect()
        })
        .collect();
    let mut canvas = Canvas::new(size, bg);
    canvas.fill_polygons(&polys, fg);
    canvas.add_noise(0.03, rng);
    canvas
}

type Stroke = ((f64, f64), (f64, f64));

const GLYPHS: [&[Stroke]; 8] = [
    // E
    &[((-0.5, -0.8), (-0.5, 0.8)), ((-0.5, 0.8), (0.5, 0.8)), ((-0.5, 0.0), (0.3, 0.0)), ((-0.5, -0.8), (0.5, -0.8))],
    // F
    &[((-0.5, -0.8), (-0.5, 0.8)), ((-0.5, 0.8), (0.5, 0.8)), ((-0.5, 0.0), (0.3, 0.0))],
    // L
    &[((-0.5, -0.8), (-0.5, 0.8)), ((-0.5, -0.8), (0.5, -0.8))],
    // P
    &[((-0.5, -0.8), (-0.5, 0.8)), ((-0.5, 0.8), (0.4, 0.8)), ((0.4, 0.8), (0.4, 0.0)), ((-0.5, 0.0), (0.4, 0.0))],
    // T
    &[((-0.6, 0.8), (0.6, 0.8)), ((0.0, 0.8), (0.0, -0.8))],
    // Y
    &[((-0.55, 0.8), (0.0, 0.0)), ((0.55, 0.8), (0.0, 0.0)), ((0.0, 0.0), (0.0, -0.8))],
    // 7
    &[((-0.5, 0.8), (0.5, 0.8)), ((0.5, 0.8), (-0.15, -0.8))],
    // 4
    &[((0.3, 0.8), (0.3, -0.8)), ((-0.5, -0.1), (0.55, -0.1)), ((-0.5, -0.1), (0.3, 0.8))],
];

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (abx, aby) = (b.0 - a.0, b.1 - a.1);
    let len2 = abx * abx + aby * aby;
    let t = if len2 == 0.0 { 0.0 } else { (((p.0 - a.0) * abx + (p.1 - a.1) * aby) / len2).clamp(0.0, 1.0) };
    let (qx, qy) = (a.0 + t * abx - p.0, a.1 + t * aby - p.1);
    (qx * qx + qy * qy).sqrt()
}

fn draw_glyph(class_id: usize, size: usize, rng: &mut ChaCha8Rng) -> Canvas {
    let ink = rng.random_range(0.7..1.0);
    let ground = rng.random_range(0.0..0.3);
    let tint = [rng.random_range(0.85..1.0), rng.random_range(0.85..1.0), rng.random_range(0.85..1.0)];
    let scale = rng.random_range(0.6..0.8);
    let (dx, dy) = (rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15));
    let half_width = rng.random_range(0.06..0.1);
    let mut jitter = |p: (f64, f64)| {
        (p.0 * scale + dx + rng.random_range(-0.06..0.06), p.1 * scale + dy + rng.random_range(-0.06..0.06))
    };
    let strokes: Vec<Stroke> = GLYPHS[class_id].iter().map(|&(a, b)| (jitter(a), jitter(b))).collect();
    let mut canvas = Canvas::new(size, [ground * tint[0], ground * tint[1], ground * tint[2]]);
    canvas.paint([ink * tint[0], ink * tint[1], ink * tint[2]], |u, v, px| {
        let d = strokes.iter().map(|&(a, b)| segment_distance((u, v), a, b)).fold(f64::INFINITY, f64::min);
        0.5 - (d - half_width) / px
    });
    canvas.add_noise(0.03, rng);
    canvas
}

/// Shortest displacement on the `[-1, 1)` torus.
fn wrap(d: f64) -> f64 {
    d - 2.0 * (d / 2.0).round()
}

#[derive(Clone, Copy)]
enum Element {
    Disk,
    Ring,
    Stick,
    Blob,
}

fn draw_texture(class_id: usize, size: usize, rng: &mut ChaCha8Rng) -> Canvas {
    let element = [Element::Disk, Element::Ring, Element::Stick, Element::Blob][class_id % 4];
    let level = class_id / 4;
    let radius = [0.07, 0.16, 0.28][level] * rng.random_range(0.85..1.15);
    let count = [70usize, 22, 9][level];
    let hue = class_id as f64 / 12.0;
    let base = [
        0.5 + 0.35 * (2.0 * PI * hue).cos(),
        0.5 + 0.35 * (2.0 * PI * (hue + 1.0 / 3.0)).cos(),
        0.5 + 0.35 * (2.0 * PI * (hue + 2.0 / 3.0)).cos(),
    ];
    let shade = rng.random_range(0.7..1.0);
    let bg = [base[0] * 0.35, base[1] * 0.35, base[2] * 0.35];
    let mut canvas = Canvas::new(size, bg);
    for _ in 0..count {
        let (cx, cy) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let r = radius * rng.random_range(0.7..1.3);
        let angle = rng.random_range(0.0..PI);
        let (sin, cos) = angle.sin_cos();
        let jitter = rng.random_range(0.85..1.0);
        let color = [base[0] * shade * jitter, base[1] * shade * jitter, base[2] * shade * jitter];
        canvas.paint(color, |u, v, px| {
            let (du, dv) = (wrap(u - cx), wrap(v - cy));
            let d = (du * du + dv * dv).sqrt();
            match element {
                Element::Disk => 0.5 - (d - r) / px,
                Element::Ring => 0.5 - ((d - r).abs() - r * 0.25) / px,
                Element::Stick => {
                    let along = du * cos + dv * sin;
                    let across = -du * sin + dv * cos;
                    let dist = (along.abs() - r).max(0.0).hypot(across.abs());
                    0.5 - (dist - r * 0.15) / px
                }
                Element::Blob => (-(d * d) / (2.0 * (r * 0.6) * (r * 0.6))).exp(),
            }
        });
    }
    canvas.add_noise(0.03, rng);
    canvas
}
