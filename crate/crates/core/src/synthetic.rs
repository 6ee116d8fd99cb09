//! Procedurally generated datasets: handwritten-style glyph trees written as
//! PNG files, and in-memory Gaussian clusters.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use image::{GrayImage, Luma};
use protoadapt_tensor::NdArray;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::episodes::{ClassEntry, ClassIndex, ImageRef};
use crate::error::{Error, Result};
use crate::seed::derive_seed;

const GLYPH_STREAM: u64 = 0x0067_6c79_7068;
const DRAWER_STREAM: u64 = 0x6472_6177;
const CLUSTER_STREAM: u64 = 0x636c_7573;

/// Shape of a generated glyph tree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlyphSpec {
    pub alphabets: usize,
    pub characters_per_alphabet: usize,
    pub drawers: usize,
    /// Side of the square canvas in pixels.
    pub canvas: u32,
    /// Std-dev of per-drawer control point jitter, as a fraction of the canvas.
    pub jitter: f64,
}

impl Default for GlyphSpec {
    fn default() -> Self {
        GlyphSpec {
            alphabets: 20,
            characters_per_alphabet: 20,
            drawers: 20,
            canvas: 105,
            jitter: 0.025,
        }
    }
}

type Point = (f64, f64);

/// A character: 2 to 4 cubic Bezier strokes in unit coordinates.
fn character_strokes(rng: &mut ChaCha8Rng) -> Vec<[Point; 4]> {
    let count = rng.random_range(2..=4);
    (0..count)
        .map(|_| {
            let mut p = || (rng.random_range(0.15..0.85), rng.random_range(0.15..0.85));
            [p(), p(), p(), p()]
        })
        .collect()
}

fn bezier(c: &[Point; 4], t: f64) -> Point {
    let u = 1.0 - t;
    let (a, b, d, e) = (u * u * u, 3.0 * u * u * t, 3.0 * u * t * t, t * t * t);
    (
        a * c[0].0 + b * c[1].0 + d * c[2].0 + e * c[3].0,
        a * c[0].1 + b * c[1].1 + d * c[2].1 + e * c[3].1,
    )
}

/// One drawer's rendition: jittered control points, a small affine warp and
/// a drawer-specific pen width, black ink on white.
fn render(strokes: &[[Point; 4]], spec: &GlyphSpec, rng: &mut ChaCha8Rng) -> GrayImage {
    let jitter = Normal::new(0.0, spec.jitter).expect("valid std-dev");
    let angle = rng.random_range(-0.15..0.15f64);
    let scale = rng.random_range(0.9..1.1);
    let shift = (rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05));
    let radius = rng.random_range(0.018..0.035) * spec.canvas as f64;
    let (sin, cos) = angle.sin_cos();
    let warp = |(x, y): Point| {
        let (x, y) = (x - 0.5, y - 0.5);
        (
            0.5 + scale * (cos * x - sin * y) + shift.0,
            0.5 + scale * (sin * x + cos * y) + shift.1,
        )
    };
    let size = spec.canvas;
    let mut img = GrayImage::from_pixel(size, size, Luma([255]));
    let r2 = radius * radius;
    for stroke in strokes {
        let mut ctrl = *stroke;
        for p in &mut ctrl {
            *p = warp((p.0 + jitter.sample(rng), p.1 + jitter.sample(rng)));
        }
        for s in 0..=80 {
            let (cx, cy) = bezier(&ctrl, s as f64 / 80.0);
            let (cx, cy) = (cx * size as f64, cy * size as f64);
            let lo = |v: f64| (v - radius).floor().max(0.0) as u32;
            let hi = |v: f64| ((v + radius).ceil().max(0.0) as u32).min(size - 1);
            for py in lo(cy)..=hi(cy) {
                for px in lo(cx)..=hi(cx) {
                    let (dx, dy) = (px as f64 + 0.5 - cx, py as f64 + 0.5 - cy);
                    if dx * dx + dy * dy <= r2 {
                        img.put_pixel(px, py, Luma([0]));
                    }
                }
            }
        }
    }
    img
}

/// Writes `root/alphabet_XX/character_YY/ZZ.png`, one image per drawer.
/// Output depends only on `spec` and `seed`.
pub fn write_glyph_dataset(root: &Path, spec: &GlyphSpec, seed: u64) -> Result<()> {
    if spec.alphabets == 0 || spec.characters_per_alphabet == 0 || spec.drawers == 0 || spec.canvas < 8 {
        return Err(Error::Config(format!("degenerate glyph spec {spec:?}")));
    }
    for a in 0..spec.alphabets {
        for c in 0..spec.characters_per_alphabet {
            let class = (a * spec.characters_per_alphabet + c) as u64;
            let class_seed = derive_seed(seed, GLYPH_STREAM, class);
            let strokes = character_strokes(&mut ChaCha8Rng::seed_from_u64(class_seed));
            let dir = root.join(format!("alphabet_{a:02}")).join(format!("character_{c:02}"));
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for d in 0..spec.drawers {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(class_seed, DRAWER_STREAM, d as u64));
                let path = dir.join(format!("{d:02}.png"));
                render(&strokes, spec, &mut rng)
                    .save(&path)
                    .map_err(|e| Error::ingestion(&path, e.to_string()))?;
            }
        }
    }
    Ok(())
}

/// Classes whose images are a per-class random center in `[0,1]^(C*H*W)`
/// plus isotropic Gaussian noise of std-dev `sigma`.
pub fn gaussian_clusters(
    classes: usize,
    per_class: usize,
    shape: [usize; 3],
    sigma: f64,
    seed: u64,
) -> Result<ClassIndex> {
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::Config(format!("sigma {sigma}: {e}")))?;
    let len = shape.iter().product::<usize>();
    let entries = (0..classes)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, CLUSTER_STREAM, k as u64));
            let center: Vec<f32> = (0..len).map(|_| rng.random::<f32>()).collect();
            let images = (0..per_class)
                .map(|_| {
                    let px = center.iter().map(|&c| c + noise.sample(&mut rng) as f32).collect();
                    Ok(ImageRef::Memory(Arc::new(NdArray::new(shape.to_vec(), px)?)))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ClassEntry {
                id: format!("cluster_{k:03}"),
                images,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ClassIndex {
        split: None,
        classes: entries,
    })
}
