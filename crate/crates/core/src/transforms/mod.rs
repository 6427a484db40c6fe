//! Non-editorial distortions, synthetic editorial manipulations, and the
//! realizability filter applied before an adversarial image is queried.

mod jpeg;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use crate::tensor::ops::bilinear_resize;
pub use jpeg::{jpeg_like, quant_table, quantize_8bit, REALIZE_QUALITY};

use crate::error::{invalid, shape_err, Result};
use crate::model::{HEATMAP_CELLS, HEATMAP_GRID};
use crate::tensor::Tensor;

/// One parameterized image transformation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransformSpec {
    /// Downscale by `scale` and back up to the original size.
    Resize { scale: f32 },
    Rotate { degrees: f32 },
    Hflip,
    /// Resample the box (fractions of height/width) onto the full frame; a
    /// box reaching outside the image pads by edge replication.
    CropPad { top: f32, left: f32, height: f32, width: f32 },
    GaussNoise { sigma: f32, seed: u64 },
    BrightnessContrast { contrast: f32, brightness: f32 },
    JpegLike { quality: u8 },
}

impl TransformSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Resize { scale } => (0.25..=1.0).contains(&scale),
            Self::Rotate { degrees } => (-15.0..=15.0).contains(&degrees),
            Self::Hflip => true,
            Self::CropPad { top, left, height, width } => {
                (0.5..=1.5).contains(&height)
                    && (0.5..=1.5).contains(&width)
                    && (-0.5..=0.5).contains(&top)
                    && (-0.5..=0.5).contains(&left)
            }
            Self::GaussNoise { sigma, .. } => (0.0..=0.1).contains(&sigma),
            Self::BrightnessContrast { contrast, brightness } => {
                (0.5..=1.5).contains(&contrast) && (-0.3..=0.3).contains(&brightness)
            }
            Self::JpegLike { quality } => (10..=100).contains(&quality),
        };
        if ok {
            Ok(())
        } else {
            Err(invalid!("transform parameters out of range: {self:?}"))
        }
    }

    pub fn apply(&self, image: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.validate()?;
        let [_, h, w] = *image.shape() else {
            return Err(shape_err!("image must be C×H×W, got {:?}", image.shape()));
        };
        let out = match *self {
            Self::Resize { scale } => {
                let sh = ((h as f32 * scale).round() as usize).max(1);
                let sw = ((w as f32 * scale).round() as usize).max(1);
                bilinear_resize(&bilinear_resize(image, sh, sw)?, h, w)?
            }
            Self::Rotate { degrees } => rotate(image, degrees),
            Self::Hflip => hflip(image),
            Self::CropPad { top, left, height, width } => crop_pad(image, top, left, height, width),
            Self::GaussNoise { sigma, seed } => {
                if sigma == 0.0 {
                    image.clone()
                } else {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let normal = Normal::new(0.0f32, sigma).expect("valid sigma");
                    let data = image.data().iter().map(|&v| (v + normal.sample(&mut rng)).clamp(0.0, 1.0));
                    Tensor::new(image.shape().to_vec(), data.collect())?
                }
            }
            Self::BrightnessContrast { contrast, brightness } => {
                image.map(|v| ((v - 0.5) * contrast + 0.5 + brightness).clamp(0.0, 1.0))
            }
            Self::JpegLike { quality } => jpeg_like(image, quality)?,
        };
        Ok(out)
    }
}

pub fn apply_all(image: &Tensor<f32>, specs: &[TransformSpec]) -> Result<Tensor<f32>> {
    specs.iter().try_fold(image.clone(), |img, s| s.apply(&img))
}

/// Samples a single non-editorial transform of the given kind index (0..7).
fn sample_spec(kind: usize, rng: &mut impl Rng) -> TransformSpec {
    match kind {
        0 => TransformSpec::Resize { scale: rng.random_range(0.5..0.9) },
        1 => TransformSpec::Rotate { degrees: rng.random_range(-10.0..10.0) },
        2 => TransformSpec::Hflip,
        3 => {
            let height = rng.random_range(0.8f32..1.1);
            let width = rng.random_range(0.8f32..1.1);
            let span = |f: f32, rng: &mut dyn rand::RngCore| {
                let room = 1.0 - f;
                if room.abs() < 1e-6 {
                    0.0
                } else {
                    rng.random_range(room.min(0.0)..=room.max(0.0))
                }
            };
            TransformSpec::CropPad {
                top: span(height, rng),
                left: span(width, rng),
                height,
                width,
            }
        }
        4 => TransformSpec::GaussNoise {
            sigma: rng.random_range(0.0..0.05),
            seed: rng.random(),
        },
        5 => TransformSpec::BrightnessContrast {
            contrast: rng.random_range(0.8..1.2),
            brightness: rng.random_range(-0.1..0.1),
        },
        _ => TransformSpec::JpegLike { quality: rng.random_range(50..=95) },
    }
}

/// A random composition of 1–3 non-editorial transforms. The output keeps
/// the input resolution; models resize to their input size themselves.
pub fn apply_non_editorial(image: &Tensor<f32>, rng: &mut impl Rng) -> Result<(Tensor<f32>, Vec<TransformSpec>)> {
    let n = rng.random_range(1..=3);
    let specs: Vec<TransformSpec> = (0..n).map(|_| sample_spec(rng.random_range(0..7), rng)).collect();
    Ok((apply_all(image, &specs)?, specs))
}

/// Pixel-aligned distortions only (noise, brightness/contrast, compression).
pub fn apply_photometric(image: &Tensor<f32>, rng: &mut impl Rng) -> Result<(Tensor<f32>, Vec<TransformSpec>)> {
    let n = rng.random_range(1..=2);
    let specs: Vec<TransformSpec> = (0..n)
        .map(|_| {
            let kind = [4, 5, 6][rng.random_range(0..3)];
            sample_spec(kind, rng)
        })
        .collect();
    Ok((apply_all(image, &specs)?, specs))
}

fn hflip(image: &Tensor<f32>) -> Tensor<f32> {
    let w = image.shape()[2];
    let d = image.data();
    Tensor::new(
        image.shape().to_vec(),
        (0..d.len()).map(|i| d[i - i % w + (w - 1 - i % w)]).collect(),
    )
    .expect("same shape")
}

fn sample_clamped(plane: &[f32], h: usize, w: usize, y: f64, x: f64) -> f32 {
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let top = plane[y0 * w + x0] as f64 * (1.0 - fx) + plane[y0 * w + x1] as f64 * fx;
    let bot = plane[y1 * w + x0] as f64 * (1.0 - fx) + plane[y1 * w + x1] as f64 * fx;
    (top * (1.0 - fy) + bot * fy) as f32
}

fn remap(image: &Tensor<f32>, map: impl Fn(f64, f64) -> (f64, f64)) -> Tensor<f32> {
    let [c, h, w] = *image.shape() else { unreachable!() };
    let mut out = Vec::with_capacity(image.len());
    for ch in 0..c {
        let plane = &image.data()[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let (sy, sx) = map(y as f64, x as f64);
                out.push(sample_clamped(plane, h, w, sy, sx));
            }
        }
    }
    Tensor::new(image.shape().to_vec(), out).expect("same shape")
}

/// Rotation about the image centre; exposed corners replicate the edge.
fn rotate(image: &Tensor<f32>, degrees: f32) -> Tensor<f32> {
    let (h, w) = (image.shape()[1] as f64, image.shape()[2] as f64);
    let (cy, cx) = ((h - 1.0) / 2.0, (w - 1.0) / 2.0);
    let (s, c) = (degrees as f64).to_radians().sin_cos();
    remap(image, |y, x| {
        let (dy, dx) = (y - cy, x - cx);
        (cy + c * dy - s * dx, cx + s * dy + c * dx)
    })
}

fn crop_pad(image: &Tensor<f32>, top: f32, left: f32, height: f32, width: f32) -> Tensor<f32> {
    let (h, w) = (image.shape()[1] as f64, image.shape()[2] as f64);
    let (t, l) = (top as f64 * h, left as f64 * w);
    let (sy, sx) = (height as f64, width as f64);
    remap(image, |y, x| (t + (y + 0.5) * sy - 0.5, l + (x + 0.5) * sx - 0.5))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditKind {
    Splice,
    Invert,
}

/// Where an editorial manipulation touched the image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManipulationRecord {
    pub kind: EditKind,
    pub height: usize,
    pub width: usize,
    /// Row-major H×W mask of edited pixels.
    pub mask: Vec<bool>,
    /// Fraction of edited pixels in each 7×7 grid cell.
    pub heatmap: Vec<f32>,
    pub donor_id: Option<u64>,
}

impl ManipulationRecord {
    pub fn area(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Boundaries `floor(i·n/7)` splitting `n` pixels into seven cells.
pub fn cell_bounds(n: usize) -> [usize; HEATMAP_GRID + 1] {
    let mut b = [0; HEATMAP_GRID + 1];
    for (i, v) in b.iter_mut().enumerate() {
        *v = i * n / HEATMAP_GRID;
    }
    b
}

/// Masked-pixel fraction of each cell of the 7×7 grid.
pub fn heatmap_from_mask(mask: &[bool], height: usize, width: usize) -> Result<Vec<f32>> {
    if mask.len() != height * width {
        return Err(shape_err!("mask of {} pixels is not {height}×{width}", mask.len()));
    }
    if height < HEATMAP_GRID || width < HEATMAP_GRID {
        return Err(shape_err!("mask {height}×{width} smaller than the heatmap grid"));
    }
    let (ry, rx) = (cell_bounds(height), cell_bounds(width));
    let mut heat = Vec::with_capacity(HEATMAP_CELLS);
    for cy in 0..HEATMAP_GRID {
        for cx in 0..HEATMAP_GRID {
            let mut count = 0usize;
            for y in ry[cy]..ry[cy + 1] {
                count += mask[y * width + rx[cx]..y * width + rx[cx + 1]].iter().filter(|&&m| m).count();
            }
            let cell = (ry[cy + 1] - ry[cy]) * (rx[cx + 1] - rx[cx]);
            heat.push(count as f32 / cell as f32);
        }
    }
    Ok(heat)
}

/// Pastes a donor rectangle covering 5–25% of the frame, or inverts the
/// colours of such a rectangle.
pub fn apply_editorial(
    image: &Tensor<f32>,
    donor: &Tensor<f32>,
    donor_id: u64,
    rng: &mut impl Rng,
) -> Result<(Tensor<f32>, ManipulationRecord)> {
    image.require_same_shape(donor)?;
    let [c, h, w] = *image.shape() else {
        return Err(shape_err!("image must be C×H×W, got {:?}", image.shape()));
    };
    let area = rng.random_range(0.05..0.25) * (h * w) as f64;
    let aspect: f64 = rng.random_range(0.5..2.0);
    let rh = ((area * aspect).sqrt().round() as usize).clamp(1, h);
    let rw = ((area / rh as f64).round() as usize).clamp(1, w);
    let y0 = rng.random_range(0..=h - rh);
    let x0 = rng.random_range(0..=w - rw);
    let kind = if rng.random_bool(0.75) { EditKind::Splice } else { EditKind::Invert };
    let (dy, dx) = (rng.random_range(0..=h - rh), rng.random_range(0..=w - rw));
    let mut out = image.clone();
    let mut mask = vec![false; h * w];
    for y in y0..y0 + rh {
        for x in x0..x0 + rw {
            mask[y * w + x] = true;
            for ch in 0..c {
                let i = (ch * h + y) * w + x;
                out.data_mut()[i] = match kind {
                    EditKind::Splice => donor.data()[(ch * h + dy + y - y0) * w + dx + x - x0],
                    EditKind::Invert => 1.0 - image.data()[i],
                };
            }
        }
    }
    let heatmap = heatmap_from_mask(&mask, h, w)?;
    Ok((
        out,
        ManipulationRecord {
            kind,
            height: h,
            width: w,
            mask,
            heatmap,
            donor_id: (kind == EditKind::Splice).then_some(donor_id),
        },
    ))
}

/// 8-bit quantization plus quality-90 block-DCT compression: what survives
/// saving the image as a lossy file.
pub fn realize(image: &Tensor<f32>) -> Result<Tensor<f32>> {
    jpeg_like(image, REALIZE_QUALITY)
}
