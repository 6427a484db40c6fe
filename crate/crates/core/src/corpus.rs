//! Procedural image corpus and the three query sets built from it.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{format_err, invalid, Result};
use crate::io::{read_ppm, write_ppm};
use crate::metrics::QueryKind;
use crate::parallel::try_map_indexed;
use crate::tensor::Tensor;
use crate::transforms::{apply_editorial, quantize_8bit, apply_non_editorial, ManipulationRecord, TransformSpec};

pub const DEFAULT_SIZE: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusImage {
    pub id: u64,
    pub seed: u64,
    pub pixels: Tensor<f32>,
}

/// Mixes a base seed with a stream index (splitmix64 finalizer).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn random_color(rng: &mut impl Rng) -> [f32; 3] {
    [rng.random(), rng.random(), rng.random()]
}

enum Shape {
    Disk { cx: f32, cy: f32, r: f32 },
    Rect { cx: f32, cy: f32, hw: f32, hh: f32, cos: f32, sin: f32 },
    Line { x0: f32, y0: f32, x1: f32, y1: f32, half: f32 },
}

impl Shape {
    fn random(size: f32, rng: &mut impl Rng) -> Self {
        match rng.random_range(0..3) {
            0 => Self::Disk {
                cx: rng.random_range(0.0..size),
                cy: rng.random_range(0.0..size),
                r: rng.random_range(0.05 * size..0.25 * size),
            },
            1 => {
                let angle: f32 = rng.random_range(0.0..std::f32::consts::PI);
                Self::Rect {
                    cx: rng.random_range(0.0..size),
                    cy: rng.random_range(0.0..size),
                    hw: rng.random_range(0.05 * size..0.3 * size),
                    hh: rng.random_range(0.05 * size..0.3 * size),
                    cos: angle.cos(),
                    sin: angle.sin(),
                }
            }
            _ => Self::Line {
                x0: rng.random_range(0.0..size),
                y0: rng.random_range(0.0..size),
                x1: rng.random_range(0.0..size),
                y1: rng.random_range(0.0..size),
                half: rng.random_range(0.01 * size..0.05 * size),
            },
        }
    }

    /// Signed distance in pixels from pixel centre `(x, y)`.
    fn distance(&self, x: f32, y: f32) -> f32 {
        match *self {
            Self::Disk { cx, cy, r } => ((x - cx).powi(2) + (y - cy).powi(2)).sqrt() - r,
            Self::Rect { cx, cy, hw, hh, cos, sin } => {
                let (dx, dy) = (x - cx, y - cy);
                let u = (dx * cos + dy * sin).abs() - hw;
                let v = (-dx * sin + dy * cos).abs() - hh;
                let outside = (u.max(0.0).powi(2) + v.max(0.0).powi(2)).sqrt();
                outside + u.max(v).min(0.0)
            }
            Self::Line { x0, y0, x1, y1, half } => {
                let (vx, vy) = (x1 - x0, y1 - y0);
                let len2 = (vx * vx + vy * vy).max(1e-6);
                let t = (((x - x0) * vx + (y - y0) * vy) / len2).clamp(0.0, 1.0);
                ((x - x0 - t * vx).powi(2) + (y - y0 - t * vy).powi(2)).sqrt() - half
            }
        }
    }
}

/// A two-colour gradient background with 3–6 anti-aliased shapes, stored at
/// 8-bit precision so that written and regenerated images agree.
pub fn render_image(seed: u64, size: usize) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c0, c1) = (random_color(&mut rng), random_color(&mut rng));
    let theta: f32 = rng.random_range(0.0..std::f32::consts::TAU);
    let (gx, gy) = (theta.cos(), theta.sin());
    let s = size as f32;
    let mut img = vec![0.0f32; 3 * size * size];
    let plane = size * size;
    for y in 0..size {
        for x in 0..size {
            let (px, py) = ((x as f32 + 0.5) / s - 0.5, (y as f32 + 0.5) / s - 0.5);
            let t = ((px * gx + py * gy) / std::f32::consts::SQRT_2 + 0.5).clamp(0.0, 1.0);
            for c in 0..3 {
                img[c * plane + y * size + x] = c0[c] * (1.0 - t) + c1[c] * t;
            }
        }
    }
    let count = rng.random_range(3..=6);
    for _ in 0..count {
        let shape = Shape::random(s, &mut rng);
        let color = random_color(&mut rng);
        for y in 0..size {
            for x in 0..size {
                let cover = (0.5 - shape.distance(x as f32 + 0.5, y as f32 + 0.5)).clamp(0.0, 1.0);
                if cover > 0.0 {
                    for c in 0..3 {
                        let p = &mut img[c * plane + y * size + x];
                        *p = *p * (1.0 - cover) + color[c] * cover;
                    }
                }
            }
        }
    }
    for v in &mut img {
        *v = quantize_8bit(*v);
    }
    Tensor::new(vec![3, size, size], img).expect("shape matches")
}

/// `n` images with ids `0..n`; image `i` depends only on `(seed, i)`.
pub fn generate_corpus(n: usize, size: usize, seed: u64) -> Result<Vec<CorpusImage>> {
    generate_range(0, n, size, seed)
}

/// Images with ids `start..start + n`.
pub fn generate_range(start: u64, n: usize, size: usize, seed: u64) -> Result<Vec<CorpusImage>> {
    if n == 0 {
        return Err(invalid!("corpus size must be at least 1"));
    }
    if size < 8 {
        return Err(invalid!("image size must be at least 8, got {size}"));
    }
    Ok((0..n as u64)
        .map(|i| {
            let id = start + i;
            let s = derive_seed(seed, id);
            CorpusImage {
                id,
                seed: s,
                pixels: render_image(s, size),
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Query {
    pub query_id: u64,
    pub gt_id: u64,
    pub kind: QueryKind,
    pub image: Tensor<f32>,
    pub transforms: Vec<TransformSpec>,
    pub edit: Option<ManipulationRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuerySets {
    pub non_editorial: Vec<Query>,
    pub editorial: Vec<Query>,
    pub editorial_plus: Vec<Query>,
}

impl QuerySets {
    pub fn get(&self, kind: QueryKind) -> &[Query] {
        match kind {
            QueryKind::NonEditorial => &self.non_editorial,
            QueryKind::Editorial => &self.editorial,
            QueryKind::EditorialPlus => &self.editorial_plus,
        }
    }
}

/// Builds the three query sets from `n_queries` sources chosen by `seed`.
/// Donors for editorial queries are other corpus images.
pub fn make_query_sets(corpus: &[CorpusImage], n_queries: usize, seed: u64, threads: usize) -> Result<QuerySets> {
    if n_queries > corpus.len() {
        return Err(invalid!("{n_queries} queries requested from a corpus of {}", corpus.len()));
    }
    if corpus.len() < 2 && n_queries > 0 {
        return Err(invalid!("editorial queries need at least two corpus images"));
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let sources = &order[..n_queries];
    let build = |kind: QueryKind, stream: u64| {
        try_map_indexed(n_queries, threads, |i| {
            let src = &corpus[sources[i]];
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, stream * 1_000_003 + i as u64));
            let donor_at = |rng: &mut ChaCha8Rng| {
                let mut d = rng.random_range(0..corpus.len() - 1);
                if d >= sources[i] {
                    d += 1;
                }
                &corpus[d]
            };
            let (image, transforms, edit) = match kind {
                QueryKind::NonEditorial => {
                    let (img, specs) = apply_non_editorial(&src.pixels, &mut rng)?;
                    (img, specs, None)
                }
                QueryKind::Editorial => {
                    let donor = donor_at(&mut rng);
                    let (img, rec) = apply_editorial(&src.pixels, &donor.pixels, donor.id, &mut rng)?;
                    (img, Vec::new(), Some(rec))
                }
                QueryKind::EditorialPlus => {
                    let donor = donor_at(&mut rng);
                    let (edited, rec) = apply_editorial(&src.pixels, &donor.pixels, donor.id, &mut rng)?;
                    let (img, specs) = apply_non_editorial(&edited, &mut rng)?;
                    (img, specs, Some(rec))
                }
            };
            Ok::<_, crate::Error>(Query {
                query_id: i as u64,
                gt_id: src.id,
                kind,
                image,
                transforms,
                edit,
            })
        })
    };
    Ok(QuerySets {
        non_editorial: build(QueryKind::NonEditorial, 1)?,
        editorial: build(QueryKind::Editorial, 2)?,
        editorial_plus: build(QueryKind::EditorialPlus, 3)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Source,
    Distractor,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: u64,
    pub file: String,
    pub seed: u64,
    pub role: Role,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub corpus_seed: u64,
    pub size: usize,
    pub images: Vec<ManifestEntry>,
}

/// Generates `sources` source images followed by `distractors` distractors.
pub fn generate_with_roles(sources: usize, distractors: usize, size: usize, seed: u64) -> Result<(Vec<CorpusImage>, Vec<Role>)> {
    let mut images = generate_corpus(sources, size, seed)?;
    let mut roles = vec![Role::Source; sources];
    if distractors > 0 {
        images.extend(generate_range(sources as u64, distractors, size, seed)?);
        roles.extend(std::iter::repeat_n(Role::Distractor, distractors));
    }
    Ok((images, roles))
}

/// Writes every image as `images/<id>.ppm` plus `manifest.json`.
pub fn write_corpus(dir: impl AsRef<Path>, seed: u64, images: &[CorpusImage], roles: &[Role]) -> Result<Manifest> {
    if images.len() != roles.len() {
        return Err(invalid!("{} images with {} roles", images.len(), roles.len()));
    }
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir.join("images"))?;
    let size = images.first().map_or(DEFAULT_SIZE, |im| im.pixels.shape()[1]);
    let mut entries = Vec::with_capacity(images.len());
    for (im, &role) in images.iter().zip(roles) {
        let file = format!("images/{:06}.ppm", im.id);
        write_ppm(dir.join(&file), &im.pixels)?;
        entries.push(ManifestEntry {
            id: im.id,
            file,
            seed: im.seed,
            role,
        });
    }
    let manifest = Manifest {
        corpus_seed: seed,
        size,
        images: entries,
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

/// Loads a corpus directory written by [`write_corpus`].
pub fn read_corpus(dir: impl AsRef<Path>) -> Result<(Manifest, Vec<CorpusImage>)> {
    let dir = dir.as_ref();
    let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
    let mut images = Vec::with_capacity(manifest.images.len());
    for e in &manifest.images {
        if e.file.contains("..") || Path::new(&e.file).is_absolute() {
            return Err(format_err!("manifest path {:?} escapes the corpus directory", e.file));
        }
        let pixels = read_ppm(dir.join(&e.file))?;
        if pixels.shape() != [3, manifest.size, manifest.size] {
            return Err(format_err!("image {} has shape {:?}", e.id, pixels.shape()));
        }
        images.push(CorpusImage {
            id: e.id,
            seed: e.seed,
            pixels,
        });
    }
    Ok((manifest, images))
}
