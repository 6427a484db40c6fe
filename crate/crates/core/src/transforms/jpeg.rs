//! Lossy 8×8 block-DCT quantization filter.
//!
//! Each channel is treated like a JPEG luminance plane: 8-bit quantize,
//! level shift, orthonormal DCT-II per block, divide by the scaled standard
//! table and round, then invert. No chroma subsampling or entropy coding.

use crate::error::{invalid, Result};
use crate::tensor::Tensor;

/// Default quality of the realizability filter.
pub const REALIZE_QUALITY: u8 = 90;

const LUMA_TABLE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Luminance table scaled for `quality` in the IJG convention.
pub fn quant_table(quality: u8) -> Result<[f64; 64]> {
    if !(1..=100).contains(&quality) {
        return Err(invalid!("quality must be in [1, 100], got {quality}"));
    }
    let q = quality as u32;
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let mut table = [0.0; 64];
    for (t, &base) in table.iter_mut().zip(&LUMA_TABLE) {
        *t = ((base as u32 * scale + 50) / 100).clamp(1, 255) as f64;
    }
    Ok(table)
}

/// The 8-bit value nearest to `v`, as a real in [0, 1].
pub fn quantize_8bit(v: f32) -> f32 {
    ((v.clamp(0.0, 1.0) * 255.0).round() / 255.0).clamp(0.0, 1.0)
}

fn dct_basis() -> [[f64; 8]; 8] {
    let mut c = [[0.0; 8]; 8];
    for (u, row) in c.iter_mut().enumerate() {
        let a = if u == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
        for (x, v) in row.iter_mut().enumerate() {
            *v = a * (((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI) / 16.0).cos();
        }
    }
    c
}

/// Applies the filter to a C×H×W image with values in [0, 1]. Partial
/// border blocks are padded by edge replication.
pub fn jpeg_like(image: &Tensor<f32>, quality: u8) -> Result<Tensor<f32>> {
    let [c, h, w] = *image.shape() else {
        return Err(invalid!("image must be C×H×W, got {:?}", image.shape()));
    };
    let table = quant_table(quality)?;
    let basis = dct_basis();
    let mut out = vec![0.0f32; image.len()];
    let src = image.data();
    let mut block = [0.0f64; 64];
    let mut tmp = [0.0f64; 64];
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * h * w..(ch + 1) * h * w];
        for by in (0..h).step_by(8) {
            for bx in (0..w).step_by(8) {
                for y in 0..8 {
                    let sy = (by + y).min(h - 1);
                    for x in 0..8 {
                        let sx = (bx + x).min(w - 1);
                        block[y * 8 + x] = (quantize_8bit(plane[sy * w + sx]) * 255.0).round() as f64 - 128.0;
                    }
                }
                // Forward DCT: rows then columns.
                for y in 0..8 {
                    for u in 0..8 {
                        tmp[y * 8 + u] = (0..8).map(|x| basis[u][x] * block[y * 8 + x]).sum();
                    }
                }
                for v in 0..8 {
                    for u in 0..8 {
                        let coef: f64 = (0..8).map(|y| basis[v][y] * tmp[y * 8 + u]).sum();
                        let q = table[v * 8 + u];
                        block[v * 8 + u] = (coef / q).round() * q;
                    }
                }
                // Inverse DCT: columns then rows.
                for y in 0..8 {
                    for u in 0..8 {
                        tmp[y * 8 + u] = (0..8).map(|v| basis[v][y] * block[v * 8 + u]).sum();
                    }
                }
                for y in 0..8 {
                    if by + y >= h {
                        break;
                    }
                    for x in 0..8 {
                        if bx + x >= w {
                            break;
                        }
                        let p: f64 = (0..8).map(|u| basis[u][x] * tmp[y * 8 + u]).sum::<f64>() + 128.0;
                        dst[(by + y) * w + bx + x] = (p.round().clamp(0.0, 255.0) / 255.0) as f32;
                    }
                }
            }
        }
    }
    Tensor::new(vec![c, h, w], out)
}
