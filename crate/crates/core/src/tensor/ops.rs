//! Forward kernels and the backward helpers used by [`super::Graph`].
//!
//! Convolutions use an im2col layout; the inner products that reduce over
//! long axes accumulate in `f64`.

use super::{Real, Tensor};
use crate::error::{shape_err, Result};

/// Denominator guard for normalization and cosine similarity.
pub const NORM_EPS: f64 = 1e-12;

pub(crate) fn axpy<T: Real>(a: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Inner product with eight `f64` lanes combined in a fixed order.
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l].as_f64() * y[l].as_f64();
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s += x.as_f64() * y.as_f64();
    }
    s
}

pub(crate) fn sum_sq<T: Real>(a: &[T]) -> f64 {
    dot(a, a)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeometry {
    pub fn new(
        input: &[usize],
        kernels: &[usize],
        bias: &[usize],
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let [c_in, h, w] = input else {
            return Err(shape_err!("conv2d input must be C×H×W, got {input:?}"));
        };
        let [c_out, kc, kh, kw] = kernels else {
            return Err(shape_err!("conv2d kernels must be O×C×k×k, got {kernels:?}"));
        };
        if kc != c_in || kh != kw {
            return Err(shape_err!(
                "conv2d kernels {kernels:?} incompatible with input {input:?}"
            ));
        }
        if bias != [*c_out] {
            return Err(shape_err!("conv2d bias {bias:?} must be [{c_out}]"));
        }
        if stride == 0 {
            return Err(shape_err!("conv2d stride must be >= 1"));
        }
        let k = *kh;
        if k > h + 2 * pad || k > w + 2 * pad || k == 0 {
            return Err(shape_err!(
                "conv2d kernel {k} larger than padded input {h}×{w} (pad {pad})"
            ));
        }
        Ok(Self {
            c_in: *c_in,
            h: *h,
            w: *w,
            c_out: *c_out,
            k,
            stride,
            pad,
            h_out: (h + 2 * pad - k) / stride + 1,
            w_out: (w + 2 * pad - k) / stride + 1,
        })
    }

    fn patch_len(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn out_plane(&self) -> usize {
        self.h_out * self.w_out
    }
}

fn im2col<T: Real>(input: &[T], g: &ConvGeometry) -> Vec<T> {
    let plane = g.out_plane();
    let mut cols = vec![T::zero(); g.patch_len() * plane];
    for c in 0..g.c_in {
        let src = &input[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src_row = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let dst_row = &mut dst[oy * g.w_out..(oy + 1) * g.w_out];
                    for (ox, d) in dst_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            *d = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Real>(cols: &[T], g: &ConvGeometry, out: &mut [T]) {
    let plane = g.out_plane();
    for c in 0..g.c_in {
        let dst = &mut out[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = iy as usize * g.w;
                    for ox in 0..g.w_out {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[base + ix as usize] += src[oy * g.w_out + ox];
                        }
                    }
                }
            }
        }
    }
}

/// 2-D cross-correlation of a C×H×W input with O×C×k×k kernels.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeometry::new(input.shape(), kernels.shape(), bias.shape(), stride, pad)?;
    let cols = im2col(input.data(), &g);
    let plane = g.out_plane();
    let q = g.patch_len();
    let mut out = vec![T::zero(); g.c_out * plane];
    for o in 0..g.c_out {
        let row = &mut out[o * plane..(o + 1) * plane];
        row.fill(bias.data()[o]);
        let kr = &kernels.data()[o * q..(o + 1) * q];
        for (p, &kv) in kr.iter().enumerate() {
            if kv != T::zero() {
                axpy(kv, &cols[p * plane..(p + 1) * plane], row);
            }
        }
    }
    Tensor::new(vec![g.c_out, g.h_out, g.w_out], out)
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub kernels: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

pub(crate) fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    grad_out: &[T],
    g: &ConvGeometry,
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let plane = g.out_plane();
    let q = g.patch_len();
    let kernel_grad = need.1.then(|| {
        let cols = im2col(input.data(), g);
        let mut dk = vec![T::zero(); g.c_out * q];
        for o in 0..g.c_out {
            let go = &grad_out[o * plane..(o + 1) * plane];
            for p in 0..q {
                dk[o * q + p] = T::from_f64_lossy(dot(go, &cols[p * plane..(p + 1) * plane]));
            }
        }
        dk
    });
    let input_grad = need.0.then(|| {
        let mut dcols = vec![T::zero(); q * plane];
        for o in 0..g.c_out {
            let go = &grad_out[o * plane..(o + 1) * plane];
            let kr = &kernels.data()[o * q..(o + 1) * q];
            for (p, &kv) in kr.iter().enumerate() {
                if kv != T::zero() {
                    axpy(kv, go, &mut dcols[p * plane..(p + 1) * plane]);
                }
            }
        }
        let mut dx = vec![T::zero(); g.c_in * g.h * g.w];
        col2im(&dcols, g, &mut dx);
        dx
    });
    let bias_grad = need.2.then(|| {
        (0..g.c_out)
            .map(|o| {
                let s: f64 = grad_out[o * plane..(o + 1) * plane]
                    .iter()
                    .map(|v| v.as_f64())
                    .sum();
                T::from_f64_lossy(s)
            })
            .collect()
    });
    ConvGrads {
        input: input_grad,
        kernels: kernel_grad,
        bias: bias_grad,
    }
}

/// `weight · input + bias` for an `m×n` weight and an `n`-vector input.
pub fn dense<T: Real>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, n) = dense_dims(input.shape(), weight.shape(), bias.shape())?;
    let x = input.data();
    let w = weight.data();
    let out = (0..m)
        .map(|i| T::from_f64_lossy(dot(&w[i * n..(i + 1) * n], x) + bias.data()[i].as_f64()))
        .collect();
    Tensor::new(vec![m], out)
}

pub(crate) fn dense_dims(input: &[usize], weight: &[usize], bias: &[usize]) -> Result<(usize, usize)> {
    let [m, n] = weight else {
        return Err(shape_err!("dense weight must be m×n, got {weight:?}"));
    };
    let len: usize = input.iter().product();
    if len != *n || input.len() != 1 {
        return Err(shape_err!("dense input {input:?} incompatible with weight {weight:?}"));
    }
    if bias != [*m] {
        return Err(shape_err!("dense bias {bias:?} must be [{m}]"));
    }
    Ok((*m, *n))
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn tanh<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.tanh())
}

pub fn sigmoid<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| T::one() / (T::one() + (-v).exp()))
}

pub fn scale<T: Real>(x: &Tensor<T>, c: T) -> Tensor<T> {
    x.map(|v| v * c)
}

pub fn add<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    a.zip_map(b, |x, y| x + y)
}

pub fn sub<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    a.zip_map(b, |x, y| x - y)
}

fn pool_dims(shape: &[usize], window: usize) -> Result<(usize, usize, usize)> {
    let [c, h, w] = shape else {
        return Err(shape_err!("pooling input must be C×H×W, got {shape:?}"));
    };
    if window == 0 || h % window != 0 || w % window != 0 {
        return Err(shape_err!("plane {h}×{w} not divisible by window {window}"));
    }
    Ok((*c, *h, *w))
}

/// Mean over non-overlapping `window×window` tiles.
pub fn avgpool2d<T: Real>(x: &Tensor<T>, window: usize) -> Result<Tensor<T>> {
    let (c, h, w) = pool_dims(x.shape(), window)?;
    let (ho, wo) = (h / window, w / window);
    let inv = 1.0 / (window * window) as f64;
    let d = x.data();
    let mut out = Vec::with_capacity(c * ho * wo);
    for ch in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut s = 0.0f64;
                for dy in 0..window {
                    let row = (ch * h + oy * window + dy) * w + ox * window;
                    for v in &d[row..row + window] {
                        s += v.as_f64();
                    }
                }
                out.push(T::from_f64_lossy(s * inv));
            }
        }
    }
    Tensor::new(vec![c, ho, wo], out)
}

pub(crate) fn avgpool2d_backward<T: Real>(shape: &[usize], window: usize, grad: &[T]) -> Vec<T> {
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let (ho, wo) = (h / window, w / window);
    let inv = T::from_f64_lossy(1.0 / (window * window) as f64);
    let mut dx = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                dx[(ch * h + y) * w + x] = grad[(ch * ho + y / window) * wo + x / window] * inv;
            }
        }
    }
    dx
}

/// Mean over each channel plane, returning a length-C vector.
pub fn global_avgpool<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [c, h, w] = x.shape() else {
        return Err(shape_err!("global pooling input must be C×H×W, got {:?}", x.shape()));
    };
    let plane = h * w;
    let out = x
        .data()
        .chunks(plane)
        .map(|p| T::from_f64_lossy(p.iter().map(|v| v.as_f64()).sum::<f64>() / plane as f64))
        .collect::<Vec<_>>();
    debug_assert_eq!(out.len(), *c);
    Tensor::new(vec![*c], out)
}

pub fn l2_normalize<T: Real>(v: &Tensor<T>) -> Tensor<T> {
    let n = v.norm_l2().max(NORM_EPS);
    v.map(|x| T::from_f64_lossy(x.as_f64() / n))
}

pub fn cosine_similarity<T: Real>(u: &Tensor<T>, v: &Tensor<T>) -> Result<T> {
    if u.len() != v.len() {
        return Err(shape_err!("cosine of lengths {} and {}", u.len(), v.len()));
    }
    let nu = u.norm_l2().max(NORM_EPS);
    let nv = v.norm_l2().max(NORM_EPS);
    Ok(T::from_f64_lossy(dot(u.data(), v.data()) / (nu * nv)))
}

/// `x - logsumexp(x)` computed with a max shift.
pub fn log_softmax<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let m = x.data().iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
    let lse = m + x.data().iter().map(|v| (v.as_f64() - m).exp()).sum::<f64>().ln();
    x.map(|v| T::from_f64_lossy(v.as_f64() - lse))
}

pub fn softmax<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    log_softmax(x).map(|v| v.exp())
}

/// Source taps of a half-pixel-centred bilinear resampling along one axis.
#[derive(Clone, Debug)]
pub(crate) struct AxisTaps {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
    pub frac: Vec<f64>,
}

impl AxisTaps {
    pub fn new(n_in: usize, n_out: usize) -> Self {
        let scale = n_in as f64 / n_out as f64;
        let mut taps = Self {
            lo: Vec::with_capacity(n_out),
            hi: Vec::with_capacity(n_out),
            frac: Vec::with_capacity(n_out),
        };
        for d in 0..n_out {
            let src = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(n_in - 1);
            taps.lo.push(lo);
            taps.hi.push(hi);
            taps.frac.push(src - lo as f64);
        }
        taps
    }
}

fn resize_dims(shape: &[usize], out_h: usize, out_w: usize) -> Result<(usize, usize, usize)> {
    let [c, h, w] = shape else {
        return Err(shape_err!("resize input must be C×H×W, got {shape:?}"));
    };
    if out_h == 0 || out_w == 0 || *h == 0 || *w == 0 {
        return Err(shape_err!("resize dimensions must be >= 1"));
    }
    Ok((*c, *h, *w))
}

/// Bilinear resampling with half-pixel centres (edge-clamped).
pub fn bilinear_resize<T: Real>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (c, h, w) = resize_dims(x.shape(), out_h, out_w)?;
    if h == out_h && w == out_w {
        return Ok(x.clone());
    }
    let ty = AxisTaps::new(h, out_h);
    let tx = AxisTaps::new(w, out_w);
    let d = x.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &d[ch * h * w..(ch + 1) * h * w];
        for oy in 0..out_h {
            let (y0, y1, fy) = (ty.lo[oy], ty.hi[oy], ty.frac[oy]);
            for ox in 0..out_w {
                let (x0, x1, fx) = (tx.lo[ox], tx.hi[ox], tx.frac[ox]);
                let top = plane[y0 * w + x0].as_f64() * (1.0 - fx) + plane[y0 * w + x1].as_f64() * fx;
                let bot = plane[y1 * w + x0].as_f64() * (1.0 - fx) + plane[y1 * w + x1].as_f64() * fx;
                out.push(T::from_f64_lossy(top * (1.0 - fy) + bot * fy));
            }
        }
    }
    Tensor::new(vec![c, out_h, out_w], out)
}

pub(crate) fn bilinear_resize_backward<T: Real>(
    in_shape: &[usize],
    out_h: usize,
    out_w: usize,
    grad: &[T],
) -> Vec<T> {
    let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    if h == out_h && w == out_w {
        return grad.to_vec();
    }
    let ty = AxisTaps::new(h, out_h);
    let tx = AxisTaps::new(w, out_w);
    let mut acc = vec![0.0f64; c * h * w];
    for ch in 0..c {
        let plane = &mut acc[ch * h * w..(ch + 1) * h * w];
        for oy in 0..out_h {
            let (y0, y1, fy) = (ty.lo[oy], ty.hi[oy], ty.frac[oy]);
            for ox in 0..out_w {
                let (x0, x1, fx) = (tx.lo[ox], tx.hi[ox], tx.frac[ox]);
                let g = grad[(ch * out_h + oy) * out_w + ox].as_f64();
                plane[y0 * w + x0] += g * (1.0 - fy) * (1.0 - fx);
                plane[y0 * w + x1] += g * (1.0 - fy) * fx;
                plane[y1 * w + x0] += g * fy * (1.0 - fx);
                plane[y1 * w + x1] += g * fy * fx;
            }
        }
    }
    acc.into_iter().map(T::from_f64_lossy).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f32> {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0f32..1.0))
    }

    // Direct quadruple loop over output channel, output pixel, input channel and tap.
    fn conv_oracle(x: &Tensor<f32>, k: &Tensor<f32>, b: &Tensor<f32>, stride: usize, pad: usize) -> Vec<f64> {
        let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (o, ks) = (k.shape()[0], k.shape()[2]);
        let ho = (h + 2 * pad - ks) / stride + 1;
        let wo = (w + 2 * pad - ks) / stride + 1;
        let mut out = vec![0.0; o * ho * wo];
        for oc in 0..o {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut s = b.data()[oc] as f64;
                    for ic in 0..c {
                        for ky in 0..ks {
                            for kx in 0..ks {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    s += x.data()[(ic * h + iy as usize) * w + ix as usize] as f64
                                        * k.data()[((oc * c + ic) * ks + ky) * ks + kx] as f64;
                                }
                            }
                        }
                    }
                    out[(oc * ho + oy) * wo + ox] = s;
                }
            }
        }
        out
    }

    #[test]
    fn conv_zero_input_zero_bias_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::<f32>::zeros(&[1, 3, 3]);
        let k = random(&[2, 1, 3, 3], &mut rng);
        let out = conv2d(&x, &k, &Tensor::zeros(&[2]), 1, 1).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(&[1, 5, 4], &mut rng);
        let k = Tensor::new(vec![1, 1, 1, 1], vec![1.0f32]).unwrap();
        let out = conv2d(&x, &k, &Tensor::zeros(&[1]), 1, 0).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn conv_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[1, 4, 4], &mut rng);
        let k = random(&[1, 1, 2, 2], &mut rng);
        let b = random(&[1], &mut rng);
        let out = conv2d(&x, &k, &b, 1, 0).unwrap();
        assert_eq!(out.shape(), &[1, 3, 3]);
        for (a, e) in out.data().iter().zip(conv_oracle(&x, &k, &b, 1, 0)) {
            assert!((*a as f64 - e).abs() < 1e-6);
        }
        for (stride, pad) in [(1, 1), (2, 1), (2, 0), (3, 2)] {
            let x = random(&[3, 7, 6], &mut rng);
            let k = random(&[4, 3, 3, 3], &mut rng);
            let b = random(&[4], &mut rng);
            let out = conv2d(&x, &k, &b, stride, pad).unwrap();
            for (a, e) in out.data().iter().zip(conv_oracle(&x, &k, &b, stride, pad)) {
                assert!((*a as f64 - e).abs() < 1e-5, "stride {stride} pad {pad}");
            }
        }
    }

    #[test]
    fn conv_shape_errors() {
        let x = Tensor::<f32>::zeros(&[2, 3, 3]);
        let k = Tensor::<f32>::zeros(&[1, 1, 3, 3]);
        assert!(conv2d(&x, &k, &Tensor::zeros(&[1]), 1, 0).is_err());
        let k = Tensor::<f32>::zeros(&[1, 2, 5, 5]);
        assert!(conv2d(&x, &k, &Tensor::zeros(&[1]), 1, 0).is_err());
        let k = Tensor::<f32>::zeros(&[1, 2, 3, 3]);
        assert!(conv2d(&x, &k, &Tensor::zeros(&[2]), 1, 0).is_err());
        assert!(conv2d(&x, &k, &Tensor::zeros(&[1]), 0, 0).is_err());
    }

    #[test]
    fn dense_cases() {
        let x = Tensor::vector(vec![1.5f32, -2.0]);
        let eye = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(dense(&x, &eye, &Tensor::zeros(&[2])).unwrap(), x);
        let b = Tensor::vector(vec![0.25f32, 4.0, -1.0]);
        assert_eq!(dense(&x, &Tensor::zeros(&[3, 2]), &b).unwrap(), b);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = random(&[3, 2], &mut rng);
        let out = dense(&x, &w, &b).unwrap();
        for i in 0..3 {
            let e = w.data()[2 * i] as f64 * 1.5 + w.data()[2 * i + 1] as f64 * -2.0 + b.data()[i] as f64;
            assert!((out.data()[i] as f64 - e).abs() < 1e-6);
        }
        assert!(dense(&x, &Tensor::zeros(&[3, 3]), &b).is_err());
    }

    #[test]
    fn elementwise_cases() {
        let x = Tensor::vector(vec![-1.0f32, 0.0, 2.0]);
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        assert_eq!(tanh(&Tensor::scalar(0.0f32)).item().unwrap(), 0.0);
        let neg = scale(&x, -1.0);
        assert!(add(&x, &neg).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(sub(&x, &Tensor::vector(vec![1.0])).is_err());
    }

    #[test]
    fn pooling_cases() {
        let c = Tensor::full(&[2, 4, 4], 0.7f32);
        assert!(avgpool2d(&c, 2).unwrap().data().iter().all(|&v| (v - 0.7).abs() < 1e-7));
        assert!(global_avgpool(&c).unwrap().data().iter().all(|&v| (v - 0.7).abs() < 1e-7));
        let p = Tensor::new(vec![1, 2, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(avgpool2d(&p, 2).unwrap().data(), &[2.5]);
        assert!(avgpool2d(&Tensor::<f32>::zeros(&[1, 3, 4]), 2).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&[3, 6, 4], &mut rng);
        let out = avgpool2d(&x, 2).unwrap();
        for ch in 0..3 {
            for oy in 0..3 {
                for ox in 0..2 {
                    let mut s = 0.0f64;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            s += x.data()[(ch * 6 + 2 * oy + dy) * 4 + 2 * ox + dx] as f64;
                        }
                    }
                    assert!((out.data()[(ch * 3 + oy) * 2 + ox] as f64 - s / 4.0).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn normalize_and_cosine() {
        let v = Tensor::vector(vec![3.0f32, 4.0]);
        let n = l2_normalize(&v);
        assert!((n.data()[0] - 0.6).abs() < 1e-7 && (n.data()[1] - 0.8).abs() < 1e-7);
        assert_eq!(l2_normalize(&n), n);
        let z = Tensor::<f32>::zeros(&[4]);
        assert_eq!(l2_normalize(&z), z);

        assert!((cosine_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-6);
        let e1 = Tensor::vector(vec![1.0f32, 0.0]);
        let e2 = Tensor::vector(vec![0.0f32, 1.0]);
        assert_eq!(cosine_similarity(&e1, &e2).unwrap(), 0.0);
        assert!((cosine_similarity(&v, &scale(&v, -1.0)).unwrap() + 1.0).abs() < 1e-6);
        assert!(cosine_similarity(&v, &Tensor::vector(vec![1.0])).is_err());
    }

    #[test]
    fn resize_cases() {
        let c = Tensor::full(&[3, 5, 7], 0.3f32);
        let r = bilinear_resize(&c, 4, 9).unwrap();
        assert!(r.data().iter().all(|&v| (v - 0.3).abs() < 1e-6));
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random(&[2, 6, 6], &mut rng);
        let same = bilinear_resize(&x, 6, 6).unwrap();
        for (a, b) in same.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        let q = Tensor::new(vec![1, 2, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(bilinear_resize(&q, 1, 1).unwrap().data(), &[2.5]);
        // 2x downsampling samples the midpoint of every 2×2 tile.
        let half = bilinear_resize(&x, 3, 3).unwrap();
        let tiles = avgpool2d(&x, 2).unwrap();
        for (a, b) in half.data().iter().zip(tiles.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
