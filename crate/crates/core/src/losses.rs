//! Contrastive and binarization objectives.

use crate::error::{invalid, shape_err, Result};
use crate::tensor::{Graph, Real, Tensor, Var};

/// Default contrastive temperature.
pub const DEFAULT_TEMPERATURE: f64 = 0.1;

/// `2N` embeddings where rows `i` and `N + i` are two views of one source.
#[derive(Clone, Debug)]
pub struct ContrastiveBatch<T: Real = f32> {
    embeddings: Tensor<T>,
    temperature: f64,
}

impl<T: Real> ContrastiveBatch<T> {
    pub fn new(embeddings: Tensor<T>, temperature: f64) -> Result<Self> {
        let [rows, _] = embeddings.shape() else {
            return Err(shape_err!("contrastive batch must be 2N×D, got {:?}", embeddings.shape()));
        };
        if *rows < 2 || rows % 2 != 0 {
            return Err(invalid!("contrastive batch needs an even number (>= 2) of rows, got {rows}"));
        }
        if !(temperature > 0.0) {
            return Err(invalid!("temperature must be positive, got {temperature}"));
        }
        let dim = embeddings.shape()[1];
        for (i, row) in embeddings.data().chunks(dim).enumerate() {
            let n = row.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt();
            if (n - 1.0).abs() > 1e-5 {
                return Err(invalid!("row {i} has norm {n}, expected unit norm"));
            }
        }
        Ok(Self {
            embeddings,
            temperature,
        })
    }

    pub fn pairs(&self) -> usize {
        self.embeddings.shape()[0] / 2
    }

    pub fn embeddings(&self) -> &Tensor<T> {
        &self.embeddings
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }
}

/// NT-Xent loss of a validated batch.
pub fn nt_xent<T: Real>(batch: &ContrastiveBatch<T>) -> Result<f64> {
    let e = batch.embeddings();
    let (loss, _) = nt_xent_kernel(e.data(), e.shape()[0], e.shape()[1], batch.temperature, false)?;
    Ok(loss)
}

/// Loss and, optionally, its gradient with respect to the raw rows.
///
/// Rows are cosine-normalized internally. Each anchor's log-partition is
/// evaluated with a max shift over `k != i`.
pub(crate) fn nt_xent_kernel<T: Real>(
    z: &[T],
    rows: usize,
    dim: usize,
    tau: f64,
    want_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    if rows < 2 || rows % 2 != 0 {
        return Err(invalid!("nt_xent needs 2N rows with N >= 1, got {rows}"));
    }
    if !(tau > 0.0) {
        return Err(invalid!("temperature must be positive, got {tau}"));
    }
    let n = rows / 2;
    let norms: Vec<f64> = z
        .chunks(dim)
        .map(|r| r.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt())
        .collect();
    let unit: Vec<f64> = z
        .chunks(dim)
        .zip(&norms)
        .flat_map(|(r, &nr)| {
            let d = nr.max(crate::tensor::ops::NORM_EPS);
            r.iter().map(move |v| v.as_f64() / d)
        })
        .collect();
    let mut sim = vec![0.0f64; rows * rows];
    for i in 0..rows {
        for j in i..rows {
            let s: f64 = unit[i * dim..(i + 1) * dim]
                .iter()
                .zip(&unit[j * dim..(j + 1) * dim])
                .map(|(a, b)| a * b)
                .sum();
            sim[i * rows + j] = s;
            sim[j * rows + i] = s;
        }
    }
    let mut loss = 0.0;
    // dL/dS[i][k] from anchor i.
    let mut dsim = want_grad.then(|| vec![0.0f64; rows * rows]);
    let scale = 1.0 / rows as f64;
    for i in 0..rows {
        let pos = (i + n) % rows;
        let logits = |k: usize| sim[i * rows + k] / tau;
        let m = (0..rows).filter(|&k| k != i).map(logits).fold(f64::NEG_INFINITY, f64::max);
        let z_sum: f64 = (0..rows).filter(|&k| k != i).map(|k| (logits(k) - m).exp()).sum();
        let lse = m + z_sum.ln();
        loss += lse - logits(pos);
        if let Some(ds) = dsim.as_mut() {
            for k in (0..rows).filter(|&k| k != i) {
                let p = (logits(k) - lse).exp();
                let ind = if k == pos { 1.0 } else { 0.0 };
                ds[i * rows + k] = scale * (p - ind) / tau;
            }
        }
    }
    loss *= scale;
    let grad = dsim.map(|ds| {
        let mut dz = vec![0.0f64; rows * dim];
        for i in 0..rows {
            let mut du = vec![0.0f64; dim];
            for k in 0..rows {
                let w = ds[i * rows + k] + ds[k * rows + i];
                if w != 0.0 {
                    for (d, u) in du.iter_mut().zip(&unit[k * dim..(k + 1) * dim]) {
                        *d += w * u;
                    }
                }
            }
            let ui = &unit[i * dim..(i + 1) * dim];
            let out = &mut dz[i * dim..(i + 1) * dim];
            if norms[i] >= crate::tensor::ops::NORM_EPS {
                let proj: f64 = du.iter().zip(ui).map(|(a, b)| a * b).sum();
                for ((o, d), u) in out.iter_mut().zip(&du).zip(ui) {
                    *o = (d - u * proj) / norms[i];
                }
            } else {
                for (o, d) in out.iter_mut().zip(&du) {
                    *o = d / crate::tensor::ops::NORM_EPS;
                }
            }
        }
        dz
    });
    Ok((loss, grad))
}

fn sign_plus(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// `‖v − sign(v)‖₂³` with `sign(0) = +1`.
pub fn hashing_penalty<T: Real>(v: &[T]) -> f64 {
    let sq: f64 = v
        .iter()
        .map(|x| {
            let x = x.as_f64();
            (x - sign_plus(x)).powi(2)
        })
        .sum();
    sq.powf(1.5)
}

/// Graph form of [`hashing_penalty`]; the sign pattern is held constant.
pub fn hashing_penalty_graph<T: Real>(g: &mut Graph<T>, v: Var) -> Result<Var> {
    let signs = g.value(v).map(|x| T::from_f64_lossy(sign_plus(x.as_f64())));
    let s = g.constant(signs);
    let d = g.sub(v, s)?;
    let sq = g.sum_squares(d);
    Ok(g.powf(sq, 1.5))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct double loop without log-sum-exp stabilization.
    fn oracle(z: &[Vec<f64>], tau: f64) -> f64 {
        let rows = z.len();
        let n = rows / 2;
        let cos = |a: &[f64], b: &[f64]| {
            let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            d / (na * nb)
        };
        let ell = |i: usize, j: usize| {
            let num = (cos(&z[i], &z[j]) / tau).exp();
            let mut den = 0.0;
            for k in 0..rows {
                if k != i {
                    den += (cos(&z[i], &z[k]) / tau).exp();
                }
            }
            -(num / den).ln()
        };
        let mut total = 0.0;
        for i in 0..n {
            total += ell(i, n + i) + ell(n + i, i);
        }
        total / rows as f64
    }

    fn random_unit_rows(rows: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        (0..rows)
            .map(|_| {
                let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.into_iter().map(|x| x / n).collect()
            })
            .collect()
    }

    fn batch(rows: &[Vec<f64>], tau: f64) -> ContrastiveBatch<f64> {
        let dim = rows[0].len();
        let t = Tensor::new(vec![rows.len(), dim], rows.concat()).unwrap();
        ContrastiveBatch::new(t, tau).unwrap()
    }

    #[test]
    fn single_pair_has_zero_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rows = random_unit_rows(2, 5, &mut rng);
        assert!(nt_xent(&batch(&rows, 0.1)).unwrap().abs() < 1e-12);
    }

    #[test]
    fn identical_embeddings_give_ln3() {
        let v = vec![0.6, 0.8];
        let rows = vec![v.clone(), v.clone(), v.clone(), v];
        for tau in [0.1, 0.5, 1.0] {
            let l = nt_xent(&batch(&rows, tau)).unwrap();
            assert!((l - 3f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_double_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rows = random_unit_rows(6, 4, &mut rng);
        let l = nt_xent(&batch(&rows, 0.5)).unwrap();
        assert!((l - oracle(&rows, 0.5)).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_batches() {
        let t = Tensor::<f64>::zeros(&[0, 3]);
        assert!(ContrastiveBatch::new(t, 0.1).is_err());
        let t = Tensor::new(vec![3, 1], vec![1.0f64, 1.0, 1.0]).unwrap();
        assert!(ContrastiveBatch::new(t, 0.1).is_err());
        let t = Tensor::new(vec![2, 1], vec![2.0f64, 1.0]).unwrap();
        assert!(ContrastiveBatch::new(t, 0.1).is_err());
        assert!(nt_xent_kernel::<f64>(&[], 0, 3, 0.1, false).is_err());
    }

    #[test]
    fn closer_positive_lowers_loss() {
        // Anchor 0 and its positive 2 move from 60 to 30 degrees apart while
        // every other similarity stays fixed.
        let rows_at = |angle: f64| {
            let (s, c) = angle.to_radians().sin_cos();
            vec![
                vec![1.0, 0.0, 0.0],
                vec![0.0, 0.0, 1.0],
                vec![c, s, 0.0],
                vec![0.0, 0.0, -1.0],
            ]
        };
        let far = nt_xent(&batch(&rows_at(60.0), 0.5)).unwrap();
        let near = nt_xent(&batch(&rows_at(30.0), 0.5)).unwrap();
        assert!(near < far);
    }

    #[test]
    fn hashing_cases() {
        assert_eq!(hashing_penalty(&[1.0f64, -1.0, 1.0]), 0.0);
        assert!((hashing_penalty(&[0.5f64, -0.5]) - 0.5f64.sqrt().powi(3)).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v: Vec<f64> = (0..7).map(|_| rng.random_range(-2.0..2.0)).collect();
        let direct: f64 = v
            .iter()
            .map(|&x| (x - if x >= 0.0 { 1.0 } else { -1.0 }).powi(2))
            .sum::<f64>()
            .sqrt()
            .powi(3);
        assert!((hashing_penalty(&v) - direct).abs() < 1e-6);
        // sign(0) = +1
        assert!((hashing_penalty(&[0.0f64]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hashing_zero_iff_binary() {
        assert_eq!(hashing_penalty(&[-1.0f32, 1.0, 1.0, -1.0]), 0.0);
        assert!(hashing_penalty(&[-1.0f32, 1.0, 0.999]) > 0.0);
    }
}
