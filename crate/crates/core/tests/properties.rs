use aria_core::attacks::{is_feasible, pgd, project, AttackBudget, Evaluation, Norm, Sense};
use aria_core::io::{decode_ppm, encode_ppm};
use aria_core::losses::{nt_xent, ContrastiveBatch};
use aria_core::metrics::f_score;
use aria_core::model::BinaryHash;
use aria_core::retrieval::{FlatIndex, HashIndex, IvfPqIndex, IvfPqParams, VectorIndex};
use aria_core::tensor::Tensor;
use aria_core::transforms::realize;
use proptest::prelude::*;

fn unit_rows(raw: &[f64], dim: usize) -> Vec<f64> {
    raw.chunks(dim)
        .flat_map(|r| {
            let n = r.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-6);
            r.iter().map(move |v| v / n)
        })
        .collect()
}

fn batch(rows: Vec<f64>, dim: usize, tau: f64) -> ContrastiveBatch<f64> {
    let n = rows.len() / dim;
    ContrastiveBatch::new(Tensor::new(vec![n, dim], rows).unwrap(), tau).unwrap()
}

fn image_strategy(max_side: usize) -> impl Strategy<Value = Tensor<f32>> {
    (1..=max_side, 1..=max_side).prop_flat_map(|(h, w)| {
        proptest::collection::vec(0.0f32..=1.0, 3 * h * w).prop_map(move |d| Tensor::new(vec![3, h, w], d).unwrap())
    })
}

fn unit_vectors(n: usize, dim: usize) -> impl Strategy<Value = Vec<f32>> {
    proptest::collection::vec(0.05f32..1.0, n * dim).prop_flat_map(move |mags| {
        proptest::collection::vec(any::<bool>(), n * dim).prop_map(move |signs| {
            let raw: Vec<f64> = mags.iter().zip(&signs).map(|(&m, &s)| if s { m as f64 } else { -(m as f64) }).collect();
            unit_rows(&raw, dim).into_iter().map(|v| v as f32).collect()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nt_xent_invariant_to_rotation(
        raw in proptest::collection::vec(-1.0f64..1.0, 4 * 3),
        angle in 0.0f64..std::f64::consts::TAU,
        tau in 0.05f64..2.0,
    ) {
        // Rotating every embedding in a common plane preserves all cosines.
        let rows = unit_rows(&raw, 3);
        let (c, s) = (angle.cos(), angle.sin());
        let rotated: Vec<f64> = rows
            .chunks(3)
            .flat_map(|r| [c * r[0] - s * r[1], s * r[0] + c * r[1], r[2]])
            .collect();
        let a = nt_xent(&batch(rows, 3, tau)).unwrap();
        let b = nt_xent(&batch(rotated, 3, tau)).unwrap();
        prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
    }

    #[test]
    fn nt_xent_invariant_to_pair_order(
        raw in proptest::collection::vec(-1.0f64..1.0, 6 * 4),
        tau in 0.05f64..2.0,
    ) {
        let rows = unit_rows(&raw, 4);
        // Reverse the order of the three pairs: rows (i, 3+i) -> (2-i, 5-i).
        let perm = [2, 1, 0, 5, 4, 3];
        let permuted: Vec<f64> = perm.iter().flat_map(|&i| rows[i * 4..(i + 1) * 4].to_vec()).collect();
        let a = nt_xent(&batch(rows, 4, tau)).unwrap();
        let b = nt_xent(&batch(permuted, 4, tau)).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn pgd_iterates_stay_feasible(
        x in image_strategy(6),
        eps in 1e-6f64..0.5,
        l2 in any::<bool>(),
        iters in 1usize..12,
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let w: Vec<f32> = (0..x.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let budget = if l2 { AttackBudget::l2(eps, iters, eps / 2.0) } else { AttackBudget::linf(eps, iters, eps / 2.0) };
        let mut all_feasible = true;
        let out = pgd(&x, &budget, Sense::Maximize, |xd| {
            let diff: Vec<f64> = xd.data().iter().zip(x.data()).map(|(&a, &b)| a as f64 - b as f64).collect();
            all_feasible &= xd.data().iter().all(|v| (0.0..=1.0).contains(v));
            all_feasible &= match budget.norm {
                Norm::Linf => diff.iter().all(|d| d.abs() <= eps),
                Norm::L2 => diff.iter().map(|d| d * d).sum::<f64>().sqrt() <= eps,
            };
            let value: f64 = xd.data().iter().zip(&w).map(|(&a, &b)| a as f64 * b as f64).sum();
            Ok(Evaluation::new(value, Tensor::new(x.shape().to_vec(), w.clone()).unwrap()))
        }).unwrap();
        prop_assert!(out.feasible);
        prop_assert!(all_feasible);
        prop_assert!(is_feasible(&out.delta, &x, &budget));
        prop_assert!(out.best_value() >= out.initial_value());
    }

    #[test]
    fn projection_is_idempotent(
        x in image_strategy(5),
        eps in 1e-4f64..0.3,
        l2 in any::<bool>(),
        scale in 0.0f32..2.0,
    ) {
        let budget = if l2 { AttackBudget::l2(eps, 1, eps) } else { AttackBudget::linf(eps, 1, eps) };
        let mut delta = Tensor::from_fn(x.shape(), |i| scale * if i % 3 == 0 { -1.0 } else { 0.7 });
        project(&mut delta, &x, &budget).unwrap();
        prop_assert!(is_feasible(&delta, &x, &budget));
        let once = delta.clone();
        project(&mut delta, &x, &budget).unwrap();
        prop_assert_eq!(once, delta);
    }

    #[test]
    fn hamming_is_a_metric(
        a in proptest::collection::vec(any::<bool>(), 70),
        b in proptest::collection::vec(any::<bool>(), 70),
        c in proptest::collection::vec(any::<bool>(), 70),
    ) {
        let h = |bits: &[bool]| BinaryHash { bits: bits.to_vec() };
        let (a, b, c) = (h(&a), h(&b), h(&c));
        prop_assert_eq!(a.hamming(&a), 0);
        prop_assert_eq!(a.hamming(&b), b.hamming(&a));
        prop_assert!(a.hamming(&c) <= a.hamming(&b) + b.hamming(&c));
        prop_assert_eq!(BinaryHash::from_words(&a.words(), a.len()), a);
    }

    #[test]
    fn ppm_round_trips_quantized_images(x in image_strategy(9)) {
        let q = x.map(|v| (v * 255.0).round() / 255.0);
        let bytes = encode_ppm(&q).unwrap();
        let back = decode_ppm(&bytes).unwrap();
        prop_assert_eq!(&back, &q);
        prop_assert_eq!(encode_ppm(&back).unwrap(), bytes);
    }

    #[test]
    fn realize_stays_in_unit_box(x in image_strategy(17)) {
        let r = realize(&x).unwrap();
        prop_assert_eq!(r.shape(), x.shape());
        prop_assert!(r.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn f_score_is_symmetric_and_bounded(a in 0.0f64..100.0, b in 0.0f64..100.0) {
        let f = f_score(a, b).unwrap();
        prop_assert!((f - f_score(b, a).unwrap()).abs() < 1e-12);
        prop_assert!(f <= a.max(b) + 1e-12);
        prop_assert!(f >= 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn indexes_round_trip_bit_exactly(data in unit_vectors(40, 8), nlist in 1usize..6, exact in any::<bool>()) {
        let ids: Vec<u64> = (0..40).map(|i| 3 * i + 1).collect();
        let flat = FlatIndex::build(ids.clone(), data.clone(), 8).unwrap();
        let bytes = flat.to_bytes();
        prop_assert_eq!(FlatIndex::from_bytes(&bytes).unwrap().to_bytes(), bytes);

        let params = if exact { IvfPqParams::exact(nlist) } else { IvfPqParams { nlist, m: 2, nbits: 3, ..IvfPqParams::default() } };
        let ivf = IvfPqIndex::build(ids.clone(), data.clone(), 8, params).unwrap();
        let bytes = ivf.to_bytes();
        prop_assert_eq!(IvfPqIndex::from_bytes(&bytes).unwrap().to_bytes(), bytes.clone());
        prop_assert_eq!(VectorIndex::from_bytes(&bytes).unwrap().len(), 40);

        let hashes: Vec<BinaryHash> = data.chunks(8).map(BinaryHash::from_values).collect();
        let hash = HashIndex::build(ids, &hashes).unwrap();
        let bytes = hash.to_bytes();
        prop_assert_eq!(HashIndex::from_bytes(&bytes).unwrap().to_bytes(), bytes);
    }

    #[test]
    fn exact_ivf_matches_flat(data in unit_vectors(30, 8), query in unit_vectors(1, 8), nlist in 1usize..5, k in 1usize..12) {
        let ids: Vec<u64> = (0..30).collect();
        let flat = FlatIndex::build(ids.clone(), data.clone(), 8).unwrap();
        let ivf = IvfPqIndex::build(ids, data, 8, IvfPqParams::exact(nlist)).unwrap();
        let a = flat.search(&query, k).unwrap();
        let b = ivf.search(&query, k, nlist).unwrap();
        prop_assert_eq!(a, b);
    }
}
