mod common;

use std::sync::Arc;

use common::*;
use ovi_prior::embedding_store::{decode_matrix, encode_matrix};
use ovi_prior::losses::total_loss;
use ovi_prior::optimizers::AdamWConfig;
use ovi_prior::{
    neighbor_loss, ovi_loss, AdamWState, CosineIndex, EmbeddingMatrix, EmbeddingVector, GaussianStats, LatentState,
    LossSpec, Matrix, ParamKind, SgdState,
};
use proptest::prelude::*;

fn f32_values() -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(
        prop::num::f32::NORMAL | prop::num::f32::SUBNORMAL | prop::num::f32::ZERO,
        1..40,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn file_round_trip_after_quantization(dim in 1usize..20, rows in 0usize..8, seed in any::<u64>(), scale in 1e-3f64..1e3) {
        let mut r = rng(seed);
        let data: Vec<f64> = gaussian(&mut r, rows * dim).into_iter().map(|v| v * scale).collect();
        let m = EmbeddingMatrix::new(rows, dim, data, None).unwrap();
        let back = decode_matrix(&encode_matrix(&m).unwrap()).unwrap();
        prop_assert_eq!(back, m.quantized());
    }

    #[test]
    fn f32_values_survive_exactly(values in f32_values()) {
        let dim = values.len();
        let data: Vec<f64> = values.iter().map(|&v| v as f64).collect();
        let m = EmbeddingMatrix::new(1, dim, data.clone(), Some(vec!["x".into()])).unwrap();
        let back = decode_matrix(&encode_matrix(&m).unwrap()).unwrap();
        prop_assert_eq!(back.as_slice(), &data[..]);
        prop_assert_eq!(back.labels().unwrap(), &["x".to_string()][..]);
    }

    #[test]
    fn cosine_terms_scale_invariant(seed in any::<u64>(), dim in 2usize..40, c in 1e-3f64..1e3) {
        let mut r = rng(seed);
        let z = random_vector(&mut r, dim);
        let t = random_vector(&mut r, dim);
        let a = random_vector(&mut r, dim);
        let zc = EmbeddingVector::new(z.as_slice().iter().map(|v| v * c).collect()).unwrap();
        let stats = Arc::new(GaussianStats::standard(dim).unwrap());
        let spec = LossSpec::new(t, 0.3, 0.7, Some(a), Some(stats)).unwrap();
        let b1 = total_loss(&z, &spec).unwrap();
        let b2 = total_loss(&zc, &spec).unwrap();
        prop_assert!((b1.ovi - b2.ovi).abs() < 1e-12);
        prop_assert!((b1.neighbor.unwrap() - b2.neighbor.unwrap()).abs() < 1e-12);
        // only the Mahalanobis term moves: with Σ = I and μ = 0 it scales by c
        let m1 = b1.mahalanobis.unwrap();
        let m2 = b2.mahalanobis.unwrap();
        prop_assert!((m2 - c * m1).abs() <= 1e-10 * (c * m1));
        let rest1 = b1.total - 0.3 * m1;
        let rest2 = b2.total - 0.3 * m2;
        prop_assert!((rest1 - rest2).abs() < 1e-10);
    }

    #[test]
    fn cosine_gradients_orthogonal_to_z(seed in any::<u64>(), dim in 2usize..200) {
        let mut r = rng(seed);
        let z = random_vector(&mut r, dim);
        let t = random_vector(&mut r, dim);
        for (_, g) in [ovi_loss(&z, &t).unwrap(), neighbor_loss(&z, &t).unwrap()] {
            let rel = dot(z.as_slice(), g.as_slice()).abs() / (z.norm() * g.norm().max(1e-300));
            prop_assert!(rel < 1e-10, "relative z·∇ = {rel}");
        }
    }

    #[test]
    fn mahalanobis_translation_equivariant(seed in any::<u64>(), dim in 1usize..12) {
        let mut r = rng(seed);
        let mean = random_vector(&mut r, dim);
        let cov = random_spd(&mut r, dim, 0.5);
        let shift = gaussian(&mut r, dim);
        let z = random_vector(&mut r, dim);
        let stats = GaussianStats::from_covariance(mean.clone(), cov.clone()).unwrap();
        let shifted_mean = EmbeddingVector::new(mean.as_slice().iter().zip(&shift).map(|(a, b)| a + b).collect()).unwrap();
        let shifted = GaussianStats::from_covariance(shifted_mean, cov).unwrap();
        let zs = EmbeddingVector::new(z.as_slice().iter().zip(&shift).map(|(a, b)| a + b).collect()).unwrap();
        let d1 = stats.mahalanobis(&z).unwrap();
        let d2 = shifted.mahalanobis(&zs).unwrap();
        prop_assert!((d1 - d2).abs() <= 1e-9 * d1.max(1.0));
    }

    #[test]
    fn full_shrinkage_is_scaled_euclidean(seed in any::<u64>(), rows in 2usize..30, dim in 1usize..10) {
        let mut r = rng(seed);
        let data = random_matrix(&mut r, rows, dim);
        let stats = GaussianStats::estimate(&data, 1.0).unwrap();
        let z = random_vector(&mut r, dim);

        let mean: Vec<f64> = (0..dim).map(|j| data.iter_rows().map(|row| row[j]).sum::<f64>() / rows as f64).collect();
        let trace: f64 = (0..dim)
            .map(|j| data.iter_rows().map(|row| (row[j] - mean[j]).powi(2)).sum::<f64>() / (rows - 1) as f64)
            .sum();
        let diff: Vec<f64> = z.as_slice().iter().zip(&mean).map(|(a, b)| a - b).collect();
        let expected = norm(&diff) / (trace / dim as f64).sqrt();
        let got = stats.mahalanobis(&z).unwrap();
        prop_assert!((got - expected).abs() <= 1e-9 * expected.max(1e-12), "{got} vs {expected}");
    }

    #[test]
    fn adjoint_consistency(seed in any::<u64>(), kind_ix in 0usize..3, n in 1usize..6, d_tok in 1usize..10, d_emb in 1usize..10) {
        let kind = [ParamKind::Direct, ParamKind::MeanAggregate, ParamKind::FrozenLinear][kind_ix];
        let (n, d_tok) = match kind {
            ParamKind::Direct => (1, d_emb),
            ParamKind::MeanAggregate => (n, d_emb),
            ParamKind::FrozenLinear => (n, d_tok),
        };
        let s = LatentState::init(kind, n, d_tok, d_emb, seed).unwrap();
        let mut r = rng(seed ^ 0x5eed);
        let delta = gaussian(&mut r, n * d_tok);
        let g = random_vector(&mut r, d_emb);
        let eps = 1e-6;
        let moved: Vec<f64> = s.tokens().as_slice().iter().zip(&delta).map(|(a, b)| a + eps * b).collect();
        let s2 = LatentState::from_parts(kind, Matrix::from_vec(n, d_tok, moved).unwrap(), s.frozen_map().cloned(), 0).unwrap();
        let f1 = s.forward().unwrap();
        let f2 = s2.forward().unwrap();
        let lhs: f64 = f2.as_slice().iter().zip(f1.as_slice()).zip(g.as_slice()).map(|((a, b), c)| (a - b) * c).sum::<f64>() / eps;
        let rhs = dot(&delta, s.backward(&g).unwrap().as_slice());
        prop_assert!((lhs - rhs).abs() <= 1e-5 * rhs.abs().max(lhs.abs()).max(1e-3), "{lhs} vs {rhs}");
    }

    #[test]
    fn mean_aggregate_single_token_is_direct(seed in any::<u64>(), d in 1usize..30) {
        let direct = LatentState::init(ParamKind::Direct, 1, d, d, seed).unwrap();
        let mean = LatentState::from_parts(ParamKind::MeanAggregate, direct.tokens().clone(), None, seed).unwrap();
        prop_assert_eq!(direct.forward().unwrap(), mean.forward().unwrap());
        let g = random_vector(&mut rng(seed), d);
        prop_assert_eq!(direct.backward(&g).unwrap(), mean.backward(&g).unwrap());
    }

    #[test]
    fn query_scale_invariant(seed in any::<u64>(), rows in 1usize..60, dim in 1usize..8, c in 1e-3f64..1e3, k in 1usize..6) {
        let mut r = rng(seed);
        let index = CosineIndex::build(random_matrix(&mut r, rows, dim)).unwrap();
        let q = random_vector(&mut r, dim);
        let qc = EmbeddingVector::new(q.as_slice().iter().map(|v| v * c).collect()).unwrap();
        let k = k.min(index.len());
        let a = index.query(&q, k).unwrap();
        let b = index.query(&qc, k).unwrap();
        // c·q rounds entrywise, so similarities agree to rounding, ids exactly
        prop_assert_eq!(a.iter().map(|n| n.row_id).collect::<Vec<_>>(), b.iter().map(|n| n.row_id).collect::<Vec<_>>());
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x.similarity - y.similarity).abs() < 1e-12);
        }
    }

    #[test]
    fn stored_rows_unit_norm(seed in any::<u64>(), rows in 1usize..50, dim in 1usize..16, scale in 1e-6f64..1e6) {
        let mut r = rng(seed);
        let data: Vec<f64> = gaussian(&mut r, rows * dim).into_iter().map(|v| v * scale).collect();
        let index = CosineIndex::build(EmbeddingMatrix::new(rows, dim, data, None).unwrap()).unwrap();
        for i in 0..index.len() {
            prop_assert!((norm(index.normalized_row(i).unwrap()) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn adamw_first_step_bounded(seed in any::<u64>(), n in 1usize..20, lr in 1e-4f64..1.0) {
        let mut r = rng(seed);
        let g = gaussian(&mut r, n);
        let p0 = gaussian(&mut r, n);
        let cfg = AdamWConfig { lr, weight_decay: Some(0.0), ..AdamWConfig::default() };
        let mut state = AdamWState::new(1, n, &cfg).unwrap();
        let mut p = Matrix::from_vec(1, n, p0.clone()).unwrap();
        state.step(&mut p, &Matrix::from_vec(1, n, g.clone()).unwrap()).unwrap();
        for i in 0..n {
            let moved = p.as_slice()[i] - p0[i];
            prop_assert!(moved.abs() <= lr);
            prop_assert!(moved * g[i] < 0.0);
            let expected = lr * g[i].abs() / (g[i].abs() + 1e-8);
            prop_assert!((moved.abs() - expected).abs() <= 1e-12 * lr);
        }
    }

    #[test]
    fn decoupled_decay_is_geometric(steps in 1usize..50, lr in 1e-3f64..0.5, wd in 0.0f64..0.5, theta in -10.0f64..10.0) {
        let cfg = AdamWConfig { lr, weight_decay: Some(wd), ..AdamWConfig::default() };
        let mut state = AdamWState::new(1, 1, &cfg).unwrap();
        let mut p = Matrix::from_vec(1, 1, vec![theta]).unwrap();
        let zero = Matrix::zeros(1, 1);
        let mut expected = theta;
        for _ in 0..steps {
            state.step(&mut p, &zero).unwrap();
            expected *= 1.0 - lr * wd;
        }
        prop_assert!((p.as_slice()[0] - expected).abs() <= 1e-12 * theta.abs().max(1.0));
    }

    #[test]
    fn sgd_is_elementwise_subtraction(seed in any::<u64>(), n in 1usize..20, lr in 1e-3f64..10.0) {
        let mut r = rng(seed);
        let p0 = gaussian(&mut r, n);
        let g = gaussian(&mut r, n);
        let mut p = Matrix::from_vec(1, n, p0.clone()).unwrap();
        SgdState::new(lr).unwrap().step(&mut p, &Matrix::from_vec(1, n, g.clone()).unwrap()).unwrap();
        for i in 0..n {
            prop_assert_eq!(p.as_slice()[i], p0[i] - lr * g[i]);
        }
    }

    #[test]
    fn total_is_weighted_sum(seed in any::<u64>(), dim in 1usize..20, lm in 0.0f64..5.0, ln in 0.0f64..5.0) {
        let mut r = rng(seed);
        let z = random_vector(&mut r, dim);
        let t = random_vector(&mut r, dim);
        let a = random_vector(&mut r, dim);
        let stats = Arc::new(GaussianStats::from_covariance(random_vector(&mut r, dim), random_spd(&mut r, dim, 1.0)).unwrap());
        let spec = LossSpec::new(t, lm, ln, Some(a), Some(stats)).unwrap();
        let b = total_loss(&z, &spec).unwrap();
        let expected = b.ovi + lm * b.mahalanobis.unwrap() + ln * b.neighbor.unwrap();
        prop_assert!((b.total - expected).abs() <= 1e-12 * expected.max(1.0));
    }
}
