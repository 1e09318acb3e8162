use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use stereoscope_core::demo;
use stereoscope_core::embedding::{
    pca_2d, perplexity_sigma_search, trustworthiness, tsne_2d, Embedding, EmbeddingError, FeatureMatrix,
    TsneParams, MAX_SIGMA_ITERATIONS,
};

fn features(rows: Vec<Vec<f64>>) -> FeatureMatrix {
    FeatureMatrix::new((0..rows.len()).map(|i| format!("s{i}")).collect(), rows).unwrap()
}

/// Top-two eigenvalues of a symmetric matrix by power iteration with deflation.
fn power_top2(mut a: Vec<Vec<f64>>) -> [f64; 2] {
    let d = a.len();
    let mut out = [0.0; 2];
    for slot in &mut out {
        let mut v: Vec<f64> = (0..d).map(|i| 1.0 + i as f64 * 0.1).collect();
        let mut lambda = 0.0;
        for _ in 0..20_000 {
            let w: Vec<f64> = (0..d).map(|i| (0..d).map(|j| a[i][j] * v[j]).sum()).collect();
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            let next: Vec<f64> = w.iter().map(|x| x / norm).collect();
            let rayleigh: f64 = (0..d).map(|i| next[i] * (0..d).map(|j| a[i][j] * next[j]).sum::<f64>()).sum();
            let done = (rayleigh - lambda).abs() < 1e-15 * rayleigh.abs().max(1.0);
            v = next;
            lambda = rayleigh;
            if done {
                break;
            }
        }
        *slot = lambda;
        for i in 0..d {
            for j in 0..d {
                a[i][j] -= lambda * v[i] * v[j];
            }
        }
    }
    out
}

fn sample_variance(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

#[test]
fn pca_variances_match_power_iteration() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scales = [3.0, 2.0, 1.0, 0.5];
        let rows: Vec<Vec<f64>> =
            (0..50).map(|_| scales.iter().map(|s| s * (rng.random::<f64>() - 0.5) + rng.random::<f64>()).collect()).collect();
        let e = pca_2d(&features(rows.clone())).unwrap();

        let mean: Vec<f64> = (0..4).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / 50.0).collect();
        let cov: Vec<Vec<f64>> = (0..4)
            .map(|a| (0..4).map(|b| rows.iter().map(|r| (r[a] - mean[a]) * (r[b] - mean[b])).sum::<f64>() / 49.0).collect())
            .collect();
        let [l1, l2] = power_top2(cov);
        let v1 = sample_variance(e.points.iter().map(|p| p[0]));
        let v2 = sample_variance(e.points.iter().map(|p| p[1]));
        assert!((v1 - l1).abs() < 1e-6, "seed {seed}: {v1} vs {l1}");
        assert!((v2 - l2).abs() < 1e-6, "seed {seed}: {v2} vs {l2}");
    }
}

#[test]
fn pca_collinear_points() {
    let e = pca_2d(&features(vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0]])).unwrap();
    let s = 2f64.sqrt();
    for (p, x) in e.points.iter().zip([-s, 0.0, s]) {
        assert!((p[0] - x).abs() < 1e-12 && p[1].abs() < 1e-12, "{p:?}");
    }
}

fn clusters(seed: u64) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let centres = [[0.0, 0.0, 0.0], [10.0, 0.0, 0.0], [0.0, 10.0, 0.0]];
    let rows = (0..150).map(|i| centres[i / 50].iter().map(|c| c + normal.sample(&mut rng)).collect()).collect();
    features(rows)
}

#[test]
fn tsne_separates_clusters() {
    let start = Instant::now();
    let f = clusters(7);
    let params = TsneParams { seed: 42, ..TsneParams::default() };
    let a = tsne_2d(&f, &params).unwrap();
    let b = tsne_2d(&f, &params).unwrap();
    assert_eq!(a.points.iter().flatten().map(|x| x.to_bits()).collect::<Vec<_>>(),
        b.points.iter().flatten().map(|x| x.to_bits()).collect::<Vec<_>>());
    let t = trustworthiness(&f, &a, 5).unwrap();
    assert!(t >= 0.95, "trustworthiness {t}");
    assert!(a.diagnostics["kl_final"] < a.diagnostics["kl_initial"]);
    assert!(start.elapsed().as_secs() < 60);
}

#[test]
fn tsne_needs_eight_points() {
    let f = features((0..7).map(|i| vec![i as f64, (i * i) as f64]).collect());
    let err = tsne_2d(&f, &TsneParams::default()).unwrap_err();
    assert!(matches!(err, EmbeddingError::TooFewPoints { needed: 8, got: 7, .. }));
    assert!(err.to_string().contains("PCA"));
}

#[test]
fn sigma_search_over_random_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..200 {
        let k = rng.random_range(2..60);
        let d: Vec<f64> = (0..k).map(|_| rng.random::<f64>() * 10.0).collect();
        let perplexity = rng.random_range(1.5..(k as f64).max(2.0));
        let s = perplexity_sigma_search(&d, perplexity).unwrap();
        assert!(s.iterations <= MAX_SIGMA_ITERATIONS);
        // Entropy recomputed from sigma alone.
        let w: Vec<f64> = d.iter().map(|x| (-x * x / (2.0 * s.sigma * s.sigma)).exp()).collect();
        let z: f64 = w.iter().sum();
        let h: f64 = -w.iter().map(|x| x / z).filter(|p| *p > 0.0).map(|p| p * p.log2()).sum::<f64>();
        if !s.clamped {
            assert!((h - perplexity.log2()).abs() < 1e-4, "{h} vs {}", perplexity.log2());
        }
        assert!((s.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

/// Trustworthiness by counting, with ranks from an explicit sort per row.
fn trust_oracle(x: &[Vec<f64>], y: &[[f64; 2]], k: usize) -> f64 {
    let n = x.len();
    let mut sum = 0.0;
    for i in 0..n {
        let mut orig: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (x[i].iter().zip(&x[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>(), j))
            .collect();
        orig.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut emb: Vec<(f64, usize)> =
            (0..n).filter(|&j| j != i).map(|j| ((y[i][0] - y[j][0]).powi(2) + (y[i][1] - y[j][1]).powi(2), j)).collect();
        emb.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for &(_, j) in &emb[..k] {
            let rank = orig.iter().position(|&(_, o)| o == j).unwrap() + 1;
            if rank > k {
                sum += (rank - k) as f64;
            }
        }
    }
    let (n, k) = (n as f64, k as f64);
    1.0 - 2.0 / (n * k * (2.0 * n - 3.0 * k - 1.0)) * sum
}

#[test]
fn trustworthiness_matches_counting_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let rows: Vec<Vec<f64>> = (0..40).map(|_| (0..3).map(|_| rng.random::<f64>()).collect()).collect();
        let points: Vec<[f64; 2]> = rows.iter().map(|r| [r[0] + 0.3 * rng.random::<f64>(), r[2]]).collect();
        let f = features(rows.clone());
        let e = Embedding::user(f.sentence_ids.clone(), points.clone()).unwrap();
        for k in [1, 5, 10] {
            let got = trustworthiness(&f, &e, k).unwrap();
            assert!((got - trust_oracle(&rows, &points, k)).abs() < 1e-12);
        }
    }
}

#[test]
fn demo_embedding_covers_corpus() {
    let p = demo::project();
    let e = p.active_embedding().unwrap();
    assert_eq!(e.ids, p.corpus.ids().map(str::to_string).collect::<Vec<_>>());
    assert!(e.check_against(&p.corpus).is_ok());
    let mut short = e.clone();
    short.ids.pop();
    short.points.pop();
    assert!(short.check_against(&p.corpus).is_err());
}
