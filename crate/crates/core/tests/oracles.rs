//! Kernels and blocks against naive reference implementations, plus
//! round-trip properties.

use dagf_core::guided::{box_mean, classic_guided_filter, self_ensemble, Dihedral};
use dagf_core::kernels::{bilinear_resize, pixel_shuffle, pixel_unshuffle};
use dagf_core::nn::{AdaptiveNorm, Init};
use dagf_core::{Graph, ParamStore, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type T64 = Tensor<f64>;

fn randn(shape: &[usize], seed: u64) -> T64 {
    Tensor::randn(shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn at(t: &T64, n: usize, c: usize, y: usize, x: usize) -> f64 {
    let s = t.shape();
    t.data()[((n * s[1] + c) * s[2] + y) * s[3] + x]
}

/// Mean over the window clipped to the image, one pixel at a time.
fn naive_box(t: &T64, r: usize) -> T64 {
    let s = t.shape().to_vec();
    let (h, w) = (s[2], s[3]);
    let mut out = Vec::with_capacity(t.numel());
    for n in 0..s[0] {
        for c in 0..s[1] {
            for y in 0..h {
                for x in 0..w {
                    let (mut sum, mut cnt) = (0.0, 0.0);
                    for yy in y.saturating_sub(r)..=(y + r).min(h - 1) {
                        for xx in x.saturating_sub(r)..=(x + r).min(w - 1) {
                            sum += at(t, n, c, yy, xx);
                            cnt += 1.0;
                        }
                    }
                    out.push(sum / cnt);
                }
            }
        }
    }
    Tensor::new(&s, out).unwrap()
}

#[test]
fn box_mean_matches_window_loop() {
    for (r, shape, seed) in [(1, [1, 2, 5, 7], 1), (2, [2, 1, 9, 4], 2), (3, [1, 3, 6, 6], 3), (4, [1, 1, 3, 11], 4)] {
        let x = randn(&shape, seed);
        let err = box_mean(&x, r).unwrap().max_abs_diff(&naive_box(&x, r)).unwrap();
        assert!(err < 1e-12, "r={r} {shape:?}: {err}");
    }
}

#[test]
fn classic_filter_matches_unfused_formula() {
    let (g, y) = (randn(&[1, 2, 10, 13], 5), randn(&[1, 2, 10, 13], 6));
    for (r, eps) in [(1, 1e-2), (2, 1e-1), (3, 1e-4)] {
        let (mg, my) = (naive_box(&g, r), naive_box(&y, r));
        let gg = g.zip_map(&g, "mul", |a, b| a * b).unwrap();
        let gy = g.zip_map(&y, "mul", |a, b| a * b).unwrap();
        let (mgg, mgy) = (naive_box(&gg, r), naive_box(&gy, r));
        let a = Tensor::from_fn(g.shape(), |i| {
            let (mg, my) = (mg.data()[i], my.data()[i]);
            (mgy.data()[i] - mg * my) / (mgg.data()[i] - mg * mg + eps)
        });
        let b = Tensor::from_fn(g.shape(), |i| my.data()[i] - a.data()[i] * mg.data()[i]);
        let (ma, mb) = (naive_box(&a, r), naive_box(&b, r));
        let want = Tensor::from_fn(g.shape(), |i| ma.data()[i] * g.data()[i] + mb.data()[i]);
        let got = classic_guided_filter(&g, &y, r, eps).unwrap();
        let err = got.max_abs_diff(&want).unwrap();
        assert!(err < 1e-10, "r={r}: {err}");
    }
}

#[test]
fn classic_filter_rejects_degenerate_settings() {
    let x = randn(&[1, 1, 4, 4], 7);
    assert!(classic_guided_filter(&x, &x, 0, 1e-2).is_err());
    assert!(classic_guided_filter(&x, &x, 1, 0.0).is_err());
    assert!(classic_guided_filter(&x, &randn(&[1, 1, 4, 5], 8), 1, 1e-2).is_err());
}

#[test]
fn adaptive_norm_is_lambda_x_plus_mu_instance_norm() {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let norm = AdaptiveNorm::new(&mut Init::new(&mut store, &mut rng), "an").unwrap();
    let (lambda, mu) = (0.7, -1.3);
    store.get_mut(norm.lambda).value = Tensor::new(&[1], vec![lambda]).unwrap();
    store.get_mut(norm.mu).value = Tensor::new(&[1], vec![mu]).unwrap();
    let x = randn(&[2, 3, 4, 5], 10);
    let mut g = Graph::new(&store);
    let xv = g.constant(x.clone());
    let out = norm.forward(&mut g, xv).unwrap();
    let got = g.value(out).clone();

    let plane = 20;
    let want = Tensor::from_fn(x.shape(), |i| {
        let p = &x.data()[i / plane * plane..][..plane];
        let m = p.iter().sum::<f64>() / plane as f64;
        let v = p.iter().map(|q| (q - m) * (q - m)).sum::<f64>() / plane as f64;
        lambda * x.data()[i] + mu * (x.data()[i] - m) / (v + AdaptiveNorm::EPS).sqrt()
    });
    assert!(got.max_abs_diff(&want).unwrap() < 1e-12);
}

#[test]
fn dihedral_group_has_eight_distinct_elements() {
    let x = randn(&[1, 1, 3, 3], 11);
    let images: Vec<T64> = Dihedral::all().iter().map(|d| d.apply(&x)).collect();
    for i in 0..8 {
        for j in i + 1..8 {
            assert_ne!(images[i], images[j], "{i} vs {j}");
        }
    }
    assert_eq!(x.rot180(), x.flip_h().flip_v());
}

#[test]
fn ensemble_of_pointwise_map_is_the_map() {
    let x = randn(&[1, 3, 6, 6], 12);
    let f = |t: &T64| Ok(t.map(f64::tanh));
    let y = self_ensemble(&x, f).unwrap();
    assert!(y.max_abs_diff(&x.map(f64::tanh)).unwrap() < 1e-15);
}

#[test]
fn bilinear_keeps_constants_and_same_size() {
    let c = Tensor::<f64>::full(&[1, 2, 5, 7], 0.375);
    for (h, w) in [(10, 14), (3, 4), (5, 7), (1, 1)] {
        let y = bilinear_resize(&c, h, w).unwrap();
        assert!(y.data().iter().all(|&v| (v - 0.375).abs() < 1e-15), "{h}x{w}");
    }
    let x = randn(&[1, 2, 5, 7], 13);
    assert_eq!(bilinear_resize(&x, 5, 7).unwrap(), x);
}

proptest! {
    #[test]
    fn shuffle_round_trips(n in 1usize..3, c in 1usize..4, hb in 1usize..4, wb in 1usize..4, s in 1usize..4, seed in any::<u64>()) {
        let x = randn(&[n, c, hb * s, wb * s], seed);
        let down = pixel_unshuffle(&x, s).unwrap();
        prop_assert_eq!(down.shape(), &[n, c * s * s, hb, wb][..]);
        prop_assert_eq!(pixel_shuffle(&down, s).unwrap(), x);
    }

    #[test]
    fn dihedral_inverts(h in 1usize..6, w in 1usize..6, seed in any::<u64>()) {
        let x = randn(&[1, 2, h, w], seed);
        for d in Dihedral::all() {
            prop_assert_eq!(d.invert(&d.apply(&x)), x.clone());
        }
    }

    #[test]
    fn box_mean_of_constant_is_constant(h in 1usize..8, w in 1usize..8, r in 1usize..4, v in -5.0f64..5.0) {
        let y = box_mean(&Tensor::full(&[1, 1, h, w], v), r).unwrap();
        prop_assert!(y.data().iter().all(|&q| (q - v).abs() < 1e-12));
    }
}
