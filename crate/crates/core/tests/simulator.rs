use mfdl_core::linear_theory::g_aa_closed;
use mfdl_core::simulator::*;
use mfdl_core::{Activation, MeanField, MeanFieldParams, QuadratureRule};
use ndarray::Array1;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

fn cfg(a: Activation, w: f64, b: f64, rho: f64, depth: usize, width: usize, seed: u64) -> NetworkConfig {
    NetworkConfig {
        depth,
        width,
        params: MeanFieldParams::new(w, b, rho).unwrap(),
        activation: a,
        seed,
    }
}

#[test]
fn same_seed_same_network() {
    let c = cfg(Activation::Tanh, 1.3, 0.2, 0.8, 3, 16, 9);
    let a = Network::new(c, 4).unwrap();
    let b = Network::new(c, 4).unwrap();
    assert_eq!(a.materialize(), b.materialize());
    assert_eq!(a.weights(2), a.weights(2));
    assert_ne!(a.weights(1), a.weights(2));
    assert_ne!(a.weights(1), Network::new(c, 5).unwrap().weights(1));
}

#[test]
fn zero_weight_variance_gives_zero_weights() {
    let net = Network::new(cfg(Activation::ReLU, 0.0, 0.3, 1.0, 2, 10, 1), 0).unwrap();
    assert!(net.weights(1).iter().all(|&w| w == 0.0));
}

#[test]
fn weight_variance_at_width_1000() {
    let net = Network::new(cfg(Activation::Tanh, 1.7, 0.1, 1.0, 1, 1000, 3), 0).unwrap();
    let w = net.weights(1);
    let n = w.len() as f64;
    let mean = w.sum() / n;
    let var = w.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    let want = 1.7 / 1000.0;
    assert!((var / want - 1.0).abs() < 0.01, "{var} vs {want}");
}

#[test]
fn bias_and_mask_statistics() {
    let net = Network::new(cfg(Activation::Tanh, 1.0, 0.5, 0.7, 2, 4000, 3), 0).unwrap();
    let b = net.biases(1);
    let var = b.dot(&b) / b.len() as f64;
    assert!((var / 0.5 - 1.0).abs() < 0.1);
    let m = net.mask(InputId::A, 1);
    assert!(m.iter().all(|&p| p == 0.0 || p == 1.0));
    let mean = m.sum() / m.len() as f64;
    assert!((mean - 0.7).abs() < 4.0 * (0.7f64 * 0.3 / 4000.0).sqrt());
    assert_ne!(net.mask(InputId::A, 1), net.mask(InputId::B, 1));
}

#[test]
fn full_keep_rate_means_no_dropout() {
    let net = Network::new(cfg(Activation::Erf, 1.0, 0.1, 1.0, 3, 50, 2), 1).unwrap();
    let (xa, _) = sample_inputs(50, 1.0, 0.5, 2, 1).unwrap();
    let t = net.forward(&xa, InputId::A).unwrap();
    assert!(t.masks.iter().all(|m| m.iter().all(|&p| p == 1.0)));
}

#[test]
fn input_construction() {
    let (a, b) = sample_inputs(1000, 1.0, 0.0, 5, 0).unwrap();
    let n = 1000.0;
    let qa = a.iter().map(|x| x * x).sum::<f64>() / n;
    let qb = b.iter().map(|x| x * x).sum::<f64>() / n;
    let cross = a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() / n;
    assert!((qa - 1.0).abs() < 1e-14);
    assert!((qb - 1.0).abs() < 1e-13);
    assert!(cross.abs() < 1e-12);

    let (a, b) = sample_inputs(300, 2.5, 1.0, 5, 0).unwrap();
    assert_eq!(a, b);

    let (a, b) = sample_inputs(300, 2.5, 0.9, 5, 0).unwrap();
    let cross = a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() / 300.0;
    assert!((cross - 0.9 * 2.5).abs() < 1e-12);

    assert!(sample_inputs(300, 0.0, 0.5, 5, 0).is_err());
    assert!(sample_inputs(300, 1.0, 1.5, 5, 0).is_err());
    assert!(sample_inputs(1, 1.0, 0.5, 5, 0).is_err());
}

#[test]
fn one_layer_linear_forward_by_hand() {
    let net = Network::new(cfg(Activation::Linear, 0.8, 0.0, 0.6, 1, 6, 11), 2).unwrap();
    let x: Vec<f64> = (0..6).map(|i| 0.3 * i as f64 - 0.7).collect();
    let t = net.forward(&x, InputId::A).unwrap();
    let w = net.weights(1);
    let p = &t.masks[0];
    for i in 0..6 {
        let mut acc = 0.0;
        for j in 0..6 {
            acc += w[[i, j]] * p[j] * x[j];
        }
        assert!((t.pre_activations[0][i] - acc / 0.6).abs() < 1e-14);
    }
}

#[test]
fn one_layer_linear_gradient_by_hand() {
    let net = Network::new(cfg(Activation::Linear, 0.8, 0.2, 0.6, 1, 5, 12), 0).unwrap();
    let x: Vec<f64> = (0..5).map(|i| 1.0 - 0.4 * i as f64).collect();
    let t = net.forward(&x, InputId::B).unwrap();
    let g = net.backward(&t).unwrap();
    let grad = g.weight_grad(1).unwrap();
    for i in 0..5 {
        for j in 0..5 {
            let want = 2.0 * t.pre_activations[0][i] * t.masks[0][j] / 0.6 * x[j];
            assert!((grad[[i, j]] - want).abs() < 1e-14);
        }
    }
}

#[test]
fn relu_deltas_vanish_on_negative_preactivations() {
    let net = Network::new(cfg(Activation::ReLU, 2.0, 0.1, 1.0, 4, 30, 4), 0).unwrap();
    let (x, _) = sample_inputs(30, 1.0, 0.5, 4, 0).unwrap();
    let t = net.forward(&x, InputId::A).unwrap();
    let g = net.backward(&t).unwrap();
    for l in 0..3 {
        for i in 0..30 {
            if t.pre_activations[l][i] < 0.0 {
                assert_eq!(g.deltas[l][i], 0.0);
            }
        }
    }
}

#[test]
fn dense_twin_reproduces_streamed_forward() {
    let net = Network::new(cfg(Activation::HardTanh, 1.5, 0.2, 0.7, 5, 12, 8), 3).unwrap();
    let (x, _) = sample_inputs(12, 1.3, 0.2, 8, 3).unwrap();
    let t = net.forward(&x, InputId::A).unwrap();
    let dense = net.materialize();
    let loss = dense.loss(&x, &t.masks);
    assert!((loss - t.loss()).abs() <= 1e-12 * loss.abs().max(1.0));
}

fn finite_difference_check(a: Activation, rho: f64, seed: u64) {
    let width = 8;
    let depth = 4;
    let net = Network::new(cfg(a, 1.5, 0.1, rho, depth, width, seed), 0).unwrap();
    let (x, _) = sample_inputs(width, 1.0, 0.3, seed, 0).unwrap();
    let t = net.forward(&x, InputId::A).unwrap();
    let grads = net.backward(&t).unwrap().weight_grads();
    let dense = net.materialize();
    let mut pick = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(seed ^ 0xFD);
    let h = 1e-4;
    for _ in 0..20 {
        let l = pick.random_range(0..depth);
        let (i, j) = (pick.random_range(0..width), pick.random_range(0..width));
        let mut up = dense.clone();
        up.weights[l][[i, j]] += h;
        let mut down = dense.clone();
        down.weights[l][[i, j]] -= h;
        let fd = (up.loss(&x, &t.masks) - down.loss(&x, &t.masks)) / (2.0 * h);
        let g = grads[l][[i, j]];
        let scale = g.abs().max(fd.abs()).max(1e-8);
        assert!((g - fd).abs() / scale < 1e-4, "{a} rho={rho} W{}[{i},{j}]: {g} vs {fd}", l + 1);
    }
}

#[test]
fn backward_matches_finite_differences() {
    for (k, a) in Activation::ALL.into_iter().enumerate() {
        for rho in [1.0, 0.6] {
            finite_difference_check(a, rho, 100 + k as u64);
        }
    }
}

#[test]
fn backward_rejects_foreign_trace() {
    let c = cfg(Activation::Tanh, 1.0, 0.1, 1.0, 2, 6, 1);
    let a = Network::new(c, 0).unwrap();
    let b = Network::new(c, 1).unwrap();
    let (x, _) = sample_inputs(6, 1.0, 0.5, 1, 0).unwrap();
    let t = a.forward(&x, InputId::A).unwrap();
    assert!(b.backward(&t).is_err());
    assert!(a.forward(&x[..5], InputId::A).is_err());
}

#[test]
fn factorised_metrics_match_dense_gradients() {
    let net = Network::new(cfg(Activation::Tanh, 1.4, 0.1, 0.8, 3, 10, 21), 0).unwrap();
    let (xa, xb) = sample_inputs(10, 1.0, 0.6, 21, 0).unwrap();
    let traces = net.forward_many(&[(&xa, InputId::A), (&xb, InputId::B)]).unwrap();
    let grads = net.backward_many(&traces).unwrap();
    let metrics = gradient_metrics(&grads[0], &grads[1]).unwrap();
    for l in 1..=3 {
        let ga = grads[0].weight_grad(l).unwrap();
        let gb = grads[1].weight_grad(l).unwrap();
        let nn = 100.0;
        let aa = ga.iter().map(|x| x * x).sum::<f64>() / nn;
        let ab = (ga.iter().zip(gb.iter()).map(|(x, y)| x * y).sum::<f64>() / nn).abs();
        let tilde = ga.iter().zip(gb.iter()).map(|(x, y)| (x * y).abs()).sum::<f64>() / nn;
        let m = metrics[l - 1];
        assert!((m.g_aa - aa).abs() <= 1e-12 * aa);
        assert!((m.g_ab - ab).abs() <= 1e-12 * aa.max(ab));
        assert!((m.g_tilde_ab - tilde).abs() <= 1e-12 * tilde);
    }
}

#[test]
fn metric_edge_cases() {
    let net = Network::new(cfg(Activation::Erf, 1.2, 0.1, 0.9, 3, 20, 2), 0).unwrap();
    let (xa, _) = sample_inputs(20, 1.0, 0.6, 2, 0).unwrap();
    let t = net.forward(&xa, InputId::A).unwrap();
    let g = net.backward(&t).unwrap();
    for m in gradient_metrics(&g, &g).unwrap() {
        assert!((m.g_aa - m.g_ab).abs() <= 1e-14 * m.g_aa);
        assert!((m.g_aa - m.g_tilde_ab).abs() <= 1e-14 * m.g_aa);
    }
    let mut zero = g.clone();
    zero.deltas.iter_mut().for_each(|d| d.fill(0.0));
    for m in gradient_metrics(&zero, &zero).unwrap() {
        assert_eq!((m.g_aa, m.g_ab, m.g_tilde_ab), (0.0, 0.0, 0.0));
    }
}

#[test]
fn identical_instances_have_zero_variance() {
    let c = cfg(Activation::Tanh, 1.4, 0.1, 0.9, 6, 40, 5);
    let inputs = InputSpec { q0: 1.0, c0: 0.9 };
    let stats = ensemble_run_instances(&c, &[7, 7], inputs, &Metric::ALL).unwrap();
    for s in stats.values() {
        assert!(s.per_layer_variance.iter().all(|&v| v == 0.0), "{}", s.metric);
        assert_eq!(s.n_instances, 2);
    }
}

#[test]
fn ensemble_is_reproducible_and_thread_independent() {
    let c = cfg(Activation::ReLU, 1.8, 0.1, 0.8, 8, 60, 77);
    let inputs = InputSpec { q0: 0.8, c0: 0.5 };
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| ensemble_run(&c, 6, inputs, &Metric::ALL).unwrap())
    };
    let one = run(1);
    assert_eq!(one, run(1));
    assert_eq!(one, run(3));
}

#[test]
fn stderr_definition() {
    let samples = vec![vec![1.0, 10.0], vec![2.0, 10.0], vec![4.0, 10.0], vec![5.0, 10.0]];
    let s = EnsembleStats::from_samples(Metric::GAa, &samples).unwrap();
    assert_eq!(s.per_layer_mean, vec![3.0, 10.0]);
    assert!((s.per_layer_variance[0] - 10.0 / 3.0).abs() < 1e-15);
    assert!((s.per_layer_stderr[0] - (10.0f64 / 12.0).sqrt()).abs() < 1e-15);
    assert_eq!(s.per_layer_stderr[1], 0.0);
    let single = EnsembleStats::from_samples(Metric::GAa, &samples[..1]).unwrap();
    assert!(single.per_layer_variance[0].is_nan());
}

#[test]
fn doubling_instances_halves_stderr_squared() {
    let c = cfg(Activation::Linear, 0.5, 0.1, 1.0, 4, 50, 13);
    let inputs = InputSpec { q0: 0.2, c0: 0.5 };
    let small = &ensemble_run(&c, 40, inputs, &[Metric::QAa]).unwrap()[&Metric::QAa];
    let big = &ensemble_run(&c, 80, inputs, &[Metric::QAa]).unwrap()[&Metric::QAa];
    for l in 0..4 {
        let ratio = big.per_layer_stderr[l].powi(2) / small.per_layer_stderr[l].powi(2);
        assert!(ratio > 0.3 && ratio < 0.8, "layer {}: {ratio}", l + 1);
    }
}

#[test]
fn simulated_lengths_follow_the_length_map() {
    let rule = QuadratureRule::default();
    let c = cfg(Activation::Tanh, 2.0, 0.2, 0.8, 6, 400, 31);
    let mf = MeanField::new(c.params, c.activation, &rule).unwrap();
    let stats = &ensemble_run(&c, 30, InputSpec { q0: 1.0, c0: 0.5 }, &[Metric::QAa]).unwrap()[&Metric::QAa];
    let theory = mf.q_trajectory_from_input(1.0, 6).unwrap();
    for l in 1..=6 {
        let (m, se, t) = (stats.per_layer_mean[l - 1], stats.per_layer_stderr[l - 1], theory[l - 1]);
        assert!((m - t).abs() < 4.0 * se + 0.02 * t, "layer {l}: {m} ± {se} vs {t}");
    }
}

#[test]
fn simulated_correlations_follow_the_correlation_map() {
    let rule = QuadratureRule::default();
    for (a, rho) in [(Activation::Tanh, 0.8), (Activation::ReLU, 1.0)] {
        let c = cfg(a, 1.6, 0.2, rho, 6, 400, 37);
        let mf = MeanField::new(c.params, c.activation, &rule).unwrap();
        let stats = &ensemble_run(&c, 30, InputSpec { q0: 1.0, c0: 0.3 }, &[Metric::CAb]).unwrap()[&Metric::CAb];
        let theory = mf.c_trajectory_from_input(1.0, 1.0, 0.3, 6).unwrap();
        for l in 1..=6 {
            let (m, se, t) = (stats.per_layer_mean[l - 1], stats.per_layer_stderr[l - 1], theory[l - 1].c_ab);
            assert!((m - t).abs() < 4.0 * se + 0.02, "{a} layer {l}: {m} ± {se} vs {t}");
        }
    }
}

#[test]
fn small_linear_net_tracks_closed_form() {
    let rule = QuadratureRule::default();
    let c = cfg(Activation::Linear, 0.5, 0.1, 1.0, 12, 200, 41);
    let q = MeanField::new(c.params, c.activation, &rule).unwrap().q_star().unwrap();
    let stats = &ensemble_run(&c, 40, InputSpec { q0: q, c0: 0.9 }, &[Metric::GAa]).unwrap()[&Metric::GAa];
    for l in 1..=12 {
        let closed = g_aa_closed(l, 12, &c.params, q).unwrap();
        let (m, se) = (stats.per_layer_mean[l - 1], stats.per_layer_stderr[l - 1]);
        assert!((m - closed).abs() < 4.0 * se + 0.05 * closed, "layer {l}: {m} ± {se} vs {closed}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn metrics_nonnegative_and_triangle(seed in 0u64..1000, rho in 0.3f64..=1.0, k in 0usize..5) {
        let a = Activation::ALL[k];
        let net = Network::new(cfg(a, 1.3, 0.1, rho, 3, 12, seed), 0).unwrap();
        let (xa, xb) = sample_inputs(12, 1.0, 0.4, seed, 0).unwrap();
        let traces = net.forward_many(&[(&xa, InputId::A), (&xb, InputId::B)]).unwrap();
        let grads = net.backward_many(&traces).unwrap();
        for m in gradient_metrics(&grads[0], &grads[1]).unwrap() {
            prop_assert!(m.g_aa >= 0.0 && m.g_ab >= 0.0);
            prop_assert!(m.g_tilde_ab >= m.g_ab * (1.0 - 1e-12));
        }
    }

    #[test]
    fn masks_reused_between_passes(seed in 0u64..1000) {
        let net = Network::new(cfg(Activation::Tanh, 1.0, 0.1, 0.5, 3, 9, seed), 0).unwrap();
        let (xa, _) = sample_inputs(9, 1.0, 0.4, seed, 0).unwrap();
        let t = net.forward(&xa, InputId::A).unwrap();
        for l in 1..=3 {
            prop_assert_eq!(&t.masks[l - 1], &net.mask(InputId::A, l));
        }
        let g = net.backward(&t).unwrap();
        let rebuilt = &t.masks[0] * &Array1::from(xa.clone()) / 0.5;
        prop_assert_eq!(&g.scaled_inputs[0], &rebuilt);
    }
}
