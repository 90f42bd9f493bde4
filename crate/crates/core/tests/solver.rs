mod common;

use ndarray::{Array2, Array3};
use proptest::prelude::*;
use rand::Rng;

use rpsf_core::optics::{build_dictionary, OpticsConfig};
use rpsf_core::pipeline::localize;
use rpsf_core::scene::{render, sample_poisson, Scene};
use rpsf_core::solver::{
    admm_weighted_l1, conv3, conv3_adjoint, embed_last_slice, extract_last_slice, irl1_solve,
    irl1_weights, kl_objective, kl_prox, kl_prox_scalar, ls_prox_scalar, Algorithm, SolverParams,
};

use common::*;

#[test]
fn kl_prox_matches_golden_section() {
    let err = prox_oracle_max_error(1000, 11);
    assert!(err < 1e-8, "max relative error {err:e}");
}

#[test]
fn kl_prox_examples() {
    assert!((kl_prox_scalar(1.0, 0.0, 0.0, 1.0) - 0.0).abs() < 1e-15);
    let expected = (-1.0 + 33f64.sqrt()) / 4.0;
    assert!((kl_prox_scalar(0.0, 4.0, 0.0, 2.0) - expected).abs() < 1e-14);
    assert_eq!(ls_prox_scalar(0.0, 10.0, 2.0, 1.0), 4.0);
    assert!((ls_prox_scalar(3.0, 10.0, 2.0, 1e6) - 3.0).abs() < 1e-5);
}

#[test]
fn kl_prox_keeps_model_positive_where_photons_arrived() {
    let mut rng = rng(3);
    let xi = random_volume((5, 4, 3), -30.0, 30.0, &mut rng);
    let g = Array2::from_shape_simple_fn((5, 4), || f64::from(rng.random_range(0u32..5)));
    let out = kl_prox(&xi, &g, 1.5, 0.3).unwrap();
    for ((i, j), &gv) in g.indexed_iter() {
        if gv > 0.0 {
            assert!(out[[i, j, 2]] + 1.5 > 0.0);
        }
        assert_eq!(out[[i, j, 0]], xi[[i, j, 0]]);
    }
}

#[test]
fn conv3_matches_dense_operator() {
    let mut rng = rng(5);
    for dims in [(6, 6, 2), (5, 4, 3)] {
        let dict = random_dict(dims, &mut rng);
        let v = random_volume(dims, -1.0, 1.0, &mut rng);
        let a = dense_conv(&dict);
        let fast = to_vector(&conv3(&dict, &v).unwrap());
        let dense = &a * to_vector(&v);
        assert!((fast - &dense).norm() <= 1e-12 * dense.norm());
        let fast_t = to_vector(&conv3_adjoint(&dict, &v).unwrap());
        let dense_t = a.transpose() * to_vector(&v);
        assert!((fast_t - &dense_t).norm() <= 1e-12 * dense_t.norm());
    }
}

#[test]
fn x_update_matches_dense_normal_equations() {
    for seed in 0..5 {
        let err = x_update_oracle_error(seed);
        assert!(err < 1e-8, "seed {seed}: relative error {err:e}");
    }
}

#[test]
fn smooth_gradient_matches_finite_differences() {
    for seed in 0..3 {
        let err = gradient_check_error(seed);
        assert!(err < 1e-6, "seed {seed}: {err:e}");
    }
}

#[test]
fn objective_at_zero_is_background_likelihood() {
    let mut rng = rng(8);
    let dict = random_dict((4, 4, 2), &mut rng);
    let g = Array2::from_shape_simple_fn((4, 4), || f64::from(rng.random_range(0u32..9)));
    let b: f64 = 3.0;
    let expected: f64 = g.iter().map(|v| -v * b.ln()).sum::<f64>() + 16.0 * b - 16.0 * b;
    let got = kl_objective(&Array3::zeros((4, 4, 2)), &dict, &g, b, 5.0, 2.0).unwrap();
    // The data term is <1, T(A*X) - G ln(T(A*X) + b)>; at X = 0 only the log survives.
    assert!((got - expected).abs() < 1e-12 * expected.abs());
}

#[test]
fn snapshot_operator_adjoint_pair() {
    let mut rng = rng(9);
    let img = Array2::from_shape_simple_fn((3, 5), || rng.random_range(-1.0..1.0));
    assert_eq!(extract_last_slice(&embed_last_slice(&img, 4)), img);
    assert_eq!(extract_last_slice(&Array3::zeros((3, 5, 2))), Array2::<f64>::zeros((3, 5)));
}

#[test]
fn empty_scene_gives_empty_volume() {
    let cfg = small_optics();
    let dict = build_dictionary(&cfg).unwrap();
    let scene = Scene {
        sources: vec![],
        background: 5.0,
        seed: 0,
    };
    // Noiseless flat image: the exact background.
    let g = render(&scene, &cfg).unwrap();
    let mut params = SolverParams::for_algorithm(Algorithm::KlNc);
    params.mu = 1.0;
    params.beta0 = 0.1;
    params.beta1 = 0.1;
    let (vol, _) = irl1_solve(&g, &dict, &params).unwrap();
    let max = vol.iter().cloned().fold(0.0, f64::max);
    assert!(max < 1e-3 * 2000.0, "max voxel {max}");
}

#[test]
fn uniform_weights_reproduce_l1_baseline() {
    let cfg = small_optics();
    let dict = build_dictionary(&cfg).unwrap();
    let mut rng = rng(12);
    let g = Array2::from_shape_simple_fn((32, 32), || f64::from(rng.random_range(3u32..12)));
    let mut params = SolverParams::for_algorithm(Algorithm::KlL1);
    params.max_inner = 50;
    params.mu = 0.3;
    let (base, _) = irl1_solve(&g, &dict, &params).unwrap();
    let w = Array3::from_elem(dict.dims(), 0.3);
    let (direct, _) = admm_weighted_l1(&g, &dict, &w, &params, None).unwrap();
    assert_eq!(base, direct);
}

#[test]
fn irl1_weight_properties() {
    let x = Array3::from_shape_vec((1, 1, 4), vec![0.0, 1.0, 5.0, 50.0]).unwrap();
    let w = irl1_weights(&x, 2.0, 10.0);
    assert!((w[[0, 0, 0]] - 0.2).abs() < 1e-15);
    for k in 0..3 {
        assert!(w[[0, 0, k + 1]] < w[[0, 0, k]]);
    }
}

#[test]
fn solutions_are_nonnegative_and_feasible_on_benchmark() {
    let cfg = OpticsConfig::default();
    let dict = build_dictionary(&cfg).unwrap();
    let scene =
        rpsf_core::scene::random_scene(15, &cfg, 2000.0, 5.0, Default::default(), 404).unwrap();
    let g = sample_poisson(&render(&scene, &cfg).unwrap(), 405).unwrap().to_f64();
    let params = rpsf_core::experiment::ParamSet::shipped().get(Algorithm::KlNc, false);
    let mut model = rpsf_core::optics::PsfModel::new(&cfg, None).unwrap();
    let loc = localize(&g, &dict, &mut model, &params, &Default::default()).unwrap();
    assert!(loc.volume.iter().all(|v| *v >= 0.0));
    // Feasibility gap after the final inner iteration relative to the solution.
    let last = loc.trace.records.last().unwrap();
    let norm = loc.volume.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(last.gap1 < 0.01 * norm, "gap {} vs norm {norm}", last.gap1);
    // Every source is represented before post-processing.
    let raw = rpsf_core::evaluate::match_detections(
        &scene,
        &loc.raw,
        &Default::default(),
        &cfg,
        Default::default(),
    )
    .unwrap();
    assert_eq!(raw.recall, 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kl_prox_is_stationary(xi in -100.0f64..400.0, g in 0u32..500, b in 0.01f64..20.0, lb in -3.0f64..2.0) {
        let beta = 10f64.powf(lb);
        let g = f64::from(g);
        let u = kl_prox_scalar(xi, g, b, beta);
        let y = u + b;
        prop_assert!(y >= 0.0);
        if g > 0.0 {
            // 1 - g / y + beta (u - xi) = 0
            let r = 1.0 - g / y + beta * (u - xi);
            let scale = 1.0 + g / y + beta * (u.abs() + xi.abs());
            prop_assert!(r.abs() <= 1e-10 * scale, "residual {}", r);
        }
    }

    #[test]
    fn conv3_is_linear(seed in 0u64..1000, alpha in -5.0f64..5.0) {
        let mut rng = rng(seed);
        let dict = random_dict((4, 3, 2), &mut rng);
        let v = random_volume((4, 3, 2), -1.0, 1.0, &mut rng);
        let lhs = conv3(&dict, &(&v * alpha)).unwrap();
        let rhs = conv3(&dict, &v).unwrap() * alpha;
        let diff = (&lhs - &rhs).iter().fold(0.0f64, |m, x| m.max(x.abs()));
        prop_assert!(diff < 1e-12 * (1.0 + alpha.abs()));
    }
}
