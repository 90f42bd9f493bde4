mod common;

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use proptest::prelude::*;

use rpsf_core::flux::{
    build_h, gaussian_flux, kl_flux_correction, kl_flux_gradient, kl_flux_iterate, FluxSettings,
    PsfMatrix,
};
use rpsf_core::optics::OpticsConfig;
use rpsf_core::postproc::Detection;
use rpsf_core::scene::sample_poisson;

use common::*;

fn det(x: f64, y: f64, z: f64) -> Detection {
    Detection { x, y, z, flux: 0.0 }
}

/// Well separated positions on a coarse lattice with varied depth and
/// sub-pixel offsets.
fn separated(count: usize) -> Vec<Detection> {
    (0..count)
        .map(|i| {
            let (r, c) = (i / 4, i % 4);
            det(12.0 + 22.0 * r as f64 + 0.3, 12.0 + 22.0 * c as f64 + 0.7, (i * 7 % 21) as f64 * 0.93)
        })
        .collect()
}

fn image(h: &PsfMatrix, f: &[f64], b: f64, cfg: &OpticsConfig) -> Array2<f64> {
    Array2::from_shape_vec(cfg.image_size, (h.apply(f) + b).to_vec()).unwrap()
}

fn kl_data(h: &PsfMatrix, g: &Array2<f64>, b: f64, f: &[f64]) -> f64 {
    h.apply(f)
        .iter()
        .zip(g.iter())
        .map(|(z, gi)| z - if *gi > 0.0 { gi * (z + b).ln() } else { 0.0 })
        .sum()
}

fn dense(h: &PsfMatrix) -> DMatrix<f64> {
    let (k, m) = h.columns.dim();
    DMatrix::from_fn(k, m, |i, j| h.columns[[i, j]])
}

#[test]
fn noiseless_fluxes_are_recovered() {
    let cfg = OpticsConfig::default();
    let b = 5.0;
    for m in [1, 3, 10] {
        let dets = separated(m);
        let h = build_h(&dets, &cfg).unwrap();
        let truth: Vec<f64> = (0..m).map(|i| 500.0 + 300.0 * i as f64).collect();
        let g = image(&h, &truth, b, &cfg);
        let f = kl_flux_iterate(&h, &g, b, FluxSettings::default()).unwrap();
        for (est, t) in f.iter().zip(&truth) {
            assert!((est - t).abs() <= 1e-6 * t, "M={m}: {est} vs {t}");
        }
    }
}

#[test]
fn exact_data_is_a_fixed_point() {
    let cfg = small_optics();
    let h = build_h(&[det(8.0, 9.0, 1.0), det(20.0, 22.0, 3.5)], &cfg).unwrap();
    let truth = [700.0, 1300.0];
    let g = image(&h, &truth, 4.0, &cfg);
    let fg = gaussian_flux(&h, &g, 4.0).unwrap();
    let k = kl_flux_correction(&h, &g, 4.0, &truth).unwrap();
    for i in 0..2 {
        assert!((fg[i] + k[i] - truth[i]).abs() < 1e-9 * truth[i]);
        assert!(k[i].abs() < 1e-9 * truth[i]);
    }
}

#[test]
fn residual_of_fixed_point_map_is_scaled_gradient() {
    let cfg = small_optics();
    let h = build_h(&[det(6.0, 7.0, 0.0), det(18.0, 20.0, 2.0), det(25.0, 8.0, 4.0)], &cfg).unwrap();
    let counts = sample_poisson(&image(&h, &[400.0, 900.0, 250.0], 3.0, &cfg), 5).unwrap().to_f64();
    let b = 3.0;
    let f = [380.0, 950.0, 240.0];
    let fg = gaussian_flux(&h, &counts, b).unwrap();
    let k = kl_flux_correction(&h, &counts, b, &f).unwrap();
    let grad = DVector::from_vec(kl_flux_gradient(&h, &counts, b, &f).unwrap());
    let a = dense(&h);
    let expected = (a.transpose() * &a).lu().solve(&grad).unwrap() * b;
    for i in 0..3 {
        let lhs = f[i] - fg[i] - k[i];
        assert!((lhs - expected[i]).abs() < 1e-8 * (1.0 + expected[i].abs()), "{lhs} vs {}", expected[i]);
    }
}

#[test]
fn gradient_matches_finite_differences() {
    let cfg = small_optics();
    let h = build_h(&[det(6.0, 7.0, 0.5), det(18.0, 20.0, 2.0)], &cfg).unwrap();
    let g = sample_poisson(&image(&h, &[400.0, 900.0], 3.0, &cfg), 6).unwrap().to_f64();
    let f = [350.0, 1000.0];
    let grad = kl_flux_gradient(&h, &g, 3.0, &f).unwrap();
    for i in 0..2 {
        let step = 1e-3;
        let mut p = f;
        let mut q = f;
        p[i] += step;
        q[i] -= step;
        let fd = (kl_data(&h, &g, 3.0, &p) - kl_data(&h, &g, 3.0, &q)) / (2.0 * step);
        assert!((fd - grad[i]).abs() < 1e-6 * (1.0 + grad[i].abs()));
    }
}

#[test]
fn single_source_estimate_is_unbiased() {
    let cfg = OpticsConfig::default();
    let h = build_h(&[det(40.3, 51.7, 8.4)], &cfg).unwrap();
    let (flux, b) = (2000.0, 5.0);
    let mean_image = image(&h, &[flux], b, &cfg);
    let est: Vec<f64> = (0..100)
        .map(|seed| {
            let g = sample_poisson(&mean_image, 1000 + seed).unwrap().to_f64();
            kl_flux_iterate(&h, &g, b, FluxSettings::default()).unwrap()[0]
        })
        .collect();
    let n = est.len() as f64;
    let mean = est.iter().sum::<f64>() / n;
    let sd = (est.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let se = sd / n.sqrt();
    assert!((mean - flux).abs() <= 3.0 * se, "mean {mean}, se {se}");
}

#[test]
fn poisson_refinement_improves_likelihood() {
    let cfg = OpticsConfig::default();
    let dets = separated(6);
    let h = build_h(&dets, &cfg).unwrap();
    let truth = [2100.0, 1900.0, 2050.0, 1700.0, 2300.0, 800.0];
    let b = 5.0;
    let mean_image = image(&h, &truth, b, &cfg);
    let mut better = 0;
    let trials = 50;
    for seed in 0..trials {
        let g = sample_poisson(&mean_image, seed).unwrap().to_f64();
        let fg: Vec<f64> = gaussian_flux(&h, &g, b).unwrap().iter().map(|v| v.max(0.0)).collect();
        let fk = kl_flux_iterate(&h, &g, b, FluxSettings::default()).unwrap();
        if kl_data(&h, &g, b, &fk) < kl_data(&h, &g, b, &fg) {
            better += 1;
        }
    }
    assert!(better * 10 >= trials * 9, "{better}/{trials}");
}

#[test]
fn columns_are_unit_flux_images() {
    let cfg = OpticsConfig::default();
    let h = build_h(&separated(5), &cfg).unwrap();
    for c in h.columns.columns() {
        assert!((c.sum() - 1.0).abs() < 0.05);
        assert!(c.iter().all(|v| *v >= 0.0));
    }
    assert!(build_h(&[], &cfg).is_err());
    assert!(build_h(&[det(-1.0, 5.0, 0.0)], &cfg).is_err());
    assert!(build_h(&[det(5.0, 5.0, 21.0)], &cfg).is_err());
    let g = Array2::from_elem((96, 96), 5.0);
    assert!(kl_flux_iterate(&h, &g, 0.0, FluxSettings::default()).is_err());
    assert!(kl_flux_iterate(&h, &Array2::zeros((4, 4)), 5.0, FluxSettings::default()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn gaussian_flux_is_exact_without_noise(
        f in prop::collection::vec(10.0f64..5000.0, 3),
        b in 0.0f64..20.0,
    ) {
        let cfg = small_optics();
        let h = build_h(&[det(6.0, 7.0, 0.5), det(18.0, 20.0, 2.0), det(25.5, 9.25, 3.75)], &cfg).unwrap();
        let g = image(&h, &f, b, &cfg);
        let est = gaussian_flux(&h, &g, b).unwrap();
        for (e, t) in est.iter().zip(&f) {
            prop_assert!((e - t).abs() < 1e-8 * t);
        }
    }
}
