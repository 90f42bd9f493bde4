use std::collections::BTreeMap;

use ndarray::Array3;
use proptest::prelude::*;

use rpsf_core::postproc::{
    centroid_cluster, detections_from_csv, detections_to_csv, threshold_detections,
    ClusterTolerance, Detection,
};

/// Connected components of the positive voxels under box adjacency, by
/// union-find. Returns (flux, x, y, z) per component.
fn components(vol: &Array3<f64>, tol: ClusterTolerance) -> Vec<(f64, f64, f64, f64)> {
    let pos: Vec<(usize, usize, usize)> =
        vol.indexed_iter().filter(|(_, v)| **v > 0.0).map(|(i, _)| i).collect();
    let mut parent: Vec<usize> = (0..pos.len()).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for a in 0..pos.len() {
        for b in a + 1..pos.len() {
            let (pa, pb) = (pos[a], pos[b]);
            let near = (pa.0 as f64 - pb.0 as f64).abs() <= tol.lateral
                && (pa.1 as f64 - pb.1 as f64).abs() <= tol.lateral
                && (pa.2 as f64 - pb.2 as f64).abs() <= tol.axial;
            if near {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                parent[ra] = rb;
            }
        }
    }
    let mut acc: BTreeMap<usize, [f64; 4]> = BTreeMap::new();
    for (k, p) in pos.iter().enumerate() {
        let r = find(&mut parent, k);
        let v = vol[*p];
        let e = acc.entry(r).or_default();
        e[0] += v;
        e[1] += v * p.0 as f64;
        e[2] += v * p.1 as f64;
        e[3] += v * p.2 as f64;
    }
    let mut out: Vec<_> = acc.values().map(|e| (e[0], e[1] / e[0], e[2] / e[0], e[3] / e[0])).collect();
    out.sort_by(|a, b| b.0.total_cmp(&a.0));
    out
}

fn sparse_volume() -> impl Strategy<Value = Array3<f64>> {
    prop::collection::vec((0usize..10, 0usize..10, 0usize..4, 0.01f64..100.0), 0..40).prop_map(|entries| {
        let mut v = Array3::zeros((10, 10, 4));
        for (i, j, k, f) in entries {
            v[[i, j, k]] = f;
        }
        v
    })
}

fn assert_same(dets: &[Detection], oracle: &[(f64, f64, f64, f64)]) {
    assert_eq!(dets.len(), oracle.len());
    let key = |d: &(f64, f64, f64, f64)| (d.1 * 1e6).round() as i64 * 1_000_000_007 + (d.2 * 1e6).round() as i64;
    let mut a: Vec<_> = dets.iter().map(|d| (d.flux, d.x, d.y, d.z)).collect();
    let mut b = oracle.to_vec();
    a.sort_by_key(key);
    b.sort_by_key(key);
    for (p, q) in a.iter().zip(&b) {
        assert!((p.0 - q.0).abs() < 1e-9 * q.0);
        assert!((p.1 - q.1).abs() < 1e-9 && (p.2 - q.2).abs() < 1e-9 && (p.3 - q.3).abs() < 1e-9);
    }
}

#[test]
fn two_adjacent_voxels_merge() {
    let mut v = Array3::zeros((8, 8, 3));
    v[[3, 3, 1]] = 3.0;
    v[[4, 3, 1]] = 1.0;
    let dets = centroid_cluster(&v, ClusterTolerance::default());
    assert_eq!(dets.len(), 1);
    assert_eq!(dets[0].flux, 4.0);
    assert!((dets[0].x - 3.25).abs() < 1e-15);
    assert_eq!((dets[0].y, dets[0].z), (3.0, 1.0));
}

#[test]
fn distant_voxels_stay_apart() {
    let mut v = Array3::zeros((20, 20, 5));
    v[[2, 2, 0]] = 5.0;
    v[[10, 2, 0]] = 7.0;
    v[[2, 2, 4]] = 1.0;
    let dets = centroid_cluster(&v, ClusterTolerance::default());
    let fluxes: Vec<f64> = dets.iter().map(|d| d.flux).collect();
    assert_eq!(fluxes, vec![7.0, 5.0, 1.0]);
    assert!(centroid_cluster(&Array3::zeros((4, 4, 2)), ClusterTolerance::default()).is_empty());
}

#[test]
fn chains_join_transitively() {
    let mut v = Array3::zeros((20, 6, 2));
    for i in (0..16).step_by(2) {
        v[[i, 2, 0]] = 1.0 + i as f64;
    }
    let dets = centroid_cluster(&v, ClusterTolerance::default());
    assert_eq!(dets.len(), 1);
    assert_eq!(dets[0].flux, v.sum());
}

#[test]
fn five_percent_rule() {
    let d = |flux| Detection { x: 0.0, y: 0.0, z: 0.0, flux };
    let dets = vec![d(1000.0), d(50.0), d(49.999), d(300.0)];
    let kept = threshold_detections(&dets, 0.05).unwrap();
    let fluxes: Vec<f64> = kept.iter().map(|d| d.flux).collect();
    assert_eq!(fluxes, vec![1000.0, 50.0, 300.0]);
    assert!(threshold_detections(&[], 0.05).unwrap().is_empty());
    assert!(threshold_detections(&dets, 1.0).is_err());
    assert!(threshold_detections(&dets, -0.1).is_err());
}

#[test]
fn tolerances_must_be_positive() {
    assert!(ClusterTolerance::new(0.0, 1.0).is_err());
    assert!(ClusterTolerance::new(2.0, -1.0).is_err());
    assert!(ClusterTolerance::new(2.0, 1.0).is_ok());
}

#[test]
fn csv_round_trip() {
    let dets = vec![
        Detection { x: 1.5, y: 2.25, z: 0.1, flux: 1e3 / 3.0 },
        Detection { x: 0.0, y: 95.0, z: 20.0, flux: 7.0 },
    ];
    assert_eq!(detections_from_csv(&detections_to_csv(&dets)).unwrap(), dets);
    assert!(detections_from_csv("x,y,z,flux\n1,2,3\n").is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn clusters_are_connected_components(v in sparse_volume(), lat in 1.0f64..3.0, ax in 1.0f64..2.0) {
        let tol = ClusterTolerance { lateral: lat, axial: ax };
        let dets = centroid_cluster(&v, tol);
        assert_same(&dets, &components(&v, tol));
        for w in dets.windows(2) {
            prop_assert!(w[0].flux >= w[1].flux);
        }
    }

    #[test]
    fn flux_is_conserved(v in sparse_volume()) {
        let dets = centroid_cluster(&v, ClusterTolerance::default());
        let total: f64 = dets.iter().map(|d| d.flux).sum();
        prop_assert!((total - v.sum()).abs() <= 1e-12 * v.sum().max(1.0));
    }

    #[test]
    fn enumeration_order_does_not_matter(v in sparse_volume()) {
        // Reversing both lateral axes reverses the scan order of the voxels.
        let tol = ClusterTolerance::default();
        let flipped = v.slice(ndarray::s![..;-1, ..;-1, ..]).to_owned();
        let a = centroid_cluster(&v, tol);
        let b: Vec<(f64, f64, f64, f64)> = centroid_cluster(&flipped, tol)
            .iter()
            .map(|d| (d.flux, 9.0 - d.x, 9.0 - d.y, d.z))
            .collect();
        assert_same(&a, &b);
    }

    #[test]
    fn threshold_keeps_exactly_the_bright(fluxes in prop::collection::vec(0.0f64..1000.0, 1..30), frac in 0.0f64..0.99) {
        let dets: Vec<Detection> = fluxes.iter().map(|&flux| Detection { x: 0.0, y: 0.0, z: 0.0, flux }).collect();
        let kept = threshold_detections(&dets, frac).unwrap();
        let max = fluxes.iter().cloned().fold(0.0, f64::max);
        prop_assert_eq!(kept.len(), fluxes.iter().filter(|f| **f >= frac * max).count());
        prop_assert!(kept.iter().any(|d| d.flux == max));
    }
}
