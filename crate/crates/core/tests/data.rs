use dgcnn::data::{normalize_unit_sphere, parse_off, parse_xyz, sample_mesh_with_faces, synth_split, Mesh, SynthSpec};
use dgcnn::FeatureMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn area(m: &Mesh, f: usize) -> f64 {
    let [a, b, c] = m.faces[f].map(|v| m.vertices[v]);
    let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
    let x = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
    0.5 * (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt()
}

/// χ² goodness of fit of face-selection counts to the area distribution,
/// 10⁵ samples, five faces of very different size.
#[test]
fn face_selection_follows_area() {
    let mesh = parse_off(
        "OFF\n7 5 0\n0 0 0\n1 0 0\n0 1 0\n3 0 0\n0 3 0\n0 0 0.5\n0.2 0.2 2\n\
         3 0 1 2\n3 0 3 4\n3 0 1 5\n3 1 2 6\n3 2 4 6\n",
    )
    .unwrap();
    let n = 100_000;
    let (_, faces) = sample_mesh_with_faces(&mesh, n, &mut ChaCha8Rng::seed_from_u64(2024)).unwrap();
    let areas: Vec<f64> = (0..5).map(|f| area(&mesh, f)).collect();
    let total: f64 = areas.iter().sum();
    let mut counts = [0usize; 5];
    faces.iter().for_each(|&f| counts[f] += 1);
    let chi2: f64 = counts
        .iter()
        .zip(&areas)
        .map(|(&c, a)| {
            let e = n as f64 * a / total;
            (c as f64 - e).powi(2) / e
        })
        .sum();
    // upper 0.001 quantile of χ² with 4 degrees of freedom
    assert!(chi2 < 18.467, "chi2 = {chi2}, counts {counts:?}");
}

#[test]
fn xyz_rows_with_labels() {
    let c = parse_xyz("0 0 0 1\n1 2 3 0\n").unwrap();
    assert_eq!(c.points.row(1), &[1.0, 2.0, 3.0]);
    assert_eq!(c.point_labels, Some(vec![1, 0]));
}

#[test]
fn synthetic_splits_replay_and_do_not_overlap() {
    let spec = SynthSpec { points: 64, ..SynthSpec::default() };
    let (tr, te) = synth_split(&spec, 5, 3, 11).unwrap();
    let (tr2, te2) = synth_split(&spec, 5, 3, 11).unwrap();
    assert_eq!((&tr, &te), (&tr2, &te2));
    assert_eq!((tr.len(), te.len()), (5 * spec.classes.len(), 3 * spec.classes.len()));
    for a in &tr.clouds {
        assert!(te.clouds.iter().all(|b| a.points != b.points));
    }
    let (other, _) = synth_split(&spec, 5, 3, 12).unwrap();
    assert_ne!(other, tr);
}

#[test]
fn validation_split_is_disjoint() {
    let spec = SynthSpec { points: 32, ..SynthSpec::default() };
    let (tr, _) = synth_split(&spec, 10, 1, 3).unwrap();
    let (a, b) = tr.split_validation(0.25, 9).unwrap();
    let (a2, b2) = tr.split_validation(0.25, 9).unwrap();
    assert_eq!((&a, &b), (&a2, &b2));
    assert_eq!(a.len() + b.len(), tr.len());
    assert!(b.clouds.iter().all(|c| !a.clouds.contains(c)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normalisation_reaches_the_unit_sphere_and_is_idempotent(
        v in prop::collection::vec(-50.0..50.0f64, 3 * 20),
    ) {
        let x = FeatureMatrix::new(20, 3, v).unwrap();
        let (y, _) = normalize_unit_sphere(&x).unwrap();
        let max_norm = (0..20).map(|i| y.row(i).iter().map(|c| c * c).sum::<f64>().sqrt()).fold(0.0, f64::max);
        prop_assert!((max_norm - 1.0).abs() <= 1e-12);
        let (z, _) = normalize_unit_sphere(&y).unwrap();
        let d = y.values().iter().zip(z.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(d <= 1e-12);
    }
}
