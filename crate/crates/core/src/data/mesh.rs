use rand::Rng;

use super::off::Mesh;
use crate::error::{Error, Result};
use crate::graph::FeatureMatrix;
use crate::tensor::Real;

fn triangle_area(a: [Real; 3], b: [Real; 3], c: [Real; 3]) -> Real {
    let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
    let cross = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
    0.5 * (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt()
}

/// Area-weighted uniform surface sampling. Returns the points and the face
/// each point was drawn from.
pub fn sample_mesh_with_faces<R: Rng + ?Sized>(
    mesh: &Mesh,
    n: usize,
    rng: &mut R,
) -> Result<(FeatureMatrix, Vec<usize>)> {
    let mut cumulative = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for f in &mesh.faces {
        total += triangle_area(mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]);
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::Data("mesh has no face with positive area".into()));
    }
    let mut values = Vec::with_capacity(3 * n);
    let mut chosen = Vec::with_capacity(n);
    for _ in 0..n {
        let r = rng.random::<f64>() as Real * total;
        let fi = cumulative.partition_point(|&c| c <= r).min(cumulative.len() - 1);
        let [a, b, c] = mesh.faces[fi].map(|v| mesh.vertices[v]);
        let (mut u, mut v) = (rng.random::<f64>() as Real, rng.random::<f64>() as Real);
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        for d in 0..3 {
            values.push(a[d] + u * (b[d] - a[d]) + v * (c[d] - a[d]));
        }
        chosen.push(fi);
    }
    Ok((FeatureMatrix::new(n, 3, values)?, chosen))
}

pub fn sample_mesh<R: Rng + ?Sized>(mesh: &Mesh, n: usize, rng: &mut R) -> Result<FeatureMatrix> {
    Ok(sample_mesh_with_faces(mesh, n, rng)?.0)
}

/// The centre subtracted and the scale divided by.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalization {
    pub center: [Real; 3],
    pub scale: Real,
}

/// Moves the centroid of the first three channels to the origin and scales
/// them so the farthest point has norm one. Further channels are copied.
pub fn normalize_unit_sphere(points: &FeatureMatrix) -> Result<(FeatureMatrix, Normalization)> {
    let (n, f) = (points.n(), points.f());
    if f < 3 {
        return Err(Error::dim("unit-sphere normalisation needs three coordinates"));
    }
    let mut center = [0.0; 3];
    for i in 0..n {
        for d in 0..3 {
            center[d] += points.row(i)[d];
        }
    }
    center.iter_mut().for_each(|c| *c /= n as Real);
    let mut values = points.values().to_vec();
    let mut scale: Real = 0.0;
    for i in 0..n {
        let row = &mut values[i * f..i * f + 3];
        for d in 0..3 {
            row[d] -= center[d];
        }
        scale = scale.max((row[0] * row[0] + row[1] * row[1] + row[2] * row[2]).sqrt());
    }
    if !(scale > 0.0) {
        return Err(Error::Data("all points coincide; the scale would be zero".into()));
    }
    for i in 0..n {
        values[i * f..i * f + 3].iter_mut().for_each(|v| *v /= scale);
    }
    Ok((FeatureMatrix::new(n, f, values)?, Normalization { center, scale }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn triangle() -> Mesh {
        Mesh { vertices: vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], faces: vec![[0, 1, 2]] }
    }

    #[test]
    fn samples_stay_inside_the_triangle() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pts = sample_mesh(&triangle(), 500, &mut rng).unwrap();
        for i in 0..pts.n() {
            let p = pts.row(i);
            assert!(p[0] >= 0.0 && p[1] >= 0.0 && p[0] + p[1] <= 1.0 + 1e-12 && p[2] == 0.0);
        }
    }

    #[test]
    fn degenerate_mesh_is_rejected() {
        let m = Mesh { vertices: vec![[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]], faces: vec![[0, 1, 2]] };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(sample_mesh(&m, 3, &mut rng), Err(Error::Data(_))));
    }

    #[test]
    fn symmetric_pair_scales_to_unit() {
        let x = FeatureMatrix::from_rows(&[vec![2.0, 0.0, 0.0], vec![-2.0, 0.0, 0.0]]).unwrap();
        let (y, norm) = normalize_unit_sphere(&x).unwrap();
        assert_eq!(y.values(), &[1.0, 0.0, 0.0, -1.0, 0.0, 0.0]);
        assert_eq!(norm.scale, 2.0);
    }

    #[test]
    fn coincident_points_have_no_scale() {
        let x = FeatureMatrix::from_rows(&[vec![1.0, 1.0, 1.0], vec![1.0, 1.0, 1.0]]).unwrap();
        assert!(matches!(normalize_unit_sphere(&x), Err(Error::Data(_))));
    }
}
