#![allow(dead_code)]

use f2b_core::fusion::FusionParams;
use f2b_core::geometry::{normalize_mesh, Similarity, TriangleMesh, Vec3};
use f2b_core::ortho::{OrientedPointCloud, SourceTag, ViewFrame};
use f2b_core::shapes::CorpusShape;
use f2b_core::symmetry::SymmetryPlane;

/// Normalized mesh and the shape's first symmetry plane in the normalized
/// frame.
pub fn normalized(shape: &CorpusShape) -> (TriangleMesh, Option<SymmetryPlane>) {
    let (mesh, xf) = normalize_mesh(&shape.mesh).unwrap();
    let plane = shape.planes.first().map(|&(n, d)| plane_after(&xf, &n, d));
    (mesh, plane)
}

pub fn plane_after(xf: &Similarity, n: &Vec3, d: f64) -> SymmetryPlane {
    SymmetryPlane::from_normal_offset(n, xf.apply(&(n * d)).dot(n)).unwrap()
}

/// Checks the post-fusion depth ordering and opposite-pair separation over
/// the front lattice. Returns a description of the first violation.
pub fn fusion_violation(
    cloud: &OrientedPointCloud,
    frame: &ViewFrame,
    params: &FusionParams,
) -> Option<String> {
    const EPS: f64 = 1e-9;
    let res = frame.resolution;
    let mut front = vec![None; res * res];
    let mut toward: Vec<Vec<f64>> = vec![Vec::new(); res * res];
    for p in &cloud.points {
        let i = p.pixel.unwrap() as usize;
        let z = frame.depth_of(&p.position);
        if p.tag == SourceTag::Front {
            front[i] = Some(z);
        }
        if p.normal.dot(&frame.direction) < 0.0 {
            toward[i].push(z);
        }
    }
    let sep = params.min_separation * frame.pixel_size();
    for p in &cloud.points {
        let i = p.pixel.unwrap() as usize;
        let z = frame.depth_of(&p.position);
        if p.tag != SourceTag::Front {
            if let Some(f) = front[i] {
                if z < f - EPS {
                    return Some(format!(
                        "{:?} point at pixel {i} in front of the front surface",
                        p.tag
                    ));
                }
            }
        }
        if p.normal.dot(&frame.direction) > 0.0 {
            let (c, r) = (i % res, i / res);
            for rr in r.saturating_sub(1)..=(r + 1).min(res - 1) {
                for cc in c.saturating_sub(1)..=(c + 1).min(res - 1) {
                    for &a in &toward[rr * res + cc] {
                        if (z - a).abs() < sep - EPS {
                            return Some(format!(
                                "opposite pair near pixel {i} only {} apart",
                                (z - a).abs()
                            ));
                        }
                    }
                }
            }
        }
    }
    None
}

fn oriented(position: Vec3, normal: Vec3) -> f2b_core::ortho::OrientedPoint {
    f2b_core::ortho::OrientedPoint {
        position,
        normal,
        tag: SourceTag::Front,
        pixel: None,
    }
}

/// `n` Fibonacci-spiral samples of a sphere with exact outward normals.
pub fn sphere_cloud(n: usize, radius: f64) -> OrientedPointCloud {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let points = (0..n)
        .map(|s| {
            let z = 1.0 - 2.0 * (s as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let t = golden * s as f64;
            let normal = Vec3::new(r * t.cos(), r * t.sin(), z);
            oriented(normal * radius, normal)
        })
        .collect();
    OrientedPointCloud { points }
}

/// Regular parametric samples of a torus around the z axis.
pub fn torus_cloud(major: f64, minor: f64, nu: usize, nv: usize) -> OrientedPointCloud {
    let tau = std::f64::consts::TAU;
    let mut points = Vec::with_capacity(nu * nv);
    for i in 0..nu {
        let u = tau * i as f64 / nu as f64;
        for j in 0..nv {
            let v = tau * j as f64 / nv as f64;
            let normal = Vec3::new(v.cos() * u.cos(), v.cos() * u.sin(), v.sin());
            let center = Vec3::new(major * u.cos(), major * u.sin(), 0.0);
            points.push(oriented(center + minor * normal, normal));
        }
    }
    OrientedPointCloud { points }
}

/// Mean of the two one-sided mean distances between `mesh` and the sphere
/// of `radius` at the origin, unnormalized.
pub fn sphere_distance(mesh: &TriangleMesh, radius: f64, n: usize) -> f64 {
    use f2b_core::geometry::{sample_surface, Bvh};
    use f2b_core::shapes::uv_sphere;
    let fwd: f64 = sample_surface(mesh, n, 3)
        .unwrap()
        .iter()
        .map(|s| (s.position.norm() - radius).abs())
        .sum::<f64>()
        / n as f64;
    let bvh = Bvh::build(mesh);
    let bwd: f64 = sample_surface(&uv_sphere(1.0, 256, 128), n, 7)
        .unwrap()
        .iter()
        .map(|s| {
            bvh.closest_point(mesh, &(s.position.normalize() * radius))
                .unwrap()
                .distance
        })
        .sum::<f64>()
        / n as f64;
    0.5 * (fwd + bwd)
}

pub fn max_radial_deviation(mesh: &TriangleMesh, radius: f64) -> f64 {
    mesh.vertices
        .iter()
        .map(|v| (v.norm() - radius).abs())
        .fold(0.0, f64::max)
}

/// Mean distance from the unit sphere to the unit sphere shifted by `t`,
/// by Simpson quadrature over the cosine of the polar angle.
pub fn shifted_sphere_mean_distance(t: f64) -> f64 {
    let n = 200_000;
    let h = 2.0 / n as f64;
    let f = |c: f64| ((1.0 - 2.0 * t * c + t * t).sqrt() - 1.0).abs();
    let mut acc = f(-1.0) + f(1.0);
    for k in 1..n {
        let c = -1.0 + k as f64 * h;
        acc += if k % 2 == 1 { 4.0 } else { 2.0 } * f(c);
    }
    0.5 * acc * h / 3.0
}
