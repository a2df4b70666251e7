use std::f64::consts::FRAC_PI_2;

use nalgebra::{Matrix3, Rotation3, Vector3};
use rayon::prelude::*;

use super::plane::{unit_from_angles, SymmetryPlane};
use crate::geometry::{KdTree, Vec3};
use crate::ortho::OrientedPointCloud;

const ARMIJO_C: f64 = 1e-4;
const MAX_INNER_STEPS: usize = 10;
const MAX_HALVINGS: usize = 60;
const POINT_TO_PLANE_ITERATIONS: usize = 30;
/// Largest normal rotation per Gauss-Newton step, radians.
const MAX_TURN: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpParams {
    pub max_iterations: usize,
    /// Correspondence distance cutoff in world units.
    pub max_distance: f64,
    /// Cutoff on the angle between a reflected normal and its match, radians.
    pub max_normal_angle: f64,
    pub tolerance: f64,
}

impl IcpParams {
    /// Defaults scaled to a frame's pixel size: 400 iterations, 4 pixels, 60°.
    pub fn for_pixel_size(pixel_size: f64) -> Self {
        IcpParams {
            max_iterations: 400,
            max_distance: 4.0 * pixel_size,
            max_normal_angle: 60f64.to_radians(),
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult {
    pub plane: SymmetryPlane,
    pub iterations: usize,
    pub correspondences: usize,
    /// True when the first correspondence search found nothing.
    pub no_correspondence: bool,
    /// Objective values along accepted steps, one list per outer iteration.
    pub history: Vec<Vec<f64>>,
}

/// Mean squared distance between reflected sources and their targets.
pub fn icp_objective(plane: &SymmetryPlane, pairs: &[(Vec3, Vec3)]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let sum: f64 = pairs
        .iter()
        .map(|(p, t)| (plane.reflect_point(p) - t).norm_squared())
        .sum();
    sum / pairs.len() as f64
}

/// Analytic gradient of [`icp_objective`] in `(phi, theta, d)`.
pub fn icp_gradient(plane: &SymmetryPlane, pairs: &[(Vec3, Vec3)]) -> [f64; 3] {
    if pairs.is_empty() {
        return [0.0; 3];
    }
    let n = plane.normal();
    let mut gn = Vec3::zeros();
    let mut gd = 0.0;
    for (p, t) in pairs {
        let e = n.dot(p) - plane.d;
        let r = p - 2.0 * e * n - t;
        let rn = r.dot(&n);
        gn -= rn * p + e * r;
        gd += rn;
    }
    let m = pairs.len() as f64;
    let (gn, gd) = (4.0 * gn / m, 4.0 * gd / m);
    let (st, ct) = plane.theta.sin_cos();
    let (sp, cp) = plane.phi.sin_cos();
    let dn_dphi = Vec3::new(-st * sp, st * cp, 0.0);
    let dn_dtheta = Vec3::new(ct * cp, ct * sp, -st);
    [gn.dot(&dn_dphi), gn.dot(&dn_dtheta), gd]
}

/// Point-to-point reflective ICP.
///
/// Works in a rotated chart where the initial normal lies on the equator, so
/// the polar parameterization stays away from its poles. Each outer
/// iteration matches every reflected point to its nearest original point,
/// drops matches beyond the distance or normal cutoffs and runs gradient
/// descent with Armijo backtracking on the matched set.
pub fn refine_plane_icp(
    cloud: &OrientedPointCloud,
    plane: &SymmetryPlane,
    params: &IcpParams,
) -> IcpResult {
    refine_plane_icp_masked(cloud, plane, params, &|_| false)
}

/// Reports whether a world point is hidden behind the observed surface.
pub type Occlusion<'a> = dyn Fn(&Vec3) -> bool + Sync + 'a;

/// [`refine_plane_icp`] that also drops every source whose reflection
/// `occluded` reports as hidden in the input view.
pub fn refine_plane_icp_masked(
    cloud: &OrientedPointCloud,
    plane: &SymmetryPlane,
    params: &IcpParams,
    occluded: &Occlusion,
) -> IcpResult {
    let n0 = plane.normal();
    let chart = Rotation3::rotation_between(&n0, &Vec3::x())
        .unwrap_or_else(|| Rotation3::from_axis_angle(&Vec3::z_axis(), std::f64::consts::PI));
    let pts: Vec<Vec3> = cloud.points.iter().map(|p| chart * p.position).collect();
    let nrm: Vec<Vec3> = cloud.points.iter().map(|p| chart * p.normal).collect();
    let tree = KdTree::new(pts.clone());
    let cos_limit = params.max_normal_angle.cos();
    let max_d2 = params.max_distance * params.max_distance;

    let back = chart.inverse();
    let mut current = SymmetryPlane::from_angles(0.0, FRAC_PI_2, plane.d);
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut correspondences = 0;
    let mut no_correspondence = false;

    while iterations < params.max_iterations {
        let pairs: Vec<(Vec3, Vec3)> = (0..pts.len())
            .into_par_iter()
            .filter_map(|i| {
                let q = current.reflect_point(&pts[i]);
                let (j, _) = tree.nearest_within(&q, max_d2)?;
                if occluded(&(back * q)) {
                    return None;
                }
                let rn = current.reflect_vector(&nrm[i]);
                if rn.dot(&nrm[j]) < cos_limit {
                    return None;
                }
                Some((pts[i], pts[j]))
            })
            .collect();
        correspondences = pairs.len();
        if pairs.is_empty() {
            no_correspondence = iterations == 0;
            break;
        }
        iterations += 1;
        let (next, trace) = descend(&current, &pairs, params.tolerance);
        history.push(trace);
        let change = ((next.phi - current.phi).powi(2)
            + (next.theta - current.theta).powi(2)
            + (next.d - current.d).powi(2))
        .sqrt();
        current = next;
        if change < params.tolerance {
            break;
        }
    }

    let n = back * unit_from_angles(current.phi, current.theta);
    let refined = SymmetryPlane::from_normal_offset(&n, current.d).unwrap_or(*plane);
    IcpResult {
        plane: if no_correspondence { *plane } else { refined },
        iterations,
        correspondences,
        no_correspondence,
        history,
    }
}

/// Gauss-Newton refinement of the whole plane under point-to-plane
/// residuals `(reflect(p) - t) · n_t`, with the matching cutoffs of
/// [`refine_plane_icp`]. Reflected points that overhang a partially observed
/// face have no residual along its normal, so unlike the point-to-point fit
/// they do not drag the plane toward the better observed side.
pub fn refine_point_to_plane(
    cloud: &OrientedPointCloud,
    plane: &SymmetryPlane,
    params: &IcpParams,
    occluded: &Occlusion,
) -> SymmetryPlane {
    let pts: Vec<Vec3> = cloud.points.iter().map(|p| p.position).collect();
    let tree = KdTree::new(pts.clone());
    let cos_limit = params.max_normal_angle.cos();
    let max_d2 = params.max_distance * params.max_distance;
    let mut n = plane.normal();
    let mut d = plane.d;
    for _ in 0..POINT_TO_PLANE_ITERATIONS {
        let current = SymmetryPlane::from_normal_offset(&n, d).unwrap_or(*plane);
        let (e1, e2) = tangent_basis(&n);
        let (jtj, jtf) = (0..pts.len())
            .into_par_iter()
            .filter_map(|i| {
                let p = pts[i];
                let q = current.reflect_point(&p);
                let (j, _) = tree.nearest_within(&q, max_d2)?;
                let nt = cloud.points[j].normal;
                if occluded(&q)
                    || current.reflect_vector(&cloud.points[i].normal).dot(&nt) < cos_limit
                {
                    return None;
                }
                let s = n.dot(&p) - d;
                let nn = n.dot(&nt);
                let row = Vector3::new(
                    -2.0 * (e1.dot(&p) * nn + s * e1.dot(&nt)),
                    -2.0 * (e2.dot(&p) * nn + s * e2.dot(&nt)),
                    2.0 * nn,
                );
                let f = (q - pts[j]).dot(&nt);
                Some((row * row.transpose(), row * f))
            })
            .reduce(
                || (Matrix3::zeros(), Vector3::zeros()),
                |x, y| (x.0 + y.0, x.1 + y.1),
            );
        let damped = jtj + Matrix3::identity() * (1e-9 * jtj.trace()).max(f64::MIN_POSITIVE);
        let Some(step) = damped.cholesky().map(|c| c.solve(&-jtf)) else {
            break;
        };
        let turn = step[0].hypot(step[1]);
        let shrink = (params.max_distance / step[2].abs())
            .min(MAX_TURN / turn)
            .min(1.0);
        let step = step * shrink;
        n = (n + step[0] * e1 + step[1] * e2).normalize();
        d += step[2];
        if step.norm() < params.tolerance {
            break;
        }
    }
    SymmetryPlane::from_normal_offset(&n, d).unwrap_or(*plane)
}

fn tangent_basis(n: &Vec3) -> (Vec3, Vec3) {
    let helper = if n.x.abs() < 0.9 {
        Vec3::x()
    } else {
        Vec3::y()
    };
    let e1 = n.cross(&helper).normalize();
    (e1, n.cross(&e1))
}

fn descend(start: &SymmetryPlane, pairs: &[(Vec3, Vec3)], tol: f64) -> (SymmetryPlane, Vec<f64>) {
    let mut x = *start;
    let mut f = icp_objective(&x, pairs);
    let mut trace = vec![f];
    let mut alpha = 1.0;
    for _ in 0..MAX_INNER_STEPS {
        let g = icp_gradient(&x, pairs);
        let g2 = g[0] * g[0] + g[1] * g[1] + g[2] * g[2];
        if g2 == 0.0 {
            break;
        }
        alpha *= 2.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let y = SymmetryPlane::from_angles(
                x.phi - alpha * g[0],
                x.theta - alpha * g[1],
                x.d - alpha * g[2],
            );
            let fy = icp_objective(&y, pairs);
            if fy <= f - ARMIJO_C * alpha * g2 {
                accepted = Some((y, fy));
                break;
            }
            alpha *= 0.5;
        }
        let Some((y, fy)) = accepted else {
            break;
        };
        x = y;
        f = fy;
        trace.push(f);
        if alpha * g2.sqrt() < tol {
            break;
        }
    }
    (x, trace)
}
