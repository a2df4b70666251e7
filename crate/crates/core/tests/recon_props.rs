mod common;

use f2b_core::fusion::{fuse, FusionParams};
use f2b_core::geometry::{Bvh, Vec3};
use f2b_core::ortho::{render_back_truth, render_maps, ViewFrame};
use f2b_core::recon::{reconstruct, reconstruct_with_grid, ReconParams};
use f2b_core::shapes::uv_sphere;
use f2b_core::Error;

use common::{max_radial_deviation, sphere_cloud, sphere_distance, torus_cloud};

fn params(grid: usize) -> ReconParams {
    ReconParams {
        grid_resolution: grid,
        ..Default::default()
    }
}

#[test]
fn sphere_at_grid_64_is_within_a_cell() {
    let cloud = sphere_cloud(10_000, 1.0);
    let (mesh, grid) = reconstruct_with_grid(&cloud, &params(64)).unwrap();
    assert!(mesh.is_watertight());
    assert_eq!(mesh.euler_characteristic(), 2);
    let dev = max_radial_deviation(&mesh, 1.0);
    assert!(dev <= grid.cell, "deviation {dev} vs cell {}", grid.cell);
    let stats = grid.solve.unwrap();
    assert!(stats.residual <= 1e-7);
    assert!(stats.history.windows(2).all(|w| w[1] <= w[0] + 10.0 * 1e-7));
}

#[test]
fn torus_has_genus_one() {
    let cloud = torus_cloud(0.5, 0.2, 240, 96);
    let mesh = reconstruct(&cloud, &params(64)).unwrap();
    assert!(mesh.is_watertight());
    assert_eq!(mesh.euler_characteristic(), 0);
}

#[test]
fn translation_moves_the_mesh() {
    let cloud = sphere_cloud(4000, 0.7);
    let t = Vec3::new(0.31, -1.7, 2.05);
    let (a, grid) = reconstruct_with_grid(&cloud, &params(48)).unwrap();
    let b = reconstruct(&cloud.translated(&t), &params(48)).unwrap();
    let bvh = Bvh::build(&a);
    let worst = b
        .vertices
        .iter()
        .map(|v| bvh.closest_point(&a, &(v - t)).unwrap().distance)
        .fold(0.0, f64::max);
    assert!(worst <= grid.cell, "{worst} vs cell {}", grid.cell);
}

#[test]
fn flipped_normals_invert_orientation() {
    let cloud = sphere_cloud(4000, 0.7);
    let a = reconstruct(&cloud, &params(48)).unwrap();
    let b = reconstruct(&cloud.with_flipped_normals(), &params(48)).unwrap();
    let outward = |m: &f2b_core::geometry::TriangleMesh| {
        (0..m.triangles.len())
            .filter(|&f| {
                let [p, q, r] = m.corners(f);
                m.face_normal(f).dot(&(p + q + r)) > 0.0
            })
            .count() as f64
            / m.triangles.len() as f64
    };
    assert!(outward(&a) > 0.99);
    assert!(outward(&b) < 0.01);
    let bvh = Bvh::build(&a);
    let worst = b
        .vertices
        .iter()
        .map(|v| bvh.closest_point(&a, v).unwrap().distance)
        .fold(0.0, f64::max);
    assert!(worst < 1e-3 * 1.4 / 48.0, "{worst}");
}

#[test]
fn oracle_fused_sphere_is_close() {
    let mesh = uv_sphere(0.5, 96, 48);
    let frame = ViewFrame::fit(&mesh, Vec3::new(0.2, -0.5, -0.8), 137).unwrap();
    let front = render_maps(&mesh, &frame).unwrap();
    let back = render_back_truth(&mesh, &frame).unwrap();
    let cloud = fuse(&front, None, &back, &FusionParams::default()).unwrap();
    let (rec, grid) = reconstruct_with_grid(&cloud, &params(128)).unwrap();
    assert!(rec.is_watertight());
    let md = sphere_distance(&rec, 0.5, 20_000);
    assert!(md <= 1.5 * grid.cell, "md {md} vs cell {}", grid.cell);
}

#[test]
fn iteration_cap_is_a_solver_error() {
    let cloud = sphere_cloud(2000, 1.0);
    let p = ReconParams {
        grid_resolution: 32,
        max_iterations: 1,
        tolerance: 1e-12,
        ..Default::default()
    };
    assert!(matches!(
        reconstruct(&cloud, &p),
        Err(Error::Solver { iterations: 1, .. })
    ));
}
