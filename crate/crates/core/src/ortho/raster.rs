use rayon::prelude::*;

use super::{MapSet, ViewFrame};
use crate::error::Result;
use crate::geometry::{TriangleMesh, Vec3};

/// Rows handled per parallel task.
const BAND_ROWS: usize = 8;

struct Projected {
    verts: [(f64, f64, f64); 3],
    inv_area: f64,
    row_lo: usize,
    row_hi: usize,
    col_lo: usize,
    col_hi: usize,
    view_normal: Vec3,
}

/// Z-buffer rasterization of the mesh into depth, normal and silhouette maps.
///
/// A pixel is covered when its center lies inside the projected triangle
/// (boundaries inclusive) at a depth inside `[0, far - near]`. The nearest
/// fragment wins; at equal depth the lower triangle index wins. Normals are
/// geometric face normals flipped to face the viewer.
pub fn render_maps(mesh: &TriangleMesh, frame: &ViewFrame) -> Result<MapSet> {
    frame.validate()?;
    let res = frame.resolution;
    let max_depth = frame.depth_range();
    let projected: Vec<Projected> = (0..mesh.triangles.len())
        .filter_map(|f| project_triangle(mesh, frame, f))
        .collect();

    let mut maps = MapSet::empty(*frame);
    let mut zbuf = vec![f64::INFINITY; res * res];
    let mut winner = vec![usize::MAX; res * res];

    zbuf.par_chunks_mut(BAND_ROWS * res)
        .zip(winner.par_chunks_mut(BAND_ROWS * res))
        .enumerate()
        .for_each(|(band, (zrows, wrows))| {
            let row0 = band * BAND_ROWS;
            let row1 = row0 + zrows.len() / res;
            for (k, tri) in projected.iter().enumerate() {
                if tri.row_hi < row0 || tri.row_lo >= row1 {
                    continue;
                }
                let [a, b, c] = tri.verts;
                for row in tri.row_lo.max(row0)..=tri.row_hi.min(row1 - 1) {
                    let y = row as f64;
                    for col in tri.col_lo..=tri.col_hi {
                        let x = col as f64;
                        let w0 = edge(b, c, x, y) * tri.inv_area;
                        let w1 = edge(c, a, x, y) * tri.inv_area;
                        let w2 = edge(a, b, x, y) * tri.inv_area;
                        const EPS: f64 = -1e-9;
                        if w0 < EPS || w1 < EPS || w2 < EPS {
                            continue;
                        }
                        let z = w0 * a.2 + w1 * b.2 + w2 * c.2;
                        if !(0.0..=max_depth).contains(&z) {
                            continue;
                        }
                        let slot = (row - row0) * res + col;
                        if z < zrows[slot] {
                            zrows[slot] = z;
                            wrows[slot] = k;
                        }
                    }
                }
            }
        });

    for idx in 0..res * res {
        if let Some(tri) = projected.get(winner[idx]) {
            maps.set(idx, zbuf[idx], &tri.view_normal);
        }
    }
    if maps.defined_count() == 0 {
        log::warn!("mesh does not intersect the view frustum; silhouette is empty");
    }
    Ok(maps)
}

/// Ground-truth back maps: the mesh rendered from the opposite frame.
pub fn render_back_truth(mesh: &TriangleMesh, frame: &ViewFrame) -> Result<MapSet> {
    render_maps(mesh, &frame.opposite())
}

fn edge(a: (f64, f64, f64), b: (f64, f64, f64), x: f64, y: f64) -> f64 {
    (b.0 - a.0) * (y - a.1) - (b.1 - a.1) * (x - a.0)
}

fn project_triangle(mesh: &TriangleMesh, frame: &ViewFrame, face: usize) -> Option<Projected> {
    let corners = mesh.corners(face);
    let verts = corners.map(|p| frame.project(&p));
    let [a, b, c] = verts;
    let area = edge(a, b, c.0, c.1);
    // edge-on in this view
    if area.abs() < 1e-12 {
        return None;
    }
    let n = (corners[1] - corners[0]).cross(&(corners[2] - corners[0]));
    let mut n = n.try_normalize(0.0)?;
    if n.dot(&frame.direction) > 0.0 {
        n = -n;
    }
    let res = frame.resolution as f64;
    let lo = |v: f64| v.ceil().max(0.0);
    let hi = |v: f64| v.floor().min(res - 1.0);
    let (xmin, xmax) = (a.0.min(b.0).min(c.0), a.0.max(b.0).max(c.0));
    let (ymin, ymax) = (a.1.min(b.1).min(c.1), a.1.max(b.1).max(c.1));
    let (col_lo, col_hi, row_lo, row_hi) = (
        lo(xmin - 1e-9),
        hi(xmax + 1e-9),
        lo(ymin - 1e-9),
        hi(ymax + 1e-9),
    );
    if col_lo > col_hi || row_lo > row_hi {
        return None;
    }
    Some(Projected {
        verts,
        inv_area: 1.0 / area,
        row_lo: row_lo as usize,
        row_hi: row_hi as usize,
        col_lo: col_lo as usize,
        col_hi: col_hi as usize,
        view_normal: frame.to_view(&n),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ortho::{to_oriented_points, SourceTag};
    use crate::shapes;

    fn frame(d: Vec3, half: f64, res: usize) -> ViewFrame {
        let up = if d.y.abs() < 0.99 {
            Vec3::y()
        } else {
            Vec3::z()
        };
        ViewFrame::new(d, up, Vec3::zeros(), half, res, -half, half).unwrap()
    }

    #[test]
    fn cube_face_is_flat_square() {
        let h = 0.5 / 3f64.sqrt();
        let cube = shapes::cuboid(Vec3::repeat(-h), Vec3::repeat(h));
        let f = frame(-Vec3::z(), 0.5, 64);
        let m = render_maps(&cube, &f).unwrap();
        let defined: Vec<usize> = (0..m.depth.len()).filter(|&i| m.is_defined(i)).collect();
        assert!(!defined.is_empty());
        let d0 = m.depth[defined[0]];
        for &i in &defined {
            assert!((m.depth[i] - d0).abs() < 1e-6);
            assert_eq!(m.normal[i], [0.0, 0.0, 1.0]);
        }
        // depth of the +z face from the near plane at z = +0.5
        assert!((d0 as f64 - (0.5 - h)).abs() < 1e-6);
        // centered square: symmetric under both image flips
        let res = 64;
        for r in 0..res {
            for c in 0..res {
                let s = m.silhouette[r * res + c];
                assert_eq!(s, m.silhouette[r * res + (res - 1 - c)]);
                assert_eq!(s, m.silhouette[(res - 1 - r) * res + c]);
            }
        }
        let side = (defined.len() as f64).sqrt();
        assert!((side - 2.0 * h / f.pixel_size()).abs() <= 1.0);
    }

    #[test]
    fn sphere_depth_and_disc() {
        let sphere = shapes::uv_sphere(1.0, 96, 48);
        let res = 65;
        let f = frame(-Vec3::z(), 1.0, res);
        let m = render_maps(&sphere, &f).unwrap();
        let center = m.index(32, 32);
        // near plane at z = +1 touches the front pole
        assert!((m.depth[center] as f64).abs() <= f.pixel_size());
        for r in 0..res {
            for c in 0..res {
                let dist = ((c as f64 - 32.0).powi(2) + (r as f64 - 32.0).powi(2)).sqrt();
                let inside = m.silhouette[r * res + c];
                if dist < res as f64 / 2.0 - 2.0 {
                    assert!(inside, "({c},{r})");
                }
                if dist > res as f64 / 2.0 + 2.0 {
                    assert!(!inside, "({c},{r})");
                }
            }
        }
    }

    #[test]
    fn empty_frustum() {
        let sphere = shapes::uv_sphere(0.2, 16, 8).translated(&Vec3::new(10.0, 0.0, 0.0));
        let m = render_maps(&sphere, &frame(-Vec3::z(), 1.0, 32)).unwrap();
        assert_eq!(m.defined_count(), 0);
    }

    #[test]
    fn normals_face_viewer() {
        let torus = shapes::torus(0.6, 0.25, 32, 16);
        let f = frame(Vec3::new(0.3, -0.8, -0.5).normalize(), 1.0, 96);
        let m = render_maps(&torus, &f).unwrap();
        let defined: Vec<usize> = (0..m.depth.len()).filter(|&i| m.is_defined(i)).collect();
        assert!(defined.iter().all(|&i| m.normal[i][2] > 0.0));
        for &i in &defined {
            let n = m.view_normal(i);
            assert!((n.norm() - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn back_of_prism_matches_front_silhouette() {
        let cube = shapes::cuboid(Vec3::new(-0.3, -0.2, -0.25), Vec3::new(0.3, 0.2, 0.25));
        let f = frame(-Vec3::z(), 0.5, 64);
        let front = render_maps(&cube, &f).unwrap();
        let back = render_back_truth(&cube, &f).unwrap();
        assert_eq!(front.silhouette, back.silhouette);
    }

    #[test]
    fn open_quad_back_view() {
        let quad = shapes::quad(0.4);
        let f = frame(-Vec3::z(), 0.5, 48);
        let front = render_maps(&quad, &f).unwrap();
        let back = render_back_truth(&quad, &f).unwrap();
        assert_eq!(front.silhouette, back.silhouette);
        for i in (0..back.depth.len()).filter(|&i| back.is_defined(i)) {
            assert!(back.normal[i][2] > 0.0);
            assert!((back.world_normal(i) - Vec3::z() * -1.0).norm() < 1e-6);
        }
    }

    #[test]
    fn sphere_points_within_pixel_of_surface() {
        let sphere = shapes::uv_sphere(1.0, 128, 64);
        let f = frame(Vec3::new(1.0, 1.0, -1.0).normalize(), 1.05, 96);
        let m = render_maps(&sphere, &f).unwrap();
        let cloud = to_oriented_points(&m, SourceTag::Front);
        // tessellated sphere sits inside the analytic one by its sagitta
        let sag = 1.0 - (std::f64::consts::PI / 64.0).cos();
        for p in &cloud.points {
            assert!((p.position.norm() - 1.0).abs() <= f.pixel_size() + sag);
        }
    }
}
