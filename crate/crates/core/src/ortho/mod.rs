//! Orthographic depth/normal/silhouette maps: rasterization, masking,
//! un-projection to oriented points and the map file formats.

mod cloud;
mod f2bm;
mod frame;
mod raster;

pub use cloud::{
    load_cloud, read_cloud, save_cloud, write_cloud, OrientedPoint, OrientedPointCloud, SourceTag,
};
pub use f2bm::{
    load_maps, read_f2bm, read_frame, save_maps, write_f2bm, write_frame, write_pfm, F2BM_CHANNELS,
    F2BM_MAGIC, F2BM_VERSION,
};
pub use frame::{ViewFrame, DEFAULT_RESOLUTION, FRUSTUM_MARGIN, MIN_RESOLUTION};
pub use raster::{render_back_truth, render_maps};

use crate::error::{Error, Result};
use crate::geometry::Vec3;

/// Aligned depth, normal and silhouette rasters for one view, row-major.
///
/// Depth is in world units from the frame's near plane; normals are unit
/// vectors in view coordinates (see [`ViewFrame::to_view`]). Background
/// pixels hold NaN depth and zero normals.
#[derive(Debug, Clone, PartialEq)]
pub struct MapSet {
    pub frame: ViewFrame,
    pub depth: Vec<f32>,
    pub normal: Vec<[f32; 3]>,
    pub silhouette: Vec<bool>,
}

impl MapSet {
    /// All-background maps.
    pub fn empty(frame: ViewFrame) -> Self {
        let n = frame.pixel_count();
        MapSet {
            frame,
            depth: vec![f32::NAN; n],
            normal: vec![[0.0; 3]; n],
            silhouette: vec![false; n],
        }
    }

    pub fn resolution(&self) -> usize {
        self.frame.resolution
    }

    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.frame.resolution + col
    }

    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.frame.resolution, idx / self.frame.resolution)
    }

    pub fn is_defined(&self, idx: usize) -> bool {
        self.silhouette[idx] && self.depth[idx].is_finite()
    }

    pub fn defined_count(&self) -> usize {
        (0..self.depth.len())
            .filter(|&i| self.is_defined(i))
            .count()
    }

    pub fn set(&mut self, idx: usize, depth: f64, view_normal: &Vec3) {
        self.depth[idx] = depth as f32;
        self.normal[idx] = [
            view_normal.x as f32,
            view_normal.y as f32,
            view_normal.z as f32,
        ];
        self.silhouette[idx] = true;
    }

    pub fn clear(&mut self, idx: usize) {
        self.depth[idx] = f32::NAN;
        self.normal[idx] = [0.0; 3];
        self.silhouette[idx] = false;
    }

    pub fn view_normal(&self, idx: usize) -> Vec3 {
        let [x, y, z] = self.normal[idx];
        Vec3::new(x as f64, y as f64, z as f64)
    }

    pub fn world_normal(&self, idx: usize) -> Vec3 {
        self.frame.from_view(&self.view_normal(idx))
    }

    pub fn world_point(&self, idx: usize) -> Vec3 {
        let (c, r) = self.coords(idx);
        self.frame.point_at(c, r, self.depth[idx] as f64)
    }

    pub fn check_shape(&self) -> Result<()> {
        let n = self.frame.pixel_count();
        if self.depth.len() != n || self.normal.len() != n || self.silhouette.len() != n {
            return Err(Error::Shape(format!(
                "rasters of length {}/{}/{} for a {}x{} frame",
                self.depth.len(),
                self.normal.len(),
                self.silhouette.len(),
                self.frame.resolution,
                self.frame.resolution
            )));
        }
        Ok(())
    }

    /// Silhouette dilated by `radius` pixels (square structuring element).
    pub fn dilated_silhouette(&self, radius: usize) -> Vec<bool> {
        let res = self.frame.resolution;
        let mut out = vec![false; res * res];
        for row in 0..res {
            for col in 0..res {
                if !self.silhouette[row * res + col] {
                    continue;
                }
                for r in row.saturating_sub(radius)..=(row + radius).min(res - 1) {
                    for c in col.saturating_sub(radius)..=(col + radius).min(res - 1) {
                        out[r * res + c] = true;
                    }
                }
            }
        }
        out
    }
}

/// Clears depth and normals outside the silhouette and drops silhouette
/// pixels whose depth is not finite.
pub fn mask_with_silhouette(maps: &MapSet) -> Result<MapSet> {
    maps.check_shape()?;
    let mut out = maps.clone();
    for idx in 0..out.depth.len() {
        if !out.silhouette[idx] || !out.depth[idx].is_finite() {
            out.clear(idx);
        }
    }
    Ok(out)
}

/// One oriented point per defined pixel, in world coordinates.
pub fn to_oriented_points(maps: &MapSet, tag: SourceTag) -> OrientedPointCloud {
    let points = (0..maps.depth.len())
        .filter(|&i| maps.is_defined(i))
        .map(|i| OrientedPoint {
            position: maps.world_point(i),
            normal: maps
                .world_normal(i)
                .try_normalize(0.0)
                .unwrap_or_else(Vec3::zeros),
            tag,
            pixel: Some(i as u32),
        })
        .collect();
    OrientedPointCloud { points }
}

/// Euclidean distance, in pixels, from every pixel to the nearest `true`
/// pixel of `mask` (zero on the mask). Infinite when the mask is empty.
pub fn distance_to_mask(mask: &[bool], res: usize) -> Vec<f64> {
    const INF: f64 = 1e20;
    let mut grid: Vec<f64> = mask.iter().map(|&m| if m { 0.0 } else { INF }).collect();
    let mut line = vec![0.0; res];
    let mut out = vec![0.0; res];
    // columns, then rows
    for c in 0..res {
        for r in 0..res {
            line[r] = grid[r * res + c];
        }
        squared_edt_1d(&line, &mut out);
        for r in 0..res {
            grid[r * res + c] = out[r];
        }
    }
    for r in 0..res {
        line.copy_from_slice(&grid[r * res..(r + 1) * res]);
        squared_edt_1d(&line, &mut out);
        grid[r * res..(r + 1) * res].copy_from_slice(&out);
    }
    grid.into_iter()
        .map(|d2| {
            if d2 >= INF * 0.5 {
                f64::INFINITY
            } else {
                d2.sqrt()
            }
        })
        .collect()
}

/// Lower envelope of parabolas (Felzenszwalb & Huttenlocher).
fn squared_edt_1d(f: &[f64], d: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let parabola = |q: usize, p: usize| {
        ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64))
    };
    for q in 1..n {
        let mut s = parabola(q, v[k]);
        while s <= z[k] {
            k -= 1;
            s = parabola(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    let mut k = 0;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = q as f64 - p as f64;
        d[q] = dq * dq + f[p];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(res: usize) -> ViewFrame {
        ViewFrame::new(-Vec3::z(), Vec3::y(), Vec3::zeros(), 1.0, res, -1.0, 1.0).unwrap()
    }

    #[test]
    fn edt_matches_brute_force() {
        let res = 24;
        let mut mask = vec![false; res * res];
        for &(c, r) in &[(3usize, 4usize), (20, 20), (10, 2), (11, 2), (0, 23)] {
            mask[r * res + c] = true;
        }
        let d = distance_to_mask(&mask, res);
        for r in 0..res {
            for c in 0..res {
                let brute = (0..res * res)
                    .filter(|&k| mask[k])
                    .map(|k| {
                        let (kc, kr) = ((k % res) as f64, (k / res) as f64);
                        ((kc - c as f64).powi(2) + (kr - r as f64).powi(2)).sqrt()
                    })
                    .fold(f64::INFINITY, f64::min);
                assert!((d[r * res + c] - brute).abs() < 1e-9, "({c},{r})");
            }
        }
        assert!(distance_to_mask(&vec![false; 16 * 16], 16)[0].is_infinite());
    }

    #[test]
    fn masking_clears_outside() {
        let f = frame(16);
        let mut m = MapSet::empty(f);
        for i in 0..3 {
            m.depth[i] = 0.5;
            m.normal[i] = [0.0, 0.0, 1.0];
        }
        m.set(40, 0.25, &Vec3::z());
        let masked = mask_with_silhouette(&m).unwrap();
        for i in 0..3 {
            assert!(masked.depth[i].is_nan());
            assert_eq!(masked.normal[i], [0.0; 3]);
        }
        assert_eq!(masked.defined_count(), 1);
        assert_eq!(masked.depth[40], 0.25);
    }

    #[test]
    fn masking_all_true_is_identity() {
        let f = frame(16);
        let mut m = MapSet::empty(f);
        for i in 0..256 {
            m.set(i, i as f64 * 0.001, &Vec3::new(0.0, 0.6, 0.8));
        }
        assert_eq!(mask_with_silhouette(&m).unwrap(), m);
    }

    #[test]
    fn masking_all_false_is_background() {
        let f = frame(16);
        let mut m = MapSet::empty(f);
        m.depth.iter_mut().for_each(|d| *d = 0.3);
        let masked = mask_with_silhouette(&m).unwrap();
        assert_eq!(masked.defined_count(), 0);
        assert!(masked.depth.iter().all(|d| d.is_nan()));
        assert!(masked.normal.iter().all(|n| *n == [0.0; 3]));
    }

    #[test]
    fn masking_rejects_shape_mismatch() {
        let mut m = MapSet::empty(frame(16));
        m.silhouette.pop();
        assert!(matches!(mask_with_silhouette(&m), Err(Error::Shape(_))));
    }

    #[test]
    fn unproject_center_pixel_at_near_plane() {
        // odd resolution puts a pixel center on the frustum axis
        let f = ViewFrame::new(
            -Vec3::z(),
            Vec3::y(),
            Vec3::new(0.5, 0.5, 0.5),
            1.0,
            17,
            -1.0,
            1.0,
        )
        .unwrap();
        let mut m = MapSet::empty(f);
        let idx = m.index(8, 8);
        m.set(idx, 0.0, &Vec3::z());
        let cloud = to_oriented_points(&m, SourceTag::Front);
        assert_eq!(cloud.points.len(), 1);
        let expected = f.center + f.near * f.direction;
        assert!((cloud.points[0].position - expected).norm() < 1e-9);
        assert!((cloud.points[0].normal - Vec3::z()).norm() < 1e-9);
    }
}
