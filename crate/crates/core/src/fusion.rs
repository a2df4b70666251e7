//! Merging front, reflected and back maps into one oriented point cloud.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::ortho::{MapSet, OrientedPoint, OrientedPointCloud, SourceTag, ViewFrame};

const FRAME_TOL: f64 = 1e-9;

/// All distances in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionParams {
    pub min_separation: f64,
    pub outlier_threshold: f64,
    /// Opposite pairs are searched at Chebyshev distance below this.
    pub neighbor_radius: f64,
}

impl Default for FusionParams {
    fn default() -> Self {
        FusionParams {
            min_separation: 2.0,
            outlier_threshold: 4.0,
            neighbor_radius: 2.0,
        }
    }
}

impl FusionParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("min_separation", self.min_separation),
            ("outlier_threshold", self.outlier_threshold),
            ("neighbor_radius", self.neighbor_radius),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "fusion {name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    fn reach(&self) -> usize {
        (self.neighbor_radius.ceil() as usize).saturating_sub(1)
    }
}

/// Counts of points affected by each rule.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FusionStats {
    pub culled_by_front: usize,
    pub culled_by_reflected: usize,
    pub displaced: usize,
    pub outliers: usize,
}

#[derive(Clone, Copy)]
struct Sample {
    /// Depth along the front view direction.
    depth: f64,
    normal: Vec3,
}

type Layer = Vec<Option<Sample>>;

#[derive(Clone, Copy, PartialEq)]
enum Facing {
    Toward,
    Away,
    Unknown,
}

fn facing(normal: &Vec3, frame: &ViewFrame) -> Facing {
    let d = normal.dot(&frame.direction);
    if d < 0.0 {
        Facing::Toward
    } else if d > 0.0 {
        Facing::Away
    } else {
        Facing::Unknown
    }
}

fn layer(maps: &MapSet, front: &ViewFrame) -> Layer {
    (0..maps.depth.len())
        .map(|i| {
            maps.is_defined(i).then(|| Sample {
                depth: front.depth_of(&maps.world_point(i)),
                normal: maps
                    .world_normal(i)
                    .try_normalize(0.0)
                    .unwrap_or_else(Vec3::zeros),
            })
        })
        .collect()
}

fn check_lattice(maps: &MapSet, expected: &ViewFrame, what: &str) -> Result<()> {
    maps.check_shape()?;
    if !maps.frame.approx_eq(expected, FRAME_TOL) {
        return Err(Error::Shape(format!(
            "{what} maps are not on the front lattice"
        )));
    }
    Ok(())
}

pub fn fuse(
    front: &MapSet,
    reflected: Option<&MapSet>,
    back: &MapSet,
    params: &FusionParams,
) -> Result<OrientedPointCloud> {
    fuse_with_stats(front, reflected, back, params).map(|(cloud, _)| cloud)
}

/// Applies, in order: front culling, reflected-over-back culling, opposite
/// pair separation, the two culls again, and per-map outlier removal.
/// Points come out sorted by source tag, then pixel index.
pub fn fuse_with_stats(
    front: &MapSet,
    reflected: Option<&MapSet>,
    back: &MapSet,
    params: &FusionParams,
) -> Result<(OrientedPointCloud, FusionStats)> {
    params.validate()?;
    front.check_shape()?;
    let frame = front.frame;
    if let Some(r) = reflected {
        check_lattice(r, &frame, "reflected")?;
    }
    check_lattice(back, &frame.opposite(), "back")?;

    let mut stats = FusionStats::default();
    let front_layer = layer(front, &frame);
    let refl_layer = reflected
        .map(|r| layer(r, &frame))
        .unwrap_or_else(|| vec![None; front_layer.len()]);
    let back_layer = layer(back, &frame);

    let mut layers = [front_layer, refl_layer, back_layer];
    cull(&mut layers, &mut stats);
    stats.displaced = separate(&mut layers, &frame, params);
    // a displaced viewer-averted front sample may now sit behind hidden
    // samples of its own column
    cull(&mut layers, &mut stats);

    let threshold = params.outlier_threshold * frame.pixel_size();
    let res = frame.resolution;
    let tags = [SourceTag::Front, SourceTag::Reflected, SourceTag::Back];
    let mut points = Vec::new();
    for (layer, tag) in layers.iter().zip(tags) {
        let depths: Vec<Option<f64>> = layer.iter().map(|s| s.map(|s| s.depth)).collect();
        let keep = inliers(&depths, res, threshold);
        for (i, s) in layer.iter().enumerate() {
            let Some(s) = s else { continue };
            if !keep[i] {
                stats.outliers += 1;
                continue;
            }
            points.push(OrientedPoint {
                position: frame.point_at(i % res, i / res, s.depth),
                normal: s.normal,
                tag,
                pixel: Some(i as u32),
            });
        }
    }
    Ok((OrientedPointCloud { points }, stats))
}

/// Drops reflected and back samples in front of the front sample of their
/// column, then back samples in front of the reflected one.
fn cull(layers: &mut [Layer; 3], stats: &mut FusionStats) {
    let [front, refl, back] = layers;
    for i in 0..front.len() {
        if let Some(f) = front[i] {
            if refl[i].is_some_and(|s| s.depth < f.depth) {
                refl[i] = None;
                stats.culled_by_front += 1;
            }
            if back[i].is_some_and(|s| s.depth < f.depth) {
                back[i] = None;
                stats.culled_by_front += 1;
            }
        }
        if let (Some(r), Some(b)) = (refl[i], back[i]) {
            if b.depth < r.depth {
                back[i] = None;
                stats.culled_by_reflected += 1;
            }
        }
    }
}

/// Pushes every viewer-averted sample back until it sits at least
/// `min_separation` pixels from all viewer-facing samples nearby. Returns
/// how many samples moved.
fn separate(layers: &mut [Layer; 3], frame: &ViewFrame, params: &FusionParams) -> usize {
    let res = frame.resolution;
    let sep = params.min_separation * frame.pixel_size();
    let reach = params.reach();
    let facing_depths: Vec<Vec<f64>> = (0..res * res)
        .map(|i| {
            layers
                .iter()
                .filter_map(|l| l[i])
                .filter(|s| facing(&s.normal, frame) == Facing::Toward)
                .map(|s| s.depth)
                .collect()
        })
        .collect();

    let mut moved = 0;
    for layer in layers.iter_mut() {
        let updates: Vec<(usize, f64)> = layer
            .par_iter()
            .enumerate()
            .filter_map(|(i, s)| {
                let s = (*s)?;
                if facing(&s.normal, frame) != Facing::Away {
                    return None;
                }
                let (c, r) = (i % res, i / res);
                let mut blockers = Vec::new();
                for rr in r.saturating_sub(reach)..=(r + reach).min(res - 1) {
                    for cc in c.saturating_sub(reach)..=(c + reach).min(res - 1) {
                        blockers.extend_from_slice(&facing_depths[rr * res + cc]);
                    }
                }
                let z = pushed_depth(s.depth, &blockers, sep);
                (z != s.depth).then_some((i, z))
            })
            .collect();
        moved += updates.len();
        for (i, z) in updates {
            if let Some(s) = layer[i].as_mut() {
                s.depth = z;
            }
        }
    }
    moved
}

fn pushed_depth(depth: f64, blockers: &[f64], sep: f64) -> f64 {
    let mut z = depth;
    loop {
        let hit = blockers
            .iter()
            .filter(|&&a| (z - a).abs() < sep)
            .fold(f64::NEG_INFINITY, |m, &a| m.max(a));
        if hit == f64::NEG_INFINITY {
            return z;
        }
        let next = hit + sep;
        if next <= z {
            return z;
        }
        z = next;
    }
}

/// Keep mask: a defined pixel survives when at least one of its defined
/// 4-neighbors lies within `threshold` in depth.
fn inliers(depth: &[Option<f64>], res: usize, threshold: f64) -> Vec<bool> {
    (0..depth.len())
        .map(|i| {
            let Some(z) = depth[i] else { return false };
            let (c, r) = (i % res, i / res);
            let mut neighbors = Vec::with_capacity(4);
            if c > 0 {
                neighbors.push(i - 1);
            }
            if c + 1 < res {
                neighbors.push(i + 1);
            }
            if r > 0 {
                neighbors.push(i - res);
            }
            if r + 1 < res {
                neighbors.push(i + res);
            }
            neighbors
                .into_iter()
                .filter_map(|j| depth[j])
                .any(|n| (n - z).abs() <= threshold)
        })
        .collect()
}

/// Clears pixels whose depth differs by more than `threshold` pixel sizes
/// from every defined 4-neighbor. Isolated pixels are cleared too.
pub fn remove_outliers(maps: &MapSet, threshold: f64) -> MapSet {
    let depths: Vec<Option<f64>> = (0..maps.depth.len())
        .map(|i| maps.is_defined(i).then(|| maps.depth[i] as f64))
        .collect();
    let keep = inliers(
        &depths,
        maps.resolution(),
        threshold * maps.frame.pixel_size(),
    );
    let mut out = maps.clone();
    for (i, k) in keep.into_iter().enumerate() {
        if !k && out.is_defined(i) {
            out.clear(i);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const RES: usize = 16;

    fn frame() -> ViewFrame {
        // pixel size 1 keeps pixel and world units equal
        ViewFrame::new(
            Vec3::new(0.0, 0.0, -1.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::zeros(),
            RES as f64 / 2.0,
            RES,
            -50.0,
            50.0,
        )
        .unwrap()
    }

    fn toward() -> Vec3 {
        Vec3::new(0.0, 0.0, 1.0)
    }

    /// Flat patch of `depth` over the whole raster, as seen in `frame`.
    fn plane(frame: ViewFrame, depth: f64) -> MapSet {
        let mut m = MapSet::empty(frame);
        for i in 0..frame.pixel_count() {
            m.set(i, depth, &toward());
        }
        m
    }

    fn back_at(front_depths: &[(usize, f64)]) -> MapSet {
        let f = frame();
        let b = f.opposite();
        let mut m = MapSet::empty(b);
        for &(i, z) in front_depths {
            let (c, r) = (i % RES, i / RES);
            let depth = b.depth_of(&f.point_at(c, r, z));
            m.set(i, depth, &toward());
        }
        m
    }

    fn depth_of(cloud: &OrientedPointCloud, tag: SourceTag, pixel: usize) -> Option<f64> {
        cloud
            .points
            .iter()
            .find(|p| p.tag == tag && p.pixel == Some(pixel as u32))
            .map(|p| frame().depth_of(&p.position))
    }

    #[test]
    fn close_back_point_is_pushed_to_two_pixels() {
        let front = plane(frame(), 10.0);
        let back = back_at(&(0..RES * RES).map(|i| (i, 10.8)).collect::<Vec<_>>());
        let (cloud, stats) =
            fuse_with_stats(&front, None, &back, &FusionParams::default()).unwrap();
        assert!((depth_of(&cloud, SourceTag::Back, 40).unwrap() - 12.0).abs() < 1e-6);
        assert_eq!(stats.displaced, RES * RES);
        assert_eq!(stats.outliers, 0);
    }

    #[test]
    fn reflected_point_in_front_of_front_is_dropped() {
        let front = plane(frame(), 10.0);
        let mut refl = plane(frame(), 20.0);
        refl.set(40, 9.0, &Vec3::new(0.0, 0.0, -1.0));
        let back = back_at(&(0..RES * RES).map(|i| (i, 30.0)).collect::<Vec<_>>());
        let (cloud, stats) =
            fuse_with_stats(&front, Some(&refl), &back, &FusionParams::default()).unwrap();
        assert_eq!(depth_of(&cloud, SourceTag::Reflected, 40), None);
        assert_eq!(stats.culled_by_front, 1);
        assert_eq!(cloud.count(SourceTag::Reflected), RES * RES - 1);
    }

    #[test]
    fn back_point_in_front_of_reflected_is_dropped() {
        let front = plane(frame(), 10.0);
        let mut refl = MapSet::empty(frame());
        for i in 0..RES * RES {
            refl.set(i, 12.0, &Vec3::new(0.0, 0.0, -1.0));
        }
        let mut pairs: Vec<(usize, f64)> = (0..RES * RES).map(|i| (i, 30.0)).collect();
        pairs[40] = (40, 11.0);
        let back = back_at(&pairs);
        let (cloud, stats) =
            fuse_with_stats(&front, Some(&refl), &back, &FusionParams::default()).unwrap();
        assert_eq!(depth_of(&cloud, SourceTag::Back, 40), None);
        assert_eq!(stats.culled_by_reflected, 1);
        assert!((depth_of(&cloud, SourceTag::Reflected, 40).unwrap() - 12.0).abs() < 1e-9);
    }

    #[test]
    fn back_point_in_front_of_front_is_dropped() {
        let front = plane(frame(), 10.0);
        let mut pairs: Vec<(usize, f64)> = (0..RES * RES).map(|i| (i, 30.0)).collect();
        pairs[40] = (40, 9.5);
        let back = back_at(&pairs);
        let cloud = fuse(&front, None, &back, &FusionParams::default()).unwrap();
        assert_eq!(depth_of(&cloud, SourceTag::Back, 40), None);
    }

    #[test]
    fn separation_uses_neighbors_not_only_same_pixel() {
        let mut front = plane(frame(), 10.0);
        front.set(41, 11.5, &toward());
        let back = back_at(&(0..RES * RES).map(|i| (i, 12.5)).collect::<Vec<_>>());
        let cloud = fuse(&front, None, &back, &FusionParams::default()).unwrap();
        assert!((depth_of(&cloud, SourceTag::Back, 40).unwrap() - 13.5).abs() < 1e-6);
        assert!((depth_of(&cloud, SourceTag::Back, 43).unwrap() - 12.5).abs() < 1e-6);
    }

    #[test]
    fn displaced_front_point_culls_what_it_passed() {
        let mut front = plane(frame(), 10.0);
        front.set(40, 10.5, &-toward());
        let mut back = back_at(&(0..RES * RES).map(|i| (i, 30.0)).collect::<Vec<_>>());
        // viewer-facing in the front frame
        let z = back
            .frame
            .depth_of(&frame().point_at(40 % RES, 40 / RES, 11.0));
        back.set(40, z, &-toward());
        let (cloud, stats) =
            fuse_with_stats(&front, None, &back, &FusionParams::default()).unwrap();
        assert!((depth_of(&cloud, SourceTag::Front, 40).unwrap() - 13.0).abs() < 1e-6);
        assert_eq!(depth_of(&cloud, SourceTag::Back, 40), None);
        assert_eq!(stats.culled_by_front, 1);
    }

    #[test]
    fn separated_pairs_are_left_alone() {
        let front = plane(frame(), 10.0);
        let back = back_at(&(0..RES * RES).map(|i| (i, 12.0)).collect::<Vec<_>>());
        let (_, stats) = fuse_with_stats(&front, None, &back, &FusionParams::default()).unwrap();
        assert_eq!(stats.displaced, 0);
    }

    #[test]
    fn pushed_depth_cascades_past_every_blocker() {
        assert_eq!(pushed_depth(10.5, &[10.0, 12.0, 13.9], 2.0), 15.9);
        assert_eq!(pushed_depth(20.0, &[10.0], 2.0), 20.0);
    }

    #[test]
    fn spike_is_removed() {
        let mut m = plane(frame(), 10.0);
        m.set(40, 20.0, &toward());
        let out = remove_outliers(&m, 4.0);
        assert!(!out.is_defined(40));
        assert_eq!(out.defined_count(), RES * RES - 1);
    }

    #[test]
    fn smooth_plane_keeps_everything() {
        let mut m = MapSet::empty(frame());
        for i in 0..RES * RES {
            let (c, r) = m.coords(i);
            m.set(i, 10.0 + 0.5 * c as f64 + 0.25 * r as f64, &toward());
        }
        assert_eq!(remove_outliers(&m, 4.0), m);
    }

    #[test]
    fn one_close_neighbor_is_enough() {
        let mut m = plane(frame(), 10.0);
        // pixel 40 = (8, 2); neighbors 39, 41, 24, 56
        m.set(40, 16.0, &toward());
        m.set(41, 13.0, &toward());
        let out = remove_outliers(&m, 4.0);
        assert!(out.is_defined(40));
    }

    #[test]
    fn isolated_pixel_is_removed() {
        let mut m = MapSet::empty(frame());
        m.set(40, 10.0, &toward());
        assert_eq!(remove_outliers(&m, 4.0).defined_count(), 0);
    }

    #[test]
    fn boundary_pixel_uses_existing_neighbors() {
        let mut m = MapSet::empty(frame());
        m.set(0, 10.0, &toward());
        m.set(1, 11.0, &toward());
        assert_eq!(remove_outliers(&m, 4.0).defined_count(), 2);
    }

    #[test]
    fn lattice_mismatch_is_shape_error() {
        let front = plane(frame(), 10.0);
        let back = plane(frame(), 10.0);
        assert!(matches!(
            fuse(&front, None, &back, &FusionParams::default()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn output_is_sorted_by_source_then_pixel() {
        let front = plane(frame(), 10.0);
        let refl = {
            let mut m = MapSet::empty(frame());
            for i in 0..RES * RES {
                m.set(i, 15.0, &Vec3::new(0.0, 0.0, -1.0));
            }
            m
        };
        let back = back_at(&(0..RES * RES).map(|i| (i, 20.0)).collect::<Vec<_>>());
        let cloud = fuse(&front, Some(&refl), &back, &FusionParams::default()).unwrap();
        let keys: Vec<(SourceTag, u32)> = cloud
            .points
            .iter()
            .map(|p| (p.tag, p.pixel.unwrap()))
            .collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        assert_eq!(cloud.len(), 3 * RES * RES);
    }
}
