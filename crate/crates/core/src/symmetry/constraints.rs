use super::plane::SymmetryPlane;
use crate::geometry::Vec3;
use crate::ortho::{distance_to_mask, to_oriented_points, MapSet, OrientedPointCloud, SourceTag};

const POLISH_RANGE_PX: i64 = 5;
const POLISH_STEPS_PER_PX: i64 = 8;
/// Allowed growth of the mean squared penalty, in square pixels.
const POLISH_SLACK: f64 = 0.01;

/// Outcome of a fractional constraint test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintCheck {
    pub violation: f64,
    pub pass: bool,
}

/// Front maps with the data reused across many plane checks.
pub(crate) struct FrontContext<'a> {
    pub maps: &'a MapSet,
    pub cloud: OrientedPointCloud,
    outside: Vec<f64>,
}

impl<'a> FrontContext<'a> {
    pub fn new(maps: &'a MapSet) -> Self {
        FrontContext {
            maps,
            cloud: to_oriented_points(maps, SourceTag::Front),
            outside: distance_to_mask(&maps.silhouette, maps.resolution()),
        }
    }

    /// Pixel distance from continuous image coordinates to the silhouette.
    fn outside_distance(&self, col: f64, row: f64) -> f64 {
        let res = self.maps.resolution();
        let max = (res - 1) as f64;
        let (cc, rc) = (col.clamp(0.0, max), row.clamp(0.0, max));
        let (c, r) = (cc.round() as usize, rc.round() as usize);
        let off = ((col - cc).powi(2) + (row - rc).powi(2)).sqrt();
        self.outside[r * res + c] + off
    }

    pub fn visual_hull(
        &self,
        plane: &SymmetryPlane,
        px_slack: f64,
        frac_limit: f64,
    ) -> ConstraintCheck {
        let frame = &self.maps.frame;
        let bad = self
            .cloud
            .points
            .iter()
            .filter(|p| {
                let (c, r, _) = frame.project(&plane.reflect_point(&p.position));
                self.outside_distance(c, r) >= px_slack
            })
            .count();
        check(bad, self.cloud.len(), frac_limit)
    }

    /// True when `q` projects onto the silhouette more than one pixel size
    /// behind the observed depth.
    pub fn occluded(&self, q: &Vec3) -> bool {
        let frame = &self.maps.frame;
        let (c, r, z) = frame.project(q);
        match frame.pixel_of(c, r) {
            Some((c, r)) => {
                let idx = self.maps.index(c, r);
                self.maps.is_defined(idx) && z > self.maps.depth[idx] as f64 + frame.pixel_size()
            }
            None => false,
        }
    }

    /// Bilinearly interpolated outside distance in pixels.
    fn outside_smooth(&self, col: f64, row: f64) -> f64 {
        let res = self.maps.resolution();
        let max = (res - 1) as f64;
        let (cc, rc) = (col.clamp(0.0, max), row.clamp(0.0, max));
        let off = ((col - cc).powi(2) + (row - rc).powi(2)).sqrt();
        let (c0, r0) = (cc.floor().min(max - 1.0), rc.floor().min(max - 1.0));
        let (fx, fy) = (cc - c0, rc - r0);
        let (c0, r0) = (c0 as usize, r0 as usize);
        let at = |c: usize, r: usize| self.outside[r * res + c];
        let top = at(c0, r0) * (1.0 - fx) + at(c0 + 1, r0) * fx;
        let bottom = at(c0, r0 + 1) * (1.0 - fx) + at(c0 + 1, r0 + 1) * fx;
        top * (1.0 - fy) + bottom * fy + off
    }

    /// Sum over reflected points of squared pixel distances by which they
    /// leave the silhouette or float in front of the observed surface.
    pub fn consistency_penalty(&self, plane: &SymmetryPlane) -> f64 {
        let frame = &self.maps.frame;
        let ps = frame.pixel_size();
        self.cloud
            .points
            .iter()
            .map(|p| {
                let (c, r, z) = frame.project(&plane.reflect_point(&p.position));
                let outside = (self.outside_smooth(c, r) - 0.5).max(0.0);
                let front = match frame.pixel_of(c, r) {
                    Some((c, r)) => {
                        let idx = self.maps.index(c, r);
                        if self.maps.is_defined(idx) {
                            ((self.maps.depth[idx] as f64 - z) / ps - 1.0).max(0.0)
                        } else {
                            0.0
                        }
                    }
                    None => 0.0,
                };
                outside * outside + front * front
            })
            .sum()
    }

    /// Slides the plane along its normal to the middle of the offsets with
    /// near-minimal [`consistency_penalty`], within `POLISH_RANGE_PX` pixels.
    pub fn polish_offset(&self, plane: &SymmetryPlane) -> SymmetryPlane {
        let step = self.maps.frame.pixel_size() / POLISH_STEPS_PER_PX as f64;
        let k_max = POLISH_RANGE_PX * POLISH_STEPS_PER_PX;
        let at =
            |k: i64| SymmetryPlane::from_angles(plane.phi, plane.theta, plane.d + k as f64 * step);
        let penalties: Vec<f64> = (-k_max..=k_max)
            .map(|k| self.consistency_penalty(&at(k)))
            .collect();
        let (best, &min) = penalties
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
            .expect("non-empty search range");
        let limit = min + POLISH_SLACK * self.cloud.len() as f64;
        let mut lo = best;
        while lo > 0 && penalties[lo - 1] <= limit {
            lo -= 1;
        }
        let mut hi = best;
        while hi + 1 < penalties.len() && penalties[hi + 1] <= limit {
            hi += 1;
        }
        let mid = (lo + hi) as f64 / 2.0 - k_max as f64;
        SymmetryPlane::from_angles(plane.phi, plane.theta, plane.d + mid * step).canonical()
    }

    pub fn visibility(&self, plane: &SymmetryPlane, frac_limit: f64) -> ConstraintCheck {
        let frame = &self.maps.frame;
        let ps = frame.pixel_size();
        let bad = self
            .cloud
            .points
            .iter()
            .filter(|p| {
                let (c, r, z) = frame.project(&plane.reflect_point(&p.position));
                match frame.pixel_of(c, r) {
                    Some((c, r)) => {
                        let idx = self.maps.index(c, r);
                        self.maps.is_defined(idx) && z < self.maps.depth[idx] as f64 - ps
                    }
                    None => false,
                }
            })
            .count();
        check(bad, self.cloud.len(), frac_limit)
    }
}

fn check(bad: usize, total: usize, frac_limit: f64) -> ConstraintCheck {
    let violation = if total == 0 {
        0.0
    } else {
        bad as f64 / total as f64
    };
    ConstraintCheck {
        violation,
        pass: violation <= frac_limit,
    }
}

/// Fraction of reflected front points that land at least `px_slack` pixels
/// outside the silhouette.
pub fn check_visual_hull(
    plane: &SymmetryPlane,
    maps: &MapSet,
    px_slack: f64,
    frac_limit: f64,
) -> ConstraintCheck {
    FrontContext::new(maps).visual_hull(plane, px_slack, frac_limit)
}

/// Fraction of reflected front points that land on the silhouette more than
/// one pixel size in front of the observed depth.
pub fn check_visibility(plane: &SymmetryPlane, maps: &MapSet, frac_limit: f64) -> ConstraintCheck {
    FrontContext::new(maps).visibility(plane, frac_limit)
}
