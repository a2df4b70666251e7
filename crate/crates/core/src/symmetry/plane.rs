use std::f64::consts::PI;

use crate::geometry::Vec3;

/// Reflection plane `n(phi, theta) · x = d`.
///
/// `theta` is the polar angle of the unit normal from +z and `phi` its
/// azimuth in the xy-plane. A plane and its antipodal representation
/// `(-n, -d)` are the same set; the canonical representative has `d >= 0`,
/// and for `d == 0` a normal whose first nonzero component among (z, y, x)
/// is positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymmetryPlane {
    pub phi: f64,
    pub theta: f64,
    pub d: f64,
}

pub(crate) fn unit_from_angles(phi: f64, theta: f64) -> Vec3 {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    Vec3::new(st * cp, st * sp, ct)
}

fn upper_hemisphere(n: &Vec3) -> bool {
    if n.z != 0.0 {
        n.z > 0.0
    } else if n.y != 0.0 {
        n.y > 0.0
    } else {
        n.x >= 0.0
    }
}

impl SymmetryPlane {
    /// Canonical plane through the unit direction of `normal` at offset `d`.
    /// Returns `None` for a zero normal.
    pub fn from_normal_offset(normal: &Vec3, d: f64) -> Option<Self> {
        let n = normal.try_normalize(0.0)?;
        let flip = d < 0.0 || (d == 0.0 && !upper_hemisphere(&n));
        let (n, d) = if flip { (-n, -d) } else { (n, d) };
        Some(SymmetryPlane {
            phi: n.y.atan2(n.x),
            theta: n.z.clamp(-1.0, 1.0).acos(),
            d,
        })
    }

    /// Raw parameters without canonicalization.
    pub fn from_angles(phi: f64, theta: f64, d: f64) -> Self {
        SymmetryPlane { phi, theta, d }
    }

    pub fn canonical(&self) -> Self {
        Self::from_normal_offset(&self.normal(), self.d).unwrap_or(*self)
    }

    pub fn normal(&self) -> Vec3 {
        unit_from_angles(self.phi, self.theta)
    }

    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.normal().dot(p) - self.d
    }

    pub fn reflect_point(&self, p: &Vec3) -> Vec3 {
        let n = self.normal();
        p - 2.0 * (n.dot(p) - self.d) * n
    }

    pub fn reflect_vector(&self, v: &Vec3) -> Vec3 {
        let n = self.normal();
        v - 2.0 * n.dot(v) * n
    }

    /// Angle between the two planes' normals, ignoring orientation; in [0, π/2].
    pub fn angle_to(&self, other: &SymmetryPlane) -> f64 {
        let c = self.normal().dot(&other.normal()).abs().min(1.0);
        c.acos()
    }

    /// Offset difference after aligning `other`'s normal with this one.
    pub fn offset_error(&self, other: &SymmetryPlane) -> f64 {
        let s = self.normal().dot(&other.normal()).signum();
        (self.d - s * other.d).abs()
    }
}

/// Weighted distance between planes: angular term scaled by `1/π`, offset
/// term scaled by `1/scale` (the bounding-box diagonal), minimized over the
/// two representations of the second plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneMetric {
    pub angle_weight: f64,
    pub offset_weight: f64,
}

impl PlaneMetric {
    pub fn new(scale: f64) -> Self {
        PlaneMetric {
            angle_weight: 1.0 / PI,
            offset_weight: 1.0 / scale.max(f64::MIN_POSITIVE),
        }
    }

    /// Distance between `(na, da)` and `(nb, db)` given unit normals, plus
    /// the sign (+1/-1) of the representation of `b` that attains it.
    pub(crate) fn between(&self, na: &Vec3, da: f64, nb: &Vec3, db: f64) -> (f64, f64) {
        let c = na.dot(nb).clamp(-1.0, 1.0);
        let angle_same = c.acos();
        let angle_flip = PI - angle_same;
        let same =
            (self.angle_weight * angle_same).powi(2) + (self.offset_weight * (da - db)).powi(2);
        let flip =
            (self.angle_weight * angle_flip).powi(2) + (self.offset_weight * (da + db)).powi(2);
        if same <= flip {
            (same.sqrt(), 1.0)
        } else {
            (flip.sqrt(), -1.0)
        }
    }

    pub fn distance(&self, a: &SymmetryPlane, b: &SymmetryPlane) -> f64 {
        self.between(&a.normal(), a.d, &b.normal(), b.d).0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn canonical_flips_negative_offset() {
        let p = SymmetryPlane::from_normal_offset(&Vec3::new(0.0, -1.0, 0.0), -2.0).unwrap();
        assert!((p.normal() - Vec3::y()).norm() < 1e-15);
        assert_eq!(p.d, 2.0);
    }

    #[test]
    fn zero_offset_uses_hemisphere() {
        let a = SymmetryPlane::from_normal_offset(&-Vec3::x(), 0.0).unwrap();
        let b = SymmetryPlane::from_normal_offset(&Vec3::x(), 0.0).unwrap();
        assert_eq!(a, b);
        assert!((a.normal() - Vec3::x()).norm() < 1e-15);
    }

    #[test]
    fn metric_identifies_antipodes() {
        let m = PlaneMetric::new(1.0);
        let a = SymmetryPlane::from_angles(0.0, PI / 2.0, 0.01);
        let b = SymmetryPlane::from_angles(PI, PI / 2.0, -0.01);
        assert!(m.distance(&a, &b) < 1e-12);
        let c = SymmetryPlane::from_angles(0.0, PI / 2.0, 0.11);
        assert!((m.distance(&a, &c) - 0.1).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn reflection_is_involution(
            phi in -PI..PI, theta in 0.0..PI, d in -2.0..2.0f64,
            x in -3.0..3.0f64, y in -3.0..3.0f64, z in -3.0..3.0f64,
        ) {
            let s = SymmetryPlane::from_angles(phi, theta, d);
            let p = Vec3::new(x, y, z);
            let back = s.reflect_point(&s.reflect_point(&p));
            prop_assert!((back - p).norm() < 1e-12);
            let v = s.reflect_vector(&s.reflect_vector(&p));
            prop_assert!((v - p).norm() < 1e-12);
        }

        #[test]
        fn canonical_form_is_stable(
            phi in -PI..PI, theta in 0.0..PI, d in -2.0..2.0f64,
        ) {
            let s = SymmetryPlane::from_angles(phi, theta, d);
            let c = s.canonical();
            prop_assert!(c.d >= 0.0);
            // same point set
            let p = s.normal() * s.d;
            prop_assert!(c.signed_distance(&p).abs() < 1e-12);
            prop_assert!(PlaneMetric::new(1.0).distance(&s, &c) < 1e-7);
        }
    }
}
