use crate::error::{Error, Result};
use crate::geometry::{TriangleMesh, Vec3};

/// Minimum supported raster side length.
pub const MIN_RESOLUTION: usize = 16;

/// Default raster size, matching the 137-pixel input images the front maps
/// are usually predicted at.
pub const DEFAULT_RESOLUTION: usize = 137;

/// Margin applied around the bounding sphere when fitting a frustum.
pub const FRUSTUM_MARGIN: f64 = 1.05;

/// Orthographic camera.
///
/// `direction` is the look direction; `right` and `up` span the image plane
/// with `right × up = −direction`. Depth is measured along `direction` from
/// the near plane, which sits at signed offset `near` from `center`.
///
/// Pixel columns advance along `right`, unless `mirrored` is set, in which
/// case they advance along `−right`. [`ViewFrame::opposite`] toggles the flag,
/// so a frame and its opposite share one pixel lattice: pixel `(i, j)` looks
/// down the same world-space column in both.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewFrame {
    pub direction: Vec3,
    pub right: Vec3,
    pub up: Vec3,
    pub center: Vec3,
    pub half_width: f64,
    pub resolution: usize,
    pub near: f64,
    pub far: f64,
    pub mirrored: bool,
}

impl ViewFrame {
    /// Builds a frame looking along `direction`, with `up_hint` projected to
    /// the image plane.
    pub fn new(
        direction: Vec3,
        up_hint: Vec3,
        center: Vec3,
        half_width: f64,
        resolution: usize,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        let d = direction
            .try_normalize(1e-12)
            .ok_or_else(|| Error::DegenerateGeometry("zero view direction".into()))?;
        let right = d.cross(&up_hint).try_normalize(1e-9).ok_or_else(|| {
            Error::DegenerateGeometry("up hint parallel to view direction".into())
        })?;
        let up = right.cross(&d);
        let frame = ViewFrame {
            direction: d,
            right,
            up,
            center,
            half_width,
            resolution,
            near,
            far,
            mirrored: false,
        };
        frame.validate()?;
        Ok(frame)
    }

    /// Frustum around the mesh bounding box: centered on it, half-width and
    /// depth extent from its bounding sphere with a 5% margin.
    pub fn fit(mesh: &TriangleMesh, direction: Vec3, resolution: usize) -> Result<Self> {
        let bbox = mesh
            .bounding_box()
            .ok_or_else(|| Error::EmptyInput("mesh has no vertices".into()))?;
        let radius = 0.5 * bbox.diagonal() * FRUSTUM_MARGIN;
        if !(radius > 0.0) {
            return Err(Error::DegenerateGeometry("zero-size bounding box".into()));
        }
        let d = direction
            .try_normalize(1e-12)
            .ok_or_else(|| Error::DegenerateGeometry("zero view direction".into()))?;
        let up_hint = if d.y.abs() < 0.99 {
            Vec3::y()
        } else {
            Vec3::z()
        };
        ViewFrame::new(
            d,
            up_hint,
            bbox.center(),
            radius,
            resolution,
            -radius,
            radius,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let tol = 1e-9;
        let unit = |v: &Vec3| (v.norm() - 1.0).abs() <= tol;
        let ok_basis = unit(&self.direction)
            && unit(&self.right)
            && unit(&self.up)
            && self.right.dot(&self.up).abs() <= tol
            && self.right.dot(&self.direction).abs() <= tol
            && self.up.dot(&self.direction).abs() <= tol
            && (self.right.cross(&self.up) + self.direction).norm() <= tol;
        if !ok_basis {
            return Err(Error::DegenerateGeometry(
                "view basis is not orthonormal right-handed".into(),
            ));
        }
        if !(self.half_width > 0.0) || !self.half_width.is_finite() {
            return Err(Error::DegenerateGeometry(format!(
                "half_width must be positive, got {}",
                self.half_width
            )));
        }
        if self.resolution < MIN_RESOLUTION {
            return Err(Error::Shape(format!(
                "resolution {} below minimum {MIN_RESOLUTION}",
                self.resolution
            )));
        }
        if !(self.far > self.near) {
            return Err(Error::DegenerateGeometry(format!(
                "empty depth range [{}, {}]",
                self.near, self.far
            )));
        }
        Ok(())
    }

    /// The view from the other side along the same line of sight.
    pub fn opposite(&self) -> ViewFrame {
        ViewFrame {
            direction: -self.direction,
            right: -self.right,
            mirrored: !self.mirrored,
            ..*self
        }
    }

    pub fn pixel_size(&self) -> f64 {
        2.0 * self.half_width / self.resolution as f64
    }

    pub fn depth_range(&self) -> f64 {
        self.far - self.near
    }

    pub fn pixel_count(&self) -> usize {
        self.resolution * self.resolution
    }

    /// World axis along which the column index grows.
    pub fn column_axis(&self) -> Vec3 {
        if self.mirrored {
            -self.right
        } else {
            self.right
        }
    }

    /// World position of pixel `(col, row)`'s center on the plane through
    /// `center` orthogonal to the view direction.
    pub fn pixel_center(&self, col: usize, row: usize) -> Vec3 {
        let ps = self.pixel_size();
        let x = (col as f64 + 0.5) * ps - self.half_width;
        let y = self.half_width - (row as f64 + 0.5) * ps;
        self.center + x * self.column_axis() + y * self.up
    }

    /// Un-projects a pixel center at the given depth.
    pub fn point_at(&self, col: usize, row: usize, depth: f64) -> Vec3 {
        self.pixel_center(col, row) + (self.near + depth) * self.direction
    }

    /// Continuous image coordinates `(col, row, depth)`; integer coordinates
    /// fall on pixel centers.
    pub fn project(&self, p: &Vec3) -> (f64, f64, f64) {
        let rel = p - self.center;
        let ps = self.pixel_size();
        let col = (rel.dot(&self.column_axis()) + self.half_width) / ps - 0.5;
        let row = (self.half_width - rel.dot(&self.up)) / ps - 0.5;
        (col, row, rel.dot(&self.direction) - self.near)
    }

    /// Depth of a world point along this frame's view direction.
    pub fn depth_of(&self, p: &Vec3) -> f64 {
        (p - self.center).dot(&self.direction) - self.near
    }

    /// Nearest pixel for continuous coordinates, if inside the raster.
    pub fn pixel_of(&self, col: f64, row: f64) -> Option<(usize, usize)> {
        let (c, r) = (col.round(), row.round());
        let n = self.resolution as f64;
        if c >= 0.0 && r >= 0.0 && c < n && r < n {
            Some((c as usize, r as usize))
        } else {
            None
        }
    }

    /// World vector to view coordinates: x along `right`, y along `up`,
    /// z toward the viewer.
    pub fn to_view(&self, n: &Vec3) -> Vec3 {
        Vec3::new(n.dot(&self.right), n.dot(&self.up), -n.dot(&self.direction))
    }

    pub fn from_view(&self, n: &Vec3) -> Vec3 {
        n.x * self.right + n.y * self.up - n.z * self.direction
    }

    /// Same pixel lattice and depth axis, up to `tol` on every field.
    pub fn approx_eq(&self, other: &ViewFrame, tol: f64) -> bool {
        self.resolution == other.resolution
            && self.mirrored == other.mirrored
            && (self.direction - other.direction).norm() <= tol
            && (self.right - other.right).norm() <= tol
            && (self.up - other.up).norm() <= tol
            && (self.center - other.center).norm() <= tol
            && (self.half_width - other.half_width).abs() <= tol
            && (self.near - other.near).abs() <= tol
            && (self.far - other.far).abs() <= tol
    }
}
