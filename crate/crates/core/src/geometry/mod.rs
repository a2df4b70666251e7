//! Triangle meshes, bounding geometry, area-uniform sampling and
//! two-sided visibility estimation.

mod bvh;
mod io;
mod kdtree;

pub use bvh::{closest_point_on_triangle, Bvh, ClosestHit};
pub use io::{load_mesh, parse_obj, parse_off, save_obj, write_obj};
pub use kdtree::KdTree;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ortho::ViewFrame;

pub type Vec3 = Vector3<f64>;

/// Triangles whose area does not exceed this are dropped at load time.
pub const DEGENERATE_AREA: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    pub normals: Option<Vec<Vec3>>,
}

impl TriangleMesh {
    /// Builds a mesh, validating indices and dropping zero-area triangles.
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        let n = vertices.len();
        if let Some(bad) = triangles.iter().flatten().find(|&&i| i as usize >= n) {
            return Err(Error::Shape(format!(
                "triangle index {bad} out of range for {n} vertices"
            )));
        }
        let mut mesh = TriangleMesh {
            vertices,
            triangles,
            normals: None,
        };
        mesh.drop_degenerate();
        Ok(mesh)
    }

    /// Attaches per-vertex normals, normalizing each one.
    pub fn with_vertex_normals(mut self, normals: Vec<Vec3>) -> Result<Self> {
        if normals.len() != self.vertices.len() {
            return Err(Error::Shape(format!(
                "{} normals for {} vertices",
                normals.len(),
                self.vertices.len()
            )));
        }
        let normals = normals
            .into_iter()
            .map(|n| n.try_normalize(0.0).unwrap_or_else(Vec3::zeros))
            .collect();
        self.normals = Some(normals);
        Ok(self)
    }

    pub fn drop_degenerate(&mut self) -> usize {
        let before = self.triangles.len();
        let vertices = &self.vertices;
        self.triangles.retain(|t| {
            let [a, b, c] = t.map(|i| vertices[i as usize]);
            0.5 * (b - a).cross(&(c - a)).norm() > DEGENERATE_AREA
        });
        before - self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn corners(&self, face: usize) -> [Vec3; 3] {
        self.triangles[face].map(|i| self.vertices[i as usize])
    }

    pub fn face_area(&self, face: usize) -> f64 {
        let [a, b, c] = self.corners(face);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    /// Unit normal from counter-clockwise winding.
    pub fn face_normal(&self, face: usize) -> Vec3 {
        let [a, b, c] = self.corners(face);
        (b - a)
            .cross(&(c - a))
            .try_normalize(0.0)
            .unwrap_or_else(Vec3::zeros)
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.triangles.len()).map(|f| self.face_area(f)).sum()
    }

    pub fn bounding_box(&self) -> Option<BoundingBox> {
        BoundingBox::from_points(self.vertices.iter())
    }

    pub fn transformed(&self, xf: &Similarity) -> TriangleMesh {
        let flip = xf.scale < 0.0;
        TriangleMesh {
            vertices: self.vertices.iter().map(|v| xf.apply(v)).collect(),
            triangles: self.triangles.clone(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| ns.iter().map(|n| if flip { -n } else { *n }).collect()),
        }
    }

    pub fn translated(&self, offset: &Vec3) -> TriangleMesh {
        self.transformed(&Similarity {
            scale: 1.0,
            translation: *offset,
        })
    }

    /// Same surface with every triangle wound the other way.
    pub fn with_flipped_winding(&self) -> TriangleMesh {
        TriangleMesh {
            vertices: self.vertices.clone(),
            triangles: self.triangles.iter().map(|&[a, b, c]| [a, c, b]).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| ns.iter().map(|n| -n).collect()),
        }
    }

    /// Concatenates meshes without welding.
    pub fn merged<'a>(parts: impl IntoIterator<Item = &'a TriangleMesh>) -> TriangleMesh {
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for part in parts {
            let base = vertices.len() as u32;
            vertices.extend_from_slice(&part.vertices);
            triangles.extend(part.triangles.iter().map(|t| t.map(|i| i + base)));
        }
        TriangleMesh {
            vertices,
            triangles,
            normals: None,
        }
    }

    /// Euler characteristic V - E + F over referenced vertices.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.vertices.len()];
        let mut edges = std::collections::HashSet::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                used[a as usize] = true;
                edges.insert((a.min(b), a.max(b)));
            }
        }
        let v = used.iter().filter(|&&u| u).count() as i64;
        v - edges.len() as i64 + self.triangles.len() as i64
    }

    /// True when every undirected edge is shared by exactly two triangles.
    pub fn is_watertight(&self) -> bool {
        let mut counts = std::collections::HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *counts.entry((a.min(b), a.max(b))).or_insert(0usize) += 1;
            }
        }
        !counts.is_empty() && counts.values().all(|&c| c == 2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub min: Vec3,
    pub max: Vec3,
}

impl BoundingBox {
    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        let (min, max) = it.fold((first, first), |(lo, hi), p| (lo.inf(p), hi.sup(p)));
        Some(BoundingBox { min, max })
    }

    pub fn center(&self) -> Vec3 {
        0.5 * (self.min + self.max)
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }
}

/// Uniform scale followed by translation: `p -> scale * p + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub translation: Vec3,
}

impl Similarity {
    pub fn identity() -> Self {
        Similarity {
            scale: 1.0,
            translation: Vec3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.scale * p + self.translation
    }

    pub fn inverse(&self) -> Similarity {
        Similarity {
            scale: 1.0 / self.scale,
            translation: -self.translation / self.scale,
        }
    }
}

/// Centers the mesh at its bounding-box center and scales it to unit
/// bounding-box diagonal.
pub fn normalize_mesh(mesh: &TriangleMesh) -> Result<(TriangleMesh, Similarity)> {
    let bbox = mesh
        .bounding_box()
        .ok_or_else(|| Error::EmptyInput("mesh has no vertices".into()))?;
    let diag = bbox.diagonal();
    if !(diag > 0.0) || !diag.is_finite() {
        return Err(Error::DegenerateGeometry(format!(
            "bounding-box diagonal is {diag}"
        )));
    }
    let scale = 1.0 / diag;
    let xf = Similarity {
        scale,
        translation: -scale * bbox.center(),
    };
    Ok((mesh.transformed(&xf), xf))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceSample {
    pub position: Vec3,
    pub normal: Vec3,
    pub face: usize,
}

/// Cumulative-area table for area-proportional face selection.
struct AreaTable {
    cumulative: Vec<f64>,
}

impl AreaTable {
    fn new(mesh: &TriangleMesh) -> Self {
        let mut acc = 0.0;
        let cumulative = (0..mesh.triangles.len())
            .map(|f| {
                acc += mesh.face_area(f);
                acc
            })
            .collect();
        AreaTable { cumulative }
    }

    fn total(&self) -> f64 {
        *self.cumulative.last().unwrap_or(&0.0)
    }

    fn pick(&self, u: f64) -> usize {
        let target = u * self.total();
        self.cumulative
            .partition_point(|&c| c <= target)
            .min(self.cumulative.len() - 1)
    }
}

/// Draws `n` area-uniform samples. Deterministic for a given seed.
pub fn sample_surface(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<Vec<SurfaceSample>> {
    if mesh.is_empty() {
        return Err(Error::EmptyInput("cannot sample an empty mesh".into()));
    }
    let table = AreaTable::new(mesh);
    if !(table.total() > 0.0) {
        return Err(Error::DegenerateGeometry(
            "mesh has zero surface area".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|_| {
            let face = table.pick(rng.gen::<f64>());
            let (r1, r2): (f64, f64) = (rng.gen(), rng.gen());
            let s = r1.sqrt();
            let (wa, wb, wc) = (1.0 - s, s * (1.0 - r2), s * r2);
            let [a, b, c] = mesh.corners(face);
            let position = wa * a + wb * b + wc * c;
            let normal = match &mesh.normals {
                Some(ns) => {
                    let [ia, ib, ic] = mesh.triangles[face].map(|i| i as usize);
                    (wa * ns[ia] + wb * ns[ib] + wc * ns[ic])
                        .try_normalize(0.0)
                        .unwrap_or_else(|| mesh.face_normal(face))
                }
                None => mesh.face_normal(face),
            };
            SurfaceSample {
                position,
                normal,
                face,
            }
        })
        .collect();
    Ok(samples)
}

/// Area-weighted fraction of the surface that is un-occluded from the view
/// or from its opposite, estimated with `n` samples and ray casting.
pub fn visible_fraction(mesh: &TriangleMesh, view: &ViewFrame, n: usize, seed: u64) -> Result<f64> {
    let samples = sample_surface(mesh, n, seed)?;
    let bvh = Bvh::build(mesh);
    let toward_viewer = -view.direction;
    let eps = 1e-9
        * mesh
            .bounding_box()
            .map_or(1.0, |b| b.diagonal().max(1e-300));
    let visible = samples
        .iter()
        .filter(|s| {
            !bvh.occluded(mesh, &s.position, &toward_viewer, s.face, eps)
                || !bvh.occluded(mesh, &s.position, &-toward_viewer, s.face, eps)
        })
        .count();
    Ok(visible as f64 / samples.len().max(1) as f64)
}
