//! Mesh-to-mesh evaluation metrics.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{sample_surface, Bvh, KdTree, TriangleMesh};

pub const DEFAULT_SAMPLES: usize = 100_000;

fn check_nonempty(a: &TriangleMesh, b: &TriangleMesh) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput(
            "metric needs two non-empty meshes".into(),
        ));
    }
    Ok(())
}

fn diagonal(mesh: &TriangleMesh) -> Result<f64> {
    let d = mesh.bounding_box().map(|b| b.diagonal()).unwrap_or(0.0);
    if d > 0.0 {
        Ok(d)
    } else {
        Err(Error::DegenerateGeometry(
            "reference mesh has a zero bounding box".into(),
        ))
    }
}

fn ordered_mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Mean exact distance from `n` area-uniform samples of `from` to the
/// triangles of `to`.
pub fn one_sided_distance(
    from: &TriangleMesh,
    to: &TriangleMesh,
    n: usize,
    seed: u64,
) -> Result<f64> {
    check_nonempty(from, to)?;
    let samples = sample_surface(from, n, seed)?;
    let bvh = Bvh::build(to);
    let d: Vec<f64> = samples
        .par_iter()
        .map(|s| {
            bvh.closest_point(to, &s.position)
                .map_or(f64::INFINITY, |h| h.distance)
        })
        .collect();
    Ok(ordered_mean(&d))
}

/// Both one-sided mean distances, in the units of the meshes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshDistance {
    /// From `a` to `b`.
    pub forward: f64,
    pub backward: f64,
}

impl MeshDistance {
    pub fn mean(&self) -> f64 {
        0.5 * (self.forward + self.backward)
    }

    pub fn max(&self) -> f64 {
        self.forward.max(self.backward)
    }
}

pub fn mesh_distance(
    a: &TriangleMesh,
    b: &TriangleMesh,
    n: usize,
    seed: u64,
) -> Result<MeshDistance> {
    Ok(MeshDistance {
        forward: one_sided_distance(a, b, n, seed)?,
        backward: one_sided_distance(b, a, n, seed.wrapping_add(1))?,
    })
}

/// Symmetric mean of one-sided mean distances, in units of `b`'s
/// bounding-box diagonal. `b` is the ground truth.
pub fn mesh_distance_md(a: &TriangleMesh, b: &TriangleMesh, n: usize, seed: u64) -> Result<f64> {
    check_nonempty(a, b)?;
    let diag = diagonal(b)?;
    Ok(mesh_distance(a, b, n, seed)?.mean() / diag)
}

/// Chamfer-L1 between independent samplings drawn with their own seeds.
pub fn chamfer_l1_seeded(
    a: &TriangleMesh,
    b: &TriangleMesh,
    n: usize,
    seed_a: u64,
    seed_b: u64,
) -> Result<f64> {
    check_nonempty(a, b)?;
    let pa: Vec<_> = sample_surface(a, n, seed_a)?
        .into_iter()
        .map(|s| s.position)
        .collect();
    let pb: Vec<_> = sample_surface(b, n, seed_b)?
        .into_iter()
        .map(|s| s.position)
        .collect();
    let one_way = |from: &[crate::geometry::Vec3], to: Vec<crate::geometry::Vec3>| {
        let tree = KdTree::new(to);
        let d: Vec<f64> = from
            .par_iter()
            .map(|p| tree.nearest(p).map_or(f64::INFINITY, |(_, d2)| d2.sqrt()))
            .collect();
        ordered_mean(&d)
    };
    Ok(0.5 * (one_way(&pa, pb.clone()) + one_way(&pb, pa)))
}

/// Chamfer-L1 in the units of the meshes: half the sum of the mean
/// nearest-sample distances in both directions. Both meshes are sampled
/// with `seed`.
pub fn chamfer_l1(a: &TriangleMesh, b: &TriangleMesh, n: usize, seed: u64) -> Result<f64> {
    chamfer_l1_seeded(a, b, n, seed, seed)
}

/// Mean absolute cosine between each sample's normal and the normal of the
/// closest triangle on the other mesh, averaged over both directions.
pub fn normal_consistency(a: &TriangleMesh, b: &TriangleMesh, n: usize, seed: u64) -> Result<f64> {
    check_nonempty(a, b)?;
    let one_way = |from: &TriangleMesh, to: &TriangleMesh, seed: u64| -> Result<f64> {
        let samples = sample_surface(from, n, seed)?;
        let bvh = Bvh::build(to);
        let c: Vec<f64> = samples
            .par_iter()
            .map(|s| {
                bvh.closest_point(to, &s.position)
                    .map_or(0.0, |h| s.normal.dot(&to.face_normal(h.face)).abs())
            })
            .collect();
        Ok(ordered_mean(&c))
    };
    Ok(0.5 * (one_way(a, b, seed)? + one_way(b, a, seed.wrapping_add(1))?))
}

/// Metrics of a reconstruction against ground truth, with distances in
/// units of the ground truth's bounding-box diagonal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    /// Mean of the two one-sided distances.
    pub md: f64,
    /// Larger of the two one-sided distances.
    pub md_max: f64,
    pub md_forward: f64,
    pub md_backward: f64,
    pub cd: f64,
    pub cd_x10: f64,
    pub normal_consistency: f64,
    pub samples: usize,
    pub seed: u64,
}

impl EvalReport {
    pub const FIELDS: [&'static str; 9] = [
        "md",
        "md_max",
        "md_forward",
        "md_backward",
        "cd",
        "cd_x10",
        "normal_consistency",
        "samples",
        "seed",
    ];

    fn values(&self) -> [String; 9] {
        [
            self.md.to_string(),
            self.md_max.to_string(),
            self.md_forward.to_string(),
            self.md_backward.to_string(),
            self.cd.to_string(),
            self.cd_x10.to_string(),
            self.normal_consistency.to_string(),
            self.samples.to_string(),
            self.seed.to_string(),
        ]
    }

    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        for (k, v) in Self::FIELDS.iter().zip(self.values()) {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    pub fn csv_header() -> String {
        Self::FIELDS.join(",")
    }

    pub fn csv_row(&self) -> String {
        self.values().join(",")
    }
}

/// All metrics of `pred` against the ground truth `truth`.
pub fn evaluate(
    pred: &TriangleMesh,
    truth: &TriangleMesh,
    n: usize,
    seed: u64,
) -> Result<EvalReport> {
    check_nonempty(pred, truth)?;
    let diag = diagonal(truth)?;
    let md = mesh_distance(pred, truth, n, seed)?;
    let cd = chamfer_l1(pred, truth, n, seed)? / diag;
    Ok(EvalReport {
        md: md.mean() / diag,
        md_max: md.max() / diag,
        md_forward: md.forward / diag,
        md_backward: md.backward / diag,
        cd,
        cd_x10: 10.0 * cd,
        normal_consistency: normal_consistency(pred, truth, n, seed)?,
        samples: n,
        seed,
    })
}
