//! Screened Poisson surface reconstruction on a regular grid.
//!
//! Normals are splatted onto grid nodes, an indicator function whose
//! gradient matches them is solved for with multigrid-preconditioned
//! conjugate gradients (zero Dirichlet boundary, screening toward the iso
//! value at the samples), and the iso-surface is extracted by marching
//! tetrahedra.

mod extract;
mod solver;

pub use extract::{extract_mesh, iso_level};
pub use solver::{solve_indicator, SolveStats};

use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, TriangleMesh, Vec3};
use crate::ortho::OrientedPointCloud;

pub const DEFAULT_GRID_RESOLUTION: usize = 128;
pub const MIN_GRID_RESOLUTION: usize = 32;
/// Fraction of the cloud's largest extent added on every side.
pub const DOMAIN_MARGIN: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconParams {
    pub grid_resolution: usize,
    /// Screening (interpolation) weight.
    pub screening: f64,
    /// Relative residual at which CG stops.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for ReconParams {
    fn default() -> Self {
        ReconParams {
            grid_resolution: DEFAULT_GRID_RESOLUTION,
            screening: 4.0,
            tolerance: 1e-7,
            max_iterations: 2000,
        }
    }
}

impl ReconParams {
    pub fn validate(&self) -> Result<()> {
        if self.grid_resolution < MIN_GRID_RESOLUTION {
            return Err(Error::Config(format!(
                "grid resolution {} is below {MIN_GRID_RESOLUTION}",
                self.grid_resolution
            )));
        }
        if !(self.screening >= 0.0 && self.screening.is_finite()) {
            return Err(Error::Config(format!(
                "screening weight {} must be >= 0",
                self.screening
            )));
        }
        if !(self.tolerance > 0.0 && self.tolerance <= 1e-3) {
            return Err(Error::Config(format!(
                "solver tolerance {} outside (0, 1e-3]",
                self.tolerance
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max iterations must be positive".into()));
        }
        Ok(())
    }
}

/// Node-centered fields over a cube of `resolution` cells per side.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconGrid {
    pub resolution: usize,
    pub origin: Vec3,
    pub cell: f64,
    /// Splatted normal field.
    pub field: Vec<Vec3>,
    /// Splat weights (sample density per node).
    pub weight: Vec<f64>,
    /// Indicator values; zero on the boundary.
    pub chi: Vec<f64>,
    pub solve: Option<SolveStats>,
}

/// Trilinear stencil: eight `(node, weight)` pairs.
pub(crate) type Stencil = [(usize, f64); 8];

impl ReconGrid {
    pub fn new(origin: Vec3, cell: f64, resolution: usize) -> Result<Self> {
        if resolution < MIN_GRID_RESOLUTION {
            return Err(Error::Config(format!(
                "grid resolution {resolution} is below {MIN_GRID_RESOLUTION}"
            )));
        }
        if !(cell > 0.0 && cell.is_finite()) {
            return Err(Error::DegenerateGeometry(format!("grid cell size {cell}")));
        }
        let n = (resolution + 1).pow(3);
        Ok(ReconGrid {
            resolution,
            origin,
            cell,
            field: vec![Vec3::zeros(); n],
            weight: vec![0.0; n],
            chi: vec![0.0; n],
            solve: None,
        })
    }

    /// Cube centered on the cloud's bounding box, padded by
    /// [`DOMAIN_MARGIN`] of the largest extent on every side.
    pub fn fit(cloud: &OrientedPointCloud, resolution: usize) -> Result<Self> {
        let bbox = BoundingBox::from_points(cloud.points.iter().map(|p| &p.position))
            .ok_or_else(|| Error::EmptyInput("point cloud is empty".into()))?;
        let extent = bbox.extent().max();
        if !(extent > 0.0 && extent.is_finite()) {
            return Err(Error::DegenerateGeometry(
                "point cloud has zero extent".into(),
            ));
        }
        let side = extent * (1.0 + 2.0 * DOMAIN_MARGIN);
        let origin = bbox.center() - Vec3::repeat(side / 2.0);
        ReconGrid::new(origin, side / resolution as f64, resolution)
    }

    pub fn nodes_per_side(&self) -> usize {
        self.resolution + 1
    }

    pub fn node_index(&self, i: usize, j: usize, k: usize) -> usize {
        let m = self.nodes_per_side();
        i + m * (j + m * k)
    }

    pub fn node_position(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin + self.cell * Vec3::new(i as f64, j as f64, k as f64)
    }

    pub fn side(&self) -> f64 {
        self.cell * self.resolution as f64
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        let u = (p - self.origin) / self.cell;
        let n = self.resolution as f64;
        u.iter().all(|&c| (0.0..=n).contains(&c))
    }

    pub(crate) fn stencil(&self, p: &Vec3) -> Option<Stencil> {
        if !self.contains(p) {
            return None;
        }
        let u = (p - self.origin) / self.cell;
        let last = self.resolution - 1;
        let base: [usize; 3] = std::array::from_fn(|a| (u[a].floor() as usize).min(last));
        let frac: [f64; 3] = std::array::from_fn(|a| u[a] - base[a] as f64);
        Some(std::array::from_fn(|corner| {
            let bit = |a: usize| (corner >> a) & 1;
            let w: f64 = (0..3)
                .map(|a| if bit(a) == 1 { frac[a] } else { 1.0 - frac[a] })
                .product();
            (
                self.node_index(base[0] + bit(0), base[1] + bit(1), base[2] + bit(2)),
                w,
            )
        }))
    }

    /// Trilinear interpolation of a node field; zero outside the domain.
    pub fn interpolate(&self, values: &[f64], p: &Vec3) -> f64 {
        self.stencil(p)
            .map(|s| s.iter().map(|&(i, w)| w * values[i]).sum())
            .unwrap_or(0.0)
    }

    fn stencils(&self, cloud: &OrientedPointCloud) -> Result<Vec<Stencil>> {
        cloud
            .points
            .iter()
            .map(|p| {
                self.stencil(&p.position).ok_or_else(|| {
                    Error::Shape(format!(
                        "point {:?} lies outside the reconstruction grid",
                        p.position
                    ))
                })
            })
            .collect()
    }

    /// Splat density at each sample, in samples per cell.
    pub(crate) fn sample_density(&self, stencils: &[Stencil]) -> Vec<f64> {
        stencils
            .iter()
            .map(|s| s.iter().map(|&(i, w)| w * self.weight[i]).sum())
            .collect()
    }
}

/// Trilinearly distributes every normal to its 8 enclosing nodes. Each
/// sample is weighted by the inverse of the splat density at its position,
/// so the field measures surface area rather than sample count.
pub fn splat_normals(cloud: &OrientedPointCloud, grid: &ReconGrid) -> Result<ReconGrid> {
    if cloud.is_empty() {
        return Err(Error::EmptyInput("point cloud is empty".into()));
    }
    let mut out = grid.clone();
    out.field.iter_mut().for_each(|v| *v = Vec3::zeros());
    out.weight.iter_mut().for_each(|w| *w = 0.0);
    out.chi.iter_mut().for_each(|c| *c = 0.0);
    out.solve = None;
    let stencils = out.stencils(cloud)?;
    for s in &stencils {
        for &(i, w) in s {
            out.weight[i] += w;
        }
    }
    let density = out.sample_density(&stencils);
    for ((s, d), p) in stencils.iter().zip(&density).zip(&cloud.points) {
        let scaled = p.normal / *d;
        for &(i, w) in s {
            out.field[i] += w * scaled;
        }
    }
    Ok(out)
}

pub fn reconstruct(cloud: &OrientedPointCloud, params: &ReconParams) -> Result<TriangleMesh> {
    reconstruct_with_grid(cloud, params).map(|(mesh, _)| mesh)
}

/// Like [`reconstruct`], also returning the solved grid.
pub fn reconstruct_with_grid(
    cloud: &OrientedPointCloud,
    params: &ReconParams,
) -> Result<(TriangleMesh, ReconGrid)> {
    params.validate()?;
    let grid = ReconGrid::fit(cloud, params.grid_resolution)?;
    let grid = splat_normals(cloud, &grid)?;
    let grid = solve_indicator(&grid, cloud, params)?;
    let mesh = extract_mesh(&grid, cloud)?;
    Ok((mesh, grid))
}
