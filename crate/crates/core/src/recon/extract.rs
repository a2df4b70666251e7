use std::collections::HashMap;

use super::{ReconGrid, Stencil};
use crate::error::{Error, Result};
use crate::geometry::{TriangleMesh, Vec3};
use crate::ortho::OrientedPointCloud;

/// Edge crossings are kept this far from the edge ends so no triangle
/// collapses to zero area.
const EDGE_CLAMP: f64 = 1e-3;

/// Kuhn decomposition of the unit cube: tetrahedron `p` walks from corner 0
/// to corner 7 adding the axes of permutation `p` one at a time. Corners
/// are bit masks (bit 0 = x, bit 1 = y, bit 2 = z).
const TETS: [[usize; 4]; 6] = [
    [0, 1, 3, 7],
    [0, 1, 5, 7],
    [0, 2, 3, 7],
    [0, 2, 6, 7],
    [0, 4, 5, 7],
    [0, 4, 6, 7],
];

pub(crate) fn weighted_mean(values: &[f64], stencils: &[Stencil], weights: &[f64]) -> f64 {
    let (mut acc, mut total) = (0.0, 0.0);
    for (st, &w) in stencils.iter().zip(weights) {
        let v: f64 = st.iter().map(|&(i, s)| s * values[i]).sum();
        acc += w * v;
        total += w;
    }
    if total > 0.0 {
        acc / total
    } else {
        let n = stencils.len().max(1) as f64;
        stencils
            .iter()
            .map(|st| st.iter().map(|&(i, s)| s * values[i]).sum::<f64>())
            .sum::<f64>()
            / n
    }
}

/// Density-weighted mean of the indicator at the sample positions.
pub fn iso_level(grid: &ReconGrid, cloud: &OrientedPointCloud) -> Result<f64> {
    if cloud.is_empty() {
        return Err(Error::EmptyInput("point cloud is empty".into()));
    }
    let stencils = grid.stencils(cloud)?;
    let density = grid.sample_density(&stencils);
    Ok(weighted_mean(&grid.chi, &stencils, &density))
}

fn corner(c: usize) -> [usize; 3] {
    [c & 1, (c >> 1) & 1, (c >> 2) & 1]
}

/// Extracts the iso-surface at [`iso_level`] by marching tetrahedra.
/// Triangles are wound so their normals point toward decreasing indicator,
/// i.e. outward. The surface is closed whenever it does not reach the
/// domain boundary.
pub fn extract_mesh(grid: &ReconGrid, cloud: &OrientedPointCloud) -> Result<TriangleMesh> {
    let iso = iso_level(grid, cloud)?;
    let (lo, hi) = grid
        .chi
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &c| {
            (lo.min(c), hi.max(c))
        });
    if !(iso > lo && iso < hi) {
        return Err(Error::EmptySurface(format!(
            "iso level {iso:e} outside indicator range [{lo:e}, {hi:e}]"
        )));
    }
    let mut builder = Builder {
        grid,
        iso,
        vertices: Vec::new(),
        lookup: HashMap::new(),
        triangles: Vec::new(),
    };
    let n = grid.resolution;
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                builder.cube([i, j, k]);
            }
        }
    }
    if builder.triangles.is_empty() {
        return Err(Error::EmptySurface("no cell crosses the iso level".into()));
    }
    Ok(TriangleMesh {
        vertices: builder.vertices,
        triangles: builder.triangles,
        normals: None,
    })
}

struct Builder<'a> {
    grid: &'a ReconGrid,
    iso: f64,
    vertices: Vec<Vec3>,
    lookup: HashMap<(usize, usize), u32>,
    triangles: Vec<[u32; 3]>,
}

impl Builder<'_> {
    fn cube(&mut self, base: [usize; 3]) {
        let nodes: [usize; 8] = std::array::from_fn(|c| {
            let o = corner(c);
            self.grid
                .node_index(base[0] + o[0], base[1] + o[1], base[2] + o[2])
        });
        let inside: [bool; 8] = std::array::from_fn(|c| self.grid.chi[nodes[c]] > self.iso);
        if inside.iter().all(|&s| s) || inside.iter().all(|&s| !s) {
            return;
        }
        for tet in TETS {
            self.tet(&nodes, &inside, tet);
        }
    }

    fn vertex(&mut self, a: usize, b: usize) -> u32 {
        let key = (a.min(b), a.max(b));
        if let Some(&v) = self.lookup.get(&key) {
            return v;
        }
        let (va, vb) = (self.grid.chi[a], self.grid.chi[b]);
        let t = ((self.iso - va) / (vb - va)).clamp(EDGE_CLAMP, 1.0 - EDGE_CLAMP);
        let pa = self.position(a);
        let pb = self.position(b);
        let id = self.vertices.len() as u32;
        self.vertices.push(pa + t * (pb - pa));
        self.lookup.insert(key, id);
        id
    }

    fn position(&self, node: usize) -> Vec3 {
        let m = self.grid.nodes_per_side();
        self.grid
            .node_position(node % m, (node / m) % m, node / (m * m))
    }

    fn tet(&mut self, nodes: &[usize; 8], inside: &[bool; 8], tet: [usize; 4]) {
        let ins: Vec<usize> = tet.iter().copied().filter(|&c| inside[c]).collect();
        let outs: Vec<usize> = tet.iter().copied().filter(|&c| !inside[c]).collect();
        let lattice = |c: usize| {
            let o = corner(c);
            Vec3::new(o[0] as f64, o[1] as f64, o[2] as f64)
        };
        let mid = |a: usize, b: usize| 0.5 * (lattice(a) + lattice(b));
        // polygon as corner-pair edges, in cyclic order
        let polygon: Vec<(usize, usize)> = match (ins.len(), outs.len()) {
            (1, 3) => outs.iter().map(|&o| (ins[0], o)).collect(),
            (3, 1) => ins.iter().map(|&i| (i, outs[0])).collect(),
            (2, 2) => vec![
                (ins[0], outs[0]),
                (ins[0], outs[1]),
                (ins[1], outs[1]),
                (ins[1], outs[0]),
            ],
            _ => return,
        };
        // winding from the midpoint polygon, which has the same orientation
        // as the true one for any crossing parameters in (0, 1)
        let (p0, p1, p2) = (
            mid(polygon[0].0, polygon[0].1),
            mid(polygon[1].0, polygon[1].1),
            mid(polygon[2].0, polygon[2].1),
        );
        let normal = (p1 - p0).cross(&(p2 - p0));
        let outward = lattice(outs[0]) - lattice(ins[0]);
        let flip = normal.dot(&outward) < 0.0;
        let ids: Vec<u32> = polygon
            .iter()
            .map(|&(a, b)| self.vertex(nodes[a], nodes[b]))
            .collect();
        let mut emit = |a: u32, b: u32, c: u32| {
            self.triangles
                .push(if flip { [a, c, b] } else { [a, b, c] });
        };
        emit(ids[0], ids[1], ids[2]);
        if ids.len() == 4 {
            emit(ids[0], ids[2], ids[3]);
        }
    }
}
