use rayon::prelude::*;

use super::{ReconGrid, ReconParams, Stencil};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::ortho::OrientedPointCloud;

/// Symmetric red-black sweep pairs on the coarsest level.
const COARSE_SWEEPS: usize = 20;
const DOT_CHUNK: usize = 1 << 14;

#[derive(Debug, Clone, PartialEq)]
pub struct SolveStats {
    /// CG iterations of the screened solve (unscreened when α = 0).
    pub iterations: usize,
    pub residual: f64,
    /// Relative residual after each iteration, starting with the initial one.
    pub history: Vec<f64>,
    /// Iterations of the unscreened pass that fixes the screening target.
    pub warmup_iterations: usize,
    pub screening_target: f64,
}

struct Screening<'a> {
    stencils: &'a [Stencil],
    weight: f64,
}

/// `scale · L + diag(extra)` on a grid of `n` cells, plus sample
/// screening on the finest level. L is the 7-point Laplacian with zero
/// Dirichlet values on boundary nodes.
struct Level<'a> {
    n: usize,
    scale: f64,
    extra: Option<Vec<f64>>,
    screening: Option<Screening<'a>>,
    /// Relaxation diagonal; bounds the operator's absolute row sums.
    relax_diag: Vec<f64>,
}

impl Level<'_> {
    fn m(&self) -> usize {
        self.n + 1
    }

    fn len(&self) -> usize {
        self.m().pow(3)
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let m = self.m();
        let plane = m * m;
        let scale = self.scale;
        let extra = self.extra.as_deref();
        y.par_chunks_mut(plane).enumerate().for_each(|(k, out)| {
            if k == 0 || k == m - 1 {
                out.fill(0.0);
                return;
            }
            for j in 0..m {
                for i in 0..m {
                    let local = i + m * j;
                    if i == 0 || j == 0 || i == m - 1 || j == m - 1 {
                        out[local] = 0.0;
                        continue;
                    }
                    let g = local + plane * k;
                    let nb =
                        x[g - 1] + x[g + 1] + x[g - m] + x[g + m] + x[g - plane] + x[g + plane];
                    out[local] = scale * (6.0 * x[g] - nb) + extra.map_or(0.0, |e| e[g] * x[g]);
                }
            }
        });
        if let Some(s) = &self.screening {
            for st in s.stencils {
                let v: f64 = st.iter().map(|&(i, w)| w * x[i]).sum();
                for &(i, w) in st {
                    y[i] += s.weight * w * v;
                }
            }
            zero_boundary(self.n, y);
        }
    }

    /// Sample couplings `S x`, zero without screening.
    fn screen(&self, x: &[f64], y: &mut [f64]) {
        y.fill(0.0);
        if let Some(s) = &self.screening {
            for st in s.stencils {
                let v: f64 = st.iter().map(|&(i, w)| w * x[i]).sum();
                for &(i, w) in st {
                    y[i] += s.weight * w * v;
                }
            }
        }
    }

    /// One red-black half sweep: `e += D⁻¹ (r − A e)` on nodes of `color`.
    /// Sample couplings are taken from the state before the sweep.
    fn relax(&self, color: usize, r: &[f64], e: &mut [f64], work: &mut Work) {
        let screened = self.screening.is_some();
        if screened {
            self.screen(e, &mut work.screen);
        }
        let m = self.m();
        let plane = m * m;
        let diag = &self.relax_diag;
        let extra = self.extra.as_deref();
        let scale = self.scale;
        let screen = &work.screen;
        let x: &[f64] = e;
        let rows = |k: usize, j: usize| (1 + (j + k + color) % 2..m - 1).step_by(2);
        work.delta
            .par_chunks_mut(plane)
            .enumerate()
            .for_each(|(k, out)| {
                if k == 0 || k == m - 1 {
                    return;
                }
                for j in 1..m - 1 {
                    for i in rows(k, j) {
                        let g = i + m * j + plane * k;
                        let nb =
                            x[g - 1] + x[g + 1] + x[g - m] + x[g + m] + x[g - plane] + x[g + plane];
                        let mut ae = scale * (6.0 * x[g] - nb) + extra.map_or(0.0, |d| d[g] * x[g]);
                        if screened {
                            ae += screen[g];
                        }
                        out[i + m * j] = (r[g] - ae) / diag[g];
                    }
                }
            });
        let delta = &work.delta;
        e.par_chunks_mut(plane).enumerate().for_each(|(k, ek)| {
            if k == 0 || k == m - 1 {
                return;
            }
            for j in 1..m - 1 {
                for i in rows(k, j) {
                    ek[i + m * j] += delta[i + m * j + plane * k];
                }
            }
        });
    }
}

/// Scratch buffers for relaxation on one level.
struct Work {
    screen: Vec<f64>,
    delta: Vec<f64>,
}

impl Work {
    fn new(len: usize) -> Self {
        Work {
            screen: vec![0.0; len],
            delta: vec![0.0; len],
        }
    }
}

fn zero_boundary(n: usize, y: &mut [f64]) {
    let m = n + 1;
    for k in 0..m {
        for j in 0..m {
            for i in 0..m {
                if i == 0 || j == 0 || k == 0 || i == n || j == n || k == n {
                    y[i + m * (j + m * k)] = 0.0;
                }
            }
        }
    }
}

/// Transpose of trilinear prolongation from `n / 2` cells to `n` cells.
fn restrict(n: usize, fine: &[f64]) -> Vec<f64> {
    let m = n + 1;
    let nc = n / 2;
    let mc = nc + 1;
    let mut coarse = vec![0.0; mc * mc * mc];
    coarse
        .par_chunks_mut(mc * mc)
        .enumerate()
        .for_each(|(kc, out)| {
            if kc == 0 || kc == nc {
                return;
            }
            for jc in 1..nc {
                for ic in 1..nc {
                    let mut acc = 0.0;
                    for dk in -1i64..=1 {
                        for dj in -1i64..=1 {
                            for di in -1i64..=1 {
                                let w = 0.5f64
                                    .powi((di != 0) as i32 + (dj != 0) as i32 + (dk != 0) as i32);
                                let (i, j, k) = (
                                    (2 * ic) as i64 + di,
                                    (2 * jc) as i64 + dj,
                                    (2 * kc) as i64 + dk,
                                );
                                acc += w * fine[i as usize + m * (j as usize + m * k as usize)];
                            }
                        }
                    }
                    out[ic + mc * jc] = acc;
                }
            }
        });
    coarse
}

/// Adds the trilinear prolongation of `coarse` (`n / 2` cells) to `fine`.
fn prolong_add(n: usize, coarse: &[f64], fine: &mut [f64]) {
    let m = n + 1;
    let mc = n / 2 + 1;
    let axis = |f: usize| -> [(usize, f64); 2] {
        if f.is_multiple_of(2) {
            [(f / 2, 1.0), (f / 2, 0.0)]
        } else {
            [(f / 2, 0.5), (f / 2 + 1, 0.5)]
        }
    };
    fine.par_chunks_mut(m * m).enumerate().for_each(|(k, out)| {
        if k == 0 || k == n {
            return;
        }
        for j in 1..n {
            for i in 1..n {
                let mut acc = 0.0;
                for (kc, wk) in axis(k) {
                    for (jc, wj) in axis(j) {
                        for (ic, wi) in axis(i) {
                            let w = wk * wj * wi;
                            if w != 0.0 {
                                acc += w * coarse[ic + mc * (jc + mc * kc)];
                            }
                        }
                    }
                }
                out[i + m * j] += acc;
            }
        }
    });
}

struct Multigrid<'a> {
    levels: Vec<Level<'a>>,
}

impl<'a> Multigrid<'a> {
    fn new(n: usize, screening: Option<Screening<'a>>) -> Self {
        let mut row_sum = vec![0.0; (n + 1).pow(3)];
        if let Some(s) = &screening {
            for st in s.stencils {
                for &(i, w) in st {
                    row_sum[i] += s.weight * w;
                }
            }
            zero_boundary(n, &mut row_sum);
        }
        let relax_diag = row_sum.iter().map(|r| 6.0 + r).collect();
        let mut levels = vec![Level {
            n,
            scale: 1.0,
            extra: None,
            screening,
            relax_diag,
        }];
        // coarse operators: rescaled Laplacian plus the lumped screening term
        let mut lumped = row_sum;
        let mut cur = n;
        let mut scale = 1.0;
        while cur.is_multiple_of(2) && cur > 4 {
            lumped = restrict(cur, &lumped);
            cur /= 2;
            scale *= 2.0;
            let relax_diag = lumped.iter().map(|e| 6.0 * scale + e).collect();
            levels.push(Level {
                n: cur,
                scale,
                extra: Some(lumped.clone()),
                screening: None,
                relax_diag,
            });
        }
        Multigrid { levels }
    }

    fn fine(&self) -> &Level<'a> {
        &self.levels[0]
    }

    /// Symmetric V-cycle approximating `A⁻¹ r` on level `l`.
    fn vcycle(&self, l: usize, r: &[f64]) -> Vec<f64> {
        let level = &self.levels[l];
        let mut e = vec![0.0; level.len()];
        let mut work = Work::new(level.len());
        if l + 1 == self.levels.len() {
            for _ in 0..COARSE_SWEEPS {
                level.relax(0, r, &mut e, &mut work);
                level.relax(1, r, &mut e, &mut work);
            }
            for _ in 0..COARSE_SWEEPS {
                level.relax(1, r, &mut e, &mut work);
                level.relax(0, r, &mut e, &mut work);
            }
            return e;
        }
        level.relax(0, r, &mut e, &mut work);
        level.relax(1, r, &mut e, &mut work);
        level.apply(&e, &mut work.delta);
        let residual: Vec<f64> = r.par_iter().zip(&work.delta).map(|(a, b)| a - b).collect();
        let correction = self.vcycle(l + 1, &restrict(level.n, &residual));
        prolong_add(level.n, &correction, &mut e);
        level.relax(1, r, &mut e, &mut work);
        level.relax(0, r, &mut e, &mut work);
        e
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let partial: Vec<f64> = a
        .par_chunks(DOT_CHUNK)
        .zip(b.par_chunks(DOT_CHUNK))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>())
        .collect();
    partial.iter().sum()
}

struct CgOutcome {
    iterations: usize,
    residual: f64,
    history: Vec<f64>,
}

/// Preconditioned CG from the initial guess in `x`.
fn pcg(
    mg: &Multigrid,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iterations: usize,
) -> Result<CgOutcome> {
    let op = mg.fine();
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        x.fill(0.0);
        return Ok(CgOutcome {
            iterations: 0,
            residual: 0.0,
            history: vec![0.0],
        });
    }
    let mut q = vec![0.0; b.len()];
    op.apply(x, &mut q);
    let mut r: Vec<f64> = b.iter().zip(&q).map(|(b, q)| b - q).collect();
    let mut rel = dot(&r, &r).sqrt() / b_norm;
    let mut history = vec![rel];
    let mut z = mg.vcycle(0, &r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut iterations = 0;
    while rel > tol {
        if iterations == max_iterations {
            return Err(Error::Solver {
                iterations,
                residual: rel,
            });
        }
        iterations += 1;
        op.apply(&p, &mut q);
        let alpha = rz / dot(&p, &q);
        x.par_iter_mut().zip(&p).for_each(|(x, p)| *x += alpha * p);
        r.par_iter_mut().zip(&q).for_each(|(r, q)| *r -= alpha * q);
        rel = dot(&r, &r).sqrt() / b_norm;
        history.push(rel);
        if rel <= tol {
            break;
        }
        z = mg.vcycle(0, &r);
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        p.par_iter_mut()
            .zip(&z)
            .for_each(|(p, z)| *p = z + beta * *p);
    }
    Ok(CgOutcome {
        iterations,
        residual: rel,
        history,
    })
}

/// Central-difference divergence of the splatted field, zero on the
/// boundary.
fn divergence(grid: &ReconGrid) -> Vec<f64> {
    let n = grid.resolution;
    let m = n + 1;
    let smoothed = blur(n, &grid.field);
    let f = &smoothed;
    let mut out = vec![0.0; m * m * m];
    out.par_chunks_mut(m * m).enumerate().for_each(|(k, slab)| {
        if k == 0 || k == n {
            return;
        }
        for j in 1..n {
            for i in 1..n {
                let g = i + m * (j + m * k);
                slab[i + m * j] = 0.5
                    * ((f[g + 1].x - f[g - 1].x)
                        + (f[g + m].y - f[g - m].y)
                        + (f[g + m * m].z - f[g - m * m].z));
            }
        }
    });
    out
}

/// Separable [1 2 1] / 4 smoothing of a node field, treating values beyond
/// the domain as zero.
fn blur(n: usize, field: &[Vec3]) -> Vec<Vec3> {
    let m = n + 1;
    let mut cur = field.to_vec();
    for stride in [1, m, m * m] {
        let src = cur.clone();
        cur.par_iter_mut().enumerate().for_each(|(g, out)| {
            let along = (g / stride) % m;
            let mut acc = 2.0 * src[g];
            if along > 0 {
                acc += src[g - stride];
            }
            if along < n {
                acc += src[g + stride];
            }
            *out = 0.25 * acc;
        });
    }
    cur
}

/// Solves for an indicator whose gradient matches the negated splatted
/// field, so it rises toward the inside, with zero Dirichlet boundary.
///
/// A first, unscreened solve gives the iso value the samples sit at; the
/// screened solve then pulls the indicator at every sample toward it with
/// weight `screening · area / samples`, area in square cells.
pub fn solve_indicator(
    grid: &ReconGrid,
    cloud: &OrientedPointCloud,
    params: &ReconParams,
) -> Result<ReconGrid> {
    if cloud.is_empty() {
        return Err(Error::EmptyInput("point cloud is empty".into()));
    }
    let stencils = grid.stencils(cloud)?;
    let density = grid.sample_density(&stencils);
    let n = grid.resolution;
    let mut b = divergence(grid);

    let mut chi = vec![0.0; b.len()];
    let plain = Multigrid::new(n, None);
    let warm = pcg(
        &plain,
        &b,
        &mut chi,
        params.tolerance,
        params.max_iterations,
    )?;
    let target = super::extract::weighted_mean(&chi, &stencils, &density);

    let outcome = if params.screening > 0.0 {
        let area: f64 = density.iter().filter(|&&d| d > 0.0).map(|d| 1.0 / d).sum();
        let weight = params.screening * area / stencils.len() as f64;
        for st in &stencils {
            for &(i, w) in st {
                b[i] += weight * target * w;
            }
        }
        zero_boundary(n, &mut b);
        let mg = Multigrid::new(
            n,
            Some(Screening {
                stencils: &stencils,
                weight,
            }),
        );
        pcg(&mg, &b, &mut chi, params.tolerance, params.max_iterations)?
    } else {
        CgOutcome {
            iterations: warm.iterations,
            residual: warm.residual,
            history: warm.history.clone(),
        }
    };
    log::debug!(
        "indicator solve: {} + {} iterations, residual {:.3e}",
        warm.iterations,
        outcome.iterations,
        outcome.residual
    );
    let mut out = grid.clone();
    out.chi = chi;
    out.solve = Some(SolveStats {
        iterations: outcome.iterations,
        residual: outcome.residual,
        history: outcome.history,
        warmup_iterations: warm.iterations,
        screening_target: target,
    });
    Ok(out)
}
