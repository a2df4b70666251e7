use super::plane::{PlaneMetric, SymmetryPlane};
use super::PlaneVote;
use crate::geometry::Vec3;

const MAX_SHIFTS: usize = 100;
const CONVERGED: f64 = 5e-2;

/// A cluster center and the total weight of votes in its Voronoi cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneCluster {
    pub center: SymmetryPlane,
    pub score: u64,
}

struct Embedded {
    n: Vec3,
    d: f64,
    w: f64,
}

/// Mean-shift over plane votes with an Epanechnikov kernel of radius
/// `bandwidth` under `metric`.
///
/// The Epanechnikov profile's shadow is the flat kernel, so each shift
/// moves to the weighted mean of the votes inside the bandwidth. Seeds are
/// a greedy cover of the votes at radius `bandwidth`. Modes closer than
/// `bandwidth / 2` are merged, keeping the one of higher kernel density.
/// Scores partition the vote weight by nearest center, so they always sum
/// to the total weight. Output is sorted by descending score.
pub fn cluster_planes(
    votes: &[PlaneVote],
    bandwidth: f64,
    metric: &PlaneMetric,
) -> Vec<PlaneCluster> {
    if votes.is_empty() || bandwidth <= 0.0 {
        return Vec::new();
    }
    let data: Vec<Embedded> = votes
        .iter()
        .map(|v| Embedded {
            n: v.plane.normal(),
            d: v.plane.d,
            w: v.weight as f64,
        })
        .collect();
    let mut data = data;
    data.sort_by(|a, b| a.d.abs().total_cmp(&b.d.abs()));

    let mut seeds: Vec<(Vec3, f64)> = Vec::new();
    for e in &data {
        if seeds.iter().all(|(n, d)| {
            lower_bound_sq(metric, n, *d, &e.n, e.d) >= bandwidth * bandwidth
                || metric.between(n, *d, &e.n, e.d).0 >= bandwidth
        }) {
            seeds.push((e.n, e.d));
        }
    }

    use rayon::prelude::*;
    let modes: Vec<(Vec3, f64, f64)> = seeds
        .par_iter()
        .map(|&(n0, d0)| shift_to_mode(&data, n0, d0, bandwidth, metric))
        .collect();

    let mut order: Vec<usize> = (0..modes.len()).collect();
    order.sort_by(|&a, &b| modes[b].2.total_cmp(&modes[a].2).then(a.cmp(&b)));
    let mut centers: Vec<(Vec3, f64)> = Vec::new();
    for k in order {
        let (n, d, density) = modes[k];
        if density <= 0.0 {
            continue;
        }
        if centers
            .iter()
            .all(|(cn, cd)| metric.between(cn, *cd, &n, d).0 >= bandwidth / 2.0)
        {
            centers.push((n, d));
        }
    }

    let mut scores = vec![0u64; centers.len()];
    for e in &data {
        let mut best: Option<(usize, f64)> = None;
        for (k, (n, d)) in centers.iter().enumerate() {
            if let Some((_, b)) = best {
                if lower_bound_sq(metric, n, *d, &e.n, e.d) >= b * b {
                    continue;
                }
            }
            let dist = metric.between(n, *d, &e.n, e.d).0;
            if best.is_none_or(|(_, b)| dist < b) {
                best = Some((k, dist));
            }
        }
        if let Some((k, _)) = best {
            scores[k] += e.w as u64;
        }
    }

    let mut out: Vec<PlaneCluster> = centers
        .iter()
        .zip(scores)
        .filter_map(|((n, d), score)| {
            SymmetryPlane::from_normal_offset(n, *d).map(|center| PlaneCluster { center, score })
        })
        .collect();
    out.sort_by(|a, b| b.score.cmp(&a.score));
    out
}

/// Squared lower bound on the metric distance. The chord between unit
/// normals never exceeds their angle, so this needs no `acos`.
fn lower_bound_sq(metric: &PlaneMetric, na: &Vec3, da: f64, nb: &Vec3, db: f64) -> f64 {
    let c = na.dot(nb);
    let (aw2, ow2) = (metric.angle_weight.powi(2), metric.offset_weight.powi(2));
    let same = aw2 * (2.0 - 2.0 * c) + ow2 * (da - db).powi(2);
    let flip = aw2 * (2.0 + 2.0 * c) + ow2 * (da + db).powi(2);
    same.min(flip)
}

/// Metric distance to `e` and the aligning sign, or `None` when `e` lies
/// outside radius `h`. The chord between unit normals bounds their angle
/// from below, which rejects most votes without an `acos`.
fn near(metric: &PlaneMetric, n: &Vec3, d: f64, e: &Embedded, h: f64) -> Option<(f64, f64)> {
    if lower_bound_sq(metric, n, d, &e.n, e.d) >= h * h {
        return None;
    }
    let (dist, sign) = metric.between(n, d, &e.n, e.d);
    (dist < h).then_some((dist, sign))
}

/// Votes whose offset magnitude can be within `h` of `|d|`; `data` is sorted
/// by `|d|`.
fn window<'a>(data: &'a [Embedded], d: f64, h: f64, metric: &PlaneMetric) -> &'a [Embedded] {
    let r = h / metric.offset_weight;
    let lo = data.partition_point(|e| e.d.abs() < d.abs() - r);
    let hi = data.partition_point(|e| e.d.abs() <= d.abs() + r);
    &data[lo..hi]
}

fn shift_to_mode(
    data: &[Embedded],
    mut n: Vec3,
    mut d: f64,
    h: f64,
    metric: &PlaneMetric,
) -> (Vec3, f64, f64) {
    // Votes within 2h of the anchor include every vote within h of any
    // point within h of the anchor, so the list is rebuilt only after the
    // mode drifts that far.
    let gather = |n: &Vec3, d: f64| -> Vec<&Embedded> {
        window(data, d, 2.0 * h, metric)
            .iter()
            .filter(|e| lower_bound_sq(metric, n, d, &e.n, e.d) < 4.0 * h * h)
            .collect()
    };
    let mut anchor = (n, d);
    let mut local = gather(&n, d);
    for _ in 0..MAX_SHIFTS {
        let mut sn = Vec3::zeros();
        let mut sd = 0.0;
        let mut sw = 0.0;
        for e in &local {
            if let Some((_, sign)) = near(metric, &n, d, e, h) {
                sn += sign * e.w * e.n;
                sd += sign * e.w * e.d;
                sw += e.w;
            }
        }
        let Some(n_new) = sn.try_normalize(0.0) else {
            break;
        };
        let d_new = sd / sw;
        let moved = metric.between(&n, d, &n_new, d_new).0;
        n = n_new;
        d = d_new;
        if moved < CONVERGED * h {
            break;
        }
        if metric.between(&anchor.0, anchor.1, &n, d).0 >= h {
            anchor = (n, d);
            local = gather(&n, d);
        }
    }
    let density: f64 = local
        .iter()
        .filter_map(|e| near(metric, &n, d, e, h).map(|(dist, _)| e.w * (1.0 - (dist / h).powi(2))))
        .sum();
    (n, d, density)
}
