//! Global reflective symmetry: plane voting, mean-shift clustering,
//! visual-hull and visibility filtering, ICP refinement and map reflection.

mod cluster;
mod constraints;
mod icp;
mod plane;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use cluster::{cluster_planes, PlaneCluster};
pub use constraints::{check_visibility, check_visual_hull, ConstraintCheck};
pub use icp::{
    icp_gradient, icp_objective, refine_plane_icp, refine_plane_icp_masked, refine_point_to_plane,
    IcpParams, IcpResult, Occlusion,
};
pub use plane::{PlaneMetric, SymmetryPlane};

use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, Vec3};
use crate::ortho::{MapSet, OrientedPoint, OrientedPointCloud};
use constraints::FrontContext;

/// Largest angle between a reflected normal and its partner for a pair to vote.
pub const PAIR_NORMAL_LIMIT_DEG: f64 = 60.0;

/// A candidate plane and the number of sampled pairs that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneVote {
    pub plane: SymmetryPlane,
    pub weight: u32,
}

/// Plane that maps `a` onto `b`, if their normals agree under the reflection
/// to within 60°.
pub fn pair_plane(a: &OrientedPoint, b: &OrientedPoint) -> Option<SymmetryPlane> {
    let diff = b.position - a.position;
    let len = diff.norm();
    if len == 0.0 || !len.is_finite() {
        return None;
    }
    let n = diff / len;
    let d = n.dot(&((a.position + b.position) * 0.5));
    let reflected = a.normal - 2.0 * a.normal.dot(&n) * n;
    let cos = reflected.dot(&b.normal) / (reflected.norm() * b.normal.norm());
    if !(cos >= PAIR_NORMAL_LIMIT_DEG.to_radians().cos()) {
        return None;
    }
    SymmetryPlane::from_normal_offset(&n, d)
}

/// Votes from `n_pairs` random point pairs. Repeated unordered pairs are
/// merged into one vote whose weight counts the repetitions.
pub fn collect_votes(cloud: &OrientedPointCloud, n_pairs: usize, seed: u64) -> Vec<PlaneVote> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    collect_votes_with(cloud, n_pairs, &mut rng)
}

fn collect_votes_with(
    cloud: &OrientedPointCloud,
    n_pairs: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<PlaneVote> {
    let n = cloud.len();
    if n < 2 {
        return Vec::new();
    }
    let mut pairs: BTreeMap<(usize, usize), u32> = BTreeMap::new();
    for _ in 0..n_pairs {
        let i = rng.gen_range(0..n);
        let mut j = rng.gen_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        *pairs.entry((i.min(j), i.max(j))).or_insert(0) += 1;
    }
    pairs
        .into_iter()
        .filter_map(|((i, j), weight)| {
            pair_plane(&cloud.points[i], &cloud.points[j]).map(|plane| PlaneVote { plane, weight })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymmetryConfig {
    pub rounds: usize,
    pub pairs_per_round: usize,
    /// Mean-shift radius in plane-metric units.
    pub bandwidth: f64,
    pub hull_px: f64,
    pub hull_frac: f64,
    pub visibility_frac: f64,
    /// Multiplier turning the tight thresholds into the candidate pre-filter.
    pub loose_factor: f64,
    pub min_coverage: f64,
    pub icp_iterations: usize,
    pub icp_distance_px: f64,
    pub icp_normal_deg: f64,
    /// Distinct loose-check survivors refined and tested, best score first.
    pub max_candidates: usize,
    /// Re-center the refined offset between silhouette and free-space
    /// violations.
    pub offset_polish: bool,
    pub seed: u64,
}

impl Default for SymmetryConfig {
    fn default() -> Self {
        SymmetryConfig {
            rounds: 20,
            pairs_per_round: 8000,
            bandwidth: 0.15,
            hull_px: 5.0,
            hull_frac: 0.05,
            visibility_frac: 0.15,
            loose_factor: 2.0,
            min_coverage: 0.40,
            icp_iterations: 400,
            icp_distance_px: 4.0,
            icp_normal_deg: 60.0,
            max_candidates: 4,
            offset_polish: true,
            seed: 0,
        }
    }
}

impl SymmetryConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("symmetry {what}")));
        if self.rounds == 0 || self.pairs_per_round == 0 {
            return bad("rounds and pairs_per_round must be positive");
        }
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return bad("bandwidth must be positive");
        }
        if !(self.hull_px >= 0.0 && self.hull_px.is_finite()) {
            return bad("hull_px must be non-negative");
        }
        for (name, v) in [
            ("hull_frac", self.hull_frac),
            ("visibility_frac", self.visibility_frac),
            ("min_coverage", self.min_coverage),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(&format!("{name} {v} outside [0, 1]"));
            }
        }
        if !(self.loose_factor >= 1.0 && self.loose_factor.is_finite()) {
            return bad("loose_factor must be at least 1");
        }
        if self.icp_iterations == 0 || self.max_candidates == 0 {
            return bad("icp_iterations and max_candidates must be positive");
        }
        if !(self.icp_distance_px > 0.0 && self.icp_distance_px.is_finite()) {
            return bad("icp_distance_px must be positive");
        }
        if !(self.icp_normal_deg > 0.0 && self.icp_normal_deg <= 180.0) {
            return bad("icp_normal_deg outside (0, 180]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymmetryVerdict {
    /// Present exactly when the input is classified as symmetric.
    pub plane: Option<SymmetryPlane>,
    /// Refined plane that was tested, even when rejected.
    pub candidate: Option<SymmetryPlane>,
    pub coverage: f64,
    pub hull_violation: f64,
    pub visibility_violation: f64,
    pub icp_iterations: usize,
    /// Whether the ICP objective never increased across accepted steps.
    pub icp_monotone: bool,
    pub votes: usize,
    pub reason: String,
}

impl SymmetryVerdict {
    pub fn is_symmetric(&self) -> bool {
        self.plane.is_some()
    }

    pub fn asymmetric(reason: &str) -> Self {
        SymmetryVerdict {
            plane: None,
            candidate: None,
            coverage: 0.0,
            hull_violation: 0.0,
            visibility_violation: 0.0,
            icp_iterations: 0,
            icp_monotone: true,
            votes: 0,
            reason: reason.to_string(),
        }
    }
}

/// Cluster centers pooled over all voting rounds, best score first, and the
/// total number of votes cast.
fn pooled_centers(
    cloud: &OrientedPointCloud,
    config: &SymmetryConfig,
    metric: &PlaneMetric,
) -> (usize, Vec<PlaneCluster>) {
    let rounds: Vec<(usize, Vec<PlaneCluster>)> = (0..config.rounds)
        .into_par_iter()
        .map(|round| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(round as u64);
            let votes = collect_votes_with(cloud, config.pairs_per_round, &mut rng);
            (
                votes.len(),
                cluster_planes(&votes, config.bandwidth, metric),
            )
        })
        .collect();
    let votes = rounds.iter().map(|r| r.0).sum();
    let mut pool: Vec<(usize, usize, PlaneCluster)> = rounds
        .into_iter()
        .enumerate()
        .flat_map(|(r, (_, cs))| cs.into_iter().enumerate().map(move |(k, c)| (r, k, c)))
        .collect();
    pool.sort_by(|a, b| {
        b.2.score
            .cmp(&a.2.score)
            .then(a.0.cmp(&b.0))
            .then(a.1.cmp(&b.1))
    });
    (votes, pool.into_iter().map(|c| c.2).collect())
}

/// Pooled cluster centers for `maps` with their loose-check results, in
/// selection order. Useful for diagnostics.
pub fn candidate_planes(
    maps: &MapSet,
    config: &SymmetryConfig,
) -> Vec<(PlaneCluster, ConstraintCheck, ConstraintCheck)> {
    let ctx = FrontContext::new(maps);
    if ctx.cloud.len() < 3 {
        return Vec::new();
    }
    let metric = PlaneMetric::new(cloud_scale(&ctx.cloud));
    let loose_px = config.hull_px * config.loose_factor;
    let loose_hull = (config.hull_frac * config.loose_factor).min(1.0);
    let loose_vis = (config.visibility_frac * config.loose_factor).min(1.0);
    pooled_centers(&ctx.cloud, config, &metric)
        .1
        .into_iter()
        .map(|c| {
            let h = ctx.visual_hull(&c.center, loose_px, loose_hull);
            let v = ctx.visibility(&c.center, loose_vis);
            (c, h, v)
        })
        .collect()
}

fn cloud_scale(cloud: &OrientedPointCloud) -> f64 {
    BoundingBox::from_points(&cloud.positions())
        .map(|b| b.diagonal())
        .filter(|d| *d > 0.0)
        .unwrap_or(1.0)
}

/// Full detection on masked front maps.
pub fn detect_symmetry(maps: &MapSet, config: &SymmetryConfig) -> SymmetryVerdict {
    let ctx = FrontContext::new(maps);
    if ctx.cloud.len() < 3 {
        return SymmetryVerdict::asymmetric("no defined pixels");
    }
    let metric = PlaneMetric::new(cloud_scale(&ctx.cloud));

    let (votes, pool) = pooled_centers(&ctx.cloud, config, &metric);

    let loose_px = config.hull_px * config.loose_factor;
    let loose_hull = (config.hull_frac * config.loose_factor).min(1.0);
    let loose_vis = (config.visibility_frac * config.loose_factor).min(1.0);
    let ps = maps.frame.pixel_size();
    let icp = IcpParams {
        max_iterations: config.icp_iterations,
        max_distance: config.icp_distance_px * ps,
        max_normal_angle: config.icp_normal_deg.to_radians(),
        tolerance: 1e-6,
    };

    let mut tried: Vec<SymmetryPlane> = Vec::new();
    let mut first: Option<SymmetryVerdict> = None;
    for c in &pool {
        if tried.len() >= config.max_candidates {
            break;
        }
        let p = c.center;
        if tried
            .iter()
            .any(|t| metric.distance(t, &p) < config.bandwidth / 2.0)
        {
            continue;
        }
        if !(ctx.visual_hull(&p, loose_px, loose_hull).pass && ctx.visibility(&p, loose_vis).pass) {
            continue;
        }
        tried.push(p);
        let verdict = evaluate_candidate(&ctx, &p, &icp, config, votes);
        if verdict.is_symmetric() {
            return verdict;
        }
        first.get_or_insert(verdict);
    }
    first.unwrap_or_else(|| {
        let mut v = SymmetryVerdict::asymmetric("no candidate passed the loose checks");
        v.votes = votes;
        v
    })
}

fn evaluate_candidate(
    ctx: &FrontContext,
    initial: &SymmetryPlane,
    icp: &IcpParams,
    config: &SymmetryConfig,
    votes: usize,
) -> SymmetryVerdict {
    let occluded = |q: &Vec3| ctx.occluded(q);
    let refined = refine_plane_icp_masked(&ctx.cloud, initial, icp, &occluded);
    let mut plane = refine_point_to_plane(&ctx.cloud, &refined.plane, icp, &occluded);
    if config.offset_polish {
        plane = ctx.polish_offset(&plane);
    }
    let hull = ctx.visual_hull(&plane, config.hull_px, config.hull_frac);
    let vis = ctx.visibility(&plane, config.visibility_frac);
    let coverage = coverage(ctx.maps, &reflect_maps(ctx.maps, &plane));
    let reason = if !hull.pass {
        "visual hull violated"
    } else if !vis.pass {
        "visibility violated"
    } else if coverage < config.min_coverage {
        "insufficient coverage"
    } else {
        "symmetric"
    };
    SymmetryVerdict {
        plane: (reason == "symmetric").then_some(plane),
        candidate: Some(plane),
        coverage,
        hull_violation: hull.violation,
        visibility_violation: vis.violation,
        icp_iterations: refined.iterations,
        icp_monotone: refined
            .history
            .iter()
            .all(|t| t.windows(2).all(|w| w[1] <= w[0])),
        votes,
        reason: reason.to_string(),
    }
}

/// Reflected silhouette pixels over front silhouette pixels.
pub fn coverage(front: &MapSet, reflected: &MapSet) -> f64 {
    let total = front.defined_count();
    if total == 0 {
        return 0.0;
    }
    reflected.defined_count() as f64 / total as f64
}

/// Reflects the front points and normals across `plane` and rasterizes them
/// into the front frame. A candidate survives when it lands on the front
/// silhouette no more than one pixel size in front of the observed surface;
/// the farthest survivor wins each pixel.
pub fn reflect_maps(maps: &MapSet, plane: &SymmetryPlane) -> MapSet {
    let frame = &maps.frame;
    let ps = frame.pixel_size();
    let mut out = MapSet::empty(*frame);
    for idx in (0..maps.depth.len()).filter(|&i| maps.is_defined(i)) {
        let q = plane.reflect_point(&maps.world_point(idx));
        let (c, r, z) = frame.project(&q);
        let Some((c, r)) = frame.pixel_of(c, r) else {
            continue;
        };
        let target = maps.index(c, r);
        if !maps.is_defined(target) || z < maps.depth[target] as f64 - ps {
            continue;
        }
        if out.is_defined(target) && out.depth[target] as f64 >= z {
            continue;
        }
        let n = plane.reflect_vector(&maps.world_normal(idx));
        out.set(target, z, &frame.to_view(&n));
    }
    out
}

/// Key=value record of a verdict. Floats round-trip exactly.
pub fn write_plane_record(v: &SymmetryVerdict) -> String {
    let mut s = String::new();
    let verdict = if v.is_symmetric() {
        "symmetric"
    } else {
        "asymmetric"
    };
    let _ = writeln!(s, "verdict={verdict}");
    if let Some(p) = v.plane.or(v.candidate) {
        let key = if v.is_symmetric() { "" } else { "candidate_" };
        let n = p.normal();
        let _ = writeln!(
            s,
            "{key}phi={}\n{key}theta={}\n{key}d={}",
            p.phi, p.theta, p.d
        );
        let _ = writeln!(s, "{key}normal={},{},{}", n.x, n.y, n.z);
    }
    let _ = writeln!(s, "coverage={}", v.coverage);
    let _ = writeln!(s, "hull_violation={}", v.hull_violation);
    let _ = writeln!(s, "visibility_violation={}", v.visibility_violation);
    let _ = writeln!(s, "icp_iterations={}", v.icp_iterations);
    let _ = writeln!(s, "votes={}", v.votes);
    let _ = writeln!(s, "reason={}", v.reason);
    s
}

pub fn read_plane_record(text: &str) -> Result<SymmetryVerdict> {
    let mut kv = BTreeMap::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(k + 1, "expected key=value"))?;
        kv.insert(key.trim().to_string(), value.trim().to_string());
    }
    fn num<T: std::str::FromStr>(kv: &BTreeMap<String, String>, key: &str) -> Result<Option<T>> {
        kv.get(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::Format(format!("invalid {key} '{v}'")))
            })
            .transpose()
    }
    let plane_at = |prefix: &str| -> Result<Option<SymmetryPlane>> {
        let phi = num::<f64>(&kv, &format!("{prefix}phi"))?;
        let theta = num::<f64>(&kv, &format!("{prefix}theta"))?;
        let d = num::<f64>(&kv, &format!("{prefix}d"))?;
        Ok(match (phi, theta, d) {
            (Some(phi), Some(theta), Some(d)) => Some(SymmetryPlane::from_angles(phi, theta, d)),
            (None, None, None) => None,
            _ => return Err(Error::Format(format!("incomplete {prefix}plane"))),
        })
    };
    let symmetric = match kv.get("verdict").map(String::as_str) {
        Some("symmetric") => true,
        Some("asymmetric") => false,
        other => return Err(Error::Format(format!("invalid verdict {other:?}"))),
    };
    let plane = plane_at("")?;
    if symmetric && plane.is_none() {
        return Err(Error::Format("symmetric verdict without a plane".into()));
    }
    Ok(SymmetryVerdict {
        plane: if symmetric { plane } else { None },
        candidate: if symmetric {
            plane
        } else {
            plane_at("candidate_")?
        },
        coverage: num(&kv, "coverage")?.unwrap_or(0.0),
        hull_violation: num(&kv, "hull_violation")?.unwrap_or(0.0),
        visibility_violation: num(&kv, "visibility_violation")?.unwrap_or(0.0),
        icp_iterations: num(&kv, "icp_iterations")?.unwrap_or(0),
        icp_monotone: true,
        votes: num(&kv, "votes")?.unwrap_or(0),
        reason: kv.get("reason").cloned().unwrap_or_default(),
    })
}

/// Plane from a comma-separated `nx,ny,nz,d` string.
pub fn parse_plane(text: &str) -> Result<SymmetryPlane> {
    let v: Vec<f64> = text
        .split(',')
        .map(|t| t.trim().parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("invalid plane '{text}'")))?;
    if v.len() != 4 {
        return Err(Error::Config(format!("plane needs nx,ny,nz,d: '{text}'")));
    }
    SymmetryPlane::from_normal_offset(&Vec3::new(v[0], v[1], v[2]), v[3])
        .ok_or_else(|| Error::Config(format!("zero plane normal in '{text}'")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ortho::SourceTag;

    fn op(p: Vec3, n: Vec3) -> OrientedPoint {
        OrientedPoint {
            position: p,
            normal: n,
            tag: SourceTag::Front,
            pixel: None,
        }
    }

    #[test]
    fn pair_plane_examples() {
        let a = op(Vec3::new(1.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0));
        let b = op(Vec3::new(-1.0, 0.0, 0.0), Vec3::new(-1.0, 0.0, 0.0));
        let p = pair_plane(&a, &b).unwrap();
        assert!(p.normal().cross(&Vec3::x()).norm() < 1e-15);
        assert_eq!(p.d, 0.0);

        let a = op(Vec3::new(0.0, 1.0, 2.0), Vec3::new(0.0, -1.0, 0.0));
        let b = op(Vec3::new(0.0, 3.0, 2.0), Vec3::new(0.0, 1.0, 0.0));
        let p = pair_plane(&a, &b).unwrap();
        assert!((p.normal() - Vec3::y()).norm() < 1e-15);
        assert!((p.d - 2.0).abs() < 1e-15);

        let bad = op(Vec3::new(0.0, 3.0, 2.0), Vec3::new(0.0, -1.0, 0.0));
        assert!(pair_plane(&a, &bad).is_none());
        assert!(pair_plane(&a, &a).is_none());
    }

    #[test]
    fn pair_plane_is_order_independent() {
        let a = op(
            Vec3::new(0.3, -0.2, 0.9),
            Vec3::new(0.2, 0.5, 0.1).normalize(),
        );
        let b = op(
            Vec3::new(-0.4, 0.1, 0.7),
            Vec3::new(-0.3, 0.5, 0.0).normalize(),
        );
        assert_eq!(pair_plane(&a, &b), pair_plane(&b, &a));
    }

    #[test]
    fn two_points_give_one_vote() {
        let cloud = OrientedPointCloud {
            points: vec![op(Vec3::x(), Vec3::x()), op(-Vec3::x(), -Vec3::x())],
        };
        let votes = collect_votes(&cloud, 100, 4);
        assert_eq!(votes.len(), 1);
        assert_eq!(votes[0].weight, 100);
    }

    #[test]
    fn record_round_trip() {
        let v = SymmetryVerdict {
            plane: Some(SymmetryPlane::from_angles(0.1, 1.2, 0.03)),
            candidate: Some(SymmetryPlane::from_angles(0.1, 1.2, 0.03)),
            coverage: 0.61,
            hull_violation: 0.002,
            visibility_violation: 0.0,
            icp_iterations: 12,
            icp_monotone: true,
            votes: 9000,
            reason: "symmetric".into(),
        };
        assert_eq!(read_plane_record(&write_plane_record(&v)).unwrap(), v);
        let mut a = v.clone();
        a.plane = None;
        a.reason = "insufficient coverage".into();
        assert_eq!(read_plane_record(&write_plane_record(&a)).unwrap(), a);
    }

    #[test]
    fn parses_plane_string() {
        let p = parse_plane("-2, 0, 0, -0.5").unwrap();
        assert!((p.normal() - Vec3::x()).norm() < 1e-15);
        assert_eq!(p.d, 0.5);
        assert!(parse_plane("1,0,0").is_err());
    }
}
