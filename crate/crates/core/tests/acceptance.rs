//! Acceptance criteria, run in order in one process so the wall-clock
//! budgets are measured without competing tests. Pass criterion numbers as
//! arguments to run a subset.

mod common;

use std::io::Write as _;
use std::time::{Duration, Instant};

use f2b_core::backpred::{predict_back, similarity_score, BackPredictorSpec, PredictionInput};
use f2b_core::fusion::{fuse, remove_outliers, FusionParams};
use f2b_core::geometry::{normalize_mesh, TriangleMesh, Vec3};
use f2b_core::metrics::{chamfer_l1, chamfer_l1_seeded, mesh_distance_md, normal_consistency};
use f2b_core::ortho::{
    render_back_truth, render_maps, write_cloud, write_f2bm, MapSet, SourceTag, ViewFrame,
};
use f2b_core::recon::{reconstruct, reconstruct_with_grid, ReconParams};
use f2b_core::shapes::{
    asymmetric_corpus, closed_corpus, elevated_direction, random_direction, symmetric_corpus,
    torus, uv_sphere,
};
use f2b_core::symmetry::{
    detect_symmetry, icp_gradient, icp_objective, reflect_maps, SymmetryConfig, SymmetryPlane,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{
    fusion_violation, max_radial_deviation, normalized, shifted_sphere_mean_distance, sphere_cloud,
    sphere_distance, torus_cloud,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(start: Instant, budget: Duration) -> bool {
    start.elapsed() < budget
}

fn c1_silhouettes() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = (0.0f64, String::new());
    let mut runs = 0;
    for shape in closed_corpus() {
        let (mesh, _) = normalize_mesh(&shape.mesh).unwrap();
        for _ in 0..5 {
            let frame = ViewFrame::fit(&mesh, random_direction(&mut rng), 256).unwrap();
            let front = render_maps(&mesh, &frame).unwrap();
            let back = render_back_truth(&mesh, &frame).unwrap();
            let union = front
                .silhouette
                .iter()
                .zip(&back.silhouette)
                .filter(|(a, b)| **a || **b)
                .count();
            let differ = front
                .silhouette
                .iter()
                .zip(&back.silhouette)
                .filter(|(a, b)| a != b)
                .count();
            let frac = differ as f64 / union.max(1) as f64;
            if frac >= worst.0 {
                worst = (frac, shape.name.clone());
            }
            runs += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst.0 <= 0.01 && within(start, Duration::from_secs(60)),
        format!(
            "{runs} views, worst disagreement {:.3}% of silhouette pixels ({}), {secs:.1}s",
            100.0 * worst.0,
            worst.1
        ),
    )
}

fn c2_symmetry() -> Outcome {
    let start = Instant::now();
    let config = SymmetryConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut hits, mut total, mut monotone) = (0, 0, true);
    for shape in symmetric_corpus(1) {
        let (mesh, truth) = normalized(&shape);
        let truth = truth.unwrap();
        for _ in 0..5 {
            let frame = ViewFrame::fit(&mesh, elevated_direction(&mut rng), 137).unwrap();
            let maps = render_maps(&mesh, &frame).unwrap();
            let v = detect_symmetry(&maps, &config);
            monotone &= v.icp_monotone;
            let good = v.plane.is_some_and(|p| {
                p.angle_to(&truth).to_degrees() <= 2.0
                    && p.offset_error(&truth) <= frame.pixel_size()
            });
            hits += good as usize;
            total += 1;
        }
    }
    let (mut rejected, mut negatives) = (0, 0);
    for shape in asymmetric_corpus(2) {
        let (mesh, _) = normalize_mesh(&shape.mesh).unwrap();
        for _ in 0..5 {
            let frame = ViewFrame::fit(&mesh, elevated_direction(&mut rng), 137).unwrap();
            let maps = render_maps(&mesh, &frame).unwrap();
            let v = detect_symmetry(&maps, &config);
            monotone &= v.icp_monotone;
            rejected += (!v.is_symmetric()) as usize;
            negatives += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = hits * 10 >= total * 9
        && rejected * 10 >= negatives * 9
        && monotone
        && within(start, Duration::from_secs(300));
    outcome(
        pass,
        format!(
            "symmetric {hits}/{total} within 2 deg and 1 px, asymmetric {rejected}/{negatives} rejected, \
             objective monotone on every run: {monotone}, {secs:.1}s"
        ),
    )
}

fn c3_gradient() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let plane = SymmetryPlane::from_angles(
            rng.gen_range(0.0..std::f64::consts::TAU),
            rng.gen_range(0.2..std::f64::consts::PI - 0.2),
            rng.gen_range(-0.5..0.5),
        );
        let n = rng.gen_range(10..200);
        let pairs: Vec<(Vec3, Vec3)> = (0..n)
            .map(|_| {
                let p = Vec3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                );
                let t = Vec3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                );
                (p, t)
            })
            .collect();
        let g = icp_gradient(&plane, &pairs);
        let h = 1e-6;
        let mut fd = [0.0; 3];
        for (k, slot) in fd.iter_mut().enumerate() {
            let mut a = [plane.phi, plane.theta, plane.d];
            let mut b = a;
            a[k] += h;
            b[k] -= h;
            let fa = icp_objective(&SymmetryPlane::from_angles(a[0], a[1], a[2]), &pairs);
            let fb = icp_objective(&SymmetryPlane::from_angles(b[0], b[1], b[2]), &pairs);
            *slot = (fa - fb) / (2.0 * h);
        }
        let diff = Vec3::from(fd) - Vec3::from(g);
        let rel = diff.norm() / Vec3::from(g).norm().max(1e-12);
        worst = worst.max(rel);
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-5 && within(start, Duration::from_secs(10)),
        format!("100 configurations, worst relative error {worst:.2e}, {secs:.2}s"),
    )
}

const RES: usize = 16;

fn unit_frame() -> ViewFrame {
    ViewFrame::new(
        -Vec3::z(),
        Vec3::y(),
        Vec3::zeros(),
        RES as f64 / 2.0,
        RES,
        -50.0,
        50.0,
    )
    .unwrap()
}

fn flat(frame: ViewFrame, depth: f64, normal: Vec3) -> MapSet {
    let mut m = MapSet::empty(frame);
    for i in 0..frame.pixel_count() {
        m.set(i, depth, &normal);
    }
    m
}

/// Back maps holding, at every pixel, the point at front depth `depth(i)`.
fn back_layer(depth: impl Fn(usize) -> f64) -> MapSet {
    let f = unit_frame();
    let b = f.opposite();
    let mut m = MapSet::empty(b);
    for i in 0..f.pixel_count() {
        let z = b.depth_of(&f.point_at(i % RES, i / RES, depth(i)));
        m.set(i, z, &Vec3::z());
    }
    m
}

fn depth_at(
    cloud: &f2b_core::ortho::OrientedPointCloud,
    tag: SourceTag,
    pixel: usize,
) -> Option<f64> {
    cloud
        .points
        .iter()
        .find(|p| p.tag == tag && p.pixel == Some(pixel as u32))
        .map(|p| unit_frame().depth_of(&p.position))
}

fn c4_fusion() -> Outcome {
    let start = Instant::now();
    let params = FusionParams::default();
    let f = unit_frame();
    let toward = Vec3::z();
    let mut failures = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_string());
        }
    };

    let front = flat(f, 10.0, toward);
    let cloud = fuse(&front, None, &back_layer(|_| 10.8), &params).unwrap();
    check(
        "separation",
        depth_at(&cloud, SourceTag::Back, 40) == Some(12.0),
    );

    let mut refl = flat(f, 20.0, -toward);
    refl.set(40, 9.0, &-toward);
    let cloud = fuse(&front, Some(&refl), &back_layer(|_| 30.0), &params).unwrap();
    check(
        "reflected behind front",
        depth_at(&cloud, SourceTag::Reflected, 40).is_none(),
    );

    let refl = flat(f, 12.0, -toward);
    let back = back_layer(|i| if i == 40 { 11.0 } else { 30.0 });
    let cloud = fuse(&front, Some(&refl), &back, &params).unwrap();
    check(
        "back behind reflected",
        depth_at(&cloud, SourceTag::Back, 40).is_none(),
    );

    let mut spike = flat(f, 10.0, toward);
    spike.set(40, 20.0, &toward);
    let cleaned = remove_outliers(&spike, 4.0);
    check(
        "spike",
        !cleaned.is_defined(40) && cleaned.defined_count() == RES * RES - 1,
    );
    check(
        "smooth plane",
        remove_outliers(&front, 4.0).defined_count() == RES * RES,
    );
    let mut one_close = flat(f, 10.0, toward);
    for (i, z) in [(39, 20.0), (41, 20.0), (24, 20.0), (56, 12.0)] {
        one_close.set(i, z, &toward);
    }
    check(
        "one close neighbor",
        remove_outliers(&one_close, 4.0).is_defined(40),
    );
    let mut lonely = MapSet::empty(f);
    lonely.set(40, 10.0, &toward);
    check(
        "isolated",
        remove_outliers(&lonely, 4.0).defined_count() == 0,
    );

    // ordering invariant over corpus runs with both predictors
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut runs = 0;
    for shape in symmetric_corpus(1) {
        let (mesh, plane) = normalized(&shape);
        let frame = ViewFrame::fit(&mesh, elevated_direction(&mut rng), 137).unwrap();
        let front = render_maps(&mesh, &frame).unwrap();
        let refl = reflect_maps(&front, &plane.unwrap());
        for (spec, reflected) in [
            (
                BackPredictorSpec::Oracle { mesh: mesh.clone() },
                Some(&refl),
            ),
            (BackPredictorSpec::Heuristic, Some(&refl)),
            (BackPredictorSpec::Heuristic, None),
        ] {
            let input = PredictionInput {
                front: &front,
                reflected,
            };
            let back = predict_back(&spec, input).unwrap();
            let cloud = fuse(&front, reflected, &back, &params).unwrap();
            if let Some(v) = fusion_violation(&cloud, &frame, &params) {
                check(&format!("{} {}: {v}", shape.name, spec.name()), false);
            }
            runs += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let detail = if failures.is_empty() {
        format!(
            "7 rule examples exact, ordering and separation held on {runs} corpus runs, {secs:.1}s"
        )
    } else {
        format!("failed: {}", failures.join("; "))
    };
    outcome(failures.is_empty(), detail)
}

fn c5_poisson() -> Outcome {
    let start = Instant::now();
    let params = |g: usize| ReconParams {
        grid_resolution: g,
        ..Default::default()
    };
    let cloud = sphere_cloud(10_000, 1.0);
    let (m64, g64) = reconstruct_with_grid(&cloud, &params(64)).unwrap();
    let dev_cells = max_radial_deviation(&m64, 1.0) / g64.cell;
    let md64 = sphere_distance(&m64, 1.0, 100_000);
    let m128 = reconstruct(&cloud, &params(128)).unwrap();
    let md128 = sphere_distance(&m128, 1.0, 100_000);
    let ratio = md64 / md128;
    let chi = reconstruct(&torus_cloud(0.5, 0.2, 240, 96), &params(64))
        .unwrap()
        .euler_characteristic();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        dev_cells <= 1.0 && ratio >= 1.5 && chi == 0 && within(start, Duration::from_secs(120)),
        format!(
            "grid 64 max deviation {dev_cells:.3} cells, MD ratio 64->128 {ratio:.2}, torus Euler {chi}, {secs:.1}s"
        ),
    )
}

/// Serialized artifacts of one oracle run.
struct OracleRun {
    name: String,
    maps: Vec<u8>,
    cloud: Vec<u8>,
    fused: f2b_core::ortho::OrientedPointCloud,
    frame: ViewFrame,
    mesh: TriangleMesh,
}

fn oracle_runs(seed: u64) -> Vec<OracleRun> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    symmetric_corpus(1)
        .into_iter()
        .map(|shape| {
            let (mesh, plane) = normalized(&shape);
            let frame = ViewFrame::fit(&mesh, elevated_direction(&mut rng), 137).unwrap();
            let front = render_maps(&mesh, &frame).unwrap();
            let refl = reflect_maps(&front, &plane.unwrap());
            let back = predict_back(
                &BackPredictorSpec::Oracle { mesh: mesh.clone() },
                PredictionInput {
                    front: &front,
                    reflected: Some(&refl),
                },
            )
            .unwrap();
            let fused = fuse(&front, Some(&refl), &back, &FusionParams::default()).unwrap();
            let mut maps = Vec::new();
            for m in [&front, &refl, &back] {
                write_f2bm(m, &mut maps).unwrap();
            }
            let mut cloud = Vec::new();
            write_cloud(&fused, &mut cloud).unwrap();
            OracleRun {
                name: shape.name,
                maps,
                cloud,
                fused,
                frame,
                mesh,
            }
        })
        .collect()
}

fn c6_end_to_end(first: &[OracleRun], prep: Duration) -> Outcome {
    let start = Instant::now() - prep;
    let (mut worst, mut worst_name, mut closed, mut ordered) = (0.0f64, String::new(), 0, true);
    for run in first {
        let rec = reconstruct(&run.fused, &ReconParams::default()).unwrap();
        closed += rec.is_watertight() as usize;
        ordered &= fusion_violation(&run.fused, &run.frame, &FusionParams::default()).is_none();
        let md = mesh_distance_md(&rec, &run.mesh, 100_000, 1).unwrap();
        if md >= worst {
            worst = md;
            worst_name = run.name.clone();
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 0.03 && ordered && within(start, Duration::from_secs(600)),
        format!(
            "{} meshes, worst MD {worst:.4} ({worst_name}), {closed} watertight, fusion ordering held: {ordered}, {secs:.1}s",
            first.len()
        ),
    )
}

fn c7_ablation() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut sim_ok, mut md_ok, mut both, mut total) = (0, 0, 0, 0);
    for shape in symmetric_corpus(1) {
        let (mesh, plane) = normalized(&shape);
        let frame = ViewFrame::fit(&mesh, elevated_direction(&mut rng), 137).unwrap();
        let front = render_maps(&mesh, &frame).unwrap();
        let truth = render_back_truth(&mesh, &frame).unwrap();
        let refl = reflect_maps(&front, &plane.unwrap());
        let run = |reflected: Option<&MapSet>| {
            let input = PredictionInput {
                front: &front,
                reflected,
            };
            let back = predict_back(&BackPredictorSpec::Heuristic, input).unwrap();
            let score = similarity_score(&back, &truth).unwrap();
            let cloud = fuse(&front, reflected, &back, &FusionParams::default()).unwrap();
            let rec = reconstruct(&cloud, &ReconParams::default()).unwrap();
            (score, mesh_distance_md(&rec, &mesh, 100_000, 1).unwrap())
        };
        let (s_with, md_with) = run(Some(&refl));
        let (s_without, md_without) = run(None);
        sim_ok += (s_with <= s_without) as usize;
        md_ok += (md_with <= md_without) as usize;
        both += (s_with <= s_without && md_with <= md_without) as usize;
        total += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        sim_ok * 5 >= total * 4 && md_ok * 5 >= total * 4,
        format!(
            "reflection no worse on similarity {sim_ok}/{total}, on MD {md_ok}/{total}, on both {both}/{total}, {secs:.1}s"
        ),
    )
}

fn c8_metrics() -> Outcome {
    let start = Instant::now();
    let s = uv_sphere(1.0, 256, 128);
    let md_self = mesh_distance_md(&s, &s, 100_000, 1).unwrap();
    let floor = chamfer_l1_seeded(&s, &s, 100_000, 1, 2).unwrap();
    let nc = normal_consistency(&s, &s, 100_000, 3).unwrap();
    let mut worst_rel = 0.0f64;
    for t in [0.1, 0.3] {
        let cd = chamfer_l1(&s, &s.translated(&Vec3::new(t, 0.0, 0.0)), 100_000, 5).unwrap();
        let expected = shifted_sphere_mean_distance(t);
        worst_rel = worst_rel.max((cd - expected).abs() / expected);
    }
    // a torus exercises the normal term on a non-convex surface
    let tor = torus(0.5, 0.2, 96, 48);
    let nc_torus = normal_consistency(&tor, &tor, 100_000, 4).unwrap();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        md_self <= 1e-9 && floor <= 0.01 && nc >= 0.999 && nc_torus >= 0.999 && worst_rel <= 0.05,
        format!(
            "MD(A,A) {md_self:.1e}, CD self-floor {floor:.4}, NC(A,A) {nc:.5}, translated-sphere CD error {:.2}%, {secs:.1}s",
            100.0 * worst_rel
        ),
    )
}

fn c9_determinism(first: &[OracleRun]) -> Outcome {
    let start = Instant::now();
    let second = oracle_runs(5);
    let same_maps = first
        .iter()
        .zip(&second)
        .filter(|(a, b)| a.maps == b.maps)
        .count();
    let same_cloud = first
        .iter()
        .zip(&second)
        .filter(|(a, b)| a.cloud == b.cloud)
        .count();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        same_maps == first.len() && same_cloud == first.len() && first.len() == second.len(),
        format!(
            "F2BM identical {same_maps}/{n}, cloud identical {same_cloud}/{n}, {secs:.1}s",
            n = first.len()
        ),
    )
}

fn main() {
    let selected: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let wanted = |k: u32| selected.is_empty() || selected.contains(&k);
    let mut stdout = std::io::stdout();
    let mut failed = Vec::new();
    let mut report = |k: u32, o: Outcome| {
        let status = if o.pass { "PASS" } else { "FAIL" };
        let _ = writeln!(stdout, "criterion {k}: {status} {}", o.detail);
        let _ = stdout.flush();
        if !o.pass {
            failed.push(k);
        }
    };
    if wanted(1) {
        report(1, c1_silhouettes());
    }
    if wanted(2) {
        report(2, c2_symmetry());
    }
    if wanted(3) {
        report(3, c3_gradient());
    }
    if wanted(4) {
        report(4, c4_fusion());
    }
    if wanted(5) {
        report(5, c5_poisson());
    }
    if wanted(6) || wanted(9) {
        let start = Instant::now();
        let first = oracle_runs(5);
        let prep = start.elapsed();
        if wanted(6) {
            report(6, c6_end_to_end(&first, prep));
        }
        if wanted(9) {
            report(9, c9_determinism(&first));
        }
    }
    if wanted(7) {
        report(7, c7_ablation());
    }
    if wanted(8) {
        report(8, c8_metrics());
    }
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
