mod common;

use f2b_core::backpred::{predict_back, BackPredictorSpec, PredictionInput};
use f2b_core::fusion::{fuse, fuse_with_stats, FusionParams};
use f2b_core::geometry::normalize_mesh;
use f2b_core::ortho::{render_back_truth, render_maps, MapSet, ViewFrame};
use f2b_core::shapes::{closed_corpus, elevated_direction, random_direction, symmetric_corpus};
use f2b_core::symmetry::reflect_maps;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{fusion_violation, normalized};

#[test]
fn ordering_and_separation_hold_on_symmetric_corpus() {
    let params = FusionParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for shape in symmetric_corpus(3) {
        let (mesh, plane) = normalized(&shape);
        let frame = ViewFrame::fit(&mesh, elevated_direction(&mut rng), 137).unwrap();
        let front = render_maps(&mesh, &frame).unwrap();
        let refl = reflect_maps(&front, &plane.unwrap());
        let input = PredictionInput {
            front: &front,
            reflected: Some(&refl),
        };
        for spec in [
            BackPredictorSpec::Oracle { mesh: mesh.clone() },
            BackPredictorSpec::Heuristic,
        ] {
            let back = predict_back(&spec, input).unwrap();
            let cloud = fuse(&front, Some(&refl), &back, &params).unwrap();
            if let Some(v) = fusion_violation(&cloud, &frame, &params) {
                panic!("{} with {}: {v}", shape.name, spec.name());
            }
        }
    }
}

#[test]
fn ordering_holds_on_closed_corpus_without_reflection() {
    let params = FusionParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for shape in closed_corpus() {
        let (mesh, _) = normalize_mesh(&shape.mesh).unwrap();
        let frame = ViewFrame::fit(&mesh, random_direction(&mut rng), 137).unwrap();
        let front = render_maps(&mesh, &frame).unwrap();
        let back = render_back_truth(&mesh, &frame).unwrap();
        let cloud = fuse(&front, None, &back, &params).unwrap();
        assert_eq!(
            fusion_violation(&cloud, &frame, &params),
            None,
            "{}",
            shape.name
        );
    }
}

#[test]
fn smooth_closed_shapes_rarely_need_separation_at_256() {
    let smooth = [
        "sphere",
        "sphere_coarse",
        "torus",
        "fat_torus",
        "tilted_torus",
        "two_spheres",
        "small_torus",
        "capsule",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for shape in closed_corpus()
        .into_iter()
        .filter(|s| smooth.contains(&s.name.as_str()))
    {
        let (mesh, _) = normalize_mesh(&shape.mesh).unwrap();
        for _ in 0..3 {
            let frame = ViewFrame::fit(&mesh, random_direction(&mut rng), 256).unwrap();
            let front = render_maps(&mesh, &frame).unwrap();
            let back = render_back_truth(&mesh, &frame).unwrap();
            let (_, stats) =
                fuse_with_stats(&front, None, &back, &FusionParams::default()).unwrap();
            let frac = stats.displaced as f64 / back.defined_count() as f64;
            assert!(
                frac <= 0.01,
                "{}: {:.2}% displaced",
                shape.name,
                100.0 * frac
            );
        }
    }
}

fn permuted(maps: &MapSet) -> MapSet {
    // rebuild the maps by visiting pixels in reverse order
    let mut out = MapSet::empty(maps.frame);
    for i in (0..maps.depth.len()).rev() {
        if maps.is_defined(i) {
            out.set(i, maps.depth[i] as f64, &maps.view_normal(i));
        }
    }
    out.silhouette = maps.silhouette.clone();
    out
}

#[test]
fn fusion_is_deterministic_and_enumeration_independent() {
    let shape = &symmetric_corpus(2)[4];
    let (mesh, plane) = normalized(shape);
    let frame = ViewFrame::fit(
        &mesh,
        elevated_direction(&mut ChaCha8Rng::seed_from_u64(1)),
        137,
    )
    .unwrap();
    let front = render_maps(&mesh, &frame).unwrap();
    let refl = reflect_maps(&front, &plane.unwrap());
    let back = render_back_truth(&mesh, &frame).unwrap();
    let p = FusionParams::default();
    let a = fuse(&front, Some(&refl), &back, &p).unwrap();
    let b = fuse(
        &permuted(&front),
        Some(&permuted(&refl)),
        &permuted(&back),
        &p,
    )
    .unwrap();
    assert_eq!(a, b);
}
