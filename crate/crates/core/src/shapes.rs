//! Procedural test geometry: primitives with outward counter-clockwise
//! winding, and seeded corpora of mirror-symmetric and asymmetric shapes.

use std::f64::consts::PI;

use nalgebra::{Rotation3, Unit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{TriangleMesh, Vec3};

fn mesh(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> TriangleMesh {
    TriangleMesh {
        vertices,
        triangles,
        normals: None,
    }
}

pub fn cuboid(min: Vec3, max: Vec3) -> TriangleMesh {
    let vertices = (0..8)
        .map(|i| {
            Vec3::new(
                if i & 1 == 0 { min.x } else { max.x },
                if i & 2 == 0 { min.y } else { max.y },
                if i & 4 == 0 { min.z } else { max.z },
            )
        })
        .collect();
    let triangles = vec![
        [0, 2, 3],
        [0, 3, 1],
        [4, 5, 7],
        [4, 7, 6],
        [0, 1, 5],
        [0, 5, 4],
        [2, 6, 7],
        [2, 7, 3],
        [0, 4, 6],
        [0, 6, 2],
        [1, 3, 7],
        [1, 7, 5],
    ];
    mesh(vertices, triangles)
}

/// Box centered at `center` with the given half extents.
pub fn centered_box(center: Vec3, half: Vec3) -> TriangleMesh {
    cuboid(center - half, center + half)
}

/// Latitude/longitude sphere centered at the origin.
pub fn uv_sphere(radius: f64, slices: usize, stacks: usize) -> TriangleMesh {
    let mut vertices = vec![Vec3::new(0.0, 0.0, radius)];
    for k in 1..stacks {
        let theta = PI * k as f64 / stacks as f64;
        for j in 0..slices {
            let phi = 2.0 * PI * j as f64 / slices as f64;
            vertices.push(
                radius
                    * Vec3::new(
                        theta.sin() * phi.cos(),
                        theta.sin() * phi.sin(),
                        theta.cos(),
                    ),
            );
        }
    }
    vertices.push(Vec3::new(0.0, 0.0, -radius));
    let bottom = (vertices.len() - 1) as u32;
    let ring = |k: usize, j: usize| (1 + (k - 1) * slices + j % slices) as u32;
    let mut triangles = Vec::new();
    for j in 0..slices {
        triangles.push([0, ring(1, j), ring(1, j + 1)]);
    }
    for k in 1..stacks - 1 {
        for j in 0..slices {
            let (a, b, c, d) = (
                ring(k, j),
                ring(k, j + 1),
                ring(k + 1, j),
                ring(k + 1, j + 1),
            );
            triangles.push([a, c, d]);
            triangles.push([a, d, b]);
        }
    }
    for j in 0..slices {
        triangles.push([bottom, ring(stacks - 1, j + 1), ring(stacks - 1, j)]);
    }
    mesh(vertices, triangles)
}

/// Closed cylinder along z, centered at the origin.
pub fn cylinder(radius: f64, height: f64, segments: usize) -> TriangleMesh {
    let h = 0.5 * height;
    let mut vertices = vec![Vec3::new(0.0, 0.0, h), Vec3::new(0.0, 0.0, -h)];
    for z in [h, -h] {
        for j in 0..segments {
            let phi = 2.0 * PI * j as f64 / segments as f64;
            vertices.push(Vec3::new(radius * phi.cos(), radius * phi.sin(), z));
        }
    }
    let top = |j: usize| (2 + j % segments) as u32;
    let bot = |j: usize| (2 + segments + j % segments) as u32;
    let mut triangles = Vec::new();
    for j in 0..segments {
        triangles.push([0, top(j), top(j + 1)]);
        triangles.push([1, bot(j + 1), bot(j)]);
        triangles.push([top(j), bot(j), bot(j + 1)]);
        triangles.push([top(j), bot(j + 1), top(j + 1)]);
    }
    mesh(vertices, triangles)
}

/// Torus around the z axis.
pub fn torus(major: f64, minor: f64, nu: usize, nv: usize) -> TriangleMesh {
    let mut vertices = Vec::with_capacity(nu * nv);
    for i in 0..nu {
        let u = 2.0 * PI * i as f64 / nu as f64;
        for j in 0..nv {
            let v = 2.0 * PI * j as f64 / nv as f64;
            let r = major + minor * v.cos();
            vertices.push(Vec3::new(r * u.cos(), r * u.sin(), minor * v.sin()));
        }
    }
    let id = |i: usize, j: usize| ((i % nu) * nv + j % nv) as u32;
    let mut triangles = Vec::new();
    for i in 0..nu {
        for j in 0..nv {
            triangles.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            triangles.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    mesh(vertices, triangles)
}

/// Open square in the z = 0 plane facing +z.
pub fn quad(half: f64) -> TriangleMesh {
    mesh(
        vec![
            Vec3::new(-half, -half, 0.0),
            Vec3::new(half, -half, 0.0),
            Vec3::new(half, half, 0.0),
            Vec3::new(-half, half, 0.0),
        ],
        vec![[0, 1, 2], [0, 2, 3]],
    )
}

/// Rotates about the origin, then translates.
pub fn rigid(mesh: &TriangleMesh, rotation: &Rotation3<f64>, translation: &Vec3) -> TriangleMesh {
    TriangleMesh {
        vertices: mesh
            .vertices
            .iter()
            .map(|v| rotation * v + translation)
            .collect(),
        triangles: mesh.triangles.clone(),
        normals: mesh
            .normals
            .as_ref()
            .map(|ns| ns.iter().map(|n| rotation * n).collect()),
    }
}

pub fn rotation(axis: Vec3, angle: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle)
}

/// A mesh together with the planes it is mirror-symmetric about, each as
/// (unit normal, offset) with `normal · x = offset` on the plane.
#[derive(Debug, Clone)]
pub struct CorpusShape {
    pub name: String,
    pub mesh: TriangleMesh,
    pub planes: Vec<(Vec3, f64)>,
}

fn pair_x(part: TriangleMesh, parts: &mut Vec<TriangleMesh>) {
    let mirrored = TriangleMesh {
        vertices: part
            .vertices
            .iter()
            .map(|v| Vec3::new(-v.x, v.y, v.z))
            .collect(),
        // mirroring flips winding
        triangles: part.triangles.iter().map(|t| [t[0], t[2], t[1]]).collect(),
        normals: None,
    };
    parts.push(part);
    parts.push(mirrored);
}

/// Chair-like union of boxes, mirror-symmetric about x = 0 only.
fn chair(rng: &mut ChaCha8Rng) -> TriangleMesh {
    let w = rng.gen_range(0.35..0.5);
    let d = rng.gen_range(0.35..0.5);
    let seat_h = rng.gen_range(0.35..0.5);
    let seat_t = rng.gen_range(0.05..0.08);
    let leg = rng.gen_range(0.035..0.06);
    let back_h = rng.gen_range(0.35..0.6);
    let back_t = rng.gen_range(0.05..0.08);
    let mut parts = vec![
        centered_box(Vec3::new(0.0, seat_h, 0.0), Vec3::new(w, seat_t, d)),
        centered_box(
            Vec3::new(0.0, seat_h + seat_t + back_h, -d + back_t),
            Vec3::new(w, back_h, back_t),
        ),
    ];
    for z in [-d + leg, d - leg] {
        pair_x(
            centered_box(
                Vec3::new(w - leg, 0.5 * (seat_h - seat_t), z),
                Vec3::new(leg, 0.5 * (seat_h - seat_t), leg),
            ),
            &mut parts,
        );
    }
    if rng.gen_bool(0.5) {
        let arm_h = rng.gen_range(0.12..0.2);
        pair_x(
            centered_box(
                Vec3::new(w - 0.04, seat_h + seat_t + arm_h, 0.0),
                Vec3::new(0.04, 0.04, d * 0.8),
            ),
            &mut parts,
        );
    }
    TriangleMesh::merged(&parts)
}

/// Table: slab on four legs with a front apron that breaks front/back symmetry.
fn table(rng: &mut ChaCha8Rng) -> TriangleMesh {
    let w = rng.gen_range(0.5..0.7);
    let d = rng.gen_range(0.3..0.4);
    let h = rng.gen_range(0.4..0.6);
    let top_t = rng.gen_range(0.03..0.06);
    let leg = rng.gen_range(0.03..0.05);
    let mut parts = vec![
        centered_box(Vec3::new(0.0, h, 0.0), Vec3::new(w, top_t, d)),
        centered_box(
            Vec3::new(0.0, h - 0.15, d - 0.05),
            Vec3::new(w * 0.8, 0.1, 0.03),
        ),
        centered_box(
            Vec3::new(0.0, h * 0.3, -d * 0.2),
            Vec3::new(w * 0.5, 0.04, d * 0.5),
        ),
    ];
    for z in [-d + leg, d - leg] {
        pair_x(
            centered_box(
                Vec3::new(w - leg, 0.5 * (h - top_t), z),
                Vec3::new(leg, 0.5 * (h - top_t), leg),
            ),
            &mut parts,
        );
    }
    TriangleMesh::merged(&parts)
}

/// Airplane-like: fuselage cylinder along z, swept wings and a tail fin.
fn airplane(rng: &mut ChaCha8Rng) -> TriangleMesh {
    let len = rng.gen_range(0.9..1.2);
    let rad = rng.gen_range(0.06..0.1);
    let span = rng.gen_range(0.45..0.6);
    let chord = rng.gen_range(0.15..0.25);
    let fuselage = cylinder(rad, len, 24);
    let nose = rigid(
        &uv_sphere(rad, 24, 12),
        &Rotation3::identity(),
        &Vec3::new(0.0, 0.0, 0.5 * len),
    );
    let fin = centered_box(
        Vec3::new(0.0, rad + 0.08, -0.5 * len + 0.1),
        Vec3::new(0.015, 0.1, 0.08),
    );
    let mut parts = vec![fuselage, nose, fin];
    let sweep = rng.gen_range(0.1..0.4);
    let wing = rigid(
        &centered_box(Vec3::zeros(), Vec3::new(0.5 * span, 0.015, 0.5 * chord)),
        &rotation(Vec3::y(), sweep),
        &Vec3::new(0.5 * span + 0.5 * rad, 0.0, 0.05),
    );
    pair_x(wing, &mut parts);
    let tail = centered_box(
        Vec3::new(0.18, 0.0, -0.5 * len + 0.08),
        Vec3::new(0.15, 0.012, 0.06),
    );
    pair_x(tail, &mut parts);
    TriangleMesh::merged(&parts)
}

/// Lamp-like: base disc, offset stem and a shade cylinder tipped forward.
fn lamp(rng: &mut ChaCha8Rng) -> TriangleMesh {
    let base_r = rng.gen_range(0.2..0.3);
    let stem_h = rng.gen_range(0.6..0.9);
    let tilt = rng.gen_range(0.3..0.6);
    let base = rigid(
        &cylinder(base_r, 0.05, 32),
        &rotation(Vec3::x(), PI / 2.0),
        &Vec3::zeros(),
    );
    let stem = rigid(
        &cylinder(0.03, stem_h, 16),
        &rotation(Vec3::x(), PI / 2.0),
        &Vec3::new(0.0, 0.5 * stem_h, -0.1),
    );
    let shade = rigid(
        &cylinder(0.18, 0.25, 32),
        &(rotation(Vec3::x(), tilt) * rotation(Vec3::x(), PI / 2.0)),
        &Vec3::new(0.0, stem_h, 0.05),
    );
    TriangleMesh::merged(&[base, stem, shade])
}

/// Sofa/bench: wide seat with back and two side blocks.
fn sofa(rng: &mut ChaCha8Rng) -> TriangleMesh {
    let w = rng.gen_range(0.6..0.8);
    let d = rng.gen_range(0.3..0.4);
    let h = rng.gen_range(0.18..0.25);
    let mut parts = vec![
        centered_box(Vec3::new(0.0, h, 0.0), Vec3::new(w, h, d)),
        centered_box(
            Vec3::new(0.0, 2.0 * h + 0.2, -d + 0.08),
            Vec3::new(w, 0.2, 0.08),
        ),
    ];
    pair_x(
        centered_box(
            Vec3::new(w + 0.08, h + 0.1, 0.0),
            Vec3::new(0.08, h + 0.1, d),
        ),
        &mut parts,
    );
    TriangleMesh::merged(&parts)
}

/// Twenty seeded shapes, each mirror-symmetric about x = 0 and about no
/// other plane.
pub fn symmetric_corpus(seed: u64) -> Vec<CorpusShape> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let makers: [(&str, fn(&mut ChaCha8Rng) -> TriangleMesh); 5] = [
        ("chair", chair),
        ("table", table),
        ("airplane", airplane),
        ("lamp", lamp),
        ("sofa", sofa),
    ];
    (0..20)
        .map(|k| {
            let (name, make) = makers[k % makers.len()];
            CorpusShape {
                name: format!("{name}_{k:02}"),
                mesh: make(&mut rng),
                planes: vec![(Vec3::x(), 0.0)],
            }
        })
        .collect()
}

/// Ten shapes with no reflective symmetry: clusters of differently sized,
/// randomly rotated boxes plus a one-armed chair.
pub fn asymmetric_corpus(seed: u64) -> Vec<CorpusShape> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    {
        // one-armed chair
        let mut c = chair(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed));
        let arm = centered_box(Vec3::new(0.46, 0.75, 0.0), Vec3::new(0.05, 0.25, 0.35));
        c = TriangleMesh::merged(&[c, arm]);
        out.push(CorpusShape {
            name: "one_armed_chair".into(),
            mesh: c,
            planes: vec![],
        });
    }
    while out.len() < 10 {
        let k = out.len();
        let n = rng.gen_range(3..=4);
        let parts: Vec<TriangleMesh> = (0..n)
            .map(|_| {
                let half = Vec3::new(
                    rng.gen_range(0.08..0.35),
                    rng.gen_range(0.08..0.35),
                    rng.gen_range(0.08..0.35),
                );
                let axis = Vec3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                );
                let rot = rotation(axis, rng.gen_range(0.3..1.2));
                let offset = Vec3::new(
                    rng.gen_range(-0.4..0.4),
                    rng.gen_range(-0.4..0.4),
                    rng.gen_range(-0.4..0.4),
                );
                rigid(&centered_box(Vec3::zeros(), half), &rot, &offset)
            })
            .collect();
        out.push(CorpusShape {
            name: format!("boxes_{k:02}"),
            mesh: TriangleMesh::merged(&parts),
            planes: vec![],
        });
    }
    out
}

/// Closed primitives and unions used for rendering checks.
pub fn closed_corpus() -> Vec<CorpusShape> {
    let s = |name: &str, mesh: TriangleMesh| CorpusShape {
        name: name.into(),
        mesh,
        planes: vec![],
    };
    let mut out = vec![
        s("sphere", uv_sphere(0.5, 48, 24)),
        s("sphere_coarse", uv_sphere(0.4, 16, 8)),
        s("cube", centered_box(Vec3::zeros(), Vec3::repeat(0.3))),
        s(
            "slab",
            centered_box(Vec3::zeros(), Vec3::new(0.5, 0.1, 0.3)),
        ),
        s("cylinder", cylinder(0.3, 0.8, 48)),
        s("disc", cylinder(0.5, 0.1, 48)),
        s("torus", torus(0.4, 0.12, 48, 24)),
        s("fat_torus", torus(0.3, 0.2, 48, 24)),
    ];
    out.push(s(
        "sphere_box",
        TriangleMesh::merged(&[
            uv_sphere(0.3, 32, 16),
            centered_box(Vec3::new(0.35, 0.0, 0.0), Vec3::new(0.2, 0.1, 0.1)),
        ]),
    ));
    out.push(s(
        "torus_cylinder",
        TriangleMesh::merged(&[torus(0.4, 0.1, 48, 16), cylinder(0.1, 0.9, 24)]),
    ));
    out.push(s(
        "tilted_box",
        rigid(
            &centered_box(Vec3::zeros(), Vec3::new(0.4, 0.2, 0.1)),
            &rotation(Vec3::new(1.0, 1.0, 0.0), 0.7),
            &Vec3::zeros(),
        ),
    ));
    out.push(s(
        "tilted_cylinder",
        rigid(
            &cylinder(0.2, 0.9, 32),
            &rotation(Vec3::new(0.0, 1.0, 1.0), 1.1),
            &Vec3::zeros(),
        ),
    ));
    out.push(s(
        "tilted_torus",
        rigid(
            &torus(0.4, 0.15, 48, 24),
            &rotation(Vec3::x(), 0.9),
            &Vec3::zeros(),
        ),
    ));
    out.push(s(
        "two_spheres",
        TriangleMesh::merged(&[
            rigid(
                &uv_sphere(0.25, 32, 16),
                &Rotation3::identity(),
                &Vec3::new(-0.3, 0.1, 0.0),
            ),
            rigid(
                &uv_sphere(0.2, 32, 16),
                &Rotation3::identity(),
                &Vec3::new(0.3, -0.1, 0.1),
            ),
        ]),
    ));
    out.push(s(
        "l_shape",
        TriangleMesh::merged(&[
            centered_box(Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.4, 0.1, 0.1)),
            centered_box(Vec3::new(-0.3, 0.3, 0.0), Vec3::new(0.1, 0.3, 0.1)),
        ]),
    ));
    out.push(s("rod", cylinder(0.08, 1.0, 24)));
    out.push(s(
        "box_stack",
        TriangleMesh::merged(&[
            centered_box(Vec3::new(0.0, -0.2, 0.0), Vec3::new(0.4, 0.1, 0.4)),
            centered_box(Vec3::new(0.1, 0.05, 0.05), Vec3::new(0.2, 0.15, 0.2)),
            centered_box(Vec3::new(0.15, 0.3, 0.1), Vec3::new(0.08, 0.1, 0.08)),
        ]),
    ));
    out.push(s(
        "ring_sphere",
        TriangleMesh::merged(&[torus(0.45, 0.06, 48, 12), uv_sphere(0.2, 32, 16)]),
    ));
    out.push(s("small_torus", torus(0.2, 0.08, 32, 16)));
    out.push(s(
        "capsule",
        TriangleMesh::merged(&[
            cylinder(0.15, 0.6, 32),
            rigid(
                &uv_sphere(0.15, 32, 16),
                &Rotation3::identity(),
                &Vec3::new(0.0, 0.0, 0.3),
            ),
            rigid(
                &uv_sphere(0.15, 32, 16),
                &Rotation3::identity(),
                &Vec3::new(0.0, 0.0, -0.3),
            ),
        ]),
    ));
    out
}

/// Uniformly distributed unit vector.
pub fn random_direction(rng: &mut impl Rng) -> Vec3 {
    let z: f64 = rng.gen_range(-1.0..1.0);
    let phi: f64 = rng.gen_range(0.0..2.0 * PI);
    let r = (1.0 - z * z).sqrt();
    Vec3::new(r * phi.cos(), r * phi.sin(), z)
}

/// Viewing direction looking down on the origin from a uniform azimuth and
/// an elevation between 20 and 35 degrees, with +y up.
pub fn elevated_direction(rng: &mut impl Rng) -> Vec3 {
    let az: f64 = rng.gen_range(0.0..2.0 * PI);
    let el: f64 = rng.gen_range(20f64.to_radians()..35f64.to_radians());
    -Vec3::new(el.cos() * az.sin(), el.sin(), el.cos() * az.cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primitives_are_closed_and_outward() {
        for m in [
            cuboid(Vec3::zeros(), Vec3::repeat(1.0)),
            uv_sphere(1.0, 16, 8),
            cylinder(1.0, 2.0, 16),
            torus(1.0, 0.3, 16, 8),
        ] {
            assert!(m.is_watertight());
            // positive signed volume means outward winding
            let vol: f64 = m
                .triangles
                .iter()
                .map(|t| {
                    let [a, b, c] = t.map(|i| m.vertices[i as usize]);
                    a.dot(&b.cross(&c)) / 6.0
                })
                .sum();
            assert!(vol > 0.0);
        }
        assert_eq!(cylinder(1.0, 1.0, 12).euler_characteristic(), 2);
    }

    #[test]
    fn symmetric_corpus_is_mirror_symmetric() {
        for shape in symmetric_corpus(1) {
            let m = &shape.mesh;
            let bvh = crate::geometry::Bvh::build(m);
            for v in m.vertices.iter().step_by(7) {
                let r = Vec3::new(-v.x, v.y, v.z);
                let hit = bvh.closest_point(m, &r).unwrap();
                assert!(hit.distance < 1e-9, "{}: {}", shape.name, hit.distance);
            }
        }
    }

    #[test]
    fn corpora_sizes() {
        assert_eq!(symmetric_corpus(3).len(), 20);
        assert_eq!(asymmetric_corpus(3).len(), 10);
        assert_eq!(closed_corpus().len(), 20);
    }
}
