//! Procedural meshes and scenes with known ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::{CameraPose, Intrinsics};
use crate::error::Result;
use crate::image::{RgbImage, TextureMap};
use crate::linalg::{axis_angle, normalize, Vec3};
use crate::mesh::FaceMesh;
use crate::raster;

/// A mesh together with the camera that views it.
#[derive(Debug, Clone)]
pub struct Scene {
    pub mesh: FaceMesh,
    pub pose: CameraPose,
}

fn identity_pose(focal: f64, width: usize, height: usize) -> CameraPose {
    CameraPose::new(
        axis_angle([0.0, 0.0, 1.0], 0.0),
        [0.0; 3],
        Intrinsics {
            focal,
            principal_point: [width as f64 / 2.0, height as f64 / 2.0],
            width,
            height,
        },
    )
    .expect("identity pose is valid")
}

/// Camera-facing rectangle covering pixel range `[x0, x1) x [y0, y1)` of a
/// `width x height` image, with UV equal to normalized image coordinates
/// of the whole frame mapped onto the rectangle.
pub fn screen_rect(width: usize, height: usize, x0: f64, y0: f64, x1: f64, y1: f64) -> Scene {
    let depth = 10.0;
    let focal = width as f64;
    let pose = identity_pose(focal, width, height);
    let (cx, cy) = (width as f64 / 2.0, height as f64 / 2.0);
    let unproject = |x: f64, y: f64| [(x - cx) * depth / focal, (y - cy) * depth / focal, depth];
    let corners = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)];
    let vertices = corners.iter().map(|&(x, y)| unproject(x, y)).collect();
    let uv = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]].to_vec();
    let mesh = FaceMesh::new(vertices, vec![[0, 2, 1], [0, 3, 2]], uv).expect("quad is valid");
    Scene { mesh, pose }
}

/// Full-frame camera-facing quad whose UV coordinates equal its normalized
/// projected image coordinates.
pub fn screen_quad(size: usize) -> Scene {
    screen_rect(size, size, 0.0, 0.0, size as f64, size as f64)
}

/// Cylindrical strip wrapping around the view axis, the stand-in face used
/// by the synthetic refinement problems. The strip spans `±108°` around its
/// axis, so its flanks fail the visibility threshold and its far edges turn
/// away from the camera. UVs cover `[0.05, 0.95]²`.
pub fn curved_strip(image_size: usize, columns: usize, rows: usize) -> Scene {
    let radius = 1.0;
    let axis_depth = 3.2;
    let half_height = 0.8;
    let span = 1.2 * std::f64::consts::PI;
    let mut vertices = Vec::with_capacity((columns + 1) * (rows + 1));
    let mut uv = Vec::with_capacity(vertices.capacity());
    for j in 0..=rows {
        let v = j as f64 / rows as f64;
        for i in 0..=columns {
            let u = i as f64 / columns as f64;
            let theta = (u - 0.5) * span;
            vertices.push([
                radius * theta.sin(),
                (v - 0.5) * 2.0 * half_height,
                axis_depth - radius * theta.cos(),
            ]);
            uv.push([0.05 + 0.9 * u, 0.05 + 0.9 * v]);
        }
    }
    let idx = |i: usize, j: usize| j * (columns + 1) + i;
    let mut triangles = Vec::with_capacity(columns * rows * 2);
    for j in 0..rows {
        for i in 0..columns {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i, j + 1), idx(i + 1, j + 1));
            triangles.push([a, c, b]);
            triangles.push([b, c, d]);
        }
    }
    let mesh = FaceMesh::new(vertices, triangles, uv).expect("strip is valid");
    let pose = identity_pose(1.2 * image_size as f64, image_size, image_size);
    Scene { mesh, pose }
}

/// Geodesic sphere of unit radius, outward-wound, with a spherical UV map.
pub fn icosphere(subdivisions: usize) -> FaceMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|v| normalize(*v).unwrap())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut cache = std::collections::HashMap::new();
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Vec3>| -> usize {
            let key = (a.min(b), a.max(b));
            *cache.entry(key).or_insert_with(|| {
                let m = [
                    (verts[a][0] + verts[b][0]) / 2.0,
                    (verts[a][1] + verts[b][1]) / 2.0,
                    (verts[a][2] + verts[b][2]) / 2.0,
                ];
                verts.push(normalize(m).unwrap());
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    let uv = verts
        .iter()
        .map(|v| {
            let u = 0.5 + v[0].atan2(v[2]) / (2.0 * std::f64::consts::PI);
            let w = v[1].clamp(-1.0, 1.0).acos() / std::f64::consts::PI;
            [u.clamp(0.0, 1.0), w.clamp(0.0, 1.0)]
        })
        .collect();
    FaceMesh::new(verts, faces, uv).expect("icosphere is valid")
}

/// Deterministic texture with detail at several scales: smooth shading,
/// stripes, and random spots. Values stay within `[0.1, 0.85]`.
pub fn procedural_texture(resolution: usize, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spots: Vec<([f64; 2], f64, [f64; 3])> = (0..40)
        .map(|_| {
            (
                [rng.random::<f64>(), rng.random::<f64>()],
                0.01 + 0.05 * rng.random::<f64>(),
                [
                    rng.random_range(-0.25..0.25),
                    rng.random_range(-0.25..0.25),
                    rng.random_range(-0.25..0.25),
                ],
            )
        })
        .collect();
    let phase: f64 = rng.random::<f64>() * 6.0;
    RgbImage::from_fn(resolution, resolution, |x, y| {
        let u = (x as f64 + 0.5) / resolution as f64;
        let v = (y as f64 + 0.5) / resolution as f64;
        let mut c = [
            0.55 + 0.12 * (3.0 * u + phase).sin(),
            0.40 + 0.10 * (2.5 * v - phase).cos(),
            0.35 + 0.08 * ((u + v) * 4.0).sin(),
        ];
        let stripes = 0.06 * (u * 40.0 + 8.0 * (v * 6.0).sin()).sin() * (v * 23.0).cos();
        for ch in &mut c {
            *ch += stripes;
        }
        for (center, r, tint) in &spots {
            let d2 = (u - center[0]).powi(2) + (v - center[1]).powi(2);
            let w = (-d2 / (r * r)).exp();
            for k in 0..3 {
                c[k] += w * tint[k];
            }
        }
        c.map(|ch| ch.clamp(0.1, 0.85))
    })
}

/// Stationary skin-like texture: a constant base tone with blotches, fine
/// mottling and wrinkle-like waves whose statistics do not depend on
/// position. Values stay within `[0.1, 0.85]`.
pub fn skin_texture(resolution: usize, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = [0.62, 0.46, 0.38];
    let spots: Vec<([f64; 2], f64, [f64; 3])> = (0..160)
        .map(|_| {
            let tone = rng.random_range(-0.18..0.12);
            (
                [rng.random::<f64>(), rng.random::<f64>()],
                0.006 + 0.02 * rng.random::<f64>(),
                [tone, tone * 1.2 + rng.random_range(-0.04..0.04), tone * 1.1],
            )
        })
        .collect();
    let lattice = 24;
    let noise: Vec<[f64; 3]> = (0..lattice * lattice)
        .map(|_| {
            let l = rng.random_range(-0.05..0.05);
            [l + rng.random_range(-0.02..0.02), l, l + rng.random_range(-0.02..0.02)]
        })
        .collect();
    let noise_img = RgbImage::from_raw(lattice, lattice, noise.into_iter().flatten().collect()).expect("lattice size");
    let phase: [f64; 2] = [rng.random::<f64>() * 6.0, rng.random::<f64>() * 6.0];
    RgbImage::from_fn(resolution, resolution, |x, y| {
        let u = (x as f64 + 0.5) / resolution as f64;
        let v = (y as f64 + 0.5) / resolution as f64;
        let mottle = noise_img.sample(u * lattice as f64, v * lattice as f64);
        let waves = 0.035 * (u * 70.0 + 2.0 * (v * 9.0 + phase[0]).sin()).sin() * (v * 31.0 + phase[1]).cos();
        let mut c = [0.0; 3];
        for k in 0..3 {
            c[k] = base[k] + mottle[k] + waves;
        }
        for (center, r, tint) in &spots {
            // wrap so that spot density is uniform up to the borders
            let du = (u - center[0] + 0.5).rem_euclid(1.0) - 0.5;
            let dv = (v - center[1] + 0.5).rem_euclid(1.0) - 0.5;
            let w = (-(du * du + dv * dv) / (r * r)).exp();
            for k in 0..3 {
                c[k] += w * tint[k];
            }
        }
        c.map(|ch| ch.clamp(0.1, 0.85))
    })
}

/// A refinement problem with known answer: the input photo is a rendering
/// of the ground-truth texture, and the content texture is a blurred,
/// color-shifted copy of it.
#[derive(Debug, Clone)]
pub struct SyntheticProblem {
    pub scene: Scene,
    pub ground_truth: TextureMap,
    pub input_image: RgbImage,
    pub content: TextureMap,
}

pub const CONTENT_BLUR_SIGMA: f64 = 2.0;
pub const CONTENT_SHIFT: f64 = 0.1;

pub fn synthetic_problem(image_size: usize, texture_resolution: usize, seed: u64) -> Result<SyntheticProblem> {
    let scene = curved_strip(image_size, 48, 24);
    let gt = TextureMap::complete(skin_texture(texture_resolution, seed))?;
    let input_image = raster::render(&scene.mesh, &gt, &scene.pose)?.pixels;
    let mut degraded = gt.pixels().gaussian_blur(CONTENT_BLUR_SIGMA);
    degraded.data_mut().iter_mut().for_each(|v| *v += CONTENT_SHIFT);
    let content = TextureMap::complete(degraded)?;
    Ok(SyntheticProblem {
        scene,
        ground_truth: gt,
        input_image,
        content,
    })
}
