use proptest::prelude::*;

use uvrefine::config::RunConfig;
use uvrefine::features::HypercolumnSet;
use uvrefine::io::{decode_rgb, encode_rgb};
use uvrefine::losses::{content_loss, remd_loss};
use uvrefine::metrics::{mae, mse, psnr};
use uvrefine::{CameraPose, FaceMesh, Intrinsics, RgbImage};

fn rotation(yaw: f64, pitch: f64, roll: f64) -> [[f64; 3]; 3] {
    let (sy, cy) = yaw.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sr, cr) = roll.sin_cos();
    let rz = [[cr, -sr, 0.0], [sr, cr, 0.0], [0.0, 0.0, 1.0]];
    let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
    let rx = [[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]];
    let mul = |a: [[f64; 3]; 3], b: [[f64; 3]; 3]| {
        let mut m = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
            }
        }
        m
    };
    mul(mul(rz, ry), rx)
}

fn grid_mesh(n: usize, heights: &[f64]) -> FaceMesh {
    let mut vertices = Vec::new();
    let mut uv = Vec::new();
    for j in 0..=n {
        for i in 0..=n {
            let (u, v) = (i as f64 / n as f64, j as f64 / n as f64);
            vertices.push([u - 0.5, v - 0.5, 4.0 + heights[(j * (n + 1) + i) % heights.len()]]);
            uv.push([u, v]);
        }
    }
    let mut triangles = Vec::new();
    for j in 0..n {
        for i in 0..n {
            let a = j * (n + 1) + i;
            triangles.push([a, a + 1, a + n + 2]);
            triangles.push([a, a + n + 2, a + n + 1]);
        }
    }
    FaceMesh::new(vertices, triangles, uv).unwrap()
}

fn image_strategy(side: usize) -> impl Strategy<Value = RgbImage> {
    prop::collection::vec(0.0f64..1.0, side * side * 3).prop_map(move |d| RgbImage::from_raw(side, side, d).unwrap())
}

fn rows(count: usize, dims: usize) -> impl Strategy<Value = HypercolumnSet> {
    prop::collection::vec(prop::collection::vec(-1.0f64..1.0, dims), count)
        .prop_filter("nonzero rows", |r| r.iter().all(|v| v.iter().any(|x| x.abs() > 1e-3)))
        .prop_map(|r| HypercolumnSet::from_rows(r).unwrap())
}

fn row_pair() -> impl Strategy<Value = (HypercolumnSet, HypercolumnSet)> {
    (2usize..8).prop_flat_map(|n| (rows(n, 5), rows(n, 5)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn obj_round_trip(n in 1usize..6, heights in prop::collection::vec(-1.0f64..1.0, 1..20)) {
        let mesh = grid_mesh(n, &heights);
        let again = FaceMesh::parse_obj(&mesh.to_obj()).unwrap();
        prop_assert_eq!(mesh.vertices(), again.vertices());
        prop_assert_eq!(mesh.triangles(), again.triangles());
        for (a, b) in mesh.uv().iter().zip(again.uv()) {
            prop_assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn pose_round_trip(
        yaw in -1.5f64..1.5, pitch in -1.5f64..1.5, roll in -3.0f64..3.0,
        t in prop::array::uniform3(-10.0f64..10.0),
        focal in 1.0f64..2000.0, w in 1usize..4096, h in 1usize..4096,
    ) {
        let intrinsics = Intrinsics { focal, principal_point: [w as f64 / 2.0, h as f64 / 2.0], width: w, height: h };
        let pose = CameraPose::new(rotation(yaw, pitch, roll), t, intrinsics).unwrap();
        prop_assert_eq!(CameraPose::parse_json(&pose.to_json()).unwrap(), pose);
    }

    #[test]
    fn png_round_trip_of_quantized_images(levels in prop::collection::vec(0u8..=255, 8 * 8 * 3)) {
        let img = RgbImage::from_raw(8, 8, levels.iter().map(|&l| l as f64 / 255.0).collect()).unwrap();
        prop_assert_eq!(decode_rgb(&encode_rgb(&img)), img);
    }

    #[test]
    fn metric_relations(a in image_strategy(12), b in image_strategy(12)) {
        prop_assert_eq!(psnr(&a, &b, None).unwrap(), psnr(&b, &a, None).unwrap());
        // the mean absolute error never exceeds the root mean square error
        prop_assert!(mae(&a, &b, None).unwrap() <= mse(&a, &b, None).unwrap().sqrt() + 1e-12);
        prop_assert!(psnr(&a, &a, None).unwrap().is_infinite());
    }

    #[test]
    fn feature_losses_are_bounded((x, y) in row_pair()) {
        let c = content_loss(&x, &y).unwrap();
        let r = remd_loss(&x, &y).unwrap();
        // cosine distances lie in [0, 2]
        prop_assert!((0.0..=2.0 + 1e-12).contains(&c));
        prop_assert!((0.0..=2.0 + 1e-12).contains(&r));
    }

    #[test]
    fn config_overrides_survive_serialization(seed in 0u64..1000, iterations in 1usize..500, lr in 0.001f64..2.0) {
        let overrides = [
            format!("seed={seed}"),
            format!("schedule.iterations={iterations}"),
            format!("schedule.learning_rate={lr:?}"),
        ];
        let config = RunConfig::build("", None, &overrides).unwrap();
        prop_assert_eq!(config.seed, seed);
        prop_assert_eq!(config.schedule().iterations, iterations);
        let again = RunConfig::build(&config.to_toml(), None, &[]).unwrap();
        prop_assert_eq!(again.sha256(), config.sha256());
    }
}
