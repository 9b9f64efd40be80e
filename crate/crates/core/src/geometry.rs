//! Mesh/image/UV correspondences and construction of the style texture.
//!
//! The style texture is the input photograph resampled into UV space over
//! the part of the face that looks at the camera. Visibility is decided per
//! vertex from the normal; a UV texel is kept only when all three vertices
//! of its triangle are visible, and the resulting mask is cleaned by a
//! morphological opening followed by a closing.

use crate::camera::CameraPose;
use crate::error::{Error, Result};
use crate::image::{Mask, RgbImage, TextureMap};
use crate::linalg::{dot, Vec3};
use crate::mesh::FaceMesh;

pub use crate::mesh::vertex_normals;

/// Visibility score threshold; vertices scoring below it are invisible.
pub const DEFAULT_VISIBILITY_THRESHOLD: f64 = 0.6;

/// Recomputes area-weighted vertex normals and returns the updated mesh.
pub fn compute_vertex_normals(mesh: &FaceMesh) -> FaceMesh {
    let mut out = mesh.clone();
    out.recompute_normals();
    out
}

/// Normal-alignment score of every vertex: `1.0` when the normal points
/// straight back at the camera, `-1.0` when it points away.
pub fn visibility_scores(mesh: &FaceMesh, pose: &CameraPose) -> Vec<f64> {
    let forward = pose.view_direction();
    mesh.normals().iter().map(|n| -dot(forward, *n)).collect()
}

/// Per-vertex visibility: a vertex is visible when its score is at least
/// `threshold`.
pub fn compute_visibility(mesh: &FaceMesh, pose: &CameraPose, threshold: f64) -> Result<Vec<bool>> {
    if !(threshold > -1.0 && threshold < 1.0) {
        return Err(Error::InvalidInput(format!(
            "visibility threshold {threshold} outside (-1, 1)"
        )));
    }
    Ok(visibility_scores(mesh, pose)
        .into_iter()
        .map(|s| s >= threshold)
        .collect())
}

/// Texture sides accepted by UV-space operations.
pub fn check_texture_resolution(res: usize) -> Result<()> {
    if res.is_power_of_two() && (2..=8192).contains(&res) {
        Ok(())
    } else {
        Err(Error::UnsupportedResolution(res))
    }
}

/// Per-texel triangle assignment in UV space.
#[derive(Debug, Clone)]
pub struct UvRaster {
    resolution: usize,
    triangle: Vec<Option<u32>>,
    bary: Vec<[f64; 3]>,
}

impl UvRaster {
    /// Rasterizes every triangle accepted by `include` at texel centers.
    /// Overlapping triangles resolve to the lowest index.
    pub fn new(mesh: &FaceMesh, resolution: usize, include: impl Fn(usize) -> bool) -> Result<Self> {
        check_texture_resolution(resolution)?;
        let n = resolution * resolution;
        let mut triangle = vec![None; n];
        let mut bary = vec![[0.0; 3]; n];
        let res = resolution as f64;
        let uv = mesh.uv();
        for (f, tri) in mesh.triangles().iter().enumerate() {
            if !include(f) {
                continue;
            }
            let p = tri.map(|v| [uv[v][0] * res, uv[v][1] * res]);
            let area = edge(p[0], p[1], p[2]);
            if area.abs() < 1e-12 {
                continue;
            }
            let min_x = p.iter().map(|q| q[0]).fold(f64::INFINITY, f64::min);
            let max_x = p.iter().map(|q| q[0]).fold(f64::NEG_INFINITY, f64::max);
            let min_y = p.iter().map(|q| q[1]).fold(f64::INFINITY, f64::min);
            let max_y = p.iter().map(|q| q[1]).fold(f64::NEG_INFINITY, f64::max);
            let x0 = ((min_x - 0.5).ceil().max(0.0)) as usize;
            let y0 = ((min_y - 0.5).ceil().max(0.0)) as usize;
            let x1 = ((max_x - 0.5).floor().min(res - 1.0)).max(-1.0);
            let y1 = ((max_y - 0.5).floor().min(res - 1.0)).max(-1.0);
            if x1 < 0.0 || y1 < 0.0 {
                continue;
            }
            for y in y0..=y1 as usize {
                for x in x0..=x1 as usize {
                    let idx = y * resolution + x;
                    if triangle[idx].is_some() {
                        continue;
                    }
                    let c = [x as f64 + 0.5, y as f64 + 0.5];
                    if let Some(b) = barycentric(p, area, c, 1e-9) {
                        triangle[idx] = Some(f as u32);
                        bary[idx] = b;
                    }
                }
            }
        }
        Ok(Self {
            resolution,
            triangle,
            bary,
        })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn triangle_at(&self, x: usize, y: usize) -> Option<(usize, [f64; 3])> {
        let i = y * self.resolution + x;
        self.triangle[i].map(|t| (t as usize, self.bary[i]))
    }

    pub fn coverage(&self) -> Mask {
        Mask::from_raw(
            self.resolution,
            self.resolution,
            self.triangle.iter().map(Option::is_some).collect(),
        )
        .expect("sizes agree")
    }
}

#[inline]
fn edge(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

/// Barycentric coordinates of `c`; `None` when outside by more than `tol`.
#[inline]
pub(crate) fn barycentric(p: [[f64; 2]; 3], area: f64, c: [f64; 2], tol: f64) -> Option<[f64; 3]> {
    let b = barycentric_unchecked(p, area, c);
    (b.iter().all(|&w| w >= -tol)).then_some(b)
}

#[inline]
fn barycentric_unchecked(p: [[f64; 2]; 3], area: f64, c: [f64; 2]) -> [f64; 3] {
    [
        edge(p[1], p[2], c) / area,
        edge(p[2], p[0], c) / area,
        edge(p[0], p[1], c) / area,
    ]
}

/// UV coverage of the whole mesh.
pub fn uv_coverage_mask(mesh: &FaceMesh, resolution: usize) -> Result<Mask> {
    Ok(UvRaster::new(mesh, resolution, |_| true)?.coverage())
}

/// Initial UV visibility mask: texels covered by a triangle whose three
/// vertices are visible.
pub fn rasterize_visibility_mask(mesh: &FaceMesh, visibility: &[bool], resolution: usize) -> Result<Mask> {
    if visibility.len() != mesh.vertex_count() {
        return Err(Error::InvalidInput(format!(
            "visibility has {} entries for {} vertices",
            visibility.len(),
            mesh.vertex_count()
        )));
    }
    let tris = mesh.triangles();
    Ok(UvRaster::new(mesh, resolution, |f| tris[f].iter().all(|&v| visibility[v]))?.coverage())
}

fn disk_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                out.push((dx, dy));
            }
        }
    }
    out
}

/// Binary dilation with a disk of `radius`; out-of-image pixels are ignored.
pub fn dilate(mask: &Mask, radius: usize) -> Mask {
    if radius == 0 {
        return mask.clone();
    }
    let offsets = disk_offsets(radius);
    let (w, h) = (mask.width() as isize, mask.height() as isize);
    let mut out = Mask::new(mask.width(), mask.height());
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x as usize, y as usize) {
                continue;
            }
            for &(dx, dy) in &offsets {
                let (nx, ny) = (x + dx, y + dy);
                if nx >= 0 && ny >= 0 && nx < w && ny < h {
                    out.set(nx as usize, ny as usize, true);
                }
            }
        }
    }
    out
}

/// Binary erosion with a disk of `radius`; out-of-image pixels are ignored.
pub fn erode(mask: &Mask, radius: usize) -> Mask {
    if radius == 0 {
        return mask.clone();
    }
    let offsets = disk_offsets(radius);
    let (w, h) = (mask.width() as isize, mask.height() as isize);
    Mask::from_fn(mask.width(), mask.height(), |x, y| {
        let (x, y) = (x as isize, y as isize);
        mask.get(x as usize, y as usize)
            && offsets.iter().all(|&(dx, dy)| {
                let (nx, ny) = (x + dx, y + dy);
                nx < 0 || ny < 0 || nx >= w || ny >= h || mask.get(nx as usize, ny as usize)
            })
    })
}

pub fn open(mask: &Mask, radius: usize) -> Mask {
    dilate(&erode(mask, radius), radius)
}

pub fn close(mask: &Mask, radius: usize) -> Mask {
    erode(&dilate(mask, radius), radius)
}

/// Opening with `open_radius`, then closing with `close_radius`.
pub fn clean_mask(mask: &Mask, open_radius: usize, close_radius: usize) -> Mask {
    close(&open(mask, open_radius), close_radius)
}

/// Disk radii for mask cleanup, in texels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MorphologyParams {
    pub open_radius: usize,
    pub close_radius: usize,
}

impl MorphologyParams {
    /// Radii configured at 512 texels, scaled proportionally to `resolution`.
    pub fn scaled(open_at_512: usize, close_at_512: usize, resolution: usize) -> Self {
        let s = resolution as f64 / 512.0;
        Self {
            open_radius: (open_at_512 as f64 * s).round() as usize,
            close_radius: (close_at_512 as f64 * s).round() as usize,
        }
    }

    pub fn default_for(resolution: usize) -> Self {
        Self::scaled(3, 6, resolution)
    }
}

/// Vertex correspondences: `image[v]` is the projected pixel position of
/// vertex `v` (`None` behind the camera) and `uv[v]` its UV pixel position.
#[derive(Debug, Clone)]
pub struct Mappings {
    pub image: Vec<Option<[f64; 2]>>,
    pub uv: Vec<[f64; 2]>,
}

impl Mappings {
    pub fn behind_camera(&self) -> Vec<usize> {
        self.image
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.is_none().then_some(i))
            .collect()
    }
}

pub fn build_mappings(mesh: &FaceMesh, pose: &CameraPose, uv_resolution: usize) -> Mappings {
    let res = uv_resolution as f64;
    Mappings {
        image: mesh.vertices().iter().map(|v| pose.project(*v)).collect(),
        uv: mesh.uv().iter().map(|t| [t[0] * res, t[1] * res]).collect(),
    }
}

/// Parameters of style-texture construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StyleParams {
    pub threshold: f64,
    pub morphology: MorphologyParams,
}

impl StyleParams {
    pub fn default_for(resolution: usize) -> Self {
        Self {
            threshold: DEFAULT_VISIBILITY_THRESHOLD,
            morphology: MorphologyParams::default_for(resolution),
        }
    }
}

/// Intermediate products of style-texture construction.
#[derive(Debug, Clone)]
pub struct StyleImage {
    pub texture: TextureMap,
    /// Visibility mask before cleanup.
    pub raw_mask: Mask,
    pub visibility: Vec<bool>,
}

/// Resamples the photograph into UV space over the cleaned visibility mask.
pub fn sample_style_image(
    input: &RgbImage,
    mesh: &FaceMesh,
    pose: &CameraPose,
    uv_resolution: usize,
    params: &StyleParams,
) -> Result<StyleImage> {
    let (w, h) = pose.image_size();
    if input.width() != w || input.height() != h {
        return Err(Error::InvalidInput(format!(
            "input image is {}x{} but the pose expects {w}x{h}",
            input.width(),
            input.height()
        )));
    }
    let mappings = build_mappings(mesh, pose, uv_resolution);
    let inside = |p: &[f64; 2]| p[0] >= 0.0 && p[1] >= 0.0 && p[0] < w as f64 && p[1] < h as f64;
    if !mappings.image.iter().flatten().any(inside) {
        return Err(Error::InvalidInput(format!(
            "the mesh projects entirely outside the {w}x{h} image"
        )));
    }
    let mut visibility = compute_visibility(mesh, pose, params.threshold)?;
    for v in mappings.behind_camera() {
        visibility[v] = false;
    }
    let raw_mask = rasterize_visibility_mask(mesh, &visibility, uv_resolution)?;
    let cleaned = clean_mask(
        &raw_mask,
        params.morphology.open_radius,
        params.morphology.close_radius,
    );
    if cleaned.is_empty() {
        return Err(Error::NoVisibleRegion);
    }

    let raster = UvRaster::new(mesh, uv_resolution, |_| true)?;
    let search = params.morphology.close_radius + 2;
    let camera_points: Vec<Vec3> = mesh.vertices().iter().map(|v| pose.to_camera(*v)).collect();
    let mut pixels = RgbImage::new(uv_resolution, uv_resolution);
    for y in 0..uv_resolution {
        for x in 0..uv_resolution {
            if !cleaned.get(x, y) {
                continue;
            }
            let hit = raster
                .triangle_at(x, y)
                .or_else(|| extrapolate_nearest(mesh, &raster, x, y, search));
            let Some((f, b)) = hit else { continue };
            let tri = mesh.triangles()[f];
            let mut p = [0.0; 3];
            for k in 0..3 {
                for c in 0..3 {
                    p[c] += b[k] * camera_points[tri[k]][c];
                }
            }
            if let Some(q) = pose.project_camera(p) {
                pixels.set(x, y, input.sample(q[0], q[1]));
            }
        }
    }
    Ok(StyleImage {
        texture: TextureMap::new(pixels, cleaned)?,
        raw_mask,
        visibility,
    })
}

/// Barycentrics of a texel outside the UV coverage, extended from the
/// triangle of the nearest covered texel within `radius`.
fn extrapolate_nearest(
    mesh: &FaceMesh,
    raster: &UvRaster,
    x: usize,
    y: usize,
    radius: usize,
) -> Option<(usize, [f64; 3])> {
    let res = raster.resolution() as isize;
    let r = radius as isize;
    let mut best: Option<(isize, usize)> = None;
    for dy in -r..=r {
        for dx in -r..=r {
            let (nx, ny) = (x as isize + dx, y as isize + dy);
            if nx < 0 || ny < 0 || nx >= res || ny >= res {
                continue;
            }
            let d = dx * dx + dy * dy;
            if d > r * r || best.is_some_and(|(bd, _)| bd <= d) {
                continue;
            }
            if let Some((f, _)) = raster.triangle_at(nx as usize, ny as usize) {
                best = Some((d, f));
            }
        }
    }
    let (_, f) = best?;
    let uv = mesh.uv();
    let resf = raster.resolution() as f64;
    let p = mesh.triangles()[f].map(|v| [uv[v][0] * resf, uv[v][1] * resf]);
    let area = edge(p[0], p[1], p[2]);
    Some((f, barycentric_unchecked(p, area, [x as f64 + 0.5, y as f64 + 0.5])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Intrinsics;
    use crate::linalg::axis_angle;
    use crate::scene;

    fn brute_erode(m: &Mask, r: usize) -> Mask {
        let r = r as isize;
        Mask::from_fn(m.width(), m.height(), |x, y| {
            let mut ok = m.get(x, y);
            for dy in -r..=r {
                for dx in -r..=r {
                    if dx * dx + dy * dy > r * r {
                        continue;
                    }
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    if nx >= 0 && ny >= 0 && (nx as usize) < m.width() && (ny as usize) < m.height() {
                        ok &= m.get(nx as usize, ny as usize);
                    }
                }
            }
            ok
        })
    }

    fn brute_dilate(m: &Mask, r: usize) -> Mask {
        let r = r as isize;
        Mask::from_fn(m.width(), m.height(), |x, y| {
            for dy in -r..=r {
                for dx in -r..=r {
                    if dx * dx + dy * dy > r * r {
                        continue;
                    }
                    let (nx, ny) = (x as isize - dx, y as isize - dy);
                    if nx >= 0
                        && ny >= 0
                        && (nx as usize) < m.width()
                        && (ny as usize) < m.height()
                        && m.get(nx as usize, ny as usize)
                    {
                        return true;
                    }
                }
            }
            false
        })
    }

    #[test]
    fn zero_radii_is_identity() {
        let m = Mask::from_fn(16, 16, |x, y| (x * 7 + y * 3) % 5 == 0);
        assert_eq!(clean_mask(&m, 0, 0), m);
    }

    #[test]
    fn opening_removes_isolated_speck() {
        let mut m = Mask::new(16, 16);
        m.set(8, 8, true);
        assert!(clean_mask(&m, 2, 0).is_empty());
    }

    #[test]
    fn closing_fills_hole_and_matches_oracle() {
        let mut m = Mask::from_fn(40, 40, |x, y| (8..32).contains(&x) && (8..32).contains(&y));
        for y in 18..21 {
            for x in 18..21 {
                m.set(x, y, false);
            }
        }
        let closed = clean_mask(&m, 0, 3);
        assert!((18..21).all(|y| (18..21).all(|x| closed.get(x, y))));
        let oracle = brute_erode(&brute_dilate(&m, 3), 3);
        assert_eq!(closed, oracle);
        // exterior boundary moves by less than one element width
        let dil = brute_dilate(&m, 3);
        assert!(closed.is_subset_of(&dil));
    }

    #[test]
    fn erosion_and_dilation_match_brute_force() {
        let m = Mask::from_fn(23, 19, |x, y| ((x * 31 + y * 17) ^ (x * y)) % 3 != 0);
        for r in 0..4 {
            assert_eq!(erode(&m, r), brute_erode(&m, r), "erode r={r}");
            assert_eq!(dilate(&m, r), brute_dilate(&m, r), "dilate r={r}");
        }
    }

    fn front_pose() -> CameraPose {
        CameraPose::new(
            axis_angle([0.0, 1.0, 0.0], 0.0),
            [0.0, 0.0, 50.0],
            Intrinsics {
                focal: 1000.0,
                principal_point: [32.0, 32.0],
                width: 64,
                height: 64,
            },
        )
        .unwrap()
    }

    #[test]
    fn facing_vertex_scores_one_and_threshold_is_inclusive() {
        let pose = front_pose();
        // camera forward is +z, so a normal of -z faces the camera
        let facing = FaceMesh::new(
            vec![[0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]],
            vec![[0, 1, 2]],
            vec![[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]],
        )
        .unwrap();
        assert_eq!(facing.normals()[0], [0.0, 0.0, -1.0]);
        assert_eq!(visibility_scores(&facing, &pose), vec![1.0; 3]);

        // face normal (0, -4, -3) / 5 scores exactly 0.6
        let tilted = FaceMesh::new(
            vec![[0.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 3.0, -4.0]],
            vec![[0, 1, 2]],
            vec![[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]],
        )
        .unwrap();
        assert_eq!(visibility_scores(&tilted, &pose), vec![0.6; 3]);
        assert!(compute_visibility(&tilted, &pose, 0.6).unwrap().iter().all(|&v| v));
        assert!(!compute_visibility(&tilted, &pose, 0.6 + 1e-12).unwrap()[0]);
        assert!(compute_visibility(&tilted, &pose, 1.0).is_err());
    }

    #[test]
    fn sphere_visible_fraction_matches_enumeration() {
        let mesh = scene::icosphere(3);
        let pose = CameraPose::new(
            axis_angle([0.0, 1.0, 0.0], std::f64::consts::PI),
            [0.0, 0.0, 1000.0],
            *front_pose().intrinsics(),
        )
        .unwrap();
        // camera at +z in object space looking toward -z
        let vis = compute_visibility(&mesh, &pose, 0.6).unwrap();
        let expected = mesh
            .normals()
            .iter()
            .filter(|n| n[2] >= 0.6)
            .count();
        assert_eq!(vis.iter().filter(|&&v| v).count(), expected);
    }

    #[test]
    fn visibility_is_monotone_in_threshold() {
        let mesh = scene::icosphere(2);
        let pose = front_pose();
        let mut prev = usize::MAX;
        for t in [-0.9, -0.5, 0.0, 0.3, 0.6, 0.9] {
            let n = compute_visibility(&mesh, &pose, t).unwrap().iter().filter(|&&v| v).count();
            assert!(n <= prev);
            prev = n;
        }
    }

    #[test]
    fn visibility_mask_extremes() {
        let mesh = scene::screen_quad(64).mesh;
        let all = rasterize_visibility_mask(&mesh, &vec![true; mesh.vertex_count()], 32).unwrap();
        assert_eq!(all, uv_coverage_mask(&mesh, 32).unwrap());
        let none = rasterize_visibility_mask(&mesh, &vec![false; mesh.vertex_count()], 32).unwrap();
        assert!(none.is_empty());
    }

    #[test]
    fn uv_mapping_half_pixel_convention() {
        let q = scene::screen_quad(64);
        let m = build_mappings(&q.mesh, &q.pose, 512);
        let mesh = FaceMesh::new(vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], vec![[0, 1, 2]],
            vec![[0.5, 0.5], [1.0, 0.5], [0.5, 1.0]]).unwrap();
        assert_eq!(build_mappings(&mesh, &q.pose, 512).uv[0], [256.0, 256.0]);
        assert_eq!(m.uv.len(), q.mesh.vertex_count());
    }

    #[test]
    fn constant_gray_style_image() {
        let q = scene::screen_quad(64);
        let gray = RgbImage::filled(64, 64, [0.4; 3]);
        let s = sample_style_image(&gray, &q.mesh, &q.pose, 64, &StyleParams::default_for(64)).unwrap();
        let tex = &s.texture;
        for y in 0..64 {
            for x in 0..64 {
                let expect = if tex.validity().get(x, y) { [0.4; 3] } else { [0.0; 3] };
                let got = tex.pixels().get(x, y);
                assert!((0..3).all(|c| (got[c] - expect[c]).abs() < 1e-12));
            }
        }
    }

    #[test]
    fn back_facing_mesh_has_no_visible_region() {
        let q = scene::screen_quad(64);
        let flipped = FaceMesh::new(
            q.mesh.vertices().to_vec(),
            q.mesh.triangles().iter().map(|t| [t[0], t[2], t[1]]).collect(),
            q.mesh.uv().to_vec(),
        )
        .unwrap();
        let img = RgbImage::filled(64, 64, [0.5; 3]);
        let err = sample_style_image(&img, &flipped, &q.pose, 64, &StyleParams::default_for(64)).unwrap_err();
        assert!(matches!(err, Error::NoVisibleRegion));
    }

    #[test]
    fn off_image_projection_is_rejected() {
        let q = scene::screen_quad(64);
        let i = *q.pose.intrinsics();
        let shifted = Intrinsics {
            principal_point: [i.principal_point[0] + 500.0, i.principal_point[1]],
            ..i
        };
        let pose = CameraPose::new(*q.pose.rotation(), q.pose.translation(), shifted).unwrap();
        let img = RgbImage::filled(64, 64, [0.5; 3]);
        let err = sample_style_image(&img, &q.mesh, &pose, 64, &StyleParams::default_for(64)).unwrap_err();
        assert!(err.to_string().contains("entirely outside"), "{err}");
    }
}
