//! Texture-differentiable rasterizer.
//!
//! Rasterization (which triangle and which UV each pixel sees) depends only
//! on mesh and pose, so it is computed once and reused. Shading is a linear
//! map from texels to pixels: every covered pixel is a bilinear blend of
//! four texels at its interpolated UV. The gradient with respect to the
//! texture is the transpose of that map.

use crate::camera::{CameraPose, NEAR_PLANE};
use crate::error::Result;
use crate::geometry::{barycentric, check_texture_resolution};
use crate::image::{Mask, RgbImage, TextureMap};
use crate::linalg::{cross, dot, sub};
use crate::mesh::FaceMesh;

/// What a covered pixel sees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fragment {
    pub triangle: u32,
    pub uv: [f64; 2],
}

/// Visibility-resolved rasterization of a mesh under a pose.
#[derive(Debug, Clone)]
pub struct Rasterization {
    width: usize,
    height: usize,
    fragments: Vec<Option<Fragment>>,
    depth: Vec<f32>,
}

/// Rasterizes front-facing triangles at pixel centers with a 32-bit depth
/// buffer; the closest fragment wins and ties go to the lower triangle index.
/// UVs are interpolated perspective-correctly. Triangles with a vertex on or
/// behind the near plane are skipped.
pub fn rasterize(mesh: &FaceMesh, pose: &CameraPose) -> Rasterization {
    let (width, height) = pose.image_size();
    let mut fragments = vec![None; width * height];
    let mut depth = vec![f32::INFINITY; width * height];
    let cam: Vec<_> = mesh.vertices().iter().map(|v| pose.to_camera(*v)).collect();
    let uv = mesh.uv();
    for (f, tri) in mesh.triangles().iter().enumerate() {
        let p = tri.map(|v| cam[v]);
        if p.iter().any(|q| q[2] <= NEAR_PLANE) {
            continue;
        }
        let normal = cross(sub(p[1], p[0]), sub(p[2], p[0]));
        if dot(normal, p[0]) >= 0.0 {
            continue;
        }
        let s = p.map(|q| pose.project_camera(q).expect("in front of camera"));
        let area = (s[1][0] - s[0][0]) * (s[2][1] - s[0][1]) - (s[1][1] - s[0][1]) * (s[2][0] - s[0][0]);
        if area.abs() < 1e-12 {
            continue;
        }
        let min_x = s.iter().map(|q| q[0]).fold(f64::INFINITY, f64::min);
        let max_x = s.iter().map(|q| q[0]).fold(f64::NEG_INFINITY, f64::max);
        let min_y = s.iter().map(|q| q[1]).fold(f64::INFINITY, f64::min);
        let max_y = s.iter().map(|q| q[1]).fold(f64::NEG_INFINITY, f64::max);
        let x0 = (min_x - 0.5).ceil().max(0.0);
        let y0 = (min_y - 0.5).ceil().max(0.0);
        let x1 = (max_x - 0.5).floor().min(width as f64 - 1.0);
        let y1 = (max_y - 0.5).floor().min(height as f64 - 1.0);
        if x1 < x0 || y1 < y0 {
            continue;
        }
        for y in y0 as usize..=y1 as usize {
            for x in x0 as usize..=x1 as usize {
                let c = [x as f64 + 0.5, y as f64 + 0.5];
                let Some(b) = barycentric(s, area, c, 1e-9) else { continue };
                let w = [b[0] / p[0][2], b[1] / p[1][2], b[2] / p[2][2]];
                let sum = w[0] + w[1] + w[2];
                let z = (1.0 / sum) as f32;
                let idx = y * width + x;
                if z < depth[idx] {
                    depth[idx] = z;
                    let mut t = [0.0; 2];
                    for k in 0..3 {
                        let wk = w[k] / sum;
                        t[0] += wk * uv[tri[k]][0];
                        t[1] += wk * uv[tri[k]][1];
                    }
                    fragments[idx] = Some(Fragment {
                        triangle: f as u32,
                        uv: t,
                    });
                }
            }
        }
    }
    Rasterization {
        width,
        height,
        fragments,
        depth,
    }
}

impl Rasterization {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn fragment(&self, x: usize, y: usize) -> Option<Fragment> {
        self.fragments[y * self.width + x]
    }

    pub fn coverage(&self) -> Mask {
        Mask::from_raw(
            self.width,
            self.height,
            self.fragments.iter().map(Option::is_some).collect(),
        )
        .expect("sizes agree")
    }

    /// Depth buffer as an image: near is bright, far is dark, background black.
    pub fn depth_image(&self) -> RgbImage {
        let finite = self.depth.iter().filter(|d| d.is_finite());
        let lo = finite.clone().cloned().fold(f32::INFINITY, f32::min);
        let hi = finite.cloned().fold(f32::NEG_INFINITY, f32::max);
        let span = (hi - lo).max(f32::EPSILON);
        RgbImage::from_fn(self.width, self.height, |x, y| {
            let d = self.depth[y * self.width + x];
            if d.is_finite() {
                let g = 1.0 - 0.8 * f64::from((d - lo) / span);
                [g; 3]
            } else {
                [0.0; 3]
            }
        })
    }

    /// Precomputes the texel taps of every covered pixel for textures of
    /// side `resolution`.
    pub fn sampler(&self, resolution: usize) -> Result<TextureSampler> {
        check_texture_resolution(resolution)?;
        let res = resolution as f64;
        let taps = self
            .fragments
            .iter()
            .enumerate()
            .filter_map(|(i, f)| {
                f.map(|f| {
                    let t = RgbImage::bilinear_taps(resolution, resolution, f.uv[0] * res, f.uv[1] * res);
                    (i as u32, t.map(|(k, w)| (k as u32, w)))
                })
            })
            .collect();
        Ok(TextureSampler {
            width: self.width,
            height: self.height,
            resolution,
            taps,
        })
    }

    pub fn shade(&self, texture: &RgbImage) -> Result<RenderedImage> {
        let sampler = self.sampler(texture.width())?;
        Ok(RenderedImage {
            pixels: sampler.render(texture),
            coverage: self.coverage(),
        })
    }
}

/// Pixel-to-texel weights of a rasterization at one texture resolution.
#[derive(Debug, Clone)]
pub struct TextureSampler {
    width: usize,
    height: usize,
    resolution: usize,
    taps: Vec<(u32, [(u32, f64); 4])>,
}

impl TextureSampler {
    pub fn resolution(&self) -> usize {
        self.resolution
    }

    /// Renders a `resolution x resolution` texture. Uncovered pixels are black.
    pub fn render(&self, texture: &RgbImage) -> RgbImage {
        debug_assert_eq!(texture.width(), self.resolution);
        let src = texture.data();
        let mut out = RgbImage::new(self.width, self.height);
        let dst = out.data_mut();
        for (pixel, taps) in &self.taps {
            let o = *pixel as usize * 3;
            for &(k, w) in taps {
                let s = k as usize * 3;
                dst[o] += w * src[s];
                dst[o + 1] += w * src[s + 1];
                dst[o + 2] += w * src[s + 2];
            }
        }
        out
    }

    /// Gradient with respect to the texture given the gradient with respect
    /// to the rendered image.
    pub fn backward(&self, grad_pixels: &RgbImage) -> RgbImage {
        let g = grad_pixels.data();
        let mut out = RgbImage::new(self.resolution, self.resolution);
        let dst = out.data_mut();
        for (pixel, taps) in &self.taps {
            let o = *pixel as usize * 3;
            for &(k, w) in taps {
                let s = k as usize * 3;
                dst[s] += w * g[o];
                dst[s + 1] += w * g[o + 1];
                dst[s + 2] += w * g[o + 2];
            }
        }
        out
    }
}

/// Rendered photograph-space image of a textured mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedImage {
    pub pixels: RgbImage,
    pub coverage: Mask,
}

pub fn render(mesh: &FaceMesh, texture: &TextureMap, pose: &CameraPose) -> Result<RenderedImage> {
    check_texture_resolution(texture.resolution())?;
    rasterize(mesh, pose).shade(texture.pixels())
}

/// Pixels covered by the face under the pose.
pub fn face_mask(mesh: &FaceMesh, pose: &CameraPose) -> Mask {
    rasterize(mesh, pose).coverage()
}
