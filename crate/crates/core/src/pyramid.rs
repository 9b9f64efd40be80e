//! Laplacian pyramid used as the optimization parameterization.

use crate::error::{Error, Result};
use crate::image::RgbImage;

pub const DEFAULT_BASE_RESOLUTION: usize = 32;

/// `base` is the coarsest image; `details` run from coarse to fine, each
/// twice the side of the previous, the last at full resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianPyramid {
    pub base: RgbImage,
    pub details: Vec<RgbImage>,
}

impl LaplacianPyramid {
    pub fn decompose(image: &RgbImage, base_resolution: usize) -> Result<Self> {
        let side = image.width();
        if image.height() != side || !side.is_power_of_two() || !base_resolution.is_power_of_two() || side < base_resolution {
            return Err(Error::InvalidInput(format!(
                "pyramid needs a square power-of-two image of side >= {base_resolution}, got {}x{}",
                image.width(),
                image.height()
            )));
        }
        let mut levels = vec![image.clone()];
        while levels.last().unwrap().width() > base_resolution {
            let next = levels.last().unwrap().downsample2();
            levels.push(next);
        }
        let base = levels.pop().unwrap();
        let mut details = Vec::with_capacity(levels.len());
        let mut coarser = &base;
        for fine in levels.iter().rev() {
            let mut d = fine.clone();
            let up = coarser.upsample2();
            d.data_mut().iter_mut().zip(up.data()).for_each(|(a, b)| *a -= b);
            details.push(d);
            coarser = fine;
        }
        Ok(Self { base, details })
    }

    pub fn resolution(&self) -> usize {
        self.details.last().unwrap_or(&self.base).width()
    }

    pub fn level_count(&self) -> usize {
        self.details.len()
    }

    pub fn reconstruct(&self) -> RgbImage {
        self.reconstruct_levels(self.details.len())
    }

    /// Reconstruction from the base and the `levels` coarsest detail
    /// images: the pyramid's image at side `base * 2^levels`.
    pub fn reconstruct_levels(&self, levels: usize) -> RgbImage {
        let mut x = self.base.clone();
        for d in &self.details[..levels] {
            x = x.upsample2();
            x.add_assign(d);
        }
        x
    }

    /// Gradient with respect to every parameter given the gradient with
    /// respect to the reconstruction. Returned with the same layout.
    pub fn backward(&self, grad: &RgbImage) -> LaplacianPyramid {
        self.backward_levels(grad, self.details.len())
    }

    /// Adjoint of [`LaplacianPyramid::reconstruct_levels`]; the result holds
    /// `levels` detail images.
    pub fn backward_levels(&self, grad: &RgbImage, levels: usize) -> LaplacianPyramid {
        let mut details = vec![RgbImage::new(1, 1); levels];
        let mut g = grad.clone();
        for k in (0..levels).rev() {
            let next = g.upsample2_adjoint();
            details[k] = g;
            g = next;
        }
        LaplacianPyramid { base: g, details }
    }

    /// Number of detail levels needed to reach side `side`.
    pub fn levels_for(&self, side: usize) -> Option<usize> {
        (0..=self.details.len()).find(|&k| self.base.width() << k == side)
    }

    /// Applies `f(parameter, gradient)` over the base and the `levels`
    /// coarsest details; `grad` comes from [`LaplacianPyramid::backward_levels`].
    pub fn update_levels(&mut self, grad: &LaplacianPyramid, mut f: impl FnMut(&mut f64, f64)) {
        let n = grad.details.len();
        let params = self
            .base
            .data_mut()
            .iter_mut()
            .chain(self.details[..n].iter_mut().flat_map(|d| d.data_mut().iter_mut()));
        for (p, g) in params.zip(grad.parameters()) {
            f(p, *g);
        }
    }

    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.base
            .data_mut()
            .iter_mut()
            .chain(self.details.iter_mut().flat_map(|d| d.data_mut().iter_mut()))
    }

    pub fn parameters(&self) -> impl Iterator<Item = &f64> {
        self.base.data().iter().chain(self.details.iter().flat_map(|d| d.data().iter()))
    }

    pub fn zeros_like(&self) -> LaplacianPyramid {
        LaplacianPyramid {
            base: RgbImage::new(self.base.width(), self.base.height()),
            details: self.details.iter().map(|d| RgbImage::new(d.width(), d.height())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(side: usize, seed: u64) -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RgbImage::from_fn(side, side, |_, _| [rng.random(), rng.random(), rng.random()])
    }

    #[test]
    fn constant_image_has_zero_details() {
        let img = RgbImage::filled(128, 128, [0.3, 0.6, 0.9]);
        let p = LaplacianPyramid::decompose(&img, 32).unwrap();
        assert_eq!(p.level_count(), 2);
        assert!(p.details.iter().all(|d| d.data().iter().all(|v| *v == 0.0)));
        assert!(p.base.data().chunks(3).all(|c| c == [0.3, 0.6, 0.9]));
    }

    #[test]
    fn round_trip_is_exact() {
        let img = random_image(256, 1);
        let p = LaplacianPyramid::decompose(&img, DEFAULT_BASE_RESOLUTION).unwrap();
        assert_eq!(p.level_count(), 3);
        assert!(p.reconstruct().max_abs_diff(&img) < 1e-12);
    }

    #[test]
    fn impulse_matches_longhand_pyramid() {
        let mut img = RgbImage::new(64, 64);
        img.set(20, 33, [1.0, 0.0, 0.0]);
        let p = LaplacianPyramid::decompose(&img, 16).unwrap();
        // longhand: box-average 2x2 blocks, then subtract the bilinear upsample
        let half = RgbImage::from_fn(32, 32, |x, y| {
            let mut c = [0.0; 3];
            for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                let v = img.get(2 * x + dx, 2 * y + dy);
                for k in 0..3 {
                    c[k] += v[k] / 4.0;
                }
            }
            c
        });
        let coarse_weight = |i: usize, n: usize| -> Vec<(usize, f64)> {
            // fine index i samples coarse coordinate (i + 0.5) / 2 - 0.5
            let t = (i as f64 + 0.5) / 2.0 - 0.5;
            let lo = t.floor();
            let f = t - lo;
            let clamp = |v: f64| v.max(0.0).min((n - 1) as f64) as usize;
            vec![(clamp(lo), 1.0 - f), (clamp(lo + 1.0), f)]
        };
        let finest = p.details.last().unwrap();
        for y in 0..64 {
            for x in 0..64 {
                let mut up = 0.0;
                for &(cx, wx) in &coarse_weight(x, 32) {
                    for &(cy, wy) in &coarse_weight(y, 32) {
                        up += wx * wy * half.get(cx, cy)[0];
                    }
                }
                assert!((finest.get(x, y)[0] - (img.get(x, y)[0] - up)).abs() < 1e-12);
            }
        }
        let energy = |d: &RgbImage| d.data().iter().map(|v| v * v).sum::<f64>();
        let e: Vec<f64> = p.details.iter().map(energy).collect();
        assert!(e[1] > e[0] && e[1] > energy(&p.base));
    }

    #[test]
    fn truncated_reconstruction_is_the_downsampled_image() {
        let img = random_image(128, 5);
        let p = LaplacianPyramid::decompose(&img, 32).unwrap();
        assert_eq!(p.levels_for(64), Some(1));
        assert_eq!(p.levels_for(48), None);
        assert!(p.reconstruct_levels(1).max_abs_diff(&img.downsample2()) < 1e-12);
        assert!(p.reconstruct_levels(0).max_abs_diff(&p.base) == 0.0);
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(LaplacianPyramid::decompose(&RgbImage::new(48, 48), 16).is_err());
        assert!(LaplacianPyramid::decompose(&RgbImage::new(16, 16), 32).is_err());
        assert!(LaplacianPyramid::decompose(&RgbImage::new(64, 32), 16).is_err());
    }

    #[test]
    fn backward_is_the_adjoint() {
        let img = random_image(64, 2);
        let p = LaplacianPyramid::decompose(&img, 16).unwrap();
        let dir = LaplacianPyramid::decompose(&random_image(64, 3), 16).unwrap();
        let g = random_image(64, 4);
        // <g, R(dir)> = <R^T g, dir> since reconstruction is linear
        let lhs: f64 = g.data().iter().zip(dir.reconstruct().data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = p.backward(&g).parameters().zip(dir.parameters()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }
}
