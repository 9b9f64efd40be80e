//! Content, style and rendering losses with analytic gradients.
//!
//! Each `*_grad` function returns the loss value together with its gradient
//! with respect to the first (optimized) argument. Gradients of `|.|` and
//! `min` use the usual subgradient choices: `sign(0) = 0` and the lowest
//! index among tied minima.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::HypercolumnSet;
use crate::image::{Mask, RgbImage};

/// Floor on vector norms before cosine normalization.
pub const NORM_EPS: f64 = 1e-8;

/// Decorrelated color basis: luminance followed by two opponent axes.
pub const COLOR_DECORRELATION: [[f64; 3]; 3] = [
    [0.577350, 0.577350, 0.577350],
    [-0.577350, 0.788675, -0.211325],
    [-0.577350, -0.211325, 0.788675],
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 8.0,
            beta: 1.7,
            gamma: 20.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha.is_finite()
            && self.beta.is_finite()
            && self.gamma.is_finite()
            && self.alpha > 0.0
            && self.beta > 0.0
            && self.gamma >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "loss weights need alpha > 0, beta > 0, gamma >= 0, all finite; got {self:?}"
            )))
        }
    }

    /// Weight of the color term inside the style loss.
    pub fn color_weight(&self) -> f64 {
        color_weight(self.alpha)
    }
}

pub fn color_weight(alpha: f64) -> f64 {
    1.0 / alpha.max(1.0)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `a (n x k) * b (k x m)`, row-major.
fn gemm_nn(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * m];
    if n == 0 || m == 0 || k == 0 {
        return c;
    }
    // SAFETY: the slices hold n*k, k*m and n*m elements with the given strides.
    unsafe {
        matrixmultiply::dgemm(
            n, k, m, 1.0,
            a.as_ptr(), k as isize, 1,
            b.as_ptr(), m as isize, 1,
            0.0, c.as_mut_ptr(), m as isize, 1,
        );
    }
    c
}

/// `a (n x k) * b(m x k)^T`, row-major.
fn gemm_nt(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * m];
    if n == 0 || m == 0 || k == 0 {
        return c;
    }
    // SAFETY: as above, with b read transposed through its strides.
    unsafe {
        matrixmultiply::dgemm(
            n, k, m, 1.0,
            a.as_ptr(), k as isize, 1,
            b.as_ptr(), 1, k as isize,
            0.0, c.as_mut_ptr(), m as isize, 1,
        );
    }
    c
}

/// `a(k x n)^T * b (k x m)`, row-major.
fn gemm_tn(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * m];
    if n == 0 || m == 0 || k == 0 {
        return c;
    }
    // SAFETY: as above, with a read transposed through its strides.
    unsafe {
        matrixmultiply::dgemm(
            n, k, m, 1.0,
            a.as_ptr(), 1, n as isize,
            b.as_ptr(), m as isize, 1,
            0.0, c.as_mut_ptr(), m as isize, 1,
        );
    }
    c
}

/// Rows scaled to unit length, plus the norms used (floored at `NORM_EPS`).
fn unit_rows(x: &[f64], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut out = x.to_vec();
    let mut norms = Vec::with_capacity(x.len() / dim.max(1));
    for row in out.chunks_exact_mut(dim) {
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_EPS);
        row.iter_mut().for_each(|v| *v /= n);
        norms.push(n);
    }
    (out, norms)
}

/// Pulls a gradient with respect to unit rows back through the
/// normalization.
fn unit_rows_backward(unit: &[f64], norms: &[f64], grad_unit: &[f64], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; unit.len()];
    for (i, &n) in norms.iter().enumerate() {
        let r = i * dim..(i + 1) * dim;
        let (u, g) = (&unit[r.clone()], &grad_unit[r.clone()]);
        let o = &mut out[r];
        if n > NORM_EPS {
            let d: f64 = u.iter().zip(g).map(|(a, b)| a * b).sum();
            for k in 0..dim {
                o[k] = (g[k] - u[k] * d) / n;
            }
        } else {
            for k in 0..dim {
                o[k] = g[k] / n;
            }
        }
    }
    out
}

fn check_dims(a: &HypercolumnSet, b: &HypercolumnSet) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidInput("hypercolumn sets must be nonempty".into()));
    }
    if a.dim != b.dim {
        return Err(Error::InvalidInput(format!(
            "hypercolumn dimensions differ: {} vs {}",
            a.dim, b.dim
        )));
    }
    Ok(())
}

/// Mean absolute difference between the self-similarity (pairwise cosine
/// distance) matrices of two sets sampled at the same points.
pub fn content_loss(x: &HypercolumnSet, content: &HypercolumnSet) -> Result<f64> {
    Ok(content_loss_grad(x, content)?.0)
}

pub fn content_loss_grad(x: &HypercolumnSet, content: &HypercolumnSet) -> Result<(f64, Vec<f64>)> {
    check_dims(x, content)?;
    let (p, d) = (x.len(), x.dim);
    if content.len() != p {
        return Err(Error::InvalidInput(format!(
            "content loss needs equal point counts, got {p} and {}",
            content.len()
        )));
    }
    let (ux, nx) = unit_rows(&x.vectors, d);
    let (uc, _) = unit_rows(&content.vectors, d);
    let gx = gemm_nt(&ux, &ux, p, d, p);
    let gc = gemm_nt(&uc, &uc, p, d, p);
    let scale = 1.0 / (p * p) as f64;
    let mut loss = 0.0;
    let mut s = vec![0.0; p * p];
    for k in 0..p * p {
        // distance difference (1 - gx) - (1 - gc)
        let diff = gc[k] - gx[k];
        loss += diff.abs();
        s[k] = sign(diff) * scale;
    }
    // d loss / d gx = -s; gx = U U^T so dU = -(s + s^T) U
    let mut sym = vec![0.0; p * p];
    for i in 0..p {
        for j in 0..p {
            sym[i * p + j] = -(s[i * p + j] + s[j * p + i]);
        }
    }
    let du = gemm_nn(&sym, &ux, p, p, d);
    Ok((loss * scale, unit_rows_backward(&ux, &nx, &du, d)))
}

/// Relaxed earth mover's distance between row sets `x (n x dim)` and
/// `s (m x dim)` under cosine cost, with the gradient for `x`.
fn remd_rows(x: &[f64], s: &[f64], dim: usize) -> (f64, Vec<f64>) {
    let (n, m) = (x.len() / dim, s.len() / dim);
    let (ux, nx) = unit_rows(x, dim);
    let (us, _) = unit_rows(s, dim);
    let sim = gemm_nt(&ux, &us, n, dim, m);
    let mut row_arg = vec![0usize; n];
    let mut row_sum = 0.0;
    for i in 0..n {
        let row = &sim[i * m..(i + 1) * m];
        let mut best = 0;
        for j in 1..m {
            if row[j] > row[best] {
                best = j;
            }
        }
        row_arg[i] = best;
        row_sum += 1.0 - row[best];
    }
    let mut col_arg = vec![0usize; m];
    let mut col_sum = 0.0;
    for j in 0..m {
        let mut best = 0;
        for i in 1..n {
            if sim[i * m + j] > sim[best * m + j] {
                best = i;
            }
        }
        col_arg[j] = best;
        col_sum += 1.0 - sim[best * m + j];
    }
    let (row_mean, col_mean) = (row_sum / n as f64, col_sum / m as f64);
    let mut du = vec![0.0; n * dim];
    if row_mean >= col_mean {
        for (i, &j) in row_arg.iter().enumerate() {
            for k in 0..dim {
                du[i * dim + k] -= us[j * dim + k] / n as f64;
            }
        }
    } else {
        for (j, &i) in col_arg.iter().enumerate() {
            for k in 0..dim {
                du[i * dim + k] -= us[j * dim + k] / m as f64;
            }
        }
    }
    (row_mean.max(col_mean), unit_rows_backward(&ux, &nx, &du, dim))
}

/// Symmetric relaxed EMD: the larger of the two directional mean
/// nearest-neighbor cosine distances.
pub fn remd_loss(x: &HypercolumnSet, style: &HypercolumnSet) -> Result<f64> {
    Ok(remd_loss_grad(x, style)?.0)
}

pub fn remd_loss_grad(x: &HypercolumnSet, style: &HypercolumnSet) -> Result<(f64, Vec<f64>)> {
    check_dims(x, style)?;
    Ok(remd_rows(&x.vectors, &style.vectors, x.dim))
}

fn mean_and_covariance(v: &[f64], p: usize, d: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; d];
    for row in v.chunks_exact(d) {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= p as f64);
    let mut centered = v.to_vec();
    for row in centered.chunks_exact_mut(d) {
        for (x, m) in row.iter_mut().zip(&mean) {
            *x -= m;
        }
    }
    let mut cov = gemm_tn(&centered, &centered, d, p, d);
    cov.iter_mut().for_each(|c| *c /= (p - 1) as f64);
    (mean, cov, centered)
}

/// Mean absolute difference of feature means plus mean absolute difference
/// of feature covariances.
pub fn moment_loss(x: &HypercolumnSet, style: &HypercolumnSet) -> Result<f64> {
    Ok(moment_loss_grad(x, style)?.0)
}

pub fn moment_loss_grad(x: &HypercolumnSet, style: &HypercolumnSet) -> Result<(f64, Vec<f64>)> {
    check_dims(x, style)?;
    if x.len() < 2 || style.len() < 2 {
        return Err(Error::InvalidInput("moment loss needs at least two points per set".into()));
    }
    let (p, d) = (x.len(), x.dim);
    let (mx, cx, centered) = mean_and_covariance(&x.vectors, p, d);
    let (ms, cs, _) = mean_and_covariance(&style.vectors, style.len(), d);
    let (wm, wc) = (1.0 / d as f64, 1.0 / (d * d) as f64);
    let mut loss = 0.0;
    let mut gmean = vec![0.0; d];
    for k in 0..d {
        let diff = mx[k] - ms[k];
        loss += wm * diff.abs();
        gmean[k] = wm * sign(diff) / p as f64;
    }
    let mut gcov = vec![0.0; d * d];
    for k in 0..d * d {
        let diff = cx[k] - cs[k];
        loss += wc * diff.abs();
        gcov[k] = wc * sign(diff);
    }
    // d cov / d x_i contracts to (G + G^T)(x_i - mean) / (p - 1)
    let mut sym = vec![0.0; d * d];
    for a in 0..d {
        for b in 0..d {
            sym[a * d + b] = (gcov[a * d + b] + gcov[b * d + a]) / (p - 1) as f64;
        }
    }
    let mut grad = gemm_nn(&centered, &sym, p, d, d);
    for row in grad.chunks_exact_mut(d) {
        for (g, m) in row.iter_mut().zip(&gmean) {
            *g += m;
        }
    }
    Ok((loss, grad))
}

fn decorrelate(pixels: &[[f64; 3]]) -> Vec<f64> {
    pixels
        .iter()
        .flat_map(|p| COLOR_DECORRELATION.map(|row| row[0] * p[0] + row[1] * p[1] + row[2] * p[2]))
        .collect()
}

/// Relaxed EMD between pixel colors in the decorrelated basis, weighted by
/// `1 / max(alpha, 1)`.
pub fn color_loss(x: &[[f64; 3]], style: &[[f64; 3]], alpha: f64) -> Result<f64> {
    Ok(color_loss_grad(x, style, alpha)?.0)
}

pub fn color_loss_grad(x: &[[f64; 3]], style: &[[f64; 3]], alpha: f64) -> Result<(f64, Vec<[f64; 3]>)> {
    if x.is_empty() || style.is_empty() {
        return Err(Error::InvalidInput("color loss needs nonempty pixel sets".into()));
    }
    let w = color_weight(alpha);
    let (value, g) = remd_rows(&decorrelate(x), &decorrelate(style), 3);
    let grad = g
        .chunks_exact(3)
        .map(|gd| {
            // transpose of the decorrelation maps the gradient back to RGB
            let mut out = [0.0; 3];
            for (r, row) in COLOR_DECORRELATION.iter().enumerate() {
                for c in 0..3 {
                    out[c] += row[c] * gd[r] * w;
                }
            }
            out
        })
        .collect();
    Ok((w * value, grad))
}

/// The three style terms and their sum.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StyleTerms {
    pub remd: f64,
    pub moment: f64,
    pub color: f64,
}

impl StyleTerms {
    pub fn total(&self) -> f64 {
        self.remd + self.moment + self.color
    }
}

pub fn style_loss(
    x: &HypercolumnSet,
    style: &HypercolumnSet,
    pixels_x: &[[f64; 3]],
    pixels_style: &[[f64; 3]],
    alpha: f64,
) -> Result<f64> {
    Ok(style_loss_grad(x, style, pixels_x, pixels_style, alpha)?.0.total())
}

/// Style terms with gradients for the hypercolumns and the pixels of `x`.
pub fn style_loss_grad(
    x: &HypercolumnSet,
    style: &HypercolumnSet,
    pixels_x: &[[f64; 3]],
    pixels_style: &[[f64; 3]],
    alpha: f64,
) -> Result<(StyleTerms, Vec<f64>, Vec<[f64; 3]>)> {
    let (remd, mut grad) = remd_loss_grad(x, style)?;
    let (moment, gm) = moment_loss_grad(x, style)?;
    grad.iter_mut().zip(&gm).for_each(|(a, b)| *a += b);
    let (color, gp) = color_loss_grad(pixels_x, pixels_style, alpha)?;
    Ok((StyleTerms { remd, moment, color }, grad, gp))
}

fn check_image_pair(a: &RgbImage, b: &RgbImage, mask: &Mask) -> Result<()> {
    if !a.same_shape(b) || mask.width() != a.width() || mask.height() != a.height() {
        return Err(Error::InvalidInput(format!(
            "image shapes differ: {}x{}, {}x{}, mask {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height(),
            mask.width(),
            mask.height()
        )));
    }
    Ok(())
}

/// Masked L1 sum over pixels and channels, with its gradient for `a`.
fn masked_l1_grad(a: &RgbImage, b: &RgbImage, mask: &Mask) -> Result<(f64, RgbImage)> {
    check_image_pair(a, b, mask)?;
    let mut grad = RgbImage::new(a.width(), a.height());
    let mut loss = 0.0;
    let g = grad.data_mut();
    for (p, &m) in mask.data().iter().enumerate() {
        if !m {
            continue;
        }
        for c in 0..3 {
            let diff = a.data()[p * 3 + c] - b.data()[p * 3 + c];
            loss += diff.abs();
            g[p * 3 + c] = sign(diff);
        }
    }
    Ok((loss, grad))
}

/// Sum of masked absolute differences between a rendering and the photo.
pub fn rendering_loss(rendered: &RgbImage, input: &RgbImage, mask: &Mask) -> Result<f64> {
    Ok(rendering_loss_grad(rendered, input, mask)?.0)
}

pub fn rendering_loss_grad(rendered: &RgbImage, input: &RgbImage, mask: &Mask) -> Result<(f64, RgbImage)> {
    masked_l1_grad(rendered, input, mask)
}

/// Masked L1 between the optimized texture and the style texture over the
/// style's validity; the UV-space alternative to the rendering loss.
pub fn uv_reconstruction_loss_grad(texture: &RgbImage, style: &RgbImage, validity: &Mask) -> Result<(f64, RgbImage)> {
    masked_l1_grad(texture, style, validity)
}

/// `alpha * content + beta * style + gamma * render`, refusing non-finite
/// terms.
pub fn total_loss(content: f64, style: f64, render: f64, w: &LossWeights) -> Result<f64> {
    for (term, value) in [("content", content), ("style", style), ("render", render)] {
        if !value.is_finite() {
            return Err(Error::NonFinite { term, value });
        }
    }
    let total = w.alpha * content + w.beta * style + w.gamma * render;
    if !total.is_finite() {
        return Err(Error::NonFinite { term: "total", value: total });
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set(rows: Vec<Vec<f64>>) -> HypercolumnSet {
        HypercolumnSet::from_rows(rows).unwrap()
    }

    fn random_rows(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
    }

    fn cos_dist(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(NORM_EPS);
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt().max(NORM_EPS);
        1.0 - dot / (na * nb)
    }

    fn remd_oracle(x: &[Vec<f64>], s: &[Vec<f64>]) -> f64 {
        let rows: f64 = x
            .iter()
            .map(|a| s.iter().map(|b| cos_dist(a, b)).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
            / x.len() as f64;
        let cols: f64 = s
            .iter()
            .map(|b| x.iter().map(|a| cos_dist(a, b)).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
            / s.len() as f64;
        rows.max(cols)
    }

    fn check_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], grad: &[f64], tol: f64) {
        let h = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += h;
            xm[i] -= h;
            let fd = (f(&xp) - f(&xm)) / (2.0 * h);
            let scale = fd.abs().max(grad[i].abs()).max(1e-4);
            assert!((fd - grad[i]).abs() / scale < tol, "component {i}: fd {fd} vs analytic {}", grad[i]);
        }
    }

    #[test]
    fn identical_inputs_give_zero() {
        let a = set(random_rows(6, 5, 1));
        assert!(content_loss(&a, &a).unwrap().abs() < 1e-12);
        assert!(remd_loss(&a, &a).unwrap().abs() < 1e-12);
        assert!(moment_loss(&a, &a).unwrap().abs() < 1e-12);
        let px = [[0.2, 0.5, 0.9], [0.1, 0.1, 0.3]];
        assert!(color_loss(&px, &px, 8.0).unwrap().abs() < 1e-12);
        assert!(style_loss(&a, &a, &px, &px, 8.0).unwrap().abs() < 1e-12);
    }

    #[test]
    fn constant_vectors_have_zero_content_loss() {
        let a = set(vec![vec![1.0, 2.0]; 4]);
        let b = set(vec![vec![-3.0, 0.5]; 4]);
        assert!(content_loss(&a, &b).unwrap().abs() < 1e-12);
    }

    #[test]
    fn content_loss_matches_longhand() {
        let xr = vec![vec![1.0, 0.0, 2.0], vec![0.5, -1.0, 0.0], vec![0.0, 3.0, 1.0]];
        let cr = vec![vec![2.0, 1.0, 0.0], vec![1.0, 1.0, 1.0], vec![-1.0, 0.0, 0.5]];
        let mut expected = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                expected += (cos_dist(&xr[i], &xr[j]) - cos_dist(&cr[i], &cr[j])).abs();
            }
        }
        expected /= 9.0;
        let got = content_loss(&set(xr.clone()), &set(cr.clone())).unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert!((content_loss(&set(cr), &set(xr)).unwrap() - got).abs() < 1e-15);
    }

    #[test]
    fn content_loss_rejects_mismatched_sets() {
        assert!(content_loss(&set(random_rows(3, 2, 1)), &set(random_rows(4, 2, 2))).is_err());
        assert!(content_loss(&set(random_rows(3, 2, 1)), &set(random_rows(3, 3, 2))).is_err());
    }

    #[test]
    fn remd_orthogonal_and_oracle() {
        let x = set(vec![vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 2.0, 0.0, 0.0]]);
        let s = set(vec![vec![0.0, 0.0, 1.0, 0.0], vec![0.0, 0.0, 0.0, 3.0], vec![0.0, 0.0, 2.0, 2.0]]);
        assert!((remd_loss(&x, &s).unwrap() - 1.0).abs() < 1e-12);
        let (xr, sr) = (random_rows(5, 6, 3), random_rows(7, 6, 4));
        let got = remd_loss(&set(xr.clone()), &set(sr.clone())).unwrap();
        assert!((got - remd_oracle(&xr, &sr)).abs() < 1e-12);
        assert!((remd_loss(&set(sr), &set(xr)).unwrap() - got).abs() < 1e-12);
    }

    #[test]
    fn zero_vectors_are_guarded() {
        let x = set(vec![vec![0.0, 0.0], vec![1.0, 0.0]]);
        let s = set(vec![vec![0.0, 0.0]]);
        let v = remd_loss(&x, &s).unwrap();
        assert!(v.is_finite());
        assert!(remd_loss_grad(&x, &s).unwrap().1.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn moment_shift_and_oracle() {
        let base = random_rows(10, 4, 5);
        let shifted: Vec<Vec<f64>> = base.iter().map(|r| r.iter().map(|v| v + 0.25).collect()).collect();
        let got = moment_loss(&set(shifted), &set(base.clone())).unwrap();
        assert!((got - 0.25).abs() < 1e-12, "{got}");

        let other = random_rows(12, 4, 6);
        let moments = |rows: &[Vec<f64>]| {
            let p = rows.len() as f64;
            let mean: Vec<f64> = (0..4).map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / p).collect();
            let mut cov = vec![0.0; 16];
            for a in 0..4 {
                for b in 0..4 {
                    cov[a * 4 + b] = rows.iter().map(|r| (r[a] - mean[a]) * (r[b] - mean[b])).sum::<f64>() / (p - 1.0);
                }
            }
            (mean, cov)
        };
        let ((m1, c1), (m2, c2)) = (moments(&base), moments(&other));
        let expected = m1.iter().zip(&m2).map(|(a, b)| (a - b).abs()).sum::<f64>() / 4.0
            + c1.iter().zip(&c2).map(|(a, b)| (a - b).abs()).sum::<f64>() / 16.0;
        assert!((moment_loss(&set(base), &set(other)).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn scale_invariance_pair() {
        let (xr, cr) = (random_rows(6, 4, 7), random_rows(6, 4, 8));
        let scaled: Vec<Vec<f64>> = xr.iter().enumerate().map(|(i, r)| r.iter().map(|v| v * (1.0 + i as f64)).collect()).collect();
        let (x, xs, c) = (set(xr), set(scaled), set(cr));
        assert!((content_loss(&x, &c).unwrap() - content_loss(&xs, &c).unwrap()).abs() < 1e-12);
        assert!((remd_loss(&x, &c).unwrap() - remd_loss(&xs, &c).unwrap()).abs() < 1e-12);
        assert!((moment_loss(&x, &c).unwrap() - moment_loss(&xs, &c).unwrap()).abs() > 1e-3);
    }

    #[test]
    fn color_weight_clamps_and_single_pixels() {
        assert_eq!(color_weight(0.5), 1.0);
        assert_eq!(color_weight(8.0), 0.125);
        let (a, b) = ([0.9, 0.2, 0.1], [0.1, 0.3, 0.8]);
        let project = |p: [f64; 3]| COLOR_DECORRELATION.map(|r| r[0] * p[0] + r[1] * p[1] + r[2] * p[2]).to_vec();
        let expected = cos_dist(&project(a), &project(b)) / 4.0;
        assert!((color_loss(&[a], &[b], 4.0).unwrap() - expected).abs() < 1e-12);
        assert!((color_loss(&[a], &[b], 0.5).unwrap() - 4.0 * expected).abs() < 1e-12);
    }

    #[test]
    fn style_is_sum_of_terms() {
        let (x, s) = (set(random_rows(6, 3, 9)), set(random_rows(8, 3, 10)));
        let px = [[0.1, 0.2, 0.3], [0.5, 0.5, 0.1]];
        let ps = [[0.9, 0.1, 0.3], [0.2, 0.7, 0.4], [0.3, 0.3, 0.3]];
        let sum = remd_loss(&x, &s).unwrap() + moment_loss(&x, &s).unwrap() + color_loss(&px, &ps, 2.0).unwrap();
        assert_eq!(style_loss(&x, &s, &px, &ps, 2.0).unwrap(), sum);
    }

    #[test]
    fn rendering_loss_cases() {
        let a = RgbImage::filled(4, 4, [0.3, 0.3, 0.3]);
        let mut b = a.clone();
        let full = Mask::full(4, 4);
        assert_eq!(rendering_loss(&a, &a, &full).unwrap(), 0.0);
        b.set(1, 2, [0.3, 0.8, 0.3]);
        assert_eq!(rendering_loss(&a, &b, &Mask::new(4, 4)).unwrap(), 0.0);
        let mut one = Mask::new(4, 4);
        one.set(1, 2, true);
        assert!((rendering_loss(&a, &b, &one).unwrap() - 0.5).abs() < 1e-15);
        assert!(rendering_loss(&a, &RgbImage::new(3, 4), &full).is_err());
    }

    #[test]
    fn total_loss_weights_and_guard() {
        let w = LossWeights::default();
        assert!((total_loss(1.0, 1.0, 1.0, &w).unwrap() - 29.7).abs() < 1e-12);
        assert_eq!(total_loss(0.0, 0.0, 0.0, &w).unwrap(), 0.0);
        let w0 = LossWeights { gamma: 0.0, ..w };
        assert_eq!(total_loss(0.3, 0.2, 5.0, &w0).unwrap(), 8.0 * 0.3 + 1.7 * 0.2);
        match total_loss(0.1, f64::NAN, 0.0, &w) {
            Err(Error::NonFinite { term, .. }) => assert_eq!(term, "style"),
            other => panic!("{other:?}"),
        }
        assert!(LossWeights { alpha: 0.0, ..w }.validate().is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (xr, cr) = (random_rows(5, 4, 11), random_rows(5, 4, 12));
        let c = set(cr);
        let s = set(random_rows(7, 4, 13));
        let x = set(xr);
        let with = |v: &[f64]| HypercolumnSet { vectors: v.to_vec(), ..x.clone() };

        let (_, g) = content_loss_grad(&x, &c).unwrap();
        check_grad(|v| content_loss(&with(v), &c).unwrap(), &x.vectors, &g, 1e-5);
        let (_, g) = remd_loss_grad(&x, &s).unwrap();
        check_grad(|v| remd_loss(&with(v), &s).unwrap(), &x.vectors, &g, 1e-5);
        let (_, g) = moment_loss_grad(&x, &s).unwrap();
        check_grad(|v| moment_loss(&with(v), &s).unwrap(), &x.vectors, &g, 1e-5);

        let px: Vec<[f64; 3]> = random_rows(4, 3, 14).iter().map(|r| [r[0], r[1], r[2]]).collect();
        let ps: Vec<[f64; 3]> = random_rows(6, 3, 15).iter().map(|r| [r[0], r[1], r[2]]).collect();
        let (_, g) = color_loss_grad(&px, &ps, 3.0).unwrap();
        let flat: Vec<f64> = px.iter().flatten().copied().collect();
        let gflat: Vec<f64> = g.iter().flatten().copied().collect();
        check_grad(
            |v| {
                let p: Vec<[f64; 3]> = v.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
                color_loss(&p, &ps, 3.0).unwrap()
            },
            &flat,
            &gflat,
            1e-5,
        );
    }
}
