//! Multi-stage texture refinement.
//!
//! Each stage optimizes a Laplacian-pyramid parameterization of the texture
//! with SGD and momentum, first at a coarse scale and then at finer ones.
//! The stage output becomes the next stage's content texture; the content
//! weight shrinks and the rendering weight grows by the same factor per
//! stage.

use serde::{Deserialize, Serialize};

use crate::camera::CameraPose;
use crate::error::{Error, Result};
use crate::features::{draw_points, sample_hypercolumns, scatter_hypercolumn_grad, FeatureNet, FeatureStack};
use crate::geometry::{erode, uv_coverage_mask};
use crate::image::{Mask, RgbImage, TextureMap};
use crate::losses::{self, LossWeights, StyleTerms};
use crate::mesh::FaceMesh;
use crate::pyramid::{LaplacianPyramid, DEFAULT_BASE_RESOLUTION};
use crate::raster::{rasterize, TextureSampler};

/// Per-stage multiplier on the rendering weight (and divisor on content).
pub const STAGE_FACTOR: f64 = 1.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSchedule {
    pub num_stages: usize,
    /// Weights of the first stage.
    pub initial: LossWeights,
    /// Texture sides optimized within a stage, ascending.
    pub scales: Vec<usize>,
    pub iterations: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Multiplier applied to all three weights per step up in scale.
    pub scale_decay: f64,
}

impl Default for StageSchedule {
    fn default() -> Self {
        Self {
            num_stages: 5,
            initial: LossWeights::default(),
            scales: vec![256, 512],
            iterations: 150,
            learning_rate: 0.3,
            momentum: 0.9,
            scale_decay: 0.5,
        }
    }
}

impl StageSchedule {
    pub fn validate(&self) -> Result<()> {
        self.initial.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if self.num_stages == 0 {
            return bad("num_stages must be at least 1".into());
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        if self.scales.is_empty() || self.scales.windows(2).any(|w| w[1] <= w[0]) {
            return bad(format!("scales must be nonempty and strictly ascending, got {:?}", self.scales));
        }
        if let Some(s) = self.scales.iter().find(|s| !s.is_power_of_two() || **s < 64) {
            return bad(format!("scale {s} is not a power of two of at least 64"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.scale_decay > 0.0 && self.scale_decay.is_finite()) {
            return bad(format!("scale_decay must be positive, got {}", self.scale_decay));
        }
        Ok(())
    }

    /// Weights of stage `stage` (zero-based).
    pub fn stage_weights(&self, stage: usize) -> LossWeights {
        let f = STAGE_FACTOR.powi(stage as i32);
        LossWeights {
            alpha: self.initial.alpha / f,
            beta: self.initial.beta,
            gamma: self.initial.gamma * f,
        }
    }

    pub fn all_stage_weights(&self) -> Vec<LossWeights> {
        (0..self.num_stages).map(|s| self.stage_weights(s)).collect()
    }

    /// Weights at the `scale_index`-th scale of a stage.
    pub fn scale_weights(&self, stage: LossWeights, scale_index: usize) -> LossWeights {
        let d = self.scale_decay.powi(scale_index as i32);
        LossWeights {
            alpha: stage.alpha * d,
            beta: stage.beta * d,
            gamma: stage.gamma * d,
        }
    }
}

/// Which objective terms are active; switching terms off is how the
/// ablation variants are built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossTerms {
    pub content: bool,
    pub style: bool,
    pub render: bool,
    /// Masked L1 between the texture and the style texture in UV space.
    pub uv_reconstruction: bool,
}

impl Default for LossTerms {
    fn default() -> Self {
        Self {
            content: true,
            style: true,
            render: true,
            uv_reconstruction: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineOptions {
    pub schedule: StageSchedule,
    pub content_points: usize,
    pub style_points: usize,
    pub base_resolution: usize,
    /// Divide the rendering (and UV reconstruction) sums by the mask size.
    pub normalize_render_loss: bool,
    /// Width of the boundary ring reset to the original content, in texels
    /// at the output resolution.
    pub boundary_margin: usize,
    pub seed: u64,
    pub terms: LossTerms,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self {
            schedule: StageSchedule::default(),
            content_points: 1024,
            style_points: 1024,
            base_resolution: DEFAULT_BASE_RESOLUTION,
            normalize_render_loss: true,
            boundary_margin: default_boundary_margin(512),
            seed: 0,
            terms: LossTerms::default(),
        }
    }
}

/// Four texels at 512, scaled with the resolution.
pub fn default_boundary_margin(resolution: usize) -> usize {
    (4.0 * resolution as f64 / 512.0).round() as usize
}

/// Loss terms at one iteration, unweighted except `total`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub scale: usize,
    pub iteration: usize,
    pub content: f64,
    pub remd: f64,
    pub moment: f64,
    pub color: f64,
    pub style: f64,
    pub render: f64,
    pub uv_reconstruction: f64,
    pub total: f64,
}

/// Where a stage stopped on a non-finite loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Abort {
    pub stage: usize,
    pub scale: usize,
    pub iteration: usize,
    pub term: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: usize,
    pub weights: LossWeights,
    /// Rendering loss of the stage's content and output textures at full
    /// resolution (always the raw masked sum).
    pub initial_render_loss: f64,
    pub final_render_loss: f64,
    pub iterations: Vec<IterationRecord>,
    pub aborted: Option<Abort>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub options: RefineOptions,
    pub feature_channels: usize,
    pub weights_checksum: String,
    pub initial_render_loss: f64,
    /// After the boundary mask.
    pub final_render_loss: f64,
    pub stages: Vec<StageReport>,
}

impl RunReport {
    pub fn aborted(&self) -> Option<&Abort> {
        self.stages.iter().find_map(|s| s.aborted.as_ref())
    }
}

/// Fixed inputs of a refinement.
#[derive(Debug, Clone, Copy)]
pub struct RefineProblem<'a> {
    pub mesh: &'a FaceMesh,
    pub pose: &'a CameraPose,
    pub input_image: &'a RgbImage,
    pub style: &'a TextureMap,
}

struct ScaleData {
    side: usize,
    sampler: TextureSampler,
    style: TextureMap,
    style_stack: FeatureStack,
}

/// Refinement context: the rasterization, loss mask and style features are
/// computed once and shared by all stages.
pub struct Refiner<'a> {
    net: &'a FeatureNet,
    problem: RefineProblem<'a>,
    options: RefineOptions,
    loss_mask: Mask,
    full_sampler: TextureSampler,
    scales: Vec<ScaleData>,
    coverage: Mask,
}

fn mix_seed(parts: &[u64]) -> u64 {
    // splitmix64 folded over the parts
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        h = h.wrapping_add(p).wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

fn sample_pixels(image: &RgbImage, points: &[[f64; 2]]) -> Vec<[f64; 3]> {
    points.iter().map(|p| image.sample(p[0], p[1])).collect()
}

fn scatter_pixels(grad: &mut RgbImage, points: &[[f64; 2]], pixel_grads: &[[f64; 3]], scale: f64) {
    let (w, h) = (grad.width(), grad.height());
    let d = grad.data_mut();
    for (p, g) in points.iter().zip(pixel_grads) {
        for (i, wt) in RgbImage::bilinear_taps(w, h, p[0], p[1]) {
            for c in 0..3 {
                d[i * 3 + c] += scale * wt * g[c];
            }
        }
    }
}

struct Evaluation {
    record: IterationRecord,
    grad: RgbImage,
}

impl<'a> Refiner<'a> {
    pub fn new(net: &'a FeatureNet, problem: RefineProblem<'a>, options: RefineOptions, resolution: usize) -> Result<Self> {
        options.schedule.validate()?;
        if options.content_points == 0 || options.style_points < 2 || options.content_points < 2 {
            return Err(Error::Config("content_points and style_points must be at least 2".into()));
        }
        if let Some(s) = options.schedule.scales.iter().find(|s| **s > resolution || **s < options.base_resolution) {
            return Err(Error::Config(format!(
                "scale {s} must lie between base_resolution {} and the texture resolution {resolution}",
                options.base_resolution
            )));
        }
        let (w, h) = problem.pose.image_size();
        if problem.input_image.width() != w || problem.input_image.height() != h {
            return Err(Error::InvalidInput(format!(
                "input image is {}x{} but the pose expects {w}x{h}",
                problem.input_image.width(),
                problem.input_image.height()
            )));
        }
        let raster = rasterize(problem.mesh, problem.pose);
        let loss_mask = erode(&raster.coverage(), 1);
        if loss_mask.is_empty() && (options.terms.render) {
            return Err(Error::NoVisibleRegion);
        }
        let mut scales = Vec::new();
        for &side in &options.schedule.scales {
            let style = problem.style.resized(side)?;
            if style.validity().is_empty() {
                return Err(Error::NoVisibleRegion);
            }
            let style_stack = net.extract(style.pixels())?;
            scales.push(ScaleData {
                side,
                sampler: raster.sampler(side)?,
                style,
                style_stack,
            });
        }
        Ok(Self {
            net,
            problem,
            full_sampler: raster.sampler(resolution)?,
            coverage: uv_coverage_mask(problem.mesh, resolution)?,
            loss_mask,
            scales,
            options,
        })
    }

    pub fn options(&self) -> &RefineOptions {
        &self.options
    }

    /// Raw masked rendering loss of a full-resolution texture.
    pub fn render_loss(&self, texture: &TextureMap) -> Result<f64> {
        let rendered = self.full_sampler.render(texture.pixels());
        losses::rendering_loss(&rendered, self.problem.input_image, &self.loss_mask)
    }

    fn evaluate(
        &self,
        x: &RgbImage,
        content_stack: &FeatureStack,
        scale: &ScaleData,
        weights: &LossWeights,
        seed: u64,
    ) -> Result<Evaluation> {
        let terms = self.options.terms;
        let side = scale.side;
        let mut grad = RgbImage::new(side, side);
        let mut rec = IterationRecord {
            scale: side,
            iteration: 0,
            content: 0.0,
            remd: 0.0,
            moment: 0.0,
            color: 0.0,
            style: 0.0,
            render: 0.0,
            uv_reconstruction: 0.0,
            total: 0.0,
        };
        if terms.content || terms.style {
            let points = draw_points(None, side, side, self.options.content_points, seed)?;
            let (stack, tape) = self.net.forward(x)?;
            let hx = sample_hypercolumns(&stack, &points)?;
            let mut hgrad = vec![0.0; hx.vectors.len()];
            if terms.content {
                let hc = sample_hypercolumns(content_stack, &points)?;
                let (value, g) = losses::content_loss_grad(&hx, &hc)?;
                rec.content = value;
                hgrad.iter_mut().zip(&g).for_each(|(a, b)| *a += weights.alpha * b);
            }
            if terms.style {
                let style_points = draw_points(
                    Some(scale.style.validity()),
                    side,
                    side,
                    self.options.style_points,
                    seed,
                )?;
                let hs = sample_hypercolumns(&scale.style_stack, &style_points)?;
                let px = sample_pixels(x, &points);
                let ps = sample_pixels(scale.style.pixels(), &style_points);
                let (st, g, gp): (StyleTerms, _, _) = losses::style_loss_grad(&hx, &hs, &px, &ps, weights.alpha)?;
                rec.remd = st.remd;
                rec.moment = st.moment;
                rec.color = st.color;
                rec.style = st.total();
                hgrad.iter_mut().zip(&g).for_each(|(a, b)| *a += weights.beta * b);
                scatter_pixels(&mut grad, &points, &gp, weights.beta);
            }
            let level_grads = scatter_hypercolumn_grad(&stack, &points, &hgrad);
            grad.add_assign(&self.net.backward(&tape, &level_grads));
        }
        let mut pixel_term = 0.0;
        if terms.render {
            let rendered = scale.sampler.render(x);
            let (mut value, mut g) = losses::rendering_loss_grad(&rendered, self.problem.input_image, &self.loss_mask)?;
            if self.options.normalize_render_loss {
                let n = self.loss_mask.count() as f64;
                value /= n;
                g.scale(1.0 / n);
            }
            rec.render = value;
            pixel_term += value;
            let mut tg = scale.sampler.backward(&g);
            tg.scale(weights.gamma);
            grad.add_assign(&tg);
        }
        if terms.uv_reconstruction {
            let (mut value, mut g) = losses::uv_reconstruction_loss_grad(x, scale.style.pixels(), scale.style.validity())?;
            if self.options.normalize_render_loss {
                let n = scale.style.validity().count() as f64;
                value /= n;
                g.scale(1.0 / n);
            }
            rec.uv_reconstruction = value;
            pixel_term += value;
            g.scale(weights.gamma);
            grad.add_assign(&g);
        }
        rec.total = losses::total_loss(rec.content, rec.style, pixel_term, weights)?;
        if !grad.is_finite() {
            return Err(Error::NonFinite {
                term: "gradient",
                value: f64::NAN,
            });
        }
        Ok(Evaluation { record: rec, grad })
    }

    /// One stage: optimizes starting from `content` and returns the clamped
    /// result with the content's validity.
    pub fn run_stage(&self, content: &TextureMap, stage: usize) -> Result<(TextureMap, StageReport)> {
        let resolution = content.resolution();
        let schedule = &self.options.schedule;
        let stage_weights = schedule.stage_weights(stage);
        let mut report = StageReport {
            stage,
            weights: stage_weights,
            initial_render_loss: self.render_loss(content)?,
            final_render_loss: f64::NAN,
            iterations: Vec::new(),
            aborted: None,
        };
        let mut pyramid = LaplacianPyramid::decompose(content.pixels(), self.options.base_resolution)?;
        let mut x = content.pixels().clone();
        'scales: for (k, scale) in self.scales.iter().enumerate() {
            let levels = pyramid
                .levels_for(scale.side)
                .ok_or_else(|| Error::Config(format!("scale {} is not reachable from the pyramid", scale.side)))?;
            let weights = schedule.scale_weights(stage_weights, k);
            let content_stack = self.net.extract(&content.pixels().resize_pow2(scale.side)?)?;
            let mut velocity = pyramid.backward_levels(&RgbImage::new(scale.side, scale.side), levels);
            for it in 0..schedule.iterations {
                let current = pyramid.reconstruct_levels(levels);
                let seed = mix_seed(&[self.options.seed, stage as u64, k as u64, it as u64]);
                let eval = match self.evaluate(&current, &content_stack, scale, &weights, seed) {
                    Ok(e) => e,
                    Err(Error::NonFinite { term, value }) => {
                        log::warn!("stage {stage} scale {} iteration {it}: {term} is {value}", scale.side);
                        report.aborted = Some(Abort {
                            stage,
                            scale: scale.side,
                            iteration: it,
                            term: term.to_string(),
                        });
                        break 'scales;
                    }
                    Err(e) => return Err(e),
                };
                x = current;
                report.iterations.push(IterationRecord { iteration: it, ..eval.record });
                let g = pyramid.backward_levels(&eval.grad, levels);
                velocity.update_levels(&g, |v, g| *v = schedule.momentum * *v + g);
                pyramid.update_levels(&velocity, |p, v| *p -= schedule.learning_rate * v);
            }
            let last = pyramid.reconstruct_levels(levels);
            if last.is_finite() {
                x = last;
            } else {
                report.aborted = Some(Abort {
                    stage,
                    scale: scale.side,
                    iteration: schedule.iterations,
                    term: "texture".into(),
                });
                break;
            }
        }
        if report.aborted.is_none() {
            // finer levels never optimized keep the content's detail
            x = pyramid.reconstruct();
        }
        let out = TextureMap::new(x.resize_pow2(resolution)?, content.validity().clone())?;
        report.final_render_loss = self.render_loss(&out)?;
        Ok((out, report))
    }

    /// All stages followed by the boundary mask. `on_stage` sees every stage
    /// output (before the boundary mask) as soon as it is ready.
    pub fn refine(
        &self,
        content: &TextureMap,
        mut on_stage: impl FnMut(&TextureMap, &StageReport) -> Result<()>,
    ) -> Result<(TextureMap, RunReport)> {
        let mut current = content.clone();
        let mut stages = Vec::new();
        for stage in 0..self.options.schedule.num_stages {
            let (next, report) = self.run_stage(&current, stage)?;
            log::info!(
                "stage {} done: render loss {:.6} -> {:.6}",
                stage + 1,
                report.initial_render_loss,
                report.final_render_loss
            );
            on_stage(&next, &report)?;
            current = next;
            let stop = report.aborted.is_some();
            stages.push(report);
            if stop {
                break;
            }
        }
        let out = apply_boundary_mask(&current, content, &self.coverage, self.options.boundary_margin)?;
        let report = RunReport {
            seed: self.options.seed,
            options: self.options.clone(),
            feature_channels: self.net.total_channels(),
            weights_checksum: self.net.checksum().to_string(),
            initial_render_loss: self.render_loss(content)?,
            final_render_loss: self.render_loss(&out)?,
            stages,
        };
        Ok((out, report))
    }
}

/// Runs the whole schedule on `content`.
pub fn refine_texture(
    net: &FeatureNet,
    problem: RefineProblem<'_>,
    content: &TextureMap,
    options: RefineOptions,
) -> Result<(TextureMap, RunReport)> {
    Refiner::new(net, problem, options, content.resolution())?.refine(content, |_, _| Ok(()))
}

/// Resets texels within `margin` of the coverage boundary to `original`.
pub fn apply_boundary_mask(refined: &TextureMap, original: &TextureMap, coverage: &Mask, margin: usize) -> Result<TextureMap> {
    if margin == 0 {
        return Ok(refined.clone());
    }
    let res = refined.resolution();
    if original.resolution() != res || coverage.width() != res || coverage.height() != res {
        return Err(Error::InvalidInput("boundary mask inputs differ in resolution".into()));
    }
    let interior = erode(coverage, margin);
    let mut pixels = refined.pixels().clone();
    for y in 0..res {
        for x in 0..res {
            if coverage.get(x, y) && !interior.get(x, y) {
                pixels.set(x, y, original.pixels().get(x, y));
            }
        }
    }
    TextureMap::new(pixels, refined.validity().clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{sample_style_image, StyleParams};
    use crate::scene;

    #[test]
    fn schedule_closed_form() {
        let s = StageSchedule::default();
        let w = s.all_stage_weights();
        let alphas: Vec<f64> = w.iter().map(|x| x.alpha).collect();
        for (a, e) in alphas.iter().zip([8.0, 7.2727, 6.6116, 6.0105, 5.4641]) {
            assert!((a - e).abs() < 1e-4);
        }
        for (i, wi) in w.iter().enumerate() {
            assert_eq!(wi.alpha, 8.0 / 1.1f64.powi(i as i32));
            assert_eq!(wi.gamma, 20.0 * 1.1f64.powi(i as i32));
            assert_eq!(wi.beta, 1.7);
            assert!((wi.alpha * wi.gamma / 160.0 - 1.0).abs() < 1e-9);
        }
        let half = s.scale_weights(w[0], 1);
        assert_eq!((half.alpha, half.beta, half.gamma), (4.0, 0.85, 10.0));
    }

    #[test]
    fn schedule_validation() {
        let mut s = StageSchedule::default();
        assert!(s.validate().is_ok());
        s.scales = vec![512, 256];
        assert!(s.validate().is_err());
        s.scales = vec![96];
        assert!(s.validate().is_err());
        s = StageSchedule { momentum: 1.0, ..Default::default() };
        assert!(s.validate().is_err());
    }

    #[test]
    fn seeds_differ_per_iteration() {
        assert_ne!(mix_seed(&[1, 0, 0, 0]), mix_seed(&[1, 0, 0, 1]));
        assert_ne!(mix_seed(&[1, 0, 1, 0]), mix_seed(&[1, 1, 0, 0]));
        assert_eq!(mix_seed(&[7, 2]), mix_seed(&[7, 2]));
    }

    fn disk_coverage(res: usize) -> Mask {
        let c = res as f64 / 2.0;
        Mask::from_fn(res, res, |x, y| {
            let (dx, dy) = (x as f64 + 0.5 - c, y as f64 + 0.5 - c);
            dx * dx + dy * dy <= (0.4 * res as f64).powi(2)
        })
    }

    #[test]
    fn boundary_mask_cases() {
        let res = 64;
        let refined = TextureMap::complete(RgbImage::filled(res, res, [0.9, 0.9, 0.9])).unwrap();
        let original = TextureMap::complete(RgbImage::filled(res, res, [0.1, 0.2, 0.3])).unwrap();
        let cov = disk_coverage(res);
        assert_eq!(apply_boundary_mask(&refined, &original, &cov, 0).unwrap(), refined);

        let all = apply_boundary_mask(&refined, &original, &cov, res).unwrap();
        for y in 0..res {
            for x in 0..res {
                let want = if cov.get(x, y) { original.pixels().get(x, y) } else { refined.pixels().get(x, y) };
                assert_eq!(all.pixels().get(x, y), want);
            }
        }

        let ring = apply_boundary_mask(&refined, &original, &cov, 4).unwrap();
        // independent ring: covered texels with an uncovered texel within distance 4
        for y in 0..res as i64 {
            for x in 0..res as i64 {
                let mut near_outside = false;
                for dy in -4i64..=4 {
                    for dx in -4i64..=4 {
                        let (nx, ny) = (x + dx, y + dy);
                        if dx * dx + dy * dy <= 16
                            && (0..res as i64).contains(&nx)
                            && (0..res as i64).contains(&ny)
                            && !cov.get(nx as usize, ny as usize)
                        {
                            near_outside = true;
                        }
                    }
                }
                let in_ring = cov.get(x as usize, y as usize) && near_outside;
                let differs = ring.pixels().get(x as usize, y as usize) != refined.pixels().get(x as usize, y as usize);
                assert_eq!(in_ring, differs, "texel ({x}, {y})");
            }
        }
    }

    fn quad_problem(tex: usize) -> (scene::Scene, TextureMap, RgbImage) {
        let sc = scene::screen_quad(64);
        let gt = TextureMap::complete(scene::procedural_texture(tex, 5)).unwrap();
        let input = crate::raster::render(&sc.mesh, &gt, &sc.pose).unwrap().pixels;
        (sc, gt, input)
    }

    #[test]
    fn zero_gradient_fixed_point() {
        let (sc, gt, input) = quad_problem(64);
        let net = FeatureNet::seeded(1, 16);
        let style = gt.clone();
        let problem = RefineProblem {
            mesh: &sc.mesh,
            pose: &sc.pose,
            input_image: &input,
            style: &style,
        };
        let options = RefineOptions {
            schedule: StageSchedule {
                num_stages: 1,
                initial: LossWeights { gamma: 0.0, ..LossWeights::default() },
                scales: vec![64],
                iterations: 10,
                ..Default::default()
            },
            content_points: 64,
            style_points: 64,
            base_resolution: 16,
            ..Default::default()
        };
        let refiner = Refiner::new(&net, problem, options, 64).unwrap();
        let (out, report) = refiner.run_stage(&gt, 0).unwrap();
        assert!(report.iterations[0].content.abs() < 1e-9);
        assert!(out.pixels().max_abs_diff(gt.pixels()) < 1e-4, "{}", out.pixels().max_abs_diff(gt.pixels()));
    }

    #[test]
    fn stage_reduces_rendering_loss_and_reports_weights() {
        let (sc, gt, input) = quad_problem(64);
        let mut blurred = gt.pixels().gaussian_blur(2.0);
        blurred.data_mut().iter_mut().for_each(|v| *v += 0.1);
        let content = TextureMap::complete(blurred).unwrap();
        let style = sample_style_image(&input, &sc.mesh, &sc.pose, 64, &StyleParams::default_for(64))
            .unwrap()
            .texture;
        let net = FeatureNet::seeded(1, 16);
        let problem = RefineProblem {
            mesh: &sc.mesh,
            pose: &sc.pose,
            input_image: &input,
            style: &style,
        };
        let options = RefineOptions {
            schedule: StageSchedule {
                num_stages: 1,
                scales: vec![64],
                iterations: 30,
                ..Default::default()
            },
            content_points: 128,
            style_points: 128,
            base_resolution: 16,
            boundary_margin: 0,
            ..Default::default()
        };
        let (out, report) = refine_texture(&net, problem, &content, options).unwrap();
        let stage = &report.stages[0];
        assert_eq!((stage.weights.alpha, stage.weights.beta, stage.weights.gamma), (8.0, 1.7, 20.0));
        assert!(report.final_render_loss < 0.5 * report.initial_render_loss, "{report:?}");
        assert_eq!(out.validity(), content.validity());
    }

    #[test]
    fn exploding_step_aborts_with_last_finite_iterate() {
        let (sc, gt, input) = quad_problem(64);
        let net = FeatureNet::seeded(1, 16);
        let problem = RefineProblem {
            mesh: &sc.mesh,
            pose: &sc.pose,
            input_image: &input,
            style: &gt,
        };
        let content = TextureMap::complete(RgbImage::filled(64, 64, [0.5, 0.5, 0.5])).unwrap();
        let options = RefineOptions {
            schedule: StageSchedule {
                num_stages: 3,
                scales: vec![64],
                iterations: 20,
                learning_rate: 1e300,
                ..Default::default()
            },
            content_points: 16,
            style_points: 16,
            base_resolution: 16,
            ..Default::default()
        };
        let (out, report) = refine_texture(&net, problem, &content, options).unwrap();
        let abort = report.aborted().expect("run should abort");
        assert_eq!(abort.stage, 0);
        assert_eq!(report.stages.len(), 1);
        assert!(out.pixels().is_finite());
    }
}
