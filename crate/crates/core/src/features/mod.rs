//! Hypercolumn features from a frozen convolutional classifier.
//!
//! A hypercolumn is the concatenation, at one image location, of the
//! activations of several layers, each bilinearly sampled on its own grid.

pub mod network;
pub mod weights;

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Mask, RgbImage, TextureMap};
pub use network::{Architecture, ConvLayer, FeatureMap};
pub use weights::WeightsBundle;

/// Channel total of the default layer selection on the 16-layer network.
pub const DEFAULT_TOTAL_CHANNELS: usize = 2179;

/// Identifier of the normalized input image as a tap.
pub const INPUT_TAP: &str = "input";

/// Ordered list of tapped layers. `"input"` is the normalized image;
/// `"conv{b}_{k}"` is the post-ReLU output of convolution `k` of block `b`
/// (both one-based).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSelection(pub Vec<String>);

impl Default for LayerSelection {
    /// The raw image plus nine convolution outputs, 2179 channels on the
    /// 16-layer network.
    fn default() -> Self {
        Self(
            [
                INPUT_TAP, "conv1_1", "conv1_2", "conv2_1", "conv2_2", "conv3_1", "conv3_2", "conv3_3",
                "conv4_3", "conv5_3",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        )
    }
}

/// Where a tap sits in the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TapSource {
    Input,
    Conv(usize),
}

impl LayerSelection {
    pub fn parse(list: &str) -> Self {
        Self(
            list.split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect(),
        )
    }

    fn resolve(&self, arch: &Architecture) -> Result<Vec<(TapSource, usize, usize)>> {
        let convs: Vec<_> = arch.convs().collect();
        let mut out = Vec::with_capacity(self.0.len());
        for id in &self.0 {
            if id == INPUT_TAP {
                out.push((TapSource::Input, 3, 0));
                continue;
            }
            let parsed = id
                .strip_prefix("conv")
                .and_then(|r| r.split_once('_'))
                .and_then(|(b, k)| Some((b.parse::<usize>().ok()?, k.parse::<usize>().ok()?)));
            let (b, k) = parsed.ok_or_else(|| Error::Config(format!("unknown layer id {id:?}")))?;
            let pos = convs
                .iter()
                .position(|&(cb, ck, _)| cb + 1 == b && ck + 1 == k)
                .ok_or_else(|| Error::Config(format!("layer {id} not in the network")))?;
            out.push((TapSource::Conv(pos), convs[pos].2, b - 1));
        }
        if out.is_empty() {
            return Err(Error::Config("empty layer selection".into()));
        }
        if out.windows(2).any(|w| w[1].2 < w[0].2) {
            return Err(Error::Config(
                "layer selection must be ordered from fine to coarse resolution".into(),
            ));
        }
        Ok(out)
    }

    pub fn total_channels(&self, arch: &Architecture) -> Result<usize> {
        Ok(self.resolve(arch)?.iter().map(|t| t.1).sum())
    }
}

/// Where the network weights come from.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightsSource {
    /// Pretrained bundle on disk, optionally pinned by SHA-256.
    File { path: PathBuf, sha256: Option<String> },
    /// Frozen random weights for the 16-layer topology with widths divided
    /// by `width_divisor`; used for offline runs and tests.
    Seeded { seed: u64, width_divisor: usize },
}

/// Activations of the selected layers for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    pub levels: Vec<FeatureMap>,
    pub layer_ids: Vec<String>,
    pub total_channels: usize,
    pub image_width: usize,
    pub image_height: usize,
}

/// What the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    /// Post-ReLU output of every executed convolution.
    conv_outputs: Vec<FeatureMap>,
    /// Pooling argmax indices, keyed by the index of the convolution that
    /// consumes the pooled map.
    pools: Vec<(usize, Vec<u32>, (usize, usize, usize))>,
    image_width: usize,
    image_height: usize,
}

/// Frozen feature extractor.
#[derive(Debug, Clone)]
pub struct FeatureNet {
    architecture: Architecture,
    layers: Vec<ConvLayer>,
    mean: [f32; 3],
    std: [f32; 3],
    selection: LayerSelection,
    taps: Vec<(TapSource, usize, usize)>,
    checksum: String,
}

impl FeatureNet {
    pub fn new(bundle: WeightsBundle, selection: LayerSelection, checksum: String) -> Result<Self> {
        let taps = selection.resolve(&bundle.architecture)?;
        Ok(Self {
            architecture: bundle.architecture,
            layers: bundle.layers,
            mean: bundle.mean,
            std: bundle.std,
            selection,
            taps,
            checksum,
        })
    }

    pub fn from_source(source: &WeightsSource, selection: LayerSelection) -> Result<Self> {
        match source {
            WeightsSource::File { path, sha256 } => {
                let bundle = WeightsBundle::load(path, sha256.as_deref())?;
                let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
                Self::new(bundle, selection, weights::sha256_hex(&bytes))
            }
            WeightsSource::Seeded { seed, width_divisor } => {
                Self::new(Self::seeded_bundle(*seed, *width_divisor), selection, format!("seeded:{seed}:{width_divisor}"))
            }
        }
    }

    pub fn seeded_bundle(seed: u64, width_divisor: usize) -> WeightsBundle {
        let architecture = Architecture::vgg16_slim(width_divisor);
        WeightsBundle {
            layers: network::seeded_layers(&architecture, seed),
            architecture,
            mean: weights::IMAGENET_MEAN,
            std: weights::IMAGENET_STD,
        }
    }

    pub fn seeded(seed: u64, width_divisor: usize) -> Self {
        Self::from_source(&WeightsSource::Seeded { seed, width_divisor }, LayerSelection::default())
            .expect("default selection fits the 16-layer topology")
    }

    pub fn architecture(&self) -> &Architecture {
        &self.architecture
    }

    pub fn selection(&self) -> &LayerSelection {
        &self.selection
    }

    /// SHA-256 of the weights file, or a description of seeded weights.
    pub fn checksum(&self) -> &str {
        &self.checksum
    }

    pub fn total_channels(&self) -> usize {
        self.taps.iter().map(|t| t.1).sum()
    }

    fn deepest_conv(&self) -> Option<usize> {
        self.taps
            .iter()
            .filter_map(|t| match t.0 {
                TapSource::Conv(i) => Some(i),
                TapSource::Input => None,
            })
            .max()
    }

    /// Indices of convolutions that start a new block (preceded by pooling).
    fn block_starts(&self) -> Vec<usize> {
        let mut starts = Vec::new();
        let mut i = 0;
        for (b, block) in self.architecture.blocks.iter().enumerate() {
            if b > 0 {
                starts.push(i);
            }
            i += block.len();
        }
        starts
    }

    fn normalize(&self, image: &RgbImage) -> FeatureMap {
        let (w, h) = (image.width(), image.height());
        let mut m = FeatureMap::zeros(3, h, w);
        for (p, px) in image.data().chunks_exact(3).enumerate() {
            for c in 0..3 {
                m.data[c * w * h + p] = (px[c] as f32 - self.mean[c]) / self.std[c];
            }
        }
        m
    }

    /// Runs the network and returns the selected activations.
    pub fn extract(&self, image: &RgbImage) -> Result<FeatureStack> {
        Ok(self.forward(image)?.0)
    }

    /// Forward pass that also records what [`FeatureNet::backward`] needs.
    pub fn forward(&self, image: &RgbImage) -> Result<(FeatureStack, Tape)> {
        let (w, h) = (image.width(), image.height());
        if w < 64 || h < 64 {
            return Err(Error::InvalidInput(format!(
                "feature extraction needs an image side of at least 64, got {w}x{h}"
            )));
        }
        if !image.is_finite() {
            return Err(Error::InvalidInput("image contains non-finite values".into()));
        }
        let input = self.normalize(image);
        let starts = self.block_starts();
        let mut conv_outputs: Vec<FeatureMap> = Vec::new();
        let mut pools = Vec::new();
        if let Some(last) = self.deepest_conv() {
            for i in 0..=last {
                let prev = if i == 0 { &input } else { &conv_outputs[i - 1] };
                let out = if starts.contains(&i) {
                    let shape = (prev.channels, prev.height, prev.width);
                    let (pooled, arg) = network::max_pool_forward(prev);
                    pools.push((i, arg, shape));
                    network::conv_relu_forward(&self.layers[i], &pooled)
                } else {
                    network::conv_relu_forward(&self.layers[i], prev)
                };
                conv_outputs.push(out);
            }
        }
        let levels = self
            .taps
            .iter()
            .map(|(src, _, _)| match src {
                TapSource::Input => input.clone(),
                TapSource::Conv(i) => conv_outputs[*i].clone(),
            })
            .collect();
        let stack = FeatureStack {
            levels,
            layer_ids: self.selection.0.clone(),
            total_channels: self.total_channels(),
            image_width: w,
            image_height: h,
        };
        Ok((
            stack,
            Tape {
                conv_outputs,
                pools,
                image_width: w,
                image_height: h,
            },
        ))
    }

    /// Gradient with respect to the `[0, 1]` input image, given gradients
    /// with respect to each selected level (same order and shapes as the
    /// stack's levels).
    pub fn backward(&self, tape: &Tape, level_grads: &[FeatureMap]) -> RgbImage {
        assert_eq!(level_grads.len(), self.taps.len());
        let (w, h) = (tape.image_width, tape.image_height);
        let mut input_grad = FeatureMap::zeros(3, h, w);
        let add_tap = |src: TapSource, target: &mut FeatureMap| {
            for ((s, _, _), g) in self.taps.iter().zip(level_grads) {
                if *s == src {
                    for (t, v) in target.data.iter_mut().zip(&g.data) {
                        *t += v;
                    }
                }
            }
        };
        add_tap(TapSource::Input, &mut input_grad);
        if let Some(last) = self.deepest_conv() {
            let o = &tape.conv_outputs[last];
            let mut grad = FeatureMap::zeros(o.channels, o.height, o.width);
            for i in (0..=last).rev() {
                add_tap(TapSource::Conv(i), &mut grad);
                let mut g_in = network::conv_relu_backward(&self.layers[i], &tape.conv_outputs[i], &grad);
                if let Some((_, arg, shape)) = tape.pools.iter().find(|p| p.0 == i) {
                    g_in = network::max_pool_backward(arg, &g_in, *shape);
                }
                grad = g_in;
            }
            for (t, v) in input_grad.data.iter_mut().zip(&grad.data) {
                *t += v;
            }
        }
        let mut out = RgbImage::new(w, h);
        let d = out.data_mut();
        for p in 0..w * h {
            for c in 0..3 {
                d[p * 3 + c] = f64::from(input_grad.data[c * w * h + p] / self.std[c]);
            }
        }
        out
    }
}

/// Hypercolumns sampled at a set of image points.
#[derive(Debug, Clone, PartialEq)]
pub struct HypercolumnSet {
    pub points: Vec<[f64; 2]>,
    /// Row-major `points.len() x dim`.
    pub vectors: Vec<f64>,
    pub dim: usize,
}

impl HypercolumnSet {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if rows.is_empty() || dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidInput("hypercolumn rows must be nonempty and equal length".into()));
        }
        Ok(Self {
            points: vec![[0.0; 2]; rows.len()],
            vectors: rows.into_iter().flatten().collect(),
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }
}

/// Bilinear taps of `point` on a level grid of `width x height` that spans
/// an image of `image_width x image_height`.
fn level_taps(point: [f64; 2], width: usize, height: usize, image_width: usize, image_height: usize) -> [(usize, f64); 4] {
    let sx = width as f64 / image_width as f64;
    let sy = height as f64 / image_height as f64;
    RgbImage::bilinear_taps(width, height, point[0] * sx, point[1] * sy)
}

fn check_points(points: &[[f64; 2]], width: usize, height: usize) -> Result<()> {
    if points.is_empty() {
        return Err(Error::InvalidInput("no sample points".into()));
    }
    for (index, p) in points.iter().enumerate() {
        if !(p[0] >= 0.0 && p[0] <= width as f64 && p[1] >= 0.0 && p[1] <= height as f64) {
            return Err(Error::PointOutOfBounds {
                index,
                x: p[0],
                y: p[1],
                width,
                height,
            });
        }
    }
    Ok(())
}

/// Samples every level at each point and concatenates in layer order.
pub fn sample_hypercolumns(stack: &FeatureStack, points: &[[f64; 2]]) -> Result<HypercolumnSet> {
    check_points(points, stack.image_width, stack.image_height)?;
    let dim = stack.total_channels;
    let mut vectors = vec![0.0; points.len() * dim];
    for (p, point) in points.iter().enumerate() {
        let row = &mut vectors[p * dim..(p + 1) * dim];
        let mut offset = 0;
        for level in &stack.levels {
            let taps = level_taps(*point, level.width, level.height, stack.image_width, stack.image_height);
            let hw = level.width * level.height;
            for c in 0..level.channels {
                let plane = &level.data[c * hw..(c + 1) * hw];
                row[offset + c] = taps.iter().map(|&(i, w)| w * f64::from(plane[i])).sum();
            }
            offset += level.channels;
        }
    }
    Ok(HypercolumnSet {
        points: points.to_vec(),
        vectors,
        dim,
    })
}

/// Adjoint of [`sample_hypercolumns`]: scatters per-point gradients back
/// onto the level grids.
pub fn scatter_hypercolumn_grad(stack: &FeatureStack, points: &[[f64; 2]], grad: &[f64]) -> Vec<FeatureMap> {
    let dim = stack.total_channels;
    let mut out: Vec<FeatureMap> = stack
        .levels
        .iter()
        .map(|l| FeatureMap::zeros(l.channels, l.height, l.width))
        .collect();
    for (p, point) in points.iter().enumerate() {
        let row = &grad[p * dim..(p + 1) * dim];
        let mut offset = 0;
        for g in out.iter_mut() {
            let taps = level_taps(*point, g.width, g.height, stack.image_width, stack.image_height);
            let hw = g.width * g.height;
            for c in 0..g.channels {
                let v = row[offset + c];
                if v == 0.0 {
                    continue;
                }
                for &(i, w) in &taps {
                    g.data[c * hw + i] += (w * v) as f32;
                }
            }
            offset += g.channels;
        }
    }
    out
}

/// Uniform random points over the valid pixels of `mask`, or over the whole
/// `width x height` image when no mask is given. Both cases consume the
/// random stream identically, so a full mask and no mask give the same
/// points for the same seed.
pub fn draw_points(mask: Option<&Mask>, width: usize, height: usize, count: usize, seed: u64) -> Result<Vec<[f64; 2]>> {
    if count == 0 {
        return Err(Error::InvalidInput("point count must be at least 1".into()));
    }
    let (width, valid): (usize, Option<Vec<usize>>) = match mask {
        Some(m) => (
            m.width(),
            Some(m.data().iter().enumerate().filter_map(|(i, &b)| b.then_some(i)).collect()),
        ),
        None => (width, None),
    };
    let n = valid.as_ref().map_or(width * height, Vec::len);
    if n == 0 {
        return Err(Error::InvalidInput("cannot draw points from an empty region".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            let k = rng.random_range(0..n);
            let i = valid.as_ref().map_or(k, |v| v[k]);
            let (x, y) = (i % width, i / width);
            [x as f64 + rng.random::<f64>(), y as f64 + rng.random::<f64>()]
        })
        .collect())
}

fn unit_rows(s: &HypercolumnSet) -> Vec<Vec<f64>> {
    (0..s.len())
        .map(|i| {
            let r = s.row(i);
            let n = r.iter().map(|v| v * v).sum::<f64>().sqrt().max(crate::losses::NORM_EPS);
            r.iter().map(|v| v / n).collect()
        })
        .collect()
}

/// Nearest output row and its cosine distance for each style row.
fn nearest_rows(style: &HypercolumnSet, output: &HypercolumnSet) -> Vec<(usize, f64)> {
    let (su, ou) = (unit_rows(style), unit_rows(output));
    su.iter()
        .map(|s| {
            let mut best = (0, f64::INFINITY);
            for (j, o) in ou.iter().enumerate() {
                let d = 1.0 - s.iter().zip(o).map(|(a, b)| a * b).sum::<f64>();
                if d < best.1 {
                    best = (j, d);
                }
            }
            best
        })
        .collect()
}

/// For each style hypercolumn, the index of the output hypercolumn with the
/// smallest cosine distance (lowest index on ties).
pub fn match_points(style: &HypercolumnSet, output: &HypercolumnSet) -> Vec<usize> {
    nearest_rows(style, output).into_iter().map(|(j, _)| j).collect()
}

/// Facial landmarks in a standard UV layout, as fractions of the side.
pub const DEFAULT_LANDMARKS: [(&str, [f64; 2]); 5] = [
    ("left_eye", [0.36, 0.40]),
    ("right_eye", [0.64, 0.40]),
    ("mouth_corner", [0.41, 0.70]),
    ("nose_tip", [0.50, 0.55]),
    ("cheek", [0.27, 0.58]),
];

/// The five default landmarks in texel coordinates plus one invalid texel,
/// the one nearest the middle of the left edge.
pub fn default_landmarks(validity: &Mask) -> Vec<(String, [f64; 2])> {
    let (w, h) = (validity.width(), validity.height());
    let mut out: Vec<(String, [f64; 2])> = DEFAULT_LANDMARKS
        .iter()
        .map(|(n, p)| (n.to_string(), [p[0] * w as f64, p[1] * h as f64]))
        .collect();
    let anchor = [0.0, h as f64 / 2.0];
    let invalid = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .filter(|&(x, y)| !validity.get(x, y))
        .map(|(x, y)| [x as f64 + 0.5, y as f64 + 0.5])
        .min_by(|a, b| {
            let d = |p: &[f64; 2]| (p[0] - anchor[0]).powi(2) + (p[1] - anchor[1]).powi(2);
            d(a).total_cmp(&d(b))
        })
        .unwrap_or([0.5, anchor[1]]);
    out.push(("invalid".into(), invalid));
    out
}

/// A style point and its hypercolumn match in an output image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointMatch {
    pub name: String,
    pub point: [f64; 2],
    /// Whether the style point lies in the style texture's valid region.
    pub valid: bool,
    pub matched: [f64; 2],
    pub matched_in_valid_region: bool,
    pub distance: f64,
}

/// Matches hypercolumns at `landmarks` of the style texture against a grid
/// of output locations spaced `stride` texels apart. Both images must share
/// a size.
pub fn diagnose_matches(
    net: &FeatureNet,
    style: &TextureMap,
    output: &RgbImage,
    landmarks: &[(String, [f64; 2])],
    stride: usize,
) -> Result<Vec<PointMatch>> {
    let side = style.resolution();
    if output.width() != side || output.height() != side {
        return Err(Error::InvalidInput(format!(
            "output is {}x{} but the style texture is {side}x{side}",
            output.width(),
            output.height()
        )));
    }
    let stride = stride.max(1);
    let points: Vec<[f64; 2]> = landmarks.iter().map(|(_, p)| *p).collect();
    let style_hc = sample_hypercolumns(&net.extract(style.pixels())?, &points)?;
    let grid: Vec<[f64; 2]> = (0..side / stride)
        .flat_map(|y| (0..side / stride).map(move |x| [(x as f64 + 0.5) * stride as f64, (y as f64 + 0.5) * stride as f64]))
        .collect();
    let output_hc = sample_hypercolumns(&net.extract(output)?, &grid)?;
    let in_valid = |p: [f64; 2]| {
        let (x, y) = (p[0].floor() as usize, p[1].floor() as usize);
        x < side && y < side && style.validity().get(x, y)
    };
    Ok(nearest_rows(&style_hc, &output_hc)
        .into_iter()
        .zip(landmarks)
        .map(|((j, distance), (name, point))| PointMatch {
            name: name.clone(),
            point: *point,
            valid: in_valid(*point),
            matched: grid[j],
            matched_in_valid_region: in_valid(grid[j]),
            distance,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_net() -> FeatureNet {
        FeatureNet::seeded(11, 16)
    }

    #[test]
    fn default_selection_has_2179_channels_on_vgg16() {
        let sel = LayerSelection::default();
        assert_eq!(sel.total_channels(&Architecture::vgg16()).unwrap(), DEFAULT_TOTAL_CHANNELS);
        assert_eq!(sel.0.iter().filter(|s| s.starts_with("conv")).count(), 9);
    }

    #[test]
    fn stack_is_deterministic_and_levels_shrink() {
        let net = small_net();
        let img = crate::scene::procedural_texture(64, 3);
        let a = net.extract(&img).unwrap();
        let b = net.extract(&img).unwrap();
        assert_eq!(a, b);
        assert!(a.levels.windows(2).all(|w| w[1].width <= w[0].width));
        assert_eq!(a.levels.iter().map(|l| l.channels).sum::<usize>(), a.total_channels);
    }

    #[test]
    fn tiny_images_are_rejected() {
        assert!(small_net().extract(&RgbImage::new(32, 32)).is_err());
    }

    #[test]
    fn node_and_midpoint_sampling() {
        let mut level = FeatureMap::zeros(1, 4, 4);
        for (i, v) in level.data.iter_mut().enumerate() {
            *v = (i % 4) as f32;
        }
        let stack = FeatureStack {
            levels: vec![level],
            layer_ids: vec!["x".into()],
            total_channels: 1,
            image_width: 8,
            image_height: 8,
        };
        // node (2, 1) of a half-resolution level sits at image (5, 3)
        let hc = sample_hypercolumns(&stack, &[[5.0, 3.0], [5.0, 3.0], [4.0, 3.0]]).unwrap();
        assert_eq!(hc.row(0), &[2.0]);
        assert_eq!(hc.row(0), hc.row(1));
        assert_eq!(hc.row(2), &[1.5]);
        let err = sample_hypercolumns(&stack, &[[1.0, 1.0], [9.0, 1.0]]).unwrap_err();
        assert!(matches!(err, Error::PointOutOfBounds { index: 1, .. }));
    }

    #[test]
    fn block_swap_permutes_vector_blocks() {
        let bundle = FeatureNet::seeded_bundle(3, 16);
        let a = FeatureNet::new(bundle.clone(), LayerSelection::parse("conv1_1,conv1_2,conv2_1"), String::new()).unwrap();
        let b = FeatureNet::new(bundle, LayerSelection::parse("conv1_2,conv1_1,conv2_1"), String::new()).unwrap();
        let img = crate::scene::procedural_texture(64, 8);
        let pts = [[10.3, 20.7], [40.0, 5.5]];
        let ha = sample_hypercolumns(&a.extract(&img).unwrap(), &pts).unwrap();
        let hb = sample_hypercolumns(&b.extract(&img).unwrap(), &pts).unwrap();
        let c = 4; // conv1 width with divisor 16
        for p in 0..2 {
            assert_eq!(&ha.row(p)[..c], &hb.row(p)[c..2 * c]);
            assert_eq!(&ha.row(p)[c..2 * c], &hb.row(p)[..c]);
            assert_eq!(&ha.row(p)[2 * c..], &hb.row(p)[2 * c..]);
        }
        assert!(FeatureNet::new(FeatureNet::seeded_bundle(3, 16), LayerSelection::parse("conv2_1,conv1_1"), String::new()).is_err());
    }

    #[test]
    fn draw_points_contracts() {
        let mut m = Mask::new(8, 8);
        m.set(3, 5, true);
        let pts = draw_points(Some(&m), 8, 8, 50, 1).unwrap();
        assert!(pts.iter().all(|p| (3.0..4.0).contains(&p[0]) && (5.0..6.0).contains(&p[1])));
        assert_eq!(draw_points(None, 8, 8, 20, 9).unwrap(), draw_points(None, 8, 8, 20, 9).unwrap());
        assert!(draw_points(Some(&Mask::new(4, 4)), 4, 4, 3, 0).is_err());
        assert_eq!(
            draw_points(Some(&Mask::full(16, 8)), 16, 8, 30, 5).unwrap(),
            draw_points(None, 16, 8, 30, 5).unwrap()
        );
    }

    #[test]
    fn draw_points_uniform_quadrants() {
        let pts = draw_points(Some(&Mask::full(64, 64)), 64, 64, 10_000, 42).unwrap();
        let mut counts = [0usize; 4];
        for p in &pts {
            counts[(p[0] >= 32.0) as usize + 2 * (p[1] >= 32.0) as usize] += 1;
        }
        for c in counts {
            assert!((c as f64 - 2500.0).abs() < 0.05 * 2500.0, "{counts:?}");
        }
    }

    fn random_set(n: usize, d: usize, seed: u64) -> HypercolumnSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        HypercolumnSet::from_rows((0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()).unwrap()
    }

    #[test]
    fn matching_identity_and_oracle() {
        let s = random_set(20, 20, 1);
        assert_eq!(match_points(&s, &s), (0..20).collect::<Vec<_>>());
        let o = random_set(20, 20, 2);
        let got = match_points(&s, &o);
        for i in 0..20 {
            let mut best = (f64::INFINITY, 0);
            for j in 0..20 {
                let (a, b) = (s.row(i), o.row(j));
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                let d = 1.0 - dot / (na * nb);
                if d < best.0 {
                    best = (d, j);
                }
            }
            assert_eq!(got[i], best.1);
        }
        // positive rescaling changes nothing
        let mut scaled = o.clone();
        for (k, v) in scaled.vectors.iter_mut().enumerate() {
            *v *= 1.0 + (k / 20) as f64;
        }
        assert_eq!(match_points(&s, &scaled), got);
    }

    #[test]
    fn orthogonal_pair_matches() {
        let style = HypercolumnSet::from_rows(vec![vec![0.0, 2.0, 0.0]]).unwrap();
        let output = HypercolumnSet::from_rows(vec![vec![1.0, 0.0, 0.0], vec![0.0, 2.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        assert_eq!(match_points(&style, &output), vec![1]);
    }

    #[test]
    fn default_landmarks_include_one_invalid_point() {
        let mask = Mask::from_fn(64, 64, |x, _| x >= 10);
        let lm = default_landmarks(&mask);
        assert_eq!(lm.len(), 6);
        assert_eq!(lm[5].0, "invalid");
        assert_eq!(lm[5].1, [0.5, 31.5]);
        assert!(lm[..5].iter().all(|(_, p)| mask.get(p[0] as usize, p[1] as usize)));
    }

    #[test]
    fn identical_images_match_in_place() {
        let net = small_net();
        let img = crate::scene::procedural_texture(64, 4);
        let style = TextureMap::complete(img.clone()).unwrap();
        let lm = default_landmarks(&Mask::from_fn(64, 64, |x, _| x >= 4));
        let rows = diagnose_matches(&net, &style, &img, &lm[..5], 1).unwrap();
        for r in &rows {
            let off = ((r.matched[0] - r.point[0]).powi(2) + (r.matched[1] - r.point[1]).powi(2)).sqrt();
            assert!(off <= 1.5, "{r:?}");
            assert!(r.valid && r.matched_in_valid_region);
        }
        assert!(diagnose_matches(&net, &style, &RgbImage::new(32, 32), &lm, 1).is_err());
    }
}
