//! Plain VGG-style convolution stack: 3x3 same-padded convolutions with
//! ReLU, 2x2 max pooling between blocks. Only the gradient with respect to
//! the input image is ever needed, so the backward pass never touches the
//! weights.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Activation map in planar `(channel, row, column)` layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    #[inline]
    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }
}

/// Convolution channel widths, one inner list per pooling block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub blocks: Vec<Vec<usize>>,
}

impl Architecture {
    /// The 16-layer configuration (13 convolutions in five blocks).
    pub fn vgg16() -> Self {
        Self {
            blocks: vec![
                vec![64, 64],
                vec![128, 128],
                vec![256, 256, 256],
                vec![512, 512, 512],
                vec![512, 512, 512],
            ],
        }
    }

    /// Same topology with every width divided by `divisor`.
    pub fn vgg16_slim(divisor: usize) -> Self {
        let d = divisor.max(1);
        let mut a = Self::vgg16();
        for b in &mut a.blocks {
            for c in b.iter_mut() {
                *c = (*c / d).max(1);
            }
        }
        a
    }

    pub fn conv_count(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }

    /// `(block, index within block, output channels)` of each convolution, in order.
    pub fn convs(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.blocks
            .iter()
            .enumerate()
            .flat_map(|(b, convs)| convs.iter().enumerate().map(move |(k, &c)| (b, k, c)))
    }

    /// Position of each convolution in a sequential layer list that
    /// interleaves ReLU and pooling layers (conv, relu, ..., pool, conv, ...).
    pub fn sequential_indices(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut idx = 0;
        for block in &self.blocks {
            for _ in block {
                out.push(idx);
                idx += 2;
            }
            idx += 1;
        }
        out
    }

    /// Inverse of [`Architecture::sequential_indices`]: a gap of three
    /// between consecutive convolution positions marks a pooling layer.
    pub fn from_sequential(indices_and_widths: &[(usize, usize)]) -> Result<Self> {
        let mut blocks: Vec<Vec<usize>> = Vec::new();
        let mut prev: Option<usize> = None;
        for &(idx, width) in indices_and_widths {
            match prev {
                None if idx == 0 => blocks.push(vec![width]),
                Some(p) if idx == p + 2 => blocks.last_mut().expect("started").push(width),
                Some(p) if idx == p + 3 => blocks.push(vec![width]),
                _ => {
                    return Err(Error::InvalidWeights(format!(
                        "unexpected convolution position {idx} after {prev:?}"
                    )))
                }
            }
            prev = Some(idx);
        }
        if blocks.is_empty() {
            return Err(Error::InvalidWeights("no convolution layers".into()));
        }
        Ok(Self { blocks })
    }
}

#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    /// `[out][in][3][3]`.
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl ConvLayer {
    pub fn new(in_channels: usize, out_channels: usize, weight: Vec<f32>, bias: Vec<f32>) -> Result<Self> {
        if weight.len() != out_channels * in_channels * 9 || bias.len() != out_channels {
            return Err(Error::InvalidWeights(format!(
                "conv {in_channels}->{out_channels} has {} weights and {} biases",
                weight.len(),
                bias.len()
            )));
        }
        if weight.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::InvalidWeights("non-finite parameter".into()));
        }
        Ok(Self {
            in_channels,
            out_channels,
            weight,
            bias,
        })
    }

    fn k(&self) -> usize {
        self.in_channels * 9
    }
}

/// Maximum number of `f32` values in one im2col buffer.
const COL_BUDGET: usize = 1 << 22;

fn strip_rows(k: usize, width: usize, height: usize) -> usize {
    (COL_BUDGET / (k * width).max(1)).clamp(1, height)
}

fn im2col(input: &FeatureMap, r0: usize, r1: usize, col: &mut [f32]) {
    let (h, w) = (input.height as isize, input.width);
    let n = (r1 - r0) * w;
    for c in 0..input.channels {
        let plane = input.plane(c);
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[(c * 9 + ky * 3 + kx) * n..][..n];
                for (ri, y) in (r0..r1).enumerate() {
                    let sy = y as isize + ky as isize - 1;
                    let dst = &mut row[ri * w..(ri + 1) * w];
                    if sy < 0 || sy >= h {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            dst[0] = 0.0;
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = 0.0;
                        }
                    }
                }
            }
        }
    }
}

fn col2im_add(col: &[f32], r0: usize, r1: usize, out: &mut FeatureMap) {
    let (h, w) = (out.height as isize, out.width);
    let n = (r1 - r0) * w;
    let hw = out.height * out.width;
    for c in 0..out.channels {
        let plane = &mut out.data[c * hw..(c + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[(c * 9 + ky * 3 + kx) * n..][..n];
                for (ri, y) in (r0..r1).enumerate() {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h {
                        continue;
                    }
                    let src = &row[ri * w..(ri + 1) * w];
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            for (d, s) in dst[..w - 1].iter_mut().zip(&src[1..]) {
                                *d += s;
                            }
                        }
                        1 => {
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                        _ => {
                            for (d, s) in dst[1..].iter_mut().zip(&src[..w - 1]) {
                                *d += s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Same-padded 3x3 convolution followed by ReLU.
pub fn conv_relu_forward(layer: &ConvLayer, input: &FeatureMap) -> FeatureMap {
    assert_eq!(input.channels, layer.in_channels);
    let (h, w) = (input.height, input.width);
    let hw = h * w;
    let k = layer.k();
    let mut out = FeatureMap::zeros(layer.out_channels, h, w);
    for o in 0..layer.out_channels {
        out.data[o * hw..(o + 1) * hw].fill(layer.bias[o]);
    }
    let rows = strip_rows(k, w, h);
    let mut col = vec![0.0f32; k * rows * w];
    let mut r0 = 0;
    while r0 < h {
        let r1 = (r0 + rows).min(h);
        let n = (r1 - r0) * w;
        im2col(input, r0, r1, &mut col[..k * n]);
        // out[:, r0..r1] += W (O x K) * col (K x n)
        unsafe {
            matrixmultiply::sgemm(
                layer.out_channels,
                k,
                n,
                1.0,
                layer.weight.as_ptr(),
                k as isize,
                1,
                col.as_ptr(),
                n as isize,
                1,
                1.0,
                out.data.as_mut_ptr().add(r0 * w),
                hw as isize,
                1,
            );
        }
        r0 = r1;
    }
    for v in &mut out.data {
        *v = v.max(0.0);
    }
    out
}

/// Gradient with respect to the convolution input, given the gradient with
/// respect to the post-ReLU output and that output itself.
pub fn conv_relu_backward(layer: &ConvLayer, output: &FeatureMap, grad_output: &FeatureMap) -> FeatureMap {
    let (h, w) = (output.height, output.width);
    let hw = h * w;
    let k = layer.k();
    let mut g = grad_output.data.clone();
    for (gv, ov) in g.iter_mut().zip(&output.data) {
        if *ov <= 0.0 {
            *gv = 0.0;
        }
    }
    let mut grad_in = FeatureMap::zeros(layer.in_channels, h, w);
    let rows = strip_rows(k, w, h);
    let mut col = vec![0.0f32; k * rows * w];
    let mut r0 = 0;
    while r0 < h {
        let r1 = (r0 + rows).min(h);
        let n = (r1 - r0) * w;
        // col (K x n) = W^T (K x O) * g[:, r0..r1] (O x n)
        unsafe {
            matrixmultiply::sgemm(
                k,
                layer.out_channels,
                n,
                1.0,
                layer.weight.as_ptr(),
                1,
                k as isize,
                g.as_ptr().add(r0 * w),
                hw as isize,
                1,
                0.0,
                col.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        col2im_add(&col[..k * n], r0, r1, &mut grad_in);
        r0 = r1;
    }
    grad_in
}

/// 2x2 stride-2 max pooling; returns the output and the flat input index of
/// each maximum (first maximum in raster order on ties).
pub fn max_pool_forward(input: &FeatureMap) -> (FeatureMap, Vec<u32>) {
    let (oh, ow) = (input.height / 2, input.width / 2);
    let mut out = FeatureMap::zeros(input.channels, oh, ow);
    let mut arg = vec![0u32; input.channels * oh * ow];
    let ihw = input.height * input.width;
    for c in 0..input.channels {
        let base = c * ihw;
        for y in 0..oh {
            for x in 0..ow {
                let mut best = base + 2 * y * input.width + 2 * x;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * y + dy) * input.width + 2 * x + dx;
                    if input.data[i] > input.data[best] {
                        best = i;
                    }
                }
                let o = (c * oh + y) * ow + x;
                out.data[o] = input.data[best];
                arg[o] = best as u32;
            }
        }
    }
    (out, arg)
}

pub fn max_pool_backward(argmax: &[u32], grad_output: &FeatureMap, input_shape: (usize, usize, usize)) -> FeatureMap {
    let mut g = FeatureMap::zeros(input_shape.0, input_shape.1, input_shape.2);
    for (o, &i) in argmax.iter().enumerate() {
        g.data[i as usize] += grad_output.data[o];
    }
    g
}

/// He-normal initialization with zero biases, deterministic in `seed`.
pub fn seeded_layers(arch: &Architecture, seed: u64) -> Vec<ConvLayer> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_c = 3;
    let mut layers = Vec::with_capacity(arch.conv_count());
    for (_, _, out_c) in arch.convs() {
        let std = (2.0 / (in_c as f64 * 9.0)).sqrt();
        let dist = Normal::new(0.0, std).expect("valid std");
        let weight = (0..out_c * in_c * 9).map(|_| dist.sample(&mut rng) as f32).collect();
        layers.push(ConvLayer::new(in_c, out_c, weight, vec![0.0; out_c]).expect("consistent shapes"));
        in_c = out_c;
    }
    layers
}
