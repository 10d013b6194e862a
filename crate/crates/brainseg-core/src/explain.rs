//! Grad-CAM explanations: pooled-gradient heatmaps from the penultimate
//! convolutional layer, normalization, resizing, Gaussian smoothing and
//! colormap overlay.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::image;
use crate::math::{self, Element};
use crate::model::AttentionUNet;
use crate::tensor::Tensor;

/// Which class score the explanation targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradCamTarget {
    /// Sum of all tumor class logits (every class except background 0).
    CombinedTumor,
    /// One class index.
    Class(usize),
}

/// Grad-CAM settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCamConfig {
    pub target: GradCamTarget,
    /// When set, the score sums each pixel's predicted-class logit only over
    /// pixels whose argmax prediction lies in the target set.
    pub masked_score: bool,
    /// Gaussian smoothing width in heatmap pixels.
    pub sigma: f64,
    /// Overlay blend weight.
    pub alpha: f64,
}

impl Default for GradCamConfig {
    fn default() -> Self {
        GradCamConfig {
            target: GradCamTarget::CombinedTumor,
            masked_score: false,
            sigma: 2.0,
            alpha: 0.4,
        }
    }
}

impl GradCamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::contract("gradcam", format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::contract("gradcam", format!("alpha must be in [0,1], got {}", self.alpha)));
        }
        Ok(())
    }
}

/// A single-channel attribution map. `normalized` marks maps scaled into
/// [0,1]; immediately after [`normalize_heatmap`] the maximum is exactly 1
/// (or the map is all zeros), and [`gaussian_smooth`] restores that peak
/// after resizing may have lowered it.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub normalized: bool,
}

impl Heatmap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::shape(
                "heatmap",
                format!("{} values do not fill {height}x{width}", values.len()),
            ));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::contract("heatmap", "heatmap values must be finite"));
        }
        Ok(Heatmap { height, width, values, normalized: false })
    }

    pub fn max(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, &v| m.max(v))
    }
}

fn target_classes(target: GradCamTarget, num_classes: usize) -> Result<Vec<usize>> {
    match target {
        GradCamTarget::CombinedTumor => Ok((1..num_classes).collect()),
        GradCamTarget::Class(c) => {
            if c >= num_classes {
                return Err(Error::contract(
                    "gradcam",
                    format!("class index {c} out of range for {num_classes} classes"),
                ));
            }
            Ok(vec![c])
        }
    }
}

fn gradcam_scaled<E: Element>(
    model: &AttentionUNet<E>,
    input: &Tensor<E>,
    config: &GradCamConfig,
    scale: f64,
) -> Result<Heatmap> {
    config.validate()?;
    let classes = target_classes(config.target, model.config().num_classes)?;
    let (n, _, _, _) = input.dims4("gradcam")?;
    if n != 1 {
        return Err(Error::contract("gradcam", format!("input batch must be 1, got {n}")));
    }

    let mut g = Graph::new();
    let vars = model.wire(&mut g, true);
    let x = g.input(input.clone());
    let nodes = model.forward_wired(&mut g, &vars, x)?;

    let logits_shape = g.value(nodes.logits).shape().to_vec();
    let (_, num_classes, h, w) = g.value(nodes.logits).dims4("gradcam")?;
    let pixels = h * w;
    let mut selection = vec![E::ZERO; logits_shape.iter().product()];
    let weight = E::from_f64(scale);
    if config.masked_score {
        let probs = g.value(nodes.probs);
        for p in 0..pixels {
            let mut best = 0usize;
            let mut best_v = probs.data()[p];
            for c in 1..num_classes {
                let v = probs.data()[c * pixels + p];
                if v > best_v {
                    best_v = v;
                    best = c;
                }
            }
            if classes.contains(&best) {
                selection[best * pixels + p] = weight;
            }
        }
    } else {
        for &c in &classes {
            for p in 0..pixels {
                selection[c * pixels + p] = weight;
            }
        }
    }
    let sel = g.input(Tensor::new(&logits_shape, selection)?);
    let masked = g.mul(nodes.logits, sel)?;
    let score = g.sum_all(masked);
    let grads = g.backward(score)?;

    let activations = g.value(nodes.penultimate);
    let grad = grads.get(nodes.penultimate).ok_or_else(|| {
        Error::contract("gradcam", "no gradient reached the penultimate layer")
    })?;
    let (_, k_maps, fh, fw) = activations.dims4("gradcam")?;
    let plane = fh * fw;

    let mut heat = vec![0.0_f64; plane];
    for k in 0..k_maps {
        let offset = k * plane;
        let mut alpha_k = 0.0_f64;
        for p in 0..plane {
            alpha_k += grad.data()[offset + p].to_f64();
        }
        alpha_k /= plane as f64;
        for p in 0..plane {
            heat[p] += alpha_k * activations.data()[offset + p].to_f64();
        }
    }
    for v in &mut heat {
        *v = v.max(0.0);
    }
    Heatmap::new(fh, fw, heat)
}

/// Raw Grad-CAM heatmap at the penultimate layer's resolution: the score is
/// the (optionally masked) sum of the target classes' pre-softmax logits over
/// all pixels; each feature map is weighted by the spatial mean of the
/// score's gradient over it, and the weighted sum is rectified.
pub fn gradcam<E: Element>(
    model: &AttentionUNet<E>,
    input: &Tensor<E>,
    config: &GradCamConfig,
) -> Result<Heatmap> {
    gradcam_scaled(model, input, config, 1.0)
}

/// Scales the map by its maximum; an all-zero map stays all-zero.
pub fn normalize_heatmap(h: &Heatmap) -> Heatmap {
    let max = h.max();
    let mut out = h.clone();
    if max > 0.0 {
        for v in &mut out.values {
            *v /= max;
        }
    }
    out.normalized = true;
    out
}

/// Bilinear resize with the same sampling convention as the image pipeline;
/// the peak may drop below 1, which [`gaussian_smooth`] restores.
pub fn resize_heatmap(h: &Heatmap, out: (usize, usize)) -> Result<Heatmap> {
    let values = image::resize_bilinear(&h.values, (h.height, h.width), out)?;
    Ok(Heatmap { height: out.0, width: out.1, values, normalized: h.normalized })
}

fn reflect(mut i: isize, n: usize) -> usize {
    let n = n as isize;
    loop {
        if i < 0 {
            i = -1 - i;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = math::ceil(3.0 * sigma) as isize;
    let mut weights: Vec<f64> = (-radius..=radius)
        .map(|j| math::exp(-((j * j) as f64) / (2.0 * sigma * sigma)))
        .collect();
    let sum: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= sum;
    }
    weights
}

fn smooth_axis(values: &[f64], height: usize, width: usize, kernel: &[f64], rows: bool) -> Vec<f64> {
    let radius = (kernel.len() / 2) as isize;
    let mut out = vec![0.0_f64; values.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (t, wk) in kernel.iter().enumerate() {
                let offset = t as isize - radius;
                let (sy, sx) = if rows {
                    (y, reflect(x as isize + offset, width))
                } else {
                    (reflect(y as isize + offset, height), x)
                };
                acc += wk * values[sy * width + sx];
            }
            out[y * width + x] = acc;
        }
    }
    out
}

/// Separable Gaussian blur with reflect padding (edge sample mirrored, scipy
/// convention), kernel radius `ceil(3*sigma)`, weights normalized to sum 1.
/// Widths below 0.5 are a documented identity cutoff. Normalized nonzero
/// inputs are rescaled back to peak 1 after blurring.
pub fn gaussian_smooth(h: &Heatmap, sigma: f64) -> Result<Heatmap> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::contract("gaussian_smooth", format!("sigma must be >= 0, got {sigma}")));
    }
    if sigma < 0.5 {
        return Ok(h.clone());
    }
    let kernel = gaussian_kernel(sigma);
    let rows = smooth_axis(&h.values, h.height, h.width, &kernel, true);
    let mut values = smooth_axis(&rows, h.height, h.width, &kernel, false);
    if h.normalized {
        let max = values.iter().fold(0.0_f64, |m, &v| m.max(v));
        if max > 0.0 {
            for v in &mut values {
                *v /= max;
            }
        }
    }
    Ok(Heatmap { height: h.height, width: h.width, values, normalized: h.normalized })
}

/// An RGB image with interleaved channels in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    /// `3 * height * width` values, r,g,b per pixel.
    pub data: Vec<f64>,
}

/// Fixed five-point piecewise-linear colormap. Control points:
/// 0.00 blue (0,0,1), 0.25 cyan (0,1,1), 0.50 green (0,1,0),
/// 0.75 yellow (1,1,0), 1.00 red (1,0,0).
pub fn colormap(t: f64) -> [f64; 3] {
    const STOPS: [[f64; 3]; 5] =
        [[0.0, 0.0, 1.0], [0.0, 1.0, 1.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0], [1.0, 0.0, 0.0]];
    let t = t.clamp(0.0, 1.0);
    let pos = t * 4.0;
    let seg = (math::floor(pos) as usize).min(3);
    let u = pos - seg as f64;
    let lo = STOPS[seg];
    let hi = STOPS[seg + 1];
    [
        lo[0] + u * (hi[0] - lo[0]),
        lo[1] + u * (hi[1] - lo[1]),
        lo[2] + u * (hi[2] - lo[2]),
    ]
}

fn require_normalized(op: &'static str, h: &Heatmap) -> Result<()> {
    if !h.normalized {
        return Err(Error::contract(op, "heatmap must be normalized first"));
    }
    Ok(())
}

/// Maps a normalized heatmap through the colormap.
pub fn colorize(h: &Heatmap) -> Result<RgbImage> {
    require_normalized("colorize", h)?;
    let mut data = Vec::with_capacity(3 * h.values.len());
    for &v in &h.values {
        data.extend_from_slice(&colormap(v));
    }
    Ok(RgbImage { height: h.height, width: h.width, data })
}

fn check_gray(op: &'static str, gray: &[f64], dims: (usize, usize)) -> Result<()> {
    if gray.len() != dims.0 * dims.1 {
        return Err(Error::shape(
            op,
            format!("{} grayscale values do not fill {}x{}", gray.len(), dims.0, dims.1),
        ));
    }
    Ok(())
}

/// Replicates a grayscale image into RGB, clamped to [0,1].
pub fn grayscale_to_rgb(gray: &[f64], dims: (usize, usize)) -> Result<RgbImage> {
    check_gray("grayscale_to_rgb", gray, dims)?;
    let mut data = Vec::with_capacity(3 * gray.len());
    for &v in gray {
        let v = v.clamp(0.0, 1.0);
        data.extend_from_slice(&[v, v, v]);
    }
    Ok(RgbImage { height: dims.0, width: dims.1, data })
}

/// Blends the colorized heatmap over a grayscale image:
/// `(1-alpha)*gray + alpha*colormap(heat)`, channels clamped to [0,1].
pub fn overlay(gray: &[f64], dims: (usize, usize), h: &Heatmap, alpha: f64) -> Result<RgbImage> {
    check_gray("overlay", gray, dims)?;
    require_normalized("overlay", h)?;
    if (h.height, h.width) != dims {
        return Err(Error::shape(
            "overlay",
            format!("heatmap {}x{} does not match image {}x{}", h.height, h.width, dims.0, dims.1),
        ));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::contract("overlay", format!("alpha must be in [0,1], got {alpha}")));
    }
    let mut data = Vec::with_capacity(3 * gray.len());
    for (&g, &t) in gray.iter().zip(&h.values) {
        let g = g.clamp(0.0, 1.0);
        let color = colormap(t);
        for ch in color {
            data.push(((1.0 - alpha) * g + alpha * ch).clamp(0.0, 1.0));
        }
    }
    Ok(RgbImage { height: dims.0, width: dims.1, data })
}
