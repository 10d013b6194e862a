//! Case-level data pipeline: volumes, axial slice extraction, sample
//! preparation, dataset splitting and shuffled batch generation.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image;
use crate::rng::SeedRng;
use crate::tensor::Tensor;

/// A 3D scalar volume in x-fastest voxel order.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    /// Extents (X, Y, Z).
    pub dims: (usize, usize, usize),
    /// `dims.0 * dims.1 * dims.2` finite values; x varies fastest, z slowest.
    pub voxels: Vec<f32>,
}

impl Volume {
    pub fn new(dims: (usize, usize, usize), voxels: Vec<f32>) -> Result<Self> {
        let (x, y, z) = dims;
        if x == 0 || y == 0 || z == 0 {
            return Err(Error::contract("volume", format!("dims must be positive, got {dims:?}")));
        }
        if voxels.len() != x * y * z {
            return Err(Error::shape(
                "volume",
                format!("{} voxels do not fill dims {dims:?}", voxels.len()),
            ));
        }
        if !voxels.iter().all(|v| v.is_finite()) {
            return Err(Error::contract("volume", "voxel values must be finite"));
        }
        Ok(Volume { dims, voxels })
    }

    /// Borrows the axial plane at height `z` as a row-major `Y x X` image.
    pub fn plane(&self, z: usize) -> Result<&[f32]> {
        let (x, y, depth) = self.dims;
        if z >= depth {
            return Err(Error::contract(
                "volume",
                format!("plane {z} out of range for depth {depth}"),
            ));
        }
        Ok(&self.voxels[z * x * y..][..x * y])
    }
}

/// One training case: two modality volumes and the segmentation volume.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseRecord {
    pub id: String,
    pub flair: Volume,
    pub t1ce: Volume,
    pub seg: Volume,
}

impl CaseRecord {
    pub fn new(id: String, flair: Volume, t1ce: Volume, seg: Volume) -> Result<Self> {
        if flair.dims != t1ce.dims || flair.dims != seg.dims {
            return Err(Error::shape(
                "case_record",
                format!(
                    "volume dims differ for case {id}: flair {:?}, t1ce {:?}, seg {:?}",
                    flair.dims, t1ce.dims, seg.dims
                ),
            ));
        }
        Ok(CaseRecord { id, flair, t1ce, seg })
    }
}

/// Input modality selection for the image channels, in channel order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Flair,
    T1ce,
}

/// Contiguous axial window `z = start .. start + count`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SliceWindow {
    pub start: usize,
    pub count: usize,
}

impl Default for SliceWindow {
    /// The 100-slice window starting at index 22 used for full-size volumes.
    fn default() -> Self {
        SliceWindow { start: 22, count: 100 }
    }
}

/// One extracted axial slice, pre-resize.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSlice {
    pub z: usize,
    pub height: usize,
    pub width: usize,
    pub flair: Vec<f32>,
    pub t1ce: Vec<f32>,
    pub mask: Vec<u8>,
}

/// A preprocessed training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceSample {
    /// `[channels, H, W]`, values in [0,1].
    pub image: Tensor<f32>,
    /// `[4, H, W]` one-hot mask.
    pub mask: Tensor<f32>,
}

fn seg_plane_to_labels(plane: &[f32], case_id: &str, z: usize) -> Result<Vec<u8>> {
    plane
        .iter()
        .map(|&v| {
            if crate::math::floor(f64::from(v)) != f64::from(v) || !(0.0..=255.0).contains(&v) {
                return Err(Error::contract(
                    "extract_slices",
                    format!("case {case_id} slice {z}: segmentation value {v} is not a label"),
                ));
            }
            Ok(v as u8)
        })
        .collect()
}

/// Extracts the configured axial window from a case.
pub fn extract_slices(case: &CaseRecord, window: SliceWindow) -> Result<Vec<RawSlice>> {
    let (x, y, z_dim) = case.flair.dims;
    if window.count == 0 {
        return Err(Error::contract("extract_slices", "window count must be positive"));
    }
    let end = window.start + window.count;
    if end > z_dim {
        return Err(Error::contract(
            "extract_slices",
            format!(
                "case {}: window z = {}..{} exceeds volume depth {z_dim}",
                case.id,
                window.start,
                end - 1
            ),
        ));
    }
    (window.start..end)
        .map(|z| {
            Ok(RawSlice {
                z,
                height: y,
                width: x,
                flair: case.flair.plane(z)?.to_vec(),
                t1ce: case.t1ce.plane(z)?.to_vec(),
                mask: seg_plane_to_labels(case.seg.plane(z)?, &case.id, z)?,
            })
        })
        .collect()
}

/// Runs the full preprocessing chain on one case: per-volume min-max
/// normalization, axial windowing, bilinear image / nearest mask resize to
/// `out`, label remap and one-hot encoding.
pub fn case_to_samples(
    case: &CaseRecord,
    modalities: &[Modality],
    window: SliceWindow,
    out: (usize, usize),
) -> Result<Vec<SliceSample>> {
    if modalities.is_empty() {
        return Err(Error::contract("case_to_samples", "at least one modality is required"));
    }
    let mut normalized = case.clone();
    for m in modalities {
        match m {
            Modality::Flair => image::normalize(&mut normalized.flair.voxels),
            Modality::T1ce => image::normalize(&mut normalized.t1ce.voxels),
        }
    }

    let (oh, ow) = out;
    extract_slices(&normalized, window)?
        .into_iter()
        .map(|raw| {
            let src_dims = (raw.height, raw.width);
            let mut image_data = Vec::with_capacity(modalities.len() * oh * ow);
            for m in modalities {
                let plane = match m {
                    Modality::Flair => &raw.flair,
                    Modality::T1ce => &raw.t1ce,
                };
                image_data.extend(image::resize_bilinear(plane, src_dims, out)?);
            }
            let image = Tensor::new(&[modalities.len(), oh, ow], image_data)?;

            let remapped = image::remap_labels(&raw.mask)?;
            let resized = image::resize_nearest_labels(&remapped, src_dims, out)?;
            let mask = image::one_hot(&resized, out, 4)?;
            Ok(SliceSample { image, mask })
        })
        .collect()
}

/// Disjoint train/validation/test case id lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

/// Removes excluded ids, shuffles the rest with the seeded generator and
/// partitions by ratios: validation and test get the floor of their share,
/// the remainder goes to train.
pub fn split_dataset(
    ids: &[String],
    exclusions: &[String],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<DatasetSplit> {
    let (r_train, r_val, r_test) = ratios;
    if r_train < 0.0 || r_val < 0.0 || r_test < 0.0 {
        return Err(Error::contract("split_dataset", "ratios must be non-negative"));
    }
    if ((r_train + r_val + r_test) - 1.0).abs() > 1e-9 {
        return Err(Error::contract(
            "split_dataset",
            format!("ratios must sum to 1, got {}", r_train + r_val + r_test),
        ));
    }
    let mut kept: Vec<String> =
        ids.iter().filter(|id| !exclusions.contains(id)).cloned().collect();
    if kept.is_empty() {
        return Err(Error::contract("split_dataset", "no cases remain after exclusions"));
    }

    let mut rng = SeedRng::new(seed);
    rng.shuffle(&mut kept);

    let n = kept.len();
    let n_val = (n as f64 * r_val) as usize;
    let n_test = (n as f64 * r_test) as usize;
    let n_train = n - n_val - n_test;

    let test = kept.split_off(n_train + n_val);
    let validation = kept.split_off(n_train);
    Ok(DatasetSplit { train: kept, validation, test })
}

/// Stacks samples into one `[B,C,H,W]` image tensor and `[B,4,H,W]` mask
/// tensor.
pub fn stack_samples(samples: &[&SliceSample]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let first = samples
        .first()
        .ok_or_else(|| Error::contract("stack_samples", "batch must be nonempty"))?;
    let image_shape = first.image.shape();
    let mask_shape = first.mask.shape();
    let mut images = Vec::with_capacity(samples.len() * first.image.numel());
    let mut masks = Vec::with_capacity(samples.len() * first.mask.numel());
    for s in samples {
        if s.image.shape() != image_shape || s.mask.shape() != mask_shape {
            return Err(Error::shape(
                "stack_samples",
                format!(
                    "sample shapes differ: {:?}/{:?} vs {:?}/{:?}",
                    s.image.shape(),
                    s.mask.shape(),
                    image_shape,
                    mask_shape
                ),
            ));
        }
        images.extend_from_slice(s.image.data());
        masks.extend_from_slice(s.mask.data());
    }
    let mut ishape = Vec::with_capacity(4);
    ishape.push(samples.len());
    ishape.extend_from_slice(image_shape);
    let mut mshape = Vec::with_capacity(4);
    mshape.push(samples.len());
    mshape.extend_from_slice(mask_shape);
    Ok((Tensor::new(&ishape, images)?, Tensor::new(&mshape, masks)?))
}

/// Splits samples into fixed-order batches for evaluation; the final batch
/// may be short.
pub fn sequential_batches(
    samples: &[SliceSample],
    batch_size: usize,
) -> Result<Vec<(Tensor<f32>, Tensor<f32>)>> {
    if batch_size == 0 {
        return Err(Error::contract("sequential_batches", "batch size must be positive"));
    }
    samples
        .chunks(batch_size)
        .map(|chunk| {
            let refs: Vec<&SliceSample> = chunk.iter().collect();
            stack_samples(&refs)
        })
        .collect()
}

/// Shuffled batch generator: each epoch draws a fresh permutation from its
/// own seeded stream and yields every sample exactly once, with the final
/// short batch emitted as-is.
pub struct SliceBatcher {
    samples: Vec<SliceSample>,
    batch_size: usize,
    rng: SeedRng,
    order: Vec<usize>,
    cursor: usize,
}

impl SliceBatcher {
    pub fn new(samples: Vec<SliceSample>, batch_size: usize, seed: u64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::contract("batch_generator", "sample set must be nonempty"));
        }
        if batch_size == 0 {
            return Err(Error::contract("batch_generator", "batch size must be positive"));
        }
        let order = (0..samples.len()).collect();
        Ok(SliceBatcher { samples, batch_size, rng: SeedRng::new(seed), order, cursor: 0 })
    }

    pub fn num_samples(&self) -> usize {
        self.samples.len()
    }

    /// Batches in one epoch (the last may be short).
    pub fn batches_per_epoch(&self) -> usize {
        self.samples.len().div_ceil(self.batch_size)
    }

    /// Borrows the underlying samples in storage order.
    pub fn samples(&self) -> &[SliceSample] {
        &self.samples
    }

    /// Next `(images, masks)` batch; reshuffles at each epoch boundary.
    pub fn next_batch(&mut self) -> Result<(Tensor<f32>, Tensor<f32>)> {
        if self.cursor == 0 {
            self.rng.shuffle(&mut self.order);
        }
        let remaining = self.samples.len() - self.cursor;
        let take = remaining.min(self.batch_size);
        let refs: Vec<&SliceSample> =
            self.order[self.cursor..self.cursor + take].iter().map(|&i| &self.samples[i]).collect();
        self.cursor += take;
        if self.cursor >= self.samples.len() {
            self.cursor = 0;
        }
        stack_samples(&refs)
    }
}
