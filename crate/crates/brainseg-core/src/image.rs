//! 2D slice preprocessing: resizing, label remapping, one-hot encoding and
//! intensity normalization.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::Element;
use crate::tensor::Tensor;

fn check_resize_dims(h: usize, w: usize, oh: usize, ow: usize, len: usize) -> Result<()> {
    if h < 2 || w < 2 {
        return Err(Error::contract("resize", format!("input must be at least 2x2, got {h}x{w}")));
    }
    if oh == 0 || ow == 0 {
        return Err(Error::contract("resize", "output dims must be positive"));
    }
    if len != h * w {
        return Err(Error::shape(
            "resize",
            format!("buffer holds {len} values, dims {h}x{w} need {}", h * w),
        ));
    }
    Ok(())
}

/// Source coordinate of output pixel `i` under half-pixel-centered sampling:
/// `(i + 0.5) * in/out - 0.5`, clamped to the valid range.
fn source_coord(i: usize, in_len: usize, out_len: usize) -> f64 {
    let f = (i as f64 + 0.5) * (in_len as f64 / out_len as f64) - 0.5;
    f.clamp(0.0, (in_len - 1) as f64)
}

/// Bilinear resize of an `h x w` row-major image to `oh x ow`. Resizing to
/// the input size returns the input bitwise.
pub fn resize_bilinear<E: Element>(
    src: &[E],
    (h, w): (usize, usize),
    (oh, ow): (usize, usize),
) -> Result<Vec<E>> {
    check_resize_dims(h, w, oh, ow, src.len())?;
    if (oh, ow) == (h, w) {
        return Ok(src.to_vec());
    }
    let mut out = Vec::with_capacity(oh * ow);
    for oy in 0..oh {
        let fy = source_coord(oy, h, oh);
        let y0 = fy as usize;
        let y1 = (y0 + 1).min(h - 1);
        let dy = fy - y0 as f64;
        for ox in 0..ow {
            let fx = source_coord(ox, w, ow);
            let x0 = fx as usize;
            let x1 = (x0 + 1).min(w - 1);
            let dx = fx - x0 as f64;
            let v00 = src[y0 * w + x0].to_f64();
            let v01 = src[y0 * w + x1].to_f64();
            let v10 = src[y1 * w + x0].to_f64();
            let v11 = src[y1 * w + x1].to_f64();
            let top = v00 * (1.0 - dx) + v01 * dx;
            let bottom = v10 * (1.0 - dx) + v11 * dx;
            out.push(E::from_f64(top * (1.0 - dy) + bottom * dy));
        }
    }
    Ok(out)
}

/// Nearest-neighbor resize of a label image; index rounding is half-down so
/// the sampled grid is stable, and no new labels can appear.
pub fn resize_nearest_labels(
    src: &[u8],
    (h, w): (usize, usize),
    (oh, ow): (usize, usize),
) -> Result<Vec<u8>> {
    check_resize_dims(h, w, oh, ow, src.len())?;
    if (oh, ow) == (h, w) {
        return Ok(src.to_vec());
    }
    let nearest = |i: usize, in_len: usize, out_len: usize| -> usize {
        let f = source_coord(i, in_len, out_len);
        let idx = crate::math::ceil(f - 0.5);
        (idx.max(0.0) as usize).min(in_len - 1)
    };
    let mut out = Vec::with_capacity(oh * ow);
    for oy in 0..oh {
        let y = nearest(oy, h, oh);
        for ox in 0..ow {
            let x = nearest(ox, w, ow);
            out.push(src[y * w + x]);
        }
    }
    Ok(out)
}

/// Maps the raw label alphabet {0,1,2,4} to the contiguous {0,1,2,3} by
/// replacing 4 with 3.
pub fn remap_labels(labels: &[u8]) -> Result<Vec<u8>> {
    labels
        .iter()
        .map(|&l| match l {
            0 | 1 | 2 => Ok(l),
            4 => Ok(3),
            3 => Err(Error::contract(
                "remap_labels",
                "label 3 already present; input must use the raw alphabet {0,1,2,4}",
            )),
            other => Err(Error::contract(
                "remap_labels",
                format!("label {other} outside the raw alphabet {{0,1,2,4}}"),
            )),
        })
        .collect()
}

/// One-hot encodes an `h x w` label image into `[num_classes, h, w]`.
pub fn one_hot<E: Element>(
    labels: &[u8],
    (h, w): (usize, usize),
    num_classes: usize,
) -> Result<Tensor<E>> {
    if labels.len() != h * w {
        return Err(Error::shape(
            "one_hot",
            format!("buffer holds {} labels, dims {h}x{w} need {}", labels.len(), h * w),
        ));
    }
    let hw = h * w;
    let mut data = vec![E::ZERO; num_classes * hw];
    for (p, &l) in labels.iter().enumerate() {
        let c = l as usize;
        if c >= num_classes {
            return Err(Error::contract(
                "one_hot",
                format!("label {l} out of range for {num_classes} classes"),
            ));
        }
        data[c * hw + p] = E::ONE;
    }
    Tensor::new(&[num_classes, h, w], data)
}

/// Min-max normalizes values in place to [0,1]; constant inputs become all
/// zeros.
pub fn normalize<E: Element>(values: &mut [E]) {
    if values.is_empty() {
        return;
    }
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for v in values.iter() {
        let v = v.to_f64();
        min = min.min(v);
        max = max.max(v);
    }
    let range = max - min;
    if range == 0.0 {
        for v in values.iter_mut() {
            *v = E::ZERO;
        }
        return;
    }
    for v in values.iter_mut() {
        *v = E::from_f64((v.to_f64() - min) / range);
    }
}
