//! Synthetic tumor phantoms: seeded volumes with a nested ellipsoidal lesion
//! and modality-specific contrast, for desk-scale training and testing
//! without clinical data.

use alloc::format;
use alloc::vec::Vec;

use crate::dataset::{CaseRecord, Volume};
use crate::error::{Error, Result};
use crate::rng::SeedRng;

/// Smallest supported in-plane extent.
pub const MIN_PLANE: usize = 32;
/// Smallest supported depth.
pub const MIN_DEPTH: usize = 4;

const BG_FLAIR: f32 = 0.20;
const EDEMA_FLAIR: f32 = 0.75;
const ENHANCING_FLAIR: f32 = 0.80;
const NECROTIC_FLAIR: f32 = 0.70;

const BG_T1CE: f32 = 0.20;
const EDEMA_T1CE: f32 = 0.30;
const ENHANCING_T1CE: f32 = 0.85;
const NECROTIC_T1CE: f32 = 0.25;

/// Additive noise standard deviation as a fraction of each clean volume's
/// dynamic range.
const NOISE_FRACTION: f64 = 0.05;

/// Axis-aligned ellipsoid, voxel coordinates.
#[derive(Debug, Clone, Copy)]
struct Ellipsoid {
    cx: f64,
    cy: f64,
    cz: f64,
    ax: f64,
    ay: f64,
    az: f64,
}

impl Ellipsoid {
    fn contains(&self, x: usize, y: usize, z: usize) -> bool {
        let dx = (x as f64 - self.cx) / self.ax;
        let dy = (y as f64 - self.cy) / self.ay;
        let dz = (z as f64 - self.cz) / self.az;
        dx * dx + dy * dy + dz * dz <= 1.0
    }

    fn scaled(&self, plane: f64, depth: f64) -> Ellipsoid {
        Ellipsoid { ax: self.ax * plane, ay: self.ay * plane, az: self.az * depth, ..*self }
    }
}

/// The three nested lesion regions sharing one center: necrotic core inside
/// the enhancing ellipsoid inside the edema ellipsoid.
#[derive(Debug, Clone, Copy)]
struct Lesion {
    edema: Ellipsoid,
    enhancing: Ellipsoid,
    necrotic: Ellipsoid,
}

impl Lesion {
    fn draw(rng: &mut SeedRng, dims: (usize, usize, usize)) -> Lesion {
        let (x, y, z) = (dims.0 as f64, dims.1 as f64, dims.2 as f64);
        let m = x.min(y);
        let edema = Ellipsoid {
            cx: x / 2.0 + rng.range_f64(-1.0, 1.0) * x / 10.0,
            cy: y / 2.0 + rng.range_f64(-1.0, 1.0) * y / 10.0,
            cz: z / 2.0 + rng.range_f64(-1.0, 1.0) * z / 12.0,
            ax: (0.30 + 0.05 * rng.unit_f64()) * m,
            ay: (0.30 + 0.05 * rng.unit_f64()) * m,
            az: 0.45 * z,
        };
        Lesion { edema, enhancing: edema.scaled(0.68, 0.90), necrotic: edema.scaled(0.40, 0.80) }
    }

    fn label(&self, x: usize, y: usize, z: usize) -> u8 {
        if self.necrotic.contains(x, y, z) {
            1
        } else if self.enhancing.contains(x, y, z) {
            4
        } else if self.edema.contains(x, y, z) {
            2
        } else {
            0
        }
    }
}

fn label_volume(lesion: &Lesion, dims: (usize, usize, usize)) -> Vec<u8> {
    let (xd, yd, zd) = dims;
    let mut labels = Vec::with_capacity(xd * yd * zd);
    for z in 0..zd {
        for y in 0..yd {
            for x in 0..xd {
                labels.push(lesion.label(x, y, z));
            }
        }
    }
    labels
}

/// Central band whose every slice must contain all four classes: the middle
/// half of the depth axis, which any sensible slice window covers.
fn central_band(depth: usize) -> core::ops::Range<usize> {
    depth / 4..depth - depth / 4
}

fn band_has_all_classes(labels: &[u8], dims: (usize, usize, usize)) -> bool {
    let (xd, yd, _) = dims;
    let plane = xd * yd;
    central_band(dims.2).all(|z| {
        let slice = &labels[z * plane..(z + 1) * plane];
        [0u8, 1, 2, 4].iter().all(|c| slice.contains(c))
    })
}

fn intensity_volume(labels: &[u8], table: [f32; 4], rng: &mut SeedRng) -> Vec<f32> {
    let clean: Vec<f32> = labels
        .iter()
        .map(|&l| match l {
            0 => table[0],
            1 => table[1],
            2 => table[2],
            _ => table[3],
        })
        .collect();
    let (lo, hi) = clean
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let sigma = NOISE_FRACTION * f64::from(hi - lo);
    clean.into_iter().map(|v| v + rng.normal_with_std(sigma) as f32).collect()
}

fn phantom_case(
    rng: &mut SeedRng,
    index: usize,
    dims: (usize, usize, usize),
) -> Result<(CaseRecord, Lesion)> {
    let mut chosen = None;
    for _ in 0..16 {
        let lesion = Lesion::draw(rng, dims);
        let labels = label_volume(&lesion, dims);
        if band_has_all_classes(&labels, dims) {
            chosen = Some((lesion, labels));
            break;
        }
    }
    let (lesion, labels) = chosen.ok_or_else(|| {
        Error::contract("generate_phantom", format!("no valid lesion found for dims {dims:?}"))
    })?;

    let flair = intensity_volume(
        &labels,
        [BG_FLAIR, NECROTIC_FLAIR, EDEMA_FLAIR, ENHANCING_FLAIR],
        rng,
    );
    let t1ce =
        intensity_volume(&labels, [BG_T1CE, NECROTIC_T1CE, EDEMA_T1CE, ENHANCING_T1CE], rng);
    let seg: Vec<f32> = labels.iter().map(|&l| f32::from(l)).collect();

    let case = CaseRecord::new(
        format!("phantom_{index:03}"),
        Volume::new(dims, flair)?,
        Volume::new(dims, t1ce)?,
        Volume::new(dims, seg)?,
    )?;
    Ok((case, lesion))
}

/// Generates `n_cases` deterministic phantom cases. Each case carries a
/// random nested ellipsoidal lesion (necrotic 1 inside enhancing 4 inside
/// edema 2 on background 0), FLAIR elevated over the whole lesion, T1CE
/// elevated over the enhancing rim, and additive seeded Gaussian noise at 5%
/// of each volume's dynamic range. Every slice in the central half of the
/// depth axis contains all four classes.
pub fn generate_phantom(
    seed: u64,
    n_cases: usize,
    dims: (usize, usize, usize),
) -> Result<Vec<CaseRecord>> {
    let (x, y, z) = dims;
    if x < MIN_PLANE || y < MIN_PLANE {
        return Err(Error::contract(
            "generate_phantom",
            format!("in-plane dims must be at least {MIN_PLANE}, got {x}x{y}"),
        ));
    }
    if z < MIN_DEPTH {
        return Err(Error::contract(
            "generate_phantom",
            format!("depth must be at least {MIN_DEPTH}, got {z}"),
        ));
    }
    if n_cases == 0 {
        return Err(Error::contract("generate_phantom", "n_cases must be positive"));
    }
    let mut rng = SeedRng::new(seed);
    (0..n_cases).map(|i| Ok(phantom_case(&mut rng, i, dims)?.0)).collect()
}
