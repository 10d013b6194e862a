//! Minimal uncompressed NIfTI-1 reader and writer.
//!
//! Only the fields the pipeline consumes are interpreted: `sizeof_hdr`
//! (endianness detection), `dim`, `datatype`, `bitpix`, `vox_offset`,
//! `scl_slope`/`scl_inter` and `magic`. Geometry metadata is ignored. The
//! writer produces fixtures and phantom exports in either byte order.

use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian};

use brainseg_core::dataset::Volume;

use crate::error::{Error, Result};

const HEADER_LEN: usize = 348;
const DATA_OFFSET: usize = 352;

const OFF_SIZEOF_HDR: usize = 0;
const OFF_DIM: usize = 40;
const OFF_DATATYPE: usize = 70;
const OFF_BITPIX: usize = 72;
const OFF_VOX_OFFSET: usize = 108;
const OFF_SCL_SLOPE: usize = 112;
const OFF_SCL_INTER: usize = 116;
const OFF_MAGIC: usize = 344;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endian {
    Little,
    Big,
}

/// Voxel datatypes the parser accepts (NIfTI codes 2, 4, 16, 64).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NiftiType {
    U8,
    I16,
    F32,
    F64,
}

impl NiftiType {
    fn code(self) -> i16 {
        match self {
            NiftiType::U8 => 2,
            NiftiType::I16 => 4,
            NiftiType::F32 => 16,
            NiftiType::F64 => 64,
        }
    }

    fn bitpix(self) -> i16 {
        match self {
            NiftiType::U8 => 8,
            NiftiType::I16 => 16,
            NiftiType::F32 => 32,
            NiftiType::F64 => 64,
        }
    }

    fn from_code(code: i16) -> Option<NiftiType> {
        match code {
            2 => Some(NiftiType::U8),
            4 => Some(NiftiType::I16),
            16 => Some(NiftiType::F32),
            64 => Some(NiftiType::F64),
            _ => None,
        }
    }

    fn byte_size(self) -> usize {
        (self.bitpix() / 8) as usize
    }
}

fn read_i16(bytes: &[u8], offset: usize, endian: Endian) -> i16 {
    match endian {
        Endian::Little => LittleEndian::read_i16(&bytes[offset..]),
        Endian::Big => BigEndian::read_i16(&bytes[offset..]),
    }
}

fn read_f32(bytes: &[u8], offset: usize, endian: Endian) -> f32 {
    match endian {
        Endian::Little => LittleEndian::read_f32(&bytes[offset..]),
        Endian::Big => BigEndian::read_f32(&bytes[offset..]),
    }
}

/// Parses an in-memory uncompressed NIfTI-1 file; `path` is used only for
/// error messages.
pub fn decode_nifti(bytes: &[u8], path: &Path) -> Result<Volume> {
    let fail = |detail: String| Error::format(path, detail);
    if bytes.len() < HEADER_LEN {
        return Err(fail(format!(
            "header truncated: {} bytes, need {HEADER_LEN}",
            bytes.len()
        )));
    }

    let endian = if LittleEndian::read_i32(&bytes[OFF_SIZEOF_HDR..]) == 348 {
        Endian::Little
    } else if BigEndian::read_i32(&bytes[OFF_SIZEOF_HDR..]) == 348 {
        Endian::Big
    } else {
        return Err(fail(format!(
            "sizeof_hdr is {} and byte-swapped {}: not a NIfTI-1 header",
            LittleEndian::read_i32(&bytes[OFF_SIZEOF_HDR..]),
            BigEndian::read_i32(&bytes[OFF_SIZEOF_HDR..]),
        )));
    };

    let magic = &bytes[OFF_MAGIC..OFF_MAGIC + 4];
    if magic == b"ni1\0" {
        return Err(fail("magic is \"ni1\\0\": detached header files are unsupported".into()));
    }
    if magic != b"n+1\0" {
        return Err(fail(format!("magic bytes {magic:?} are not \"n+1\\0\"")));
    }

    let dim0 = read_i16(bytes, OFF_DIM, endian);
    if dim0 != 3 {
        return Err(fail(format!("dim[0] is {dim0}, only 3-dimensional volumes are supported")));
    }
    let mut dims = [0usize; 3];
    for (i, d) in dims.iter_mut().enumerate() {
        let v = read_i16(bytes, OFF_DIM + 2 * (i + 1), endian);
        if v <= 0 {
            return Err(fail(format!("dim[{}] is {v}, extents must be positive", i + 1)));
        }
        *d = v as usize;
    }

    let datatype_code = read_i16(bytes, OFF_DATATYPE, endian);
    let datatype = NiftiType::from_code(datatype_code).ok_or_else(|| {
        fail(format!("datatype {datatype_code} is unsupported (expected 2, 4, 16 or 64)"))
    })?;
    let bitpix = read_i16(bytes, OFF_BITPIX, endian);
    if bitpix != datatype.bitpix() {
        return Err(fail(format!(
            "bitpix {bitpix} does not match datatype {datatype_code} (expected {})",
            datatype.bitpix()
        )));
    }

    let vox_offset = read_f32(bytes, OFF_VOX_OFFSET, endian);
    if !(vox_offset.is_finite() && vox_offset >= HEADER_LEN as f32 && vox_offset.fract() == 0.0) {
        return Err(fail(format!("vox_offset {vox_offset} is not a valid data offset")));
    }
    let offset = vox_offset as usize;

    let slope = read_f32(bytes, OFF_SCL_SLOPE, endian);
    let inter = read_f32(bytes, OFF_SCL_INTER, endian);

    let numel = dims[0] * dims[1] * dims[2];
    let need = numel * datatype.byte_size();
    if bytes.len() < offset + need {
        return Err(fail(format!(
            "voxel payload truncated: need {need} bytes at offset {offset}, file has {}",
            bytes.len()
        )));
    }
    let payload = &bytes[offset..offset + need];

    let mut voxels = Vec::with_capacity(numel);
    for i in 0..numel {
        let raw = match datatype {
            NiftiType::U8 => f32::from(payload[i]),
            NiftiType::I16 => f32::from(read_i16(payload, 2 * i, endian)),
            NiftiType::F32 => read_f32(payload, 4 * i, endian),
            NiftiType::F64 => {
                let v = match endian {
                    Endian::Little => LittleEndian::read_f64(&payload[8 * i..]),
                    Endian::Big => BigEndian::read_f64(&payload[8 * i..]),
                };
                v as f32
            }
        };
        voxels.push(if slope != 0.0 { raw * slope + inter } else { raw });
    }

    Volume::new((dims[0], dims[1], dims[2]), voxels).map_err(Error::Core)
}

pub fn read_nifti(path: &Path) -> Result<Volume> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_nifti(&bytes, path)
}

fn write_i16(buf: &mut [u8], offset: usize, v: i16, endian: Endian) {
    match endian {
        Endian::Little => LittleEndian::write_i16(&mut buf[offset..], v),
        Endian::Big => BigEndian::write_i16(&mut buf[offset..], v),
    }
}

fn write_f32_at(buf: &mut [u8], offset: usize, v: f32, endian: Endian) {
    match endian {
        Endian::Little => LittleEndian::write_f32(&mut buf[offset..], v),
        Endian::Big => BigEndian::write_f32(&mut buf[offset..], v),
    }
}

fn encode_voxel(v: f32, ty: NiftiType, endian: Endian, out: &mut Vec<u8>) -> Result<()> {
    match ty {
        NiftiType::U8 => {
            if v.fract() != 0.0 || !(0.0..=255.0).contains(&v) {
                return Err(Error::validation(format!("voxel value {v} does not fit uint8")));
            }
            out.push(v as u8);
        }
        NiftiType::I16 => {
            if v.fract() != 0.0 || !(f32::from(i16::MIN)..=f32::from(i16::MAX)).contains(&v) {
                return Err(Error::validation(format!("voxel value {v} does not fit int16")));
            }
            let mut b = [0u8; 2];
            write_i16(&mut b, 0, v as i16, endian);
            out.extend_from_slice(&b);
        }
        NiftiType::F32 => {
            let mut b = [0u8; 4];
            write_f32_at(&mut b, 0, v, endian);
            out.extend_from_slice(&b);
        }
        NiftiType::F64 => {
            let mut b = [0u8; 8];
            match endian {
                Endian::Little => LittleEndian::write_f64(&mut b, f64::from(v)),
                Endian::Big => BigEndian::write_f64(&mut b, f64::from(v)),
            }
            out.extend_from_slice(&b);
        }
    }
    Ok(())
}

/// Serializes a volume as a single-file NIfTI-1 image (vox_offset 352,
/// identity scaling).
pub fn encode_nifti(volume: &Volume, ty: NiftiType, endian: Endian) -> Result<Vec<u8>> {
    let (x, y, z) = volume.dims;
    let too_big = |extent: usize| extent > i16::MAX as usize;
    if too_big(x) || too_big(y) || too_big(z) {
        return Err(Error::validation(format!("dims {:?} exceed the i16 header field", volume.dims)));
    }

    let mut header = vec![0u8; DATA_OFFSET];
    match endian {
        Endian::Little => LittleEndian::write_i32(&mut header[OFF_SIZEOF_HDR..], 348),
        Endian::Big => BigEndian::write_i32(&mut header[OFF_SIZEOF_HDR..], 348),
    }
    write_i16(&mut header, OFF_DIM, 3, endian);
    for (i, extent) in [x, y, z].into_iter().enumerate() {
        write_i16(&mut header, OFF_DIM + 2 * (i + 1), extent as i16, endian);
    }
    for i in 4..8 {
        write_i16(&mut header, OFF_DIM + 2 * i, 1, endian);
    }
    write_i16(&mut header, OFF_DATATYPE, ty.code(), endian);
    write_i16(&mut header, OFF_BITPIX, ty.bitpix(), endian);
    write_f32_at(&mut header, OFF_VOX_OFFSET, DATA_OFFSET as f32, endian);
    write_f32_at(&mut header, OFF_SCL_SLOPE, 1.0, endian);
    write_f32_at(&mut header, OFF_SCL_INTER, 0.0, endian);
    header[OFF_MAGIC..OFF_MAGIC + 4].copy_from_slice(b"n+1\0");

    let mut out = header;
    out.reserve(volume.voxels.len() * ty.byte_size());
    for &v in &volume.voxels {
        encode_voxel(v, ty, endian, &mut out)?;
    }
    Ok(out)
}

pub fn write_nifti(path: &Path, volume: &Volume, ty: NiftiType, endian: Endian) -> Result<()> {
    let bytes = encode_nifti(volume, ty, endian)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn test_path() -> PathBuf {
        PathBuf::from("test.nii")
    }

    fn ramp(dims: (usize, usize, usize)) -> Volume {
        let n = dims.0 * dims.1 * dims.2;
        Volume::new(dims, (0..n).map(|i| i as f32 * 0.25).collect()).unwrap()
    }

    #[test]
    fn float32_little_endian_roundtrip_is_exact() {
        let v = ramp((16, 16, 8));
        let bytes = encode_nifti(&v, NiftiType::F32, Endian::Little).unwrap();
        let back = decode_nifti(&bytes, &test_path()).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn big_endian_fixture_is_detected_and_parsed() {
        let v = ramp((5, 4, 3));
        let bytes = encode_nifti(&v, NiftiType::F32, Endian::Big).unwrap();
        assert_eq!(LittleEndian::read_i32(&bytes), 1_543_569_408);
        let back = decode_nifti(&bytes, &test_path()).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn uint8_labels_roundtrip() {
        let labels =
            Volume::new((4, 3, 2), (0..24).map(|i| [0.0f32, 1.0, 2.0, 4.0][i % 4]).collect())
                .unwrap();
        for endian in [Endian::Little, Endian::Big] {
            let bytes = encode_nifti(&labels, NiftiType::U8, endian).unwrap();
            assert_eq!(decode_nifti(&bytes, &test_path()).unwrap(), labels);
        }
    }

    #[test]
    fn int16_and_float64_payloads_convert_to_reals() {
        let v = Volume::new((2, 2, 2), vec![-3.0, 0.0, 7.0, 100.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
        for ty in [NiftiType::I16, NiftiType::F64] {
            let bytes = encode_nifti(&v, ty, Endian::Little).unwrap();
            assert_eq!(decode_nifti(&bytes, &test_path()).unwrap(), v);
        }
    }

    #[test]
    fn scale_slope_and_intercept_are_applied() {
        let v = ramp((2, 2, 2));
        let mut bytes = encode_nifti(&v, NiftiType::F32, Endian::Little).unwrap();
        write_f32_at(&mut bytes, OFF_SCL_SLOPE, 2.0, Endian::Little);
        write_f32_at(&mut bytes, OFF_SCL_INTER, 1.0, Endian::Little);
        let back = decode_nifti(&bytes, &test_path()).unwrap();
        for (b, orig) in back.voxels.iter().zip(&v.voxels) {
            assert_eq!(*b, orig * 2.0 + 1.0);
        }
    }

    #[test]
    fn zero_slope_means_no_scaling() {
        let v = ramp((2, 2, 2));
        let mut bytes = encode_nifti(&v, NiftiType::F32, Endian::Little).unwrap();
        write_f32_at(&mut bytes, OFF_SCL_SLOPE, 0.0, Endian::Little);
        write_f32_at(&mut bytes, OFF_SCL_INTER, 9.0, Endian::Little);
        assert_eq!(decode_nifti(&bytes, &test_path()).unwrap(), v);
    }

    #[test]
    fn detached_header_magic_is_a_distinct_error() {
        let mut bytes = encode_nifti(&ramp((2, 2, 2)), NiftiType::F32, Endian::Little).unwrap();
        bytes[OFF_MAGIC..OFF_MAGIC + 4].copy_from_slice(b"ni1\0");
        let err = decode_nifti(&bytes, &test_path()).unwrap_err();
        assert!(err.to_string().contains("detached"));
    }

    #[test]
    fn corrupt_magic_is_rejected() {
        let mut bytes = encode_nifti(&ramp((2, 2, 2)), NiftiType::F32, Endian::Little).unwrap();
        bytes[OFF_MAGIC] = b'x';
        let err = decode_nifti(&bytes, &test_path()).unwrap_err();
        assert!(err.to_string().contains("magic"));
    }

    #[test]
    fn bad_sizeof_hdr_is_rejected() {
        let mut bytes = encode_nifti(&ramp((2, 2, 2)), NiftiType::F32, Endian::Little).unwrap();
        LittleEndian::write_i32(&mut bytes, 999);
        let err = decode_nifti(&bytes, &test_path()).unwrap_err();
        assert!(err.to_string().contains("sizeof_hdr"));
    }

    #[test]
    fn wrong_rank_is_rejected() {
        let mut bytes = encode_nifti(&ramp((2, 2, 2)), NiftiType::F32, Endian::Little).unwrap();
        write_i16(&mut bytes, OFF_DIM, 4, Endian::Little);
        let err = decode_nifti(&bytes, &test_path()).unwrap_err();
        assert!(err.to_string().contains("dim[0]"));
    }

    #[test]
    fn unsupported_datatype_is_rejected() {
        let mut bytes = encode_nifti(&ramp((2, 2, 2)), NiftiType::F32, Endian::Little).unwrap();
        write_i16(&mut bytes, OFF_DATATYPE, 8, Endian::Little);
        let err = decode_nifti(&bytes, &test_path()).unwrap_err();
        assert!(err.to_string().contains("datatype 8"));
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let bytes = encode_nifti(&ramp((4, 4, 4)), NiftiType::F32, Endian::Little).unwrap();
        let err = decode_nifti(&bytes[..bytes.len() - 10], &test_path()).unwrap_err();
        assert!(err.to_string().contains("truncated"));
    }

    #[test]
    fn non_integer_values_cannot_be_written_as_uint8() {
        let v = Volume::new((2, 2, 2), vec![0.5; 8]).unwrap();
        assert!(encode_nifti(&v, NiftiType::U8, Endian::Little).is_err());
    }
}
