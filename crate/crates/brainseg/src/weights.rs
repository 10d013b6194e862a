//! Binary weights format: magic `AUNETWT1`, format version, model
//! configuration, then one length-prefixed record per parameter tensor with
//! little-endian f32 data. Round trips are bitwise lossless.

use std::collections::BTreeMap;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};

use brainseg_core::model::{AttentionUNet, ModelConfig};
use brainseg_core::Tensor;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"AUNETWT1";
pub const FORMAT_VERSION: u32 = 1;

fn push_u32(out: &mut Vec<u8>, v: u32) {
    let mut b = [0u8; 4];
    LittleEndian::write_u32(&mut b, v);
    out.extend_from_slice(&b);
}

fn push_u16(out: &mut Vec<u8>, v: u16) {
    let mut b = [0u8; 2];
    LittleEndian::write_u16(&mut b, v);
    out.extend_from_slice(&b);
}

pub fn encode_weights(model: &AttentionUNet<f32>) -> Vec<u8> {
    let config = model.config();
    let params = model.parameters();

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    push_u32(&mut out, FORMAT_VERSION);
    push_u32(&mut out, config.in_channels as u32);
    push_u32(&mut out, config.num_classes as u32);
    push_u32(&mut out, config.depth as u32);
    push_u32(&mut out, config.base_filters as u32);
    push_u32(&mut out, u32::from(config.attention_enabled));
    push_u32(&mut out, params.len() as u32);
    for (name, tensor) in params {
        push_u16(&mut out, name.len() as u16);
        out.extend_from_slice(name.as_bytes());
        out.push(tensor.shape().len() as u8);
        for &extent in tensor.shape() {
            push_u32(&mut out, extent as u32);
        }
        for &v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(
                self.path,
                format!(
                    "truncated while reading {what}: need {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ),
            ));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(LittleEndian::read_u16(self.take(2, what)?))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(LittleEndian::read_u32(self.take(4, what)?))
    }
}

/// Parses an in-memory weights file; `path` is used only for error messages.
pub fn decode_weights(bytes: &[u8], path: &Path) -> Result<AttentionUNet<f32>> {
    let mut cur = Cursor { bytes, pos: 0, path };

    let magic = cur.take(MAGIC.len(), "magic")?;
    if magic != MAGIC {
        return Err(Error::format(path, format!("magic bytes {magic:?} are not {MAGIC:?}")));
    }
    let version = cur.u32("format version")?;
    if version != FORMAT_VERSION {
        return Err(Error::format(
            path,
            format!("format version {version} is unsupported (expected {FORMAT_VERSION})"),
        ));
    }

    let config = ModelConfig {
        in_channels: cur.u32("in_channels")? as usize,
        num_classes: cur.u32("num_classes")? as usize,
        depth: cur.u32("depth")? as usize,
        base_filters: cur.u32("base_filters")? as usize,
        attention_enabled: cur.u32("attention flag")? != 0,
        // The initializer seed is a construction detail; loaded weights
        // replace any initialization.
        seed: 0,
    };

    let count = cur.u32("parameter count")? as usize;
    let mut params = BTreeMap::new();
    for i in 0..count {
        let what = format!("parameter {i} name");
        let name_len = cur.u16(&what)? as usize;
        let name_bytes = cur.take(name_len, &what)?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|_| Error::format(path, format!("parameter {i} name is not UTF-8")))?
            .to_string();
        let rank = cur.u8(&format!("{name} rank"))? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32(&format!("{name} extents"))? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = cur.take(4 * numel, &format!("{name} data"))?;
        let data: Vec<f32> =
            raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let tensor = Tensor::new(&shape, data).map_err(Error::Core)?;
        if params.insert(name.clone(), tensor).is_some() {
            return Err(Error::format(path, format!("duplicate parameter {name}")));
        }
    }
    if cur.pos != bytes.len() {
        return Err(Error::format(
            path,
            format!("{} trailing bytes after the last parameter record", bytes.len() - cur.pos),
        ));
    }

    AttentionUNet::from_parameters(config, params).map_err(Error::Core)
}

pub fn save_weights(model: &AttentionUNet<f32>, path: &Path) -> Result<()> {
    std::fs::write(path, encode_weights(model)).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: &Path) -> Result<AttentionUNet<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn test_path() -> PathBuf {
        PathBuf::from("test.weights")
    }

    fn tiny_model() -> AttentionUNet<f32> {
        AttentionUNet::new(ModelConfig {
            in_channels: 2,
            num_classes: 4,
            depth: 1,
            base_filters: 2,
            attention_enabled: true,
            seed: 5,
        })
        .unwrap()
    }

    #[test]
    fn roundtrip_is_bitwise_lossless() {
        let model = tiny_model();
        let bytes = encode_weights(&model);
        let back = decode_weights(&bytes, &test_path()).unwrap();
        assert_eq!(back.parameters(), model.parameters());
        assert_eq!(encode_weights(&back), bytes);

        let input = Tensor::full(&[1, 2, 8, 8], 0.4);
        assert_eq!(back.forward(&input).unwrap(), model.forward(&input).unwrap());
    }

    #[test]
    fn corrupt_magic_is_a_distinct_error() {
        let mut bytes = encode_weights(&tiny_model());
        bytes[0] = b'x';
        let err = decode_weights(&bytes, &test_path()).unwrap_err();
        assert!(err.to_string().contains("magic"));
    }

    #[test]
    fn unknown_version_is_a_distinct_error() {
        let mut bytes = encode_weights(&tiny_model());
        LittleEndian::write_u32(&mut bytes[8..], 9);
        let err = decode_weights(&bytes, &test_path()).unwrap_err();
        assert!(err.to_string().contains("version 9"));
    }

    #[test]
    fn truncated_file_is_a_distinct_error() {
        let bytes = encode_weights(&tiny_model());
        let err = decode_weights(&bytes[..bytes.len() - 3], &test_path()).unwrap_err();
        assert!(err.to_string().contains("truncated"));
    }

    #[test]
    fn removing_a_parameter_record_names_the_missing_parameter() {
        let model = tiny_model();
        let bytes = encode_weights(&model);

        // Locate the first record (after the 36-byte header), splice it out
        // and decrement the parameter count.
        let header_len = 8 + 4 + 5 * 4 + 4;
        let name_len = LittleEndian::read_u16(&bytes[header_len..]) as usize;
        let rank = bytes[header_len + 2 + name_len] as usize;
        let mut numel = 1usize;
        for r in 0..rank {
            numel *=
                LittleEndian::read_u32(&bytes[header_len + 2 + name_len + 1 + 4 * r..]) as usize;
        }
        let record_len = 2 + name_len + 1 + 4 * rank + 4 * numel;
        let first_name =
            std::str::from_utf8(&bytes[header_len + 2..header_len + 2 + name_len]).unwrap();

        let mut spliced = bytes.clone();
        spliced.drain(header_len..header_len + record_len);
        let count = LittleEndian::read_u32(&bytes[header_len - 4..]);
        LittleEndian::write_u32(&mut spliced[header_len - 4..], count - 1);

        let err = decode_weights(&spliced, &test_path()).unwrap_err();
        assert!(err.to_string().contains("missing parameter"));
        assert!(err.to_string().contains(first_name));
    }

    #[test]
    fn trailing_garbage_is_rejected() {
        let mut bytes = encode_weights(&tiny_model());
        bytes.push(0);
        let err = decode_weights(&bytes, &test_path()).unwrap_err();
        assert!(err.to_string().contains("trailing"));
    }
}
