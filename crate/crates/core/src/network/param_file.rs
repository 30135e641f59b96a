//! Binary container for [`TrainedParameters`].
//!
//! Layout (little-endian):
//!
//! ```text
//! "IMAC"            4 bytes magic
//! version           u8 (currently 1)
//! layer count       u32
//! per layer:
//!   rows            u32
//!   cols            u32
//!   weight plane    ceil(rows·cols / 8) bytes, row-major, LSB first, 1 = +1
//!   bias plane      ceil(rows / 8) bytes
//! ```

use std::path::Path;

use crate::binary::{BinarizedLayer, BinaryMatrix, TrainedParameters};
use crate::error::{Error, Result};

pub const PARAM_MAGIC: &[u8; 4] = b"IMAC";
pub const PARAM_VERSION: u8 = 1;

fn pack(values: &[i8]) -> Vec<u8> {
    let mut out = vec![0u8; values.len().div_ceil(8)];
    for (i, &v) in values.iter().enumerate() {
        if v > 0 {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

fn unpack(bytes: &[u8], count: usize) -> Vec<i8> {
    (0..count)
        .map(|i| if bytes[i / 8] >> (i % 8) & 1 == 1 { 1 } else { -1 })
        .collect()
}

pub fn encode_parameters(params: &TrainedParameters) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(PARAM_MAGIC);
    out.push(PARAM_VERSION);
    out.extend_from_slice(&(params.layers.len() as u32).to_le_bytes());
    for layer in &params.layers {
        out.extend_from_slice(&(layer.outputs() as u32).to_le_bytes());
        out.extend_from_slice(&(layer.inputs() as u32).to_le_bytes());
        out.extend_from_slice(&pack(layer.weights.as_slice()));
        out.extend_from_slice(&pack(&layer.biases));
    }
    out
}

pub fn decode_parameters(bytes: &[u8], origin: &Path) -> Result<TrainedParameters> {
    let mut cursor = Reader { bytes, pos: 0, origin };
    if cursor.take(4)? != PARAM_MAGIC {
        return Err(Error::format(origin, "bad magic, expected `IMAC`"));
    }
    let version = cursor.take(1)?[0];
    if version != PARAM_VERSION {
        return Err(Error::format(origin, format!("unsupported version {version}")));
    }
    let count = cursor.u32()? as usize;
    let mut layers = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let rows = cursor.u32()? as usize;
        let cols = cursor.u32()? as usize;
        let w = unpack(cursor.take((rows * cols).div_ceil(8))?, rows * cols);
        let b = unpack(cursor.take(rows.div_ceil(8))?, rows);
        layers.push(BinarizedLayer::new(BinaryMatrix::new(rows, cols, w)?, b)?);
    }
    if cursor.pos != bytes.len() {
        return Err(Error::format(origin, format!("{} trailing bytes", bytes.len() - cursor.pos)));
    }
    TrainedParameters::new(layers)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::format(self.origin, format!("truncated at byte {} (needed {n} more)", self.pos))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn write_parameters(path: &Path, params: &TrainedParameters) -> Result<()> {
    std::fs::write(path, encode_parameters(params))?;
    Ok(())
}

pub fn read_parameters(path: &Path) -> Result<TrainedParameters> {
    let bytes = std::fs::read(path)?;
    decode_parameters(&bytes, path)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::network::tests::random_params;

    #[test]
    fn header_layout() {
        let p = random_params(&[3, 2], 0);
        let bytes = encode_parameters(&p);
        assert_eq!(&bytes[..5], b"IMAC\x01");
        assert_eq!(&bytes[5..9], &1u32.to_le_bytes());
        assert_eq!(bytes.len(), 9 + 8 + 1 + 1);
    }

    #[test]
    fn rejects_corruption() {
        let p = random_params(&[3, 2], 0);
        let mut bytes = encode_parameters(&p);
        let path = Path::new("mem");
        assert!(decode_parameters(&bytes[..bytes.len() - 1], path).is_err());
        bytes.push(0);
        assert!(decode_parameters(&bytes, path).is_err());
        bytes[0] = b'X';
        assert!(decode_parameters(&bytes, path).is_err());
    }

    proptest! {
        #[test]
        fn encode_decode_identity(dims in proptest::collection::vec(1usize..30, 2..4), seed in any::<u64>()) {
            let p = random_params(&dims, seed);
            let back = decode_parameters(&encode_parameters(&p), Path::new("mem")).unwrap();
            prop_assert_eq!(back, p);
        }
    }
}
