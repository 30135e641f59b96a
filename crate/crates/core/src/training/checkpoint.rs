//! Versioned checkpoint container: a JSON header with the real-valued
//! teacher (and the CNN feature stack, when present) followed by the
//! packed binarized snapshot.
//!
//! Layout: `IMCK`, version byte, u32 LE header length, header JSON, then a
//! binarized parameter container.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{binarize, Cnn, CnnSpec, TeacherLayer};
use crate::binary::TrainedParameters;
use crate::error::{Error, Result};
use crate::network::{decode_parameters, encode_parameters};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"IMCK";
pub const CHECKPOINT_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    cnn_spec: Option<CnnSpec>,
    cnn_params: Option<Vec<f32>>,
    teacher: Vec<TeacherLayer>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Full-precision network whose feature stack precedes the binarized
    /// head; `None` for a plain binarized MLP.
    pub cnn: Option<Cnn<f32>>,
    pub teacher: Vec<TeacherLayer>,
    pub parameters: TrainedParameters,
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let header = Header {
            cnn_spec: self.cnn.as_ref().map(|c| c.spec().clone()),
            cnn_params: self.cnn.as_ref().map(|c| c.params().to_vec()),
            teacher: self.teacher.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(9 + json.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.push(CHECKPOINT_VERSION);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&encode_parameters(&self.parameters));
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let err = |m: String| Error::format(path, m);
        if bytes.len() < 9 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(err("not a checkpoint file".into()));
        }
        if bytes[4] != CHECKPOINT_VERSION {
            return Err(err(format!("unsupported checkpoint version {}", bytes[4])));
        }
        let len = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
        let json = bytes.get(9..9 + len).ok_or_else(|| err("truncated checkpoint header".into()))?;
        let header: Header = serde_json::from_slice(json).map_err(|e| err(format!("bad checkpoint header: {e}")))?;
        let parameters = decode_parameters(&bytes[9 + len..], path)?;
        let teacher = header
            .teacher
            .into_iter()
            .map(|t| TeacherLayer::new(t.inputs, t.outputs, t.w, t.b))
            .collect::<Result<Vec<_>>>()?;
        if teacher.iter().map(binarize).collect::<Vec<_>>() != parameters.layers {
            return Err(err("binarized snapshot does not match the teacher".into()));
        }
        let cnn = match (header.cnn_spec, header.cnn_params) {
            (Some(spec), Some(params)) => {
                if spec.fc != parameters.dims() {
                    return Err(err("CNN head widths do not match the binarized layers".into()));
                }
                Some(Cnn::from_params(spec, params)?)
            }
            (None, None) => None,
            _ => return Err(err("incomplete CNN section".into())),
        };
        Ok(Self {
            cnn,
            teacher,
            parameters,
        })
    }
}

pub fn write_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    std::fs::write(path, checkpoint.encode())?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::decode(&std::fs::read(path)?, path)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::training::lenet5;

    fn sample(with_cnn: bool) -> Checkpoint {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let spec = lenet5();
        let teacher: Vec<TeacherLayer> = spec
            .fc
            .windows(2)
            .map(|w| TeacherLayer::random(&mut rng, w[0], w[1], None))
            .collect();
        Checkpoint {
            cnn: with_cnn.then(|| Cnn::new(spec, &mut rng).unwrap()),
            parameters: TrainedParameters::new(teacher.iter().map(binarize).collect()).unwrap(),
            teacher,
        }
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for with_cnn in [false, true] {
            let ck = sample(with_cnn);
            let p = dir.path().join("ck.bin");
            write_checkpoint(&p, &ck).unwrap();
            assert_eq!(read_checkpoint(&p).unwrap(), ck);
        }
    }

    #[test]
    fn detects_corruption() {
        let bytes = sample(false).encode();
        let p = Path::new("ck");
        assert!(Checkpoint::decode(&bytes[..bytes.len() - 3], p).is_err());
        let mut v = bytes.clone();
        v[4] = 9;
        assert!(Checkpoint::decode(&v, p).is_err());
        // Flip one binarized weight so it no longer matches the teacher.
        let mut v = bytes.clone();
        let last = v.len() - 1;
        v[last] ^= 1;
        assert!(matches!(Checkpoint::decode(&v, p), Err(Error::Format { .. })));
    }
}
