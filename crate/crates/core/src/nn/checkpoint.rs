use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::network::NetworkSpec;
use super::tensor::Tensor;
use super::NnError;

const MAGIC: &[u8; 8] = b"SBCKPT\0\0";
const VERSION: u32 = 1;

/// Trained parameters together with the spec they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    pub params: Vec<Tensor<f32>>,
    /// Zero-based epoch at which the parameters were saved.
    pub epoch: usize,
    pub val_loss: f64,
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        if self.buf.len() < n {
            return Err(NnError::BadCheckpoint("truncated".into()));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, NnError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

impl Checkpoint {
    /// Layout: magic, version, spec digest, spec text, epoch, val loss,
    /// tensor count, per tensor its rank and dims, then the f32 payload.
    pub fn to_bytes(&self) -> Vec<u8> {
        let text = self.spec.to_text();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.spec.digest());
        out.extend_from_slice(&(text.len() as u64).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out.extend_from_slice(&(self.epoch as u64).to_le_bytes());
        out.extend_from_slice(&self.val_loss.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&(p.shape.len() as u32).to_le_bytes());
            for &d in &p.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
        }
        for p in &self.params {
            for v in &p.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NnError> {
        let mut r = Reader { buf: bytes };
        if r.take(8)? != MAGIC {
            return Err(NnError::BadCheckpoint("not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(NnError::BadCheckpoint(format!("unsupported version {version}")));
        }
        let digest: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let text_len = r.u64()? as usize;
        let text = std::str::from_utf8(r.take(text_len)?)
            .map_err(|_| NnError::BadCheckpoint("spec text is not UTF-8".into()))?;
        let spec: NetworkSpec =
            toml::from_str(text).map_err(|e| NnError::BadCheckpoint(format!("spec text: {e}")))?;
        if spec.digest() != digest {
            return Err(NnError::BadCheckpoint("spec digest mismatch".into()));
        }
        let epoch = r.u64()? as usize;
        let val_loss = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let count = r.u32()? as usize;
        let mut shapes = Vec::with_capacity(count);
        for _ in 0..count {
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            shapes.push(shape);
        }
        let mut params = Vec::with_capacity(count);
        for shape in shapes {
            let n: usize = shape.iter().product();
            let raw = r.take(n * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            params.push(Tensor::from_vec(&shape, data));
        }
        if !r.buf.is_empty() {
            return Err(NnError::BadCheckpoint("trailing bytes".into()));
        }
        spec.check_params(&params)?;
        Ok(Checkpoint {
            spec,
            params,
            epoch,
            val_loss,
        })
    }

    /// SHA-256 of the serialized checkpoint, hex encoded.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let spec = NetworkSpec::reference();
        let params = spec.init_params(3);
        Checkpoint {
            spec,
            params,
            epoch: 7,
            val_loss: 0.25,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.digest(), ck.digest());
    }

    #[test]
    fn corrupt_header_and_truncation_rejected() {
        let mut bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }
}
