//! Model checkpoint container.
//!
//! Self-describing binary layout, all integers and floats little-endian:
//!
//! ```text
//! offset  size      field
//! 0       8         magic "MILCKPT\0"
//! 8       4         format version (u32, currently 1)
//! 12      4         config length L (u32)
//! 16      L         config block: MilConfig as UTF-8 JSON
//! 16+L    4         array count A (u32)
//! then A records:
//!         4         name length (u32)
//!         ..        name (UTF-8)
//!         4         rank R (u32)
//!         8·R       dims (u64 each)
//!         8·numel   values (f64 each)
//! ```
//!
//! Arrays appear in the model's `named_params` order. Round trips are
//! bit-exact, so a reloaded model reproduces forward outputs exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::{MilConfig, MilModel};

const MAGIC: &[u8; 8] = b"MILCKPT\0";
const VERSION: u32 = 1;

pub fn save(model: &MilModel, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_to(model, &mut buf)?;
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn write_to(model: &MilModel, out: &mut Vec<u8>) -> Result<()> {
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let config = serde_json::to_vec(&model.config)?;
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    let params = model.named_params();
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, tensor) in params {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(tensor.ndim() as u32).to_le_bytes());
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(())
}

pub fn load(path: &Path) -> Result<MilModel> {
    let file = File::open(path)?;
    let mut bytes = Vec::new();
    BufReader::new(file).read_to_end(&mut bytes)?;
    read_from(&bytes)
}

pub fn read_from(bytes: &[u8]) -> Result<MilModel> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(8)?;
    if magic != MAGIC {
        return Err(Error::Checkpoint("bad magic; not a model checkpoint".into()));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}, expected {VERSION}"
        )));
    }
    let config_len = cur.u32()? as usize;
    let config_bytes = cur.take(config_len)?;
    let config: MilConfig = serde_json::from_slice(config_bytes)
        .map_err(|e| Error::Checkpoint(format!("config block: {e}")))?;
    config.validate()?;

    // Build a skeleton with the right structure, then overwrite every
    // array and demand an exact name/shape match.
    let mut model = MilModel::init(config, 0)?;
    let count = cur.u32()? as usize;
    let expected = model.named_params().len();
    if count != expected {
        return Err(Error::Checkpoint(format!(
            "array count {count} does not match config-implied {expected}"
        )));
    }
    for (name, tensor) in model.named_params_mut() {
        let name_len = cur.u32()? as usize;
        let got_name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| Error::Checkpoint("array name is not UTF-8".into()))?;
        if got_name != name {
            return Err(Error::Checkpoint(format!(
                "array order mismatch: expected {name}, found {got_name}"
            )));
        }
        let rank = cur.u32()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(cur.u64()? as usize);
        }
        if dims != tensor.shape() {
            return Err(Error::Checkpoint(format!(
                "{name}: shape {dims:?} does not match config-implied {:?}",
                tensor.shape()
            )));
        }
        let numel: usize = dims.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(cur.f64()?);
        }
        *tensor = Tensor::new(dims, data)?;
    }
    if cur.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after last array",
            bytes.len() - cur.pos
        )));
    }
    Ok(model)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "truncated checkpoint at byte {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Composition, Pooling};
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(pooling: Pooling) -> MilModel {
        MilModel::init(
            MilConfig {
                input_dim: 4,
                feature_dim: 6,
                attention_hidden: 3,
                predictor_hidden: 5,
                num_classes: 3,
                pooling,
                composition: Composition::Additive,
                self_attention_heads: 2,
            },
            77,
        )
        .unwrap()
    }

    #[test]
    fn roundtrip_reproduces_forward_bit_exactly() {
        for pooling in [Pooling::Mean, Pooling::Attention, Pooling::SelfAttention] {
            let m = model(pooling);
            let mut bytes = Vec::new();
            write_to(&m, &mut bytes).unwrap();
            let loaded = read_from(&bytes).unwrap();
            assert_eq!(m, loaded);

            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let data: Vec<f64> = (0..5 * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let bag = Tensor::new(vec![5, 4], data).unwrap();
            let a = m.forward(&bag).unwrap();
            let b = loaded.forward(&bag).unwrap();
            assert!(a.logits.bits_eq(&b.logits));
        }
    }

    #[test]
    fn truncation_and_corruption_are_rejected() {
        let m = model(Pooling::Attention);
        let mut bytes = Vec::new();
        write_to(&m, &mut bytes).unwrap();

        let truncated = &bytes[..bytes.len() - 9];
        assert!(matches!(read_from(truncated), Err(Error::Checkpoint(_))));

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(read_from(&bad_magic), Err(Error::Checkpoint(_))));

        let mut bad_version = bytes.clone();
        bad_version[8] = 9;
        let err = read_from(&bad_version).unwrap_err().to_string();
        assert!(err.contains("version"), "{err}");

        let mut trailing = bytes.clone();
        trailing.push(0);
        assert!(matches!(read_from(&trailing), Err(Error::Checkpoint(_))));
    }
}
