//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "EXFC1"  u32 version  u64 seed
//! u32 len, model config as JSON
//! 4 x (u32 len, f64 values)    encoder mean/std, decoder mean/std
//! u32 tensor count, then per tensor:
//!     u32 name len, name, u32 rows, u32 cols, rows*cols f64 (row-major)
//! ```

use std::fs;
use std::path::Path;

use resflow::dataset::{ChannelStats, Standardizer};
use resflow::net::{Model, ModelConfig, ParamStore};
use resflow::tensor::Mat;
use resflow::{Error, Forecaster, Result};

pub const MAGIC: &[u8; 5] = b"EXFC1";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Forecaster,
    pub standardizer: Standardizer,
    pub seed: u64,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Validation(format!("{v} does not fit the checkpoint format")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Validation(format!("checkpoint truncated at byte {}", self.pos)))?;
        let bytes = &self.buf[self.pos..end];
        self.pos = end;
        Ok(bytes)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Validation("tensor too large".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    fn vec(&mut self) -> Result<Vec<f64>> {
        let n = self.u32()?;
        self.f64s(n)
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        let json = serde_json::to_vec(self.model.config()).map_err(|e| Error::Validation(e.to_string()))?;
        put_u32(&mut out, json.len())?;
        out.extend_from_slice(&json);
        let st = &self.standardizer;
        for v in [&st.enc.mean, &st.enc.std, &st.dec.mean, &st.dec.std] {
            put_u32(&mut out, v.len())?;
            put_f64s(&mut out, v);
        }
        let params = self.model.params();
        put_u32(&mut out, params.len())?;
        for (name, m) in params.iter() {
            put_u32(&mut out, name.len())?;
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, m.rows())?;
            put_u32(&mut out, m.cols())?;
            put_f64s(&mut out, m.as_slice());
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Validation("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()? as u32;
        if version != VERSION {
            return Err(Error::Validation(format!("checkpoint version {version}, expected {VERSION}")));
        }
        let seed = r.u64()?;
        let json_len = r.u32()?;
        let config: ModelConfig = serde_json::from_slice(r.take(json_len)?)
            .map_err(|e| Error::Validation(format!("checkpoint model config: {e}")))?;
        let standardizer = Standardizer {
            enc: ChannelStats {
                mean: r.vec()?,
                std: r.vec()?,
            },
            dec: ChannelStats {
                mean: r.vec()?,
                std: r.vec()?,
            },
        };
        let mut params = ParamStore::new();
        for _ in 0..r.u32()? {
            let name_len = r.u32()?;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Validation("tensor name is not UTF-8".into()))?
                .to_string();
            let (rows, cols) = (r.u32()?, r.u32()?);
            let data = r.f64s(rows * cols)?;
            params.insert(&name, Mat::from_vec(rows, cols, data)?)?;
        }
        if r.pos != buf.len() {
            return Err(Error::Validation(format!("{} trailing bytes in checkpoint", buf.len() - r.pos)));
        }
        params.check_layout(&config.layout())?;
        Ok(Checkpoint {
            model: Model::from_parts(config, params)?,
            standardizer,
            seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Validation(msg) => Error::Validation(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Fails with a config error naming the differing fields when `requested`
    /// differs from the stored model configuration.
    pub fn check_config(&self, requested: &ModelConfig) -> Result<()> {
        let stored = self.model.config();
        if stored == requested {
            return Ok(());
        }
        let a = serde_json::to_value(stored).map_err(|e| Error::Validation(e.to_string()))?;
        let b = serde_json::to_value(requested).map_err(|e| Error::Validation(e.to_string()))?;
        let mut diffs = Vec::new();
        diff_values("", &a, &b, &mut diffs);
        Err(Error::Config(format!("checkpoint model config conflicts with the requested one: {}", diffs.join(", "))))
    }
}

fn diff_values(prefix: &str, a: &serde_json::Value, b: &serde_json::Value, out: &mut Vec<String>) {
    match (a, b) {
        (serde_json::Value::Object(x), serde_json::Value::Object(y)) => {
            for (k, va) in x {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                match y.get(k) {
                    Some(vb) => diff_values(&key, va, vb, out),
                    None => out.push(key),
                }
            }
        }
        _ if a != b => out.push(format!("{prefix} (checkpoint {a}, requested {b})")),
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use resflow::training::Variant;

    fn sample(variant: Variant) -> Checkpoint {
        let mut config = variant.apply(&ModelConfig::default());
        config.d_model = 8;
        let model = Model::new(config, 11).unwrap();
        Checkpoint {
            model,
            standardizer: Standardizer {
                enc: ChannelStats {
                    mean: vec![1.5, -2.0],
                    std: vec![0.1, 1e-300],
                },
                dec: ChannelStats {
                    mean: vec![0.0; 4],
                    std: vec![f64::MIN_POSITIVE, 3.0, 4.0, 5.0],
                },
            },
            seed: 3407,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for v in Variant::ALL {
            let ck = sample(v);
            let bytes = ck.to_bytes().unwrap();
            assert_eq!(&bytes[..5], b"EXFC1");
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            assert_eq!(back, ck);
            for (a, b) in ck.model.params().tensors().iter().zip(back.model.params().tensors()) {
                assert!(a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
            assert_eq!(back.to_bytes().unwrap(), bytes);
        }
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = sample(Variant::Full).to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut bad = bytes.clone();
        bad[5] = 9;
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(Checkpoint::from_bytes(&long).is_err());
    }

    #[test]
    fn config_conflicts_name_the_fields() {
        let ck = sample(Variant::Full);
        ck.check_config(ck.model.config()).unwrap();
        let mut other = ck.model.config().clone();
        other.use_adaptive_fusion = false;
        other.spec.horizon_days = 3;
        match ck.check_config(&other) {
            Err(Error::Config(msg)) => {
                assert!(msg.contains("use_adaptive_fusion"), "{msg}");
                assert!(msg.contains("spec.horizon_days"), "{msg}");
            }
            other => panic!("{other:?}"),
        }
    }
}
