//! Versioned binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic            4 bytes  "PHCK"
//! format_version   u32      currently 1
//! kind             u16 length + UTF-8
//! config_digest    32 bytes SHA-256 of the config text
//! config           u32 length + UTF-8 ("key = value" lines)
//! n_params         u32
//!   name           u16 length + UTF-8
//!   ndim           u8
//!   dims           ndim x u64
//!   payload        prod(dims) x f64
//! n_stats          u32
//!   (same record layout as params)
//! ```
//!
//! Records are written in name order, so equal contents give equal bytes.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{NnError, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"PHCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub config: String,
    pub params: BTreeMap<String, Tensor>,
    pub stats: BTreeMap<String, Tensor>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn err(msg: impl Into<String>) -> NnError {
    NnError::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn new(kind: &str, config: String, store: &ParamStore) -> Self {
        Self {
            kind: kind.to_string(),
            config,
            params: store.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
            stats: BTreeMap::new(),
        }
    }

    pub fn config_digest(&self) -> String {
        sha256_hex(self.config.as_bytes())
    }

    /// Digest over the statistics records only.
    pub fn stats_digest(&self) -> String {
        let mut buf = Vec::new();
        for (name, t) in &self.stats {
            write_record(&mut buf, name, t).expect("in-memory write");
        }
        sha256_hex(&buf)
    }

    /// Rebuilds a parameter store (fresh optimizer state).
    pub fn param_store(&self) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        for (k, v) in &self.params {
            store.insert(k, v.clone())?;
        }
        Ok(store)
    }

    /// Value of `key` in the `key = value` config text.
    pub fn config_value(&self, key: &str) -> Option<&str> {
        self.config.lines().find_map(|l| {
            let (k, v) = l.split_once('=')?;
            (k.trim() == key).then(|| v.trim())
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("in-memory write");
        buf
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        write_str16(w, &self.kind)?;
        let digest = Sha256::digest(self.config.as_bytes());
        w.write_all(digest.as_slice())?;
        w.write_all(&(self.config.len() as u32).to_le_bytes())?;
        w.write_all(self.config.as_bytes())?;
        for records in [&self.params, &self.stats] {
            w.write_all(&(records.len() as u32).to_le_bytes())?;
            for (name, t) in records {
                write_record(w, name, t)?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(err("bad magic"));
        }
        let version = read_u32(r)?;
        if version != FORMAT_VERSION {
            return Err(err(format!("unsupported format version {version}")));
        }
        let kind = read_str16(r)?;
        let mut digest = [0u8; 32];
        r.read_exact(&mut digest)?;
        let len = read_u32(r)? as usize;
        let mut cfg = vec![0u8; len];
        r.read_exact(&mut cfg)?;
        if Sha256::digest(&cfg).as_slice() != digest {
            return Err(err("config digest mismatch"));
        }
        let config = String::from_utf8(cfg).map_err(|_| err("config is not UTF-8"))?;
        let mut sections = [BTreeMap::new(), BTreeMap::new()];
        for section in sections.iter_mut() {
            let n = read_u32(r)?;
            for _ in 0..n {
                let (name, t) = read_record(r)?;
                section.insert(name, t);
            }
        }
        let [params, stats] = sections;
        Ok(Self {
            kind,
            config,
            params,
            stats,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }
}

fn write_str16<W: Write>(w: &mut W, s: &str) -> Result<()> {
    let len = u16::try_from(s.len()).map_err(|_| err("name too long"))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn write_record<W: Write>(w: &mut W, name: &str, t: &Tensor) -> Result<()> {
    write_str16(w, name)?;
    w.write_all(&[t.shape().len() as u8])?;
    for d in t.shape() {
        w.write_all(&(*d as u64).to_le_bytes())?;
    }
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_str16<R: Read>(r: &mut R) -> Result<String> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    let mut s = vec![0u8; u16::from_le_bytes(b) as usize];
    r.read_exact(&mut s)?;
    String::from_utf8(s).map_err(|_| err("name is not UTF-8"))
}

fn read_record<R: Read>(r: &mut R) -> Result<(String, Tensor)> {
    let name = read_str16(r)?;
    let mut nd = [0u8; 1];
    r.read_exact(&mut nd)?;
    let mut shape = Vec::with_capacity(nd[0] as usize);
    for _ in 0..nd[0] {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        shape.push(u64::from_le_bytes(b) as usize);
    }
    let n: usize = shape.iter().product();
    let mut raw = vec![0u8; n * 8];
    r.read_exact(&mut raw)?;
    let data = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((name, Tensor::new(shape, data)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn sample() -> Checkpoint {
        let mut rng = Rng::new(2);
        let mut store = ParamStore::new();
        store.init_uniform("a.w", &[3, 2], 3, &mut rng).unwrap();
        store.insert("b", Tensor::row(vec![f64::MIN_POSITIVE, -0.0, 1e300])).unwrap();
        let mut ck = Checkpoint::new("test", "q_dim = 4\nseed = 1\n".into(), &store);
        ck.stats.insert("mean".into(), Tensor::row(vec![0.1, 0.2]));
        ck
    }

    #[test]
    fn roundtrip_is_lossless() {
        let ck = sample();
        let bytes = ck.to_bytes();
        let back = Checkpoint::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.config_value("q_dim"), Some("4"));
    }

    #[test]
    fn tampered_config_rejected() {
        let ck = sample();
        let mut bytes = ck.to_bytes();
        let pos = bytes.windows(5).position(|w| w == b"q_dim").unwrap();
        bytes[pos] = b'Q';
        assert!(Checkpoint::read_from(&mut bytes.as_slice()).is_err());
    }

    #[test]
    fn bad_magic_rejected() {
        let mut bytes = sample().to_bytes();
        bytes[0] = b'X';
        assert!(matches!(Checkpoint::read_from(&mut bytes.as_slice()), Err(NnError::Checkpoint(_))));
    }
}
