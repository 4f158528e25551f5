//! Binary model files.
//!
//! Layout, all little-endian: magic `LRBM`, `u32` format version, `u32`
//! hidden kind (0 leaky, 1 Bernoulli), `u64` I, `u64` J, `f64` leakiness,
//! `W` row-major (`I * J` `f64`), `a` (`I` `f64`), `b` (`J` `f64`), then the
//! provenance: `u64` config hash, `u64` seed, `u64` epoch.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{HiddenKind, RbmParams};

pub const MAGIC: &[u8; 4] = b"LRBM";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Provenance {
    pub config_hash: u64,
    pub seed: u64,
    pub epoch: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub params: RbmParams,
    pub provenance: Provenance,
}

impl ModelFile {
    pub fn new(params: RbmParams, provenance: Provenance) -> Self {
        ModelFile { params, provenance }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let p = &self.params;
        let (i, j) = (p.num_visible(), p.num_hidden());
        let mut out = Vec::with_capacity(48 + 8 * (i * j + i + j) + 24);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let kind: u32 = match p.kind {
            HiddenKind::LeakyRelu => 0,
            HiddenKind::Bernoulli => 1,
        };
        out.extend_from_slice(&kind.to_le_bytes());
        out.extend_from_slice(&(i as u64).to_le_bytes());
        out.extend_from_slice(&(j as u64).to_le_bytes());
        out.extend_from_slice(&p.leakiness.to_le_bytes());
        for r in 0..i {
            for c in 0..j {
                out.extend_from_slice(&p.weights[(r, c)].to_le_bytes());
            }
        }
        for x in p.visible_bias.iter().chain(p.hidden_bias.iter()) {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out.extend_from_slice(&self.provenance.config_hash.to_le_bytes());
        out.extend_from_slice(&self.provenance.seed.to_le_bytes());
        out.extend_from_slice(&self.provenance.epoch.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, offset: 0, path };
        if r.take(4)? != MAGIC {
            return Err(Error::format(path, "offset 0: bad magic, expected `LRBM`"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::format(path, format!("unsupported format version {version}")));
        }
        let kind = match r.u32()? {
            0 => HiddenKind::LeakyRelu,
            1 => HiddenKind::Bernoulli,
            other => return Err(Error::format(path, format!("offset 8: unknown hidden kind {other}"))),
        };
        let i = r.u64()? as usize;
        let j = r.u64()? as usize;
        let payload = i
            .checked_mul(j)
            .and_then(|n| n.checked_add(i + j))
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::format(path, "dimensions overflow"))?;
        if bytes.len() < r.offset + 8 + payload {
            return Err(Error::format(path, format!("file is {} bytes, too short for {i} x {j}", bytes.len())));
        }
        let leakiness = r.f64()?;
        let mut weights = DMatrix::zeros(i, j);
        for row in 0..i {
            for col in 0..j {
                weights[(row, col)] = r.f64()?;
            }
        }
        let visible_bias = DVector::from_iterator(i, (0..i).map(|_| r.f64()).collect::<Result<Vec<_>>>()?);
        let hidden_bias = DVector::from_iterator(j, (0..j).map(|_| r.f64()).collect::<Result<Vec<_>>>()?);
        let provenance = Provenance {
            config_hash: r.u64()?,
            seed: r.u64()?,
            epoch: r.u64()?,
        };
        if r.offset != bytes.len() {
            return Err(Error::format(path, format!("offset {}: trailing bytes", r.offset)));
        }
        let params = RbmParams::new(weights, visible_bias, hidden_bias, leakiness, kind)
            .map_err(|e| Error::format(path, e.to_string()))?;
        Ok(ModelFile { params, provenance })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.offset + n;
        if end > self.bytes.len() {
            return Err(Error::format(self.path, format!("offset {}: unexpected end of file", self.offset)));
        }
        let s = &self.bytes[self.offset..end];
        self.offset = end;
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
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            i in 1usize..6,
            j in 1usize..6,
            seed in any::<u64>(),
            c in 1e-6f64..=1.0,
            bernoulli in any::<bool>(),
            hash in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut draw = || rng.random::<f64>() * 10.0 - 5.0 + rng.random::<f64>() * 1e-300;
            let weights = DMatrix::from_fn(i, j, |_, _| draw());
            let a = DVector::from_fn(i, |_, _| draw());
            let b = DVector::from_fn(j, |_, _| draw());
            let kind = if bernoulli { HiddenKind::Bernoulli } else { HiddenKind::LeakyRelu };
            let params = RbmParams::new(weights, a, b, c, kind).unwrap();
            let file = ModelFile::new(params, Provenance { config_hash: hash, seed, epoch: 7 });
            let back = ModelFile::from_bytes(&file.to_bytes(), Path::new("mem")).unwrap();
            prop_assert_eq!(&back, &file);
            prop_assert_eq!(back.to_bytes(), file.to_bytes());
        }
    }

    #[test]
    fn truncated_file_is_rejected() {
        let params = RbmParams::zeros(2, 2, 0.5, HiddenKind::LeakyRelu).unwrap();
        let bytes = ModelFile::new(params, Provenance::default()).to_bytes();
        let err = ModelFile::from_bytes(&bytes[..bytes.len() - 3], Path::new("m.rbm")).unwrap_err();
        assert!(err.to_string().contains("m.rbm"));
        assert!(ModelFile::from_bytes(b"NOPE", Path::new("m.rbm")).is_err());
    }
}
