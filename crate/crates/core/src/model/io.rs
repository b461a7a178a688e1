//! Model file format: a fixed header, raw little-endian f64 parameter
//! blocks, and a trailing FNV-1a checksum. Round trips are bit-exact.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic          8 bytes  "RIDEMODL"
//! version        u32      currently 1
//! hidden         u32
//! window_len     u32
//! components     u32
//! scales         u32
//! rank           u32
//! dequantize     u8       0 or 1
//! padding        3 bytes  zero
//! offsets        window_len x (i32 drow, i32 dcol)
//! param_count    u64      number of f64 values that follow
//! params         param_count x f64    (slstm block, then mcgsm block)
//! checksum       u64      FNV-1a 64 of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::hash::fnv1a64;
use crate::mcgsm::McgsmParams;
use crate::slstm::{CausalWindow, SlstmParams};

use super::{Preprocess, RideModel};

const MAGIC: &[u8; 8] = b"RIDEMODL";
const VERSION: u32 = 1;

impl RideModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let mut buf = Vec::with_capacity(64 + self.param_count() * 8);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.slstm.hidden() as u32).to_le_bytes());
        buf.extend_from_slice(&(self.window.len() as u32).to_le_bytes());
        buf.extend_from_slice(&(self.mcgsm.components() as u32).to_le_bytes());
        buf.extend_from_slice(&(self.mcgsm.scales() as u32).to_le_bytes());
        buf.extend_from_slice(&(self.mcgsm.rank() as u32).to_le_bytes());
        buf.push(self.preprocess.dequantize as u8);
        buf.extend_from_slice(&[0u8; 3]);
        for &(dr, dc) in self.window.offsets() {
            buf.extend_from_slice(&dr.to_le_bytes());
            buf.extend_from_slice(&dc.to_le_bytes());
        }
        let flat = self.to_flat();
        buf.extend_from_slice(&(flat.len() as u64).to_le_bytes());
        for v in &flat {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let checksum = fnv1a64(&buf);
        buf.extend_from_slice(&checksum.to_le_bytes());
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<RideModel> {
        let bytes = fs::read(path)?;
        let fail = |detail: &str| Error::Format {
            path: path.to_path_buf(),
            detail: detail.into(),
        };
        if bytes.len() < MAGIC.len() + 4 {
            return Err(fail("file too short for a model header"));
        }
        if &bytes[..8] != MAGIC {
            return Err(fail("bad magic bytes, not a model file"));
        }
        let mut r = Reader { bytes: &bytes, pos: 8 };
        let version = r.u32(path)?;
        if version != VERSION {
            return Err(Error::Version {
                path: path.to_path_buf(),
                found: version,
                supported: VERSION,
            });
        }
        let hidden = r.u32(path)? as usize;
        let window_len = r.u32(path)? as usize;
        let components = r.u32(path)? as usize;
        let scales = r.u32(path)? as usize;
        let rank = r.u32(path)? as usize;
        let dequantize = r.u8(path)? != 0;
        r.skip(3, path)?;
        if hidden == 0 || window_len == 0 || components == 0 || scales == 0 || rank == 0 {
            return Err(fail("zero dimension in header"));
        }
        if hidden > 1 << 16 || window_len > 1 << 16 || components > 1 << 16 {
            return Err(fail("unreasonable dimension in header"));
        }
        let mut offsets = Vec::with_capacity(window_len);
        for _ in 0..window_len {
            offsets.push((r.i32(path)?, r.i32(path)?));
        }
        let window = CausalWindow::new(offsets).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            detail: format!("stored window is invalid: {e}"),
        })?;

        let mut model = RideModel {
            slstm: SlstmParams::zeros(hidden, window_len),
            mcgsm: McgsmParams::zeros(components, scales, rank, hidden),
            window,
            preprocess: Preprocess { dequantize },
        };
        let stored = r.u64(path)? as usize;
        if stored != model.param_count() {
            return Err(fail(&format!(
                "parameter count {stored} does not match header dimensions ({} expected)",
                model.param_count()
            )));
        }
        let mut flat = Vec::with_capacity(stored);
        for _ in 0..stored {
            flat.push(r.f64(path)?);
        }
        let body_end = r.pos;
        let checksum = r.u64(path)?;
        if checksum != fnv1a64(&bytes[..body_end]) {
            return Err(Error::Checksum {
                path: path.to_path_buf(),
            });
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(fail("non-finite parameter in file"));
        }
        model.set_from_flat(&flat)?;
        model.validate()?;
        Ok(model)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, path: &Path) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format {
                path: path.to_path_buf(),
                detail: format!("truncated at byte {}", self.bytes.len()),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn skip(&mut self, n: usize, path: &Path) -> Result<()> {
        self.take(n, path).map(|_| ())
    }

    fn u8(&mut self, path: &Path) -> Result<u8> {
        Ok(self.take(1, path)?[0])
    }

    fn u32(&mut self, path: &Path) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, path)?.try_into().unwrap()))
    }

    fn i32(&mut self, path: &Path) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4, path)?.try_into().unwrap()))
    }

    fn u64(&mut self, path: &Path) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, path)?.try_into().unwrap()))
    }

    fn f64(&mut self, path: &Path) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, path)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid2D;
    use crate::model::ModelConfig;
    use crate::rng::SeededRng;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("ride-model-io-tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    fn small_model(seed: u64) -> RideModel {
        RideModel::new(
            &ModelConfig {
                components: 3,
                scales: 2,
                rank: Some(4),
                hidden: 6,
                ..ModelConfig::default()
            },
            seed,
        )
    }

    #[test]
    fn round_trip_evaluates_identically() {
        let m = small_model(1);
        let path = tmp("roundtrip.rm");
        m.save(&path).unwrap();
        let loaded = RideModel::load(&path).unwrap();
        assert_eq!(m, loaded);

        let mut rng = SeededRng::new(2);
        let img = Grid2D::from_vec(6, 6, (0..36).map(|_| rng.next_uniform()).collect()).unwrap();
        let a = m.log_likelihood(&img).unwrap().total;
        let b = loaded.log_likelihood(&img).unwrap().total;
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn corrupted_magic_is_a_format_error() {
        let m = small_model(2);
        let path = tmp("magic.rm");
        m.save(&path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] = b'X';
        fs::write(&path, bytes).unwrap();
        match RideModel::load(&path) {
            Err(Error::Format { .. }) => {}
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn future_version_is_a_version_error() {
        let m = small_model(3);
        let path = tmp("version.rm");
        m.save(&path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[8..12].copy_from_slice(&2u32.to_le_bytes());
        fs::write(&path, bytes).unwrap();
        match RideModel::load(&path) {
            Err(Error::Version { found: 2, .. }) => {}
            other => panic!("expected version error, got {other:?}"),
        }
    }

    #[test]
    fn bit_flip_in_payload_fails_checksum() {
        let m = small_model(4);
        let path = tmp("checksum.rm");
        m.save(&path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x10;
        fs::write(&path, bytes).unwrap();
        match RideModel::load(&path) {
            Err(Error::Checksum { .. }) => {}
            other => panic!("expected checksum error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_file_is_rejected() {
        let m = small_model(5);
        let path = tmp("truncated.rm");
        m.save(&path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(RideModel::load(&path).is_err());
    }
}
