//! Checkpoint format: a flat little-endian binary parameter array behind a
//! small self-describing header, plus a plain-text sidecar manifest.

use super::{Arch, MlpFunction};
use crate::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"DBRIDGE1";
const VERSION: u32 = 1;

impl MlpFunction {
    /// Writes `<path>` (binary parameters + header) and `<path>.manifest`
    /// (text description of the stored network).
    pub fn save(&self, path: &Path) -> Result<()> {
        let arch = self.arch();
        let mut f = std::fs::File::create(path)?;
        f.write_all(MAGIC)?;
        write_u32(&mut f, VERSION)?;
        write_u32(&mut f, arch.state_dim as u32)?;
        write_u32(&mut f, arch.obs_dim as u32)?;
        write_u32(&mut f, arch.out_dim as u32)?;
        write_u32(&mut f, arch.time_features as u32)?;
        f.write_all(&arch.time_scale.to_le_bytes())?;
        write_u32(&mut f, arch.hidden.len() as u32)?;
        for h in &arch.hidden {
            write_u32(&mut f, *h as u32)?;
        }
        write_u32(&mut f, self.params().len() as u32)?;
        for p in self.params() {
            f.write_all(&p.to_le_bytes())?;
        }

        let manifest = format!(
            "format: diffbridge-network\nversion: {VERSION}\nstate_dim: {}\nobs_dim: {}\nout_dim: {}\nhidden: {:?}\ntime_features: {}\ntime_scale: {}\nn_params: {}\n",
            arch.state_dim,
            arch.obs_dim,
            arch.out_dim,
            arch.hidden,
            arch.time_features,
            arch.time_scale,
            self.params().len(),
        );
        let mut manifest_path = path.as_os_str().to_owned();
        manifest_path.push(".manifest");
        std::fs::write(manifest_path, manifest)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::fs::File::open(path)?;
        let mut magic = [0u8; 8];
        f.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint(format!(
                "bad magic in {}: expected {MAGIC:?}",
                path.display()
            )));
        }
        let version = read_u32(&mut f)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let state_dim = read_u32(&mut f)? as usize;
        let obs_dim = read_u32(&mut f)? as usize;
        let out_dim = read_u32(&mut f)? as usize;
        let time_features = read_u32(&mut f)? as usize;
        let mut bytes = [0u8; 8];
        f.read_exact(&mut bytes)?;
        let time_scale = f64::from_le_bytes(bytes);
        let n_hidden = read_u32(&mut f)? as usize;
        let mut hidden = Vec::with_capacity(n_hidden);
        for _ in 0..n_hidden {
            hidden.push(read_u32(&mut f)? as usize);
        }
        let arch = Arch {
            state_dim,
            obs_dim,
            out_dim,
            hidden,
            time_features,
            time_scale,
        };
        let n_params = read_u32(&mut f)? as usize;
        if n_params != arch.n_params() {
            return Err(Error::Checkpoint(format!(
                "parameter count {n_params} does not match the architecture ({})",
                arch.n_params()
            )));
        }
        let mut params = Vec::with_capacity(n_params);
        for _ in 0..n_params {
            f.read_exact(&mut bytes)?;
            params.push(f64::from_le_bytes(bytes));
        }
        let mut net = MlpFunction::zeros(arch);
        net.set_params(&params);
        Ok(net)
    }
}

fn write_u32(f: &mut impl Write, v: u32) -> std::io::Result<()> {
    f.write_all(&v.to_le_bytes())
}

fn read_u32(f: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    f.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Prng;

    #[test]
    fn save_load_round_trip() {
        let arch = Arch {
            state_dim: 2,
            obs_dim: 1,
            out_dim: 2,
            hidden: vec![5, 3],
            time_features: 4,
            time_scale: 5.0,
        };
        let mut rng = Prng::seed_from(8);
        let net = MlpFunction::init(arch, &mut rng);
        let dir = std::env::temp_dir().join("diffbridge_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("net.bin");
        net.save(&path).unwrap();
        let loaded = MlpFunction::load(&path).unwrap();
        assert_eq!(net.params(), loaded.params());
        assert_eq!(net.arch(), loaded.arch());
        let manifest = std::fs::read_to_string(dir.join("net.bin.manifest")).unwrap();
        assert!(manifest.contains("n_params"));
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn load_rejects_corrupt_header() {
        let dir = std::env::temp_dir().join("diffbridge_ckpt_bad");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.bin");
        std::fs::write(&path, b"NOTMAGIC").unwrap();
        assert!(MlpFunction::load(&path).is_err());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
