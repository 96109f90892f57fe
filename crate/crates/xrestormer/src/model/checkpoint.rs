//! Checkpoints: one binary file holding the config, the step counter,
//! every named parameter, and (optionally) optimizer moments.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "XRCK", format version u32
//! config TOML:   u64 byte length, then UTF-8 text
//! step:          u64
//! tensor count:  u64
//! per parameter: u64 name length, UTF-8 name, tensor record
//! moments flag:  u8 (0 or 1)
//! if 1:          per parameter, first-moment then second-moment record
//! ```
//!
//! Tensor records use the same format as standalone tensor files.
//! Parameters are stored in traversal order and restored by matching both
//! position and name, so a checkpoint also documents the model layout.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::state::ModelState;
use crate::tensor::{read_tensor, write_tensor, Scalar, Tensor};

const MAGIC: &[u8; 4] = b"XRCK";
const VERSION: u32 = 1;

/// First and second optimizer moments, one tensor per parameter in
/// traversal order.
#[derive(Debug, Clone)]
pub struct Moments<T: Scalar> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

/// Everything a checkpoint holds.
#[derive(Debug, Clone)]
pub struct Checkpoint<T: Scalar> {
    pub state: ModelState<T>,
    pub step: u64,
    pub moments: Option<Moments<T>>,
}

/// Writes a checkpoint. `moments`, when given, must hold one tensor pair
/// per parameter, shaped like the parameters, in traversal order.
pub fn save_checkpoint<T: Scalar>(
    path: &Path,
    state: &ModelState<T>,
    step: u64,
    moments: Option<&Moments<T>>,
) -> Result<()> {
    let mut named = Vec::new();
    state.visit(&mut |name, t| named.push((name, t.clone())));
    if let Some(mo) = moments {
        if mo.m.len() != named.len() || mo.v.len() != named.len() {
            return Err(Error::Contract(format!(
                "moments hold {}/{} tensors for {} parameters",
                mo.m.len(),
                mo.v.len(),
                named.len()
            )));
        }
    }

    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let config_text = state.config.to_toml()?;
    let inner = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(config_text.len() as u64).to_le_bytes())?;
        w.write_all(config_text.as_bytes())?;
        w.write_all(&step.to_le_bytes())?;
        w.write_all(&(named.len() as u64).to_le_bytes())?;
        for (name, t) in &named {
            w.write_all(&(name.len() as u64).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            write_tensor(w, t)?;
        }
        match moments {
            None => w.write_all(&[0u8])?,
            Some(mo) => {
                w.write_all(&[1u8])?;
                for (m, v) in mo.m.iter().zip(&mo.v) {
                    write_tensor(w, m)?;
                    write_tensor(w, v)?;
                }
            }
        }
        w.flush()
    };
    inner(&mut w).map_err(|e| Error::io(path, e))
}

/// Reads a checkpoint written by [`save_checkpoint`]. The element type
/// must match the stored one exactly; resuming must not round parameters
/// through a narrower type.
pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, path)?;
    if &magic != MAGIC {
        return Err(Error::Parse(format!("{}: not a checkpoint file", path.display())));
    }
    let version = read_u32(&mut r, path)?;
    if version != VERSION {
        return Err(Error::Parse(format!(
            "{}: checkpoint format version {version}, expected {VERSION}",
            path.display()
        )));
    }
    let config_len = read_u64(&mut r, path)? as usize;
    let mut config_bytes = vec![0u8; config_len];
    read_exact(&mut r, &mut config_bytes, path)?;
    let config_text = String::from_utf8(config_bytes)
        .map_err(|_| Error::Parse(format!("{}: config is not UTF-8", path.display())))?;
    let config = ModelConfig::from_toml(&config_text)?;
    let step = read_u64(&mut r, path)?;

    let mut state = ModelState::<T>::init(&config, 0)?;
    let count = read_u64(&mut r, path)? as usize;
    if count != state.num_tensors() {
        return Err(Error::Parse(format!(
            "{}: {count} stored tensors for a model with {}",
            path.display(),
            state.num_tensors()
        )));
    }
    let mut stored = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u64(&mut r, path)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        read_exact(&mut r, &mut name_bytes, path)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Parse(format!("{}: tensor name is not UTF-8", path.display())))?;
        stored.push((name, read_tensor::<T>(&mut r)?));
    }

    let mut cursor = 0usize;
    let mut mismatch = None;
    state.visit_mut(&mut |name, t| {
        if mismatch.is_some() {
            return;
        }
        let (stored_name, stored_t) = &mut stored[cursor];
        if *stored_name != name {
            mismatch = Some(format!("tensor {cursor} is named {stored_name:?}, expected {name:?}"));
        } else if stored_t.shape() != t.shape() {
            mismatch = Some(format!("tensor {name} has a mismatched shape"));
        } else {
            std::mem::swap(t, stored_t);
        }
        cursor += 1;
    });
    if let Some(msg) = mismatch {
        return Err(Error::Parse(format!("{}: {msg}", path.display())));
    }

    let mut flag = [0u8; 1];
    read_exact(&mut r, &mut flag, path)?;
    let moments = match flag[0] {
        0 => None,
        1 => {
            let mut m = Vec::with_capacity(count);
            let mut v = Vec::with_capacity(count);
            for _ in 0..count {
                m.push(read_tensor::<T>(&mut r)?);
                v.push(read_tensor::<T>(&mut r)?);
            }
            Some(Moments { m, v })
        }
        other => {
            return Err(Error::Parse(format!(
                "{}: moments flag is {other}, expected 0 or 1",
                path.display()
            )))
        }
    };

    Ok(Checkpoint { state, step, moments })
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], path: &Path) -> Result<()> {
    r.read_exact(buf).map_err(|e| Error::io(path, e))
}

fn read_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, path)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read, path: &Path) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, path)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::ModelConfig;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("xrestormer-ckpt-tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    fn states_bits_eq<T: Scalar>(a: &ModelState<T>, b: &ModelState<T>) -> bool {
        let mut tensors = Vec::new();
        a.visit(&mut |_, t| tensors.push(t.clone()));
        let mut i = 0;
        let mut ok = true;
        b.visit(&mut |_, t| {
            ok &= t.bits_eq(&tensors[i]);
            i += 1;
        });
        ok
    }

    #[test]
    fn round_trip_restores_parameters_bitwise() {
        let state = ModelState::<f32>::init(&ModelConfig::tiny(), 99).unwrap();
        let path = tmp("round-trip.ckpt");
        save_checkpoint(&path, &state, 1234, None).unwrap();
        let loaded = load_checkpoint::<f32>(&path).unwrap();
        assert_eq!(loaded.step, 1234);
        assert!(loaded.moments.is_none());
        assert_eq!(loaded.state.config, state.config);
        assert!(states_bits_eq(&state, &loaded.state));
    }

    #[test]
    fn round_trip_with_moments() {
        let state = ModelState::<f64>::init(&ModelConfig::tiny(), 5).unwrap();
        let mut m = Vec::new();
        let mut v = Vec::new();
        state.visit(&mut |_, t| {
            m.push(t.map(|x| x * 0.5));
            v.push(t.map(|x| x * x));
        });
        let moments = Moments { m, v };
        let path = tmp("with-moments.ckpt");
        save_checkpoint(&path, &state, 7, Some(&moments)).unwrap();
        let loaded = load_checkpoint::<f64>(&path).unwrap();
        let got = loaded.moments.unwrap();
        assert_eq!(got.m.len(), got.v.len());
        for (a, b) in got.m.iter().zip(&moments.m) {
            assert!(a.bits_eq(b));
        }
        for (a, b) in got.v.iter().zip(&moments.v) {
            assert!(a.bits_eq(b));
        }
    }

    #[test]
    fn wrong_dtype_rejected() {
        let state = ModelState::<f32>::init(&ModelConfig::tiny(), 0).unwrap();
        let path = tmp("dtype.ckpt");
        save_checkpoint(&path, &state, 0, None).unwrap();
        assert!(load_checkpoint::<f64>(&path).is_err());
    }

    #[test]
    fn truncated_file_rejected() {
        let state = ModelState::<f32>::init(&ModelConfig::tiny(), 0).unwrap();
        let path = tmp("trunc.ckpt");
        save_checkpoint(&path, &state, 0, None).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let cut = tmp("trunc-cut.ckpt");
        std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
        assert!(load_checkpoint::<f32>(&cut).is_err());
    }
}
