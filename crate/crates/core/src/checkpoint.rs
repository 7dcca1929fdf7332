//! Flat binary model checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!   magic "EMK1"
//!   u8 kind: 0 = network, 1 = polynomial
//!   network:    u32 n_widths, then widths as u32
//!   polynomial: u8 feature kind (0 = bits, 1 = iq), u8 bits, u8 degree,
//!               u32 out_width
//!   u64 n_params, then parameters as f64 in declared order

use crate::agents::Model;
use crate::error::{Error, Result};
use crate::mlp::init_mlp;
use crate::poly::{init_poly, PolyFeatures};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"EMK1";

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(MAGIC)?;
    match model {
        Model::Neural(m) => {
            f.write_all(&[0u8])?;
            f.write_all(&(m.widths().len() as u32).to_le_bytes())?;
            for &w in m.widths() {
                f.write_all(&(w as u32).to_le_bytes())?;
            }
        }
        Model::Poly(m) => {
            f.write_all(&[1u8])?;
            match m.features {
                PolyFeatures::Bits { bits, degree } => {
                    f.write_all(&[0u8, bits, degree])?;
                }
                PolyFeatures::Iq { degree } => {
                    f.write_all(&[1u8, 0, degree])?;
                }
            }
            f.write_all(&(m.out_width() as u32).to_le_bytes())?;
        }
    }
    let params = model.params();
    f.write_all(&(params.len() as u64).to_le_bytes())?;
    for &p in params {
        f.write_all(&p.to_le_bytes())?;
    }
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Model> {
    let mut f = std::fs::File::open(path)?;
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::config(format!("{} is not a model checkpoint", path.display())));
    }
    let mut kind = [0u8; 1];
    f.read_exact(&mut kind)?;
    let mut model = match kind[0] {
        0 => {
            let n = read_u32(&mut f)? as usize;
            let mut widths = Vec::with_capacity(n);
            for _ in 0..n {
                widths.push(read_u32(&mut f)? as usize);
            }
            // construction only fixes shapes; parameters are overwritten below
            let mut zero_rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
            Model::Neural(init_mlp(&widths, &mut zero_rng))
        }
        1 => {
            let mut hdr = [0u8; 3];
            f.read_exact(&mut hdr)?;
            let features = match hdr[0] {
                0 => PolyFeatures::Bits { bits: hdr[1], degree: hdr[2] },
                1 => PolyFeatures::Iq { degree: hdr[2] },
                other => {
                    return Err(Error::config(format!("bad poly feature kind {other}")))
                }
            };
            let out_width = read_u32(&mut f)? as usize;
            let mut zero_rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
            Model::Poly(init_poly(features, out_width, &mut zero_rng))
        }
        other => return Err(Error::config(format!("bad model kind {other}"))),
    };
    let n = read_u64(&mut f)? as usize;
    if n != model.num_params() {
        return Err(Error::config(format!(
            "checkpoint has {n} parameters, shape wants {}",
            model.num_params()
        )));
    }
    let mut buf = [0u8; 8];
    for i in 0..n {
        f.read_exact(&mut buf)?;
        model.params_mut()[i] = f64::from_le_bytes(buf);
    }
    Ok(model)
}

fn read_u32(f: &mut std::fs::File) -> Result<u32> {
    let mut b = [0u8; 4];
    f.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(f: &mut std::fs::File) -> Result<u64> {
    let mut b = [0u8; 8];
    f.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

use rand::SeedableRng;
