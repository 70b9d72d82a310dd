//! Binary checkpoint format. Header: magic "NLXM", version u16 LE, config
//! JSON blob length u32 LE + blob. Body: tensors in declared parameter order,
//! each as ndims u32 LE, dims u32 LE, then little-endian f32 values.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::num::Scalar;

use super::{LanguageModel, ModelConfig, ModelError, Parameters};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"NLXM";
pub const CHECKPOINT_VERSION: u16 = 1;

pub fn save_checkpoint<F: Scalar>(
    model: &LanguageModel<F>,
    path: impl AsRef<Path>,
) -> Result<(), ModelError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(&CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let config_json = serde_json::to_vec(&model.config)
        .map_err(|e| ModelError::Checkpoint(format!("config serialization: {e}")))?;
    w.write_all(&(config_json.len() as u32).to_le_bytes())?;
    w.write_all(&config_json)?;
    for (_, shape, data) in model.params.tensors() {
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &dim in &shape {
            w.write_all(&(dim as u32).to_le_bytes())?;
        }
        for v in data {
            w.write_all(&(v.to_f64_c() as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<F: Scalar>(path: impl AsRef<Path>) -> Result<LanguageModel<F>, ModelError> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(ModelError::Checkpoint(format!(
            "bad magic {magic:?} (expected NLXM)"
        )));
    }
    let mut u16buf = [0u8; 2];
    r.read_exact(&mut u16buf)?;
    let version = u16::from_le_bytes(u16buf);
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::Checkpoint(format!("unsupported version {version}")));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let config_len = u32::from_le_bytes(u32buf) as usize;
    let mut config_json = vec![0u8; config_len];
    r.read_exact(&mut config_json)?;
    let config: ModelConfig = serde_json::from_slice(&config_json)
        .map_err(|e| ModelError::Checkpoint(format!("config blob: {e}")))?;
    config.validate()?;

    let mut params = Parameters::<F>::zeros(&config);
    let expected: Vec<(String, Vec<usize>)> = params
        .tensors()
        .into_iter()
        .map(|(n, s, _)| (n, s))
        .collect();
    let mut buffers = params.tensors_mut();
    for (i, (name, want_shape)) in expected.iter().enumerate() {
        r.read_exact(&mut u32buf)?;
        let ndims = u32::from_le_bytes(u32buf) as usize;
        let mut shape = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            r.read_exact(&mut u32buf)?;
            shape.push(u32::from_le_bytes(u32buf) as usize);
        }
        if shape != *want_shape {
            return Err(ModelError::Checkpoint(format!(
                "tensor {name}: shape {shape:?} does not match config {want_shape:?}"
            )));
        }
        let buf = &mut buffers[i];
        let mut bytes = vec![0u8; buf.len() * 4];
        r.read_exact(&mut bytes)?;
        for (v, chunk) in buf.iter_mut().zip(bytes.chunks_exact(4)) {
            *v = F::from_f64_c(f64::from(f32::from_le_bytes([
                chunk[0], chunk[1], chunk[2], chunk[3],
            ])));
        }
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(ModelError::Checkpoint("trailing bytes after tensors".to_string()));
    }
    drop(buffers);
    LanguageModel::from_parts(config, params)
}
