//! The `CFMD` model container.
//!
//! Little-endian: magic `"CFMD"`, version (u32), then `input_dim, Z, V, K, T`
//! as five u32, then every layer as f64 weights (row-major, `out x in`)
//! followed by its f64 biases, hidden layers first and the output layer last.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ModelConfig, SlpModel};
use crate::error::{Error, Result};
use crate::scenario::io::{Reader, Writer};

pub const MODEL_MAGIC: &[u8; 4] = b"CFMD";
pub const MODEL_FORMAT_VERSION: u32 = 1;

pub fn save_model(model: &SlpModel, path: &Path) -> Result<()> {
    let mut w = Writer(BufWriter::new(File::create(path)?));
    w.0.write_all(MODEL_MAGIC)?;
    w.u32(MODEL_FORMAT_VERSION)?;
    let c = &model.config;
    for d in [c.input_dim, c.hidden_layers, c.hidden_width, c.num_devices, c.cluster_inputs] {
        w.dim(d)?;
    }
    for layer in model.hidden.iter().chain(std::iter::once(&model.output)) {
        for &v in layer.weights.iter().chain(layer.bias.iter()) {
            w.f64(v)?;
        }
    }
    w.0.flush()?;
    Ok(())
}

fn read_config<R: Read>(r: &mut Reader<R>) -> Result<ModelConfig> {
    r.magic(MODEL_MAGIC)?;
    let version = r.u32()?;
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::VersionMismatch { found: version, expected: MODEL_FORMAT_VERSION });
    }
    let mut dims = [0usize; 5];
    for d in &mut dims {
        *d = r.u32()? as usize;
    }
    let config = ModelConfig {
        input_dim: dims[0],
        hidden_layers: dims[1],
        hidden_width: dims[2],
        num_devices: dims[3],
        cluster_inputs: dims[4],
    };
    config
        .validate()
        .map_err(|_| Error::CorruptHeader(format!("invalid model dimensions {dims:?}")))?;
    Ok(config)
}

/// Reads only the configuration block of a model file.
pub fn read_model_header(path: &Path) -> Result<ModelConfig> {
    read_config(&mut Reader(BufReader::new(File::open(path)?)))
}

pub fn load_model(path: &Path) -> Result<SlpModel> {
    let file = File::open(path)?;
    let len = file.metadata()?.len();
    let mut r = Reader(BufReader::new(file));
    let config = read_config(&mut r)?;
    let mut model = SlpModel::zeros(config)?;
    let expected = 4 + 4 + 5 * 4 + 8 * model.param_count() as u64;
    if len != expected {
        return Err(Error::CorruptHeader(format!(
            "model file is {len} bytes, header implies {expected}"
        )));
    }
    for param in model.param_slices_mut() {
        for v in param.iter_mut() {
            *v = r.f64()?;
        }
    }
    Ok(model)
}
