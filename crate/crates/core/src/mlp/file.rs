//! Model persistence: a versioned JSON header (architecture,
//! normalization, network hash, train config) followed by the raw
//! weight and bias values as little-endian f64 blobs, layer by layer.
//! Round trips are byte-exact.

use super::{InputNormalization, MlpError, MlpModel, TrainConfig};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"OPFMLP01";

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    layer_dims: Vec<usize>,
    architecture_tag: String,
    network_hash: String,
    input_norm: InputNormalization,
    train_config: Option<TrainConfig>,
}

pub fn save_model(model: &MlpModel, path: impl AsRef<Path>) -> Result<(), MlpError> {
    let path = path.as_ref();
    let io_err = |source| MlpError::Io {
        path: path.display().to_string(),
        source,
    };
    let header = Header {
        format_version: 1,
        layer_dims: model.layer_dims.clone(),
        architecture_tag: model.architecture_tag.clone(),
        network_hash: model.network_hash.clone(),
        input_norm: model.input_norm.clone(),
        train_config: model.train_config.clone(),
    };
    let header_json = serde_json::to_vec(&header).expect("header serializes");
    let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    file.write_all(MAGIC).map_err(io_err)?;
    file.write_all(&(header_json.len() as u32).to_le_bytes())
        .map_err(io_err)?;
    file.write_all(&header_json).map_err(io_err)?;
    for l in 0..model.weights.len() {
        // row-major weight blob, then the bias vector
        let w = &model.weights[l];
        for i in 0..w.nrows() {
            for j in 0..w.ncols() {
                file.write_all(&w[(i, j)].to_le_bytes()).map_err(io_err)?;
            }
        }
        for v in model.biases[l].iter() {
            file.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }
    file.flush().map_err(io_err)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<MlpModel, MlpError> {
    let path = path.as_ref();
    let io_err = |source| MlpError::Io {
        path: path.display().to_string(),
        source,
    };
    let fmt_err = |message: String| MlpError::Format {
        path: path.display().to_string(),
        message,
    };
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(io_err)?
        .read_to_end(&mut bytes)
        .map_err(io_err)?;
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(fmt_err("missing magic bytes".into()));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() < 12 + header_len {
        return Err(fmt_err("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[12..12 + header_len])
        .map_err(|e| fmt_err(format!("bad header json: {e}")))?;
    if header.format_version != 1 {
        return Err(fmt_err(format!(
            "unsupported format_version {}",
            header.format_version
        )));
    }
    if header.layer_dims.len() < 2 || header.layer_dims.contains(&0) {
        return Err(fmt_err(format!("bad layer dims {:?}", header.layer_dims)));
    }
    let expected: usize = (0..header.layer_dims.len() - 1)
        .map(|l| header.layer_dims[l + 1] * header.layer_dims[l] + header.layer_dims[l + 1])
        .sum();
    let body = &bytes[12 + header_len..];
    if body.len() != expected * 8 {
        return Err(fmt_err(format!(
            "weight blob holds {} bytes, expected {}",
            body.len(),
            expected * 8
        )));
    }
    let mut off = 0usize;
    let mut next = || {
        let v = f64::from_le_bytes(body[off..off + 8].try_into().unwrap());
        off += 8;
        v
    };
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for l in 0..header.layer_dims.len() - 1 {
        let (rows, cols) = (header.layer_dims[l + 1], header.layer_dims[l]);
        let mut w = DMatrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                w[(i, j)] = next();
            }
        }
        let mut b = DVector::zeros(rows);
        for i in 0..rows {
            b[i] = next();
        }
        weights.push(w);
        biases.push(b);
    }
    if header.input_norm.mean.len() != header.layer_dims[0]
        || header.input_norm.scale.len() != header.layer_dims[0]
    {
        return Err(fmt_err("normalization length mismatch".into()));
    }
    Ok(MlpModel {
        layer_dims: header.layer_dims,
        weights,
        biases,
        input_norm: header.input_norm,
        architecture_tag: header.architecture_tag,
        network_hash: header.network_hash,
        train_config: header.train_config,
    })
}
