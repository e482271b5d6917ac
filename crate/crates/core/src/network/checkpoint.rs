//! Binary checkpoint layout (all integers u64 little-endian unless noted,
//! floats IEEE-754 f64 little-endian):
//!
//! ```text
//! magic        8 bytes  "OLECKPT\0"
//! version      u32      1
//! input_dim
//! hidden_count
//! hidden[i]    hidden_count entries
//! feature_dim
//! class_count
//! batchnorm    u8       0 or 1
//! tensor_count
//! tensors      tensor_count × { rows, cols, rows·cols f64 in row-major order }
//! ```
//!
//! Tensor order: for each trunk layer its weight (out×in) and bias (1×out),
//! followed with batchnorm by γ, β, running mean, running variance (1×out
//! each); then the classifier weight (C×D) and bias (1×C).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::{Activation, BatchNorm, Dense, Network, NetworkError, NetworkParams, NetworkSpec};
use crate::linalg::Matrix;

pub const MAGIC: &[u8; 8] = b"OLECKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

pub fn write_checkpoint<W: Write>(net: &Network, mut w: W) -> Result<(), CheckpointError> {
    let spec = net.spec();
    let params = net.params();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    put_u64(&mut w, spec.input_dim)?;
    put_u64(&mut w, spec.hidden.len())?;
    for &h in &spec.hidden {
        put_u64(&mut w, h)?;
    }
    put_u64(&mut w, spec.feature_dim)?;
    put_u64(&mut w, spec.class_count)?;
    w.write_all(&[spec.use_batchnorm as u8])?;

    let mut tensors: Vec<(usize, usize, &[f64])> = Vec::new();
    for (l, dense) in params.trunk.iter().enumerate() {
        let (r, c) = dense.weight.shape();
        tensors.push((r, c, dense.weight.as_slice()));
        tensors.push((1, dense.bias.len(), &dense.bias));
        if let Some(bn) = params.norms.get(l) {
            for t in [&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var] {
                tensors.push((1, t.len(), t));
            }
        }
    }
    let (r, c) = params.classifier.weight.shape();
    tensors.push((r, c, params.classifier.weight.as_slice()));
    tensors.push((1, params.classifier.bias.len(), &params.classifier.bias));

    put_u64(&mut w, tensors.len())?;
    for (rows, cols, data) in tensors {
        put_u64(&mut w, rows)?;
        put_u64(&mut w, cols)?;
        for v in data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Network, CheckpointError> {
    let mut magic = [0u8; 8];
    read_exact(&mut r, &mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut v = [0u8; 4];
    read_exact(&mut r, &mut v)?;
    let version = u32::from_le_bytes(v);
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let input_dim = get_dim(&mut r)?;
    let hidden_count = get_dim(&mut r)?;
    let hidden = (0..hidden_count)
        .map(|_| get_dim(&mut r))
        .collect::<Result<Vec<_>, _>>()?;
    let feature_dim = get_dim(&mut r)?;
    let class_count = get_dim(&mut r)?;
    let mut flag = [0u8; 1];
    read_exact(&mut r, &mut flag)?;
    let use_batchnorm = match flag[0] {
        0 => false,
        1 => true,
        other => return Err(CheckpointError::Malformed(format!("batchnorm flag {other}"))),
    };
    let spec = NetworkSpec {
        input_dim,
        hidden,
        feature_dim,
        class_count,
        use_batchnorm,
        activation: Activation::Relu,
    };
    spec.validate()?;

    let dims = spec.trunk_dims();
    let per_layer = if use_batchnorm { 6 } else { 2 };
    let expected = (dims.len() - 1) * per_layer + 2;
    let count = get_dim(&mut r)?;
    if count != expected {
        return Err(CheckpointError::Malformed(format!(
            "{count} tensors, spec implies {expected}"
        )));
    }

    let mut trunk = Vec::new();
    let mut norms = Vec::new();
    for w in dims.windows(2) {
        let (inp, out) = (w[0], w[1]);
        let weight = get_tensor(&mut r, out, inp)?;
        let bias = get_tensor(&mut r, 1, out)?.into_vec();
        trunk.push(Dense { weight, bias });
        if use_batchnorm {
            norms.push(BatchNorm {
                gamma: get_tensor(&mut r, 1, out)?.into_vec(),
                beta: get_tensor(&mut r, 1, out)?.into_vec(),
                running_mean: get_tensor(&mut r, 1, out)?.into_vec(),
                running_var: get_tensor(&mut r, 1, out)?.into_vec(),
            });
        }
    }
    let classifier = Dense {
        weight: get_tensor(&mut r, class_count, feature_dim)?,
        bias: get_tensor(&mut r, 1, class_count)?.into_vec(),
    };
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(CheckpointError::Malformed("trailing bytes".into()));
    }
    Ok(Network::new(
        spec,
        NetworkParams {
            trunk,
            norms,
            classifier,
        },
    )?)
}

pub fn save_checkpoint(net: &Network, path: &Path) -> Result<(), CheckpointError> {
    write_checkpoint(net, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint(path: &Path) -> Result<Network, CheckpointError> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

fn put_u64<W: Write>(w: &mut W, v: usize) -> std::io::Result<()> {
    w.write_all(&(v as u64).to_le_bytes())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), CheckpointError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => CheckpointError::Malformed("truncated".into()),
        _ => CheckpointError::Io(e),
    })
}

fn get_dim<R: Read>(r: &mut R) -> Result<usize, CheckpointError> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    let v = u64::from_le_bytes(b);
    // guards allocation on corrupt headers
    if v > 1 << 32 {
        return Err(CheckpointError::Malformed(format!("dimension {v} too large")));
    }
    Ok(v as usize)
}

fn get_tensor<R: Read>(r: &mut R, rows: usize, cols: usize) -> Result<Matrix, CheckpointError> {
    let (got_r, got_c) = (get_dim(r)?, get_dim(r)?);
    if (got_r, got_c) != (rows, cols) {
        return Err(CheckpointError::Malformed(format!(
            "tensor is {got_r}x{got_c}, expected {rows}x{cols}"
        )));
    }
    let mut data = Vec::with_capacity(rows * cols);
    let mut b = [0u8; 8];
    for _ in 0..rows * cols {
        read_exact(r, &mut b)?;
        data.push(f64::from_le_bytes(b));
    }
    Matrix::new(rows, cols, data).map_err(|e| CheckpointError::Malformed(e.to_string()))
}
