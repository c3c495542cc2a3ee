//! Versioned binary checkpoint of one member: spec, weights and Adam state.
//!
//! Layout (little-endian):
//! `b"SPELMEMB"`, `u32` version, `u64` spec length + JSON spec, `u64` step,
//! `u64` n, `n` weights, then the optimizer: four `f64` hyperparameters
//! (lr, beta1, beta2, eps), `u64` t, `n` first moments, `n` second moments.

use std::io::{Read, Write};

use super::{LearnerError, LearnerParams, LearnerSpec, OptimizerState};

const MAGIC: &[u8; 8] = b"SPELMEMB";
const VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> LearnerError {
    LearnerError::Checkpoint(msg.into())
}

fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> std::io::Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> std::io::Result<f64> {
    read_u64(r).map(f64::from_bits)
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> std::io::Result<Vec<f64>> {
    (0..n).map(|_| read_f64(r)).collect()
}

pub fn write_member<W: Write>(
    mut w: W,
    params: &LearnerParams,
    optimizer: &OptimizerState,
) -> Result<(), LearnerError> {
    let spec = serde_json::to_vec(params.spec()).map_err(|e| bad(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(spec.len() as u64).to_le_bytes())?;
    w.write_all(&spec)?;
    w.write_all(&params.step().to_le_bytes())?;
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    write_f64s(&mut w, params.values())?;
    write_f64s(
        &mut w,
        &[optimizer.learning_rate, optimizer.beta1, optimizer.beta2, optimizer.eps],
    )?;
    w.write_all(&optimizer.t.to_le_bytes())?;
    write_f64s(&mut w, &optimizer.first_moment)?;
    write_f64s(&mut w, &optimizer.second_moment)?;
    w.flush()?;
    Ok(())
}

pub fn read_member<R: Read>(mut r: R) -> Result<(LearnerParams, OptimizerState), LearnerError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("not a member checkpoint"));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let spec_len = usize::try_from(read_u64(&mut r)?).map_err(|_| bad("spec length overflow"))?;
    if spec_len > 1 << 20 {
        return Err(bad("spec header too large"));
    }
    let mut spec_bytes = vec![0u8; spec_len];
    r.read_exact(&mut spec_bytes)?;
    let spec: LearnerSpec = serde_json::from_slice(&spec_bytes).map_err(|e| bad(e.to_string()))?;
    let step = read_u64(&mut r)?;
    let n = usize::try_from(read_u64(&mut r)?).map_err(|_| bad("parameter count overflow"))?;
    let expected = spec.parameter_count()?;
    if n != expected {
        return Err(bad(format!("{n} parameters stored, spec needs {expected}")));
    }
    let values = read_f64s(&mut r, n)?;
    let params = LearnerParams::from_values(&spec, values, step)?;
    let hyper = read_f64s(&mut r, 4)?;
    let t = read_u64(&mut r)?;
    let first_moment = read_f64s(&mut r, n)?;
    let second_moment = read_f64s(&mut r, n)?;
    let optimizer = OptimizerState {
        learning_rate: hyper[0],
        beta1: hyper[1],
        beta2: hyper[2],
        eps: hyper[3],
        t,
        first_moment,
        second_moment,
    };
    Ok((params, optimizer))
}
