//! Binary network checkpoints.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic "AXQN" | u32 version | u32 network count
//! per network:
//!   u32 csi_inputs | u32 buf_inputs | u32 n_csi | u32 n_buf | u32 n_fusion
//!   (u32 inputs, u32 outputs) for every layer: CSI branch, buffer branch, fusion
//! then per network, per layer in the same order:
//!   f64 weights, row-major outputs x inputs | f64 bias
//! ```

use std::io::{Read, Write};

use super::{Dense, MlpParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"AXQN";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(nets: &[&MlpParams], mut w: W) -> std::io::Result<()> {
    let u32le = |w: &mut W, v: usize| w.write_all(&(v as u32).to_le_bytes());
    w.write_all(&CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    u32le(&mut w, nets.len())?;
    for n in nets {
        for v in [
            n.csi_inputs,
            n.buf_inputs,
            n.csi.len(),
            n.buf.len(),
            n.fusion.len(),
        ] {
            u32le(&mut w, v)?;
        }
        for l in n.csi.iter().chain(&n.buf).chain(&n.fusion) {
            u32le(&mut w, l.inputs)?;
            u32le(&mut w, l.outputs)?;
        }
    }
    for n in nets {
        for x in n.iter_params() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()
}

fn bad(msg: impl Into<String>) -> Error {
    Error::IncompatibleCheckpoint(msg.into())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<MlpParams>> {
    let word = |r: &mut R| -> Result<usize> {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)
            .map_err(|e| bad(format!("truncated header: {e}")))?;
        Ok(u32::from_le_bytes(b) as usize)
    };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|e| bad(format!("truncated header: {e}")))?;
    if magic != CHECKPOINT_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = word(&mut r)?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(bad(format!("unsupported version {version}")));
    }
    let count = word(&mut r)?;
    if count > 1024 {
        return Err(bad("implausible network count"));
    }
    let mut nets = Vec::with_capacity(count);
    for _ in 0..count {
        let csi_inputs = word(&mut r)?;
        let buf_inputs = word(&mut r)?;
        let sizes = [word(&mut r)?, word(&mut r)?, word(&mut r)?];
        let mut stacks: [Vec<Dense>; 3] = Default::default();
        for (stack, &n) in stacks.iter_mut().zip(&sizes) {
            if n > 1024 {
                return Err(bad("implausible layer count"));
            }
            for _ in 0..n {
                let (i, o) = (word(&mut r)?, word(&mut r)?);
                if i.saturating_mul(o) > 1 << 28 {
                    return Err(bad("implausible layer size"));
                }
                stack.push(Dense::zeros(i, o));
            }
        }
        let [csi, buf, fusion] = stacks;
        nets.push(MlpParams {
            csi_inputs,
            buf_inputs,
            csi,
            buf,
            fusion,
        });
    }
    for n in nets.iter_mut() {
        for x in n.iter_params_mut() {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)
                .map_err(|e| bad(format!("truncated weights: {e}")))?;
            *x = f64::from_le_bytes(b);
        }
        n.validate().map_err(|e| bad(e.to_string()))?;
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| bad(e.to_string()))? != 0 {
        return Err(bad("trailing bytes"));
    }
    Ok(nets)
}
