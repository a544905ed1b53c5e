//! Flat little-endian parameter snapshots.
//!
//! Layout: `u32` layer count, then per layer `u32` inputs, `u32` outputs,
//! `u32` activation code, then every parameter as an `f64` in the network's
//! flat order. Optimizer state is not stored.

use std::path::Path;

use super::{Activation, Mlp, NnError, Result};

impl Mlp {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + self.layers.len() * 12 + self.params.len() * 8);
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for layer in &self.layers {
            out.extend_from_slice(&(layer.inputs as u32).to_le_bytes());
            out.extend_from_slice(&(layer.outputs as u32).to_le_bytes());
            out.extend_from_slice(&layer.activation.code().to_le_bytes());
        }
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Mlp> {
        let mut cursor = bytes;
        let mut next_u32 = || -> Result<u32> {
            if cursor.len() < 4 {
                return Err(NnError::Snapshot("truncated header".into()));
            }
            let (head, rest) = cursor.split_at(4);
            cursor = rest;
            Ok(u32::from_le_bytes(head.try_into().unwrap()))
        };
        let count = next_u32()? as usize;
        if count == 0 {
            return Err(NnError::Snapshot("no layers".into()));
        }
        let mut sizes = Vec::with_capacity(count + 1);
        let mut activations = Vec::with_capacity(count);
        for i in 0..count {
            let inputs = next_u32()? as usize;
            let outputs = next_u32()? as usize;
            let code = next_u32()?;
            if i == 0 {
                sizes.push(inputs);
            } else if sizes[i] != inputs {
                return Err(NnError::Snapshot(format!(
                    "layer {i} input width {inputs} does not match previous output {}",
                    sizes[i]
                )));
            }
            sizes.push(outputs);
            activations.push(
                Activation::from_code(code)
                    .ok_or_else(|| NnError::Snapshot(format!("unknown activation code {code}")))?,
            );
        }
        let mut net = Mlp::zeros(&sizes, &activations);
        let header = 4 + 12 * count;
        let body = &bytes[header..];
        if body.len() != net.params.len() * 8 {
            return Err(NnError::Snapshot(format!(
                "expected {} parameter bytes, found {}",
                net.params.len() * 8,
                body.len()
            )));
        }
        for (p, chunk) in net.params.iter_mut().zip(body.chunks_exact(8)) {
            *p = f64::from_le_bytes(chunk.try_into().unwrap());
            if !p.is_finite() {
                return Err(NnError::NonFinite("snapshot parameter"));
            }
        }
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> std::io::Result<Mlp> {
        let bytes = std::fs::read(path)?;
        Mlp::from_bytes(&bytes)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()))
    }
}
