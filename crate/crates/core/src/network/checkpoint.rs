//! Binary checkpoint format, little-endian throughout:
//!
//! ```text
//! "GCDL" | version u32
//! hidden u32 | self_dim u32 | neighbor_dim u32 | actions u32 | fc u32 | gamma f64
//! tensor_count u32
//! per tensor: name_len u32 | name bytes | rank u32 | dims u32 * rank | data f64 * prod(dims)
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::agent::{ActionSet, NEIGHBOR_DIM, SELF_DIM};
use crate::error::CheckpointError;

use super::params::{NetworkConfig, NetworkMeta, NetworkParams, ParamSet, FORMAT_VERSION};

pub const MAGIC: &[u8; 4] = b"GCDL";

/// Serializes the network to bytes. The encoding is a pure function of the
/// parameters, so equal networks give equal bytes.
pub fn encode_checkpoint(net: &NetworkParams) -> Vec<u8> {
    let cfg = net.config();
    let mut out = Vec::with_capacity(64 + 8 * net.weights.num_params());
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    put_u32(&mut out, cfg.hidden as u32);
    put_u32(&mut out, SELF_DIM as u32);
    put_u32(&mut out, NEIGHBOR_DIM as u32);
    put_u32(&mut out, cfg.actions as u32);
    put_u32(&mut out, cfg.fc as u32);
    out.extend_from_slice(&net.meta.gamma.to_le_bytes());
    let tensors = net.weights.tensors();
    put_u32(&mut out, tensors.len() as u32);
    for t in tensors {
        put_u32(&mut out, t.name.len() as u32);
        out.extend_from_slice(t.name.as_bytes());
        put_u32(&mut out, t.dims.len() as u32);
        for d in &t.dims {
            put_u32(&mut out, *d as u32);
        }
        for x in t.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

/// Parses a checkpoint. With `expected` set, the stored shape must match it.
pub fn decode_checkpoint(
    bytes: &[u8],
    expected: Option<&NetworkConfig>,
) -> Result<NetworkParams, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    r.pos = 4;
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let hidden = r.u32()? as usize;
    let self_dim = r.u32()? as usize;
    let neighbor_dim = r.u32()? as usize;
    let actions = r.u32()? as usize;
    let fc = r.u32()? as usize;
    let gamma = r.f64()?;
    if self_dim != SELF_DIM || neighbor_dim != NEIGHBOR_DIM {
        return Err(CheckpointError::ShapeMismatch(format!(
            "input dims ({self_dim}, {neighbor_dim}), expected ({SELF_DIM}, {NEIGHBOR_DIM})"
        )));
    }
    let cfg = NetworkConfig {
        hidden,
        fc,
        actions,
    };
    if let Some(want) = expected {
        if *want != cfg {
            return Err(CheckpointError::ShapeMismatch(format!(
                "file has hidden={hidden} fc={fc} actions={actions}, expected hidden={} fc={} actions={}",
                want.hidden, want.fc, want.actions
            )));
        }
    }
    let action_set = ActionSet::from_len(actions).ok_or_else(|| {
        CheckpointError::ShapeMismatch(format!("unsupported action count {actions}"))
    })?;
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(CheckpointError::Corrupt(format!(
            "discount {gamma} outside (0, 1)"
        )));
    }
    if hidden == 0 || fc == 0 || hidden > 1 << 16 || fc > 1 << 16 {
        return Err(CheckpointError::Corrupt(format!(
            "implausible sizes hidden={hidden} fc={fc}"
        )));
    }

    let mut weights = ParamSet::zeros(&cfg);
    let count = r.u32()? as usize;
    let expected_shapes: Vec<(&'static str, Vec<usize>)> = weights
        .tensors()
        .iter()
        .map(|t| (t.name, t.dims.clone()))
        .collect();
    if count != expected_shapes.len() {
        return Err(CheckpointError::Corrupt(format!(
            "{count} tensors, expected {}",
            expected_shapes.len()
        )));
    }
    for ((name, dims), (_, dst)) in expected_shapes.iter().zip(weights.tensors_mut()) {
        let name_len = r.u32()? as usize;
        let found = r.take(name_len)?;
        if found != name.as_bytes() {
            return Err(CheckpointError::Corrupt(format!(
                "expected tensor {name}, found {:?}",
                String::from_utf8_lossy(found)
            )));
        }
        let rank = r.u32()? as usize;
        if rank > 8 {
            return Err(CheckpointError::Corrupt(format!(
                "tensor {name} has rank {rank}"
            )));
        }
        let mut stored = Vec::with_capacity(rank);
        for _ in 0..rank {
            stored.push(r.u32()? as usize);
        }
        if &stored != dims {
            return Err(CheckpointError::ShapeMismatch(format!(
                "tensor {name} has dims {stored:?}, expected {dims:?}"
            )));
        }
        for x in dst.iter_mut() {
            *x = r.f64()?;
        }
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::Corrupt(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    if !weights.all_finite() {
        return Err(CheckpointError::Corrupt("non-finite parameter".into()));
    }
    Ok(NetworkParams {
        weights,
        meta: NetworkMeta {
            gamma,
            action_set,
            version,
        },
    })
}

/// Writes the checkpoint through a temporary file and a rename, so readers
/// never observe a partial file.
pub fn save_checkpoint(net: &NetworkParams, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(net);
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<NetworkParams, CheckpointError> {
    decode_checkpoint(&fs::read(path)?, None)
}

/// Loads and checks the stored shape against `expected`.
pub fn load_checkpoint_with(
    path: impl AsRef<Path>,
    expected: &NetworkConfig,
) -> Result<NetworkParams, CheckpointError> {
    decode_checkpoint(&fs::read(path)?, Some(expected))
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| CheckpointError::Corrupt(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
