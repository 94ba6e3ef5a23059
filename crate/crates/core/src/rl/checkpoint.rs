//! Binary model checkpoint.
//!
//! Little-endian throughout:
//!
//! ```text
//! magic      8 bytes  "COEXDQN\0"
//! version    u32
//! entries    u32
//! per entry:
//!   alpha    f64
//!   seed     u64
//!   agents   u32
//!   per agent:
//!     role     u8   (0 = gNB, 1 = AP)
//!     layers   u32  number of layer widths
//!     widths   u32 * layers
//!     adam_t   u64
//!     params   f64 * P   (per layer: weights row-major, then biases)
//!     adam_m   f64 * P
//!     adam_v   f64 * P
//! ```

use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::agent::{AgentRole, DqnAgent, DqnParams};
use super::mlp::{param_count, Mlp};

pub const MAGIC: [u8; 8] = *b"COEXDQN\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

/// Trained agents for one (α, seed) pair.
#[derive(Clone, Debug)]
pub struct CheckpointEntry {
    pub alpha: f64,
    pub seed: u64,
    pub agents: Vec<DqnAgent>,
}

impl CheckpointEntry {
    pub fn agent(&self, role: AgentRole) -> Option<&DqnAgent> {
        self.agents.iter().find(|a| a.role == role)
    }
}

fn put_u32(w: &mut impl Write, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_u64(w: &mut impl Write, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_f64s(w: &mut impl Write, v: &[f64]) -> io::Result<()> {
    for x in v {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_checkpoint(w: &mut impl Write, entries: &[CheckpointEntry]) -> Result<(), CheckpointError> {
    w.write_all(&MAGIC)?;
    put_u32(w, VERSION)?;
    put_u32(w, entries.len() as u32)?;
    for e in entries {
        w.write_all(&e.alpha.to_le_bytes())?;
        put_u64(w, e.seed)?;
        put_u32(w, e.agents.len() as u32)?;
        for a in &e.agents {
            w.write_all(&[a.role.as_u8()])?;
            let sizes = a.net.sizes();
            put_u32(w, sizes.len() as u32)?;
            for s in sizes {
                put_u32(w, *s as u32)?;
            }
            put_u64(w, a.adam.t)?;
            put_f64s(w, a.net.params())?;
            put_f64s(w, &a.adam.m)?;
            put_f64s(w, &a.adam.v)?;
        }
    }
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N], CheckpointError> {
        let mut b = [0u8; N];
        self.inner.read_exact(&mut b).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => CheckpointError::Corrupt("truncated".into()),
            _ => CheckpointError::Io(e),
        })?;
        Ok(b)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, CheckpointError> {
        (0..n).map(|_| self.f64()).collect()
    }
}

/// Reads a checkpoint. Agents come back with fresh replay buffers and the
/// given hyper-parameters.
pub fn read_checkpoint(r: impl Read, params: &DqnParams) -> Result<Vec<CheckpointEntry>, CheckpointError> {
    let mut r = Reader { inner: r };
    if r.bytes::<8>()? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::VersionMismatch { found: version, expected: VERSION });
    }
    let n_entries = r.u32()?;
    let mut entries = Vec::new();
    for _ in 0..n_entries {
        let alpha = r.f64()?;
        let seed = r.u64()?;
        let n_agents = r.u32()?;
        let mut agents = Vec::new();
        for _ in 0..n_agents {
            let [role] = r.bytes::<1>()?;
            let role = AgentRole::from_u8(role)
                .ok_or_else(|| CheckpointError::Corrupt(format!("unknown agent role {role}")))?;
            let n_sizes = r.u32()? as usize;
            if !(2..=16).contains(&n_sizes) {
                return Err(CheckpointError::Corrupt(format!("{n_sizes} layer widths")));
            }
            let sizes = (0..n_sizes).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>, _>>()?;
            if sizes.iter().any(|&s| s == 0 || s > 1 << 16) {
                return Err(CheckpointError::Corrupt(format!("layer widths {sizes:?}")));
            }
            let t = r.u64()?;
            let n = param_count(&sizes);
            let weights = r.f64s(n)?;
            let m = r.f64s(n)?;
            let v = r.f64s(n)?;
            let net = Mlp::from_parts(sizes, weights).expect("sizes and params agree by construction");
            let mut agent = DqnAgent::from_net(role, net, params.clone());
            agent.adam.t = t;
            agent.adam.m = m;
            agent.adam.v = v;
            agents.push(agent);
        }
        entries.push(CheckpointEntry { alpha, seed, agents });
    }
    Ok(entries)
}

pub fn save(path: &Path, entries: &[CheckpointEntry]) -> Result<(), CheckpointError> {
    let mut w = io::BufWriter::new(std::fs::File::create(path)?);
    write_checkpoint(&mut w, entries)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path, params: &DqnParams) -> Result<Vec<CheckpointEntry>, CheckpointError> {
    let f = std::fs::File::open(path)?;
    read_checkpoint(io::BufReader::new(f), params)
}
