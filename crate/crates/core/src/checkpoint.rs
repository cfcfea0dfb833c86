//! Parameter checkpoints.
//!
//! Binary layout, little-endian:
//!
//! ```text
//! "MDHC" | u32 version | u8 kind | [u8; 32] topology hash | u64 count | count x f64
//! ```
//!
//! The topology itself is stored as JSON next to the checkpoint
//! (`<path>.topology.json`).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::FlatTopology;
use crate::error::{Error, Result};
use crate::head::{build_topology, HeadTopology};
use crate::ontology::CondensedHierarchy;

pub const MAGIC: &[u8; 4] = b"MDHC";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum HeadKind {
    Gated = 0,
    Flat = 1,
}

impl HeadKind {
    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(Self::Gated),
            1 => Ok(Self::Flat),
            _ => Err(Error::Format(format!("unknown head kind {b}"))),
        }
    }
}

/// Either head, as stored in the sidecar JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "topology", rename_all = "snake_case")]
pub enum Topology {
    Gated(HeadTopology),
    Flat(FlatTopology),
}

impl Topology {
    pub fn kind(&self) -> HeadKind {
        match self {
            Self::Gated(_) => HeadKind::Gated,
            Self::Flat(_) => HeadKind::Flat,
        }
    }

    pub fn hash(&self) -> [u8; 32] {
        match self {
            Self::Gated(t) => t.hash(),
            Self::Flat(t) => t.hash(),
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            Self::Gated(t) => t.num_params(),
            Self::Flat(t) => t.num_params(),
        }
    }

    pub fn d0(&self) -> usize {
        match self {
            Self::Gated(t) => t.d0,
            Self::Flat(t) => t.d0,
        }
    }

    /// Rebuilds the same kind of head from `h` and fails unless it hashes
    /// identically to `self`.
    pub fn check_hierarchy(&self, h: &CondensedHierarchy) -> Result<()> {
        let rebuilt = match self {
            Self::Gated(t) => Self::Gated(build_topology(h, t.d0, t.mu)?),
            Self::Flat(t) => Self::Flat(FlatTopology::new(h, t.d0)?),
        };
        if rebuilt.hash() != self.hash() {
            return Err(Error::TopologyMismatch);
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("topology serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        // Round-trip the gated head through its own loader so the parameter
        // layout is rebuilt and validated.
        match serde_json::from_str::<Self>(text)? {
            Self::Gated(t) => Ok(Self::Gated(HeadTopology::from_json(&serde_json::to_string(&t)?)?)),
            flat => Ok(flat),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: HeadKind,
    pub hash: [u8; 32],
    pub params: Vec<f64>,
}

pub fn write_checkpoint<W: Write>(mut w: W, ck: &Checkpoint) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[ck.kind as u8])?;
    w.write_all(&ck.hash)?;
    w.write_all(&(ck.params.len() as u64).to_le_bytes())?;
    for v in &ck.params {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let mut kind = [0u8; 1];
    r.read_exact(&mut kind)?;
    let kind = HeadKind::from_byte(kind[0])?;
    let mut hash = [0u8; 32];
    r.read_exact(&mut hash)?;
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let count = u64::from_le_bytes(b8) as usize;
    let mut params = Vec::with_capacity(count.min(1 << 24));
    for _ in 0..count {
        r.read_exact(&mut b8)?;
        params.push(f64::from_le_bytes(b8));
    }
    if r.read(&mut b8)? != 0 {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Ok(Checkpoint { kind, hash, params })
}

pub fn topology_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".topology.json");
    PathBuf::from(s)
}

/// Writes the checkpoint and its topology sidecar.
pub fn save(path: &Path, topology: &Topology, params: &[f64]) -> Result<()> {
    if params.len() != topology.num_params() {
        return Err(Error::ShapeMismatch { expected: topology.num_params(), found: params.len() });
    }
    let ck = Checkpoint { kind: topology.kind(), hash: topology.hash(), params: params.to_vec() };
    write_checkpoint(BufWriter::new(File::create(path)?), &ck)?;
    std::fs::write(topology_path(path), topology.to_json())?;
    Ok(())
}

/// Reads a checkpoint and its sidecar, checking that they agree.
pub fn load(path: &Path) -> Result<(Topology, Vec<f64>)> {
    let ck = read_checkpoint(BufReader::new(File::open(path)?))?;
    let topology = Topology::from_json(&std::fs::read_to_string(topology_path(path))?)?;
    if topology.kind() != ck.kind || topology.hash() != ck.hash {
        return Err(Error::TopologyMismatch);
    }
    if ck.params.len() != topology.num_params() {
        return Err(Error::ShapeMismatch { expected: topology.num_params(), found: ck.params.len() });
    }
    Ok((topology, ck.params))
}
