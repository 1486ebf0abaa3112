//! Flat binary dumps of nodal minimizers with a JSON sidecar.
//!
//! Layout (little endian):
//!
//! ```text
//! offset  size  field
//!      0     8  magic "HOMLABMN"
//!      8     4  format version (u32, currently 1)
//!     12     4  d (u32)
//!     16     4  m (u32)
//!     20     4  reserved (0)
//!     24     8  n, cells per side (u64)
//!     32     8  t, cube side (f64)
//!     40     …  (n+1)^d · m values (f64)
//! ```
//!
//! Values are row-major over the shape `[n+1 (axis d), …, n+1 (axis 1), m]`,
//! i.e. the component index varies fastest, then axis 1.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

pub const MAGIC: &[u8; 8] = b"HOMLABMN";
pub const VERSION: u32 = 1;
pub const HEADER_BYTES: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DumpHeader {
    pub d: u32,
    pub m: u32,
    pub n: u64,
    pub t: f64,
}

/// Contents of the JSON sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format: String,
    pub version: u32,
    pub header_bytes: usize,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub d: usize,
    pub m: usize,
    pub n: usize,
    pub t: f64,
    /// Lower corner of the cube.
    pub lo: Vec<f64>,
    pub h: f64,
    /// Free-form description of the problem (ξ, field, seed, energies, ...).
    pub problem: serde_json::Value,
}

fn io(e: std::io::Error) -> Error {
    Error::Io(e.to_string())
}

/// `path` with `.json` appended.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Write `values` (nodal, `m` per node, axis 1 fastest) and the sidecar.
pub fn write_minimizer(path: &Path, grid: &Grid, values: &[f64], problem: serde_json::Value) -> Result<()> {
    let (d, m, n) = (grid.dim(), grid.m(), grid.n());
    if values.len() != grid.num_nodes() * m {
        return Err(Error::Input(format!("dump expects {} values, got {}", grid.num_nodes() * m, values.len())));
    }
    let mut buf = Vec::with_capacity(HEADER_BYTES + 8 * values.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(d as u32).to_le_bytes());
    buf.extend_from_slice(&(m as u32).to_le_bytes());
    buf.extend_from_slice(&0u32.to_le_bytes());
    buf.extend_from_slice(&(n as u64).to_le_bytes());
    buf.extend_from_slice(&grid.side().to_le_bytes());
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::File::create(path).and_then(|mut f| f.write_all(&buf)).map_err(io)?;

    let mut shape = vec![n + 1; d];
    shape.push(m);
    let side = Sidecar {
        format: "homlab-minimizer".into(),
        version: VERSION,
        header_bytes: HEADER_BYTES,
        dtype: "f64-le".into(),
        shape,
        d,
        m,
        n,
        t: grid.side(),
        lo: grid.lo().to_vec(),
        h: grid.h(),
        problem,
    };
    let json = serde_json::to_string_pretty(&side).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(sidecar_path(path), json).map_err(io)
}

/// Read a dump written by [`write_minimizer`].
pub fn read_minimizer(path: &Path) -> Result<(DumpHeader, Vec<f64>)> {
    let mut buf = Vec::new();
    fs::File::open(path).and_then(|mut f| f.read_to_end(&mut buf)).map_err(io)?;
    if buf.len() < HEADER_BYTES || &buf[..8] != MAGIC {
        return Err(Error::Io(format!("{} is not a minimizer dump", path.display())));
    }
    let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap());
    let version = u32_at(8);
    if version != VERSION {
        return Err(Error::Io(format!("unsupported dump version {version}")));
    }
    let header = DumpHeader {
        d: u32_at(12),
        m: u32_at(16),
        n: u64::from_le_bytes(buf[24..32].try_into().unwrap()),
        t: f64::from_le_bytes(buf[32..40].try_into().unwrap()),
    };
    let count = (header.n as usize + 1).pow(header.d) * header.m as usize;
    if buf.len() != HEADER_BYTES + 8 * count {
        return Err(Error::Io(format!("dump body has {} bytes, header implies {}", buf.len() - HEADER_BYTES, 8 * count)));
    }
    let values = buf[HEADER_BYTES..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((header, values))
}
