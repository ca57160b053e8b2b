//! Binary snapshot files.
//!
//! Layout, all little-endian: magic `RDFS`, format version `u32`, dimension
//! `n: u32`, `n` cell counts `u64`, `n` spacings `f64`, time `f64`, then the
//! payload as `f64` values in row-major cell order. Metrics store the upper
//! triangle `g_ij, i <= j` per cell; scalars store one value per cell. The
//! kind is recovered from the payload length.

use std::io::{Read, Write};
use std::path::Path;

use rml_core::{Grid, MetricField, ScalarField};

pub const MAGIC: &[u8; 4] = b"RDFS";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum SnapshotError {
    #[error("not a snapshot file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported snapshot version {0} (this build reads version {VERSION})")]
    UnsupportedVersion(u32),
    #[error("truncated snapshot: {0}")]
    Truncated(String),
    #[error("invalid snapshot header: {0}")]
    Header(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Metric(MetricField),
    Scalar(ScalarField),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub payload: Payload,
}

impl Snapshot {
    pub fn metric(t: f64, g: MetricField) -> Self {
        Self {
            t,
            payload: Payload::Metric(g),
        }
    }

    pub fn grid(&self) -> &Grid {
        match &self.payload {
            Payload::Metric(g) => g.grid(),
            Payload::Scalar(s) => s.grid(),
        }
    }

    pub fn into_metric(self) -> Option<MetricField> {
        match self.payload {
            Payload::Metric(g) => Some(g),
            Payload::Scalar(_) => None,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let grid = self.grid();
        let n = grid.n();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(n as u32).to_le_bytes());
        for d in grid.dims() {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for h in grid.spacing() {
            out.extend_from_slice(&h.to_le_bytes());
        }
        out.extend_from_slice(&self.t.to_le_bytes());
        match &self.payload {
            Payload::Metric(g) => {
                for c in 0..grid.cell_count() {
                    let m = g.at(c);
                    for i in 0..n {
                        for j in i..n {
                            out.extend_from_slice(&m[i][j].to_le_bytes());
                        }
                    }
                }
            }
            Payload::Scalar(s) => {
                for v in s.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SnapshotError> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic, "magic")?;
        if &magic != MAGIC {
            return Err(SnapshotError::BadMagic);
        }
        let version = read_u32(&mut r, "version")?;
        if version != VERSION {
            return Err(SnapshotError::UnsupportedVersion(version));
        }
        let n = read_u32(&mut r, "dimension")? as usize;
        if !(1..=3).contains(&n) {
            return Err(SnapshotError::Header(format!("dimension {n}")));
        }
        let mut dims = Vec::with_capacity(n);
        for _ in 0..n {
            dims.push(read_u64(&mut r, "dims")? as usize);
        }
        let mut spacing = Vec::with_capacity(n);
        for _ in 0..n {
            spacing.push(read_f64(&mut r, "spacing")?);
        }
        let t = read_f64(&mut r, "time")?;
        let grid =
            Grid::new(n, &dims, &spacing).map_err(|e| SnapshotError::Header(e.to_string()))?;
        if !r.len().is_multiple_of(8) {
            return Err(SnapshotError::Truncated(format!(
                "payload of {} bytes is not a whole number of f64 values",
                r.len()
            )));
        }
        let values: Vec<f64> = r
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let cells = grid.cell_count();
        let tri = n * (n + 1) / 2;
        let payload = if values.len() == cells * tri {
            let mut full = vec![0.0; cells * n * n];
            for c in 0..cells {
                let mut k = c * tri;
                for i in 0..n {
                    for j in i..n {
                        full[(c * n + i) * n + j] = values[k];
                        full[(c * n + j) * n + i] = values[k];
                        k += 1;
                    }
                }
            }
            Payload::Metric(
                MetricField::from_components(grid, full)
                    .map_err(|e| SnapshotError::Header(e.to_string()))?,
            )
        } else if values.len() == cells {
            Payload::Scalar(
                ScalarField::from_data(grid, values)
                    .map_err(|e| SnapshotError::Header(e.to_string()))?,
            )
        } else {
            return Err(SnapshotError::Truncated(format!(
                "{} values match neither a metric ({}) nor a scalar ({cells}) payload",
                values.len(),
                cells * tri
            )));
        };
        Ok(Self { t, payload })
    }

    pub fn write(&self, path: &Path) -> Result<(), SnapshotError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, SnapshotError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8], what: &str) -> Result<(), SnapshotError> {
    if r.len() < buf.len() {
        return Err(SnapshotError::Truncated(format!(
            "header ends before {what}"
        )));
    }
    buf.copy_from_slice(&r[..buf.len()]);
    *r = &r[buf.len()..];
    Ok(())
}

fn read_u32(r: &mut &[u8], what: &str) -> Result<u32, SnapshotError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut &[u8], what: &str) -> Result<u64, SnapshotError> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut &[u8], what: &str) -> Result<f64, SnapshotError> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(f64::from_le_bytes(b))
}
