//! Ordered snapshot collections and their binary file format.
//!
//! Layout (all little-endian):
//!
//! ```text
//! magic   8 bytes  "ROMSNAP1"
//! rank    u64      1 = scalar, 2 = vector, 0 = face flux (one value per face)
//! n_fv    u64      cells, or faces when rank is 0
//! n_par   u64      number of parameter blocks
//! n_time  u64      records per block
//! then n_par * n_time records of
//!   mu f64, t f64, values f64 * (max(rank,1) * n_fv)
//! ```

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::{BoundaryConditions, Field, Rank};
use crate::mesh::Mesh;

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"ROMSNAP1";

/// Where snapshot values live.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Location {
    Cells(Rank),
    /// One scalar per face, e.g. the volumetric flux.
    Faces,
}

impl Location {
    fn code(self) -> u64 {
        match self {
            Location::Cells(Rank::Scalar) => 1,
            Location::Cells(Rank::Vector) => 2,
            Location::Faces => 0,
        }
    }

    fn from_code(code: u64) -> Option<Self> {
        match code {
            0 => Some(Location::Faces),
            1 => Some(Location::Cells(Rank::Scalar)),
            2 => Some(Location::Cells(Rank::Vector)),
            _ => None,
        }
    }

    fn entities(self, mesh: &Mesh) -> usize {
        match self {
            Location::Faces => mesh.n_faces(),
            Location::Cells(_) => mesh.n_cells(),
        }
    }

    pub fn values_per_record(self, mesh: &Mesh) -> usize {
        match self {
            Location::Faces => mesh.n_faces(),
            Location::Cells(r) => mesh.n_cells() * r.components(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotRecord {
    pub parameter: f64,
    pub time: f64,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct SnapshotSet {
    mesh: Arc<Mesh>,
    location: Location,
    n_params: usize,
    n_times: usize,
    records: Vec<SnapshotRecord>,
}

impl PartialEq for SnapshotSet {
    fn eq(&self, other: &Self) -> bool {
        self.location == other.location
            && self.n_params == other.n_params
            && self.n_times == other.n_times
            && self.records == other.records
            && crate::field::same_mesh(&self.mesh, &other.mesh)
    }
}

impl SnapshotSet {
    pub fn new(
        mesh: Arc<Mesh>,
        location: Location,
        n_params: usize,
        n_times: usize,
        records: Vec<SnapshotRecord>,
    ) -> Result<Self> {
        if records.len() != n_params * n_times {
            return Err(Error::Mismatch(format!(
                "{} records for {} parameters x {} times",
                records.len(),
                n_params,
                n_times
            )));
        }
        let width = location.values_per_record(&mesh);
        for (i, r) in records.iter().enumerate() {
            if r.values.len() != width {
                return Err(Error::Mismatch(format!(
                    "record {i} has {} values, expected {width}",
                    r.values.len()
                )));
            }
        }
        for block in records.chunks(n_times.max(1)) {
            for w in block.windows(2) {
                if w[1].parameter != w[0].parameter {
                    return Err(Error::InvalidInput(
                        "records must be grouped by parameter (parameter-major order)".into(),
                    ));
                }
                if w[1].time <= w[0].time {
                    return Err(Error::InvalidInput(format!(
                        "snapshot times must increase within a parameter block ({} after {})",
                        w[1].time, w[0].time
                    )));
                }
            }
        }
        Ok(SnapshotSet {
            mesh,
            location,
            n_params,
            n_times,
            records,
        })
    }

    /// Concatenates single- or multi-parameter sets in the given order.
    pub fn concat(sets: Vec<SnapshotSet>) -> Result<Self> {
        let first = sets
            .first()
            .ok_or_else(|| Error::InvalidInput("no snapshot sets to merge".into()))?;
        let mesh = first.mesh.clone();
        let location = first.location;
        let n_times = first.n_times;
        let mut n_params = 0;
        let mut records = Vec::new();
        for s in sets {
            if s.location != location || s.n_times != n_times || !crate::field::same_mesh(&s.mesh, &mesh) {
                return Err(Error::Mismatch("snapshot sets have different layouts".into()));
            }
            n_params += s.n_params;
            records.extend(s.records);
        }
        Self::new(mesh, location, n_params, n_times, records)
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn location(&self) -> Location {
        self.location
    }

    pub fn rank(&self) -> Option<Rank> {
        match self.location {
            Location::Cells(r) => Some(r),
            Location::Faces => None,
        }
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[SnapshotRecord] {
        &self.records
    }

    pub fn record(&self, i: usize) -> &SnapshotRecord {
        &self.records[i]
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.time).collect()
    }

    /// Parameter value of each block.
    pub fn parameters(&self) -> Vec<f64> {
        self.records
            .iter()
            .step_by(self.n_times.max(1))
            .map(|r| r.parameter)
            .collect()
    }

    /// The records of parameter block `k`.
    pub fn block(&self, k: usize) -> Result<SnapshotSet> {
        if k >= self.n_params {
            return Err(Error::InvalidInput(format!("no parameter block {k}")));
        }
        let recs = self.records[k * self.n_times..(k + 1) * self.n_times].to_vec();
        Self::new(self.mesh.clone(), self.location, 1, self.n_times, recs)
    }

    /// Record `i` as a field with boundary values from `bcs`.
    pub fn field(&self, i: usize, bcs: &BoundaryConditions) -> Result<Field> {
        match self.location {
            Location::Cells(r) if r == bcs.rank() => {
                Field::new(self.mesh.clone(), self.records[i].values.clone(), bcs)
            }
            _ => Err(Error::Mismatch("snapshot location does not match boundary conditions".into())),
        }
    }

    pub fn fields(&self, bcs: &BoundaryConditions) -> Result<Vec<Field>> {
        (0..self.len()).map(|i| self.field(i, bcs)).collect()
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(SNAPSHOT_MAGIC)?;
        for v in [
            self.location.code(),
            self.location.entities(&self.mesh) as u64,
            self.n_params as u64,
            self.n_times as u64,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        let mut buf = Vec::new();
        for r in &self.records {
            buf.clear();
            buf.extend_from_slice(&r.parameter.to_le_bytes());
            buf.extend_from_slice(&r.time.to_le_bytes());
            for v in &r.values {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read, mesh: Arc<Mesh>) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Format("snapshot file shorter than its header".into()))?;
        if &magic != SNAPSHOT_MAGIC {
            return Err(Error::Format("not a snapshot file (bad magic)".into()));
        }
        let mut header = [0u64; 4];
        for h in header.iter_mut() {
            *h = read_u64(r).map_err(|_| Error::Format("truncated snapshot header".into()))?;
        }
        let location = Location::from_code(header[0])
            .ok_or_else(|| Error::Format(format!("unknown rank code {}", header[0])))?;
        let n_fv = header[1] as usize;
        if n_fv != location.entities(&mesh) {
            return Err(Error::Mismatch(format!(
                "snapshot file is for {n_fv} entities, mesh has {}",
                location.entities(&mesh)
            )));
        }
        let (n_params, n_times) = (header[2] as usize, header[3] as usize);
        let width = location.values_per_record(&mesh);
        let mut records = Vec::with_capacity(n_params * n_times);
        let mut buf = vec![0u8; 8 * (2 + width)];
        for i in 0..n_params * n_times {
            r.read_exact(&mut buf)
                .map_err(|_| Error::Format(format!("snapshot file truncated in record {i}")))?;
            let mut vals = buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
            let parameter = vals.next().unwrap();
            let time = vals.next().unwrap();
            records.push(SnapshotRecord {
                parameter,
                time,
                values: vals.collect(),
            });
        }
        let mut extra = [0u8; 1];
        if r.read(&mut extra)? != 0 {
            return Err(Error::Format("trailing bytes after the last snapshot record".into()));
        }
        Self::new(mesh, location, n_params, n_times, records)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, mesh: Arc<Mesh>) -> Result<Self> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut r, mesh)
    }
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
