//! Volume-weighted inner products and proper orthogonal decomposition.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{BoundaryConditions, Field, Rank};
use crate::mesh::Mesh;
use crate::snapshot::{Location, SnapshotRecord, SnapshotSet};

/// Eigenvalues below this fraction of the largest count as rank deficiency.
pub const RANK_TOLERANCE: f64 = 1e-12;

/// `sum_e V_e a_e . b_e`.
pub fn inner_product(a: &Field, b: &Field) -> Result<f64> {
    a.check_compatible(b)?;
    Ok(weighted_dot(a.mesh(), a.components(), a.cells(), b.cells()))
}

pub fn l2_norm(a: &Field) -> f64 {
    weighted_dot(a.mesh(), a.components(), a.cells(), a.cells()).sqrt()
}

pub(crate) fn weighted_dot(mesh: &Mesh, nc: usize, a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (c, v) in mesh.cell_volumes().iter().enumerate() {
        let mut d = 0.0;
        for k in 0..nc {
            d += a[c * nc + k] * b[c * nc + k];
        }
        s += v * d;
    }
    s
}

/// Snapshot correlation matrix `C_ij = <u_i, u_j>`.
pub fn correlation_matrix(snapshots: &SnapshotSet) -> Result<DMatrix<f64>> {
    let nc = match snapshots.location() {
        Location::Cells(r) => r.components(),
        Location::Faces => {
            return Err(Error::Mismatch("correlation of face data is not defined".into()))
        }
    };
    if snapshots.is_empty() {
        return Err(Error::InvalidInput("empty snapshot set".into()));
    }
    let mesh = snapshots.mesh().clone();
    let recs = snapshots.records();
    Ok(correlation_of(&mesh, nc, recs.iter().map(|r| r.values.as_slice()).collect()))
}

fn correlation_of(mesh: &Mesh, nc: usize, data: Vec<&[f64]>) -> DMatrix<f64> {
    let n = data.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (i..n).map(|j| weighted_dot(mesh, nc, data[i], data[j])).collect())
        .collect();
    let mut c = DMatrix::zeros(n, n);
    for (i, row) in rows.into_iter().enumerate() {
        for (k, v) in row.into_iter().enumerate() {
            c[(i, i + k)] = v;
            c[(i + k, i)] = v;
        }
    }
    c
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Provenance {
    Velocity,
    Pressure,
    Supremizer,
    EnrichedVelocity,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Velocity => "velocity",
            Provenance::Pressure => "pressure",
            Provenance::Supremizer => "supremizer",
            Provenance::EnrichedVelocity => "enriched-velocity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "velocity" => Some(Provenance::Velocity),
            "pressure" => Some(Provenance::Pressure),
            "supremizer" => Some(Provenance::Supremizer),
            "enriched-velocity" => Some(Provenance::EnrichedVelocity),
            _ => None,
        }
    }
}

/// A modal basis with its spectrum.
///
/// For enriched bases the first `primary_count` modes are the POD velocity
/// modes and the rest are supremizers; `eigenvalues` and `cumulative_energy`
/// then describe the velocity block.
#[derive(Clone, Debug)]
pub struct PodBasis {
    pub provenance: Provenance,
    pub modes: Vec<Field>,
    /// Full spectrum of the correlation matrix, descending.
    pub eigenvalues: Vec<f64>,
    pub cumulative_energy: Vec<f64>,
    /// `modes[i] = sum_j weights[(j, i)] * snapshot_j`, when known.
    pub weights: Option<DMatrix<f64>>,
    pub primary_count: usize,
}

impl PodBasis {
    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn rank(&self) -> Rank {
        self.modes[0].rank()
    }

    pub fn mesh(&self) -> &Mesh {
        self.modes[0].mesh()
    }

    /// The first `n` modes (spectrum kept).
    pub fn truncated(&self, n: usize) -> Result<PodBasis> {
        if n == 0 || n > self.modes.len() {
            return Err(Error::InvalidInput(format!(
                "cannot keep {n} of {} modes",
                self.modes.len()
            )));
        }
        Ok(PodBasis {
            provenance: self.provenance,
            modes: self.modes[..n].to_vec(),
            eigenvalues: self.eigenvalues.clone(),
            cumulative_energy: self.cumulative_energy.clone(),
            weights: self.weights.as_ref().map(|w| w.columns(0, n).into_owned()),
            primary_count: self.primary_count.min(n),
        })
    }

    /// Gram matrix `<phi_i, phi_j>`.
    pub fn gram(&self) -> DMatrix<f64> {
        let n = self.modes.len();
        let mut g = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = inner_product(&self.modes[i], &self.modes[j]).unwrap();
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        g
    }

    /// Applies the snapshot weights to companion data recorded alongside the
    /// snapshots (for example the face fluxes of velocity snapshots), giving
    /// the matching data of each mode.
    pub fn combine_companion(&self, companion: &SnapshotSet, offset: Option<&[f64]>) -> Result<Vec<Vec<f64>>> {
        let w = self
            .weights
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("basis carries no snapshot weights".into()))?;
        if w.nrows() != companion.len() {
            return Err(Error::Mismatch(format!(
                "basis built from {} snapshots, companion set has {}",
                w.nrows(),
                companion.len()
            )));
        }
        let width = companion.record(0).values.len();
        Ok((0..w.ncols())
            .map(|i| {
                let mut out = vec![0.0; width];
                for (j, r) in companion.records().iter().enumerate() {
                    let c = w[(j, i)];
                    for (o, (v, off)) in out.iter_mut().zip(
                        r.values
                            .iter()
                            .zip(offset.into_iter().flatten().chain(std::iter::repeat(&0.0))),
                    ) {
                        *o += c * (v - off);
                    }
                }
                out
            })
            .collect())
    }

    /// Stores the modes as a snapshot set, one record per mode.
    pub fn to_snapshot_set(&self) -> Result<SnapshotSet> {
        let mesh = self.modes[0].mesh_arc().clone();
        let records = self
            .modes
            .iter()
            .enumerate()
            .map(|(i, m)| SnapshotRecord {
                parameter: 0.0,
                time: i as f64,
                values: m.cells().to_vec(),
            })
            .collect::<Vec<_>>();
        let n = records.len();
        SnapshotSet::new(mesh, Location::Cells(self.rank()), 1, n, records)
    }

    pub fn from_snapshot_set(
        set: &SnapshotSet,
        bcs: &BoundaryConditions,
        provenance: Provenance,
        eigenvalues: Vec<f64>,
        primary_count: usize,
    ) -> Result<PodBasis> {
        let modes = set.fields(bcs)?;
        Ok(PodBasis {
            provenance,
            cumulative_energy: cumulative(&eigenvalues),
            eigenvalues,
            modes,
            weights: None,
            primary_count,
        })
    }
}

pub(crate) fn cumulative(eigenvalues: &[f64]) -> Vec<f64> {
    let total: f64 = eigenvalues.iter().sum();
    let mut acc = 0.0;
    let mut out: Vec<f64> = eigenvalues
        .iter()
        .map(|l| {
            acc += l;
            if total > 0.0 {
                (acc / total).min(1.0)
            } else {
                1.0
            }
        })
        .collect();
    if let Some(last) = out.last_mut() {
        *last = 1.0;
    }
    out
}

/// POD of the given snapshot data. `bcs` supplies the boundary values of the
/// modes and must be homogeneous wherever the snapshots share fixed data.
pub fn compute_pod(
    snapshots: &SnapshotSet,
    n_modes: usize,
    bcs: &BoundaryConditions,
    provenance: Provenance,
) -> Result<PodBasis> {
    let rank = snapshots
        .rank()
        .ok_or_else(|| Error::Mismatch("POD needs cell data".into()))?;
    if rank != bcs.rank() {
        return Err(Error::Mismatch("boundary condition rank differs from snapshot rank".into()));
    }
    let data: Vec<&[f64]> = snapshots.records().iter().map(|r| r.values.as_slice()).collect();
    pod_of(snapshots.mesh(), rank, data, n_modes, bcs, provenance)
}

pub(crate) fn pod_of(
    mesh: &std::sync::Arc<Mesh>,
    rank: Rank,
    data: Vec<&[f64]>,
    n_modes: usize,
    bcs: &BoundaryConditions,
    provenance: Provenance,
) -> Result<PodBasis> {
    if n_modes == 0 {
        return Err(Error::InvalidInput("at least one mode is required".into()));
    }
    if data.is_empty() {
        return Err(Error::InvalidInput("empty snapshot set".into()));
    }
    let nc = rank.components();
    let ns = data.len();
    let c = correlation_of(mesh, nc, data.clone());
    let eig = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..ns).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let lmax = eigenvalues[0];
    let numerical_rank = eigenvalues
        .iter()
        .take_while(|&&l| lmax > 0.0 && l > RANK_TOLERANCE * lmax)
        .count();
    if n_modes > numerical_rank {
        return Err(Error::RankDeficient {
            requested: n_modes,
            rank: numerical_rank,
        });
    }

    let width = data[0].len();
    let mut weights = DMatrix::zeros(ns, n_modes);
    let mut modes: Vec<Vec<f64>> = Vec::with_capacity(n_modes);
    for (i, &k) in order.iter().take(n_modes).enumerate() {
        let q = eig.eigenvectors.column(k);
        let mut m = vec![0.0; width];
        for (j, snap) in data.iter().enumerate() {
            let w = q[j];
            weights[(j, i)] = w;
            for (o, v) in m.iter_mut().zip(snap.iter()) {
                *o += w * v;
            }
        }
        modes.push(m);
    }
    // Two passes of modified Gram-Schmidt remove the round-off coupling of
    // weakly energetic modes; the spanned space is unchanged.
    for _ in 0..2 {
        for i in 0..n_modes {
            for j in 0..i {
                let (head, tail) = modes.split_at_mut(i);
                let proj = weighted_dot(mesh, nc, &tail[0], &head[j]);
                for (a, b) in tail[0].iter_mut().zip(head[j].iter()) {
                    *a -= proj * b;
                }
                for s in 0..ns {
                    let wj = weights[(s, j)];
                    weights[(s, i)] -= proj * wj;
                }
            }
            let norm = weighted_dot(mesh, nc, &modes[i], &modes[i]).sqrt();
            modes[i].iter_mut().for_each(|v| *v /= norm);
            for s in 0..ns {
                weights[(s, i)] /= norm;
            }
        }
    }
    for i in 0..n_modes {
        let big = modes[i]
            .iter()
            .fold((0.0f64, 0.0f64), |(m, s), &v| if v.abs() > m { (v.abs(), v) } else { (m, s) })
            .1;
        if big < 0.0 {
            modes[i].iter_mut().for_each(|v| *v = -*v);
            for s in 0..ns {
                weights[(s, i)] = -weights[(s, i)];
            }
        }
    }
    let modes = modes
        .into_iter()
        .map(|m| Field::new(mesh.clone(), m, bcs))
        .collect::<Result<Vec<_>>>()?;
    Ok(PodBasis {
        provenance,
        cumulative_energy: cumulative(&eigenvalues),
        eigenvalues,
        modes,
        weights: Some(weights),
        primary_count: n_modes,
    })
}

/// Cell-wise mean of all records.
pub fn snapshot_mean(snapshots: &SnapshotSet) -> Result<Vec<f64>> {
    if snapshots.is_empty() {
        return Err(Error::InvalidInput("empty snapshot set".into()));
    }
    let n = snapshots.len() as f64;
    let mut mean = vec![0.0; snapshots.record(0).values.len()];
    for r in snapshots.records() {
        for (m, v) in mean.iter_mut().zip(&r.values) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(mean)
}

/// The same records with `offset` subtracted from each.
pub fn subtract(snapshots: &SnapshotSet, offset: &[f64]) -> Result<SnapshotSet> {
    if snapshots.records().iter().any(|r| r.values.len() != offset.len()) {
        return Err(Error::Mismatch("offset length differs from the records".into()));
    }
    let records = snapshots
        .records()
        .iter()
        .map(|r| SnapshotRecord {
            parameter: r.parameter,
            time: r.time,
            values: r.values.iter().zip(offset).map(|(v, o)| v - o).collect(),
        })
        .collect();
    SnapshotSet::new(
        snapshots.mesh().clone(),
        snapshots.location(),
        snapshots.n_params(),
        snapshots.n_times(),
        records,
    )
}

/// Squared training error `sum_j ||u_j - P_k u_j||^2` of projecting every
/// snapshot onto the first `k` modes.
pub fn projection_error(snapshots: &SnapshotSet, basis: &PodBasis, k: usize) -> Result<f64> {
    let mesh = snapshots.mesh();
    let nc = snapshots
        .rank()
        .ok_or_else(|| Error::Mismatch("projection needs cell data".into()))?
        .components();
    let mut total = 0.0;
    for r in snapshots.records() {
        let mut res = r.values.clone();
        for m in &basis.modes[..k] {
            let a = weighted_dot(mesh, nc, &r.values, m.cells());
            for (x, y) in res.iter_mut().zip(m.cells()) {
                *x -= a * y;
            }
        }
        total += weighted_dot(mesh, nc, &res, &res);
    }
    Ok(total)
}
