//! Supremizer fields and velocity-space enrichment.
//!
//! The supremizer of a pressure field `p` solves `laplacian(s) = -grad(p)`
//! with `s = 0` on the whole boundary.

use rayon::prelude::*;

use crate::assemble::{laplacian_operator, AffineOperator};
use crate::error::{Error, Result};
use crate::field::{BoundaryConditions, Field, Rank};
use crate::mesh::Mesh;
use crate::ops::{divergence_flux, gauss_gradient, Form};
use crate::pod::{inner_product, pod_of, PodBasis, Provenance};
use crate::snapshot::SnapshotSet;
use crate::sparse::{bicgstab, max_norm, pcg, CsrMatrix, Preconditioner, Tolerance};

/// Relative residual reached by every supremizer solve.
pub const SUPREMIZER_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Enrichment {
    /// One supremizer per pressure mode.
    Exact,
    /// POD of the supremizers of every pressure snapshot.
    Approximate,
}

impl Enrichment {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "exact" => Some(Enrichment::Exact),
            "approximate" => Some(Enrichment::Approximate),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Enrichment::Exact => "exact",
            Enrichment::Approximate => "approximate",
        }
    }
}

/// Reusable solver for the supremizer problem on one mesh.
#[derive(Clone, Debug)]
pub struct SupremizerSolver {
    /// Negated vector Laplacian with homogeneous Dirichlet data.
    matrix: CsrMatrix,
    symmetric: bool,
    bcs: BoundaryConditions,
}

/// A supremizer together with the coupling `<p, div s>` of its generator.
#[derive(Clone, Debug)]
pub struct Supremizer {
    pub field: Field,
    pub coupling: f64,
    pub iterations: usize,
    pub residual: f64,
}

impl SupremizerSolver {
    pub fn new(mesh: &Mesh) -> Result<Self> {
        let bcs = BoundaryConditions::all_zero_value(mesh, Rank::Vector)?;
        let AffineOperator { mut matrix, .. } = laplacian_operator(mesh, &bcs, 1.0);
        matrix.values_mut().iter_mut().for_each(|v| *v = -*v);
        Ok(Self {
            matrix,
            symmetric: mesh.is_orthogonal(),
            bcs,
        })
    }

    pub fn boundary_conditions(&self) -> &BoundaryConditions {
        &self.bcs
    }

    /// Solves for the supremizer of a scalar field; the field's stored
    /// boundary values enter the pressure gradient.
    pub fn solve(&self, pressure: &Field) -> Result<Supremizer> {
        if pressure.rank() != Rank::Scalar {
            return Err(Error::Mismatch("supremizers are generated by scalar fields".into()));
        }
        let mesh = pressure.mesh_arc().clone();
        let rhs = gauss_gradient(pressure, Form::Extensive);
        let mut x = vec![0.0; rhs.len()];
        let tol = Tolerance::relative(SUPREMIZER_TOLERANCE);
        let stats = if max_norm(&rhs) == 0.0 {
            None
        } else if self.symmetric {
            Some(pcg(&self.matrix, &rhs, &mut x, Preconditioner::Dilu, tol)?)
        } else {
            Some(bicgstab(&self.matrix, &rhs, &mut x, Preconditioner::Dilu, tol)?)
        };
        let field = Field::new(mesh, x, &self.bcs)?;
        let div = divergence_flux(&field, Form::Intensive)?;
        let mut coupling = 0.0;
        for c in 0..div.len() {
            coupling += pressure.mesh().cell_volumes()[c] * pressure.cells()[c] * div[c];
        }
        Ok(Supremizer {
            field,
            coupling,
            iterations: stats.map_or(0, |s| s.iterations),
            residual: stats.map_or(0.0, |s| s.residual),
        })
    }

    /// Relative max-norm residual of the discrete supremizer equation.
    pub fn residual(&self, pressure: &Field, supremizer: &Field) -> f64 {
        let rhs = gauss_gradient(pressure, Form::Extensive);
        let ax = self.matrix.mul_vec(supremizer.cells());
        let r: Vec<f64> = ax.iter().zip(&rhs).map(|(a, b)| a - b).collect();
        let scale = max_norm(&rhs);
        if scale == 0.0 {
            max_norm(&r)
        } else {
            max_norm(&r) / scale
        }
    }
}

pub fn solve_supremizer(pressure: &Field) -> Result<Supremizer> {
    SupremizerSolver::new(pressure.mesh())?.solve(pressure)
}

fn degenerate(fields: &[Field]) -> bool {
    fields.iter().all(|f| f.max_abs() == 0.0)
}

/// Supremizers of every pressure mode, each scaled to unit norm.
pub fn exact_supremizers(pressure: &PodBasis) -> Result<PodBasis> {
    let solver = SupremizerSolver::new(pressure.mesh())?;
    let sups = pressure
        .modes
        .par_iter()
        .map(|m| solver.solve(m))
        .collect::<Result<Vec<_>>>()?;
    let mut modes: Vec<Field> = sups.into_iter().map(|s| s.field).collect();
    if degenerate(&modes) {
        return Err(Error::DegenerateSupremizers);
    }
    for m in &mut modes {
        let norm = inner_product(m, m)?.sqrt();
        if norm == 0.0 {
            return Err(Error::DegenerateSupremizers);
        }
        m.scale(1.0 / norm);
    }
    let n = modes.len();
    Ok(PodBasis {
        provenance: Provenance::Supremizer,
        modes,
        eigenvalues: vec![1.0; n],
        cumulative_energy: (1..=n).map(|k| k as f64 / n as f64).collect(),
        weights: None,
        primary_count: n,
    })
}

/// Supremizers of every pressure snapshot, in snapshot order.
pub fn supremizer_snapshots(pressure: &SnapshotSet, pressure_bcs: &BoundaryConditions) -> Result<Vec<Field>> {
    let solver = SupremizerSolver::new(pressure.mesh())?;
    (0..pressure.len())
        .into_par_iter()
        .map(|i| solver.solve(&pressure.field(i, pressure_bcs)?).map(|s| s.field))
        .collect()
}

/// POD of the supremizers of every pressure snapshot.
pub fn approximate_supremizers(
    pressure: &SnapshotSet,
    pressure_bcs: &BoundaryConditions,
    n_modes: usize,
) -> Result<PodBasis> {
    if n_modes > pressure.len() {
        return Err(Error::InvalidInput(format!(
            "{n_modes} supremizer modes requested from {} snapshots",
            pressure.len()
        )));
    }
    let fields = supremizer_snapshots(pressure, pressure_bcs)?;
    if degenerate(&fields) {
        return Err(Error::DegenerateSupremizers);
    }
    let bcs = BoundaryConditions::all_zero_value(pressure.mesh(), Rank::Vector)?;
    let data: Vec<&[f64]> = fields.iter().map(|f| f.cells()).collect();
    pod_of(pressure.mesh(), Rank::Vector, data, n_modes, &bcs, Provenance::Supremizer)
}

/// Appends a supremizer block to a velocity basis.
pub fn enrich(velocity: &PodBasis, supremizers: &PodBasis) -> Result<PodBasis> {
    if velocity.provenance != Provenance::Velocity {
        return Err(Error::InvalidInput(format!(
            "cannot enrich a {} basis",
            velocity.provenance.as_str()
        )));
    }
    if !velocity.modes[0].is_compatible(&supremizers.modes[0]) {
        return Err(Error::Mismatch("supremizers live on a different mesh or rank".into()));
    }
    let mut modes = velocity.modes.clone();
    modes.extend(supremizers.modes.iter().cloned());
    Ok(PodBasis {
        provenance: Provenance::EnrichedVelocity,
        modes,
        eigenvalues: velocity.eigenvalues.clone(),
        cumulative_energy: velocity.cumulative_energy.clone(),
        weights: None,
        primary_count: velocity.len(),
    })
}

/// Enriches `velocity` from pressure modes (exact) or pressure snapshots
/// (approximate, `n_supremizers` modes).
pub fn enrich_velocity_space(
    velocity: &PodBasis,
    pressure_modes: &PodBasis,
    pressure_snapshots: Option<(&SnapshotSet, &BoundaryConditions)>,
    strategy: Enrichment,
    n_supremizers: usize,
) -> Result<PodBasis> {
    let sups = match strategy {
        Enrichment::Exact => exact_supremizers(&pressure_modes.truncated(n_supremizers.min(pressure_modes.len()))?)?,
        Enrichment::Approximate => {
            let (set, bcs) = pressure_snapshots
                .ok_or_else(|| Error::InvalidInput("approximate enrichment needs pressure snapshots".into()))?;
            approximate_supremizers(set, bcs, n_supremizers)?
        }
    };
    enrich(velocity, &sups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::BcKind;
    use crate::mesh::generate_cavity_mesh;
    use std::sync::Arc;

    fn mesh(n: usize) -> Arc<Mesh> {
        Arc::new(generate_cavity_mesh(n, 1.0).unwrap())
    }

    #[test]
    fn constant_pressure_has_zero_supremizer() {
        let m = mesh(8);
        let p = Field::uniform(m.clone(), &[3.0]).unwrap();
        let s = solve_supremizer(&p).unwrap();
        assert_eq!(s.field.max_abs(), 0.0);
    }

    #[test]
    fn linear_pressure_round_trip() {
        let m = mesh(16);
        let p = Field::from_fn(m.clone(), Rank::Scalar, |x| vec![x[0]]);
        let solver = SupremizerSolver::new(&m).unwrap();
        let s = solver.solve(&p).unwrap();
        assert!(solver.residual(&p, &s.field) <= 1e-8);
        // Applying the discrete Laplacian recovers -(1, 0) in every cell.
        let lap = crate::ops::laplacian(&s.field, 1.0, Form::Intensive).unwrap();
        for c in 0..m.n_cells() {
            assert!((lap[2 * c] + 1.0).abs() < 1e-6, "{}", lap[2 * c]);
            assert!(lap[2 * c + 1].abs() < 1e-6);
        }
    }

    #[test]
    fn coupling_is_nonzero_and_definite() {
        let m = mesh(12);
        let bcs = BoundaryConditions::uniform(&m, Rank::Scalar, BcKind::ZeroGradient).unwrap();
        let p = Field::new(
            m.clone(),
            Field::from_fn(m.clone(), Rank::Scalar, |x| {
                vec![(3.0 * x[0]).cos() * (2.0 * x[1]).sin()]
            })
            .cells()
            .to_vec(),
            &bcs,
        )
        .unwrap();
        let s = solve_supremizer(&p).unwrap();
        // <p, div s> = -<grad p, s> = <laplacian s, s> < 0 for s = 0 on the boundary.
        assert!(s.coupling < 0.0);
        let gp = gauss_gradient(&p, Form::Intensive);
        let mut gs = 0.0;
        for c in 0..m.n_cells() {
            gs += m.cell_volumes()[c] * (gp[2 * c] * s.field.cell(c)[0] + gp[2 * c + 1] * s.field.cell(c)[1]);
        }
        assert!(gs > 0.0);
    }

    #[test]
    fn all_constant_snapshots_are_degenerate() {
        use crate::snapshot::{Location, SnapshotRecord};
        let m = mesh(6);
        let recs = (0..3)
            .map(|j| SnapshotRecord {
                parameter: 0.0,
                time: j as f64,
                values: vec![1.5; m.n_cells()],
            })
            .collect();
        let set = SnapshotSet::new(m.clone(), Location::Cells(Rank::Scalar), 1, 3, recs).unwrap();
        let bcs = BoundaryConditions::uniform(&m, Rank::Scalar, BcKind::ZeroGradient).unwrap();
        assert!(matches!(
            approximate_supremizers(&set, &bcs, 2),
            Err(Error::DegenerateSupremizers)
        ));
        assert!(approximate_supremizers(&set, &bcs, 4).is_err());
    }
}
