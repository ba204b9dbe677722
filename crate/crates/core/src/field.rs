//! Cell-centred fields with boundary-face values.
//!
//! A [`Field`] stores one value (scalar) or two values (vector, interleaved
//! `x, y`) per cell plus the same per boundary face. Boundary values are
//! derived from [`BoundaryConditions`] when a field is built from them, and
//! carried explicitly otherwise. Keeping them explicit makes every discrete
//! operator a linear map of the pair (cell values, boundary values), which is
//! what the reduced-order projection relies on: a linear combination of modes
//! carries the same combination of boundary data.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::{dot, Mesh, Vec2};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Rank {
    Scalar,
    Vector,
}

impl Rank {
    pub fn components(self) -> usize {
        match self {
            Rank::Scalar => 1,
            Rank::Vector => 2,
        }
    }

    pub fn from_components(n: usize) -> Option<Self> {
        match n {
            1 => Some(Rank::Scalar),
            2 => Some(Rank::Vector),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BcKind {
    FixedValue(Vec<f64>),
    /// Prescribed normal gradient.
    FixedGradient(Vec<f64>),
    ZeroGradient,
    /// Zero normal component, zero-gradient tangential component. Acts as
    /// zero-gradient on scalars.
    Symmetry,
}

impl BcKind {
    fn datum(&self) -> Option<&[f64]> {
        match self {
            BcKind::FixedValue(d) | BcKind::FixedGradient(d) => Some(d),
            _ => None,
        }
    }

    /// Same kind with a zero datum.
    pub fn homogeneous(&self) -> BcKind {
        match self {
            BcKind::FixedValue(d) => BcKind::FixedValue(vec![0.0; d.len()]),
            BcKind::FixedGradient(d) => BcKind::FixedGradient(vec![0.0; d.len()]),
            other => other.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryCondition {
    pub patch: String,
    pub kind: BcKind,
}

impl BoundaryCondition {
    pub fn new(patch: impl Into<String>, kind: BcKind) -> Self {
        BoundaryCondition {
            patch: patch.into(),
            kind,
        }
    }
}

/// One boundary condition per mesh patch, indexed like `Mesh::patches`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryConditions {
    rank: Rank,
    kinds: Vec<BcKind>,
}

impl BoundaryConditions {
    pub fn new(mesh: &Mesh, rank: Rank, conditions: Vec<BoundaryCondition>) -> Result<Self> {
        let mut kinds: Vec<Option<BcKind>> = vec![None; mesh.patches().len()];
        for bc in conditions {
            let idx = mesh
                .patches()
                .iter()
                .position(|p| p.name == bc.patch)
                .ok_or_else(|| {
                    Error::InvalidInput(format!("boundary condition for unknown patch '{}'", bc.patch))
                })?;
            if let Some(d) = bc.kind.datum() {
                if d.len() != rank.components() {
                    return Err(Error::InvalidInput(format!(
                        "patch '{}': datum has {} components, field has {}",
                        bc.patch,
                        d.len(),
                        rank.components()
                    )));
                }
            }
            if kinds[idx].is_some() {
                return Err(Error::InvalidInput(format!(
                    "patch '{}' has more than one boundary condition",
                    bc.patch
                )));
            }
            kinds[idx] = Some(bc.kind);
        }
        let kinds = kinds
            .into_iter()
            .enumerate()
            .map(|(i, k)| {
                k.ok_or_else(|| {
                    Error::InvalidInput(format!(
                        "patch '{}' has no boundary condition",
                        mesh.patches()[i].name
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BoundaryConditions { rank, kinds })
    }

    /// The same kind on every patch.
    pub fn uniform(mesh: &Mesh, rank: Rank, kind: BcKind) -> Result<Self> {
        let list = mesh
            .patches()
            .iter()
            .map(|p| BoundaryCondition::new(p.name.clone(), kind.clone()))
            .collect();
        Self::new(mesh, rank, list)
    }

    /// Homogeneous Dirichlet data on every patch.
    pub fn all_zero_value(mesh: &Mesh, rank: Rank) -> Result<Self> {
        Self::uniform(mesh, rank, BcKind::FixedValue(vec![0.0; rank.components()]))
    }

    pub fn rank(&self) -> Rank {
        self.rank
    }

    pub fn kind(&self, patch: usize) -> &BcKind {
        &self.kinds[patch]
    }

    pub fn kinds(&self) -> &[BcKind] {
        &self.kinds
    }

    pub fn homogeneous(&self) -> BoundaryConditions {
        BoundaryConditions {
            rank: self.rank,
            kinds: self.kinds.iter().map(BcKind::homogeneous).collect(),
        }
    }

    pub fn is_homogeneous(&self) -> bool {
        self.kinds
            .iter()
            .all(|k| k.datum().is_none_or(|d| d.iter().all(|&v| v == 0.0)))
    }

    /// True when no patch fixes the value, so the field is only defined up
    /// to a constant under a pure-Neumann problem.
    pub fn has_fixed_value(&self) -> bool {
        self.kinds.iter().any(|k| matches!(k, BcKind::FixedValue(_)))
    }

    /// Boundary-face values implied by these conditions for the given cell
    /// values.
    pub fn boundary_values(&self, mesh: &Mesh, cells: &[f64]) -> Vec<f64> {
        let nc = self.rank.components();
        let ni = mesh.n_internal_faces();
        let mut out = vec![0.0; mesh.n_boundary_faces() * nc];
        for (pi, patch) in mesh.patches().iter().enumerate() {
            let kind = &self.kinds[pi];
            for f in patch.faces() {
                let b = f - ni;
                let own = mesh.owner()[f];
                let up = &cells[own * nc..(own + 1) * nc];
                let slot = &mut out[b * nc..(b + 1) * nc];
                match kind {
                    BcKind::FixedValue(d) => slot.copy_from_slice(d),
                    BcKind::ZeroGradient => slot.copy_from_slice(up),
                    BcKind::FixedGradient(g) => {
                        let dn = normal_distance(mesh, f);
                        for c in 0..nc {
                            slot[c] = up[c] + g[c] * dn;
                        }
                    }
                    BcKind::Symmetry => {
                        if nc == 2 {
                            let n = unit_normal(mesh, f);
                            let un = up[0] * n[0] + up[1] * n[1];
                            slot[0] = up[0] - un * n[0];
                            slot[1] = up[1] - un * n[1];
                        } else {
                            slot.copy_from_slice(up);
                        }
                    }
                }
            }
        }
        out
    }
}

#[inline]
pub(crate) fn unit_normal(mesh: &Mesh, f: usize) -> Vec2 {
    let s = mesh.face_areas()[f];
    let m = mesh.face_magnitudes()[f];
    [s[0] / m, s[1] / m]
}

/// Distance from the owner centre to the face along the face normal.
#[inline]
pub(crate) fn normal_distance(mesh: &Mesh, f: usize) -> f64 {
    dot(mesh.deltas()[f], unit_normal(mesh, f))
}

#[derive(Clone, Debug)]
pub struct Field {
    mesh: Arc<Mesh>,
    rank: Rank,
    cells: Vec<f64>,
    boundary: Vec<f64>,
}

impl PartialEq for Field {
    fn eq(&self, other: &Self) -> bool {
        self.rank == other.rank
            && self.cells == other.cells
            && self.boundary == other.boundary
            && same_mesh(&self.mesh, &other.mesh)
    }
}

pub(crate) fn same_mesh(a: &Arc<Mesh>, b: &Arc<Mesh>) -> bool {
    Arc::ptr_eq(a, b) || **a == **b
}

impl Field {
    /// Field whose boundary values follow from `bcs`.
    pub fn new(mesh: Arc<Mesh>, cells: Vec<f64>, bcs: &BoundaryConditions) -> Result<Self> {
        let rank = bcs.rank();
        check_len(&mesh, rank, &cells)?;
        let boundary = bcs.boundary_values(&mesh, &cells);
        Ok(Field {
            mesh,
            rank,
            cells,
            boundary,
        })
    }

    /// Field with explicitly supplied boundary-face values.
    pub fn with_boundary(
        mesh: Arc<Mesh>,
        rank: Rank,
        cells: Vec<f64>,
        boundary: Vec<f64>,
    ) -> Result<Self> {
        check_len(&mesh, rank, &cells)?;
        if boundary.len() != mesh.n_boundary_faces() * rank.components() {
            return Err(Error::Mismatch(format!(
                "boundary array has {} values, expected {}",
                boundary.len(),
                mesh.n_boundary_faces() * rank.components()
            )));
        }
        Ok(Field {
            mesh,
            rank,
            cells,
            boundary,
        })
    }

    pub fn zeros(mesh: Arc<Mesh>, rank: Rank) -> Self {
        let nc = rank.components();
        let cells = vec![0.0; mesh.n_cells() * nc];
        let boundary = vec![0.0; mesh.n_boundary_faces() * nc];
        Field {
            mesh,
            rank,
            cells,
            boundary,
        }
    }

    /// Samples `f` at cell centres and boundary-face centres, i.e. a field
    /// with exact boundary data.
    pub fn from_fn(mesh: Arc<Mesh>, rank: Rank, f: impl Fn(Vec2) -> Vec<f64>) -> Self {
        let nc = rank.components();
        let mut cells = Vec::with_capacity(mesh.n_cells() * nc);
        for &x in mesh.cell_centres() {
            let v = f(x);
            cells.extend_from_slice(&v[..nc]);
        }
        let mut boundary = Vec::with_capacity(mesh.n_boundary_faces() * nc);
        for &x in &mesh.face_centres()[mesh.n_internal_faces()..] {
            let v = f(x);
            boundary.extend_from_slice(&v[..nc]);
        }
        Field {
            mesh,
            rank,
            cells,
            boundary,
        }
    }

    /// Uniform value everywhere, boundary included.
    pub fn uniform(mesh: Arc<Mesh>, value: &[f64]) -> Result<Self> {
        let rank = Rank::from_components(value.len())
            .ok_or_else(|| Error::InvalidInput("uniform value must have 1 or 2 components".into()))?;
        Ok(Self::from_fn(mesh, rank, |_| value.to_vec()))
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn mesh_arc(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn rank(&self) -> Rank {
        self.rank
    }

    pub fn components(&self) -> usize {
        self.rank.components()
    }

    pub fn cells(&self) -> &[f64] {
        &self.cells
    }

    pub fn cells_mut(&mut self) -> &mut [f64] {
        &mut self.cells
    }

    pub fn boundary(&self) -> &[f64] {
        &self.boundary
    }

    pub fn boundary_mut(&mut self) -> &mut [f64] {
        &mut self.boundary
    }

    pub fn into_parts(self) -> (Vec<f64>, Vec<f64>) {
        (self.cells, self.boundary)
    }

    #[inline]
    pub fn cell(&self, c: usize) -> &[f64] {
        let nc = self.components();
        &self.cells[c * nc..(c + 1) * nc]
    }

    /// Value on boundary face `f` (global face index).
    #[inline]
    pub fn boundary_value(&self, f: usize) -> &[f64] {
        let nc = self.components();
        let b = f - self.mesh.n_internal_faces();
        &self.boundary[b * nc..(b + 1) * nc]
    }

    /// Recomputes the boundary values from `bcs`.
    pub fn apply_boundary_conditions(&mut self, bcs: &BoundaryConditions) -> Result<()> {
        if bcs.rank() != self.rank {
            return Err(Error::Mismatch("boundary condition rank differs from field rank".into()));
        }
        self.boundary = bcs.boundary_values(&self.mesh, &self.cells);
        Ok(())
    }

    pub fn is_compatible(&self, other: &Field) -> bool {
        self.rank == other.rank && same_mesh(&self.mesh, &other.mesh)
    }

    pub(crate) fn check_compatible(&self, other: &Field) -> Result<()> {
        if self.rank != other.rank {
            return Err(Error::Mismatch(format!(
                "field ranks differ ({:?} vs {:?})",
                self.rank, other.rank
            )));
        }
        if !same_mesh(&self.mesh, &other.mesh) {
            return Err(Error::Mismatch("fields live on different meshes".into()));
        }
        Ok(())
    }

    /// `self += alpha * other`, boundary values included.
    pub fn axpy(&mut self, alpha: f64, other: &Field) -> Result<()> {
        self.check_compatible(other)?;
        for (a, b) in self.cells.iter_mut().zip(&other.cells) {
            *a += alpha * b;
        }
        for (a, b) in self.boundary.iter_mut().zip(&other.boundary) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        self.cells.iter_mut().for_each(|v| *v *= alpha);
        self.boundary.iter_mut().for_each(|v| *v *= alpha);
    }

    /// `sum_i coeffs[i] * fields[i]`.
    pub fn linear_combination(coeffs: &[f64], fields: &[&Field]) -> Result<Field> {
        let first = fields
            .first()
            .ok_or_else(|| Error::InvalidInput("linear combination of no fields".into()))?;
        if coeffs.len() != fields.len() {
            return Err(Error::Mismatch(format!(
                "{} coefficients for {} fields",
                coeffs.len(),
                fields.len()
            )));
        }
        let mut out = Field::zeros(first.mesh.clone(), first.rank);
        for (&c, f) in coeffs.iter().zip(fields) {
            out.axpy(c, f)?;
        }
        Ok(out)
    }

    pub fn max_abs(&self) -> f64 {
        self.cells.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

fn check_len(mesh: &Mesh, rank: Rank, cells: &[f64]) -> Result<()> {
    let expected = mesh.n_cells() * rank.components();
    if cells.len() != expected {
        return Err(Error::Mismatch(format!(
            "cell array has {} values, expected {} ({} cells x {} components)",
            cells.len(),
            expected,
            mesh.n_cells(),
            rank.components()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate_cavity_mesh;

    fn cavity(n: usize) -> Arc<Mesh> {
        Arc::new(generate_cavity_mesh(n, 1.0).unwrap())
    }

    #[test]
    fn every_patch_needs_exactly_one_condition() {
        let m = cavity(2);
        let only_lid = vec![BoundaryCondition::new("lid", BcKind::ZeroGradient)];
        assert!(BoundaryConditions::new(&m, Rank::Scalar, only_lid).is_err());
        let twice = vec![
            BoundaryCondition::new("lid", BcKind::ZeroGradient),
            BoundaryCondition::new("lid", BcKind::ZeroGradient),
            BoundaryCondition::new("walls", BcKind::ZeroGradient),
        ];
        assert!(BoundaryConditions::new(&m, Rank::Scalar, twice).is_err());
        let unknown = vec![
            BoundaryCondition::new("lid", BcKind::ZeroGradient),
            BoundaryCondition::new("walls", BcKind::ZeroGradient),
            BoundaryCondition::new("inlet", BcKind::ZeroGradient),
        ];
        assert!(BoundaryConditions::new(&m, Rank::Scalar, unknown).is_err());
    }

    #[test]
    fn datum_rank_must_match() {
        let m = cavity(2);
        let bad = vec![
            BoundaryCondition::new("lid", BcKind::FixedValue(vec![1.0])),
            BoundaryCondition::new("walls", BcKind::FixedValue(vec![0.0, 0.0])),
        ];
        assert!(BoundaryConditions::new(&m, Rank::Vector, bad).is_err());
    }

    #[test]
    fn boundary_values_follow_conditions() {
        let m = cavity(2);
        let bcs = BoundaryConditions::new(
            &m,
            Rank::Vector,
            vec![
                BoundaryCondition::new("lid", BcKind::FixedValue(vec![1.0, 0.0])),
                BoundaryCondition::new("walls", BcKind::Symmetry),
            ],
        )
        .unwrap();
        let cells = vec![2.0, 3.0, 2.0, 3.0, 2.0, 3.0, 2.0, 3.0];
        let f = Field::new(m.clone(), cells, &bcs).unwrap();
        for face in m.patch("lid").unwrap().faces() {
            assert_eq!(f.boundary_value(face), &[1.0, 0.0]);
        }
        for face in m.patch("walls").unwrap().faces() {
            let n = unit_normal(&m, face);
            let v = f.boundary_value(face);
            assert!((v[0] * n[0] + v[1] * n[1]).abs() < 1e-15);
        }
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let m = cavity(2);
        let bcs = BoundaryConditions::all_zero_value(&m, Rank::Scalar).unwrap();
        assert!(Field::new(m, vec![0.0; 3], &bcs).is_err());
    }

    #[test]
    fn linear_combination_combines_boundaries() {
        let m = cavity(3);
        let a = Field::from_fn(m.clone(), Rank::Scalar, |x| vec![x[0]]);
        let b = Field::from_fn(m.clone(), Rank::Scalar, |x| vec![x[1]]);
        let c = Field::linear_combination(&[2.0, -1.0], &[&a, &b]).unwrap();
        let expect = Field::from_fn(m, Rank::Scalar, |x| vec![2.0 * x[0] - x[1]]);
        for (u, v) in c.boundary().iter().zip(expect.boundary()) {
            assert!((u - v).abs() < 1e-15);
        }
    }
}
