//! Two-dimensional unstructured finite-volume meshes.
//!
//! Faces are stored owner/neighbour style: every face has an owner cell and
//! interior faces additionally a neighbour. Interior faces come first, then
//! the boundary faces grouped into contiguous patches. The face area vector
//! `S_f` points out of the owner cell. Volumes are areas times a unit depth.

mod generate;
mod io;

pub use generate::{generate_cavity_mesh, generate_cylinder_mesh, CylinderMeshParams};
pub use io::{load_mesh, parse_mesh, save_mesh, write_mesh, MESH_FORMAT_VERSION};

use crate::error::{Error, Result};

pub type Vec2 = [f64; 2];

#[inline]
pub(crate) fn dot(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub(crate) fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub(crate) fn norm(a: Vec2) -> f64 {
    a[0].hypot(a[1])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PatchKind {
    Wall,
    Patch,
    Symmetry,
}

impl PatchKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PatchKind::Wall => "wall",
            PatchKind::Patch => "patch",
            PatchKind::Symmetry => "symmetry",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "wall" => Some(PatchKind::Wall),
            "patch" => Some(PatchKind::Patch),
            "symmetry" => Some(PatchKind::Symmetry),
            _ => None,
        }
    }
}

/// A named contiguous range of boundary faces.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Patch {
    pub name: String,
    pub kind: PatchKind,
    pub start: usize,
    pub count: usize,
}

impl Patch {
    pub fn faces(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.count
    }
}

#[derive(Clone, Debug)]
pub struct Mesh {
    points: Vec<Vec2>,
    faces: Vec<[usize; 2]>,
    owner: Vec<usize>,
    neighbour: Vec<usize>,
    patches: Vec<Patch>,
    n_cells: usize,

    cell_volumes: Vec<f64>,
    cell_centres: Vec<Vec2>,
    face_centres: Vec<Vec2>,
    face_areas: Vec<Vec2>,
    face_magnitudes: Vec<f64>,
    deltas: Vec<Vec2>,
    weights: Vec<f64>,
    boundary_patch: Vec<usize>,
}

impl PartialEq for Mesh {
    fn eq(&self, other: &Self) -> bool {
        self.points == other.points
            && self.faces == other.faces
            && self.owner == other.owner
            && self.neighbour == other.neighbour
            && self.patches == other.patches
    }
}

impl Mesh {
    /// Builds a mesh from raw connectivity, computing all metrics and
    /// checking the structural and geometric invariants.
    pub fn new(
        points: Vec<Vec2>,
        faces: Vec<[usize; 2]>,
        owner: Vec<usize>,
        neighbour: Vec<usize>,
        patches: Vec<Patch>,
    ) -> Result<Self> {
        let n_faces = faces.len();
        let n_internal = neighbour.len();
        if owner.len() != n_faces {
            return Err(Error::InvalidMesh(format!(
                "{} faces but {} owner entries",
                n_faces,
                owner.len()
            )));
        }
        if n_internal > n_faces {
            return Err(Error::InvalidMesh(format!(
                "{n_internal} neighbour entries exceed {n_faces} faces"
            )));
        }
        for (f, face) in faces.iter().enumerate() {
            for &p in face {
                if p >= points.len() {
                    return Err(Error::InvalidMesh(format!(
                        "face {f} references point {p} but the mesh has {} points",
                        points.len()
                    )));
                }
            }
            if face[0] == face[1] {
                return Err(Error::InvalidMesh(format!("face {f} is degenerate")));
            }
        }
        let n_cells = owner
            .iter()
            .chain(neighbour.iter())
            .map(|&c| c + 1)
            .max()
            .unwrap_or(0);
        if n_cells == 0 {
            return Err(Error::InvalidMesh("mesh has no cells".into()));
        }
        for (f, (&o, &n)) in owner.iter().zip(&neighbour).enumerate() {
            if o == n {
                return Err(Error::InvalidMesh(format!(
                    "interior face {f} has identical owner and neighbour {o}"
                )));
            }
        }

        // Patches must tile the boundary face range exactly, in order.
        let mut boundary_patch = vec![usize::MAX; n_faces - n_internal];
        let mut next = n_internal;
        for (pi, patch) in patches.iter().enumerate() {
            if patch.start != next {
                return Err(Error::InvalidMesh(format!(
                    "patch '{}' starts at face {} but the next unassigned boundary face is {}",
                    patch.name, patch.start, next
                )));
            }
            if patch.start + patch.count > n_faces {
                return Err(Error::InvalidMesh(format!(
                    "patch '{}' extends past the last face",
                    patch.name
                )));
            }
            for f in patch.faces() {
                boundary_patch[f - n_internal] = pi;
            }
            next += patch.count;
        }
        if next != n_faces {
            return Err(Error::InvalidMesh(format!(
                "boundary faces {next}..{n_faces} belong to no patch"
            )));
        }
        for (i, a) in patches.iter().enumerate() {
            if patches[..i].iter().any(|b| b.name == a.name) {
                return Err(Error::InvalidMesh(format!("duplicate patch name '{}'", a.name)));
            }
        }

        let mut mesh = Mesh {
            points,
            faces,
            owner,
            neighbour,
            patches,
            n_cells,
            cell_volumes: Vec::new(),
            cell_centres: Vec::new(),
            face_centres: Vec::new(),
            face_areas: Vec::new(),
            face_magnitudes: Vec::new(),
            deltas: Vec::new(),
            weights: Vec::new(),
            boundary_patch,
        };
        mesh.compute_metrics()?;
        Ok(mesh)
    }

    fn compute_metrics(&mut self) -> Result<()> {
        let n_faces = self.faces.len();
        let n_cells = self.n_cells;

        self.face_centres = self
            .faces
            .iter()
            .map(|&[a, b]| {
                let (pa, pb) = (self.points[a], self.points[b]);
                [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]
            })
            .collect();
        self.face_areas = self
            .faces
            .iter()
            .map(|&[a, b]| {
                let t = sub(self.points[b], self.points[a]);
                [t[1], -t[0]]
            })
            .collect();
        self.face_magnitudes = self.face_areas.iter().map(|&s| norm(s)).collect();

        // Per-cell reference point (first face centre seen) keeps the
        // moment sums well conditioned far from the origin.
        let mut reference: Vec<Option<Vec2>> = vec![None; n_cells];
        let mut face_count = vec![0usize; n_cells];
        let mut closure = vec![[0.0f64; 2]; n_cells];
        let mut perimeter = vec![0.0f64; n_cells];
        for f in 0..n_faces {
            for (cell, sign) in self.face_cells(f) {
                reference[cell].get_or_insert(self.face_centres[f]);
                face_count[cell] += 1;
                let s = self.face_areas[f];
                closure[cell][0] += sign * s[0];
                closure[cell][1] += sign * s[1];
                perimeter[cell] += self.face_magnitudes[f];
            }
        }
        for c in 0..n_cells {
            if face_count[c] < 3 {
                return Err(Error::InvalidMesh(format!(
                    "cell {c} has {} faces; at least 3 are required",
                    face_count[c]
                )));
            }
            if norm(closure[c]) > 1e-12 * perimeter[c] {
                return Err(Error::InvalidMesh(format!(
                    "cell {c} is not closed: |sum S_f| = {:.3e}",
                    norm(closure[c])
                )));
            }
        }

        let mut volume = vec![0.0f64; n_cells];
        let mut moment = vec![[0.0f64; 2]; n_cells];
        for f in 0..n_faces {
            for (cell, sign) in self.face_cells(f) {
                let r = sub(self.face_centres[f], reference[cell].unwrap());
                let flux = sign * dot(r, self.face_areas[f]);
                volume[cell] += 0.5 * flux;
                moment[cell][0] += flux * r[0];
                moment[cell][1] += flux * r[1];
            }
        }
        let mut centres = vec![[0.0f64; 2]; n_cells];
        for c in 0..n_cells {
            if !(volume[c] > 0.0) {
                return Err(Error::InvalidMesh(format!(
                    "cell {c} has non-positive volume {:.3e} (check face orientation)",
                    volume[c]
                )));
            }
            let r0 = reference[c].unwrap();
            centres[c] = [
                r0[0] + moment[c][0] / (3.0 * volume[c]),
                r0[1] + moment[c][1] / (3.0 * volume[c]),
            ];
        }
        self.cell_volumes = volume;
        self.cell_centres = centres;

        let n_internal = self.neighbour.len();
        self.deltas = Vec::with_capacity(n_faces);
        self.weights = Vec::with_capacity(n_internal);
        for f in 0..n_faces {
            let cp = self.cell_centres[self.owner[f]];
            let s = self.face_areas[f];
            let d = if f < n_internal {
                let cn = self.cell_centres[self.neighbour[f]];
                let d = sub(cn, cp);
                let total = dot(s, d);
                let to_neighbour = dot(s, sub(cn, self.face_centres[f]));
                if !(total > 0.0) {
                    return Err(Error::InvalidMesh(format!(
                        "interior face {f}: owner-neighbour vector does not cross the face along S_f"
                    )));
                }
                self.weights.push(to_neighbour / total);
                d
            } else {
                let d = sub(self.face_centres[f], cp);
                if !(dot(s, d) > 0.0) {
                    return Err(Error::InvalidMesh(format!(
                        "boundary face {f}: S_f does not point out of the owner cell"
                    )));
                }
                d
            };
            if norm(d) == 0.0 {
                return Err(Error::InvalidMesh(format!(
                    "face {f} has zero owner-neighbour distance"
                )));
            }
            self.deltas.push(d);
        }
        Ok(())
    }

    /// Cells adjacent to face `f` with the sign that orients `S_f` outward.
    #[inline]
    pub(crate) fn face_cells(&self, f: usize) -> impl Iterator<Item = (usize, f64)> {
        let own = (self.owner[f], 1.0);
        let nei = self.neighbour.get(f).map(|&n| (n, -1.0));
        std::iter::once(own).chain(nei)
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn n_internal_faces(&self) -> usize {
        self.neighbour.len()
    }

    pub fn n_boundary_faces(&self) -> usize {
        self.faces.len() - self.neighbour.len()
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn faces(&self) -> &[[usize; 2]] {
        &self.faces
    }

    pub fn owner(&self) -> &[usize] {
        &self.owner
    }

    pub fn neighbour(&self) -> &[usize] {
        &self.neighbour
    }

    pub fn patches(&self) -> &[Patch] {
        &self.patches
    }

    pub fn patch(&self, name: &str) -> Option<&Patch> {
        self.patches.iter().find(|p| p.name == name)
    }

    /// Index of the patch owning boundary face `f` (global face index).
    pub fn patch_of_face(&self, f: usize) -> usize {
        self.boundary_patch[f - self.n_internal_faces()]
    }

    pub fn cell_volumes(&self) -> &[f64] {
        &self.cell_volumes
    }

    pub fn cell_centres(&self) -> &[Vec2] {
        &self.cell_centres
    }

    pub fn face_centres(&self) -> &[Vec2] {
        &self.face_centres
    }

    /// Face area vectors `S_f`, outward from the owner.
    pub fn face_areas(&self) -> &[Vec2] {
        &self.face_areas
    }

    pub fn face_magnitudes(&self) -> &[f64] {
        &self.face_magnitudes
    }

    /// Owner-to-neighbour vector for interior faces, owner-to-face-centre
    /// vector for boundary faces.
    pub fn deltas(&self) -> &[Vec2] {
        &self.deltas
    }

    /// Owner weight of the linear face interpolation, interior faces only.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_volume(&self) -> f64 {
        self.cell_volumes.iter().sum()
    }

    /// Face diffusion coefficient `|S|^2 / (d . S)` of the over-relaxed
    /// orthogonal/non-orthogonal split.
    #[inline]
    pub fn delta_coefficient(&self, f: usize) -> f64 {
        let s = self.face_areas[f];
        dot(s, s) / dot(self.deltas[f], s)
    }

    /// Non-orthogonal remainder `k = S - d |S|^2 / (d . S)`.
    #[inline]
    pub fn correction_vector(&self, f: usize) -> Vec2 {
        let s = self.face_areas[f];
        let d = self.deltas[f];
        let c = dot(s, s) / dot(d, s);
        [s[0] - c * d[0], s[1] - c * d[1]]
    }

    /// Angle in degrees between `S_f` and the owner-neighbour vector.
    pub fn non_orthogonality(&self, f: usize) -> f64 {
        let s = self.face_areas[f];
        let d = self.deltas[f];
        let c = (dot(s, d) / (norm(s) * norm(d))).clamp(-1.0, 1.0);
        c.acos().to_degrees()
    }

    pub fn max_non_orthogonality(&self) -> f64 {
        (0..self.n_internal_faces())
            .map(|f| self.non_orthogonality(f))
            .fold(0.0, f64::max)
    }

    pub fn is_orthogonal(&self) -> bool {
        self.max_non_orthogonality() < 1e-9
    }

    /// Sum of outward face area vectors of each cell.
    pub fn cell_closure(&self) -> Vec<Vec2> {
        let mut out = vec![[0.0; 2]; self.n_cells];
        for f in 0..self.n_faces() {
            let s = self.face_areas[f];
            for (c, sign) in self.face_cells(f) {
                out[c][0] += sign * s[0];
                out[c][1] += sign * s[1];
            }
        }
        out
    }

    /// Sum of face lengths of each cell.
    pub fn cell_perimeters(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_cells];
        for f in 0..self.n_faces() {
            for (c, _) in self.face_cells(f) {
                out[c] += self.face_magnitudes[f];
            }
        }
        out
    }

    /// Index of the cell whose centre is nearest to `x`.
    pub fn nearest_cell(&self, x: Vec2) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (c, &xc) in self.cell_centres.iter().enumerate() {
            let d = norm(sub(xc, x));
            if d < best.0 {
                best = (d, c);
            }
        }
        best.1
    }
}
