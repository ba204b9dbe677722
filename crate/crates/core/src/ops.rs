//! Explicit (matrix-free) finite-volume operators.
//!
//! All operators act on the cell values and boundary-face values stored in a
//! [`Field`]. Results are extensive (integrated over each cell) unless
//! [`Form::Intensive`] is requested, in which case they are divided by the
//! cell volume. Vector results are interleaved per cell; gradients of vector
//! fields are stored as `[du/dx, du/dy, dv/dx, dv/dy]` per cell.

use crate::error::{Error, Result};
use crate::field::{Field, Rank};
use crate::mesh::{dot, sub, Mesh};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scheme {
    Linear,
    Upwind,
    /// Upwind value plus the upwind cell gradient extrapolated to the face.
    LinearUpwind,
}

impl Scheme {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "linear" => Some(Scheme::Linear),
            "upwind" => Some(Scheme::Upwind),
            "linear-upwind" | "linearUpwind" => Some(Scheme::LinearUpwind),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Linear => "linear",
            Scheme::Upwind => "upwind",
            Scheme::LinearUpwind => "linear-upwind",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Form {
    #[default]
    Extensive,
    Intensive,
}

fn finish(mesh: &Mesh, mut out: Vec<f64>, per_cell: usize, form: Form) -> Vec<f64> {
    if form == Form::Intensive {
        for (c, &v) in mesh.cell_volumes().iter().enumerate() {
            out[c * per_cell..(c + 1) * per_cell]
                .iter_mut()
                .for_each(|x| *x /= v);
        }
    }
    out
}

fn check_flux(mesh: &Mesh, flux: &[f64]) -> Result<()> {
    if flux.len() != mesh.n_faces() {
        return Err(Error::Mismatch(format!(
            "mass flux has {} entries, mesh has {} faces",
            flux.len(),
            mesh.n_faces()
        )));
    }
    Ok(())
}

/// Face values, `rank` components per face. Boundary faces take the field's
/// boundary values; interior faces follow `scheme`.
pub fn interpolate_to_faces(field: &Field, scheme: Scheme, flux: Option<&[f64]>) -> Result<Vec<f64>> {
    let mesh = field.mesh();
    let nc = field.components();
    let ni = mesh.n_internal_faces();
    if scheme != Scheme::Linear {
        let flux = flux.ok_or_else(|| {
            Error::InvalidInput(format!("{} interpolation needs a mass flux", scheme.as_str()))
        })?;
        check_flux(mesh, flux)?;
    }
    let grad = match scheme {
        Scheme::LinearUpwind => Some(gauss_gradient(field, Form::Intensive)),
        _ => None,
    };
    let mut out = vec![0.0; mesh.n_faces() * nc];
    for f in 0..ni {
        let p = mesh.owner()[f];
        let n = mesh.neighbour()[f];
        let slot = &mut out[f * nc..(f + 1) * nc];
        match scheme {
            Scheme::Linear => {
                let w = mesh.weights()[f];
                for c in 0..nc {
                    slot[c] = w * field.cell(p)[c] + (1.0 - w) * field.cell(n)[c];
                }
            }
            Scheme::Upwind | Scheme::LinearUpwind => {
                let up = if flux.unwrap()[f] >= 0.0 { p } else { n };
                slot.copy_from_slice(field.cell(up));
                if let Some(g) = &grad {
                    let r = sub(mesh.face_centres()[f], mesh.cell_centres()[up]);
                    let gu = &g[up * 2 * nc..(up + 1) * 2 * nc];
                    for c in 0..nc {
                        slot[c] += gu[2 * c] * r[0] + gu[2 * c + 1] * r[1];
                    }
                }
            }
        }
    }
    out[ni * nc..].copy_from_slice(field.boundary());
    Ok(out)
}

/// Volumetric face flux `S_f . u_f` with linear interpolation.
pub fn face_flux(velocity: &Field) -> Result<Vec<f64>> {
    if velocity.rank() != Rank::Vector {
        return Err(Error::Mismatch("face flux needs a vector field".into()));
    }
    let uf = interpolate_to_faces(velocity, Scheme::Linear, None)?;
    let mesh = velocity.mesh();
    Ok(mesh
        .face_areas()
        .iter()
        .enumerate()
        .map(|(f, s)| s[0] * uf[2 * f] + s[1] * uf[2 * f + 1])
        .collect())
}

/// Net outward flux per cell: `sum_f sign * flux_f`.
pub fn flux_divergence(mesh: &Mesh, flux: &[f64], form: Form) -> Result<Vec<f64>> {
    check_flux(mesh, flux)?;
    let mut out = vec![0.0; mesh.n_cells()];
    for (f, &phi) in flux.iter().enumerate() {
        for (c, sign) in mesh.face_cells(f) {
            out[c] += sign * phi;
        }
    }
    Ok(finish(mesh, out, 1, form))
}

/// `sum_f S_f . u_f` per cell, linear interpolation on interior faces.
pub fn divergence_flux(velocity: &Field, form: Form) -> Result<Vec<f64>> {
    flux_divergence(velocity.mesh(), &face_flux(velocity)?, form)
}

/// Gauss gradient `sum_f S_f phi_f` with linear interpolation.
pub fn gauss_gradient(field: &Field, form: Form) -> Vec<f64> {
    let mesh = field.mesh();
    let nc = field.components();
    let ni = mesh.n_internal_faces();
    let mut out = vec![0.0; mesh.n_cells() * 2 * nc];
    let mut add = |cell: usize, sign: f64, s: [f64; 2], v: &[f64]| {
        let g = &mut out[cell * 2 * nc..(cell + 1) * 2 * nc];
        for c in 0..nc {
            g[2 * c] += sign * s[0] * v[c];
            g[2 * c + 1] += sign * s[1] * v[c];
        }
    };
    let mut vf = [0.0; 2];
    for f in 0..ni {
        let p = mesh.owner()[f];
        let n = mesh.neighbour()[f];
        let w = mesh.weights()[f];
        for c in 0..nc {
            vf[c] = w * field.cell(p)[c] + (1.0 - w) * field.cell(n)[c];
        }
        let s = mesh.face_areas()[f];
        add(p, 1.0, s, &vf[..nc]);
        add(n, -1.0, s, &vf[..nc]);
    }
    for f in ni..mesh.n_faces() {
        add(mesh.owner()[f], 1.0, mesh.face_areas()[f], field.boundary_value(f));
    }
    finish(mesh, out, 2 * nc, form)
}

/// `diffusivity * sum_f S_f . (grad phi)_f` with the over-relaxed
/// orthogonal/non-orthogonal split, the non-orthogonal part evaluated
/// explicitly from interpolated Gauss gradients.
pub fn laplacian(field: &Field, diffusivity: f64, form: Form) -> Result<Vec<f64>> {
    if diffusivity < 0.0 {
        return Err(Error::InvalidInput(format!("negative diffusivity {diffusivity}")));
    }
    let mesh = field.mesh();
    let nc = field.components();
    let ni = mesh.n_internal_faces();
    let mut out = vec![0.0; mesh.n_cells() * nc];
    if diffusivity == 0.0 {
        return Ok(out);
    }
    let grad = if mesh.is_orthogonal() {
        None
    } else {
        Some(gauss_gradient(field, Form::Intensive))
    };
    for f in 0..ni {
        let p = mesh.owner()[f];
        let n = mesh.neighbour()[f];
        let cf = mesh.delta_coefficient(f);
        let k = mesh.correction_vector(f);
        let w = mesh.weights()[f];
        for c in 0..nc {
            let mut flux = cf * (field.cell(n)[c] - field.cell(p)[c]);
            if let Some(g) = &grad {
                let gp = &g[(p * nc + c) * 2..(p * nc + c) * 2 + 2];
                let gn = &g[(n * nc + c) * 2..(n * nc + c) * 2 + 2];
                let gf = [w * gp[0] + (1.0 - w) * gn[0], w * gp[1] + (1.0 - w) * gn[1]];
                flux += dot(k, gf);
            }
            out[p * nc + c] += diffusivity * flux;
            out[n * nc + c] -= diffusivity * flux;
        }
    }
    for f in ni..mesh.n_faces() {
        let p = mesh.owner()[f];
        let cf = mesh.delta_coefficient(f);
        let vb = field.boundary_value(f);
        for c in 0..nc {
            out[p * nc + c] += diffusivity * cf * (vb[c] - field.cell(p)[c]);
        }
    }
    Ok(finish(mesh, out, nc, form))
}

/// Picard-linearised convection `sum_f F_f u_f` for a given face flux `F`.
pub fn convection(flux: &[f64], field: &Field, scheme: Scheme, form: Form) -> Result<Vec<f64>> {
    let mesh = field.mesh();
    check_flux(mesh, flux)?;
    let nc = field.components();
    let uf = interpolate_to_faces(field, scheme, Some(flux))?;
    let mut out = vec![0.0; mesh.n_cells() * nc];
    for (f, &phi) in flux.iter().enumerate() {
        for (cell, sign) in mesh.face_cells(f) {
            for c in 0..nc {
                out[cell * nc + c] += sign * phi * uf[f * nc + c];
            }
        }
    }
    Ok(finish(mesh, out, nc, form))
}

/// Fully nonlinear convection `div(u (x) v)` with the flux of `u` and the
/// face values of `v`, both linearly interpolated.
pub fn convection_of(u: &Field, v: &Field, form: Form) -> Result<Vec<f64>> {
    convection(&face_flux(u)?, v, Scheme::Linear, form)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::BoundaryConditions;
    use crate::mesh::{generate_cavity_mesh, generate_cylinder_mesh, CylinderMeshParams, Patch, PatchKind};
    use std::sync::Arc;

    fn cavity(n: usize) -> Arc<Mesh> {
        Arc::new(generate_cavity_mesh(n, 1.0).unwrap())
    }

    #[test]
    fn uniform_field_interpolates_to_itself() {
        let m = cavity(4);
        let u = Field::uniform(m.clone(), &[0.3, -1.2]).unwrap();
        let flux: Vec<f64> = (0..m.n_faces()).map(|f| (f as f64 * 0.37).sin()).collect();
        for scheme in [Scheme::Linear, Scheme::Upwind, Scheme::LinearUpwind] {
            let uf = interpolate_to_faces(&u, scheme, Some(&flux)).unwrap();
            for pair in uf.chunks(2) {
                assert!((pair[0] - 0.3).abs() < 1e-14 && (pair[1] + 1.2).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn upwind_requires_flux() {
        let m = cavity(2);
        let p = Field::zeros(m, Rank::Scalar);
        assert!(interpolate_to_faces(&p, Scheme::Upwind, None).is_err());
    }

    #[test]
    fn upwind_picks_the_owner_for_positive_flux() {
        let m = cavity(2);
        let p = Field::from_fn(m.clone(), Rank::Scalar, |x| vec![x[0] + 10.0 * x[1]]);
        let plus = vec![1.0; m.n_faces()];
        let minus = vec![-1.0; m.n_faces()];
        let up = interpolate_to_faces(&p, Scheme::Upwind, Some(&plus)).unwrap();
        let down = interpolate_to_faces(&p, Scheme::Upwind, Some(&minus)).unwrap();
        for f in 0..m.n_internal_faces() {
            assert_eq!(up[f], p.cell(m.owner()[f])[0]);
            assert_eq!(down[f], p.cell(m.neighbour()[f])[0]);
        }
    }

    #[test]
    fn linear_is_the_mean_on_a_uniform_grid() {
        let m = cavity(3);
        let p = Field::from_fn(m.clone(), Rank::Scalar, |x| vec![x[0] * x[0] + x[1]]);
        let pf = interpolate_to_faces(&p, Scheme::Linear, None).unwrap();
        for f in 0..m.n_internal_faces() {
            let mean = 0.5 * (p.cell(m.owner()[f])[0] + p.cell(m.neighbour()[f])[0]);
            assert!((pf[f] - mean).abs() < 1e-15);
        }
    }

    #[test]
    fn divergence_of_linear_fields() {
        let m = Arc::new(generate_cavity_mesh(8, 0.1).unwrap());
        let u = Field::from_fn(m.clone(), Rank::Vector, |x| vec![x[0], -x[1]]);
        for d in divergence_flux(&u, Form::Extensive).unwrap() {
            assert!(d.abs() < 1e-12);
        }
        let u = Field::from_fn(m.clone(), Rank::Vector, |x| vec![x[0], 0.0]);
        let d = divergence_flux(&u, Form::Extensive).unwrap();
        for (c, v) in d.iter().enumerate() {
            assert!((v - m.cell_volumes()[c]).abs() < 1e-15);
        }
    }

    #[test]
    fn gradient_of_linear_fields() {
        let m = cavity(5);
        let px = Field::from_fn(m.clone(), Rank::Scalar, |x| vec![x[0]]);
        let py = Field::from_fn(m.clone(), Rank::Scalar, |x| vec![x[1]]);
        let gx = gauss_gradient(&px, Form::Intensive);
        let gy = gauss_gradient(&py, Form::Intensive);
        for c in 0..m.n_cells() {
            assert!((gx[2 * c] - 1.0).abs() < 1e-10 && gx[2 * c + 1].abs() < 1e-10);
            assert!(gy[2 * c].abs() < 1e-10 && (gy[2 * c + 1] - 1.0).abs() < 1e-10);
        }
        let one = Field::uniform(m.clone(), &[1.0]).unwrap();
        assert!(gauss_gradient(&one, Form::Extensive).iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn laplacian_of_linear_and_quadratic_fields() {
        let m = cavity(10);
        let lin = Field::from_fn(m.clone(), Rank::Scalar, |x| vec![3.0 * x[0] - 2.0 * x[1] + 1.0]);
        assert!(laplacian(&lin, 1.0, Form::Intensive).unwrap().iter().all(|v| v.abs() < 1e-10));
        assert!(laplacian(&lin, 0.0, Form::Extensive).unwrap().iter().all(|&v| v == 0.0));
        // x^2 is reproduced exactly by the two-point stencil on interior faces.
        let q = Field::from_fn(m.clone(), Rank::Scalar, |x| vec![x[0] * x[0]]);
        let l = laplacian(&q, 1.0, Form::Intensive).unwrap();
        for (c, x) in m.cell_centres().iter().enumerate() {
            let h = 0.1;
            if x[0] > h && x[0] < 1.0 - h {
                assert!((l[c] - 2.0).abs() < 1e-8, "{}", l[c]);
            }
        }
    }

    #[test]
    fn convection_of_uniform_field_with_closed_flux_is_zero() {
        let m = cavity(6);
        // Flux of a solenoidal field: the discrete curl of a nodal stream function.
        let psi = |x: [f64; 2]| (3.0 * x[0]).sin() * (2.0 * x[1]).cos();
        let flux: Vec<f64> = m
            .faces()
            .iter()
            .map(|f| psi(m.points()[f[1]]) - psi(m.points()[f[0]]))
            .collect();
        assert!(flux_divergence(&m, &flux, Form::Extensive)
            .unwrap()
            .iter()
            .all(|d| d.abs() < 1e-14));
        let u = Field::uniform(m.clone(), &[1.5, -0.5]).unwrap();
        for scheme in [Scheme::Linear, Scheme::Upwind, Scheme::LinearUpwind] {
            let c = convection(&flux, &u, scheme, Form::Extensive).unwrap();
            assert!(c.iter().all(|v| v.abs() < 1e-13));
        }
        let zero = vec![0.0; m.n_faces()];
        assert!(convection(&zero, &u, Scheme::Upwind, Form::Extensive)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn two_cell_upwind_by_hand() {
        // Cells [0,1]x[0,1] and [1,2]x[0,1]; points numbered row-wise.
        let points = vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [0.0, 1.0], [1.0, 1.0], [2.0, 1.0]];
        let faces = vec![[1, 4], [0, 1], [4, 3], [3, 0], [1, 2], [2, 5], [5, 4]];
        let owner = vec![0, 0, 0, 0, 1, 1, 1];
        let neighbour = vec![1];
        let patches = vec![Patch {
            name: "walls".into(),
            kind: PatchKind::Wall,
            start: 1,
            count: 6,
        }];
        let m = Arc::new(Mesh::new(points, faces, owner, neighbour, patches).unwrap());
        let bcs = BoundaryConditions::all_zero_value(&m, Rank::Scalar).unwrap();
        let t = Field::new(m.clone(), vec![2.0, 5.0], &bcs).unwrap();
        // Flux 0.5 from cell 0 into cell 1 through the shared face; 0.25 out
        // of cell 1 through its right wall, where the value is 0.
        let mut flux = vec![0.0; 7];
        flux[0] = 0.5;
        flux[5] = 0.25;
        let c = convection(&flux, &t, Scheme::Upwind, Form::Extensive).unwrap();
        assert_eq!(c, vec![0.5 * 2.0, -0.5 * 2.0 + 0.25 * 0.0]);
        flux[0] = -0.5;
        let c = convection(&flux, &t, Scheme::Upwind, Form::Extensive).unwrap();
        assert_eq!(c, vec![-0.5 * 5.0, 0.5 * 5.0]);
    }

    #[test]
    fn gauss_consistency_on_a_skewed_mesh() {
        let m = Arc::new(
            generate_cylinder_mesh(&CylinderMeshParams {
                azimuthal_cells: 16,
                radial_cells: 4,
                downstream_cells: 4,
                ..Default::default()
            })
            .unwrap(),
        );
        let q = Field::from_fn(m.clone(), Rank::Scalar, |x| vec![(x[0] * 0.3).sin() + x[1] * x[1]]);
        let g = gauss_gradient(&q, Form::Extensive);
        let mut total = [0.0; 2];
        for c in 0..m.n_cells() {
            total[0] += g[2 * c];
            total[1] += g[2 * c + 1];
        }
        let mut boundary = [0.0; 2];
        for f in m.n_internal_faces()..m.n_faces() {
            let s = m.face_areas()[f];
            boundary[0] += s[0] * q.boundary_value(f)[0];
            boundary[1] += s[1] * q.boundary_value(f)[0];
        }
        assert!((total[0] - boundary[0]).abs() < 1e-10);
        assert!((total[1] - boundary[1]).abs() < 1e-10);
    }
}
