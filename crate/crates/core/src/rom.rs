//! Galerkin projection onto POD spaces and the reduced online solvers.
//!
//! The velocity is expanded as `u = u_L + sum_i a_i phi_i`, where the lift
//! `u_L` carries the (time-constant) boundary data and the modes satisfy
//! homogeneous conditions. The lift is trial function 0 of every reduced
//! operator with its coefficient fixed to one; test functions are the modes
//! only. The pressure is `p = sum_k b_k chi_k`.
//!
//! Momentum rows, implicit Euler:
//!
//! ```text
//! M (a+ - a) / dt + (a~+)^T C_i a~+ - nu (A a~+)_i + (B b+)_i = 0
//! ```
//!
//! closed either by the divergence constraint `P a~+ = 0` or by the pressure
//! Poisson rows `D b+ + (a~+)^T G_k a~+ - nu (N a~+)_k - F_k = 0`, with
//! `a~ = (1, a)`.

use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::Field;
use crate::mesh::Mesh;
use crate::ops::{convection_of, divergence_flux, gauss_gradient, laplacian, Form};
use crate::pod::{inner_product, weighted_dot, PodBasis, Provenance};

/// Largest supported reduced dimension; the convection tensors grow with
/// its cube.
pub const MAX_MODES: usize = 30;

const MAGIC: &[u8; 8] = b"ROMMODL1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stabilisation {
    /// Divergence constraint on the plain POD space.
    None,
    /// Divergence constraint on the supremizer-enriched space.
    Supremizer,
    /// Pressure Poisson equation.
    PressurePoisson,
}

impl Stabilisation {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(Stabilisation::None),
            "sup" => Some(Stabilisation::Supremizer),
            "ppe" => Some(Stabilisation::PressurePoisson),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stabilisation::None => "none",
            Stabilisation::Supremizer => "sup",
            Stabilisation::PressurePoisson => "ppe",
        }
    }

    fn code(self) -> u64 {
        match self {
            Stabilisation::None => 0,
            Stabilisation::Supremizer => 1,
            Stabilisation::PressurePoisson => 2,
        }
    }

    fn from_code(c: u64) -> Option<Self> {
        match c {
            0 => Some(Stabilisation::None),
            1 => Some(Stabilisation::Supremizer),
            2 => Some(Stabilisation::PressurePoisson),
            _ => None,
        }
    }
}

/// The spaces a reduced model lives in.
#[derive(Clone, Debug)]
pub struct RomSpaces {
    /// Velocity lift; `None` means a zero lift.
    pub lift: Option<Field>,
    pub velocity: PodBasis,
    pub pressure: Option<PodBasis>,
}

impl RomSpaces {
    pub fn new(lift: Option<Field>, velocity: PodBasis, pressure: Option<PodBasis>) -> Result<Self> {
        let mesh = velocity.modes[0].mesh_arc();
        if let Some(l) = &lift {
            if !l.is_compatible(&velocity.modes[0]) {
                return Err(Error::Mismatch("lift and velocity modes differ in mesh or rank".into()));
            }
        }
        if let Some(p) = &pressure {
            if !crate::field::same_mesh(p.modes[0].mesh_arc(), mesh) {
                return Err(Error::Mismatch("velocity and pressure bases live on different meshes".into()));
            }
        }
        Ok(Self {
            lift,
            velocity,
            pressure,
        })
    }

    pub fn mesh(&self) -> &Mesh {
        self.velocity.mesh()
    }

    pub fn n_velocity(&self) -> usize {
        self.velocity.len()
    }

    pub fn n_pressure(&self) -> usize {
        self.pressure.as_ref().map_or(0, |p| p.len())
    }

    fn lift_or_zero(&self) -> Field {
        self.lift
            .clone()
            .unwrap_or_else(|| Field::zeros(self.velocity.modes[0].mesh_arc().clone(), self.velocity.rank()))
    }

    /// Trial functions: lift, then modes.
    fn trial(&self) -> Vec<Field> {
        let mut t = Vec::with_capacity(self.velocity.len() + 1);
        t.push(self.lift_or_zero());
        t.extend(self.velocity.modes.iter().cloned());
        t
    }
}

/// Pressure Poisson rows.
#[derive(Clone, Debug, PartialEq)]
pub struct PoissonOperators {
    /// `D_ij = <grad chi_i, grad chi_j>`.
    pub laplacian: DMatrix<f64>,
    /// `G_k[(j, l)] = <grad chi_k, div(u_j (x) u_l)>` over trial functions.
    pub convection: Vec<DMatrix<f64>>,
    /// Boundary term `<n x grad chi_k, curl u_j>` over trial functions.
    pub boundary: DMatrix<f64>,
    pub forcing: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReducedModel {
    pub stabilisation: Stabilisation,
    pub n_velocity: usize,
    pub n_supremizer: usize,
    pub n_pressure: usize,
    /// `M_ij = <phi_i, phi_j>`.
    pub mass: DMatrix<f64>,
    /// `A_ij = <phi_i, laplacian u_j>` over trial functions.
    pub diffusion: DMatrix<f64>,
    /// `B_ij = <phi_i, grad chi_j>`.
    pub gradient: DMatrix<f64>,
    /// `P_ij = <chi_i, div u_j>` over trial functions.
    pub divergence: DMatrix<f64>,
    /// `C_i[(j, k)] = <phi_i, div(u_j (x) u_k)>` over trial functions.
    pub convection: Vec<DMatrix<f64>>,
    pub poisson: Option<PoissonOperators>,
}

impl ReducedModel {
    /// Velocity unknowns (modes plus supremizers).
    pub fn n(&self) -> usize {
        self.n_velocity + self.n_supremizer
    }

    /// The square diffusion block over the modes, without the lift column.
    pub fn diffusion_block(&self) -> DMatrix<f64> {
        self.diffusion.columns(1, self.n()).into_owned()
    }

    pub fn divergence_block(&self) -> DMatrix<f64> {
        self.divergence.columns(1, self.n()).into_owned()
    }

    /// `((a~)^T C_i a~)_i`.
    pub fn convection_term(&self, a: &DVector<f64>) -> DVector<f64> {
        let at = extend(a);
        contract(&self.convection, &at)
    }

    /// `((a~)^T G_k a~)_k`; zero without pressure Poisson rows.
    pub fn poisson_convection_term(&self, a: &DVector<f64>) -> DVector<f64> {
        match &self.poisson {
            Some(p) => contract(&p.convection, &extend(a)),
            None => DVector::zeros(self.n_pressure),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut r)
    }

    /// Versioned little-endian binary layout; matrices row-major.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        for v in [
            self.stabilisation.code(),
            self.n_velocity as u64,
            self.n_supremizer as u64,
            self.n_pressure as u64,
            self.poisson.is_some() as u64,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        write_matrix(w, &self.mass)?;
        write_matrix(w, &self.diffusion)?;
        write_matrix(w, &self.gradient)?;
        write_matrix(w, &self.divergence)?;
        for c in &self.convection {
            write_matrix(w, c)?;
        }
        if let Some(p) = &self.poisson {
            write_matrix(w, &p.laplacian)?;
            for g in &p.convection {
                write_matrix(w, g)?;
            }
            write_matrix(w, &p.boundary)?;
            write_matrix(w, &DMatrix::from_column_slice(p.forcing.len(), 1, p.forcing.as_slice()))?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a reduced-model file".into()));
        }
        let stabilisation = Stabilisation::from_code(read_u64(r)?)
            .ok_or_else(|| Error::Format("unknown stabilisation code".into()))?;
        let n_velocity = read_dim(r)?;
        let n_supremizer = read_dim(r)?;
        let n_pressure = read_dim(r)?;
        let has_poisson = read_u64(r)? == 1;
        let n = n_velocity + n_supremizer;
        if n == 0 || n > MAX_MODES {
            return Err(Error::Format(format!("unsupported velocity dimension {n}")));
        }
        let nt = n + 1;
        let mass = read_matrix(r, n, n)?;
        let diffusion = read_matrix(r, n, nt)?;
        let gradient = read_matrix(r, n, n_pressure)?;
        let divergence = read_matrix(r, n_pressure, nt)?;
        let convection = (0..n).map(|_| read_matrix(r, nt, nt)).collect::<Result<Vec<_>>>()?;
        let poisson = if has_poisson {
            let laplacian = read_matrix(r, n_pressure, n_pressure)?;
            let convection = (0..n_pressure)
                .map(|_| read_matrix(r, nt, nt))
                .collect::<Result<Vec<_>>>()?;
            let boundary = read_matrix(r, n_pressure, nt)?;
            let forcing = read_matrix(r, n_pressure, 1)?.column(0).into_owned();
            Some(PoissonOperators {
                laplacian,
                convection,
                boundary,
                forcing,
            })
        } else {
            None
        };
        Ok(Self {
            stabilisation,
            n_velocity,
            n_supremizer,
            n_pressure,
            mass,
            diffusion,
            gradient,
            divergence,
            convection,
            poisson,
        })
    }

    /// Text manifest: dimensions, stabilisation and the given provenance
    /// entries, one `key = value` per line.
    pub fn manifest(&self, provenance: &[(String, String)]) -> String {
        let mut s = format!(
            "format = {}\nstabilisation = {}\nn_velocity = {}\nn_supremizer = {}\nn_pressure = {}\n",
            String::from_utf8_lossy(MAGIC),
            self.stabilisation.as_str(),
            self.n_velocity,
            self.n_supremizer,
            self.n_pressure
        );
        for (k, v) in provenance {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }
}

fn write_matrix(w: &mut impl Write, m: &DMatrix<f64>) -> Result<()> {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            w.write_all(&m[(i, j)].to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_dim(r: &mut impl Read) -> Result<usize> {
    let v = read_u64(r)?;
    if v > MAX_MODES as u64 {
        return Err(Error::Format(format!("dimension {v} exceeds {MAX_MODES}")));
    }
    Ok(v as usize)
}

fn read_matrix(r: &mut impl Read, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::zeros(rows, cols);
    let mut b = [0u8; 8];
    for i in 0..rows {
        for j in 0..cols {
            r.read_exact(&mut b)?;
            m[(i, j)] = f64::from_le_bytes(b);
        }
    }
    Ok(m)
}

fn extend(a: &DVector<f64>) -> DVector<f64> {
    let mut at = DVector::zeros(a.len() + 1);
    at[0] = 1.0;
    at.rows_mut(1, a.len()).copy_from(a);
    at
}

fn contract(tensor: &[DMatrix<f64>], at: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(tensor.len(), tensor.iter().map(|c| at.dot(&(c * at))))
}

/// Volume-weighted inner product of two cell arrays with `nc` components.
fn vdot(mesh: &Mesh, nc: usize, a: &[f64], b: &[f64]) -> f64 {
    weighted_dot(mesh, nc, a, b)
}

/// Computes every reduced operator of the chosen formulation.
pub fn project_offline(spaces: &RomSpaces, stabilisation: Stabilisation) -> Result<ReducedModel> {
    let n = spaces.n_velocity();
    let np = spaces.n_pressure();
    if n > MAX_MODES || np > MAX_MODES {
        return Err(Error::InvalidInput(format!(
            "reduced dimension ({n} velocity, {np} pressure) exceeds the supported maximum of {MAX_MODES}"
        )));
    }
    let enriched = spaces.velocity.provenance == Provenance::EnrichedVelocity;
    match stabilisation {
        Stabilisation::Supremizer if !enriched => {
            return Err(Error::InvalidInput(
                "supremizer stabilisation needs an enriched velocity basis".into(),
            ))
        }
        Stabilisation::Supremizer | Stabilisation::PressurePoisson if np == 0 => {
            return Err(Error::InvalidInput(format!(
                "{} stabilisation needs a pressure basis",
                stabilisation.as_str()
            )))
        }
        _ => {}
    }
    let mesh = spaces.mesh();
    let nc = 2;
    let trial = spaces.trial();
    let nt = trial.len();
    let test = &spaces.velocity.modes;
    let pressure: &[Field] = spaces.pressure.as_ref().map_or(&[], |p| &p.modes);

    let mut mass = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = inner_product(&test[i], &test[j])?;
            mass[(i, j)] = v;
            mass[(j, i)] = v;
        }
    }

    let laps = trial
        .par_iter()
        .map(|t| laplacian(t, 1.0, Form::Intensive))
        .collect::<Result<Vec<_>>>()?;
    let mut diffusion = DMatrix::zeros(n, nt);
    for i in 0..n {
        for j in 0..nt {
            diffusion[(i, j)] = vdot(mesh, nc, test[i].cells(), &laps[j]);
        }
    }

    let pgrads: Vec<Vec<f64>> = pressure.iter().map(|p| gauss_gradient(p, Form::Intensive)).collect();
    let mut gradient = DMatrix::zeros(n, np);
    for i in 0..n {
        for k in 0..np {
            gradient[(i, k)] = vdot(mesh, nc, test[i].cells(), &pgrads[k]);
        }
    }

    let divs = trial
        .iter()
        .map(|t| divergence_flux(t, Form::Intensive))
        .collect::<Result<Vec<_>>>()?;
    let mut divergence = DMatrix::zeros(np, nt);
    for k in 0..np {
        for j in 0..nt {
            divergence[(k, j)] = vdot(mesh, 1, pressure[k].cells(), &divs[j]);
        }
    }

    let ppe = stabilisation == Stabilisation::PressurePoisson;
    // One pass over trial pairs fills both convection tensors.
    let rows: Vec<(Vec<Vec<f64>>, Vec<Vec<f64>>)> = (0..nt)
        .into_par_iter()
        .map(|j| -> Result<_> {
            let mut c = vec![vec![0.0; nt]; n];
            let mut g = vec![vec![0.0; nt]; if ppe { np } else { 0 }];
            for l in 0..nt {
                let conv = convection_of(&trial[j], &trial[l], Form::Intensive)?;
                for i in 0..n {
                    c[i][l] = vdot(mesh, nc, test[i].cells(), &conv);
                }
                for k in 0..g.len() {
                    g[k][l] = vdot(mesh, nc, &pgrads[k], &conv);
                }
            }
            Ok((c, g))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut convection = vec![DMatrix::zeros(nt, nt); n];
    let mut pconv = vec![DMatrix::zeros(nt, nt); if ppe { np } else { 0 }];
    for (j, (c, g)) in rows.into_iter().enumerate() {
        for i in 0..n {
            for l in 0..nt {
                convection[i][(j, l)] = c[i][l];
            }
        }
        for k in 0..g.len() {
            for l in 0..nt {
                pconv[k][(j, l)] = g[k][l];
            }
        }
    }

    let poisson = if ppe {
        let mut d = DMatrix::zeros(np, np);
        for i in 0..np {
            for j in i..np {
                let v = vdot(mesh, 2, &pgrads[i], &pgrads[j]);
                d[(i, j)] = v;
                d[(j, i)] = v;
            }
        }
        Some(PoissonOperators {
            laplacian: d,
            convection: pconv,
            boundary: boundary_term(mesh, &trial, pressure),
            forcing: DVector::zeros(np),
        })
    } else {
        None
    };

    let n_supremizer = n - spaces.velocity.primary_count;
    Ok(ReducedModel {
        stabilisation,
        n_velocity: spaces.velocity.primary_count,
        n_supremizer,
        n_pressure: np,
        mass,
        diffusion,
        gradient,
        divergence,
        convection,
        poisson,
    })
}

/// `N_kj = sum_boundary |S_f| (n x grad chi_k)_z (curl u_j)_z`, with both
/// gradients taken as the owner-cell Gauss gradient.
fn boundary_term(mesh: &Mesh, trial: &[Field], pressure: &[Field]) -> DMatrix<f64> {
    let pg: Vec<Vec<f64>> = pressure.iter().map(|p| gauss_gradient(p, Form::Intensive)).collect();
    let ug: Vec<Vec<f64>> = trial.iter().map(|u| gauss_gradient(u, Form::Intensive)).collect();
    let mut out = DMatrix::zeros(pressure.len(), trial.len());
    for f in mesh.n_internal_faces()..mesh.n_faces() {
        let c = mesh.owner()[f];
        let s = mesh.face_areas()[f];
        let mag = mesh.face_magnitudes()[f];
        let nrm = [s[0] / mag, s[1] / mag];
        for (k, g) in pg.iter().enumerate() {
            let cross = nrm[0] * g[2 * c + 1] - nrm[1] * g[2 * c];
            for (j, u) in ug.iter().enumerate() {
                let curl = u[4 * c + 2] - u[4 * c + 1];
                out[(k, j)] += mag * cross * curl;
            }
        }
    }
    out
}

/// Coefficients of `u0 - lift` in the velocity basis: `M a0 = e`,
/// `e_i = <phi_i, u0 - lift>`.
pub fn project_initial_condition(model: &ReducedModel, spaces: &RomSpaces, u0: &Field) -> Result<DVector<f64>> {
    let n = model.n();
    if spaces.n_velocity() != n {
        return Err(Error::Mismatch(format!(
            "model has {n} velocity unknowns, basis has {} modes",
            spaces.n_velocity()
        )));
    }
    let mut rhs = DVector::zeros(n);
    for (i, m) in spaces.velocity.modes.iter().enumerate() {
        rhs[i] = inner_product(m, u0)?;
        if let Some(l) = &spaces.lift {
            rhs[i] -= inner_product(m, l)?;
        }
    }
    model
        .mass
        .clone()
        .cholesky()
        .map(|c| c.solve(&rhs))
        .ok_or_else(|| Error::Singular("velocity mass matrix is not positive definite".into()))
}

/// Velocity and pressure fields of a reduced state.
pub fn reconstruct(spaces: &RomSpaces, a: &DVector<f64>, b: &DVector<f64>) -> Result<(Field, Field)> {
    if a.len() != spaces.n_velocity() || b.len() != spaces.n_pressure() {
        return Err(Error::Mismatch(format!(
            "coefficients ({}, {}) do not match the bases ({}, {})",
            a.len(),
            b.len(),
            spaces.n_velocity(),
            spaces.n_pressure()
        )));
    }
    let mut u = spaces.lift_or_zero();
    for (c, m) in a.iter().zip(&spaces.velocity.modes) {
        u.axpy(*c, m)?;
    }
    let mesh = spaces.velocity.modes[0].mesh_arc().clone();
    let mut p = Field::zeros(mesh, crate::field::Rank::Scalar);
    if let Some(pb) = &spaces.pressure {
        for (c, m) in b.iter().zip(&pb.modes) {
            p.axpy(*c, m)?;
        }
    }
    Ok((u, p))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RomState {
    pub a: DVector<f64>,
    pub b: DVector<f64>,
    pub time: f64,
    pub viscosity: f64,
}

impl RomState {
    pub fn new(model: &ReducedModel, a: DVector<f64>, time: f64, viscosity: f64) -> Result<Self> {
        if a.len() != model.n() {
            return Err(Error::Mismatch(format!(
                "{} velocity coefficients for a model with {}",
                a.len(),
                model.n()
            )));
        }
        Ok(Self {
            a,
            b: DVector::zeros(model.n_pressure),
            time,
            viscosity,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonSettings {
    pub residual_tolerance: f64,
    pub update_tolerance: f64,
    pub max_iterations: usize,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        Self {
            residual_tolerance: 1e-9,
            update_tolerance: 1e-10,
            max_iterations: 100,
        }
    }
}

/// Residual and Jacobian of one implicit Euler step at `x = (a+, b+)`.
fn system(
    model: &ReducedModel,
    prev: &DVector<f64>,
    x: &DVector<f64>,
    nu: f64,
    dt: f64,
) -> (DVector<f64>, DMatrix<f64>) {
    let n = model.n();
    let np = model.n_pressure;
    let a = x.rows(0, n).into_owned();
    let b = x.rows(n, np).into_owned();
    let at = extend(&a);
    let mut r = DVector::zeros(n + np);
    let mut j = DMatrix::zeros(n + np, n + np);

    let da = (&a - prev) / dt;
    let mom = &model.mass * da - nu * (&model.diffusion * &at) + &model.gradient * &b;
    r.rows_mut(0, n).copy_from(&mom);
    j.view_mut((0, 0), (n, n)).copy_from(&(&model.mass / dt - nu * model.diffusion_block()));
    j.view_mut((0, n), (n, np)).copy_from(&model.gradient);
    for (i, c) in model.convection.iter().enumerate() {
        let ca = c * &at;
        let cta = c.tr_mul(&at);
        r[i] += at.dot(&ca);
        for l in 0..n {
            j[(i, l)] += ca[l + 1] + cta[l + 1];
        }
    }

    match &model.poisson {
        Some(p) => {
            let rows = &p.laplacian * &b - nu * (&p.boundary * &at) - &p.forcing;
            r.rows_mut(n, np).copy_from(&rows);
            j.view_mut((n, n), (np, np)).copy_from(&p.laplacian);
            j.view_mut((n, 0), (np, n))
                .copy_from(&(-nu * p.boundary.columns(1, n)));
            for (k, g) in p.convection.iter().enumerate() {
                let ga = g * &at;
                let gta = g.tr_mul(&at);
                r[n + k] += at.dot(&ga);
                for l in 0..n {
                    j[(n + k, l)] += ga[l + 1] + gta[l + 1];
                }
            }
        }
        None => {
            r.rows_mut(n, np).copy_from(&(&model.divergence * &at));
            j.view_mut((n, 0), (np, n)).copy_from(&model.divergence_block());
        }
    }
    (r, j)
}

fn solve_dense(model: &ReducedModel, mut j: DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(x) = j.clone().lu().solve(rhs) {
        if x.iter().all(|v| v.is_finite()) {
            return Ok(x);
        }
    }
    if let Some(p) = &model.poisson {
        // Pressure datum: only reached when D is singular in exact arithmetic.
        let n = model.n();
        let np = model.n_pressure;
        let shift = 1e-12 * p.laplacian.trace() / np as f64;
        for k in 0..np {
            j[(n + k, n + k)] += shift;
        }
        if let Some(x) = j.lu().solve(rhs) {
            return Ok(x);
        }
    }
    Err(Error::Singular("reduced Jacobian".into()))
}

/// Newton iterations of one implicit Euler step; returns the new state and
/// the residual history.
pub fn step(
    model: &ReducedModel,
    state: &RomState,
    dt: f64,
    settings: &NewtonSettings,
) -> Result<(RomState, Vec<f64>)> {
    if !(dt > 0.0) {
        return Err(Error::InvalidInput(format!("time step {dt} must be positive")));
    }
    let n = model.n();
    let np = model.n_pressure;
    let mut x = DVector::zeros(n + np);
    x.rows_mut(0, n).copy_from(&state.a);
    x.rows_mut(n, np).copy_from(&state.b);
    let mut history = Vec::new();
    for _ in 0..settings.max_iterations {
        let (r, j) = system(model, &state.a, &x, state.viscosity, dt);
        let rn = r.norm();
        history.push(rn);
        if !rn.is_finite() {
            break;
        }
        if rn <= settings.residual_tolerance {
            return Ok((finish(state, x, n, np, dt), history));
        }
        let dx = solve_dense(model, j, &(-r))?;
        x += &dx;
        if dx.norm() <= settings.update_tolerance * x.norm() {
            return Ok((finish(state, x, n, np, dt), history));
        }
    }
    Err(Error::Newton { residuals: history })
}

fn finish(state: &RomState, x: DVector<f64>, n: usize, np: usize, dt: f64) -> RomState {
    RomState {
        a: x.rows(0, n).into_owned(),
        b: x.rows(n, np).into_owned(),
        time: state.time + dt,
        viscosity: state.viscosity,
    }
}

pub fn step_sup_rom(model: &ReducedModel, state: &RomState, dt: f64) -> Result<RomState> {
    if model.stabilisation == Stabilisation::PressurePoisson {
        return Err(Error::InvalidInput("model carries pressure Poisson rows".into()));
    }
    step(model, state, dt, &NewtonSettings::default()).map(|s| s.0)
}

pub fn step_ppe_rom(model: &ReducedModel, state: &RomState, dt: f64) -> Result<RomState> {
    if model.stabilisation != Stabilisation::PressurePoisson {
        return Err(Error::InvalidInput("model has no pressure Poisson rows".into()));
    }
    step(model, state, dt, &NewtonSettings::default()).map(|s| s.0)
}

/// Recorded reduced trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub velocity: Vec<DVector<f64>>,
    pub pressure: Vec<DVector<f64>>,
    /// Wall-clock seconds of the stepping loop.
    pub wall_seconds: f64,
    /// Set when the integration stopped early.
    pub failure: Option<String>,
}

/// Integrates `n_steps` implicit Euler steps, recording every `every`-th
/// state. A failing step ends the integration and is reported in
/// `failure`, keeping the states computed so far.
pub fn integrate(
    model: &ReducedModel,
    initial: RomState,
    dt: f64,
    n_steps: usize,
    every: usize,
    settings: &NewtonSettings,
) -> Result<Trajectory> {
    if every == 0 {
        return Err(Error::InvalidInput("recording interval must be positive".into()));
    }
    let mut state = initial;
    let mut out = Trajectory {
        times: Vec::new(),
        velocity: Vec::new(),
        pressure: Vec::new(),
        wall_seconds: 0.0,
        failure: None,
    };
    let start = Instant::now();
    for k in 1..=n_steps {
        match step(model, &state, dt, settings) {
            Ok((s, _)) => state = s,
            Err(e) => {
                out.failure = Some(
                    Error::Step {
                        step: k,
                        time: state.time + dt,
                        source: Box::new(e),
                    }
                    .to_string(),
                );
                break;
            }
        }
        if k % every == 0 {
            out.times.push(state.time);
            out.velocity.push(state.a.clone());
            out.pressure.push(state.b.clone());
        }
    }
    out.wall_seconds = start.elapsed().as_secs_f64();
    Ok(out)
}

/// Discrete inf-sup constant of a velocity/pressure basis pair: the square
/// root of the smallest eigenvalue of `P K^-1 P^T q = beta^2 M_p q`.
pub fn infsup_constant(velocity: &PodBasis, pressure: &PodBasis) -> Result<f64> {
    let mesh = velocity.mesh();
    let n = velocity.len();
    let np = pressure.len();
    let grads: Vec<Vec<f64>> = velocity
        .modes
        .iter()
        .map(|m| gauss_gradient(m, Form::Intensive))
        .collect();
    let divs = velocity
        .modes
        .iter()
        .map(|m| divergence_flux(m, Form::Intensive))
        .collect::<Result<Vec<_>>>()?;
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = vdot(mesh, 4, &grads[i], &grads[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    let mut p = DMatrix::zeros(np, n);
    for i in 0..np {
        for j in 0..n {
            p[(i, j)] = vdot(mesh, 1, pressure.modes[i].cells(), &divs[j]);
        }
    }
    let mp = pressure.gram();
    let kc = k
        .cholesky()
        .ok_or_else(|| Error::Singular("velocity gradient Gram matrix".into()))?;
    let s = &p * kc.solve(&p.transpose());
    let lp = mp
        .cholesky()
        .ok_or_else(|| Error::Singular("pressure Gram matrix".into()))?
        .l();
    let li = lp
        .try_inverse()
        .ok_or_else(|| Error::Singular("pressure Gram factor".into()))?;
    let mut sym = &li * s * li.transpose();
    sym = (&sym + sym.transpose()) * 0.5;
    let lmin = sym.symmetric_eigenvalues().min();
    Ok(lmin.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{BcKind, BoundaryConditions, Rank};
    use crate::mesh::generate_cavity_mesh;
    use crate::pod::compute_pod;
    use crate::snapshot::{Location, SnapshotRecord, SnapshotSet};
    use crate::supremizer::{enrich, exact_supremizers};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    /// Smooth synthetic snapshots on the unit square: a few wall-bounded
    /// vortices with time-varying amplitudes.
    fn synthetic(n: usize, seed: u64) -> (Arc<Mesh>, SnapshotSet, SnapshotSet) {
        let mesh = Arc::new(generate_cavity_mesh(n, 1.0).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let amps: Vec<[f64; 4]> = (0..12)
            .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let pi = std::f64::consts::PI;
        let mut u = Vec::new();
        let mut p = Vec::new();
        for (t, a) in amps.iter().enumerate() {
            let vel = Field::from_fn(mesh.clone(), Rank::Vector, |x| {
                let (s1, c1) = ((pi * x[0]).sin(), (pi * x[0]).cos());
                let (s2, c2) = ((pi * x[1]).sin(), (pi * x[1]).cos());
                let (s3, c3) = ((2.0 * pi * x[0]).sin(), (2.0 * pi * x[0]).cos());
                vec![
                    a[0] * s1 * s1 * 2.0 * s2 * c2 + a[1] * s3 * s3 * s2 * c2,
                    -a[0] * 2.0 * s1 * c1 * s2 * s2 - a[1] * 2.0 * s3 * c3 * s2 * s2,
                ]
            });
            let pre = Field::from_fn(mesh.clone(), Rank::Scalar, |x| {
                vec![a[2] * (pi * x[0]).cos() * (pi * x[1]).cos() + a[3] * (2.0 * pi * x[0]).cos()]
            });
            u.push(SnapshotRecord {
                parameter: 1.0,
                time: t as f64,
                values: vel.cells().to_vec(),
            });
            p.push(SnapshotRecord {
                parameter: 1.0,
                time: t as f64,
                values: pre.cells().to_vec(),
            });
        }
        let us = SnapshotSet::new(mesh.clone(), Location::Cells(Rank::Vector), 1, 12, u).unwrap();
        let ps = SnapshotSet::new(mesh.clone(), Location::Cells(Rank::Scalar), 1, 12, p).unwrap();
        (mesh, us, ps)
    }

    fn spaces(kind: Stabilisation) -> RomSpaces {
        let (mesh, us, ps) = synthetic(12, 5);
        let hv = BoundaryConditions::all_zero_value(&mesh, Rank::Vector).unwrap();
        let hp = BoundaryConditions::uniform(&mesh, Rank::Scalar, BcKind::ZeroGradient).unwrap();
        let vel = compute_pod(&us, 2, &hv, Provenance::Velocity).unwrap();
        let pre = compute_pod(&ps, 2, &hp, Provenance::Pressure).unwrap();
        let lift = Field::from_fn(mesh.clone(), Rank::Vector, |x| vec![x[1] * x[1], 0.0]);
        let velocity = if kind == Stabilisation::Supremizer {
            enrich(&vel, &exact_supremizers(&pre).unwrap()).unwrap()
        } else {
            vel
        };
        RomSpaces::new(Some(lift), velocity, Some(pre)).unwrap()
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
        DVector::from_iterator(n, (0..n).map(|_| rng.gen_range(-1.0..1.0)))
    }

    #[test]
    fn orthonormal_basis_has_identity_mass() {
        let sp = spaces(Stabilisation::None);
        let m = project_offline(&sp, Stabilisation::None).unwrap();
        assert!((&m.mass - DMatrix::identity(2, 2)).amax() < 1e-8);
        assert_eq!(m.n(), 2);
    }

    #[test]
    fn supremizer_needs_enrichment() {
        let sp = spaces(Stabilisation::None);
        assert!(project_offline(&sp, Stabilisation::Supremizer).is_err());
    }

    #[test]
    fn tensor_contractions_match_direct_projection() {
        let sp = spaces(Stabilisation::PressurePoisson);
        let m = project_offline(&sp, Stabilisation::PressurePoisson).unwrap();
        let mesh = sp.mesh();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let a = random_vec(&mut rng, m.n());
            let b = DVector::zeros(m.n_pressure);
            let (u, _) = reconstruct(&sp, &a, &b).unwrap();
            let conv = convection_of(&u, &u, Form::Intensive).unwrap();
            let ct = m.convection_term(&a);
            let gt = m.poisson_convection_term(&a);
            for (i, phi) in sp.velocity.modes.iter().enumerate() {
                let direct = vdot(mesh, 2, phi.cells(), &conv);
                assert!((ct[i] - direct).abs() <= 1e-8 * direct.abs().max(1.0));
            }
            for (k, chi) in sp.pressure.as_ref().unwrap().modes.iter().enumerate() {
                let g = gauss_gradient(chi, Form::Intensive);
                let direct = vdot(mesh, 2, &g, &conv);
                assert!((gt[k] - direct).abs() <= 1e-8 * direct.abs().max(1.0));
            }
        }
    }

    #[test]
    fn ppe_pressure_rows_match_independent_solve() {
        let sp = spaces(Stabilisation::PressurePoisson);
        let m = project_offline(&sp, Stabilisation::PressurePoisson).unwrap();
        let p = m.poisson.as_ref().unwrap();
        assert!(p.forcing.iter().all(|v| *v == 0.0));
        assert!((&p.laplacian - p.laplacian.transpose()).amax() == 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_vec(&mut rng, m.n()) * 0.1;
        let nu = 0.01;
        // Least-squares oracle: minimise |grad p_r + div(u (x) u)|^2 - nu
        // boundary work over p_r in span(chi), via normal equations built
        // from fields.
        let (u, _) = reconstruct(&sp, &a, &DVector::zeros(m.n_pressure)).unwrap();
        let conv = convection_of(&u, &u, Form::Intensive).unwrap();
        let chis = &sp.pressure.as_ref().unwrap().modes;
        let grads: Vec<Vec<f64>> = chis.iter().map(|c| gauss_gradient(c, Form::Intensive)).collect();
        let np = chis.len();
        let mut d = DMatrix::zeros(np, np);
        let mut rhs = DVector::zeros(np);
        let nb = m.poisson.as_ref().unwrap().boundary.clone() * extend(&a);
        for i in 0..np {
            for j in 0..np {
                d[(i, j)] = vdot(sp.mesh(), 2, &grads[i], &grads[j]);
            }
            rhs[i] = -vdot(sp.mesh(), 2, &grads[i], &conv) + nu * nb[i];
        }
        let b_oracle = d.lu().solve(&rhs).unwrap();
        // Pressure rows at a fixed velocity are linear in b.
        let mut x = DVector::zeros(m.n() + np);
        x.rows_mut(0, m.n()).copy_from(&a);
        let (r0, j) = system(&m, &a, &x, nu, 1.0);
        let jb = j.view((m.n(), m.n()), (np, np)).into_owned();
        let b = jb.lu().solve(&(-r0.rows(m.n(), np).into_owned())).unwrap();
        assert!((&b - &b_oracle).amax() <= 1e-10 * b_oracle.amax().max(1e-300));
    }

    #[test]
    fn analytic_jacobian_matches_finite_differences() {
        for kind in [Stabilisation::Supremizer, Stabilisation::PressurePoisson] {
            let sp = spaces(kind);
            let m = project_offline(&sp, kind).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let size = m.n() + m.n_pressure;
            let prev = random_vec(&mut rng, m.n());
            let x = random_vec(&mut rng, size);
            let (r, j) = system(&m, &prev, &x, 0.02, 0.1);
            let h = 1e-6;
            for c in 0..size {
                let mut xp = x.clone();
                xp[c] += h;
                let (rp, _) = system(&m, &prev, &xp, 0.02, 0.1);
                let fd = (rp - &r) / h;
                for row in 0..size {
                    assert!((fd[row] - j[(row, c)]).abs() < 1e-4 * (1.0 + j[(row, c)].abs()));
                }
            }
        }
    }

    #[test]
    fn diffusion_block_is_symmetric_and_dissipative() {
        let sp = spaces(Stabilisation::Supremizer);
        let m = project_offline(&sp, Stabilisation::Supremizer).unwrap();
        let a = m.diffusion_block();
        let scale = a.amax();
        assert!((&a - a.transpose()).amax() <= 1e-6 * scale);
        for l in a.symmetric_eigenvalues().iter() {
            assert!(*l <= 1e-10 * scale);
        }
    }

    #[test]
    fn initial_condition_and_reconstruction() {
        let sp = spaces(Stabilisation::Supremizer);
        let m = project_offline(&sp, Stabilisation::Supremizer).unwrap();
        let mut u0 = sp.lift.clone().unwrap();
        u0.axpy(1.0, &sp.velocity.modes[0]).unwrap();
        let a0 = project_initial_condition(&m, &sp, &u0).unwrap();
        assert!((a0[0] - 1.0).abs() < 1e-10);
        for v in a0.iter().skip(1) {
            assert!(v.abs() < 1e-10);
        }
        let (u, p) = reconstruct(&sp, &a0, &DVector::zeros(m.n_pressure)).unwrap();
        for (x, y) in u.cells().iter().zip(u0.cells()) {
            assert!((x - y).abs() < 1e-9);
        }
        assert_eq!(p.max_abs(), 0.0);
        assert!(reconstruct(&sp, &DVector::zeros(1), &DVector::zeros(m.n_pressure)).is_err());
    }

    #[test]
    fn zero_state_without_lift_stays_zero() {
        let mut sp = spaces(Stabilisation::PressurePoisson);
        sp.lift = None;
        let m = project_offline(&sp, Stabilisation::PressurePoisson).unwrap();
        let s0 = RomState::new(&m, DVector::zeros(m.n()), 0.0, 0.01).unwrap();
        let s1 = step_ppe_rom(&m, &s0, 0.1).unwrap();
        assert_eq!(s1.a.amax(), 0.0);
        assert_eq!(s1.b.amax(), 0.0);
        assert!(step_sup_rom(&m, &s0, 0.1).is_err());
    }

    #[test]
    fn one_mode_model_matches_quadratic_root() {
        let (mesh, us, _) = synthetic(10, 8);
        let hv = BoundaryConditions::all_zero_value(&mesh, Rank::Vector).unwrap();
        let vel = compute_pod(&us, 1, &hv, Provenance::Velocity).unwrap();
        let sp = RomSpaces::new(None, vel, None).unwrap();
        let m = project_offline(&sp, Stabilisation::None).unwrap();
        let k = m.diffusion[(0, 1)];
        let c = m.convection[0][(1, 1)];
        let (nu, dt, a0) = (0.05, 0.1, 0.7);
        let s0 = RomState::new(&m, DVector::from_element(1, a0), 0.0, nu).unwrap();
        let s1 = step_sup_rom(&m, &s0, dt).unwrap();
        // (a - a0)/dt + c a^2 - nu k a = 0, root nearest a0.
        let (qa, qb, qc) = (c, 1.0 / dt - nu * k, -a0 / dt);
        let expected = if qa.abs() < 1e-14 {
            -qc / qb
        } else {
            let disc = (qb * qb - 4.0 * qa * qc).sqrt();
            let r1 = (-qb + disc) / (2.0 * qa);
            let r2 = (-qb - disc) / (2.0 * qa);
            if (r1 - a0).abs() < (r2 - a0).abs() { r1 } else { r2 }
        };
        assert!((s1.a[0] - expected).abs() < 1e-10 * expected.abs().max(1.0));
    }

    #[test]
    fn galerkin_consistency_of_one_step() {
        let sp = spaces(Stabilisation::Supremizer);
        let m = project_offline(&sp, Stabilisation::Supremizer).unwrap();
        let mesh = sp.mesh();
        let a0 = DVector::from_vec((0..m.n()).map(|i| 0.3 / (i + 1) as f64).collect());
        let (nu, dt) = (0.02, 0.05);
        let s0 = RomState::new(&m, a0.clone(), 0.0, nu).unwrap();
        let s1 = step_sup_rom(&m, &s0, dt).unwrap();
        let (u0, _) = reconstruct(&sp, &a0, &DVector::zeros(m.n_pressure)).unwrap();
        let (u1, p1) = reconstruct(&sp, &s1.a, &s1.b).unwrap();
        // Full-order residual of the same step, projected onto the test space.
        let conv = convection_of(&u1, &u1, Form::Intensive).unwrap();
        let lap = laplacian(&u1, nu, Form::Intensive).unwrap();
        let gp = gauss_gradient(&p1, Form::Intensive);
        let r: Vec<f64> = (0..u1.cells().len())
            .map(|i| (u1.cells()[i] - u0.cells()[i]) / dt + conv[i] - lap[i] + gp[i])
            .collect();
        let scale = vdot(mesh, 2, &r, &r).sqrt().max(1.0);
        for phi in &sp.velocity.modes {
            assert!(vdot(mesh, 2, phi.cells(), &r).abs() < 1e-8 * scale);
        }
        let div = divergence_flux(&u1, Form::Intensive).unwrap();
        for chi in &sp.pressure.as_ref().unwrap().modes {
            assert!(vdot(mesh, 1, chi.cells(), &div).abs() < 1e-8);
        }
    }

    #[test]
    fn infsup_grows_with_supremizers() {
        let sp = spaces(Stabilisation::None);
        let pre = sp.pressure.clone().unwrap();
        let sups = exact_supremizers(&pre).unwrap();
        let mut prev = infsup_constant(&sp.velocity, &pre).unwrap();
        for k in 1..=sups.len() {
            let e = enrich(&sp.velocity, &sups.truncated(k).unwrap()).unwrap();
            let beta = infsup_constant(&e, &pre).unwrap();
            assert!(beta >= prev - 1e-12);
            prev = beta;
        }
        assert!(prev > 0.0);
    }

    #[test]
    fn binary_round_trip() {
        let sp = spaces(Stabilisation::PressurePoisson);
        let m = project_offline(&sp, Stabilisation::PressurePoisson).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        let back = ReducedModel::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, m);
        assert!(ReducedModel::read_from(&mut &buf[..20]).is_err());
        assert!(m.manifest(&[("velocity".into(), "abc".into())]).contains("velocity = abc"));
    }

    #[test]
    fn mode_cap_is_enforced() {
        let (mesh, _, _) = synthetic(8, 1);
        let hv = BoundaryConditions::all_zero_value(&mesh, Rank::Vector).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let recs = (0..40)
            .map(|t| SnapshotRecord {
                parameter: 0.0,
                time: t as f64,
                values: (0..2 * mesh.n_cells()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            })
            .collect();
        let set = SnapshotSet::new(mesh.clone(), Location::Cells(Rank::Vector), 1, 40, recs).unwrap();
        let vel = compute_pod(&set, 31, &hv, Provenance::Velocity).unwrap();
        let sp = RomSpaces::new(None, vel, None).unwrap();
        assert!(project_offline(&sp, Stabilisation::None).is_err());
    }
}
