//! Transient incompressible solver: segregated PIMPLE-style momentum
//! predictor and pressure correctors on a collocated grid with face fluxes.

use std::sync::Arc;
use std::time::Instant;

use log::{debug, warn};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{normal_distance, unit_normal, BcKind, BoundaryConditions, Field, Rank};
use crate::mesh::{dot, sub, Mesh};
use crate::ops::{self, Form, Scheme};
use crate::snapshot::{Location, SnapshotRecord, SnapshotSet};
use crate::sparse::{self, CsrMatrix, FaceAddressing, Preconditioner, Tolerance};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TimeScheme {
    Euler,
    /// Second-order backward differencing; the first step falls back to Euler.
    Bdf2,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PisoSettings {
    pub outer_iterations: usize,
    pub correctors: usize,
    pub non_orthogonal_correctors: usize,
    /// Relative tolerance of the momentum solves.
    pub momentum_tolerance: f64,
    /// Continuity target: max cell flux imbalance relative to the largest
    /// predicted face flux. Pure-Neumann pressure problems are solved in the
    /// range of the singular matrix and shifted so cell 0 holds zero.
    pub pressure_tolerance: f64,
    pub max_linear_iterations: usize,
}

impl Default for PisoSettings {
    fn default() -> Self {
        PisoSettings {
            outer_iterations: 1,
            correctors: 2,
            non_orthogonal_correctors: 0,
            momentum_tolerance: 1e-7,
            pressure_tolerance: 1e-8,
            max_linear_iterations: 5000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TransientCase {
    pub mesh: Arc<Mesh>,
    pub velocity_bcs: BoundaryConditions,
    pub pressure_bcs: BoundaryConditions,
    /// Initial cell velocities, interleaved.
    pub initial_velocity: Vec<f64>,
    pub viscosity: f64,
    pub time_step: f64,
    pub end_time: f64,
    /// Snapshots are taken at `start + k * interval` for `k >= 1`.
    pub snapshot_start: f64,
    pub snapshot_interval: f64,
    pub convection: Scheme,
    pub time_scheme: TimeScheme,
    pub piso: PisoSettings,
}

fn steps_for(span: f64, dt: f64, what: &str) -> Result<usize> {
    let k = (span / dt).round();
    if k < 0.0 || (k * dt - span).abs() > 1e-9 * span.abs().max(dt) {
        return Err(Error::InvalidInput(format!(
            "{what} ({span}) is not an integer multiple of the time step ({dt})"
        )));
    }
    Ok(k as usize)
}

struct Schedule {
    total: usize,
    start: usize,
    every: usize,
}

impl Schedule {
    fn records(&self, step: usize) -> bool {
        step > self.start && (step - self.start).is_multiple_of(self.every)
    }

    fn count(&self) -> usize {
        (self.total - self.start) / self.every
    }
}

impl TransientCase {
    pub fn validate(&self) -> Result<()> {
        self.schedule().map(|_| ())
    }

    fn schedule(&self) -> Result<Schedule> {
        if !(self.time_step > 0.0) {
            return Err(Error::InvalidInput(format!("time step must be positive, got {}", self.time_step)));
        }
        if !(self.viscosity > 0.0) {
            return Err(Error::InvalidInput(format!("viscosity must be positive, got {}", self.viscosity)));
        }
        if self.snapshot_interval < self.time_step {
            return Err(Error::InvalidInput(format!(
                "snapshot interval {} is shorter than the time step {}",
                self.snapshot_interval, self.time_step
            )));
        }
        if self.snapshot_start < 0.0 || self.snapshot_start > self.end_time {
            return Err(Error::InvalidInput("snapshot start must lie in [0, end time]".into()));
        }
        if self.velocity_bcs.rank() != Rank::Vector || self.pressure_bcs.rank() != Rank::Scalar {
            return Err(Error::Mismatch("velocity needs vector and pressure scalar boundary conditions".into()));
        }
        if self.initial_velocity.len() != 2 * self.mesh.n_cells() {
            return Err(Error::Mismatch(format!(
                "initial velocity has {} values, expected {}",
                self.initial_velocity.len(),
                2 * self.mesh.n_cells()
            )));
        }
        if self.piso.outer_iterations == 0 || self.piso.correctors == 0 {
            return Err(Error::InvalidInput("need at least one outer iteration and one corrector".into()));
        }
        let total = steps_for(self.end_time, self.time_step, "end time")?;
        let start = steps_for(self.snapshot_start, self.time_step, "snapshot start")?;
        let every = steps_for(self.snapshot_interval, self.time_step, "snapshot interval")?;
        Ok(Schedule { total, start, every })
    }

    pub fn n_steps(&self) -> Result<usize> {
        Ok(self.schedule()?.total)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimingRecord {
    pub wall_seconds: f64,
    pub steps: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResidualRecord {
    pub step: usize,
    pub time: f64,
    pub courant: f64,
    /// Largest cell flux imbalance after the last corrector.
    pub continuity: f64,
    /// Continuity target used by the last pressure solve.
    pub continuity_target: f64,
    pub momentum_iterations: usize,
    pub pressure_iterations: usize,
}

#[derive(Clone, Debug)]
pub struct TransientOutput {
    pub velocity: SnapshotSet,
    pub pressure: SnapshotSet,
    /// Face fluxes matching the velocity snapshots.
    pub flux: SnapshotSet,
    pub timing: TimingRecord,
    /// One entry per parameter run.
    pub run_timings: Vec<TimingRecord>,
    pub residuals: Vec<ResidualRecord>,
}

/// Time-stepping state of one transient run.
pub struct PisoSolver {
    case: TransientCase,
    addressing: FaceAddressing,
    u: Field,
    p: Field,
    phi: Vec<f64>,
    u_old2: Option<(Vec<f64>, Vec<f64>)>,
    step: usize,
    warned_courant: bool,
}

/// Momentum matrix in face form plus per-component extras.
struct Momentum {
    diag: Vec<f64>,
    upper: Vec<f64>,
    lower: Vec<f64>,
    diag_extra: [Vec<f64>; 2],
    source: [Vec<f64>; 2],
}

impl Momentum {
    fn component_diag(&self, c: usize, cell: usize) -> f64 {
        self.diag[cell] + self.diag_extra[c][cell]
    }
}

impl PisoSolver {
    pub fn new(case: TransientCase) -> Result<Self> {
        case.validate()?;
        let mesh = case.mesh.clone();
        let u = Field::new(mesh.clone(), case.initial_velocity.clone(), &case.velocity_bcs)?;
        let p = Field::new(mesh.clone(), vec![0.0; mesh.n_cells()], &case.pressure_bcs)?;
        let phi = ops::face_flux(&u)?;
        Ok(PisoSolver {
            addressing: FaceAddressing::new(&mesh),
            case,
            u,
            p,
            phi,
            u_old2: None,
            step: 0,
            warned_courant: false,
        })
    }

    pub fn velocity(&self) -> &Field {
        &self.u
    }

    pub fn pressure(&self) -> &Field {
        &self.p
    }

    pub fn flux(&self) -> &[f64] {
        &self.phi
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.case.time_step
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn case(&self) -> &TransientCase {
        &self.case
    }

    /// Pressure with the datum removed when no patch fixes its level.
    pub fn dereferenced_pressure(&self) -> Vec<f64> {
        let mut p = self.p.cells().to_vec();
        if !self.case.pressure_bcs.has_fixed_value() {
            let mesh = self.u.mesh();
            let mean = p
                .iter()
                .zip(mesh.cell_volumes())
                .map(|(a, v)| a * v)
                .sum::<f64>()
                / mesh.total_volume();
            p.iter_mut().for_each(|v| *v -= mean);
        }
        p
    }

    fn assemble_momentum(&self, rhs_old: &[f64], ddt_coeff: f64) -> Momentum {
        let mesh = self.u.mesh();
        let n = mesh.n_cells();
        let ni = mesh.n_internal_faces();
        let nu = self.case.viscosity;
        let dt = self.case.time_step;
        let mut m = Momentum {
            diag: vec![0.0; n],
            upper: vec![0.0; ni],
            lower: vec![0.0; ni],
            diag_extra: [vec![0.0; n], vec![0.0; n]],
            source: [vec![0.0; n], vec![0.0; n]],
        };
        for c in 0..n {
            let v = mesh.cell_volumes()[c];
            m.diag[c] += ddt_coeff * v / dt;
            for k in 0..2 {
                m.source[k][c] += v / dt * rhs_old[2 * c + k];
            }
        }
        let need_grad = self.case.convection == Scheme::LinearUpwind || !mesh.is_orthogonal();
        let grad = need_grad.then(|| ops::gauss_gradient(&self.u, Form::Intensive));
        let orthogonal = mesh.is_orthogonal();
        for f in 0..ni {
            let p = mesh.owner()[f];
            let q = mesh.neighbour()[f];
            let flux = self.phi[f];
            let w = mesh.weights()[f];
            match self.case.convection {
                Scheme::Linear => {
                    m.diag[p] += flux * w;
                    m.upper[f] += flux * (1.0 - w);
                    m.diag[q] -= flux * (1.0 - w);
                    m.lower[f] -= flux * w;
                }
                Scheme::Upwind | Scheme::LinearUpwind => {
                    if flux >= 0.0 {
                        m.diag[p] += flux;
                        m.lower[f] -= flux;
                    } else {
                        m.upper[f] += flux;
                        m.diag[q] -= flux;
                    }
                }
            }
            if self.case.convection == Scheme::LinearUpwind {
                let g = grad.as_ref().unwrap();
                let up = if flux >= 0.0 { p } else { q };
                let r = sub(mesh.face_centres()[f], mesh.cell_centres()[up]);
                for k in 0..2 {
                    let corr = flux * (g[up * 4 + 2 * k] * r[0] + g[up * 4 + 2 * k + 1] * r[1]);
                    m.source[k][p] -= corr;
                    m.source[k][q] += corr;
                }
            }
            let dc = nu * mesh.delta_coefficient(f);
            m.diag[p] += dc;
            m.diag[q] += dc;
            m.upper[f] -= dc;
            m.lower[f] -= dc;
            if !orthogonal {
                let g = grad.as_ref().unwrap();
                let kf = mesh.correction_vector(f);
                for k in 0..2 {
                    let gp = &g[p * 4 + 2 * k..p * 4 + 2 * k + 2];
                    let gq = &g[q * 4 + 2 * k..q * 4 + 2 * k + 2];
                    let gf = [w * gp[0] + (1.0 - w) * gq[0], w * gp[1] + (1.0 - w) * gq[1]];
                    let corr = nu * dot(kf, gf);
                    m.source[k][p] += corr;
                    m.source[k][q] -= corr;
                }
            }
        }
        for (pi, patch) in mesh.patches().iter().enumerate() {
            let kind = self.case.velocity_bcs.kind(pi);
            for f in patch.faces() {
                let p = mesh.owner()[f];
                let flux = self.phi[f];
                let dc = nu * mesh.delta_coefficient(f);
                let up = self.u.cell(p);
                match kind {
                    BcKind::FixedValue(d) => {
                        m.diag[p] += dc;
                        for k in 0..2 {
                            m.source[k][p] += (dc - flux) * d[k];
                        }
                    }
                    BcKind::ZeroGradient => m.diag[p] += flux,
                    BcKind::FixedGradient(g) => {
                        m.diag[p] += flux;
                        let dn = normal_distance(mesh, f);
                        let mag = mesh.face_magnitudes()[f];
                        for k in 0..2 {
                            m.source[k][p] += -flux * g[k] * dn + nu * mag * g[k];
                        }
                    }
                    BcKind::Symmetry => {
                        let nrm = unit_normal(mesh, f);
                        let ub = self.u.boundary_value(f);
                        for k in 0..2 {
                            let o = 1 - k;
                            m.diag_extra[k][p] += dc * nrm[k] * nrm[k];
                            m.source[k][p] -= dc * nrm[k] * nrm[o] * up[o] + flux * ub[k];
                        }
                    }
                }
            }
        }
        m
    }

    fn momentum_matrix(&self, m: &Momentum, c: usize) -> CsrMatrix {
        let mut a = self.addressing.matrix();
        let vals = a.values_mut();
        for (cell, _) in m.diag.iter().enumerate() {
            vals[self.addressing.diag(cell)] = m.component_diag(c, cell);
        }
        for f in 0..m.upper.len() {
            vals[self.addressing.upper(f)] = m.upper[f];
            vals[self.addressing.lower(f)] = m.lower[f];
        }
        a
    }

    /// Advances one time step.
    pub fn step(&mut self) -> Result<ResidualRecord> {
        let step = self.step + 1;
        let time = step as f64 * self.case.time_step;
        let out = self.advance().map_err(|e| match e {
            Error::NonFinite { .. } => e,
            other => Error::Step {
                step,
                time,
                source: Box::new(other),
            },
        })?;
        Ok(out)
    }

    fn advance(&mut self) -> Result<ResidualRecord> {
        let mesh = self.case.mesh.clone();
        let n = mesh.n_cells();
        let ni = mesh.n_internal_faces();
        let dt = self.case.time_step;
        let settings = self.case.piso.clone();
        let step = self.step + 1;
        let time = step as f64 * dt;

        let u_old = self.u.cells().to_vec();
        let phi_old = self.phi.clone();
        let bdf2 = self.case.time_scheme == TimeScheme::Bdf2 && self.u_old2.is_some();
        let (ddt_coeff, rhs_old) = if bdf2 {
            let (u2, _) = self.u_old2.as_ref().unwrap();
            (1.5, u_old.iter().zip(u2).map(|(a, b)| 2.0 * a - 0.5 * b).collect::<Vec<_>>())
        } else {
            (1.0, u_old.clone())
        };
        // Flux mismatch of the old level(s), fed back into the predicted flux.
        let old_u_field = Field::new(mesh.clone(), u_old.clone(), &self.case.velocity_bcs)?;
        let flux_of_old = ops::face_flux(&old_u_field)?;
        let mut ddt_mismatch: Vec<f64> = (0..ni)
            .map(|f| {
                let diff = phi_old[f] - flux_of_old[f];
                let coupling = 1.0 - (diff.abs() / (phi_old[f].abs() + 1e-300)).min(1.0);
                coupling * diff
            })
            .collect();
        if bdf2 {
            let (u2, phi2) = self.u_old2.as_ref().unwrap();
            let f2 = ops::face_flux(&Field::new(mesh.clone(), u2.clone(), &self.case.velocity_bcs)?)?;
            for f in 0..ni {
                let diff2 = phi2[f] - f2[f];
                let coupling = 1.0 - (diff2.abs() / (phi2[f].abs() + 1e-300)).min(1.0);
                ddt_mismatch[f] = 2.0 * ddt_mismatch[f] - 0.5 * coupling * diff2;
            }
        }

        let mut momentum_iterations = 0;
        let mut pressure_iterations = 0;
        let mut continuity_target = 0.0;
        let mom_tol = Tolerance {
            absolute: 0.0,
            relative: settings.momentum_tolerance,
            max_iterations: settings.max_linear_iterations,
        };

        for _outer in 0..settings.outer_iterations {
            let m = self.assemble_momentum(&rhs_old, ddt_coeff);

            // Momentum predictor with the current pressure gradient.
            let gradp = ops::gauss_gradient(&self.p, Form::Extensive);
            let mut cells = self.u.cells().to_vec();
            for c in 0..2 {
                let a = self.momentum_matrix(&m, c);
                let b: Vec<f64> = (0..n).map(|i| m.source[c][i] - gradp[2 * i + c]).collect();
                let mut x: Vec<f64> = (0..n).map(|i| cells[2 * i + c]).collect();
                let stats = sparse::bicgstab(&a, &b, &mut x, Preconditioner::Dilu, mom_tol)?;
                momentum_iterations += stats.iterations;
                for i in 0..n {
                    cells[2 * i + c] = x[i];
                }
            }
            self.u = Field::new(mesh.clone(), cells, &self.case.velocity_bcs)?;

            let a_p: Vec<f64> = (0..n)
                .map(|i| 0.5 * (m.component_diag(0, i) + m.component_diag(1, i)))
                .collect();
            let r_au: Vec<f64> = (0..n).map(|i| mesh.cell_volumes()[i] / a_p[i]).collect();
            let r_au_f: Vec<f64> = (0..mesh.n_faces())
                .map(|f| {
                    let p = mesh.owner()[f];
                    if f < ni {
                        let w = mesh.weights()[f];
                        w * r_au[p] + (1.0 - w) * r_au[mesh.neighbour()[f]]
                    } else {
                        r_au[p]
                    }
                })
                .collect();

            for _corr in 0..settings.correctors {
                // HbyA = (source - offdiag * u - (diag_c - A_P) u) / A_P
                let u = self.u.cells();
                let mut hbya = vec![0.0; 2 * n];
                for c in 0..2 {
                    for i in 0..n {
                        hbya[2 * i + c] = m.source[c][i] - (m.component_diag(c, i) - a_p[i]) * u[2 * i + c];
                    }
                    for f in 0..ni {
                        let p = mesh.owner()[f];
                        let q = mesh.neighbour()[f];
                        hbya[2 * p + c] -= m.upper[f] * u[2 * q + c];
                        hbya[2 * q + c] -= m.lower[f] * u[2 * p + c];
                    }
                }
                for i in 0..n {
                    hbya[2 * i] /= a_p[i];
                    hbya[2 * i + 1] /= a_p[i];
                }
                let hbya = Field::new(mesh.clone(), hbya, &self.case.velocity_bcs)?;
                let mut phi_hbya = ops::face_flux(&hbya)?;
                for f in 0..ni {
                    phi_hbya[f] += r_au_f[f] / dt * ddt_mismatch[f];
                }
                let reference = sparse::max_norm(&phi_hbya);
                continuity_target = if reference > 0.0 {
                    settings.pressure_tolerance * reference
                } else {
                    f64::MIN_POSITIVE
                };

                let mut non_orth = vec![0.0; mesh.n_faces()];
                for _ in 0..=settings.non_orthogonal_correctors {
                    if !mesh.is_orthogonal() {
                        let gp = ops::gauss_gradient(&self.p, Form::Intensive);
                        for f in 0..ni {
                            let p = mesh.owner()[f];
                            let q = mesh.neighbour()[f];
                            let w = mesh.weights()[f];
                            let gf = [
                                w * gp[2 * p] + (1.0 - w) * gp[2 * q],
                                w * gp[2 * p + 1] + (1.0 - w) * gp[2 * q + 1],
                            ];
                            non_orth[f] = r_au_f[f] * dot(mesh.correction_vector(f), gf);
                        }
                    }
                    let (a, rhs) = self.pressure_system(&phi_hbya, &r_au_f, &non_orth)?;
                    let mut x = self.p.cells().to_vec();
                    let tol = Tolerance {
                        absolute: continuity_target,
                        relative: 0.0,
                        max_iterations: settings.max_linear_iterations,
                    };
                    let stats = sparse::pcg(&a, &rhs, &mut x, Preconditioner::Dilu, tol)?;
                    pressure_iterations += stats.iterations;
                    if !self.case.pressure_bcs.has_fixed_value() {
                        let datum = x[0];
                        x.iter_mut().for_each(|v| *v -= datum);
                    }
                    self.p = Field::new(mesh.clone(), x, &self.case.pressure_bcs)?;
                }

                // Conservative flux and cell velocity corrections.
                let mut phi = phi_hbya;
                let pc = self.p.cells();
                for f in 0..ni {
                    let p = mesh.owner()[f];
                    let q = mesh.neighbour()[f];
                    phi[f] -= r_au_f[f] * mesh.delta_coefficient(f) * (pc[q] - pc[p]) + non_orth[f];
                }
                for (pi, patch) in mesh.patches().iter().enumerate() {
                    for f in patch.faces() {
                        let p = mesh.owner()[f];
                        match self.case.pressure_bcs.kind(pi) {
                            BcKind::FixedValue(d) => {
                                phi[f] -= r_au_f[f] * mesh.delta_coefficient(f) * (d[0] - pc[p]);
                            }
                            BcKind::FixedGradient(g) => {
                                phi[f] -= r_au_f[f] * mesh.face_magnitudes()[f] * g[0];
                            }
                            _ => {}
                        }
                    }
                }
                self.phi = phi;
                let gp = ops::gauss_gradient(&self.p, Form::Intensive);
                let mut cells = hbya.cells().to_vec();
                for i in 0..n {
                    cells[2 * i] -= r_au[i] * gp[2 * i];
                    cells[2 * i + 1] -= r_au[i] * gp[2 * i + 1];
                }
                self.u = Field::new(mesh.clone(), cells, &self.case.velocity_bcs)?;
            }
        }

        if self.u.cells().iter().chain(self.p.cells()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step, time });
        }
        self.u_old2 = Some((u_old, phi_old));
        self.step = step;

        let continuity = sparse::max_norm(&ops::flux_divergence(&mesh, &self.phi, Form::Extensive)?);
        let courant = (0..mesh.n_faces())
            .map(|f| self.phi[f].abs() * dt / mesh.cell_volumes()[mesh.owner()[f]])
            .fold(0.0, f64::max);
        if courant > 1.0 && !self.warned_courant {
            warn!("Courant number {courant:.3} exceeds 1 at step {step} (t = {time})");
            self.warned_courant = true;
        }
        Ok(ResidualRecord {
            step,
            time,
            courant,
            continuity,
            continuity_target,
            momentum_iterations,
            pressure_iterations,
        })
    }

    /// SPD pressure system `-lap(rAU, p) = -div(phiHbyA) + boundary/explicit terms`.
    fn pressure_system(
        &self,
        phi_hbya: &[f64],
        r_au_f: &[f64],
        non_orth: &[f64],
    ) -> Result<(CsrMatrix, Vec<f64>)> {
        let mesh = self.u.mesh();
        let ni = mesh.n_internal_faces();
        let mut a = self.addressing.matrix();
        let mut rhs = ops::flux_divergence(mesh, phi_hbya, Form::Extensive)?;
        rhs.iter_mut().for_each(|v| *v = -*v);
        {
            let vals = a.values_mut();
            for f in 0..ni {
                let p = mesh.owner()[f];
                let q = mesh.neighbour()[f];
                let c = r_au_f[f] * mesh.delta_coefficient(f);
                vals[self.addressing.diag(p)] += c;
                vals[self.addressing.diag(q)] += c;
                vals[self.addressing.upper(f)] -= c;
                vals[self.addressing.lower(f)] -= c;
                rhs[p] += non_orth[f];
                rhs[q] -= non_orth[f];
            }
            for (pi, patch) in mesh.patches().iter().enumerate() {
                for f in patch.faces() {
                    let p = mesh.owner()[f];
                    match self.case.pressure_bcs.kind(pi) {
                        BcKind::FixedValue(d) => {
                            let c = r_au_f[f] * mesh.delta_coefficient(f);
                            vals[self.addressing.diag(p)] += c;
                            rhs[p] += c * d[0];
                        }
                        BcKind::FixedGradient(g) => {
                            rhs[p] += r_au_f[f] * mesh.face_magnitudes()[f] * g[0];
                        }
                        _ => {}
                    }
                }
            }
        }
        if !self.case.pressure_bcs.has_fixed_value() {
            // Pure-Neumann problem: the matrix is singular with constants in
            // its null space, so project the right-hand side onto the range.
            // Conjugate gradients then converge on the true flux imbalance.
            let mean = rhs.iter().sum::<f64>() / rhs.len() as f64;
            rhs.iter_mut().for_each(|v| *v -= mean);
        }
        Ok((a, rhs))
    }
}

/// Runs one case to its end time, recording snapshots on schedule.
pub fn solve_transient(case: &TransientCase) -> Result<TransientOutput> {
    let schedule = case.schedule()?;
    let mesh = case.mesh.clone();
    let mu = case.viscosity;
    let mut solver = PisoSolver::new(case.clone())?;
    let start = Instant::now();
    let mut velocity = Vec::with_capacity(schedule.count());
    let mut pressure = Vec::with_capacity(schedule.count());
    let mut flux = Vec::with_capacity(schedule.count());
    let mut residuals = Vec::with_capacity(schedule.total);
    for step in 1..=schedule.total {
        let rec = solver.step()?;
        if rec.continuity > 10.0 * rec.continuity_target {
            debug!(
                "step {step}: continuity residual {:.3e} above target {:.3e}",
                rec.continuity, rec.continuity_target
            );
        }
        residuals.push(rec);
        if schedule.records(step) {
            let time = rec.time;
            velocity.push(SnapshotRecord {
                parameter: mu,
                time,
                values: solver.velocity().cells().to_vec(),
            });
            pressure.push(SnapshotRecord {
                parameter: mu,
                time,
                values: solver.dereferenced_pressure(),
            });
            flux.push(SnapshotRecord {
                parameter: mu,
                time,
                values: solver.flux().to_vec(),
            });
        }
    }
    let timing = TimingRecord {
        wall_seconds: start.elapsed().as_secs_f64(),
        steps: schedule.total,
    };
    let n_times = velocity.len();
    Ok(TransientOutput {
        velocity: SnapshotSet::new(mesh.clone(), Location::Cells(Rank::Vector), 1, n_times, velocity)?,
        pressure: SnapshotSet::new(mesh.clone(), Location::Cells(Rank::Scalar), 1, n_times, pressure)?,
        flux: SnapshotSet::new(mesh, Location::Faces, 1, n_times, flux)?,
        timing,
        run_timings: vec![timing],
        residuals,
    })
}

/// Independent runs for each viscosity, merged parameter-major in list order.
pub fn run_parameter_sweep(template: &TransientCase, viscosities: &[f64]) -> Result<TransientOutput> {
    if viscosities.is_empty() {
        return Err(Error::InvalidInput("empty viscosity list".into()));
    }
    let runs: Vec<Result<TransientOutput>> = viscosities
        .par_iter()
        .map(|&nu| {
            let mut case = template.clone();
            case.viscosity = nu;
            solve_transient(&case).map_err(|e| Error::Parameter {
                viscosity: nu,
                source: Box::new(e),
            })
        })
        .collect();
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let run_timings: Vec<TimingRecord> = runs.iter().map(|r| r.timing).collect();
    let timing = TimingRecord {
        wall_seconds: run_timings.iter().map(|t| t.wall_seconds).sum(),
        steps: run_timings.iter().map(|t| t.steps).sum(),
    };
    let mut velocity = Vec::new();
    let mut pressure = Vec::new();
    let mut flux = Vec::new();
    let mut residuals = Vec::new();
    for r in runs {
        velocity.push(r.velocity);
        pressure.push(r.pressure);
        flux.push(r.flux);
        residuals.extend(r.residuals);
    }
    Ok(TransientOutput {
        velocity: SnapshotSet::concat(velocity)?,
        pressure: SnapshotSet::concat(pressure)?,
        flux: SnapshotSet::concat(flux)?,
        timing,
        run_timings,
        residuals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::BoundaryCondition;
    use crate::mesh::generate_cavity_mesh;

    pub(crate) fn cavity_case(n: usize, nu: f64, dt: f64, end: f64, interval: f64) -> TransientCase {
        let mesh = Arc::new(generate_cavity_mesh(n, 0.1).unwrap());
        let velocity_bcs = BoundaryConditions::new(
            &mesh,
            Rank::Vector,
            vec![
                BoundaryCondition::new("lid", BcKind::FixedValue(vec![1.0, 0.0])),
                BoundaryCondition::new("walls", BcKind::FixedValue(vec![0.0, 0.0])),
            ],
        )
        .unwrap();
        let pressure_bcs = BoundaryConditions::uniform(&mesh, Rank::Scalar, BcKind::ZeroGradient).unwrap();
        TransientCase {
            initial_velocity: vec![0.0; 2 * mesh.n_cells()],
            mesh,
            velocity_bcs,
            pressure_bcs,
            viscosity: nu,
            time_step: dt,
            end_time: end,
            snapshot_start: 0.0,
            snapshot_interval: interval,
            convection: Scheme::Linear,
            time_scheme: TimeScheme::Euler,
            piso: PisoSettings::default(),
        }
    }

    #[test]
    fn schedule_validation() {
        let mut c = cavity_case(4, 1e-3, 1e-3, 0.01, 0.002);
        assert_eq!(c.schedule().unwrap().count(), 5);
        c.snapshot_interval = 0.0025;
        assert!(c.validate().is_err());
        c.snapshot_interval = 0.0005;
        assert!(c.validate().is_err());
        c.snapshot_interval = 0.002;
        c.viscosity = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn quiescent_cavity_stays_at_rest() {
        let mut c = cavity_case(6, 1e-3, 1e-3, 0.01, 0.005);
        c.velocity_bcs = BoundaryConditions::all_zero_value(&c.mesh, Rank::Vector).unwrap();
        let out = solve_transient(&c).unwrap();
        assert_eq!(out.velocity.len(), 2);
        for r in out.velocity.records().iter().chain(out.pressure.records()) {
            assert!(r.values.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn lid_driven_flux_is_discretely_solenoidal() {
        let c = cavity_case(12, 1e-3, 2e-3, 0.04, 0.02);
        let out = solve_transient(&c).unwrap();
        for r in &out.residuals {
            assert!(r.continuity <= r.continuity_target, "{r:?}");
        }
        assert!(out.velocity.records()[1].values.iter().any(|v| v.abs() > 1e-3));
    }

    #[test]
    fn repeated_runs_are_bit_identical() {
        let c = cavity_case(8, 1e-3, 2e-3, 0.02, 0.01);
        let a = solve_transient(&c).unwrap();
        let b = solve_transient(&c).unwrap();
        assert_eq!(a.velocity, b.velocity);
        assert_eq!(a.pressure, b.pressure);
        assert_eq!(a.flux, b.flux);
    }

    #[test]
    fn sweep_merges_parameter_major() {
        let c = cavity_case(5, 1e-3, 2e-3, 0.006, 0.002);
        let out = run_parameter_sweep(&c, &[2e-3, 1e-3]).unwrap();
        assert_eq!(out.velocity.len(), 6);
        assert_eq!(out.velocity.parameters(), vec![2e-3, 1e-3]);
        let single = solve_transient(&{
            let mut k = c.clone();
            k.viscosity = 1e-3;
            k
        })
        .unwrap();
        assert_eq!(out.velocity.block(1).unwrap(), single.velocity);
        assert!(run_parameter_sweep(&c, &[]).is_err());
    }
}
