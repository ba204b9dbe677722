//! The pipeline stages. Each reads the artifacts of its upstream stages,
//! writes its own directory and seals it with a manifest.

use std::path::Path;
use std::sync::Arc;

use log::info;
use nalgebra::DVector;

use fvrom::analysis::{eigenvalue_table, speedup_report, Cell, EnergySeries, ErrorSeries, ModelTiming, Table};
use fvrom::hf::{run_parameter_sweep, solve_transient, TransientOutput};
use fvrom::mesh::{load_mesh, save_mesh, Mesh};
use fvrom::pod::{compute_pod, snapshot_mean, subtract, PodBasis, Provenance};
use fvrom::rom::{
    infsup_constant, integrate, project_initial_condition, project_offline, reconstruct, NewtonSettings,
    ReducedModel, RomSpaces, RomState, Stabilisation, Trajectory,
};
use fvrom::snapshot::{Location, SnapshotRecord, SnapshotSet};
use fvrom::supremizer::{approximate_supremizers, enrich, exact_supremizers, Enrichment};
use fvrom::vtk::save_vtk;
use fvrom::{BoundaryConditions, Field, Rank};

use crate::artifacts::{Workspace, STAGES};
use crate::config::CaseConfig;
use crate::error::{CliError, Result};

/// Whether an output file (path relative to the workspace root) holds
/// wall-clock measurements; everything else a stage writes is a
/// deterministic function of the configuration.
pub fn is_timing_file(relative: &str) -> bool {
    relative == "hf/timing.csv" || relative == "online/timing.csv" || relative.starts_with("compare/speedup")
}

const TIME_MATCH: f64 = 1e-9;

pub fn run_stage(ws: &Workspace, stage: &str) -> Result<()> {
    info!("stage {stage}");
    match stage {
        "mesh" => mesh_stage(ws),
        "hf" => hf_stage(ws),
        "pod" => pod_stage(ws),
        "supremizer" => supremizer_stage(ws),
        "offline" => offline_stage(ws),
        "online" => online_stage(ws),
        "compare" => compare_stage(ws),
        other => Err(CliError::Missing { stage: other.into() }),
    }
}

/// Runs every stage from `from` (default: the first) to the end.
pub fn run_pipeline(ws: &Workspace, from: Option<&str>) -> Result<()> {
    let start = from.map_or(0, |f| STAGES.iter().position(|s| *s == f).unwrap_or(0));
    for s in &STAGES[start..] {
        run_stage(ws, s)?;
    }
    Ok(())
}

/// End of the reference runs, which is also where the reduced models stop.
pub fn reference_end(cfg: &CaseConfig) -> f64 {
    match cfg.online.initial.as_str() {
        "case" => cfg.online.horizon,
        _ => cfg.hf.snapshot_start + cfg.online.horizon,
    }
}

/// Length of the snapshot window, used to report errors over the part of
/// the online horizon that matches the training data in length.
pub fn training_window(cfg: &CaseConfig) -> f64 {
    cfg.hf.end_time - cfg.hf.snapshot_start
}

struct Setup {
    mesh: Arc<Mesh>,
    velocity_bcs: BoundaryConditions,
    pressure_bcs: BoundaryConditions,
}

fn setup(ws: &Workspace) -> Result<Setup> {
    let mesh = Arc::new(load_mesh(ws.path("mesh", "mesh.txt"))?);
    Ok(Setup {
        velocity_bcs: ws.config.velocity_bcs(&mesh)?,
        pressure_bcs: ws.config.pressure_bcs(&mesh)?,
        mesh,
    })
}

fn mesh_stage(ws: &Workspace) -> Result<()> {
    let mut w = ws.begin("mesh")?;
    let mesh = ws.config.build_mesh()?;
    ws.config.velocity_bcs(&mesh)?;
    ws.config.pressure_bcs(&mesh)?;
    info!(
        "{} cells, {} faces, max non-orthogonality {:.2} deg",
        mesh.n_cells(),
        mesh.n_faces(),
        mesh.max_non_orthogonality().to_degrees()
    );
    save_mesh(&mesh, w.file("mesh.txt"))?;
    save_vtk(&mesh, &[], w.file("mesh.vtk"))?;
    w.finish()?;
    Ok(())
}

fn hf_stage(ws: &Workspace) -> Result<()> {
    let cfg = &ws.config;
    let mut w = ws.begin("hf")?;
    let s = setup(ws)?;
    let template = cfg.transient_case(&s.mesh, cfg.hf.viscosities[0], cfg.hf.end_time)?;
    info!("training runs for {} viscosities", cfg.hf.viscosities.len());
    let train = run_parameter_sweep(&template, &cfg.hf.viscosities)?;
    train.velocity.save(w.file("velocity.bin"))?;
    train.pressure.save(w.file("pressure.bin"))?;

    let mut residuals = Table::new(&[
        "role",
        "viscosity",
        "step",
        "time",
        "courant",
        "continuity",
        "continuity_target",
        "momentum_iterations",
        "pressure_iterations",
    ]);
    let mut timing = Table::new(&["role", "viscosity", "end_time", "steps", "wall_seconds"]);
    let probes = probe_cells(cfg, &s.mesh);
    let mut probe_table = Table::new(&probe_columns(probes.len()).iter().map(String::as_str).collect::<Vec<_>>());

    let mut offset = 0;
    for (k, &nu) in cfg.hf.viscosities.iter().enumerate() {
        let t = train.run_timings[k];
        push_residuals(&mut residuals, "training", nu, &train.residuals[offset..offset + t.steps]);
        offset += t.steps;
        push_timing(&mut timing, "training", nu, cfg.hf.end_time, t.steps, t.wall_seconds);
        push_probes(
            &mut probe_table,
            "training",
            &probes,
            &train.velocity.block(k)?,
            &train.pressure.block(k)?,
        );
    }

    let end = reference_end(cfg);
    for (i, &nu) in cfg.online.viscosities.iter().enumerate() {
        let reuse = cfg
            .hf
            .viscosities
            .iter()
            .position(|v| *v == nu)
            .filter(|_| (end - cfg.hf.end_time).abs() <= TIME_MATCH * end);
        let (velocity, pressure) = match reuse {
            Some(k) => {
                info!("reference run {i} reuses training run {k}");
                let t = train.run_timings[k];
                push_timing(&mut timing, &format!("reference_{i}"), nu, end, t.steps, t.wall_seconds);
                (train.velocity.block(k)?, train.pressure.block(k)?)
            }
            None => {
                info!("reference run {i}: viscosity {nu}, end time {end}");
                let out: TransientOutput = solve_transient(&cfg.transient_case(&s.mesh, nu, end)?)
                    .map_err(|e| fvrom::Error::Parameter {
                        viscosity: nu,
                        source: Box::new(e),
                    })?;
                push_residuals(&mut residuals, &format!("reference_{i}"), nu, &out.residuals);
                push_timing(
                    &mut timing,
                    &format!("reference_{i}"),
                    nu,
                    end,
                    out.timing.steps,
                    out.timing.wall_seconds,
                );
                (out.velocity, out.pressure)
            }
        };
        push_probes(&mut probe_table, &format!("reference_{i}"), &probes, &velocity, &pressure);
        velocity.save(w.file(&format!("reference_{i}_velocity.bin")))?;
        pressure.save(w.file(&format!("reference_{i}_pressure.bin")))?;
    }
    residuals.save(w.file("residuals.csv"))?;
    timing.comments.push("wall clock of each full-order run".into());
    timing.save(w.file("timing.csv"))?;
    probe_table.save(w.file("probes.csv"))?;
    w.finish()?;
    Ok(())
}

fn push_residuals(t: &mut Table, role: &str, nu: f64, records: &[fvrom::hf::ResidualRecord]) {
    for r in records {
        t.push(vec![
            Cell::Text(role.into()),
            Cell::Number(nu),
            Cell::Number(r.step as f64),
            Cell::Number(r.time),
            Cell::Number(r.courant),
            Cell::Number(r.continuity),
            Cell::Number(r.continuity_target),
            Cell::Number(r.momentum_iterations as f64),
            Cell::Number(r.pressure_iterations as f64),
        ]);
    }
}

fn push_timing(t: &mut Table, role: &str, nu: f64, end: f64, steps: usize, wall: f64) {
    t.push(vec![
        Cell::Text(role.into()),
        Cell::Number(nu),
        Cell::Number(end),
        Cell::Number(steps as f64),
        Cell::Number(wall),
    ]);
}

fn probe_cells(cfg: &CaseConfig, mesh: &Mesh) -> Vec<usize> {
    cfg.hf.probes.iter().map(|p| mesh.nearest_cell(*p)).collect()
}

fn probe_columns(n: usize) -> Vec<String> {
    let mut c = vec!["role".to_string(), "viscosity".into(), "time".into()];
    for j in 0..n {
        c.extend([format!("probe{j}_ux"), format!("probe{j}_uy"), format!("probe{j}_p")]);
    }
    c
}

fn push_probes(t: &mut Table, role: &str, cells: &[usize], u: &SnapshotSet, p: &SnapshotSet) {
    for (ru, rp) in u.records().iter().zip(p.records()) {
        let mut row = vec![Cell::Text(role.into()), Cell::Number(ru.parameter), Cell::Number(ru.time)];
        for &c in cells {
            row.push(Cell::Number(ru.values[2 * c]));
            row.push(Cell::Number(ru.values[2 * c + 1]));
            row.push(Cell::Number(rp.values[c]));
        }
        t.push(row);
    }
}

fn eigen_table(basis: &PodBasis) -> Table {
    let mut t = Table::new(&["index", "eigenvalue", "cumulative_energy"]);
    for (i, (l, c)) in basis.eigenvalues.iter().zip(&basis.cumulative_energy).enumerate() {
        t.push(vec![Cell::Number(i as f64), Cell::Number(*l), Cell::Number(*c)]);
    }
    t
}

fn save_basis(basis: &PodBasis, modes: &Path, eigen: &Path) -> Result<()> {
    basis.to_snapshot_set()?.save(modes)?;
    eigen_table(basis).save(eigen)?;
    Ok(())
}

fn load_basis(
    mesh: &Arc<Mesh>,
    modes: &Path,
    eigen: &Path,
    bcs: &BoundaryConditions,
    provenance: Provenance,
) -> Result<PodBasis> {
    let set = SnapshotSet::load(modes, mesh.clone())?;
    let eigenvalues = Table::load(eigen)?
        .column("eigenvalue")
        .ok_or_else(|| fvrom::Error::Format(format!("{} has no eigenvalue column", eigen.display())))?;
    let n = set.len();
    Ok(PodBasis::from_snapshot_set(&set, bcs, provenance, eigenvalues, n)?)
}

fn pod_stage(ws: &Workspace) -> Result<()> {
    let cfg = &ws.config;
    let mut w = ws.begin("pod")?;
    let s = setup(ws)?;
    let u = SnapshotSet::load(ws.path("hf", "velocity.bin"), s.mesh.clone())?;
    let p = SnapshotSet::load(ws.path("hf", "pressure.bin"), s.mesh.clone())?;
    let mean = snapshot_mean(&u)?;
    let lift = SnapshotSet::new(
        s.mesh.clone(),
        Location::Cells(Rank::Vector),
        1,
        1,
        vec![SnapshotRecord {
            parameter: 0.0,
            time: 0.0,
            values: mean.clone(),
        }],
    )?;
    lift.save(w.file("lift.bin"))?;
    let velocity = compute_pod(
        &subtract(&u, &mean)?,
        cfg.rom.n_velocity,
        &s.velocity_bcs.homogeneous(),
        Provenance::Velocity,
    )?;
    let pressure = compute_pod(&p, cfg.rom.n_pressure, &s.pressure_bcs.homogeneous(), Provenance::Pressure)?;
    info!(
        "cumulative energy: velocity {:.6} ({} modes), pressure {:.6} ({} modes)",
        velocity.cumulative_energy[velocity.len() - 1],
        velocity.len(),
        pressure.cumulative_energy[pressure.len() - 1],
        pressure.len()
    );
    save_basis(&velocity, &w.file("velocity_modes.bin"), &w.file("velocity_eigenvalues.csv"))?;
    save_basis(&pressure, &w.file("pressure_modes.bin"), &w.file("pressure_eigenvalues.csv"))?;
    w.finish()?;
    Ok(())
}

/// Reduced spaces restored from the pod and supremizer stages.
pub struct Spaces {
    pub mesh: Arc<Mesh>,
    pub velocity_bcs: BoundaryConditions,
    pub pressure_bcs: BoundaryConditions,
    pub lift: Field,
    pub velocity: PodBasis,
    pub pressure: PodBasis,
    pub supremizer: Option<PodBasis>,
}

impl Spaces {
    pub fn load(ws: &Workspace, with_supremizers: bool) -> Result<Spaces> {
        let s = setup(ws)?;
        let lift = SnapshotSet::load(ws.path("pod", "lift.bin"), s.mesh.clone())?.field(0, &s.velocity_bcs)?;
        let velocity = load_basis(
            &s.mesh,
            &ws.path("pod", "velocity_modes.bin"),
            &ws.path("pod", "velocity_eigenvalues.csv"),
            &s.velocity_bcs.homogeneous(),
            Provenance::Velocity,
        )?;
        let pressure = load_basis(
            &s.mesh,
            &ws.path("pod", "pressure_modes.bin"),
            &ws.path("pod", "pressure_eigenvalues.csv"),
            &s.pressure_bcs.homogeneous(),
            Provenance::Pressure,
        )?;
        let supremizer = if with_supremizers {
            Some(load_basis(
                &s.mesh,
                &ws.path("supremizer", "supremizer_modes.bin"),
                &ws.path("supremizer", "supremizer_eigenvalues.csv"),
                &BoundaryConditions::all_zero_value(&s.mesh, Rank::Vector)?,
                Provenance::Supremizer,
            )?)
        } else {
            None
        };
        Ok(Spaces {
            mesh: s.mesh,
            velocity_bcs: s.velocity_bcs,
            pressure_bcs: s.pressure_bcs,
            lift,
            velocity,
            pressure,
            supremizer,
        })
    }

    /// Spaces of one reduced model; the supremizer model uses the
    /// enriched velocity basis.
    pub fn rom_spaces(&self, kind: Stabilisation) -> Result<RomSpaces> {
        let velocity = match (kind, &self.supremizer) {
            (Stabilisation::Supremizer, Some(s)) => enrich(&self.velocity, s)?,
            (Stabilisation::Supremizer, None) => {
                return Err(CliError::Missing {
                    stage: "supremizer".into(),
                })
            }
            _ => self.velocity.clone(),
        };
        Ok(RomSpaces::new(
            Some(self.lift.clone()),
            velocity,
            Some(self.pressure.clone()),
        )?)
    }
}

fn supremizer_stage(ws: &Workspace) -> Result<()> {
    let cfg = &ws.config;
    let mut w = ws.begin("supremizer")?;
    let sp = Spaces::load(ws, false)?;
    let n = cfg.rom.n_supremizer;
    let sups = match cfg.enrichment()? {
        Enrichment::Exact => exact_supremizers(&sp.pressure.truncated(n.min(sp.pressure.len()))?)?,
        Enrichment::Approximate => {
            let p = SnapshotSet::load(ws.path("hf", "pressure.bin"), sp.mesh.clone())?;
            approximate_supremizers(&p, &sp.pressure_bcs, n)?
        }
    };
    save_basis(
        &sups,
        &w.file("supremizer_modes.bin"),
        &w.file("supremizer_eigenvalues.csv"),
    )?;
    let mut t = Table::new(&["n_supremizer", "inf_sup"]);
    for k in 0..=sups.len() {
        let space = if k == 0 {
            sp.velocity.clone()
        } else {
            enrich(&sp.velocity, &sups.truncated(k)?)?
        };
        let beta = infsup_constant(&space, &sp.pressure)?;
        info!("inf-sup constant with {k} supremizers: {beta:.4e}");
        t.push(vec![Cell::Number(k as f64), Cell::Number(beta)]);
    }
    t.save(w.file("infsup.csv"))?;
    w.finish()?;
    Ok(())
}

fn offline_stage(ws: &Workspace) -> Result<()> {
    let cfg = &ws.config;
    let mut w = ws.begin("offline")?;
    let sp = Spaces::load(ws, true)?;
    for kind in cfg.stabilisations()? {
        let model = project_offline(&sp.rom_spaces(kind)?, kind)?;
        model.save(w.file(&format!("model_{}.rom", kind.as_str())))?;
        let provenance = vec![
            ("case".to_string(), cfg.name.clone()),
            ("enrichment".to_string(), cfg.rom.enrichment.clone()),
        ];
        std::fs::write(
            w.file(&format!("model_{}.txt", kind.as_str())),
            model.manifest(&provenance),
        )?;
    }
    w.finish()?;
    Ok(())
}

/// Start time and initial velocity of the reduced models for test
/// viscosity `i`.
fn initial_condition(ws: &Workspace, sp: &Spaces, i: usize) -> Result<(f64, Field)> {
    let cfg = &ws.config;
    if cfg.online.initial == "case" {
        let u0 = Field::new(sp.mesh.clone(), cfg.initial_velocity(&sp.mesh), &sp.velocity_bcs)?;
        Ok((0.0, u0))
    } else {
        let set = SnapshotSet::load(ws.path("hf", &format!("reference_{i}_velocity.bin")), sp.mesh.clone())?;
        Ok((set.record(0).time, set.field(0, &sp.velocity_bcs)?))
    }
}

fn coefficient_table(kind: Stabilisation, nu: f64, tr: &Trajectory, n: usize, np: usize) -> Table {
    let mut cols = vec!["time".to_string()];
    cols.extend((0..n).map(|k| format!("a{k}")));
    cols.extend((0..np).map(|k| format!("b{k}")));
    let mut t = Table::new(&cols.iter().map(String::as_str).collect::<Vec<_>>());
    t.comments.push(format!("model={}", kind.as_str()));
    t.comments.push(format!("viscosity={nu}"));
    if let Some(f) = &tr.failure {
        t.comments.push(format!("failure={f}"));
    }
    for ((time, a), b) in tr.times.iter().zip(&tr.velocity).zip(&tr.pressure) {
        let mut row = vec![Cell::Number(*time)];
        row.extend(a.iter().chain(b.iter()).map(|v| Cell::Number(*v)));
        t.push(row);
    }
    t
}

fn online_stage(ws: &Workspace) -> Result<()> {
    let cfg = &ws.config;
    let mut w = ws.begin("online")?;
    let sp = Spaces::load(ws, true)?;
    let dt = cfg.online_time_step();
    let every = (cfg.hf.snapshot_interval / dt).round() as usize;
    let end = reference_end(cfg);
    let repeats = cfg.online.timing_repeats;
    let mut timing = Table::new(&["model", "viscosity", "steps", "simulated_time", "wall_seconds"]);
    timing.comments.push(format!(
        "wall clock around the stepping loop only, median of {repeats} repeats"
    ));
    for kind in cfg.stabilisations()? {
        let model = ReducedModel::load(ws.path("offline", &format!("model_{}.rom", kind.as_str())))?;
        let spaces = sp.rom_spaces(kind)?;
        for (i, &nu) in cfg.online.viscosities.iter().enumerate() {
            let (t0, u0) = initial_condition(ws, &sp, i)?;
            let a0 = project_initial_condition(&model, &spaces, &u0)?;
            let n_steps = ((end - t0) / dt).round() as usize;
            let mut walls = Vec::with_capacity(repeats);
            let mut last: Option<Trajectory> = None;
            for _ in 0..repeats {
                let state = RomState::new(&model, a0.clone(), t0, nu)?;
                let tr = integrate(&model, state, dt, n_steps, every, &NewtonSettings::default())?;
                walls.push(tr.wall_seconds);
                last = Some(tr);
            }
            let tr = last.expect("at least one repeat");
            walls.sort_by(f64::total_cmp);
            let wall = walls[walls.len() / 2];
            match &tr.failure {
                Some(f) => log::warn!("{} at viscosity {nu}: {f}", kind.as_str()),
                None => info!("{} at viscosity {nu}: {n_steps} steps in {wall:.3} s", kind.as_str()),
            }
            coefficient_table(kind, nu, &tr, model.n(), model.n_pressure)
                .save(w.file(&format!("coefficients_{}_{i}.csv", kind.as_str())))?;
            timing.push(vec![
                Cell::Text(kind.as_str().into()),
                Cell::Number(nu),
                Cell::Number(n_steps as f64),
                Cell::Number(end - t0),
                Cell::Number(wall),
            ]);
        }
    }
    timing.save(w.file("timing.csv"))?;
    w.finish()?;
    Ok(())
}

fn read_coefficients(path: &Path, n: usize, np: usize) -> Result<(Vec<f64>, Vec<DVector<f64>>, Vec<DVector<f64>>)> {
    let t = Table::load(path)?;
    let bad = || fvrom::Error::Format(format!("{} does not match the reduced model", path.display()));
    if t.columns.len() != 1 + n + np {
        return Err(bad().into());
    }
    let mut times = Vec::with_capacity(t.rows.len());
    let mut a = Vec::with_capacity(t.rows.len());
    let mut b = Vec::with_capacity(t.rows.len());
    for row in &t.rows {
        let v = row
            .iter()
            .map(|c| match c {
                Cell::Number(x) => Ok(*x),
                Cell::Text(_) => Err(bad()),
            })
            .collect::<std::result::Result<Vec<f64>, _>>()?;
        times.push(v[0]);
        a.push(DVector::from_column_slice(&v[1..1 + n]));
        b.push(DVector::from_column_slice(&v[1 + n..]));
    }
    Ok((times, a, b))
}

fn mean_until(times: &[f64], errors: &[Option<f64>], until: f64) -> f64 {
    let v: Vec<f64> = times
        .iter()
        .zip(errors)
        .filter(|(t, _)| **t <= until + TIME_MATCH * until.abs().max(1.0))
        .filter_map(|(_, e)| *e)
        .collect();
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn max_until(times: &[f64], errors: &[Option<f64>], until: f64) -> f64 {
    times
        .iter()
        .zip(errors)
        .filter(|(t, _)| **t <= until + TIME_MATCH * until.abs().max(1.0))
        .filter_map(|(_, e)| e.map(f64::abs))
        .reduce(f64::max)
        .unwrap_or(f64::NAN)
}

fn compare_stage(ws: &Workspace) -> Result<()> {
    let cfg = &ws.config;
    let mut w = ws.begin("compare")?;
    let sp = Spaces::load(ws, true)?;
    let window = training_window(cfg);

    let infsup = Table::load(ws.path("supremizer", "infsup.csv"))?
        .column("inf_sup")
        .unwrap_or_default();
    let sup_spectrum = match cfg.enrichment()? {
        Enrichment::Approximate => sp.supremizer.as_ref(),
        Enrichment::Exact => None,
    };
    eigenvalue_table(&sp.velocity, &sp.pressure, sup_spectrum, &infsup, cfg.rom.table_rows)
        .save(w.file("eigenvalues.csv"))?;

    let hf_timing = Table::load(ws.path("hf", "timing.csv"))?;
    let online_timing = Table::load(ws.path("online", "timing.csv"))?;

    let mut summary = Table::new(&[
        "model",
        "viscosity",
        "records",
        "failed",
        "velocity_error_window",
        "pressure_error_window",
        "energy_error_window",
        "velocity_error_horizon",
        "pressure_error_horizon",
        "energy_error_horizon",
    ]);
    summary.comments.push(format!(
        "window: first {} s of the online run; horizon: whole online run",
        window
    ));
    let kinds = cfg.stabilisations()?;
    for (i, &nu) in cfg.online.viscosities.iter().enumerate() {
        let ref_u = SnapshotSet::load(ws.path("hf", &format!("reference_{i}_velocity.bin")), sp.mesh.clone())?;
        let ref_p = SnapshotSet::load(ws.path("hf", &format!("reference_{i}_pressure.bin")), sp.mesh.clone())?;
        let ref_times = ref_u.times();
        let ref_energy = EnergySeries::compute("hf", &ref_times, &ref_u.fields(&sp.velocity_bcs)?)?;
        ref_energy.to_table().save(w.file(&format!("energy_hf_{i}.csv")))?;
        let (t0, _) = initial_condition(ws, &sp, i)?;

        let mut timings = Vec::new();
        for &kind in &kinds {
            let label = kind.as_str();
            let spaces = sp.rom_spaces(kind)?;
            let (times, a, b) = read_coefficients(
                &ws.path("online", &format!("coefficients_{label}_{i}.csv")),
                spaces.n_velocity(),
                spaces.n_pressure(),
            )?;
            let failed = Table::load(ws.path("online", &format!("coefficients_{label}_{i}.csv")))?
                .comments
                .iter()
                .any(|c| c.starts_with("failure="));
            let mut matched_t = Vec::new();
            let (mut ru, mut rp, mut hu, mut hp) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            for (k, t) in times.iter().enumerate() {
                let Some(j) = ref_times
                    .iter()
                    .position(|r| (r - t).abs() <= TIME_MATCH * t.abs().max(1.0))
                else {
                    continue;
                };
                let (u, p) = reconstruct(&spaces, &a[k], &b[k])?;
                matched_t.push(*t);
                ru.push(u);
                rp.push(p);
                hu.push(ref_u.field(j, &sp.velocity_bcs)?);
                hp.push(ref_p.field(j, &sp.pressure_bcs)?);
            }
            let eu = ErrorSeries::compute(label, "velocity", nu, &matched_t, &ru, &matched_t, &hu)?;
            let ep = ErrorSeries::compute(label, "pressure", nu, &matched_t, &rp, &matched_t, &hp)?;
            let hf_energy = EnergySeries::compute("hf", &matched_t, &hu)?;
            let en = EnergySeries::compute(label, &matched_t, &ru)?.with_reference(&hf_energy)?;
            eu.to_table().save(w.file(&format!("error_velocity_{label}_{i}.csv")))?;
            ep.to_table().save(w.file(&format!("error_pressure_{label}_{i}.csv")))?;
            en.to_table().save(w.file(&format!("energy_{label}_{i}.csv")))?;
            if let (Some(u), Some(p), Some(hu), Some(hp)) = (ru.last(), rp.last(), hu.last(), hp.last()) {
                save_vtk(
                    &sp.mesh,
                    &[("U_rom", u), ("p_rom", p), ("U_hf", hu), ("p_hf", hp)],
                    w.file(&format!("final_{label}_{i}.vtk")),
                )?;
            }
            let energy_err = en.relative_error.clone().unwrap_or_default();
            let end_window = t0 + window;
            let horizon = f64::INFINITY;
            summary.push(vec![
                Cell::Text(label.into()),
                Cell::Number(nu),
                Cell::Number(matched_t.len() as f64),
                Cell::Number(if failed { 1.0 } else { 0.0 }),
                Cell::Number(mean_until(&matched_t, &eu.errors, end_window)),
                Cell::Number(mean_until(&matched_t, &ep.errors, end_window)),
                Cell::Number(max_until(&matched_t, &energy_err, end_window)),
                Cell::Number(mean_until(&matched_t, &eu.errors, horizon)),
                Cell::Number(mean_until(&matched_t, &ep.errors, horizon)),
                Cell::Number(max_until(&matched_t, &energy_err, horizon)),
            ]);
            let seconds = lookup(&online_timing, label, nu, "wall_seconds").unwrap_or(f64::NAN);
            timings.push(ModelTiming {
                label: label.into(),
                seconds,
                n_velocity: spaces.velocity.primary_count,
                n_pressure: spaces.n_pressure(),
                n_supremizer: spaces.n_velocity() - spaces.velocity.primary_count,
            });
        }
        let simulated = reference_end(cfg) - t0;
        let role = format!("reference_{i}");
        let hf_wall = lookup(&hf_timing, &role, nu, "wall_seconds").unwrap_or(f64::NAN);
        let hf_end = lookup(&hf_timing, &role, nu, "end_time").unwrap_or(f64::NAN);
        let mut report = speedup_report(hf_wall * simulated / hf_end, simulated, cfg.online.timing_repeats, timings)
            .to_table();
        report
            .comments
            .push("hf: single reference run, wall clock scaled to the simulated time".into());
        let name = if cfg.online.viscosities.len() == 1 {
            "speedup.csv".to_string()
        } else {
            format!("speedup_{i}.csv")
        };
        report.save(w.file(&name))?;
    }
    summary.save(w.file("summary.csv"))?;
    w.finish()?;
    Ok(())
}

/// Value of `column` in the first row whose first cell is `label` and
/// second cell is `nu`.
fn lookup(t: &Table, label: &str, nu: f64, column: &str) -> Option<f64> {
    let col = t.columns.iter().position(|c| c == column)?;
    t.rows.iter().find_map(|r| match (&r[0], &r[1], &r[col]) {
        (Cell::Text(l), Cell::Number(v), Cell::Number(x)) if l == label && *v == nu => Some(*x),
        _ => None,
    })
}
