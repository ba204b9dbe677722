//! Case files: TOML with a desk-scale body and optional named scale
//! overrides.
//!
//! ```toml
//! [mesh]
//! generator = "cavity"
//! n = 64
//!
//! [scales.full]
//! "mesh.n" = 200
//! ```
//!
//! Overrides (from a scale or `--set key=value`) address any key by its
//! dotted path; the value is parsed as a TOML value, falling back to a
//! string.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use fvrom::hf::{PisoSettings, TimeScheme, TransientCase};
use fvrom::mesh::{generate_cavity_mesh, generate_cylinder_mesh, load_mesh, CylinderMeshParams, Mesh};
use fvrom::rom::Stabilisation;
use fvrom::supremizer::Enrichment;
use fvrom::{BcKind, BoundaryCondition, BoundaryConditions, Rank, Scheme};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("{0}")]
    Toml(#[from] toml::de::Error),
    #[error("override {0:?} is not of the form key=value")]
    Override(String),
    #[error("unknown scale {0:?}")]
    Scale(String),
    #[error("{0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CaseConfig {
    pub name: String,
    pub mesh: MeshConfig,
    pub velocity_bc: Vec<BcConfig>,
    pub pressure_bc: Vec<BcConfig>,
    pub initial: InitialConfig,
    pub hf: HfConfig,
    pub rom: RomConfig,
    pub online: OnlineConfig,
    #[serde(default, skip_serializing_if = "toml::Table::is_empty")]
    pub scales: toml::Table,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    /// `cavity`, `cylinder` or `file`.
    pub generator: String,
    pub n: Option<usize>,
    pub side: Option<f64>,
    pub path: Option<String>,
    pub radius: Option<f64>,
    pub half_height: Option<f64>,
    pub upstream: Option<f64>,
    pub downstream: Option<f64>,
    pub radial_cells: Option<usize>,
    pub azimuthal_cells: Option<usize>,
    pub radial_grading: Option<f64>,
    pub upstream_cells: Option<usize>,
    pub downstream_cells: Option<usize>,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BcConfig {
    pub patch: String,
    /// `fixed_value`, `fixed_gradient`, `zero_gradient` or `symmetry`.
    pub kind: String,
    pub value: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub velocity: Vec<f64>,
    pub bump: Option<BumpConfig>,
}

/// `amplitude * exp(-|x - centre|^2 / width^2)` added to the second
/// velocity component.
#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BumpConfig {
    pub amplitude: f64,
    pub centre: [f64; 2],
    pub width: f64,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct HfConfig {
    pub viscosities: Vec<f64>,
    pub time_step: f64,
    pub end_time: f64,
    pub snapshot_start: f64,
    pub snapshot_interval: f64,
    #[serde(default = "default_scheme")]
    pub convection: String,
    #[serde(default = "default_time_scheme")]
    pub time_scheme: String,
    #[serde(default = "default_one")]
    pub outer_iterations: usize,
    #[serde(default = "default_two")]
    pub correctors: usize,
    #[serde(default)]
    pub non_orthogonal_correctors: usize,
    #[serde(default = "default_momentum_tol")]
    pub momentum_tolerance: f64,
    #[serde(default = "default_pressure_tol")]
    pub pressure_tolerance: f64,
    #[serde(default)]
    pub probes: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RomConfig {
    pub n_velocity: usize,
    pub n_pressure: usize,
    pub n_supremizer: usize,
    /// `exact` or `approximate`.
    pub enrichment: String,
    /// Any of `none`, `sup`, `ppe`.
    pub stabilisations: Vec<String>,
    /// Rows of the eigenvalue table.
    #[serde(default = "default_table_rows")]
    pub table_rows: usize,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OnlineConfig {
    /// Test viscosities; each gets a full-order reference run.
    pub viscosities: Vec<f64>,
    /// Defaults to the snapshot interval.
    pub time_step: Option<f64>,
    /// Simulated time integrated by the reduced models.
    pub horizon: f64,
    /// `case` starts at t = 0 from the case initial condition; `reference`
    /// starts from the reference run's first snapshot.
    pub initial: String,
    #[serde(default = "default_repeats")]
    pub timing_repeats: usize,
}

fn default_scheme() -> String {
    "linear".into()
}
fn default_time_scheme() -> String {
    "euler".into()
}
fn default_one() -> usize {
    1
}
fn default_two() -> usize {
    2
}
fn default_momentum_tol() -> f64 {
    1e-7
}
fn default_pressure_tol() -> f64 {
    1e-8
}
fn default_table_rows() -> usize {
    10
}
fn default_repeats() -> usize {
    3
}

/// Parses a case file, applies the named scale (if any) and then the
/// `key=value` overrides, and validates the result.
pub fn load_case(path: &Path, scale: Option<&str>, overrides: &[String]) -> Result<CaseConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.display().to_string(),
        source,
    })?;
    parse_case(&text, scale, overrides)
}

pub fn parse_case(text: &str, scale: Option<&str>, overrides: &[String]) -> Result<CaseConfig, ConfigError> {
    let mut doc: toml::Table = text.parse()?;
    if let Some(name) = scale {
        if name != "desk" {
            let entries = doc
                .get("scales")
                .and_then(|s| s.get(name))
                .and_then(|s| s.as_table())
                .cloned()
                .ok_or_else(|| ConfigError::Scale(name.into()))?;
            for (k, v) in entries {
                set_path(&mut doc, &k, v)?;
            }
        }
    }
    for o in overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| ConfigError::Override(o.clone()))?;
        set_path(&mut doc, k.trim(), parse_value(v.trim()))?;
    }
    let cfg: CaseConfig = toml::Value::Table(doc).try_into()?;
    cfg.validate()?;
    Ok(cfg)
}

fn parse_value(s: &str) -> toml::Value {
    let wrapped = format!("v = {s}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(s.into()),
    }
}

fn set_path(doc: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), ConfigError> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = doc;
    for p in &parts[..parts.len() - 1] {
        let next = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = next
            .as_table_mut()
            .ok_or_else(|| invalid(format!("override {key}: {p} is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl CaseConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let hf = &self.hf;
        if hf.viscosities.is_empty() {
            return Err(invalid("hf.viscosities must not be empty"));
        }
        if hf.viscosities.iter().any(|v| !(*v > 0.0)) {
            return Err(invalid("viscosities must be positive"));
        }
        if !(hf.time_step > 0.0) || !(hf.end_time > 0.0) || !(hf.snapshot_interval > 0.0) {
            return Err(invalid("hf time step, end time and snapshot interval must be positive"));
        }
        if hf.snapshot_start < 0.0 || hf.snapshot_start >= hf.end_time {
            return Err(invalid("hf.snapshot_start must lie in [0, end_time)"));
        }
        Scheme::parse(&hf.convection).ok_or_else(|| invalid(format!("unknown convection scheme {:?}", hf.convection)))?;
        parse_time_scheme(&hf.time_scheme)?;
        let rom = &self.rom;
        if rom.n_velocity == 0 || rom.n_pressure == 0 {
            return Err(invalid("rom mode counts must be positive"));
        }
        if rom.n_velocity + rom.n_supremizer > fvrom::rom::MAX_MODES || rom.n_pressure > fvrom::rom::MAX_MODES {
            return Err(invalid(format!("reduced dimension exceeds {}", fvrom::rom::MAX_MODES)));
        }
        let enrichment = self.enrichment()?;
        if enrichment == Enrichment::Exact && rom.n_supremizer > rom.n_pressure {
            return Err(invalid("exact enrichment gives at most one supremizer per pressure mode"));
        }
        if rom.stabilisations.is_empty() {
            return Err(invalid("rom.stabilisations must not be empty"));
        }
        self.stabilisations()?;
        if self.online.viscosities.is_empty() {
            return Err(invalid("online.viscosities must not be empty"));
        }
        if !(self.online.horizon > 0.0) || self.online.time_step.is_some_and(|d| !(d > 0.0)) {
            return Err(invalid("online horizon and time step must be positive"));
        }
        let ratio = self.hf.snapshot_interval / self.online_time_step();
        if ratio < 1.0 - 1e-9 || (ratio - ratio.round()).abs() > 1e-9 * ratio {
            return Err(invalid("online.time_step must divide hf.snapshot_interval"));
        }
        if self.online.initial == "case" && self.online.horizon <= self.hf.snapshot_start {
            return Err(invalid("online.horizon ends before the first snapshot"));
        }
        if self.online.timing_repeats == 0 {
            return Err(invalid("online.timing_repeats must be positive"));
        }
        match self.online.initial.as_str() {
            "case" | "reference" => {}
            other => return Err(invalid(format!("unknown online.initial {other:?}"))),
        }
        if self.initial.velocity.len() != 2 {
            return Err(invalid("initial.velocity needs two components"));
        }
        for bc in self.velocity_bc.iter().chain(&self.pressure_bc) {
            bc_kind(bc)?;
        }
        match self.mesh.generator.as_str() {
            "cavity" => {
                if self.mesh.n.unwrap_or(0) == 0 || !(self.mesh.side.unwrap_or(0.0) > 0.0) {
                    return Err(invalid("cavity mesh needs positive n and side"));
                }
            }
            "cylinder" => {}
            "file" => {
                if self.mesh.path.is_none() {
                    return Err(invalid("file mesh needs a path"));
                }
            }
            other => return Err(invalid(format!("unknown mesh generator {other:?}"))),
        }
        Ok(())
    }

    pub fn enrichment(&self) -> Result<Enrichment, ConfigError> {
        Enrichment::parse(&self.rom.enrichment)
            .ok_or_else(|| invalid(format!("unknown enrichment {:?}", self.rom.enrichment)))
    }

    pub fn stabilisations(&self) -> Result<Vec<Stabilisation>, ConfigError> {
        self.rom
            .stabilisations
            .iter()
            .map(|s| Stabilisation::parse(s).ok_or_else(|| invalid(format!("unknown stabilisation {s:?}"))))
            .collect()
    }

    pub fn online_time_step(&self) -> f64 {
        self.online.time_step.unwrap_or(self.hf.snapshot_interval)
    }

    /// Canonical TOML of the resolved configuration (scales dropped).
    pub fn canonical(&self) -> String {
        let mut c = self.clone();
        c.scales = toml::Table::new();
        toml::to_string(&c).expect("configuration serialises")
    }

    pub fn build_mesh(&self) -> fvrom::Result<Mesh> {
        let m = &self.mesh;
        match m.generator.as_str() {
            "cavity" => generate_cavity_mesh(m.n.unwrap_or(0), m.side.unwrap_or(0.0)),
            "cylinder" => {
                let d = CylinderMeshParams::default();
                generate_cylinder_mesh(&CylinderMeshParams {
                    radius: m.radius.unwrap_or(d.radius),
                    half_height: m.half_height.unwrap_or(d.half_height),
                    upstream: m.upstream.unwrap_or(d.upstream),
                    downstream: m.downstream.unwrap_or(d.downstream),
                    radial_cells: m.radial_cells.unwrap_or(d.radial_cells),
                    azimuthal_cells: m.azimuthal_cells.unwrap_or(d.azimuthal_cells),
                    radial_grading: m.radial_grading.unwrap_or(d.radial_grading),
                    upstream_cells: m.upstream_cells.unwrap_or(d.upstream_cells),
                    downstream_cells: m.downstream_cells.unwrap_or(d.downstream_cells),
                })
            }
            _ => load_mesh(m.path.as_deref().unwrap_or_default()),
        }
    }

    pub fn velocity_bcs(&self, mesh: &Mesh) -> fvrom::Result<BoundaryConditions> {
        bcs(mesh, Rank::Vector, &self.velocity_bc)
    }

    pub fn pressure_bcs(&self, mesh: &Mesh) -> fvrom::Result<BoundaryConditions> {
        bcs(mesh, Rank::Scalar, &self.pressure_bc)
    }

    pub fn initial_velocity(&self, mesh: &Mesh) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * mesh.n_cells());
        for x in mesh.cell_centres() {
            let mut v = [self.initial.velocity[0], self.initial.velocity[1]];
            if let Some(b) = &self.initial.bump {
                let r2 = (x[0] - b.centre[0]).powi(2) + (x[1] - b.centre[1]).powi(2);
                v[1] += b.amplitude * (-r2 / (b.width * b.width)).exp();
            }
            out.extend_from_slice(&v);
        }
        out
    }

    /// Full-order case for one viscosity.
    pub fn transient_case(&self, mesh: &Arc<Mesh>, viscosity: f64, end_time: f64) -> fvrom::Result<TransientCase> {
        let hf = &self.hf;
        Ok(TransientCase {
            mesh: mesh.clone(),
            velocity_bcs: self.velocity_bcs(mesh)?,
            pressure_bcs: self.pressure_bcs(mesh)?,
            initial_velocity: self.initial_velocity(mesh),
            viscosity,
            time_step: hf.time_step,
            end_time,
            snapshot_start: hf.snapshot_start,
            snapshot_interval: hf.snapshot_interval,
            convection: Scheme::parse(&hf.convection).unwrap_or(Scheme::Linear),
            time_scheme: parse_time_scheme(&hf.time_scheme).unwrap_or(TimeScheme::Euler),
            piso: PisoSettings {
                outer_iterations: hf.outer_iterations,
                correctors: hf.correctors,
                non_orthogonal_correctors: hf.non_orthogonal_correctors,
                momentum_tolerance: hf.momentum_tolerance,
                pressure_tolerance: hf.pressure_tolerance,
                ..PisoSettings::default()
            },
        })
    }
}

fn parse_time_scheme(s: &str) -> Result<TimeScheme, ConfigError> {
    match s {
        "euler" => Ok(TimeScheme::Euler),
        "bdf2" => Ok(TimeScheme::Bdf2),
        other => Err(invalid(format!("unknown time scheme {other:?}"))),
    }
}

fn bc_kind(bc: &BcConfig) -> Result<BcKind, ConfigError> {
    let need = |v: &Option<Vec<f64>>| {
        v.clone()
            .ok_or_else(|| invalid(format!("boundary condition on {} needs a value", bc.patch)))
    };
    match bc.kind.as_str() {
        "fixed_value" => Ok(BcKind::FixedValue(need(&bc.value)?)),
        "fixed_gradient" => Ok(BcKind::FixedGradient(need(&bc.value)?)),
        "zero_gradient" => Ok(BcKind::ZeroGradient),
        "symmetry" => Ok(BcKind::Symmetry),
        other => Err(invalid(format!("unknown boundary condition kind {other:?}"))),
    }
}

fn bcs(mesh: &Mesh, rank: Rank, list: &[BcConfig]) -> fvrom::Result<BoundaryConditions> {
    let conds = list
        .iter()
        .map(|b| {
            bc_kind(b)
                .map(|k| BoundaryCondition::new(b.patch.clone(), k))
                .map_err(|e| fvrom::Error::InvalidInput(e.to_string()))
        })
        .collect::<fvrom::Result<Vec<_>>>()?;
    BoundaryConditions::new(mesh, rank, conds)
}

#[cfg(test)]
mod tests {
    use super::*;

    const CAVITY: &str = include_str!("../cases/cavity.case");
    const CYLINDER: &str = include_str!("../cases/cylinder.case");

    #[test]
    fn bundled_cases_parse_at_both_scales() {
        for text in [CAVITY, CYLINDER] {
            let desk = parse_case(text, None, &[]).unwrap();
            let full = parse_case(text, Some("full"), &[]).unwrap();
            assert_ne!(desk, full);
            assert_eq!(desk.rom, full.rom);
        }
    }

    #[test]
    fn overrides_apply_after_scale() {
        let c = parse_case(CAVITY, Some("full"), &["mesh.n=16".into(), "hf.time_scheme=euler".into()]).unwrap();
        assert_eq!(c.mesh.n, Some(16));
        assert_eq!(c.hf.time_scheme, "euler");
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            parse_case(CAVITY, None, &["hf.viscosities=[]".into()]),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(parse_case(CAVITY, None, &["hf.typo=1".into()]), Err(ConfigError::Toml(_))));
        assert!(matches!(parse_case(CAVITY, Some("huge"), &[]), Err(ConfigError::Scale(_))));
        assert!(matches!(parse_case(CAVITY, None, &["novalue".into()]), Err(ConfigError::Override(_))));
        assert!(parse_case(CAVITY, None, &["rom.n_velocity=40".into()]).is_err());
        assert!(parse_case(CAVITY, None, &["rom.stabilisations=[\"pspg\"]".into()]).is_err());
    }

    #[test]
    fn canonical_form_is_stable() {
        let a = parse_case(CAVITY, None, &[]).unwrap();
        let b = parse_case(&a.canonical(), None, &[]).unwrap();
        assert_eq!(a.canonical(), b.canonical());
    }
}
