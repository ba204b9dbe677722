//! Error, energy, spectrum and timing diagnostics, and their CSV tables.

use std::io::{Read, Write};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::field::{Field, Rank};
use crate::pod::{inner_product, l2_norm, PodBasis};

/// HF norms below this leave the relative error undefined.
pub const UNDEFINED_NORM: f64 = 1e-14;

/// Relative time tolerance when matching two time grids.
const TIME_MATCH: f64 = 1e-9;

/// `||a - b|| / ||b||` in the volume-weighted norm, or `None` when `||b||`
/// vanishes.
pub fn relative_error(approx: &Field, reference: &Field) -> Result<Option<f64>> {
    if !approx.is_compatible(reference) {
        return Err(Error::Mismatch("fields differ in mesh or rank".into()));
    }
    let den = l2_norm(reference);
    if den < UNDEFINED_NORM {
        return Ok(None);
    }
    let mut diff = approx.clone();
    diff.axpy(-1.0, reference)?;
    Ok(Some(l2_norm(&diff) / den))
}

/// `1/2 sum_e V_e |u_e|^2`.
pub fn kinetic_energy(velocity: &Field) -> Result<f64> {
    if velocity.rank() != Rank::Vector {
        return Err(Error::Mismatch("kinetic energy needs a vector field".into()));
    }
    Ok(0.5 * inner_product(velocity, velocity)?)
}

fn check_grids(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Mismatch(format!("time grids of length {} and {}", a.len(), b.len())));
    }
    for (x, y) in a.iter().zip(b) {
        if (x - y).abs() > TIME_MATCH * x.abs().max(1.0) {
            return Err(Error::Mismatch(format!("time grids differ at t = {x} vs {y}")));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorSeries {
    pub model: String,
    pub field: String,
    pub parameter: f64,
    pub times: Vec<f64>,
    /// `None` where the reference norm vanishes.
    pub errors: Vec<Option<f64>>,
}

impl ErrorSeries {
    pub fn compute(
        model: &str,
        field: &str,
        parameter: f64,
        times: &[f64],
        approx: &[Field],
        reference_times: &[f64],
        reference: &[Field],
    ) -> Result<Self> {
        check_grids(times, reference_times)?;
        if approx.len() != times.len() || reference.len() != times.len() {
            return Err(Error::Mismatch("field series and time grid lengths differ".into()));
        }
        let errors = approx
            .iter()
            .zip(reference)
            .map(|(a, r)| relative_error(a, r))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            model: model.into(),
            field: field.into(),
            parameter,
            times: times.to_vec(),
            errors,
        })
    }

    /// Mean over the defined entries; `None` if there are none.
    pub fn mean(&self) -> Option<f64> {
        let defined: Vec<f64> = self.errors.iter().flatten().copied().collect();
        if defined.is_empty() {
            None
        } else {
            Some(defined.iter().sum::<f64>() / defined.len() as f64)
        }
    }

    pub fn max(&self) -> Option<f64> {
        self.errors.iter().flatten().copied().reduce(f64::max)
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&["time", "relative_error"]);
        t.comments.push(format!(
            "model={} field={} parameter={}",
            self.model,
            self.field,
            fmt_float(self.parameter)
        ));
        t.comments.push("undefined entries (zero reference norm) are written as nan".into());
        for (time, e) in self.times.iter().zip(&self.errors) {
            t.push(vec![Cell::Number(*time), Cell::Number(e.unwrap_or(f64::NAN))]);
        }
        t
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnergySeries {
    pub model: String,
    pub times: Vec<f64>,
    pub energy: Vec<f64>,
    /// `(E - E_ref) / E_ref` when a reference is attached.
    pub relative_error: Option<Vec<Option<f64>>>,
}

impl EnergySeries {
    pub fn compute(model: &str, times: &[f64], fields: &[Field]) -> Result<Self> {
        if fields.len() != times.len() {
            return Err(Error::Mismatch("field series and time grid lengths differ".into()));
        }
        Ok(Self {
            model: model.into(),
            times: times.to_vec(),
            energy: fields.iter().map(kinetic_energy).collect::<Result<Vec<_>>>()?,
            relative_error: None,
        })
    }

    pub fn with_reference(mut self, reference: &EnergySeries) -> Result<Self> {
        check_grids(&self.times, &reference.times)?;
        self.relative_error = Some(
            self.energy
                .iter()
                .zip(&reference.energy)
                .map(|(e, r)| if r.abs() < UNDEFINED_NORM { None } else { Some((e - r) / r) })
                .collect(),
        );
        Ok(self)
    }

    /// Largest absolute relative error against the reference.
    pub fn max_abs_error(&self) -> Option<f64> {
        self.relative_error
            .as_ref()?
            .iter()
            .flatten()
            .map(|v| v.abs())
            .reduce(f64::max)
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&["time", "kinetic_energy", "relative_error"]);
        t.comments.push(format!("model={}", self.model));
        for (i, (time, e)) in self.times.iter().zip(&self.energy).enumerate() {
            let rel = self
                .relative_error
                .as_ref()
                .and_then(|r| r[i])
                .unwrap_or(f64::NAN);
            t.push(vec![Cell::Number(*time), Cell::Number(*e), Cell::Number(rel)]);
        }
        t
    }
}

/// Wall-clock median of `repeats` runs of `f`, with the last result.
pub fn time_median<T>(repeats: usize, mut f: impl FnMut() -> Result<T>) -> Result<(f64, T)> {
    if repeats == 0 {
        return Err(Error::InvalidInput("at least one timing repeat is required".into()));
    }
    let mut times = Vec::with_capacity(repeats);
    let mut last = None;
    for _ in 0..repeats {
        let start = Instant::now();
        last = Some(f()?);
        times.push(start.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    Ok((times[times.len() / 2], last.unwrap()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelTiming {
    pub label: String,
    pub seconds: f64,
    pub n_velocity: usize,
    pub n_pressure: usize,
    pub n_supremizer: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpeedupReport {
    /// Full-order wall clock over `simulated_time`, from a single run.
    pub hf_seconds: f64,
    pub simulated_time: f64,
    /// Repeats behind each reduced-model median.
    pub repeats: usize,
    pub models: Vec<ModelTiming>,
}

impl SpeedupReport {
    pub fn speedup(&self, label: &str) -> Option<f64> {
        self.models
            .iter()
            .find(|m| m.label == label)
            .map(|m| self.hf_seconds / m.seconds)
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&["model", "wall_seconds", "speedup", "n_velocity", "n_pressure", "n_supremizer"]);
        t.comments.push(format!(
            "wall clock around the stepping loop only, reduced models median of {} repeats, simulated time {}",
            self.repeats,
            fmt_float(self.simulated_time)
        ));
        t.push(vec![
            Cell::Text("hf".into()),
            Cell::Number(self.hf_seconds),
            Cell::Number(1.0),
            Cell::Number(f64::NAN),
            Cell::Number(f64::NAN),
            Cell::Number(f64::NAN),
        ]);
        for m in &self.models {
            t.push(vec![
                Cell::Text(m.label.clone()),
                Cell::Number(m.seconds),
                Cell::Number(self.hf_seconds / m.seconds),
                Cell::Number(m.n_velocity as f64),
                Cell::Number(m.n_pressure as f64),
                Cell::Number(m.n_supremizer as f64),
            ]);
        }
        t
    }
}

pub fn speedup_report(hf_seconds: f64, simulated_time: f64, repeats: usize, models: Vec<ModelTiming>) -> SpeedupReport {
    SpeedupReport {
        hf_seconds,
        simulated_time,
        repeats,
        models,
    }
}

/// Cumulative energies of the velocity, pressure and supremizer spectra per
/// mode count, with optional inf-sup constants per supremizer count.
pub fn eigenvalue_table(
    velocity: &PodBasis,
    pressure: &PodBasis,
    supremizer: Option<&PodBasis>,
    infsup: &[f64],
    rows: usize,
) -> Table {
    let mut t = Table::new(&["n_modes", "velocity", "pressure", "supremizer", "inf_sup"]);
    let get = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(f64::NAN);
    let n = rows
        .min(velocity.cumulative_energy.len())
        .min(pressure.cumulative_energy.len());
    for i in 0..n {
        t.push(vec![
            Cell::Number((i + 1) as f64),
            Cell::Number(velocity.cumulative_energy[i]),
            Cell::Number(pressure.cumulative_energy[i]),
            Cell::Number(supremizer.map_or(f64::NAN, |s| get(&s.cumulative_energy, i))),
            Cell::Number(get(infsup, i + 1)),
        ]);
    }
    t
}

/// Table of time series with one column per series.
pub fn series_table(times: &[f64], columns: &[(&str, &[f64])]) -> Result<Table> {
    let mut names = vec!["time"];
    names.extend(columns.iter().map(|c| c.0));
    let mut t = Table::new(&names);
    for (i, time) in times.iter().enumerate() {
        let mut row = vec![Cell::Number(*time)];
        for (name, c) in columns {
            let v = c
                .get(i)
                .ok_or_else(|| Error::Mismatch(format!("column {name} is shorter than the time grid")))?;
            row.push(Cell::Number(*v));
        }
        t.push(row);
    }
    Ok(t)
}

#[derive(Clone, Debug)]
pub enum Cell {
    Number(f64),
    Text(String),
}

impl PartialEq for Cell {
    /// Numbers compare bitwise so that `nan` entries round-trip.
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Cell::Number(a), Cell::Number(b)) => a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()),
            (Cell::Text(a), Cell::Text(b)) => a == b,
            _ => false,
        }
    }
}

/// A CSV table with `#` comment lines before the header.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub comments: Vec<String>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

/// 17 significant digits: enough to round-trip any `f64`.
pub fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            comments: Vec::new(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(
            self.rows
                .iter()
                .map(|r| match &r[i] {
                    Cell::Number(v) => *v,
                    Cell::Text(_) => f64::NAN,
                })
                .collect(),
        )
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        for c in &self.comments {
            writeln!(w, "# {c}")?;
        }
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.columns).map_err(csv_error)?;
        for r in &self.rows {
            out.write_record(r.iter().map(|c| match c {
                Cell::Number(v) => fmt_float(*v),
                Cell::Text(s) => s.clone(),
            }))
            .map_err(csv_error)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut text = String::new();
        r.read_to_string(&mut text)?;
        let mut comments = Vec::new();
        let mut body = String::new();
        for line in text.lines() {
            match line.strip_prefix('#') {
                Some(c) if body.is_empty() => comments.push(c.trim_start().to_string()),
                _ => {
                    body.push_str(line);
                    body.push('\n');
                }
            }
        }
        let mut rd = csv::Reader::from_reader(body.as_bytes());
        let columns = rd.headers().map_err(csv_error)?.iter().map(String::from).collect();
        let mut rows = Vec::new();
        for rec in rd.records() {
            let rec = rec.map_err(csv_error)?;
            rows.push(
                rec.iter()
                    .map(|s| match s.parse::<f64>() {
                        Ok(v) => Cell::Number(v),
                        Err(_) => Cell::Text(s.to_string()),
                    })
                    .collect(),
            );
        }
        Ok(Self { comments, columns, rows })
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::read_from(&mut std::fs::File::open(path)?)
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate_cavity_mesh;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn mesh() -> Arc<crate::Mesh> {
        Arc::new(generate_cavity_mesh(5, 1.0).unwrap())
    }

    #[test]
    fn relative_error_cases() {
        let m = mesh();
        let hf = Field::from_fn(m.clone(), Rank::Vector, |x| vec![x[0], 1.0 - x[1]]);
        assert_eq!(relative_error(&hf, &hf).unwrap(), Some(0.0));
        let mut two = hf.clone();
        two.scale(2.0);
        assert!((relative_error(&two, &hf).unwrap().unwrap() - 1.0).abs() < 1e-14);
        let zero = Field::zeros(m.clone(), Rank::Vector);
        assert_eq!(relative_error(&hf, &zero).unwrap(), None);
    }

    #[test]
    fn relative_error_matches_cellwise_sum() {
        let m = mesh();
        let a = Field::from_fn(m.clone(), Rank::Vector, |x| vec![(3.0 * x[0]).sin(), x[1] * x[0]]);
        let b = Field::from_fn(m.clone(), Rank::Vector, |x| vec![x[1].cos(), x[0] - 0.2]);
        let (mut num, mut den) = (0.0, 0.0);
        for c in 0..m.n_cells() {
            let v = m.cell_volumes()[c];
            for k in 0..2 {
                num += v * (a.cell(c)[k] - b.cell(c)[k]).powi(2);
                den += v * b.cell(c)[k].powi(2);
            }
        }
        let e = relative_error(&a, &b).unwrap().unwrap();
        assert!((e - (num / den).sqrt()).abs() < 1e-13);
    }

    #[test]
    fn kinetic_energy_cases() {
        let m = mesh();
        assert_eq!(kinetic_energy(&Field::zeros(m.clone(), Rank::Vector)).unwrap(), 0.0);
        let u = Field::uniform(m.clone(), &[0.6, 0.8]).unwrap();
        assert!((kinetic_energy(&u).unwrap() - 0.5).abs() < 1e-14);
        assert!(kinetic_energy(&Field::zeros(m, Rank::Scalar)).is_err());
    }

    #[test]
    fn identical_series_have_zero_error() {
        let m = mesh();
        let f: Vec<Field> = (0..3)
            .map(|k| Field::uniform(m.clone(), &[k as f64 + 1.0, 0.0]).unwrap())
            .collect();
        let t = [0.1, 0.2, 0.3];
        let s = ErrorSeries::compute("sup", "u", 1.0, &t, &f, &t, &f).unwrap();
        assert!(s.errors.iter().all(|e| *e == Some(0.0)));
        assert!(ErrorSeries::compute("sup", "u", 1.0, &t, &f, &[0.1, 0.2, 0.31], &f).is_err());
    }

    #[test]
    fn speedup_of_equal_times_is_one() {
        let r = speedup_report(
            2.0,
            1.0,
            3,
            vec![ModelTiming {
                label: "ppe".into(),
                seconds: 2.0,
                n_velocity: 1,
                n_pressure: 1,
                n_supremizer: 0,
            }],
        );
        assert_eq!(r.speedup("ppe"), Some(1.0));
    }

    #[test]
    fn table_round_trip_with_text_and_nan() {
        let r = speedup_report(
            10.0,
            2.0,
            3,
            vec![ModelTiming {
                label: "sup".into(),
                seconds: 0.1,
                n_velocity: 10,
                n_pressure: 10,
                n_supremizer: 10,
            }],
        );
        let t = r.to_table();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        let back = Table::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, t);
    }

    proptest! {
        #[test]
        fn csv_round_trips_any_float(values in proptest::collection::vec(any::<f64>(), 1..20)) {
            let mut t = Table::new(&["x"]);
            for v in &values {
                t.push(vec![Cell::Number(*v)]);
            }
            let mut buf = Vec::new();
            t.write_to(&mut buf).unwrap();
            let back = Table::read_from(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(back, t);
        }
    }
}
