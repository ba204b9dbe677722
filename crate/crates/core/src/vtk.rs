//! Legacy VTK (ASCII unstructured grid) export of cell data.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use crate::analysis::fmt_float;
use crate::error::{Error, Result};
use crate::field::{Field, Rank};
use crate::mesh::Mesh;

const VTK_POLYGON: u8 = 7;

/// Counter-clockwise point loop of every cell.
pub fn cell_polygons(mesh: &Mesh) -> Result<Vec<Vec<usize>>> {
    let mut edges: Vec<HashMap<usize, usize>> = vec![HashMap::new(); mesh.n_cells()];
    for (f, &[a, b]) in mesh.faces().iter().enumerate() {
        for (cell, sign) in mesh.face_cells(f) {
            let (from, to) = if sign > 0.0 { (a, b) } else { (b, a) };
            edges[cell].insert(from, to);
        }
    }
    edges
        .into_iter()
        .enumerate()
        .map(|(c, e)| {
            let start = *e
                .keys()
                .min()
                .ok_or_else(|| Error::InvalidMesh(format!("cell {c} has no faces")))?;
            let mut loop_ = vec![start];
            let mut cur = start;
            loop {
                let next = *e
                    .get(&cur)
                    .ok_or_else(|| Error::InvalidMesh(format!("cell {c} is not closed")))?;
                if next == start {
                    break;
                }
                if loop_.len() > e.len() {
                    return Err(Error::InvalidMesh(format!("cell {c} boundary is not a single loop")));
                }
                loop_.push(next);
                cur = next;
            }
            if loop_.len() != e.len() {
                return Err(Error::InvalidMesh(format!("cell {c} boundary is not a single loop")));
            }
            Ok(loop_)
        })
        .collect()
}

pub fn write_vtk(mesh: &Mesh, fields: &[(&str, &Field)], w: &mut impl Write) -> Result<()> {
    for (name, f) in fields {
        if f.mesh().n_cells() != mesh.n_cells() {
            return Err(Error::Mismatch(format!("field {name} lives on a different mesh")));
        }
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(Error::InvalidInput(format!("invalid VTK array name {name:?}")));
        }
    }
    let polys = cell_polygons(mesh)?;
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "fvrom export")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {} double", mesh.points().len())?;
    for p in mesh.points() {
        writeln!(w, "{} {} 0", fmt_float(p[0]), fmt_float(p[1]))?;
    }
    let size: usize = polys.iter().map(|p| p.len() + 1).sum();
    writeln!(w, "CELLS {} {}", polys.len(), size)?;
    for p in &polys {
        let ids: Vec<String> = p.iter().map(|i| i.to_string()).collect();
        writeln!(w, "{} {}", p.len(), ids.join(" "))?;
    }
    writeln!(w, "CELL_TYPES {}", polys.len())?;
    for _ in &polys {
        writeln!(w, "{VTK_POLYGON}")?;
    }
    if !fields.is_empty() {
        writeln!(w, "CELL_DATA {}", mesh.n_cells())?;
    }
    for (name, f) in fields {
        match f.rank() {
            Rank::Scalar => {
                writeln!(w, "SCALARS {name} double 1")?;
                writeln!(w, "LOOKUP_TABLE default")?;
                for c in 0..mesh.n_cells() {
                    writeln!(w, "{}", fmt_float(f.cell(c)[0]))?;
                }
            }
            Rank::Vector => {
                writeln!(w, "VECTORS {name} double")?;
                for c in 0..mesh.n_cells() {
                    let v = f.cell(c);
                    writeln!(w, "{} {} 0", fmt_float(v[0]), fmt_float(v[1]))?;
                }
            }
        }
    }
    Ok(())
}

pub fn save_vtk(mesh: &Mesh, fields: &[(&str, &Field)], path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_vtk(mesh, fields, &mut f)?;
    f.flush()?;
    Ok(())
}
