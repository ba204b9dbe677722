//! Plain-text mesh format.
//!
//! ```text
//! FVROM_MESH 1
//! POINTS <n>        followed by n lines "x y"
//! FACES <n>         followed by n lines "2 p0 p1"
//! OWNER <n>         followed by n lines with one cell index
//! NEIGHBOUR <n>     followed by n lines with one cell index (interior faces)
//! PATCHES <n>       followed by n lines "name kind start count"
//! END
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Floats are written
//! in shortest round-trip form so save/load is bit exact.

use std::fmt::Write as _;
use std::path::Path;

use super::{Mesh, Patch, PatchKind, Vec2};
use crate::error::{Error, Result};

pub const MESH_FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "FVROM_MESH";

pub fn write_mesh(mesh: &Mesh) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{MAGIC} {MESH_FORMAT_VERSION}");
    let _ = writeln!(s, "POINTS {}", mesh.points().len());
    for p in mesh.points() {
        let _ = writeln!(s, "{:?} {:?}", p[0], p[1]);
    }
    let _ = writeln!(s, "FACES {}", mesh.n_faces());
    for f in mesh.faces() {
        let _ = writeln!(s, "2 {} {}", f[0], f[1]);
    }
    let _ = writeln!(s, "OWNER {}", mesh.owner().len());
    for o in mesh.owner() {
        let _ = writeln!(s, "{o}");
    }
    let _ = writeln!(s, "NEIGHBOUR {}", mesh.neighbour().len());
    for n in mesh.neighbour() {
        let _ = writeln!(s, "{n}");
    }
    let _ = writeln!(s, "PATCHES {}", mesh.patches().len());
    for p in mesh.patches() {
        let _ = writeln!(s, "{} {} {} {}", p.name, p.kind.as_str(), p.start, p.count);
    }
    s.push_str("END\n");
    s
}

pub fn save_mesh(mesh: &Mesh, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, write_mesh(mesh))?;
    Ok(())
}

pub fn load_mesh(path: impl AsRef<Path>) -> Result<Mesh> {
    parse_mesh(&std::fs::read_to_string(path)?)
}

struct Lines<'a> {
    inner: std::iter::Peekable<Box<dyn Iterator<Item = (usize, &'a str)> + 'a>>,
    last_line: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        let it: Box<dyn Iterator<Item = (usize, &'a str)>> = Box::new(
            text.lines()
                .enumerate()
                .map(|(i, l)| (i + 1, l.trim()))
                .filter(|(_, l)| !l.is_empty() && !l.starts_with('#')),
        );
        Lines {
            inner: it.peekable(),
            last_line: 0,
        }
    }

    fn next_in(&mut self, section: &str) -> Result<(usize, &'a str)> {
        match self.inner.next() {
            Some((n, l)) => {
                self.last_line = n;
                Ok((n, l))
            }
            None => Err(Error::Parse {
                line: self.last_line + 1,
                message: format!("unexpected end of file inside section {section}"),
            }),
        }
    }

    fn header(&mut self, section: &str) -> Result<usize> {
        let (line, text) = match self.inner.next() {
            Some((n, l)) => {
                self.last_line = n;
                (n, l)
            }
            None => {
                return Err(Error::Parse {
                    line: self.last_line + 1,
                    message: format!("missing section {section}"),
                })
            }
        };
        let mut parts = text.split_whitespace();
        if parts.next() != Some(section) {
            return Err(Error::Parse {
                line,
                message: format!("expected section {section}, found '{text}'"),
            });
        }
        let count = parts.next().ok_or_else(|| Error::Parse {
            line,
            message: format!("section {section} is missing its entry count"),
        })?;
        count.parse().map_err(|_| Error::Parse {
            line,
            message: format!("section {section}: invalid entry count '{count}'"),
        })
    }
}

fn field<T: std::str::FromStr>(
    parts: &mut std::str::SplitWhitespace<'_>,
    line: usize,
    what: &str,
) -> Result<T> {
    let tok = parts.next().ok_or_else(|| Error::Parse {
        line,
        message: format!("missing field '{what}'"),
    })?;
    tok.parse().map_err(|_| Error::Parse {
        line,
        message: format!("field '{what}': cannot parse '{tok}'"),
    })
}

fn indices(lines: &mut Lines<'_>, section: &str) -> Result<Vec<usize>> {
    let n = lines.header(section)?;
    (0..n)
        .map(|_| {
            let (line, text) = lines.next_in(section)?;
            field(&mut text.split_whitespace(), line, "cell index")
        })
        .collect()
}

pub fn parse_mesh(text: &str) -> Result<Mesh> {
    let mut lines = Lines::new(text);
    let (line, magic) = lines.next_in("header").map_err(|_| Error::Parse {
        line: 1,
        message: "empty mesh file".into(),
    })?;
    let mut parts = magic.split_whitespace();
    if parts.next() != Some(MAGIC) {
        return Err(Error::Parse {
            line,
            message: format!("expected '{MAGIC} <version>' header"),
        });
    }
    let version: u32 = field(&mut parts, line, "version")?;
    if version != MESH_FORMAT_VERSION {
        return Err(Error::Parse {
            line,
            message: format!("unsupported mesh format version {version}"),
        });
    }

    let n_points = lines.header("POINTS")?;
    let mut points: Vec<Vec2> = Vec::with_capacity(n_points);
    for _ in 0..n_points {
        let (line, text) = lines.next_in("POINTS")?;
        let mut parts = text.split_whitespace();
        points.push([field(&mut parts, line, "x")?, field(&mut parts, line, "y")?]);
    }

    let n_faces = lines.header("FACES")?;
    let mut faces = Vec::with_capacity(n_faces);
    for _ in 0..n_faces {
        let (line, text) = lines.next_in("FACES")?;
        let mut parts = text.split_whitespace();
        let k: usize = field(&mut parts, line, "point count")?;
        if k != 2 {
            return Err(Error::Parse {
                line,
                message: format!("two-dimensional faces need exactly 2 points, found {k}"),
            });
        }
        faces.push([field(&mut parts, line, "p0")?, field(&mut parts, line, "p1")?]);
    }

    let owner = indices(&mut lines, "OWNER")?;
    let neighbour = indices(&mut lines, "NEIGHBOUR")?;

    let n_patches = lines.header("PATCHES")?;
    let mut patches = Vec::with_capacity(n_patches);
    for _ in 0..n_patches {
        let (line, text) = lines.next_in("PATCHES")?;
        let mut parts = text.split_whitespace();
        let name: String = field(&mut parts, line, "name")?;
        let kind_str: String = field(&mut parts, line, "kind")?;
        let kind = PatchKind::parse(&kind_str).ok_or_else(|| Error::Parse {
            line,
            message: format!("unknown patch kind '{kind_str}'"),
        })?;
        patches.push(Patch {
            name,
            kind,
            start: field(&mut parts, line, "start")?,
            count: field(&mut parts, line, "count")?,
        });
    }
    match lines.inner.next() {
        Some((_, "END")) => {}
        Some((line, other)) => {
            return Err(Error::Parse {
                line,
                message: format!("expected END, found '{other}'"),
            })
        }
        None => {
            return Err(Error::Parse {
                line: lines.last_line + 1,
                message: "missing section END".into(),
            })
        }
    }
    Mesh::new(points, faces, owner, neighbour, patches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_cavity_mesh, generate_cylinder_mesh, CylinderMeshParams};

    #[test]
    fn round_trip_is_exact() {
        let m = generate_cavity_mesh(2, 1.0).unwrap();
        let back = parse_mesh(&write_mesh(&m)).unwrap();
        assert_eq!(m, back);

        let c = generate_cylinder_mesh(&CylinderMeshParams {
            azimuthal_cells: 16,
            radial_cells: 4,
            downstream_cells: 4,
            ..Default::default()
        })
        .unwrap();
        let back = parse_mesh(&write_mesh(&c)).unwrap();
        assert_eq!(c, back);
        assert_eq!(c.cell_volumes(), back.cell_volumes());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cavity.mesh");
        let m = generate_cavity_mesh(3, 0.1).unwrap();
        save_mesh(&m, &path).unwrap();
        assert_eq!(load_mesh(&path).unwrap(), m);
    }

    #[test]
    fn truncated_file_names_missing_section() {
        let text = write_mesh(&generate_cavity_mesh(2, 1.0).unwrap());
        let cut = text.find("NEIGHBOUR").unwrap();
        let err = parse_mesh(&text[..cut]).unwrap_err();
        assert!(err.to_string().contains("missing section NEIGHBOUR"), "{err}");
    }

    #[test]
    fn bad_number_reports_line() {
        let text = write_mesh(&generate_cavity_mesh(2, 1.0).unwrap()).replacen("0.5", "zero.5", 1);
        match parse_mesh(&text).unwrap_err() {
            Error::Parse { line, message } => {
                assert!(line > 2);
                assert!(message.contains("zero.5"), "{message}");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn dangling_point_reference_is_a_validation_error() {
        let text = write_mesh(&generate_cavity_mesh(2, 1.0).unwrap());
        let text = text.replacen("2 0 1\n", "2 0 99\n", 1);
        let err = parse_mesh(&text).unwrap_err();
        assert!(matches!(err, Error::InvalidMesh(_)), "{err}");
    }
}
