use std::collections::HashMap;

use super::{Mesh, Patch, PatchKind, Vec2};
use crate::error::{Error, Result};

/// Assembles owner/neighbour connectivity from counter-clockwise polygon
/// vertex loops. `classify` maps the midpoint of every boundary edge to an
/// index into `patch_defs`.
pub(crate) fn from_polygons(
    points: Vec<Vec2>,
    cells: &[Vec<usize>],
    patch_defs: &[(&str, PatchKind)],
    classify: impl Fn(Vec2) -> usize,
) -> Result<Mesh> {
    // edge key -> (owner cell, owner's traversal order)
    let mut first_seen: HashMap<(usize, usize), (usize, [usize; 2])> = HashMap::new();
    let mut interior: Vec<(usize, usize, [usize; 2])> = Vec::new();
    for (c, cell) in cells.iter().enumerate() {
        for k in 0..cell.len() {
            let a = cell[k];
            let b = cell[(k + 1) % cell.len()];
            let key = (a.min(b), a.max(b));
            match first_seen.remove(&key) {
                Some((owner, order)) => interior.push((owner, c, order)),
                None => {
                    first_seen.insert(key, (c, [a, b]));
                }
            }
        }
    }
    interior.sort_by_key(|&(o, n, _)| (o, n));

    let mut boundary: Vec<(usize, usize, [usize; 2])> = first_seen
        .into_values()
        .map(|(owner, order)| {
            let (pa, pb) = (points[order[0]], points[order[1]]);
            let mid = [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])];
            (classify(mid), owner, order)
        })
        .collect();
    // Deterministic order: by patch, then owner, then point indices.
    boundary.sort_by_key(|&(p, o, order)| (p, o, order));

    let mut faces = Vec::with_capacity(interior.len() + boundary.len());
    let mut owner = Vec::with_capacity(faces.capacity());
    let mut neighbour = Vec::with_capacity(interior.len());
    for &(o, n, order) in &interior {
        faces.push(order);
        owner.push(o);
        neighbour.push(n);
    }
    let mut patches = Vec::with_capacity(patch_defs.len());
    let mut start = faces.len();
    for (pi, &(name, kind)) in patch_defs.iter().enumerate() {
        let mut count = 0;
        for &(p, o, order) in &boundary {
            if p == pi {
                faces.push(order);
                owner.push(o);
                count += 1;
            }
        }
        patches.push(Patch {
            name: name.to_string(),
            kind,
            start,
            count,
        });
        start += count;
    }
    if faces.len() != interior.len() + boundary.len() {
        return Err(Error::InvalidMesh(
            "boundary edge classified into an unknown patch".into(),
        ));
    }
    Mesh::new(points, faces, owner, neighbour, patches)
}

/// Uniform square cavity with `n_per_side`² quadrilateral cells. The top
/// side forms patch `lid`, the other three sides patch `walls`.
pub fn generate_cavity_mesh(n_per_side: usize, side_length: f64) -> Result<Mesh> {
    if n_per_side < 2 {
        return Err(Error::InvalidInput(format!(
            "cavity mesh needs at least 2 cells per side, got {n_per_side}"
        )));
    }
    if !(side_length > 0.0) {
        return Err(Error::InvalidInput(format!(
            "cavity side length must be positive, got {side_length}"
        )));
    }
    let n = n_per_side;
    let h = side_length / n as f64;
    let coord = |i: usize| if i == n { side_length } else { i as f64 * h };
    let mut points = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            points.push([coord(i), coord(j)]);
        }
    }
    let pid = |i: usize, j: usize| j * (n + 1) + i;
    let cells: Vec<Vec<usize>> = (0..n)
        .flat_map(|j| (0..n).map(move |i| (i, j)))
        .map(|(i, j)| vec![pid(i, j), pid(i + 1, j), pid(i + 1, j + 1), pid(i, j + 1)])
        .collect();
    let top = side_length * (1.0 - 1e-9);
    from_polygons(
        points,
        &cells,
        &[("lid", PatchKind::Wall), ("walls", PatchKind::Wall)],
        |mid| if mid[1] > top { 0 } else { 1 },
    )
}

/// Geometry of the body-fitted cylinder-in-channel mesh.
///
/// The cylinder (centred at the origin) sits inside a square O-grid block
/// of half-width `half_height`, which spans the full channel height. Optional
/// Cartesian blocks extend the channel upstream to `x = -upstream` and
/// downstream to `x = downstream`.
#[derive(Clone, Debug, PartialEq)]
pub struct CylinderMeshParams {
    pub radius: f64,
    pub half_height: f64,
    pub upstream: f64,
    pub downstream: f64,
    pub radial_cells: usize,
    /// Must be a positive multiple of 8 so that block corners fall on mesh lines.
    pub azimuthal_cells: usize,
    /// Ratio of the outermost to the innermost radial cell size.
    pub radial_grading: f64,
    pub upstream_cells: usize,
    pub downstream_cells: usize,
}

impl Default for CylinderMeshParams {
    fn default() -> Self {
        CylinderMeshParams {
            radius: 0.5,
            half_height: 4.0,
            upstream: 4.0,
            downstream: 16.0,
            radial_cells: 24,
            azimuthal_cells: 96,
            radial_grading: 6.0,
            upstream_cells: 0,
            downstream_cells: 36,
        }
    }
}

/// Body-fitted O-grid around a circular cylinder embedded in a rectangular
/// channel, with patches `inlet`, `outlet`, `cylinder` and `top_bottom`.
pub fn generate_cylinder_mesh(p: &CylinderMeshParams) -> Result<Mesh> {
    let positive = [
        ("radius", p.radius),
        ("half_height", p.half_height),
        ("radial_grading", p.radial_grading),
    ];
    for (name, v) in positive {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidInput(format!("{name} must be positive, got {v}")));
        }
    }
    if p.radius >= p.half_height {
        return Err(Error::InvalidInput(format!(
            "cylinder radius {} must be smaller than the outer extent {}",
            p.radius, p.half_height
        )));
    }
    if p.upstream < p.half_height || p.downstream < p.half_height {
        return Err(Error::InvalidInput(
            "upstream and downstream lengths must be at least the outer extent".into(),
        ));
    }
    if p.radial_cells == 0 || p.azimuthal_cells == 0 || !p.azimuthal_cells.is_multiple_of(8) {
        return Err(Error::InvalidInput(format!(
            "need radial_cells > 0 and azimuthal_cells a positive multiple of 8, got {} and {}",
            p.radial_cells, p.azimuthal_cells
        )));
    }
    let has_up = p.upstream > p.half_height;
    let has_down = p.downstream > p.half_height;
    if (has_up && p.upstream_cells == 0) || (has_down && p.downstream_cells == 0) {
        return Err(Error::InvalidInput(
            "channel extensions need at least one cell".into(),
        ));
    }

    let (r0, h) = (p.radius, p.half_height);
    let n_az = p.azimuthal_cells;
    let n_rad = p.radial_cells;
    let side = n_az / 4;

    // Radial parameter: geometric cell sizes growing by `radial_grading`.
    let ratio = if n_rad > 1 {
        p.radial_grading.powf(1.0 / (n_rad - 1) as f64)
    } else {
        1.0
    };
    let mut xi = vec![0.0f64; n_rad + 1];
    let mut size = 1.0;
    for i in 1..=n_rad {
        xi[i] = xi[i - 1] + size;
        size *= ratio;
    }
    let total = xi[n_rad];
    xi.iter_mut().for_each(|v| *v /= total);
    xi[n_rad] = 1.0;

    // Square boundary point j (counter-clockwise from the lower-right corner).
    let square = |j: usize| -> Vec2 {
        let j = j % n_az;
        let (k, t) = (j / side, (j % side) as f64 / side as f64);
        let s = -h + 2.0 * h * t;
        match k {
            0 => [h, s],
            1 => [-s, h],
            2 => [-h, -s],
            _ => [s, -h],
        }
    };

    let mut points: Vec<Vec2> = Vec::new();
    let mut ogrid = vec![vec![0usize; n_az]; n_rad + 1];
    for (i, &x) in xi.iter().enumerate() {
        for (j, slot) in ogrid[i].iter_mut().enumerate() {
            let theta = -std::f64::consts::FRAC_PI_4
                + 2.0 * std::f64::consts::PI * j as f64 / n_az as f64;
            let (ct, st) = (theta.cos(), theta.sin());
            let q = square(j);
            let pt = if i == 0 {
                [r0 * ct, r0 * st]
            } else if i == n_rad {
                q
            } else {
                let qr = q[0].hypot(q[1]);
                let rho = r0 + x * (qr - r0);
                let polar = [rho * ct, rho * st];
                let inner = [r0 * ct, r0 * st];
                let straight = [inner[0] + x * (q[0] - inner[0]), inner[1] + x * (q[1] - inner[1])];
                [
                    (1.0 - x) * polar[0] + x * straight[0],
                    (1.0 - x) * polar[1] + x * straight[1],
                ]
            };
            *slot = points.len();
            points.push(pt);
        }
    }

    let mut cells: Vec<Vec<usize>> = Vec::new();
    for i in 0..n_rad {
        for j in 0..n_az {
            let jn = (j + 1) % n_az;
            cells.push(vec![ogrid[i][j], ogrid[i + 1][j], ogrid[i + 1][jn], ogrid[i][jn]]);
        }
    }

    // Cartesian extension blocks share the square's side points.
    let outer = &ogrid[n_rad];
    if has_down {
        let nx = p.downstream_cells;
        let mut grid = vec![vec![0usize; side + 1]; nx + 1];
        for b in 0..=side {
            grid[0][b] = outer[b % n_az];
        }
        for a in 1..=nx {
            let x = if a == nx {
                p.downstream
            } else {
                h + (p.downstream - h) * a as f64 / nx as f64
            };
            for b in 0..=side {
                let y = points[outer[b % n_az]][1];
                grid[a][b] = points.len();
                points.push([x, y]);
            }
        }
        for a in 0..nx {
            for b in 0..side {
                cells.push(vec![grid[a][b], grid[a + 1][b], grid[a + 1][b + 1], grid[a][b + 1]]);
            }
        }
    }
    if has_up {
        let nx = p.upstream_cells;
        // Column index a = 0 at the inlet; b counts upward from y = -h.
        let mut grid = vec![vec![0usize; side + 1]; nx + 1];
        for b in 0..=side {
            grid[nx][b] = outer[3 * side - b];
        }
        for a in 0..nx {
            let x = if a == 0 {
                -p.upstream
            } else {
                -p.upstream + (p.upstream - h) * a as f64 / nx as f64
            };
            for b in 0..=side {
                let y = points[outer[3 * side - b]][1];
                grid[a][b] = points.len();
                points.push([x, y]);
            }
        }
        for a in 0..nx {
            for b in 0..side {
                cells.push(vec![grid[a][b], grid[a + 1][b], grid[a + 1][b + 1], grid[a][b + 1]]);
            }
        }
    }

    let split = 0.5 * (r0 + h);
    let tol = 1e-9 * p.downstream.max(p.upstream);
    let (x_in, x_out) = (-p.upstream, p.downstream);
    from_polygons(
        points,
        &cells,
        &[
            ("inlet", PatchKind::Patch),
            ("outlet", PatchKind::Patch),
            ("cylinder", PatchKind::Wall),
            ("top_bottom", PatchKind::Symmetry),
        ],
        |mid| {
            if mid[0].hypot(mid[1]) < split {
                2
            } else if (mid[0] - x_in).abs() < tol {
                0
            } else if (mid[0] - x_out).abs() < tol {
                1
            } else {
                3
            }
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cavity_two_by_two() {
        let m = generate_cavity_mesh(2, 1.0).unwrap();
        assert_eq!(m.n_cells(), 4);
        for &v in m.cell_volumes() {
            assert!((v - 0.25).abs() < 1e-15);
        }
        assert_eq!(m.n_faces(), 12);
        assert_eq!(m.n_internal_faces(), 4);
        assert_eq!(m.n_boundary_faces(), 8);
        assert_eq!(m.patch("lid").unwrap().count, 2);
        assert_eq!(m.patch("walls").unwrap().count, 6);
    }

    #[test]
    fn cavity_rejects_single_cell() {
        assert!(matches!(
            generate_cavity_mesh(1, 1.0),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn cavity_uniform_weights() {
        let m = generate_cavity_mesh(64, 0.1).unwrap();
        for &w in m.weights() {
            assert!((w - 0.5).abs() < 1e-12, "weight {w}");
        }
        assert!(m.is_orthogonal());
    }

    #[test]
    fn cavity_full_scale_cell_count() {
        let m = generate_cavity_mesh(200, 0.1).unwrap();
        assert_eq!(m.n_cells(), 40000);
    }

    #[test]
    fn cylinder_patches_and_closure() {
        let m = generate_cylinder_mesh(&CylinderMeshParams {
            azimuthal_cells: 32,
            radial_cells: 8,
            downstream_cells: 10,
            upstream: 6.0,
            upstream_cells: 4,
            ..Default::default()
        })
        .unwrap();
        for name in ["inlet", "outlet", "cylinder", "top_bottom"] {
            assert!(m.patch(name).unwrap().count > 0, "{name}");
        }
        assert_eq!(m.patch("cylinder").unwrap().count, 32);
        let perim = m.cell_perimeters();
        for (c, s) in m.cell_closure().iter().enumerate() {
            assert!(s[0].hypot(s[1]) <= 1e-12 * perim[c]);
        }
        assert!(m.max_non_orthogonality() > 1.0);
    }

    #[test]
    fn cylinder_rejects_degenerate_geometry() {
        let bad = CylinderMeshParams {
            radius: 5.0,
            ..Default::default()
        };
        assert!(matches!(generate_cylinder_mesh(&bad), Err(Error::InvalidInput(_))));
        let bad = CylinderMeshParams {
            azimuthal_cells: 30,
            ..Default::default()
        };
        assert!(generate_cylinder_mesh(&bad).is_err());
    }
}
