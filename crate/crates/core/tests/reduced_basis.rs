//! Properties of bases built from real cavity snapshots.

use std::sync::Arc;

use fvrom::hf::{solve_transient, PisoSettings, TimeScheme, TransientCase, TransientOutput};
use fvrom::mesh::generate_cavity_mesh;
use fvrom::ops::flux_divergence;
use fvrom::pod::{compute_pod, inner_product, projection_error, snapshot_mean, subtract, PodBasis, Provenance};
use fvrom::supremizer::exact_supremizers;
use fvrom::{BcKind, BoundaryCondition, BoundaryConditions, Form, Rank, Scheme};
use proptest::prelude::*;

struct Data {
    out: TransientOutput,
    velocity_bcs: BoundaryConditions,
    pressure_bcs: BoundaryConditions,
}

fn cavity() -> &'static Data {
    static DATA: std::sync::OnceLock<Data> = std::sync::OnceLock::new();
    DATA.get_or_init(|| {
        let mesh = Arc::new(generate_cavity_mesh(16, 0.1).unwrap());
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
        let case = TransientCase {
            initial_velocity: vec![0.0; 2 * mesh.n_cells()],
            mesh,
            velocity_bcs: velocity_bcs.clone(),
            pressure_bcs: pressure_bcs.clone(),
            viscosity: 2e-3,
            time_step: 2e-3,
            end_time: 0.4,
            snapshot_start: 0.0,
            snapshot_interval: 0.01,
            convection: Scheme::Linear,
            time_scheme: TimeScheme::Euler,
            piso: PisoSettings::default(),
        };
        Data {
            out: solve_transient(&case).unwrap(),
            velocity_bcs,
            pressure_bcs,
        }
    })
}

fn velocity_basis(n: usize) -> PodBasis {
    let d = cavity();
    let mean = snapshot_mean(&d.out.velocity).unwrap();
    let fluct = subtract(&d.out.velocity, &mean).unwrap();
    compute_pod(&fluct, n, &d.velocity_bcs.homogeneous(), Provenance::Velocity).unwrap()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Worst cell imbalance of a face-flux vector.
fn imbalance(flux: &[f64]) -> f64 {
    max_abs(&flux_divergence(cavity().out.velocity.mesh(), flux, Form::Extensive).unwrap())
}

/// Triangle-inequality bound on the imbalance of each mode flux, from the
/// imbalances of the snapshot and mean fluxes it is combined from.
fn mode_bounds(basis: &PodBasis, with_mean: bool) -> Vec<f64> {
    let d = cavity();
    let w = basis.weights.as_ref().unwrap();
    let mean = if with_mean { imbalance(&snapshot_mean(&d.out.flux).unwrap()) } else { 0.0 };
    let per_snapshot: Vec<f64> = d.out.flux.records().iter().map(|r| imbalance(&r.values)).collect();
    (0..w.ncols())
        .map(|i| (0..w.nrows()).map(|j| w[(j, i)].abs() * (per_snapshot[j] + mean)).sum())
        .collect()
}

#[test]
fn snapshot_fluxes_meet_the_continuity_target() {
    for r in cavity().out.flux.records() {
        assert!(imbalance(&r.values) <= 1e-7 * max_abs(&r.values));
    }
}

#[test]
fn velocity_modes_carry_solenoidal_fluxes() {
    let d = cavity();
    let basis = velocity_basis(6);
    let mean_flux = snapshot_mean(&d.out.flux).unwrap();
    let bounds = mode_bounds(&basis, true);
    for (i, flux) in basis.combine_companion(&d.out.flux, Some(&mean_flux)).unwrap().iter().enumerate() {
        let worst = imbalance(flux);
        assert!(max_abs(flux) > 0.0);
        assert!(worst <= bounds[i] * (1.0 + 1e-9) + 1e-15, "mode {i}: {worst} vs bound {}", bounds[i]);
        assert!(worst <= 1e-4 * max_abs(flux), "mode {i}: {worst}");
    }
}

#[test]
fn modes_are_orthonormal_and_energy_is_ordered() {
    let basis = velocity_basis(8);
    let g = basis.gram();
    for i in 0..8 {
        for j in 0..8 {
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((g[(i, j)] - want).abs() < 1e-9, "gram[{i},{j}] = {}", g[(i, j)]);
        }
    }
    assert!(basis.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    assert!(basis.cumulative_energy.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn projection_error_falls_as_modes_are_added() {
    let d = cavity();
    let mean = snapshot_mean(&d.out.velocity).unwrap();
    let fluct = subtract(&d.out.velocity, &mean).unwrap();
    let basis = velocity_basis(10);
    let errs: Vec<f64> = (1..=10).map(|k| projection_error(&fluct, &basis, k).unwrap()).collect();
    assert!(errs.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{errs:?}");
    let total: f64 = basis.eigenvalues.iter().sum();
    for (k, e) in errs.iter().enumerate() {
        let tail: f64 = basis.eigenvalues[k + 1..].iter().sum();
        assert!((e - tail).abs() <= 1e-8 * total, "k = {}: {e} vs {tail}", k + 1);
    }
}

#[test]
fn supremizers_pair_with_their_pressure_modes() {
    let d = cavity();
    let pressure = compute_pod(&d.out.pressure, 4, &d.pressure_bcs.homogeneous(), Provenance::Pressure).unwrap();
    let sup = exact_supremizers(&pressure).unwrap();
    assert_eq!(sup.len(), 4);
    for (i, (s, p)) in sup.modes.iter().zip(&pressure.modes).enumerate() {
        let grad = fvrom::ops::gauss_gradient(p, Form::Extensive);
        let pairing: f64 = s.cells().iter().zip(&grad).map(|(a, b)| a * b).sum();
        assert!(pairing > 0.0, "supremizer {i}: <s, grad p> = {pairing}");
        assert!(inner_product(s, s).unwrap() > 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn any_combination_of_mode_fluxes_is_solenoidal(coeffs in proptest::collection::vec(-5.0..5.0_f64, 6)) {
        let d = cavity();
        let basis = velocity_basis(6);
        let bounds = mode_bounds(&basis, false);
        let fluxes = basis.combine_companion(&d.out.flux, None).unwrap();
        let mut total = vec![0.0; fluxes[0].len()];
        for (c, f) in coeffs.iter().zip(&fluxes) {
            for (t, v) in total.iter_mut().zip(f) {
                *t += c * v;
            }
        }
        let bound: f64 = coeffs.iter().zip(&bounds).map(|(c, b)| c.abs() * b).sum();
        prop_assert!(imbalance(&total) <= bound * (1.0 + 1e-9) + 1e-15);
    }
}
