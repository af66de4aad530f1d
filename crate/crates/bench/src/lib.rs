//! Fixtures shared by the benchmarks.

use mspde_core::space::{SlabCoefficients, TemporalSlab};
use mspde_core::{nls, nonlinear_wave, Discretisation, SchemeVariant, SolverConfig};

/// Nonlinear wave on the default grid (M = 20).
pub fn wave_discretisation(variant: SchemeVariant, q: usize, p: usize) -> Discretisation {
    let cfg = SolverConfig { q, p, dt: 0.1, dx: 0.05, t_final: 1.0, ..SolverConfig::default() };
    Discretisation::new(nonlinear_wave(), variant, &cfg).expect("valid configuration")
}

/// Schrödinger soliton on the default grid (M = 100).
pub fn nls_discretisation(variant: SchemeVariant, q: usize, p: usize) -> Discretisation {
    let cfg = SolverConfig { q, p, dt: 0.1, dx: 0.4, t_final: 1.0, ..SolverConfig::default() };
    Discretisation::new(nls(), variant, &cfg).expect("valid configuration")
}

/// First slab `[0, 0.1]` with the constant extension of the initial state, plus the
/// matching auxiliary field for the momentum-conserving variant.
pub fn first_slab(disc: &Discretisation) -> (TemporalSlab, SlabCoefficients, Option<SlabCoefficients>) {
    let slab = TemporalSlab::new(0.0, 0.1, disc.q()).expect("valid slab");
    let z0 = disc.initial_state().expect("projectable initial data");
    let d = disc.dim();
    let z = SlabCoefficients::constant_extension(d, disc.space().dof_count(), disc.q(), &z0);
    let aux = disc
        .aux_space()
        .map(|a| SlabCoefficients::constant_extension(d, a.dof_count(), disc.q(), &disc.project_gradient(&z0)));
    (slab, z, aux)
}
