//! Magnetized off-center circular orbits.
//!
//! A unit-mass particle in the plane feels the potential `-alpha / (r^2 + R^2)^2` and
//! the radial magnetic field `-Q / (r^2 + R^2)^2`. At zero energy every bound orbit is
//! a circle, held in place by a conserved vector `J` whose brackets close into a
//! centrally extended algebra. The crate integrates the dynamics, checks the
//! invariants and the orbit geometry, maps orbits to the sphere where the field is a
//! uniform monopole, and counts the radial quantum zero modes.

pub mod cli;
pub mod dynamics;
pub mod geometry;
pub mod invariants;
pub mod model;
pub mod ode;
pub mod quantum;
pub mod stereo;

pub use dynamics::{integrate, measure_period, sweep_q, Trajectory};
pub use geometry::{predict_geometry, OrbitGeometry};
pub use invariants::{constants_of_motion, ConstantsOfMotion};
pub use model::{hamiltonian, make_e0_state, ModelParams, PhaseState};
pub use quantum::{alpha_for_zero_mode, build_radial_operator, count_zero_modes, solve_modes, RadialGrid};
