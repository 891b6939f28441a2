//! Construction of invariant Kronecker tori for near-integrable
//! Hamiltonians H = N + P by a superlinearly convergent sequence of
//! canonical transformations.
//!
//! The crate is organized bottom-up:
//!
//! * [`series`]: sparse Taylor-Fourier series with majorant norms,
//!   products and Poisson brackets on polydisc-strip domains;
//! * [`smalldiv`]: Diophantine frequency checks, resonance-zone measure
//!   estimates, and the frequency catalog used by the test fixtures;
//! * [`homological`]: the linearized conjugacy equation and the
//!   small-divisor sum bound that controls its solution;
//! * [`analysis`]: strip estimates, truncation tails, analytic
//!   inversion, Lipschitz extension;
//! * [`kamstep`]: one transformation step, from cutoff through the Lie
//!   transform to the new error;
//! * [`engine`]: geometric schedules, the full iteration, frequency
//!   matching, and the classical one-parameter setup;
//! * [`fixtures`]: frozen numeric constants shared by tests.

pub mod analysis;
pub mod engine;
pub mod fixtures;
pub mod homological;
pub mod kamstep;
pub mod series;
pub mod smalldiv;

mod util;
