//! Transfer experiments between a source distribution P and a target
//! distribution Q over a shared hypothesis class.
//!
//! The library is organised around a small set of exactly computable
//! quantities on finite and linear-regression instances:
//!
//! * [`instances`]: problem descriptions, exact risks, seeded samplers.
//! * [`moduli`]: transfer moduli (how much target excess risk is compatible
//!   with a given source excess risk), pivotal values, and their exact
//!   piecewise-constant curves.
//! * [`discrepancies`]: classical discrepancy measures between P and Q and
//!   the modulus bounds they imply.
//! * [`conf_class`]: empirical confidence sets for finite classes (weak,
//!   root-n strong, localized strong) built from excess-risk deviation
//!   bounds.
//! * [`conf_reg`]: confidence ellipsoids for well-specified linear
//!   regression, plus the ellipsoid geometry used by the transfer
//!   algorithms.
//! * [`transfer`]: the two intersection-based transfer algorithms and
//!   Monte Carlo drivers for them.
//! * [`lowerbound`]: packing-based hard instance families certifying that
//!   no learner can beat the moduli rates, with exact membership checks.
//! * [`harness`]: deterministic experiment grids, CSV/JSON reporting.
//!
//! All randomness flows through explicit 64-bit seeds and a documented
//! splitmix-style per-trial derivation, so every experiment is exactly
//! reproducible at any thread count.

pub mod conf_class;
pub mod conf_reg;
pub mod discrepancies;
pub mod harness;
pub mod instances;
pub mod lowerbound;
pub mod moduli;
pub mod quadratic;
pub mod seeding;
pub mod transfer;

pub use instances::{FiniteInstance, FiniteSample, Instance, LinearInstance, LinearSample, Side};
pub use moduli::{ModulusCurve, StrongModulus};
