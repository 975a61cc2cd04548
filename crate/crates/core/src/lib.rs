//! Krasovskii passivity for sampled nonlinear systems.
//!
//! Implicit-midpoint discretization, trajectory-wise dissipation audits,
//! passivity-based stabilizing and output-consensus controllers, and averaged
//! models of boost and buck DC microgrids.

pub mod numerics;
pub mod dynamics;
pub mod passivity;
pub mod controllers;
pub mod plants;
