//! Spectral simulation of a reactive multicomponent heat-conducting fluid
//! with Maxwell–Stefan diffusion on the periodic box.

// NaN-rejecting checks are written as negated comparisons on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod chemistry;
pub mod cli_io;
pub mod constitutive;
pub mod diagnostics;
pub mod maxwell_stefan;
pub mod solver;
pub mod spectral;
pub mod verification;
