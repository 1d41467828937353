//! Simulation and spectral-PDE tools for SDEs driven by symmetric
//! alpha-stable Levy noise (1 < alpha < 2): trajectory integration,
//! stationary densities of the nonlocal Fokker-Planck equation, and linear
//! response functions computed by four independent routes.

pub mod config;
pub mod error;
pub mod expr;
pub mod output;
pub mod fokker_planck;
pub mod model;
pub mod nonlocal;
pub mod response;
pub mod simulate;
pub mod special;
pub mod stable;

#[doc(hidden)]
pub mod testutil;

pub use error::Error;
