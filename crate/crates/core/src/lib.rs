//! Weyl-Titchmarsh theory for matrix-valued Schrodinger operators
//! `-y'' + V y` on half-lines and the full line.

pub mod config;
pub mod error;
pub mod expansion;
pub mod fullline;
pub mod fdoracle;
pub mod halfline;
pub mod herglotz;
pub mod ivp;
pub mod matfun;
pub mod par;
pub mod quad;
pub mod verify;

pub use config::{ExecMode, IntegratorSettings, NumericConfig, Tolerances};
pub use error::{Result, SpectralError};
pub use matfun::{BoundaryCondition, CMat, CVec, HermitianMatrix};
