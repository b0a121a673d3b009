//! Default tolerances and numeric settings shared by every module.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Hermiticity, relative to the largest entry.
    pub herm: f64,
    /// `sin^2 + cos^2 = I` and commutation checks.
    pub id: f64,
    /// Wronskian identities of the fundamental system.
    pub wronskian: f64,
    /// ODE residual via finite-difference reconstruction.
    pub ode: f64,
    /// `m(conj z) = m(z)^*`.
    pub sym: f64,
    /// PSD checks on imaginary parts.
    pub psd: f64,
    /// Green's formula by quadrature.
    pub green: f64,
    /// Condition number above which a matrix is treated as singular.
    pub cond_limit: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            herm: 1e-12,
            id: 1e-10,
            wronskian: 1e-8,
            ode: 1e-6,
            sym: 1e-8,
            psd: 1e-8,
            green: 1e-6,
            cond_limit: 1e12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorSettings {
    pub rtol: f64,
    pub atol: f64,
    pub h_min: f64,
    pub max_steps: usize,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
            h_min: 1e-13,
            max_steps: 20_000_000,
        }
    }
}

/// Whether data-parallel loops run on the rayon pool or sequentially.
///
/// Without the `parallel` feature `Parallel` silently degrades to `Sequential`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecMode {
    Sequential,
    #[default]
    Parallel,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NumericConfig {
    pub tol: Tolerances,
    pub integrator: IntegratorSettings,
    pub exec: ExecMode,
}
