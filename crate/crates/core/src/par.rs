//! Data-parallel helpers with a sequential fallback.

use crate::config::ExecMode;

/// Maps `f` over `0..len`, preserving order.
pub fn map_indexed<T, F>(mode: ExecMode, len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match mode {
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => {
            use rayon::prelude::*;
            (0..len).into_par_iter().map(f).collect()
        }
        _ => (0..len).map(f).collect(),
    }
}

/// Fallible variant of [`map_indexed`]; returns the first error in index order.
pub fn try_map_indexed<T, E, F>(mode: ExecMode, len: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    map_indexed(mode, len, f).into_iter().collect()
}

/// True when the crate was built with rayon support.
pub const fn parallel_enabled() -> bool {
    cfg!(feature = "parallel")
}
