//! Index-parallel map with a sequential fallback.

use crate::config::Execution;

/// Maps `f` over `0..n`, preserving order.
///
/// Uses rayon when the `parallel` feature is compiled in and `exec` asks
/// for it; otherwise runs on the calling thread.
pub fn map_indexed<R, F>(n: usize, exec: Execution, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec == Execution::Parallel {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Whether parallel execution is compiled in.
pub const fn parallel_available() -> bool {
    cfg!(feature = "parallel")
}
