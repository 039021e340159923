//! Order-preserving map over samples, parallel when the `parallel` feature is
//! on. Results always come back in input order so reductions done by the
//! caller are independent of scheduling.

use std::sync::Once;

/// Environment variable capping worker threads; `0` or unset means one per
/// core.
pub const THREADS_ENV: &str = "QMIT_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecMode {
    Sequential,
    #[default]
    Parallel,
}

static INIT: Once = Once::new();

/// Sizes the global worker pool from [`THREADS_ENV`]. Later calls are no-ops.
pub fn init_threads() {
    INIT.call_once(|| {
        #[cfg(feature = "parallel")]
        {
            let threads = std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()).unwrap_or(0);
            // fails only if a pool already exists, which then stays in charge
            let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
        }
    });
}

pub fn map_collect<T, R, F>(mode: ExecMode, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match mode {
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => {
            use rayon::prelude::*;
            init_threads();
            items.par_iter().map(f).collect()
        }
        _ => items.iter().map(f).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_and_keep_order() {
        let xs: Vec<u64> = (0..1000).collect();
        let f = |x: &u64| x.wrapping_mul(2654435761) % 97;
        assert_eq!(map_collect(ExecMode::Parallel, &xs, f), map_collect(ExecMode::Sequential, &xs, f));
        assert_eq!(map_collect(ExecMode::Parallel, &xs, |x| *x), xs);
    }
}
