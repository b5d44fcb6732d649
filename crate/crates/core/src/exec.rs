//! Execution backends for the data-parallel kernels.
//!
//! With the `parallel` feature the kernels run on the rayon pool; without it
//! (or with [`Backend::Sequential`]) they run on the calling thread. Work is
//! always split into fixed-size chunks whose partial results are combined in
//! chunk order, so both backends produce bit-identical output.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Rows per work unit for chunked reductions.
pub const CHUNK_ROWS: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Sequential,
    /// Falls back to sequential execution when built without `parallel`.
    Parallel,
}

impl Default for Backend {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Backend::Parallel
        } else {
            Backend::Sequential
        }
    }
}

impl Backend {
    /// Maps `f` over `0..n`, preserving order.
    pub fn map_range<U, F>(self, n: usize, f: F) -> Vec<U>
    where
        U: Send,
        F: Fn(usize) -> U + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Backend::Parallel => (0..n).into_par_iter().map(f).collect(),
            _ => (0..n).map(f).collect(),
        }
    }

    /// Maps `f` over consecutive `chunk`-sized slices of `data`, preserving order.
    /// `f` receives the chunk's starting index.
    pub fn map_chunks<T, U, F>(self, data: &[T], chunk: usize, f: F) -> Vec<U>
    where
        T: Sync,
        U: Send,
        F: Fn(usize, &[T]) -> U + Sync + Send,
    {
        assert!(chunk > 0);
        match self {
            #[cfg(feature = "parallel")]
            Backend::Parallel => data
                .par_chunks(chunk)
                .enumerate()
                .map(|(i, c)| f(i * chunk, c))
                .collect(),
            _ => data
                .chunks(chunk)
                .enumerate()
                .map(|(i, c)| f(i * chunk, c))
                .collect(),
        }
    }

    /// Fills `out` in place, `chunk` elements at a time.
    pub fn fill_chunks<U, F>(self, out: &mut [U], chunk: usize, f: F)
    where
        U: Send,
        F: Fn(usize, &mut [U]) + Sync + Send,
    {
        assert!(chunk > 0);
        match self {
            #[cfg(feature = "parallel")]
            Backend::Parallel => out
                .par_chunks_mut(chunk)
                .enumerate()
                .for_each(|(i, c)| f(i * chunk, c)),
            _ => out
                .chunks_mut(chunk)
                .enumerate()
                .for_each(|(i, c)| f(i * chunk, c)),
        }
    }
}

/// Runs `f` on a pool with `threads` workers when parallel execution is compiled in.
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    if let Some(t) = threads {
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build() {
            return pool.install(f);
        }
    }
    let _ = threads;
    f()
}
