//! Execution policy for the data-parallel kernels.
//!
//! Every parallel kernel splits its output into disjoint chunks and computes
//! each output cell with the same sequential reduction as the serial path, so
//! results are bit-identical whichever policy runs. Without the `parallel`
//! feature, [`Execution::Parallel`] silently degrades to the serial loop.

/// Which loop driver a kernel uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Execution {
    Serial,
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Serial
        }
    }
}

/// Runs `f(chunk_index, chunk)` over consecutive `chunk_len`-sized pieces of `data`.
pub fn for_each_chunk_mut<F>(exec: Execution, data: &mut [f64], chunk_len: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Send + Sync,
{
    if chunk_len == 0 {
        return;
    }
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            data.par_chunks_mut(chunk_len)
                .enumerate()
                .for_each(|(i, chunk)| f(i, chunk));
        }
        _ => data
            .chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, chunk)| f(i, chunk)),
    }
}

/// Maps `f` over `0..len`, collecting results in index order.
pub fn map_indices<T, F>(exec: Execution, len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Send + Sync,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..len).into_par_iter().map(f).collect()
        }
        _ => (0..len).map(f).collect(),
    }
}
