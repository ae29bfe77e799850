//! Execution helpers: data-parallel maps with a sequential fallback.
//!
//! With the `parallel` feature (default) the chunked maps run on rayon;
//! without it they degrade to plain iteration. Chunk boundaries are fixed,
//! so floating-point reductions downstream see partial results in the same
//! order regardless of worker count — outputs are bit-identical across
//! thread counts and across the parallel/sequential builds.

/// Fixed work-chunk size for deterministic parallel maps.
pub const CHUNK: usize = 8;

/// Map `f` over `0..n`, collecting results in index order.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    use rayon::prelude::*;
    let chunks: Vec<(usize, usize)> = chunk_bounds(n);
    let mut parts: Vec<Vec<T>> = chunks
        .into_par_iter()
        .map(|(lo, hi)| (lo..hi).map(&f).collect())
        .collect();
    let mut out = Vec::with_capacity(n);
    for part in parts.drain(..) {
        out.extend(part);
    }
    out
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    map_indexed_seq(n, f)
}

/// Sequential twin of [`map_indexed`]; always available so benchmarks can
/// compare both paths in one build.
pub fn map_indexed_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

fn chunk_bounds(n: usize) -> Vec<(usize, usize)> {
    let mut v = Vec::with_capacity(n / CHUNK + 1);
    let mut lo = 0;
    while lo < n {
        let hi = usize::min(lo + CHUNK, n);
        v.push((lo, hi));
        lo = hi;
    }
    v
}

/// Run `f` inside a rayon pool bounded to `jobs` workers. `None` uses the
/// global default. Without the `parallel` feature `jobs` is ignored.
#[cfg(feature = "parallel")]
pub fn with_jobs<R: Send>(jobs: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    match jobs {
        None => f(),
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build()
            .expect("rayon pool")
            .install(f),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_jobs<R: Send>(_jobs: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    f()
}
