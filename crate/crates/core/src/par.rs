//! Data-parallel execution helpers with a sequential fallback.
//!
//! Every parallel loop in this crate goes through these helpers. Work is
//! split at fixed boundaries that do not depend on the thread count, and
//! reductions fold partial results in index order, so results are
//! bit-identical whether the `parallel` feature is enabled, disabled, or
//! forced off at runtime with [`set_sequential`] (used by the benchmarks to
//! compare both paths in one binary).

use std::ops::Range;
use std::sync::atomic::{AtomicBool, Ordering};

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Force the sequential path at runtime even when the `parallel` feature is
/// compiled in. Intended for benchmarks and A/B checks.
pub fn set_sequential(force: bool) {
    FORCE_SEQUENTIAL.store(force, Ordering::SeqCst);
}

/// True when work will actually be distributed across threads.
pub fn is_parallel() -> bool {
    cfg!(feature = "parallel") && !FORCE_SEQUENTIAL.load(Ordering::SeqCst)
}

/// Map `f` over `0..n`, collecting results in index order.
pub fn map_collect<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Map `f` over fixed-size chunks of `0..n`, collecting per-chunk results in
/// chunk order. Chunk boundaries depend only on (`n`, `chunk`), never on the
/// number of worker threads.
pub fn chunk_map_collect<T, F>(n: usize, chunk: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
{
    assert!(chunk > 0);
    let ranges: Vec<Range<usize>> = (0..n)
        .step_by(chunk)
        .map(|lo| lo..(lo + chunk).min(n))
        .collect();
    #[cfg(feature = "parallel")]
    if is_parallel() {
        use rayon::prelude::*;
        return ranges.into_par_iter().map(f).collect();
    }
    ranges.into_iter().map(f).collect()
}

/// Fill `out` by mapping `f` over fixed-size chunks; each chunk writes only
/// its own slice.
pub fn chunk_fill<T, F>(out: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    assert!(chunk > 0);
    #[cfg(feature = "parallel")]
    if is_parallel() {
        use rayon::prelude::*;
        out.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(ci, slice)| f(ci * chunk, slice));
        return;
    }
    for (ci, slice) in out.chunks_mut(chunk).enumerate() {
        f(ci * chunk, slice);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_collect_preserves_order() {
        let v = map_collect(100, |i| i * 2);
        assert_eq!(v, (0..100).map(|i| i * 2).collect::<Vec<_>>());
    }

    #[test]
    fn chunk_boundaries_fixed() {
        let chunks = chunk_map_collect(10, 4, |r| (r.start, r.end));
        assert_eq!(chunks, vec![(0, 4), (4, 8), (8, 10)]);
    }

    #[test]
    fn sequential_override_matches_parallel() {
        let f = |i: usize| (i as f64).sin() * (i as f64 + 1.0).ln();
        let par: Vec<f64> = map_collect(1000, f);
        set_sequential(true);
        let seq: Vec<f64> = map_collect(1000, f);
        set_sequential(false);
        assert_eq!(par, seq);
    }

    #[test]
    fn chunk_fill_writes_every_slot() {
        let mut buf = vec![0usize; 23];
        chunk_fill(&mut buf, 5, |base, slice| {
            for (k, v) in slice.iter_mut().enumerate() {
                *v = base + k;
            }
        });
        assert_eq!(buf, (0..23).collect::<Vec<_>>());
    }
}
