//! Execution helpers that run on rayon when the `parallel` feature is on and
//! fall back to plain iterators otherwise.
//!
//! Every helper returns results in index order, so reductions performed by the
//! caller over the returned vector are identical for any thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `0..n`, returning results in index order.
#[cfg(feature = "parallel")]
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Map `f` over a slice, returning results in slice order.
#[cfg(feature = "parallel")]
pub fn map_slice<S, T, F>(items: &[S], f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&S) -> T + Sync + Send,
{
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_slice<S, T, F>(items: &[S], f: F) -> Vec<T>
where
    F: Fn(&S) -> T,
{
    items.iter().map(f).collect()
}

/// Evaluate `f` over `0..n` in fixed-size chunks, each chunk accumulating into
/// its own `len`-sized buffer, then sum chunk buffers in chunk order.
pub fn chunked_sum<F>(n: usize, chunk: usize, len: usize, f: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    let chunk = chunk.max(1);
    let n_chunks = n.div_ceil(chunk);
    let partials = map_range(n_chunks, |c| {
        let mut acc = vec![0.0; len];
        for i in (c * chunk)..((c + 1) * chunk).min(n) {
            f(i, &mut acc);
        }
        acc
    });
    let mut total = vec![0.0; len];
    for part in partials {
        for (t, p) in total.iter_mut().zip(part) {
            *t += p;
        }
    }
    total
}

/// True when the crate was built with rayon support.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_range_preserves_order() {
        let v = map_range(1000, |i| i * 2);
        assert!(v.iter().enumerate().all(|(i, &x)| x == 2 * i));
    }

    #[test]
    fn chunked_sum_matches_serial() {
        let total = chunked_sum(103, 10, 3, |i, acc| {
            acc[i % 3] += i as f64;
        });
        let mut expect = [0.0; 3];
        for i in 0..103 {
            expect[i % 3] += i as f64;
        }
        assert_eq!(total, expect);
    }
}
