//! Deterministic chunked execution.
//!
//! Work over `0..n` is cut into fixed-size chunks. Each chunk is mapped
//! independently and the per-chunk results are returned in chunk order, so a
//! caller that folds them left to right gets bit-identical sums whether the
//! chunks ran on one thread or many. With the `parallel` feature the chunks
//! are scheduled on the rayon pool; without it they run in a plain loop.

use std::ops::Range;

/// Rows per chunk for sample-wise reductions.
pub const CHUNK: usize = 2048;

fn chunk_ranges(n: usize, chunk: usize) -> impl Iterator<Item = Range<usize>> {
    let chunk = chunk.max(1);
    (0..n.div_ceil(chunk)).map(move |c| c * chunk..((c + 1) * chunk).min(n))
}

/// Sequential reference implementation, always compiled.
pub fn map_chunks_seq<T, F>(n: usize, chunk: usize, f: F) -> Vec<T>
where
    F: Fn(Range<usize>) -> T,
{
    chunk_ranges(n, chunk).map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn map_chunks_par<T, F>(n: usize, chunk: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
{
    use rayon::prelude::*;
    let chunk = chunk.max(1);
    (0..n.div_ceil(chunk))
        .into_par_iter()
        .map(|c| f(c * chunk..((c + 1) * chunk).min(n)))
        .collect()
}

/// Maps every chunk of `0..n`, results in chunk order.
#[cfg(feature = "parallel")]
pub fn map_chunks<T, F>(n: usize, chunk: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
{
    map_chunks_par(n, chunk, f)
}

/// Maps every chunk of `0..n`, results in chunk order.
#[cfg(not(feature = "parallel"))]
pub fn map_chunks<T, F>(n: usize, chunk: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
{
    map_chunks_seq(n, chunk, f)
}

/// Maps each index independently; output order matches input order.
pub fn map_indices<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    map_chunks(n, CHUNK, |r| r.map(&f).collect::<Vec<_>>())
        .into_iter()
        .flatten()
        .collect()
}

/// Sums fixed-length vectors produced per chunk, folding in chunk order.
pub fn sum_vectors(parts: Vec<Vec<f64>>, len: usize) -> Vec<f64> {
    let mut acc = vec![0.0; len];
    for part in parts {
        for (a, v) in acc.iter_mut().zip(part) {
            *a += v;
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_cover_range_in_order() {
        let got: Vec<Range<usize>> = map_chunks(10, 4, |r| r);
        assert_eq!(got, vec![0..4, 4..8, 8..10]);
        assert!(map_chunks(0, 4, |r| r).is_empty());
    }

    #[test]
    fn sequential_and_default_paths_agree_bitwise() {
        let xs: Vec<f64> = (0..10_000).map(|i| ((i as f64) * 0.37).sin() / 3.0).collect();
        let f = |r: Range<usize>| vec![xs[r.clone()].iter().sum::<f64>(), r.len() as f64];
        let a = sum_vectors(map_chunks_seq(xs.len(), 333, f), 2);
        let b = sum_vectors(map_chunks(xs.len(), 333, f), 2);
        assert_eq!(a[0].to_bits(), b[0].to_bits());
        assert_eq!(a[1], 10_000.0);
    }

    #[test]
    fn map_indices_preserves_order() {
        let v = map_indices(5000, |i| i * 2);
        assert!(v.iter().enumerate().all(|(i, &x)| x == 2 * i));
    }
}
