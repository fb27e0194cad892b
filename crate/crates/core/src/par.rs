//! Data-parallel helpers with a sequential fallback.
//!
//! Built with the default `parallel` feature these map over rayon; without it
//! the same calls run sequentially. Results are collected in input order, so
//! the two builds produce bitwise-identical output and callers may reduce
//! floating-point results deterministically.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[cfg(feature = "parallel")]
pub fn map_indexed<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(usize, &T) -> R,
{
    items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

/// Maps a range `0..n` of trial indices.
#[cfg(feature = "parallel")]
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    F: Fn(usize) -> R,
{
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_input_order() {
        let xs: Vec<u64> = (0..1000).collect();
        let ys = map_indexed(&xs, |i, x| (i as u64) * 1000 + x);
        for (i, y) in ys.iter().enumerate() {
            assert_eq!(*y, (i as u64) * 1000 + i as u64);
        }
        let zs = map_range(100, |i| i * 2);
        assert_eq!(zs[7], 14);
    }
}
