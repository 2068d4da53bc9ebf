//! Order-preserving parallel map. Results never depend on the worker count:
//! every item is computed independently and collected in input order.

#[cfg(feature = "parallel")]
pub(crate) fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().enumerate().map(|(i, x)| f(i, x)).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(usize, &T) -> R,
{
    items.iter().enumerate().map(|(i, x)| f(i, x)).collect()
}

/// Like [`map`] over fallible work; the first error in input order wins.
pub(crate) fn try_map<T, R, E, F>(items: &[T], f: F) -> Result<Vec<R>, E>
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(usize, &T) -> Result<R, E> + Sync + Send,
{
    map(items, f).into_iter().collect()
}

#[cfg(test)]
mod tests {
    #[test]
    fn preserves_order() {
        let v: Vec<u64> = (0..1000).collect();
        let out = super::map(&v, |i, x| (i as u64) * 1000 + x);
        assert!(out.iter().enumerate().all(|(i, y)| *y == i as u64 * 1001));
        let err: Result<Vec<u64>, usize> = super::try_map(&v, |i, x| if i % 300 == 299 { Err(i) } else { Ok(*x) });
        assert_eq!(err, Err(299));
    }
}
