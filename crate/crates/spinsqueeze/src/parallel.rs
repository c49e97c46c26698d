//! Ordered map over independent work items: data-parallel via rayon when
//! the `parallel` feature is on, plain sequential otherwise. Both preserve
//! input order, so results are identical either way.

#[cfg(feature = "parallel")]
pub(crate) fn ordered_map<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    items.into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn ordered_map<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    items.into_iter().map(f).collect()
}

/// Sequential baseline, available regardless of features (benchmarks compare
/// against this, and callers can force it to sidestep the thread pool).
pub(crate) fn ordered_map_seq<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    F: Fn(T) -> U,
{
    items.into_iter().map(f).collect()
}
