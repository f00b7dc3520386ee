//! Parallel iteration helpers.
//!
//! With the `parallel` feature these expand to rayon parallel iterators; without it they
//! fall back to the matching sequential iterator. Call sites must stick to combinators
//! both APIs share (`map`, `filter_map`, `for_each`, `collect`, `sum`).

#[cfg(feature = "parallel")]
pub(crate) use rayon::prelude::*;

macro_rules! maybe_par_iter {
    ($e:expr) => {{
        #[cfg(feature = "parallel")]
        let it = $e.par_iter();
        #[cfg(not(feature = "parallel"))]
        let it = $e.iter();
        it
    }};
}

macro_rules! maybe_into_par_iter {
    ($e:expr) => {{
        #[cfg(feature = "parallel")]
        let it = $e.into_par_iter();
        #[cfg(not(feature = "parallel"))]
        let it = $e.into_iter();
        it
    }};
}

pub(crate) use maybe_into_par_iter;
pub(crate) use maybe_par_iter;

/// Runs two closures, concurrently when the `parallel` feature is on.
pub(crate) fn join<A, B, RA, RB>(a: A, b: B) -> (RA, RB)
where
    A: FnOnce() -> RA + Send,
    B: FnOnce() -> RB + Send,
    RA: Send,
    RB: Send,
{
    #[cfg(feature = "parallel")]
    {
        rayon::join(a, b)
    }
    #[cfg(not(feature = "parallel"))]
    {
        (a(), b())
    }
}

/// Whether this build was compiled with data-parallel loops.
pub const fn parallel_enabled() -> bool {
    cfg!(feature = "parallel")
}
