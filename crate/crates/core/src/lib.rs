//! Exact finite-dimensional models for equivariant Szego kernels under
//! SU(2) actions on weighted products of projective lines, with the
//! asymptotic checks run against them.

pub mod asymptotics;
pub mod experiment;
pub mod geometry;
pub mod hardy;
pub mod liegroup;
pub mod oscillatory;
pub mod quadrature;

/// Order-preserving map, parallel when the `parallel` feature is on.
pub(crate) fn par_map<T: Sync, U: Send, F: Fn(&T) -> U + Sync + Send>(items: &[T], f: F) -> Vec<U> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}
