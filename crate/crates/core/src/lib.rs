pub mod cartan;
pub mod comparison;
pub mod connection;
pub mod error;
pub mod geodesic;
pub mod jacobi;
pub mod jet;
pub mod metric;
pub mod ode;
pub mod quadrature;
pub mod runner;
pub mod zoo;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/concepts.md")]
    mod concepts {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/geodesics.md")]
    mod geodesics {}
    #[doc = include_str!("../../../book/src/comparison.md")]
    mod comparison {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
