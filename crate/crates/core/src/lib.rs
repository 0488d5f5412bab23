//! Numerical regularity analysis for co-normal (Neumann) problems of
//! divergence-form elliptic operators at a boundary point.

pub mod cli;
pub mod coefficients;
pub mod geometry;
pub mod kernel;
pub mod numerics;
pub mod oracle;
pub mod reduction;
pub mod stability;

/// The guide in `book/` is compiled here so its Rust snippets run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/command-line.md")]
    mod command_line {}
    #[doc = include_str!("../../../book/src/configuration.md")]
    mod configuration {}
    #[doc = include_str!("../../../book/src/library.md")]
    mod library {}
    #[doc = include_str!("../../../book/src/kernel.md")]
    mod kernel {}
    #[doc = include_str!("../../../book/src/numerics.md")]
    mod numerics {}
}
