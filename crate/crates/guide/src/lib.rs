//! The book's listings, checked by `cargo test --doc -p jetmarch-guide`.
//! One module per chapter so a failing listing points at its chapter.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/solving.md")]
pub mod solving {}
#[doc = include_str!("../../../book/src/stencils.md")]
pub mod stencils {}
#[doc = include_str!("../../../book/src/escape.md")]
pub mod escape {}
#[doc = include_str!("../../../book/src/tpt.md")]
pub mod tpt {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
#[doc = include_str!("../../../book/src/validation.md")]
pub mod validation {}
