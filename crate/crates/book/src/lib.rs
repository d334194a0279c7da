//! The guide in `book/src`, one module per chapter, so that `cargo test`
//! runs every listing as a doc-test.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/data.md")]
pub mod data {}
#[doc = include_str!("../../../book/src/models.md")]
pub mod models {}
#[doc = include_str!("../../../book/src/cloaking.md")]
pub mod cloaking {}
#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}
#[doc = include_str!("../../../book/src/service.md")]
pub mod service {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
