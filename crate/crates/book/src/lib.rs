//! Guide chapters compiled as doc-tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/concepts.md")]
pub mod concepts {}
#[doc = include_str!("../../../book/src/pipelines.md")]
pub mod pipelines {}
#[doc = include_str!("../../../book/src/partitioning.md")]
pub mod partitioning {}
#[doc = include_str!("../../../book/src/index.md")]
pub mod index {}
#[doc = include_str!("../../../book/src/refine.md")]
pub mod refine {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
#[doc = include_str!("../../../book/src/testing.md")]
pub mod testing {}
