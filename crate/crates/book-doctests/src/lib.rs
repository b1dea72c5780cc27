//! The guide's listings, compiled and run as doc-tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/measures.md")]
pub mod measures {}

#[doc = include_str!("../../../book/src/mirror-descent.md")]
pub mod mirror_descent {}

#[doc = include_str!("../../../book/src/sinkhorn.md")]
pub mod sinkhorn {}

#[doc = include_str!("../../../book/src/latent-em.md")]
pub mod latent_em {}

#[doc = include_str!("../../../book/src/verification.md")]
pub mod verification {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
