//! Each chapter of the guide is attached to a module so that its code
//! blocks run as doc-tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/lattice.md")]
pub mod lattice {}

#[doc = include_str!("../../../book/src/gcc.md")]
pub mod gcc {}

#[doc = include_str!("../../../book/src/policy.md")]
pub mod policy {}

#[doc = include_str!("../../../book/src/grpo.md")]
pub mod grpo {}

#[doc = include_str!("../../../book/src/baselines.md")]
pub mod baselines {}

#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}

#[doc = include_str!("../../../book/src/outputs.md")]
pub mod outputs {}

#[doc = include_str!("../../../book/src/determinism.md")]
pub mod determinism {}
