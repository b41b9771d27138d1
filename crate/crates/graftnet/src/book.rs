//! The guide under `book/` compiled as doc-tests, so every code block in it
//! builds and passes against the current API.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/tensors-and-networks.md")]
pub mod tensors_and_networks {}

#[doc = include_str!("../../../book/src/data-and-training.md")]
pub mod data_and_training {}

#[doc = include_str!("../../../book/src/weight-quality.md")]
pub mod weight_quality {}

#[doc = include_str!("../../../book/src/grafting.md")]
pub mod grafting {}

#[doc = include_str!("../../../book/src/distillation.md")]
pub mod distillation {}

#[doc = include_str!("../../../book/src/orchestration.md")]
pub mod orchestration {}

#[doc = include_str!("../../../book/src/files-and-cli.md")]
pub mod files_and_cli {}
