//! Token-embedding prompts and Stage-1 HiPer-token inversion.
//!
//! There is no tokenizer in this setting: a "prompt" is simply a matrix of
//! embedding rows, and the teacher reads it through the row mean.

mod inversion;
mod references;
mod tokens;

pub use inversion::{invert_hiper, InversionConfig, InversionResult};
pub use references::{sample_references, ReferenceSet};
pub use tokens::{equidistant_base, PromptSpec, PromptSegment, TokenMatrix};
