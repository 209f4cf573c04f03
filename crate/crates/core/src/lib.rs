//! Group-relative policy optimization of a small, exactly differentiable
//! autoregressive policy, trained with rule-based format and accuracy rewards
//! over tag-structured responses.
//!
//! Training prompts ask for a deliberate response format (plain, region
//! localization, region justification or scene parsing); evaluation can switch
//! to an intuitive prompt with no format constraints.

pub mod env;
pub mod error;
pub mod eval;
pub mod grammar;
pub mod grpo;
pub mod policy;
pub mod reward;
pub mod seed;
pub mod trainer;
pub mod vocab;

pub use error::{Error, Result};
