//! Cross-lingual to cross-modal knowledge transfer on a synthetic
//! image-caption corpus: OT word alignment, distillation and retrieval.

pub mod alignkit;
pub mod cli;
pub mod corpus;
pub mod encoders;
pub mod evalkit;
pub mod gradcheck;
pub mod losses;
pub mod numkit;
pub mod sinkhorn;
pub mod trainer;
