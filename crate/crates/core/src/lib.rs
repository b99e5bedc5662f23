//! Rehearsal-free domain-incremental learning on frozen embeddings.
//!
//! Class guidance vectors are turned into simplex equiangular tight frames:
//! a coarse frame over groups of similar classes and a fine frame inside
//! each group ([`cpg`]). Per-domain coarse-to-fine calibrators learn to map
//! image features onto those fixed prototypes ([`calibrator`]), and the
//! incremental protocol routes each test feature to the calibrator of the
//! nearest domain centroid ([`harness`]).

pub mod calibrator;
pub mod cpg;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod rng;
pub mod store;
pub mod synth;
pub mod verify;

pub use calibrator::{Architecture, CalibratorParams, TrainConfig};
pub use cpg::{build_dual_bank, build_vanilla_bank, DualPrototypeBank, Grouping};
pub use error::{Error, Result};
pub use harness::{evaluate, run_protocol, AccuracyMatrix, DomainMemory, EvalReport};
pub use linalg::Matrix;
pub use store::{EmbeddingSet, GuidanceMatrix, Manifest};
pub use synth::{generate, SynthData, SynthSpec};
