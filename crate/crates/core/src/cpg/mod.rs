//! Concept prototype generation: guidance features in, simplex-ETF
//! prototypes out, either one flat set (vanilla) or a coarse set over class
//! groups plus one fine set per group (dual).

mod bank;
mod etf;
mod graph;
pub(crate) mod separation;

pub use bank::{
    build_dual_bank, build_vanilla_bank, class_mean_guidance, group_means, BankMode,
    DualPrototypeBank,
};
pub use etf::{etf_from_basis, qr_decompose, vanilla_prototypes, VanillaPrototypes};
pub use graph::{connected_groups, similarity_graph, Grouping, SimilarityGraph};
pub use separation::{check_separation, unit_angle, SeparationReport};
