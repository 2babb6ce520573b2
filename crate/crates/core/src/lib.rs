pub mod adversary;
pub mod analysis;
pub mod chaintypes;
pub mod cli;
pub mod growth;
pub mod node;
pub mod randvdf;
pub mod simnet;
pub mod stats;
