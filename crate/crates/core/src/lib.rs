//! Temporal-reasoning QA synthesis from caption corpora, dataset mixing,
//! and a small LSTM probing lab.

pub mod corpus;
pub mod demo;
pub mod mixer;
pub mod perm;
pub mod probelab;
pub mod provider;
pub mod quality;
pub mod synth;
