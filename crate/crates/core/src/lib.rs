//! Lifelong-learning experiment engine.
//!
//! Trains lightweight heads over frozen embeddings, runs sequential-task
//! protocols to measure knowledge transfer and catastrophic forgetting, and
//! compares naive, weighted, auxiliary-embedding, and knowledge-infused
//! ensembles.

pub mod bench;
pub mod config;
pub mod continual;
pub mod data;
pub mod demo;
pub mod embedding;
pub mod ensemble;
pub mod experiment;
mod fsutil;
pub mod heads;
pub mod knowledge;
pub mod reporting;
pub mod seeding;
pub mod text;

pub use fsutil::write_atomic;
