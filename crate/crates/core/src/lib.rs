//! Open knowledge graph construction from the attention matrices of
//! pre-trained language models.
//!
//! The pipeline has two halves. *Match* runs a beam search over each
//! sentence's attention matrix to propose `(head, relation, tail)` candidates
//! between noun chunks, then filters them by matching degree, relation
//! frequency and contiguity. *Map* links heads and tails to reference-KG
//! entities, maps relation phrases through a curated phrase map, and assembles
//! an open KG whose facts are either mapped to the reference schema or kept in
//! an open schema.
//!
//! The numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the interchange precision, `f32`.

pub mod corpus;
pub mod evalkit;
pub mod filters;
pub mod kg;
pub mod linker;
pub mod matcher;
pub mod pipeline;
pub mod relmap;
pub mod scalar;
pub mod synth;
pub mod tsv;

pub use scalar::Scalar;

/// Interchange precision of attention weights and degrees.
pub type Real = f32;

pub type AttentionTensor = corpus::AttentionTensor<Real>;
pub type SentenceRecord = corpus::SentenceRecord<Real>;
pub type CandidateFact = matcher::CandidateFact<Real>;
pub type BeamCandidate = matcher::BeamCandidate<Real>;
pub type FilterConfig = filters::FilterConfig<Real>;
pub type FilterOutcome = filters::FilterOutcome<Real>;
pub type MentionDictionary = linker::MentionDictionary<Real>;
pub type WordVectors = linker::WordVectors<Real>;
pub type EntityLink = linker::EntityLink<Real>;
pub type Linker = linker::Linker<Real>;
pub type LinkedFact = kg::LinkedFact<Real>;
pub type OpenFact = kg::OpenFact<Real>;
pub type OpenKg = kg::OpenKg<Real>;
pub type ScoreReport = evalkit::ScoreReport<Real>;
