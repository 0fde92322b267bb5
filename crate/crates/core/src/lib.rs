//! Postfix-string genetic programming for symbolic regression.
//!
//! Genomes are fixed-capacity arrays of primitive tokens read as postfix
//! expressions. Only the longest decodable prefix of a genome takes part in
//! evaluation; the tokens after it ride along as inert genetic material.
//!
//! The crate is `no_std` (with `alloc`) so the engine can be embedded
//! anywhere. File formats, CLI plumbing and parallel evaluation live in the
//! companion crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod engine;
pub mod error;
pub mod evaluator;
pub mod genome;
pub mod selection;
pub mod variation;

pub use engine::{
    cascade_boundary, init_run, predict_multi_step, predict_one_step, resume_run, run,
    step_generation, Evaluate, GenerationRecord, GpParams, InitialPopulation,
    MultiStepPrediction, RngSnapshot, RunState, SequentialEvaluator,
};
pub use error::GpError;
pub use evaluator::{
    adjusted_fitness, assign_fitness, eval_postfix, fitness_report, interval_feasible, metrics,
    raw_fitness, semantic_distance, Dataset, FitnessReport, Interval, Metrics,
};
pub use genome::{
    compute_valid_length, extract_subtrees, random_genome, render_infix, render_log,
    semantically_diverse_population, subtree_spans, Arity, BinaryOp, Genome, PrimitiveKind,
    PrimitiveSet, SubtreeSpan, UnaryOp,
};
pub use selection::{choose_pool, select, Archive, SelectionConfig, SelectionScheme};
pub use variation::{crossover, mutate, CrossoverKind, MutationKind, VariationParams};

/// Result alias used throughout the engine.
pub type Result<T> = core::result::Result<T, GpError>;

/// The deterministic generator driving every stochastic decision.
///
/// All randomness flows through one instance seeded from a single `u64`, so
/// a run is reproducible bit for bit from its seed.
pub type GpRng = rand_chacha::ChaCha8Rng;
