//! Crossover and mutation operators.
//!
//! Every operator is structure-preserving: children always carry a valid
//! prefix no shorter than the configured minimum, and an operator that
//! cannot produce one within its trial budget falls back to copying the
//! parents verbatim. Operators never look at fitness.

use alloc::vec::Vec;

use rand::Rng;

use crate::error::GpError;
use crate::evaluator::{semantic_distance, Dataset};
use crate::genome::{compute_valid_length, subtree_spans, Arity, Genome, PrimitiveSet};
use crate::Result;

/// Which crossover operator a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrossoverKind {
    /// One shared cut point; the whole-capacity tails swap.
    GaLike,
    /// One random complete subtree from each parent swaps.
    Subtree,
    /// Subtree crossover that insists on semantically distant spans.
    SemanticSubtree,
}

/// Which mutation operator a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MutationKind {
    /// Replaces one token with another of the same arity; always valid.
    FullyProtected,
    /// Same-arity inside the protected head, anything after it.
    PartiallyProtected,
}

/// Knobs shared by all variation operators.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationParams {
    pub crossover: CrossoverKind,
    pub mutation: MutationKind,
    /// Attempts before a crossover gives up and copies the parents.
    pub max_crossover_trials: usize,
    /// Attempts before a mutation gives up and copies the genome.
    pub max_mutation_trials: usize,
    /// Probability that a protected mutation targets an operator position
    /// rather than a terminal position.
    pub operator_mutate_frequency: f64,
    /// Minimum semantic distance between spans swapped by semantic
    /// crossover.
    pub semantic_sensitivity: f64,
    pub min_length: usize,
    pub max_length: usize,
}

impl VariationParams {
    pub fn new(
        crossover: CrossoverKind,
        mutation: MutationKind,
        semantic_sensitivity: f64,
        min_length: usize,
        max_length: usize,
    ) -> Self {
        VariationParams {
            crossover,
            mutation,
            max_crossover_trials: 20,
            max_mutation_trials: 10,
            operator_mutate_frequency: 0.6,
            semantic_sensitivity,
            min_length,
            max_length,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_length < 1 || self.min_length > self.max_length {
            return Err(GpError::InvalidParameter("invalid length range"));
        }
        if self.max_crossover_trials < 1 || self.max_mutation_trials < 1 {
            return Err(GpError::InvalidParameter("trial budgets must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.operator_mutate_frequency) {
            return Err(GpError::InvalidParameter("operator mutate frequency outside [0, 1]"));
        }
        if self.semantic_sensitivity.is_nan() || self.semantic_sensitivity < 0.0 {
            return Err(GpError::InvalidParameter("semantic sensitivity must be non-negative"));
        }
        Ok(())
    }
}

/// Dispatches to the configured crossover operator.
pub fn crossover<R: Rng>(
    p1: &Genome,
    p2: &Genome,
    dataset: &Dataset,
    rng: &mut R,
    params: &VariationParams,
    pset: &PrimitiveSet,
) -> Result<(Genome, Genome)> {
    match params.crossover {
        CrossoverKind::GaLike => crossover_ga_like(p1, p2, rng, params, pset),
        CrossoverKind::Subtree => crossover_subtree(p1, p2, rng, params, pset),
        CrossoverKind::SemanticSubtree => {
            crossover_semantic(p1, p2, dataset, rng, params, pset)
        }
    }
}

/// Dispatches to the configured mutation operator.
pub fn mutate<R: Rng>(
    genome: &Genome,
    rng: &mut R,
    params: &VariationParams,
    pset: &PrimitiveSet,
) -> Result<Genome> {
    match params.mutation {
        MutationKind::FullyProtected => mutate_fully_protected(genome, rng, params, pset),
        MutationKind::PartiallyProtected => {
            mutate_partially_protected(genome, rng, params, pset)
        }
    }
}

/// One-point crossover over the full token arrays.
///
/// A single cut point inside both valid prefixes splits each parent; the
/// tails (valid remainder and inert region alike) swap. Cut points that
/// leave either child without a long-enough valid prefix are redrawn up to
/// the trial budget, after which the parents are returned unchanged.
pub fn crossover_ga_like<R: Rng>(
    p1: &Genome,
    p2: &Genome,
    rng: &mut R,
    params: &VariationParams,
    pset: &PrimitiveSet,
) -> Result<(Genome, Genome)> {
    debug_assert_eq!(p1.capacity(), p2.capacity());
    let min_vl = p1.valid_length().min(p2.valid_length());
    if min_vl < 2 {
        return Ok((p1.clone(), p2.clone()));
    }
    for _ in 0..params.max_crossover_trials {
        let cut = rng.gen_range(1..min_vl);
        let c1 = splice_tail(p1.tokens(), p2.tokens(), cut);
        let c2 = splice_tail(p2.tokens(), p1.tokens(), cut);
        let v1 = compute_valid_length(&c1, pset);
        let v2 = compute_valid_length(&c2, pset);
        if let (Some(v1), Some(v2)) = (v1, v2) {
            if v1 >= params.min_length && v2 >= params.min_length {
                return Ok((
                    Genome::from_parts_unchecked(c1, v1),
                    Genome::from_parts_unchecked(c2, v2),
                ));
            }
        }
    }
    Ok((p1.clone(), p2.clone()))
}

fn splice_tail(head: &[u16], tail: &[u16], cut: usize) -> Vec<u16> {
    let mut out = Vec::with_capacity(head.len());
    out.extend_from_slice(&head[..cut]);
    out.extend_from_slice(&tail[cut..]);
    out
}

/// Swaps one complete subtree from each parent.
pub fn crossover_subtree<R: Rng>(
    p1: &Genome,
    p2: &Genome,
    rng: &mut R,
    params: &VariationParams,
    pset: &PrimitiveSet,
) -> Result<(Genome, Genome)> {
    let spans1 = subtree_spans(p1, pset)?;
    let spans2 = subtree_spans(p2, pset)?;
    for _ in 0..params.max_crossover_trials {
        let a = spans1[rng.gen_range(0..spans1.len())];
        let b = spans2[rng.gen_range(0..spans2.len())];
        if let Some(children) = try_span_swap(p1, a, p2, b, params, pset) {
            return Ok(children);
        }
    }
    Ok((p1.clone(), p2.clone()))
}

/// Subtree crossover that only accepts span pairs whose outputs differ by
/// more than the sensitivity threshold on the training rows.
///
/// When the trial budget runs out it degrades to one plain subtree attempt
/// (structural constraints only), and failing that copies the parents.
pub fn crossover_semantic<R: Rng>(
    p1: &Genome,
    p2: &Genome,
    dataset: &Dataset,
    rng: &mut R,
    params: &VariationParams,
    pset: &PrimitiveSet,
) -> Result<(Genome, Genome)> {
    let spans1 = subtree_spans(p1, pset)?;
    let spans2 = subtree_spans(p2, pset)?;
    for _ in 0..params.max_crossover_trials {
        let a = spans1[rng.gen_range(0..spans1.len())];
        let b = spans2[rng.gen_range(0..spans2.len())];
        let distance = semantic_distance(p1, a, p2, b, dataset, pset)?;
        if distance <= params.semantic_sensitivity {
            continue;
        }
        if let Some(children) = try_span_swap(p1, a, p2, b, params, pset) {
            return Ok(children);
        }
    }
    let a = spans1[rng.gen_range(0..spans1.len())];
    let b = spans2[rng.gen_range(0..spans2.len())];
    if let Some(children) = try_span_swap(p1, a, p2, b, params, pset) {
        return Ok(children);
    }
    Ok((p1.clone(), p2.clone()))
}

/// Builds both children of a span swap, or `None` when either child would
/// overflow capacity or decode below the minimum length.
fn try_span_swap(
    p1: &Genome,
    a: crate::genome::SubtreeSpan,
    p2: &Genome,
    b: crate::genome::SubtreeSpan,
    params: &VariationParams,
    pset: &PrimitiveSet,
) -> Option<(Genome, Genome)> {
    let len1 = p1.valid_length() - a.len() + b.len();
    let len2 = p2.valid_length() - b.len() + a.len();
    if len1 > params.max_length || len2 > params.max_length {
        return None;
    }
    let c1 = splice_span(p1, a, &p2.tokens()[b.start..=b.end]);
    let c2 = splice_span(p2, b, &p1.tokens()[a.start..=a.end]);
    let v1 = compute_valid_length(&c1, pset)?;
    let v2 = compute_valid_length(&c2, pset)?;
    if v1 < params.min_length || v2 < params.min_length {
        return None;
    }
    Some((Genome::from_parts_unchecked(c1, v1), Genome::from_parts_unchecked(c2, v2)))
}

/// Replaces `span` of the parent's valid prefix with `donor` tokens,
/// carries the inert region over, and truncates to capacity. The caller
/// checks the expression still fits, so truncation only trims inert tokens.
pub(crate) fn splice_span(
    parent: &Genome,
    span: crate::genome::SubtreeSpan,
    donor: &[u16],
) -> Vec<u16> {
    let capacity = parent.capacity();
    let mut out = Vec::with_capacity(capacity);
    out.extend_from_slice(&parent.tokens()[..span.start]);
    out.extend_from_slice(donor);
    out.extend_from_slice(&parent.tokens()[span.end + 1..]);
    out.truncate(capacity);
    // A donor shorter than the span shrinks the array; keep capacity fixed
    // by repeating the parent's final inert token (arbitrary but
    // deterministic filler).
    while out.len() < capacity {
        out.push(parent.tokens()[capacity - 1]);
    }
    out
}

/// Picks a position class by coin flip, then swaps the token at a uniform
/// position of that class for a different same-arity token. Falls back to
/// the other class when the chosen one is empty. Always valid, so the only
/// retry loop is the draw for a different token.
pub fn mutate_fully_protected<R: Rng>(
    genome: &Genome,
    rng: &mut R,
    params: &VariationParams,
    pset: &PrimitiveSet,
) -> Result<Genome> {
    let prefix = genome.valid_prefix();
    let mut operators = Vec::new();
    let mut terminals = Vec::new();
    for (i, &tok) in prefix.iter().enumerate() {
        match pset.arity(tok)? {
            Arity::Terminal => terminals.push(i),
            _ => operators.push(i),
        }
    }
    let use_operators = rng.gen_bool(params.operator_mutate_frequency);
    let positions = match (use_operators, operators.is_empty()) {
        (true, false) => &operators,
        (true, true) => &terminals,
        (false, _) if !terminals.is_empty() => &terminals,
        (false, _) => &operators,
    };
    debug_assert!(!positions.is_empty(), "a valid prefix always has a terminal");
    let pos = positions[rng.gen_range(0..positions.len())];

    Ok(match draw_same_arity(genome.tokens()[pos], rng, params, pset)? {
        Some(tok) => {
            let mut tokens = genome.tokens().to_vec();
            tokens[pos] = tok;
            Genome::from_parts_unchecked(tokens, genome.valid_length())
        }
        None => genome.clone(),
    })
}

/// Uniformly draws a different token of the same arity class, or `None`
/// when the budget expires (for instance a one-operator class).
fn draw_same_arity<R: Rng>(
    original: u16,
    rng: &mut R,
    params: &VariationParams,
    pset: &PrimitiveSet,
) -> Result<Option<u16>> {
    let (base, count) = match pset.arity(original)? {
        Arity::Terminal => (0usize, pset.terminal_count()),
        Arity::Binary => (pset.terminal_count(), pset.binary_count()),
        Arity::Unary => (pset.terminal_count() + pset.binary_count(), pset.unary_count()),
    };
    for _ in 0..params.max_mutation_trials {
        let tok = (base + rng.gen_range(0..count)) as u16;
        if tok != original {
            return Ok(Some(tok));
        }
    }
    Ok(None)
}

/// Mutates a uniform position of the whole array. Inside the protected
/// head (below `min_length`) only same-arity swaps are allowed; past it any
/// token may land, accepted when the genome still decodes long enough.
/// Exhausting the budget returns the genome unchanged.
pub fn mutate_partially_protected<R: Rng>(
    genome: &Genome,
    rng: &mut R,
    params: &VariationParams,
    pset: &PrimitiveSet,
) -> Result<Genome> {
    for _ in 0..params.max_mutation_trials {
        let pos = rng.gen_range(0..genome.capacity());
        if pos < params.min_length {
            // Protected region; same-arity swap keeps the prefix intact.
            return Ok(match draw_same_arity(genome.tokens()[pos], rng, params, pset)? {
                Some(tok) => {
                    let mut tokens = genome.tokens().to_vec();
                    tokens[pos] = tok;
                    Genome::from_parts_unchecked(tokens, genome.valid_length())
                }
                None => genome.clone(),
            });
        }
        let tok = rng.gen_range(0..pset.token_count()) as u16;
        let mut tokens = genome.tokens().to_vec();
        tokens[pos] = tok;
        if let Some(vl) = compute_valid_length(&tokens, pset) {
            if vl >= params.min_length {
                return Ok(Genome::from_parts_unchecked(tokens, vl));
            }
        }
    }
    Ok(genome.clone())
}
