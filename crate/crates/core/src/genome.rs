//! Genome representation: primitive sets, token arrays and their decoding.
//!
//! A genome is a fixed-capacity vector of token ids. Reading tokens left to
//! right as postfix, the longest prefix that decodes to exactly one
//! expression is the genome's valid prefix; its length is the valid length.
//! Tokens past the valid prefix never evaluate but still recombine.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;

use rand::Rng;

use crate::error::GpError;
use crate::Result;

/// How many operands a primitive consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arity {
    Terminal,
    Unary,
    Binary,
}

/// Binary operators. Division is unprotected: it evaluates with IEEE
/// semantics and lets infinities and NaNs surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
        }
    }

    /// Accepts the canonical symbol plus common aliases seen in data files.
    pub fn parse_symbol(s: &str) -> Option<Self> {
        match s {
            "+" => Some(BinaryOp::Add),
            "-" | "\u{2212}" => Some(BinaryOp::Sub),
            "*" | "\u{00d7}" => Some(BinaryOp::Mul),
            "/" | "\u{00f7}" => Some(BinaryOp::Div),
            _ => None,
        }
    }

    pub fn apply(self, x: f64, y: f64) -> f64 {
        match self {
            BinaryOp::Add => x + y,
            BinaryOp::Sub => x - y,
            BinaryOp::Mul => x * y,
            BinaryOp::Div => x / y,
        }
    }
}

/// Unary operators. `log` and `sqrt` are protected: out-of-domain arguments
/// produce 0 instead of a NaN.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Abs,
    Neg,
}

impl UnaryOp {
    pub fn symbol(self) -> &'static str {
        match self {
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
            UnaryOp::Sqrt => "sqrt",
            UnaryOp::Abs => "abs",
            UnaryOp::Neg => "neg",
        }
    }

    pub fn parse_symbol(s: &str) -> Option<Self> {
        match s {
            "sin" | "S" => Some(UnaryOp::Sin),
            "cos" | "C" => Some(UnaryOp::Cos),
            "exp" => Some(UnaryOp::Exp),
            "log" | "ln" => Some(UnaryOp::Log),
            "sqrt" => Some(UnaryOp::Sqrt),
            "abs" => Some(UnaryOp::Abs),
            "neg" => Some(UnaryOp::Neg),
            _ => None,
        }
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            UnaryOp::Sin => libm::sin(x),
            UnaryOp::Cos => libm::cos(x),
            UnaryOp::Exp => libm::exp(x),
            UnaryOp::Log => {
                if x > 0.0 {
                    libm::log(x)
                } else {
                    0.0
                }
            }
            UnaryOp::Sqrt => {
                if x >= 0.0 {
                    libm::sqrt(x)
                } else {
                    0.0
                }
            }
            UnaryOp::Abs => libm::fabs(x),
            UnaryOp::Neg => -x,
        }
    }
}

/// What a token id stands for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PrimitiveKind {
    Variable(usize),
    Constant(f64),
    Binary(BinaryOp),
    Unary(UnaryOp),
}

/// The vocabulary a run draws tokens from.
///
/// Token ids partition a contiguous range: variables first, then constants,
/// then binary operators, then unary operators. The numeric layout is part
/// of the genome format and must stay stable for a given set.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveSet {
    variables: Vec<String>,
    constants: Vec<f64>,
    binary_ops: Vec<BinaryOp>,
    unary_ops: Vec<UnaryOp>,
}

impl PrimitiveSet {
    pub fn new(
        variables: Vec<String>,
        constants: Vec<f64>,
        binary_ops: Vec<BinaryOp>,
        unary_ops: Vec<UnaryOp>,
    ) -> Result<Self> {
        if variables.is_empty() {
            return Err(GpError::InvalidParameter("at least one variable required"));
        }
        if binary_ops.is_empty() && unary_ops.is_empty() {
            return Err(GpError::InvalidParameter("at least one operator required"));
        }
        for name in &variables {
            if name.is_empty() {
                return Err(GpError::InvalidParameter("empty variable name"));
            }
        }
        for (i, a) in variables.iter().enumerate() {
            if variables[..i].contains(a) {
                return Err(GpError::InvalidParameter("duplicate variable name"));
            }
        }
        if constants.iter().any(|c| !c.is_finite()) {
            return Err(GpError::InvalidParameter("constants must be finite"));
        }
        let total = variables.len() + constants.len() + binary_ops.len() + unary_ops.len();
        if total > u16::MAX as usize {
            return Err(GpError::InvalidParameter("primitive set too large"));
        }
        Ok(PrimitiveSet { variables, constants, binary_ops, unary_ops })
    }

    pub fn variable_count(&self) -> usize {
        self.variables.len()
    }

    pub fn constant_count(&self) -> usize {
        self.constants.len()
    }

    pub fn binary_count(&self) -> usize {
        self.binary_ops.len()
    }

    pub fn unary_count(&self) -> usize {
        self.unary_ops.len()
    }

    /// Number of terminal tokens (variables and constants).
    pub fn terminal_count(&self) -> usize {
        self.variables.len() + self.constants.len()
    }

    pub fn token_count(&self) -> usize {
        self.terminal_count() + self.binary_ops.len() + self.unary_ops.len()
    }

    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    pub fn constants(&self) -> &[f64] {
        &self.constants
    }

    pub fn binary_ops(&self) -> &[BinaryOp] {
        &self.binary_ops
    }

    pub fn unary_ops(&self) -> &[UnaryOp] {
        &self.unary_ops
    }

    /// Decodes a token id into the primitive it names.
    pub fn kind(&self, token: u16) -> Result<PrimitiveKind> {
        let mut t = token as usize;
        if t < self.variables.len() {
            return Ok(PrimitiveKind::Variable(t));
        }
        t -= self.variables.len();
        if t < self.constants.len() {
            return Ok(PrimitiveKind::Constant(self.constants[t]));
        }
        t -= self.constants.len();
        if t < self.binary_ops.len() {
            return Ok(PrimitiveKind::Binary(self.binary_ops[t]));
        }
        t -= self.binary_ops.len();
        if t < self.unary_ops.len() {
            return Ok(PrimitiveKind::Unary(self.unary_ops[t]));
        }
        Err(GpError::InvalidToken(token))
    }

    pub fn arity(&self, token: u16) -> Result<Arity> {
        Ok(match self.kind(token)? {
            PrimitiveKind::Variable(_) | PrimitiveKind::Constant(_) => Arity::Terminal,
            PrimitiveKind::Binary(_) => Arity::Binary,
            PrimitiveKind::Unary(_) => Arity::Unary,
        })
    }

    /// Printable form of a token: variable name, constant value or operator
    /// symbol.
    pub fn token_symbol(&self, token: u16) -> Result<String> {
        Ok(match self.kind(token)? {
            PrimitiveKind::Variable(i) => self.variables[i].clone(),
            PrimitiveKind::Constant(c) => format!("{}", c),
            PrimitiveKind::Binary(op) => op.symbol().to_string(),
            PrimitiveKind::Unary(op) => op.symbol().to_string(),
        })
    }

    pub fn variable_token(&self, index: usize) -> u16 {
        debug_assert!(index < self.variables.len());
        index as u16
    }

    pub fn constant_token(&self, index: usize) -> u16 {
        debug_assert!(index < self.constants.len());
        (self.variables.len() + index) as u16
    }

    pub fn binary_token(&self, index: usize) -> u16 {
        debug_assert!(index < self.binary_ops.len());
        (self.terminal_count() + index) as u16
    }

    pub fn unary_token(&self, index: usize) -> u16 {
        debug_assert!(index < self.unary_ops.len());
        (self.terminal_count() + self.binary_ops.len() + index) as u16
    }

    pub(crate) fn random_terminal<R: Rng>(&self, rng: &mut R) -> u16 {
        rng.gen_range(0..self.terminal_count()) as u16
    }
}

/// A contiguous token range `[start, end]` that decodes to one complete
/// subexpression of a genome's valid prefix. `end` is the subtree root.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubtreeSpan {
    pub start: usize,
    pub end: usize,
}

impl SubtreeSpan {
    /// Token count of the span; at least 1 by construction.
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }
}

/// Raw and adjusted fitness of an evaluated genome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fitness {
    pub raw: f64,
    pub adjusted: f64,
}

/// A fixed-capacity postfix token string.
///
/// Capacity equals the run's maximum expression length; `valid_length`
/// tracks the longest decodable prefix and is kept in sync by every
/// constructor and operator.
#[derive(Debug, Clone, PartialEq)]
pub struct Genome {
    tokens: Vec<u16>,
    valid_length: usize,
    fitness: Option<Fitness>,
}

impl Genome {
    /// Builds a genome from raw tokens, computing the valid length.
    ///
    /// Fails if any id is out of range, no prefix decodes, or the valid
    /// length falls short of `min_length`.
    pub fn from_tokens(tokens: Vec<u16>, pset: &PrimitiveSet, min_length: usize) -> Result<Self> {
        for &t in &tokens {
            if (t as usize) >= pset.token_count() {
                return Err(GpError::InvalidToken(t));
            }
        }
        let valid_length = compute_valid_length(&tokens, pset)
            .ok_or(GpError::InvalidGenome("no prefix decodes to an expression"))?;
        if valid_length < min_length {
            return Err(GpError::InvalidGenome("valid length below minimum"));
        }
        Ok(Genome { tokens, valid_length, fitness: None })
    }

    /// Internal constructor for operators that already know the valid
    /// length they produced.
    pub(crate) fn from_parts_unchecked(tokens: Vec<u16>, valid_length: usize) -> Self {
        debug_assert!(valid_length >= 1 && valid_length <= tokens.len());
        Genome { tokens, valid_length, fitness: None }
    }

    pub fn tokens(&self) -> &[u16] {
        &self.tokens
    }

    /// The decodable prefix; everything evaluation sees.
    pub fn valid_prefix(&self) -> &[u16] {
        &self.tokens[..self.valid_length]
    }

    pub fn valid_length(&self) -> usize {
        self.valid_length
    }

    pub fn capacity(&self) -> usize {
        self.tokens.len()
    }

    pub fn raw_fitness(&self) -> Option<f64> {
        self.fitness.map(|f| f.raw)
    }

    pub fn adjusted_fitness(&self) -> Option<f64> {
        self.fitness.map(|f| f.adjusted)
    }

    pub fn has_fitness(&self) -> bool {
        self.fitness.is_some()
    }

    pub fn set_fitness(&mut self, raw: f64, adjusted: f64) {
        self.fitness = Some(Fitness { raw, adjusted });
    }

    pub fn clear_fitness(&mut self) {
        self.fitness = None;
    }
}

/// Length of the longest prefix that decodes to exactly one expression.
///
/// Scans left to right keeping a count of stacked operands. A terminal
/// pushes one; a unary needs one; a binary needs two and nets minus one.
/// Positions where the count returns to one are completion points; the
/// result is the largest one. An underflow or unknown id stops the scan.
pub fn compute_valid_length(tokens: &[u16], pset: &PrimitiveSet) -> Option<usize> {
    let mut depth: usize = 0;
    let mut best = None;
    for (i, &tok) in tokens.iter().enumerate() {
        match pset.arity(tok) {
            Err(_) => break,
            Ok(Arity::Terminal) => depth += 1,
            Ok(Arity::Unary) => {
                if depth < 1 {
                    break;
                }
            }
            Ok(Arity::Binary) => {
                if depth < 2 {
                    break;
                }
                depth -= 1;
            }
        }
        if depth == 1 {
            best = Some(i + 1);
        }
    }
    best
}

/// True when an expression of exactly length `len` exists over `pset`.
///
/// With a unary operator any length works; with only binary operators the
/// length must be odd (each binary consumes one net operand).
fn length_feasible(pset: &PrimitiveSet, len: usize) -> bool {
    if len == 0 {
        return false;
    }
    if pset.unary_count() > 0 {
        true
    } else if pset.binary_count() > 0 {
        len % 2 == 1
    } else {
        len == 1
    }
}

/// Can a partial scan at operand depth `d` still finish as one expression
/// using exactly `remaining` more tokens?
fn completable(pset: &PrimitiveSet, d: usize, remaining: usize) -> bool {
    if d == 0 {
        // Nothing stacked: the remainder must itself be a full expression.
        return length_feasible(pset, remaining);
    }
    if remaining == 0 {
        return d == 1;
    }
    if pset.binary_count() == 0 {
        // Unary chain only: depth can never shrink.
        return d == 1;
    }
    // Need d - 1 binary reductions, so at least d - 1 tokens remain and the
    // surplus must be expressible (pairs of terminal+binary, or any count
    // when a unary operator exists).
    if d > remaining + 1 {
        return false;
    }
    let surplus = remaining - (d - 1);
    pset.unary_count() > 0 || surplus % 2 == 0
}

/// Generates a uniformly structured random genome.
///
/// Picks a target length uniformly from the feasible lengths in
/// `[min_length, max_length]`, emits tokens whose arity keeps the prefix
/// completable at that exact length, then pads to capacity with random
/// terminals. The valid length of the result is at least the target; the
/// padding can only extend completion points past it when it happens to
/// decode, and the scan already stopped accepting shorter ones.
pub fn random_genome<R: Rng>(
    pset: &PrimitiveSet,
    min_length: usize,
    max_length: usize,
    rng: &mut R,
) -> Result<Genome> {
    if min_length < 1 || min_length > max_length {
        return Err(GpError::InvalidParameter("invalid length range"));
    }
    let lengths: Vec<usize> =
        (min_length..=max_length).filter(|&l| length_feasible(pset, l)).collect();
    if lengths.is_empty() {
        return Err(GpError::InfeasiblePrimitiveSet);
    }
    let target = lengths[rng.gen_range(0..lengths.len())];

    let mut tokens = Vec::with_capacity(max_length);
    let mut depth = 0usize;
    for emitted in 0..target {
        let after = target - emitted - 1;
        let mut classes: [Arity; 3] = [Arity::Terminal; 3];
        let mut n = 0;
        if completable(pset, depth + 1, after) {
            classes[n] = Arity::Terminal;
            n += 1;
        }
        if pset.unary_count() > 0 && depth >= 1 && completable(pset, depth, after) {
            classes[n] = Arity::Unary;
            n += 1;
        }
        if pset.binary_count() > 0 && depth >= 2 && completable(pset, depth - 1, after) {
            classes[n] = Arity::Binary;
            n += 1;
        }
        debug_assert!(n > 0, "feasible target length must keep one class open");
        let class = classes[rng.gen_range(0..n)];
        let tok = match class {
            Arity::Terminal => {
                depth += 1;
                pset.random_terminal(rng)
            }
            Arity::Unary => pset.unary_token(rng.gen_range(0..pset.unary_count())),
            Arity::Binary => {
                depth -= 1;
                pset.binary_token(rng.gen_range(0..pset.binary_count()))
            }
        };
        tokens.push(tok);
    }
    debug_assert_eq!(depth, 1);
    while tokens.len() < max_length {
        tokens.push(pset.random_terminal(rng));
    }
    let valid_length = compute_valid_length(&tokens, pset)
        .expect("constructed prefix decodes by construction");
    debug_assert!(valid_length >= target);
    Ok(Genome { tokens, valid_length, fitness: None })
}

// Signatures quantize each output to 1e-4 so that runs differing only by
// float noise count as semantic duplicates.
const SIGNATURE_QUANTUM: f64 = 1e-4;
const DIVERSITY_REJECTION_CAP: usize = 50;

fn semantic_signature(
    genome: &Genome,
    dataset: &crate::evaluator::Dataset,
    pset: &PrimitiveSet,
) -> Result<Vec<i64>> {
    let mut sig = Vec::with_capacity(dataset.len());
    for (inputs, _) in dataset.rows() {
        let v = crate::evaluator::eval_postfix(genome, inputs, pset)?;
        sig.push(if v.is_nan() {
            i64::MIN + 1
        } else {
            // Saturating cast sends the two infinities to the i64 extremes.
            libm::round(v / SIGNATURE_QUANTUM) as i64
        });
    }
    Ok(sig)
}

/// Generates `count` random genomes whose output vectors on `dataset` are
/// pairwise distinct after quantization.
///
/// Candidates whose signature matches an accepted one are rejected; after
/// 50 consecutive rejections the next candidate is accepted unconditionally
/// so small vocabularies still terminate.
pub fn semantically_diverse_population<R: Rng>(
    pset: &PrimitiveSet,
    count: usize,
    min_length: usize,
    max_length: usize,
    dataset: &crate::evaluator::Dataset,
    rng: &mut R,
) -> Result<Vec<Genome>> {
    let mut accepted = Vec::with_capacity(count);
    let mut signatures: Vec<Vec<i64>> = Vec::with_capacity(count);
    let mut rejected_streak = 0usize;
    while accepted.len() < count {
        let g = random_genome(pset, min_length, max_length, rng)?;
        let sig = semantic_signature(&g, dataset, pset)?;
        let duplicate = signatures.iter().any(|s| *s == sig);
        if duplicate && rejected_streak < DIVERSITY_REJECTION_CAP {
            rejected_streak += 1;
            continue;
        }
        signatures.push(sig);
        accepted.push(g);
        rejected_streak = 0;
    }
    Ok(accepted)
}

/// Every complete subexpression of the valid prefix, one span per token,
/// in token order. The final span covers the whole prefix.
pub fn subtree_spans(genome: &Genome, pset: &PrimitiveSet) -> Result<Vec<SubtreeSpan>> {
    let prefix = genome.valid_prefix();
    let mut stack: Vec<SubtreeSpan> = Vec::with_capacity(prefix.len());
    let mut spans = Vec::with_capacity(prefix.len());
    for (i, &tok) in prefix.iter().enumerate() {
        let span = match pset.arity(tok)? {
            Arity::Terminal => SubtreeSpan { start: i, end: i },
            Arity::Unary => {
                let a = stack.pop().ok_or(GpError::InvalidGenome("operand underflow"))?;
                SubtreeSpan { start: a.start, end: i }
            }
            Arity::Binary => {
                stack.pop().ok_or(GpError::InvalidGenome("operand underflow"))?;
                let first = stack.pop().ok_or(GpError::InvalidGenome("operand underflow"))?;
                SubtreeSpan { start: first.start, end: i }
            }
        };
        stack.push(span);
        spans.push(span);
    }
    if stack.len() != 1 {
        return Err(GpError::InvalidGenome("prefix does not decode to one expression"));
    }
    Ok(spans)
}

/// Lifts the proper subtrees of `genome` longer than `min_length` into
/// standalone genomes, padding each to the parent's capacity with random
/// terminals. Candidates for the archive, not members of the population.
pub fn extract_subtrees<R: Rng>(
    genome: &Genome,
    pset: &PrimitiveSet,
    min_length: usize,
    rng: &mut R,
) -> Result<Vec<Genome>> {
    let spans = subtree_spans(genome, pset)?;
    let whole = genome.valid_length();
    let mut out = Vec::new();
    for span in spans {
        if span.len() <= min_length || span.len() == whole {
            continue;
        }
        let mut tokens = Vec::with_capacity(genome.capacity());
        tokens.extend_from_slice(&genome.tokens()[span.start..=span.end]);
        let valid_length = tokens.len();
        while tokens.len() < genome.capacity() {
            tokens.push(pset.random_terminal(rng));
        }
        debug_assert!(compute_valid_length(&tokens, pset).is_some());
        out.push(Genome::from_parts_unchecked(tokens, valid_length));
    }
    Ok(out)
}

/// Renders the valid prefix as a fully parenthesized infix expression.
pub fn render_infix(genome: &Genome, pset: &PrimitiveSet) -> Result<String> {
    let mut stack: Vec<String> = Vec::new();
    for &tok in genome.valid_prefix() {
        let rendered = match pset.kind(tok)? {
            PrimitiveKind::Variable(i) => pset.variables()[i].clone(),
            PrimitiveKind::Constant(c) => format!("{}", c),
            PrimitiveKind::Binary(op) => {
                let y = stack.pop().ok_or(GpError::InvalidGenome("operand underflow"))?;
                let x = stack.pop().ok_or(GpError::InvalidGenome("operand underflow"))?;
                format!("({}{}{})", x, op.symbol(), y)
            }
            PrimitiveKind::Unary(op) => {
                let x = stack.pop().ok_or(GpError::InvalidGenome("operand underflow"))?;
                format!("{}({})", op.symbol(), x)
            }
        };
        stack.push(rendered);
    }
    if stack.len() != 1 {
        return Err(GpError::InvalidGenome("prefix does not decode to one expression"));
    }
    Ok(stack.pop().unwrap())
}

/// One log line for an evaluated genome: `#`-joined prefix tokens, adjusted
/// fitness to four decimals, and the valid length.
pub fn render_log(genome: &Genome, pset: &PrimitiveSet) -> Result<String> {
    let fitness = genome.fitness.ok_or(GpError::FitnessUnset)?;
    let mut line = String::new();
    for &tok in genome.valid_prefix() {
        line.push_str(&pset.token_symbol(tok)?);
        line.push('#');
    }
    write!(
        line,
        " \u{2192} AdjFit \u{2192} {:.4} \u{2192} ValPos \u{2192} {}",
        fitness.adjusted, genome.valid_length
    )
    .expect("write to String cannot fail");
    Ok(line)
}
