//! Stack evaluation, fitness, error metrics and interval screening.
//!
//! Evaluation is strict about non-finite values: the first infinity or NaN
//! produced anywhere in an expression is returned immediately, and a single
//! non-finite row makes the whole genome's raw fitness infinite. Selection
//! then sees such genomes as adjusted fitness 0.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::GpError;
use crate::genome::{Genome, PrimitiveKind, PrimitiveSet, UnaryOp};
use crate::Result;

/// Training data: named input columns plus one target column.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    variable_names: Vec<String>,
    inputs: Vec<f64>,
    targets: Vec<f64>,
}

impl Dataset {
    /// Builds a dataset from `(inputs, target)` rows.
    ///
    /// Requires at least two rows (metrics need a variance), one input
    /// column per variable, and finite values throughout.
    pub fn new(variable_names: Vec<String>, rows: Vec<(Vec<f64>, f64)>) -> Result<Self> {
        if variable_names.is_empty() {
            return Err(GpError::InvalidParameter("at least one input column required"));
        }
        if rows.len() < 2 {
            return Err(GpError::InvalidParameter("dataset needs at least two rows"));
        }
        let width = variable_names.len();
        let mut inputs = Vec::with_capacity(rows.len() * width);
        let mut targets = Vec::with_capacity(rows.len());
        for (xs, y) in rows {
            if xs.len() != width {
                return Err(GpError::DatasetMismatch("row width differs from column count"));
            }
            if xs.iter().any(|v| !v.is_finite()) || !y.is_finite() {
                return Err(GpError::InvalidParameter("dataset values must be finite"));
            }
            inputs.extend_from_slice(&xs);
            targets.push(y);
        }
        Ok(Dataset { variable_names, inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn variable_count(&self) -> usize {
        self.variable_names.len()
    }

    pub fn variable_names(&self) -> &[String] {
        &self.variable_names
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn row(&self, index: usize) -> (&[f64], f64) {
        let w = self.variable_count();
        (&self.inputs[index * w..(index + 1) * w], self.targets[index])
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[f64], f64)> {
        let w = self.variable_count();
        self.inputs.chunks_exact(w).zip(self.targets.iter().copied())
    }

    /// Per-variable `[min, max]` over the training rows; the box interval
    /// screening works in.
    pub fn input_box(&self) -> Vec<(f64, f64)> {
        let w = self.variable_count();
        let mut out = Vec::with_capacity(w);
        for col in 0..w {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for r in 0..self.len() {
                let v = self.inputs[r * w + col];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            out.push((lo, hi));
        }
        out
    }
}

/// Evaluates a postfix token slice on one input row.
///
/// Returns the first non-finite intermediate as soon as it appears. The
/// slice must decode to exactly one expression.
pub fn eval_slice(tokens: &[u16], inputs: &[f64], pset: &PrimitiveSet) -> Result<f64> {
    if inputs.len() != pset.variable_count() {
        return Err(GpError::DatasetMismatch("input row width differs from variable count"));
    }
    let mut stack: Vec<f64> = Vec::with_capacity(tokens.len());
    for &tok in tokens {
        let value = match pset.kind(tok)? {
            PrimitiveKind::Variable(i) => inputs[i],
            PrimitiveKind::Constant(c) => c,
            PrimitiveKind::Binary(op) => {
                let y = stack.pop().ok_or(GpError::InvalidGenome("operand underflow"))?;
                let x = stack.pop().ok_or(GpError::InvalidGenome("operand underflow"))?;
                op.apply(x, y)
            }
            PrimitiveKind::Unary(op) => {
                let x = stack.pop().ok_or(GpError::InvalidGenome("operand underflow"))?;
                op.apply(x)
            }
        };
        if !value.is_finite() {
            return Ok(value);
        }
        stack.push(value);
    }
    if stack.len() != 1 {
        return Err(GpError::InvalidGenome("slice does not decode to one expression"));
    }
    Ok(stack[0])
}

/// Evaluates a genome's valid prefix on one input row.
pub fn eval_postfix(genome: &Genome, inputs: &[f64], pset: &PrimitiveSet) -> Result<f64> {
    eval_slice(genome.valid_prefix(), inputs, pset)
}

/// Sum of absolute errors over the dataset; +inf as soon as any row
/// evaluates non-finite.
pub fn raw_fitness(genome: &Genome, dataset: &Dataset, pset: &PrimitiveSet) -> Result<f64> {
    let mut sum = 0.0;
    for (inputs, target) in dataset.rows() {
        let predicted = eval_postfix(genome, inputs, pset)?;
        if !predicted.is_finite() {
            return Ok(f64::INFINITY);
        }
        sum += libm::fabs(predicted - target);
    }
    if sum.is_finite() {
        Ok(sum)
    } else {
        Ok(f64::INFINITY)
    }
}

/// Maps raw error to `1 / (1 + raw)`, the maximization target. Non-finite
/// raw fitness collapses to 0.
pub fn adjusted_fitness(raw: f64) -> Result<f64> {
    if raw.is_nan() || raw < 0.0 {
        return Err(GpError::InvalidParameter("raw fitness must be non-negative"));
    }
    if raw.is_infinite() {
        return Ok(0.0);
    }
    Ok(1.0 / (1.0 + raw))
}

/// Computes and stores raw plus adjusted fitness on the genome.
pub fn assign_fitness(genome: &mut Genome, dataset: &Dataset, pset: &PrimitiveSet) -> Result<()> {
    let raw = raw_fitness(genome, dataset, pset)?;
    let adjusted = adjusted_fitness(raw)?;
    genome.set_fitness(raw, adjusted);
    Ok(())
}

/// Error metrics over matched prediction/target slices.
///
/// `nmse` is `None` when the targets have zero variance, `r` when either
/// side does.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub mae: f64,
    pub nmse: Option<f64>,
    pub r: Option<f64>,
}

/// Mean absolute error, normalized mean squared error and Pearson
/// correlation. Needs at least two points; any non-finite prediction turns
/// mae and nmse infinite and leaves `r` undefined.
pub fn metrics(predictions: &[f64], targets: &[f64]) -> Result<Metrics> {
    if predictions.len() != targets.len() {
        return Err(GpError::InvalidParameter("prediction and target lengths differ"));
    }
    let n = targets.len();
    if n < 2 {
        return Err(GpError::InvalidParameter("metrics need at least two points"));
    }
    let nf = n as f64;
    let t_mean = targets.iter().sum::<f64>() / nf;
    let ss_tot: f64 = targets.iter().map(|y| (y - t_mean) * (y - t_mean)).sum();

    if predictions.iter().any(|p| !p.is_finite()) {
        return Ok(Metrics {
            mae: f64::INFINITY,
            nmse: (ss_tot > 0.0).then_some(f64::INFINITY),
            r: None,
        });
    }

    let mae = predictions
        .iter()
        .zip(targets)
        .map(|(p, y)| libm::fabs(p - y))
        .sum::<f64>()
        / nf;
    let ss_res: f64 = predictions.iter().zip(targets).map(|(p, y)| (p - y) * (p - y)).sum();
    let nmse = (ss_tot > 0.0).then(|| ss_res / ss_tot);

    let p_mean = predictions.iter().sum::<f64>() / nf;
    let ss_pred: f64 = predictions.iter().map(|p| (p - p_mean) * (p - p_mean)).sum();
    let r = if ss_tot > 0.0 && ss_pred > 0.0 {
        let cov: f64 =
            predictions.iter().zip(targets).map(|(p, y)| (p - p_mean) * (y - t_mean)).sum();
        // One sqrt over the product keeps perfectly correlated data at
        // exactly +/-1; the clamp catches anything rounding pushes past.
        let r = cov / libm::sqrt(ss_tot * ss_pred);
        r.is_finite().then_some(r.clamp(-1.0, 1.0))
    } else {
        None
    };
    Ok(Metrics { mae, nmse, r })
}

/// Fitness and error metrics of one genome on one dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitnessReport {
    pub raw: f64,
    pub adjusted: f64,
    pub mae: f64,
    pub nmse: Option<f64>,
    pub r: Option<f64>,
}

/// Evaluates `genome` over the dataset and assembles the full report.
/// `mae` always equals `raw / rows`.
pub fn fitness_report(
    genome: &Genome,
    dataset: &Dataset,
    pset: &PrimitiveSet,
) -> Result<FitnessReport> {
    let mut predictions = Vec::with_capacity(dataset.len());
    for (inputs, _) in dataset.rows() {
        predictions.push(eval_postfix(genome, inputs, pset)?);
    }
    let raw = if predictions.iter().all(|p| p.is_finite()) {
        let sum: f64 = predictions
            .iter()
            .zip(dataset.targets())
            .map(|(p, y)| libm::fabs(p - y))
            .sum();
        if sum.is_finite() {
            sum
        } else {
            f64::INFINITY
        }
    } else {
        f64::INFINITY
    };
    let adjusted = adjusted_fitness(raw)?;
    let m = metrics(&predictions, dataset.targets())?;
    Ok(FitnessReport { raw, adjusted, mae: raw / dataset.len() as f64, nmse: m.nmse, r: m.r })
}

/// Mean output difference of two subtree slices over the dataset.
///
/// Rows where either side evaluates non-finite are skipped; when more than
/// half the rows drop out the distance is +inf, marking the comparison
/// uninformative. Identical slices are distance 0 by definition.
pub fn semantic_distance(
    a: &Genome,
    span_a: crate::genome::SubtreeSpan,
    b: &Genome,
    span_b: crate::genome::SubtreeSpan,
    dataset: &Dataset,
    pset: &PrimitiveSet,
) -> Result<f64> {
    let slice_a = &a.tokens()[span_a.start..=span_a.end];
    let slice_b = &b.tokens()[span_b.start..=span_b.end];
    if slice_a == slice_b {
        return Ok(0.0);
    }
    let mut kept = 0usize;
    let mut skipped = 0usize;
    let mut sum = 0.0;
    for (inputs, _) in dataset.rows() {
        let va = eval_slice(slice_a, inputs, pset)?;
        let vb = eval_slice(slice_b, inputs, pset)?;
        if va.is_finite() && vb.is_finite() {
            sum += libm::fabs(va - vb);
            kept += 1;
        } else {
            skipped += 1;
        }
    }
    if skipped * 2 > dataset.len() {
        return Ok(f64::INFINITY);
    }
    Ok(sum / kept as f64)
}

/// Closed interval with finite endpoints, `lo <= hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

// Below the log of the smallest positive subnormal, so the hull of
// protected log over any positive input stays inside.
const LOG_FLOOR: f64 = -745.0;

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(GpError::InvalidParameter("interval endpoints must be finite and ordered"));
        }
        Ok(Interval { lo, hi })
    }

    pub fn point(v: f64) -> Result<Self> {
        Interval::new(v, v)
    }

    pub fn contains_zero(&self) -> bool {
        self.lo <= 0.0 && 0.0 <= self.hi
    }

    fn bounded(lo: f64, hi: f64) -> Option<Interval> {
        (lo.is_finite() && hi.is_finite()).then_some(Interval { lo, hi })
    }

    /// `None` means the result escapes the finite range somewhere in the
    /// input box, or (for division) the divisor may hit zero.
    pub fn add(self, rhs: Interval) -> Option<Interval> {
        Interval::bounded(self.lo + rhs.lo, self.hi + rhs.hi)
    }

    pub fn sub(self, rhs: Interval) -> Option<Interval> {
        Interval::bounded(self.lo - rhs.hi, self.hi - rhs.lo)
    }

    pub fn mul(self, rhs: Interval) -> Option<Interval> {
        let c = [self.lo * rhs.lo, self.lo * rhs.hi, self.hi * rhs.lo, self.hi * rhs.hi];
        let mut lo = c[0];
        let mut hi = c[0];
        for &v in &c[1..] {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        Interval::bounded(lo, hi)
    }

    pub fn div(self, rhs: Interval) -> Option<Interval> {
        if rhs.contains_zero() {
            return None;
        }
        let c = [self.lo / rhs.lo, self.lo / rhs.hi, self.hi / rhs.lo, self.hi / rhs.hi];
        let mut lo = c[0];
        let mut hi = c[0];
        for &v in &c[1..] {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        Interval::bounded(lo, hi)
    }

    /// Conservative hull of a unary operator's image. Trigonometric ops
    /// widen to `[-1, 1]` rather than tracking monotone pieces.
    pub fn apply_unary(self, op: UnaryOp) -> Option<Interval> {
        match op {
            UnaryOp::Sin | UnaryOp::Cos => Some(Interval { lo: -1.0, hi: 1.0 }),
            UnaryOp::Exp => Interval::bounded(libm::exp(self.lo), libm::exp(self.hi)),
            UnaryOp::Log => {
                if self.lo > 0.0 {
                    Interval::bounded(libm::log(self.lo), libm::log(self.hi))
                } else if self.hi <= 0.0 {
                    Some(Interval { lo: 0.0, hi: 0.0 })
                } else {
                    // Mixed sign: protected zeros plus log of (0, hi].
                    Some(Interval { lo: LOG_FLOOR, hi: libm::log(self.hi).max(0.0) })
                }
            }
            UnaryOp::Sqrt => {
                if self.lo >= 0.0 {
                    Interval::bounded(libm::sqrt(self.lo), libm::sqrt(self.hi))
                } else if self.hi < 0.0 {
                    Some(Interval { lo: 0.0, hi: 0.0 })
                } else {
                    Interval::bounded(0.0, libm::sqrt(self.hi))
                }
            }
            UnaryOp::Abs => {
                if self.lo >= 0.0 {
                    Some(self)
                } else if self.hi <= 0.0 {
                    Some(Interval { lo: -self.hi, hi: -self.lo })
                } else {
                    Some(Interval { lo: 0.0, hi: (-self.lo).max(self.hi) })
                }
            }
            UnaryOp::Neg => Some(Interval { lo: -self.hi, hi: -self.lo }),
        }
    }
}

/// Interval feasibility screening over a per-variable input box.
///
/// Walks the valid prefix with interval arithmetic; any division whose
/// divisor interval contains zero, or any unbounded intermediate, makes the
/// genome infeasible. The screening over-approximates, so `true` guarantees
/// every point in the box evaluates finite.
pub fn interval_feasible(
    genome: &Genome,
    input_box: &[(f64, f64)],
    pset: &PrimitiveSet,
) -> Result<bool> {
    if input_box.len() != pset.variable_count() {
        return Err(GpError::DatasetMismatch("input box width differs from variable count"));
    }
    let mut boxes = Vec::with_capacity(input_box.len());
    for &(lo, hi) in input_box {
        boxes.push(Interval::new(lo, hi)?);
    }
    let mut stack: Vec<Interval> = Vec::with_capacity(genome.valid_length());
    for &tok in genome.valid_prefix() {
        let iv = match pset.kind(tok)? {
            PrimitiveKind::Variable(i) => Some(boxes[i]),
            PrimitiveKind::Constant(c) => Some(Interval { lo: c, hi: c }),
            PrimitiveKind::Binary(op) => {
                let y = stack.pop().ok_or(GpError::InvalidGenome("operand underflow"))?;
                let x = stack.pop().ok_or(GpError::InvalidGenome("operand underflow"))?;
                match op {
                    crate::genome::BinaryOp::Add => x.add(y),
                    crate::genome::BinaryOp::Sub => x.sub(y),
                    crate::genome::BinaryOp::Mul => x.mul(y),
                    crate::genome::BinaryOp::Div => x.div(y),
                }
            }
            PrimitiveKind::Unary(op) => {
                let x = stack.pop().ok_or(GpError::InvalidGenome("operand underflow"))?;
                x.apply_unary(op)
            }
        };
        match iv {
            Some(iv) => stack.push(iv),
            None => return Ok(false),
        }
    }
    if stack.len() != 1 {
        return Err(GpError::InvalidGenome("prefix does not decode to one expression"));
    }
    Ok(true)
}
