//! The generational loop: initialization, stepping, cascading, prediction.
//!
//! One master RNG drives every stochastic decision in a fixed order, and
//! fitness evaluation draws nothing from it, so a run is a pure function of
//! (params, dataset, primitive set) no matter how evaluation is
//! parallelized.

use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};

use crate::error::GpError;
use crate::evaluator::{assign_fitness, fitness_report, interval_feasible, Dataset};
use crate::genome::{
    extract_subtrees, random_genome, render_infix, semantically_diverse_population, Genome,
    PrimitiveSet,
};
use crate::selection::{choose_pool, select, Archive, SelectionConfig};
use crate::variation::{crossover, mutate, VariationParams};
use crate::{GpRng, Result};

/// How the initial population (and each cascade restart) is generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialPopulation {
    Random,
    /// Random genomes filtered for pairwise-distinct output vectors.
    SemanticallyDiverse,
}

/// Everything that parameterizes a run.
#[derive(Debug, Clone, PartialEq)]
pub struct GpParams {
    pub generations: usize,
    /// Interior multiples of this trigger a population cascade.
    pub generations_per_cascade: usize,
    pub population_size: usize,
    pub min_length: usize,
    pub max_length: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub crossover: crate::variation::CrossoverKind,
    pub mutation: crate::variation::MutationKind,
    pub selection: SelectionConfig,
    /// Screen children against the training box with interval arithmetic.
    pub interval_arithmetic: bool,
    pub semantic_sensitivity: f64,
    pub initial_population: InitialPopulation,
    pub seed: u64,
}

impl GpParams {
    /// The conventional archive capacity: a tenth of the population,
    /// at least one slot.
    pub fn default_archive_size(population_size: usize) -> usize {
        (population_size / 10).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.population_size < 2 {
            return Err(GpError::InvalidParameter("population size must be at least 2"));
        }
        if self.min_length < 1 || self.min_length > self.max_length {
            return Err(GpError::InvalidParameter("invalid length range"));
        }
        for rate in [self.crossover_rate, self.mutation_rate] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(GpError::InvalidParameter("rates must lie in [0, 1]"));
            }
        }
        if self.generations_per_cascade < 1 {
            return Err(GpError::InvalidParameter("cascade interval must be at least 1"));
        }
        if self.generations > 0 && self.generations_per_cascade > self.generations {
            return Err(GpError::InvalidParameter("cascade interval exceeds generations"));
        }
        if self.semantic_sensitivity.is_nan() || self.semantic_sensitivity < 0.0 {
            return Err(GpError::InvalidParameter("semantic sensitivity must be non-negative"));
        }
        self.selection.validate()
    }

    pub fn variation_params(&self) -> VariationParams {
        VariationParams::new(
            self.crossover,
            self.mutation,
            self.semantic_sensitivity,
            self.min_length,
            self.max_length,
        )
    }
}

/// Per-generation statistics row.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRecord {
    pub generation: usize,
    /// Best adjusted fitness inside the current population.
    pub best_adjusted: f64,
    /// Valid length of that individual.
    pub best_size: usize,
    pub archive_mean_adjusted: f64,
    pub archive_mean_nodes: f64,
    /// Infix rendering of the archive's best entry.
    pub best_so_far_expr: String,
    pub best_so_far_size: usize,
    pub best_so_far_adjusted: f64,
    pub best_so_far_mae: f64,
    pub best_so_far_nmse: Option<f64>,
    pub best_so_far_r: Option<f64>,
}

/// Serializable view of the master RNG.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngSnapshot {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

/// Complete state of a run between generations.
#[derive(Debug, Clone, PartialEq)]
pub struct RunState {
    pub params: GpParams,
    pub pset: PrimitiveSet,
    pub dataset: Dataset,
    pub population: Vec<Genome>,
    pub archive: Archive,
    pub generation: usize,
    pub rng: GpRng,
    pub records: Vec<GenerationRecord>,
}

impl RunState {
    /// Reassembles a state from persisted parts, revalidating the
    /// cross-field invariants a storage layer cannot see.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        params: GpParams,
        pset: PrimitiveSet,
        dataset: Dataset,
        population: Vec<Genome>,
        archive: Archive,
        generation: usize,
        rng: RngSnapshot,
    ) -> Result<Self> {
        params.validate()?;
        check_columns(&params, &dataset, &pset)?;
        if population.len() != params.population_size {
            return Err(GpError::InvalidParameter("population size differs from params"));
        }
        for g in population.iter().chain(archive.entries()) {
            if g.capacity() != params.max_length {
                return Err(GpError::InvalidParameter("genome capacity differs from max length"));
            }
            if g.valid_length() < params.min_length {
                return Err(GpError::InvalidGenome("valid length below minimum"));
            }
            if !g.has_fitness() {
                return Err(GpError::FitnessUnset);
            }
        }
        if archive.capacity() != params.selection.archive_size {
            return Err(GpError::InvalidParameter("archive capacity differs from params"));
        }
        if generation > params.generations {
            return Err(GpError::InvalidParameter("generation counter exceeds generations"));
        }
        let mut state = RunState {
            params,
            pset,
            dataset,
            population,
            archive,
            generation,
            rng: GpRng::seed_from_u64(0),
            records: Vec::new(),
        };
        state.restore_rng(rng);
        Ok(state)
    }

    pub fn rng_snapshot(&self) -> RngSnapshot {
        RngSnapshot {
            seed: self.rng.get_seed(),
            stream: self.rng.get_stream(),
            word_pos: self.rng.get_word_pos(),
        }
    }

    pub fn restore_rng(&mut self, snapshot: RngSnapshot) {
        let mut rng = GpRng::from_seed(snapshot.seed);
        rng.set_stream(snapshot.stream);
        rng.set_word_pos(snapshot.word_pos);
        self.rng = rng;
    }

    /// The archive's best entry; present from initialization onward.
    pub fn best_so_far(&self) -> Option<&Genome> {
        self.archive.best()
    }
}

/// Fitness assignment over a population slice. Implementations must be
/// pure per genome (no RNG, no shared mutable state) so that evaluation
/// order and parallelism cannot change results.
pub trait Evaluate {
    fn evaluate(
        &self,
        genomes: &mut [Genome],
        dataset: &Dataset,
        pset: &PrimitiveSet,
    ) -> Result<()>;
}

/// Evaluates genomes one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct SequentialEvaluator;

impl Evaluate for SequentialEvaluator {
    fn evaluate(
        &self,
        genomes: &mut [Genome],
        dataset: &Dataset,
        pset: &PrimitiveSet,
    ) -> Result<()> {
        for g in genomes {
            assign_fitness(g, dataset, pset)?;
        }
        Ok(())
    }
}

fn check_columns(params: &GpParams, dataset: &Dataset, pset: &PrimitiveSet) -> Result<()> {
    let _ = params;
    if dataset.variable_names() != pset.variables() {
        return Err(GpError::DatasetMismatch("dataset columns differ from variables"));
    }
    Ok(())
}

fn generate_population<R: Rng>(
    kind: InitialPopulation,
    count: usize,
    params: &GpParams,
    dataset: &Dataset,
    pset: &PrimitiveSet,
    rng: &mut R,
) -> Result<Vec<Genome>> {
    match kind {
        InitialPopulation::Random => (0..count)
            .map(|_| random_genome(pset, params.min_length, params.max_length, rng))
            .collect(),
        InitialPopulation::SemanticallyDiverse => semantically_diverse_population(
            pset,
            count,
            params.min_length,
            params.max_length,
            dataset,
            rng,
        ),
    }
}

fn best_index(population: &[Genome]) -> Result<usize> {
    let mut best = 0usize;
    let mut best_fit = f64::NEG_INFINITY;
    for (i, g) in population.iter().enumerate() {
        let fit = g.adjusted_fitness().ok_or(GpError::FitnessUnset)?;
        if fit > best_fit {
            best = i;
            best_fit = fit;
        }
    }
    Ok(best)
}

fn make_record(state: &RunState) -> Result<GenerationRecord> {
    let best = &state.population[best_index(&state.population)?];
    let entries = state.archive.entries();
    debug_assert!(!entries.is_empty());
    let n = entries.len() as f64;
    let mut mean_adjusted = 0.0;
    let mut mean_nodes = 0.0;
    for g in entries {
        mean_adjusted += g.adjusted_fitness().ok_or(GpError::FitnessUnset)?;
        mean_nodes += g.valid_length() as f64;
    }
    let best_so_far = state.archive.best().ok_or(GpError::EmptyPool)?;
    let report = fitness_report(best_so_far, &state.dataset, &state.pset)?;
    Ok(GenerationRecord {
        generation: state.generation,
        best_adjusted: best.adjusted_fitness().unwrap_or(0.0),
        best_size: best.valid_length(),
        archive_mean_adjusted: mean_adjusted / n,
        archive_mean_nodes: mean_nodes / n,
        best_so_far_expr: render_infix(best_so_far, &state.pset)?,
        best_so_far_size: best_so_far.valid_length(),
        best_so_far_adjusted: best_so_far.adjusted_fitness().unwrap_or(0.0),
        best_so_far_mae: report.mae,
        best_so_far_nmse: report.nmse,
        best_so_far_r: report.r,
    })
}

/// Creates, evaluates and records generation zero.
pub fn init_run<E: Evaluate>(
    params: &GpParams,
    dataset: &Dataset,
    pset: &PrimitiveSet,
    eval: &E,
) -> Result<RunState> {
    params.validate()?;
    check_columns(params, dataset, pset)?;
    let mut rng = GpRng::seed_from_u64(params.seed);
    let mut population = generate_population(
        params.initial_population,
        params.population_size,
        params,
        dataset,
        pset,
        &mut rng,
    )?;
    eval.evaluate(&mut population, dataset, pset)?;
    let mut archive = Archive::with_capacity(params.selection.archive_size);
    archive.update(population.iter())?;
    let mut state = RunState {
        params: params.clone(),
        pset: pset.clone(),
        dataset: dataset.clone(),
        population,
        archive,
        generation: 0,
        rng,
        records: Vec::new(),
    };
    let record = make_record(&state)?;
    state.records.push(record);
    Ok(state)
}

fn produce_child<R: Rng>(
    mut child: Genome,
    parent: &Genome,
    rng: &mut R,
    params: &GpParams,
    vparams: &VariationParams,
    input_box: Option<&[(f64, f64)]>,
    pset: &PrimitiveSet,
) -> Result<Genome> {
    if params.mutation_rate > 0.0 && rng.gen_bool(params.mutation_rate) {
        child = mutate(&child, rng, vparams, pset)?;
    }
    if let Some(bounds) = input_box {
        if !interval_feasible(&child, bounds, pset)? {
            child = parent.clone();
        }
    }
    child.clear_fitness();
    Ok(child)
}

/// Breeds, evaluates and records the next generation.
pub fn step_generation<E: Evaluate>(state: &mut RunState, eval: &E) -> Result<()> {
    let vparams = state.params.variation_params();
    let input_box =
        if state.params.interval_arithmetic { Some(state.dataset.input_box()) } else { None };
    let target = state.params.population_size;
    let mut next: Vec<Genome> = Vec::with_capacity(target);
    {
        let RunState {
            ref params,
            ref pset,
            ref dataset,
            ref population,
            ref archive,
            ref mut rng,
            ..
        } = *state;
        let cfg: &SelectionConfig = &params.selection;
        let bounds = input_box.as_deref();
        let pick_parent = |rng: &mut GpRng| -> Result<Genome> {
            let pool = choose_pool(population, archive, cfg, rng);
            let idx = select(pool, cfg, rng)?;
            Ok(pool[idx].clone())
        };
        while next.len() < target {
            if params.crossover_rate > 0.0 && rng.gen_bool(params.crossover_rate) {
                let p1 = pick_parent(rng)?;
                let p2 = pick_parent(rng)?;
                let (c1, c2) = crossover(&p1, &p2, dataset, rng, &vparams, pset)?;
                for (child, parent) in [(c1, &p1), (c2, &p2)] {
                    if next.len() == target {
                        break;
                    }
                    next.push(produce_child(child, parent, rng, params, &vparams, bounds, pset)?);
                }
            } else {
                let parent = pick_parent(rng)?;
                let child = parent.clone();
                next.push(produce_child(child, &parent, rng, params, &vparams, bounds, pset)?);
            }
        }
    }
    eval.evaluate(&mut next, &state.dataset, &state.pset)?;
    state.population = next;

    // The best individual also donates its long subtrees as archive
    // candidates.
    let best = state.population[best_index(&state.population)?].clone();
    let mut subtrees =
        extract_subtrees(&best, &state.pset, state.params.min_length, &mut state.rng)?;
    eval.evaluate(&mut subtrees, &state.dataset, &state.pset)?;
    state.archive.update(state.population.iter().chain(subtrees.iter()))?;

    state.generation += 1;
    let record = make_record(state)?;
    state.records.push(record);
    Ok(())
}

/// Fires a cascade when the generation counter sits on an interior
/// multiple of the cascade interval: the population is rebuilt from
/// scratch with the archive's genomes reinjected, the archive itself
/// untouched. Returns whether it fired.
pub fn cascade_boundary<E: Evaluate>(state: &mut RunState, eval: &E) -> Result<bool> {
    let interval = state.params.generations_per_cascade;
    let due = state.generation > 0
        && state.generation < state.params.generations
        && state.generation % interval == 0;
    if !due {
        return Ok(false);
    }
    let reinjected = state.archive.len().min(state.params.population_size);
    let mut population: Vec<Genome> = state.archive.entries()[..reinjected].to_vec();
    let fresh = generate_population(
        state.params.initial_population,
        state.params.population_size - reinjected,
        &state.params,
        &state.dataset,
        &state.pset,
        &mut state.rng,
    )?;
    population.extend(fresh);
    eval.evaluate(&mut population, &state.dataset, &state.pset)?;
    state.population = population;
    Ok(true)
}

/// Continues a run until the generation counter reaches `generations`,
/// invoking `observer` after every completed generation.
///
/// Cascade checks precede each step, so a state saved at generation g and
/// resumed later behaves exactly like an uninterrupted run.
pub fn resume_run<E: Evaluate, F: FnMut(&RunState)>(
    state: &mut RunState,
    eval: &E,
    mut observer: F,
) -> Result<()> {
    while state.generation < state.params.generations {
        cascade_boundary(state, eval)?;
        step_generation(state, eval)?;
        observer(state);
    }
    Ok(())
}

/// Runs the full loop from scratch. The observer sees every recorded
/// state, generation zero included.
pub fn run<E: Evaluate, F: FnMut(&RunState)>(
    params: &GpParams,
    dataset: &Dataset,
    pset: &PrimitiveSet,
    eval: &E,
    mut observer: F,
) -> Result<RunState> {
    let mut state = init_run(params, dataset, pset, eval)?;
    observer(&state);
    resume_run(&mut state, eval, |s| observer(s))?;
    Ok(state)
}

/// Evaluates the genome on each test row independently. Non-finite
/// predictions pass through for the caller's metrics to flag.
pub fn predict_one_step(
    genome: &Genome,
    rows: &[Vec<f64>],
    pset: &PrimitiveSet,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        out.push(crate::evaluator::eval_postfix(genome, row, pset)?);
    }
    Ok(out)
}

/// Result of an autoregressive rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiStepPrediction {
    pub values: Vec<f64>,
    /// True when a non-finite prediction stopped the rollout early.
    pub truncated: bool,
}

/// Rolls the model forward `horizon` steps from a seed window, feeding
/// each prediction back as the newest lag. Variable j holds lag j+1, so
/// the window shifts toward higher indices each step.
pub fn predict_multi_step(
    genome: &Genome,
    seed_window: &[f64],
    horizon: usize,
    pset: &PrimitiveSet,
) -> Result<MultiStepPrediction> {
    if horizon < 1 {
        return Err(GpError::InvalidParameter("horizon must be at least 1"));
    }
    if seed_window.len() != pset.variable_count() {
        return Err(GpError::DatasetMismatch("seed window width differs from variable count"));
    }
    let mut window = seed_window.to_vec();
    let mut values = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let predicted = crate::evaluator::eval_postfix(genome, &window, pset)?;
        if !predicted.is_finite() {
            return Ok(MultiStepPrediction { values, truncated: true });
        }
        values.push(predicted);
        for j in (1..window.len()).rev() {
            window[j] = window[j - 1];
        }
        window[0] = predicted;
    }
    Ok(MultiStepPrediction { values, truncated: false })
}
