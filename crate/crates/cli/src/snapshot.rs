//! Versioned canonical-text snapshots of a run.
//!
//! One fixed key order, 17-significant-digit reals, and a terminating
//! sentinel give byte-identical save → load → save cycles and a parser
//! that can name the exact field a corrupt file breaks on.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use postfix_gp_core::{
    adjusted_fitness, Archive, BinaryOp, Dataset, Genome, GpParams, PrimitiveSet, RngSnapshot,
    RunState, SelectionConfig, UnaryOp,
};

use crate::io::{
    atomic_write, crossover_name, fmt_f64, initial_population_name, mutation_name, parse_crossover,
    parse_f64, parse_initial_population, parse_mutation, parse_selection, selection_name,
};

const MAGIC: &str = "postfix-gp snapshot v1";

/// Everything a snapshot stores. The training dataset is deliberately not
/// part of it — data stays canonical in its CSV and is re-supplied on load.
#[derive(Debug, Clone)]
pub struct SnapshotParts {
    pub params: GpParams,
    pub pset: PrimitiveSet,
    pub population: Vec<Genome>,
    pub archive: Archive,
    pub generation: usize,
    pub rng: RngSnapshot,
}

fn push_kv(out: &mut String, key: &str, value: &str) {
    out.push_str(key);
    if value.is_empty() {
        out.push_str(" =\n");
    } else {
        out.push_str(" = ");
        out.push_str(value);
        out.push('\n');
    }
}

fn genome_line(g: &Genome) -> String {
    let tokens: Vec<String> = g.tokens().iter().map(|t| t.to_string()).collect();
    format!(
        "{} {} {} {}",
        g.valid_length(),
        fmt_f64(g.raw_fitness().expect("snapshot genomes carry fitness")),
        fmt_f64(g.adjusted_fitness().expect("snapshot genomes carry fitness")),
        tokens.join(",")
    )
}

fn render(state: &RunState) -> String {
    let p = &state.params;
    let s = &p.selection;
    let pset = &state.pset;
    let rng = state.rng_snapshot();
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    push_kv(&mut out, "generations", &p.generations.to_string());
    push_kv(&mut out, "generations_per_cascade", &p.generations_per_cascade.to_string());
    push_kv(&mut out, "population_size", &p.population_size.to_string());
    push_kv(&mut out, "min_length", &p.min_length.to_string());
    push_kv(&mut out, "max_length", &p.max_length.to_string());
    push_kv(&mut out, "crossover_rate", &fmt_f64(p.crossover_rate));
    push_kv(&mut out, "mutation_rate", &fmt_f64(p.mutation_rate));
    push_kv(&mut out, "crossover", crossover_name(p.crossover));
    push_kv(&mut out, "mutation", mutation_name(p.mutation));
    push_kv(&mut out, "selection", selection_name(s.scheme));
    push_kv(&mut out, "tournament_size", &s.tournament_size.to_string());
    push_kv(&mut out, "parsimony_epsilon", &fmt_f64(s.parsimony_epsilon));
    push_kv(&mut out, "archive_parent_rate", &fmt_f64(s.archive_parent_rate));
    push_kv(&mut out, "archive_size", &s.archive_size.to_string());
    push_kv(&mut out, "interval_arithmetic", if p.interval_arithmetic { "true" } else { "false" });
    push_kv(&mut out, "semantic_sensitivity", &fmt_f64(p.semantic_sensitivity));
    push_kv(&mut out, "initial_population", initial_population_name(p.initial_population));
    push_kv(&mut out, "seed", &p.seed.to_string());
    push_kv(&mut out, "variables", &pset.variables().join(","));
    let constants: Vec<String> = pset.constants().iter().map(|c| fmt_f64(*c)).collect();
    push_kv(&mut out, "constants", &constants.join(","));
    let binary: Vec<&str> = pset.binary_ops().iter().map(|op| op.symbol()).collect();
    push_kv(&mut out, "binary_ops", &binary.join(","));
    let unary: Vec<&str> = pset.unary_ops().iter().map(|op| op.symbol()).collect();
    push_kv(&mut out, "unary_ops", &unary.join(","));
    push_kv(&mut out, "generation", &state.generation.to_string());
    let seed_hex: String = rng.seed.iter().map(|b| format!("{:02x}", b)).collect();
    push_kv(&mut out, "rng_seed", &seed_hex);
    push_kv(&mut out, "rng_stream", &rng.stream.to_string());
    push_kv(&mut out, "rng_word_pos", &rng.word_pos.to_string());
    push_kv(&mut out, "population_len", &state.population.len().to_string());
    for g in &state.population {
        push_kv(&mut out, "genome", &genome_line(g));
    }
    push_kv(&mut out, "archive_len", &state.archive.len().to_string());
    for g in state.archive.entries() {
        push_kv(&mut out, "genome", &genome_line(g));
    }
    out.push_str("end\n");
    out
}

/// Saves the run state as canonical text; see the module docs.
pub fn save_state(state: &RunState, path: &Path) -> Result<()> {
    atomic_write(path, &render(state))
}

struct Parser<'a> {
    lines: std::vec::IntoIter<(usize, &'a str)>,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        let lines: Vec<(usize, &str)> = text.lines().enumerate().collect();
        Parser { lines: lines.into_iter() }
    }

    fn next_line(&mut self, looking_for: &str) -> Result<(usize, &'a str)> {
        self.lines
            .next()
            .ok_or_else(|| anyhow!("truncated file while looking for '{}'", looking_for))
    }

    fn expect(&mut self, key: &str) -> Result<&'a str> {
        let (ix, line) = self.next_line(key)?;
        if line == format!("{} =", key) {
            return Ok("");
        }
        line.strip_prefix(key)
            .and_then(|rest| rest.strip_prefix(" = "))
            .ok_or_else(|| anyhow!("line {}: expected '{} = …', found '{}'", ix + 1, key, line))
    }

    fn expect_usize(&mut self, key: &str) -> Result<usize> {
        let v = self.expect(key)?;
        v.parse().map_err(|_| anyhow!("field '{}': invalid integer '{}'", key, v))
    }

    fn expect_f64(&mut self, key: &str) -> Result<f64> {
        let v = self.expect(key)?;
        parse_f64(v).map_err(|_| anyhow!("field '{}': invalid real '{}'", key, v))
    }
}

fn parse_genome(
    line: &str,
    pset: &PrimitiveSet,
    min_length: usize,
    max_length: usize,
) -> Result<Genome> {
    let mut parts = line.splitn(4, ' ');
    let mut field = |name: &str| {
        parts.next().ok_or_else(|| anyhow!("genome line missing {}: '{}'", name, line))
    };
    let vl: usize = {
        let v = field("valid length")?;
        v.parse().map_err(|_| anyhow!("genome line: invalid valid length '{}'", v))?
    };
    let raw = parse_f64(field("raw fitness")?).context("genome line: raw fitness")?;
    let adjusted =
        parse_f64(field("adjusted fitness")?).context("genome line: adjusted fitness")?;
    let tokens: Vec<u16> = field("tokens")?
        .split(',')
        .map(|t| t.parse::<u16>().map_err(|_| anyhow!("genome line: invalid token '{}'", t)))
        .collect::<Result<_>>()?;
    if tokens.len() != max_length {
        bail!("genome line: {} tokens, expected capacity {}", tokens.len(), max_length);
    }
    let mut genome = Genome::from_tokens(tokens, pset, min_length)
        .map_err(|e| anyhow!("genome line: {}", e))?;
    if genome.valid_length() != vl {
        bail!(
            "genome line: stored valid length {} disagrees with decoded {}",
            vl,
            genome.valid_length()
        );
    }
    let expected = adjusted_fitness(raw).map_err(|e| anyhow!("genome line: {}", e))?;
    if expected.to_bits() != adjusted.to_bits() {
        bail!("genome line: adjusted fitness {} does not match raw {}", adjusted, raw);
    }
    genome.set_fitness(raw, adjusted);
    Ok(genome)
}

fn parse_snapshot(text: &str) -> Result<SnapshotParts> {
    let mut p = Parser::new(text);
    let (_, magic) = p.next_line("format header")?;
    if magic != MAGIC {
        bail!("unsupported format header '{}', expected '{}'", magic, MAGIC);
    }
    let generations = p.expect_usize("generations")?;
    let generations_per_cascade = p.expect_usize("generations_per_cascade")?;
    let population_size = p.expect_usize("population_size")?;
    let min_length = p.expect_usize("min_length")?;
    let max_length = p.expect_usize("max_length")?;
    let crossover_rate = p.expect_f64("crossover_rate")?;
    let mutation_rate = p.expect_f64("mutation_rate")?;
    let crossover = parse_crossover(p.expect("crossover")?).context("field 'crossover'")?;
    let mutation = parse_mutation(p.expect("mutation")?).context("field 'mutation'")?;
    let scheme = parse_selection(p.expect("selection")?).context("field 'selection'")?;
    let tournament_size = p.expect_usize("tournament_size")?;
    let parsimony_epsilon = p.expect_f64("parsimony_epsilon")?;
    let archive_parent_rate = p.expect_f64("archive_parent_rate")?;
    let archive_size = p.expect_usize("archive_size")?;
    let interval_arithmetic = match p.expect("interval_arithmetic")? {
        "true" => true,
        "false" => false,
        other => bail!("field 'interval_arithmetic': expected true/false, got '{}'", other),
    };
    let semantic_sensitivity = p.expect_f64("semantic_sensitivity")?;
    let initial_population = parse_initial_population(p.expect("initial_population")?)
        .context("field 'initial_population'")?;
    let seed: u64 = {
        let v = p.expect("seed")?;
        v.parse().map_err(|_| anyhow!("field 'seed': invalid integer '{}'", v))?
    };

    let variables: Vec<String> = {
        let v = p.expect("variables")?;
        if v.is_empty() { Vec::new() } else { v.split(',').map(str::to_string).collect() }
    };
    let constants: Vec<f64> = {
        let v = p.expect("constants")?;
        if v.is_empty() {
            Vec::new()
        } else {
            v.split(',')
                .map(|c| parse_f64(c).map_err(|_| anyhow!("field 'constants': invalid real '{}'", c)))
                .collect::<Result<_>>()?
        }
    };
    let binary_ops: Vec<BinaryOp> = {
        let v = p.expect("binary_ops")?;
        if v.is_empty() {
            Vec::new()
        } else {
            v.split(',')
                .map(|s| {
                    BinaryOp::parse_symbol(s)
                        .ok_or_else(|| anyhow!("field 'binary_ops': unknown symbol '{}'", s))
                })
                .collect::<Result<_>>()?
        }
    };
    let unary_ops: Vec<UnaryOp> = {
        let v = p.expect("unary_ops")?;
        if v.is_empty() {
            Vec::new()
        } else {
            v.split(',')
                .map(|s| {
                    UnaryOp::parse_symbol(s)
                        .ok_or_else(|| anyhow!("field 'unary_ops': unknown symbol '{}'", s))
                })
                .collect::<Result<_>>()?
        }
    };
    let pset = PrimitiveSet::new(variables, constants, binary_ops, unary_ops)
        .map_err(|e| anyhow!("primitive set: {}", e))?;

    let mut selection = SelectionConfig::new(scheme, archive_size);
    selection.tournament_size = tournament_size;
    selection.parsimony_epsilon = parsimony_epsilon;
    selection.archive_parent_rate = archive_parent_rate;
    let params = GpParams {
        generations,
        generations_per_cascade,
        population_size,
        min_length,
        max_length,
        crossover_rate,
        mutation_rate,
        crossover,
        mutation,
        selection,
        interval_arithmetic,
        semantic_sensitivity,
        initial_population,
        seed,
    };
    params.validate().map_err(|e| anyhow!("parameters: {}", e))?;

    let generation = p.expect_usize("generation")?;
    if generation > generations {
        bail!("field 'generation': {} exceeds generations {}", generation, generations);
    }
    let seed_hex = p.expect("rng_seed")?;
    if seed_hex.len() != 64 || !seed_hex.bytes().all(|b| b.is_ascii_hexdigit()) {
        bail!("field 'rng_seed': expected 64 hex digits");
    }
    let mut rng_seed = [0u8; 32];
    for (i, chunk) in seed_hex.as_bytes().chunks(2).enumerate() {
        let s = std::str::from_utf8(chunk).expect("hex digits are ASCII");
        rng_seed[i] = u8::from_str_radix(s, 16).expect("checked hex digits");
    }
    let rng_stream: u64 = {
        let v = p.expect("rng_stream")?;
        v.parse().map_err(|_| anyhow!("field 'rng_stream': invalid integer '{}'", v))?
    };
    let rng_word_pos: u128 = {
        let v = p.expect("rng_word_pos")?;
        v.parse().map_err(|_| anyhow!("field 'rng_word_pos': invalid integer '{}'", v))?
    };

    let population_len = p.expect_usize("population_len")?;
    if population_len != population_size {
        bail!("field 'population_len': {} differs from population_size {}", population_len, population_size);
    }
    let mut population = Vec::with_capacity(population_len);
    for _ in 0..population_len {
        population.push(parse_genome(p.expect("genome")?, &pset, min_length, max_length)?);
    }
    let archive_len = p.expect_usize("archive_len")?;
    if archive_len > archive_size {
        bail!("field 'archive_len': {} exceeds archive_size {}", archive_len, archive_size);
    }
    let mut entries = Vec::with_capacity(archive_len);
    for _ in 0..archive_len {
        entries.push(parse_genome(p.expect("genome")?, &pset, min_length, max_length)?);
    }
    let archive =
        Archive::from_entries(archive_size, entries).map_err(|e| anyhow!("archive: {}", e))?;

    let (ix, sentinel) = p.next_line("end")?;
    if sentinel != "end" {
        bail!("line {}: expected 'end', found '{}'", ix + 1, sentinel);
    }
    if let Some((ix, extra)) = p.lines.find(|(_, l)| !l.trim().is_empty()) {
        bail!("line {}: unexpected content after 'end': '{}'", ix + 1, extra);
    }

    Ok(SnapshotParts {
        params,
        pset,
        population,
        archive,
        generation,
        rng: RngSnapshot { seed: rng_seed, stream: rng_stream, word_pos: rng_word_pos },
    })
}

/// Loads and fully validates a snapshot, without needing the dataset.
pub fn load_snapshot(path: &Path) -> Result<SnapshotParts> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    parse_snapshot(&text).map_err(|e| anyhow!("{}: corrupt snapshot: {}", path.display(), e))
}

/// Loads a snapshot and reassembles a resumable run state on `dataset`.
pub fn load_state(path: &Path, dataset: Dataset) -> Result<RunState> {
    let parts = load_snapshot(path)?;
    RunState::from_parts(
        parts.params,
        parts.pset,
        dataset,
        parts.population,
        parts.archive,
        parts.generation,
        parts.rng,
    )
    .map_err(|e| anyhow!("{}: snapshot does not fit the dataset: {}", path.display(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use postfix_gp_core::{
        init_run, resume_run, run, step_generation, CrossoverKind, InitialPopulation,
        MutationKind, SelectionScheme, SequentialEvaluator,
    };

    fn demo_dataset() -> Dataset {
        let rows = (-5..=5)
            .map(|i| {
                let x = i as f64;
                (vec![x], x * x * 3.0 + x + 1.0)
            })
            .collect();
        Dataset::new(vec!["x".to_string()], rows).unwrap()
    }

    fn demo_pset() -> PrimitiveSet {
        PrimitiveSet::new(
            vec!["x".to_string()],
            vec![1.0, 2.0, 3.0],
            vec![BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul, BinaryOp::Div],
            vec![],
        )
        .unwrap()
    }

    fn demo_params(generations: usize, seed: u64) -> GpParams {
        GpParams {
            generations,
            generations_per_cascade: generations.max(1),
            population_size: 16,
            min_length: 3,
            max_length: 15,
            crossover_rate: 0.9,
            mutation_rate: 0.1,
            crossover: CrossoverKind::Subtree,
            mutation: MutationKind::PartiallyProtected,
            selection: SelectionConfig::new(SelectionScheme::Tournament, 2),
            interval_arithmetic: false,
            semantic_sensitivity: 1e-4,
            initial_population: InitialPopulation::Random,
            seed,
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let data = demo_dataset();
        let mut state =
            init_run(&demo_params(6, 5), &data, &demo_pset(), &SequentialEvaluator).unwrap();
        for _ in 0..2 {
            step_generation(&mut state, &SequentialEvaluator).unwrap();
        }
        let a = dir.path().join("a.snapshot");
        let b = dir.path().join("b.snapshot");
        save_state(&state, &a).unwrap();
        let loaded = load_state(&a, data).unwrap();
        save_state(&loaded, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert_eq!(loaded.rng_snapshot(), state.rng_snapshot());
        assert_eq!(loaded.population, state.population);
        assert_eq!(loaded.archive, state.archive);
    }

    #[test]
    fn interrupted_run_equals_uninterrupted_run() {
        let dir = tempfile::tempdir().unwrap();
        let data = demo_dataset();
        let pset = demo_pset();
        // Cascade at 4 sits inside the second leg, crossing the resume.
        let mut params = demo_params(8, 11);
        params.generations_per_cascade = 4;

        let straight = run(&params, &data, &pset, &SequentialEvaluator, |_| {}).unwrap();

        let mut leg1 = init_run(&params, &data, &pset, &SequentialEvaluator).unwrap();
        for _ in 0..3 {
            step_generation(&mut leg1, &SequentialEvaluator).unwrap();
        }
        let path = dir.path().join("mid.snapshot");
        save_state(&leg1, &path).unwrap();
        let mut leg2 = load_state(&path, data).unwrap();
        resume_run(&mut leg2, &SequentialEvaluator, |_| {}).unwrap();

        assert_eq!(leg2.generation, 8);
        let replayed: Vec<_> =
            leg1.records.iter().chain(leg2.records.iter()).cloned().collect();
        assert_eq!(replayed, straight.records);
        assert_eq!(leg2.population, straight.population);
        assert_eq!(leg2.archive, straight.archive);
        assert_eq!(leg2.rng_snapshot(), straight.rng_snapshot());
    }

    #[test]
    fn truncated_and_tampered_files_are_rejected_by_field() {
        let dir = tempfile::tempdir().unwrap();
        let data = demo_dataset();
        let state =
            init_run(&demo_params(4, 3), &data, &demo_pset(), &SequentialEvaluator).unwrap();
        let path = dir.path().join("s.snapshot");
        save_state(&state, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();

        // Cut the file mid-population.
        let cut: Vec<&str> = text.lines().take(30).collect();
        let t = dir.path().join("t.snapshot");
        std::fs::write(&t, cut.join("\n")).unwrap();
        let err = format!("{:#}", load_snapshot(&t).unwrap_err());
        assert!(err.contains("truncated"), "{err}");

        // Wrong version header.
        std::fs::write(&t, text.replace("snapshot v1", "snapshot v2")).unwrap();
        let err = format!("{:#}", load_snapshot(&t).unwrap_err());
        assert!(err.contains("format header"), "{err}");

        // Break a stored valid length.
        let broken = text.lines().map(|l| {
            if let Some(rest) = l.strip_prefix("genome = ") {
                let mut parts = rest.splitn(2, ' ');
                let vl: usize = parts.next().unwrap().parse().unwrap();
                format!("genome = {} {}", vl + 2, parts.next().unwrap())
            } else {
                l.to_string()
            }
        });
        let broken: Vec<String> = broken.collect();
        std::fs::write(&t, broken.join("\n") + "\n").unwrap();
        let err = format!("{:#}", load_snapshot(&t).unwrap_err());
        assert!(err.contains("valid length"), "{err}");

        // Swap two top-level lines.
        let mut lines: Vec<&str> = text.lines().collect();
        lines.swap(1, 2);
        std::fs::write(&t, lines.join("\n") + "\n").unwrap();
        let err = format!("{:#}", load_snapshot(&t).unwrap_err());
        assert!(err.contains("expected 'generations"), "{err}");

        // Tamper with an adjusted fitness so it no longer matches raw.
        let tampered: Vec<String> = text
            .lines()
            .map(|l| {
                if l.starts_with("genome = ") {
                    l.replacen("e-", "e+", 1)
                } else {
                    l.to_string()
                }
            })
            .collect();
        let tampered = tampered.join("\n") + "\n";
        if tampered != text {
            std::fs::write(&t, tampered).unwrap();
            let err = format!("{:#}", load_snapshot(&t).unwrap_err());
            assert!(err.contains("genome line"), "{err}");
        }
    }

    #[test]
    fn snapshot_rejects_mismatched_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let data = demo_dataset();
        let state =
            init_run(&demo_params(4, 3), &data, &demo_pset(), &SequentialEvaluator).unwrap();
        let path = dir.path().join("s.snapshot");
        save_state(&state, &path).unwrap();
        let other = Dataset::new(
            vec!["t".to_string()],
            vec![(vec![0.0], 0.0), (vec![1.0], 1.0)],
        )
        .unwrap();
        let err = format!("{:#}", load_state(&path, other).unwrap_err());
        assert!(err.contains("does not fit the dataset"), "{err}");
    }
}
