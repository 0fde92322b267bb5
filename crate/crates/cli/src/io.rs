//! File formats: dataset/functions/constants ingestion, the parameter
//! file, statistics CSV, population logs, prediction output and plot data.
//!
//! Every writer goes through [`atomic_write`]: output files appear fully
//! written or not at all. Reals are rendered with 17 significant digits so
//! a write/read cycle reproduces each `f64` bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use postfix_gp_core::{
    render_log, BinaryOp, CrossoverKind, Dataset, GenerationRecord, GpParams, InitialPopulation,
    MutationKind, PrimitiveSet, RunState, SelectionConfig, SelectionScheme, UnaryOp,
};
use serde::Deserialize;

/// Renders an `f64` so that parsing the text recovers the exact bits.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{:.16e}", x)
    } else if x.is_nan() {
        "nan".to_string()
    } else if x > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

pub fn parse_f64(s: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| anyhow!("invalid number '{}'", s.trim()))
}

/// Writes `contents` to `path` via a temporary file in the same directory
/// followed by a rename, so readers never observe a partial file.
pub fn atomic_write(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("creating temporary file in {}", dir.display()))?;
    fs::write(tmp.path(), contents)
        .with_context(|| format!("writing {}", path.display()))?;
    tmp.persist(path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

/// Loads a training CSV: header row, input columns first, target last.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) =
        lines.next().ok_or_else(|| anyhow!("{}: empty file, expected a header row", path.display()))?;
    let mut names: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    if names.iter().any(|n| n.is_empty()) {
        bail!("{}: header has an empty column name", path.display());
    }
    if names.len() < 2 {
        bail!("{}: needs at least one input column and a target column", path.display());
    }
    names.pop();
    let width = names.len() + 1;
    let mut rows = Vec::new();
    for (line_ix, line) in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width {
            bail!(
                "{}: row {} has {} fields, expected {}",
                path.display(),
                line_ix + 1,
                fields.len(),
                width
            );
        }
        let mut values = Vec::with_capacity(width);
        for (col, field) in fields.iter().enumerate() {
            let v = parse_f64(field).with_context(|| {
                format!("{}: row {}, column {}", path.display(), line_ix + 1, col + 1)
            })?;
            values.push(v);
        }
        let target = values.pop().expect("width >= 2");
        rows.push((values, target));
    }
    if rows.len() < 2 {
        bail!("{}: needs at least 2 data rows, found {}", path.display(), rows.len());
    }
    Dataset::new(names, rows).map_err(|e| anyhow!("{}: {}", path.display(), e))
}

/// Loads a test CSV against a known primitive set. The header must carry
/// the snapshot's variables in order; a trailing extra column is read as
/// the target.
pub fn load_test_data(
    path: &Path,
    pset: &PrimitiveSet,
) -> Result<(Vec<Vec<f64>>, Option<Vec<f64>>)> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) =
        lines.next().ok_or_else(|| anyhow!("{}: empty file, expected a header row", path.display()))?;
    let names: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    let vars = pset.variables();
    let has_target = if names == vars {
        false
    } else if names.len() == vars.len() + 1 && names[..vars.len()] == *vars {
        true
    } else {
        bail!(
            "{}: header ({}) does not match the model variables ({})",
            path.display(),
            names.join(","),
            vars.join(",")
        );
    };
    let width = names.len();
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for (line_ix, line) in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width {
            bail!(
                "{}: row {} has {} fields, expected {}",
                path.display(),
                line_ix + 1,
                fields.len(),
                width
            );
        }
        let mut values = Vec::with_capacity(width);
        for (col, field) in fields.iter().enumerate() {
            let v = parse_f64(field).with_context(|| {
                format!("{}: row {}, column {}", path.display(), line_ix + 1, col + 1)
            })?;
            values.push(v);
        }
        if has_target {
            targets.push(values.pop().expect("width >= 1"));
        }
        inputs.push(values);
    }
    if inputs.is_empty() {
        bail!("{}: no data rows", path.display());
    }
    Ok((inputs, has_target.then_some(targets)))
}

/// Loads the function vocabulary: one `symbol,arity` line per operator,
/// arity 2 for binary and 1 for unary. Order of appearance fixes token ids.
pub fn load_functions(path: &Path) -> Result<(Vec<BinaryOp>, Vec<UnaryOp>)> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut binary = Vec::new();
    let mut unary = Vec::new();
    for (line_ix, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (symbol, arity) = line
            .split_once(',')
            .ok_or_else(|| {
                anyhow!("{}: line {}: expected 'symbol,arity'", path.display(), line_ix + 1)
            })?;
        let symbol = symbol.trim();
        match arity.trim() {
            "2" => binary.push(BinaryOp::parse_symbol(symbol).ok_or_else(|| {
                anyhow!("{}: line {}: unknown binary function '{}'", path.display(), line_ix + 1, symbol)
            })?),
            "1" => unary.push(UnaryOp::parse_symbol(symbol).ok_or_else(|| {
                anyhow!("{}: line {}: unknown unary function '{}'", path.display(), line_ix + 1, symbol)
            })?),
            other => bail!(
                "{}: line {}: arity must be 1 or 2, got '{}'",
                path.display(),
                line_ix + 1,
                other
            ),
        }
    }
    Ok((binary, unary))
}

/// Loads the constant pool: one comma-separated line of finite reals.
/// An empty file means no constants.
pub fn load_constants(path: &Path) -> Result<Vec<f64>> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let line = text.trim();
    if line.is_empty() {
        return Ok(Vec::new());
    }
    let mut constants = Vec::new();
    for (ix, entry) in line.split(',').enumerate() {
        let v = parse_f64(entry)
            .with_context(|| format!("{}: constants entry {}", path.display(), ix + 1))?;
        if !v.is_finite() {
            bail!("{}: constants entry {}: value must be finite", path.display(), ix + 1);
        }
        constants.push(v);
    }
    Ok(constants)
}

pub fn crossover_name(kind: CrossoverKind) -> &'static str {
    match kind {
        CrossoverKind::GaLike => "ga-like",
        CrossoverKind::Subtree => "subtree",
        CrossoverKind::SemanticSubtree => "semantic-subtree",
    }
}

pub fn parse_crossover(s: &str) -> Result<CrossoverKind> {
    match s {
        "ga-like" => Ok(CrossoverKind::GaLike),
        "subtree" => Ok(CrossoverKind::Subtree),
        "semantic-subtree" => Ok(CrossoverKind::SemanticSubtree),
        _ => Err(anyhow!("unknown crossover '{}' (ga-like, subtree, semantic-subtree)", s)),
    }
}

pub fn mutation_name(kind: MutationKind) -> &'static str {
    match kind {
        MutationKind::FullyProtected => "fully-protected",
        MutationKind::PartiallyProtected => "partially-protected",
    }
}

pub fn parse_mutation(s: &str) -> Result<MutationKind> {
    match s {
        "fully-protected" => Ok(MutationKind::FullyProtected),
        "partially-protected" => Ok(MutationKind::PartiallyProtected),
        _ => Err(anyhow!("unknown mutation '{}' (fully-protected, partially-protected)", s)),
    }
}

pub fn selection_name(scheme: SelectionScheme) -> &'static str {
    match scheme {
        SelectionScheme::Roulette => "roulette",
        SelectionScheme::Tournament => "tournament",
        SelectionScheme::Parsimony => "parsimony",
    }
}

pub fn parse_selection(s: &str) -> Result<SelectionScheme> {
    match s {
        "roulette" => Ok(SelectionScheme::Roulette),
        "tournament" => Ok(SelectionScheme::Tournament),
        "parsimony" => Ok(SelectionScheme::Parsimony),
        _ => Err(anyhow!("unknown selection '{}' (roulette, tournament, parsimony)", s)),
    }
}

pub fn initial_population_name(kind: InitialPopulation) -> &'static str {
    match kind {
        InitialPopulation::Random => "random",
        InitialPopulation::SemanticallyDiverse => "semantically-diverse",
    }
}

pub fn parse_initial_population(s: &str) -> Result<InitialPopulation> {
    match s {
        "random" => Ok(InitialPopulation::Random),
        "semantically-diverse" => Ok(InitialPopulation::SemanticallyDiverse),
        _ => Err(anyhow!("unknown initial population '{}' (random, semantically-diverse)", s)),
    }
}

/// The parameter file as written by users; see `data/params.toml` for a
/// worked example. Optional fields fall back to the documented defaults.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsFile {
    pub generations: usize,
    pub population_size: usize,
    pub min_length: usize,
    pub max_length: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub generations_per_cascade: Option<usize>,
    pub crossover: Option<String>,
    pub mutation: Option<String>,
    pub selection: Option<String>,
    pub tournament_size: Option<usize>,
    pub parsimony_epsilon: Option<f64>,
    pub archive_parent_rate: Option<f64>,
    pub archive_size: Option<usize>,
    pub interval_arithmetic: Option<bool>,
    pub semantic_sensitivity: Option<f64>,
    pub initial_population: Option<String>,
    pub seed: Option<u64>,
}

impl ParamsFile {
    pub fn into_params(self, seed_override: Option<u64>) -> Result<GpParams> {
        let mut selection = SelectionConfig::new(
            parse_selection(self.selection.as_deref().unwrap_or("tournament"))?,
            self.archive_size
                .unwrap_or_else(|| GpParams::default_archive_size(self.population_size)),
        );
        if let Some(k) = self.tournament_size {
            selection.tournament_size = k;
        }
        if let Some(eps) = self.parsimony_epsilon {
            selection.parsimony_epsilon = eps;
        }
        if let Some(rate) = self.archive_parent_rate {
            selection.archive_parent_rate = rate;
        }
        let params = GpParams {
            generations: self.generations,
            generations_per_cascade: self
                .generations_per_cascade
                .unwrap_or_else(|| self.generations.max(1)),
            population_size: self.population_size,
            min_length: self.min_length,
            max_length: self.max_length,
            crossover_rate: self.crossover_rate,
            mutation_rate: self.mutation_rate,
            crossover: parse_crossover(self.crossover.as_deref().unwrap_or("subtree"))?,
            mutation: parse_mutation(
                self.mutation.as_deref().unwrap_or("partially-protected"),
            )?,
            selection,
            interval_arithmetic: self.interval_arithmetic.unwrap_or(false),
            semantic_sensitivity: self.semantic_sensitivity.unwrap_or(1e-4),
            initial_population: parse_initial_population(
                self.initial_population.as_deref().unwrap_or("random"),
            )?,
            seed: seed_override.or(self.seed).unwrap_or(0),
        };
        params.validate().map_err(|e| anyhow!("parameter file: {}", e))?;
        Ok(params)
    }
}

pub fn load_params(path: &Path, seed_override: Option<u64>) -> Result<GpParams> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file: ParamsFile =
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    file.into_params(seed_override)
}

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn option_field(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_else(|| "NA".to_string())
}

pub const STATS_HEADER: &str = "generation,best_adj,best_size,archive_mean_adj,\
archive_mean_nodes,best_so_far_expr,best_so_far_size,mae,nmse,r";

/// Writes the per-generation statistics table.
pub fn write_stats_csv(records: &[GenerationRecord], path: &Path) -> Result<()> {
    if records.is_empty() {
        bail!("no records to write to {}", path.display());
    }
    let mut out = String::new();
    out.push_str(STATS_HEADER);
    out.push('\n');
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.generation,
            fmt_f64(r.best_adjusted),
            r.best_size,
            fmt_f64(r.archive_mean_adjusted),
            fmt_f64(r.archive_mean_nodes),
            csv_field(&r.best_so_far_expr),
            r.best_so_far_size,
            fmt_f64(r.best_so_far_mae),
            option_field(r.best_so_far_nmse),
            option_field(r.best_so_far_r),
        )
        .expect("write to String cannot fail");
    }
    atomic_write(path, &out)
}

/// Appends one generation section (Generation/Population/Archive) to a
/// population log under construction.
pub fn append_population_log(state: &RunState, out: &mut String) -> Result<()> {
    writeln!(out, "Generation {}", state.generation).expect("write to String cannot fail");
    out.push_str("Population\n");
    for g in &state.population {
        out.push_str(&render_log(g, &state.pset).map_err(|e| anyhow!("population log: {}", e))?);
        out.push('\n');
    }
    out.push_str("Archive\n");
    for g in state.archive.entries() {
        out.push_str(&render_log(g, &state.pset).map_err(|e| anyhow!("population log: {}", e))?);
        out.push('\n');
    }
    out.push('\n');
    Ok(())
}

/// Writes a single-state population log file.
pub fn write_population_log(state: &RunState, path: &Path) -> Result<()> {
    let mut out = String::new();
    append_population_log(state, &mut out)?;
    atomic_write(path, &out)
}

/// Writes one-step predictions: input columns, target when known, then the
/// prediction.
pub fn write_predictions_csv(
    variables: &[String],
    inputs: &[Vec<f64>],
    targets: Option<&[f64]>,
    predictions: &[f64],
    path: &Path,
) -> Result<()> {
    let mut out = String::new();
    out.push_str(&variables.join(","));
    if targets.is_some() {
        out.push_str(",target");
    }
    out.push_str(",prediction\n");
    for (i, row) in inputs.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
        out.push_str(&cells.join(","));
        if let Some(t) = targets {
            out.push(',');
            out.push_str(&fmt_f64(t[i]));
        }
        out.push(',');
        out.push_str(&fmt_f64(predictions[i]));
        out.push('\n');
    }
    atomic_write(path, &out)
}

/// Writes a multi-step rollout: step index and fed-back prediction.
pub fn write_multi_step_csv(values: &[f64], truncated: bool, path: &Path) -> Result<()> {
    let mut out = String::from("step,prediction\n");
    for (i, v) in values.iter().enumerate() {
        writeln!(out, "{},{}", i + 1, fmt_f64(*v)).expect("write to String cannot fail");
    }
    if truncated {
        out.push_str("# truncated: next prediction was non-finite\n");
    }
    atomic_write(path, &out)
}

/// The numeric columns of a stats CSV needed for plotting.
pub struct StatsRow {
    pub generation: usize,
    pub best_adjusted: f64,
    pub archive_mean_adjusted: f64,
    pub archive_mean_nodes: f64,
}

/// Reads back the plottable columns of a stats CSV.
pub fn read_stats_csv(path: &Path) -> Result<Vec<StatsRow>> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| anyhow!("{}: empty stats file", path.display()))?;
    if header != STATS_HEADER {
        bail!("{}: unexpected header '{}'", path.display(), header);
    }
    let mut rows = Vec::new();
    for (ix, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        // Columns 0-4 sit before the expression column and cannot contain
        // escaped commas.
        let fields: Vec<&str> = line.splitn(6, ',').collect();
        if fields.len() < 6 {
            bail!("{}: row {}: too few columns", path.display(), ix + 2);
        }
        rows.push(StatsRow {
            generation: fields[0]
                .parse()
                .map_err(|_| anyhow!("{}: row {}: bad generation '{}'", path.display(), ix + 2, fields[0]))?,
            best_adjusted: parse_f64(fields[1])
                .with_context(|| format!("{}: row {}", path.display(), ix + 2))?,
            archive_mean_adjusted: parse_f64(fields[3])
                .with_context(|| format!("{}: row {}", path.display(), ix + 2))?,
            archive_mean_nodes: parse_f64(fields[4])
                .with_context(|| format!("{}: row {}", path.display(), ix + 2))?,
        });
    }
    if rows.is_empty() {
        bail!("{}: no data rows", path.display());
    }
    Ok(rows)
}

/// Emits the four plot-data files: three two-column series plus the
/// combined four-column table, all over generation on the x axis.
pub fn write_plot_files(rows: &[StatsRow], out_dir: &Path) -> Result<()> {
    let series: [(&str, &str, fn(&StatsRow) -> f64); 3] = [
        ("plot_best_adjusted.dat", "best_adj", |r| r.best_adjusted),
        ("plot_archive_mean_adjusted.dat", "archive_mean_adj", |r| r.archive_mean_adjusted),
        ("plot_archive_mean_nodes.dat", "archive_mean_nodes", |r| r.archive_mean_nodes),
    ];
    for (file, label, pick) in series {
        let mut out = format!("# generation {}\n", label);
        for r in rows {
            writeln!(out, "{} {}", r.generation, fmt_f64(pick(r)))
                .expect("write to String cannot fail");
        }
        atomic_write(&out_dir.join(file), &out)?;
    }
    let mut out = String::from("# generation best_adj archive_mean_adj archive_mean_nodes\n");
    for r in rows {
        writeln!(
            out,
            "{} {} {} {}",
            r.generation,
            fmt_f64(r.best_adjusted),
            fmt_f64(r.archive_mean_adjusted),
            fmt_f64(r.archive_mean_nodes)
        )
        .expect("write to String cannot fail");
    }
    atomic_write(&out_dir.join("plot_combined.dat"), &out)
}
