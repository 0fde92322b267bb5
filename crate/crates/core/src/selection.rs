//! Parent selection and the elite archive.
//!
//! Parents come from the current population or, with a configured
//! probability, from the archive of best-so-far solutions. The archive
//! orders genomes by a total order (adjusted fitness descending, then
//! shorter valid prefix, then token ids) so its contents are reproducible
//! across platforms.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::Rng;

use crate::error::GpError;
use crate::genome::Genome;
use crate::Result;

/// Parent selection schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionScheme {
    /// Fitness-proportional (roulette wheel) selection.
    Roulette,
    /// Best of `tournament_size` uniform draws with replacement.
    Tournament,
    /// Tournament with parsimony pressure: near-ties in fitness go to the
    /// shorter genome.
    Parsimony,
}

/// Selection and archive knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionConfig {
    pub scheme: SelectionScheme,
    pub tournament_size: usize,
    /// Adjusted-fitness slack inside which parsimony prefers shorter
    /// genomes.
    pub parsimony_epsilon: f64,
    /// Probability that a parent draw uses the archive pool.
    pub archive_parent_rate: f64,
    pub archive_size: usize,
}

impl SelectionConfig {
    pub fn new(scheme: SelectionScheme, archive_size: usize) -> Self {
        SelectionConfig {
            scheme,
            tournament_size: 4,
            parsimony_epsilon: 1e-6,
            archive_parent_rate: 0.2,
            archive_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tournament_size < 1 {
            return Err(GpError::InvalidParameter("tournament size must be at least 1"));
        }
        if self.archive_size < 1 {
            return Err(GpError::InvalidParameter("archive size must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.archive_parent_rate) {
            return Err(GpError::InvalidParameter("archive parent rate outside [0, 1]"));
        }
        if self.parsimony_epsilon.is_nan() || self.parsimony_epsilon < 0.0 {
            return Err(GpError::InvalidParameter("parsimony epsilon must be non-negative"));
        }
        Ok(())
    }
}

fn adjusted(genome: &Genome) -> Result<f64> {
    genome.adjusted_fitness().ok_or(GpError::FitnessUnset)
}

/// Draws one parent index from `pool` under the configured scheme.
pub fn select<R: Rng>(pool: &[Genome], cfg: &SelectionConfig, rng: &mut R) -> Result<usize> {
    if pool.is_empty() {
        return Err(GpError::EmptyPool);
    }
    match cfg.scheme {
        SelectionScheme::Roulette => {
            let mut total = 0.0;
            for g in pool {
                total += adjusted(g)?;
            }
            if total <= 0.0 {
                return Ok(rng.gen_range(0..pool.len()));
            }
            let mark = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            for (i, g) in pool.iter().enumerate() {
                acc += adjusted(g)?;
                if mark < acc {
                    return Ok(i);
                }
            }
            // Rounding can leave the mark a hair past the last slot.
            Ok(pool.len() - 1)
        }
        SelectionScheme::Tournament => {
            let mut best = rng.gen_range(0..pool.len());
            let mut best_fit = adjusted(&pool[best])?;
            for _ in 1..cfg.tournament_size {
                let challenger = rng.gen_range(0..pool.len());
                let fit = adjusted(&pool[challenger])?;
                if fit > best_fit {
                    best = challenger;
                    best_fit = fit;
                }
            }
            Ok(best)
        }
        SelectionScheme::Parsimony => {
            let mut drawn: Vec<usize> = Vec::with_capacity(cfg.tournament_size);
            for _ in 0..cfg.tournament_size {
                drawn.push(rng.gen_range(0..pool.len()));
            }
            let mut best_fit = f64::NEG_INFINITY;
            for &i in &drawn {
                best_fit = best_fit.max(adjusted(&pool[i])?);
            }
            let threshold = best_fit - cfg.parsimony_epsilon;
            let mut winner: Option<usize> = None;
            for &i in &drawn {
                if adjusted(&pool[i])? < threshold {
                    continue;
                }
                winner = Some(match winner {
                    None => i,
                    Some(w) => {
                        let (wl, il) = (pool[w].valid_length(), pool[i].valid_length());
                        if il < wl || (il == wl && i < w) {
                            i
                        } else {
                            w
                        }
                    }
                });
            }
            Ok(winner.expect("tournament draws at least one candidate"))
        }
    }
}

/// Picks the pool a single parent draw selects from: the archive with
/// probability `archive_parent_rate` when it has entries, otherwise the
/// population. Each call decides independently.
pub fn choose_pool<'a, R: Rng>(
    population: &'a [Genome],
    archive: &'a Archive,
    cfg: &SelectionConfig,
    rng: &mut R,
) -> &'a [Genome] {
    if archive.is_empty() {
        return population;
    }
    if rng.gen_bool(cfg.archive_parent_rate) {
        archive.entries()
    } else {
        population
    }
}

/// Fixed-capacity elite store, deduplicated by valid-prefix genotype and
/// kept in the archive total order.
///
/// The archive also counts every distinct genotype it has ever been
/// offered; the count backs the size floor `min(capacity, distinct seen)`.
#[derive(Debug, Clone)]
pub struct Archive {
    entries: Vec<Genome>,
    capacity: usize,
    seen: BTreeSet<Vec<u16>>,
}

/// Equality covers the behavioral state (entries and capacity) only. The
/// seen-genotype counter is run-local instrumentation: it is not part of a
/// snapshot and restarts from the entries on load.
impl PartialEq for Archive {
    fn eq(&self, other: &Self) -> bool {
        self.capacity == other.capacity && self.entries == other.entries
    }
}

/// The total order entries are kept in: adjusted fitness descending, then
/// valid length ascending, then token-id lexicographic.
fn archive_order(a: &Genome, b: &Genome) -> Ordering {
    let fa = a.adjusted_fitness().unwrap_or(0.0);
    let fb = b.adjusted_fitness().unwrap_or(0.0);
    fb.total_cmp(&fa)
        .then_with(|| a.valid_length().cmp(&b.valid_length()))
        .then_with(|| a.valid_prefix().cmp(b.valid_prefix()))
}

impl Archive {
    pub fn with_capacity(capacity: usize) -> Self {
        Archive { entries: Vec::new(), capacity, seen: BTreeSet::new() }
    }

    /// Rebuilds an archive from stored entries, revalidating order and
    /// distinctness. The seen-genotype count restarts from the entries.
    pub fn from_entries(capacity: usize, entries: Vec<Genome>) -> Result<Self> {
        if entries.len() > capacity {
            return Err(GpError::InvalidParameter("archive entries exceed capacity"));
        }
        let mut seen = BTreeSet::new();
        for g in &entries {
            if !g.has_fitness() {
                return Err(GpError::FitnessUnset);
            }
            if !seen.insert(g.valid_prefix().to_vec()) {
                return Err(GpError::InvalidParameter("duplicate genotype in archive"));
            }
        }
        for pair in entries.windows(2) {
            if archive_order(&pair[0], &pair[1]) == Ordering::Greater {
                return Err(GpError::InvalidParameter("archive entries out of order"));
            }
        }
        Ok(Archive { entries, capacity, seen })
    }

    pub fn entries(&self) -> &[Genome] {
        &self.entries
    }

    /// Highest-ranked entry, if any.
    pub fn best(&self) -> Option<&Genome> {
        self.entries.first()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Distinct genotypes offered to this archive so far.
    pub fn distinct_seen(&self) -> usize {
        self.seen.len()
    }

    /// Merges candidates into the archive: deduplicate by genotype, sort
    /// by the total order, keep the top `capacity`.
    pub fn update<'a, I>(&mut self, candidates: I) -> Result<()>
    where
        I: IntoIterator<Item = &'a Genome>,
    {
        let fresh: Vec<&Genome> = candidates.into_iter().collect();
        for g in &fresh {
            if !g.has_fitness() {
                return Err(GpError::FitnessUnset);
            }
        }
        let mut merged: Vec<Genome> = Vec::with_capacity(self.entries.len() + fresh.len());
        merged.append(&mut self.entries);
        for g in fresh {
            self.seen.insert(g.valid_prefix().to_vec());
            merged.push(g.clone());
        }
        merged.sort_by(archive_order);
        let mut kept_genotypes: BTreeSet<&[u16]> = BTreeSet::new();
        let mut kept = Vec::with_capacity(self.capacity);
        for g in &merged {
            if kept.len() == self.capacity {
                break;
            }
            if kept_genotypes.insert(g.valid_prefix()) {
                kept.push(g.clone());
            }
        }
        self.entries = kept;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genome::tests::arithmetic_pset;
    use crate::genome::{random_genome, Genome, PrimitiveSet};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(scheme: SelectionScheme) -> SelectionConfig {
        SelectionConfig::new(scheme, 5)
    }

    /// A pool of single-terminal genomes wearing the given fitness values.
    fn pool_with(adjusted: &[f64]) -> Vec<Genome> {
        let pset = arithmetic_pset();
        adjusted
            .iter()
            .map(|&a| {
                let mut g = Genome::from_tokens(vec![0], &pset, 1).unwrap();
                g.set_fitness(if a > 0.0 { 1.0 / a - 1.0 } else { f64::INFINITY }, a);
                g
            })
            .collect()
    }

    fn sized(pset: &PrimitiveSet, len: usize, adjusted: f64) -> Genome {
        // x followed by (len-1)/2 "x +" pairs decodes to exactly len.
        let add = pset.binary_token(0);
        let mut tokens = vec![0u16];
        while tokens.len() < len {
            tokens.push(0);
            tokens.push(add);
        }
        let mut g = Genome::from_tokens(tokens, pset, 1).unwrap();
        assert_eq!(g.valid_length(), len);
        g.set_fitness(0.0, adjusted);
        g
    }

    #[test]
    fn empty_pool_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            select(&[], &cfg(SelectionScheme::Roulette), &mut rng),
            Err(GpError::EmptyPool)
        );
    }

    #[test]
    fn roulette_with_single_winner_always_picks_it() {
        let pool = pool_with(&[1.0, 0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            assert_eq!(select(&pool, &cfg(SelectionScheme::Roulette), &mut rng).unwrap(), 0);
        }
    }

    #[test]
    fn roulette_with_zero_total_is_uniform() {
        let pool = pool_with(&[0.0, 0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut counts = [0usize; 3];
        for _ in 0..3000 {
            counts[select(&pool, &cfg(SelectionScheme::Roulette), &mut rng).unwrap()] += 1;
        }
        for c in counts {
            assert!((800..1200).contains(&c), "uniform fallback skewed: {counts:?}");
        }
    }

    #[test]
    fn roulette_matches_weights_within_three_sigma_chi_square() {
        // Five distinct weights; chi-square with 4 degrees of freedom has
        // mean 4 and variance 8, so 3 sigma above the mean is ~12.5.
        let weights = [0.35, 0.25, 0.2, 0.15, 0.05];
        let pool = pool_with(&weights);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws = 10_000usize;
        let mut counts = [0usize; 5];
        for _ in 0..draws {
            counts[select(&pool, &cfg(SelectionScheme::Roulette), &mut rng).unwrap()] += 1;
        }
        let total: f64 = weights.iter().sum();
        let chi2: f64 = counts
            .iter()
            .zip(&weights)
            .map(|(&c, &w)| {
                let expected = draws as f64 * w / total;
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        assert!(chi2 <= 12.5, "chi-square {chi2} exceeds the 3-sigma bound, counts {counts:?}");
    }

    #[test]
    fn tournament_prefers_the_fitter_by_inclusion_probability() {
        // P(index 0 wins) = P(it is drawn at all) = 1 - (1/2)^4 = 0.9375.
        let pool = pool_with(&[0.9, 0.1]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let draws = 10_000usize;
        let mut zero = 0usize;
        for _ in 0..draws {
            if select(&pool, &cfg(SelectionScheme::Tournament), &mut rng).unwrap() == 0 {
                zero += 1;
            }
        }
        let freq = zero as f64 / draws as f64;
        assert!(
            (freq - 0.9375).abs() < 0.01,
            "tournament win frequency {freq} far from analytic 0.9375"
        );
    }

    #[test]
    fn tournament_of_size_one_is_uniform() {
        let pool = pool_with(&[0.9, 0.1]);
        let mut c = cfg(SelectionScheme::Tournament);
        c.tournament_size = 1;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut one = 0usize;
        for _ in 0..4000 {
            if select(&pool, &c, &mut rng).unwrap() == 1 {
                one += 1;
            }
        }
        assert!((1600..2400).contains(&one));
    }

    #[test]
    fn parsimony_breaks_near_ties_toward_shorter_genomes() {
        let pset = arithmetic_pset();
        let c = cfg(SelectionScheme::Parsimony);
        // Equal fitness, lengths 31 vs 11: the shorter must always win a
        // tournament that saw both.
        let pool = vec![sized(&pset, 31, 0.5), sized(&pset, 11, 0.5)];
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut seen_both = 0;
        for _ in 0..2000 {
            let idx = select(&pool, &c, &mut rng).unwrap();
            if idx == 1 {
                seen_both += 1;
            } else {
                // Index 0 can only win when index 1 was never drawn; with
                // two members that has probability (1/2)^4.
            }
        }
        assert!(seen_both > 1700, "shorter genome won only {seen_both} of 2000");

        // A fitness gap wider than epsilon overrides the size preference.
        let pool = vec![sized(&pset, 31, 0.5), sized(&pset, 11, 0.4)];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let idx = select(&pool, &c, &mut rng).unwrap();
            let drew_zero = idx == 0;
            // Index 1 may still win when 0 was never drawn; but whenever 0
            // wins it must be by fitness, never by size.
            if drew_zero {
                assert_eq!(pool[0].adjusted_fitness(), Some(0.5));
            }
        }

        // Inside epsilon with equal lengths the lower pool index wins.
        let pool = vec![sized(&pset, 11, 0.5), sized(&pset, 11, 0.5 + 1e-9)];
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut zero = 0;
        for _ in 0..500 {
            if select(&pool, &c, &mut rng).unwrap() == 0 {
                zero += 1;
            }
        }
        assert!(zero > 450, "lower index should win near-ties, won {zero}");
    }

    #[test]
    fn rank_based_schemes_are_scale_invariant_draw_for_draw() {
        let pset = arithmetic_pset();
        let base: Vec<Genome> = [(5usize, 0.8), (9, 0.6), (3, 0.6), (7, 0.2)]
            .iter()
            .map(|&(l, a)| sized(&pset, l, a))
            .collect();
        for scale in [0.25, 4.0] {
            let scaled: Vec<Genome> = base
                .iter()
                .map(|g| {
                    let mut s = g.clone();
                    let adj = g.adjusted_fitness().unwrap() * scale;
                    s.set_fitness(g.raw_fitness().unwrap(), adj);
                    s
                })
                .collect();
            for scheme in [SelectionScheme::Tournament, SelectionScheme::Parsimony] {
                let c = cfg(scheme);
                let mut rng_a = ChaCha8Rng::seed_from_u64(9);
                let mut rng_b = ChaCha8Rng::seed_from_u64(9);
                for _ in 0..500 {
                    assert_eq!(
                        select(&base, &c, &mut rng_a).unwrap(),
                        select(&scaled, &c, &mut rng_b).unwrap()
                    );
                }
            }
        }
    }

    #[test]
    fn choose_pool_honors_rate_and_empty_archive() {
        let pset = arithmetic_pset();
        let population = pool_with(&[0.5, 0.5]);
        let mut archive = Archive::with_capacity(2);
        let mut rng = ChaCha8Rng::seed_from_u64(10);

        let mut c = cfg(SelectionScheme::Roulette);
        c.archive_parent_rate = 1.0;
        // Empty archive: population regardless of rate, no coin spent.
        let before = rng.clone();
        let pool = choose_pool(&population, &archive, &c, &mut rng);
        assert_eq!(pool.len(), population.len());
        assert_eq!(rng, before, "no randomness may be consumed for an empty archive");

        let mut elite = Genome::from_tokens(vec![1], &pset, 1).unwrap();
        elite.set_fitness(0.0, 1.0);
        archive.update([&elite]).unwrap();

        let pool = choose_pool(&population, &archive, &c, &mut rng);
        assert_eq!(pool.len(), 1, "rate 1 with entries must pick the archive");
        c.archive_parent_rate = 0.0;
        let pool = choose_pool(&population, &archive, &c, &mut rng);
        assert_eq!(pool.len(), 2, "rate 0 must pick the population");
    }

    #[test]
    fn archive_keeps_top_k_distinct_and_ordered() {
        let pset = arithmetic_pset();
        let mut archive = Archive::with_capacity(2);
        let a = sized(&pset, 3, 0.9);
        let b = sized(&pset, 5, 0.5);
        let c = sized(&pset, 7, 0.7);
        archive.update([&a, &b, &c]).unwrap();
        assert_eq!(archive.len(), 2);
        assert_eq!(archive.entries()[0].adjusted_fitness(), Some(0.9));
        assert_eq!(archive.entries()[1].adjusted_fitness(), Some(0.7));
        assert_eq!(archive.distinct_seen(), 3);

        // Same genotype offered twice stays a single entry.
        let mut archive = Archive::with_capacity(4);
        archive.update([&a, &a]).unwrap();
        assert_eq!(archive.len(), 1);
        assert_eq!(archive.distinct_seen(), 1);

        // Equal fitness sorts the shorter genome first.
        let mut archive = Archive::with_capacity(4);
        let long_half = sized(&pset, 9, 0.7);
        archive.update([&long_half, &c]).unwrap();
        assert_eq!(archive.entries()[0].valid_length(), 7);
    }

    #[test]
    fn archive_update_is_idempotent_and_monotone() {
        let pset = arithmetic_pset();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut archive = Archive::with_capacity(3);
        let mut best_so_far = 0.0;
        for round in 0..50 {
            let batch: Vec<Genome> = (0..6)
                .map(|_| {
                    let mut g = random_genome(&pset, 3, 9, &mut rng).unwrap();
                    let raw = rng.gen_range(0.0..20.0);
                    g.set_fitness(raw, 1.0 / (1.0 + raw));
                    g
                })
                .collect();
            archive.update(batch.iter()).unwrap();
            let snapshot = archive.clone();
            archive.update(batch.iter()).unwrap();
            assert_eq!(archive, snapshot, "second identical update changed the archive");

            let best = archive.best().unwrap().adjusted_fitness().unwrap();
            assert!(best >= best_so_far, "round {round}: best fell from {best_so_far} to {best}");
            best_so_far = best;
            assert!(archive.len() <= 3);
            assert!(archive.len() == archive.capacity().min(archive.distinct_seen()));
        }
    }

    #[test]
    fn archive_rejects_unset_fitness_and_bad_reconstructions() {
        let pset = arithmetic_pset();
        let mut archive = Archive::with_capacity(2);
        let bare = Genome::from_tokens(vec![0], &pset, 1).unwrap();
        assert_eq!(archive.update([&bare]), Err(GpError::FitnessUnset));

        let a = sized(&pset, 3, 0.9);
        let b = sized(&pset, 5, 0.5);
        // Out of order.
        assert!(Archive::from_entries(2, vec![b.clone(), a.clone()]).is_err());
        // Duplicate genotype.
        assert!(Archive::from_entries(2, vec![a.clone(), a.clone()]).is_err());
        // Over capacity.
        assert!(Archive::from_entries(1, vec![a.clone(), b.clone()]).is_err());
        // Well-formed.
        let rebuilt = Archive::from_entries(2, vec![a, b]).unwrap();
        assert_eq!(rebuilt.len(), 2);
        assert_eq!(rebuilt.distinct_seen(), 2);
    }
}
