//! Randomized properties checked against independently written oracles.
//!
//! Everything here goes through the public API only; the oracles re-derive
//! decoding and evaluation from the documented token semantics rather than
//! reusing the engine's own code paths.

use postfix_gp_core::{
    compute_valid_length, crossover, eval_postfix, init_run, metrics, mutate, random_genome,
    render_log, run, semantic_distance, Arity, BinaryOp, CrossoverKind, Dataset, Genome, GpParams,
    GpRng, InitialPopulation, MutationKind, PrimitiveSet, SelectionConfig, SelectionScheme,
    SequentialEvaluator, SubtreeSpan, UnaryOp, VariationParams,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

fn arith_pset() -> PrimitiveSet {
    PrimitiveSet::new(
        vec!["x".to_string()],
        vec![1.0, 2.0, 3.0, 5.0, 7.0],
        vec![BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul, BinaryOp::Div],
        vec![],
    )
    .unwrap()
}

fn mixed_pset() -> PrimitiveSet {
    PrimitiveSet::new(
        vec!["x".to_string(), "y".to_string()],
        vec![0.5, 2.0],
        vec![BinaryOp::Add, BinaryOp::Mul, BinaryOp::Div],
        vec![UnaryOp::Sin, UnaryOp::Sqrt, UnaryOp::Log],
    )
    .unwrap()
}

fn small_dataset() -> Dataset {
    let rows = (0..8)
        .map(|i| {
            let x = i as f64 * 0.7 - 2.0;
            let y = 1.5 - i as f64 * 0.3;
            (vec![x, y], x * y + 1.0)
        })
        .collect();
    Dataset::new(vec!["x".to_string(), "y".to_string()], rows).unwrap()
}

/// Decoder oracle: a plain depth counter over token arities.
fn oracle_valid_length(tokens: &[u16], pset: &PrimitiveSet) -> Option<usize> {
    let mut depth = 0usize;
    let mut completion = None;
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
            completion = Some(i + 1);
        }
    }
    completion
}

/// Evaluation oracle: recursive descent from the prefix end, with its own
/// arithmetic. Returns the root value and whether any subtree value went
/// non-finite along the way.
fn oracle_eval(prefix: &[u16], inputs: &[f64], pset: &PrimitiveSet) -> (f64, bool) {
    fn node(prefix: &[u16], end: usize, inputs: &[f64], pset: &PrimitiveSet) -> (f64, usize, bool) {
        match pset.kind(prefix[end]).unwrap() {
            postfix_gp_core::PrimitiveKind::Variable(i) => (inputs[i], end, !inputs[i].is_finite()),
            postfix_gp_core::PrimitiveKind::Constant(c) => (c, end, false),
            postfix_gp_core::PrimitiveKind::Unary(op) => {
                let (x, start, bad) = node(prefix, end - 1, inputs, pset);
                // Transcendentals go through the same libm build the engine
                // uses; std's platform libm can differ in the last ulp.
                let v = match op {
                    UnaryOp::Sin => libm::sin(x),
                    UnaryOp::Cos => libm::cos(x),
                    UnaryOp::Exp => libm::exp(x),
                    UnaryOp::Log => {
                        if x <= 0.0 {
                            0.0
                        } else {
                            libm::log(x)
                        }
                    }
                    UnaryOp::Sqrt => {
                        if x < 0.0 {
                            0.0
                        } else {
                            x.sqrt()
                        }
                    }
                    UnaryOp::Abs => x.abs(),
                    UnaryOp::Neg => -x,
                };
                (v, start, bad || !v.is_finite())
            }
            postfix_gp_core::PrimitiveKind::Binary(op) => {
                let (rhs, rhs_start, bad_r) = node(prefix, end - 1, inputs, pset);
                let (lhs, start, bad_l) = node(prefix, rhs_start - 1, inputs, pset);
                let v = match op {
                    BinaryOp::Add => lhs + rhs,
                    BinaryOp::Sub => lhs - rhs,
                    BinaryOp::Mul => lhs * rhs,
                    BinaryOp::Div => lhs / rhs,
                };
                (v, start, bad_l || bad_r || !v.is_finite())
            }
        }
    }
    let (v, start, bad) = node(prefix, prefix.len() - 1, inputs, pset);
    assert_eq!(start, 0, "prefix is a single expression");
    (v, bad)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn valid_length_matches_the_oracle(tokens in prop::collection::vec(0u16..12, 0..40)) {
        let pset = arith_pset();
        // Ids 10 and 11 fall outside the vocabulary on purpose.
        prop_assert_eq!(compute_valid_length(&tokens, &pset), oracle_valid_length(&tokens, &pset));
    }

    #[test]
    fn from_tokens_agrees_with_the_decoder(tokens in prop::collection::vec(0u16..10, 1..30)) {
        let pset = arith_pset();
        let decoded = oracle_valid_length(&tokens, &pset);
        match Genome::from_tokens(tokens.clone(), &pset, 1) {
            Ok(g) => {
                prop_assert_eq!(Some(g.valid_length()), decoded);
                prop_assert_eq!(g.tokens(), tokens.as_slice());
            }
            Err(_) => prop_assert_eq!(decoded, None),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn evaluation_matches_the_recursive_oracle(seed in any::<u64>(), x in -4.0f64..4.0, y in -4.0f64..4.0) {
        let pset = mixed_pset();
        let mut rng = GpRng::seed_from_u64(seed);
        let g = random_genome(&pset, 1, 21, &mut rng).unwrap();
        let inputs = [x, y];
        let got = eval_postfix(&g, &inputs, &pset).unwrap();
        let (want, any_bad) = oracle_eval(g.valid_prefix(), &inputs, &pset);
        if any_bad {
            prop_assert!(!got.is_finite(), "engine returned finite {got} on a poisoned tree");
        } else {
            prop_assert_eq!(got.to_bits(), want.to_bits());
        }
    }

    #[test]
    fn random_genomes_respect_length_bounds(seed in any::<u64>(), min in 1usize..8, span in 0usize..10) {
        let max = min + span;
        let pset = arith_pset();
        let mut rng = GpRng::seed_from_u64(seed);
        // With binary operators only, decodable lengths are odd.
        let feasible = (min..=max).any(|l| l % 2 == 1);
        match random_genome(&pset, min, max, &mut rng) {
            Ok(g) => {
                prop_assert!(feasible);
                prop_assert!(g.valid_length() >= min && g.valid_length() <= max);
                prop_assert!(g.valid_length() % 2 == 1);
                prop_assert_eq!(g.capacity(), max);
                prop_assert_eq!(oracle_valid_length(g.tokens(), &pset), Some(g.valid_length()));
            }
            Err(_) => prop_assert!(!feasible),
        }
    }

    #[test]
    fn crossover_children_stay_well_formed(seed in any::<u64>(), kind_ix in 0usize..3) {
        let kind = [CrossoverKind::GaLike, CrossoverKind::Subtree, CrossoverKind::SemanticSubtree][kind_ix];
        let pset = mixed_pset();
        let data = small_dataset();
        let params = VariationParams::new(kind, MutationKind::FullyProtected, 1e-4, 3, 17);
        let mut rng = GpRng::seed_from_u64(seed);
        let p1 = random_genome(&pset, 3, 17, &mut rng).unwrap();
        let p2 = random_genome(&pset, 3, 17, &mut rng).unwrap();
        let (c1, c2) = crossover(&p1, &p2, &data, &mut rng, &params, &pset).unwrap();
        for c in [&c1, &c2] {
            prop_assert_eq!(c.capacity(), 17);
            prop_assert!(c.valid_length() >= 3 && c.valid_length() <= 17);
            prop_assert_eq!(oracle_valid_length(c.tokens(), &pset), Some(c.valid_length()));
        }
    }

    #[test]
    fn mutants_stay_well_formed(seed in any::<u64>(), fully in any::<bool>()) {
        let kind = if fully { MutationKind::FullyProtected } else { MutationKind::PartiallyProtected };
        let pset = mixed_pset();
        let params = VariationParams::new(CrossoverKind::Subtree, kind, 1e-4, 3, 17);
        let mut rng = GpRng::seed_from_u64(seed);
        let parent = random_genome(&pset, 3, 17, &mut rng).unwrap();
        let child = mutate(&parent, &mut rng, &params, &pset).unwrap();
        prop_assert_eq!(child.capacity(), 17);
        prop_assert!(child.valid_length() >= 3);
        prop_assert_eq!(oracle_valid_length(child.tokens(), &pset), Some(child.valid_length()));
        let differing: Vec<usize> =
            (0..17).filter(|&i| parent.tokens()[i] != child.tokens()[i]).collect();
        prop_assert!(differing.len() <= 1, "mutation changed {} positions", differing.len());
        if fully {
            // Same position, same arity, same decoded shape.
            prop_assert_eq!(child.valid_length(), parent.valid_length());
            if let Some(&i) = differing.first() {
                prop_assert_eq!(
                    pset.arity(parent.tokens()[i]).unwrap(),
                    pset.arity(child.tokens()[i]).unwrap()
                );
            }
        }
    }

    #[test]
    fn semantic_distance_is_a_symmetric_premetric(sa in any::<u64>(), sb in any::<u64>()) {
        let pset = mixed_pset();
        let data = small_dataset();
        let mut rng = GpRng::seed_from_u64(sa);
        let a = random_genome(&pset, 1, 15, &mut rng).unwrap();
        let mut rng = GpRng::seed_from_u64(sb);
        let b = random_genome(&pset, 1, 15, &mut rng).unwrap();
        let whole = |g: &Genome| SubtreeSpan { start: 0, end: g.valid_length() - 1 };
        let ab = semantic_distance(&a, whole(&a), &b, whole(&b), &data, &pset).unwrap();
        let ba = semantic_distance(&b, whole(&b), &a, whole(&a), &data, &pset).unwrap();
        prop_assert_eq!(ab.to_bits(), ba.to_bits());
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(semantic_distance(&a, whole(&a), &a, whole(&a), &data, &pset).unwrap(), 0.0);
    }

    #[test]
    fn render_log_round_trips_the_prefix(seed in any::<u64>()) {
        let pset = mixed_pset();
        let mut rng = GpRng::seed_from_u64(seed);
        let mut g = random_genome(&pset, 1, 15, &mut rng).unwrap();
        g.set_fitness(1.0, 0.5);
        let line = render_log(&g, &pset).unwrap();
        let head = line.split(" \u{2192} ").next().unwrap();
        let symbols: Vec<&str> = head.split('#').filter(|s| !s.is_empty()).collect();
        let tokens: Vec<u16> = symbols
            .iter()
            .map(|sym| {
                (0..pset.token_count() as u16)
                    .find(|&t| pset.token_symbol(t).unwrap() == *sym)
                    .expect("every rendered symbol names a token")
            })
            .collect();
        prop_assert_eq!(tokens.as_slice(), g.valid_prefix());
    }

    #[test]
    fn pearson_r_stays_clamped(pairs in prop::collection::vec((-1e6f64..1e6, -1e6f64..1e6), 2..30)) {
        let (p, t): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let m = metrics(&p, &t).unwrap();
        prop_assert!(m.mae >= 0.0);
        if let Some(nmse) = m.nmse {
            prop_assert!(nmse >= 0.0);
        }
        if let Some(r) = m.r {
            prop_assert!((-1.0..=1.0).contains(&r), "r = {r}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn interval_feasibility_implies_finite_outputs(seed in any::<u64>(), lo_x in -3.0f64..3.0, w_x in 0.0f64..4.0, lo_y in -3.0f64..3.0, w_y in 0.0f64..4.0) {
        let pset = mixed_pset();
        let bounds = [(lo_x, lo_x + w_x), (lo_y, lo_y + w_y)];
        let mut rng = GpRng::seed_from_u64(seed);
        let g = random_genome(&pset, 1, 15, &mut rng).unwrap();
        if postfix_gp_core::interval_feasible(&g, &bounds, &pset).unwrap() {
            for _ in 0..50 {
                let x = rng.gen_range(bounds[0].0..=bounds[0].1);
                let y = rng.gen_range(bounds[1].0..=bounds[1].1);
                let v = eval_postfix(&g, &[x, y], &pset).unwrap();
                prop_assert!(v.is_finite(), "feasible genome went non-finite at ({x}, {y})");
            }
        }
    }

    #[test]
    fn short_runs_are_deterministic_and_monotone(seed in any::<u64>()) {
        let pset = arith_pset();
        let rows = (-5..=5).map(|i| {
            let x = i as f64;
            (vec![x], x * x + 2.0 * x)
        }).collect();
        let data = Dataset::new(vec!["x".to_string()], rows).unwrap();
        let params = GpParams {
            generations: 3,
            generations_per_cascade: 2,
            population_size: 12,
            min_length: 3,
            max_length: 13,
            crossover_rate: 0.8,
            mutation_rate: 0.2,
            crossover: CrossoverKind::Subtree,
            mutation: MutationKind::PartiallyProtected,
            selection: SelectionConfig::new(SelectionScheme::Tournament, 2),
            interval_arithmetic: false,
            semantic_sensitivity: 1e-4,
            initial_population: InitialPopulation::Random,
            seed,
        };
        let a = run(&params, &data, &pset, &SequentialEvaluator, |_| {}).unwrap();
        let b = run(&params, &data, &pset, &SequentialEvaluator, |_| {}).unwrap();
        prop_assert_eq!(&a.records, &b.records);
        prop_assert_eq!(&a.population, &b.population);
        prop_assert_eq!(a.records.len(), 4);
        for w in a.records.windows(2) {
            prop_assert!(w[1].best_so_far_adjusted >= w[0].best_so_far_adjusted);
        }
        // Restarting from the initial state replays the run exactly.
        let mut resumed = init_run(&params, &data, &pset, &SequentialEvaluator).unwrap();
        postfix_gp_core::resume_run(&mut resumed, &SequentialEvaluator, |_| {}).unwrap();
        prop_assert_eq!(a.rng_snapshot(), resumed.rng_snapshot());
        prop_assert_eq!(a.population, resumed.population);
    }
}
