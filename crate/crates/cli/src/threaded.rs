//! Multi-threaded fitness evaluation.
//!
//! Evaluation is pure per genome and draws no randomness, so splitting the
//! population across threads cannot change any result — `--threads N` is
//! a speed knob with bit-identical output.

use postfix_gp_core::{assign_fitness, Dataset, Evaluate, Genome, PrimitiveSet};

pub struct ThreadedEvaluator {
    threads: usize,
}

impl ThreadedEvaluator {
    pub fn new(threads: usize) -> Self {
        ThreadedEvaluator { threads: threads.max(1) }
    }
}

impl Evaluate for ThreadedEvaluator {
    fn evaluate(
        &self,
        genomes: &mut [Genome],
        dataset: &Dataset,
        pset: &PrimitiveSet,
    ) -> postfix_gp_core::Result<()> {
        if self.threads == 1 || genomes.len() < 2 {
            for g in genomes.iter_mut() {
                assign_fitness(g, dataset, pset)?;
            }
            return Ok(());
        }
        let chunk = genomes.len().div_ceil(self.threads);
        std::thread::scope(|scope| {
            let handles: Vec<_> = genomes
                .chunks_mut(chunk)
                .map(|part| {
                    scope.spawn(move || -> postfix_gp_core::Result<()> {
                        for g in part {
                            assign_fitness(g, dataset, pset)?;
                        }
                        Ok(())
                    })
                })
                .collect();
            for h in handles {
                h.join().expect("evaluator thread panicked")?;
            }
            Ok(())
        })
    }
}
