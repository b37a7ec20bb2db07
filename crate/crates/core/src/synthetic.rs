//! Seeded random histories for load tests and benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ingest::History;
use crate::model::{DatasetId, ModuleId, PipelineRun};

#[derive(Debug, Clone, Copy)]
pub struct SyntheticSpec {
    pub runs: usize,
    pub modules: usize,
    pub datasets: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            runs: 10_000,
            modules: 50,
            datasets: 20,
            max_len: 8,
            seed: 7,
        }
    }
}

/// Runs draw a dataset uniformly and 1..=max_len modules. Module choice is skewed toward
/// low ids so prefixes repeat the way real usage does.
pub fn generate(spec: SyntheticSpec) -> History {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let datasets: Vec<DatasetId> = (0..spec.datasets.max(1))
        .map(|i| DatasetId::new(format!("D{i}")).expect("valid token"))
        .collect();
    let modules: Vec<ModuleId> = (0..spec.modules.max(1))
        .map(|i| ModuleId::new(format!("M{i}")).expect("valid token"))
        .collect();
    let mut runs = Vec::with_capacity(spec.runs);
    for i in 0..spec.runs {
        let seq = i as u64 + 1;
        let dataset = datasets[rng.gen_range(0..datasets.len())].clone();
        let len = rng.gen_range(1..=spec.max_len.max(1));
        let mods = (0..len)
            .map(|_| {
                let a = rng.gen_range(0..modules.len());
                let b = rng.gen_range(0..modules.len());
                modules[a.min(b)].clone()
            })
            .collect();
        runs.push(PipelineRun::new(format!("wf-{seq}"), dataset, mods, seq).expect("non-empty run"));
    }
    History::from_runs(runs).expect("increasing seqs")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_for_a_seed() {
        let spec = SyntheticSpec { runs: 50, ..Default::default() };
        assert_eq!(generate(spec), generate(spec));
        assert_eq!(generate(spec).len(), 50);
        assert_ne!(generate(spec), generate(SyntheticSpec { seed: 8, ..spec }));
    }
}
