//! Seeded fixtures shared by the benchmarks.

use twl_core::lab::{generate_clustered_pair, generate_pair, trial_rng, unit_cube, Profile, RunConfig};
use twl_core::measure::WeightPair;
use twl_core::stopping_form::{sample_collection, PairCollection};
use twl_core::{AtomicMeasure, Result};

/// Seed of every fixture.
pub const SEED: u64 = 7;

/// A uniform pair with `atoms` atoms on each side.
pub fn uniform(n: usize, atoms: usize) -> (AtomicMeasure, AtomicMeasure) {
    generate_pair(&mut trial_rng(SEED, "bench/uniform", atoms), n, atoms, atoms)
}

/// A uniform pair placed on the shallow grid of the default configuration.
pub fn shallow_pair(n: usize, atoms: usize) -> Result<WeightPair> {
    let (sigma, omega) = uniform(n, atoms);
    WeightPair::new(&RunConfig::default().shallow.grid(n)?, &sigma, &omega)
}

/// A clustered pair on the deep grid with a sampled collection of up to `target` pairs.
pub fn collection(profile: &Profile, target: usize) -> Result<(WeightPair, PairCollection)> {
    let config = RunConfig::default();
    let grid = config.deep.grid(profile.n)?;
    let mut rng = trial_rng(SEED, "bench/collection", target);
    let (sigma, omega) = generate_clustered_pair(&mut rng, profile.n, config.sigma_atoms, config.cluster_atoms);
    let pair = WeightPair::new(&grid, &sigma, &omega)?;
    let p = sample_collection(&pair, &unit_cube(profile.n), target, &mut rng);
    Ok((pair, p))
}
