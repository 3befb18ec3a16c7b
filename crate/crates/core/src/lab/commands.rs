//! Single-instance computations behind the command line verbs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{generate_clustered_pair, trial_rng, unit_cube, RunConfig};
use crate::conditions::{constants, full_depth, ConstantReport};
use crate::corona::{
    check_stopping_data, cz_stopping_times, stopping_tree, StoppingCheck, StoppingNode, DEFAULT_RATIO,
};
use crate::error::{Error, Result};
use crate::haar::{analyze, CoefficientMap};
use crate::measure::{AtomicMeasure, Located, WeightPair};
use crate::stopping_form::{
    sample_collection, size_functional, size_lemma_decompose, stopping_form_norm, PairCollection,
};

/// Pairs requested from the collection sampler.
pub const COLLECTION_TARGET: usize = 40;
/// Streams tried before giving up on a nonempty collection.
pub const COLLECTION_ATTEMPTS: usize = 100;

/// Every constant of the pair on the shallow grid at full depth.
pub fn constants_report(config: &RunConfig, sigma: &AtomicMeasure, omega: &AtomicMeasure) -> Result<ConstantReport> {
    let grid = config.shallow.grid(config.n)?;
    let pair = WeightPair::new(&grid, sigma, omega)?;
    constants(&pair, &config.kernel_spec()?, full_depth(&grid))
}

/// Stopping tree and Haar coefficients of a function on `σ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    /// The function on the atoms.
    pub f: Vec<f64>,
    /// Calderón–Zygmund stopping tree with per-node checks.
    pub tree: StoppingNode,
    /// Global checks of the stopping data.
    pub checks: StoppingCheck,
    /// Haar coefficients to the default depth.
    pub coefficients: CoefficientMap,
}

/// A function with random signs and magnitudes in `[10^-2, 10^2]`.
pub fn random_function<R: Rng>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len)
        .map(|_| {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            sign * 10f64.powf(rng.random_range(-2.0..2.0))
        })
        .collect()
}

/// Decomposes `f` (random when absent) over `σ` on the shallow grid.
pub fn decompose(config: &RunConfig, sigma: &AtomicMeasure, f: Option<Vec<f64>>) -> Result<Decomposition> {
    let grid = config.shallow.grid(sigma.n)?;
    let loc = Located::new(&grid, sigma)?;
    let f = f.unwrap_or_else(|| random_function(&mut trial_rng(config.seed, "decompose", 0), sigma.len()));
    if f.len() != sigma.len() {
        return Err(Error::InvalidArgument(format!("{} values for {} atoms", f.len(), sigma.len())));
    }
    let data = cz_stopping_times(&loc, &f, DEFAULT_RATIO, &unit_cube(sigma.n))?;
    Ok(Decomposition {
        tree: stopping_tree(&data, &loc, &f)?,
        checks: check_stopping_data(&data, &loc, &f)?,
        coefficients: analyze(&loc, &f, None).coefficients,
        f,
    })
}

/// Stopping-form norms of the pieces of a size decomposition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PieceNorms {
    /// Norm of the whole collection.
    #[serde(rename = "P")]
    pub p: f64,
    /// Norm of the big part.
    pub big: f64,
    /// Norm of each small part.
    pub small: Vec<f64>,
    /// Norm of the exceptional part.
    pub except: f64,
}

/// Outcome of one size decomposition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeLemmaSummary {
    /// Contraction parameter.
    pub eps: f64,
    /// Number of pairs.
    pub pairs: usize,
    /// `ℰ_A^α(𝒫)`.
    pub size_before: f64,
    /// `ℰ_A^α` of each small part.
    pub sizes_small: Vec<f64>,
    /// Whether the pieces partition the collection.
    pub partition_ok: bool,
    /// Whether every piece is admissible.
    pub admissible_ok: bool,
    /// Whether every small part contracted.
    pub contraction_ok: bool,
    /// Stopping-form norms.
    pub norms: PieceNorms,
}

fn norm_of(p: &PairCollection, pair: &WeightPair, config: &RunConfig) -> Result<f64> {
    if p.is_empty() {
        return Ok(0.0);
    }
    Ok(stopping_form_norm(p, pair, &config.kernel_spec()?)?.value)
}

/// A clustered pair on the deep grid with a nonempty sampled collection.
pub fn sample_instance(config: &RunConfig) -> Result<(WeightPair, PairCollection)> {
    let grid = config.deep.grid(config.n)?;
    for t in 0..COLLECTION_ATTEMPTS {
        let mut rng = trial_rng(config.seed, "size-lemma", t);
        let (sigma, omega) = generate_clustered_pair(&mut rng, config.n, config.sigma_atoms, config.cluster_atoms);
        let pair = WeightPair::new(&grid, &sigma, &omega)?;
        let p = sample_collection(&pair, &unit_cube(config.n), COLLECTION_TARGET, &mut rng);
        if !p.is_empty() {
            return Ok((pair, p));
        }
    }
    Err(Error::InvalidArgument("no admissible pairs found; add ω-atoms".into()))
}

/// Decomposes the sampled collection with parameter `eps` and evaluates every piece.
pub fn size_lemma(config: &RunConfig, eps: f64) -> Result<SizeLemmaSummary> {
    let (pair, p) = sample_instance(config)?;
    let alpha = config.alpha;
    let d = size_lemma_decompose(&p, &pair, alpha, eps)?;
    let check = d.check(&p, &pair, alpha);
    let small = d.small.iter().map(|s| norm_of(&s.pairs, &pair, config)).collect::<Result<Vec<f64>>>()?;
    Ok(SizeLemmaSummary {
        eps,
        pairs: p.len(),
        size_before: size_functional(&p, &pair, alpha)?.value(),
        sizes_small: check.small_sizes_sq.iter().map(|s| s.sqrt()).collect(),
        partition_ok: check.partition,
        admissible_ok: check.admissible,
        contraction_ok: check.contraction,
        norms: PieceNorms {
            p: norm_of(&p, &pair, config)?,
            big: norm_of(&d.big, &pair, config)?,
            small,
            except: norm_of(&d.except, &pair, config)?,
        },
    })
}
