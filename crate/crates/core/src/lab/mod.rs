//! Seeded instance generation, verification suites, calibration and reports.
//!
//! Every trial draws from its own ChaCha stream keyed by the run seed, the
//! suite label and the trial number, so records are independent of thread
//! count and of which other suites run.

pub mod calibration;
pub mod commands;
pub mod suites;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dyadic::{Cube, GridSpec};
use crate::error::{Error, Result};
use crate::kernel::{KernelFamily, KernelSpec};
use crate::measure::{Atom, AtomicMeasure};

pub use calibration::{calibrate, CalibrationTable};
pub use suites::{run_suite, Bound, Row, SuiteRecord};

/// Seed of the shipped calibration run and of the default configuration.
pub const DEFAULT_SEED: u64 = 20_240_917;
/// Environment variable capping the number of worker threads.
pub const THREADS_VAR: &str = "TWL_THREADS";
/// Version of the report layout.
pub const REPORT_VERSION: u32 = 1;

/// A kernel with the dimension and order it is exercised at.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    /// Label used in calibration keys and reports.
    pub name: String,
    /// Kernel family.
    pub kernel: KernelFamily,
    /// Dimension.
    pub n: usize,
    /// Fractional order.
    pub alpha: f64,
}

impl Profile {
    /// Builds a profile.
    pub fn new(name: &str, kernel: KernelFamily, n: usize, alpha: f64) -> Self {
        Profile { name: name.to_string(), kernel, n, alpha }
    }

    /// The kernel of the profile.
    pub fn kernel_spec(&self) -> Result<KernelSpec> {
        KernelSpec::new(self.kernel, self.n, self.alpha)
    }

    /// Hilbert on the line, the Riesz vector in dimensions one and two, and Cauchy.
    pub fn defaults() -> Vec<Profile> {
        vec![
            Profile::new("hilbert", KernelFamily::Hilbert, 1, 0.0),
            Profile::new("riesz_vector_1", KernelFamily::RieszVector, 1, 0.5),
            Profile::new("riesz_vector_2", KernelFamily::RieszVector, 2, 0.5),
            Profile::new("cauchy", KernelFamily::Cauchy, 2, 1.0),
        ]
    }
}

/// The verification suites.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    /// Orthonormality, Parseval and reconstruction of weighted Haar systems.
    Haar,
    /// The explicit Taylor estimate for the Hilbert kernel.
    Peculiar,
    /// The monotonicity estimate for one Haar function.
    Monotonicity,
    /// The energy estimate for Haar polynomials.
    EnergyLemma,
    /// Poisson decay from a deeply embedded cube to its container.
    PoissonDecay,
    /// `𝔑_α` against the constant package.
    Theorem,
    /// `√(𝒜_2 + 𝒜_2^*)` against `𝔑_α`.
    Necessity,
    /// The two Poisson testing inequalities of functional energy.
    Functional,
    /// Carleson and stopping-energy bounds of energy coronas.
    EnergyCorona,
    /// Calderón–Zygmund stopping data and the double corona.
    StoppingData,
    /// Partition, admissibility and contraction of the size decomposition.
    SizeLemma,
    /// `𝔗 <= 𝔑`, `𝔗^* <= 𝔑` and `η_out <= ℰ_A`.
    Order,
    /// Tailless against two-tailed `𝒜_2` cube by cube.
    Tailless,
    /// `ℰ/𝔑` and `ℰ^*/𝔑`, measured only.
    EnergyVsNorm,
}

impl Suite {
    /// Every suite.
    pub fn all() -> Vec<Suite> {
        use Suite::*;
        vec![
            Haar,
            Peculiar,
            Monotonicity,
            EnergyLemma,
            PoissonDecay,
            Theorem,
            Necessity,
            Functional,
            EnergyCorona,
            StoppingData,
            SizeLemma,
            Order,
            Tailless,
            EnergyVsNorm,
        ]
    }

    /// Suites of the default run: all but the tailless comparison, which has
    /// per-cube counterexamples.
    pub fn defaults() -> Vec<Suite> {
        Suite::all().into_iter().filter(|s| *s != Suite::Tailless).collect()
    }

    /// Suites whose bound is a frozen calibration constant.
    pub fn calibrated() -> Vec<Suite> {
        use Suite::*;
        vec![Monotonicity, EnergyLemma, PoissonDecay, Theorem, Necessity, Functional]
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = serde_json::to_value(self).map_err(|_| fmt::Error)?;
        write!(f, "{}", v.as_str().unwrap_or_default())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.replace('-', "_")))
            .map_err(|_| Error::InvalidArgument(format!("unknown suite {s:?}")))
    }
}

/// Level window and goodness parameters of a grid over the unit cube.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridParams {
    /// `(k_min, k_max)`.
    pub levels: (i32, i32),
    /// Goodness depth.
    pub r: u32,
    /// Goodness exponent.
    pub eps: f64,
}

impl GridParams {
    /// The unshifted grid in dimension `n`.
    pub fn grid(&self, n: usize) -> Result<GridSpec> {
        GridSpec::new(n, vec![0.0; n], self.levels, self.r, self.eps)
    }
}

/// Parameters of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Master seed.
    pub seed: u64,
    /// Dimension for single-pair commands.
    pub n: usize,
    /// Fractional order for single-pair commands.
    pub alpha: f64,
    /// Kernel for single-pair commands.
    pub kernel: KernelFamily,
    /// Number of `σ`-atoms per generated pair.
    pub sigma_atoms: usize,
    /// Number of `ω`-atoms per generated pair.
    pub omega_atoms: usize,
    /// Number of clustered `ω`-atoms of the pair-collection suites.
    pub cluster_atoms: usize,
    /// Kernel profiles exercised by the suites.
    pub profiles: Vec<Profile>,
    /// Suites to run.
    pub suites: Vec<Suite>,
    /// Trials per lemma suite.
    pub trials: usize,
    /// Trials of the explicit Taylor estimate, which is cheap.
    pub peculiar_trials: usize,
    /// Weight pairs per theorem suite.
    pub pairs: usize,
    /// Grid of the constant computations.
    pub shallow: GridParams,
    /// Grid of the suites that need deeply embedded cubes.
    pub deep: GridParams,
    /// Contraction parameters of the size decomposition.
    pub size_eps: Vec<f64>,
    /// Allowed excess over a calibration constant.
    pub margin: f64,
    /// Report path; the CSV table goes next to it.
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: DEFAULT_SEED,
            n: 1,
            alpha: 0.0,
            kernel: KernelFamily::Hilbert,
            sigma_atoms: 10,
            omega_atoms: 10,
            cluster_atoms: 40,
            profiles: Profile::defaults(),
            suites: Suite::defaults(),
            trials: 200,
            peculiar_trials: 1000,
            pairs: 200,
            shallow: GridParams { levels: (-8, 0), r: 4, eps: 0.1 },
            deep: GridParams { levels: (-24, 0), r: 8, eps: 0.3 },
            size_eps: vec![0.25, 0.5],
            margin: 1.05,
            out: None,
        }
    }
}

impl RunConfig {
    /// Reads a configuration file; missing fields take their defaults.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
        Ok(serde_json::from_str(&text)?)
    }

    /// The kernel of single-pair commands.
    pub fn kernel_spec(&self) -> Result<KernelSpec> {
        KernelSpec::new(self.kernel, self.n, self.alpha)
    }

    /// The profiles restricted to one dimension, deduplicated by `(n, α)`.
    pub fn geometries(&self) -> Vec<Profile> {
        let mut out: Vec<Profile> = Vec::new();
        for p in &self.profiles {
            if !out.iter().any(|q| q.n == p.n && q.alpha == p.alpha) {
                out.push(p.clone());
            }
        }
        out
    }
}

/// The unit cube `[0, 1)^n` as a level-zero cube.
pub fn unit_cube(n: usize) -> Cube {
    Cube { level: 0, index: vec![0; n] }
}

fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// The random stream of trial `t` of the suite labelled `label`.
pub fn trial_rng(seed: u64, label: &str, t: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(label));
    rng.set_stream(t as u64);
    rng
}

/// A weight `10^u` with `u` uniform in `[-2, 2]`.
pub fn log_uniform_weight<R: Rng>(rng: &mut R) -> f64 {
    10f64.powf(rng.random_range(-2.0..=2.0))
}

fn point_key(x: &[f64]) -> Vec<u64> {
    x.iter().map(|v| (v + 0.0).to_bits()).collect()
}

/// Draws `count` atoms from `sample`, resampling any location already taken.
fn distinct_atoms<R: Rng>(
    rng: &mut R,
    count: usize,
    taken: &mut std::collections::HashSet<Vec<u64>>,
    mut sample: impl FnMut(&mut R) -> Vec<f64>,
) -> Vec<Atom> {
    let mut atoms = Vec::with_capacity(count);
    while atoms.len() < count {
        let x = sample(rng);
        if taken.insert(point_key(&x)) {
            atoms.push(Atom { x, w: log_uniform_weight(rng) });
        }
    }
    atoms
}

/// A pair `(σ, ω)` of atomic measures in the unit cube with disjoint supports
/// and log-uniform weights in `[10^-2, 10^2]`.
pub fn generate_pair<R: Rng>(
    rng: &mut R,
    n: usize,
    sigma_atoms: usize,
    omega_atoms: usize,
) -> (AtomicMeasure, AtomicMeasure) {
    let mut taken = std::collections::HashSet::new();
    let uniform = |r: &mut R| (0..n).map(|_| r.random::<f64>()).collect::<Vec<f64>>();
    let s = distinct_atoms(rng, sigma_atoms, &mut taken, uniform);
    let w = distinct_atoms(rng, omega_atoms, &mut taken, uniform);
    (AtomicMeasure { n, atoms: s }, AtomicMeasure { n, atoms: w })
}

/// Like [`generate_pair`], but `ω` is drawn in tight clusters so that deep
/// cubes carry several atoms.
pub fn generate_clustered_pair<R: Rng>(
    rng: &mut R,
    n: usize,
    sigma_atoms: usize,
    omega_atoms: usize,
) -> (AtomicMeasure, AtomicMeasure) {
    let mut taken = std::collections::HashSet::new();
    let uniform = |r: &mut R| (0..n).map(|_| r.random::<f64>()).collect::<Vec<f64>>();
    let s = distinct_atoms(rng, sigma_atoms, &mut taken, uniform);
    let clusters: Vec<(Vec<f64>, f64)> = (0..omega_atoms.div_ceil(4).max(1))
        .map(|_| {
            let c = (0..n).map(|_| rng.random_range(0.05..0.95)).collect();
            (c, (-rng.random_range(6.0..14.0f64)).exp2())
        })
        .collect();
    let clustered = |r: &mut R| {
        let (c, spread) = &clusters[r.random_range(0..clusters.len())];
        c.iter().map(|v| (v + spread * (r.random::<f64>() - 0.5)).clamp(0.0, 1.0 - f64::EPSILON)).collect()
    };
    let w = distinct_atoms(rng, omega_atoms, &mut taken, clustered);
    (AtomicMeasure { n, atoms: s }, AtomicMeasure { n, atoms: w })
}

/// The pair of the `gen` command: the first trial stream of the master seed.
pub fn generate(config: &RunConfig) -> (AtomicMeasure, AtomicMeasure) {
    let mut rng = trial_rng(config.seed, "gen", 0);
    generate_pair(&mut rng, config.n, config.sigma_atoms, config.omega_atoms)
}

/// The result of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    /// Layout version.
    pub version: u32,
    /// The configuration that produced the report.
    pub config: RunConfig,
    /// One record per suite and profile.
    pub suites: Vec<SuiteRecord>,
    /// Whether every record passed.
    pub passed: bool,
}

impl Report {
    /// The CSV ratio table: one row per recorded trial.
    pub fn csv(&self) -> String {
        let mut out = String::from("suite,profile,trial,ratio,separation\n");
        for r in &self.suites {
            for row in &r.rows {
                let sep = row.separation.map(|s| s.to_string()).unwrap_or_default();
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    r.name,
                    r.profile.as_deref().unwrap_or(""),
                    row.trial,
                    row.ratio,
                    sep
                ));
            }
        }
        out
    }
}

/// Runs the selected suites on a thread pool capped by [`THREADS_VAR`].
pub fn run(config: &RunConfig, table: Option<&CalibrationTable>) -> Result<Report> {
    with_pool(|| {
        let mut records = Vec::new();
        let mut cache = suites::Cache::default();
        for suite in &config.suites {
            let started = std::time::Instant::now();
            let recs = run_suite(*suite, config, table, &mut cache)?;
            log_runtime(&suite.to_string(), started.elapsed());
            records.extend(recs);
        }
        let passed = records.iter().all(|r| r.passed);
        Ok(Report { version: REPORT_VERSION, config: config.clone(), suites: records, passed })
    })
}

fn log_runtime(name: &str, elapsed: std::time::Duration) {
    if std::env::var_os("TWL_QUIET").is_none() {
        eprintln!("suite {name}: {:.2}s", elapsed.as_secs_f64());
    }
}

/// Runs `f` on a pool with at most `TWL_THREADS` workers when the variable is set.
pub fn with_pool<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    let threads = std::env::var(THREADS_VAR).ok().and_then(|v| v.parse::<usize>().ok()).filter(|&t| t > 0);
    match threads.and_then(|t| rayon::ThreadPoolBuilder::new().num_threads(t).build().ok()) {
        Some(pool) => pool.install(f),
        None => f(),
    }
}

/// Writes the report as JSON at `path` and the ratio table next to it with extension `csv`.
pub fn write_report(report: &Report, path: &Path) -> Result<()> {
    let io = |p: &Path| {
        let path = p.to_path_buf();
        move |e| Error::Io { path, source: e }
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io(dir))?;
    }
    let json = serde_json::to_string_pretty(report)? + "\n";
    std::fs::write(path, json).map_err(io(path))?;
    let csv = path.with_extension("csv");
    std::fs::write(&csv, report.csv()).map_err(io(&csv))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_seeded_and_disjoint() {
        let config = RunConfig { n: 2, sigma_atoms: 7, omega_atoms: 5, ..RunConfig::default() };
        let (s1, w1) = generate(&config);
        let (s2, w2) = generate(&config);
        assert_eq!((&s1, &w1), (&s2, &w2));
        assert_eq!((s1.len(), w1.len()), (7, 5));
        assert!(crate::measure::no_common_point_masses(&s1, &w1));
        for a in s1.atoms.iter().chain(&w1.atoms) {
            assert!(a.x.iter().all(|v| (0.0..1.0).contains(v)));
            assert!((1e-2..=1e2).contains(&a.w));
        }
    }

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::all() {
            assert_eq!(s.to_string().parse::<Suite>().unwrap(), s);
        }
        assert_eq!("energy-lemma".parse::<Suite>().unwrap(), Suite::EnergyLemma);
        assert!("nope".parse::<Suite>().is_err());
    }

    #[test]
    fn collisions_are_resampled() {
        let mut rng = trial_rng(1, "collide", 0);
        let mut taken = std::collections::HashSet::new();
        let mut draws = [0.5, 0.5, 0.5, 0.25, 0.25, 0.75].into_iter();
        let atoms = distinct_atoms(&mut rng, 3, &mut taken, |_| vec![draws.next().unwrap()]);
        let xs: Vec<f64> = atoms.iter().map(|a| a.x[0]).collect();
        assert_eq!(xs, vec![0.5, 0.25, 0.75]);
    }
}
