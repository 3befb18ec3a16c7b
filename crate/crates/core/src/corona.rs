//! Stopping-time constructions: general stopping data, Calderón–Zygmund coronas,
//! iterated coronas, energy coronas, bounded fluctuation, parallel splitting and
//! the double corona.
//!
//! Cubes without `σ`-atoms carry no martingale differences and no averages, so
//! coronas are listed as sets of `σ`-charged window cubes.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::SQRT_2;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conditions::{energy_constant, full_depth, p_alpha, EnergyForm};
use crate::dyadic::{Cube, GridSpec};
use crate::error::{Error, Result};
use crate::haar::{corona_projection, energy, norm_sq};
use crate::measure::{Located, WeightPair};
use crate::operator::Direction;
use crate::tolerance;

/// Default Calderón–Zygmund ratio `C`.
pub const DEFAULT_RATIO: f64 = 4.0;
/// Factor in the energy stopping threshold `10 ℰ^2 |I|_σ`.
pub const ENERGY_FACTOR: f64 = 10.0;
/// Constant of the `σ`-Carleson estimate for energy stopping cubes.
pub const ENERGY_CARLESON: f64 = 2.0;

/// Stopping cubes with their data `α_ℱ(F)` and the constant `C_0`.
#[derive(Clone, Debug, PartialEq)]
pub struct StoppingData {
    /// Grid of the cubes.
    pub grid: GridSpec,
    /// Top cube; every stopping cube lies inside it.
    pub root: Cube,
    /// `α_ℱ(F)` for each stopping cube `F`; the keys are the tree `ℱ`.
    pub alpha: BTreeMap<Cube, f64>,
    /// Constant `C_0 >= 4` of the Carleson and quasi-orthogonality properties.
    pub c0: f64,
}

impl StoppingData {
    /// Builds stopping data after checking the shape of the tree.
    pub fn new(grid: &GridSpec, root: Cube, alpha: BTreeMap<Cube, f64>, c0: f64) -> Result<Self> {
        if !alpha.contains_key(&root) {
            return Err(Error::InvalidArgument("the root is not a stopping cube".into()));
        }
        if let Some(q) = alpha.keys().find(|q| !grid.contains(&root, q)) {
            return Err(Error::InvalidArgument(format!("stopping cube {q:?} lies outside the root")));
        }
        if let Some(v) = alpha.values().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidArgument(format!("stopping datum {v} is not a nonnegative number")));
        }
        if !(c0 >= 4.0) {
            return Err(Error::InvalidArgument(format!("C0 = {c0} is below 4")));
        }
        Ok(StoppingData { grid: grid.clone(), root, alpha, c0 })
    }

    /// The tree `{root}` with datum `a`.
    pub fn trivial(grid: &GridSpec, root: Cube, a: f64) -> Self {
        let alpha = BTreeMap::from([(root.clone(), a)]);
        StoppingData { grid: grid.clone(), root, alpha, c0: 4.0 }
    }

    /// Number of stopping cubes.
    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    /// Always false: the root is a stopping cube.
    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    /// Stopping cubes in cube order.
    pub fn cubes(&self) -> impl Iterator<Item = &Cube> + '_ {
        self.alpha.keys()
    }

    /// Whether `q` is a stopping cube.
    pub fn contains(&self, q: &Cube) -> bool {
        self.alpha.contains_key(q)
    }

    /// `α_ℱ(F)`, zero for cubes outside the tree.
    pub fn alpha_of(&self, f: &Cube) -> f64 {
        self.alpha.get(f).copied().unwrap_or(0.0)
    }

    /// `π_ℱ I`: the smallest stopping cube containing `i`.
    pub fn owner(&self, i: &Cube) -> Option<Cube> {
        if !self.grid.contains(&self.root, i) {
            return None;
        }
        let mut q = i.clone();
        loop {
            if self.alpha.contains_key(&q) {
                return Some(q);
            }
            if q.level >= self.root.level {
                return None;
            }
            q = self.grid.parent(&q);
        }
    }

    /// Parent of a stopping cube in the tree `ℱ`.
    pub fn parent(&self, f: &Cube) -> Option<Cube> {
        if *f == self.root || !self.grid.contains(&self.root, f) {
            return None;
        }
        self.owner(&self.grid.parent(f))
    }

    /// The children `𝔠_ℱ(F)`.
    pub fn children(&self, f: &Cube) -> Vec<Cube> {
        self.alpha.keys().filter(|c| *c != f && self.parent(c).as_ref() == Some(f)).cloned().collect()
    }

    /// Stopping cubes inside `f`, including `f` when it is one.
    pub fn inside(&self, f: &Cube) -> Vec<Cube> {
        self.alpha.keys().filter(|c| self.grid.contains(f, c)).cloned().collect()
    }

    /// The `m`-th generation `𝔠^{(m)}(F)`.
    pub fn generation(&self, f: &Cube, m: usize) -> Vec<Cube> {
        let mut current = vec![f.clone()];
        for _ in 0..m {
            current = current.iter().flat_map(|c| self.children(c)).collect();
        }
        current
    }

    /// Number of generations below the root.
    pub fn height(&self) -> usize {
        let mut m = 0;
        while !self.generation(&self.root, m + 1).is_empty() {
            m += 1;
        }
        m
    }

    /// The corona `𝒞_F` as a list of `σ`-charged cubes.
    pub fn corona(&self, loc: &Located, f: &Cube) -> Vec<Cube> {
        loc.cubes().filter(|i| self.owner(i).as_ref() == Some(f)).cloned().collect()
    }

    /// The corona assignment of every `σ`-charged cube under the root.
    pub fn partition(&self, loc: &Located) -> CoronaPartition {
        let owner = loc.cubes().filter_map(|i| self.owner(i).map(|f| (i.clone(), f))).collect();
        CoronaPartition { owner }
    }
}

/// The corona assignment `I ↦ π_ℱ I`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CoronaPartition {
    /// Owning stopping cube of each cube.
    pub owner: BTreeMap<Cube, Cube>,
}

impl CoronaPartition {
    /// Cubes owned by `f`.
    pub fn corona(&self, f: &Cube) -> Vec<Cube> {
        self.owner.iter().filter(|(_, o)| *o == f).map(|(i, _)| i.clone()).collect()
    }

    /// Corona sizes keyed by stopping cube.
    pub fn sizes(&self) -> BTreeMap<Cube, usize> {
        let mut out = BTreeMap::new();
        for f in self.owner.values() {
            *out.entry(f.clone()).or_insert(0) += 1;
        }
        out
    }
}

/// Constants derived from `C_0`: generation decay `(C_1 2^{-εm})^2` and the
/// quasi-orthogonality constant `C_0'`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayConstants {
    /// `C_1`.
    pub c1: f64,
    /// `ε`.
    pub eps: f64,
    /// `C_0'`.
    pub c0_prime: f64,
}

/// Decay constants implied by the Carleson property with constant `c0`.
///
/// With `M = ⌈2 C_0⌉ - 1`, each `M` generations at most halve the `σ`-mass, so
/// the `m`-th generation carries at most `2 · 2^{-m/M} |F|_σ`. Summing the
/// resulting geometric series against property (3) gives
/// `C_0' = 2 C_1 Z C_0^2` with `Z = 1 / (1 - 2^{-ε})`.
pub fn decay_constants(c0: f64) -> DecayConstants {
    let m = ((2.0 * c0).ceil() - 1.0).max(1.0);
    let eps = 1.0 / (2.0 * m);
    let z = 1.0 / (1.0 - (-eps).exp2());
    DecayConstants { c1: SQRT_2, eps, c0_prime: 2.0 * SQRT_2 * z * c0 * c0 }
}

/// `C_0` for Calderón–Zygmund stopping with ratio `c`.
///
/// Children of `F` carry at most `|F|_σ / c`, which gives the Carleson constant
/// `c / (c - 1)`; the maximal inequality then bounds `Σ (c 𝔼_F|f|)^2 |F|_σ` by
/// `4 c^3 / (c - 1) ‖f‖^2`.
pub fn cz_constant(c: f64) -> f64 {
    let q = c / (c - 1.0);
    (2.0 * c * q.sqrt()).max(q).max(4.0)
}

fn absolute(f: &[f64]) -> Vec<f64> {
    f.iter().map(|v| v.abs()).collect()
}

fn check_len(loc: &Located, f: &[f64]) -> Result<()> {
    if f.len() != loc.mu.len() {
        return Err(Error::InvalidArgument(format!("function has {} values for {} atoms", f.len(), loc.mu.len())));
    }
    Ok(())
}

/// Calderón–Zygmund stopping times for `f` under `root`.
///
/// The children of `F` are the maximal `Q ⊊ F` with `𝔼_Q^σ|f| > c 𝔼_F^σ|f|`,
/// and `α_ℱ(F) = c 𝔼_F^σ|f|` so that every average in the corona is bounded
/// by the datum of its stopping cube.
pub fn cz_stopping_times(sigma: &Located, f: &[f64], c: f64, root: &Cube) -> Result<StoppingData> {
    if !(c > 1.0) {
        return Err(Error::InvalidArgument(format!("stopping ratio {c} must exceed 1")));
    }
    check_len(sigma, f)?;
    if sigma.mass(root) <= 0.0 {
        return Err(Error::ZeroMass);
    }
    let abs = absolute(f);
    let mut alpha = BTreeMap::new();
    let mut tops = vec![root.clone()];
    while let Some(top) = tops.pop() {
        let avg = sigma.average(&abs, &top);
        alpha.insert(top.clone(), c * avg);
        let mut scan: Vec<Cube> = sigma.charged_children(&top).into_iter().map(|(_, q)| q).collect();
        while let Some(q) = scan.pop() {
            if sigma.average(&abs, &q) > c * avg {
                tops.push(q);
            } else {
                scan.extend(sigma.charged_children(&q).into_iter().map(|(_, c)| c));
            }
        }
    }
    StoppingData::new(&sigma.grid, root.clone(), alpha, cz_constant(c))
}

/// Outcome of checking the four stopping-data properties and their consequences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoppingCheck {
    /// `C_0` of the data.
    pub c0: f64,
    /// Derived decay constants.
    pub decay: DecayConstants,
    /// Properties (1) to (4).
    pub properties: [bool; 4],
    /// `max_I 𝔼_I^σ|f| / α_ℱ(π I)`.
    pub average_ratio: f64,
    /// `max_F Σ_{F' ⊂ F} |F'|_σ / |F|_σ`.
    pub carleson_ratio: f64,
    /// `Σ_F α_ℱ(F)^2 |F|_σ / ‖f‖^2`.
    pub quasi_ratio: f64,
    /// Pairs `F' ⊊ F` with `α(F') < α(F)`.
    pub monotone_violations: usize,
    /// `‖Σ_F α_ℱ(F) 1_F‖^2 / ‖f‖^2`.
    pub orthogonality_ratio: f64,
    /// Whether `‖Σ_F α_ℱ(F) 1_F‖^2 <= C_0' ‖f‖^2`.
    pub quasi_orthogonal: bool,
    /// `max_{F, m} Σ_{𝔠^{(m)}(F)} |F'|_σ / ((C_1 2^{-εm})^2 |F|_σ)`.
    pub decay_ratio: f64,
    /// Whether the generation decay holds.
    pub decays: bool,
}

impl StoppingCheck {
    /// Whether every property and consequence holds.
    pub fn ok(&self) -> bool {
        self.properties.iter().all(|&p| p) && self.quasi_orthogonal && self.decays
    }
}

fn ratio(a: f64, b: f64) -> f64 {
    if a <= 0.0 {
        0.0
    } else if b <= 0.0 {
        f64::INFINITY
    } else {
        a / b
    }
}

/// Checks stopping data against `f` on the placed measure.
pub fn check_stopping_data(data: &StoppingData, sigma: &Located, f: &[f64]) -> Result<StoppingCheck> {
    check_len(sigma, f)?;
    let abs = absolute(f);
    let total = norm_sq(sigma, f);
    let decay = decay_constants(data.c0);

    let mut average_ok = true;
    let mut average_ratio: f64 = 0.0;
    for i in sigma.cubes() {
        if let Some(owner) = data.owner(i) {
            let avg = sigma.average(&abs, i);
            let a = data.alpha_of(&owner);
            average_ok &= tolerance::le(avg, a);
            average_ratio = average_ratio.max(ratio(avg, a));
        }
    }

    let mut carleson_ok = true;
    let mut carleson_ratio: f64 = 0.0;
    for q in data.cubes() {
        let below: f64 = data.inside(q).iter().map(|c| sigma.mass(c)).sum();
        let own = sigma.mass(q);
        carleson_ok &= tolerance::le(below, data.c0 * own);
        carleson_ratio = carleson_ratio.max(ratio(below, own));
    }

    let quasi: f64 = data.alpha.iter().map(|(q, a)| a * a * sigma.mass(q)).sum();
    let quasi_ok = tolerance::le(quasi, data.c0 * data.c0 * total);

    let mut monotone_violations = 0;
    for q in data.cubes() {
        if let Some(p) = data.parent(q) {
            if !tolerance::le(data.alpha_of(&p), data.alpha_of(q)) {
                monotone_violations += 1;
            }
        }
    }

    let mut stacked = vec![0.0; sigma.mu.len()];
    for (q, a) in &data.alpha {
        for &i in sigma.atoms(q) {
            stacked[i] += a;
        }
    }
    let orth = norm_sq(sigma, &stacked);
    let quasi_orthogonal = tolerance::le(orth, decay.c0_prime * total);

    let mut decays = true;
    let mut decay_ratio: f64 = 0.0;
    for q in data.cubes() {
        let own = sigma.mass(q);
        let mut m = 0;
        loop {
            let gen = data.generation(q, m);
            if gen.is_empty() {
                break;
            }
            let mass: f64 = gen.iter().map(|c| sigma.mass(c)).sum();
            let bound = (decay.c1 * (-decay.eps * m as f64).exp2()).powi(2) * own;
            decays &= tolerance::le(mass, bound);
            decay_ratio = decay_ratio.max(ratio(mass, bound));
            m += 1;
        }
    }

    Ok(StoppingCheck {
        c0: data.c0,
        decay,
        properties: [average_ok, carleson_ok, quasi_ok, monotone_violations == 0],
        average_ratio,
        carleson_ratio,
        quasi_ratio: ratio(quasi, total),
        monotone_violations,
        orthogonality_ratio: ratio(orth, total),
        quasi_orthogonal,
        decay_ratio,
        decays,
    })
}

/// `𝔼_root f 1_root + Σ_F 𝖯_{𝒞_F}^σ f` on the atoms (zero outside the root).
pub fn reconstruct(data: &StoppingData, sigma: &Located, f: &[f64]) -> Result<Vec<f64>> {
    check_len(sigma, f)?;
    let partition = data.partition(sigma);
    let mut out = corona_projection(sigma, f, partition.owner.keys());
    let mean = sigma.average(f, &data.root);
    for &i in sigma.atoms(&data.root) {
        out[i] += mean;
    }
    Ok(out)
}

/// Largest deviation between `f` and its corona reconstruction over the atoms of the root.
pub fn reconstruction_error(data: &StoppingData, sigma: &Located, f: &[f64]) -> Result<f64> {
    let rec = reconstruct(data, sigma, f)?;
    Ok(sigma.atoms(&data.root).iter().map(|&i| (rec[i] - f[i]).abs()).fold(0.0, f64::max))
}

/// Both sides of `‖1_root f‖^2 = Σ_F ‖𝖯_{𝒞_F} f‖^2 + |𝔼_root f|^2 |root|_σ`.
pub fn corona_pythagoras(data: &StoppingData, sigma: &Located, f: &[f64]) -> Result<(f64, f64)> {
    check_len(sigma, f)?;
    let mut restricted = vec![0.0; f.len()];
    for &i in sigma.atoms(&data.root) {
        restricted[i] = f[i];
    }
    let partition = data.partition(sigma);
    let mut rhs = 0.0;
    for q in data.cubes() {
        rhs += norm_sq(sigma, &corona_projection(sigma, f, partition.corona(q).iter()));
    }
    let mean = sigma.average(f, &data.root);
    rhs += mean * mean * sigma.mass(&data.root);
    Ok((norm_sq(sigma, &restricted), rhs))
}

/// Per-node summary used by the `decompose` output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoppingNode {
    /// Stopping cube.
    pub cube: Cube,
    /// `α_ℱ(F)`.
    pub alpha: f64,
    /// Number of `σ`-charged cubes in the corona.
    pub corona_size: usize,
    /// Local checks.
    pub checks: NodeChecks,
    /// Child stopping cubes.
    pub children: Vec<StoppingNode>,
}

/// Local checks of one stopping cube.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeChecks {
    /// `Σ_{F' ⊂ F} |F'|_σ / |F|_σ`.
    pub carleson: f64,
    /// Whether every average of `|f|` in the corona is at most `α_ℱ(F)`.
    pub avg_bound: bool,
}

/// The stopping tree as nested nodes.
pub fn stopping_tree(data: &StoppingData, sigma: &Located, f: &[f64]) -> Result<StoppingNode> {
    check_len(sigma, f)?;
    let abs = absolute(f);
    let partition = data.partition(sigma);
    let sizes = partition.sizes();
    let mut bounded: BTreeMap<Cube, bool> = BTreeMap::new();
    for (i, owner) in &partition.owner {
        let ok = tolerance::le(sigma.average(&abs, i), data.alpha_of(owner));
        *bounded.entry(owner.clone()).or_insert(true) &= ok;
    }
    fn build(
        data: &StoppingData,
        sigma: &Located,
        sizes: &BTreeMap<Cube, usize>,
        bounded: &BTreeMap<Cube, bool>,
        q: &Cube,
    ) -> StoppingNode {
        let below: f64 = data.inside(q).iter().map(|c| sigma.mass(c)).sum();
        StoppingNode {
            cube: q.clone(),
            alpha: data.alpha_of(q),
            corona_size: sizes.get(q).copied().unwrap_or(0),
            checks: NodeChecks {
                carleson: ratio(below, sigma.mass(q)),
                avg_bound: bounded.get(q).copied().unwrap_or(true),
            },
            children: data.children(q).iter().map(|c| build(data, sigma, sizes, bounded, c)).collect(),
        }
    }
    Ok(build(data, sigma, &sizes, &bounded, &data.root))
}

/// Iterated stopping data from outer data and inner data for each corona projection.
///
/// `𝒦 = ∪_F 𝒦^*(F) ∪ {F}` with `𝒦^*(F) = {K ∈ 𝒦(F) ∩ 𝒞_F : α_{𝒦(F)}(K) >= α_ℱ(F)}`,
/// `α_𝒦(K) = α_{𝒦(F)}(K)` off `ℱ` and `α_𝒦(F) = max(α_ℱ(F), α_{𝒦(F)}(F))`.
/// A missing inner tree counts as `{F}` with datum zero. The reported constant
/// is `C_1 = C_0 + C_0^2` with `C_0` the largest constant involved.
pub fn iterate_coronas(outer: &StoppingData, inner: &BTreeMap<Cube, StoppingData>) -> Result<StoppingData> {
    let mut alpha = BTreeMap::new();
    let mut c0 = outer.c0;
    for (f, &af) in &outer.alpha {
        let Some(data) = inner.get(f) else {
            alpha.insert(f.clone(), af);
            continue;
        };
        c0 = c0.max(data.c0);
        for (k, &ak) in &data.alpha {
            if k == f || outer.owner(k).as_ref() != Some(f) || ak < af {
                continue;
            }
            alpha.insert(k.clone(), ak);
        }
        alpha.insert(f.clone(), af.max(data.alpha_of(f)));
    }
    StoppingData::new(&outer.grid, outer.root.clone(), alpha, c0 + c0 * c0)
}

/// Stopping rule of an energy corona: stop when the sum reaches `threshold |I|_σ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyStopRule {
    /// Multiple of `|I|_σ` the energy sum must reach.
    pub threshold: f64,
    /// Whether a cube with zero energy sum may stop.
    pub require_positive: bool,
}

impl EnergyStopRule {
    /// `10 ℰ^2 |I|_σ`, never stopping on a vanishing sum.
    pub fn standard(e_alpha: f64) -> Self {
        EnergyStopRule { threshold: ENERGY_FACTOR * e_alpha * e_alpha, require_positive: true }
    }

    fn stops(&self, sum: f64, mass: f64) -> bool {
        sum >= self.threshold * mass && (sum > 0.0 || !self.require_positive)
    }
}

/// Deeply embedded partitions and their energy sums for one weight pair.
pub struct EmbeddedEnergy<'a> {
    sigma: &'a Located,
    omega: &'a Located,
    alpha: f64,
    good: BTreeSet<Cube>,
}

impl<'a> EmbeddedEnergy<'a> {
    /// Precomputes goodness of every `ω`-cube holding two or more atoms.
    pub fn new(pair: &'a WeightPair, alpha: f64) -> Self {
        let cubes: Vec<Cube> = pair.omega.cubes().filter(|q| pair.omega.count(q) >= 2).cloned().collect();
        let good = cubes.par_iter().filter(|q| pair.grid.is_good(q, &pair.grid)).cloned().collect();
        EmbeddedEnergy { sigma: &pair.sigma, omega: &pair.omega, alpha, good }
    }

    /// `𝓜(I)` restricted to cubes with at least two `ω`-atoms (the others carry no energy).
    pub fn maximal_embedded(&self, i: &Cube) -> Vec<Cube> {
        let grid = &self.omega.grid;
        let mut out = Vec::new();
        let mut scan: Vec<Cube> = self.omega.charged_children(i).into_iter().map(|(_, q)| q).collect();
        while let Some(q) = scan.pop() {
            if self.omega.count(&q) < 2 {
                continue;
            }
            if self.good.contains(&q) && grid.deeply_embedded(&q, i) {
                out.push(q);
            } else {
                scan.extend(self.omega.charged_children(&q).into_iter().map(|(_, c)| c));
            }
        }
        out.sort();
        out
    }

    /// `Σ_{J ∈ 𝓜(I)} |J|_ω 𝖤(J, ω)^2 P^α(J, 1_top σ)^2` and whether `𝓜(I)` carries energy cubes.
    pub fn sum(&self, i: &Cube, top: &Cube) -> (f64, bool) {
        let js = self.maximal_embedded(i);
        let in_top = self.sigma.atoms(top);
        let total = js
            .iter()
            .map(|j| {
                let p = p_alpha(self.sigma, j, self.alpha, |k| in_top.binary_search(&k).is_ok());
                self.omega.mass(j) * energy(self.omega, j) * p * p
            })
            .sum();
        (total, !js.is_empty())
    }
}

/// Energy stopping cubes below a top cube.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyCorona {
    /// The tree `𝒮` including its top `S_0`, with every datum zero.
    pub tree: StoppingData,
    /// Rule used to stop.
    pub rule: EnergyStopRule,
    /// Candidate cubes whose deeply embedded partition carried no energy cube.
    pub empty_partitions: usize,
}

/// `ℰ_α` in the form used by energy coronas, at full depth.
pub fn corona_energy(pair: &WeightPair, alpha: f64) -> Result<f64> {
    Ok(energy_constant(pair, alpha, Direction::Forward, full_depth(&pair.grid), EnergyForm::Corona)?.value)
}

/// The energy corona of `s0` with threshold `10 ℰ_α^2`.
pub fn energy_corona(pair: &WeightPair, alpha: f64, s0: &Cube, e_alpha: f64) -> Result<EnergyCorona> {
    energy_corona_with_rule(pair, alpha, s0, EnergyStopRule::standard(e_alpha))
}

/// The energy corona of `s0` under an explicit stopping rule.
pub fn energy_corona_with_rule(pair: &WeightPair, alpha: f64, s0: &Cube, rule: EnergyStopRule) -> Result<EnergyCorona> {
    pair.grid.check_alpha(alpha)?;
    let ctx = EmbeddedEnergy::new(pair, alpha);
    let sigma = &pair.sigma;
    let mut alpha_map = BTreeMap::from([(s0.clone(), 0.0)]);
    let mut empty_partitions = 0;
    let mut tops = vec![s0.clone()];
    while let Some(top) = tops.pop() {
        let mut scan: Vec<Cube> = sigma.charged_children(&top).into_iter().map(|(_, q)| q).collect();
        while let Some(q) = scan.pop() {
            let (sum, nonempty) = ctx.sum(&q, &top);
            if !nonempty {
                empty_partitions += 1;
            }
            if rule.stops(sum, sigma.mass(&q)) {
                alpha_map.insert(q.clone(), 0.0);
                tops.push(q);
            } else {
                scan.extend(sigma.charged_children(&q).into_iter().map(|(_, c)| c));
            }
        }
    }
    let tree = StoppingData::new(&pair.grid, s0.clone(), alpha_map, 4.0)?;
    Ok(EnergyCorona { tree, rule, empty_partitions })
}

/// The two guarantees of an energy corona.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyCoronaCheck {
    /// `max_I Σ_{S ⊂ I} |S|_σ / |I|_σ` over charged `I` under the top.
    pub carleson_ratio: f64,
    /// Whether the ratio is at most 2.
    pub carleson_ok: bool,
    /// `max_S X^α(𝒞_S)`.
    pub stopping_energy: f64,
    /// Stopping cube attaining it.
    pub witness: Option<Cube>,
    /// Whether `X^α(𝒞_S) <= √10 ℰ_α` for every `S`.
    pub energy_ok: bool,
}

impl EnergyCorona {
    /// `X^α(𝒞_S)^2 = sup_{I ∈ 𝒞_S} (1/|I|_σ) Σ_{J ∈ 𝓜(I)} |J|_ω 𝖤(J, ω)^2 P^α(J, 1_S σ)^2`.
    pub fn stopping_energy_sq(&self, ctx: &EmbeddedEnergy<'_>, s: &Cube) -> f64 {
        self.tree.corona(ctx.sigma, s).iter().map(|i| ctx.sum(i, s).0 / ctx.sigma.mass(i)).fold(0.0, f64::max)
    }

    /// Checks the `σ`-Carleson estimate and the stopping energy bound against `e_alpha`.
    pub fn check(&self, pair: &WeightPair, alpha: f64, e_alpha: f64) -> EnergyCoronaCheck {
        let sigma = &pair.sigma;
        let top = &self.tree.root;
        let mut carleson_ratio: f64 = 0.0;
        let mut carleson_ok = true;
        for i in sigma.cubes().filter(|i| pair.grid.contains(top, i)) {
            let below: f64 = self.tree.inside(i).iter().map(|s| sigma.mass(s)).sum();
            let own = sigma.mass(i);
            carleson_ok &= tolerance::le(below, ENERGY_CARLESON * own);
            carleson_ratio = carleson_ratio.max(ratio(below, own));
        }
        let ctx = EmbeddedEnergy::new(pair, alpha);
        let stops: Vec<Cube> = self.tree.cubes().cloned().collect();
        let values: Vec<(f64, Cube)> =
            stops.par_iter().map(|s| (self.stopping_energy_sq(&ctx, s), s.clone())).collect();
        let mut best = (0.0, None);
        let mut energy_ok = true;
        for (x2, s) in values {
            energy_ok &= tolerance::le(x2, ENERGY_FACTOR * e_alpha * e_alpha);
            if best.1.is_none() || x2 > best.0 {
                best = (x2, Some(s));
            }
        }
        EnergyCoronaCheck { carleson_ratio, carleson_ok, stopping_energy: best.0.sqrt(), witness: best.1, energy_ok }
    }
}

/// Outcome of [`gbf_check`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbfReport {
    /// Whether `h` has bounded fluctuation with parameter `γ` (mean zero not required).
    pub ok: bool,
    /// Recovered family `𝒦_h`: maximal cubes where the average of `|h|` exceeds `γ`.
    pub family: Vec<Cube>,
    /// Family cubes where `h` is not a constant of modulus above `γ`.
    pub not_constant: Vec<Cube>,
    /// Cubes of the complementary corona whose average of `|h|` exceeds 1.
    pub large_averages: Vec<Cube>,
    /// Whether `h` vanishes off `K`.
    pub supported: bool,
    /// Whether `∫_K h dσ = 0`, the extra requirement of the mean-zero variant.
    pub mean_zero: bool,
}

/// Bounded fluctuation test of `h` on `k` with parameter `gamma`.
pub fn gbf_check(sigma: &Located, h: &[f64], k: &Cube, gamma: f64) -> Result<GbfReport> {
    check_len(sigma, h)?;
    let inside = sigma.atoms(k);
    let supported = (0..h.len()).all(|i| h[i] == 0.0 || inside.binary_search(&i).is_ok());
    let abs = absolute(h);
    let scale = inside.iter().map(|&i| abs[i]).fold(0.0, f64::max);

    let mut family = Vec::new();
    let mut corona = Vec::new();
    let mut scan = vec![k.clone()];
    while let Some(q) = scan.pop() {
        if sigma.average(&abs, &q) > gamma {
            family.push(q);
        } else {
            corona.push(q.clone());
            scan.extend(sigma.charged_children(&q).into_iter().map(|(_, c)| c));
        }
    }
    family.sort();
    corona.sort();

    let not_constant: Vec<Cube> = family
        .iter()
        .filter(|q| {
            let atoms = sigma.atoms(q);
            let first = h[atoms[0]];
            !(first.abs() > gamma && atoms.iter().all(|&i| tolerance::close(h[i], first, 0.0)))
        })
        .cloned()
        .collect();
    let large_averages: Vec<Cube> =
        corona.into_iter().filter(|q| !tolerance::le(sigma.average(&abs, q), 1.0)).collect();
    let integral: f64 = inside.iter().map(|&i| h[i] * sigma.weight(i)).sum();
    let mass = sigma.mass(k);
    let mean_zero = integral.abs() <= tolerance::SLACK * scale.max(1.0) * mass.max(f64::MIN_POSITIVE);
    Ok(GbfReport {
        ok: supported && not_constant.is_empty() && large_averages.is_empty(),
        family,
        not_constant,
        large_averages,
        supported,
        mean_zero,
    })
}

/// The split `𝖯_{𝒞_F} f = part1 + part2` into a bounded part and a fluctuation part.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluctuationSplit {
    /// `𝖯_{𝒞_F} f` on the atoms.
    pub projection: Vec<f64>,
    /// Bounded part.
    pub part1: Vec<f64>,
    /// Fluctuation part, supported on the big children.
    pub part2: Vec<f64>,
    /// `𝔠_big(F)`.
    pub big: Vec<Cube>,
    /// `(C_0 γ + γ + 1) 𝔼_F^σ|f|`, the bound on `|part1|`.
    pub bound1: f64,
    /// `(C_0 + 1) 𝔼_F^σ|f|`, the normalisation of `part2`.
    pub scale2: f64,
}

/// Bounded fluctuation split of the corona projection of `f` on the stopping cube `top`.
///
/// `c0` is the Calderón–Zygmund ratio used to build `data`.
pub fn bounded_fluctuation_split(
    sigma: &Located,
    f: &[f64],
    data: &StoppingData,
    top: &Cube,
    gamma: f64,
    c0: f64,
) -> Result<FluctuationSplit> {
    check_len(sigma, f)?;
    if !(gamma > 1.0) {
        return Err(Error::InvalidArgument(format!("gamma = {gamma} must exceed 1")));
    }
    if !data.contains(top) {
        return Err(Error::InvalidArgument(format!("{top:?} is not a stopping cube")));
    }
    let projection = corona_projection(sigma, f, data.corona(sigma, top).iter());
    let abs_mean = sigma.average(&absolute(f), top);
    let mean = sigma.average(f, top);
    let bound1 = (c0 * gamma + gamma + 1.0) * abs_mean;
    let mut part2 = vec![0.0; f.len()];
    let mut big = Vec::new();
    for child in data.children(top) {
        let jump = sigma.average(f, &child) - mean;
        if jump.abs() > bound1 {
            for &i in sigma.atoms(&child) {
                part2[i] = jump;
            }
            big.push(child);
        }
    }
    let part1 = projection.iter().zip(&part2).map(|(p, b)| p - b).collect();
    Ok(FluctuationSplit { projection, part1, part2, big, bound1, scale2: (c0 + 1.0) * abs_mean })
}

/// The two bounds of a fluctuation split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluctuationCheck {
    /// `part1 + part2` reproduces the projection.
    pub sums: bool,
    /// `|part1| <= (C_0 γ + γ + 1) 𝔼_F^σ|f|` on the atoms of `F`.
    pub bounded: bool,
    /// `max |part1| / bound1`.
    pub bounded_ratio: f64,
    /// Bounded fluctuation of `part2 / scale2`.
    pub fluctuation: GbfReport,
}

impl FluctuationCheck {
    /// Whether both bounds hold.
    pub fn ok(&self) -> bool {
        self.sums && self.bounded && self.fluctuation.ok
    }
}

impl FluctuationSplit {
    /// Checks the decomposition on the stopping cube `top`.
    pub fn check(&self, sigma: &Located, top: &Cube, gamma: f64) -> Result<FluctuationCheck> {
        let scale = self.projection.iter().map(|v| v.abs()).fold(1.0, f64::max);
        let sums = self
            .part1
            .iter()
            .zip(&self.part2)
            .zip(&self.projection)
            .all(|((a, b), p)| tolerance::close(a + b, *p, tolerance::SLACK * scale));
        let mut bounded = true;
        let mut bounded_ratio: f64 = 0.0;
        for &i in sigma.atoms(top) {
            let v = self.part1[i].abs();
            bounded &= tolerance::le(v, self.bound1);
            bounded_ratio = bounded_ratio.max(ratio(v, self.bound1));
        }
        let normalized: Vec<f64> = if self.scale2 > 0.0 {
            self.part2.iter().map(|v| v / self.scale2).collect()
        } else {
            vec![0.0; self.part2.len()]
        };
        let fluctuation = gbf_check(sigma, &normalized, top, gamma)?;
        Ok(FluctuationCheck { sums, bounded, bounded_ratio, fluctuation })
    }
}

/// Class of a pair of stopping cubes in the parallel corona splitting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairClass {
    /// One cube is the minimal member of the other family containing it.
    Near,
    /// The cubes are disjoint.
    Disjoint,
    /// Everything else.
    Far,
}

/// Partition of `ℱ × 𝒢` into near, disjoint and far pairs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParallelSplit {
    /// Near pairs.
    pub near: Vec<(Cube, Cube)>,
    /// Disjoint pairs.
    pub disjoint: Vec<(Cube, Cube)>,
    /// Far pairs.
    pub far: Vec<(Cube, Cube)>,
}

impl ParallelSplit {
    /// Number of classified pairs.
    pub fn total(&self) -> usize {
        self.near.len() + self.disjoint.len() + self.far.len()
    }
}

/// Class of `(f, g)` with `f ∈ ℱ` and `g ∈ 𝒢`.
pub fn classify(fs: &StoppingData, gs: &StoppingData, f: &Cube, g: &Cube) -> PairClass {
    let grid = &fs.grid;
    let near = (grid.contains(g, f) && gs.owner(f).as_ref() == Some(g))
        || (grid.contains(f, g) && fs.owner(g).as_ref() == Some(f));
    if near {
        PairClass::Near
    } else if grid.disjoint(f, g) {
        PairClass::Disjoint
    } else {
        PairClass::Far
    }
}

/// The parallel corona splitting of `ℱ × 𝒢`.
pub fn parallel_split(fs: &StoppingData, gs: &StoppingData) -> ParallelSplit {
    let mut out = ParallelSplit::default();
    for f in fs.cubes() {
        for g in gs.cubes() {
            let pair = (f.clone(), g.clone());
            match classify(fs, gs, f, g) {
                PairClass::Near => out.near.push(pair),
                PairClass::Disjoint => out.disjoint.push(pair),
                PairClass::Far => out.far.push(pair),
            }
        }
    }
    out
}

/// The double corona of `f`: Calderón–Zygmund stopping times refined by energy coronas.
#[derive(Clone, Debug, PartialEq)]
pub struct DoubleCorona {
    /// Calderón–Zygmund stopping data `ℱ`.
    pub cz: StoppingData,
    /// Energy corona `𝒮(F)` of each `F ∈ ℱ`.
    pub energy: BTreeMap<Cube, EnergyCorona>,
    /// Iterated data `𝒮(ℱ)` with `α_{𝒮(F)} = 2 α_ℱ(F)`.
    pub merged: StoppingData,
    /// Energy constant used for the thresholds.
    pub e_alpha: f64,
}

/// Double corona of `f` (values on the `σ`-atoms) under `root` with ratio `c`.
///
/// `e_alpha` defaults to [`corona_energy`].
pub fn double_corona(
    pair: &WeightPair,
    f: &[f64],
    alpha: f64,
    c: f64,
    root: &Cube,
    e_alpha: Option<f64>,
) -> Result<DoubleCorona> {
    let e_alpha = match e_alpha {
        Some(e) => e,
        None => corona_energy(pair, alpha)?,
    };
    let cz = cz_stopping_times(&pair.sigma, f, c, root)?;
    let tops: Vec<(Cube, f64)> = cz.alpha.iter().map(|(q, a)| (q.clone(), *a)).collect();
    let built: Vec<Result<(Cube, EnergyCorona, StoppingData)>> = tops
        .par_iter()
        .map(|(q, a)| {
            let ec = energy_corona(pair, alpha, q, e_alpha)?;
            let data_alpha = ec.tree.alpha.keys().map(|s| (s.clone(), 2.0 * a)).collect();
            let inner = StoppingData::new(&pair.grid, q.clone(), data_alpha, ec.tree.c0)?;
            Ok((q.clone(), ec, inner))
        })
        .collect();
    let mut energy_map = BTreeMap::new();
    let mut inner = BTreeMap::new();
    for entry in built {
        let (q, ec, data) = entry?;
        energy_map.insert(q.clone(), ec);
        inner.insert(q, data);
    }
    let merged = iterate_coronas(&cz, &inner)?;
    Ok(DoubleCorona { cz, energy: energy_map, merged, e_alpha })
}
