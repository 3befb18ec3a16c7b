//! Admissible pair collections, the size functional and its tent measure, the
//! bottom-up size decomposition, straddling bounds and the stopping form.
//!
//! `ω_𝒫(𝐓(K))` is evaluated both geometrically, by testing atoms against the
//! tent over `K`, and dyadically, as the sum of `X̂(J)^2` over `J ⊆ K`; the two
//! agree exactly because a point `(c_J, ℓ(J))` lies in `𝐓(K)` precisely when
//! `J ⊆ K`.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conditions::p_alpha;
use crate::dyadic::{Cube, GridSpec};
use crate::error::{Error, Result};
use crate::haar::{difference_norm_x, haar_system, martingale_difference, x_hat};
use crate::kernel::KernelSpec;
use crate::measure::{HalfSpaceAtom, HalfSpaceMeasure, Located, WeightPair};
use crate::operator::largest_singular_value;
use crate::tolerance;

/// `J ⋐ I`: `J` is good and deeply embedded in `I`.
pub fn embedded(grid: &GridSpec, j: &Cube, i: &Cube) -> bool {
    grid.deeply_embedded(j, i) && grid.is_good(j, grid)
}

/// A collection `𝒫` of pairs `(I, J)` below a root `A`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCollection {
    /// The cube `A`.
    pub root: Cube,
    /// Pairs `(I, J)` with `J ⋐ I ⊆ A`.
    pub pairs: BTreeSet<(Cube, Cube)>,
}

impl PairCollection {
    /// Builds a collection and checks admissibility.
    pub fn new(grid: &GridSpec, root: Cube, pairs: impl IntoIterator<Item = (Cube, Cube)>) -> Result<Self> {
        let p = PairCollection::from_pairs(root, pairs);
        p.validate(grid)?;
        Ok(p)
    }

    /// Builds a collection without checking it.
    pub fn from_pairs(root: Cube, pairs: impl IntoIterator<Item = (Cube, Cube)>) -> Self {
        PairCollection { root, pairs: pairs.into_iter().collect() }
    }

    /// The empty collection below `root`.
    pub fn empty(root: Cube) -> Self {
        PairCollection { root, pairs: BTreeSet::new() }
    }

    /// Number of pairs.
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    /// Whether there are no pairs.
    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// `π_1 𝒫`.
    pub fn pi1(&self) -> BTreeSet<Cube> {
        self.pairs.iter().map(|(i, _)| i.clone()).collect()
    }

    /// `π_2 𝒫`.
    pub fn pi2(&self) -> BTreeSet<Cube> {
        self.pairs.iter().map(|(_, j)| j.clone()).collect()
    }

    /// `π_2^K 𝒫`: second coordinates contained in `k`.
    pub fn pi2_in(&self, grid: &GridSpec, k: &Cube) -> Vec<Cube> {
        self.pi2().into_iter().filter(|j| grid.contains(k, j)).collect()
    }

    /// `π 𝒫 = π_1 𝒫 ∪ π_2 𝒫`.
    pub fn cubes(&self) -> BTreeSet<Cube> {
        let mut all = self.pi1();
        all.extend(self.pi2());
        all
    }

    /// Checks `J ⋐ I ⊆ A` for every pair and closure along geodesics.
    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        if self.root.level > grid.k_max() || self.root.index.len() != grid.n {
            return Err(Error::Inadmissible(format!("root {:?} is not a window cube", self.root)));
        }
        let mut by_j: BTreeMap<&Cube, Vec<i32>> = BTreeMap::new();
        for (i, j) in &self.pairs {
            if j.level < grid.k_min() || j.index.len() != grid.n || i.index.len() != grid.n {
                return Err(Error::Inadmissible(format!("{j:?} is not a window cube")));
            }
            if !grid.contains(&self.root, i) {
                return Err(Error::Inadmissible(format!("{i:?} is not inside the root")));
            }
            if !embedded(grid, j, i) {
                return Err(Error::Inadmissible(format!("{j:?} is not deeply embedded in {i:?}")));
            }
            by_j.entry(j).or_default().push(i.level);
        }
        for (j, mut levels) in by_j {
            levels.sort_unstable();
            if levels.windows(2).any(|w| w[1] != w[0] + 1) {
                return Err(Error::Inadmissible(format!("the first coordinates of {j:?} skip a level")));
            }
        }
        Ok(())
    }
}

/// The tent measure `ω_𝒫 = Σ_{J ∈ π_2 𝒫} X̂^ω(J)^2 δ_{(c_J, ℓ(J))}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TentMeasure {
    /// The atoms on the upper half space.
    pub measure: HalfSpaceMeasure,
    /// `X̂^ω(J)^2` for each `J ∈ π_2 𝒫`.
    pub weights: BTreeMap<Cube, f64>,
}

impl TentMeasure {
    /// Builds `ω_𝒫` from the second coordinates of `p`.
    pub fn new(omega: &Located, p: &PairCollection) -> Self {
        let grid = &omega.grid;
        let weights: BTreeMap<Cube, f64> = p
            .pi2()
            .into_iter()
            .map(|j| {
                let x = x_hat(omega, &j);
                (j, x * x)
            })
            .collect();
        let atoms = weights.iter().map(|(j, &w)| HalfSpaceAtom { x: grid.center(j), t: grid.side(j), w }).collect();
        TentMeasure { measure: HalfSpaceMeasure { n: grid.n, atoms }, weights }
    }

    /// Whether `atom` lies in the tent `𝐓(K)`, the pyramid over `K` with apex `(c_K, ℓ(K))`.
    pub fn in_tent(grid: &GridSpec, k: &Cube, atom: &HalfSpaceAtom) -> bool {
        let side = grid.side(k);
        let c = grid.center(k);
        atom.t <= side && atom.x.iter().zip(&c).all(|(x, ck)| 2.0 * (x - ck).abs() <= side - atom.t)
    }

    /// `ω_𝒫(𝐓(K))` by testing each atom against the tent.
    pub fn mass(&self, grid: &GridSpec, k: &Cube) -> f64 {
        self.measure.atoms.iter().filter(|a| Self::in_tent(grid, k, a)).map(|a| a.w).sum()
    }

    /// `Σ_{J ∈ π_2^K 𝒫} X̂^ω(J)^2`.
    pub fn sum_inside(&self, grid: &GridSpec, k: &Cube) -> f64 {
        self.weights.iter().filter(|(j, _)| grid.contains(k, j)).map(|(_, w)| w).sum()
    }
}

/// `P^α(Q, 1_{A∖S} σ)`.
fn poisson_outside(sigma: &Located, root: &Cube, s: &Cube, q: &Cube, alpha: f64) -> f64 {
    p_alpha(sigma, q, alpha, |i| sigma.cube_of(i, root.level) == *root && sigma.cube_of(i, s.level) != *s)
}

/// `(1/|K|_σ)(P^α(K, 1_{A∖K}σ)/ℓ(K))^2 ω_𝒫(𝐓(K))`, or `None` when `|K|_σ = 0`.
fn size_score(sigma: &Located, root: &Cube, k: &Cube, alpha: f64, tent: f64) -> Option<f64> {
    let mass = sigma.mass(k);
    if mass <= 0.0 {
        return None;
    }
    let p = poisson_outside(sigma, root, k, k, alpha) / sigma.grid.side(k);
    Some(p * p * tent / mass)
}

/// The size `ℰ_A^α(𝒫)^2` with its maximizing cube.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeReport {
    /// `ℰ_A^α(𝒫)^2`.
    pub value_sq: f64,
    /// A first coordinate attaining the maximum.
    pub witness: Option<Cube>,
    /// First coordinates without `σ`-mass, left out of the maximum.
    pub skipped: Vec<Cube>,
}

impl SizeReport {
    /// `ℰ_A^α(𝒫)`.
    pub fn value(&self) -> f64 {
        self.value_sq.sqrt()
    }
}

/// `ℰ_A^α(𝒫)^2 = max_{I ∈ π_1 𝒫} (1/|I|_σ)(P^α(I, 1_{A∖I}σ)/ℓ(I))^2 ω_𝒫(𝐓(I))`.
pub fn size_functional(p: &PairCollection, pair: &WeightPair, alpha: f64) -> Result<SizeReport> {
    p.validate(&pair.grid)?;
    Ok(size_unchecked(p, pair, alpha))
}

fn size_unchecked(p: &PairCollection, pair: &WeightPair, alpha: f64) -> SizeReport {
    let tent = TentMeasure::new(&pair.omega, p);
    let firsts: Vec<Cube> = p.pi1().into_iter().collect();
    let scores: Vec<Option<f64>> =
        firsts.par_iter().map(|i| size_score(&pair.sigma, &p.root, i, alpha, tent.sum_inside(&pair.grid, i))).collect();
    let mut report = SizeReport { value_sq: 0.0, witness: None, skipped: Vec::new() };
    for (i, s) in firsts.into_iter().zip(scores) {
        match s {
            None => report.skipped.push(i),
            Some(v) if v > report.value_sq || report.witness.is_none() => {
                report.value_sq = v;
                report.witness = Some(i);
            }
            Some(_) => {}
        }
    }
    report
}

/// One small piece `𝒫_{L,0}^{small}` of the size decomposition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmallPiece {
    /// The stopping cube `L` (the root when the whole collection has size zero).
    pub top: Cube,
    /// The pairs.
    pub pairs: PairCollection,
}

/// The splitting `𝒫 = 𝒫_big ∪ ⋃_ℓ 𝒫_small,ℓ ∪ 𝒫_except`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeDecomposition {
    /// The contraction parameter `ε`; the stopping ratio is `ρ = 1 + ε`.
    pub eps: f64,
    /// `ℰ_A^α(𝒫)^2`.
    pub size_sq: f64,
    /// The generations `𝓛_0, 𝓛_1, …` of stopping cubes.
    pub generations: Vec<Vec<Cube>>,
    /// Pairs with `I = L` or with `J` in a lower generation.
    pub big: PairCollection,
    /// Pairs with both coordinates in one corona and `I ≠ L`.
    pub small: Vec<SmallPiece>,
    /// Pairs whose first coordinate lies in no corona.
    pub except: PairCollection,
}

/// Outcome of re-checking a size decomposition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionCheck {
    /// The pieces are disjoint and their union is `𝒫`.
    pub partition: bool,
    /// Every piece is admissible.
    pub admissible: bool,
    /// `ℰ_A^α(𝒫_small,ℓ)^2` per small piece.
    pub small_sizes_sq: Vec<f64>,
    /// `max_ℓ ℰ_A^α(𝒫_small,ℓ)^2 <= ε ℰ_A^α(𝒫)^2`.
    pub contraction: bool,
}

impl DecompositionCheck {
    /// All three properties hold.
    pub fn ok(&self) -> bool {
        self.partition && self.admissible && self.contraction
    }
}

impl SizeDecomposition {
    /// Every piece: the big part, the small parts and the exceptional part.
    pub fn pieces(&self) -> impl Iterator<Item = &PairCollection> + '_ {
        std::iter::once(&self.big).chain(self.small.iter().map(|s| &s.pairs)).chain(std::iter::once(&self.except))
    }

    /// Re-checks partition, admissibility and contraction against `p`.
    pub fn check(&self, p: &PairCollection, pair: &WeightPair, alpha: f64) -> DecompositionCheck {
        let total: usize = self.pieces().map(PairCollection::len).sum();
        let union: BTreeSet<(Cube, Cube)> = self.pieces().flat_map(|q| q.pairs.iter().cloned()).collect();
        let partition = total == p.len() && union == p.pairs && self.pieces().all(|q| q.root == p.root);
        let admissible = self.pieces().all(|q| q.validate(&pair.grid).is_ok());
        let small_sizes_sq: Vec<f64> =
            self.small.iter().map(|s| size_unchecked(&s.pairs, pair, alpha).value_sq).collect();
        let bound = self.eps * self.size_sq;
        let contraction = self.size_sq == 0.0 || small_sizes_sq.iter().all(|&s| tolerance::le(s, bound));
        DecompositionCheck { partition, admissible, small_sizes_sq, contraction }
    }
}

/// Minimal cubes of `set` (no other member strictly inside).
fn minimal(grid: &GridSpec, set: &[Cube]) -> Vec<Cube> {
    set.iter().filter(|k| !set.iter().any(|o| o != *k && grid.contains(k, o))).cloned().collect()
}

/// The bottom-up stopping time of the size lemma.
///
/// `𝓛_0` holds the minimal `K ∈ π𝒫` with score at least `ε ℰ_A^α(𝒫)^2`;
/// `𝓛_n` holds the minimal `L ∈ π𝒫` strictly containing a cube of `𝓛_{n-1}`
/// with `ω_𝒫(𝐓(L)) >= (1 + ε) Σ ω_𝒫(𝐓(L'))` over the cubes `L' ∈ 𝓛_{n-1}`
/// inside `L`.
pub fn size_lemma_decompose(p: &PairCollection, pair: &WeightPair, alpha: f64, eps: f64) -> Result<SizeDecomposition> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidArgument(format!("eps = {eps} is outside (0, 1)")));
    }
    p.validate(&pair.grid)?;
    let grid = &pair.grid;
    let size = size_unchecked(p, pair, alpha);
    let empty = PairCollection::empty(p.root.clone());
    if size.value_sq <= 0.0 {
        return Ok(SizeDecomposition {
            eps,
            size_sq: size.value_sq,
            generations: Vec::new(),
            big: empty.clone(),
            small: vec![SmallPiece { top: p.root.clone(), pairs: p.clone() }],
            except: empty,
        });
    }
    let tent = TentMeasure::new(&pair.omega, p);
    let cubes: Vec<Cube> = p.cubes().into_iter().collect();
    let masses: BTreeMap<Cube, f64> = cubes.iter().map(|k| (k.clone(), tent.sum_inside(grid, k))).collect();
    let threshold = eps * size.value_sq;
    let first: Vec<Cube> = cubes
        .par_iter()
        .filter(|k| size_score(&pair.sigma, &p.root, k, alpha, masses[*k]).is_some_and(|s| s >= threshold))
        .cloned()
        .collect();
    let rho = 1.0 + eps;
    let mut generations = vec![minimal(grid, &first)];
    loop {
        let prev = generations.last().expect("at least one generation");
        let candidates: Vec<Cube> = cubes
            .iter()
            .filter(|l| {
                let below: Vec<&Cube> = prev.iter().filter(|q| *q != *l && grid.contains(l, q)).collect();
                !below.is_empty() && masses[*l] >= rho * below.iter().map(|q| masses[*q]).sum::<f64>()
            })
            .cloned()
            .collect();
        if candidates.is_empty() {
            break;
        }
        generations.push(minimal(grid, &candidates));
    }
    if generations.last().is_some_and(Vec::is_empty) {
        generations.pop();
    }
    let generation_of: BTreeMap<&Cube, usize> =
        generations.iter().enumerate().flat_map(|(g, ls)| ls.iter().map(move |l| (l, g))).collect();
    let owner = |q: &Cube| -> Option<&Cube> {
        (q.level..=p.root.level)
            .map(|k| grid.ancestor(q, k))
            .find_map(|a| generation_of.get_key_value(&a).map(|(l, _)| *l))
    };
    let mut big = empty.clone();
    let mut except = empty.clone();
    let mut small: BTreeMap<Cube, PairCollection> = BTreeMap::new();
    for (i, j) in &p.pairs {
        let Some(l) = owner(i) else {
            except.pairs.insert((i.clone(), j.clone()));
            continue;
        };
        let lj = owner(j).expect("J lies inside the owner of I");
        if i == l || lj != l {
            big.pairs.insert((i.clone(), j.clone()));
        } else {
            small.entry(l.clone()).or_insert_with(|| empty.clone()).pairs.insert((i.clone(), j.clone()));
        }
    }
    Ok(SizeDecomposition {
        eps,
        size_sq: size.value_sq,
        generations,
        big,
        small: small.into_iter().map(|(top, pairs)| SmallPiece { top, pairs }).collect(),
        except,
    })
}

/// Which straddling properties hold for a subpartition `𝒮`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StraddleReport {
    /// Every pair has some `S ∈ 𝒮` with `J ⊆ S ⊆ I`.
    pub holds: bool,
    /// Additionally `J ⋐ S` for that `S`.
    pub case_in: bool,
    /// Additionally `S ⋐ I` for that `S`.
    pub case_out: bool,
}

fn check_subpartition(grid: &GridSpec, root: &Cube, s: &[Cube]) -> Result<()> {
    if let Some(q) = s.iter().find(|q| !grid.contains(root, q)) {
        return Err(Error::InvalidArgument(format!("{q:?} lies outside the root")));
    }
    for (a, x) in s.iter().enumerate() {
        if s[a + 1..].iter().any(|y| !grid.disjoint(x, y)) {
            return Err(Error::Overlap);
        }
    }
    Ok(())
}

/// Whether `𝒫` straddles `𝒮`, evaluated literally on geodesics `[J, I]`.
pub fn straddles(p: &PairCollection, grid: &GridSpec, s: &[Cube]) -> Result<StraddleReport> {
    check_subpartition(grid, &p.root, s)?;
    let mut report = StraddleReport { holds: true, case_in: true, case_out: true };
    for (i, j) in &p.pairs {
        match s.iter().find(|q| grid.contains(q, j) && grid.contains(i, q)) {
            None => report.holds = false,
            Some(q) => {
                report.case_in &= embedded(grid, j, q);
                report.case_out &= embedded(grid, q, i);
            }
        }
    }
    Ok(report)
}

/// Which straddling bound to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EtaSide {
    /// Poisson integrals taken at each `J`.
    In,
    /// Poisson integral taken at `S`.
    Out,
}

/// A straddling bound with its maximizing cube.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtaReport {
    /// `η`.
    pub value: f64,
    /// The cube `S` attaining the supremum.
    pub witness: Option<Cube>,
    /// Cubes of `𝒮` without `σ`-mass, left out of the supremum.
    pub skipped: Vec<Cube>,
}

/// `η_in` or `η_out` of a straddled subpartition `𝒮`.
pub fn eta(p: &PairCollection, s: &[Cube], pair: &WeightPair, alpha: f64, side: EtaSide) -> Result<EtaReport> {
    let grid = &pair.grid;
    check_subpartition(grid, &p.root, s)?;
    let seconds: Vec<Cube> = p.pi2().into_iter().collect();
    let norms: BTreeMap<&Cube, f64> = seconds.iter().map(|j| (j, difference_norm_x(&pair.omega, j))).collect();
    let values: Vec<Option<f64>> = s
        .par_iter()
        .map(|q| {
            let mass = pair.sigma.mass(q);
            if mass <= 0.0 {
                return None;
            }
            let inside = seconds.iter().filter(|j| grid.contains(q, j));
            let total = match side {
                EtaSide::In => inside
                    .map(|j| {
                        let pj = poisson_outside(&pair.sigma, &p.root, q, j, alpha) / grid.side(j);
                        pj * pj * norms[j]
                    })
                    .sum::<f64>(),
                EtaSide::Out => {
                    let ps = poisson_outside(&pair.sigma, &p.root, q, q, alpha) / grid.side(q);
                    ps * ps * inside.map(|j| norms[j]).sum::<f64>()
                }
            };
            Some(total / mass)
        })
        .collect();
    let mut best = 0.0;
    let mut report = EtaReport { value: 0.0, witness: None, skipped: Vec::new() };
    for (q, v) in s.iter().zip(values) {
        match v {
            None => report.skipped.push(q.clone()),
            Some(v) if v > best || report.witness.is_none() => {
                best = v;
                report.witness = Some(q.clone());
            }
            Some(_) => {}
        }
    }
    report.value = best.sqrt();
    Ok(report)
}

/// `Σ_{x ∈ A∖I} K(y, x) w_x` per kernel component, for each `ω`-atom `y` of `J`.
fn outside_potential(pair: &WeightPair, k: &KernelSpec, root: &Cube, i: &Cube, j: &Cube) -> Vec<Vec<f64>> {
    let sigma = &pair.sigma;
    let inner = sigma.atoms(i);
    let sources: Vec<usize> = sigma.atoms(root).iter().copied().filter(|x| inner.binary_search(x).is_err()).collect();
    pair.omega
        .atoms(j)
        .iter()
        .map(|&y| {
            let mut acc = vec![0.0; k.components()];
            for &x in &sources {
                let v = k.eval_or_zero(pair.omega.point(y), sigma.point(x));
                for (a, b) in acc.iter_mut().zip(v) {
                    *a += b * sigma.weight(x);
                }
            }
            acc
        })
        .collect()
}

fn check_form_inputs(p: &PairCollection, pair: &WeightPair, k: &KernelSpec) -> Result<()> {
    k.validate()?;
    if k.n != pair.grid.n {
        return Err(Error::Kernel(format!("kernel dimension {} differs from the grid's {}", k.n, pair.grid.n)));
    }
    p.validate(&pair.grid)
}

/// `B_stop^𝒫(f, g) = Σ_{(I,J) ∈ 𝒫} (𝔼_I^σ Δ_{πI}^σ f) ⟨T_σ^α 1_{A∖I}, Δ_J^ω g⟩_ω`, one value per kernel component.
pub fn stopping_form(p: &PairCollection, pair: &WeightPair, k: &KernelSpec, f: &[f64], g: &[f64]) -> Result<Vec<f64>> {
    check_form_inputs(p, pair, k)?;
    if f.len() != pair.sigma.mu.len() || g.len() != pair.omega.mu.len() {
        return Err(Error::InvalidArgument("function length differs from atom count".into()));
    }
    let grid = &pair.grid;
    let terms: Vec<Vec<f64>> = p
        .pairs
        .par_iter()
        .filter(|(i, _)| *i != p.root && pair.sigma.count(i) > 0)
        .map(|(i, j)| {
            let parent = grid.parent(i);
            let coefficient = pair.sigma.average(f, i) - pair.sigma.average(f, &parent);
            let dg = martingale_difference(&pair.omega, g, j);
            let potential = outside_potential(pair, k, &p.root, i, j);
            let mut out = vec![0.0; k.components()];
            for (&y, t) in pair.omega.atoms(j).iter().zip(&potential) {
                for (o, v) in out.iter_mut().zip(t) {
                    *o += coefficient * dg[y] * pair.omega.weight(y) * v;
                }
            }
            out
        })
        .collect();
    let mut total = vec![0.0; k.components()];
    for t in terms {
        for (a, b) in total.iter_mut().zip(t) {
            *a += b;
        }
    }
    Ok(total)
}

/// The stopping form in Haar coordinates, one matrix per kernel component.
#[derive(Clone, Debug, PartialEq)]
pub struct StopMatrices {
    /// Row labels `(J, a)` of `ω`-Haar functions.
    pub rows: Vec<(Cube, Vec<u8>)>,
    /// Column labels `(πI, a)` of `σ`-Haar functions.
    pub cols: Vec<(Cube, Vec<u8>)>,
    /// `M[(J,b),(Q,a)] = Σ_{πI = Q} h_Q^a(I) ⟨T_σ^α 1_{A∖I}, h_J^b⟩_ω`.
    pub matrices: Vec<DMatrix<f64>>,
}

/// Builds the Haar-coordinate matrices of the stopping form.
pub fn stopping_matrices(p: &PairCollection, pair: &WeightPair, k: &KernelSpec) -> Result<StopMatrices> {
    check_form_inputs(p, pair, k)?;
    let grid = &pair.grid;
    let active: Vec<&(Cube, Cube)> = p.pairs.iter().filter(|(i, _)| *i != p.root).collect();
    let parents: BTreeSet<Cube> = active.iter().map(|(i, _)| grid.parent(i)).collect();
    let seconds: BTreeSet<Cube> = active.iter().map(|(_, j)| j.clone()).collect();
    let sigma_haar: BTreeMap<Cube, _> = parents.iter().map(|q| (q.clone(), haar_system(&pair.sigma, q))).collect();
    let omega_haar: BTreeMap<Cube, _> = seconds.iter().map(|j| (j.clone(), haar_system(&pair.omega, j))).collect();
    let mut cols = Vec::new();
    let mut col_start = BTreeMap::new();
    for (q, hs) in &sigma_haar {
        col_start.insert(q.clone(), cols.len());
        cols.extend(hs.iter().map(|h| (q.clone(), h.a.clone())));
    }
    let mut rows = Vec::new();
    let mut row_start = BTreeMap::new();
    for (j, hs) in &omega_haar {
        row_start.insert(j.clone(), rows.len());
        rows.extend(hs.iter().map(|h| (j.clone(), h.a.clone())));
    }
    let comps = k.components();
    let mut matrices = vec![DMatrix::zeros(rows.len(), cols.len()); comps];
    let blocks: Vec<(usize, usize, Vec<DMatrix<f64>>)> = active
        .par_iter()
        .map(|(i, j)| {
            let q = grid.parent(i);
            let child = grid.child_number(i);
            let potential = outside_potential(pair, k, &p.root, i, j);
            let hq = &sigma_haar[&q];
            let hj = &omega_haar[j];
            let block: Vec<DMatrix<f64>> = (0..comps)
                .map(|c| {
                    DMatrix::from_fn(hj.len(), hq.len(), |b, a| {
                        let tested: f64 = pair
                            .omega
                            .atoms(j)
                            .iter()
                            .zip(&potential)
                            .map(|(&y, t)| hj[b].at(&pair.omega, y) * pair.omega.weight(y) * t[c])
                            .sum();
                        hq[a].values[child] * tested
                    })
                })
                .collect();
            (row_start[j], col_start[&q], block)
        })
        .collect();
    for (r0, c0, block) in blocks {
        for (m, b) in matrices.iter_mut().zip(block) {
            let mut view = m.view_mut((r0, c0), (b.nrows(), b.ncols()));
            view += &b;
        }
    }
    Ok(StopMatrices { rows, cols, matrices })
}

/// The norm `𝔑_stop^𝒫` of the stopping form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StopNorm {
    /// `(Σ_c 𝔑_c^2)^{1/2}` over kernel components.
    pub value: f64,
    /// Largest singular value per component.
    pub components: Vec<f64>,
    /// Matrix shape `(rows, columns)`.
    pub shape: (usize, usize),
}

/// `𝔑_stop^𝒫`: the largest singular value of the Haar-coordinate matrix.
pub fn stopping_form_norm(p: &PairCollection, pair: &WeightPair, k: &KernelSpec) -> Result<StopNorm> {
    let m = stopping_matrices(p, pair, k)?;
    let components =
        m.matrices.iter().map(|a| largest_singular_value(a).map(|(s, _)| s)).collect::<Result<Vec<f64>>>()?;
    Ok(StopNorm {
        value: components.iter().map(|s| s * s).sum::<f64>().sqrt(),
        components,
        shape: (m.rows.len(), m.cols.len()),
    })
}

/// Samples an admissible collection below `root` with about `target` pairs.
///
/// Second coordinates are `ω`-charged cubes with at least two atoms; each gets
/// a random contiguous run of ancestors in which it is deeply embedded.
pub fn sample_collection<R: Rng>(pair: &WeightPair, root: &Cube, target: usize, rng: &mut R) -> PairCollection {
    let grid = &pair.grid;
    let mut seconds: Vec<Cube> = pair
        .omega
        .cubes()
        .filter(|j| pair.omega.count(j) >= 2 && j.level + grid.r as i32 <= root.level && grid.contains(root, j))
        .cloned()
        .collect();
    seconds.shuffle(rng);
    let mut out = PairCollection::empty(root.clone());
    for j in seconds {
        if out.len() >= target {
            break;
        }
        if !grid.is_good(&j, grid) {
            continue;
        }
        let levels: Vec<i32> = (j.level + grid.r as i32..=root.level)
            .filter(|&l| grid.deeply_embedded(&j, &grid.ancestor(&j, l)))
            .collect();
        let mut runs: Vec<Vec<i32>> = Vec::new();
        for l in levels {
            match runs.last_mut() {
                Some(run) if run.last() == Some(&(l - 1)) => run.push(l),
                _ => runs.push(vec![l]),
            }
        }
        if runs.is_empty() {
            continue;
        }
        let run = &runs[rng.random_range(0..runs.len())];
        let start = rng.random_range(0..run.len());
        let end = rng.random_range(start..run.len());
        for &l in &run[start..=end] {
            out.pairs.insert((grid.ancestor(&j, l), j.clone()));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{Atom, AtomicMeasure};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid() -> GridSpec {
        GridSpec::new(1, vec![0.0], (-24, 0), 8, 0.3).unwrap()
    }

    fn root() -> Cube {
        Cube { level: 0, index: vec![0] }
    }

    fn measure(points: &[(f64, f64)]) -> AtomicMeasure {
        AtomicMeasure::new(1, points.iter().map(|&(x, w)| Atom { x: vec![x], w }).collect()).unwrap()
    }

    fn example() -> WeightPair {
        let sigma = measure(&[(0.03, 1.0), (0.26, 2.0), (0.45, 0.5), (0.9, 3.0)]);
        let omega = measure(&[(0.6495, 1.0), (0.6497, 2.0), (0.6502, 1.0), (0.75, 1.0)]);
        WeightPair::new(&grid(), &sigma, &omega).unwrap()
    }

    fn j_cube(pair: &WeightPair) -> Cube {
        pair.omega.cube_of(0, -10)
    }

    #[test]
    fn admissibility_rejects_gaps_and_shallow_pairs() {
        let pair = example();
        let g = &pair.grid;
        let j = j_cube(&pair);
        let ups = [g.ancestor(&j, -1), root()];
        assert!(PairCollection::new(g, root(), ups.iter().map(|i| (i.clone(), j.clone()))).is_ok());
        let shallow = g.ancestor(&j, j.level + 1);
        assert!(PairCollection::new(g, root(), [(shallow, j.clone())]).is_err());
        let sigma = measure(&[(0.1, 1.0)]);
        let omega = measure(&[(0.7, 1.0), (0.7002, 1.0)]);
        let other = WeightPair::new(g, &sigma, &omega).unwrap();
        let k = other.omega.cube_of(0, -10);
        assert!(embedded(g, &k, &g.ancestor(&k, -2)) && embedded(g, &k, &root()));
        assert!(!embedded(g, &k, &g.ancestor(&k, -1)));
        let gapped = PairCollection::from_pairs(root(), [(g.ancestor(&k, -2), k.clone()), (root(), k)]);
        assert!(matches!(gapped.validate(g), Err(Error::Inadmissible(_))));
    }

    #[test]
    fn tent_mass_is_additive() {
        let pair = example();
        let g = &pair.grid;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = sample_collection(&pair, &root(), 20, &mut rng);
        let tent = TentMeasure::new(&pair.omega, &p);
        for k in pair.omega.cubes() {
            assert_eq!(tent.mass(g, k), tent.sum_inside(g, k));
        }
    }

    #[test]
    fn single_atom_second_coordinates_have_zero_size() {
        let sigma = measure(&[(0.1, 1.0), (0.9, 1.0)]);
        let omega = measure(&[(0.6495, 1.0)]);
        let pair = WeightPair::new(&grid(), &sigma, &omega).unwrap();
        let g = &pair.grid;
        let j = pair.omega.cube_of(0, -10);
        let i = g.ancestor(&j, 0);
        let p = PairCollection::new(g, root(), [(i, j)]).unwrap();
        assert_eq!(size_functional(&p, &pair, 0.0).unwrap().value_sq, 0.0);
        let d = size_lemma_decompose(&p, &pair, 0.0, 0.5).unwrap();
        assert_eq!(d.small.len(), 1);
        assert!(d.check(&p, &pair, 0.0).ok());
    }

    #[test]
    fn straddling_examples() {
        let pair = example();
        let g = &pair.grid;
        let j = j_cube(&pair);
        let i = g.ancestor(&j, -1);
        let p = PairCollection::new(g, root(), [(i.clone(), j.clone())]).unwrap();
        let at_root = straddles(&p, g, &[root()]).unwrap();
        assert_eq!(at_root.holds, i == root());
        let at_j = straddles(&p, g, std::slice::from_ref(&j)).unwrap();
        assert!(at_j.holds && !at_j.case_in);
        assert!(straddles(&PairCollection::empty(root()), g, &[]).unwrap().holds);
        let overlapping = [g.ancestor(&j, -2), g.ancestor(&j, -3)];
        assert!(matches!(straddles(&p, g, &overlapping), Err(Error::Overlap)));
    }
}
