//! Condition constants of the two-weight theorem: `𝒜_2^α` in its variants,
//! energy constants, and the functional energy machinery.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dyadic::{Cube, GridSpec};
use crate::error::{Error, Result};
use crate::haar::{analyze, difference_norm_x, energy};
use crate::kernel::KernelSpec;
use crate::measure::{
    dual_halfspace_poisson, halfspace_poisson, poisson_kernel, HalfSpaceAtom, HalfSpaceMeasure, Located, PoissonKind,
    WeightPair,
};
use crate::operator::{operator_norm, testing_constant, Direction};

/// Which `𝒜_2^α` quantity to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum A2Kind {
    /// `𝒫^α(Q, σ) |Q|_ω / |Q|^{1-α/n}`.
    TwoTailed,
    /// `|Q|_σ |Q|_ω / |Q|^{2(1-α/n)}`.
    Tailless,
}

/// A supremum over cubes with the cube attaining it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubeMax {
    /// The maximum.
    pub value: f64,
    /// Maximising cube.
    pub witness: Option<Cube>,
}

fn side_power(grid: &GridSpec, q: &Cube, alpha: f64) -> f64 {
    // |Q|^{1 - α/n} = ℓ(Q)^{n - α}
    grid.side(q).powf(grid.n as f64 - alpha)
}

/// `𝒫^α(Q, μ)` from a placed measure.
pub fn cal_p(loc: &Located, q: &Cube, alpha: f64) -> f64 {
    let c = loc.grid.center(q);
    let side = loc.grid.side(q);
    loc.mu
        .points()
        .map(|(x, w)| {
            let d = x.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            w * poisson_kernel(PoissonKind::CalP, loc.grid.n, alpha, side, d)
        })
        .sum()
}

/// `P^α(Q, 1_E μ)` for the atoms accepted by `keep`.
pub fn p_alpha(loc: &Located, q: &Cube, alpha: f64, keep: impl Fn(usize) -> bool) -> f64 {
    let c = loc.grid.center(q);
    let side = loc.grid.side(q);
    let n = loc.grid.n;
    let mut total = 0.0;
    for (i, a) in loc.mu.atoms.iter().enumerate() {
        if keep(i) {
            let d = a.x.iter().zip(&c).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt();
            total += a.w * poisson_kernel(PoissonKind::P, n, alpha, side, d);
        }
    }
    total
}

/// The `𝒜_2^α` term of one cube.
pub fn a2_term(pair: &WeightPair, alpha: f64, kind: A2Kind, dir: Direction, q: &Cube) -> f64 {
    let (s, w) = match dir {
        Direction::Forward => (&pair.sigma, &pair.omega),
        Direction::Dual => (&pair.omega, &pair.sigma),
    };
    let sp = side_power(&pair.grid, q, alpha);
    match kind {
        A2Kind::TwoTailed => cal_p(s, q, alpha) * w.mass(q) / sp,
        A2Kind::Tailless => s.mass(q) * w.mass(q) / (sp * sp),
    }
}

/// `𝒜_2^α`, its dual, or the tailless `A_2^α`, as a maximum over the enumeration.
pub fn a2_constant(pair: &WeightPair, alpha: f64, kind: A2Kind, dir: Direction) -> Result<CubeMax> {
    pair.grid.check_alpha(alpha)?;
    let cubes = pair.enumeration();
    if cubes.is_empty() {
        return Err(Error::EmptyEnumeration);
    }
    let mut best = CubeMax { value: 0.0, witness: None };
    for q in cubes {
        let v = a2_term(pair, alpha, kind, dir, &q);
        if best.witness.is_none() || v > best.value {
            best = CubeMax { value: v, witness: Some(q) };
        }
    }
    Ok(best)
}

/// Which energy functional to maximise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyForm {
    /// `Σ_r (P^α(Q_r, 1_{Q∖Q_r} σ) / ℓ(Q_r))^2 ‖𝖯_{Q_r}^ω x‖^2`, the theorem's condition.
    Theorem,
    /// `Σ_r |Q_r|_ω 𝖤(Q_r, ω)^2 P^α(Q_r, 1_Q σ)^2`, the form used by energy coronas.
    Corona,
}

/// Energy constant with its witness subpartition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    /// `ℰ_α` (the square root of the normalised maximum).
    pub value: f64,
    /// Top cube of the witness.
    pub top: Option<Cube>,
    /// Pieces of the witness subpartition (zero-score pieces omitted).
    pub pieces: Vec<Cube>,
    /// Depth budget used.
    pub depth: u32,
    /// Functional maximised.
    pub form: EnergyForm,
}

/// Precomputed pieces of the energy dynamic programme.
pub struct EnergyTables {
    /// `‖𝖯_R^ω x‖^2` for every ω-charged cube, summed over subcubes in the window.
    pub projection: BTreeMap<Cube, f64>,
}

impl EnergyTables {
    /// Builds the subtree sums of `‖Δ_J^ω x‖^2`.
    pub fn new(omega: &Located) -> Self {
        let mut cubes: Vec<Cube> = omega.cubes().cloned().collect();
        cubes.sort_by_key(|q| q.level);
        let mut projection: BTreeMap<Cube, f64> = BTreeMap::new();
        for q in &cubes {
            let own = if omega.count(q) >= 2 { difference_norm_x(omega, q) } else { 0.0 };
            *projection.entry(q.clone()).or_insert(0.0) += own;
            if q.level < omega.grid.k_max() {
                let v = projection[q];
                *projection.entry(omega.grid.parent(q)).or_insert(0.0) += v;
            }
        }
        EnergyTables { projection }
    }

    /// `‖𝖯_R^ω x‖^2` (zero for cubes without ω-atoms).
    pub fn projection(&self, r: &Cube) -> f64 {
        self.projection.get(r).copied().unwrap_or(0.0)
    }
}

/// Score of one piece `r` of a subpartition of `top`.
pub fn piece_score(
    sigma: &Located,
    omega: &Located,
    tables: &EnergyTables,
    alpha: f64,
    form: EnergyForm,
    top: &Cube,
    r: &Cube,
) -> f64 {
    if omega.count(r) < 2 {
        return 0.0;
    }
    let in_top: BTreeSet<usize> = sigma.atoms(top).iter().copied().collect();
    match form {
        EnergyForm::Theorem => {
            let inside: BTreeSet<usize> = sigma.atoms(r).iter().copied().collect();
            let p = p_alpha(sigma, r, alpha, |i| in_top.contains(&i) && !inside.contains(&i));
            let ratio = p / sigma.grid.side(r);
            ratio * ratio * tables.projection(r)
        }
        EnergyForm::Corona => {
            let p = p_alpha(sigma, r, alpha, |i| in_top.contains(&i));
            omega.mass(r) * energy(omega, r) * p * p
        }
    }
}

/// Best subpartition of `r` (pieces at most `depth` levels below `r`, inside the window).
#[allow(clippy::too_many_arguments)]
fn best_below(
    sigma: &Located,
    omega: &Located,
    tables: &EnergyTables,
    alpha: f64,
    form: EnergyForm,
    top: &Cube,
    r: &Cube,
    depth: u32,
) -> (f64, Vec<Cube>) {
    if omega.count(r) < 2 {
        return (0.0, Vec::new());
    }
    let own = piece_score(sigma, omega, tables, alpha, form, top, r);
    if depth == 0 || r.level <= omega.grid.k_min() {
        return (own, if own > 0.0 { vec![r.clone()] } else { Vec::new() });
    }
    let mut split = 0.0;
    let mut pieces = Vec::new();
    for (_, c) in omega.charged_children(r) {
        let (v, p) = best_below(sigma, omega, tables, alpha, form, top, &c, depth - 1);
        split += v;
        pieces.extend(p);
    }
    if own >= split {
        (own, if own > 0.0 { vec![r.clone()] } else { Vec::new() })
    } else {
        (split, pieces)
    }
}

/// `OPT(Q)` and its pieces: the best dyadic subpartition of `top` with pieces at depth `<= depth`.
pub fn best_subpartition(
    sigma: &Located,
    omega: &Located,
    tables: &EnergyTables,
    alpha: f64,
    form: EnergyForm,
    top: &Cube,
    depth: u32,
) -> (f64, Vec<Cube>) {
    best_below(sigma, omega, tables, alpha, form, top, top, depth)
}

/// Re-evaluates a witness: `(1/|Q|_σ) Σ_r score(Q_r)`.
pub fn energy_witness_value(
    pair: &WeightPair,
    alpha: f64,
    form: EnergyForm,
    dir: Direction,
    top: &Cube,
    pieces: &[Cube],
) -> f64 {
    let (s, w) = oriented(pair, dir);
    let tables = EnergyTables::new(w);
    let total: f64 = pieces.iter().map(|r| piece_score(s, w, &tables, alpha, form, top, r)).sum();
    total / s.mass(top)
}

fn oriented(pair: &WeightPair, dir: Direction) -> (&Located, &Located) {
    match dir {
        Direction::Forward => (&pair.sigma, &pair.omega),
        Direction::Dual => (&pair.omega, &pair.sigma),
    }
}

/// `ℰ_α` (forward) or `ℰ_α^*` (dual) with the given form and depth budget.
pub fn energy_constant(
    pair: &WeightPair,
    alpha: f64,
    dir: Direction,
    depth: u32,
    form: EnergyForm,
) -> Result<EnergyReport> {
    pair.grid.check_alpha(alpha)?;
    if depth == 0 {
        return Err(Error::InvalidArgument("depth budget must be at least 1".into()));
    }
    let (s, w) = oriented(pair, dir);
    let tables = EnergyTables::new(w);
    let tops: Vec<Cube> = pair.enumeration().into_iter().filter(|q| s.mass(q) > 0.0).collect();
    let scored: Vec<(f64, Cube, Vec<Cube>)> = tops
        .par_iter()
        .map(|q| {
            let (v, pieces) = best_subpartition(s, w, &tables, alpha, form, q, depth);
            (v / s.mass(q), q.clone(), pieces)
        })
        .collect();
    let mut best: Option<(f64, Cube, Vec<Cube>)> = None;
    for entry in scored {
        if best.as_ref().is_none_or(|b| entry.0 > b.0) {
            best = Some(entry);
        }
    }
    Ok(match best {
        Some((v, top, pieces)) => EnergyReport { value: v.sqrt(), top: Some(top), pieces, depth, form },
        None => EnergyReport { value: 0.0, top: None, pieces: Vec::new(), depth, form },
    })
}

/// Full depth budget of a grid window.
pub fn full_depth(grid: &GridSpec) -> u32 {
    (grid.k_max() - grid.k_min()).max(1) as u32
}

/// The constants of the theorem for one weight pair and kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantReport {
    /// Operator norm `𝔑_α`.
    #[serde(rename = "N")]
    pub n: f64,
    /// `𝒜_2^α`.
    #[serde(rename = "A2")]
    pub a2: f64,
    /// `𝒜_2^{α,*}`.
    #[serde(rename = "A2_star")]
    pub a2_star: f64,
    /// Tailless `A_2^α`.
    #[serde(rename = "A2_tailless")]
    pub a2_tailless: f64,
    /// `𝔗_α`.
    #[serde(rename = "T")]
    pub t: f64,
    /// `𝔗_α^*`.
    #[serde(rename = "Tstar")]
    pub t_star: f64,
    /// `ℰ_α`.
    #[serde(rename = "E")]
    pub e: f64,
    /// `ℰ_α^*`.
    #[serde(rename = "E_star")]
    pub e_star: f64,
    /// Kernel name.
    pub kernel: String,
    /// Truncation radius.
    pub truncation: f64,
    /// Number of enumerated cubes.
    pub enumerated_cubes: usize,
    /// Energy depth budget.
    pub energy_depth: u32,
    /// Maximising cube or subpartition per constant.
    pub witnesses: BTreeMap<String, Vec<Cube>>,
}

impl ConstantReport {
    /// `√(𝒜_2 + 𝒜_2^*) + 𝔗 + 𝔗^* + ℰ + ℰ^*`.
    pub fn package(&self) -> f64 {
        (self.a2 + self.a2_star).sqrt() + self.t + self.t_star + self.e + self.e_star
    }
}

/// Evaluates every constant of the theorem.
pub fn constants(pair: &WeightPair, k: &KernelSpec, depth: u32) -> Result<ConstantReport> {
    let alpha = k.alpha;
    let cubes = pair.enumeration();
    let a2 = a2_constant(pair, alpha, A2Kind::TwoTailed, Direction::Forward)?;
    let a2s = a2_constant(pair, alpha, A2Kind::TwoTailed, Direction::Dual)?;
    let a2t = a2_constant(pair, alpha, A2Kind::Tailless, Direction::Forward)?;
    let t = testing_constant(&pair.sigma, &pair.omega, k, Direction::Forward, &cubes)?;
    let ts = testing_constant(&pair.sigma, &pair.omega, k, Direction::Dual, &cubes)?;
    let e = energy_constant(pair, alpha, Direction::Forward, depth, EnergyForm::Theorem)?;
    let es = energy_constant(pair, alpha, Direction::Dual, depth, EnergyForm::Theorem)?;
    let norm = operator_norm(&pair.sigma.mu, &pair.omega.mu, k)?;
    let mut witnesses = BTreeMap::new();
    let one = |c: &Option<Cube>| c.iter().cloned().collect::<Vec<_>>();
    witnesses.insert("A2".to_string(), one(&a2.witness));
    witnesses.insert("A2_star".to_string(), one(&a2s.witness));
    witnesses.insert("A2_tailless".to_string(), one(&a2t.witness));
    witnesses.insert("T".to_string(), one(&t.witness));
    witnesses.insert("Tstar".to_string(), one(&ts.witness));
    let with_top = |r: &EnergyReport| one(&r.top).into_iter().chain(r.pieces.clone()).collect();
    witnesses.insert("E".to_string(), with_top(&e));
    witnesses.insert("E_star".to_string(), with_top(&es));
    Ok(ConstantReport {
        n: norm.value,
        a2: a2.value,
        a2_star: a2s.value,
        a2_tailless: a2t.value,
        t: t.value,
        t_star: ts.value,
        e: e.value,
        e_star: es.value,
        kernel: k.name(),
        truncation: k.truncation,
        enumerated_cubes: cubes.len(),
        energy_depth: depth,
        witnesses,
    })
}

/// Data of an `ℱ`-adapted family: the collections `𝒥(F)` and the functions `g_F` on ω-atoms.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdaptedFamily {
    /// `𝒥(F)` for each `F`.
    pub collections: BTreeMap<Cube, Vec<Cube>>,
    /// `g_F` as values on the ω-atoms.
    pub functions: BTreeMap<Cube, Vec<f64>>,
}

/// A failed condition of the `ℱ`-adapted definition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum AdaptedViolation {
    /// A cube of `𝒥(F)` is not deeply embedded in `F`.
    NotEmbedded {
        /// Stopping cube.
        f: Cube,
        /// Offending cube.
        j: Cube,
    },
    /// A Haar coefficient of `g_F` on `𝒥(F)` is negative.
    Negative {
        /// Stopping cube.
        f: Cube,
        /// Cube of the coefficient.
        j: Cube,
        /// Coefficient.
        value: f64,
    },
    /// A Haar coefficient of `g_F` is nonzero outside `𝒥(F)`.
    OutsideSupport {
        /// Stopping cube.
        f: Cube,
        /// Cube of the coefficient.
        j: Cube,
        /// Coefficient.
        value: f64,
    },
    /// The same cube belongs to two collections.
    Shared {
        /// Shared cube.
        j: Cube,
        /// First owner.
        first: Cube,
        /// Second owner.
        second: Cube,
    },
}

/// Outcome of [`f_adapted_check`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptedCheck {
    /// Whether conditions (1) and (2) hold.
    pub ok: bool,
    /// Every violation found.
    pub violations: Vec<AdaptedViolation>,
    /// Overlap constant `max_I ‖Σ_{(F, J*) ∈ ℬ_I} 1_{J*}‖_∞` of condition (3).
    pub overlap: usize,
}

/// Maximal cubes of a collection.
pub fn maximal_cubes(grid: &GridSpec, cubes: &[Cube]) -> Vec<Cube> {
    let mut out: Vec<Cube> =
        cubes.iter().filter(|j| !cubes.iter().any(|k| k != *j && grid.contains(k, j))).cloned().collect();
    out.sort();
    out.dedup();
    out
}

/// Checks the three conditions of an `ℱ`-adapted family; coefficients within `tol` of zero count as zero.
pub fn f_adapted_check(omega: &Located, family: &AdaptedFamily, tol: f64) -> AdaptedCheck {
    let grid = &omega.grid;
    let mut violations = Vec::new();
    let mut owner: BTreeMap<&Cube, &Cube> = BTreeMap::new();
    for (f, js) in &family.collections {
        for j in js {
            if !grid.deeply_embedded(j, f) {
                violations.push(AdaptedViolation::NotEmbedded { f: f.clone(), j: j.clone() });
            }
            if let Some(first) = owner.insert(j, f) {
                if first != f {
                    violations.push(AdaptedViolation::Shared { j: j.clone(), first: first.clone(), second: f.clone() });
                }
            }
        }
    }
    for (f, g) in &family.functions {
        let js: BTreeSet<&Cube> = family.collections.get(f).map(|v| v.iter().collect()).unwrap_or_default();
        let depth = (grid.k_max() - grid.k_min()) as u32;
        for ((q, _), c) in analyze(omega, g, Some(depth)).coefficients.map {
            if js.contains(&q) {
                if c < -tol {
                    violations.push(AdaptedViolation::Negative { f: f.clone(), j: q, value: c });
                }
            } else if c.abs() > tol {
                violations.push(AdaptedViolation::OutsideSupport { f: f.clone(), j: q, value: c });
            }
        }
    }
    let stars: Vec<(Cube, Cube)> = family
        .collections
        .iter()
        .flat_map(|(f, js)| maximal_cubes(grid, js).into_iter().map(move |j| (f.clone(), j)))
        .collect();
    let mut candidates: BTreeSet<Cube> = BTreeSet::new();
    for (f, j) in &stars {
        for k in j.level..=f.level {
            candidates.insert(grid.ancestor(j, k));
        }
    }
    let mut overlap = 0;
    for i in &candidates {
        let b: Vec<&Cube> =
            stars.iter().filter(|(f, j)| grid.contains(i, j) && grid.contains(f, i)).map(|(_, j)| j).collect();
        for j in &b {
            let m = b.iter().filter(|k| grid.contains(k, j)).count();
            overlap = overlap.max(m);
        }
    }
    AdaptedCheck { ok: violations.is_empty(), violations, overlap }
}

/// `μ = Σ_F Σ_{J*} ‖𝖯_{F,J*}^ω (x / ℓ(J*))‖^2 δ_{(c(J*), ℓ(J*))}`.
pub fn functional_energy_mu(omega: &Located, collections: &BTreeMap<Cube, Vec<Cube>>) -> HalfSpaceMeasure {
    let grid = &omega.grid;
    let mut atoms = Vec::new();
    for js in collections.values() {
        for star in maximal_cubes(grid, js) {
            let side = grid.side(&star);
            let proj: f64 = js.iter().filter(|j| grid.contains(&star, j)).map(|j| difference_norm_x(omega, j)).sum();
            atoms.push(HalfSpaceAtom { x: grid.center(&star), t: side, w: proj / (side * side) });
        }
    }
    HalfSpaceMeasure { n: grid.n, atoms }
}

/// Raw sides of the two Poisson testing inequalities for one cube `I`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoissonTesting {
    /// `∫ ℙ^α(1_I σ)^2 dμ` over the whole half space.
    pub lhs1: f64,
    /// `(A_2^α + ℰ_α^2) |I|_σ`.
    pub rhs1: f64,
    /// `∫ [ℙ^{α*}(t 1_Î μ)]^2 dσ`.
    pub lhs2: f64,
    /// `(𝒜_2^α + ℰ_α √𝒜_2^α) ∫_Î t^2 dμ`.
    pub rhs2: f64,
}

/// Evaluates both Poisson testing inequalities for the cube `i`.
pub fn poisson_testing_check(
    mu: &HalfSpaceMeasure,
    sigma: &Located,
    i: &Cube,
    alpha: f64,
    a2_tailless: f64,
    a2: f64,
    e: f64,
) -> Result<PoissonTesting> {
    let inside: Vec<usize> = sigma.atoms(i).to_vec();
    let restricted = crate::measure::AtomicMeasure {
        n: sigma.mu.n,
        atoms: inside.iter().map(|&k| sigma.mu.atoms[k].clone()).collect(),
    };
    let mut lhs1 = 0.0;
    for a in &mu.atoms {
        let v = halfspace_poisson(&restricted, &a.x, a.t, alpha)?;
        lhs1 += v * v * a.w;
    }
    let mut lhs2 = 0.0;
    for s in &sigma.mu.atoms {
        let v = dual_halfspace_poisson(mu, &s.x, alpha, &sigma.grid, i)?;
        lhs2 += v * v * s.w;
    }
    Ok(PoissonTesting {
        lhs1,
        rhs1: (a2_tailless + e * e) * sigma.mass(i),
        lhs2,
        rhs2: (a2 + e * a2.sqrt()) * mu.box_moment(&sigma.grid, i),
    })
}
