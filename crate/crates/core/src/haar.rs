//! Weighted Haar systems, martingale differences, corona projections and energy.
//!
//! Functions on a measure are stored as one value per atom, in atom order.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dyadic::Cube;
use crate::measure::Located;

/// One orthonormal, mean-zero, child-constant function on a cube.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HaarFunction {
    /// Supporting cube.
    pub cube: Cube,
    /// Label: the multi-index `a ∈ Γ_n` on fully charged cubes, otherwise the
    /// `β` of the charged child that carries the positive value.
    pub a: Vec<u8>,
    /// Value on each child, indexed by child number; zero on uncharged children.
    pub values: Vec<f64>,
    /// Whether every child of the cube is charged.
    pub full: bool,
}

impl HaarFunction {
    /// Value at atom `i` (zero outside the cube).
    pub fn at(&self, loc: &Located, i: usize) -> f64 {
        if loc.cube_of(i, self.cube.level) != self.cube {
            return 0.0;
        }
        self.values[loc.child_number_of(&self.cube, i)]
    }

    /// `⟨f, h⟩_μ`.
    pub fn inner(&self, loc: &Located, f: &[f64]) -> f64 {
        loc.atoms(&self.cube)
            .iter()
            .map(|&i| f[i] * loc.mu.atoms[i].w * self.values[loc.child_number_of(&self.cube, i)])
            .sum()
    }

    /// Values on every atom.
    pub fn on_atoms(&self, loc: &Located) -> Vec<f64> {
        let mut out = vec![0.0; loc.mu.len()];
        for &i in loc.atoms(&self.cube) {
            out[i] = self.values[loc.child_number_of(&self.cube, i)];
        }
        out
    }
}

/// `h^a` for a multi-index `a` on child `beta`: `Π_k (±1)` with `-1` on the lower half when `a_k = 0`.
pub fn unweighted_sign(a: &[u8], beta: &[u8]) -> f64 {
    a.iter().zip(beta).map(|(&ak, &bk)| if ak == 0 && bk == 0 { -1.0 } else { 1.0 }).product()
}

/// The index set `Γ_n = {0,1}^n ∖ {(1,…,1)}` in lexicographic order.
pub fn gamma(n: usize) -> Vec<Vec<u8>> {
    (0..(1usize << n) - 1).map(|c| (0..n).map(|i| ((c >> (n - 1 - i)) & 1) as u8).collect()).collect()
}

/// The coordinate index `e_ℓ`: zero in slot `ℓ`, one elsewhere.
pub fn coordinate_index(n: usize, l: usize) -> Vec<u8> {
    (0..n).map(|i| u8::from(i != l)).collect()
}

fn child_masses(loc: &Located, q: &Cube) -> Vec<f64> {
    let mut m = vec![0.0; 1usize << loc.grid.n];
    for &i in loc.atoms(q) {
        m[loc.child_number_of(q, i)] += loc.mu.atoms[i].w;
    }
    m
}

/// The product-sign weighted Haar function `h_Q^{μ,a}` as child values; needs every child charged.
pub fn product_haar_values(masses: &[f64], a: &[u8], n: usize) -> Vec<f64> {
    let gamma: f64 = masses.iter().map(|m| 1.0 / m).sum::<f64>().sqrt();
    (0..masses.len())
        .map(|c| {
            let beta: Vec<u8> = (0..n).map(|i| ((c >> (n - 1 - i)) & 1) as u8).collect();
            unweighted_sign(a, &beta) / (masses[c] * gamma)
        })
        .collect()
}

/// The orthonormal Haar system of `q` for the placed measure.
///
/// Fully charged cubes use the product-sign functions, symmetrically orthonormalised
/// in `L^2(μ)` (they are already orthonormal in one dimension and whenever the
/// children have equal mass). Cubes with some uncharged child get the
/// Gram–Schmidt (Helmert) basis over the charged children in child order.
pub fn haar_system(loc: &Located, q: &Cube) -> Vec<HaarFunction> {
    let n = loc.grid.n;
    if q.level <= loc.grid.k_min() || loc.count(q) == 0 {
        return Vec::new();
    }
    let masses = child_masses(loc, q);
    let charged: Vec<usize> = (0..masses.len()).filter(|&c| masses[c] > 0.0).collect();
    if charged.len() < 2 {
        return Vec::new();
    }
    if charged.len() == masses.len() {
        let labels = gamma(n);
        let raw: Vec<Vec<f64>> = labels.iter().map(|a| product_haar_values(&masses, a, n)).collect();
        let d = raw.len();
        let s =
            DMatrix::from_fn(d, d, |r, c| (0..masses.len()).map(|b| raw[r][b] * raw[c][b] * masses[b]).sum::<f64>());
        let eig = s.symmetric_eigen();
        let inv_sqrt = &eig.eigenvectors
            * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()))
            * eig.eigenvectors.transpose();
        return labels
            .into_iter()
            .enumerate()
            .map(|(r, a)| {
                let values = (0..masses.len()).map(|b| (0..d).map(|k| inv_sqrt[(k, r)] * raw[k][b]).sum()).collect();
                HaarFunction { cube: q.clone(), a, values, full: true }
            })
            .collect();
    }
    let mut out = Vec::with_capacity(charged.len() - 1);
    let mut below = masses[charged[0]];
    for &c in &charged[1..] {
        let mc = masses[c];
        let norm = (1.0 / below + 1.0 / mc).sqrt();
        let mut values = vec![0.0; masses.len()];
        for &p in charged.iter().take_while(|&&p| p != c) {
            values[p] = -1.0 / (below * norm);
        }
        values[c] = 1.0 / (mc * norm);
        out.push(HaarFunction { cube: q.clone(), a: loc.grid.beta(c), values, full: false });
        below += mc;
    }
    out
}

/// `Δ_Q^μ f = Σ_{Q'} (𝔼_{Q'} f - 𝔼_Q f) 1_{Q'}` as values on every atom.
pub fn martingale_difference(loc: &Located, f: &[f64], q: &Cube) -> Vec<f64> {
    let mut out = vec![0.0; loc.mu.len()];
    add_martingale_difference(loc, f, q, &mut out);
    out
}

fn add_martingale_difference(loc: &Located, f: &[f64], q: &Cube, out: &mut [f64]) {
    if q.level <= loc.grid.k_min() {
        return;
    }
    let atoms = loc.atoms(q);
    if atoms.len() < 2 {
        return;
    }
    let k = 1usize << loc.grid.n;
    let (mut num, mut den) = (vec![0.0; k], vec![0.0; k]);
    let mut child = Vec::with_capacity(atoms.len());
    for &i in atoms {
        let c = loc.child_number_of(q, i);
        let w = loc.mu.atoms[i].w;
        num[c] += f[i] * w;
        den[c] += w;
        child.push(c);
    }
    let mean = num.iter().sum::<f64>() / den.iter().sum::<f64>();
    for (&i, &c) in atoms.iter().zip(&child) {
        out[i] += num[c] / den[c] - mean;
    }
}

/// `𝖯_𝒞^μ f = Σ_{Q ∈ 𝒞} Δ_Q^μ f`.
pub fn corona_projection<'c>(loc: &Located, f: &[f64], cubes: impl IntoIterator<Item = &'c Cube>) -> Vec<f64> {
    let mut out = vec![0.0; loc.mu.len()];
    for q in cubes {
        add_martingale_difference(loc, f, q, &mut out);
    }
    out
}

/// `‖g‖^2_{L^2(μ)}`.
pub fn norm_sq(loc: &Located, g: &[f64]) -> f64 {
    g.iter().zip(&loc.mu.atoms).map(|(v, a)| v * v * a.w).sum()
}

/// `⟨f, g⟩_μ`.
pub fn inner(loc: &Located, f: &[f64], g: &[f64]) -> f64 {
    f.iter().zip(g).zip(&loc.mu.atoms).map(|((a, b), at)| a * b * at.w).sum()
}

/// One entry of a serialised coefficient map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefEntry {
    /// Cube level.
    pub level: i32,
    /// Cube index.
    pub index: Vec<i64>,
    /// Haar label.
    pub a: Vec<u8>,
    /// Coefficient `⟨f, h_Q^{μ,a}⟩_μ`.
    pub coef: f64,
}

/// Sparse map `(Q, a) → f̂(Q, a)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<CoefEntry>", into = "Vec<CoefEntry>")]
pub struct CoefficientMap {
    /// The nonzero coefficients.
    pub map: BTreeMap<(Cube, Vec<u8>), f64>,
}

impl From<Vec<CoefEntry>> for CoefficientMap {
    fn from(v: Vec<CoefEntry>) -> Self {
        let map = v.into_iter().map(|e| ((Cube { level: e.level, index: e.index }, e.a), e.coef)).collect();
        CoefficientMap { map }
    }
}

impl From<CoefficientMap> for Vec<CoefEntry> {
    fn from(c: CoefficientMap) -> Self {
        c.map.into_iter().map(|((q, a), coef)| CoefEntry { level: q.level, index: q.index, a, coef }).collect()
    }
}

impl CoefficientMap {
    /// Number of stored coefficients.
    pub fn len(&self) -> usize {
        self.map.len()
    }

    /// Whether the map is empty.
    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// `Σ |f̂(Q, a)|^2`.
    pub fn energy(&self) -> f64 {
        self.map.values().map(|c| c * c).sum()
    }
}

/// A Haar expansion of a function down to a fixed depth below the top of the window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Expansion {
    /// Haar coefficients on cubes at levels `k_max, …, k_max - depth + 1`.
    pub coefficients: CoefficientMap,
    /// `𝔼_T^μ f` for every charged top cube `T`.
    pub means: Vec<(Cube, f64)>,
    /// Number of levels expanded.
    pub depth: u32,
    /// Whether the depth is below the separating depth, so the expansion loses information.
    pub lossy: bool,
}

/// Every charged cube at levels `k_max, …, k_max - depth + 1`.
pub fn cubes_to_depth(loc: &Located, depth: u32) -> Vec<Cube> {
    let floor = loc.grid.k_max() - depth as i32 + 1;
    loc.cubes().filter(|q| q.level >= floor).cloned().collect()
}

/// Default expansion depth: one past the separating depth, capped by the window.
pub fn default_depth(loc: &Located) -> u32 {
    let window = (loc.grid.k_max() - loc.grid.k_min()) as u32;
    loc.separating_depth().map_or(window, |s| (s + 1).min(window))
}

/// Haar coefficients of `f` to the given depth.
pub fn analyze(loc: &Located, f: &[f64], depth: Option<u32>) -> Expansion {
    let depth = depth.unwrap_or_else(|| default_depth(loc));
    let mut map = BTreeMap::new();
    for q in cubes_to_depth(loc, depth) {
        for h in haar_system(loc, &q) {
            let c = h.inner(loc, f);
            if c != 0.0 {
                map.insert((q.clone(), h.a), c);
            }
        }
    }
    let means = loc.tops().into_iter().map(|t| {
        let m = loc.average(f, &t);
        (t, m)
    });
    let lossy = loc.separating_depth().is_none_or(|s| depth < s);
    Expansion { coefficients: CoefficientMap { map }, means: means.collect(), depth, lossy }
}

/// Rebuilds a function on the atoms from its expansion.
pub fn synthesize(loc: &Located, e: &Expansion) -> Vec<f64> {
    let mut out = vec![0.0; loc.mu.len()];
    for (t, m) in &e.means {
        for &i in loc.atoms(t) {
            out[i] += m;
        }
    }
    let mut by_cube: BTreeMap<&Cube, Vec<(&Vec<u8>, f64)>> = BTreeMap::new();
    for ((q, a), c) in &e.coefficients.map {
        by_cube.entry(q).or_default().push((a, *c));
    }
    for (q, coefs) in by_cube {
        let system = haar_system(loc, q);
        for (a, c) in coefs {
            if let Some(h) = system.iter().find(|h| &h.a == a) {
                for &i in loc.atoms(q) {
                    out[i] += c * h.values[loc.child_number_of(q, i)];
                }
            }
        }
    }
    out
}

/// `Σ_T (𝔼_T f)^2 |T|_μ`, the mean term of Parseval's identity.
pub fn mean_energy(loc: &Located, e: &Expansion) -> f64 {
    e.means.iter().map(|(t, m)| m * m * loc.mass(t)).sum()
}

/// Coordinate functions `x^ℓ` on the atoms.
pub fn coordinate(loc: &Located, l: usize) -> Vec<f64> {
    loc.mu.atoms.iter().map(|a| a.x[l]).collect()
}

/// `∫_J |x - 𝔼_J x|^2 dμ`.
pub fn centered_moment(loc: &Located, j: &Cube) -> f64 {
    let atoms = loc.atoms(j);
    let mass = loc.mass(j);
    if mass <= 0.0 {
        return 0.0;
    }
    let n = loc.grid.n;
    let mut mean = vec![0.0; n];
    for &i in atoms {
        for (m, x) in mean.iter_mut().zip(&loc.mu.atoms[i].x) {
            *m += x * loc.mu.atoms[i].w / mass;
        }
    }
    atoms
        .iter()
        .map(|&i| {
            let a = &loc.mu.atoms[i];
            a.w * a.x.iter().zip(&mean).map(|(x, m)| (x - m) * (x - m)).sum::<f64>()
        })
        .sum()
}

/// Energy `𝖤(J, μ)^2 = 𝔼_J 𝔼_J |(x - z) / ℓ(J)|^2`, evaluated as the double sum.
pub fn energy(loc: &Located, j: &Cube) -> f64 {
    let atoms = loc.atoms(j);
    let mass = loc.mass(j);
    if mass <= 0.0 {
        return 0.0;
    }
    let side = loc.grid.side(j);
    let mut total = 0.0;
    for &p in atoms {
        for &q in atoms {
            let (a, b) = (&loc.mu.atoms[p], &loc.mu.atoms[q]);
            let d2: f64 = a.x.iter().zip(&b.x).map(|(u, v)| (u - v) * (u - v)).sum();
            total += a.w * b.w * d2;
        }
    }
    total / (mass * mass * side * side)
}

/// `‖Δ_J^μ x‖^2 = Σ_ℓ Σ_a |⟨x^ℓ, h_J^{μ,a}⟩|^2`.
pub fn difference_norm_x(loc: &Located, j: &Cube) -> f64 {
    (0..loc.grid.n)
        .map(|l| {
            let x = coordinate(loc, l);
            norm_sq(loc, &martingale_difference(loc, &x, j))
        })
        .sum()
}

/// `‖𝖯_H^μ x‖^2 = Σ_{J ∈ H} Σ_a |x̂(J, a)|^2`.
pub fn projection_norm<'c>(loc: &Located, cubes: impl IntoIterator<Item = &'c Cube>) -> f64 {
    cubes.into_iter().map(|j| difference_norm_x(loc, j)).sum()
}

/// `X̂^μ(J) = Σ_ℓ ⟨x^ℓ - c_J^ℓ, h_J^{μ,e_ℓ}⟩_μ` with the product-sign coordinate Haar functions.
///
/// When some child of `J` is uncharged the product-sign functions are undefined and
/// the value is `‖Δ_J^μ x‖`, which keeps `X̂ >= 0` and the bound
/// `X̂^2 <= n Σ_ℓ Σ_a |⟨x^ℓ, h_J^{μ,a}⟩|^2`.
pub fn x_hat(loc: &Located, j: &Cube) -> f64 {
    let n = loc.grid.n;
    if j.level <= loc.grid.k_min() || loc.count(j) < 2 {
        return 0.0;
    }
    let masses = child_masses(loc, j);
    if masses.contains(&0.0) {
        return difference_norm_x(loc, j).sqrt();
    }
    let c = loc.grid.center(j);
    let mut total = 0.0;
    for (l, cl) in c.iter().enumerate() {
        let h = product_haar_values(&masses, &coordinate_index(n, l), n);
        for &i in loc.atoms(j) {
            let a = &loc.mu.atoms[i];
            total += (a.x[l] - cl) * a.w * h[loc.child_number_of(j, i)];
        }
    }
    total
}

/// `⟨x, h_J^μ⟩_μ` in one dimension (zero when fewer than two children are charged).
pub fn x_inner_1d(loc: &Located, j: &Cube) -> f64 {
    let x = coordinate(loc, 0);
    haar_system(loc, j).first().map_or(0.0, |h| h.inner(loc, &x))
}
