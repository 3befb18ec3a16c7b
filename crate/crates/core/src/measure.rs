//! Atomic measures, their placement in a grid, and the Poisson functionals.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::dyadic::{Cube, GridSpec};
use crate::error::{Error, Result};

/// One weighted point mass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    /// Location in `R^n`.
    pub x: Vec<f64>,
    /// Positive mass.
    pub w: f64,
}

/// A finite positive combination of point masses, the stand-in for σ and ω.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtomicMeasure {
    /// Ambient dimension.
    pub n: usize,
    /// The atoms; locations are pairwise distinct.
    pub atoms: Vec<Atom>,
}

/// One atom `(x, t)` of a measure on the upper half space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HalfSpaceAtom {
    /// Horizontal location.
    pub x: Vec<f64>,
    /// Height, strictly positive.
    pub t: f64,
    /// Nonnegative mass.
    pub w: f64,
}

/// A finite measure on `R^{n+1}_+`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HalfSpaceMeasure {
    /// Ambient dimension of the boundary.
    pub n: usize,
    /// The atoms.
    pub atoms: Vec<HalfSpaceAtom>,
}

/// Which of the two fractional Poisson integrals to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PoissonKind {
    /// `P^α(Q, μ) = ∫ ℓ / (ℓ + |x - x_Q|)^{n+1-α} dμ`.
    P,
    /// `𝒫^α(Q, μ) = ∫ (ℓ / (ℓ + |x - x_Q|)^2)^{n-α} dμ`.
    CalP,
}

impl AtomicMeasure {
    /// Builds a measure, checking weights, dimensions and distinctness.
    pub fn new(n: usize, atoms: Vec<Atom>) -> Result<Self> {
        let mu = AtomicMeasure { n, atoms };
        mu.validate()?;
        Ok(mu)
    }

    /// The empty measure.
    pub fn empty(n: usize) -> Self {
        AtomicMeasure { n, atoms: Vec::new() }
    }

    /// Measure built from parallel slices of points and weights.
    pub fn from_points(n: usize, points: &[Vec<f64>], weights: &[f64]) -> Result<Self> {
        if points.len() != weights.len() {
            return Err(Error::InvalidMeasure("points and weights differ in length".into()));
        }
        let atoms = points.iter().zip(weights).map(|(x, &w)| Atom { x: x.clone(), w }).collect();
        AtomicMeasure::new(n, atoms)
    }

    /// Checks every invariant.
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidMeasure("dimension must be positive".into()));
        }
        let mut seen = HashSet::new();
        for a in &self.atoms {
            if a.x.len() != self.n {
                return Err(Error::InvalidMeasure(format!(
                    "atom of dimension {} in a measure of dimension {}",
                    a.x.len(),
                    self.n
                )));
            }
            if !(a.w > 0.0 && a.w.is_finite()) {
                return Err(Error::InvalidMeasure(format!("weight {} is not positive", a.w)));
            }
            if a.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidMeasure("non-finite coordinate".into()));
            }
            let key: Vec<u64> = a.x.iter().map(|v| (v + 0.0).to_bits()).collect();
            if !seen.insert(key) {
                return Err(Error::InvalidMeasure(format!("repeated atom at {:?}", a.x)));
            }
        }
        Ok(())
    }

    /// Parses the JSON measure format and validates it.
    pub fn from_json(text: &str) -> Result<Self> {
        let mu: AtomicMeasure = serde_json::from_str(text)?;
        mu.validate()?;
        Ok(mu)
    }

    /// Number of atoms.
    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    /// Whether there are no atoms.
    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Total mass.
    pub fn total(&self) -> f64 {
        self.atoms.iter().map(|a| a.w).sum()
    }

    /// Weights as a vector.
    pub fn weights(&self) -> Vec<f64> {
        self.atoms.iter().map(|a| a.w).collect()
    }

    /// The same atoms with every weight multiplied by `lambda > 0`.
    pub fn scaled(&self, lambda: f64) -> Self {
        let atoms = self.atoms.iter().map(|a| Atom { x: a.x.clone(), w: a.w * lambda }).collect();
        AtomicMeasure { n: self.n, atoms }
    }

    /// `|Q|_μ`, the mass of the half-open cube `q`.
    pub fn mass(&self, grid: &GridSpec, q: &Cube) -> Result<f64> {
        let mut total = 0.0;
        for a in &self.atoms {
            if grid.contains_point(q, &a.x)? {
                total += a.w;
            }
        }
        Ok(total)
    }

    /// Iterator of `(location, weight)` pairs.
    pub fn points(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.atoms.iter().map(|a| (a.x.as_slice(), a.w))
    }
}

/// Whether no atom location appears in both measures.
pub fn no_common_point_masses(sigma: &AtomicMeasure, omega: &AtomicMeasure) -> bool {
    common_point(sigma, omega).is_none()
}

/// A location carried by both measures, if any.
pub fn common_point(sigma: &AtomicMeasure, omega: &AtomicMeasure) -> Option<Vec<f64>> {
    let keys: HashSet<Vec<u64>> =
        sigma.atoms.iter().map(|a| a.x.iter().map(|v| (v + 0.0).to_bits()).collect()).collect();
    omega
        .atoms
        .iter()
        .find(|a| keys.contains(&a.x.iter().map(|v| (v + 0.0).to_bits()).collect::<Vec<_>>()))
        .map(|a| a.x.clone())
}

/// A measure placed in a grid: every window cube that carries atoms, with its atom list.
#[derive(Clone, Debug)]
pub struct Located {
    /// The grid.
    pub grid: GridSpec,
    /// The measure.
    pub mu: AtomicMeasure,
    cells: BTreeMap<Cube, Vec<usize>>,
    bottom: Vec<Cube>,
}

impl Located {
    /// Places every atom of `mu` at every level of the window of `grid`.
    pub fn new(grid: &GridSpec, mu: &AtomicMeasure) -> Result<Self> {
        if mu.n != grid.n {
            return Err(Error::InvalidMeasure(format!(
                "measure of dimension {} in a grid of dimension {}",
                mu.n, grid.n
            )));
        }
        let mut cells: BTreeMap<Cube, Vec<usize>> = BTreeMap::new();
        let mut bottom = Vec::with_capacity(mu.len());
        for (i, a) in mu.atoms.iter().enumerate() {
            let p = grid.fixed_point(&a.x)?;
            for k in grid.k_min()..=grid.k_max() {
                let q = grid.locate_fixed(&p, k);
                if k == grid.k_min() {
                    bottom.push(q.clone());
                }
                cells.entry(q).or_default().push(i);
            }
        }
        Ok(Located { grid: grid.clone(), mu: mu.clone(), cells, bottom })
    }

    /// Atom indices inside `q`, in increasing order; empty outside the window.
    pub fn atoms(&self, q: &Cube) -> &[usize] {
        self.cells.get(q).map_or(&[], |v| v.as_slice())
    }

    /// Atom indices inside `q` for any level, scanning when `q` is outside the window.
    pub fn atoms_any(&self, q: &Cube) -> Vec<usize> {
        if q.level >= self.grid.k_min() && q.level <= self.grid.k_max() {
            return self.atoms(q).to_vec();
        }
        if q.level < self.grid.k_min() {
            return (0..self.mu.len())
                .filter(|&i| self.grid.contains_point(q, &self.mu.atoms[i].x).unwrap_or(false))
                .collect();
        }
        (0..self.mu.len()).filter(|&i| self.grid.contains(q, &self.bottom[i])).collect()
    }

    /// `|Q|_μ`.
    pub fn mass(&self, q: &Cube) -> f64 {
        self.atoms(q).iter().map(|&i| self.mu.atoms[i].w).sum()
    }

    /// Number of atoms in `q`.
    pub fn count(&self, q: &Cube) -> usize {
        self.atoms(q).len()
    }

    /// Every window cube that carries at least one atom, in cube order.
    pub fn cubes(&self) -> impl Iterator<Item = &Cube> + '_ {
        self.cells.keys()
    }

    /// Cubes at the top level of the window that carry atoms.
    pub fn tops(&self) -> Vec<Cube> {
        self.cells.keys().filter(|q| q.level == self.grid.k_max()).cloned().collect()
    }

    /// Location of atom `i`.
    pub fn point(&self, i: usize) -> &[f64] {
        &self.mu.atoms[i].x
    }

    /// Weight of atom `i`.
    pub fn weight(&self, i: usize) -> f64 {
        self.mu.atoms[i].w
    }

    /// Cube of level `k` containing atom `i`.
    pub fn cube_of(&self, i: usize, k: i32) -> Cube {
        self.grid.ancestor(&self.bottom[i], k)
    }

    /// Child number of the child of `q` that contains atom `i`.
    pub fn child_number_of(&self, q: &Cube, i: usize) -> usize {
        self.grid.child_number(&self.cube_of(i, q.level - 1))
    }

    /// The charged children of `q` as `(child number, cube)`, in child order.
    pub fn charged_children(&self, q: &Cube) -> Vec<(usize, Cube)> {
        if q.level <= self.grid.k_min() {
            return Vec::new();
        }
        self.grid.children_unchecked(q).into_iter().enumerate().filter(|(_, c)| self.count(c) > 0).collect()
    }

    /// Smallest depth below `k_max` at which every cube holds at most one atom,
    /// or `None` when the window is too shallow to separate the atoms.
    pub fn separating_depth(&self) -> Option<u32> {
        let mut depth = None;
        for k in (self.grid.k_min()..=self.grid.k_max()).rev() {
            let ok = self.cells.iter().filter(|(q, _)| q.level == k).all(|(_, v)| v.len() <= 1);
            if ok {
                depth = Some((self.grid.k_max() - k) as u32);
                break;
            }
        }
        depth
    }

    /// `μ`-average of `f` (values per atom) over `q`; zero on uncharged cubes.
    pub fn average(&self, f: &[f64], q: &Cube) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for &i in self.atoms(q) {
            num += f[i] * self.mu.atoms[i].w;
            den += self.mu.atoms[i].w;
        }
        if den > 0.0 {
            num / den
        } else {
            0.0
        }
    }
}

/// A weight pair `(σ, ω)` placed in one grid, without common point masses.
#[derive(Clone, Debug)]
pub struct WeightPair {
    /// The shared grid.
    pub grid: GridSpec,
    /// `σ`, the measure on the input side.
    pub sigma: Located,
    /// `ω`, the measure on the output side.
    pub omega: Located,
}

impl WeightPair {
    /// Places both measures, rejecting shared atoms.
    pub fn new(grid: &GridSpec, sigma: &AtomicMeasure, omega: &AtomicMeasure) -> Result<Self> {
        grid.validate()?;
        if let Some(p) = common_point(sigma, omega) {
            return Err(Error::CommonPointMass(p));
        }
        Ok(WeightPair { grid: grid.clone(), sigma: Located::new(grid, sigma)?, omega: Located::new(grid, omega)? })
    }

    /// The pair with the roles of `σ` and `ω` exchanged.
    pub fn swapped(&self) -> Self {
        WeightPair { grid: self.grid.clone(), sigma: self.omega.clone(), omega: self.sigma.clone() }
    }

    /// Every window cube meeting the joint support; ancestors up to the top are included.
    pub fn enumeration(&self) -> Vec<Cube> {
        let mut all: Vec<Cube> = self.sigma.cubes().chain(self.omega.cubes()).cloned().collect();
        all.sort();
        all.dedup();
        all
    }
}

fn norm(x: &[f64], c: &[f64]) -> f64 {
    x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Single-atom Poisson kernel value for a cube of side `side` centred at `c`.
pub fn poisson_kernel(kind: PoissonKind, n: usize, alpha: f64, side: f64, dist: f64) -> f64 {
    match kind {
        PoissonKind::P => side / (side + dist).powf(n as f64 + 1.0 - alpha),
        PoissonKind::CalP => (side / ((side + dist) * (side + dist))).powf(n as f64 - alpha),
    }
}

/// Poisson integral of an arbitrary list of weighted points against a cube geometry.
pub fn poisson_points<'p>(
    kind: PoissonKind,
    n: usize,
    alpha: f64,
    center: &[f64],
    side: f64,
    points: impl IntoIterator<Item = (&'p [f64], f64)>,
) -> f64 {
    points.into_iter().map(|(x, w)| w * poisson_kernel(kind, n, alpha, side, norm(x, center))).sum()
}

fn check_alpha(n: usize, alpha: f64) -> Result<()> {
    if alpha >= 0.0 && alpha < n as f64 {
        Ok(())
    } else {
        Err(Error::AlphaOutOfRange { alpha, n })
    }
}

/// `P^α(Q, μ)` or `𝒫^α(Q, μ)`.
pub fn poisson(grid: &GridSpec, q: &Cube, mu: &AtomicMeasure, alpha: f64, kind: PoissonKind) -> Result<f64> {
    check_alpha(grid.n, alpha)?;
    Ok(poisson_points(kind, grid.n, alpha, &grid.center(q), grid.side(q), mu.points()))
}

/// `P^α(Q, 1_E μ)` for the atoms selected by `keep`.
pub fn poisson_restricted(
    grid: &GridSpec,
    q: &Cube,
    mu: &AtomicMeasure,
    alpha: f64,
    kind: PoissonKind,
    keep: impl Fn(usize) -> bool,
) -> f64 {
    let pts = mu.atoms.iter().enumerate().filter(|(i, _)| keep(*i)).map(|(_, a)| (a.x.as_slice(), a.w));
    poisson_points(kind, grid.n, alpha, &grid.center(q), grid.side(q), pts)
}

/// `P̃(K, μ) = Σ w |K|^2 / (|K| + |y - c_K|)^3`, one-dimensional only.
pub fn poisson_tilde(grid: &GridSpec, k: &Cube, mu: &AtomicMeasure) -> Result<f64> {
    if grid.n != 1 {
        return Err(Error::Dimension(grid.n));
    }
    let c = grid.center(k)[0];
    let l = grid.side(k);
    Ok(mu.atoms.iter().map(|a| a.w * l * l / (l + (a.x[0] - c).abs()).powi(3)).sum())
}

/// `ℙ^α ν(x, t) = ∫ t / (t^2 + |x - y|^2)^{(n+1-α)/2} dν(y)`.
pub fn halfspace_poisson(nu: &AtomicMeasure, x: &[f64], t: f64, alpha: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::InvalidArgument(format!("height t = {t} must be positive")));
    }
    check_alpha(nu.n, alpha)?;
    let e = (nu.n as f64 + 1.0 - alpha) / 2.0;
    Ok(nu.points().map(|(y, w)| w * t / (t * t + norm(x, y).powi(2)).powf(e)).sum())
}

impl HalfSpaceMeasure {
    /// Empty measure.
    pub fn empty(n: usize) -> Self {
        HalfSpaceMeasure { n, atoms: Vec::new() }
    }

    /// Checks `t > 0`, `w >= 0` and dimensions.
    pub fn validate(&self) -> Result<()> {
        for a in &self.atoms {
            if a.x.len() != self.n || !(a.t > 0.0) || !(a.w >= 0.0) {
                return Err(Error::InvalidMeasure(format!("bad half-space atom {a:?}")));
            }
        }
        Ok(())
    }

    /// Whether the atom lies in the box `Î = I × (0, ℓ(I)]`.
    pub fn in_box(&self, grid: &GridSpec, i: &Cube, atom: &HalfSpaceAtom) -> bool {
        atom.t <= grid.side(i) && grid.contains_point(i, &atom.x).unwrap_or(false)
    }

    /// `∫_Î t^2 dμ`.
    pub fn box_moment(&self, grid: &GridSpec, i: &Cube) -> f64 {
        self.atoms.iter().filter(|a| self.in_box(grid, i, a)).map(|a| a.w * a.t * a.t).sum()
    }
}

/// `ℙ^{α*}(t 1_Î μ)(x) = ∫_Î t^2 / (t^2 + |x - y|^2)^{(n+1-α)/2} dμ(y, t)`.
pub fn dual_halfspace_poisson(mu: &HalfSpaceMeasure, x: &[f64], alpha: f64, grid: &GridSpec, i: &Cube) -> Result<f64> {
    check_alpha(mu.n, alpha)?;
    let e = (mu.n as f64 + 1.0 - alpha) / 2.0;
    Ok(mu
        .atoms
        .iter()
        .filter(|a| mu.in_box(grid, i, a))
        .map(|a| a.w * a.t * a.t / (a.t * a.t + norm(x, &a.x).powi(2)).powf(e))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn delta(x: f64) -> AtomicMeasure {
        AtomicMeasure::new(1, vec![Atom { x: vec![x], w: 1.0 }]).unwrap()
    }

    #[test]
    fn mass_is_half_open() {
        let g = GridSpec::standard(1);
        let q = Cube { level: 0, index: vec![0] };
        assert_eq!(delta(0.0).mass(&g, &q).unwrap(), 1.0);
        assert_eq!(delta(1.0).mass(&g, &q).unwrap(), 0.0);
    }

    #[test]
    fn common_points() {
        let s = AtomicMeasure::new(1, vec![Atom { x: vec![0.0], w: 1.0 }, Atom { x: vec![1.0], w: 1.0 }]).unwrap();
        assert!(no_common_point_masses(&delta(0.0), &delta(1.0)));
        assert!(!no_common_point_masses(&s, &delta(1.0)));
    }

    #[test]
    fn poisson_examples() {
        let g = GridSpec::standard(1);
        let q = Cube { level: 0, index: vec![0] };
        for kind in [PoissonKind::P, PoissonKind::CalP] {
            assert_eq!(poisson(&g, &q, &delta(0.5), 0.0, kind).unwrap(), 1.0);
            assert_eq!(poisson(&g, &q, &delta(1.5), 0.0, kind).unwrap(), 0.25);
        }
        assert!(poisson(&g, &q, &delta(0.5), 1.0, PoissonKind::P).is_err());
    }

    #[test]
    fn tilde_examples() {
        let g = GridSpec::standard(1);
        let q = Cube { level: 0, index: vec![0] };
        assert_eq!(poisson_tilde(&g, &q, &delta(0.5)).unwrap(), 1.0);
        assert_eq!(poisson_tilde(&g, &q, &delta(1.5)).unwrap(), 0.125);
    }

    #[test]
    fn halfspace_examples() {
        assert_eq!(halfspace_poisson(&delta(0.0), &[0.0], 1.0, 0.0).unwrap(), 1.0);
        assert_eq!(halfspace_poisson(&delta(1.0), &[0.0], 1.0, 0.0).unwrap(), 0.5);
        assert!(halfspace_poisson(&delta(1.0), &[0.0], 0.0, 0.0).is_err());
    }

    #[test]
    fn dual_halfspace_examples() {
        let g = GridSpec::standard(1);
        let i = Cube { level: 1, index: vec![0] };
        let mu = HalfSpaceMeasure { n: 1, atoms: vec![HalfSpaceAtom { x: vec![0.5], t: 1.0, w: 1.0 }] };
        assert_eq!(dual_halfspace_poisson(&mu, &[0.5], 0.0, &g, &i).unwrap(), 1.0);
        let outside = Cube { level: 1, index: vec![1] };
        assert_eq!(dual_halfspace_poisson(&mu, &[0.5], 0.0, &g, &outside).unwrap(), 0.0);
    }

    #[test]
    fn located_lists_atoms() {
        let g = GridSpec::standard(1);
        let mu = AtomicMeasure::from_points(1, &[vec![0.125], vec![0.625], vec![0.75]], &[1.0, 2.0, 3.0]).unwrap();
        let loc = Located::new(&g, &mu).unwrap();
        let q = Cube { level: -1, index: vec![1] };
        assert_eq!(loc.atoms(&q), &[1, 2]);
        assert_eq!(loc.mass(&q), 5.0);
        assert_eq!(loc.separating_depth(), Some(6));
        let ch = loc.charged_children(&Cube { level: 0, index: vec![0] });
        assert_eq!(ch.len(), 2);
    }
}
