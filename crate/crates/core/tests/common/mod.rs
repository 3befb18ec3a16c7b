//! Brute-force oracles shared by the integration tests.
//!
//! Every oracle works from atom coordinates and cube corners only, without the
//! placement tables, Haar systems or dynamic programmes of the library.

#![allow(dead_code)]

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use twl_core::corona::{PairClass, ParallelSplit, StoppingData};
use twl_core::kernel::KernelSpec;
use twl_core::measure::WeightPair;
use twl_core::operator::Direction;
use twl_core::stopping_form::PairCollection;
use twl_core::{Atom, AtomicMeasure, Cube, GridSpec};

/// Lattice resolution of generated coordinates.
pub const LATTICE_BITS: u32 = 20;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Measures with `count` distinct atoms on the `2^-20` lattice of the unit cube
/// and weights in `[10^-2, 10^2]`.
pub fn measure(n: usize, count: std::ops::Range<usize>) -> impl Strategy<Value = AtomicMeasure> {
    let scale = (1u64 << LATTICE_BITS) as f64;
    let atom = (prop::collection::vec(0u32..1 << LATTICE_BITS, n), -2.0f64..2.0)
        .prop_map(move |(x, e)| Atom { x: x.into_iter().map(|v| v as f64 / scale).collect(), w: 10f64.powf(e) });
    prop::collection::vec(atom, count)
        .prop_filter("distinct atoms", |atoms| {
            atoms.iter().enumerate().all(|(i, a)| atoms[..i].iter().all(|b| b.x != a.x))
        })
        .prop_map(move |atoms| AtomicMeasure { n, atoms })
}

/// Two measures without common atoms.
pub fn measure_pair(n: usize, count: std::ops::Range<usize>) -> impl Strategy<Value = (AtomicMeasure, AtomicMeasure)> {
    (measure(n, count.clone()), measure(n, count))
        .prop_filter("no common point masses", |(s, w)| s.atoms.iter().all(|a| w.atoms.iter().all(|b| a.x != b.x)))
}

/// Values in `±[10^-2, 10^2]` for `len` atoms.
pub fn function(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((any::<bool>(), -2.0f64..2.0), len)
        .prop_map(|v| v.into_iter().map(|(s, e)| if s { 10f64.powf(e) } else { -(10f64.powf(e)) }).collect())
}

/// `L^2(μ)` norm of values on the atoms.
pub fn l2(mu: &AtomicMeasure, f: &[f64]) -> f64 {
    mu.atoms.iter().zip(f).map(|(a, v)| a.w * v * v).sum::<f64>().sqrt()
}

/// `count` atoms uniform in the unit cube with weights in `[10^-2, 10^2]`.
pub fn uniform_measure<R: Rng>(rng: &mut R, n: usize, count: usize) -> AtomicMeasure {
    let atoms = (0..count)
        .map(|_| Atom { x: (0..n).map(|_| rng.random::<f64>()).collect(), w: 10f64.powf(rng.random_range(-2.0..2.0)) })
        .collect();
    AtomicMeasure { n, atoms }
}

/// Whether `x` lies in the half-open cube `q`.
pub fn inside(grid: &GridSpec, q: &Cube, x: &[f64]) -> bool {
    let corner = grid.corner(q);
    let side = grid.side(q);
    x.iter().zip(&corner).all(|(v, c)| *v >= *c && *v < c + side)
}

/// Whether the half-open cube `inner` lies in `outer`.
pub fn cube_within(grid: &GridSpec, outer: &Cube, inner: &Cube) -> bool {
    let (co, so) = (grid.corner(outer), grid.side(outer));
    let (ci, si) = (grid.corner(inner), grid.side(inner));
    co.iter().zip(&ci).all(|(a, b)| *b >= *a && b + si <= a + so)
}

/// Whether two half-open cubes share no point.
pub fn cubes_disjoint(grid: &GridSpec, a: &Cube, b: &Cube) -> bool {
    let (ca, sa) = (grid.corner(a), grid.side(a));
    let (cb, sb) = (grid.corner(b), grid.side(b));
    ca.iter().zip(&cb).any(|(x, y)| x + sa <= *y || y + sb <= *x)
}

/// The `2^n` children of `q` in an unshifted grid.
pub fn children(grid: &GridSpec, q: &Cube) -> Vec<Cube> {
    assert!(grid.shift.iter().all(|s| *s == 0.0), "oracles assume an unshifted grid");
    let n = grid.n;
    (0..1usize << n)
        .map(|c| Cube { level: q.level - 1, index: (0..n).map(|l| 2 * q.index[l] + ((c >> l) & 1) as i64).collect() })
        .collect()
}

fn indices_in(grid: &GridSpec, mu: &AtomicMeasure, q: &Cube) -> Vec<usize> {
    (0..mu.len()).filter(|&i| inside(grid, q, &mu.atoms[i].x)).collect()
}

fn mass_of(mu: &AtomicMeasure, idx: &[usize]) -> f64 {
    idx.iter().map(|&i| mu.atoms[i].w).sum()
}

/// `Σ_c |Q_c|_μ |𝔼_{Q_c} x - 𝔼_Q x|^2`, the squared norm of the martingale difference of `x` on `q`.
pub fn martingale_x_sq(grid: &GridSpec, mu: &AtomicMeasure, q: &Cube) -> f64 {
    let all = indices_in(grid, mu, q);
    let total = mass_of(mu, &all);
    if all.len() < 2 || total == 0.0 {
        return 0.0;
    }
    let mean =
        |idx: &[usize], l: usize| idx.iter().map(|&i| mu.atoms[i].x[l] * mu.atoms[i].w).sum::<f64>() / mass_of(mu, idx);
    let mut out = 0.0;
    for c in children(grid, q) {
        let idx = indices_in(grid, mu, &c);
        if idx.is_empty() {
            continue;
        }
        let m = mass_of(mu, &idx);
        for l in 0..grid.n {
            let d = mean(&idx, l) - mean(&all, l);
            out += m * d * d;
        }
    }
    out
}

/// `Σ_{J ⊆ R} ‖Δ_J x‖^2` over window cubes `J`.
pub fn projection_x_sq(grid: &GridSpec, mu: &AtomicMeasure, r: &Cube) -> f64 {
    if indices_in(grid, mu, r).len() < 2 {
        return 0.0;
    }
    let own = if r.level > grid.k_min() { martingale_x_sq(grid, mu, r) } else { 0.0 };
    if r.level <= grid.k_min() {
        return own;
    }
    own + children(grid, r).iter().map(|c| projection_x_sq(grid, mu, c)).sum::<f64>()
}

/// `P^α(R, μ restricted to keep)` by the defining sum.
pub fn poisson_direct(grid: &GridSpec, mu: &AtomicMeasure, r: &Cube, alpha: f64, keep: impl Fn(&[f64]) -> bool) -> f64 {
    let c = grid.center(r);
    let side = grid.side(r);
    mu.atoms
        .iter()
        .filter(|a| keep(&a.x))
        .map(|a| {
            let d = a.x.iter().zip(&c).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt();
            a.w * side / (side + d).powf(grid.n as f64 + 1.0 - alpha)
        })
        .sum()
}

/// Every subpartition of `r` into window cubes at most `depth` levels down.
///
/// Cubes with fewer than two `ω`-atoms score zero under every refinement, so
/// they are kept whole.
fn subpartitions(grid: &GridSpec, omega: &AtomicMeasure, r: &Cube, depth: u32) -> Vec<Vec<Cube>> {
    let mut out = vec![vec![r.clone()]];
    if depth == 0 || r.level <= grid.k_min() || indices_in(grid, omega, r).len() < 2 {
        return out;
    }
    let mut combos: Vec<Vec<Cube>> = vec![Vec::new()];
    for c in children(grid, r) {
        let options = subpartitions(grid, omega, &c, depth - 1);
        combos = combos
            .iter()
            .flat_map(|prefix| {
                options.iter().map(move |o| {
                    let mut v = prefix.clone();
                    v.extend(o.iter().cloned());
                    v
                })
            })
            .collect();
    }
    out.extend(combos);
    out
}

/// Every cube of the window meeting either support, with its ancestors.
pub fn window_cubes(grid: &GridSpec, sigma: &AtomicMeasure, omega: &AtomicMeasure) -> Vec<Cube> {
    let mut out: Vec<Cube> = Vec::new();
    for a in sigma.atoms.iter().chain(&omega.atoms) {
        for k in grid.k_min()..=grid.k_max() {
            let q = grid.locate(&a.x, k).unwrap();
            if !out.contains(&q) {
                out.push(q);
            }
        }
    }
    out
}

/// `ℰ_α` (or its dual) by enumerating every subpartition of every top cube.
pub fn exhaustive_energy(pair: &WeightPair, alpha: f64, dir: Direction, depth: u32) -> f64 {
    let grid = &pair.grid;
    let (s, w) = match dir {
        Direction::Forward => (&pair.sigma.mu, &pair.omega.mu),
        Direction::Dual => (&pair.omega.mu, &pair.sigma.mu),
    };
    let mut best: f64 = 0.0;
    for q in window_cubes(grid, s, w) {
        let top_mass = mass_of(s, &indices_in(grid, s, &q));
        if top_mass <= 0.0 {
            continue;
        }
        let mut scores: BTreeMap<Cube, f64> = BTreeMap::new();
        let mut score = |r: &Cube| -> f64 {
            *scores.entry(r.clone()).or_insert_with(|| {
                let proj = projection_x_sq(grid, w, r);
                if proj == 0.0 {
                    return 0.0;
                }
                let p = poisson_direct(grid, s, r, alpha, |x| inside(grid, &q, x) && !inside(grid, r, x));
                let t = p / grid.side(r);
                t * t * proj
            })
        };
        for part in subpartitions(grid, w, &q, depth) {
            let total: f64 = part.iter().map(&mut score).sum();
            best = best.max(total / top_mass);
        }
    }
    best.sqrt()
}

/// Checks a parallel splitting against the definitions, pair by pair.
pub fn check_split(fs: &StoppingData, gs: &StoppingData, split: &ParallelSplit) -> Result<(), String> {
    let grid = &fs.grid;
    let fcubes: Vec<&Cube> = fs.alpha.keys().collect();
    let gcubes: Vec<&Cube> = gs.alpha.keys().collect();
    if split.total() != fcubes.len() * gcubes.len() {
        return Err(format!("{} classified pairs for {} x {}", split.total(), fcubes.len(), gcubes.len()));
    }
    let smallest_containing = |family: &[&Cube], q: &Cube| -> Option<Cube> {
        family
            .iter()
            .filter(|c| cube_within(grid, c, q))
            .min_by(|a, b| grid.side(a).partial_cmp(&grid.side(b)).unwrap())
            .map(|c| (*c).clone())
    };
    let mut seen: BTreeMap<(Cube, Cube), usize> = BTreeMap::new();
    for (class, list) in
        [(PairClass::Near, &split.near), (PairClass::Disjoint, &split.disjoint), (PairClass::Far, &split.far)]
    {
        for (f, g) in list {
            *seen.entry((f.clone(), g.clone())).or_default() += 1;
            let near = (cube_within(grid, g, f) && smallest_containing(&gcubes, f).as_ref() == Some(g))
                || (cube_within(grid, f, g) && smallest_containing(&fcubes, g).as_ref() == Some(f));
            let expected = if near {
                PairClass::Near
            } else if cubes_disjoint(grid, f, g) {
                PairClass::Disjoint
            } else {
                PairClass::Far
            };
            if expected != class {
                return Err(format!("({f:?}, {g:?}) listed as {class:?}, expected {expected:?}"));
            }
        }
    }
    if seen.len() != fcubes.len() * gcubes.len() || seen.values().any(|&c| c != 1) {
        return Err("some pair is missing or listed twice".into());
    }
    Ok(())
}

/// `𝔼_Q^μ f` from the atoms in `q`.
fn average(grid: &GridSpec, mu: &AtomicMeasure, f: &[f64], q: &Cube) -> f64 {
    let idx = indices_in(grid, mu, q);
    let m = mass_of(mu, &idx);
    if m == 0.0 {
        return 0.0;
    }
    idx.iter().map(|&i| f[i] * mu.atoms[i].w).sum::<f64>() / m
}

/// The stopping form by its defining double sum, one value per kernel component.
pub fn brute_stopping_form(p: &PairCollection, pair: &WeightPair, k: &KernelSpec, f: &[f64], g: &[f64]) -> Vec<f64> {
    let grid = &pair.grid;
    let (sigma, omega) = (&pair.sigma.mu, &pair.omega.mu);
    let mut out = vec![0.0; k.components()];
    for (i, j) in &p.pairs {
        if i == &p.root || indices_in(grid, sigma, i).is_empty() {
            continue;
        }
        let parent = Cube { level: i.level + 1, index: i.index.iter().map(|v| v.div_euclid(2)).collect() };
        let coef = average(grid, sigma, f, i) - average(grid, sigma, f, &parent);
        let mean_j = average(grid, omega, g, j);
        for b in &omega.atoms {
            if !inside(grid, j, &b.x) {
                continue;
            }
            let child = children(grid, j).into_iter().find(|c| inside(grid, c, &b.x)).unwrap();
            let dg = average(grid, omega, g, &child) - mean_j;
            for a in &sigma.atoms {
                if inside(grid, &p.root, &a.x) && !inside(grid, i, &a.x) {
                    for (c, kv) in k.eval_or_zero(&b.x, &a.x).into_iter().enumerate() {
                        out[c] += coef * dg * b.w * kv * a.w;
                    }
                }
            }
        }
    }
    out
}

/// `𝔑_stop` per component from the atom-coordinate matrix of the brute-force form.
pub fn brute_stopping_norms(p: &PairCollection, pair: &WeightPair, k: &KernelSpec) -> Vec<f64> {
    let (sigma, omega) = (&pair.sigma.mu, &pair.omega.mu);
    let (ns, nw) = (sigma.len(), omega.len());
    let mut mats = vec![DMatrix::<f64>::zeros(nw, ns); k.components()];
    for x in 0..ns {
        let mut f = vec![0.0; ns];
        f[x] = 1.0 / sigma.atoms[x].w.sqrt();
        for y in 0..nw {
            let mut g = vec![0.0; nw];
            g[y] = 1.0 / omega.atoms[y].w.sqrt();
            for (c, v) in brute_stopping_form(p, pair, k, &f, &g).into_iter().enumerate() {
                mats[c][(y, x)] = v;
            }
        }
    }
    mats.into_iter().map(|m| m.singular_values().max()).collect()
}
