//! Exact bilinear forms, operator norms and testing constants of `T_σ^α`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dyadic::Cube;
use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::measure::{common_point, AtomicMeasure, Located};

/// Largest matrix dimension handled by a dense SVD; larger ones use power iteration.
pub const SVD_LIMIT: usize = 512;
/// Relative tolerance of the power iteration.
pub const POWER_TOL: f64 = 1e-10;
/// Iteration cap of the power iteration.
pub const POWER_MAX_ITER: usize = 10_000;

/// Which side of the testing condition to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// `∫_Q |T(1_Q σ)|^2 dω <= 𝔗^2 |Q|_σ`.
    Forward,
    /// `∫_Q |T^*(1_Q ω)|^2 dσ <= 𝔗_*^2 |Q|_ω`.
    Dual,
}

/// Raw kernel matrices `K(y_j, x_i)`, one per component; rows are `ω`-atoms, columns `σ`-atoms.
pub fn kernel_matrices(sigma: &AtomicMeasure, omega: &AtomicMeasure, k: &KernelSpec) -> Result<Vec<DMatrix<f64>>> {
    k.validate()?;
    if let Some(p) = common_point(sigma, omega) {
        return Err(Error::CommonPointMass(p));
    }
    let (rows, cols, comps) = (omega.len(), sigma.len(), k.components());
    let row_values: Vec<Vec<f64>> = omega
        .atoms
        .par_iter()
        .map(|y| {
            let mut row = vec![0.0; cols * comps];
            for (i, x) in sigma.atoms.iter().enumerate() {
                let v = k.eval_or_zero(&y.x, &x.x);
                for (c, value) in v.into_iter().enumerate() {
                    row[c * cols + i] = value;
                }
            }
            row
        })
        .collect();
    Ok((0..comps).map(|c| DMatrix::from_fn(rows, cols, |j, i| row_values[j][c * cols + i])).collect())
}

/// `⟨T_σ^α f, g⟩_ω = Σ_i Σ_j f(x_i) g(y_j) K(y_j, x_i) w_i v_j`, one value per component.
pub fn bilinear_form(
    sigma: &AtomicMeasure,
    omega: &AtomicMeasure,
    k: &KernelSpec,
    f: &[f64],
    g: &[f64],
) -> Result<Vec<f64>> {
    if f.len() != sigma.len() || g.len() != omega.len() {
        return Err(Error::InvalidArgument("function length differs from atom count".into()));
    }
    let mats = kernel_matrices(sigma, omega, k)?;
    let fw = DVector::from_iterator(f.len(), f.iter().zip(&sigma.atoms).map(|(v, a)| v * a.w));
    let gv = DVector::from_iterator(g.len(), g.iter().zip(&omega.atoms).map(|(v, a)| v * a.w));
    Ok(mats.iter().map(|m| gv.dot(&(m * &fw))).collect())
}

/// Matrix `K(y_j, x_i) √(w_i v_j)` of one component, whose spectral norm is the
/// `L^2(σ) → L^2(ω)` norm of that component.
pub fn weighted_matrix(raw: &DMatrix<f64>, sigma: &AtomicMeasure, omega: &AtomicMeasure) -> DMatrix<f64> {
    DMatrix::from_fn(raw.nrows(), raw.ncols(), |j, i| raw[(j, i)] * (sigma.atoms[i].w * omega.atoms[j].w).sqrt())
}

/// How a largest singular value was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormMethod {
    /// Dense singular value decomposition.
    Svd,
    /// Power iteration on `A^T A`.
    Power,
}

/// Largest singular value by dense SVD below [`SVD_LIMIT`], power iteration above.
pub fn largest_singular_value(m: &DMatrix<f64>) -> Result<(f64, NormMethod)> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Ok((0.0, NormMethod::Svd));
    }
    if m.nrows().max(m.ncols()) <= SVD_LIMIT {
        let s = m.clone().singular_values();
        return Ok((s.iter().cloned().fold(0.0, f64::max), NormMethod::Svd));
    }
    Ok((power_iteration(m, POWER_TOL, POWER_MAX_ITER)?, NormMethod::Power))
}

/// Power iteration for the largest singular value of `m`.
pub fn power_iteration(m: &DMatrix<f64>, tol: f64, max_iter: usize) -> Result<f64> {
    let cols = m.ncols();
    if cols == 0 || m.nrows() == 0 {
        return Ok(0.0);
    }
    // a deterministic start with no special alignment to any basis vector
    let mut v = DVector::from_fn(cols, |i, _| 1.0 + ((i * 7919) % 101) as f64 / 101.0);
    v /= v.norm();
    let mut last = 0.0;
    for _ in 0..max_iter {
        let w = m.transpose() * (m * &v);
        let lambda = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        v = w / norm;
        if (lambda - last).abs() <= tol * lambda.abs() {
            return Ok(lambda.max(0.0).sqrt());
        }
        last = lambda;
    }
    Err(Error::NoConvergence(last.max(0.0).sqrt()))
}

/// Norm report of a (possibly vector valued) operator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    /// `𝔑 = (Σ_c 𝔑_c^2)^{1/2}` over the components.
    pub value: f64,
    /// Norm of each component.
    pub components: Vec<f64>,
    /// Norm of the stacked operator `f ↦ (T_1 f, …, T_m f)`.
    pub stacked: f64,
    /// Method used for the component norms.
    pub method: NormMethod,
}

/// `𝔑_α`, the `L^2(σ) → L^2(ω)` norm of `T_σ^α`.
///
/// For several components the reported value is `(Σ_c 𝔑_c^2)^{1/2}`, which
/// dominates both the stacked norm and every vector testing constant.
pub fn operator_norm(sigma: &AtomicMeasure, omega: &AtomicMeasure, k: &KernelSpec) -> Result<NormReport> {
    let mats = kernel_matrices(sigma, omega, k)?;
    let weighted: Vec<DMatrix<f64>> = mats.iter().map(|m| weighted_matrix(m, sigma, omega)).collect();
    let mut components = Vec::with_capacity(weighted.len());
    let mut method = NormMethod::Svd;
    for w in &weighted {
        let (s, m) = largest_singular_value(w)?;
        components.push(s);
        method = m;
    }
    let stacked = if weighted.len() == 1 {
        components[0]
    } else {
        let rows = weighted[0].nrows();
        let cols = weighted[0].ncols();
        let big = DMatrix::from_fn(rows * weighted.len(), cols, |r, c| weighted[r / rows.max(1)][(r % rows.max(1), c)]);
        largest_singular_value(&big)?.0
    };
    let value = components.iter().map(|s| s * s).sum::<f64>().sqrt();
    Ok(NormReport { value, components, stacked, method })
}

/// A testing constant with its maximising cube.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestingReport {
    /// `𝔗` (or `𝔗_*`).
    pub value: f64,
    /// Cube attaining the maximum.
    pub witness: Option<Cube>,
    /// Number of cubes with positive source mass that were scored.
    pub scored: usize,
}

/// Square of the testing ratio of one cube.
pub fn testing_ratio_sq(
    mats: &[DMatrix<f64>],
    sigma: &Located,
    omega: &Located,
    dir: Direction,
    q: &Cube,
) -> Option<f64> {
    let (src, dst) = match dir {
        Direction::Forward => (sigma, omega),
        Direction::Dual => (omega, sigma),
    };
    let src_atoms = src.atoms(q);
    let mass: f64 = src_atoms.iter().map(|&i| src.weight(i)).sum();
    if mass <= 0.0 {
        return None;
    }
    let mut total = 0.0;
    for &d in dst.atoms(q) {
        let mut sq = 0.0;
        for m in mats {
            let t: f64 = src_atoms
                .iter()
                .map(|&s| {
                    let entry = match dir {
                        Direction::Forward => m[(d, s)],
                        Direction::Dual => m[(s, d)],
                    };
                    entry * src.weight(s)
                })
                .sum();
            sq += t * t;
        }
        total += sq * dst.weight(d);
    }
    Some(total / mass)
}

/// `𝔗_α` or `𝔗_α^*` as a maximum over `cubes`.
pub fn testing_constant(
    sigma: &Located,
    omega: &Located,
    k: &KernelSpec,
    dir: Direction,
    cubes: &[Cube],
) -> Result<TestingReport> {
    if cubes.is_empty() {
        return Err(Error::EmptyEnumeration);
    }
    let mats = kernel_matrices(&sigma.mu, &omega.mu, k)?;
    let scores: Vec<(usize, f64)> = cubes
        .par_iter()
        .enumerate()
        .filter_map(|(idx, q)| testing_ratio_sq(&mats, sigma, omega, dir, q).map(|v| (idx, v)))
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for &(idx, v) in &scores {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((idx, v));
        }
    }
    Ok(TestingReport {
        value: best.map_or(0.0, |(_, v)| v.sqrt()),
        witness: best.map(|(idx, _)| cubes[idx].clone()),
        scored: scores.len(),
    })
}
