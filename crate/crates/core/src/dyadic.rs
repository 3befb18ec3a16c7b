//! Dyadic cubes in possibly shifted grids, skeletons and goodness.
//!
//! Coordinates live on a fixed-point lattice with [`FRAC_BITS`] fractional
//! bits, so every containment test and every skeleton distance that decides
//! `dist = 0` is exact. Floating point only enters when a distance is compared
//! against the irrational goodness threshold.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of fractional bits of the fixed-point lattice.
pub const FRAC_BITS: i32 = 96;
/// Smallest admissible level of a grid window.
pub const MIN_LEVEL: i32 = -32;
/// Largest admissible level of a grid window.
pub const MAX_LEVEL: i32 = 28;
const COORD_LIMIT_BITS: i32 = 30;

/// Converts a float to the fixed-point lattice, failing unless exact.
pub fn to_fixed(x: f64) -> Result<i128> {
    if !x.is_finite() {
        return Err(Error::Unrepresentable(x));
    }
    if x == 0.0 {
        return Ok(0);
    }
    let bits = x.to_bits();
    let sign = if bits >> 63 == 1 { -1i128 } else { 1 };
    let exp_bits = ((bits >> 52) & 0x7ff) as i32;
    let frac = (bits & ((1u64 << 52) - 1)) as i128;
    let (mant, exp) = if exp_bits == 0 { (frac, -1074) } else { (frac | (1i128 << 52), exp_bits - 1075) };
    let shift = exp + FRAC_BITS;
    let value = if shift >= 0 {
        let top = 128 - mant.leading_zeros() as i32 + shift;
        if top > COORD_LIMIT_BITS + FRAC_BITS {
            return Err(Error::Unrepresentable(x));
        }
        mant << shift
    } else {
        let drop = -shift;
        if drop >= 128 || mant.trailing_zeros() < drop as u32 {
            return Err(Error::Unrepresentable(x));
        }
        mant >> drop
    };
    Ok(sign * value)
}

/// Converts a fixed-point value back to the nearest float.
pub fn from_fixed(v: i128) -> f64 {
    v as f64 * (-FRAC_BITS as f64).exp2()
}

fn pow2_fixed(k: i32) -> i128 {
    1i128 << (k + FRAC_BITS)
}

/// Side length `2^k` of a cube at level `k`.
pub fn side_length(k: i32) -> f64 {
    (k as f64).exp2()
}

/// A dyadic grid: dimension, shift, level window and goodness parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Ambient dimension.
    pub n: usize,
    /// Translation of the grid, one dyadic rational in `[0, 1)` per axis.
    pub shift: Vec<f64>,
    /// Admissible levels `(k_min, k_max)`; side lengths run over `2^k`.
    pub levels: (i32, i32),
    /// Goodness depth `r`.
    pub r: u32,
    /// Goodness exponent `eps`.
    pub eps: f64,
}

/// A dyadic cube `2^k([0,1)^n + m)` translated by the grid offset at level `k`.
///
/// A cube only has geometry relative to the [`GridSpec`] it was built from.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cube {
    /// Level `k`; the side length is `2^k`.
    pub level: i32,
    /// Integer index `m`.
    pub index: Vec<i64>,
}

/// The skeleton `e(Q)`: the boundaries of the children of `Q`.
///
/// In one dimension this is the three points `{a, a + L/2, a + L}`; in higher
/// dimensions it is the union of the faces `{x_i = v} ∩ closure(Q)` over the
/// listed planes.
#[derive(Clone, Debug, PartialEq)]
pub struct Skeleton {
    /// Lower corner of `Q`.
    pub lower: Vec<f64>,
    /// Side length of `Q`.
    pub side: f64,
    /// For each axis the three plane coordinates `a_i, a_i + L/2, a_i + L`.
    pub planes: Vec<[f64; 3]>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { n: 1, shift: vec![0.0], levels: (-8, 4), r: 4, eps: 0.1 }
    }
}

impl GridSpec {
    /// Builds and validates a grid.
    pub fn new(n: usize, shift: Vec<f64>, levels: (i32, i32), r: u32, eps: f64) -> Result<Self> {
        let grid = GridSpec { n, shift, levels, r, eps };
        grid.validate()?;
        Ok(grid)
    }

    /// Unshifted grid in dimension `n` with the default window and goodness.
    pub fn standard(n: usize) -> Self {
        GridSpec { n, shift: vec![0.0; n], ..GridSpec::default() }
    }

    /// Checks every invariant of the grid.
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidGrid("dimension must be positive".into()));
        }
        if self.shift.len() != self.n {
            return Err(Error::InvalidGrid(format!("shift has {} components for n = {}", self.shift.len(), self.n)));
        }
        for &s in &self.shift {
            if !(0.0..1.0).contains(&s) {
                return Err(Error::InvalidGrid(format!("shift component {s} outside [0, 1)")));
            }
            to_fixed(s)?;
        }
        let (lo, hi) = self.levels;
        if lo > hi {
            return Err(Error::InvalidGrid(format!("k_min = {lo} exceeds k_max = {hi}")));
        }
        if lo < MIN_LEVEL || hi > MAX_LEVEL {
            return Err(Error::InvalidGrid(format!("levels must lie in [{MIN_LEVEL}, {MAX_LEVEL}], got [{lo}, {hi}]")));
        }
        if self.r == 0 {
            return Err(Error::InvalidGrid("goodness depth r must be positive".into()));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(Error::InvalidGrid(format!("eps = {} outside (0, 1)", self.eps)));
        }
        Ok(())
    }

    /// Checks `0 <= alpha < n` and `eps (n + 1 - alpha) < 1`.
    pub fn check_alpha(&self, alpha: f64) -> Result<()> {
        if !(alpha >= 0.0 && alpha < self.n as f64) {
            return Err(Error::AlphaOutOfRange { alpha, n: self.n });
        }
        let e = self.eps * (self.n as f64 + 1.0 - alpha);
        if e >= 1.0 {
            return Err(Error::GoodnessExponent(e));
        }
        Ok(())
    }

    /// Smallest admissible level.
    pub fn k_min(&self) -> i32 {
        self.levels.0
    }

    /// Largest admissible level.
    pub fn k_max(&self) -> i32 {
        self.levels.1
    }

    fn offset(&self, k: i32) -> Vec<i128> {
        let mask = pow2_fixed(k) - 1;
        self.shift.iter().map(|&s| to_fixed(s).expect("validated shift") & mask).collect()
    }

    /// Cube of level `k` containing the fixed-point point `x`.
    pub fn locate_fixed(&self, x: &[i128], k: i32) -> Cube {
        let off = self.offset(k);
        let index = x.iter().zip(&off).map(|(&xi, &oi)| ((xi - oi) >> (k + FRAC_BITS)) as i64).collect();
        Cube { level: k, index }
    }

    /// Cube of level `k` containing `x`.
    pub fn locate(&self, x: &[f64], k: i32) -> Result<Cube> {
        Ok(self.locate_fixed(&self.fixed_point(x)?, k))
    }

    /// Converts a point to lattice coordinates, checking its dimension.
    pub fn fixed_point(&self, x: &[f64]) -> Result<Vec<i128>> {
        if x.len() != self.n {
            return Err(Error::InvalidMeasure(format!(
                "point of dimension {} in a grid of dimension {}",
                x.len(),
                self.n
            )));
        }
        x.iter().map(|&v| to_fixed(v)).collect()
    }

    /// Lower corner of `q` on the lattice.
    pub fn corner_fixed(&self, q: &Cube) -> Vec<i128> {
        let off = self.offset(q.level);
        q.index.iter().zip(&off).map(|(&m, &o)| ((m as i128) << (q.level + FRAC_BITS)) + o).collect()
    }

    /// Lower corner of `q`.
    pub fn corner(&self, q: &Cube) -> Vec<f64> {
        self.corner_fixed(q).into_iter().map(from_fixed).collect()
    }

    /// Center `c_Q`.
    pub fn center(&self, q: &Cube) -> Vec<f64> {
        let half = pow2_fixed(q.level - 1);
        self.corner_fixed(q).into_iter().map(|c| from_fixed(c + half)).collect()
    }

    /// Side length `|Q|^{1/n}`.
    pub fn side(&self, q: &Cube) -> f64 {
        side_length(q.level)
    }

    /// Lebesgue measure `|Q|`.
    pub fn volume(&self, q: &Cube) -> f64 {
        ((q.level as f64) * self.n as f64).exp2()
    }

    /// Multi-index `beta` of child number `c` in the lexicographic order.
    pub fn beta(&self, c: usize) -> Vec<u8> {
        (0..self.n).map(|i| ((c >> (self.n - 1 - i)) & 1) as u8).collect()
    }

    /// The `2^n` children of `q`, ordered lexicographically in `beta`.
    pub fn children(&self, q: &Cube) -> Result<Vec<Cube>> {
        if q.level <= self.k_min() {
            return Err(Error::LevelUnderflow(q.level));
        }
        Ok(self.children_unchecked(q))
    }

    /// Children of `q` without the level-window check.
    pub fn children_unchecked(&self, q: &Cube) -> Vec<Cube> {
        let corner = self.corner_fixed(q);
        let half = pow2_fixed(q.level - 1);
        (0..1usize << self.n)
            .map(|c| {
                let beta = self.beta(c);
                let p: Vec<i128> = corner.iter().zip(&beta).map(|(&a, &b)| a + b as i128 * half).collect();
                self.locate_fixed(&p, q.level - 1)
            })
            .collect()
    }

    /// Position (child number) of `child` inside its parent.
    pub fn child_number(&self, child: &Cube) -> usize {
        let parent = self.parent(child);
        let pc = self.corner_fixed(&parent);
        let cc = self.corner_fixed(child);
        let mut c = 0usize;
        for (a, b) in pc.iter().zip(&cc) {
            c = (c << 1) | usize::from(b != a);
        }
        c
    }

    /// The parent of `q`.
    pub fn parent(&self, q: &Cube) -> Cube {
        self.ancestor(q, q.level + 1)
    }

    /// Ancestor of `q` at level `k >= q.level`.
    pub fn ancestor(&self, q: &Cube, k: i32) -> Cube {
        debug_assert!(k >= q.level);
        self.locate_fixed(&self.corner_fixed(q), k)
    }

    /// Whether `inner ⊆ outer`.
    pub fn contains(&self, outer: &Cube, inner: &Cube) -> bool {
        inner.level <= outer.level && self.ancestor(inner, outer.level) == *outer
    }

    /// Whether `x ∈ q` with half-open membership.
    pub fn contains_point(&self, q: &Cube, x: &[f64]) -> Result<bool> {
        Ok(self.locate(x, q.level)? == *q)
    }

    /// Whether two cubes of this grid are disjoint.
    pub fn disjoint(&self, a: &Cube, b: &Cube) -> bool {
        !self.contains(a, b) && !self.contains(b, a)
    }

    /// Skeleton `e(q)`.
    pub fn skeleton(&self, q: &Cube) -> Skeleton {
        let lower = self.corner(q);
        let side = self.side(q);
        let planes = lower.iter().map(|&a| [a, a + side / 2.0, a + side]).collect();
        Skeleton { lower, side, planes }
    }

    /// Distance from `j` (a cube of this grid) to the skeleton of `i`, a cube of `other`.
    pub fn dist_to_skeleton(&self, j: &Cube, other: &GridSpec, i: &Cube) -> f64 {
        let jl = self.corner_fixed(j);
        let js = pow2_fixed(j.level);
        let il = other.corner_fixed(i);
        let is = pow2_fixed(i.level);
        box_skeleton_distance(&jl, js, &il, is)
    }

    /// Goodness threshold `(|J|^{1/n})^eps (|I|^{1/n})^{1-eps}` for levels `kj`, `ki`.
    pub fn goodness_scale(&self, kj: i32, ki: i32) -> f64 {
        (self.eps * kj as f64 + (1.0 - self.eps) * ki as f64).exp2()
    }

    /// Whether `j` is `r`-good with respect to every larger cube of `other`.
    ///
    /// `j` is bad when some cube `I` of `other` with `|I|^{1/n} >= 2^r |J|^{1/n}`
    /// and level inside the window satisfies `dist(J, e(I)) <= ½ ℓ(J)^eps ℓ(I)^{1-eps}`.
    pub fn is_good(&self, j: &Cube, other: &GridSpec) -> bool {
        self.first_bad_witness(j, other).is_none()
    }

    /// A cube of `other` that makes `j` bad, if any.
    pub fn first_bad_witness(&self, j: &Cube, other: &GridSpec) -> Option<Cube> {
        let jl = self.corner_fixed(j);
        let js = pow2_fixed(j.level);
        for k in (j.level + self.r as i32)..=other.k_max() {
            let threshold = 0.5 * self.goodness_scale(j.level, k);
            let off = other.offset(k);
            let ranges: Vec<(i64, i64)> = jl
                .iter()
                .zip(&off)
                .map(|(&lo, &o)| {
                    let a = ((lo - o) >> (k + FRAC_BITS)) as i64;
                    let b = ((lo + js - o) >> (k + FRAC_BITS)) as i64;
                    (a - 1, b + 1)
                })
                .collect();
            let mut idx: Vec<i64> = ranges.iter().map(|r| r.0).collect();
            loop {
                let cand = Cube { level: k, index: idx.clone() };
                let il = other.corner_fixed(&cand);
                let d = box_skeleton_distance(&jl, js, &il, pow2_fixed(k));
                if d <= threshold {
                    return Some(cand);
                }
                let mut axis = 0;
                loop {
                    if axis == idx.len() {
                        break;
                    }
                    if idx[axis] < ranges[axis].1 {
                        idx[axis] += 1;
                        break;
                    }
                    idx[axis] = ranges[axis].0;
                    axis += 1;
                }
                if axis == idx.len() {
                    break;
                }
            }
        }
        None
    }

    /// The relation `J ⋐ I`: `J ⊂ I`, `ℓ(J) <= 2^{-r} ℓ(I)` and
    /// `dist(J, e(I)) >= ℓ(J)^eps ℓ(I)^{1-eps}`.
    pub fn deeply_embedded(&self, j: &Cube, i: &Cube) -> bool {
        j.level + self.r as i32 <= i.level
            && self.contains(i, j)
            && self.dist_to_skeleton(j, self, i) >= self.goodness_scale(j.level, i.level)
    }
}

fn interval_gap(lo: i128, hi: i128, a: i128, b: i128) -> i128 {
    if hi < a {
        a - hi
    } else if b < lo {
        lo - b
    } else {
        0
    }
}

/// Euclidean distance between the closed box `jl + [0, js]^n` and the skeleton
/// of the box `il + [0, is]^n`.
fn box_skeleton_distance(jl: &[i128], js: i128, il: &[i128], is: i128) -> f64 {
    let gaps: Vec<f64> = jl.iter().zip(il).map(|(&a, &b)| from_fixed(interval_gap(a, a + js, b, b + is))).collect();
    let total: f64 = gaps.iter().map(|g| g * g).sum();
    let mut best = f64::INFINITY;
    for (axis, (&a, &b)) in jl.iter().zip(il).enumerate() {
        let others = total - gaps[axis] * gaps[axis];
        for v in [b, b + is / 2, b + is] {
            let d = from_fixed(interval_gap(a, a + js, v, v));
            let sq = others + d * d;
            if sq < best {
                best = sq;
            }
        }
    }
    best.max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_point_round_trip() {
        for x in [0.0, 0.125, -3.5, 1.0 / 3.0, 1e-20, 12345.0625] {
            let v = to_fixed(x);
            if x.abs() >= 2f64.powi(-44) || x == 0.0 {
                assert_eq!(from_fixed(v.unwrap()), x);
            }
        }
        assert!(to_fixed(1e-40).is_err());
        assert!(to_fixed(f64::NAN).is_err());
        assert!(to_fixed(2f64.powi(40)).is_err());
    }

    #[test]
    fn children_of_unit_interval() {
        let g = GridSpec::standard(1);
        let q = Cube { level: 0, index: vec![0] };
        let ch = g.children(&q).unwrap();
        assert_eq!(g.corner(&ch[0]), vec![0.0]);
        assert_eq!(g.corner(&ch[1]), vec![0.5]);
        assert!(ch.iter().all(|c| c.level == -1 && g.parent(c) == q));
    }

    #[test]
    fn children_of_unit_square_follow_beta() {
        let g = GridSpec::standard(2);
        let q = Cube { level: 0, index: vec![0, 0] };
        let ch = g.children(&q).unwrap();
        let corners: Vec<Vec<f64>> = ch.iter().map(|c| g.corner(c)).collect();
        assert_eq!(corners, vec![vec![0.0, 0.0], vec![0.0, 0.5], vec![0.5, 0.0], vec![0.5, 0.5]]);
        for (c, child) in ch.iter().enumerate() {
            assert_eq!(g.child_number(child), c);
            let beta: Vec<f64> = g.beta(c).iter().map(|&b| b as f64 / 2.0).collect();
            assert_eq!(g.corner(child), beta);
        }
    }

    #[test]
    fn shifted_children() {
        let g = GridSpec::new(1, vec![0.25], (-8, 4), 4, 0.1).unwrap();
        let q = g.locate(&[0.25], 0).unwrap();
        assert_eq!(g.corner(&q), vec![0.25]);
        let ch = g.children(&q).unwrap();
        assert_eq!(g.corner(&ch[0]), vec![0.25]);
        assert_eq!(g.corner(&ch[1]), vec![0.75]);
        assert_eq!(g.side(&ch[1]), 0.5);
    }

    #[test]
    fn level_underflow() {
        let g = GridSpec::standard(1);
        let q = Cube { level: -8, index: vec![0] };
        assert!(matches!(g.children(&q), Err(Error::LevelUnderflow(-8))));
    }

    #[test]
    fn skeleton_of_unit_interval() {
        let g = GridSpec::standard(1);
        let s = g.skeleton(&Cube { level: 0, index: vec![0] });
        assert_eq!(s.planes, vec![[0.0, 0.5, 1.0]]);
        let s = g.skeleton(&Cube { level: 2, index: vec![3] });
        assert_eq!(s.planes, vec![[12.0, 14.0, 16.0]]);
    }

    #[test]
    fn deeply_embedded_examples() {
        let g = GridSpec::new(1, vec![0.0], (-12, 4), 2, 0.3).unwrap();
        let i = Cube { level: 0, index: vec![0] };
        assert!(!g.deeply_embedded(&i, &i));
        // [1/4, 1/4 + 1/128) sits at distance 0.242 from e(I); the threshold is 2^{-2.1}
        let j = g.locate(&[0.25], -7).unwrap();
        assert!(g.deeply_embedded(&j, &i));
        assert!(!g.deeply_embedded(&g.locate(&[0.25], -4).unwrap(), &i));
        let j = g.locate(&[0.0], -7).unwrap();
        assert!(!g.deeply_embedded(&j, &i));
        let j = g.locate(&[0.5], -7).unwrap();
        assert!(!g.deeply_embedded(&j, &i));
    }

    #[test]
    fn abutting_center_is_bad() {
        let g = GridSpec::new(1, vec![0.0], (-10, 0), 4, 0.1).unwrap();
        let j = g.locate(&[0.5], -6).unwrap();
        assert!(!g.is_good(&j, &g));
        assert!(g.first_bad_witness(&j, &g).is_some());
    }

    #[test]
    fn centered_cube_is_good() {
        // with eps = 0.7 the threshold 2^{-2.8} ℓ(I) is below the distance 3/16
        let g = GridSpec::new(1, vec![0.0], (-6, 0), 2, 0.7).unwrap();
        let j = g.locate(&[0.1875], -4).unwrap();
        assert!(g.deeply_embedded(&j, &Cube { level: 0, index: vec![0] }));
        let narrow = GridSpec::new(1, vec![0.0], (-6, -2), 4, 0.7).unwrap();
        let j = narrow.locate(&[0.203125], -6).unwrap();
        assert!(narrow.is_good(&j, &narrow));
    }
}
