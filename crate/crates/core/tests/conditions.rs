mod common;

use proptest::prelude::*;
use twl_core::conditions::{a2_constant, energy_constant, energy_witness_value, A2Kind, EnergyForm};
use twl_core::measure::WeightPair;
use twl_core::operator::Direction;
use twl_core::{AtomicMeasure, GridSpec};

fn grid(n: usize) -> GridSpec {
    GridSpec::new(n, vec![0.0; n], (-8, 0), 4, 0.1).unwrap()
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()) + f64::MIN_POSITIVE
}

/// `sup_Q 𝒫^α(Q, σ) |Q|_ω / ℓ(Q)^{n-α}` over window cubes, by direct summation.
fn brute_a2(g: &GridSpec, sigma: &AtomicMeasure, omega: &AtomicMeasure, alpha: f64, tailless: bool) -> f64 {
    let n = g.n as f64;
    let mass = |mu: &AtomicMeasure, q| mu.atoms.iter().filter(|a| common::inside(g, q, &a.x)).map(|a| a.w).sum::<f64>();
    common::window_cubes(g, sigma, omega)
        .iter()
        .map(|q| {
            let side = g.side(q);
            let power = side.powf(n - alpha);
            if tailless {
                return mass(sigma, q) * mass(omega, q) / (power * power);
            }
            let c = g.center(q);
            let tail: f64 = sigma
                .atoms
                .iter()
                .map(|a| {
                    let d = a.x.iter().zip(&c).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt();
                    a.w * (side / ((side + d) * (side + d))).powf(n - alpha)
                })
                .sum();
            tail * mass(omega, q) / power
        })
        .fold(0.0, f64::max)
}

fn pair_and_alpha() -> impl Strategy<Value = (AtomicMeasure, AtomicMeasure, f64)> {
    (1usize..=2)
        .prop_flat_map(|n| (common::measure_pair(n, 1..10), 0.0..(n as f64 - 0.1)).prop_map(|((s, w), a)| (s, w, a)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn a2_is_the_cube_maximum((sigma, omega, alpha) in pair_and_alpha()) {
        let g = grid(sigma.n);
        let pair = WeightPair::new(&g, &sigma, &omega).unwrap();
        for (kind, tailless) in [(A2Kind::TwoTailed, false), (A2Kind::Tailless, true)] {
            let lib = a2_constant(&pair, alpha, kind, Direction::Forward).unwrap().value;
            prop_assert!(close(lib, brute_a2(&g, &sigma, &omega, alpha, tailless), 1e-12));
            let dual = a2_constant(&pair, alpha, kind, Direction::Dual).unwrap().value;
            prop_assert!(close(dual, brute_a2(&g, &omega, &sigma, alpha, tailless), 1e-12));
        }
    }

    #[test]
    fn energy_witness_replays((sigma, omega, alpha) in pair_and_alpha()) {
        let g = grid(sigma.n);
        let pair = WeightPair::new(&g, &sigma, &omega).unwrap();
        for form in [EnergyForm::Theorem, EnergyForm::Corona] {
            for dir in [Direction::Forward, Direction::Dual] {
                let e = energy_constant(&pair, alpha, dir, 8, form).unwrap();
                if let Some(top) = &e.top {
                    let replay = energy_witness_value(&pair, alpha, form, dir, top, &e.pieces);
                    prop_assert!(close(replay, e.value * e.value, 1e-12));
                }
            }
        }
    }

    #[test]
    fn energy_scales_like_a_square_root((sigma, omega, alpha) in pair_and_alpha(), ls in -2.0f64..2.0, lw in -2.0f64..2.0) {
        let g = grid(sigma.n);
        let (ls, lw) = (10f64.powf(ls), 10f64.powf(lw));
        let base = WeightPair::new(&g, &sigma, &omega).unwrap();
        let scaled = WeightPair::new(&g, &sigma.scaled(ls), &omega.scaled(lw)).unwrap();
        let e0 = energy_constant(&base, alpha, Direction::Forward, 8, EnergyForm::Theorem).unwrap().value;
        let e1 = energy_constant(&scaled, alpha, Direction::Forward, 8, EnergyForm::Theorem).unwrap().value;
        prop_assert!(close(e1, e0 * (ls * lw).sqrt(), 1e-10));
        let a0 = a2_constant(&base, alpha, A2Kind::TwoTailed, Direction::Forward).unwrap().value;
        let a1 = a2_constant(&scaled, alpha, A2Kind::TwoTailed, Direction::Forward).unwrap().value;
        prop_assert!(close(a1, a0 * ls * lw, 1e-12));
    }

    #[test]
    fn energy_vanishes_without_two_target_atoms(
        (sigma, omega, alpha) in (1usize..=2).prop_flat_map(|n| {
            (common::measure_pair(n, 1..2), 0.0..(n as f64 - 0.1)).prop_map(|((s, w), a)| (s, w, a))
        })
    ) {
        let pair = WeightPair::new(&grid(sigma.n), &sigma, &omega).unwrap();
        let e = energy_constant(&pair, alpha, Direction::Forward, 8, EnergyForm::Theorem).unwrap();
        prop_assert_eq!(e.value, 0.0);
    }
}

#[test]
fn single_pair_two_tailed_a2_closed_form() {
    // σ = δ_{1/4}, ω = δ_{3/4} on the line with α = 0. A cube [3/4, 3/4 + ℓ)
    // scores 1 / (1/2 + 3ℓ/2)^2, largest at the finest level ℓ = 2^-8, where
    // it is 4 · 256^2 / 259^2.
    let sigma = AtomicMeasure::from_points(1, &[vec![0.25]], &[1.0]).unwrap();
    let omega = AtomicMeasure::from_points(1, &[vec![0.75]], &[1.0]).unwrap();
    let pair = WeightPair::new(&grid(1), &sigma, &omega).unwrap();
    let a2 = a2_constant(&pair, 0.0, A2Kind::TwoTailed, Direction::Forward).unwrap();
    assert!(close(a2.value, 262_144.0 / 67_081.0, 1e-14));
    assert_eq!(a2.witness.unwrap().level, -8);
}
