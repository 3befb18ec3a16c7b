mod common;

use proptest::prelude::*;
use twl_core::haar::{analyze, difference_norm_x, haar_system, mean_energy, synthesize};
use twl_core::{AtomicMeasure, GridSpec, Located};

fn place(mu: &AtomicMeasure) -> Located {
    let grid = GridSpec::new(mu.n, vec![0.0; mu.n], (-24, 0), 8, 0.3).unwrap();
    Located::new(&grid, mu).unwrap()
}

fn dot(mu: &AtomicMeasure, f: &[f64], g: &[f64]) -> f64 {
    mu.atoms.iter().zip(f.iter().zip(g)).map(|(a, (u, v))| a.w * u * v).sum()
}

fn measure_and_function(n: usize) -> impl Strategy<Value = (AtomicMeasure, Vec<f64>)> {
    common::measure(n, 2..24).prop_flat_map(|mu| {
        let len = mu.len();
        (Just(mu), common::function(len))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn haar_functions_are_orthonormal(n in 1usize..=2, seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let mu = common::uniform_measure(&mut rng, n, 16);
        let loc = place(&mu);
        let all: Vec<Vec<f64>> = loc.cubes().flat_map(|q| haar_system(&loc, q)).map(|h| h.on_atoms(&loc)).collect();
        let ones = vec![1.0; mu.len()];
        for (a, h) in all.iter().enumerate() {
            prop_assert!(dot(&mu, h, &ones).abs() <= 1e-12 * common::l2(&mu, h).max(1.0));
            for (b, k) in all.iter().enumerate().take(a + 1) {
                let expected = if a == b { 1.0 } else { 0.0 };
                prop_assert!((dot(&mu, h, k) - expected).abs() <= 1e-12, "<h{a}, h{b}> = {}", dot(&mu, h, k));
            }
        }
    }

    #[test]
    fn parseval_and_reconstruction((mu, f) in (1usize..=2).prop_flat_map(measure_and_function)) {
        let loc = place(&mu);
        let e = analyze(&loc, &f, None);
        prop_assert!(!e.lossy);
        let norm_sq = common::l2(&mu, &f).powi(2);
        let parseval = e.coefficients.energy() + mean_energy(&loc, &e);
        prop_assert!((parseval - norm_sq).abs() <= 1e-10 * norm_sq.max(1.0));
        let back = synthesize(&loc, &e);
        let scale = f.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for (u, v) in f.iter().zip(&back) {
            prop_assert!((u - v).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn difference_norm_matches_martingale_sum(mu in (1usize..=2).prop_flat_map(|n| common::measure(n, 2..24))) {
        let loc = place(&mu);
        for q in loc.cubes() {
            let brute = if q.level > loc.grid.k_min() { common::martingale_x_sq(&loc.grid, &mu, q) } else { 0.0 };
            let lib = difference_norm_x(&loc, q);
            prop_assert!((lib - brute).abs() <= 1e-12 * brute.max(1e-300) + 1e-300, "{q:?}: {lib} vs {brute}");
        }
    }
}
