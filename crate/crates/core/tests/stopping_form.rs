mod common;

use proptest::prelude::*;
use twl_core::kernel::KernelSpec;
use twl_core::lab::commands::random_function;
use twl_core::lab::{generate_clustered_pair, unit_cube, Profile, RunConfig};
use twl_core::measure::WeightPair;
use twl_core::stopping_form::{
    embedded, sample_collection, size_functional, size_lemma_decompose, stopping_form, stopping_form_norm,
    PairCollection,
};

fn close(a: f64, b: f64, rel: f64, scale: f64) -> bool {
    (a - b).abs() <= rel * scale.max(a.abs()).max(b.abs()) + f64::MIN_POSITIVE
}

/// A clustered pair on the deep grid with a nonempty sampled collection.
fn instance(seed: u64, profile: usize) -> Option<(WeightPair, PairCollection, KernelSpec)> {
    let profile = &Profile::defaults()[profile];
    let config = RunConfig::default();
    let grid = config.deep.grid(profile.n).unwrap();
    let mut rng = common::rng(seed);
    let (sigma, omega) = generate_clustered_pair(&mut rng, profile.n, 6, 24);
    let pair = WeightPair::new(&grid, &sigma, &omega).unwrap();
    let p = sample_collection(&pair, &unit_cube(profile.n), 12, &mut rng);
    (!p.is_empty()).then(|| (pair, p, profile.kernel_spec().unwrap()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sampled_collections_are_admissible(seed in any::<u64>(), profile in 0usize..4) {
        let Some((pair, p, _)) = instance(seed, profile) else { return Ok(()) };
        prop_assert!(p.validate(&pair.grid).is_ok());
        for (i, j) in &p.pairs {
            prop_assert!(embedded(&pair.grid, j, i));
            prop_assert!(common::cube_within(&pair.grid, &p.root, i));
        }
    }

    #[test]
    fn form_matches_its_definition(seed in any::<u64>(), profile in 0usize..4) {
        let Some((pair, p, k)) = instance(seed, profile) else { return Ok(()) };
        let mut rng = common::rng(seed ^ 1);
        let f = random_function(&mut rng, pair.sigma.mu.len());
        let g = random_function(&mut rng, pair.omega.mu.len());
        let lib = stopping_form(&p, &pair, &k, &f, &g).unwrap();
        let brute = common::brute_stopping_form(&p, &pair, &k, &f, &g);
        let norm = stopping_form_norm(&p, &pair, &k).unwrap();
        let product = common::l2(&pair.sigma.mu, &f) * common::l2(&pair.omega.mu, &g);
        for ((a, b), n) in lib.iter().zip(&brute).zip(&norm.components) {
            prop_assert!(close(*a, *b, 1e-9, n * product), "{a} vs {b}");
            prop_assert!(a.abs() <= n * product * (1.0 + 1e-9));
        }
    }

    #[test]
    fn norm_is_the_largest_singular_value(seed in any::<u64>(), profile in 0usize..4) {
        let Some((pair, p, k)) = instance(seed, profile) else { return Ok(()) };
        let norm = stopping_form_norm(&p, &pair, &k).unwrap();
        let brute = common::brute_stopping_norms(&p, &pair, &k);
        let largest = brute.iter().fold(0.0f64, |m, v| m.max(*v));
        for (a, b) in norm.components.iter().zip(&brute) {
            prop_assert!(close(*a, *b, 1e-8, largest), "{a} vs {b}");
        }
    }

    #[test]
    fn size_decomposition_contracts(seed in any::<u64>(), profile in 0usize..4, eps in prop::sample::select(vec![0.25, 0.5])) {
        let Some((pair, p, _)) = instance(seed, profile) else { return Ok(()) };
        let alpha = Profile::defaults()[profile].alpha;
        let d = size_lemma_decompose(&p, &pair, alpha, eps).unwrap();
        let check = d.check(&p, &pair, alpha);
        prop_assert!(check.partition && check.admissible && check.contraction);
        let total: usize = d.pieces().map(|q| q.len()).sum();
        prop_assert_eq!(total, p.len());
        let size = size_functional(&p, &pair, alpha).unwrap().value_sq;
        for s in &check.small_sizes_sq {
            prop_assert!(*s <= eps * size * (1.0 + 1e-12));
        }
    }
}
