mod common;

use proptest::prelude::*;
use twl_core::kernel::{KernelFamily, KernelSpec};
use twl_core::operator::{
    bilinear_form, kernel_matrices, largest_singular_value, operator_norm, power_iteration, weighted_matrix,
};
use twl_core::AtomicMeasure;

fn kernels() -> impl Strategy<Value = KernelSpec> {
    prop_oneof![
        Just(KernelSpec::new(KernelFamily::Hilbert, 1, 0.0).unwrap()),
        (0.0f64..0.9).prop_map(|a| KernelSpec::new(KernelFamily::RieszVector, 1, a).unwrap()),
        (0.0f64..1.9).prop_map(|a| KernelSpec::new(KernelFamily::RieszVector, 2, a).unwrap()),
        (0usize..2, 0.0f64..1.9).prop_map(|(j, a)| KernelSpec::new(KernelFamily::Riesz(j), 2, a).unwrap()),
        Just(KernelSpec::new(KernelFamily::Cauchy, 2, 1.0).unwrap()),
    ]
}

type Instance = (KernelSpec, AtomicMeasure, AtomicMeasure, Vec<f64>, Vec<f64>);

fn instance() -> impl Strategy<Value = Instance> {
    kernels().prop_flat_map(|k| {
        common::measure_pair(k.n, 1..16).prop_flat_map(move |(s, w)| {
            let (ls, lw) = (s.len(), w.len());
            (Just(k), Just(s), Just(w), common::function(ls), common::function(lw))
        })
    })
}

/// `Σ_x Σ_y f(x) g(y) K(y, x) w_x v_y` by direct summation.
///
/// The Hilbert kernel is `K(y, x) = 1 / (x - y)`, the negative of the order-zero
/// Riesz kernel on the line.
fn brute_form(k: &KernelSpec, sigma: &AtomicMeasure, omega: &AtomicMeasure, f: &[f64], g: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; k.components()];
    for (x, fx) in sigma.atoms.iter().zip(f) {
        for (y, gy) in omega.atoms.iter().zip(g) {
            let d2: f64 = y.x.iter().zip(&x.x).map(|(a, b)| (a - b) * (a - b)).sum();
            let scale = d2.sqrt().powf(k.n as f64 + 1.0 - k.alpha);
            let values: Vec<f64> = match k.family {
                KernelFamily::Hilbert => vec![1.0 / (x.x[0] - y.x[0])],
                KernelFamily::Riesz(j) => vec![(y.x[j] - x.x[j]) / scale],
                KernelFamily::RieszVector => (0..k.n).map(|j| (y.x[j] - x.x[j]) / scale).collect(),
                KernelFamily::Cauchy => vec![(y.x[0] - x.x[0]) / scale, -(y.x[1] - x.x[1]) / scale],
            };
            for (o, v) in out.iter_mut().zip(values) {
                *o += fx * gy * v * x.w * y.w;
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn bilinear_form_is_the_double_sum((k, sigma, omega, f, g) in instance()) {
        let lib = bilinear_form(&sigma, &omega, &k, &f, &g).unwrap();
        let brute = brute_form(&k, &sigma, &omega, &f, &g);
        let mut scale = 0.0;
        for (a, fx) in sigma.atoms.iter().zip(&f) {
            for (b, gy) in omega.atoms.iter().zip(&g) {
                scale += (fx * gy * a.w * b.w).abs() * k.magnitude(&b.x, &a.x).unwrap();
            }
        }
        for (a, b) in lib.iter().zip(&brute) {
            prop_assert!((a - b).abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE));
        }
    }

    #[test]
    fn pairing_is_bounded_by_the_norm((k, sigma, omega, f, g) in instance()) {
        let norm = operator_norm(&sigma, &omega, &k).unwrap();
        let form = bilinear_form(&sigma, &omega, &k, &f, &g).unwrap();
        let product = common::l2(&sigma, &f) * common::l2(&omega, &g);
        for (b, n) in form.iter().zip(&norm.components) {
            prop_assert!(b.abs() <= n * product * (1.0 + 1e-10));
        }
        prop_assert!(norm.stacked <= norm.value * (1.0 + 1e-12));
        prop_assert!(norm.components.iter().all(|c| *c <= norm.stacked * (1.0 + 1e-12)));
    }

    #[test]
    fn power_iteration_agrees_with_svd((k, sigma, omega, _f, _g) in instance()) {
        for m in kernel_matrices(&sigma, &omega, &k).unwrap() {
            let w = weighted_matrix(&m, &sigma, &omega);
            let (svd, _) = largest_singular_value(&w).unwrap();
            let power = power_iteration(&w, 1e-13, 100_000).unwrap();
            prop_assert!((svd - power).abs() <= 1e-6 * svd.max(f64::MIN_POSITIVE), "svd {svd} power {power}");
        }
    }
}

#[test]
fn common_point_masses_are_rejected() {
    let k = KernelSpec::new(KernelFamily::Hilbert, 1, 0.0).unwrap();
    let sigma = AtomicMeasure::from_points(1, &[vec![0.25]], &[1.0]).unwrap();
    let omega = AtomicMeasure::from_points(1, &[vec![0.25], vec![0.5]], &[1.0, 2.0]).unwrap();
    assert!(operator_norm(&sigma, &omega, &k).is_err());
}
