mod oracles;

use flim_core::classify::{train_svm_detailed, SvmParams};
use flim_core::Label;
use proptest::prelude::*;

fn labelled_points(max: usize) -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Label>)> {
    (2usize..=max, 1usize..=3).prop_flat_map(|(n, d)| {
        (
            prop::collection::vec(prop::collection::vec(-3.0f64..3.0, d), n),
            prop::collection::vec(any::<bool>(), n),
        )
            .prop_map(|(x, flags)| {
                let mut y: Vec<Label> = flags.into_iter().map(|b| if b { Label::Abnormal } else { Label::Normal }).collect();
                y[0] = Label::Normal;
                y[1] = Label::Abnormal;
                (x, y)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn objective_matches_exact_dual((x, y) in labelled_points(6), c in prop::sample::select(vec![0.1, 1.0, 10.0])) {
        let params = SvmParams { c, tol: 1e-7, max_iters: 100_000, seed: 1 };
        let fit = train_svm_detailed(&x, &y, &params).unwrap();
        let z = oracles::zscore(&x);
        let primal = oracles::svm_primal(&z, &y, &fit.model.w, fit.model.b, c);
        let best = oracles::svm_dual_optimum(&z, &y, c);
        prop_assert!((primal - best).abs() <= 1e-4 * (1.0 + best.abs()), "primal {} vs dual optimum {}", primal, best);
        prop_assert!(fit.max_kkt_violation <= params.tol);
    }

    #[test]
    fn separable_sets_fit_exactly(n in 2usize..20, d in 1usize..4, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let dir: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-3);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..2 * n {
            let s = if i % 2 == 0 { 1.0 } else { -1.0 };
            let mut p: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let along: f64 = p.iter().zip(&dir).map(|(a, b)| a * b).sum::<f64>() / norm;
            for (pi, di) in p.iter_mut().zip(&dir) {
                *pi += (s * 2.0 - along) * di / norm;
            }
            x.push(p);
            y.push(if s > 0.0 { Label::Abnormal } else { Label::Normal });
        }
        let params = SvmParams { c: 100.0, ..SvmParams::default() };
        let fit = train_svm_detailed(&x, &y, &params).unwrap();
        for (xi, yi) in x.iter().zip(&y) {
            prop_assert_eq!(fit.model.predict(xi).unwrap().label, *yi);
        }
        prop_assert!(fit.max_kkt_violation <= params.tol);
    }
}
