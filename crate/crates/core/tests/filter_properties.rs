mod common;

use common::{exp1_dictionary, exp1_kernel, exp1_signal, gauss_kernel, SEED, ETA1};
use kaflab_core::filters::{
    knlms_step, natural_klms_step, predict, select_top, selective_step, AdaptiveFilter, FilterKind, FilterState,
};
use kaflab_core::kernel::{gram, grid_dictionary, kernelized_input, Dictionary, GaussianKernel};
use kaflab_core::sim::{mc_learning_curve, McSetup};
use proptest::prelude::*;

fn transformed_gap(d: &Dictionary, k: GaussianKernel, eta: f64, seed: u64, steps: usize) -> f64 {
    let gf = gram(d, &k).unwrap();
    let mut src = exp1_signal().source(seed, 0).unwrap();
    let mut f = AdaptiveFilter::new(d, &gf, k, FilterKind::NaturalKlms, eta).unwrap();
    let mut at = vec![0.0; d.len()];
    let mut worst: f64 = 0.0;
    for _ in 0..steps {
        let s = src.next_sample();
        let kt = gf.g_inv_sqrt.matvec(&kernelized_input(d, &k, &s.u).unwrap());
        let rec = f.step(&s.u, s.d).unwrap();
        for (a, x) in at.iter_mut().zip(&kt) {
            *a += eta * rec.prior_error * x;
        }
        let mapped = gf.g_sqrt.matvec(&f.state().alpha);
        for (a, b) in mapped.iter().zip(&at) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

#[test]
fn transformed_equivalence_on_experiment_one() {
    let gap = transformed_gap(&exp1_dictionary(), exp1_kernel(), ETA1, SEED, 10_000);
    assert!(gap < 1e-8, "{gap}");
}

#[test]
fn prediction_examples() {
    let d = exp1_dictionary();
    let k = exp1_kernel();
    let mut s = FilterState::new(&d);
    assert_eq!(predict(&s, &k, &[0.3, 0.1]).unwrap(), 0.0);
    s.alpha[0] = 1.0;
    assert_eq!(predict(&s, &k, d.center(0)).unwrap(), 1.0);
}

#[test]
fn identity_gram_is_plain_klms() {
    let d = Dictionary::new(&[[-40.0, 0.0], [0.0, 0.0], [40.0, 0.0]]).unwrap();
    let k = GaussianKernel::new(0.7).unwrap();
    let gf = gram(&d, &k).unwrap();
    let s = FilterState::new(&d);
    let u = [0.2, -0.3];
    let (rec, s1) = natural_klms_step(&s, &gf, &k, &u, 0.5, 0.1).unwrap();
    let kap = kernelized_input(&d, &k, &u).unwrap();
    for (a, kk) in s1.alpha.iter().zip(&kap) {
        assert_eq!(*a, 0.1 * rec.prior_error * kk);
    }
}

#[test]
fn zero_error_leaves_state() {
    let d = exp1_dictionary();
    let k = exp1_kernel();
    let gf = gram(&d, &k).unwrap();
    let mut s = FilterState::new(&d);
    s.alpha.iter_mut().enumerate().for_each(|(i, a)| *a = 0.01 * i as f64);
    let u = [0.4, -0.2];
    let y = predict(&s, &k, &u).unwrap();
    let (_, a) = natural_klms_step(&s, &gf, &k, &u, y, 0.3).unwrap();
    let (_, b) = knlms_step(&s, &gf, &k, &u, y, 0.3, 1e-4).unwrap();
    let (_, c) = selective_step(&s, &gf, &k, &u, y, 0.3, 3).unwrap();
    for st in [a, b, c] {
        assert_eq!(st.alpha, s.alpha);
        assert_eq!(st.iteration, 1);
    }
}

#[test]
fn single_atom_selection_at_a_center() {
    let d = exp1_dictionary();
    let k = exp1_kernel();
    let gf = gram(&d, &k).unwrap();
    let s = FilterState::new(&d);
    let j = 12;
    let (rec, s1) = selective_step(&s, &gf, &k, d.center(j), 0.9, 0.2, 1).unwrap();
    for (i, a) in s1.alpha.iter().enumerate() {
        if i == j {
            assert!((a - 0.2 * rec.prior_error).abs() < 1e-15);
        } else {
            assert_eq!(*a, 0.0);
        }
    }
}

#[test]
fn knlms_single_center() {
    let d = Dictionary::new(&[[0.1, 0.2]]).unwrap();
    let k = GaussianKernel::new(0.7).unwrap();
    let gf = gram(&d, &k).unwrap();
    let s = FilterState::new(&d);
    let (rec, s1) = knlms_step(&s, &gf, &k, &[0.1, 0.2], 0.6, 0.5, 1e-15).unwrap();
    assert!((s1.alpha[0] - 0.5 * rec.prior_error).abs() < 1e-14);
}

#[test]
fn knlms_runs_on_experiment_one() {
    let d = exp1_dictionary();
    let k = exp1_kernel();
    let gf = gram(&d, &k).unwrap();
    let setup = McSetup {
        signal: exp1_signal(),
        kernel: k,
        dictionary: &d,
        gram: &gf,
        filter: FilterKind::Knlms { eps: 1e-4 },
        eta: ETA1,
        seed: SEED,
    };
    let c = mc_learning_curve(&setup, 20, 5000).unwrap();
    assert!(c.mse.iter().all(|v| v.is_finite()));
    assert!(c.tail_mean(0.1) < c.mse[..10].iter().sum::<f64>() / 10.0);
}

#[test]
fn selective_single_atom_is_comparable() {
    let d = exp1_dictionary();
    let k = exp1_kernel();
    let gf = gram(&d, &k).unwrap();
    let mut setup = McSetup {
        signal: exp1_signal(),
        kernel: k,
        dictionary: &d,
        gram: &gf,
        filter: FilterKind::NaturalKlms,
        eta: ETA1,
        seed: SEED,
    };
    let full = mc_learning_curve(&setup, 100, 5000).unwrap().tail_mean(0.1);
    setup.filter = FilterKind::Selective { s_n: 1 };
    let sel = mc_learning_curve(&setup, 100, 5000).unwrap().tail_mean(0.1);
    let db = 10.0 * (sel / full).log10();
    assert!(db.abs() < 3.0, "full {full}, selective {sel}, {db} dB");
}

fn arb_dictionary() -> impl Strategy<Value = (Dictionary, GaussianKernel)> {
    (2usize..5, 0.4f64..1.0).prop_map(|(ppa, sigma)| {
        (grid_dictionary(&[-1.0, -1.0], &[1.0, 1.0], ppa).unwrap(), GaussianKernel::new(sigma).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn transformed_equivalence_holds((d, k) in arb_dictionary(), eta in 0.01f64..0.5, seed in any::<u64>()) {
        let gap = transformed_gap(&d, k, eta, seed, 10_000);
        prop_assert!(gap < 1e-8, "gap {}", gap);
    }

    #[test]
    fn selective_full_width_tracks_natural((d, k) in arb_dictionary(), eta in 0.01f64..0.5, seed in any::<u64>()) {
        let gf = gram(&d, &k).unwrap();
        let mut src = exp1_signal().source(seed, 0).unwrap();
        let mut a = FilterState::new(&d);
        let mut b = FilterState::new(&d);
        for _ in 0..500 {
            let s = src.next_sample();
            let (ra, na) = natural_klms_step(&a, &gf, &k, &s.u, s.d, eta).unwrap();
            let (rb, nb) = selective_step(&b, &gf, &k, &s.u, s.d, eta, d.len()).unwrap();
            prop_assert!((ra.prior_error - rb.prior_error).abs() < 1e-10);
            for (x, y) in na.alpha.iter().zip(&nb.alpha) {
                prop_assert!((x - y).abs() < 1e-10);
            }
            a = na;
            b = nb;
        }
    }

    #[test]
    fn prior_error_is_exact(
        (d, k) in arb_dictionary(),
        alpha_seed in prop::collection::vec(-2.0f64..2.0, 16),
        u in prop::array::uniform2(-1.5f64..1.5),
        target in -1.0f64..1.0,
        s_n in 1usize..4,
    ) {
        let gf = gram(&d, &k).unwrap();
        let mut s = FilterState::new(&d);
        for (a, v) in s.alpha.iter_mut().zip(alpha_seed.iter().cycle()) {
            *a = *v;
        }
        let y = predict(&s, &k, &u).unwrap();
        let explicit: f64 = s.alpha.iter().zip(d.centers()).map(|(a, c)| a * gauss_kernel(&u, c, k.sigma())).sum();
        prop_assert!((y - explicit).abs() < 1e-12);
        let (r1, _) = natural_klms_step(&s, &gf, &k, &u, target, 0.1).unwrap();
        let (r2, _) = selective_step(&s, &gf, &k, &u, target, 0.1, s_n.min(d.len())).unwrap();
        let (r3, _) = knlms_step(&s, &gf, &k, &u, target, 0.1, 1e-4).unwrap();
        for r in [r1, r2, r3] {
            prop_assert_eq!(r.prior_error, target - y);
            prop_assert_eq!(r.prediction, y);
        }
    }

    #[test]
    fn selection_is_a_function_of_input((d, k) in arb_dictionary(), u in prop::array::uniform2(-1.5f64..1.5), s_n in 1usize..4) {
        let kap = kernelized_input(&d, &k, &u).unwrap();
        let a = select_top(&kap, s_n);
        prop_assert_eq!(&a, &select_top(&kap, s_n));
        prop_assert_eq!(a.len(), s_n.min(d.len()));
        let floor = a.iter().map(|&i| kap[i]).fold(f64::INFINITY, f64::min);
        for (i, v) in kap.iter().enumerate() {
            if !a.contains(&i) {
                prop_assert!(*v <= floor);
            }
        }
    }
}
