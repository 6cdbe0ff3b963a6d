mod common;

use common::{exp1_dictionary, exp1_kernel, exp1_model, exp1_signal, MeanSe, SEED, ETA1};
use kaflab_core::filters::FilterKind;
use kaflab_core::kernel::gram;
use kaflab_core::linalg::{spectral_radius, Matrix};
use kaflab_core::sim::{
    ar1_stream, embed_input, mc_learning_curve, run_single, stationary_covariance, system1_step, InputGenerator,
    McSetup, Plant, SignalSource, SystemKind, SystemSimulator,
};

const BAND: f64 = 4.0;
const N: usize = 1_000_000;
const BATCHES: usize = 100;

/// Mean and batch-means standard error of a correlated series.
fn batch_mean(xs: &[f64]) -> (f64, f64) {
    let len = xs.len() / BATCHES;
    let means: Vec<f64> = xs.chunks(len).take(BATCHES).map(|c| c.iter().sum::<f64>() / len as f64).collect();
    let m = means.iter().sum::<f64>() / BATCHES as f64;
    let var = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (BATCHES - 1) as f64;
    (m, (var / BATCHES as f64).sqrt())
}

#[test]
fn white_input_variance() {
    let g = InputGenerator::new(0.0, 0.5, SEED).unwrap();
    let mut acc = MeanSe::default();
    for u in ar1_stream(&g, N) {
        acc.push(u * u);
    }
    assert!((acc.mean() - 0.25).abs() < BAND * acc.stderr());
}

#[test]
fn ar1_lag_one_correlation() {
    let g = InputGenerator::new(0.5, 0.5, SEED).unwrap();
    let u = ar1_stream(&g, N + 1);
    let prods: Vec<f64> = u.windows(2).map(|w| w[0] * w[1] / 0.25).collect();
    let (m, se) = batch_mean(&prods);
    assert!((m - 0.5).abs() < BAND * se, "{m} +- {se}");
}

#[test]
fn embedded_covariance_matches_closed_form() {
    let g = InputGenerator::new(0.5, 0.5, SEED + 1).unwrap();
    let v = embed_input(&ar1_stream(&g, N + 1));
    let want = stationary_covariance(0.5, 0.5, 2).unwrap();
    for (a, b) in [(0, 0), (0, 1), (1, 1)] {
        let xs: Vec<f64> = v.iter().map(|x| x[a] * x[b]).collect();
        let (m, se) = batch_mean(&xs);
        assert!((m - want[(a, b)]).abs() < BAND * se, "({a},{b}) {m} +- {se}");
    }
}

#[test]
fn streams_are_deterministic() {
    let g = InputGenerator::new(0.5, 0.5, SEED).unwrap();
    assert_eq!(ar1_stream(&g, 10_000), ar1_stream(&g, 10_000));
    let s = exp1_signal();
    let mut a = s.source(SEED, 3).unwrap();
    let mut b = s.source(SEED, 3).unwrap();
    for _ in 0..1000 {
        assert_eq!(a.next_sample(), b.next_sample());
    }
}

#[test]
fn polynomial_plant_noise_level() {
    let s = exp1_signal();
    let mut src = SignalSource::new(
        InputGenerator::new(s.rho, s.sigma_u, SEED).unwrap(),
        SystemSimulator::new(SystemKind::Polynomial, 0.05).unwrap(),
        kaflab_core::sim::rng_for(SEED, 1),
    );
    let mut clean = SystemSimulator::new(SystemKind::Polynomial, 0.0).unwrap();
    let mut acc = MeanSe::default();
    for _ in 0..N {
        let x = src.next_sample();
        let r = x.d - system1_step(&mut clean, x.u[0], x.u[1], 0.0);
        acc.push(r * r);
    }
    let sd = acc.mean().sqrt();
    // delta method: se(sd) = se(var) / (2 sd)
    assert!((sd - 0.05).abs() < BAND * acc.stderr() / (2.0 * sd), "{sd}");
}

#[test]
fn fluid_flow_plant_is_stable() {
    let companion = Matrix::from_rows(&[[1.4138, -0.6065], [1.0, 0.0]]).unwrap();
    let rho = spectral_radius(&companion).unwrap();
    assert!(rho < 1.0);
    assert!((rho - 0.6065f64.sqrt()).abs() < 1e-12);
    let mut sys = SystemSimulator::new(SystemKind::FluidFlow, 0.0).unwrap();
    let mut peak: f64 = 0.0;
    for n in 0..10_000 {
        let u = if n % 50 < 25 { 1.0 } else { -1.0 };
        let p = if (n + 49) % 50 < 25 { 1.0 } else { -1.0 };
        sys.respond(u, p, 0.0);
        peak = peak.max(sys.state().0.abs());
    }
    assert!(peak < 10.0);
}

#[test]
fn null_system_curve_is_zero() {
    let d = exp1_dictionary();
    let k = exp1_kernel();
    let gf = gram(&d, &k).unwrap();
    let mut signal = exp1_signal();
    signal.system = SystemKind::Null;
    signal.sigma_nu = 0.0;
    for filter in [FilterKind::NaturalKlms, FilterKind::Selective { s_n: 2 }, FilterKind::Knlms { eps: 1e-4 }] {
        let setup = McSetup { signal, kernel: k, dictionary: &d, gram: &gf, filter, eta: ETA1, seed: SEED };
        let c = mc_learning_curve(&setup, 5, 200).unwrap();
        assert!(c.mse.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn single_run_curve_and_determinism() {
    let d = exp1_dictionary();
    let k = exp1_kernel();
    let gf = gram(&d, &k).unwrap();
    let setup = McSetup {
        signal: exp1_signal(),
        kernel: k,
        dictionary: &d,
        gram: &gf,
        filter: FilterKind::NaturalKlms,
        eta: ETA1,
        seed: SEED,
    };
    let one = mc_learning_curve(&setup, 1, 300).unwrap();
    assert_eq!(one.mse, run_single(&setup, 0, 300).unwrap());
    let a = mc_learning_curve(&setup, 8, 300).unwrap();
    let b = mc_learning_curve(&setup, 8, 300).unwrap();
    assert_eq!(a, b);
    let other = McSetup { seed: SEED + 1, ..setup };
    assert_ne!(a.mse, mc_learning_curve(&other, 8, 300).unwrap().mse);
}

#[test]
fn initial_mse_is_signal_power() {
    let m = exp1_model();
    let setup = McSetup {
        signal: exp1_signal(),
        kernel: m.kernel,
        dictionary: &m.dictionary,
        gram: &m.gram,
        filter: FilterKind::NaturalKlms,
        eta: ETA1,
        seed: SEED,
    };
    let c = mc_learning_curve(&setup, 300, 2000).unwrap();
    let head = c.mse[..=10].iter().sum::<f64>() / 11.0;
    assert!((head / m.d2 - 1.0).abs() < 0.10, "{head} vs {}", m.d2);
    assert!(c.tail_mean(0.1) < head);
}
