#![allow(dead_code)]

use kaflab_core::kernel::{grid_dictionary, Dictionary, GaussianKernel};
use kaflab_core::linalg::SymMatrix;
use kaflab_core::moments::{build_model, estimate_cross_stats, InputModel, MomentModel};
use kaflab_core::sim::{rng_for, stationary_covariance, InputGenerator, SignalSpec, SystemKind, SystemSimulator};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const SEED: u64 = 7_301;
pub const ETA1: f64 = 0.075;

pub fn exp1_signal() -> SignalSpec {
    SignalSpec {
        rho: 0.5,
        sigma_u: 0.5,
        system: SystemKind::Polynomial,
        sigma_nu: 0.05,
        burn_in: 1000,
    }
}

pub fn exp1_kernel() -> GaussianKernel {
    GaussianKernel::new(0.7).unwrap()
}

pub fn exp1_dictionary() -> Dictionary {
    grid_dictionary(&[-1.0, -1.0], &[1.0, 1.0], 5).unwrap()
}

pub fn exp1_input() -> InputModel {
    InputModel::new(stationary_covariance(0.5, 0.5, 2).unwrap()).unwrap()
}

pub fn exp1_model() -> MomentModel {
    let s = exp1_signal();
    let d = exp1_dictionary();
    let k = exp1_kernel();
    let plant = SystemSimulator::new(s.system, s.sigma_nu).unwrap();
    let input = InputGenerator::new(s.rho, s.sigma_u, SEED).unwrap();
    let cs = estimate_cross_stats(&plant, &input, s.burn_in, &d, &k, 1_000_000, 8).unwrap();
    build_model(&d, &k, &exp1_input(), &cs.p, cs.d2).unwrap()
}

/// i.i.d. draws from `N(0, R)` for a 2x2 covariance, via its hand-written
/// Cholesky factor.
pub struct Gaussian2 {
    l: [[f64; 2]; 2],
    rng: ChaCha8Rng,
}

impl Gaussian2 {
    pub fn new(r: &SymMatrix, seed: u64) -> Self {
        let a = r[(0, 0)].sqrt();
        let b = r[(1, 0)] / a;
        let c = (r[(1, 1)] - b * b).sqrt();
        Gaussian2 {
            l: [[a, 0.0], [b, c]],
            rng: rng_for(seed, 99),
        }
    }

    pub fn draw(&mut self) -> [f64; 2] {
        let z0: f64 = self.rng.sample(StandardNormal);
        let z1: f64 = self.rng.sample(StandardNormal);
        [self.l[0][0] * z0, self.l[1][0] * z0 + self.l[1][1] * z1]
    }
}

/// Running mean and standard error of i.i.d. samples.
#[derive(Default, Clone, Copy)]
pub struct MeanSe {
    n: f64,
    sum: f64,
    sum2: f64,
}

impl MeanSe {
    pub fn push(&mut self, x: f64) {
        self.n += 1.0;
        self.sum += x;
        self.sum2 += x * x;
    }

    pub fn mean(&self) -> f64 {
        self.sum / self.n
    }

    pub fn stderr(&self) -> f64 {
        let m = self.mean();
        ((self.sum2 / self.n - m * m).max(0.0) * self.n / (self.n - 1.0) / self.n).sqrt()
    }
}

pub fn gauss_kernel(x: &[f64], y: &[f64], sigma: f64) -> f64 {
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    (-d2 / (2.0 * sigma * sigma)).exp()
}
