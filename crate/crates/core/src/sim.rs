//! Signal generation for the two identification benchmarks and the
//! Monte-Carlo learning-curve harness.
//!
//! Every random quantity is drawn from a ChaCha8 stream selected by
//! `(seed, stream)`, so a run is reproducible bit-for-bit from its master seed
//! and run index alone.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::filters::{AdaptiveFilter, FilterKind};
use crate::kernel::{Dictionary, GaussianKernel, GramFactor};
use crate::linalg::SymMatrix;
use crate::math::{ceil, sqrt};
use crate::{Error, Result};

/// Samples discarded before any statistic or learning curve is recorded.
pub const DEFAULT_BURN_IN: usize = 1000;

/// Stream ids below this value are Monte-Carlo run indices.
pub const RUN_STREAMS: u64 = 1 << 32;
/// Base stream id for cross-statistic shards.
pub const CROSS_STAT_STREAM: u64 = 1 << 33;
/// Stream id of the input sequence used for coherence calibration.
pub const DICTIONARY_STREAM: u64 = 1 << 34;

/// ChaCha8 generator for `(seed, stream)`.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[inline]
fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// First-order autoregressive scalar input
/// `u_n = rho u_{n-1} + sigma_u sqrt(1 - rho^2) w_n`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InputGenerator {
    pub rho: f64,
    pub sigma_u: f64,
    pub seed: u64,
}

impl InputGenerator {
    pub fn new(rho: f64, sigma_u: f64, seed: u64) -> Result<Self> {
        if !(rho > -1.0 && rho < 1.0) {
            return Err(Error::invalid(format!("|rho| must be < 1, got {rho}")));
        }
        if !(sigma_u > 0.0 && sigma_u.is_finite()) {
            return Err(Error::invalid(format!("sigma_u must be positive, got {sigma_u}")));
        }
        Ok(InputGenerator { rho, sigma_u, seed })
    }

    /// Draw from the stationary law `N(0, sigma_u^2)`.
    pub fn stationary_sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.sigma_u * standard_normal(rng)
    }

    pub fn advance<R: Rng + ?Sized>(&self, prev: f64, rng: &mut R) -> f64 {
        self.rho * prev + self.sigma_u * sqrt(1.0 - self.rho * self.rho) * standard_normal(rng)
    }
}

/// `n` samples of the AR(1) stream, `u_0` drawn from the stationary law.
pub fn ar1_stream(g: &InputGenerator, n: usize) -> Vec<f64> {
    let mut rng = rng_for(g.seed, 0);
    let mut out = Vec::with_capacity(n);
    if n == 0 {
        return out;
    }
    let mut u = g.stationary_sample(&mut rng);
    out.push(u);
    for _ in 1..n {
        u = g.advance(u, &mut rng);
        out.push(u);
    }
    out
}

/// Tapped-delay embedding `u_n = [u_n, u_{n-1}]`, one vector per `n >= 1`.
pub fn embed_input(stream: &[f64]) -> Vec<[f64; 2]> {
    stream.windows(2).map(|w| [w[1], w[0]]).collect()
}

/// Covariance of `dim` consecutive AR(1) samples: `sigma_u^2 rho^|a-b|`.
pub fn stationary_covariance(rho: f64, sigma_u: f64, dim: usize) -> Result<SymMatrix> {
    if !(rho > -1.0 && rho < 1.0) {
        return Err(Error::invalid(format!("|rho| must be < 1, got {rho}")));
    }
    let s2 = sigma_u * sigma_u;
    Ok(SymMatrix::from_upper_fn(dim, |a, b| {
        let mut v = s2;
        for _ in 0..(b - a) {
            v *= rho;
        }
        v
    }))
}

/// Unknown system driven by the scalar input.
pub trait Plant {
    /// Output for the current and previous input samples plus additive noise.
    fn respond(&mut self, u_now: f64, u_prev: f64, noise: f64) -> f64;

    /// Standard deviation of the additive output noise.
    fn noise_sigma(&self) -> f64;

    /// Clears internal plant memory.
    fn reset(&mut self);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SystemKind {
    /// Memoryless polynomial of a two-tap FIR output.
    Polynomial,
    /// Second-order linear plant followed by a saturating nonlinearity.
    FluidFlow,
    /// `psi = 0`; the output is pure noise.
    Null,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SystemSimulator {
    pub kind: SystemKind,
    pub noise_sigma: f64,
    x1: f64,
    x2: f64,
}

impl SystemSimulator {
    pub fn new(kind: SystemKind, noise_sigma: f64) -> Result<Self> {
        if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
            return Err(Error::invalid(format!("noise sigma must be >= 0, got {noise_sigma}")));
        }
        Ok(SystemSimulator {
            kind,
            noise_sigma,
            x1: 0.0,
            x2: 0.0,
        })
    }

    /// Linear-plant state `(x_{n-1}, x_{n-2})`.
    pub fn state(&self) -> (f64, f64) {
        (self.x1, self.x2)
    }
}

/// `x = 0.5 u_n - 0.3 u_{n-1}`, `d = x - 0.5 x^2 + 0.1 x^3 + noise`.
pub fn system1_step(_sim: &mut SystemSimulator, u_now: f64, u_prev: f64, noise: f64) -> f64 {
    let x = 0.5 * u_now - 0.3 * u_prev;
    x - 0.5 * x * x + 0.1 * x * x * x + noise
}

/// `x_n = 0.1044 u_n + 0.0883 u_{n-1} + 1.4138 x_{n-1} - 0.6065 x_{n-2}`,
/// `d = 0.3163 x_n / sqrt(0.1 + 0.9 x_n^2) + noise`.
pub fn system2_step(sim: &mut SystemSimulator, u_now: f64, u_prev: f64, noise: f64) -> f64 {
    let x = 0.1044 * u_now + 0.0883 * u_prev + 1.4138 * sim.x1 - 0.6065 * sim.x2;
    sim.x2 = sim.x1;
    sim.x1 = x;
    0.3163 * x / sqrt(0.1 + 0.9 * x * x) + noise
}

impl Plant for SystemSimulator {
    fn respond(&mut self, u_now: f64, u_prev: f64, noise: f64) -> f64 {
        match self.kind {
            SystemKind::Polynomial => system1_step(self, u_now, u_prev, noise),
            SystemKind::FluidFlow => system2_step(self, u_now, u_prev, noise),
            SystemKind::Null => noise,
        }
    }

    fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    fn reset(&mut self) {
        self.x1 = 0.0;
        self.x2 = 0.0;
    }
}

/// One `(u_n, d_n)` pair of the identification stream.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample {
    pub u: [f64; 2],
    pub d: f64,
}

/// AR(1) input, delay embedding and plant wired together.
///
/// The input is primed with one stationary pre-sample so that `u_{n-1}` is
/// defined from the first emitted sample on.
#[derive(Clone, Debug)]
pub struct SignalSource<P: Plant> {
    input: InputGenerator,
    plant: P,
    rng: ChaCha8Rng,
    u_prev: f64,
}

impl<P: Plant> SignalSource<P> {
    pub fn new(input: InputGenerator, mut plant: P, mut rng: ChaCha8Rng) -> Self {
        plant.reset();
        let u_prev = input.stationary_sample(&mut rng);
        SignalSource {
            input,
            plant,
            rng,
            u_prev,
        }
    }

    #[inline]
    pub fn next_sample(&mut self) -> Sample {
        let u_now = self.input.advance(self.u_prev, &mut self.rng);
        let noise = self.plant.noise_sigma() * standard_normal(&mut self.rng);
        let d = self.plant.respond(u_now, self.u_prev, noise);
        let s = Sample {
            u: [u_now, self.u_prev],
            d,
        };
        self.u_prev = u_now;
        s
    }

    pub fn burn_in(&mut self, n: usize) {
        for _ in 0..n {
            self.next_sample();
        }
    }

    pub fn plant(&self) -> &P {
        &self.plant
    }
}

/// Input and plant parameters of one identification scenario.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SignalSpec {
    pub rho: f64,
    pub sigma_u: f64,
    pub system: SystemKind,
    pub sigma_nu: f64,
    pub burn_in: usize,
}

impl SignalSpec {
    pub fn input(&self, seed: u64) -> Result<InputGenerator> {
        InputGenerator::new(self.rho, self.sigma_u, seed)
    }

    pub fn plant(&self) -> Result<SystemSimulator> {
        SystemSimulator::new(self.system, self.sigma_nu)
    }

    /// Source on stream `stream` of `seed`, already burnt in.
    pub fn source(&self, seed: u64, stream: u64) -> Result<SignalSource<SystemSimulator>> {
        let mut src = SignalSource::new(self.input(seed)?, self.plant()?, rng_for(seed, stream));
        src.burn_in(self.burn_in);
        Ok(src)
    }

    /// Covariance of the embedded input vector.
    pub fn input_covariance(&self) -> Result<SymMatrix> {
        stationary_covariance(self.rho, self.sigma_u, 2)
    }

    /// `n` embedded input vectors from the dictionary-calibration stream.
    pub fn calibration_inputs(&self, seed: u64, n: usize) -> Result<Vec<[f64; 2]>> {
        let mut src = self.source(seed, DICTIONARY_STREAM)?;
        Ok((0..n).map(|_| src.next_sample().u).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CurveKind {
    Simulated,
    Theoretical,
}

/// MSE against iteration number.
#[derive(Clone, Debug, PartialEq)]
pub struct LearningCurve {
    pub mse: Vec<f64>,
    pub n_runs: usize,
    pub kind: CurveKind,
}

impl LearningCurve {
    pub fn len(&self) -> usize {
        self.mse.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mse.is_empty()
    }

    /// Mean over the trailing `fraction` of iterations (at least one point).
    pub fn tail_mean(&self, fraction: f64) -> f64 {
        let n = self.mse.len();
        let k = (ceil(n as f64 * fraction) as usize).clamp(1, n.max(1));
        self.mse[n - k..].iter().sum::<f64>() / k as f64
    }
}

/// Everything a Monte-Carlo run needs; dictionary and Gram are prebuilt.
#[derive(Clone, Copy, Debug)]
pub struct McSetup<'a> {
    pub signal: SignalSpec,
    pub kernel: GaussianKernel,
    pub dictionary: &'a Dictionary,
    pub gram: &'a GramFactor,
    pub filter: FilterKind,
    pub eta: f64,
    pub seed: u64,
}

/// Squared a-priori errors of run `run_index`.
pub fn run_single(setup: &McSetup<'_>, run_index: usize, n_iters: usize) -> Result<Vec<f64>> {
    if run_index as u64 >= RUN_STREAMS {
        return Err(Error::SizeCap {
            what: "run index",
            value: run_index,
            cap: RUN_STREAMS as usize,
        });
    }
    let mut src = setup.signal.source(setup.seed, run_index as u64)?;
    let mut filter = AdaptiveFilter::new(
        setup.dictionary,
        setup.gram,
        setup.kernel,
        setup.filter,
        setup.eta,
    )?;
    let mut out = Vec::with_capacity(n_iters);
    for n in 0..n_iters {
        let s = src.next_sample();
        let rec = filter.step(&s.u, s.d)?;
        let e2 = rec.prior_error * rec.prior_error;
        if !e2.is_finite() {
            return Err(Error::Diverged {
                last_finite: n.saturating_sub(1),
                run: Some(run_index),
            });
        }
        out.push(e2);
    }
    Ok(out)
}

/// Pointwise sum accumulator. Runs must be added in run-index order for the
/// result to be independent of how the runs were scheduled.
#[derive(Clone, Debug)]
pub struct CurveAccumulator {
    sum: Vec<f64>,
    runs: usize,
}

impl CurveAccumulator {
    pub fn new(n_iters: usize) -> Self {
        CurveAccumulator {
            sum: vec![0.0; n_iters],
            runs: 0,
        }
    }

    pub fn add(&mut self, run: &[f64]) {
        assert_eq!(run.len(), self.sum.len(), "run length mismatch");
        for (s, v) in self.sum.iter_mut().zip(run) {
            *s += v;
        }
        self.runs += 1;
    }

    pub fn finish(self) -> LearningCurve {
        let n = self.runs.max(1) as f64;
        LearningCurve {
            mse: self.sum.into_iter().map(|s| s / n).collect(),
            n_runs: self.runs,
            kind: CurveKind::Simulated,
        }
    }
}

/// Averages `n_runs` independent runs, sequentially.
pub fn mc_learning_curve(setup: &McSetup<'_>, n_runs: usize, n_iters: usize) -> Result<LearningCurve> {
    if n_runs == 0 {
        return Err(Error::invalid("need at least one Monte-Carlo run"));
    }
    let mut acc = CurveAccumulator::new(n_iters);
    for run in 0..n_runs {
        acc.add(&run_single(setup, run, n_iters)?);
    }
    Ok(acc.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedding_pairs() {
        assert_eq!(embed_input(&[1.0, 2.0, 3.0]), vec![[2.0, 1.0], [3.0, 2.0]]);
        assert!(embed_input(&[4.0; 5]).iter().all(|v| *v == [4.0, 4.0]));
    }

    #[test]
    fn covariance_formula() {
        let c = stationary_covariance(0.0, 0.5, 2).unwrap();
        assert_eq!(c, SymMatrix::from_diag(&[0.25, 0.25]));
        let c = stationary_covariance(0.5, 0.5, 2).unwrap();
        assert_eq!(c.as_slice(), &[0.25, 0.125, 0.125, 0.25]);
        assert!(stationary_covariance(1.0, 0.5, 2).is_err());
    }

    #[test]
    fn polynomial_plant() {
        let mut s = SystemSimulator::new(SystemKind::Polynomial, 0.0).unwrap();
        assert_eq!(system1_step(&mut s, 0.0, 0.0, 0.0), 0.0);
        let d = system1_step(&mut s, 1.0, 0.0, 0.0);
        assert!((d - 0.3875).abs() < 1e-15, "{d}");
    }

    #[test]
    fn fluid_flow_impulse() {
        let mut s = SystemSimulator::new(SystemKind::FluidFlow, 0.0).unwrap();
        assert_eq!(s.respond(0.0, 0.0, 0.0), 0.0);
        let d1 = s.respond(1.0, 0.0, 0.0);
        // 0.3163 * 0.1044 / sqrt(0.1 + 0.9 * 0.1044^2), evaluated by hand
        let want = 0.033_021_72 / (0.1f64 + 0.009_809_424).sqrt();
        assert!((d1 - want).abs() < 1e-12, "{d1} vs {want}");
        assert_eq!(s.state(), (0.1044, 0.0));
        // next step: x2 = 0.0883 + 1.4138 * 0.1044
        s.respond(0.0, 1.0, 0.0);
        assert!((s.state().0 - (0.0883 + 1.4138 * 0.1044)).abs() < 1e-15);
    }

    #[test]
    fn null_plant_is_noise() {
        let mut s = SystemSimulator::new(SystemKind::Null, 0.05).unwrap();
        assert_eq!(s.respond(3.0, -1.0, 0.123), 0.123);
    }

    #[test]
    fn ar1_is_deterministic() {
        let g = InputGenerator::new(0.5, 0.5, 42).unwrap();
        assert_eq!(ar1_stream(&g, 1000), ar1_stream(&g, 1000));
        let h = InputGenerator::new(0.5, 0.5, 43).unwrap();
        assert_ne!(ar1_stream(&g, 10), ar1_stream(&h, 10));
    }

    #[test]
    fn tail_mean_window() {
        let c = LearningCurve {
            mse: (1..=10).map(f64::from).collect(),
            n_runs: 1,
            kind: CurveKind::Simulated,
        };
        assert_eq!(c.tail_mean(0.1), 10.0);
        assert_eq!(c.tail_mean(0.2), 9.5);
    }
}
