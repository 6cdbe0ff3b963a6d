//! Worker fan-out. Results never depend on the thread count: runs are summed
//! in run order and stream shards are merged in shard order.

use kaflab_core::kernel::{Dictionary, GaussianKernel};
use kaflab_core::moments::{
    cross_stats_record, cross_stats_width, merge_stream_shards, run_stream_shard, BatchPlan, CrossStats, StreamMeans,
    MIN_CROSS_SAMPLES,
};
use kaflab_core::sim::{run_single, CurveAccumulator, InputGenerator, LearningCurve, McSetup, Plant};
use rayon::prelude::*;

use crate::error::{Error, Result};

pub const THREADS_ENV: &str = "KAFLAB_THREADS";

/// Worker count from `KAFLAB_THREADS`, else the available parallelism.
pub fn thread_count() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Usage(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

pub fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Usage(format!("cannot start worker pool: {e}")))
}

pub fn default_pool() -> Result<rayon::ThreadPool> {
    pool(thread_count()?)
}

/// Parallel counterpart of `mc_learning_curve`, bit-identical to it.
pub fn mc_learning_curve(
    pool: &rayon::ThreadPool,
    setup: &McSetup<'_>,
    n_runs: usize,
    n_iters: usize,
) -> Result<LearningCurve> {
    if n_runs == 0 {
        return Err(kaflab_core::Error::InvalidParameter("need at least one Monte-Carlo run".into()).into());
    }
    // bounded memory: one chunk of runs is held at a time
    let chunk = 4 * pool.current_num_threads().max(1);
    let mut acc = CurveAccumulator::new(n_iters);
    let mut start = 0;
    while start < n_runs {
        let end = (start + chunk).min(n_runs);
        let runs: Vec<_> = pool.install(|| {
            (start..end)
                .into_par_iter()
                .map(|run| run_single(setup, run, n_iters))
                .collect()
        });
        for r in runs {
            acc.add(&r?);
        }
        start = end;
    }
    Ok(acc.finish())
}

/// Parallel counterpart of `stream_means`.
#[allow(clippy::too_many_arguments)]
pub fn stream_means<P, F>(
    pool: &rayon::ThreadPool,
    plan: &BatchPlan,
    input: &InputGenerator,
    plant: &P,
    burn_in: usize,
    d: &Dictionary,
    k: &GaussianKernel,
    width: usize,
    f: F,
) -> Result<StreamMeans>
where
    P: Plant + Clone + Sync,
    F: Fn(f64, &[f64], &mut [f64]) + Sync,
{
    let parts: Vec<_> = pool.install(|| {
        (0..plan.shards)
            .into_par_iter()
            .map(|s| run_stream_shard(plan, s, input, plant, burn_in, d, k, width, &f))
            .collect()
    });
    let parts = parts.into_iter().collect::<kaflab_core::Result<Vec<_>>>()?;
    Ok(merge_stream_shards(plan, &parts)?)
}

/// Parallel counterpart of `estimate_cross_stats`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_cross_stats<P: Plant + Clone + Sync>(
    pool: &rayon::ThreadPool,
    sys: &P,
    input: &InputGenerator,
    burn_in: usize,
    d: &Dictionary,
    k: &GaussianKernel,
    n_samples: usize,
    shards: usize,
) -> Result<CrossStats> {
    if n_samples < MIN_CROSS_SAMPLES {
        return Err(kaflab_core::Error::InvalidParameter(format!(
            "need at least {MIN_CROSS_SAMPLES} cross-statistics samples, got {n_samples}"
        ))
        .into());
    }
    let plan = BatchPlan::new(n_samples, shards)?;
    let m = stream_means(pool, &plan, input, sys, burn_in, d, k, cross_stats_width(d), cross_stats_record)?;
    Ok(m.into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use kaflab_core::filters::FilterKind;
    use kaflab_core::kernel::{gram, grid_dictionary};
    use kaflab_core::sim::{SignalSpec, SystemKind};

    fn signal() -> SignalSpec {
        SignalSpec {
            rho: 0.5,
            sigma_u: 0.5,
            system: SystemKind::Polynomial,
            sigma_nu: 0.05,
            burn_in: 100,
        }
    }

    #[test]
    fn parallel_mc_is_bit_identical() {
        let d = grid_dictionary(&[-1.0, -1.0], &[1.0, 1.0], 3).unwrap();
        let k = GaussianKernel::new(0.7).unwrap();
        let gf = gram(&d, &k).unwrap();
        let setup = McSetup {
            signal: signal(),
            kernel: k,
            dictionary: &d,
            gram: &gf,
            filter: FilterKind::NaturalKlms,
            eta: 0.1,
            seed: 11,
        };
        let seq = kaflab_core::sim::mc_learning_curve(&setup, 37, 200).unwrap();
        for threads in [1, 3] {
            let p = pool(threads).unwrap();
            assert_eq!(mc_learning_curve(&p, &setup, 37, 200).unwrap(), seq);
        }
    }

    #[test]
    fn parallel_cross_stats_are_bit_identical() {
        let d = grid_dictionary(&[-1.0, -1.0], &[1.0, 1.0], 2).unwrap();
        let k = GaussianKernel::new(0.7).unwrap();
        let s = signal();
        let input = s.input(5).unwrap();
        let plant = s.plant().unwrap();
        let seq = kaflab_core::moments::estimate_cross_stats(&plant, &input, 100, &d, &k, 20_000, 4).unwrap();
        let par = estimate_cross_stats(&pool(4).unwrap(), &plant, &input, 100, &d, &k, 20_000, 4).unwrap();
        assert_eq!(par, seq);
    }
}
