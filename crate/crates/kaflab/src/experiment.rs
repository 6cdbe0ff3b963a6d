//! Turns a resolved configuration into the objects the commands need.

use std::path::{Path, PathBuf};

use kaflab_core::kernel::{calibrate_coherence, coherence_select, gram, grid_dictionary, Dictionary, GaussianKernel, GramFactor};
use kaflab_core::moments::{fourth_tensor, second_moment, CrossStats, InputModel, MomentModel};
use kaflab_core::sim::{LearningCurve, McSetup};

use crate::config::{DictionarySpec, ExperimentConfig};
use crate::error::Result;
use crate::io::{self, CachedMoments};
use crate::parallel;

pub struct Experiment {
    pub config: ExperimentConfig,
    pub kernel: GaussianKernel,
    pub dictionary: Dictionary,
    pub gram: GramFactor,
    pub input: InputModel,
    /// Coherence threshold actually used, when the dictionary was selected.
    pub mu0: Option<f64>,
}

/// Where the input-only moments came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MomentSource {
    Computed,
    Cached(PathBuf),
}

impl Experiment {
    /// `base_dir` resolves relative dictionary paths.
    pub fn build(config: ExperimentConfig, base_dir: &Path) -> Result<Self> {
        let kernel = GaussianKernel::new(config.sigma)?;
        let signal = config.signal();
        let mut mu0 = None;
        let dictionary = match &config.dictionary {
            DictionarySpec::Grid { lo, hi, points } => grid_dictionary(lo, hi, *points)?,
            DictionarySpec::Coherence { mu0: m, target, samples } => {
                let stream = signal.calibration_inputs(config.seed, *samples)?;
                match (m, target) {
                    (Some(m), _) => {
                        mu0 = Some(*m);
                        coherence_select(&stream, &kernel, *m)?
                    }
                    (None, Some(t)) => {
                        let (m, d) = calibrate_coherence(&stream, &kernel, *t)?;
                        mu0 = Some(m);
                        d
                    }
                    (None, None) => unreachable!("rejected by the config parser"),
                }
            }
            DictionarySpec::File { path } => io::read_dictionary(&base_dir.join(path))?,
        };
        let gram = gram(&dictionary, &kernel)?;
        let input = InputModel::new(signal.input_covariance()?)?;
        Ok(Experiment {
            config,
            kernel,
            dictionary,
            gram,
            input,
            mu0,
        })
    }

    pub fn mc_setup(&self) -> McSetup<'_> {
        McSetup {
            signal: self.config.signal(),
            kernel: self.kernel,
            dictionary: &self.dictionary,
            gram: &self.gram,
            filter: self.config.filter,
            eta: self.config.eta,
            seed: self.config.seed,
        }
    }

    pub fn simulate(&self, pool: &rayon::ThreadPool) -> Result<LearningCurve> {
        parallel::mc_learning_curve(pool, &self.mc_setup(), self.config.n_runs, self.config.n_iters)
    }

    pub fn cache_key(&self) -> String {
        io::moment_cache_key(&self.dictionary, &self.kernel, &self.input)
    }

    /// `R_kappa` and `S`, from `cache_dir` when an entry exists; new results
    /// are stored there.
    pub fn input_moments(&self, cache_dir: Option<&Path>) -> Result<(CachedMoments, MomentSource)> {
        let key = self.cache_key();
        if let Some(dir) = cache_dir {
            if let Some(hit) = io::load_cache(dir, &key)? {
                if hit.r_kappa.dim() == self.dictionary.len() {
                    log::info!("moments cache hit {key}");
                    return Ok((hit, MomentSource::Cached(io::cache_path(dir, &key))));
                }
            }
        }
        let m = CachedMoments {
            r_kappa: second_moment(&self.dictionary, &self.kernel, &self.input)?,
            s_tensor: fourth_tensor(&self.dictionary, &self.kernel, &self.input)?,
        };
        if let Some(dir) = cache_dir {
            let path = io::store_cache(dir, &key, &m)?;
            log::info!("stored moments in {}", path.display());
        }
        Ok((m, MomentSource::Computed))
    }

    pub fn cross_stats(&self, pool: &rayon::ThreadPool) -> Result<CrossStats> {
        let signal = self.config.signal();
        parallel::estimate_cross_stats(
            pool,
            &signal.plant()?,
            &signal.input(self.config.seed)?,
            self.config.burn_in,
            &self.dictionary,
            &self.kernel,
            self.config.cross_samples,
            self.config.shards,
        )
    }

    pub fn model(&self, pool: &rayon::ThreadPool, cache_dir: Option<&Path>) -> Result<(MomentModel, CrossStats, MomentSource)> {
        let (moments, source) = self.input_moments(cache_dir)?;
        let cross = self.cross_stats(pool)?;
        let model = MomentModel::from_parts(
            self.dictionary.clone(),
            self.kernel,
            self.input.clone(),
            moments.r_kappa,
            moments.s_tensor,
            cross.p.clone(),
            cross.d2,
        )?;
        Ok((model, cross, source))
    }
}
