//! The `kaflab` subcommands. Each writes its outputs plus `manifest.json`
//! into the output directory and returns a short summary for the terminal.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use kaflab_core::analysis::{build_k, complexity_report, mean_square_stable, steady_state_from_k, Transient};
use kaflab_core::kernel::GaussianKernel;
use kaflab_core::linalg::{pd_factors, sym_eigenvalues, SymMatrix};
use kaflab_core::moments::{multi_point_moment, InputModel, MomentModel};
use kaflab_core::sim::{rng_for, CurveKind, LearningCurve};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::experiment::{Experiment, MomentSource};
use crate::io::{self, fmt_f64, write_text};
use crate::manifest::RunManifest;
use crate::metrics;
use crate::parallel;

pub const SIMULATED_CSV: &str = "simulated.csv";
pub const DICTIONARY_CSV: &str = "dictionary.csv";
pub const THEORY_CSV: &str = "theory.csv";
pub const STEADY_STATE_TXT: &str = "steady_state.txt";
pub const STABILITY_TXT: &str = "stability.txt";
pub const MOMENTS_TXT: &str = "moments.txt";
pub const OVERLAY_CSV: &str = "overlay.csv";
pub const METRICS_TXT: &str = "metrics.txt";
pub const MOMENTS_CHECK_CSV: &str = "moments_check.csv";
pub const COMPLEXITY_CSV: &str = "complexity.csv";

/// Standard errors allowed between a closed form and its sampled estimate.
pub const CHECK_BAND: f64 = 4.0;
/// Shard count of the i.i.d. sampler; fixed so results do not depend on
/// the worker count.
pub const CHECK_SHARDS: usize = 16;
const CHECK_STREAM: u64 = 1 << 35;
const ENTRY_STREAM: u64 = (1 << 35) - 1;

/// Reads and parses a config, returning it with its raw text.
pub fn load_config(path: &Path) -> Result<(ExperimentConfig, String)> {
    let raw = io::read_text(path)?;
    let cfg = ExperimentConfig::parse(&raw).map_err(|source| Error::Config {
        path: path.to_path_buf(),
        source,
    })?;
    Ok((cfg, raw))
}

fn base_dir(config: &Path) -> PathBuf {
    config.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn build(config: &Path, seed: Option<u64>) -> Result<(Experiment, String)> {
    let (mut cfg, raw) = load_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok((Experiment::build(cfg, &base_dir(config))?, raw))
}

fn experiment_notes(e: &Experiment) -> Vec<String> {
    let mut notes = vec![format!("dictionary size r = {}", e.dictionary.len())];
    if let Some(m) = e.mu0 {
        notes.push(format!("coherence threshold mu0 = {}", fmt_f64(m)));
    }
    notes
}

pub fn simulate(config: &Path, out: &Path, seed: Option<u64>) -> Result<String> {
    let (e, raw) = build(config, seed)?;
    let pool = parallel::default_pool()?;
    let curve = e.simulate(&pool)?;
    write_text(&out.join(SIMULATED_CSV), &io::curve_csv(&curve))?;
    write_text(&out.join(DICTIONARY_CSV), &io::dictionary_csv(&e.dictionary))?;
    let mut man = RunManifest::new("simulate", out).with_config(config, &raw, e.config.canonical(), e.config.seed);
    man.notes = experiment_notes(&e);
    for f in [SIMULATED_CSV, DICTIONARY_CSV] {
        man.add_output(out, f)?;
    }
    man.write(out)?;
    Ok(format!(
        "simulated {} runs x {} iterations, r = {}, tail MSE {}",
        curve.n_runs,
        curve.len(),
        e.dictionary.len(),
        fmt_f64(curve.tail_mean(metrics::TAIL_FRACTION))
    ))
}

/// Stability verdicts and theory outputs for one model and step size.
#[derive(Clone, Debug)]
pub struct Analysis {
    pub eta: f64,
    pub lambda_max: f64,
    pub mean_bound: f64,
    pub mean_stable: bool,
    pub k_radius: f64,
    pub mean_square_stable: bool,
    pub steady_state: Option<f64>,
    pub transient: LearningCurve,
    /// Set when the transient recursion overflowed.
    pub diverged_at: Option<usize>,
}

pub fn analyze_model(m: &MomentModel, eta: f64, steps: usize) -> Result<Analysis> {
    let lambda_max = *sym_eigenvalues(&m.r_tilde)?.last().expect("non-empty dictionary");
    let mean_bound = 2.0 / lambda_max;
    let km = build_k(m, eta)?;
    let (ms_stable, k_radius) = mean_square_stable(&km)?;
    let steady_state = if ms_stable {
        Some(steady_state_from_k(m, &km)?.mse)
    } else {
        None
    };
    let mut tr = Transient::new(m, eta)?;
    let mut mse = Vec::with_capacity(steps);
    let mut diverged_at = None;
    if steps > 0 {
        mse.push(tr.state().mse);
    }
    while mse.len() < steps {
        match tr.advance() {
            Ok(s) => mse.push(s.mse),
            Err(kaflab_core::Error::Diverged { last_finite, .. }) => {
                diverged_at = Some(last_finite + 1);
                break;
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(Analysis {
        eta,
        lambda_max,
        mean_bound,
        mean_stable: eta < mean_bound,
        k_radius,
        mean_square_stable: ms_stable,
        steady_state,
        transient: LearningCurve {
            mse,
            n_runs: 0,
            kind: CurveKind::Theoretical,
        },
        diverged_at,
    })
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

impl Analysis {
    pub fn stability_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "eta = {}", fmt_f64(self.eta));
        let _ = writeln!(s, "lambda_max = {}", fmt_f64(self.lambda_max));
        let _ = writeln!(s, "mean_bound = {}", fmt_f64(self.mean_bound));
        let _ = writeln!(s, "mean_stability = {}", verdict(self.mean_stable));
        let _ = writeln!(s, "k_spectral_radius = {}", fmt_f64(self.k_radius));
        let _ = writeln!(s, "mean_square_stability = {}", verdict(self.mean_square_stable));
        if let Some(n) = self.diverged_at {
            let _ = writeln!(s, "transient_diverged_at = {n}");
        }
        s
    }

    pub fn steady_state_text(&self, m: &MomentModel) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "j_min = {}", fmt_f64(m.j_min));
        let _ = writeln!(s, "e_d2 = {}", fmt_f64(m.d2));
        match self.steady_state {
            Some(v) => {
                let _ = writeln!(s, "steady_state_mse = {}", fmt_f64(v));
                let _ = writeln!(s, "excess_mse = {}", fmt_f64(v - m.j_min));
                let _ = writeln!(s, "misadjustment = {}", fmt_f64((v - m.j_min) / m.j_min));
            }
            None => {
                let _ = writeln!(s, "steady_state_mse = unavailable");
                let _ = writeln!(s, "reason = spectral radius of K is {} >= 1", fmt_f64(self.k_radius));
            }
        }
        s
    }
}

/// `moments` loads a saved model instead of estimating one; `cache`
/// stores and reuses the input-only moments.
pub fn analyze(config: &Path, out: &Path, moments: Option<&Path>, cache: Option<&Path>) -> Result<String> {
    let (cfg, raw) = load_config(config)?;
    let mut man = RunManifest::new("analyze", out).with_config(config, &raw, cfg.canonical(), cfg.seed);
    let model = match moments {
        Some(p) => {
            man.add_input(p)?;
            man.notes.push(format!("model loaded from {}", p.display()));
            io::read_moment_model(p)?
        }
        None => {
            let e = Experiment::build(cfg.clone(), &base_dir(config))?;
            man.notes = experiment_notes(&e);
            let pool = parallel::default_pool()?;
            let (model, cross, source) = e.model(&pool, cache)?;
            man.notes.push(format!(
                "cross statistics from {} samples, E[d^2] = {} +- {}",
                cross.n_samples,
                fmt_f64(cross.d2),
                fmt_f64(cross.d2_stderr)
            ));
            if let MomentSource::Cached(p) = source {
                man.notes.push(format!("input moments from cache {}", p.display()));
            }
            model
        }
    };
    let a = analyze_model(&model, cfg.eta, cfg.transient_steps)?;
    write_text(&out.join(THEORY_CSV), &io::curve_csv(&a.transient))?;
    write_text(&out.join(STEADY_STATE_TXT), &a.steady_state_text(&model))?;
    write_text(&out.join(STABILITY_TXT), &a.stability_text())?;
    write_text(&out.join(MOMENTS_TXT), &io::moment_model_text(&model))?;
    for f in [THEORY_CSV, STEADY_STATE_TXT, STABILITY_TXT, MOMENTS_TXT] {
        man.add_output(out, f)?;
    }
    man.write(out)?;
    if !(a.mean_stable && a.mean_square_stable) {
        return Err(Error::Unstable(format!(
            "eta = {} (mean bound {}, spectral radius of K {}); see {}",
            cfg.eta,
            a.mean_bound,
            a.k_radius,
            out.join(STABILITY_TXT).display()
        )));
    }
    Ok(format!(
        "r = {}, J_min {}, steady-state MSE {}, rho(K) {}",
        model.dim(),
        fmt_f64(model.j_min),
        a.steady_state.map_or("unavailable".into(), fmt_f64),
        fmt_f64(a.k_radius)
    ))
}

pub fn compare(sim: &Path, theory: &Path, out: &Path) -> Result<String> {
    let s = io::read_curve(sim, CurveKind::Simulated)?;
    let t = io::read_curve(theory, CurveKind::Theoretical)?;
    if s.is_empty() || t.is_empty() {
        return Err(Error::Usage("cannot compare empty curves".into()));
    }
    let (m, dropped) = metrics::compare(&s, &t);
    let mut man = RunManifest::new("compare", out);
    man.add_input(sim)?;
    man.add_input(theory)?;
    if let Some(d) = dropped {
        let msg = format!("curve lengths differ ({} vs {}); {d} trailing points dropped", s.len(), t.len());
        log::warn!("{msg}");
        man.notes.push(msg);
    }
    write_text(&out.join(OVERLAY_CSV), &metrics::overlay_csv(&s.mse[..m.len], &t.mse[..m.len]))?;
    write_text(&out.join(METRICS_TXT), &m.report())?;
    for f in [OVERLAY_CSV, METRICS_TXT] {
        man.add_output(out, f)?;
    }
    man.write(out)?;
    Ok(format!(
        "steady-band relative error {}, max log10 gap after n = {} {}",
        fmt_f64(m.steady_rel_error),
        metrics::GAP_SKIP,
        fmt_f64(m.max_log_gap_after)
    ))
}

/// One closed-form versus sampled comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckRow {
    pub kind: &'static str,
    pub index: Vec<usize>,
    pub closed_form: f64,
    pub mc_mean: f64,
    pub mc_stderr: f64,
}

impl CheckRow {
    pub fn z(&self) -> f64 {
        (self.mc_mean - self.closed_form) / self.mc_stderr
    }

    pub fn pass(&self) -> bool {
        (self.mc_mean - self.closed_form).abs() <= CHECK_BAND * self.mc_stderr
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CheckOptions {
    pub samples: usize,
    pub entries: usize,
    /// Multiplies the kernel width used by the sampler only.
    pub sigma_scale: f64,
    pub seed: u64,
}

/// Compares every `R_kappa` entry and `entries` random fourth-moment
/// entries with i.i.d. Gaussian sampling of the input.
pub fn moment_check_rows(
    e: &Experiment,
    opts: CheckOptions,
    pool: &rayon::ThreadPool,
) -> Result<Vec<CheckRow>> {
    if opts.samples < CHECK_SHARDS || !(opts.sigma_scale > 0.0 && opts.sigma_scale.is_finite()) {
        return Err(Error::Usage(format!(
            "need at least {CHECK_SHARDS} samples and a positive sigma scale"
        )));
    }
    let d = &e.dictionary;
    let r = d.len();
    let im: &InputModel = &e.input;
    let mut idx: Vec<Vec<usize>> = Vec::new();
    for i in 0..r {
        for j in i..r {
            idx.push(vec![i, j]);
        }
    }
    let mut pick = rng_for(opts.seed, ENTRY_STREAM);
    for _ in 0..opts.entries {
        let mut q: Vec<usize> = (0..4).map(|_| pick.random_range(0..r)).collect();
        q.sort_unstable();
        idx.push(q);
    }
    let closed: Vec<f64> = idx
        .iter()
        .map(|q| {
            let cs: Vec<&[f64]> = q.iter().map(|&j| d.center(j)).collect();
            multi_point_moment(&cs, &e.kernel, im)
        })
        .collect::<kaflab_core::Result<_>>()?;

    let mc_kernel = GaussianKernel::new(e.kernel.sigma() * opts.sigma_scale)?;
    let root: SymMatrix = pd_factors(im.r_u())?.sqrt;
    let dim = im.dim();
    let width = idx.len();
    let per = opts.samples / CHECK_SHARDS;
    let parts: Vec<(Vec<f64>, Vec<f64>)> = pool.install(|| {
        (0..CHECK_SHARDS)
            .into_par_iter()
            .map(|s| {
                let n = if s + 1 == CHECK_SHARDS { opts.samples - per * s } else { per };
                let mut rng = rng_for(opts.seed, CHECK_STREAM + s as u64);
                let mut sum = vec![0.0; width];
                let mut sq = vec![0.0; width];
                let mut z = vec![0.0; dim];
                let mut kap = vec![0.0; r];
                for _ in 0..n {
                    z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
                    let u = root.matvec(&z);
                    for (k, c) in kap.iter_mut().zip(d.centers()) {
                        *k = mc_kernel.eval(&u, c);
                    }
                    for (w, q) in idx.iter().enumerate() {
                        let v: f64 = q.iter().map(|&j| kap[j]).product();
                        sum[w] += v;
                        sq[w] += v * v;
                    }
                }
                (sum, sq)
            })
            .collect()
    });
    let n = opts.samples as f64;
    let mut rows = Vec::with_capacity(width);
    for (w, q) in idx.into_iter().enumerate() {
        let s: f64 = parts.iter().map(|p| p.0[w]).sum();
        let ss: f64 = parts.iter().map(|p| p.1[w]).sum();
        let mean = s / n;
        let var = ((ss - n * mean * mean) / (n - 1.0)).max(0.0);
        rows.push(CheckRow {
            kind: if q.len() == 2 { "r_kappa" } else { "s_tensor" },
            index: q,
            closed_form: closed[w],
            mc_mean: mean,
            mc_stderr: (var / n).sqrt(),
        });
    }
    Ok(rows)
}

pub fn check_csv(rows: &[CheckRow]) -> String {
    let mut s = String::from("kind,index,closed_form,mc_mean,mc_stderr,z,verdict\n");
    for r in rows {
        let index: Vec<String> = r.index.iter().map(usize::to_string).collect();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.kind,
            index.join(" "),
            fmt_f64(r.closed_form),
            fmt_f64(r.mc_mean),
            fmt_f64(r.mc_stderr),
            fmt_f64(r.z()),
            verdict(r.pass())
        );
    }
    s
}

pub fn moments_check(config: &Path, opts: CheckOptions, seed: Option<u64>, out: Option<&Path>) -> Result<String> {
    let (e, raw) = build(config, seed)?;
    let opts = CheckOptions { seed: e.config.seed, ..opts };
    let pool = parallel::default_pool()?;
    let rows = moment_check_rows(&e, opts, &pool)?;
    let table = check_csv(&rows);
    match out {
        Some(dir) => {
            write_text(&dir.join(MOMENTS_CHECK_CSV), &table)?;
            let mut man = RunManifest::new("moments-check", dir).with_config(config, &raw, e.config.canonical(), e.config.seed);
            man.notes = experiment_notes(&e);
            man.notes.push(format!(
                "{} samples, sigma scale {}, {} fourth-moment entries",
                opts.samples, opts.sigma_scale, opts.entries
            ));
            man.add_output(dir, MOMENTS_CHECK_CSV)?;
            man.write(dir)?;
        }
        None => print!("{table}"),
    }
    let failed = rows.iter().filter(|r| !r.pass()).count();
    let summary = format!("{} of {} entries within {CHECK_BAND} standard errors", rows.len() - failed, rows.len());
    if failed > 0 {
        return Err(Error::CheckFailed(summary));
    }
    Ok(summary)
}

pub fn complexity_csv(input_dim: u64, r_max: u64, s_n: u64) -> Result<String> {
    if input_dim == 0 || r_max == 0 || s_n == 0 {
        return Err(Error::Usage("--L, --r-max and --s-n must be positive".into()));
    }
    let mut s = String::from("r,full,selective\n");
    for r in 1..=r_max {
        // fewer atoms than s_n: every atom is updated
        let c = complexity_report(r, input_dim, s_n.min(r))?;
        let _ = writeln!(s, "{r},{},{}", c.full, c.selective);
    }
    Ok(s)
}

pub fn complexity(input_dim: u64, r_max: u64, s_n: u64, out: Option<&Path>) -> Result<String> {
    let table = complexity_csv(input_dim, r_max, s_n)?;
    match out {
        Some(dir) => {
            write_text(&dir.join(COMPLEXITY_CSV), &table)?;
            let mut man = RunManifest::new("complexity", dir);
            man.add_output(dir, COMPLEXITY_CSV)?;
            man.write(dir)?;
            Ok(format!("wrote {} rows to {}", r_max, dir.join(COMPLEXITY_CSV).display()))
        }
        None => {
            print!("{table}");
            Ok(String::new())
        }
    }
}
