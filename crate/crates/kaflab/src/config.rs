//! Experiment configuration files.
//!
//! The format is flat `key = value` lines grouped under `[section]` headers.
//! `#` starts a comment. Every key must be known; unknown keys and malformed
//! values are rejected with the offending line number.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use kaflab_core::filters::{FilterKind, DEFAULT_KNLMS_EPS};
use kaflab_core::sim::{SignalSpec, SystemKind, DEFAULT_BURN_IN};

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("line {line}: {message}")]
pub struct ConfigError {
    /// 1-based line number; 0 when the problem is a missing key.
    pub line: usize,
    pub message: String,
}

impl ConfigError {
    fn new(line: usize, message: impl Into<String>) -> Self {
        ConfigError {
            line,
            message: message.into(),
        }
    }
}

#[derive(Clone, Debug)]
struct Entry {
    value: String,
    line: usize,
}

/// Raw `section.key -> value` table with line numbers.
#[derive(Clone, Debug, Default)]
pub struct RawConfig {
    entries: BTreeMap<(String, String), Entry>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(rest) = content.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| ConfigError::new(line, "unterminated section header"))?
                    .trim();
                if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                    return Err(ConfigError::new(line, format!("bad section name `{name}`")));
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| ConfigError::new(line, "expected `key = value`"))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(ConfigError::new(line, "empty key"));
            }
            if section.is_empty() {
                return Err(ConfigError::new(line, format!("key `{key}` outside any section")));
            }
            let slot = (section.clone(), key.to_string());
            if let Some(prev) = entries.get(&slot) {
                let prev: &Entry = prev;
                return Err(ConfigError::new(
                    line,
                    format!("duplicate key `{section}.{key}` (first set on line {})", prev.line),
                ));
            }
            entries.insert(
                slot,
                Entry {
                    value: value.trim().to_string(),
                    line,
                },
            );
        }
        Ok(RawConfig { entries })
    }
}

/// Typed reader that tracks which keys were consumed.
struct Reader {
    raw: RawConfig,
    used: std::collections::BTreeSet<(String, String)>,
}

impl Reader {
    fn entry(&mut self, section: &str, key: &str) -> Option<Entry> {
        let slot = (section.to_string(), key.to_string());
        let e = self.raw.entries.get(&slot).cloned();
        if e.is_some() {
            self.used.insert(slot);
        }
        e
    }

    fn required(&mut self, section: &str, key: &str) -> Result<Entry, ConfigError> {
        self.entry(section, key)
            .ok_or_else(|| ConfigError::new(0, format!("missing key `{key}` in section [{section}]")))
    }

    fn parse_with<T>(e: &Entry, what: &str, f: impl FnOnce(&str) -> Option<T>) -> Result<T, ConfigError> {
        f(&e.value).ok_or_else(|| ConfigError::new(e.line, format!("expected {what}, got `{}`", e.value)))
    }

    fn f64(&mut self, section: &str, key: &str) -> Result<f64, ConfigError> {
        let e = self.required(section, key)?;
        Self::finite(&e)
    }

    fn finite(e: &Entry) -> Result<f64, ConfigError> {
        Self::parse_with(e, "a finite number", |s| s.parse::<f64>().ok().filter(|v| v.is_finite()))
    }

    fn f64_or(&mut self, section: &str, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.entry(section, key) {
            Some(e) => Self::finite(&e),
            None => Ok(default),
        }
    }

    fn usize_opt(&mut self, section: &str, key: &str) -> Result<Option<usize>, ConfigError> {
        self.entry(section, key)
            .map(|e| Self::parse_with(&e, "a non-negative integer", |s| s.replace('_', "").parse().ok()))
            .transpose()
    }

    fn usize(&mut self, section: &str, key: &str) -> Result<usize, ConfigError> {
        let e = self.required(section, key)?;
        Self::parse_with(&e, "a non-negative integer", |s| s.replace('_', "").parse().ok())
    }

    fn u64(&mut self, section: &str, key: &str) -> Result<u64, ConfigError> {
        let e = self.required(section, key)?;
        Self::parse_with(&e, "a non-negative integer", |s| s.replace('_', "").parse().ok())
    }

    fn list(&mut self, section: &str, key: &str) -> Result<(Vec<f64>, usize), ConfigError> {
        let e = self.required(section, key)?;
        let v = Self::parse_with(&e, "a comma-separated list of numbers", |s| {
            s.split(',')
                .map(|x| x.trim().parse::<f64>().ok().filter(|v| v.is_finite()))
                .collect::<Option<Vec<_>>>()
        })?;
        Ok((v, e.line))
    }

    fn finish(self) -> Result<(), ConfigError> {
        for ((section, key), e) in &self.raw.entries {
            if !self.used.contains(&(section.clone(), key.clone())) {
                return Err(ConfigError::new(e.line, format!("unknown key `{key}` in section [{section}]")));
            }
        }
        Ok(())
    }
}

/// How the dictionary is obtained.
#[derive(Clone, Debug, PartialEq)]
pub enum DictionarySpec {
    /// Uniform grid with inclusive bounds.
    Grid { lo: Vec<f64>, hi: Vec<f64>, points: usize },
    /// Coherence selection over a burnt-in input stream, either with a given
    /// threshold or with the threshold tuned to reach a target size.
    Coherence {
        mu0: Option<f64>,
        target: Option<usize>,
        samples: usize,
    },
    /// Centers read from a CSV file (header `x0,x1,...`), relative to the config.
    File { path: PathBuf },
}

/// Everything an experiment needs, parsed from a config file.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub sigma: f64,
    pub eta: f64,
    pub filter: FilterKind,
    pub rho: f64,
    pub sigma_u: f64,
    pub system: SystemKind,
    pub sigma_nu: f64,
    pub dictionary: DictionarySpec,
    pub n_runs: usize,
    pub n_iters: usize,
    pub seed: u64,
    pub burn_in: usize,
    pub cross_samples: usize,
    pub shards: usize,
    pub transient_steps: usize,
}

pub const DEFAULT_CROSS_SAMPLES: usize = 1_000_000;
pub const DEFAULT_SHARDS: usize = 8;
pub const DEFAULT_COHERENCE_SAMPLES: usize = 5000;

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut r = Reader {
            raw: RawConfig::parse(text)?,
            used: Default::default(),
        };
        let sigma = r.f64("kernel", "sigma")?;
        let eta = r.f64("filter", "eta")?;
        let kind = r.required("filter", "kind")?;
        let filter = match kind.value.as_str() {
            "natural" => FilterKind::NaturalKlms,
            "selective" => {
                let s_n = r.usize("filter", "s_n")?;
                FilterKind::Selective { s_n }
            }
            "knlms" => FilterKind::Knlms {
                eps: r.f64_or("filter", "eps", DEFAULT_KNLMS_EPS)?,
            },
            other => {
                return Err(ConfigError::new(
                    kind.line,
                    format!("filter kind must be natural, selective or knlms, got `{other}`"),
                ))
            }
        };
        let rho = r.f64("input", "rho")?;
        let sigma_u = r.f64("input", "sigma_u")?;
        let sys = r.required("system", "kind")?;
        let system = match sys.value.as_str() {
            "polynomial" => SystemKind::Polynomial,
            "fluid_flow" => SystemKind::FluidFlow,
            "null" => SystemKind::Null,
            other => {
                return Err(ConfigError::new(
                    sys.line,
                    format!("system kind must be polynomial, fluid_flow or null, got `{other}`"),
                ))
            }
        };
        let sigma_nu = r.f64("system", "sigma_nu")?;
        let dk = r.required("dictionary", "kind")?;
        let dictionary = match dk.value.as_str() {
            "grid" => {
                let (lo, lo_line) = r.list("dictionary", "lo")?;
                let (hi, _) = r.list("dictionary", "hi")?;
                if lo.len() != hi.len() {
                    return Err(ConfigError::new(lo_line, "`lo` and `hi` must have the same length"));
                }
                let points = r.usize("dictionary", "points")?;
                DictionarySpec::Grid { lo, hi, points }
            }
            "coherence" => {
                let mu0 = r
                    .entry("dictionary", "mu0")
                    .map(|e| Reader::finite(&e))
                    .transpose()?;
                let target = r.usize_opt("dictionary", "target")?;
                if mu0.is_some() == target.is_some() {
                    return Err(ConfigError::new(dk.line, "coherence dictionary needs exactly one of `mu0` or `target`"));
                }
                let samples = r.usize_opt("dictionary", "samples")?.unwrap_or(DEFAULT_COHERENCE_SAMPLES);
                DictionarySpec::Coherence { mu0, target, samples }
            }
            "file" => {
                let e = r.required("dictionary", "path")?;
                DictionarySpec::File {
                    path: PathBuf::from(e.value),
                }
            }
            other => {
                return Err(ConfigError::new(
                    dk.line,
                    format!("dictionary kind must be grid, coherence or file, got `{other}`"),
                ))
            }
        };
        let n_runs = r.usize("monte_carlo", "runs")?;
        let n_iters = r.usize("monte_carlo", "iters")?;
        let seed = r.u64("monte_carlo", "seed")?;
        let burn_in = r.usize_opt("monte_carlo", "burn_in")?.unwrap_or(DEFAULT_BURN_IN);
        let cross_samples = r.usize_opt("moments", "cross_samples")?.unwrap_or(DEFAULT_CROSS_SAMPLES);
        let shards = r.usize_opt("moments", "shards")?.unwrap_or(DEFAULT_SHARDS);
        let transient_steps = r.usize_opt("analysis", "transient_steps")?.unwrap_or(n_iters);
        r.finish()?;
        let cfg = ExperimentConfig {
            sigma,
            eta,
            filter,
            rho,
            sigma_u,
            system,
            sigma_nu,
            dictionary,
            n_runs,
            n_iters,
            seed,
            burn_in,
            cross_samples,
            shards,
            transient_steps,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::new(0, m));
        if self.sigma <= 0.0 {
            return bad(format!("kernel sigma must be positive, got {}", self.sigma));
        }
        if self.eta <= 0.0 {
            return bad(format!("eta must be positive, got {}", self.eta));
        }
        if !(self.rho > -1.0 && self.rho < 1.0) {
            return bad(format!("|rho| must be < 1, got {}", self.rho));
        }
        if self.sigma_u <= 0.0 {
            return bad(format!("sigma_u must be positive, got {}", self.sigma_u));
        }
        if self.sigma_nu < 0.0 {
            return bad(format!("sigma_nu must be >= 0, got {}", self.sigma_nu));
        }
        if self.n_runs == 0 || self.n_iters == 0 {
            return bad("runs and iters must be at least 1".into());
        }
        if let DictionarySpec::Coherence { mu0: Some(mu0), .. } = self.dictionary {
            if !(mu0 > 0.0 && mu0 < 1.0) {
                return bad(format!("mu0 must lie in (0, 1), got {mu0}"));
            }
        }
        Ok(())
    }

    pub fn signal(&self) -> SignalSpec {
        SignalSpec {
            rho: self.rho,
            sigma_u: self.sigma_u,
            system: self.system,
            sigma_nu: self.sigma_nu,
            burn_in: self.burn_in,
        }
    }

    /// Canonical `key = value` rendering of every resolved setting, defaults
    /// included. Parsing the output yields the same configuration.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        let num = |v: f64| format!("{v:?}");
        let list = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ");
        let _ = writeln!(s, "[kernel]\nsigma = {}", num(self.sigma));
        let _ = writeln!(s, "\n[filter]\neta = {}", num(self.eta));
        match self.filter {
            FilterKind::NaturalKlms => {
                let _ = writeln!(s, "kind = natural");
            }
            FilterKind::Selective { s_n } => {
                let _ = writeln!(s, "kind = selective\ns_n = {s_n}");
            }
            FilterKind::Knlms { eps } => {
                let _ = writeln!(s, "kind = knlms\neps = {}", num(eps));
            }
        }
        let _ = writeln!(s, "\n[input]\nrho = {}\nsigma_u = {}", num(self.rho), num(self.sigma_u));
        let system = match self.system {
            SystemKind::Polynomial => "polynomial",
            SystemKind::FluidFlow => "fluid_flow",
            SystemKind::Null => "null",
        };
        let _ = writeln!(s, "\n[system]\nkind = {system}\nsigma_nu = {}", num(self.sigma_nu));
        let _ = writeln!(s, "\n[dictionary]");
        match &self.dictionary {
            DictionarySpec::Grid { lo, hi, points } => {
                let _ = writeln!(s, "kind = grid\nlo = {}\nhi = {}\npoints = {points}", list(lo), list(hi));
            }
            DictionarySpec::Coherence { mu0, target, samples } => {
                let _ = writeln!(s, "kind = coherence");
                if let Some(m) = mu0 {
                    let _ = writeln!(s, "mu0 = {}", num(*m));
                }
                if let Some(t) = target {
                    let _ = writeln!(s, "target = {t}");
                }
                let _ = writeln!(s, "samples = {samples}");
            }
            DictionarySpec::File { path } => {
                let _ = writeln!(s, "kind = file\npath = {}", path.display());
            }
        }
        let _ = writeln!(
            s,
            "\n[monte_carlo]\nruns = {}\niters = {}\nseed = {}\nburn_in = {}",
            self.n_runs, self.n_iters, self.seed, self.burn_in
        );
        let _ = writeln!(s, "\n[moments]\ncross_samples = {}\nshards = {}", self.cross_samples, self.shards);
        let _ = writeln!(s, "\n[analysis]\ntransient_steps = {}", self.transient_steps);
        s
    }
}
