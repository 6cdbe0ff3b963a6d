//! Kernel adaptive filters over a fixed dictionary.
//!
//! All variants predict with `y = alpha^T kappa(u)` and differ only in the
//! coefficient update. The natural update premultiplies the kernelised input
//! by `G^{-1}`; the selective variant does so on the `s_n` most correlated
//! atoms only.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::kernel::{kernelized_input_into, Dictionary, GaussianKernel, GramFactor};
use crate::linalg::{dot, Cholesky, SymMatrix};
use crate::{Error, Result};

/// Regulariser of the normalised KLMS baseline when none is configured.
pub const DEFAULT_KNLMS_EPS: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FilterKind {
    NaturalKlms,
    /// Natural update restricted to the `s_n` atoms with the largest kernel
    /// values.
    Selective { s_n: usize },
    /// `alpha += eta e kappa / (eps + ||kappa||^2)`.
    Knlms { eps: f64 },
}

/// Coefficients over a dictionary plus the number of updates applied.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterState<'a> {
    pub alpha: Vec<f64>,
    pub dictionary: &'a Dictionary,
    pub iteration: u64,
}

impl<'a> FilterState<'a> {
    /// `alpha_0 = 0`.
    pub fn new(dictionary: &'a Dictionary) -> Self {
        FilterState {
            alpha: vec![0.0; dictionary.len()],
            dictionary,
            iteration: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    /// `d_n - alpha_n^T kappa_n`, computed before the update.
    pub prior_error: f64,
    pub prediction: f64,
}

pub fn predict(s: &FilterState<'_>, k: &GaussianKernel, u: &[f64]) -> Result<f64> {
    let mut kap = vec![0.0; s.dictionary.len()];
    kernelized_input_into(s.dictionary, k, u, &mut kap)?;
    Ok(dot(&s.alpha, &kap))
}

fn check_eta(eta: f64) -> Result<()> {
    if eta > 0.0 && eta.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("step size must be positive, got {eta}")))
    }
}

fn prior(s: &FilterState<'_>, k: &GaussianKernel, u: &[f64], d: f64, kap: &mut [f64]) -> Result<StepRecord> {
    kernelized_input_into(s.dictionary, k, u, kap)?;
    let prediction = dot(&s.alpha, kap);
    Ok(StepRecord {
        prior_error: d - prediction,
        prediction,
    })
}

/// One natural KLMS update, `alpha += eta e G^{-1} kappa`.
pub fn natural_klms_step<'a>(
    s: &FilterState<'a>,
    gf: &GramFactor,
    k: &GaussianKernel,
    u: &[f64],
    d: f64,
    eta: f64,
) -> Result<(StepRecord, FilterState<'a>)> {
    let mut f = AdaptiveFilter::from_state(s.clone(), gf, *k, FilterKind::NaturalKlms, eta)?;
    let rec = f.step(u, d)?;
    Ok((rec, f.into_state()))
}

/// Natural update on the `s_n` largest entries of `kappa`; ties go to the
/// lower atom index.
pub fn selective_step<'a>(
    s: &FilterState<'a>,
    gf: &GramFactor,
    k: &GaussianKernel,
    u: &[f64],
    d: f64,
    eta: f64,
    s_n: usize,
) -> Result<(StepRecord, FilterState<'a>)> {
    let mut f = AdaptiveFilter::from_state(s.clone(), gf, *k, FilterKind::Selective { s_n }, eta)?;
    let rec = f.step(u, d)?;
    Ok((rec, f.into_state()))
}

pub fn knlms_step<'a>(
    s: &FilterState<'a>,
    gf: &GramFactor,
    k: &GaussianKernel,
    u: &[f64],
    d: f64,
    eta: f64,
    eps: f64,
) -> Result<(StepRecord, FilterState<'a>)> {
    let mut f = AdaptiveFilter::from_state(s.clone(), gf, *k, FilterKind::Knlms { eps }, eta)?;
    let rec = f.step(u, d)?;
    Ok((rec, f.into_state()))
}

/// Indices of the `s_n` largest values, returned in ascending index order.
pub fn select_top(kappa: &[f64], s_n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..kappa.len()).collect();
    idx.sort_by(|&a, &b| kappa[b].total_cmp(&kappa[a]).then(a.cmp(&b)));
    idx.truncate(s_n);
    idx.sort_unstable();
    idx
}

/// Stateful filter with preallocated scratch space, for long runs.
#[derive(Clone, Debug)]
pub struct AdaptiveFilter<'a, 'g> {
    state: FilterState<'a>,
    gram: &'g GramFactor,
    kernel: GaussianKernel,
    kind: FilterKind,
    eta: f64,
    kap: Vec<f64>,
    work: Vec<f64>,
}

impl<'a, 'g> AdaptiveFilter<'a, 'g> {
    pub fn new(
        dictionary: &'a Dictionary,
        gram: &'g GramFactor,
        kernel: GaussianKernel,
        kind: FilterKind,
        eta: f64,
    ) -> Result<Self> {
        Self::from_state(FilterState::new(dictionary), gram, kernel, kind, eta)
    }

    pub fn from_state(
        state: FilterState<'a>,
        gram: &'g GramFactor,
        kernel: GaussianKernel,
        kind: FilterKind,
        eta: f64,
    ) -> Result<Self> {
        check_eta(eta)?;
        let r = state.dictionary.len();
        if gram.dim() != r || state.alpha.len() != r {
            return Err(Error::DimensionMismatch {
                expected: r,
                found: if gram.dim() != r { gram.dim() } else { state.alpha.len() },
            });
        }
        match kind {
            FilterKind::Selective { s_n } if s_n == 0 || s_n > r => {
                return Err(Error::invalid(format!("s_n must lie in 1..={r}, got {s_n}")));
            }
            FilterKind::Knlms { eps } if !(eps >= 0.0 && eps.is_finite()) => {
                return Err(Error::invalid(format!("KNLMS eps must be >= 0, got {eps}")));
            }
            _ => {}
        }
        Ok(AdaptiveFilter {
            state,
            gram,
            kernel,
            kind,
            eta,
            kap: vec![0.0; r],
            work: vec![0.0; r],
        })
    }

    pub fn state(&self) -> &FilterState<'a> {
        &self.state
    }

    pub fn into_state(self) -> FilterState<'a> {
        self.state
    }

    pub fn kind(&self) -> FilterKind {
        self.kind
    }

    pub fn step(&mut self, u: &[f64], d: f64) -> Result<StepRecord> {
        let rec = prior(&self.state, &self.kernel, u, d, &mut self.kap)?;
        let ge = self.eta * rec.prior_error;
        match self.kind {
            FilterKind::NaturalKlms => {
                self.work.copy_from_slice(&self.kap);
                self.gram.solve_in_place(&mut self.work);
                for (a, w) in self.state.alpha.iter_mut().zip(&self.work) {
                    *a += ge * w;
                }
            }
            FilterKind::Selective { s_n } => {
                let sel = select_top(&self.kap, s_n);
                let g = &self.gram.g;
                let gss = SymMatrix::from_upper_fn(sel.len(), |i, j| g[(sel[i], sel[j])]);
                let mut x: Vec<f64> = sel.iter().map(|&i| self.kap[i]).collect();
                Cholesky::new(&gss)?.solve_in_place(&mut x);
                for (&i, xi) in sel.iter().zip(&x) {
                    self.state.alpha[i] += ge * xi;
                }
            }
            FilterKind::Knlms { eps } => {
                let scale = ge / (eps + dot(&self.kap, &self.kap));
                for (a, k) in self.state.alpha.iter_mut().zip(&self.kap) {
                    *a += scale * k;
                }
            }
        }
        self.state.iteration += 1;
        Ok(rec)
    }
}
