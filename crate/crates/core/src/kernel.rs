//! Gaussian kernel, fixed dictionaries and the Gram factorisation.
//!
//! A filter `phi = sum_j alpha_j kappa(., u_j)` in the dictionary subspace is
//! identified with its coefficient vector `alpha`; the RKHS inner product of
//! two such filters is `alpha_1^T G alpha_2`. [`GramFactor`] carries `G` with
//! the square-root factors that turn this into the Euclidean inner product.

use alloc::format;
use alloc::vec::Vec;

use crate::linalg::{pd_factors, Cholesky, SymMatrix};
use crate::math::{exp, sqrt};
use crate::{Error, Result};

/// Upper bound on the number of dictionary atoms a constructor will produce.
pub const MAX_ATOMS: usize = 10_000;

/// Centers closer than this are rejected before the PD check runs.
pub const NEAR_DUPLICATE_DISTANCE: f64 = 1e-9;

/// `kappa(x, y) = exp(-|x - y|^2 / (2 sigma^2))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianKernel {
    sigma: f64,
}

impl GaussianKernel {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!("kernel width must be positive, got {sigma}")));
        }
        Ok(GaussianKernel { sigma })
    }

    #[inline]
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Kernel value without the length check.
    #[inline]
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), y.len());
        let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        exp(-d2 / (2.0 * self.sigma * self.sigma))
    }
}

/// Checked kernel evaluation.
pub fn kappa(x: &[f64], y: &[f64], k: &GaussianKernel) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    Ok(k.eval(x, y))
}

/// Ordered set of kernel centers, all of the same input dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Dictionary {
    input_dim: usize,
    centers: Vec<f64>,
}

impl Dictionary {
    pub fn new<C: AsRef<[f64]>>(centers: &[C]) -> Result<Self> {
        let first = centers
            .first()
            .ok_or_else(|| Error::invalid("dictionary needs at least one center"))?;
        let input_dim = first.as_ref().len();
        if input_dim == 0 {
            return Err(Error::invalid("centers must have positive dimension"));
        }
        let mut flat = Vec::with_capacity(centers.len() * input_dim);
        for c in centers {
            let c = c.as_ref();
            if c.len() != input_dim {
                return Err(Error::DimensionMismatch {
                    expected: input_dim,
                    found: c.len(),
                });
            }
            flat.extend_from_slice(c);
        }
        Ok(Dictionary {
            input_dim,
            centers: flat,
        })
    }

    /// Number of atoms `r`.
    #[inline]
    pub fn len(&self) -> usize {
        self.centers.len() / self.input_dim
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    #[inline]
    pub fn center(&self, j: usize) -> &[f64] {
        &self.centers[j * self.input_dim..(j + 1) * self.input_dim]
    }

    pub fn centers(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.centers.chunks_exact(self.input_dim)
    }

    /// Closest pair of centers `(i, j, distance)`, if there are at least two.
    pub fn closest_pair(&self) -> Option<(usize, usize, f64)> {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..self.len() {
            for j in i + 1..self.len() {
                let d2: f64 = self
                    .center(i)
                    .iter()
                    .zip(self.center(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if best.is_none_or(|b| d2 < b.2) {
                    best = Some((i, j, d2));
                }
            }
        }
        best.map(|(i, j, d2)| (i, j, sqrt(d2)))
    }

    fn check_input(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                found: u.len(),
            });
        }
        Ok(())
    }
}

/// The kernelised input `kappa_n = [kappa(u, u_j1), ..., kappa(u, u_jr)]`.
pub fn kernelized_input(d: &Dictionary, k: &GaussianKernel, u: &[f64]) -> Result<Vec<f64>> {
    let mut out = alloc::vec![0.0; d.len()];
    kernelized_input_into(d, k, u, &mut out)?;
    Ok(out)
}

/// Allocation-free variant of [`kernelized_input`].
pub fn kernelized_input_into(
    d: &Dictionary,
    k: &GaussianKernel,
    u: &[f64],
    out: &mut [f64],
) -> Result<()> {
    d.check_input(u)?;
    if out.len() != d.len() {
        return Err(Error::DimensionMismatch {
            expected: d.len(),
            found: out.len(),
        });
    }
    for (o, c) in out.iter_mut().zip(d.centers()) {
        *o = k.eval(u, c);
    }
    Ok(())
}

/// Gram matrix `G` of a dictionary and its spectral factors.
#[derive(Clone, Debug)]
pub struct GramFactor {
    pub g: SymMatrix,
    pub g_sqrt: SymMatrix,
    pub g_inv_sqrt: SymMatrix,
    pub g_inv: SymMatrix,
    chol: Cholesky,
}

impl GramFactor {
    #[inline]
    pub fn dim(&self) -> usize {
        self.g.dim()
    }

    /// `G^{-1} x` through the cached Cholesky factor.
    pub fn solve(&self, x: &[f64]) -> Vec<f64> {
        self.chol.solve(x)
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        self.chol.solve_in_place(x)
    }
}

/// Builds `G` with `G[l][m] = kappa(u_jl, u_jm)` and factors it.
pub fn gram(d: &Dictionary, k: &GaussianKernel) -> Result<GramFactor> {
    let pair = d.closest_pair();
    if let Some((first, second, distance)) = pair {
        if distance < NEAR_DUPLICATE_DISTANCE {
            return Err(Error::DuplicateCenters {
                first,
                second,
                distance,
            });
        }
    }
    let g = SymMatrix::from_upper_fn(d.len(), |i, j| {
        if i == j {
            1.0
        } else {
            k.eval(d.center(i), d.center(j))
        }
    });
    let factors = pd_factors(&g).map_err(|e| match (e, pair) {
        (Error::NotPositiveDefinite { eigenvalue, .. }, Some((first, second, distance))) => {
            Error::IllConditionedDictionary {
                eigenvalue,
                first,
                second,
                distance,
            }
        }
        (e, _) => e,
    })?;
    let chol = Cholesky::new(&g)?;
    Ok(GramFactor {
        g,
        g_sqrt: factors.sqrt,
        g_inv_sqrt: factors.inv_sqrt,
        g_inv: factors.inv,
        chol,
    })
}

/// Cartesian grid with `points_per_axis` uniformly spaced samples per axis,
/// endpoints included. A single point per axis sits at `lo`. The last axis
/// varies fastest.
pub fn grid_dictionary(lo: &[f64], hi: &[f64], points_per_axis: usize) -> Result<Dictionary> {
    if lo.len() != hi.len() {
        return Err(Error::DimensionMismatch {
            expected: lo.len(),
            found: hi.len(),
        });
    }
    if lo.is_empty() {
        return Err(Error::invalid("grid needs at least one axis"));
    }
    if points_per_axis == 0 {
        return Err(Error::invalid("points_per_axis must be at least 1"));
    }
    if lo.iter().zip(hi).any(|(a, b)| a.partial_cmp(b) != Some(core::cmp::Ordering::Less)) {
        return Err(Error::invalid("grid bounds need lo < hi on every axis"));
    }
    let dims = lo.len();
    let r = u32::try_from(dims)
        .ok()
        .and_then(|d| points_per_axis.checked_pow(d))
        .filter(|&r| r <= MAX_ATOMS)
        .ok_or(Error::SizeCap {
            what: "grid dictionary size",
            value: usize::MAX,
            cap: MAX_ATOMS,
        })?;

    let axis = |a: usize, t: usize| -> f64 {
        if points_per_axis == 1 {
            lo[a]
        } else {
            lo[a] + (hi[a] - lo[a]) * t as f64 / (points_per_axis - 1) as f64
        }
    };
    let mut flat = Vec::with_capacity(r * dims);
    for idx in 0..r {
        let mut rem = idx;
        let start = flat.len();
        flat.resize(start + dims, 0.0);
        for a in (0..dims).rev() {
            flat[start + a] = axis(a, rem % points_per_axis);
            rem /= points_per_axis;
        }
    }
    Ok(Dictionary {
        input_dim: dims,
        centers: flat,
    })
}

/// Greedy coherence sparsification: a sample joins the dictionary iff its
/// largest kernel value against the current atoms is at most `mu0`.
pub fn coherence_select<S: AsRef<[f64]>>(
    samples: &[S],
    k: &GaussianKernel,
    mu0: f64,
) -> Result<Dictionary> {
    if !(mu0 > 0.0 && mu0 < 1.0) {
        return Err(Error::invalid(format!("coherence threshold must lie in (0,1), got {mu0}")));
    }
    let first = samples
        .first()
        .ok_or_else(|| Error::invalid("coherence selection needs at least one sample"))?
        .as_ref();
    let dim = first.len();
    let mut flat: Vec<f64> = first.to_vec();
    for s in &samples[1..] {
        let s = s.as_ref();
        if s.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: s.len(),
            });
        }
        let coherent = flat.chunks_exact(dim).any(|c| k.eval(s, c) > mu0);
        if !coherent {
            if flat.len() / dim >= MAX_ATOMS {
                return Err(Error::SizeCap {
                    what: "coherence dictionary size",
                    value: flat.len() / dim + 1,
                    cap: MAX_ATOMS,
                });
            }
            flat.extend_from_slice(s);
        }
    }
    Ok(Dictionary {
        input_dim: dim,
        centers: flat,
    })
}

/// Bisects the coherence threshold over `(0, 1)` until the greedy pass on
/// `samples` selects exactly `target` atoms. Returns the threshold and the
/// dictionary.
pub fn calibrate_coherence<S: AsRef<[f64]>>(
    samples: &[S],
    k: &GaussianKernel,
    target: usize,
) -> Result<(f64, Dictionary)> {
    if target == 0 {
        return Err(Error::invalid("target dictionary size must be positive"));
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let d = coherence_select(samples, k, mid)?;
        match d.len().cmp(&target) {
            core::cmp::Ordering::Equal => return Ok((mid, d)),
            core::cmp::Ordering::Less => lo = mid,
            core::cmp::Ordering::Greater => hi = mid,
        }
    }
    Err(Error::invalid(format!(
        "no coherence threshold selects exactly {target} atoms from {} samples",
        samples.len()
    )))
}
