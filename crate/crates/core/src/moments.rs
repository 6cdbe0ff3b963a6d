//! Statistics of the kernelised input under a zero-mean Gaussian input.
//!
//! Products of Gaussian kernels against a Gaussian density integrate in
//! closed form. Everything that depends on the unknown system (`p`, `E[d^2]`)
//! is estimated from a simulated stream instead.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::kernel::{gram, kernelized_input_into, Dictionary, GaussianKernel, GramFactor};
use crate::linalg::{dot, pd_factors, Cholesky, Matrix, SymMatrix};
use crate::math::{exp, sqrt};
use crate::sim::{rng_for, InputGenerator, Plant, SignalSource, CROSS_STAT_STREAM};
use crate::{Error, Result};

/// Largest dictionary for which fourth-order tensors are materialised.
pub const MAX_TENSOR_DIM: usize = 100;

/// Number of batches used for batch-means standard errors.
pub const STREAM_BATCHES: usize = 100;

/// Zero-mean Gaussian law of the input vector.
#[derive(Clone, Debug, PartialEq)]
pub struct InputModel {
    r_u: SymMatrix,
}

impl InputModel {
    pub fn new(r_u: SymMatrix) -> Result<Self> {
        pd_factors(&r_u)?;
        Ok(InputModel { r_u })
    }

    pub fn r_u(&self) -> &SymMatrix {
        &self.r_u
    }

    pub fn dim(&self) -> usize {
        self.r_u.dim()
    }

    fn factor(&self, k: &GaussianKernel, order: usize) -> Result<ProductFactor> {
        let s2 = k.sigma() * k.sigma();
        // M = I + 2 A R_u with A = K / (2 sigma^2) I
        let scale = order as f64 / s2;
        let l = self.dim();
        let m = SymMatrix::from_upper_fn(l, |i, j| {
            let v = scale * self.r_u[(i, j)];
            if i == j {
                1.0 + v
            } else {
                v
            }
        });
        let chol = Cholesky::new(&m)?;
        Ok(ProductFactor {
            r_u: self.r_u.as_matrix().clone(),
            half_log_det: 0.5 * chol.log_det(),
            chol,
            inv_s2: 1.0 / s2,
        })
    }
}

/// Cached factorisation of `I + 2 A R_u` for one product order.
#[derive(Clone, Debug)]
struct ProductFactor {
    r_u: Matrix,
    chol: Cholesky,
    half_log_det: f64,
    inv_s2: f64,
}

impl ProductFactor {
    fn eval<C: AsRef<[f64]>>(&self, centers: &[C]) -> f64 {
        let l = self.r_u.rows();
        let mut b = vec![0.0; l];
        let mut sq = 0.0;
        for c in centers {
            let c = c.as_ref();
            for (bi, ci) in b.iter_mut().zip(c) {
                *bi += ci;
            }
            sq += dot(c, c);
        }
        for bi in &mut b {
            *bi *= self.inv_s2;
        }
        // b^T (R^{-1} + 2A)^{-1} b = b^T R_u (I + 2 A R_u)^{-1} b
        let y = self.chol.solve(&b);
        let quad = dot(&b, &self.r_u.matvec(&y));
        exp(-0.5 * sq * self.inv_s2 + 0.5 * quad - self.half_log_det)
    }
}

fn check_centers<C: AsRef<[f64]>>(centers: &[C], dim: usize) -> Result<()> {
    if centers.is_empty() {
        return Err(Error::invalid("moment of an empty product"));
    }
    for c in centers {
        if c.as_ref().len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: c.as_ref().len(),
            });
        }
    }
    Ok(())
}

/// `E[prod_k kappa(u, c_k)]` for `u ~ N(0, R_u)`.
pub fn multi_point_moment<C: AsRef<[f64]>>(centers: &[C], k: &GaussianKernel, im: &InputModel) -> Result<f64> {
    check_centers(centers, im.dim())?;
    Ok(im.factor(k, centers.len())?.eval(centers))
}

fn check_dictionary(d: &Dictionary, im: &InputModel) -> Result<()> {
    if d.input_dim() != im.dim() {
        return Err(Error::DimensionMismatch {
            expected: im.dim(),
            found: d.input_dim(),
        });
    }
    Ok(())
}

/// `R_kappa = E[kappa_n kappa_n^T]`.
pub fn second_moment(d: &Dictionary, k: &GaussianKernel, im: &InputModel) -> Result<SymMatrix> {
    check_dictionary(d, im)?;
    let f = im.factor(k, 2)?;
    Ok(SymMatrix::from_upper_fn(d.len(), |i, j| f.eval(&[d.center(i), d.center(j)])))
}

/// Dense `r x r x r x r` array, last index fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4 {
    dim: usize,
    data: Vec<f64>,
}

const PERMUTATIONS: [[usize; 4]; 24] = [
    [0, 1, 2, 3], [0, 1, 3, 2], [0, 2, 1, 3], [0, 2, 3, 1], [0, 3, 1, 2], [0, 3, 2, 1],
    [1, 0, 2, 3], [1, 0, 3, 2], [1, 2, 0, 3], [1, 2, 3, 0], [1, 3, 0, 2], [1, 3, 2, 0],
    [2, 0, 1, 3], [2, 0, 3, 1], [2, 1, 0, 3], [2, 1, 3, 0], [2, 3, 0, 1], [2, 3, 1, 0],
    [3, 0, 1, 2], [3, 0, 2, 1], [3, 1, 0, 2], [3, 1, 2, 0], [3, 2, 0, 1], [3, 2, 1, 0],
];

impl Tensor4 {
    pub fn zeros(dim: usize) -> Result<Self> {
        if dim > MAX_TENSOR_DIM {
            return Err(Error::SizeCap {
                what: "tensor dimension",
                value: dim,
                cap: MAX_TENSOR_DIM,
            });
        }
        Ok(Tensor4 {
            dim,
            data: vec![0.0; dim * dim * dim * dim],
        })
    }

    pub fn from_vec(dim: usize, data: Vec<f64>) -> Result<Self> {
        let mut t = Tensor4::zeros(dim)?;
        if data.len() != t.data.len() {
            return Err(Error::DimensionMismatch {
                expected: t.data.len(),
                found: data.len(),
            });
        }
        t.data = data;
        Ok(t)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    fn offset(&self, i: usize, j: usize, s: usize, t: usize) -> usize {
        ((i * self.dim + j) * self.dim + s) * self.dim + t
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, s: usize, t: usize) -> f64 {
        self.data[self.offset(i, j, s, t)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, s: usize, t: usize, v: f64) {
        let o = self.offset(i, j, s, t);
        self.data[o] = v;
    }

    /// The `r x r` block `(s, t) -> T[i, j, s, t]`, row-major.
    pub fn slab(&self, i: usize, j: usize) -> &[f64] {
        let n = self.dim * self.dim;
        let o = (i * self.dim + j) * n;
        &self.data[o..o + n]
    }

    pub fn slab_matrix(&self, i: usize, j: usize) -> Matrix {
        Matrix::from_vec(self.dim, self.dim, self.slab(i, j).to_vec()).expect("slab shape")
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Calls `f` once per sorted index tuple `i <= j <= s <= t`.
    pub fn for_each_multiset(dim: usize, mut f: impl FnMut([usize; 4])) {
        for i in 0..dim {
            for j in i..dim {
                for s in j..dim {
                    for t in s..dim {
                        f([i, j, s, t]);
                    }
                }
            }
        }
    }

    /// Writes `v` at every permutation of `idx`.
    pub fn set_all_permutations(&mut self, idx: [usize; 4], v: f64) {
        for p in &PERMUTATIONS {
            self.set(idx[p[0]], idx[p[1]], idx[p[2]], idx[p[3]], v);
        }
    }

    /// Replaces each entry by the mean over its permutation orbit, making the
    /// tensor exactly symmetric.
    pub fn symmetrize(&mut self) {
        let dim = self.dim;
        let mut out = self.clone();
        Tensor4::for_each_multiset(dim, |idx| {
            let mean = PERMUTATIONS
                .iter()
                .map(|p| self.get(idx[p[0]], idx[p[1]], idx[p[2]], idx[p[3]]))
                .sum::<f64>()
                / 24.0;
            out.set_all_permutations(idx, mean);
        });
        *self = out;
    }

    /// Largest `|T[idx] - T[perm(idx)]|` over all entries and permutations.
    pub fn symmetry_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        Tensor4::for_each_multiset(self.dim, |idx| {
            let base = self.get(idx[0], idx[1], idx[2], idx[3]);
            for p in &PERMUTATIONS {
                let v = self.get(idx[p[0]], idx[p[1]], idx[p[2]], idx[p[3]]);
                worst = worst.max((v - base).abs());
            }
        });
        worst
    }
}

/// `S[i, j, s, t] = E[kappa_i kappa_j kappa_s kappa_t]`.
pub fn fourth_tensor(d: &Dictionary, k: &GaussianKernel, im: &InputModel) -> Result<Tensor4> {
    check_dictionary(d, im)?;
    let f = im.factor(k, 4)?;
    let mut s = Tensor4::zeros(d.len())?;
    Tensor4::for_each_multiset(d.len(), |[i, j, a, b]| {
        let v = f.eval(&[d.center(i), d.center(j), d.center(a), d.center(b)]);
        s.set_all_permutations([i, j, a, b], v);
    });
    Ok(s)
}

/// `OUT[a, b, i, j] = (W^T T_{i,j} W)[a, b]`: contracts the last two modes
/// with `W` and moves them to the front.
fn contract_trailing(t: &Tensor4, w: &Matrix) -> Tensor4 {
    let r = t.dim();
    let wt = w.transpose();
    let mut out = Tensor4::zeros(r).expect("dimension already checked");
    for i in 0..r {
        for j in 0..r {
            let x = wt.matmul(&t.slab_matrix(i, j)).matmul(w);
            for a in 0..r {
                for b in 0..r {
                    out.set(a, b, i, j, x[(a, b)]);
                }
            }
        }
    }
    out
}

/// `H[m, p, i, j] = g_m^T S_{i,j} g_p` with `g_m` column `m` of `W`.
pub fn h_tensor(s: &Tensor4, w: &SymMatrix) -> Tensor4 {
    contract_trailing(s, w)
}

/// `S~[l, m, p, q] = g_l^T H_{m,p} g_q`, before symmetrisation.
pub fn s_tilde_raw(h: &Tensor4, w: &SymMatrix) -> Tensor4 {
    let r = h.dim();
    let wm: &Matrix = w;
    let wt = wm.transpose();
    let mut out = Tensor4::zeros(r).expect("dimension already checked");
    for m in 0..r {
        for p in 0..r {
            let y = wt.matmul(&h.slab_matrix(m, p)).matmul(wm);
            for l in 0..r {
                for q in 0..r {
                    out.set(l, m, p, q, y[(l, q)]);
                }
            }
        }
    }
    out
}

/// Transformed second- and fourth-order model of the kernelised input.
#[derive(Clone, Debug)]
pub struct MomentModel {
    pub kernel: GaussianKernel,
    pub dictionary: Dictionary,
    pub input: InputModel,
    pub gram: GramFactor,
    pub r_kappa: SymMatrix,
    pub p: Vec<f64>,
    pub d2: f64,
    pub r_tilde: SymMatrix,
    pub p_tilde: Vec<f64>,
    pub alpha_star_tilde: Vec<f64>,
    pub j_min: f64,
    pub s_tensor: Tensor4,
    /// Indexed `[m, p, i, j]`.
    pub h: Tensor4,
    /// Indexed `[l, m, p, q]`, exactly symmetric.
    pub s_tilde: Tensor4,
}

impl MomentModel {
    pub fn dim(&self) -> usize {
        self.dictionary.len()
    }

    /// `H_{m,p}` as a matrix over `(i, j)`.
    pub fn h_matrix(&self, m: usize, p: usize) -> Matrix {
        self.h.slab_matrix(m, p)
    }

    /// `S~_{l,m}` as a matrix over `(p, q)`.
    pub fn s_tilde_matrix(&self, l: usize, m: usize) -> Matrix {
        self.s_tilde.slab_matrix(l, m)
    }

    /// Optimal coefficients in the original coordinates, `G^{-1/2} alpha~*`.
    pub fn alpha_star(&self) -> Vec<f64> {
        self.gram.g_inv_sqrt.matvec(&self.alpha_star_tilde)
    }

    /// Assembles the model from its primary quantities; everything else is
    /// derived deterministically.
    pub fn from_parts(
        dictionary: Dictionary,
        kernel: GaussianKernel,
        input: InputModel,
        r_kappa: SymMatrix,
        s_tensor: Tensor4,
        p: Vec<f64>,
        d2: f64,
    ) -> Result<Self> {
        check_dictionary(&dictionary, &input)?;
        let r = dictionary.len();
        for found in [r_kappa.dim(), s_tensor.dim(), p.len()] {
            if found != r {
                return Err(Error::DimensionMismatch { expected: r, found });
            }
        }
        if !d2.is_finite() || d2 < 0.0 {
            return Err(Error::invalid(format!("E[d^2] must be finite and >= 0, got {d2}")));
        }
        let gf = gram(&dictionary, &kernel)?;
        let w = &gf.g_inv_sqrt;
        let r_tilde = r_kappa.congruence(w);
        pd_factors(&r_tilde)?;
        let p_tilde = w.matvec(&p);
        let alpha_star_tilde = Cholesky::new(&r_tilde)?.solve(&p_tilde);
        let j_min = d2 - dot(&p_tilde, &alpha_star_tilde);
        let h = h_tensor(&s_tensor, w);
        let mut s_tilde = s_tilde_raw(&h, w);
        s_tilde.symmetrize();
        Ok(MomentModel {
            kernel,
            dictionary,
            input,
            gram: gf,
            r_kappa,
            p,
            d2,
            r_tilde,
            p_tilde,
            alpha_star_tilde,
            j_min,
            s_tensor,
            h,
            s_tilde,
        })
    }
}

pub fn build_model(
    d: &Dictionary,
    k: &GaussianKernel,
    im: &InputModel,
    p: &[f64],
    d2: f64,
) -> Result<MomentModel> {
    let r_kappa = second_moment(d, k, im)?;
    let s = fourth_tensor(d, k, im)?;
    MomentModel::from_parts(d.clone(), *k, im.clone(), r_kappa, s, p.to_vec(), d2)
}

/// Partition of a stream of `n_samples` into equal batches spread over shards.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchPlan {
    pub n_samples: usize,
    pub shards: usize,
}

impl BatchPlan {
    pub fn new(n_samples: usize, shards: usize) -> Result<Self> {
        if shards == 0 || shards > STREAM_BATCHES {
            return Err(Error::invalid(format!("shard count must lie in 1..={STREAM_BATCHES}, got {shards}")));
        }
        if n_samples < STREAM_BATCHES {
            return Err(Error::invalid(format!("need at least {STREAM_BATCHES} samples, got {n_samples}")));
        }
        Ok(BatchPlan { n_samples, shards })
    }

    /// Batch `b` holds `n / B` samples; the last one also takes the remainder.
    pub fn batch_len(&self, b: usize) -> usize {
        let base = self.n_samples / STREAM_BATCHES;
        if b + 1 == STREAM_BATCHES {
            base + self.n_samples % STREAM_BATCHES
        } else {
            base
        }
    }

    pub fn shard_batches(&self, shard: usize) -> Range<usize> {
        (shard * STREAM_BATCHES / self.shards)..((shard + 1) * STREAM_BATCHES / self.shards)
    }
}

/// Per-batch sums produced by one shard.
#[derive(Clone, Debug)]
pub struct BatchSums {
    batches: Range<usize>,
    width: usize,
    sums: Vec<f64>,
}

/// Stream means with batch-means standard errors.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamMeans {
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n_samples: usize,
}

/// Runs shard `shard` of `plan`: a burnt-in stream on its own RNG stream,
/// accumulating `f(d, kappa, out)` into per-batch sums.
#[allow(clippy::too_many_arguments)]
pub fn run_stream_shard<P, F>(
    plan: &BatchPlan,
    shard: usize,
    input: &InputGenerator,
    plant: &P,
    burn_in: usize,
    d: &Dictionary,
    k: &GaussianKernel,
    width: usize,
    f: F,
) -> Result<BatchSums>
where
    P: Plant + Clone,
    F: Fn(f64, &[f64], &mut [f64]),
{
    let batches = plan.shard_batches(shard);
    let mut src = SignalSource::new(*input, plant.clone(), rng_for(input.seed, CROSS_STAT_STREAM + shard as u64));
    src.burn_in(burn_in);
    let mut kap = vec![0.0; d.len()];
    let mut out = vec![0.0; width];
    let mut sums = vec![0.0; batches.len() * width];
    for (slot, b) in batches.clone().enumerate() {
        let acc = &mut sums[slot * width..(slot + 1) * width];
        for _ in 0..plan.batch_len(b) {
            let s = src.next_sample();
            kernelized_input_into(d, k, &s.u, &mut kap)?;
            f(s.d, &kap, &mut out);
            for (a, o) in acc.iter_mut().zip(&out) {
                *a += o;
            }
        }
    }
    Ok(BatchSums { batches, width, sums })
}

/// Combines shard results, which must be given in shard order.
pub fn merge_stream_shards(plan: &BatchPlan, parts: &[BatchSums]) -> Result<StreamMeans> {
    let width = parts.first().map_or(0, |p| p.width);
    let mut batch_sums = vec![0.0; STREAM_BATCHES * width];
    let mut next = 0;
    for part in parts {
        if part.batches.start != next || part.width != width {
            return Err(Error::invalid("stream shards out of order or inconsistent"));
        }
        batch_sums[part.batches.start * width..part.batches.end * width].copy_from_slice(&part.sums);
        next = part.batches.end;
    }
    if next != STREAM_BATCHES {
        return Err(Error::invalid("missing stream shards"));
    }
    let n = plan.n_samples as f64;
    let mut mean = vec![0.0; width];
    for b in 0..STREAM_BATCHES {
        for c in 0..width {
            mean[c] += batch_sums[b * width + c];
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = vec![0.0; width];
    for b in 0..STREAM_BATCHES {
        let len = plan.batch_len(b) as f64;
        for c in 0..width {
            let dev = batch_sums[b * width + c] / len - mean[c];
            var[c] += dev * dev;
        }
    }
    let bn = STREAM_BATCHES as f64;
    let stderr = var.iter().map(|v| sqrt(v / (bn - 1.0) / bn)).collect();
    Ok(StreamMeans {
        mean,
        stderr,
        n_samples: plan.n_samples,
    })
}

/// Sequential driver over all shards of `plan`.
#[allow(clippy::too_many_arguments)]
pub fn stream_means<P, F>(
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
    P: Plant + Clone,
    F: Fn(f64, &[f64], &mut [f64]),
{
    let parts = (0..plan.shards)
        .map(|s| run_stream_shard(plan, s, input, plant, burn_in, d, k, width, &f))
        .collect::<Result<Vec<_>>>()?;
    merge_stream_shards(plan, &parts)
}

/// Width of the per-sample record used for cross statistics.
pub fn cross_stats_width(d: &Dictionary) -> usize {
    d.len() + 1
}

/// Per-sample record `[d kappa_1, ..., d kappa_r, d^2]`.
pub fn cross_stats_record(d: f64, kappa: &[f64], out: &mut [f64]) {
    let r = kappa.len();
    for (o, k) in out[..r].iter_mut().zip(kappa) {
        *o = d * k;
    }
    out[r] = d * d;
}

/// Monte-Carlo estimates of `p = E[d kappa]` and `E[d^2]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossStats {
    pub p: Vec<f64>,
    pub d2: f64,
    pub p_stderr: Vec<f64>,
    pub d2_stderr: f64,
    pub n_samples: usize,
}

impl From<StreamMeans> for CrossStats {
    fn from(m: StreamMeans) -> Self {
        let r = m.mean.len() - 1;
        CrossStats {
            p: m.mean[..r].to_vec(),
            d2: m.mean[r],
            p_stderr: m.stderr[..r].to_vec(),
            d2_stderr: m.stderr[r],
            n_samples: m.n_samples,
        }
    }
}

/// Minimum stream length accepted by [`estimate_cross_stats`].
pub const MIN_CROSS_SAMPLES: usize = 10_000;

pub fn estimate_cross_stats<P: Plant + Clone>(
    sys: &P,
    input: &InputGenerator,
    burn_in: usize,
    d: &Dictionary,
    k: &GaussianKernel,
    n_samples: usize,
    shards: usize,
) -> Result<CrossStats> {
    if n_samples < MIN_CROSS_SAMPLES {
        return Err(Error::invalid(format!("need at least {MIN_CROSS_SAMPLES} samples, got {n_samples}")));
    }
    let plan = BatchPlan::new(n_samples, shards)?;
    let m = stream_means(&plan, input, sys, burn_in, d, k, cross_stats_width(d), cross_stats_record)?;
    Ok(m.into())
}
