//! Mean and mean-square behaviour of Natural KLMS in the transformed
//! coordinates `alpha~ = G^{1/2} alpha`.
//!
//! In those coordinates the natural update is ordinary LMS driven by
//! `kappa~ = G^{-1/2} kappa`, so the classical independence-based recursions
//! apply with `R~`, `p~` and the fourth-order tensor `S~`.

use alloc::vec::Vec;

use crate::linalg::{kron, spectral_radius, sym_eigenvalues, vec_lex, unvec_lex, dot, Lu, Matrix, SymMatrix};
use crate::moments::MomentModel;
use crate::sim::{CurveKind, LearningCurve};
use crate::{Error, Result};

/// Largest supported `r^2`, the side of the lexicographic matrices.
pub const MAX_K_SIDE: usize = 10_000;

/// `2 / lambda_max(R~)`.
pub fn mean_stability_bound(m: &MomentModel) -> Result<f64> {
    let ev = sym_eigenvalues(&m.r_tilde)?;
    Ok(2.0 / ev.last().copied().unwrap_or(f64::NAN))
}

fn check_eta(eta: f64) -> Result<()> {
    if eta >= 0.0 && eta.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(alloc::format!("step size must be finite and >= 0, got {eta}")))
    }
}

/// Trajectory of `E[v~_n]` under `v_{n+1} = (I - eta R~) v_n`, starting at
/// `v0`, with `n_steps + 1` entries.
pub fn mean_recursion(m: &MomentModel, eta: f64, v0: &[f64], n_steps: usize) -> Result<Vec<Vec<f64>>> {
    check_eta(eta)?;
    let r = m.dim();
    if v0.len() != r {
        return Err(Error::DimensionMismatch {
            expected: r,
            found: v0.len(),
        });
    }
    let mut out = Vec::with_capacity(n_steps + 1);
    let mut v = v0.to_vec();
    out.push(v.clone());
    for _ in 0..n_steps {
        let rv = m.r_tilde.matvec(&v);
        for (x, y) in v.iter_mut().zip(&rv) {
            *x -= eta * y;
        }
        out.push(v.clone());
    }
    Ok(out)
}

/// `K = I - eta (K1 + K2) + eta^2 K3` over column-stacked `r x r` matrices.
#[derive(Clone, Debug)]
pub struct KMatrix {
    pub k: SymMatrix,
    pub k1: Matrix,
    pub k2: Matrix,
    pub k3: Matrix,
    pub eta: f64,
}

impl KMatrix {
    pub fn dim(&self) -> usize {
        self.k.dim()
    }

    /// `K vec(C)`.
    pub fn apply(&self, c: &[f64]) -> Vec<f64> {
        self.k.matvec(c)
    }
}

pub fn build_k(m: &MomentModel, eta: f64) -> Result<KMatrix> {
    check_eta(eta)?;
    let r = m.dim();
    let side = r * r;
    if side > MAX_K_SIDE {
        return Err(Error::SizeCap {
            what: "r^2",
            value: side,
            cap: MAX_K_SIDE,
        });
    }
    let id = Matrix::identity(r);
    let rt: &Matrix = &m.r_tilde;
    let k1 = kron(&id, rt);
    let k2 = kron(rt, &id);
    let k3 = Matrix::from_fn(side, side, |a, b| {
        let (l, mm) = (a % r, a / r);
        let (p, q) = (b % r, b / r);
        m.s_tilde.get(l, mm, p, q)
    });
    let e2 = eta * eta;
    let k = Matrix::from_fn(side, side, |a, b| {
        let diag = if a == b { 1.0 } else { 0.0 };
        diag - eta * (k1[(a, b)] + k2[(a, b)]) + e2 * k3[(a, b)]
    });
    let k = SymMatrix::try_from(k)?;
    Ok(KMatrix { k, k1, k2, k3, eta })
}

/// Whether `rho(K) < 1`, together with `rho(K)`.
pub fn mean_square_stable(km: &KMatrix) -> Result<(bool, f64)> {
    let rho = spectral_radius(&km.k)?;
    Ok((rho < 1.0, rho))
}

/// One iterate of the transient model.
#[derive(Clone, Debug, PartialEq)]
pub struct TransientState {
    pub c_tilde: SymMatrix,
    pub n: usize,
    pub mse: f64,
}

/// `J_min + tr(R~ C)`.
pub fn excess_mse(m: &MomentModel, c: &SymMatrix) -> f64 {
    m.j_min + dot(m.r_tilde.as_slice(), c.as_slice())
}

/// `T~[l, m] = tr(S~_{l,m} C)` for symmetric `C`.
pub fn t_tilde(m: &MomentModel, c: &SymMatrix) -> SymMatrix {
    let cv = c.as_slice();
    SymMatrix::from_upper_fn(m.dim(), |l, mm| dot(m.s_tilde.slab(l, mm), cv))
}

/// Iterator over the transient recursion, starting from `alpha_0 = 0`.
#[derive(Clone, Debug)]
pub struct Transient<'m> {
    model: &'m MomentModel,
    eta: f64,
    state: TransientState,
}

impl<'m> Transient<'m> {
    pub fn new(model: &'m MomentModel, eta: f64) -> Result<Self> {
        check_eta(eta)?;
        let a = &model.alpha_star_tilde;
        let c = SymMatrix::from_upper_fn(a.len(), |i, j| a[i] * a[j]);
        Ok(Self::from_covariance(model, eta, c))
    }

    pub fn from_covariance(model: &'m MomentModel, eta: f64, c_tilde: SymMatrix) -> Self {
        let mse = excess_mse(model, &c_tilde);
        Transient {
            model,
            eta,
            state: TransientState { c_tilde, n: 0, mse },
        }
    }

    pub fn state(&self) -> &TransientState {
        &self.state
    }

    /// Advances one iteration.
    pub fn advance(&mut self) -> Result<&TransientState> {
        let m = self.model;
        let c = &self.state.c_tilde;
        let r: &Matrix = &m.r_tilde;
        let rc = r.matmul(c);
        let t = t_tilde(m, c);
        let e = self.eta;
        let e2j = e * e * m.j_min;
        let r_n = c.rows();
        let next = Matrix::from_fn(r_n, r_n, |i, j| {
            c[(i, j)] + e * e * t[(i, j)] + e2j * r[(i, j)] - e * (rc[(i, j)] + rc[(j, i)])
        });
        let next = SymMatrix::symmetrize(&next);
        if next.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                last_finite: self.state.n,
                run: None,
            });
        }
        let mse = excess_mse(m, &next);
        self.state = TransientState {
            c_tilde: next,
            n: self.state.n + 1,
            mse,
        };
        Ok(&self.state)
    }
}

/// Theoretical learning curve `MSE(0), ..., MSE(n_steps - 1)`.
pub fn transient_mse(m: &MomentModel, eta: f64, n_steps: usize) -> Result<LearningCurve> {
    let mut tr = Transient::new(m, eta)?;
    let bound = mean_stability_bound(m)?;
    if eta >= bound {
        log::warn!("step size {eta} is outside the mean stability bound {bound}; the transient model may diverge");
    }
    let mut mse = Vec::with_capacity(n_steps);
    if n_steps > 0 {
        mse.push(tr.state().mse);
    }
    for _ in 1..n_steps {
        mse.push(tr.advance()?.mse);
    }
    Ok(LearningCurve {
        mse,
        n_runs: 0,
        kind: CurveKind::Theoretical,
    })
}

#[derive(Clone, Debug)]
pub struct SteadyState {
    pub mse: f64,
    pub c_inf: SymMatrix,
    pub radius: f64,
}

/// Fixed point `c = K c + eta^2 J_min vec(R~)` of the transient recursion.
pub fn steady_state_mse(m: &MomentModel, eta: f64) -> Result<SteadyState> {
    let km = build_k(m, eta)?;
    steady_state_from_k(m, &km)
}

pub fn steady_state_from_k(m: &MomentModel, km: &KMatrix) -> Result<SteadyState> {
    let (stable, radius) = mean_square_stable(km)?;
    if !stable {
        return Err(Error::Unstable { radius });
    }
    let side = km.dim();
    let i_minus_k = Matrix::from_fn(side, side, |a, b| if a == b { 1.0 } else { 0.0 } - km.k[(a, b)]);
    let scale = km.eta * km.eta * m.j_min;
    let rhs: Vec<f64> = vec_lex(&m.r_tilde).into_iter().map(|v| scale * v).collect();
    let c = Lu::new(&i_minus_k)?.solve(&rhs);
    let c_inf = SymMatrix::symmetrize(&unvec_lex(&c, m.dim())?);
    Ok(SteadyState {
        mse: excess_mse(m, &c_inf),
        c_inf,
        radius,
    })
}

/// Multiplication counts per iteration of the full and selective updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Complexity {
    pub full: u64,
    pub selective: u64,
}

/// `full = (L + r + 2) r`, `selective = (L + s_n + 1) r + s_n^3`.
pub fn complexity_report(r: u64, input_dim: u64, s_n: u64) -> Result<Complexity> {
    if r == 0 || input_dim == 0 || s_n == 0 {
        return Err(Error::invalid("complexity arguments must be positive"));
    }
    if s_n > r {
        return Err(Error::invalid(alloc::format!("s_n = {s_n} exceeds r = {r}")));
    }
    Ok(Complexity {
        full: (input_dim + r + 2) * r,
        selective: (input_dim + s_n + 1) * r + s_n * s_n * s_n,
    })
}
