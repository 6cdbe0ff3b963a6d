//! Agreement measures between a simulated and a theoretical learning curve.

use std::fmt::Write as _;

use kaflab_core::sim::LearningCurve;

use crate::io::fmt_f64;

/// Points `0..HEAD_POINTS` form the initial window.
pub const HEAD_POINTS: usize = 11;
pub const TAIL_FRACTION: f64 = 0.1;
/// Iterations up to and including this index are excluded from the
/// late-transient gap.
pub const GAP_SKIP: usize = 50;

#[derive(Clone, Debug, PartialEq)]
pub struct CurveMetrics {
    pub len: usize,
    /// Mean simulated MSE over the initial window.
    pub head_sim: f64,
    /// Theoretical MSE at `n = 0`.
    pub theory_start: f64,
    pub head_rel_error: f64,
    pub tail_sim: f64,
    pub tail_theory: f64,
    /// `|tail_sim / tail_theory - 1|` over the final 10% of iterations.
    pub steady_rel_error: f64,
    pub max_log_gap: f64,
    pub max_log_gap_after: f64,
    /// Iteration where the late gap peaks.
    pub worst_after: Option<usize>,
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a / b - 1.0).abs()
    }
}

/// `|log10 a - log10 b|`; equal values give 0, a non-positive value against
/// a different one gives infinity.
pub fn log_gap(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else if a > 0.0 && b > 0.0 {
        (a.log10() - b.log10()).abs()
    } else {
        f64::INFINITY
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Both curves must be non-empty and of equal length.
pub fn compare_curves(sim: &[f64], theory: &[f64]) -> CurveMetrics {
    assert!(!sim.is_empty() && sim.len() == theory.len(), "curves must be non-empty and equally long");
    let n = sim.len();
    let head_sim = mean(&sim[..HEAD_POINTS.min(n)]);
    let tail = (n as f64 * TAIL_FRACTION).ceil().clamp(1.0, n as f64) as usize;
    let tail_sim = mean(&sim[n - tail..]);
    let tail_theory = mean(&theory[n - tail..]);
    let gaps: Vec<f64> = sim.iter().zip(theory).map(|(a, b)| log_gap(*a, *b)).collect();
    let max_log_gap = gaps.iter().copied().fold(0.0, f64::max);
    let mut worst_after = None;
    let mut max_log_gap_after = 0.0;
    for (i, g) in gaps.iter().enumerate().skip(GAP_SKIP + 1) {
        if worst_after.is_none() || *g > max_log_gap_after {
            max_log_gap_after = *g;
            worst_after = Some(i);
        }
    }
    CurveMetrics {
        len: n,
        head_sim,
        theory_start: theory[0],
        head_rel_error: rel(head_sim, theory[0]),
        tail_sim,
        tail_theory,
        steady_rel_error: rel(tail_sim, tail_theory),
        max_log_gap,
        max_log_gap_after,
        worst_after,
    }
}

/// Truncates to the common length. Returns the metrics and the number of
/// dropped points, if any.
pub fn compare(sim: &LearningCurve, theory: &LearningCurve) -> (CurveMetrics, Option<usize>) {
    let n = sim.len().min(theory.len());
    let dropped = (sim.len() != theory.len()).then(|| sim.len().max(theory.len()) - n);
    (compare_curves(&sim.mse[..n], &theory.mse[..n]), dropped)
}

pub fn overlay_csv(sim: &[f64], theory: &[f64]) -> String {
    let mut s = String::from("n,mse_sim,mse_theory\n");
    for (n, (a, b)) in sim.iter().zip(theory).enumerate() {
        let _ = writeln!(s, "{n},{},{}", fmt_f64(*a), fmt_f64(*b));
    }
    s
}

impl CurveMetrics {
    pub fn report(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "points = {}", self.len);
        let _ = writeln!(s, "head_window = 0..{}", HEAD_POINTS.min(self.len) - 1);
        let _ = writeln!(s, "head_mse_sim = {}", fmt_f64(self.head_sim));
        let _ = writeln!(s, "mse_theory_0 = {}", fmt_f64(self.theory_start));
        let _ = writeln!(s, "head_rel_error = {}", fmt_f64(self.head_rel_error));
        let _ = writeln!(s, "tail_fraction = {TAIL_FRACTION}");
        let _ = writeln!(s, "tail_mse_sim = {}", fmt_f64(self.tail_sim));
        let _ = writeln!(s, "tail_mse_theory = {}", fmt_f64(self.tail_theory));
        let _ = writeln!(s, "steady_rel_error = {}", fmt_f64(self.steady_rel_error));
        let _ = writeln!(s, "max_log10_gap = {}", fmt_f64(self.max_log_gap));
        let _ = writeln!(s, "max_log10_gap_after_{GAP_SKIP} = {}", fmt_f64(self.max_log_gap_after));
        match self.worst_after {
            Some(i) => {
                let _ = writeln!(s, "worst_n_after_{GAP_SKIP} = {i}");
            }
            None => {
                let _ = writeln!(s, "worst_n_after_{GAP_SKIP} = none");
            }
        }
        s
    }
}
