//! Matrix functions of symmetric operators by truncated Taylor series.
//!
//! `h(X) v` is approximated by `c * sum_{k<=K} b_k (I - tau X)^k v`, where
//! `tau = step_scale / lambda_max` and `(b_k, c)` come from the expansion of
//! `h` around `tau * x = 1`.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::sparse_ops::FeatureTensor;

pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &FeatureTensor) -> FeatureTensor;
    /// Row-sum bound, when the operator has explicit entries.
    fn gershgorin(&self) -> Option<f64> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MatrixFunction {
    Inverse,
    InverseSqrt,
    Sqrt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundMethod {
    /// Gershgorin when the operator has explicit entries, power iteration otherwise.
    Auto,
    PowerIteration,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproxConfig {
    /// Highest series power `K`.
    pub order: u32,
    /// `tau = step_scale / lambda_max`, in `(0, 1]`.
    pub step_scale: f64,
    pub bound: BoundMethod,
    pub power_iterations: u32,
    /// Stop once a term falls below `tolerance` times the running sum.
    pub tolerance: Option<f64>,
}

impl Default for ApproxConfig {
    fn default() -> Self {
        Self {
            order: 256,
            step_scale: 1.0,
            bound: BoundMethod::Auto,
            power_iterations: 30,
            tolerance: None,
        }
    }
}

impl ApproxConfig {
    pub fn with_order(order: u32) -> Self {
        Self { order, ..Self::default() }
    }
}

/// Safety factor applied to power-iteration estimates.
pub const POWER_MARGIN: f64 = 1.05;

/// Deterministic start vector with no zero or repeated pattern.
fn start_vector(n: usize) -> FeatureTensor {
    let data = (0..n)
        .map(|i| {
            let h = (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) >> 40;
            1.0 + (h as f64) / (1u64 << 24) as f64
        })
        .collect();
    FeatureTensor::from_vec(data, 1)
}

/// `1.05 *` the Rayleigh quotient after `iterations` normalized products.
pub fn power_iteration<O: LinearOperator + ?Sized>(op: &O, iterations: u32) -> f64 {
    let n = op.dim();
    if n == 0 {
        return 0.0;
    }
    let mut x = start_vector(n);
    let nx = x.norm();
    x.scale(1.0 / nx);
    let mut rayleigh = 0.0;
    for _ in 0..iterations.max(1) {
        let y = op.apply(&x);
        rayleigh = x.dot(&y);
        let ny = y.norm();
        if ny == 0.0 || !ny.is_finite() {
            break;
        }
        x = y;
        x.scale(1.0 / ny);
    }
    POWER_MARGIN * rayleigh.max(0.0)
}

pub fn eigen_bound<O: LinearOperator + ?Sized>(op: &O, method: BoundMethod, iterations: u32) -> f64 {
    match (method, op.gershgorin()) {
        (BoundMethod::Auto, Some(b)) => b,
        _ => power_iteration(op, iterations),
    }
}

/// Series coefficients `b_0..=b_K`.
pub fn series_coefficients(h: MatrixFunction, order: u32) -> Vec<f64> {
    let mut b = Vec::with_capacity(order as usize + 1);
    b.push(1.0);
    for k in 1..=order as usize {
        let kf = k as f64;
        let prev = b[k - 1];
        let next = match h {
            MatrixFunction::Inverse => 1.0,
            MatrixFunction::InverseSqrt => prev * (2.0 * kf - 1.0) / (2.0 * kf),
            MatrixFunction::Sqrt => {
                if k == 1 {
                    -0.5
                } else {
                    prev * (2.0 * kf - 3.0) / (2.0 * kf)
                }
            }
        };
        b.push(next);
    }
    b
}

/// Outer factor `c(tau)`.
pub fn series_scale(h: MatrixFunction, tau: f64) -> f64 {
    match h {
        MatrixFunction::Inverse => tau,
        MatrixFunction::InverseSqrt => libm::sqrt(tau),
        MatrixFunction::Sqrt => 1.0 / libm::sqrt(tau),
    }
}

/// `h(X) v` with the step derived from an eigenvalue bound.
pub fn apply_series<O: LinearOperator + ?Sized>(
    op: &O,
    v: &FeatureTensor,
    h: MatrixFunction,
    cfg: &ApproxConfig,
) -> Result<FeatureTensor> {
    let bound = eigen_bound(op, cfg.bound, cfg.power_iterations);
    apply_series_bounded(op, v, h, cfg, bound)
}

/// `h(X) v` given a precomputed bound `lambda_max`.
pub fn apply_series_bounded<O: LinearOperator + ?Sized>(
    op: &O,
    v: &FeatureTensor,
    h: MatrixFunction,
    cfg: &ApproxConfig,
    bound: f64,
) -> Result<FeatureTensor> {
    if !(cfg.step_scale > 0.0 && cfg.step_scale <= 1.0) {
        return Err(Error::InvalidInput(format!("step scale {} outside (0, 1]", cfg.step_scale)));
    }
    if !bound.is_finite() || bound < 0.0 {
        return Err(Error::Divergence(format!("invalid eigenvalue bound {bound}")));
    }
    if bound == 0.0 {
        return if v.data.iter().all(|&x| x == 0.0) {
            Ok(v.clone())
        } else {
            Err(Error::DegenerateOperator)
        };
    }
    apply_series_with_step(op, v, h, cfg.order, cfg.step_scale / bound, cfg.tolerance)
}

/// `c(tau) * sum_k b_k (I - tau X)^k v` for an explicit step.
pub fn apply_series_with_step<O: LinearOperator + ?Sized>(
    op: &O,
    v: &FeatureTensor,
    h: MatrixFunction,
    order: u32,
    tau: f64,
    tolerance: Option<f64>,
) -> Result<FeatureTensor> {
    assert_eq!(v.len(), op.dim());
    let b = series_coefficients(h, order);
    let mut acc = v.clone();
    let mut t = v.clone();
    for &bk in &b[1..] {
        let xt = op.apply(&t);
        t.axpy(-tau, &xt);
        if !t.is_finite() {
            return Err(Error::Divergence("non-finite series term".into()));
        }
        let nt = t.norm();
        if nt == 0.0 {
            break;
        }
        acc.axpy(bk, &t);
        if let Some(tol) = tolerance {
            if libm::fabs(bk) * nt <= tol * acc.norm() {
                break;
            }
        }
    }
    acc.scale(series_scale(h, tau));
    if !acc.is_finite() {
        return Err(Error::Divergence("non-finite series sum".into()));
    }
    Ok(acc)
}

/// `sum_{k<=K} (I - X)^k v`, requiring the last term to be below
/// `tolerance` relative to the sum.
pub fn neumann<O: LinearOperator + ?Sized>(
    op: &O,
    v: &FeatureTensor,
    terms: u32,
    tolerance: f64,
) -> Result<FeatureTensor> {
    let mut acc = v.clone();
    let mut t = v.clone();
    let scale = v.norm();
    if scale == 0.0 {
        return Ok(acc);
    }
    for _ in 0..terms {
        let xt = op.apply(&t);
        t.axpy(-1.0, &xt);
        let nt = t.norm();
        if !nt.is_finite() || nt > 1e12 * scale {
            return Err(Error::Divergence("Neumann series diverged".into()));
        }
        if nt == 0.0 {
            return Ok(acc);
        }
        acc.axpy(1.0, &t);
        if nt <= tolerance * acc.norm() {
            return Ok(acc);
        }
    }
    Err(Error::Divergence(format!("Neumann series did not contract in {terms} terms")))
}
