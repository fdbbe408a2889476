//! The two custom activation functions and their derivatives.
//!
//! `sparse_act` is a difference of two Gaussians that maps most inputs to ~0
//! and responds strongly near ±gamma/beta, so sparsity emerges from the task
//! loss alone, without a sparsity penalty. `leaky` suppresses small-magnitude
//! components after composition so that near-zero noise does not accumulate
//! into spurious semantics.

use crate::error::{Error, Result};
use crate::tensor::{c, Element};

/// Derivative variant for the sparse activation.
///
/// `Exact` is the calculus derivative and is what backward passes use.
/// `PaperEq5` is the simplified closed form `(-2b^2 x + 2gb sign(x)) S(x)`,
/// which drops a `4bg exp(-(bx+g)^2)` term; the two agree far from the origin
/// but differ by about `4bg exp(-g^2)` at `x = 0`. It is kept selectable for
/// fidelity experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DerivMode {
    #[default]
    Exact,
    PaperEq5,
}

/// Validates the sparse-activation hyperparameters.
pub fn validate_sparse_params(beta: f64, gamma: f64) -> Result<()> {
    if !(beta > 0.0) || !(gamma > 0.0) {
        return Err(Error::Config(format!(
            "sparse activation requires beta > 0 and gamma > 0 (got beta={beta}, gamma={gamma})"
        )));
    }
    Ok(())
}

/// `S(x) = exp(-(bx - g)^2) - exp(-(bx + g)^2)`. Odd, strictly inside (-1, 1).
#[inline]
pub fn sparse_act<F: Element>(x: F, beta: f64, gamma: f64) -> F {
    let (b, g) = (c::<F>(beta), c::<F>(gamma));
    let lo = b.to_f64() * x.to_f64() - g.to_f64();
    let hi = b.to_f64() * x.to_f64() + g.to_f64();
    c::<F>((-lo * lo).exp() - (-hi * hi).exp())
}

/// Calculus derivative of [`sparse_act`]:
/// `-2b^2 x S(x) + 2bg (exp(-(bx-g)^2) + exp(-(bx+g)^2))`.
#[inline]
pub fn sparse_act_deriv_exact<F: Element>(x: F, beta: f64, gamma: f64) -> F {
    let xv = x.to_f64();
    let lo = beta * xv - gamma;
    let hi = beta * xv + gamma;
    let e_lo = (-lo * lo).exp();
    let e_hi = (-hi * hi).exp();
    c::<F>(-2.0 * beta * beta * xv * (e_lo - e_hi) + 2.0 * beta * gamma * (e_lo + e_hi))
}

/// Simplified derivative `(-2b^2 x + 2gb sign(x)) S(x)` with `sign(0) = 0`.
#[inline]
pub fn sparse_act_deriv_eq5<F: Element>(x: F, beta: f64, gamma: f64) -> F {
    let xv = x.to_f64();
    let sign = if xv > 0.0 {
        1.0
    } else if xv < 0.0 {
        -1.0
    } else {
        0.0
    };
    let s = sparse_act(x, beta, gamma).to_f64();
    c::<F>((-2.0 * beta * beta * xv + 2.0 * gamma * beta * sign) * s)
}

#[inline]
pub fn sparse_act_deriv<F: Element>(x: F, beta: f64, gamma: f64, mode: DerivMode) -> F {
    match mode {
        DerivMode::Exact => sparse_act_deriv_exact(x, beta, gamma),
        DerivMode::PaperEq5 => sparse_act_deriv_eq5(x, beta, gamma),
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `leaky(x) = x * sigmoid(kappa * (|x| - theta))`.
///
/// Odd, fixes the origin, and contracts toward zero: components below the
/// `theta` knee are attenuated, large components pass nearly unchanged.
#[inline]
pub fn leaky<F: Element>(x: F, kappa: f64, theta: f64) -> F {
    let xv = x.to_f64();
    c::<F>(xv * sigmoid(kappa * (xv.abs() - theta)))
}

/// Derivative of [`leaky`]: `sig(u) + kappa |x| sig(u)(1 - sig(u))` with
/// `u = kappa (|x| - theta)`. Continuous everywhere, including the origin,
/// where the `|x|` kink contributes nothing because of the `x` factor.
#[inline]
pub fn leaky_deriv<F: Element>(x: F, kappa: f64, theta: f64) -> F {
    let xv = x.to_f64();
    let s = sigmoid(kappa * (xv.abs() - theta));
    c::<F>(s + kappa * xv.abs() * s * (1.0 - s))
}

pub fn validate_leaky_params(kappa: f64, theta: f64) -> Result<()> {
    if !(kappa > 0.0) || !(theta >= 0.0) {
        return Err(Error::Config(format!(
            "leaky activation requires kappa > 0 and theta >= 0 (got kappa={kappa}, theta={theta})"
        )));
    }
    Ok(())
}
