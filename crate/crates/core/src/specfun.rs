//! Special functions used by the closed-form rate expressions.
//!
//! Complete elliptic integrals use the parameter convention
//!
//! ```text
//! K(m) = ∫₀^{π/2} (1 − m sin²θ)^{−1/2} dθ
//! E(m) = ∫₀^{π/2} (1 − m sin²θ)^{1/2} dθ
//! ```
//!
//! and are evaluated by the arithmetic-geometric mean. The modified Bessel
//! functions I0 and I1 use the power series up to `x = 15` and the
//! large-argument asymptotic expansion above it. Both branches are computed
//! in exponentially scaled form so that the ratio I1/I0 stays finite for any
//! argument.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Series/asymptotic switch point for the Bessel functions.
const BESSEL_SERIES_LIMIT: f64 = 15.0;

/// Stopping rule for the iterative special-function kernels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub abs_tol: f64,
    pub max_iterations: usize,
}

impl Tolerance {
    pub fn new(abs_tol: f64, max_iterations: usize) -> Result<Self> {
        if !(abs_tol > 0.0) {
            return Err(Error::config("abs_tol", "must be > 0"));
        }
        if max_iterations == 0 {
            return Err(Error::config("max_iterations", "must be >= 1"));
        }
        Ok(Self {
            abs_tol,
            max_iterations,
        })
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            abs_tol: 1e-16,
            max_iterations: 200,
        }
    }
}

/// Complete elliptic integral of the first kind, K(m), for `0 ≤ m < 1`.
pub fn elliptic_k(m: f64) -> Result<f64> {
    elliptic_k_with(m, &Tolerance::default())
}

pub fn elliptic_k_with(m: f64, tol: &Tolerance) -> Result<f64> {
    if !(0.0..1.0).contains(&m) {
        return Err(Error::Domain {
            func: "elliptic_k",
            value: m,
            domain: "[0, 1)",
        });
    }
    Ok(agm(m, tol).0)
}

/// Complete elliptic integral of the second kind, E(m), for `0 ≤ m ≤ 1`.
pub fn elliptic_e(m: f64) -> Result<f64> {
    elliptic_e_with(m, &Tolerance::default())
}

pub fn elliptic_e_with(m: f64, tol: &Tolerance) -> Result<f64> {
    if !(0.0..=1.0).contains(&m) {
        return Err(Error::Domain {
            func: "elliptic_e",
            value: m,
            domain: "[0, 1]",
        });
    }
    if m == 1.0 {
        return Ok(1.0);
    }
    Ok(agm(m, tol).1)
}

/// Returns `(K(m), E(m))` from a single AGM run.
///
/// `E = K · (1 − Σ_{n≥0} 2^{n−1} c_n²)` with `c_0² = m` and
/// `c_{n+1} = (a_n − b_n)/2`.
fn agm(m: f64, tol: &Tolerance) -> (f64, f64) {
    let mut a = 1.0_f64;
    let mut b = (1.0 - m).sqrt();
    let mut weight = 0.5;
    let mut sum = weight * m;
    let threshold = tol.abs_tol.max(f64::EPSILON);
    let mut prev_c = f64::INFINITY;
    for _ in 0..tol.max_iterations {
        let c = 0.5 * (a - b);
        // a and b can settle one ulp apart; stop once c no longer shrinks.
        if c.abs() <= threshold * a || c.abs() >= prev_c {
            break;
        }
        prev_c = c.abs();
        let next_a = 0.5 * (a + b);
        b = (a * b).sqrt();
        a = next_a;
        weight *= 2.0;
        sum += weight * c * c;
    }
    let k = PI / (2.0 * a);
    (k, k * (1.0 - sum))
}

/// Modified Bessel function of the first kind, order zero.
pub fn bessel_i0(x: f64) -> Result<f64> {
    check_bessel_arg("bessel_i0", x)?;
    Ok(scaled_bessel(0, x, &Tolerance::default()) * x.exp())
}

/// Modified Bessel function of the first kind, order one.
pub fn bessel_i1(x: f64) -> Result<f64> {
    check_bessel_arg("bessel_i1", x)?;
    Ok(scaled_bessel(1, x, &Tolerance::default()) * x.exp())
}

/// I1(x)/I0(x), evaluated without overflow for large `x`.
pub fn bessel_i1_i0_ratio(x: f64) -> Result<f64> {
    check_bessel_arg("bessel_i1_i0_ratio", x)?;
    let tol = Tolerance::default();
    Ok(scaled_bessel(1, x, &tol) / scaled_bessel(0, x, &tol))
}

fn check_bessel_arg(func: &'static str, x: f64) -> Result<()> {
    if x >= 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain {
            func,
            value: x,
            domain: "[0, ∞)",
        })
    }
}

/// `e^{−x} I_order(x)` for order 0 or 1.
fn scaled_bessel(order: u32, x: f64, tol: &Tolerance) -> f64 {
    if x <= BESSEL_SERIES_LIMIT {
        bessel_series(order, x, tol) * (-x).exp()
    } else {
        bessel_asymptotic(order, x, tol)
    }
}

/// `I_ν(x) = Σ_k (x/2)^{2k+ν} / (k! (k+ν)!)`.
fn bessel_series(order: u32, x: f64, tol: &Tolerance) -> f64 {
    let nu = f64::from(order);
    let quarter_sq = 0.25 * x * x;
    let mut term = if order == 0 { 1.0 } else { 0.5 * x };
    let mut sum = term;
    for k in 1..=tol.max_iterations {
        let k = k as f64;
        term *= quarter_sq / (k * (k + nu));
        sum += term;
        if term <= tol.abs_tol * sum {
            break;
        }
    }
    sum
}

/// `e^{−x} I_ν(x) ≈ (2πx)^{−1/2} Σ_k (−1)^k a_k(ν) / x^k`, truncated at the
/// smallest term.
fn bessel_asymptotic(order: u32, x: f64, tol: &Tolerance) -> f64 {
    let mu = 4.0 * f64::from(order * order);
    let mut term = 1.0_f64;
    let mut sum = 1.0;
    for k in 1..=tol.max_iterations {
        let odd = (2 * k - 1) as f64;
        let next = -term * (mu - odd * odd) / (8.0 * k as f64 * x);
        if next.abs() >= term.abs() {
            break;
        }
        term = next;
        sum += term;
        if term.abs() <= tol.abs_tol * sum.abs() {
            break;
        }
    }
    sum / (2.0 * PI * x).sqrt()
}
