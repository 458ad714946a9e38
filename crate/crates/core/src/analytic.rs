//! Closed-form rate bounds and approximations.
//!
//! Every expression depends on the channel statistics only through
//!
//! * `ε = E[cos φ]` of the phase-error model,
//! * `tr(R̄R̄)` of the magnitude-moment matrix, and
//! * the element count `N`,
//!
//! so callers evaluate those once per configuration and reuse them across
//! SNR points. Rates are in bits/s/Hz.

use std::f64::consts::PI;
use std::fmt;

use crate::channel::{Link, SystemParams};
use crate::error::{Error, Result};

/// Which user/access scheme a rate belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RateScenario {
    NomaT,
    NomaR,
    OmaT,
    OmaR,
    NomaTp,
    NomaRp,
}

impl RateScenario {
    pub fn label(&self) -> &'static str {
        match self {
            RateScenario::NomaT => "noma_t",
            RateScenario::NomaR => "noma_r",
            RateScenario::OmaT => "oma_t",
            RateScenario::OmaR => "oma_r",
            RateScenario::NomaTp => "noma_tp",
            RateScenario::NomaRp => "noma_rp",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "noma_t" => RateScenario::NomaT,
            "noma_r" => RateScenario::NomaR,
            "oma_t" => RateScenario::OmaT,
            "oma_r" => RateScenario::OmaR,
            "noma_tp" => RateScenario::NomaTp,
            "noma_rp" => RateScenario::NomaRp,
            _ => return None,
        })
    }
}

impl fmt::Display for RateScenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundKind {
    /// Upper bound from Jensen's inequality.
    JensenUpper,
    /// Large-array approximation from channel hardening.
    HardeningApprox,
    /// Value approached as the transmit SNR grows without bound.
    LargeSnrLimit,
}

impl BoundKind {
    pub fn label(&self) -> &'static str {
        match self {
            BoundKind::JensenUpper => "jensen",
            BoundKind::HardeningApprox => "hardening",
            BoundKind::LargeSnrLimit => "limit",
        }
    }
}

/// Which term won a `min`/branch selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branch {
    T,
    R,
    Tp,
    Rp,
}

impl Branch {
    pub fn label(&self) -> &'static str {
        match self {
            Branch::T => "t",
            Branch::R => "r",
            Branch::Tp => "tp",
            Branch::Rp => "rp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateBound {
    pub value: f64,
    pub kind: BoundKind,
    pub scenario: RateScenario,
    /// Set for expressions with a branch condition.
    pub branch: Option<Branch>,
}

impl RateBound {
    fn new(value: f64, kind: BoundKind, scenario: RateScenario, branch: Option<Branch>) -> Self {
        debug_assert!(value >= 0.0 || value.is_nan());
        Self {
            value,
            kind,
            scenario,
            branch,
        }
    }
}

/// SNR-scale factors `f` entering the R-side and outer-user bounds.
///
/// `f_t = γ0 η_t α² E[H_t]`, `f_r = γ0 η_r β² E[H_r]`; the outer users see
/// unaligned phases, so `f_t' = γ0 η_t' α² N` and `f_r' = γ0 η_r' β² N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkFactors {
    pub f_t: f64,
    pub f_r: f64,
    pub f_tp: f64,
    pub f_rp: f64,
}

impl LinkFactors {
    pub fn compute(
        params: &SystemParams,
        n: usize,
        tr_rbar_sq: f64,
        eps_t: f64,
        eps_r: f64,
    ) -> Result<Self> {
        let gain_t = mean_composite_gain(n, tr_rbar_sq, eps_t)?;
        let gain_r = mean_composite_gain(n, tr_rbar_sq, eps_r)?;
        let snr = params.snr();
        let (a2, b2) = (params.alpha * params.alpha, params.beta * params.beta);
        let nf = n as f64;
        Ok(Self {
            f_t: snr * params.pathloss(Link::T) * a2 * gain_t,
            f_r: snr * params.pathloss(Link::R) * b2 * gain_r,
            f_tp: snr * params.pathloss(Link::Tp) * a2 * nf,
            f_rp: snr * params.pathloss(Link::Rp) * b2 * nf,
        })
    }
}

fn check_inputs(n: usize, tr_rbar_sq: f64, eps: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::Domain {
            func: "rate bound",
            value: 0.0,
            domain: "N >= 1",
        });
    }
    check_eps(eps)?;
    let nf = n as f64;
    let slack = 1e-9 * nf * nf;
    if !(tr_rbar_sq >= nf - slack && tr_rbar_sq <= nf * nf + slack) {
        return Err(Error::Domain {
            func: "rate bound",
            value: tr_rbar_sq,
            domain: "tr(R̄R̄) in [N, N²]",
        });
    }
    Ok(())
}

fn check_eps(eps: f64) -> Result<()> {
    if (0.0..=1.0).contains(&eps) {
        Ok(())
    } else {
        Err(Error::Domain {
            func: "rate bound",
            value: eps,
            domain: "ε in [0, 1]",
        })
    }
}

fn require_nonuniform(eps: f64, what: &'static str) -> Result<()> {
    check_eps(eps)?;
    if eps == 0.0 {
        return Err(Error::Unsupported {
            what,
            model: "phase errors uniform over [−π, π) (ε = 0)".into(),
        });
    }
    Ok(())
}

/// `E[H] = N(1 − ε²) + ε² tr(R̄R̄)`.
pub fn mean_composite_gain(n: usize, tr_rbar_sq: f64, eps: f64) -> Result<f64> {
    check_inputs(n, tr_rbar_sq, eps)?;
    let e2 = eps * eps;
    Ok(n as f64 * (1.0 - e2) + e2 * tr_rbar_sq)
}

/// `π² N² ε² / 16`, the deterministic equivalent of `H` for large `N`.
pub fn hardened_gain(n: usize, eps: f64) -> f64 {
    let nf = n as f64;
    PI * PI * nf * nf * eps * eps / 16.0
}

/// `log2(1 + q_r² / (q_t² + 1/f))`, the R-side rate at effective SNR `f`.
fn r_side_rate(q_signal_sq: f64, q_interf_sq: f64, f: f64) -> f64 {
    if f <= 0.0 {
        return 0.0;
    }
    (1.0 + q_signal_sq * f / (q_interf_sq * f + 1.0)).log2()
}

/// Jensen upper bound on the NOMA rate of user T:
/// `log2(1 + γ0 q_t² η_t α² (N(1 − ε_t²) + ε_t² tr(R̄R̄)))`.
pub fn jensen_rate_t(
    params: &SystemParams,
    n: usize,
    tr_rbar_sq: f64,
    eps_t: f64,
) -> Result<RateBound> {
    let gain = mean_composite_gain(n, tr_rbar_sq, eps_t)?;
    let q2 = params.q.t * params.q.t;
    let snr = params.snr() * q2 * params.pathloss(Link::T) * params.alpha * params.alpha * gain;
    Ok(RateBound::new(
        (1.0 + snr).log2(),
        BoundKind::JensenUpper,
        RateScenario::NomaT,
        None,
    ))
}

/// Jensen upper bound on the NOMA rate of user R:
/// `log2(1 + q_r²/(q_t² + 1/min(f_t, f_r)))`. Ties select the `f_r` branch.
pub fn jensen_rate_r(params: &SystemParams, factors: &LinkFactors) -> RateBound {
    let (f, branch) = if factors.f_t < factors.f_r {
        (factors.f_t, Branch::T)
    } else {
        (factors.f_r, Branch::R)
    };
    let (qt2, qr2) = (params.q.t * params.q.t, params.q.r * params.q.r);
    RateBound::new(
        r_side_rate(qr2, qt2, f),
        BoundKind::JensenUpper,
        RateScenario::NomaR,
        Some(branch),
    )
}

/// Hardening approximation `log2(1 + π² N² γ0 ε_t² q_t² η_t α² / 16)`.
pub fn hardening_rate_t(params: &SystemParams, n: usize, eps_t: f64) -> Result<RateBound> {
    require_nonuniform(eps_t, "hardening approximation")?;
    let q2 = params.q.t * params.q.t;
    let snr = params.snr()
        * q2
        * params.pathloss(Link::T)
        * params.alpha
        * params.alpha
        * hardened_gain(n, eps_t);
    Ok(RateBound::new(
        (1.0 + snr).log2(),
        BoundKind::HardeningApprox,
        RateScenario::NomaT,
        None,
    ))
}

/// Hardening approximation of the NOMA rate of user R.
///
/// Uses the T-side term when `ε_t² η_t α² < ε_r² η_r β²`, otherwise the
/// R-side term.
pub fn hardening_rate_r(
    params: &SystemParams,
    n: usize,
    eps_t: f64,
    eps_r: f64,
) -> Result<RateBound> {
    require_nonuniform(eps_t, "hardening approximation")?;
    require_nonuniform(eps_r, "hardening approximation")?;
    let t_term = eps_t * eps_t * params.pathloss(Link::T) * params.alpha * params.alpha;
    let r_term = eps_r * eps_r * params.pathloss(Link::R) * params.beta * params.beta;
    let (term, branch) = if t_term < r_term {
        (t_term, Branch::T)
    } else {
        (r_term, Branch::R)
    };
    let nf = n as f64;
    let f = PI * PI * nf * nf * params.snr() * term / 16.0;
    let (qt2, qr2) = (params.q.t * params.q.t, params.q.r * params.q.r);
    Ok(RateBound::new(
        r_side_rate(qr2, qt2, f),
        BoundKind::HardeningApprox,
        RateScenario::NomaR,
        Some(branch),
    ))
}

/// Which OMA expression [`oma_rates`] evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OmaKind {
    Jensen,
    Hardening,
}

/// OMA (TDMA) rates of users T and R.
///
/// Each user owns half the time and the IOS devotes its full amplitude to
/// that user's slot, so neither `α`, `β` nor the `q` split appears.
pub fn oma_rates(
    params: &SystemParams,
    n: usize,
    tr_rbar_sq: f64,
    eps_t: f64,
    eps_r: f64,
    kind: OmaKind,
) -> Result<(RateBound, RateBound)> {
    let snr = params.snr();
    let (gain_t, gain_r, bound_kind) = match kind {
        OmaKind::Jensen => (
            mean_composite_gain(n, tr_rbar_sq, eps_t)?,
            mean_composite_gain(n, tr_rbar_sq, eps_r)?,
            BoundKind::JensenUpper,
        ),
        OmaKind::Hardening => {
            require_nonuniform(eps_t, "hardening approximation")?;
            require_nonuniform(eps_r, "hardening approximation")?;
            (
                hardened_gain(n, eps_t),
                hardened_gain(n, eps_r),
                BoundKind::HardeningApprox,
            )
        }
    };
    let rate = |eta: f64, gain: f64| 0.5 * (1.0 + snr * eta * gain).log2();
    Ok((
        RateBound::new(
            rate(params.pathloss(Link::T), gain_t),
            bound_kind,
            RateScenario::OmaT,
            None,
        ),
        RateBound::new(
            rate(params.pathloss(Link::R), gain_r),
            bound_kind,
            RateScenario::OmaR,
            None,
        ),
    ))
}

/// Limit of a user's rate as `γ0 → ∞`; `None` where the rate is unbounded
/// (user T under NOMA, both users under OMA).
pub fn large_snr_limit(params: &SystemParams, scenario: RateScenario) -> Option<RateBound> {
    let q = &params.q;
    let (t2, r2, tp2, rp2) = (q.t * q.t, q.r * q.r, q.tp * q.tp, q.rp * q.rp);
    let value = match scenario {
        RateScenario::NomaR => (1.0 + r2 / t2).log2(),
        RateScenario::NomaTp => (1.0 + tp2 / (t2 + r2)).log2(),
        RateScenario::NomaRp => (1.0 + rp2 / (t2 + r2 + tp2)).log2(),
        RateScenario::NomaT | RateScenario::OmaT | RateScenario::OmaR => return None,
    };
    Some(RateBound::new(value, BoundKind::LargeSnrLimit, scenario, None))
}

/// Large-SNR comparison of the NOMA and OMA sum rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SumRateVerdict {
    Noma,
    Oma,
    Tie,
}

/// At large `γ0`, NOMA has the larger sum rate iff `α⁴ ε_t² η_t > ε_r² η_r`.
///
/// Only meaningful in the high-SNR regime; the caller is responsible for
/// being there.
pub fn sum_rate_verdict(params: &SystemParams, eps_t: f64, eps_r: f64) -> SumRateVerdict {
    let lhs = params.alpha.powi(4) * eps_t * eps_t * params.pathloss(Link::T);
    let rhs = eps_r * eps_r * params.pathloss(Link::R);
    if lhs > rhs {
        SumRateVerdict::Noma
    } else if lhs < rhs {
        SumRateVerdict::Oma
    } else {
        SumRateVerdict::Tie
    }
}

/// Transmit SNR above which the hardened NOMA rate of T beats its OMA rate:
/// `(16 − 32 q_t² α²) / (π² N² ε_t² η_t q_t⁴ α⁴)`.
pub fn noma_t_snr_threshold(params: &SystemParams, n: usize, eps_t: f64) -> Result<f64> {
    require_nonuniform(eps_t, "NOMA/OMA threshold")?;
    let qa = params.q.t * params.q.t * params.alpha * params.alpha;
    let nf = n as f64;
    Ok((16.0 - 32.0 * qa) / (PI * PI * nf * nf * eps_t * eps_t * params.pathloss(Link::T) * qa * qa))
}

/// Rate gain of user T from one more phase-shifter bit, `b → b + 1`,
/// under the hardening approximation.
pub fn quantization_gain(bits: u32, params: &SystemParams, n: usize) -> Result<f64> {
    if bits == 0 {
        return Err(Error::Domain {
            func: "quantization_gain",
            value: 0.0,
            domain: "b >= 1",
        });
    }
    let nf = n as f64;
    let scale = PI * PI * nf * nf * params.snr() * params.q.t * params.q.t
        * params.pathloss(Link::T)
        * params.alpha
        * params.alpha;
    let e_b = crate::channel::quantization_epsilon(bits);
    let e_next = crate::channel::quantization_epsilon(bits + 1);
    Ok(((16.0 + scale * e_next * e_next) / (16.0 + scale * e_b * e_b)).log2())
}

/// Limit of [`quantization_gain`] as `N → ∞`:
/// `log2(4 sin²(π/2^{b+1}) / sin²(π/2^b))`.
pub fn quantization_gain_limit(bits: u32) -> f64 {
    let a = PI / 2f64.powi(bits as i32 + 1);
    let b = PI / 2f64.powi(bits as i32);
    (4.0 * a.sin().powi(2) / b.sin().powi(2)).log2()
}

/// Jensen bounds for the outer users `T'` and `R'` of the four-user setup.
///
/// Relies on `f_t' < f_t` and `f_r' < f_r`, which the pathloss ordering
/// `η_r' < η_t' < η_r < η_t` guarantees.
pub fn multiuser_bounds(
    params: &SystemParams,
    n: usize,
    factors: &LinkFactors,
) -> Result<(RateBound, RateBound)> {
    params.validate_four_user()?;
    if n == 0 {
        return Err(Error::Domain {
            func: "multiuser_bounds",
            value: 0.0,
            domain: "N >= 1",
        });
    }
    let q = &params.q;
    let (t2, r2, tp2, rp2) = (q.t * q.t, q.r * q.r, q.tp * q.tp, q.rp * q.rp);

    let (f, branch) = if factors.f_tp < factors.f_r {
        (factors.f_tp, Branch::Tp)
    } else {
        (factors.f_r, Branch::R)
    };
    let tp = RateBound::new(
        r_side_rate(tp2, t2 + r2, f),
        BoundKind::JensenUpper,
        RateScenario::NomaTp,
        Some(branch),
    );

    let (f, branch) = if factors.f_tp < factors.f_rp {
        (factors.f_tp, Branch::Tp)
    } else {
        (factors.f_rp, Branch::Rp)
    };
    let rp = RateBound::new(
        r_side_rate(rp2, t2 + r2 + tp2, f),
        BoundKind::JensenUpper,
        RateScenario::NomaRp,
        Some(branch),
    );
    Ok((tp, rp))
}
