//! System parameters, large-scale pathloss and the random channel model.
//!
//! Small-scale fading vectors `h`, `g`, `r` (and `g'`, `r'` for the outer
//! users of the four-user setup) are i.i.d. draws from `CN(0, R)`, where `R`
//! comes from [`crate::geometry`]. Only their magnitudes matter once the IOS
//! co-phases each link, so the samplers return `|L z|`. Residual phase
//! errors follow a [`PhaseErrorModel`].
//!
//! Every random quantity of trial `i` is drawn from its own ChaCha stream
//! keyed by `(master_seed, i, tag)`, so a trial's draws do not depend on
//! which other trials or quantities were simulated, nor on the worker that
//! ran it.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::geometry::CorrelationMatrix;
use crate::specfun::bessel_i1_i0_ratio;

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm - 30.0)
}

/// Transmit amplitude coefficients at the base station.
///
/// Two-user configurations leave `tp` and `rp` at zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerCoefficients {
    pub t: f64,
    pub r: f64,
    pub tp: f64,
    pub rp: f64,
}

impl PowerCoefficients {
    pub fn two_user(q_t: f64, q_r: f64) -> Self {
        Self {
            t: q_t,
            r: q_r,
            tp: 0.0,
            rp: 0.0,
        }
    }

    /// Builds coefficients from power fractions `q²`.
    pub fn from_power_fractions(t: f64, r: f64, tp: f64, rp: f64) -> Self {
        Self {
            t: t.sqrt(),
            r: r.sqrt(),
            tp: tp.sqrt(),
            rp: rp.sqrt(),
        }
    }

    pub fn sum_sq(&self) -> f64 {
        self.t * self.t + self.r * self.r + self.tp * self.tp + self.rp * self.rp
    }
}

/// Which receiver a link ends at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Link {
    /// Transmission-side user `T`.
    T,
    /// Reflection-side user `R`.
    R,
    /// Second transmission-side user `T'`.
    Tp,
    /// Second reflection-side user `R'`.
    Rp,
}

/// IOS side a composite gain is formed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    T,
    R,
}

/// Link budget and power allocation of the downlink.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemParams {
    /// BS–IOS distance (m).
    pub d_b: f64,
    pub d_t: f64,
    pub d_r: f64,
    pub d_tp: f64,
    pub d_rp: f64,
    /// Pathloss exponent χ.
    pub chi: f64,
    /// Pathloss intercepts at 1 m (linear).
    pub lambda_t: f64,
    pub lambda_r: f64,
    pub lambda_tp: f64,
    pub lambda_rp: f64,
    /// IOS transmission amplitude.
    pub alpha: f64,
    /// IOS reflection amplitude.
    pub beta: f64,
    pub q: PowerCoefficients,
    /// Total transmit power (W).
    pub p_tx: f64,
    /// Receiver noise power σ0² (W).
    pub noise_power: f64,
}

impl Default for SystemParams {
    /// The reference two-user setup: 10/5/10 m links, χ = 2.4, −30 dB
    /// intercepts, α = 0.8, β = 0.6, q = (0.6, 0.8), 20 dBm transmit power
    /// and −50 dBm noise. The outer-user distances (12 m, 15 m) are only used
    /// by four-user runs.
    fn default() -> Self {
        Self {
            d_b: 10.0,
            d_t: 5.0,
            d_r: 10.0,
            d_tp: 12.0,
            d_rp: 15.0,
            chi: 2.4,
            lambda_t: db_to_linear(-30.0),
            lambda_r: db_to_linear(-30.0),
            lambda_tp: db_to_linear(-30.0),
            lambda_rp: db_to_linear(-30.0),
            alpha: 0.8,
            beta: 0.6,
            q: PowerCoefficients::two_user(0.6, 0.8),
            p_tx: dbm_to_watts(20.0),
            noise_power: dbm_to_watts(-50.0),
        }
    }
}

impl SystemParams {
    /// Default link budget with the four-user power split
    /// `q² = (0.1, 0.2, 0.3, 0.4)` for `(T, R, T', R')`.
    pub fn four_user_default() -> Self {
        Self {
            q: PowerCoefficients::from_power_fractions(0.1, 0.2, 0.3, 0.4),
            ..Self::default()
        }
    }

    /// Transmit SNR `γ0 = P/σ0²`.
    pub fn snr(&self) -> f64 {
        self.p_tx / self.noise_power
    }

    /// Sets `P` so that `γ0` equals `snr_db`, keeping the noise power.
    pub fn set_snr_db(&mut self, snr_db: f64) {
        self.p_tx = self.noise_power * db_to_linear(snr_db);
    }

    pub fn with_snr_db(mut self, snr_db: f64) -> Self {
        self.set_snr_db(snr_db);
        self
    }

    /// `η = Λ / (d_b^χ d^χ)` for the given link.
    pub fn pathloss(&self, link: Link) -> f64 {
        let (lambda, d) = match link {
            Link::T => (self.lambda_t, self.d_t),
            Link::R => (self.lambda_r, self.d_r),
            Link::Tp => (self.lambda_tp, self.d_tp),
            Link::Rp => (self.lambda_rp, self.d_rp),
        };
        lambda / (self.d_b.powf(self.chi) * d.powf(self.chi))
    }

    fn validate_common(&self) -> Result<()> {
        let positive = [
            ("d_b", self.d_b),
            ("d_t", self.d_t),
            ("d_r", self.d_r),
            ("d_tp", self.d_tp),
            ("d_rp", self.d_rp),
            ("lambda_t", self.lambda_t),
            ("lambda_r", self.lambda_r),
            ("lambda_tp", self.lambda_tp),
            ("lambda_rp", self.lambda_rp),
            ("noise_power", self.noise_power),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(key, format!("must be > 0, got {v}")));
            }
        }
        if !(self.chi > 0.0 && self.chi.is_finite()) {
            return Err(Error::config("chi", format!("must be > 0, got {}", self.chi)));
        }
        if !(self.p_tx >= 0.0 && self.p_tx.is_finite()) {
            return Err(Error::config("p_tx", format!("must be >= 0, got {}", self.p_tx)));
        }
        for (key, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(key, format!("must lie in [0, 1], got {v}")));
            }
        }
        if (self.alpha * self.alpha + self.beta * self.beta - 1.0).abs() > 1e-12 {
            return Err(Error::config("alpha", "alpha² + beta² must equal 1"));
        }
        let q = &self.q;
        for (key, v) in [("q_t", q.t), ("q_r", q.r), ("q_tp", q.tp), ("q_rp", q.rp)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(key, format!("must lie in [0, 1], got {v}")));
            }
        }
        if (q.sum_sq() - 1.0).abs() > 1e-12 {
            return Err(Error::config("q", format!("Σ q² must equal 1, got {}", q.sum_sq())));
        }
        Ok(())
    }

    /// Checks the two-user invariants, including `q_t < q_r`.
    pub fn validate_two_user(&self) -> Result<()> {
        self.validate_common()?;
        if self.q.tp != 0.0 || self.q.rp != 0.0 {
            return Err(Error::config("q_tp", "two-user mode allocates no power to T' or R'"));
        }
        if !(self.q.t < self.q.r) {
            return Err(Error::config("q_t", "user R needs more power than T (q_t < q_r)"));
        }
        Ok(())
    }

    /// Checks the four-user invariants, including `η_r' < η_t' < η_r < η_t`.
    pub fn validate_four_user(&self) -> Result<()> {
        self.validate_common()?;
        let (et, er, etp, erp) = (
            self.pathloss(Link::T),
            self.pathloss(Link::R),
            self.pathloss(Link::Tp),
            self.pathloss(Link::Rp),
        );
        if !(erp < etp && etp < er && er < et) {
            return Err(Error::config(
                "d_tp",
                format!("pathloss order η_r' < η_t' < η_r < η_t violated ({erp:e}, {etp:e}, {er:e}, {et:e})"),
            ));
        }
        Ok(())
    }
}

/// Residual phase error left after the IOS co-phases a link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PhaseErrorModel {
    Perfect,
    /// Channel-estimation error, Von Mises with concentration κ.
    VonMises(f64),
    /// `b`-bit phase shifters: uniform on `[−π/2^b, π/2^b]`.
    Quantized(u32),
    /// No phase alignment at all: uniform on `[−π, π)`.
    UniformFull,
}

impl PhaseErrorModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            PhaseErrorModel::VonMises(k) if !(k >= 0.0 && k.is_finite()) => {
                Err(Error::config("kappa", format!("must be >= 0, got {k}")))
            }
            PhaseErrorModel::Quantized(b) if b == 0 || b > 52 => {
                Err(Error::config("bits", format!("must lie in 1..=52, got {b}")))
            }
            _ => Ok(()),
        }
    }

    /// `ε = E[cos φ]`.
    pub fn epsilon(&self) -> f64 {
        match *self {
            PhaseErrorModel::Perfect => 1.0,
            PhaseErrorModel::VonMises(k) => bessel_i1_i0_ratio(k).expect("validated kappa"),
            PhaseErrorModel::Quantized(b) => quantization_epsilon(b),
            PhaseErrorModel::UniformFull => 0.0,
        }
    }

    pub fn is_uniform_full(&self) -> bool {
        matches!(self, PhaseErrorModel::UniformFull)
    }

    pub fn sampler(&self) -> PhaseSampler {
        match *self {
            PhaseErrorModel::Perfect => PhaseSampler::Zero,
            PhaseErrorModel::VonMises(k) => match VonMises::new(k) {
                Some(vm) => PhaseSampler::VonMises(vm),
                None => PhaseSampler::Uniform(PI),
            },
            PhaseErrorModel::Quantized(b) => PhaseSampler::Uniform(PI / 2f64.powi(b as i32)),
            PhaseErrorModel::UniformFull => PhaseSampler::Uniform(PI),
        }
    }
}

/// `ε_b = 2^b sin(π/2^b)/π`.
pub fn quantization_epsilon(bits: u32) -> f64 {
    let levels = 2f64.powi(bits as i32);
    levels * (PI / levels).sin() / PI
}

impl fmt::Display for PhaseErrorModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PhaseErrorModel::Perfect => write!(f, "perfect"),
            PhaseErrorModel::VonMises(k) => write!(f, "vonmises:{k}"),
            PhaseErrorModel::Quantized(b) => write!(f, "bits:{b}"),
            PhaseErrorModel::UniformFull => write!(f, "uniform"),
        }
    }
}

impl FromStr for PhaseErrorModel {
    type Err = Error;

    /// Accepts `perfect`, `uniform`, `vonmises:<κ>` and `bits:<b>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let bad = || Error::config("phase", format!("unrecognized phase-error model `{s}`"));
        let model = match s.split_once(':') {
            None => match s.as_str() {
                "perfect" => PhaseErrorModel::Perfect,
                "uniform" => PhaseErrorModel::UniformFull,
                _ => return Err(bad()),
            },
            Some((kind, arg)) => match kind {
                "vonmises" | "von_mises" | "kappa" => {
                    PhaseErrorModel::VonMises(arg.parse().map_err(|_| bad())?)
                }
                "bits" | "quantized" => PhaseErrorModel::Quantized(arg.parse().map_err(|_| bad())?),
                _ => return Err(bad()),
            },
        };
        model.validate()?;
        Ok(model)
    }
}

/// Prepared sampler for one phase-error model.
#[derive(Debug, Clone, Copy)]
pub enum PhaseSampler {
    Zero,
    /// Uniform on `[−half_width, half_width]`.
    Uniform(f64),
    VonMises(VonMises),
}

impl PhaseSampler {
    pub fn fill<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match *self {
            PhaseSampler::Zero => out.fill(0.0),
            PhaseSampler::Uniform(a) => {
                for x in out {
                    *x = a * (2.0 * rng.random::<f64>() - 1.0);
                }
            }
            PhaseSampler::VonMises(vm) => {
                for x in out {
                    *x = vm.sample(rng);
                }
            }
        }
    }
}

/// Zero-mean Von Mises distribution, sampled with the Best–Fisher
/// wrapped-Cauchy envelope.
#[derive(Debug, Clone, Copy)]
pub struct VonMises {
    kappa: f64,
    r: f64,
}

impl VonMises {
    /// Returns `None` when κ is so small that the law is uniform to double precision.
    pub fn new(kappa: f64) -> Option<Self> {
        if kappa < 1e-8 {
            return None;
        }
        let tau = 1.0 + (1.0 + 4.0 * kappa * kappa).sqrt();
        let rho = (tau - (2.0 * tau).sqrt()) / (2.0 * kappa);
        let r = (1.0 + rho * rho) / (2.0 * rho);
        Some(Self { kappa, r })
    }
}

impl Distribution<f64> for VonMises {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        loop {
            let u1: f64 = rng.random();
            let u2: f64 = rng.random();
            let z = (PI * u1).cos();
            let f = (1.0 + self.r * z) / (self.r + z);
            let c = self.kappa * (self.r - f);
            if c * (2.0 - c) - u2 > 0.0 || (c / u2).ln() + 1.0 - c >= 0.0 {
                let theta = f.clamp(-1.0, 1.0).acos();
                return if rng.random::<bool>() { theta } else { -theta };
            }
        }
    }
}

/// Which random quantity a stream feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamTag {
    H = 0,
    G = 1,
    R = 2,
    PhaseT = 3,
    PhaseR = 4,
    Gp = 5,
    Rp = 6,
    PhaseTp = 7,
    PhaseRp = 8,
    /// Auxiliary draws for callers outside the rate engine.
    Aux = 15,
}

/// Counter-based source of per-trial random streams.
#[derive(Debug, Clone)]
pub struct StreamSeeder {
    key: [u8; 32],
}

impl StreamSeeder {
    pub fn new(master_seed: u64) -> Self {
        let mut key = [0u8; 32];
        ChaCha8Rng::seed_from_u64(master_seed).fill_bytes(&mut key);
        Self { key }
    }

    /// Stream for `(trial, tag)`; independent of every other pair.
    pub fn stream(&self, trial: u64, tag: StreamTag) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream((trial << 4) | tag as u64);
        rng
    }
}

/// A factor `L` with `L Lᵀ = R`, used to colour white Gaussian vectors.
#[derive(Debug, Clone)]
pub struct ChannelFactor {
    n: usize,
    kind: FactorKind,
}

#[derive(Debug, Clone)]
enum FactorKind {
    Identity,
    /// Row-major packed lower triangle.
    Lower(Vec<f64>),
    /// Row-major dense square factor.
    Dense(Vec<f64>),
}

/// How [`ChannelFactor::new`] obtained its factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorRoute {
    Identity,
    Cholesky,
    JitteredCholesky,
    ClippedEigen,
}

const FACTOR_JITTER: f64 = 1e-10;

impl ChannelFactor {
    /// Cholesky, then Cholesky of `R + 1e-10·I`, then an eigendecomposition
    /// with negative eigenvalues clipped to zero.
    pub fn new(r: &CorrelationMatrix) -> Result<Self> {
        Ok(Self::with_route(r)?.0)
    }

    pub fn with_route(r: &CorrelationMatrix) -> Result<(Self, FactorRoute)> {
        let n = r.dim();
        if r.is_identity() {
            return Ok((
                Self {
                    n,
                    kind: FactorKind::Identity,
                },
                FactorRoute::Identity,
            ));
        }
        let m = r.as_matrix();
        if let Some(ch) = Cholesky::new(m.clone()) {
            return Ok((Self::lower(n, &ch.l()), FactorRoute::Cholesky));
        }
        let jittered = m + DMatrix::<f64>::identity(n, n) * FACTOR_JITTER;
        if let Some(ch) = Cholesky::new(jittered) {
            return Ok((Self::lower(n, &ch.l()), FactorRoute::JitteredCholesky));
        }
        let eig = SymmetricEigen::new(m.clone());
        if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
            return Err(Error::Factorization("non-finite eigenvalues".into()));
        }
        let mut dense = vec![0.0; n * n];
        for j in 0..n {
            let s = eig.eigenvalues[j].max(0.0).sqrt();
            for i in 0..n {
                dense[i * n + j] = eig.eigenvectors[(i, j)] * s;
            }
        }
        Ok((
            Self {
                n,
                kind: FactorKind::Dense(dense),
            },
            FactorRoute::ClippedEigen,
        ))
    }

    fn lower(n: usize, l: &DMatrix<f64>) -> Self {
        let mut packed = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in 0..=i {
                packed.push(l[(i, j)]);
            }
        }
        Self {
            n,
            kind: FactorKind::Lower(packed),
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Draws `w = L z` with `z ~ CN(0, I)`; `E[w wᴴ] = R`.
    pub fn sample_complex<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        scratch: &mut Scratch,
        re: &mut [f64],
        im: &mut [f64],
    ) {
        let n = self.n;
        debug_assert!(re.len() == n && im.len() == n);
        let (zr, zi) = scratch.white(n);
        for k in 0..n {
            let (a, b): (f64, f64) = (StandardNormal.sample(rng), StandardNormal.sample(rng));
            zr[k] = FRAC_1_SQRT_2 * a;
            zi[k] = FRAC_1_SQRT_2 * b;
        }
        match &self.kind {
            FactorKind::Identity => {
                re.copy_from_slice(zr);
                im.copy_from_slice(zi);
            }
            FactorKind::Lower(packed) => {
                let mut offset = 0;
                for i in 0..n {
                    let row = &packed[offset..offset + i + 1];
                    let (mut a, mut b) = (0.0, 0.0);
                    for ((l, x), y) in row.iter().zip(&zr[..=i]).zip(&zi[..=i]) {
                        a += l * x;
                        b += l * y;
                    }
                    re[i] = a;
                    im[i] = b;
                    offset += i + 1;
                }
            }
            FactorKind::Dense(dense) => {
                for i in 0..n {
                    let row = &dense[i * n..(i + 1) * n];
                    let (mut a, mut b) = (0.0, 0.0);
                    for ((l, x), y) in row.iter().zip(zr.iter()).zip(zi.iter()) {
                        a += l * x;
                        b += l * y;
                    }
                    re[i] = a;
                    im[i] = b;
                }
            }
        }
    }

    /// Draws `|w|` elementwise for `w ~ CN(0, R)`.
    pub fn sample_magnitudes<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        scratch: &mut Scratch,
        out: &mut [f64],
    ) {
        let n = self.n;
        let mut im = std::mem::take(&mut scratch.im);
        im.resize(n, 0.0);
        self.sample_complex(rng, scratch, out, &mut im);
        for (o, b) in out.iter_mut().zip(&im) {
            *o = o.hypot(*b);
        }
        scratch.im = im;
    }
}

/// Reusable buffers for the samplers.
#[derive(Debug, Default, Clone)]
pub struct Scratch {
    zr: Vec<f64>,
    zi: Vec<f64>,
    im: Vec<f64>,
}

impl Scratch {
    fn white(&mut self, n: usize) -> (&mut [f64], &mut [f64]) {
        self.zr.resize(n, 0.0);
        self.zi.resize(n, 0.0);
        (&mut self.zr[..n], &mut self.zi[..n])
    }
}

/// One-shot magnitude draw; factorizes `r` on every call.
pub fn sample_correlated_magnitudes<R: Rng + ?Sized>(
    r: &CorrelationMatrix,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let factor = ChannelFactor::new(r)?;
    let mut out = vec![0.0; r.dim()];
    factor.sample_magnitudes(rng, &mut Scratch::default(), &mut out);
    Ok(out)
}

pub fn sample_phase_errors<R: Rng + ?Sized>(model: PhaseErrorModel, n: usize, rng: &mut R) -> Vec<f64> {
    let mut out = vec![0.0; n];
    model.sampler().fill(rng, &mut out);
    out
}

/// One Monte Carlo realization of the two-user channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelDraw {
    pub mag_h: Vec<f64>,
    pub mag_g: Vec<f64>,
    pub mag_r: Vec<f64>,
    pub phase_err_t: Vec<f64>,
    pub phase_err_r: Vec<f64>,
}

impl ChannelDraw {
    /// Draws trial `trial` from its dedicated streams.
    pub fn sample(
        factor: &ChannelFactor,
        err_t: PhaseErrorModel,
        err_r: PhaseErrorModel,
        seeder: &StreamSeeder,
        trial: u64,
    ) -> Self {
        let n = factor.dim();
        let mut scratch = Scratch::default();
        let mut mags = |tag| {
            let mut v = vec![0.0; n];
            factor.sample_magnitudes(&mut seeder.stream(trial, tag), &mut scratch, &mut v);
            v
        };
        let (mag_h, mag_g, mag_r) = (mags(StreamTag::H), mags(StreamTag::G), mags(StreamTag::R));
        let mut phase_err_t = vec![0.0; n];
        let mut phase_err_r = vec![0.0; n];
        err_t
            .sampler()
            .fill(&mut seeder.stream(trial, StreamTag::PhaseT), &mut phase_err_t);
        err_r
            .sampler()
            .fill(&mut seeder.stream(trial, StreamTag::PhaseR), &mut phase_err_r);
        Self {
            mag_h,
            mag_g,
            mag_r,
            phase_err_t,
            phase_err_r,
        }
    }

    pub fn len(&self) -> usize {
        self.mag_h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mag_h.is_empty()
    }
}

/// `H = |Σ_n m_n e^{jφ_n}|²` with `m_n = |g_n||h_n|` (side T) or `|r_n||h_n|` (side R).
pub fn composite_gain(draw: &ChannelDraw, side: Side) -> f64 {
    match side {
        Side::T => coherent_gain(&draw.mag_g, &draw.mag_h, &draw.phase_err_t),
        Side::R => coherent_gain(&draw.mag_r, &draw.mag_h, &draw.phase_err_r),
    }
}

/// `|Σ_n a_n b_n e^{jφ_n}|²`.
pub fn coherent_gain(a: &[f64], b: &[f64], phases: &[f64]) -> f64 {
    let (mut re, mut im) = (0.0, 0.0);
    for ((x, y), p) in a.iter().zip(b).zip(phases) {
        let m = x * y;
        let (s, c) = p.sin_cos();
        re += m * c;
        im += m * s;
    }
    re * re + im * im
}
