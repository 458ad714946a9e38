//! Monte Carlo estimation of the ergodic NOMA/OMA rates.
//!
//! Trials are grouped into fixed-size chunks. Each chunk accumulates its own
//! sums, and chunk sums are merged in trial order. Combined with per-trial
//! random streams this makes every estimate bit-identical regardless of how
//! many rayon workers run the chunks.

use std::f64::consts::LN_2;

use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::channel::{
    coherent_gain, ChannelFactor, Link, PhaseErrorModel, PhaseSampler, Scratch, Side,
    StreamSeeder, StreamTag, SystemParams,
};
use crate::error::{Error, Result};
use crate::geometry::CorrelationMatrix;

const CHUNK: u64 = 1024;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McConfig {
    pub trials: u64,
    pub master_seed: u64,
    /// Two-sided confidence level of [`McEstimate::half_width`].
    pub confidence: f64,
}

impl McConfig {
    pub const MIN_TRIALS: u64 = 100;

    pub fn new(trials: u64, master_seed: u64) -> Self {
        Self {
            trials,
            master_seed,
            confidence: 0.95,
        }
    }

    pub fn with_confidence(mut self, confidence: f64) -> Self {
        self.confidence = confidence;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials < Self::MIN_TRIALS {
            return Err(Error::config(
                "trials",
                format!("must be >= {}, got {}", Self::MIN_TRIALS, self.trials),
            ));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::config(
                "confidence",
                format!("must lie in (0, 1), got {}", self.confidence),
            ));
        }
        Ok(())
    }

    fn z_score(&self) -> f64 {
        Normal::standard().inverse_cdf(0.5 + 0.5 * self.confidence)
    }
}

/// Sample mean with a normal-approximation confidence half-width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub half_width: f64,
    pub trials: u64,
    /// Sample standard deviation of the per-trial values.
    pub std_dev: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.sum += x;
        self.sum_sq += x * x;
    }

    fn merge(&mut self, other: &Moments) {
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
    }

    fn estimate(&self, trials: u64, z: f64) -> McEstimate {
        let n = trials as f64;
        let mean = self.sum / n;
        let var = ((self.sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
        let std_dev = var.sqrt();
        McEstimate {
            mean,
            half_width: z * std_dev / n.sqrt(),
            trials,
            std_dev,
        }
    }
}

/// Runs `trial` for indices `0..cfg.trials` and returns one estimate per output.
fn run_trials<const K: usize, S, I, F>(cfg: &McConfig, init: I, trial: F) -> [McEstimate; K]
where
    I: Fn() -> S + Sync,
    F: Fn(&mut S, u64) -> [f64; K] + Sync,
{
    let n_chunks = cfg.trials.div_ceil(CHUNK);
    let partials: Vec<[Moments; K]> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut state = init();
            let mut acc = [Moments::default(); K];
            for i in c * CHUNK..((c + 1) * CHUNK).min(cfg.trials) {
                for (a, x) in acc.iter_mut().zip(trial(&mut state, i)) {
                    a.push(x);
                }
            }
            acc
        })
        .collect();
    let mut total = [Moments::default(); K];
    for part in &partials {
        for (t, p) in total.iter_mut().zip(part) {
            t.merge(p);
        }
    }
    let z = cfg.z_score();
    total.map(|m| m.estimate(cfg.trials, z))
}

/// Residual phase-error models of the two boosted links.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorModels {
    pub t: PhaseErrorModel,
    pub r: PhaseErrorModel,
}

impl ErrorModels {
    pub fn new(t: PhaseErrorModel, r: PhaseErrorModel) -> Self {
        Self { t, r }
    }

    pub fn both(model: PhaseErrorModel) -> Self {
        Self { t: model, r: model }
    }

    pub fn validate(&self) -> Result<()> {
        self.t.validate()?;
        self.r.validate()
    }
}

/// Per-link SNR scales and squared power coefficients, fixed for a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateConstants {
    /// `γ0 η_t α²`
    pub snr_t: f64,
    /// `γ0 η_r β²`
    pub snr_r: f64,
    /// `γ0 η_t' α²`
    pub snr_tp: f64,
    /// `γ0 η_r' β²`
    pub snr_rp: f64,
    /// `γ0 η_t`, the OMA scale of user T.
    pub oma_t: f64,
    /// `γ0 η_r`, the OMA scale of user R.
    pub oma_r: f64,
    /// `q²` for `(T, R, T', R')`.
    pub q_sq: [f64; 4],
}

impl RateConstants {
    pub fn new(params: &SystemParams) -> Self {
        let snr = params.snr();
        let (a2, b2) = (params.alpha * params.alpha, params.beta * params.beta);
        let q = &params.q;
        Self {
            snr_t: snr * params.pathloss(Link::T) * a2,
            snr_r: snr * params.pathloss(Link::R) * b2,
            snr_tp: snr * params.pathloss(Link::Tp) * a2,
            snr_rp: snr * params.pathloss(Link::Rp) * b2,
            oma_t: snr * params.pathloss(Link::T),
            oma_r: snr * params.pathloss(Link::R),
            q_sq: [q.t * q.t, q.r * q.r, q.tp * q.tp, q.rp * q.rp],
        }
    }
}

fn log2_1p(x: f64) -> f64 {
    x.ln_1p() / LN_2
}

/// SINR of a message with power `signal` under `interference` at link scale `x`.
fn sinr(signal: f64, interference: f64, x: f64) -> f64 {
    signal * x / (interference * x + 1.0)
}

/// Instantaneous NOMA rates `(R_t, R_r)` for composite gains `h_t`, `h_r`.
///
/// User R's message must be decodable at T (for SIC) and at R, so its rate
/// is the smaller of the two.
pub fn noma_pair_rates(c: &RateConstants, h_t: f64, h_r: f64) -> (f64, f64) {
    let [qt, qr, _, _] = c.q_sq;
    let x_t = c.snr_t * h_t;
    let x_r = c.snr_r * h_r;
    let gamma_t = qt * x_t;
    let gamma_t_to_r = sinr(qr, qt, x_t);
    let gamma_r = sinr(qr, qt, x_r);
    (
        log2_1p(gamma_t),
        log2_1p(gamma_t_to_r).min(log2_1p(gamma_r)),
    )
}

/// Instantaneous OMA rates: half the time each, full IOS amplitude per slot.
pub fn oma_pair_rates(c: &RateConstants, h_t: f64, h_r: f64) -> (f64, f64) {
    (
        0.5 * log2_1p(c.oma_t * h_t),
        0.5 * log2_1p(c.oma_r * h_r),
    )
}

/// Instantaneous four-user rates `[R_t, R_r, R_t', R_r']`.
///
/// SIC order is `R', T', R, T`; each message's rate is the worst SINR over
/// every user that decodes it.
pub fn four_user_rates(c: &RateConstants, h: [f64; 4]) -> [f64; 4] {
    let [qt, qr, qtp, qrp] = c.q_sq;
    let x = [
        c.snr_t * h[0],
        c.snr_r * h[1],
        c.snr_tp * h[2],
        c.snr_rp * h[3],
    ];
    let (r_t, r_r) = noma_pair_rates(c, h[0], h[1]);
    let worst = |signal: f64, interference: f64, decoders: &[usize]| {
        decoders
            .iter()
            .map(|&u| log2_1p(sinr(signal, interference, x[u])))
            .fold(f64::INFINITY, f64::min)
    };
    let r_tp = worst(qtp, qt + qr, &[2, 1, 0]);
    let r_rp = worst(qrp, qt + qr + qtp, &[3, 2, 1, 0]);
    [r_t, r_r, r_tp, r_rp]
}

/// Two-user estimates; `sum` is estimated from per-trial sums.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairEstimates {
    pub t: McEstimate,
    pub r: McEstimate,
    pub sum: McEstimate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FourUserEstimates {
    pub t: McEstimate,
    pub r: McEstimate,
    pub tp: McEstimate,
    pub rp: McEstimate,
    pub sum: McEstimate,
}

/// Per-worker draw buffers.
#[derive(Default)]
struct Buffers {
    scratch: Scratch,
    h: Vec<f64>,
    g: Vec<f64>,
    r: Vec<f64>,
    phase_t: Vec<f64>,
    phase_r: Vec<f64>,
}

impl Buffers {
    fn new(n: usize) -> Self {
        Self {
            h: vec![0.0; n],
            g: vec![0.0; n],
            r: vec![0.0; n],
            phase_t: vec![0.0; n],
            phase_r: vec![0.0; n],
            ..Default::default()
        }
    }
}

/// A channel model prepared for repeated simulation: the correlation factor
/// plus the phase-error samplers.
#[derive(Debug, Clone)]
pub struct McSimulator {
    factor: ChannelFactor,
    errors: ErrorModels,
    sampler_t: PhaseSampler,
    sampler_r: PhaseSampler,
}

impl McSimulator {
    pub fn new(r: &CorrelationMatrix, errors: ErrorModels) -> Result<Self> {
        errors.validate()?;
        Ok(Self {
            factor: ChannelFactor::new(r)?,
            errors,
            sampler_t: errors.t.sampler(),
            sampler_r: errors.r.sampler(),
        })
    }

    pub fn len(&self) -> usize {
        self.factor.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.factor.dim() == 0
    }

    pub fn errors(&self) -> ErrorModels {
        self.errors
    }

    fn magnitudes(&self, seeder: &StreamSeeder, trial: u64, tag: StreamTag, scratch: &mut Scratch, out: &mut [f64]) {
        self.factor
            .sample_magnitudes(&mut seeder.stream(trial, tag), scratch, out);
    }

    fn gain(
        &self,
        seeder: &StreamSeeder,
        trial: u64,
        side: Side,
        buf: &mut Buffers,
    ) -> f64 {
        let (tag, phase_tag, sampler) = match side {
            Side::T => (StreamTag::G, StreamTag::PhaseT, self.sampler_t),
            Side::R => (StreamTag::R, StreamTag::PhaseR, self.sampler_r),
        };
        let (link, phase) = match side {
            Side::T => (&mut buf.g, &mut buf.phase_t),
            Side::R => (&mut buf.r, &mut buf.phase_r),
        };
        self.factor
            .sample_magnitudes(&mut seeder.stream(trial, tag), &mut buf.scratch, link);
        sampler.fill(&mut seeder.stream(trial, phase_tag), phase);
        coherent_gain(link, &buf.h, phase)
    }

    /// Gain of an outer user: its own link vector, shared `h`, uniform phases.
    fn outer_gain(
        &self,
        seeder: &StreamSeeder,
        trial: u64,
        tags: (StreamTag, StreamTag),
        buf: &mut Buffers,
    ) -> f64 {
        self.factor
            .sample_magnitudes(&mut seeder.stream(trial, tags.0), &mut buf.scratch, &mut buf.g);
        PhaseErrorModel::UniformFull
            .sampler()
            .fill(&mut seeder.stream(trial, tags.1), &mut buf.phase_t);
        coherent_gain(&buf.g, &buf.h, &buf.phase_t)
    }

    fn pair_gains_into(&self, seeder: &StreamSeeder, trial: u64, buf: &mut Buffers) -> (f64, f64) {
        self.magnitudes(seeder, trial, StreamTag::H, &mut buf.scratch, &mut buf.h);
        let h_t = self.gain(seeder, trial, Side::T, buf);
        let h_r = self.gain(seeder, trial, Side::R, buf);
        (h_t, h_r)
    }

    /// Composite gains `(H_t, H_r)` of one trial.
    pub fn pair_gains(&self, master_seed: u64, trial: u64) -> (f64, f64) {
        let mut buf = Buffers::new(self.len());
        self.pair_gains_into(&StreamSeeder::new(master_seed), trial, &mut buf)
    }

    /// Ergodic NOMA rates `(R_t, R_r)` of the two-user setup.
    pub fn noma_pair(&self, params: &SystemParams, cfg: &McConfig) -> Result<PairEstimates> {
        params.validate_two_user()?;
        cfg.validate()?;
        let c = RateConstants::new(params);
        let seeder = StreamSeeder::new(cfg.master_seed);
        let [t, r, sum] = run_trials(cfg, || Buffers::new(self.len()), |buf, i| {
            let (h_t, h_r) = self.pair_gains_into(&seeder, i, buf);
            let (a, b) = noma_pair_rates(&c, h_t, h_r);
            [a, b, a + b]
        });
        Ok(PairEstimates { t, r, sum })
    }

    /// Ergodic OMA rates `(R̃_t, R̃_r)`.
    pub fn oma_pair(&self, params: &SystemParams, cfg: &McConfig) -> Result<PairEstimates> {
        params.validate_two_user()?;
        cfg.validate()?;
        let c = RateConstants::new(params);
        let seeder = StreamSeeder::new(cfg.master_seed);
        let [t, r, sum] = run_trials(cfg, || Buffers::new(self.len()), |buf, i| {
            let (h_t, h_r) = self.pair_gains_into(&seeder, i, buf);
            let (a, b) = oma_pair_rates(&c, h_t, h_r);
            [a, b, a + b]
        });
        Ok(PairEstimates { t, r, sum })
    }

    /// Ergodic rates of all four users. `T'` and `R'` see their own link
    /// vectors with phases left unaligned.
    pub fn four_user(&self, params: &SystemParams, cfg: &McConfig) -> Result<FourUserEstimates> {
        params.validate_four_user()?;
        cfg.validate()?;
        let c = RateConstants::new(params);
        let seeder = StreamSeeder::new(cfg.master_seed);
        let [t, r, tp, rp, sum] = run_trials(cfg, || Buffers::new(self.len()), |buf, i| {
            let (h_t, h_r) = self.pair_gains_into(&seeder, i, buf);
            let h_tp = self.outer_gain(&seeder, i, (StreamTag::Gp, StreamTag::PhaseTp), buf);
            let h_rp = self.outer_gain(&seeder, i, (StreamTag::Rp, StreamTag::PhaseRp), buf);
            let [a, b, c2, d] = four_user_rates(&c, [h_t, h_r, h_tp, h_rp]);
            [a, b, c2, d, a + b + c2 + d]
        });
        Ok(FourUserEstimates { t, r, tp, rp, sum })
    }

    /// Statistics of the normalized composite gain `H/N²` on one side.
    pub fn gain_moments(&self, side: Side, cfg: &McConfig) -> Result<McEstimate> {
        cfg.validate()?;
        let seeder = StreamSeeder::new(cfg.master_seed);
        let n2 = (self.len() * self.len()) as f64;
        let [est] = run_trials(cfg, || Buffers::new(self.len()), |buf, i| {
            self.magnitudes(&seeder, i, StreamTag::H, &mut buf.scratch, &mut buf.h);
            [self.gain(&seeder, i, side, buf) / n2]
        });
        Ok(est)
    }
}

pub fn simulate_noma_pair(
    r: &CorrelationMatrix,
    params: &SystemParams,
    errors: ErrorModels,
    cfg: &McConfig,
) -> Result<PairEstimates> {
    McSimulator::new(r, errors)?.noma_pair(params, cfg)
}

pub fn simulate_oma_pair(
    r: &CorrelationMatrix,
    params: &SystemParams,
    errors: ErrorModels,
    cfg: &McConfig,
) -> Result<PairEstimates> {
    McSimulator::new(r, errors)?.oma_pair(params, cfg)
}

pub fn simulate_four_user(
    r: &CorrelationMatrix,
    params: &SystemParams,
    errors: ErrorModels,
    cfg: &McConfig,
) -> Result<FourUserEstimates> {
    McSimulator::new(r, errors)?.four_user(params, cfg)
}
