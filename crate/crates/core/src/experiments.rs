//! Config-driven parameter sweeps and their CSV output.
//!
//! A sweep file is TOML with a `[sweep]` table, optional `[system]` and
//! `[array]` override tables and one `[scenario.<name>]` table per curve:
//!
//! ```toml
//! [sweep]
//! axis = "elements_per_row"
//! values = [5, 10, 15]
//! trials = 10000
//! seed = 7
//!
//! [array]
//! n_v = 4
//!
//! [scenario.one_bit]
//! mode = "noma"
//! phase = "bits:1"
//! estimators = ["mc", "jensen", "hardening"]
//! users = ["t", "r"]
//! ```
//!
//! Keys ending in `_db` / `_dbm` are converted to linear units / watts.
//! Scenario tables accept the same keys as `[system]` and `[array]` to
//! override them for that curve only.

use std::collections::HashSet;
use std::fmt;
use std::io::Write;
use std::path::Path;

use crate::analytic::{
    hardening_rate_r, hardening_rate_t, jensen_rate_r, jensen_rate_t, large_snr_limit,
    multiuser_bounds, oma_rates, Branch, LinkFactors, OmaKind, RateBound, RateScenario,
};
use crate::channel::{db_to_linear, dbm_to_watts, PhaseErrorModel, SystemParams};
use crate::error::{Error, Result};
use crate::geometry::{
    magnitude_moment_matrix, trace_rbar_sq, trace_rbar_sq_uncorrelated, ArrayGeometry,
    CorrelationMatrix,
};
use crate::mc::{ErrorModels, McConfig, McEstimate, McSimulator};

/// Bundled sweep files, by name.
pub const BUNDLED_SPECS: &[(&str, &str)] = &[
    ("fig3_rate_vs_N", include_str!("../specs/fig3_rate_vs_N.toml")),
    ("fig4_rr_vs_N", include_str!("../specs/fig4_rr_vs_N.toml")),
    ("fig5_rate_vs_snr", include_str!("../specs/fig5_rate_vs_snr.toml")),
    ("fig6_sumrate", include_str!("../specs/fig6_sumrate.toml")),
    ("fig7_correlation", include_str!("../specs/fig7_correlation.toml")),
    ("fig8_multiuser", include_str!("../specs/fig8_multiuser.toml")),
];

pub const DEFAULT_TRIALS: u64 = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// `N_h`, the number of elements per row.
    ElementsPerRow,
    TransmitSnrDb,
    /// Replaces every quantized phase model with `b` bits.
    QuantizationBits,
    /// Distance `d_r` from the IOS to user R.
    ReflectDistance,
}

impl Axis {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "elements_per_row" => Axis::ElementsPerRow,
            "transmit_snr_db" => Axis::TransmitSnrDb,
            "quantization_bits" => Axis::QuantizationBits,
            "reflect_distance" => Axis::ReflectDistance,
            _ => return None,
        })
    }

    pub fn label(&self) -> &'static str {
        match self {
            Axis::ElementsPerRow => "elements_per_row",
            Axis::TransmitSnrDb => "transmit_snr_db",
            Axis::QuantizationBits => "quantization_bits",
            Axis::ReflectDistance => "reflect_distance",
        }
    }

    fn check(&self, v: f64) -> Result<()> {
        let ok = match self {
            Axis::ElementsPerRow => v >= 1.0 && v.fract() == 0.0 && v <= 1e6,
            Axis::TransmitSnrDb => v.is_finite(),
            Axis::QuantizationBits => (1.0..=30.0).contains(&v) && v.fract() == 0.0,
            Axis::ReflectDistance => v > 0.0 && v.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(
                "sweep.values",
                format!("{v} is not a valid {} value", self.label()),
            ))
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Noma,
    Oma,
    FourUser,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Estimator {
    Mc,
    Jensen,
    Hardening,
    Limit,
}

impl Estimator {
    pub fn label(&self) -> &'static str {
        match self {
            Estimator::Mc => "mc",
            Estimator::Jensen => "jensen",
            Estimator::Hardening => "hardening",
            Estimator::Limit => "limit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum User {
    T,
    R,
    Tp,
    Rp,
    Sum,
}

impl User {
    pub fn label(&self) -> &'static str {
        match self {
            User::T => "t",
            User::R => "r",
            User::Tp => "tp",
            User::Rp => "rp",
            User::Sum => "sum",
        }
    }
}

/// Array layout before the sweep axis is applied.
#[derive(Debug, Clone, PartialEq)]
pub struct ArraySpec {
    pub n_h: usize,
    pub n_v: usize,
    /// Element size; defaults to half a wavelength.
    pub elem_len_l: Option<f64>,
    pub elem_len_w: Option<f64>,
    pub base_height: f64,
    pub wavelength: f64,
}

impl Default for ArraySpec {
    fn default() -> Self {
        Self {
            n_h: 15,
            n_v: 4,
            elem_len_l: None,
            elem_len_w: None,
            base_height: 0.0,
            wavelength: 0.1,
        }
    }
}

impl ArraySpec {
    pub fn geometry(&self) -> Result<ArrayGeometry> {
        ArrayGeometry::new(
            self.n_h,
            self.n_v,
            self.elem_len_l.unwrap_or(self.wavelength / 2.0),
            self.elem_len_w.unwrap_or(self.wavelength / 2.0),
            self.base_height,
            self.wavelength,
        )
    }
}

/// One curve of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub name: String,
    pub mode: Mode,
    pub errors: ErrorModels,
    /// Use the geometry's correlation matrix; otherwise `R = I`.
    pub correlated: bool,
    pub estimators: Vec<Estimator>,
    pub users: Vec<User>,
    pub params: SystemParams,
    pub array: ArraySpec,
}

/// A scenario with the sweep axis applied.
#[derive(Debug, Clone)]
struct Point {
    params: SystemParams,
    geometry: ArrayGeometry,
    errors: ErrorModels,
}

impl ScenarioSpec {
    fn at(&self, axis: Axis, value: f64) -> Result<Point> {
        let mut params = self.params.clone();
        let mut array = self.array.clone();
        let mut errors = self.errors;
        match axis {
            Axis::ElementsPerRow => array.n_h = value as usize,
            Axis::TransmitSnrDb => params.set_snr_db(value),
            Axis::QuantizationBits => {
                for m in [&mut errors.t, &mut errors.r] {
                    if let PhaseErrorModel::Quantized(_) = m {
                        *m = PhaseErrorModel::Quantized(value as u32);
                    }
                }
            }
            Axis::ReflectDistance => params.d_r = value,
        }
        let scoped = |e: Error| match e {
            Error::Config { key, reason } => Error::Config {
                key: format!("scenario.{}.{key}", self.name),
                reason,
            },
            other => other,
        };
        match self.mode {
            Mode::FourUser => params.validate_four_user(),
            Mode::Noma | Mode::Oma => params.validate_two_user(),
        }
        .map_err(scoped)?;
        errors.validate().map_err(scoped)?;
        let geometry = array.geometry().map_err(scoped)?;
        Ok(Point {
            params,
            geometry,
            errors,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub axis: Axis,
    pub values: Vec<f64>,
    pub trials: u64,
    pub seed: u64,
    pub confidence: f64,
    pub scenarios: Vec<ScenarioSpec>,
}

/// One CSV line.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub axis: f64,
    /// `<scenario>.<user>`.
    pub scenario: String,
    pub estimator: String,
    pub value: f64,
    /// Present for Monte Carlo rows only.
    pub half_width: Option<f64>,
    pub branch: Option<String>,
}

fn as_f64(v: &toml::Value, key: &str) -> Result<f64> {
    match v {
        toml::Value::Integer(i) => Ok(*i as f64),
        toml::Value::Float(f) => Ok(*f),
        _ => Err(Error::config(key, "expected a number")),
    }
}

fn as_count(v: &toml::Value, key: &str) -> Result<usize> {
    match v {
        toml::Value::Integer(i) if *i >= 0 => Ok(*i as usize),
        _ => Err(Error::config(key, "expected a non-negative integer")),
    }
}

fn as_str<'a>(v: &'a toml::Value, key: &str) -> Result<&'a str> {
    v.as_str().ok_or_else(|| Error::config(key, "expected a string"))
}

fn as_str_list<'a>(v: &'a toml::Value, key: &str) -> Result<Vec<&'a str>> {
    let arr = v
        .as_array()
        .ok_or_else(|| Error::config(key, "expected a list of strings"))?;
    arr.iter().map(|x| as_str(x, key)).collect()
}

/// Values gathered from `[system]` and scenario tables.
#[derive(Default, Clone)]
struct SystemOverrides {
    /// Applied in declaration order, with `transmit_snr` deferred to the end.
    entries: Vec<(String, String, f64)>,
}

const SYSTEM_KEYS: &[&str] = &[
    "d_b", "d_t", "d_r", "d_tp", "d_rp", "chi", "alpha", "beta", "q_t", "q_r", "q_tp", "q_rp",
    "q_t_sq", "q_r_sq", "q_tp_sq", "q_rp_sq", "lambda", "lambda_t", "lambda_r", "lambda_tp",
    "lambda_rp", "transmit_power", "noise_power", "transmit_snr",
];
const ARRAY_KEYS: &[&str] = &[
    "n_h", "n_v", "elem_len", "elem_len_l", "elem_len_w", "base_height", "wavelength",
];

/// Splits a unit suffix off `key`, returning the base key and the value in
/// linear units / watts.
fn strip_units(key: &str, v: f64) -> (&str, f64) {
    if let Some(base) = key.strip_suffix("_dbm") {
        (base, dbm_to_watts(v))
    } else if let Some(base) = key.strip_suffix("_db") {
        (base, db_to_linear(v))
    } else {
        (key, v)
    }
}

fn is_system_key(key: &str) -> bool {
    let base = key
        .strip_suffix("_dbm")
        .filter(|b| matches!(*b, "transmit_power" | "noise_power"))
        .or_else(|| {
            key.strip_suffix("_db")
                .filter(|b| b.starts_with("lambda") || *b == "transmit_snr")
        })
        .unwrap_or(key);
    SYSTEM_KEYS.contains(&base) && (base != "transmit_snr" || key != base)
}

impl SystemOverrides {
    fn push(&mut self, path: &str, key: &str, v: &toml::Value) -> Result<()> {
        let full = format!("{path}.{key}");
        let x = as_f64(v, &full)?;
        let (base, lin) = strip_units(key, x);
        self.entries.push((full, base.to_string(), lin));
        Ok(())
    }

    fn apply(&self, p: &mut SystemParams) -> Result<()> {
        let mut snr = None;
        for (full, key, v) in &self.entries {
            let v = *v;
            let sqrt_frac = |v: f64| {
                if v >= 0.0 {
                    Ok(v.sqrt())
                } else {
                    Err(Error::config(full.clone(), "power fraction must be >= 0"))
                }
            };
            match key.as_str() {
                "d_b" => p.d_b = v,
                "d_t" => p.d_t = v,
                "d_r" => p.d_r = v,
                "d_tp" => p.d_tp = v,
                "d_rp" => p.d_rp = v,
                "chi" => p.chi = v,
                "alpha" => p.alpha = v,
                "beta" => p.beta = v,
                "q_t" => p.q.t = v,
                "q_r" => p.q.r = v,
                "q_tp" => p.q.tp = v,
                "q_rp" => p.q.rp = v,
                "q_t_sq" => p.q.t = sqrt_frac(v)?,
                "q_r_sq" => p.q.r = sqrt_frac(v)?,
                "q_tp_sq" => p.q.tp = sqrt_frac(v)?,
                "q_rp_sq" => p.q.rp = sqrt_frac(v)?,
                "lambda" => {
                    p.lambda_t = v;
                    p.lambda_r = v;
                    p.lambda_tp = v;
                    p.lambda_rp = v;
                }
                "lambda_t" => p.lambda_t = v,
                "lambda_r" => p.lambda_r = v,
                "lambda_tp" => p.lambda_tp = v,
                "lambda_rp" => p.lambda_rp = v,
                "transmit_power" => p.p_tx = v,
                "noise_power" => p.noise_power = v,
                "transmit_snr" => snr = Some(v),
                _ => return Err(Error::config(full.clone(), "unknown key")),
            }
        }
        if let Some(s) = snr {
            p.p_tx = p.noise_power * s;
        }
        Ok(())
    }
}

fn apply_array_key(a: &mut ArraySpec, path: &str, key: &str, v: &toml::Value) -> Result<()> {
    let full = format!("{path}.{key}");
    match key {
        "n_h" => a.n_h = as_count(v, &full)?,
        "n_v" => a.n_v = as_count(v, &full)?,
        "elem_len" => {
            let x = as_f64(v, &full)?;
            a.elem_len_l = Some(x);
            a.elem_len_w = Some(x);
        }
        "elem_len_l" => a.elem_len_l = Some(as_f64(v, &full)?),
        "elem_len_w" => a.elem_len_w = Some(as_f64(v, &full)?),
        "base_height" => a.base_height = as_f64(v, &full)?,
        "wavelength" => a.wavelength = as_f64(v, &full)?,
        _ => return Err(Error::config(full, "unknown key")),
    }
    Ok(())
}

fn parse_phase(v: &toml::Value, key: &str) -> Result<PhaseErrorModel> {
    let rekey = |e: Error| match e {
        Error::Config { reason, .. } => Error::config(key, reason),
        other => Error::config(key, other.to_string()),
    };
    let model: PhaseErrorModel = as_str(v, key)?.parse().map_err(rekey)?;
    model.validate().map_err(rekey)?;
    Ok(model)
}

fn table<'a>(v: &'a toml::Value, key: &str) -> Result<&'a toml::Table> {
    v.as_table()
        .ok_or_else(|| Error::config(key, "expected a table"))
}

impl SweepSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let doc: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config("toml", e.message().to_string()))?;

        for key in doc.keys() {
            if !matches!(key.as_str(), "sweep" | "system" | "array" | "scenario") {
                return Err(Error::config(key.clone(), "unknown section"));
            }
        }

        let sweep = table(
            doc.get("sweep")
                .ok_or_else(|| Error::config("sweep", "missing section"))?,
            "sweep",
        )?;
        let mut axis = None;
        let mut values = None;
        let mut trials = DEFAULT_TRIALS;
        let mut seed = 0u64;
        let mut confidence = 0.95;
        for (k, v) in sweep {
            let full = format!("sweep.{k}");
            match k.as_str() {
                "axis" => {
                    let s = as_str(v, &full)?;
                    axis = Some(
                        Axis::parse(s)
                            .ok_or_else(|| Error::config(full, format!("unknown axis `{s}`")))?,
                    );
                }
                "values" => {
                    let arr = v
                        .as_array()
                        .ok_or_else(|| Error::config(full.clone(), "expected a list"))?;
                    values = Some(
                        arr.iter()
                            .map(|x| as_f64(x, &full))
                            .collect::<Result<Vec<_>>>()?,
                    );
                }
                "trials" => trials = as_count(v, &full)? as u64,
                "seed" => {
                    seed = match v {
                        toml::Value::Integer(i) => *i as u64,
                        _ => return Err(Error::config(full, "expected an integer")),
                    }
                }
                "confidence" => confidence = as_f64(v, &full)?,
                _ => return Err(Error::config(full, "unknown key")),
            }
        }
        let axis = axis.ok_or_else(|| Error::config("sweep.axis", "missing"))?;
        let values = values.ok_or_else(|| Error::config("sweep.values", "missing"))?;

        let mut base_system = SystemOverrides::default();
        if let Some(v) = doc.get("system") {
            for (k, v) in table(v, "system")? {
                if !is_system_key(k) {
                    return Err(Error::config(format!("system.{k}"), "unknown key"));
                }
                base_system.push("system", k, v)?;
            }
        }
        let mut base_array = ArraySpec::default();
        if let Some(v) = doc.get("array") {
            for (k, v) in table(v, "array")? {
                apply_array_key(&mut base_array, "array", k, v)?;
            }
        }

        let mut scenarios = Vec::new();
        if let Some(v) = doc.get("scenario") {
            for (name, body) in table(v, "scenario")? {
                scenarios.push(parse_scenario(name, body, &base_system, &base_array)?);
            }
        }

        let spec = SweepSpec {
            axis,
            values,
            trials,
            seed,
            confidence,
            scenarios,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// Parses a bundled spec by name.
    pub fn bundled(name: &str) -> Option<Result<Self>> {
        BUNDLED_SPECS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, text)| Self::from_toml_str(text))
    }

    /// Checks every scenario at every axis value.
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::config("sweep.values", "must not be empty"));
        }
        for &v in &self.values {
            self.axis.check(v)?;
        }
        self.mc_config()
            .validate()
            .map_err(|e| match e {
                Error::Config { key, reason } => Error::config(format!("sweep.{key}"), reason),
                other => other,
            })?;
        for sc in &self.scenarios {
            for &v in &self.values {
                sc.at(self.axis, v)?;
            }
        }
        Ok(())
    }

    pub fn mc_config(&self) -> McConfig {
        McConfig::new(self.trials, self.seed).with_confidence(self.confidence)
    }
}

fn parse_scenario(
    name: &str,
    body: &toml::Value,
    base_system: &SystemOverrides,
    base_array: &ArraySpec,
) -> Result<ScenarioSpec> {
    let path = format!("scenario.{name}");
    let body = table(body, &path)?;
    let mut mode = Mode::Noma;
    let mut phase_t = PhaseErrorModel::Perfect;
    let mut phase_r = PhaseErrorModel::Perfect;
    let mut correlated = true;
    let mut estimators = vec![Estimator::Mc];
    let mut users = None;
    let mut system = base_system.clone();
    let mut array = base_array.clone();

    for (k, v) in body {
        let full = format!("{path}.{k}");
        match k.as_str() {
            "mode" => {
                mode = match as_str(v, &full)? {
                    "noma" => Mode::Noma,
                    "oma" => Mode::Oma,
                    "four_user" => Mode::FourUser,
                    other => return Err(Error::config(full, format!("unknown mode `{other}`"))),
                }
            }
            "phase" => {
                phase_t = parse_phase(v, &full)?;
                phase_r = phase_t;
            }
            "phase_t" => phase_t = parse_phase(v, &full)?,
            "phase_r" => phase_r = parse_phase(v, &full)?,
            "correlated" => {
                correlated = v
                    .as_bool()
                    .ok_or_else(|| Error::config(full, "expected true or false"))?
            }
            "estimators" => {
                let mut seen = HashSet::new();
                estimators = Vec::new();
                for s in as_str_list(v, &full)? {
                    let e = match s {
                        "mc" => Estimator::Mc,
                        "jensen" => Estimator::Jensen,
                        "hardening" => Estimator::Hardening,
                        "limit" => Estimator::Limit,
                        other => {
                            return Err(Error::config(full, format!("unknown estimator `{other}`")))
                        }
                    };
                    if seen.insert(e) {
                        estimators.push(e);
                    }
                }
            }
            "users" => {
                let mut seen = HashSet::new();
                let mut list = Vec::new();
                for s in as_str_list(v, &full)? {
                    let u = match s {
                        "t" => User::T,
                        "r" => User::R,
                        "tp" => User::Tp,
                        "rp" => User::Rp,
                        "sum" => User::Sum,
                        other => return Err(Error::config(full, format!("unknown user `{other}`"))),
                    };
                    if seen.insert(u) {
                        list.push(u);
                    }
                }
                users = Some(list);
            }
            _ if is_system_key(k) => system.push(&path, k, v)?,
            _ if ARRAY_KEYS.contains(&k.as_str()) => apply_array_key(&mut array, &path, k, v)?,
            _ => return Err(Error::config(full, "unknown key")),
        }
    }

    let users = users.unwrap_or_else(|| match mode {
        Mode::FourUser => vec![User::T, User::R, User::Tp, User::Rp],
        Mode::Noma | Mode::Oma => vec![User::T, User::R],
    });
    if mode != Mode::FourUser && users.iter().any(|u| matches!(u, User::Tp | User::Rp)) {
        return Err(Error::config(
            format!("{path}.users"),
            "users tp and rp need mode = \"four_user\"",
        ));
    }

    let mut params = match mode {
        Mode::FourUser => SystemParams::four_user_default(),
        Mode::Noma | Mode::Oma => SystemParams::default(),
    };
    system.apply(&mut params)?;

    Ok(ScenarioSpec {
        name: name.to_string(),
        mode,
        errors: ErrorModels::new(phase_t, phase_r),
        correlated,
        estimators,
        users,
        params,
        array,
    })
}

/// Runs every scenario at every axis value.
///
/// Rows come out ordered by axis value, then scenario and user in declaration
/// order, then estimator. Combinations without a closed form (hardening
/// under uniform phase errors, limits of unbounded rates) produce no row.
/// All scenarios share the master seed, so curves see common random numbers.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<ResultRow>> {
    spec.validate()?;
    let cfg = spec.mc_config();
    let mut rows = Vec::new();
    for &value in &spec.values {
        for sc in &spec.scenarios {
            let point = sc.at(spec.axis, value)?;
            rows.extend(evaluate(sc, &point, value, &cfg)?);
        }
    }
    Ok(rows)
}

/// Monte Carlo estimates indexed like [`User`].
struct McResults {
    t: McEstimate,
    r: McEstimate,
    tp: Option<McEstimate>,
    rp: Option<McEstimate>,
    sum: McEstimate,
}

struct Analytic {
    n: usize,
    tr: f64,
    eps_t: f64,
    eps_r: f64,
    factors: LinkFactors,
}

fn evaluate(sc: &ScenarioSpec, point: &Point, axis: f64, cfg: &McConfig) -> Result<Vec<ResultRow>> {
    let n = point.geometry.len();
    let needs_corr = sc.correlated
        && (sc.estimators.contains(&Estimator::Mc) || sc.estimators.contains(&Estimator::Jensen));
    let corr = if needs_corr {
        point.geometry.correlation_matrix()
    } else {
        CorrelationMatrix::identity(n)
    };

    let mc = if sc.estimators.contains(&Estimator::Mc) {
        let sim = McSimulator::new(&corr, point.errors)?;
        Some(match sc.mode {
            Mode::Noma | Mode::Oma => {
                let e = if sc.mode == Mode::Noma {
                    sim.noma_pair(&point.params, cfg)?
                } else {
                    sim.oma_pair(&point.params, cfg)?
                };
                McResults {
                    t: e.t,
                    r: e.r,
                    tp: None,
                    rp: None,
                    sum: e.sum,
                }
            }
            Mode::FourUser => {
                let e = sim.four_user(&point.params, cfg)?;
                McResults {
                    t: e.t,
                    r: e.r,
                    tp: Some(e.tp),
                    rp: Some(e.rp),
                    sum: e.sum,
                }
            }
        })
    } else {
        None
    };

    let analytic = {
        let tr = if needs_corr {
            trace_rbar_sq(&magnitude_moment_matrix(&corr))
        } else {
            trace_rbar_sq_uncorrelated(n)
        };
        let (eps_t, eps_r) = (point.errors.t.epsilon(), point.errors.r.epsilon());
        Analytic {
            n,
            tr,
            eps_t,
            eps_r,
            factors: LinkFactors::compute(&point.params, n, tr, eps_t, eps_r)?,
        }
    };

    let mut rows = Vec::new();
    for &user in &sc.users {
        for &est in &sc.estimators {
            let scenario = format!("{}.{}", sc.name, user.label());
            let row = |value: f64, half_width: Option<f64>, branch: Option<Branch>| ResultRow {
                axis,
                scenario: scenario.clone(),
                estimator: est.label().to_string(),
                value,
                half_width,
                branch: branch.map(|b| b.label().to_string()),
            };
            let produced = match est {
                Estimator::Mc => {
                    let m = mc.as_ref().expect("mc requested");
                    let e = match user {
                        User::T => Some(m.t),
                        User::R => Some(m.r),
                        User::Tp => m.tp,
                        User::Rp => m.rp,
                        User::Sum => Some(m.sum),
                    };
                    e.map(|e| row(e.mean, Some(e.half_width), None))
                }
                _ => analytic_value(sc.mode, est, user, &point.params, &analytic)?
                    .map(|(v, b)| row(v, None, b)),
            };
            rows.extend(produced);
        }
    }
    Ok(rows)
}

/// Keeps `Ok(None)` for expressions the phase model does not support.
fn supported(r: Result<RateBound>) -> Result<Option<RateBound>> {
    match r {
        Ok(b) => Ok(Some(b)),
        Err(Error::Unsupported { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn analytic_value(
    mode: Mode,
    est: Estimator,
    user: User,
    p: &SystemParams,
    a: &Analytic,
) -> Result<Option<(f64, Option<Branch>)>> {
    let per_user = |u: User| -> Result<Option<RateBound>> {
        Ok(match (mode, est, u) {
            (Mode::Oma, Estimator::Jensen | Estimator::Hardening, User::T | User::R) => {
                let kind = if est == Estimator::Jensen {
                    OmaKind::Jensen
                } else {
                    OmaKind::Hardening
                };
                match oma_rates(p, a.n, a.tr, a.eps_t, a.eps_r, kind) {
                    Ok((t, r)) => Some(if u == User::T { t } else { r }),
                    Err(Error::Unsupported { .. }) => None,
                    Err(e) => return Err(e),
                }
            }
            (Mode::Oma, _, _) => None,
            (_, Estimator::Jensen, User::T) => Some(jensen_rate_t(p, a.n, a.tr, a.eps_t)?),
            (_, Estimator::Jensen, User::R) => Some(jensen_rate_r(p, &a.factors)),
            (Mode::FourUser, Estimator::Jensen, User::Tp) => {
                Some(multiuser_bounds(p, a.n, &a.factors)?.0)
            }
            (Mode::FourUser, Estimator::Jensen, User::Rp) => {
                Some(multiuser_bounds(p, a.n, &a.factors)?.1)
            }
            (_, Estimator::Hardening, User::T) => supported(hardening_rate_t(p, a.n, a.eps_t))?,
            (_, Estimator::Hardening, User::R) => {
                supported(hardening_rate_r(p, a.n, a.eps_t, a.eps_r))?
            }
            (_, Estimator::Limit, User::R) => large_snr_limit(p, RateScenario::NomaR),
            (Mode::FourUser, Estimator::Limit, User::Tp) => {
                large_snr_limit(p, RateScenario::NomaTp)
            }
            (Mode::FourUser, Estimator::Limit, User::Rp) => {
                large_snr_limit(p, RateScenario::NomaRp)
            }
            _ => None,
        })
    };

    if user != User::Sum {
        return Ok(per_user(user)?.map(|b| (b.value, b.branch)));
    }
    // A sum of per-user bounds bounds the sum rate; skip if any term is undefined.
    let members: &[User] = match mode {
        Mode::FourUser => &[User::T, User::R, User::Tp, User::Rp],
        Mode::Noma | Mode::Oma => &[User::T, User::R],
    };
    let mut total = 0.0;
    for &u in members {
        match per_user(u)? {
            Some(b) => total += b.value,
            None => return Ok(None),
        }
    }
    Ok(Some((total, None)))
}

/// Formats `x` with six significant digits, dropping trailing zeros.
pub fn format_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    if !(-4..6).contains(&exp) {
        return format!("{x:.5e}");
    }
    let s = format!("{:.*}", (5 - exp).max(0) as usize, x);
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

pub const CSV_HEADER: [&str; 6] = ["axis", "scenario", "estimator", "value", "half_width", "branch"];

/// Writes rows as CSV to any writer.
pub fn write_rows<W: Write>(rows: &[ResultRow], out: W) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            format_sig(r.axis),
            r.scenario.clone(),
            r.estimator.clone(),
            format_sig(r.value),
            r.half_width.map(format_sig).unwrap_or_default(),
            r.branch.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv(rows: &[ResultRow], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_rows(rows, std::io::BufWriter::new(file)).map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = reader.headers().map_err(csv_err)?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::config("csv", format!("unexpected header in {}", path.display())));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let num = |j: usize| -> Result<f64> {
            rec[j].parse().map_err(|_| {
                Error::config("csv", format!("line {}: bad number `{}`", i + 2, &rec[j]))
            })
        };
        let opt = |s: &str| (!s.is_empty()).then(|| s.to_string());
        rows.push(ResultRow {
            axis: num(0)?,
            scenario: rec[1].to_string(),
            estimator: rec[2].to_string(),
            value: num(3)?,
            half_width: if rec[4].is_empty() { None } else { Some(num(4)?) },
            branch: opt(&rec[5]),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"
[sweep]
axis = "elements_per_row"
values = [2, 4]
trials = 500
seed = 3

[array]
n_v = 2

[scenario.bits]
mode = "noma"
phase = "bits:1"
estimators = ["mc", "jensen", "hardening", "limit"]
users = ["t", "r", "sum"]

[scenario.uniform]
phase = "uniform"
correlated = false
estimators = ["jensen", "hardening"]
users = ["t"]
"#;

    #[test]
    fn parses_and_runs_small_spec() {
        let spec = SweepSpec::from_toml_str(SMALL).unwrap();
        assert_eq!(spec.axis, Axis::ElementsPerRow);
        assert_eq!(spec.scenarios.len(), 2);
        assert_eq!(spec.scenarios[0].name, "bits");
        let rows = run_sweep(&spec).unwrap();
        // bits: t (mc, jensen, hardening), r (all four), sum (mc, jensen, hardening);
        // uniform: t jensen only.
        assert_eq!(rows.len(), 2 * (3 + 4 + 3 + 1));
        assert_eq!(rows[0].scenario, "bits.t");
        assert_eq!(rows[0].estimator, "mc");
        assert!(rows[0].half_width.is_some());
        assert!(rows[1].half_width.is_none());
        let r_jensen = rows
            .iter()
            .find(|r| r.scenario == "bits.r" && r.estimator == "jensen")
            .unwrap();
        assert!(r_jensen.branch.is_some());
        assert!(rows.iter().all(|r| r.scenario != "uniform.t" || r.estimator == "jensen"));
        assert_eq!(rows.last().unwrap().axis, 4.0);
    }

    #[test]
    fn empty_estimators_yield_no_rows() {
        let text = SMALL.replace(
            "estimators = [\"mc\", \"jensen\", \"hardening\", \"limit\"]",
            "estimators = []",
        )
        .replace("estimators = [\"jensen\", \"hardening\"]", "estimators = []");
        let rows = run_sweep(&SweepSpec::from_toml_str(&text).unwrap()).unwrap();
        assert!(rows.is_empty());
    }

    fn err_key(text: &str) -> String {
        match SweepSpec::from_toml_str(text) {
            Err(Error::Config { key, .. }) => key,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn errors_name_the_offending_key() {
        assert_eq!(err_key(&SMALL.replace("n_v = 2", "n_vv = 2")), "array.n_vv");
        assert_eq!(
            err_key(&SMALL.replace("phase = \"uniform\"", "phase = \"sometimes\"")),
            "scenario.uniform.phase"
        );
        assert_eq!(err_key(&SMALL.replace("values = [2, 4]", "values = []")), "sweep.values");
        assert_eq!(err_key(&SMALL.replace("values = [2, 4]", "values = [2.5]")), "sweep.values");
        assert_eq!(err_key(&SMALL.replace("trials = 500", "trials = 5")), "sweep.trials");
        assert_eq!(
            err_key(&SMALL.replace("correlated = false", "correlated = false\nalpha = 0.9")),
            "scenario.uniform.alpha"
        );
        assert_eq!(
            err_key(&SMALL.replace("users = [\"t\"]", "users = [\"tp\"]")),
            "scenario.uniform.users"
        );
        assert_eq!(err_key("[sweep]\naxis = \"time\"\nvalues = [1]"), "sweep.axis");
        assert_eq!(err_key(&format!("{SMALL}\n[extra]\n")), "extra");
    }

    #[test]
    fn unit_suffixes_convert() {
        let text = r#"
[sweep]
axis = "transmit_snr_db"
values = [30]
trials = 100

[system]
noise_power_dbm = -60
transmit_power_dbm = 10
lambda_db = -20
q_t_sq = 0.25
q_r_sq = 0.75

[scenario.a]
estimators = []
"#;
        let spec = SweepSpec::from_toml_str(text).unwrap();
        let p = &spec.scenarios[0].params;
        assert!((p.noise_power - 1e-9).abs() < 1e-21);
        assert!((p.p_tx - 1e-2).abs() < 1e-14);
        assert!((p.lambda_rp - 1e-2).abs() < 1e-14);
        assert!((p.q.t - 0.5).abs() < 1e-15);
        let point = spec.scenarios[0].at(spec.axis, 30.0).unwrap();
        assert!((crate::channel::linear_to_db(point.params.snr()) - 30.0).abs() < 1e-9);
    }

    #[test]
    fn quantization_axis_replaces_only_quantized_models() {
        let text = r#"
[sweep]
axis = "quantization_bits"
values = [3]
trials = 100

[scenario.q]
phase = "bits:1"
[scenario.p]
phase_t = "perfect"
phase_r = "bits:2"
"#;
        let spec = SweepSpec::from_toml_str(text).unwrap();
        let q = spec.scenarios[0].at(spec.axis, 3.0).unwrap();
        assert_eq!(q.errors.t, PhaseErrorModel::Quantized(3));
        let p = spec.scenarios[1].at(spec.axis, 3.0).unwrap();
        assert_eq!(p.errors.t, PhaseErrorModel::Perfect);
        assert_eq!(p.errors.r, PhaseErrorModel::Quantized(3));
    }

    #[test]
    fn significant_digit_formatting() {
        assert_eq!(format_sig(0.0), "0");
        assert_eq!(format_sig(-0.0), "0");
        assert_eq!(format_sig(9.71234567), "9.71235");
        assert_eq!(format_sig(10.0), "10");
        assert_eq!(format_sig(1.47393118833), "1.47393");
        assert_eq!(format_sig(123456789.0), "1.23457e8");
        assert_eq!(format_sig(99999.94), "99999.9");
        assert_eq!(format_sig(0.000123456789), "0.000123457");
        assert_eq!(format_sig(1.5e-7), "1.50000e-7");
        assert_eq!(format_sig(-2.5), "-2.5");
    }

    #[test]
    fn csv_round_trip_and_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        write_csv(&[], &path).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            "axis,scenario,estimator,value,half_width,branch\n"
        );
        assert!(read_csv(&path).unwrap().is_empty());

        let rows = run_sweep(&SweepSpec::from_toml_str(SMALL).unwrap()).unwrap();
        write_csv(&rows, &path).unwrap();
        let back = read_csv(&path).unwrap();
        assert_eq!(back.len(), rows.len());
        let close = |a: f64, b: f64| (a - b).abs() <= 5e-6 * a.abs().max(b.abs());
        for (a, b) in rows.iter().zip(&back) {
            assert!(close(a.axis, b.axis) && close(a.value, b.value));
            assert_eq!(a.half_width.is_some(), b.half_width.is_some());
            if let (Some(x), Some(y)) = (a.half_width, b.half_width) {
                assert!(close(x, y));
            }
            assert_eq!((&a.scenario, &a.estimator, &a.branch), (&b.scenario, &b.estimator, &b.branch));
        }
        let missing = dir.path().join("nope").join("x.csv");
        assert!(matches!(write_csv(&rows, &missing), Err(Error::Io { .. })));
    }

    #[test]
    fn bundled_specs_validate() {
        for (name, _) in BUNDLED_SPECS {
            let spec = SweepSpec::bundled(name).unwrap();
            assert!(spec.is_ok(), "{name}: {:?}", spec.err());
        }
        assert!(SweepSpec::bundled("nope").is_none());
        let fig3 = SweepSpec::bundled("fig3_rate_vs_N").unwrap().unwrap();
        assert_eq!(fig3.values.len(), 25);
        assert_eq!(fig3.scenarios.len(), 4);
    }
}
