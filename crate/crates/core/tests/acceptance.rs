//! Acceptance criteria, one test per criterion.
//!
//! Each test writes a single `[PASS]`/`[FAIL]` summary line to stderr (not
//! captured by the test harness) and then asserts.

use std::f64::consts::PI;
use std::io::Write;

use iosnoma_core::analytic::{
    hardening_rate_t, jensen_rate_t, large_snr_limit, multiuser_bounds, quantization_gain_limit,
    sum_rate_verdict, LinkFactors,
};
use iosnoma_core::channel::Side;
use iosnoma_core::experiments::{run_sweep, write_csv, BUNDLED_SPECS};
use iosnoma_core::geometry::{
    cross_moment, magnitude_moment_matrix, trace_rbar_sq, trace_rbar_sq_uncorrelated,
};
use iosnoma_core::specfun::{bessel_i1_i0_ratio, elliptic_e, elliptic_k};
use iosnoma_core::{
    ArrayGeometry, CorrelationMatrix, ErrorModels, McConfig, McSimulator, PhaseErrorModel,
    RateScenario, SumRateVerdict, SweepSpec, SystemParams,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn report(id: &str, pass: bool, detail: String) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "[{tag}] {id}: {detail}");
    assert!(pass, "{id}: {detail}");
}

fn note(id: &str, detail: String) {
    let _ = writeln!(std::io::stderr(), "[note] {id}: {detail}");
}

fn half_wave(n_h: usize, n_v: usize) -> ArrayGeometry {
    ArrayGeometry::half_wavelength(n_h, n_v, 0.1).unwrap()
}

fn simulator(geom: &ArrayGeometry, model: PhaseErrorModel) -> McSimulator {
    McSimulator::new(&geom.correlation_matrix(), ErrorModels::both(model)).unwrap()
}

fn trace(geom: &ArrayGeometry) -> f64 {
    trace_rbar_sq(&magnitude_moment_matrix(&geom.correlation_matrix()))
}

const FIG3_MODELS: [(&str, PhaseErrorModel, f64); 4] = [
    ("uniform", PhaseErrorModel::UniformFull, 5.0),
    ("1-bit", PhaseErrorModel::Quantized(1), 9.7),
    ("2-bit", PhaseErrorModel::Quantized(2), 10.7),
    ("perfect", PhaseErrorModel::Perfect, 11.0),
];

#[test]
fn criterion_1_rate_of_t_at_sixty_elements() {
    let geom = half_wave(15, 4);
    let cfg = McConfig::new(100_000, 1);
    let p = SystemParams::default();
    let start = std::time::Instant::now();
    let mut parts = Vec::new();
    let mut pass = true;
    for (name, model, target) in FIG3_MODELS {
        let t = simulator(&geom, model).noma_pair(&p, &cfg).unwrap().t;
        let ok = (t.mean - target).abs() <= 0.2;
        pass &= ok;
        parts.push(format!("{name} {:.3}±{:.3} (want {target}±0.2)", t.mean, t.half_width));
    }
    let elapsed = start.elapsed().as_secs_f64();
    pass &= elapsed < 120.0;

    // Same setup with a free-space exponent, for comparison only.
    let p2 = SystemParams {
        chi: 2.0,
        ..SystemParams::default()
    };
    let cfg_small = McConfig::new(10_000, 1);
    let diag: Vec<String> = FIG3_MODELS
        .iter()
        .map(|(name, model, _)| {
            let t = simulator(&geom, *model).noma_pair(&p2, &cfg_small).unwrap().t;
            format!("{name} {:.2}", t.mean)
        })
        .collect();
    note("C1", format!("with chi = 2 instead: {}", diag.join(", ")));

    report(
        "C1",
        pass,
        format!("N=60, chi=2.4: {}; {elapsed:.1}s", parts.join(", ")),
    );
}

#[test]
fn criterion_2_jensen_tightness() {
    let p = SystemParams::default();
    let cfg = McConfig::new(10_000, 2);
    let mut worst: f64 = 0.0;
    let mut pass = true;
    for n_h in [5, 10, 15, 25] {
        let geom = half_wave(n_h, 4);
        let tr = trace(&geom);
        for model in [
            PhaseErrorModel::Quantized(1),
            PhaseErrorModel::Quantized(2),
            PhaseErrorModel::Perfect,
            PhaseErrorModel::VonMises(2.0),
        ] {
            let mc = simulator(&geom, model).noma_pair(&p, &cfg).unwrap().t;
            let j = jensen_rate_t(&p, geom.len(), tr, model.epsilon()).unwrap().value;
            let gap = (j - mc.mean).abs();
            worst = worst.max(gap);
            pass &= gap <= 0.3;
        }
    }
    let geom = half_wave(16, 16);
    let mc = simulator(&geom, PhaseErrorModel::UniformFull)
        .noma_pair(&p, &McConfig::new(4_000, 2))
        .unwrap()
        .t;
    let j = jensen_rate_t(&p, 256, trace(&geom), 0.0).unwrap().value;
    let uniform_gap = j - mc.mean;
    pass &= uniform_gap > 0.5;
    report(
        "C2",
        pass,
        format!(
            "max |R_t* - MC| over N in 20..100 = {worst:.4} (<= 0.3); uniform gap at N=256 = {uniform_gap:.3} (> 0.5)"
        ),
    );
}

#[test]
fn criterion_3_r_side_ceiling() {
    let geom = half_wave(10, 4);
    let cfg = McConfig::new(10_000, 3);
    let ceiling = (25.0f64 / 9.0).log2();
    let mut pass = true;
    let mut parts = Vec::new();
    for model in [PhaseErrorModel::Quantized(1), PhaseErrorModel::Perfect] {
        let sim = simulator(&geom, model);
        let mut prev = f64::NEG_INFINITY;
        let mut trail = Vec::new();
        for snr in [30.0, 50.0, 70.0, 90.0] {
            let r = sim
                .noma_pair(&SystemParams::default().with_snr_db(snr), &cfg)
                .unwrap()
                .r;
            pass &= r.mean > prev && r.mean <= ceiling + 3.0 * r.half_width;
            prev = r.mean;
            trail.push(format!("{:.4}", r.mean));
        }
        pass &= (ceiling - prev).abs() <= 0.02;
        parts.push(format!("{model}: {}", trail.join(" -> ")));
    }
    report(
        "C3",
        pass,
        format!("R_r at 30/50/70/90 dB, N=40: {} (ceiling {ceiling:.4}, tol 0.02)", parts.join("; ")),
    );
}

#[test]
fn criterion_4_correlation_gap() {
    let p = SystemParams::default();
    let cfg = McConfig::new(100_000, 4);
    let model = PhaseErrorModel::Quantized(1);
    let mut gaps = Vec::new();
    let mut analytic = Vec::new();
    for n_h in [3, 9, 18] {
        let geom = ArrayGeometry::new(n_h, 5, 0.05, 0.05, 0.0, 0.2).unwrap();
        let n = geom.len();
        let corr = simulator(&geom, model).noma_pair(&p, &cfg).unwrap().t;
        let unc = McSimulator::new(&CorrelationMatrix::identity(n), ErrorModels::both(model))
            .unwrap()
            .noma_pair(&p, &cfg)
            .unwrap()
            .t;
        gaps.push((corr.mean - unc.mean).abs());
        let eps = model.epsilon();
        let jc = jensen_rate_t(&p, n, trace(&geom), eps).unwrap().value;
        let ju = jensen_rate_t(&p, n, trace_rbar_sq_uncorrelated(n), eps).unwrap().value;
        analytic.push(jc - ju);
    }
    note(
        "C4",
        format!(
            "Jensen-bound gaps at N=15/45/90: {:.4}, {:.4}, {:.4}",
            analytic[0], analytic[1], analytic[2]
        ),
    );
    let pass = (gaps[0] - 0.09).abs() <= 0.03
        && (gaps[2] - 0.02).abs() <= 0.02
        && gaps[0] > gaps[1]
        && gaps[1] > gaps[2];
    report(
        "C4",
        pass,
        format!(
            "MC gaps at N=15/45/90: {:.4}, {:.4}, {:.4} (want 0.09±0.03, decreasing, 0.02±0.02)",
            gaps[0], gaps[1], gaps[2]
        ),
    );
}

#[test]
fn criterion_5_sum_rate_crossover() {
    let geom = half_wave(10, 4);
    let model = PhaseErrorModel::VonMises(2.0);
    let sim = simulator(&geom, model);
    let cfg = McConfig::new(10_000, 5);
    let eps = model.epsilon();
    let mut pass = true;
    let mut parts = Vec::new();
    for (d_r, want) in [(15.0, SumRateVerdict::Noma), (6.0, SumRateVerdict::Oma)] {
        let base = SystemParams {
            d_r,
            ..SystemParams::default()
        };
        let verdict = sum_rate_verdict(&base, eps, eps);
        pass &= verdict == want;
        let mut diffs = Vec::new();
        for snr in [70.0, 80.0, 90.0] {
            let p = base.clone().with_snr_db(snr);
            let noma = sim.noma_pair(&p, &cfg).unwrap().sum;
            let oma = sim.oma_pair(&p, &cfg).unwrap().sum;
            let d = noma.mean - oma.mean;
            let observed = if d > 0.0 { SumRateVerdict::Noma } else { SumRateVerdict::Oma };
            pass &= observed == want;
            diffs.push(format!("{d:+.3}"));
        }
        parts.push(format!("d_r={d_r}: verdict {verdict:?}, NOMA-OMA at 70/80/90 dB {}", diffs.join(" ")));
    }
    report("C5", pass, parts.join("; "));
}

#[test]
fn criterion_6_four_user_limits() {
    let geom = half_wave(10, 4);
    let model = PhaseErrorModel::Quantized(1);
    let sim = simulator(&geom, model);
    let cfg = McConfig::new(20_000, 6);
    let base = SystemParams::four_user_default();
    let tr = trace(&geom);
    let eps = model.epsilon();

    let mut dominated = true;
    let mut last = None;
    for snr in [20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0] {
        let p = base.clone().with_snr_db(snr);
        let est = sim.four_user(&p, &cfg).unwrap();
        let f = LinkFactors::compute(&p, 40, tr, eps, eps).unwrap();
        let (btp, brp) = multiuser_bounds(&p, 40, &f).unwrap();
        dominated &= btp.value >= est.tp.mean - 3.0 * est.tp.half_width;
        dominated &= brp.value >= est.rp.mean - 3.0 * est.rp.half_width;
        last = Some(est);
    }
    let est = last.unwrap();
    let lim = |s| large_snr_limit(&base, s).unwrap().value;

    let free_space = SystemParams {
        chi: 2.0,
        ..base.clone()
    }
    .with_snr_db(90.0);
    let fs = sim.four_user(&free_space, &cfg).unwrap();
    note(
        "C6",
        format!(
            "with chi = 2 instead: R' {:.4}, T' {:.4}, R {:.4}",
            fs.rp.mean, fs.tp.mean, fs.r.mean
        ),
    );
    let checks = [
        ("R'", est.rp.mean, lim(RateScenario::NomaRp)),
        ("T'", est.tp.mean, lim(RateScenario::NomaTp)),
        ("R", est.r.mean, lim(RateScenario::NomaR)),
    ];
    let mut pass = dominated;
    let mut parts = Vec::new();
    for (name, mc, limit) in checks {
        let ok = (mc - limit).abs() <= 0.05;
        pass &= ok;
        parts.push(format!(
            "{name} {mc:.4} vs {limit:.4} ({})",
            if ok { "ok" } else { "off" }
        ));
    }
    report(
        "C6",
        pass,
        format!(
            "90 dB, N=40: {}; bounds dominate MC at every SNR: {dominated}",
            parts.join(", ")
        ),
    );
}

#[test]
fn criterion_7a_cross_moment_oracle() {
    let samples = 10_000_000usize;
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut worst_z: f64 = 0.0;
    for k in 0..10 {
        let rho_sq = 0.05 + 0.1 * k as f64;
        let (rho, c) = (rho_sq.sqrt(), (1.0 - rho_sq).sqrt());
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..samples {
            let z: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
            let (a_re, a_im) = (s * z[0], s * z[1]);
            let (b_re, b_im) = (rho * a_re + c * s * z[2], rho * a_im + c * s * z[3]);
            let x = a_re.hypot(a_im) * b_re.hypot(b_im);
            sum += x;
            sum_sq += x * x;
        }
        let n = samples as f64;
        let mean = sum / n;
        let se = ((sum_sq / n - mean * mean) / n).sqrt();
        worst_z = worst_z.max((mean - cross_moment(rho_sq).unwrap()).abs() / se);
    }
    report(
        "C7a",
        worst_z <= 3.0,
        format!("10 grid points, 1e7 samples each: max |z| = {worst_z:.2} (<= 3)"),
    );
}

#[test]
fn criterion_7b_channel_hardening() {
    let model = PhaseErrorModel::Quantized(1);
    let cfg = McConfig::new(10_000, 72);
    let target = PI * PI * model.epsilon().powi(2) / 16.0;
    let mut vars = Vec::new();
    let mut means = Vec::new();
    for side in [4, 8, 16] {
        let g = simulator(&half_wave(side, side), model)
            .gain_moments(Side::T, &cfg)
            .unwrap();
        vars.push(g.std_dev * g.std_dev);
        means.push(g.mean);
    }
    let rel = (means[2] - target).abs() / target;
    let pass = vars[0] > vars[1] && vars[1] > vars[2] && rel < 0.02;
    report(
        "C7b",
        pass,
        format!(
            "Var[H/N²] at N=16/64/256: {:.3e}, {:.3e}, {:.3e}; mean at 256 off by {:.2}% (< 2%)",
            vars[0],
            vars[1],
            vars[2],
            100.0 * rel
        ),
    );
}

#[test]
fn criterion_7c_jensen_hardening_agree() {
    let p = SystemParams::default();
    let geom = half_wave(32, 32);
    let eps = PhaseErrorModel::Quantized(1).epsilon();
    let j = jensen_rate_t(&p, 1024, trace(&geom), eps).unwrap().value;
    let h = hardening_rate_t(&p, 1024, eps).unwrap().value;
    let rel = (j - h).abs() / h;
    report(
        "C7c",
        rel < 1e-2,
        format!("N=1024, 1-bit: Jensen {j:.5}, hardening {h:.5}, relative gap {rel:.2e} (< 1e-2)"),
    );
}

#[test]
fn criterion_7d_quantization_gain() {
    let f1 = quantization_gain_limit(1);
    let decreasing = (1..8).all(|b| quantization_gain_limit(b + 1) < quantization_gain_limit(b));
    report(
        "C7d",
        (f1 - 1.0).abs() < 1e-12 && decreasing,
        format!(
            "f(1) - 1 = {:.1e}; f(2) = {:.6}; strictly decreasing over b = 1..8: {decreasing}",
            f1 - 1.0,
            quantization_gain_limit(2)
        ),
    );
}

#[test]
fn criterion_7e_csv_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let mut identical = true;
    for (name, _) in BUNDLED_SPECS {
        let mut spec = SweepSpec::bundled(name).unwrap().unwrap();
        spec.trials = 200;
        let paths = [dir.path().join("a.csv"), dir.path().join("b.csv")];
        for path in &paths {
            write_csv(&run_sweep(&spec).unwrap(), path).unwrap();
        }
        identical &= std::fs::read(&paths[0]).unwrap() == std::fs::read(&paths[1]).unwrap();
    }
    report(
        "C7e",
        identical,
        format!("{} bundled specs re-run with a fixed seed: byte-identical = {identical}", BUNDLED_SPECS.len()),
    );
}

#[test]
fn criterion_8_special_functions() {
    let half_pi = PI / 2.0;
    let mut pass = (elliptic_k(0.0).unwrap() - half_pi).abs() < 1e-12
        && (elliptic_e(0.0).unwrap() - half_pi).abs() < 1e-12
        && (elliptic_e(1.0).unwrap() - 1.0).abs() < 1e-12;
    let mut worst: f64 = 0.0;
    for i in 1..100 {
        let m = i as f64 / 100.0;
        let (k, e) = (elliptic_k(m).unwrap(), elliptic_e(m).unwrap());
        let (k1, e1) = (elliptic_k(1.0 - m).unwrap(), elliptic_e(1.0 - m).unwrap());
        worst = worst.max((e * k1 + e1 * k - k * k1 - half_pi).abs());
    }
    pass &= worst < 1e-9;
    let mut monotone = true;
    let mut prev = bessel_i1_i0_ratio(0.0).unwrap();
    for i in 1..=5000 {
        let r = bessel_i1_i0_ratio(i as f64 * 0.01).unwrap();
        monotone &= r > prev && r < 1.0;
        prev = r;
    }
    pass &= monotone;
    report(
        "C8",
        pass,
        format!("K(0), E(0), E(1) exact to 1e-12; Legendre residual {worst:.1e}; I1/I0 increasing on [0, 50]: {monotone}"),
    );
}
