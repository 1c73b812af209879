//! Acceptance suite: one PASS/FAIL line per criterion.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::path::{Path, PathBuf};
use std::process::Command as Process;
use std::time::{Duration, Instant};

use fewphoton::detector::{simulate_acquisition, AcquisitionPlan, DetectorConfig};
use fewphoton::fitting::fit_gaussian;
use fewphoton::heterodyne::{classical_effectiveness_sweep, ClassicalBeatConfig};
use fewphoton::interference::*;
use fewphoton::io::read_spectrum;
use fewphoton::spectral::*;
use fewphoton::wavepacket::*;
use fewphoton_cli::{run, Command, Metadata, RunConfig, RunOptions};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn shipped(name: &str) -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(format!("{name}.toml"));
    RunConfig::load(&path).unwrap()
}

fn run_shipped(name: &str, command: Command, dir: &Path) -> Metadata {
    run(command, &shipped(name), dir, RunOptions::default()).unwrap()
}

fn float(meta: &Metadata, path: &[&str]) -> f64 {
    let mut v = &meta.results[path[0]];
    for key in &path[1..] {
        v = &v[*key];
    }
    v.as_float().unwrap()
}

fn gaussian_pair(df: f64, tau_ref: f64, tau_test: f64) -> SourcePair {
    SourcePair::matched(make_gaussian(0.0, tau_ref).unwrap(), make_gaussian(df, tau_test).unwrap())
}

fn analytic(pair: &SourcePair, span: f64, step: f64) -> Interferogram {
    let n = (span / step).round() as usize + 1;
    analytic_interferogram(pair, &uniform_delays(-0.5 * span, step, n), &pair.default_grid().unwrap()).unwrap()
}

fn fine_grid(packets: &[&WavePacket], span: f64) -> TimeGrid {
    let rate = 8.0 * packets.iter().map(|p| p.bandwidth_edge()).fold(0.0, f64::max);
    TimeGrid::centered(span, (span * rate).ceil() as usize + 1).unwrap()
}

/// RMS of the difference of the two peak-normalised curves over `[lo, hi]`,
/// sampled on the bins of `a`.
fn rms_of_difference(a: &Spectrum, b: &Spectrum, lo: f64, hi: f64) -> f64 {
    let (pa, pb) = (a.peak_value(), b.peak_value());
    let pts: Vec<f64> = a.frequencies().into_iter().filter(|f| (lo..=hi).contains(f)).collect();
    let ss: f64 = pts.iter().map(|&f| (a.interpolate(f) / pa - b.interpolate(f) / pb).powi(2)).sum();
    (ss / pts.len() as f64).sqrt()
}

fn hom_dip() -> Outcome {
    let tau_c = 2e-7;
    let pair = gaussian_pair(0.0, tau_c, tau_c);
    let grid = pair.default_grid().unwrap();
    let p = |tau: f64| coincidence_probability(&pair, tau, &grid).unwrap();
    let plateau = p(50.0 * tau_c);
    let dip = p(0.0) / plateau;
    let rising: Vec<f64> = (0..=100).map(|k| p(k as f64 * 0.05 * tau_c)).collect();
    let monotone = rising.windows(2).all(|w| w[1] >= w[0]);
    let far = (101..=200)
        .flat_map(|k| [k as f64 * 0.05 * tau_c, -(k as f64) * 0.05 * tau_c])
        .map(|t| (p(t) / plateau - 1.0).abs())
        .fold(0.0, f64::max);
    outcome(
        dip < 1e-8 && monotone && far < 1e-2,
        format!("P(0)/plateau = {dip:.2e} (< 1e-8), monotone rise to 5τc: {monotone}, max |P/plateau − 1| beyond 5τc = {far:.2e} (< 1e-2)"),
    )
}

fn visibility_cap() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let meta = run_shipped("fig2", Command::Interferogram, dir.path());
    let va = float(&meta, &["analytic", "visibility"]);
    let vc = float(&meta, &["counts", "visibility"]);
    let sc = float(&meta, &["counts", "visibility_std"]);
    let vm = float(&meta, &["detector_model", "visibility"]);
    let z = (vc - 0.5).abs() / sc;
    outcome(
        (va - 0.5).abs() <= 0.005 && z <= 3.0,
        format!("analytic V = {va:.4} (0.500 ± 0.005); Monte Carlo V = {vc:.4} ± {sc:.4}, {z:.2}σ from 0.5 (≤ 3σ); detector-model V = {vm:.4}"),
    )
}

/// `|φ_test ∗ φ_ref|²` by direct summation over the amplitude spectra.
fn direct_convolution(p: &SourcePair, grid: &TimeGrid) -> Spectrum {
    let (_, df, a_t) = amplitude_spectrum_of(&p.test, grid).unwrap();
    let (_, _, a_r) = amplitude_spectrum_of(&p.reference, grid).unwrap();
    let peak_t = a_t.iter().map(|a| a.norm()).fold(0.0, f64::max);
    let peak_r = a_r.iter().map(|a| a.norm()).fold(0.0, f64::max);
    let sig_t: Vec<usize> = (0..a_t.len()).filter(|&j| a_t[j].norm() > 1e-7 * peak_t).collect();
    let sig_r: Vec<usize> = (0..a_r.len()).filter(|&j| a_r[j].norm() > 1e-7 * peak_r).collect();
    let n = a_t.len() as i64;
    let lo = sig_t[0] as i64 - *sig_r.last().unwrap() as i64;
    let hi = *sig_t.last().unwrap() as i64 - sig_r[0] as i64;
    let values = (lo..=hi)
        .map(|m| {
            let z: Complex64 = sig_t
                .iter()
                .filter_map(|&j| {
                    let r = j as i64 - m;
                    (0..n).contains(&r).then(|| a_t[j] * a_r[r as usize].conj())
                })
                .sum();
            (z * df).norm_sqr()
        })
        .collect();
    Spectrum::new(lo as f64 * df, df, values).unwrap()
}

fn convolution_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let tau_r = rng.random_range(1.2e-7..3e-7);
        let tau_t = rng.random_range(1.2e-7..3e-7);
        let df = rng.random_range(20e6..150e6);
        let p = gaussian_pair(df, tau_r, tau_t);
        // 1 ns delay step: Nyquist at 500 MHz, well above the largest beat
        let r = fts_transform(&analytic(&p, 4e-6, 1e-9), Window::Rectangular).unwrap();
        let oracle = direct_convolution(&p, &fine_grid(&[&p.reference, &p.test], 12e-6));
        let w = oracle.rms_width();
        worst = worst.max(rms_of_difference(&r.beat_spectrum, &oracle, df - 4.0 * w, df + 4.0 * w));
    }
    outcome(worst < 0.01, format!("worst normalised RMS over 5 random pairs = {:.3}% (< 1%)", 100.0 * worst))
}

fn beat_sweep() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let meta = run_shipped("fig3a", Command::Fts, dir.path());
    let mut worst = (0.0, 0.0);
    let mut all = true;
    for f in [10, 20, 40, 80, 120, 160, 200] {
        let key = format!("{f}MHz");
        let err = float(&meta, &[&key, "peak_error_bins"]);
        all &= err <= 1.0;
        if err > worst.1 {
            worst = (f as f64, err);
        }
    }
    let bin = float(&meta, &["40MHz", "bin_width"]);
    outcome(
        all,
        format!(
            "counted interferograms, 10–200 MHz: worst peak error {:.2} bin ({:.1} kHz bins) at {} MHz (≤ 1 bin)",
            worst.1,
            bin / 1e3,
            worst.0
        ),
    )
}

fn load(dir: &Path, name: &str) -> Spectrum {
    read_spectrum(std::io::BufReader::new(std::fs::File::open(dir.join(name)).unwrap())).unwrap()
}

fn broadening() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let meta = run_shipped("fig3b", Command::Fts, dir.path());
    let on = load(dir.path(), "60MHz_modulated_fts_test.csv");
    let truth = load(dir.path(), "60MHz_modulated_test_truth.csv");
    // a sideband comb is not one Gaussian: compare the measured 1/e widths
    let w_on = float(&meta, &["60MHz_modulated", "test_width_1e"]);
    let w_off = float(&meta, &["60MHz_unmodulated", "test_width_1e"]);
    let w_true = float(&meta, &["60MHz_modulated", "true_test_width_1e"]);
    let rms = rms_of_difference(&on, &truth, -45e6, 45e6);
    let h_on = float(&meta, &["60MHz_modulated", "coherence_halfwidth"]);
    let h_off = float(&meta, &["60MHz_unmodulated", "coherence_halfwidth"]);
    outcome(
        w_on > w_off && rms < 0.05 && h_on < h_off,
        format!(
            "1/e width {:.2} MHz modulated (true {:.2}) vs {:.2} MHz plain; RMS vs true modulated spectrum {:.2}% of peak (< 5%); \
             coherence half-width {:.0} ns vs {:.0} ns",
            w_on / 1e6,
            w_true / 1e6,
            w_off / 1e6,
            100.0 * rms,
            h_on * 1e9,
            h_off * 1e9
        ),
    )
}

fn deconvolution_identity() -> Outcome {
    let p = gaussian_pair(40e6, 2e-7, 1e-7);
    let r = fts_transform(&analytic(&p, 4e-6, 5e-10), Window::Rectangular).unwrap();
    let reference = spectrum_of(&p.reference, &fine_grid(&[&p.reference], 24e-6)).unwrap();
    let d = deconvolve_reference(&r, &reference, 1e-8).unwrap();
    let test = d.test_spectrum.as_ref().unwrap();
    let sigma = |s: &Spectrum| fit_gaussian(&s.frequencies(), &s.values).unwrap().sigma.abs();
    let (w_b, w_r, w_t) = (sigma(&r.beat_spectrum), sigma(&reference), sigma(test));
    let expected = (w_b * w_b - w_r * w_r).sqrt();
    let width_err = (w_t / expected - 1.0).abs();
    let back = convolve_with_reference(test, &reference);
    let beat = r.beat_spectrum.normalized_area();
    let rms = (back.values.iter().zip(&beat.values).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / beat.len() as f64)
        .sqrt()
        / beat.peak_value();
    outcome(
        width_err < 0.05 && rms < 1e-3,
        format!(
            "recovered σ {:.1} kHz vs √(w_b² − w_r²) = {:.1} kHz ({:.2}%, < 5%); re-convolution RMS {:.1e} of peak (< 1e-3)",
            w_t / 1e3,
            expected / 1e3,
            100.0 * width_err,
            rms
        ),
    )
}

fn ambiguity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let plan = AcquisitionPlan::default();
    let mut correct = 0;
    let mut notes = Vec::new();
    for trial in 0..20u64 {
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let detuning = sign * rng.random_range(20e6..150e6);
        let shift = rng.random_range(5e6..15e6);
        let test = make_gaussian(detuning, 2e-7).unwrap();
        let a = SourcePair::matched(make_gaussian(0.0, 2e-7).unwrap(), test);
        let b = SourcePair::matched(make_gaussian(shift, 2e-7).unwrap(), test);
        let det = |seed| DetectorConfig {
            rng_seed: seed,
            ..Default::default()
        };
        let ra = fts_transform(&simulate_acquisition(&a, &det(2 * trial), &plan).unwrap(), Window::Hann).unwrap();
        let rb = fts_transform(&simulate_acquisition(&b, &det(2 * trial + 1), &plan).unwrap(), Window::Hann).unwrap();
        match resolve_ambiguity(&ra, &rb, shift) {
            Ok(signed) if signed.signum() == detuning.signum() => correct += 1,
            Ok(signed) => notes.push(format!("{:.1} MHz read as {:.1} MHz", detuning / 1e6, signed / 1e6)),
            Err(e) => notes.push(format!("{:.1} MHz: {e}", detuning / 1e6)),
        }
    }
    let mut detail = format!("{correct}/20 signs correct (20/20 required)");
    if !notes.is_empty() {
        detail.push_str(&format!("; {}", notes.join("; ")));
    }
    outcome(correct == 20, detail)
}

fn model_curves() -> Outcome {
    let v = |r: f64| visibility_from_ratio(r).unwrap();
    let vp = |t: f64| v(ratio_from_polarization(t).unwrap());
    let endpoints = v(1.0) == 0.5 && v(0.0) == 0.0 && vp(0.0) == 0.5 && vp(FRAC_PI_2) == 0.0;
    let ratios: Vec<f64> = (0..=100).map(|k| k as f64 / 100.0).collect();
    let rising = ratios.windows(2).all(|w| v(w[1]) > v(w[0]));
    let falling_beyond = (0..100).all(|k| v(1.0 + 0.1 * (k + 1) as f64) < v(1.0 + 0.1 * k as f64));
    let angles: Vec<f64> = (0..=90).map(|k| FRAC_PI_2 * k as f64 / 90.0).collect();
    let decreasing = angles.windows(2).all(|w| vp(w[1]) < vp(w[0]));
    let dir = tempfile::tempdir().unwrap();
    let meta = run_shipped("fig1b", Command::VisibilityCurves, dir.path());
    let cli_peak = float(&meta, &["peak_ratio"]) == 1.0 && float(&meta, &["peak_visibility"]) == 0.5;
    outcome(
        endpoints && rising && falling_beyond && decreasing && cli_peak,
        format!(
            "V(1) = {}, V(θ = π/2) = {}; V(R) rising on [0, 1]: {rising}, falling beyond 1: {falling_beyond}; \
             V(θ) decreasing: {decreasing}; shipped curve peaks at (1, 0.5): {cli_peak}",
            v(1.0),
            vp(FRAC_PI_2)
        ),
    )
}

fn read_table(path: &Path) -> Vec<Vec<f64>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

fn effectiveness() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    run_shipped("fig4", Command::Effectiveness, dir.path());
    let fts = read_table(&dir.path().join("effectiveness_fts.csv"));
    let classical = read_table(&dir.path().join("effectiveness_classical.csv"));
    let row = |mu: f64| fts.iter().find(|r| r[0] == mu).unwrap().clone();
    let (a, b, c) = (row(0.2), row(2.0), row(10.0));
    let sep = |x: &[f64], y: &[f64]| (x[1] - y[1]) / x[2].hypot(y[2]);
    let (s1, s2) = (sep(&a, &b), sep(&b, &c));
    let ordered = s1 > 3.0 && s2 > 3.0;

    let pair = gaussian_pair(40e6, 2e-7, 2e-7);
    // four decades through the transition; below μ ≈ 0.1 the line is gone
    // and R² only jitters at the level of a fit to pure noise
    let ladder: Vec<f64> = (0..=16).map(|k| 0.1 * 10f64.powf(k as f64 / 4.0)).collect();
    let rows = classical_effectiveness_sweep(&pair, &ClassicalBeatConfig::default(), &ladder, 1547.32e-9, 4e-9).unwrap();
    let non_increasing = rows.windows(2).all(|w| w[0].r_squared <= w[1].r_squared);
    let floor: Vec<f64> = classical.iter().filter(|r| r[0] < 0.1).map(|r| r[1]).collect();
    let jitter = floor.iter().copied().fold(f64::NEG_INFINITY, f64::max) - floor.iter().copied().fold(f64::INFINITY, f64::min);

    // μ where the analyser fails but the interferogram still shows fringes
    let fts_wins: Vec<f64> = classical
        .iter()
        .zip(&fts)
        .filter(|(cl, q)| cl[1] < 0.5 && q[1] > 3.0 * q[2])
        .map(|(cl, _)| cl[0])
        .collect();
    let classical_wins = classical.iter().any(|cl| cl[1] > 0.9);
    let crossover = !fts_wins.is_empty() && classical_wins;
    outcome(
        ordered && non_increasing && crossover,
        format!(
            "V(0.2) = {:.3} ± {:.3}, V(2) = {:.3} ± {:.3}, V(10) = {:.3} ± {:.3} (gaps {s1:.1}σ, {s2:.1}σ > 3σ); \
             classical R² non-increasing as μ falls 1000 → 0.1: {non_increasing} \
             (noise-only R² below μ = 0.1 spans {jitter:.1e}); \
             FTS preferred at μ ≤ {:.3} (R² < 0.5, V > 3σ), analyser R² > 0.9 above",
            a[1],
            a[2],
            b[1],
            b[2],
            c[1],
            c[2],
            fts_wins.iter().copied().fold(f64::NAN, f64::max)
        ),
    )
}

fn power_conversion() -> Outcome {
    // CODATA product hc, independent of the library's separate constants
    let hc = 1.986_445_857e-25;
    let (lambda, gate) = (1547.32e-9, 4e-9);
    let mut worst: f64 = 0.0;
    for mu in [1e-6, 4.9e-5, 0.2, 1.0, 10.0] {
        let p = photon_flux_to_power(mu, lambda, gate).unwrap();
        worst = worst.max((p.power_watts / (mu * hc / (lambda * gate)) - 1.0).abs());
    }
    let mu = power_dbm_to_mu(-118.0, lambda, gate);
    let mu_ind = 1e-3 * 10f64.powf(-11.8) * lambda * gate / hc;
    worst = worst.max((mu / mu_ind - 1.0).abs());
    let back = photon_flux_to_power(mu, lambda, gate).unwrap().power_dbm;
    let anchor = (mu - 4.9e-5).abs() < 0.05e-5 && (back + 118.0).abs() < 1e-9;
    outcome(
        worst < 5e-7 && anchor,
        format!("max relative deviation {worst:.1e} (< 5e-7, 6 s.f.); −118 dBm ↔ μ = {mu:.4e} (≈ 4.9e-5), back to {back:.6} dBm"),
    )
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

fn determinism() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut mismatches = Vec::new();
    let mut files = 0;
    for (name, cmd) in [("fig2", "interferogram"), ("fig3b", "fts"), ("fig1b", "visibility-curves")] {
        let outs: Vec<PathBuf> = [1, 4, 4]
            .iter()
            .enumerate()
            .map(|(k, threads)| {
                let out = root.path().join(format!("{name}_{k}"));
                let status = Process::new(env!("CARGO_BIN_EXE_fewphoton"))
                    .arg(cmd)
                    .arg("--config")
                    .arg(configs.join(format!("{name}.toml")))
                    .arg("--out")
                    .arg(&out)
                    .env("RAYON_NUM_THREADS", threads.to_string())
                    .status()
                    .unwrap();
                assert!(status.success(), "{name} failed");
                out
            })
            .collect();
        let first = snapshot(&outs[0]);
        files += first.len();
        for other in &outs[1..] {
            if snapshot(other) != first {
                mismatches.push(name);
            }
        }
    }
    outcome(
        mismatches.is_empty(),
        format!(
            "{files} files from 3 commands, byte-identical across 1- and 4-thread repeats{}",
            if mismatches.is_empty() { String::new() } else { format!("; differing: {mismatches:?}") }
        ),
    )
}

fn main() {
    let criteria: [(&str, Duration, fn() -> Outcome); 11] = [
        ("HOM dip correctness", Duration::from_secs(1), hom_dip),
        ("visibility cap", Duration::from_secs(60), visibility_cap),
        ("transform equals amplitude convolution", Duration::from_secs(10), convolution_round_trip),
        ("beat-frequency sweep", Duration::from_secs(300), beat_sweep),
        ("spectral broadening", Duration::from_secs(60), broadening),
        ("deconvolution identity", Duration::from_secs(10), deconvolution_identity),
        ("ambiguity resolution", Duration::from_secs(120), ambiguity),
        ("visibility model curves", Duration::from_secs(1), model_curves),
        ("effectiveness ordering", Duration::from_secs(600), effectiveness),
        ("power conversion", Duration::from_secs(1), power_conversion),
        ("determinism", Duration::from_secs(60), determinism),
    ];
    let mut failed = 0;
    for (k, (name, budget, check)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let result = std::panic::catch_unwind(check);
        let elapsed = start.elapsed();
        let (pass, detail) = match result {
            Ok(o) => (o.pass && elapsed <= budget, o.detail),
            Err(_) => (false, "panicked".to_string()),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "{} {:>2}. {name}: {detail} [{:.2} s, budget {} s]",
            if pass { "PASS" } else { "FAIL" },
            k + 1,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!("{} of 11 criteria passed", 11 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
