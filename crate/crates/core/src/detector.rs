//! Gated Geiger-mode acquisition of the two-photon interferogram.
//!
//! Detector A triggers detector B, so every B click is a coincidence. Each
//! gate is one Bernoulli trial. Inside a gate the two weak coherent states
//! have a uniformly random relative phase φ, and the mean photon numbers
//! reaching the two detectors are
//!
//! ```text
//! I_A = (μ_ref + μ_test)/2 + a cos φ
//! I_B = (μ_ref + μ_test)/2 - a cos(φ + ψ)
//! ```
//!
//! with `a² = μ_ref μ_test · k_pol · |c(τ)|` and `ψ = arg c(τ)`, where `c` is
//! the normalised exchange term of the interference model. A threshold
//! detector clicks with probability `1 - (1 - p_dark) exp(-η I)`; the gate
//! coincidence probability is the phase average of the product of the two
//! click probabilities. At small μ this reduces to the analytic curve with
//! its 50% visibility cap; the exponential saturation pulls the visibility
//! down as μ approaches the detector limit.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fitting::{levenberg_marquardt, LmOptions};
use crate::interference::{
    exchange_terms, fringe_scale, uniform_step, Interferogram, InterferogramKind, SourcePair,
};

/// Single-photon avalanche diode settings, shared by both detectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub efficiency: f64,
    /// Gate width in seconds.
    pub gate_width: f64,
    /// Dark count probability per gate.
    pub dark_count_prob: f64,
    pub gates_per_point: u64,
    pub rng_seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            efficiency: 0.15,
            gate_width: 4e-9,
            dark_count_prob: 1e-5,
            gates_per_point: 100_000,
            rng_seed: 0,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(invalid("efficiency", format!("must lie in [0, 1], got {}", self.efficiency)));
        }
        if !(0.0..=1.0).contains(&self.dark_count_prob) {
            return Err(invalid(
                "dark_count_prob",
                format!("must lie in [0, 1], got {}", self.dark_count_prob),
            ));
        }
        if !(self.gate_width > 0.0) || !self.gate_width.is_finite() {
            return Err(invalid("gate_width", format!("must be positive, got {}", self.gate_width)));
        }
        if self.gates_per_point == 0 {
            return Err(invalid("gates_per_point", "must be at least 1"));
        }
        Ok(())
    }

    /// Click probability for a mean of `photons` photons in the gate.
    pub fn click_probability(&self, photons: f64) -> f64 {
        1.0 - (1.0 - self.dark_count_prob) * (-self.efficiency * photons).exp()
    }
}

/// Photon numbers and the relative-delay sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionPlan {
    /// Mean reference photons per gate.
    pub mu_ref: f64,
    /// Mean test photons per gate.
    pub mu_test: f64,
    pub delay_start: f64,
    pub delay_step: f64,
    pub delay_count: usize,
}

impl Default for AcquisitionPlan {
    fn default() -> Self {
        AcquisitionPlan {
            mu_ref: 0.2,
            mu_test: 0.2,
            delay_start: -2e-6,
            delay_step: 500e-12,
            delay_count: 8001,
        }
    }
}

impl AcquisitionPlan {
    pub fn validate(&self) -> Result<()> {
        for (name, mu) in [("mu_ref", self.mu_ref), ("mu_test", self.mu_test)] {
            if !(mu >= 0.0) || !mu.is_finite() {
                return Err(invalid(name, format!("must be finite and non-negative, got {mu}")));
            }
        }
        if !(self.delay_step > 0.0) {
            return Err(invalid("delay_step", format!("must be positive, got {}", self.delay_step)));
        }
        if self.delay_count < 2 {
            return Err(invalid("delay_count", "need at least two delays"));
        }
        Ok(())
    }

    pub fn delays(&self) -> Vec<f64> {
        crate::interference::uniform_delays(self.delay_start, self.delay_step, self.delay_count)
    }

    pub fn with_mu(self, mu: f64) -> Self {
        AcquisitionPlan {
            mu_ref: mu,
            mu_test: mu,
            ..self
        }
    }
}

const PHASE_SAMPLES: usize = 64;

/// Per-gate coincidence probability for a normalised exchange term `c`
/// (|c| ≤ 1) and polarization fringe scale `k_pol`.
pub fn gate_coincidence_probability(
    det: &DetectorConfig,
    mu_ref: f64,
    mu_test: f64,
    exchange: Complex64,
    k_pol: f64,
) -> f64 {
    let mean = 0.5 * (mu_ref + mu_test);
    let a = (mu_ref * mu_test * k_pol * exchange.norm().min(1.0)).sqrt();
    let psi = exchange.arg();
    // periodic trapezoid rule: spectrally accurate for smooth phase averages
    (0..PHASE_SAMPLES)
        .map(|j| {
            let phi = 2.0 * PI * j as f64 / PHASE_SAMPLES as f64;
            let ia = (mean + a * phi.cos()).max(0.0);
            let ib = (mean - a * (phi + psi).cos()).max(0.0);
            det.click_probability(ia) * det.click_probability(ib)
        })
        .sum::<f64>()
        / PHASE_SAMPLES as f64
}

/// Gate coincidence probability at every delay of `plan`.
pub fn expected_coincidences(
    pair: &SourcePair,
    det: &DetectorConfig,
    plan: &AcquisitionPlan,
) -> Result<Vec<f64>> {
    det.validate()?;
    plan.validate()?;
    let grid = pair.default_grid()?;
    let delays = plan.delays();
    let exchange = exchange_terms(pair, &delays, &grid)?;
    let norm = exchange_terms(pair, &[0.0], &grid)?[0].norm();
    let k_pol = fringe_scale(ratio_of(plan), pair.polarization_angle);
    let mean = 0.5 * (plan.mu_ref + plan.mu_test);
    let single = det.click_probability(mean);
    if single > 1.0 - 1e-3 {
        return Err(Error::ModelOverflow {
            detail: format!("detectors saturated: click probability {single:.5} per gate at mu = {mean}"),
        });
    }
    let probability: Vec<f64> = exchange
        .par_iter()
        .map(|c| gate_coincidence_probability(det, plan.mu_ref, plan.mu_test, c / norm, k_pol))
        .collect();
    if let Some(p) = probability.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::ModelOverflow {
            detail: format!("coincidence probability {p} outside [0, 1]"),
        });
    }
    Ok(probability)
}

fn ratio_of(plan: &AcquisitionPlan) -> f64 {
    if plan.mu_ref > 0.0 {
        plan.mu_test / plan.mu_ref
    } else {
        0.0
    }
}

/// Counted interferogram. The photon numbers come from `plan`; the pair's
/// own `intensity_ratio` is not used here.
///
/// Each delay draws from its own ChaCha stream keyed by the delay index, so
/// the counts do not depend on thread scheduling.
pub fn simulate_acquisition(
    pair: &SourcePair,
    det: &DetectorConfig,
    plan: &AcquisitionPlan,
) -> Result<Interferogram> {
    let probability = expected_coincidences(pair, det, plan)?;
    let gates = det.gates_per_point;
    let counts: Vec<u64> = probability
        .par_iter()
        .enumerate()
        .map(|(k, &p)| {
            let mut rng = ChaCha8Rng::seed_from_u64(det.rng_seed);
            rng.set_stream(k as u64);
            Binomial::new(gates, p)
                .expect("probability checked to lie in [0, 1]")
                .sample(&mut rng)
        })
        .collect();
    let plateau = gate_coincidence_probability(det, plan.mu_ref, plan.mu_test, Complex64::new(0.0, 0.0), 0.0);

    let mut metadata = BTreeMap::new();
    metadata.insert("kind".into(), "counts".into());
    metadata.insert("detuning_hz".into(), pair.detuning().to_string());
    metadata.insert("mu_ref".into(), plan.mu_ref.to_string());
    metadata.insert("mu_test".into(), plan.mu_test.to_string());
    metadata.insert("efficiency".into(), det.efficiency.to_string());
    metadata.insert("gate_width_s".into(), det.gate_width.to_string());
    metadata.insert("dark_count_prob".into(), det.dark_count_prob.to_string());
    metadata.insert("gates_per_point".into(), gates.to_string());
    metadata.insert("rng_seed".into(), det.rng_seed.to_string());

    Ok(Interferogram {
        delays: plan.delays(),
        kind: InterferogramKind::Counts,
        probability,
        counts,
        gates: vec![gates; plan.delay_count],
        plateau: Some(plateau),
        metadata,
    })
}

/// Result of fitting `plateau · [1 - V · exp(-τ²/(2σ²)) · cos(2π f τ)]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisibilityFit {
    pub visibility: f64,
    pub visibility_std: f64,
    pub beat_frequency: f64,
    pub plateau: f64,
    /// σ of the Gaussian coherence envelope, seconds.
    pub envelope_width: f64,
}

fn edge_mean(signal: &[f64]) -> f64 {
    let n = signal.len();
    let edge = (n / 10).max(1);
    let sum: f64 = signal[..edge].iter().chain(&signal[n - edge..]).sum();
    sum / (2 * edge) as f64
}

/// Frequency of the strongest line in the zero-padded spectrum of `ac`.
///
/// At high flux the coherence region carries a slow pedestal besides the
/// fringes, and its lobe around DC can outweigh the beat line. Bins within
/// three standard deviations of that lobe (for an envelope of width
/// `sigma`) are skipped when a separate peak stands clearly above the
/// median level beyond them.
fn dominant_frequency(ac: &[f64], step: f64, sigma: f64) -> f64 {
    let n = (4 * ac.len()).next_power_of_two();
    let mut buf: Vec<Complex64> = ac.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(n, Complex64::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let power: Vec<f64> = buf[..=n / 2].iter().map(|c| c.norm_sqr()).collect();
    let argmax = |from: usize| {
        (from..power.len())
            .max_by(|&a, &b| power[a].total_cmp(&power[b]))
            .unwrap_or(0)
    };
    let df = 1.0 / (n as f64 * step);
    let lobe = ((3.0 / (2.0 * PI * sigma) / df).ceil() as usize).min(power.len() - 1);
    let beyond = argmax(lobe);
    let mut tail = power[lobe..].to_vec();
    tail.sort_by(f64::total_cmp);
    let median = tail[tail.len() / 2];
    let k = if beyond > lobe && power[beyond] > 50.0 * median {
        beyond
    } else {
        argmax(0)
    };
    k as f64 * df
}

/// Least-squares visibility fit with a Gaussian coherence envelope.
pub fn fit_visibility(ig: &Interferogram) -> Result<VisibilityFit> {
    ig.validate()?;
    let step = uniform_step(&ig.delays)?;
    if ig.len() < 10 {
        return Err(Error::InvalidInput("visibility fit needs at least 10 delays".into()));
    }
    let y = ig.signal();
    let plateau0 = edge_mean(&y);
    if !(plateau0 > 0.0) {
        return Err(Error::DegenerateInput("no coincidences at the interferogram edges".into()));
    }
    let center = 0.5 * (ig.delays[0] + ig.delays[ig.len() - 1]);
    let ac: Vec<f64> = y.iter().map(|v| plateau0 - v).collect();
    let weight: f64 = ac.iter().map(|v| v.abs()).sum();
    let sigma0 = (ac
        .iter()
        .zip(&ig.delays)
        .map(|(a, t)| a.abs() * (t - center).powi(2))
        .sum::<f64>()
        / weight)
        .sqrt()
        .max(step);

    let f0 = dominant_frequency(&ac, step, sigma0);

    // work in units of sigma0 and plateau0
    let x: Vec<f64> = ig.delays.iter().map(|t| (t - center) / sigma0).collect();
    let ys: Vec<f64> = y.iter().map(|v| v / plateau0).collect();
    let fx = f0 * sigma0;

    // linear sub-problem with the envelope and frequency held at their guesses
    let basis: Vec<f64> = x
        .iter()
        .map(|&xi| (-0.5 * xi * xi).exp() * (2.0 * PI * fx * xi).cos())
        .collect();
    let lin = linear_visibility(&ys, &basis);
    if !(lin.amplitude.abs() > 3.0 * lin.amplitude_std) {
        return Ok(VisibilityFit {
            visibility: (lin.amplitude / lin.plateau).clamp(0.0, 1.0),
            visibility_std: lin.visibility_std,
            beat_frequency: f0,
            plateau: lin.plateau * plateau0,
            envelope_width: sigma0,
        });
    }

    let model = |p: &[f64], xi: f64| {
        p[0] * (1.0 - p[1] * (-0.5 * (xi / p[2]).powi(2)).exp() * (2.0 * PI * p[3] * xi).cos())
    };
    let v0 = lin.amplitude / lin.plateau;
    let fit = levenberg_marquardt(model, &x, &ys, &[lin.plateau, v0, 1.0, fx], LmOptions::default())?;
    let p = &fit.params;
    Ok(VisibilityFit {
        visibility: p[1].clamp(0.0, 1.0),
        visibility_std: fit.std_error(1),
        beat_frequency: p[3].abs() / sigma0,
        plateau: p[0] * plateau0,
        envelope_width: p[2].abs() * sigma0,
    })
}

struct LinearVisibility {
    plateau: f64,
    amplitude: f64,
    amplitude_std: f64,
    visibility_std: f64,
}

/// Least squares for `y = p - a·b` with its delta-method visibility error.
fn linear_visibility(y: &[f64], b: &[f64]) -> LinearVisibility {
    let n = y.len() as f64;
    let sb: f64 = b.iter().sum();
    let sbb: f64 = b.iter().map(|v| v * v).sum();
    let sy: f64 = y.iter().sum();
    let sby: f64 = b.iter().zip(y).map(|(b, y)| b * y).sum();
    // columns [1, -b]
    let det = n * sbb - sb * sb;
    if det.abs() < 1e-300 {
        let plateau = sy / n;
        return LinearVisibility {
            plateau,
            amplitude: 0.0,
            amplitude_std: 0.0,
            visibility_std: 0.0,
        };
    }
    let plateau = (sbb * sy - sb * sby) / det;
    let amplitude = (sb * sy - n * sby) / det;
    let rss: f64 = y
        .iter()
        .zip(b)
        .map(|(y, b)| (y - plateau + amplitude * b).powi(2))
        .sum();
    let s2 = rss / (n - 2.0);
    let var_p = s2 * sbb / det;
    let var_a = s2 * n / det;
    let cov_pa = s2 * sb / det;
    let v = amplitude / plateau;
    let var_v = (var_a - 2.0 * v * cov_pa + v * v * var_p) / (plateau * plateau);
    LinearVisibility {
        plateau,
        amplitude,
        amplitude_std: var_a.sqrt(),
        visibility_std: var_v.max(0.0).sqrt(),
    }
}

/// One row of the visibility-versus-μ table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectivenessRow {
    pub mu: f64,
    pub visibility: f64,
    pub visibility_std: f64,
}

/// Seed for sweep point `index`, decorrelated from neighbouring seeds.
pub fn substream_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Visibility against μ with `μ_ref = μ_test = μ` at every point.
pub fn effectiveness_sweep(
    pair: &SourcePair,
    det: &DetectorConfig,
    mu_values: &[f64],
    plan_template: &AcquisitionPlan,
) -> Result<Vec<EffectivenessRow>> {
    if mu_values.is_empty() {
        return Err(invalid("mu_values", "need at least one value"));
    }
    if mu_values.iter().any(|&m| !(m > 0.0) || !m.is_finite()) {
        return Err(invalid("mu_values", "values must be positive and finite"));
    }
    if mu_values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("mu_values", "values must be strictly ascending"));
    }
    mu_values
        .iter()
        .enumerate()
        .map(|(i, &mu)| {
            let det_i = DetectorConfig {
                rng_seed: substream_seed(det.rng_seed, i as u64),
                ..*det
            };
            let ig = simulate_acquisition(pair, &det_i, &plan_template.with_mu(mu))?;
            let fit = fit_visibility(&ig)?;
            Ok(EffectivenessRow {
                mu,
                visibility: fit.visibility,
                visibility_std: fit.visibility_std,
            })
        })
        .collect()
}
