//! Classical heterodyne baseline: the beat note of two bright beams on a
//! linear photodiode, as displayed by an electrical spectrum analyser.
//!
//! The trace is modelled at lineshape level. The beat line is the same
//! convolution the few-photon method recovers, scaled by `P_ref·P_test`,
//! on top of a flat electrical floor and a RIN pedestal. Averaged
//! analyser noise is Gamma distributed around the pedestal.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fitting::fit_gaussian;
use crate::interference::SourcePair;
use crate::spectral::{beat_grid, beat_lineshape, fold_to_positive, photon_flux_to_power};
use crate::wavepacket::Spectrum;

/// +13 dBm, the photodiode saturation limit on the local oscillator.
pub const MAX_P_REF: f64 = 19.952_623_149_688_797e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassicalBeatConfig {
    /// Local-oscillator power, W. Clamped to [`MAX_P_REF`].
    pub p_ref: f64,
    /// Test power, W.
    pub p_test: f64,
    /// Flat electrical noise density, arbitrary units per Hz.
    pub noise_floor: f64,
    /// RIN pedestal scale, multiplies `p_ref² + p_test²`.
    pub rin_level: f64,
    /// Analyser span from DC, Hz.
    pub esa_span: f64,
    pub esa_points: usize,
    /// Number of averaged analyser sweeps.
    pub averages: u32,
    pub seed: u64,
}

impl Default for ClassicalBeatConfig {
    fn default() -> Self {
        // floor chosen so the line of a ~200 ns coherence-time pair sinks
        // into the noise between nanowatt and picowatt test powers
        ClassicalBeatConfig {
            p_ref: MAX_P_REF,
            p_test: 1e-9,
            noise_floor: 9e-20,
            rin_level: 1e-17,
            esa_span: 250e6,
            esa_points: 2001,
            averages: 16,
            seed: 0,
        }
    }
}

impl ClassicalBeatConfig {
    pub fn validate(&self) -> Result<()> {
        let non_negative = [
            ("p_ref", self.p_ref),
            ("p_test", self.p_test),
            ("noise_floor", self.noise_floor),
            ("rin_level", self.rin_level),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(invalid(name, format!("must be non-negative and finite, got {v}")));
            }
        }
        if !(self.esa_span > 0.0) || !self.esa_span.is_finite() {
            return Err(invalid("esa_span", format!("must be positive, got {}", self.esa_span)));
        }
        if self.esa_points < 16 {
            return Err(invalid("esa_points", format!("need at least 16, got {}", self.esa_points)));
        }
        if self.averages == 0 {
            return Err(invalid("averages", "need at least one sweep"));
        }
        Ok(())
    }

    /// `p_ref` after the saturation clamp.
    pub fn effective_p_ref(&self) -> f64 {
        if self.p_ref > MAX_P_REF {
            log::warn!("p_ref {:.4e} W exceeds +13 dBm; clamping", self.p_ref);
        }
        self.p_ref.min(MAX_P_REF)
    }

    pub fn with_p_test(self, p_test: f64) -> Self {
        ClassicalBeatConfig { p_test, ..self }
    }

    /// Flat floor plus RIN, per bin.
    pub fn pedestal(&self) -> f64 {
        let p_ref = self.effective_p_ref();
        self.noise_floor + self.rin_level * (p_ref * p_ref + self.p_test * self.p_test)
    }

    fn frequency_step(&self) -> f64 {
        self.esa_span / (self.esa_points - 1) as f64
    }
}

/// `I = I₁ + I₂ + 2√(I₁I₂)|g₁₂| cos φ`.
pub fn classical_intensity(i1: f64, i2: f64, g12: f64, phi: f64) -> Result<f64> {
    if !(i1 >= 0.0) {
        return Err(invalid("i1", format!("must be non-negative, got {i1}")));
    }
    if !(i2 >= 0.0) {
        return Err(invalid("i2", format!("must be non-negative, got {i2}")));
    }
    if !(g12.abs() <= 1.0) {
        return Err(invalid("g12", format!("|g12| must not exceed 1, got {g12}")));
    }
    Ok(i1 + i2 + 2.0 * (i1 * i2).sqrt() * g12.abs() * phi.cos())
}

fn check_span(pair: &SourcePair, cfg: &ClassicalBeatConfig) -> Result<()> {
    let beat = pair.detuning().abs();
    if beat > cfg.esa_span {
        return Err(Error::OutOfSpan {
            beat,
            span: cfg.esa_span,
        });
    }
    Ok(())
}

/// Beat lineshape folded onto the analyser grid, unit area.
pub fn esa_lineshape(pair: &SourcePair, cfg: &ClassicalBeatConfig) -> Result<Spectrum> {
    cfg.validate()?;
    check_span(pair, cfg)?;
    let line = beat_lineshape(pair, &beat_grid(pair)?)?;
    Ok(fold_to_positive(&line, 0.0, cfg.frequency_step(), cfg.esa_points))
}

fn render(line: &Spectrum, cfg: &ClassicalBeatConfig) -> Result<Spectrum> {
    let scale = cfg.effective_p_ref() * cfg.p_test;
    let pedestal = cfg.pedestal();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gamma = Gamma::new(f64::from(cfg.averages), 1.0 / f64::from(cfg.averages))
        .map_err(|e| invalid("averages", e.to_string()))?;
    let values = line
        .values
        .iter()
        .map(|&l| {
            // always draw, so the realization depends on the seed alone
            let x = gamma.sample(&mut rng);
            scale * l + pedestal * x
        })
        .collect();
    Spectrum::new(line.f_start, line.f_step, values)
}

/// Averaged analyser trace from DC to `esa_span`.
pub fn simulate_esa_spectrum(pair: &SourcePair, cfg: &ClassicalBeatConfig) -> Result<Spectrum> {
    let line = esa_lineshape(pair, cfg)?;
    render(&line, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub center: f64,
    /// Gaussian standard deviation, Hz.
    pub width: f64,
    pub r_squared: f64,
}

/// Gaussian-plus-floor fit of an analyser trace.
pub fn gaussian_fit_r2(spec: &Spectrum) -> Result<LineFit> {
    let fit = fit_gaussian(&spec.frequencies(), &spec.values)?;
    Ok(LineFit {
        center: fit.center,
        width: fit.sigma,
        r_squared: fit.r_squared,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassicalRow {
    pub mu: f64,
    pub p_test: f64,
    pub r_squared: f64,
}

/// R² of the analyser fit for each test flux.
///
/// Every point uses the same noise realization, so the sweep isolates the
/// effect of the test power. A trace with no fittable line scores R² = 0.
pub fn classical_effectiveness_sweep(
    pair: &SourcePair,
    cfg_template: &ClassicalBeatConfig,
    mu_values: &[f64],
    wavelength: f64,
    gate_width: f64,
) -> Result<Vec<ClassicalRow>> {
    if mu_values.is_empty() {
        return Err(invalid("mu_values", "empty ladder"));
    }
    if let Some(bad) = mu_values.iter().find(|&&m| !(m > 0.0) || !m.is_finite()) {
        return Err(invalid("mu_values", format!("must be positive, got {bad}")));
    }
    let line = esa_lineshape(pair, cfg_template)?;
    mu_values
        .par_iter()
        .map(|&mu| {
            let p_test = photon_flux_to_power(mu, wavelength, gate_width)?.power_watts;
            let spec = render(&line, &cfg_template.with_p_test(p_test))?;
            let r_squared = match gaussian_fit_r2(&spec) {
                Ok(fit) => fit.r_squared.max(0.0),
                Err(Error::FitFailure { reason, .. }) => {
                    log::debug!("no line at mu = {mu}: {reason}");
                    0.0
                }
                Err(e) => return Err(e),
            };
            Ok(ClassicalRow { mu, p_test, r_squared })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavepacket::make_gaussian;

    fn pair(df: f64) -> SourcePair {
        SourcePair::matched(make_gaussian(0.0, 2e-7).unwrap(), make_gaussian(df, 2e-7).unwrap())
    }

    #[test]
    fn intensity_formula() {
        assert_eq!(classical_intensity(1.0, 1.0, 1.0, 0.0).unwrap(), 4.0);
        assert!(classical_intensity(1.0, 1.0, 1.0, std::f64::consts::PI).unwrap().abs() < 1e-15);
        assert!((classical_intensity(1.0, 0.25, 0.5, 0.0).unwrap() - 1.75).abs() < 1e-15);
        assert!(classical_intensity(1.0, 1.0, 1.01, 0.0).is_err());
        assert!(classical_intensity(-1.0, 1.0, 0.5, 0.0).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(ClassicalBeatConfig::default().validate().is_ok());
        let c = ClassicalBeatConfig {
            esa_points: 8,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = ClassicalBeatConfig {
            p_test: -1.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = ClassicalBeatConfig {
            p_ref: 1.0,
            ..Default::default()
        };
        assert_eq!(c.effective_p_ref(), MAX_P_REF);
    }

    #[test]
    fn zero_test_power_is_floor_only() {
        let cfg = ClassicalBeatConfig {
            p_test: 0.0,
            ..Default::default()
        };
        let s = simulate_esa_spectrum(&pair(40e6), &cfg).unwrap();
        let mean = s.values.iter().sum::<f64>() / s.len() as f64;
        assert!((mean / cfg.pedestal() - 1.0).abs() < 0.02);
    }

    #[test]
    fn beat_beyond_span() {
        let cfg = ClassicalBeatConfig {
            esa_span: 20e6,
            ..Default::default()
        };
        assert!(matches!(
            simulate_esa_spectrum(&pair(40e6), &cfg),
            Err(Error::OutOfSpan { .. })
        ));
    }

    #[test]
    fn same_seed_same_trace() {
        let cfg = ClassicalBeatConfig::default();
        let a = simulate_esa_spectrum(&pair(40e6), &cfg).unwrap();
        let b = simulate_esa_spectrum(&pair(40e6), &cfg).unwrap();
        assert_eq!(a, b);
    }
}
