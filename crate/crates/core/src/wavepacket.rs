//! Temporal wave packets of the reference and test sources.
//!
//! All frequencies are offsets from the reference laser's optical carrier:
//! the carrier itself is never sampled. A packet is
//!
//! ```text
//! f(t) = N · exp(-t² / (4 τc²)) · exp(-i 2π ν t) · exp(i β sin(2π fm t))
//! ```
//!
//! so that |f|² is a Gaussian of standard deviation `τc` and unit area. The
//! spectral amplitude uses the `exp(+i 2π ν t)` kernel, which places a packet
//! with centre frequency ν at +ν.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Shape tag for the phase modulator drive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Waveform {
    Sinusoid,
}

impl std::str::FromStr for Waveform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sinusoid" | "sine" => Ok(Waveform::Sinusoid),
            other => Err(invalid(
                "waveform",
                format!("unsupported waveform `{other}` (only `sinusoid`)"),
            )),
        }
    }
}

/// Periodic phase modulation applied on top of the envelope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseModulation {
    pub waveform: Waveform,
    /// Drive frequency in Hz.
    pub frequency: f64,
    /// Peak phase excursion in radians.
    pub index: f64,
}

impl PhaseModulation {
    fn phase(&self, t: f64) -> f64 {
        match self.waveform {
            Waveform::Sinusoid => self.index * (2.0 * PI * self.frequency * t).sin(),
        }
    }
}

/// Unit-normalised single-photon temporal mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WavePacket {
    center_frequency: f64,
    coherence_time: f64,
    modulation: Option<PhaseModulation>,
    amplitude_scale: f64,
}

/// Gaussian packet centred on t = 0.
pub fn make_gaussian(center_frequency: f64, coherence_time: f64) -> Result<WavePacket> {
    if !(coherence_time > 0.0) || !coherence_time.is_finite() {
        return Err(invalid(
            "coherence_time",
            format!("must be positive and finite, got {coherence_time}"),
        ));
    }
    if !center_frequency.is_finite() {
        return Err(invalid("center_frequency", "must be finite"));
    }
    Ok(WavePacket {
        center_frequency,
        coherence_time,
        modulation: None,
        amplitude_scale: (2.0 * PI * coherence_time * coherence_time).powf(-0.25),
    })
}

/// Multiplies the packet by `exp(i · mod_index · sin(2π · mod_frequency · t))`.
///
/// A zero index returns the packet unchanged.
pub fn apply_phase_modulation(
    packet: WavePacket,
    waveform: Waveform,
    mod_frequency: f64,
    mod_index: f64,
) -> Result<WavePacket> {
    if !(mod_frequency > 0.0) || !mod_frequency.is_finite() {
        return Err(invalid(
            "mod_frequency",
            format!("must be positive, got {mod_frequency}"),
        ));
    }
    if !(mod_index >= 0.0) || !mod_index.is_finite() {
        return Err(invalid(
            "mod_index",
            format!("must be non-negative, got {mod_index}"),
        ));
    }
    if packet.modulation.is_some() {
        return Err(invalid("modulation", "packet is already phase modulated"));
    }
    if mod_index == 0.0 {
        return Ok(packet);
    }
    Ok(WavePacket {
        modulation: Some(PhaseModulation {
            waveform,
            frequency: mod_frequency,
            index: mod_index,
        }),
        ..packet
    })
}

impl WavePacket {
    pub fn center_frequency(&self) -> f64 {
        self.center_frequency
    }

    pub fn coherence_time(&self) -> f64 {
        self.coherence_time
    }

    pub fn modulation(&self) -> Option<PhaseModulation> {
        self.modulation
    }

    pub fn amplitude_scale(&self) -> f64 {
        self.amplitude_scale
    }

    /// Same packet with its carrier moved to `center_frequency`.
    pub fn with_center_frequency(mut self, center_frequency: f64) -> Self {
        self.center_frequency = center_frequency;
        self
    }

    /// Standard deviation of the power spectrum of the unmodulated envelope,
    /// `1 / (4π τc)`.
    pub fn envelope_linewidth(&self) -> f64 {
        1.0 / (4.0 * PI * self.coherence_time)
    }

    /// Highest baseband frequency with non-negligible spectral power.
    pub fn bandwidth_edge(&self) -> f64 {
        let sidebands = self
            .modulation
            .map(|m| (m.index + 4.0) * m.frequency)
            .unwrap_or(0.0);
        self.center_frequency.abs() + sidebands + 6.0 * self.envelope_linewidth()
    }

    #[inline]
    pub fn at(&self, t: f64) -> Complex64 {
        let envelope = self.amplitude_scale
            * (-t * t / (4.0 * self.coherence_time * self.coherence_time)).exp();
        let mut phase = -2.0 * PI * self.center_frequency * t;
        if let Some(m) = &self.modulation {
            phase += m.phase(t);
        }
        Complex64::from_polar(envelope, phase)
    }
}

/// Uniform sampling of the time axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t_start: f64,
    pub t_step: f64,
    pub n_points: usize,
}

impl TimeGrid {
    pub fn new(t_start: f64, t_step: f64, n_points: usize) -> Result<Self> {
        if !(t_step > 0.0) || !t_step.is_finite() {
            return Err(invalid("t_step", format!("must be positive, got {t_step}")));
        }
        if n_points == 0 {
            return Err(invalid("n_points", "must be at least 1"));
        }
        if !t_start.is_finite() {
            return Err(invalid("t_start", "must be finite"));
        }
        Ok(TimeGrid {
            t_start,
            t_step,
            n_points,
        })
    }

    /// Grid symmetric about t = 0 with `n_points` samples spanning `span`.
    pub fn centered(span: f64, n_points: usize) -> Result<Self> {
        if n_points < 2 {
            return Err(invalid("n_points", "a centred grid needs at least 2 points"));
        }
        let step = span / (n_points - 1) as f64;
        TimeGrid::new(-0.5 * span, step, n_points)
    }

    /// Default grid for a set of packets: span 16 × the longest coherence
    /// time, sample rate at least 8 × the highest baseband frequency.
    pub fn for_packets(packets: &[&WavePacket]) -> Result<Self> {
        let tau = packets
            .iter()
            .map(|p| p.coherence_time)
            .fold(0.0_f64, f64::max);
        let edge = packets
            .iter()
            .map(|p| p.bandwidth_edge())
            .fold(0.0_f64, f64::max);
        if tau <= 0.0 {
            return Err(invalid("packets", "need at least one packet"));
        }
        let span = 16.0 * tau;
        let rate = 8.0 * edge;
        let n = ((span * rate).ceil() as usize + 1).max(512);
        TimeGrid::centered(span, n)
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t_start + k as f64 * self.t_step
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_points).map(move |k| self.time(k))
    }

    pub fn span(&self) -> f64 {
        self.t_step * (self.n_points.saturating_sub(1)) as f64
    }

    pub fn sample_rate(&self) -> f64 {
        1.0 / self.t_step
    }

    /// Trapezoidal weights, all `t_step` except the two end points.
    pub(crate) fn trapezoid_weight(&self, k: usize) -> f64 {
        if k == 0 || k + 1 == self.n_points {
            0.5 * self.t_step
        } else {
            self.t_step
        }
    }
}

/// Power density samples on a uniform frequency grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub f_start: f64,
    pub f_step: f64,
    pub values: Vec<f64>,
}

impl Spectrum {
    pub fn new(f_start: f64, f_step: f64, values: Vec<f64>) -> Result<Self> {
        if !(f_step > 0.0) || !f_step.is_finite() {
            return Err(invalid("f_step", format!("must be positive, got {f_step}")));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(invalid(
                "values",
                format!("power samples must be finite and non-negative, found {v}"),
            ));
        }
        Ok(Spectrum {
            f_start,
            f_step,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn frequency(&self, k: usize) -> f64 {
        self.f_start + k as f64 * self.f_step
    }

    pub fn frequencies(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.frequency(k)).collect()
    }

    /// Rectangle-rule integral, `Σ values · f_step`.
    pub fn total_power(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.f_step
    }

    pub fn peak_index(&self) -> Option<usize> {
        self.values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, _)| k)
    }

    pub fn peak_frequency(&self) -> Option<f64> {
        self.peak_index().map(|k| self.frequency(k))
    }

    pub fn peak_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Power-weighted mean frequency.
    pub fn centroid(&self) -> f64 {
        let total: f64 = self.values.iter().sum();
        self.values
            .iter()
            .enumerate()
            .map(|(k, v)| v * self.frequency(k))
            .sum::<f64>()
            / total
    }

    /// Power-weighted standard deviation about the centroid.
    pub fn rms_width(&self) -> f64 {
        let total: f64 = self.values.iter().sum();
        let mean = self.centroid();
        let var = self
            .values
            .iter()
            .enumerate()
            .map(|(k, v)| v * (self.frequency(k) - mean).powi(2))
            .sum::<f64>()
            / total;
        var.sqrt()
    }

    /// Linear interpolation; zero outside the grid.
    pub fn interpolate(&self, f: f64) -> f64 {
        let x = (f - self.f_start) / self.f_step;
        if x < 0.0 || self.values.is_empty() {
            return 0.0;
        }
        let k = x.floor() as usize;
        if k + 1 >= self.values.len() {
            return if k + 1 == self.values.len() && x == k as f64 {
                self.values[k]
            } else {
                0.0
            };
        }
        let frac = x - k as f64;
        self.values[k] * (1.0 - frac) + self.values[k + 1] * frac
    }

    /// Copy scaled to unit area.
    pub fn normalized_area(&self) -> Spectrum {
        let area = self.total_power();
        let scale = if area > 0.0 { 1.0 / area } else { 0.0 };
        self.scaled(scale)
    }

    /// Copy scaled to unit peak.
    pub fn normalized_peak(&self) -> Spectrum {
        let peak = self.peak_value();
        let scale = if peak > 0.0 { 1.0 / peak } else { 0.0 };
        self.scaled(scale)
    }

    fn scaled(&self, scale: f64) -> Spectrum {
        Spectrum {
            f_start: self.f_start,
            f_step: self.f_step,
            values: self.values.iter().map(|v| v * scale).collect(),
        }
    }

    /// Same samples with the frequency axis moved by `offset`.
    pub fn shifted(&self, offset: f64) -> Spectrum {
        Spectrum {
            f_start: self.f_start + offset,
            ..self.clone()
        }
    }

    /// Full width between the outermost samples at or above `peak / e`.
    pub fn full_width_1e(&self) -> f64 {
        let threshold = self.peak_value() / std::f64::consts::E;
        let above: Vec<usize> = (0..self.len())
            .filter(|&k| self.values[k] >= threshold && self.values[k] > 0.0)
            .collect();
        match (above.first(), above.last()) {
            (Some(&lo), Some(&hi)) => (hi - lo) as f64 * self.f_step,
            _ => 0.0,
        }
    }
}

/// Samples `f(t_k)` at every grid point.
pub fn evaluate(packet: &WavePacket, grid: &TimeGrid) -> Vec<Complex64> {
    grid.times().map(|t| packet.at(t)).collect()
}

/// Trapezoidal `∫|f|² dt` over the grid.
pub fn norm_on_grid(packet: &WavePacket, grid: &TimeGrid) -> f64 {
    (0..grid.n_points)
        .map(|k| grid.trapezoid_weight(k) * packet.at(grid.time(k)).norm_sqr())
        .sum()
}

fn check_nyquist(packet: &WavePacket, grid: &TimeGrid) -> Result<()> {
    let required = 2.0 * packet.bandwidth_edge();
    if grid.sample_rate() < required {
        return Err(Error::Aliasing {
            sample_rate: grid.sample_rate(),
            required,
        });
    }
    if grid.n_points < 2 {
        return Err(invalid("n_points", "a spectrum needs at least 2 samples"));
    }
    Ok(())
}

/// Complex spectral amplitude `φ(ν) = ∫ f(t) exp(+i 2π ν t) dt` on the
/// centred FFT frequency grid of `grid`.
///
/// Returns `(f_start, f_step, amplitudes)`.
pub fn amplitude_spectrum_of(
    packet: &WavePacket,
    grid: &TimeGrid,
) -> Result<(f64, f64, Vec<Complex64>)> {
    check_nyquist(packet, grid)?;
    Ok(amplitude_spectrum(&evaluate(packet, grid), grid))
}

/// Shared FFT path for any sampled complex signal on `grid`.
pub(crate) fn amplitude_spectrum(samples: &[Complex64], grid: &TimeGrid) -> (f64, f64, Vec<Complex64>) {
    let n = samples.len();
    let mut buf = samples.to_vec();
    // exp(+i 2π k n / N) kernel
    FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
    let df = 1.0 / (n as f64 * grid.t_step);
    let half = n / 2;
    let f_start = -(half as f64) * df;
    let out = (0..n)
        .map(|j| {
            let src = (j + n - half) % n;
            let f = f_start + j as f64 * df;
            // the FFT treats the first sample as t = 0
            buf[src] * Complex64::from_polar(grid.t_step, 2.0 * PI * f * grid.t_start)
        })
        .collect();
    (f_start, df, out)
}

/// Power spectrum `|φ(ν)|²` normalised so that `Σ values · f_step`
/// equals the time-domain energy on the grid.
pub fn spectrum_of(packet: &WavePacket, grid: &TimeGrid) -> Result<Spectrum> {
    let (f_start, f_step, amp) = amplitude_spectrum_of(packet, grid)?;
    Spectrum::new(f_start, f_step, amp.iter().map(|a| a.norm_sqr()).collect())
}
