//! Few-photon Fourier-transform spectroscopy.
//!
//! The AC part of the two-photon interferogram transforms into the
//! convolution of the two optical spectra centred at the beat frequency.
//! Removing the known reference lineshape by Wiener deconvolution leaves
//! the test spectrum. Everything is relative to the reference: the sign of
//! the detuning is recovered only by [`resolve_ambiguity`].

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{invalid, Error, Result};
use crate::interference::{Interferogram, InterferogramKind, SourcePair};
use crate::wavepacket::{amplitude_spectrum, evaluate, Spectrum, TimeGrid};

/// Planck constant, J·s (exact SI value).
pub const PLANCK: f64 = 6.626_070_15e-34;
/// Speed of light in vacuum, m/s (exact SI value).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Zero-padding factor before the FFT.
pub const PADDING_FACTOR: usize = 4;
/// Half-width, in padded bins, of the centroid window around the peak.
pub const CENTROID_HALF_WIDTH: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    Rectangular,
    Hann,
}

impl Window {
    /// Hann for counted data, rectangular for noiseless curves.
    pub fn default_for(kind: InterferogramKind) -> Self {
        match kind {
            InterferogramKind::Analytic => Window::Rectangular,
            InterferogramKind::Counts => Window::Hann,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Window::Rectangular => "rectangular",
            Window::Hann => "hann",
        }
    }

    pub fn coefficients(&self, n: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; n],
            Window::Hann => {
                if n < 2 {
                    return vec![1.0; n];
                }
                let m = (n - 1) as f64;
                (0..n)
                    .map(|k| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * k as f64 / m).cos()))
                    .collect()
            }
        }
    }

    /// Mean of the squared window for long windows.
    pub fn power_gain(&self) -> f64 {
        match self {
            Window::Rectangular => 1.0,
            Window::Hann => 0.375,
        }
    }
}

impl std::str::FromStr for Window {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rectangular" | "rect" | "none" => Ok(Window::Rectangular),
            "hann" | "hanning" => Ok(Window::Hann),
            other => Err(invalid("window", format!("unknown window `{other}`"))),
        }
    }
}

impl std::fmt::Display for Window {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Output of the interferogram transform and, optionally, the deconvolution.
#[derive(Debug, Clone, PartialEq)]
pub struct FtsResult {
    /// One-sided `|φ_ref ∗ φ_test|²` estimate: the magnitude of the
    /// interferogram's transform.
    pub beat_spectrum: Spectrum,
    /// Centroid of the dominant non-DC line.
    pub beat_frequency: f64,
    /// Test lineshape relative to its own centre; set by deconvolution.
    pub test_spectrum: Option<Spectrum>,
    /// `1 / delay span`.
    pub resolution: f64,
    pub window: Window,
    pub padded_len: usize,
    pub noise_floor: Option<f64>,
}

impl FtsResult {
    /// Peak power over the median power above the DC region. Zero for an
    /// empty spectrum.
    pub fn line_contrast(&self) -> f64 {
        let skip = self.dc_bins();
        let mut v: Vec<f64> = self.beat_spectrum.values[skip..].to_vec();
        if v.is_empty() {
            return 0.0;
        }
        let peak = v.iter().copied().fold(0.0, f64::max);
        v.sort_by(f64::total_cmp);
        let median = v[v.len() / 2];
        if peak == 0.0 {
            0.0
        } else if median == 0.0 {
            f64::INFINITY
        } else {
            peak / median
        }
    }

    /// Padded bins inside one resolution bin of DC.
    fn dc_bins(&self) -> usize {
        dc_bins(self.resolution, self.beat_spectrum.f_step)
    }
}

fn dc_bins(resolution: f64, f_step: f64) -> usize {
    ((resolution / f_step).ceil() as usize).max(1)
}

fn edge_mean(signal: &[f64]) -> f64 {
    let n = signal.len();
    let edge = (n / 10).max(1);
    let sum: f64 = signal[..edge].iter().chain(&signal[n - edge..]).sum();
    sum / (2 * edge) as f64
}

/// FFT of the plateau-subtracted interferogram.
///
/// The plateau is the mean of the outer 10% of delays on each side. The AC
/// part is windowed, zero-padded to the next power of two at or above four
/// times its length and transformed. The transform of the fringe term is
/// itself the beat lineshape, so the one-sided `|Δτ·X|` is returned, with
/// the power-weighted centroid of the strongest non-DC line.
pub fn fts_transform(ig: &Interferogram, window: Window) -> Result<FtsResult> {
    let step = ig.delay_step()?;
    ig.validate()?;
    if ig.kind == InterferogramKind::Counts && ig.gates.iter().any(|&g| g == 0) {
        return Err(Error::InvalidInput("every delay needs at least one gate".into()));
    }
    let signal = ig.signal();
    if signal.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateInput("interferogram is identically zero".into()));
    }
    let plateau = edge_mean(&signal);
    let n = signal.len();
    let scale = signal.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let mut ac: Vec<f64> = signal.iter().map(|v| v - plateau).collect();
    if ac.iter().all(|v| v.abs() <= n as f64 * f64::EPSILON * scale) {
        // a constant curve: what is left is rounding in the plateau mean
        ac.iter_mut().for_each(|v| *v = 0.0);
    }
    let coeffs = window.coefficients(n);
    let padded_len = (PADDING_FACTOR * n).next_power_of_two();
    let mut buf: Vec<Complex64> = ac
        .iter()
        .zip(&coeffs)
        .map(|(v, w)| Complex64::new(v * w, 0.0))
        .collect();
    buf.resize(padded_len, Complex64::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(padded_len).process(&mut buf);

    let f_step = 1.0 / (padded_len as f64 * step);
    let values: Vec<f64> = buf[..=padded_len / 2]
        .iter()
        .map(|x| (x * step).norm())
        .collect();
    let resolution = 1.0 / ((n - 1) as f64 * step);
    let beat_spectrum = Spectrum::new(0.0, f_step, values)?;
    let beat_frequency = line_centroid(&beat_spectrum, dc_bins(resolution, f_step));

    Ok(FtsResult {
        beat_spectrum,
        beat_frequency,
        test_spectrum: None,
        resolution,
        window,
        padded_len,
        noise_floor: None,
    })
}

/// Centroid over ±[`CENTROID_HALF_WIDTH`] bins of the largest bin at or
/// beyond `skip`.
fn line_centroid(s: &Spectrum, skip: usize) -> f64 {
    let Some((k, _)) = s
        .values
        .iter()
        .enumerate()
        .skip(skip)
        .max_by(|a, b| a.1.total_cmp(b.1))
    else {
        return 0.0;
    };
    let lo = k.saturating_sub(CENTROID_HALF_WIDTH);
    let hi = (k + CENTROID_HALF_WIDTH).min(s.len() - 1);
    let (mut num, mut den) = (0.0, 0.0);
    for j in lo..=hi {
        num += s.values[j] * s.frequency(j);
        den += s.values[j];
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Reference lineshape sampled on offsets `j·df` from its centroid, in FFT
/// order (negative offsets wrapped to the end), scaled to unit sum.
fn wrapped_kernel(reference: &Spectrum, len: usize, df: f64) -> Vec<f64> {
    let center = reference.centroid();
    let mut k: Vec<f64> = (0..len)
        .map(|j| {
            let offset = if j <= len / 2 { j as f64 } else { j as f64 - len as f64 };
            reference.interpolate(center + offset * df)
        })
        .collect();
    let sum: f64 = k.iter().sum();
    if sum > 0.0 {
        k.iter_mut().for_each(|v| *v /= sum);
    }
    k
}

fn fft(values: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf
}

fn ifft_real(mut buf: Vec<Complex64>) -> Vec<f64> {
    let n = buf.len();
    FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

/// Circular convolution of `values` with the reference lineshape on the
/// same grid. Used to check a deconvolution against its input.
pub fn convolve_with_reference(values: &Spectrum, reference: &Spectrum) -> Spectrum {
    let kernel = wrapped_kernel(reference, values.len(), values.f_step);
    let a = fft(&values.values);
    let b = fft(&kernel);
    let out = ifft_real(a.iter().zip(&b).map(|(x, y)| x * y).collect());
    Spectrum {
        f_start: values.f_start,
        f_step: values.f_step,
        values: out.into_iter().map(|v| v.max(0.0)).collect(),
    }
}

/// Wiener deconvolution of the beat line by the reference lineshape.
///
/// `T̂ = B̂ K̂* / (|K̂|² + noise_floor)` with the kernel scaled to unit sum,
/// so `noise_floor` is relative to the kernel's peak transfer. The result is
/// clipped at zero, scaled to unit area and re-centred on the beat, i.e.
/// expressed as offsets from the test carrier.
pub fn deconvolve_reference(result: &FtsResult, reference: &Spectrum, noise_floor: f64) -> Result<FtsResult> {
    if !(noise_floor > 0.0) || !noise_floor.is_finite() {
        return Err(invalid("noise_floor", format!("must be positive, got {noise_floor}")));
    }
    let beat = &result.beat_spectrum;
    if reference.total_power() <= 0.0 {
        return Err(invalid("reference_spectrum", "reference has no power"));
    }
    let recentred = if reference.rms_width() < beat.f_step {
        log::warn!(
            "reference lineshape ({:.3e} Hz rms) is narrower than one bin ({:.3e} Hz); treating it as a delta",
            reference.rms_width(),
            beat.f_step
        );
        beat.clone()
    } else {
        let kernel = wrapped_kernel(reference, beat.len(), beat.f_step);
        let b = fft(&beat.values);
        let k = fft(&kernel);
        let t: Vec<Complex64> = b
            .iter()
            .zip(&k)
            .map(|(b, k)| b * k.conj() / (k.norm_sqr() + noise_floor))
            .collect();
        Spectrum {
            f_start: beat.f_start,
            f_step: beat.f_step,
            values: ifft_real(t).into_iter().map(|v| v.max(0.0)).collect(),
        }
    };
    let test = recentred.shifted(-result.beat_frequency).normalized_area();
    Ok(FtsResult {
        test_spectrum: Some(test),
        noise_floor: Some(noise_floor),
        ..result.clone()
    })
}

/// Signed test-minus-reference frequency from two runs, the second with the
/// reference carrier raised by `reference_shift`.
///
/// A test laser above the reference sees its beat shrink by the shift; one
/// below sees it grow.
pub fn resolve_ambiguity(run_a: &FtsResult, run_b: &FtsResult, reference_shift: f64) -> Result<f64> {
    if !(reference_shift > 0.0) || reference_shift >= run_a.beat_frequency {
        return Err(invalid(
            "reference_shift",
            format!(
                "must lie in (0, {:.4e}) Hz, got {reference_shift:.4e}",
                run_a.beat_frequency
            ),
        ));
    }
    let moved = run_b.beat_frequency - run_a.beat_frequency;
    let tolerance = 2.0 * run_a.resolution.max(run_b.resolution);
    if (moved.abs() - reference_shift).abs() > tolerance {
        return Err(Error::AmbiguityUnresolved {
            observed: moved,
            expected: reference_shift,
        });
    }
    Ok(if moved < 0.0 {
        run_a.beat_frequency
    } else {
        -run_a.beat_frequency
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnfoldCheck {
    pub unfolded: bool,
    pub diagnostic: String,
}

/// The one-sided spectrum stays unfolded only while the beat exceeds the
/// test spectrum's full 1/e width.
pub fn check_unfolded(beat_frequency: f64, test_width: f64) -> UnfoldCheck {
    if beat_frequency > test_width {
        UnfoldCheck {
            unfolded: true,
            diagnostic: format!(
                "beat {beat_frequency:.4e} Hz exceeds test width {test_width:.4e} Hz; spectrum is unfolded"
            ),
        }
    } else {
        UnfoldCheck {
            unfolded: false,
            diagnostic: format!(
                "beat {beat_frequency:.4e} Hz does not exceed test width {test_width:.4e} Hz: \
                 components below the reference fold onto positive frequencies; \
                 move the reference further from the test source"
            ),
        }
    }
}

/// Optical power of a gated photon flux.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerReading {
    pub mu: f64,
    pub wavelength: f64,
    pub gate_width: f64,
    pub power_watts: f64,
    pub power_dbm: f64,
}

/// `P = μ h c / (λ w_g)`.
pub fn photon_flux_to_power(mu: f64, wavelength: f64, gate_width: f64) -> Result<PowerReading> {
    if !(mu >= 0.0) || !mu.is_finite() {
        return Err(invalid("mu", format!("must be non-negative, got {mu}")));
    }
    if !(wavelength > 0.0) {
        return Err(invalid("wavelength", format!("must be positive, got {wavelength}")));
    }
    if !(gate_width > 0.0) {
        return Err(invalid("gate_width", format!("must be positive, got {gate_width}")));
    }
    let power_watts = mu * PLANCK * SPEED_OF_LIGHT / (wavelength * gate_width);
    Ok(PowerReading {
        mu,
        wavelength,
        gate_width,
        power_watts,
        power_dbm: 10.0 * (power_watts / 1e-3).log10(),
    })
}

/// Photons per gate for an optical power given in dBm.
pub fn power_dbm_to_mu(power_dbm: f64, wavelength: f64, gate_width: f64) -> f64 {
    let watts = 1e-3 * 10f64.powf(power_dbm / 10.0);
    watts * wavelength * gate_width / (PLANCK * SPEED_OF_LIGHT)
}

/// Two-sided `|φ_test ∗ φ̃_ref|²`, the beat lineshape centred at the test
/// detuning, with unit area.
///
/// Computed as the power spectrum of `f_test(t) · f_ref*(t)`, whose
/// transform is the convolution of the test amplitude spectrum with the
/// conjugate-mirrored reference amplitude spectrum.
pub fn beat_lineshape(pair: &SourcePair, grid: &TimeGrid) -> Result<Spectrum> {
    let required = 2.0 * (pair.reference.bandwidth_edge() + pair.test.bandwidth_edge());
    if grid.sample_rate() < required {
        return Err(Error::Aliasing {
            sample_rate: grid.sample_rate(),
            required,
        });
    }
    let f_ref = evaluate(&pair.reference, grid);
    let f_test = evaluate(&pair.test, grid);
    let z: Vec<Complex64> = f_test.iter().zip(&f_ref).map(|(t, r)| t * r.conj()).collect();
    let (f_start, f_step, amp) = amplitude_spectrum(&z, grid);
    Ok(Spectrum::new(f_start, f_step, amp.iter().map(|a| a.norm_sqr()).collect())?.normalized_area())
}

/// Grid for [`beat_lineshape`]: four times the pair's default span, for
/// fine frequency bins, at a rate that covers the summed bandwidths.
pub fn beat_grid(pair: &SourcePair) -> Result<TimeGrid> {
    let span = 4.0 * pair.default_grid()?.span();
    let rate = 8.0 * (pair.reference.bandwidth_edge() + pair.test.bandwidth_edge());
    TimeGrid::centered(span, (span * rate).ceil() as usize + 1)
}

/// `s(f) + s(-f)` on a one-sided grid: what a real-valued measurement sees.
pub fn fold_to_positive(s: &Spectrum, f_start: f64, f_step: f64, len: usize) -> Spectrum {
    let values = (0..len)
        .map(|k| {
            let f = f_start + k as f64 * f_step;
            if f == 0.0 {
                s.interpolate(0.0)
            } else {
                s.interpolate(f) + s.interpolate(-f)
            }
        })
        .collect();
    Spectrum {
        f_start,
        f_step,
        values,
    }
}
