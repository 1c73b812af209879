//! Simulation and analysis toolkit for few-photon Fourier-transform
//! spectroscopy.
//!
//! Two weak coherent sources, a frequency-stable *reference* and a *test*
//! laser, interfere on a 50/50 beam splitter. The coincidence rate between
//! the two output detectors, swept over their relative delay, forms a
//! two-photon interferogram whose Fourier transform is the convolution of
//! the two optical spectra centred at the beat frequency. Removing the
//! known reference lineshape recovers the test spectrum.
//!
//! Module map:
//!
//! - [`wavepacket`]: temporal wave packets, time grids and spectra
//! - [`interference`]: two-photon joint detection and visibility models
//! - [`detector`]: gated single-photon detector Monte Carlo and visibility fits
//! - [`spectral`]: interferogram FFT, deconvolution and power conversion
//! - [`heterodyne`]: classical beat-note baseline on a linear photodiode
//! - [`fitting`]: Levenberg-Marquardt least squares and Gaussian line fits
//! - [`io`]: CSV encoding of interferograms and spectra

pub mod detector;
pub mod error;
pub mod fitting;
pub mod heterodyne;
pub mod interference;
pub mod io;
pub mod spectral;
pub mod wavepacket;

pub use detector::{AcquisitionPlan, DetectorConfig, VisibilityFit};
pub use error::{Error, Result};
pub use heterodyne::ClassicalBeatConfig;
pub use interference::{Interferogram, InterferogramKind, SourcePair};
pub use spectral::{FtsResult, PowerReading, Window};
pub use wavepacket::{PhaseModulation, Spectrum, TimeGrid, WavePacket, Waveform};
