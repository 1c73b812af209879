//! Two-photon joint detection behind a 50/50 beam splitter.
//!
//! The joint detection density for co-emitted packets is
//!
//! ```text
//! g(t0, τ) = ¼ |f1(t0+τ) f2(t0) - f1(t0) f2(t0+τ)|²
//! ```
//!
//! Laser light is stationary: the two photons are emitted at independent
//! times, so the coincidence probability at detector delay τ is g integrated
//! over t0 *and* over the relative emission offset u. The direct terms then
//! factor into the product of the marginal norms and the exchange terms into
//! the product of the packets' first-order autocorrelations,
//!
//! ```text
//! P(τ) = ½ [∫r ∫s - Re Γ1(τ) Γ2*(τ)],    Γ(τ) = ∫ f*(t) f(t+τ) dt
//! ```
//!
//! which is ½ far outside the coherence time and dips to zero at τ = 0 for
//! indistinguishable packets.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::wavepacket::{evaluate, norm_on_grid, TimeGrid, WavePacket};

/// Reference and test sources with their mode-matching parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourcePair {
    pub reference: WavePacket,
    pub test: WavePacket,
    /// Mean photon number ratio, test over reference.
    pub intensity_ratio: f64,
    /// Relative polarization angle in radians, within [0, π/2].
    pub polarization_angle: f64,
}

impl SourcePair {
    pub fn new(
        reference: WavePacket,
        test: WavePacket,
        intensity_ratio: f64,
        polarization_angle: f64,
    ) -> Result<Self> {
        if !(intensity_ratio >= 0.0) || !intensity_ratio.is_finite() {
            return Err(invalid(
                "intensity_ratio",
                format!("must be finite and non-negative, got {intensity_ratio}"),
            ));
        }
        check_angle(polarization_angle)?;
        Ok(SourcePair {
            reference,
            test,
            intensity_ratio,
            polarization_angle,
        })
    }

    /// Balanced, polarization-aligned pair.
    pub fn matched(reference: WavePacket, test: WavePacket) -> Self {
        SourcePair {
            reference,
            test,
            intensity_ratio: 1.0,
            polarization_angle: 0.0,
        }
    }

    /// Test carrier minus reference carrier.
    pub fn detuning(&self) -> f64 {
        self.test.center_frequency() - self.reference.center_frequency()
    }

    pub fn default_grid(&self) -> Result<TimeGrid> {
        TimeGrid::for_packets(&[&self.reference, &self.test])
    }

    /// Fraction of the intensity-limited fringe amplitude that survives the
    /// polarization mismatch; see [`fringe_scale`].
    pub fn polarization_factor(&self) -> f64 {
        fringe_scale(self.intensity_ratio, self.polarization_angle)
    }

    /// Visibility expected from both mode-matching models together.
    pub fn mode_matching_visibility(&self) -> f64 {
        visibility(folded_ratio(self.intensity_ratio) * polarization_ratio(self.polarization_angle))
    }
}

/// Polarization scaling of the exchange term for intensity ratio `ratio`.
///
/// The angle is mapped to an equivalent intensity ratio and combined
/// multiplicatively with the (folded) explicit ratio; the result is the
/// combined visibility over the intensity-only visibility.
pub fn fringe_scale(ratio: f64, theta: f64) -> f64 {
    let r = folded_ratio(ratio);
    let v = visibility(r);
    if v == 0.0 {
        return 0.0;
    }
    visibility(r * polarization_ratio(theta)) / v
}

fn check_angle(theta: f64) -> Result<()> {
    if !(0.0..=FRAC_PI_2 + 1e-12).contains(&theta) {
        return Err(invalid(
            "polarization_angle",
            format!("must lie in [0, π/2], got {theta}"),
        ));
    }
    Ok(())
}

/// `V(R) = V(1/R)`: only the imbalance matters.
fn folded_ratio(r: f64) -> f64 {
    if r > 1.0 {
        1.0 / r
    } else {
        r
    }
}

fn visibility(r: f64) -> f64 {
    2.0 * r / ((1.0 + r) * (1.0 + r))
}

fn polarization_ratio(theta: f64) -> f64 {
    if theta >= FRAC_PI_2 {
        // orthogonal: cos(π/2) is not exactly zero in floating point
        return 0.0;
    }
    let c = theta.cos();
    let s = theta.sin();
    (c * c / (1.0 + s * s)).max(0.0)
}

/// `V = 2R / (1 + R)²`.
pub fn visibility_from_ratio(ratio: f64) -> Result<f64> {
    if !(ratio >= 0.0) {
        return Err(invalid("ratio", format!("must be non-negative, got {ratio}")));
    }
    if ratio.is_infinite() {
        return Ok(0.0);
    }
    Ok(visibility(ratio))
}

/// Equivalent intensity ratio of a polarization misalignment,
/// `cos²θ / (1 + sin²θ)`.
pub fn ratio_from_polarization(theta: f64) -> Result<f64> {
    check_angle(theta)?;
    Ok(polarization_ratio(theta.min(FRAC_PI_2)))
}

/// Relative weights of the photon-pair classes that produce coincidences
/// for coherent states with means `mu_ref` and `mu_test`: one photon from
/// each source (which interfere) and two photons from the same source
/// (which do not).
pub fn coherent_state_weights(mu_ref: f64, mu_test: f64) -> (f64, f64) {
    (mu_ref * mu_test, 0.5 * (mu_ref * mu_ref + mu_test * mu_test))
}

/// Joint detection density for co-emitted packets.
pub fn mutual_coherence(pair: &SourcePair, t0: f64, tau: f64) -> f64 {
    let f1 = &pair.reference;
    let f2 = &pair.test;
    0.25 * (f1.at(t0 + tau) * f2.at(t0) - f1.at(t0) * f2.at(t0 + tau)).norm_sqr()
}

/// `∫ g(t0, τ) dt0` with the test packet emitted `offset` seconds after the
/// reference. Plain trapezoidal quadrature of the joint density.
pub fn coincidence_probability_at_offset(
    pair: &SourcePair,
    tau: f64,
    offset: f64,
    grid: &TimeGrid,
) -> f64 {
    let f1 = &pair.reference;
    let f2 = &pair.test;
    (0..grid.n_points)
        .map(|k| {
            let t = grid.time(k);
            let a = f1.at(t + tau) * f2.at(t - offset) - f1.at(t) * f2.at(t + tau - offset);
            grid.trapezoid_weight(k) * 0.25 * a.norm_sqr()
        })
        .sum()
}

/// First-order autocorrelation `Γ(τ) = ∫ f*(t) f(t+τ) dt`.
pub fn autocorrelation(packet: &WavePacket, tau: f64, grid: &TimeGrid) -> Complex64 {
    let samples = evaluate(packet, grid);
    autocorrelation_from(packet, &samples, tau, grid)
}

fn autocorrelation_from(
    packet: &WavePacket,
    samples: &[Complex64],
    tau: f64,
    grid: &TimeGrid,
) -> Complex64 {
    samples
        .iter()
        .enumerate()
        .map(|(k, s)| s.conj() * packet.at(grid.time(k) + tau) * grid.trapezoid_weight(k))
        .sum()
}

/// Precomputed grid samples shared by every delay of one pair.
struct PairQuadrature<'a> {
    pair: &'a SourcePair,
    grid: &'a TimeGrid,
    reference: Vec<Complex64>,
    test: Vec<Complex64>,
    /// `∫r · ∫s`
    direct: f64,
}

impl<'a> PairQuadrature<'a> {
    fn new(pair: &'a SourcePair, grid: &'a TimeGrid) -> Result<Self> {
        if grid.n_points < 2 {
            return Err(invalid("grid", "quadrature needs at least 2 points"));
        }
        let n_ref = norm_on_grid(&pair.reference, grid);
        let n_test = norm_on_grid(&pair.test, grid);
        let outside = (1.0 - n_ref).max(1.0 - n_test);
        if outside > 1e-6 {
            return Err(Error::GridTooShort { outside });
        }
        Ok(PairQuadrature {
            pair,
            grid,
            reference: evaluate(&pair.reference, grid),
            test: evaluate(&pair.test, grid),
            direct: n_ref * n_test,
        })
    }

    /// `Γ_ref(τ) · Γ_test*(τ)`
    fn exchange(&self, tau: f64) -> Complex64 {
        let g1 = autocorrelation_from(&self.pair.reference, &self.reference, tau, self.grid);
        let g2 = autocorrelation_from(&self.pair.test, &self.test, tau, self.grid);
        g1 * g2.conj()
    }

    fn probability(&self, tau: f64) -> f64 {
        // ¼ [∫r(t)s(t+τ) + ∫r(t+τ)s(t) - ∫z z*(·+τ) - ∫z* z(·+τ)], emission-averaged
        (0.5 * (self.direct - self.exchange(tau).re)).max(0.0)
    }
}

/// Coincidence probability at detector delay `tau` for stationary sources.
pub fn coincidence_probability(pair: &SourcePair, tau: f64, grid: &TimeGrid) -> Result<f64> {
    Ok(PairQuadrature::new(pair, grid)?.probability(tau))
}

/// `Γ_ref(τ) Γ_test*(τ)` at each delay. Its real part is the fringe term of
/// the interferogram and its modulus the coherence envelope.
pub fn exchange_terms(pair: &SourcePair, delays: &[f64], grid: &TimeGrid) -> Result<Vec<Complex64>> {
    let quad = PairQuadrature::new(pair, grid)?;
    Ok(delays.par_iter().map(|&tau| quad.exchange(tau)).collect())
}

/// Coherence envelope `|Γ_ref Γ_test*|` normalised to its value at τ = 0.
pub fn coherence_envelope(pair: &SourcePair, delays: &[f64], grid: &TimeGrid) -> Result<Vec<f64>> {
    let quad = PairQuadrature::new(pair, grid)?;
    let zero = quad.exchange(0.0).norm();
    Ok(delays
        .par_iter()
        .map(|&tau| quad.exchange(tau).norm() / zero)
        .collect())
}

/// Smallest |τ| at which the coherence envelope first drops below 1/e.
pub fn central_lobe_halfwidth(pair: &SourcePair, max_delay: f64, step: f64, grid: &TimeGrid) -> Result<f64> {
    let n = (max_delay / step).ceil() as usize + 1;
    let delays: Vec<f64> = (0..n).map(|k| k as f64 * step).collect();
    let env = coherence_envelope(pair, &delays, grid)?;
    let limit = (-1.0_f64).exp();
    Ok(env
        .iter()
        .position(|&e| e < limit)
        .map(|k| delays[k])
        .unwrap_or(max_delay))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InterferogramKind {
    Analytic,
    Counts,
}

/// Coincidences as a function of the relative detector delay.
#[derive(Debug, Clone, PartialEq)]
pub struct Interferogram {
    pub delays: Vec<f64>,
    pub kind: InterferogramKind,
    /// Coincidence probability per gate (analytic mode) or the probability
    /// that generated the counts (counts mode).
    pub probability: Vec<f64>,
    /// Empty in analytic mode.
    pub counts: Vec<u64>,
    /// Empty in analytic mode.
    pub gates: Vec<u64>,
    /// Known model plateau, when there is one.
    pub plateau: Option<f64>,
    pub metadata: BTreeMap<String, String>,
}

impl Interferogram {
    pub fn len(&self) -> usize {
        self.delays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delays.is_empty()
    }

    /// Observed coincidence fraction: probability in analytic mode,
    /// counts / gates in counts mode.
    pub fn signal(&self) -> Vec<f64> {
        match self.kind {
            InterferogramKind::Analytic => self.probability.clone(),
            InterferogramKind::Counts => self
                .counts
                .iter()
                .zip(&self.gates)
                .map(|(&c, &g)| if g > 0 { c as f64 / g as f64 } else { 0.0 })
                .collect(),
        }
    }

    /// Analytic curve divided by its plateau.
    pub fn plateau_normalized(&self) -> Option<Vec<f64>> {
        let p = self.plateau?;
        Some(self.signal().iter().map(|v| v / p).collect())
    }

    /// Delay step, after checking the delays are increasing and uniform.
    pub fn delay_step(&self) -> Result<f64> {
        uniform_step(&self.delays)
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<()> {
        self.delay_step()?;
        if self.probability.len() != self.delays.len() {
            return Err(Error::InvalidInput("probability length differs from delays".into()));
        }
        if self.probability.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::InvalidInput("negative probability".into()));
        }
        if self.kind == InterferogramKind::Counts {
            if self.counts.len() != self.delays.len() || self.gates.len() != self.delays.len() {
                return Err(Error::InvalidInput("counts/gates length differs from delays".into()));
            }
            if self.counts.iter().zip(&self.gates).any(|(c, g)| c > g) {
                return Err(Error::InvalidInput("counts exceed gates".into()));
            }
        }
        Ok(())
    }
}

/// `count` delays starting at `start`, spaced by `step`.
pub fn uniform_delays(start: f64, step: f64, count: usize) -> Vec<f64> {
    (0..count).map(|k| start + k as f64 * step).collect()
}

pub(crate) fn uniform_step(delays: &[f64]) -> Result<f64> {
    if delays.len() < 2 {
        return Err(Error::InvalidInput("need at least two delays".into()));
    }
    let step = (delays[delays.len() - 1] - delays[0]) / (delays.len() - 1) as f64;
    if !(step > 0.0) {
        return Err(Error::InvalidInput("delays must be strictly increasing".into()));
    }
    let tol = 1e-6 * step;
    for (k, w) in delays.windows(2).enumerate() {
        if ((w[1] - w[0]) - step).abs() > tol {
            return Err(Error::InvalidInput(format!(
                "non-uniform delay spacing at index {k}: {} vs {step}",
                w[1] - w[0]
            )));
        }
    }
    Ok(step)
}

/// Noiseless interferogram of two weak coherent states.
///
/// Coincidences come from one photon of each source, which interfere with
/// probability `P(τ)` from [`coincidence_probability`], and from two photons
/// of the same source, which split with probability ½ regardless of τ. Their
/// weights fix the intensity-ratio visibility; polarization mismatch scales
/// the exchange term by [`SourcePair::polarization_factor`]. The plateau is
/// ½, the single-pair asymptote.
pub fn analytic_interferogram(pair: &SourcePair, delays: &[f64], grid: &TimeGrid) -> Result<Interferogram> {
    uniform_step(delays)?;
    let quad = PairQuadrature::new(pair, grid)?;
    let (w_int, w_same) = coherent_state_weights(1.0, pair.intensity_ratio);
    let total = w_int + w_same;
    let k_pol = pair.polarization_factor();
    let plateau = 0.5 * quad.direct;
    let probability: Vec<f64> = delays
        .par_iter()
        .map(|&tau| {
            let single = quad.probability(tau);
            // polarization-distinguishable fraction of the pair stays at the plateau
            let interfering = plateau - k_pol * (plateau - single);
            (w_int * interfering + w_same * plateau) / total
        })
        .collect();

    let mut metadata = BTreeMap::new();
    metadata.insert("kind".into(), "analytic".into());
    metadata.insert("detuning_hz".into(), pair.detuning().to_string());
    metadata.insert("intensity_ratio".into(), pair.intensity_ratio.to_string());
    metadata.insert("polarization_angle_rad".into(), pair.polarization_angle.to_string());
    metadata.insert("reference_coherence_time_s".into(), pair.reference.coherence_time().to_string());
    metadata.insert("test_coherence_time_s".into(), pair.test.coherence_time().to_string());

    Ok(Interferogram {
        delays: delays.to_vec(),
        kind: InterferogramKind::Analytic,
        probability,
        counts: Vec::new(),
        gates: Vec::new(),
        plateau: Some(plateau),
        metadata,
    })
}
