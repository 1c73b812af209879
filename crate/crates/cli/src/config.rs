//! Run configuration: one TOML file per run, validated in full before any
//! computation starts.

use std::f64::consts::FRAC_PI_2;
use std::path::{Path, PathBuf};

use fewphoton::detector::{AcquisitionPlan, DetectorConfig};
use fewphoton::heterodyne::ClassicalBeatConfig;
use fewphoton::interference::SourcePair;
use fewphoton::spectral::Window;
use fewphoton::wavepacket::{apply_phase_modulation, make_gaussian, PhaseModulation, WavePacket, Waveform};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("{path}: {message}")]
    Field { path: String, message: String },
}

fn field_err(path: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        path: path.into(),
        message: message.into(),
    }
}

/// Prefixes a core parameter error with the section it came from.
fn in_section(section: &str) -> impl Fn(fewphoton::Error) -> ConfigError + '_ {
    move |e| match e {
        fewphoton::Error::InvalidParameter { name, reason } => field_err(format!("{section}.{name}"), reason),
        other => field_err(section, other.to_string()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModulationSpec {
    #[serde(default = "default_waveform")]
    pub waveform: Waveform,
    /// Drive frequency, Hz.
    pub frequency: f64,
    /// Peak phase excursion, rad.
    pub index: f64,
}

fn default_waveform() -> Waveform {
    Waveform::Sinusoid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    /// Offset from the reference carrier, Hz.
    pub center_frequency: f64,
    /// Seconds.
    pub coherence_time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modulation: Option<ModulationSpec>,
}

impl SourceSpec {
    pub fn packet(&self) -> fewphoton::Result<WavePacket> {
        let p = make_gaussian(self.center_frequency, self.coherence_time)?;
        match &self.modulation {
            Some(m) => apply_phase_modulation(p, m.waveform, m.frequency, m.index),
            None => Ok(p),
        }
    }

    pub fn modulation(&self) -> Option<PhaseModulation> {
        self.modulation.as_ref().map(|m| PhaseModulation {
            waveform: m.waveform,
            frequency: m.frequency,
            index: m.index,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModeMatching {
    pub intensity_ratio: f64,
    /// Radians, within [0, π/2].
    pub polarization_angle: f64,
}

impl Default for ModeMatching {
    fn default() -> Self {
        ModeMatching {
            intensity_ratio: 1.0,
            polarization_angle: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorSection {
    pub efficiency: f64,
    pub gate_width: f64,
    pub dark_count_prob: f64,
    pub gates_per_point: u64,
}

impl Default for DetectorSection {
    fn default() -> Self {
        let d = DetectorConfig::default();
        DetectorSection {
            efficiency: d.efficiency,
            gate_width: d.gate_width,
            dark_count_prob: d.dark_count_prob,
            gates_per_point: d.gates_per_point,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanSection {
    pub mu_ref: f64,
    pub mu_test: f64,
    pub delay_start: f64,
    pub delay_step: f64,
    pub delay_count: usize,
}

impl Default for PlanSection {
    fn default() -> Self {
        let p = AcquisitionPlan::default();
        PlanSection {
            mu_ref: p.mu_ref,
            mu_test: p.mu_test,
            delay_start: p.delay_start,
            delay_step: p.delay_step,
            delay_count: p.delay_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    /// `hann` or `rectangular`; defaults to Hann for counts and
    /// rectangular for analytic interferograms.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<String>,
    /// Wiener regularisation, relative to the kernel's peak transfer.
    pub noise_floor: f64,
    /// Reference carrier shift of the second run, Hz. Enables sign recovery.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_shift: Option<f64>,
    /// Metres.
    pub wavelength: f64,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            window: None,
            noise_floor: 1e-3,
            reference_shift: None,
            wavelength: 1547.32e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassicalSection {
    pub p_ref: f64,
    pub p_test: f64,
    pub noise_floor: f64,
    pub rin_level: f64,
    pub esa_span: f64,
    pub esa_points: usize,
    pub averages: u32,
}

impl Default for ClassicalSection {
    fn default() -> Self {
        let c = ClassicalBeatConfig::default();
        ClassicalSection {
            p_ref: c.p_ref,
            p_test: c.p_test,
            noise_floor: c.noise_floor,
            rin_level: c.rin_level,
            esa_span: c.esa_span,
            esa_points: c.esa_points,
            averages: c.averages,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FtsSection {
    /// Test detunings to sweep, Hz. Empty means the test source's own.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub beat_frequencies: Vec<f64>,
    /// Also run with the test modulator switched off.
    pub compare_unmodulated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EffectivenessSection {
    pub mu_values: Vec<f64>,
}

impl Default for EffectivenessSection {
    fn default() -> Self {
        // 0.01 … 10, three points per decade
        EffectivenessSection {
            mu_values: (0..=9).map(|k| 0.01 * 10f64.powf(k as f64 / 3.0)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurvesSection {
    pub ratio_max: f64,
    pub ratio_step: f64,
    pub angle_points: usize,
}

impl Default for CurvesSection {
    fn default() -> Self {
        CurvesSection {
            ratio_max: 1.0,
            ratio_step: 0.01,
            angle_points: 91,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_reference")]
    pub reference: SourceSpec,
    #[serde(default = "default_test")]
    pub test: SourceSpec,
    #[serde(default)]
    pub mode_matching: ModeMatching,
    #[serde(default)]
    pub detector: DetectorSection,
    #[serde(default)]
    pub plan: PlanSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub classical: ClassicalSection,
    #[serde(default)]
    pub fts: FtsSection,
    #[serde(default)]
    pub effectiveness: EffectivenessSection,
    #[serde(default)]
    pub curves: CurvesSection,
}

fn default_reference() -> SourceSpec {
    SourceSpec {
        center_frequency: 0.0,
        coherence_time: 200e-9,
        modulation: None,
    }
}

fn default_test() -> SourceSpec {
    SourceSpec {
        center_frequency: 40e6,
        coherence_time: 200e-9,
        modulation: None,
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            output_dir: None,
            seed: 0,
            reference: default_reference(),
            test: default_test(),
            mode_matching: ModeMatching::default(),
            detector: DetectorSection::default(),
            plan: PlanSection::default(),
            analysis: AnalysisSection::default(),
            classical: ClassicalSection::default(),
            fts: FtsSection::default(),
            effectiveness: EffectivenessSection::default(),
            curves: CurvesSection::default(),
        }
    }
}

/// Deserializes a table, reporting the dotted path of a bad field.
fn from_table<T: serde::de::DeserializeOwned>(table: toml::Table) -> Result<T, ConfigError> {
    serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
        let path = e.path().to_string();
        field_err(if path == "." { "config".to_string() } else { path }, e.into_inner().to_string())
    })
}

fn parse_table(text: &str) -> Result<toml::Table, ConfigError> {
    text.parse::<toml::Table>().map_err(|e| ConfigError::Syntax(e.to_string()))
}

impl RunConfig {
    /// Parses and validates.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = from_table(parse_table(text)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// Recovers the configuration recorded in a run's metadata sidecar.
    pub fn from_metadata_str(text: &str) -> Result<Self, ConfigError> {
        let mut table = parse_table(text)?;
        let config = match table.remove("config") {
            Some(toml::Value::Table(t)) => t,
            _ => return Err(field_err("config", "metadata has no [config] table")),
        };
        let cfg: RunConfig = from_table(config)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.pair()?;
        self.detector_config()?.validate().map_err(in_section("detector"))?;
        self.acquisition_plan().validate().map_err(in_section("plan"))?;
        self.classical_config().validate().map_err(in_section("classical"))?;
        self.window()?;
        let a = &self.analysis;
        if !(a.noise_floor > 0.0) || !a.noise_floor.is_finite() {
            return Err(field_err("analysis.noise_floor", format!("must be positive, got {}", a.noise_floor)));
        }
        if !(a.wavelength > 0.0) || !a.wavelength.is_finite() {
            return Err(field_err("analysis.wavelength", format!("must be positive, got {}", a.wavelength)));
        }
        if let Some(shift) = a.reference_shift {
            if !(shift > 0.0) || !shift.is_finite() {
                return Err(field_err("analysis.reference_shift", format!("must be positive, got {shift}")));
            }
        }
        for (k, f) in self.fts.beat_frequencies.iter().enumerate() {
            if !f.is_finite() || *f == 0.0 {
                return Err(field_err(
                    format!("fts.beat_frequencies[{k}]"),
                    format!("must be finite and non-zero, got {f}"),
                ));
            }
        }
        let mus = &self.effectiveness.mu_values;
        if mus.is_empty() {
            return Err(field_err("effectiveness.mu_values", "need at least one value"));
        }
        for (k, mu) in mus.iter().enumerate() {
            if !(*mu > 0.0) || !mu.is_finite() {
                return Err(field_err(
                    format!("effectiveness.mu_values[{k}]"),
                    format!("must be positive and finite, got {mu}"),
                ));
            }
            if k > 0 && *mu <= mus[k - 1] {
                return Err(field_err(format!("effectiveness.mu_values[{k}]"), "values must be strictly ascending"));
            }
        }
        let c = &self.curves;
        if !(c.ratio_max > 0.0) || !c.ratio_max.is_finite() {
            return Err(field_err("curves.ratio_max", format!("must be positive, got {}", c.ratio_max)));
        }
        if !(c.ratio_step > 0.0) || c.ratio_step > c.ratio_max {
            return Err(field_err(
                "curves.ratio_step",
                format!("must lie in (0, ratio_max], got {}", c.ratio_step),
            ));
        }
        if c.angle_points < 2 {
            return Err(field_err("curves.angle_points", "need at least two points"));
        }
        Ok(())
    }

    pub fn reference_packet(&self) -> Result<WavePacket, ConfigError> {
        self.reference.packet().map_err(in_section("reference"))
    }

    pub fn test_packet(&self) -> Result<WavePacket, ConfigError> {
        self.test.packet().map_err(in_section("test"))
    }

    pub fn pair(&self) -> Result<SourcePair, ConfigError> {
        self.pair_with(self.reference_packet()?, self.test_packet()?)
    }

    pub fn pair_with(&self, reference: WavePacket, test: WavePacket) -> Result<SourcePair, ConfigError> {
        let m = &self.mode_matching;
        SourcePair::new(reference, test, m.intensity_ratio, m.polarization_angle).map_err(in_section("mode_matching"))
    }

    pub fn detector_config(&self) -> Result<DetectorConfig, ConfigError> {
        let d = &self.detector;
        Ok(DetectorConfig {
            efficiency: d.efficiency,
            gate_width: d.gate_width,
            dark_count_prob: d.dark_count_prob,
            gates_per_point: d.gates_per_point,
            rng_seed: self.seed,
        })
    }

    pub fn acquisition_plan(&self) -> AcquisitionPlan {
        let p = &self.plan;
        AcquisitionPlan {
            mu_ref: p.mu_ref,
            mu_test: p.mu_test,
            delay_start: p.delay_start,
            delay_step: p.delay_step,
            delay_count: p.delay_count,
        }
    }

    pub fn classical_config(&self) -> ClassicalBeatConfig {
        let c = &self.classical;
        ClassicalBeatConfig {
            p_ref: c.p_ref,
            p_test: c.p_test,
            noise_floor: c.noise_floor,
            rin_level: c.rin_level,
            esa_span: c.esa_span,
            esa_points: c.esa_points,
            averages: c.averages,
            seed: self.seed,
        }
    }

    /// Explicit window, if one is configured.
    pub fn window(&self) -> Result<Option<Window>, ConfigError> {
        self.analysis
            .window
            .as_deref()
            .map(|w| w.parse::<Window>().map_err(in_section("analysis")))
            .transpose()
    }

    /// Ratio and angle grids of the visibility curves.
    pub fn curve_grids(&self) -> (Vec<f64>, Vec<f64>) {
        let c = &self.curves;
        let n = (c.ratio_max / c.ratio_step + 1e-9).floor() as usize;
        let ratios = (0..=n).map(|k| k as f64 * c.ratio_step).collect();
        let m = c.angle_points - 1;
        let angles = (0..=m).map(|k| FRAC_PI_2 * k as f64 / m as f64).collect();
        (ratios, angles)
    }
}
