//! The four subcommands. Each writes plot-ready CSV files and a
//! `metadata.toml` sidecar into a single output directory.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use fewphoton::detector::{effectiveness_sweep, fit_visibility, simulate_acquisition, substream_seed, DetectorConfig};
use fewphoton::heterodyne::{classical_effectiveness_sweep, gaussian_fit_r2, simulate_esa_spectrum};
use fewphoton::interference::{
    analytic_interferogram, central_lobe_halfwidth, ratio_from_polarization, visibility_from_ratio, Interferogram,
    InterferogramKind, SourcePair,
};
use fewphoton::io::{write_interferogram, write_spectrum};
use fewphoton::spectral::{
    beat_grid, beat_lineshape, check_unfolded, deconvolve_reference, fold_to_positive, fts_transform,
    resolve_ambiguity, FtsResult, Window,
};
use fewphoton::wavepacket::{spectrum_of, Spectrum, WavePacket};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::config::RunConfig;

pub const METADATA_FILE: &str = "metadata.toml";
pub const OUT_DIR_ENV: &str = "FEWPHOTON_OUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Interferogram,
    Fts,
    Effectiveness,
    VisibilityCurves,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Interferogram => "interferogram",
            Command::Fts => "fts",
            Command::Effectiveness => "effectiveness",
            Command::VisibilityCurves => "visibility-curves",
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Skip the Monte Carlo detector model.
    pub analytic_only: bool,
}

/// Contents of the sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub command: String,
    pub analytic_only: bool,
    pub files: Vec<String>,
    pub config: RunConfig,
    pub results: Table,
}

/// `--out`, then the environment override, then the config, then `./out`.
pub fn resolve_output_dir(flag: Option<&Path>, env: Option<&str>, cfg: &RunConfig) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = env.filter(|s| !s.is_empty()) {
        return PathBuf::from(p);
    }
    cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
}

struct Run<'a> {
    dir: &'a Path,
    files: Vec<String>,
    results: Table,
}

impl Run<'_> {
    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.dir.join(name);
        let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        self.files.push(name.to_string());
        Ok(BufWriter::new(f))
    }

    fn csv(&mut self, name: &str, header: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
        let mut w = self.create(name)?;
        writeln!(w, "{header}")?;
        for r in rows {
            writeln!(w, "{r}")?;
        }
        w.flush().with_context(|| format!("writing {name}"))?;
        Ok(())
    }

    fn interferogram(&mut self, name: &str, ig: &Interferogram) -> Result<()> {
        let mut w = self.create(name)?;
        write_interferogram(&mut w, ig).with_context(|| format!("writing {name}"))?;
        w.flush()?;
        Ok(())
    }

    fn spectrum(&mut self, name: &str, s: &Spectrum) -> Result<()> {
        let mut w = self.create(name)?;
        write_spectrum(&mut w, s).with_context(|| format!("writing {name}"))?;
        w.flush()?;
        Ok(())
    }
}

fn table(entries: impl IntoIterator<Item = (&'static str, Value)>) -> Value {
    Value::Table(entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect())
}

/// Runs `command` and writes its outputs into `out`. Returns the sidecar.
pub fn run(command: Command, cfg: &RunConfig, out: &Path, opts: RunOptions) -> Result<Metadata> {
    cfg.validate()?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut run = Run {
        dir: out,
        files: Vec::new(),
        results: Table::new(),
    };
    match command {
        Command::Interferogram => interferogram(cfg, opts, &mut run)?,
        Command::Fts => fts(cfg, opts, &mut run)?,
        Command::Effectiveness => effectiveness(cfg, opts, &mut run)?,
        Command::VisibilityCurves => visibility_curves(cfg, &mut run)?,
    }
    let meta = Metadata {
        command: command.name().to_string(),
        analytic_only: opts.analytic_only,
        files: run.files,
        config: cfg.clone(),
        results: run.results,
    };
    let text = toml::to_string(&meta).context("serializing metadata")?;
    std::fs::write(out.join(METADATA_FILE), text).context("writing metadata")?;
    Ok(meta)
}

fn fit_table(ig: &Interferogram) -> Result<Value> {
    let fit = fit_visibility(ig)?;
    Ok(table([
        ("visibility", Value::Float(fit.visibility)),
        ("visibility_std", Value::Float(fit.visibility_std)),
        ("beat_frequency", Value::Float(fit.beat_frequency)),
        ("plateau", Value::Float(fit.plateau)),
        ("envelope_width", Value::Float(fit.envelope_width)),
    ]))
}

fn interferogram(cfg: &RunConfig, opts: RunOptions, run: &mut Run) -> Result<()> {
    let pair = cfg.pair()?;
    let plan = cfg.acquisition_plan();
    let analytic = analytic_interferogram(&pair, &plan.delays(), &pair.default_grid()?)?;
    run.interferogram("interferogram_analytic.csv", &analytic)?;
    run.results.insert("analytic".into(), fit_table(&analytic)?);
    if !opts.analytic_only {
        let counts = simulate_acquisition(&pair, &cfg.detector_config()?, &plan).context("simulating acquisition")?;
        run.interferogram("interferogram_counts.csv", &counts)?;
        run.results.insert("counts".into(), fit_table(&counts)?);
        // the detector model's own curve, free of shot noise
        let model = Interferogram {
            kind: InterferogramKind::Analytic,
            counts: vec![],
            gates: vec![],
            ..counts
        };
        run.results.insert("detector_model".into(), fit_table(&model)?);
    }
    Ok(())
}

fn acquire(pair: &SourcePair, cfg: &RunConfig, opts: RunOptions, seed: u64) -> Result<Interferogram> {
    let plan = cfg.acquisition_plan();
    if opts.analytic_only {
        Ok(analytic_interferogram(pair, &plan.delays(), &pair.default_grid()?)?)
    } else {
        let det = DetectorConfig {
            rng_seed: seed,
            ..cfg.detector_config()?
        };
        Ok(simulate_acquisition(pair, &det, &plan)?)
    }
}

fn transform(ig: &Interferogram, cfg: &RunConfig) -> Result<FtsResult> {
    let window = cfg.window()?.unwrap_or_else(|| Window::default_for(ig.kind));
    Ok(fts_transform(ig, window)?)
}

fn label(detuning: f64, modulated: Option<bool>) -> String {
    let base = format!("{}MHz", detuning / 1e6);
    match modulated {
        None => base,
        Some(true) => format!("{base}_modulated"),
        Some(false) => format!("{base}_unmodulated"),
    }
}

fn peak_normalized(s: &Spectrum, f: f64) -> f64 {
    let peak = s.peak_value();
    if peak > 0.0 {
        s.interpolate(f) / peak
    } else {
        0.0
    }
}

/// Full 1/e width of the beat line, ignoring the bins within one
/// resolution cell of DC.
fn line_width(r: &FtsResult) -> f64 {
    let s = &r.beat_spectrum;
    let skip = ((r.resolution / s.f_step).ceil() as usize).min(s.len());
    let mut values = s.values.clone();
    values[..skip].iter_mut().for_each(|v| *v = 0.0);
    Spectrum { values, ..s.clone() }.full_width_1e()
}

fn fts(cfg: &RunConfig, opts: RunOptions, run: &mut Run) -> Result<()> {
    let reference = cfg.reference_packet()?;
    let test = cfg.test_packet()?;
    let detunings = if cfg.fts.beat_frequencies.is_empty() {
        vec![test.center_frequency() - reference.center_frequency()]
    } else {
        cfg.fts.beat_frequencies.clone()
    };
    let mut variants: Vec<(WavePacket, Option<bool>)> = vec![(test, test.modulation().map(|_| true))];
    if cfg.fts.compare_unmodulated && test.modulation().is_some() {
        let plain = fewphoton::wavepacket::make_gaussian(test.center_frequency(), test.coherence_time())?;
        variants.push((plain, Some(false)));
    }
    let classical = cfg.classical_config();
    let mut index = 0u64;
    for &detuning in &detunings {
        for &(packet, modulated) in &variants {
            let name = label(detuning, modulated);
            let test_i = packet.with_center_frequency(reference.center_frequency() + detuning);
            let pair = cfg.pair_with(reference, test_i)?;
            let ig = acquire(&pair, cfg, opts, substream_seed(cfg.seed, 2 * index))
                .with_context(|| format!("run {name}"))?;
            let r = transform(&ig, cfg).with_context(|| format!("transforming run {name}"))?;
            let grid = beat_grid(&pair)?;
            let ref_spectrum = spectrum_of(&reference, &grid)?;
            let d = deconvolve_reference(&r, &ref_spectrum, cfg.analysis.noise_floor)
                .with_context(|| format!("deconvolving run {name}"))?;
            let recovered = d.test_spectrum.clone().expect("deconvolution sets the test spectrum");
            let truth_test = spectrum_of(&test_i, &grid)?.shifted(-test_i.center_frequency()).normalized_area();
            let esa = simulate_esa_spectrum(&pair, &classical).with_context(|| format!("analyser run {name}"))?;
            let beat_truth = fold_to_positive(&beat_lineshape(&pair, &grid)?, esa.f_start, esa.f_step, esa.len());

            run.spectrum(&format!("{name}_fts_beat.csv"), &r.beat_spectrum)?;
            run.spectrum(&format!("{name}_fts_test.csv"), &recovered)?;
            run.spectrum(&format!("{name}_test_truth.csv"), &truth_test)?;
            run.spectrum(&format!("{name}_esa.csv"), &esa)?;
            let rows: Vec<String> = (0..esa.len())
                .map(|k| {
                    let f = esa.frequency(k);
                    format!(
                        "{},{},{},{}",
                        f,
                        peak_normalized(&r.beat_spectrum, f),
                        peak_normalized(&esa, f),
                        peak_normalized(&beat_truth, f)
                    )
                })
                .collect();
            run.csv(&format!("{name}_overlay.csv"), "frequency_hz,fts,esa,truth", rows)?;

            // judged on the configured source: the recovered trace carries noise wings
            let unfold = check_unfolded(r.beat_frequency, truth_test.full_width_1e());
            if !unfold.unfolded {
                log::warn!("{name}: {}", unfold.diagnostic);
            }
            let max_delay = cfg.plan.delay_step * (cfg.plan.delay_count - 1) as f64 / 2.0;
            let halfwidth = central_lobe_halfwidth(&pair, max_delay, cfg.plan.delay_step, &pair.default_grid()?)?;
            let mut entry = Table::new();
            entry.insert("true_beat".into(), Value::Float(detuning.abs()));
            entry.insert("beat_frequency".into(), Value::Float(r.beat_frequency));
            entry.insert("bin_width".into(), Value::Float(r.beat_spectrum.f_step));
            entry.insert("resolution".into(), Value::Float(r.resolution));
            entry.insert(
                "peak_error_bins".into(),
                Value::Float((r.beat_frequency - detuning.abs()).abs() / r.beat_spectrum.f_step),
            );
            entry.insert("window".into(), Value::String(r.window.to_string()));
            entry.insert("beat_width_1e".into(), Value::Float(line_width(&r)));
            entry.insert("test_width_1e".into(), Value::Float(recovered.full_width_1e()));
            entry.insert("true_test_width_1e".into(), Value::Float(truth_test.full_width_1e()));
            entry.insert("coherence_halfwidth".into(), Value::Float(halfwidth));
            entry.insert("unfolded".into(), Value::Boolean(unfold.unfolded));
            entry.insert("esa_peak_frequency".into(), Value::Float(esa.peak_frequency().unwrap_or(f64::NAN)));
            if let Ok(fit) = gaussian_fit_r2(&esa) {
                entry.insert("esa_r_squared".into(), Value::Float(fit.r_squared));
            }
            if let Some(shift) = cfg.analysis.reference_shift {
                let shifted_ref = reference.with_center_frequency(reference.center_frequency() + shift);
                let pair_b = cfg.pair_with(shifted_ref, test_i)?;
                let ig_b = acquire(&pair_b, cfg, opts, substream_seed(cfg.seed, 2 * index + 1))
                    .with_context(|| format!("shifted run {name}"))?;
                let r_b = transform(&ig_b, cfg)?;
                let signed = resolve_ambiguity(&r, &r_b, shift).with_context(|| format!("resolving sign of {name}"))?;
                entry.insert("shifted_beat_frequency".into(), Value::Float(r_b.beat_frequency));
                entry.insert("signed_frequency".into(), Value::Float(signed));
            }
            run.results.insert(name, Value::Table(entry));
            index += 1;
        }
    }
    Ok(())
}

fn effectiveness(cfg: &RunConfig, opts: RunOptions, run: &mut Run) -> Result<()> {
    let pair = cfg.pair()?;
    let det = cfg.detector_config()?;
    let mus = &cfg.effectiveness.mu_values;
    if !opts.analytic_only {
        let rows = effectiveness_sweep(&pair, &det, mus, &cfg.acquisition_plan()).context("visibility sweep")?;
        run.csv(
            "effectiveness_fts.csv",
            "mu,visibility,visibility_std",
            rows.iter().map(|r| format!("{},{},{}", r.mu, r.visibility, r.visibility_std)),
        )?;
    }
    let classical = classical_effectiveness_sweep(
        &pair,
        &cfg.classical_config(),
        mus,
        cfg.analysis.wavelength,
        det.gate_width,
    )
    .context("classical sweep")?;
    run.csv(
        "effectiveness_classical.csv",
        "mu,r_squared",
        classical.iter().map(|r| format!("{},{}", r.mu, r.r_squared)),
    )?;
    // lowest flux from which the analyser line fits reasonably
    if let Some(row) = classical.iter().find(|r| r.r_squared >= 0.5) {
        run.results.insert("classical_threshold_mu".into(), Value::Float(row.mu));
        run.results.insert("classical_threshold_power_w".into(), Value::Float(row.p_test));
    }
    Ok(())
}

fn visibility_curves(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let (ratios, angles) = cfg.curve_grids();
    let by_ratio: Vec<(f64, f64)> = ratios
        .iter()
        .map(|&r| Ok((r, visibility_from_ratio(r)?)))
        .collect::<fewphoton::Result<_>>()?;
    let by_angle: Vec<(f64, f64)> = angles
        .iter()
        .map(|&t| Ok((t, visibility_from_ratio(ratio_from_polarization(t)?)?)))
        .collect::<fewphoton::Result<_>>()?;
    run.csv("visibility_ratio.csv", "ratio,visibility", by_ratio.iter().map(|(r, v)| format!("{r},{v}")))?;
    run.csv("visibility_angle.csv", "angle_rad,visibility", by_angle.iter().map(|(t, v)| format!("{t},{v}")))?;
    let (peak_r, peak_v) = by_ratio.iter().copied().fold((0.0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
    run.results.insert("peak_ratio".into(), Value::Float(peak_r));
    run.results.insert("peak_visibility".into(), Value::Float(peak_v));
    let pol = |t: f64| -> Result<f64> { Ok(visibility_from_ratio(ratio_from_polarization(t)?)?) };
    let pi = std::f64::consts::PI;
    run.results.insert(
        "tolerance".into(),
        table([
            ("ratio_0_8", Value::Float(visibility_from_ratio(0.8)?)),
            ("angle_0_1pi", Value::Float(pol(0.1 * pi)?)),
            ("angle_0_2pi", Value::Float(pol(0.2 * pi)?)),
        ]),
    );
    Ok(())
}
