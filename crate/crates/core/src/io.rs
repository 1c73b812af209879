//! CSV encoding of interferograms and spectra.
//!
//! Floats are written with Rust's shortest round-trip formatting, so every
//! written number reads back exactly and identical inputs give identical
//! bytes. A spectrum's uniform axis is re-derived from the written
//! frequencies and therefore agrees with the original to rounding.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::interference::{Interferogram, InterferogramKind};
use crate::wavepacket::Spectrum;

pub const INTERFEROGRAM_HEADER: &str = "delay_s,counts,gates,probability";
pub const SPECTRUM_HEADER: &str = "frequency_hz,power_au";

fn io_err(e: std::io::Error) -> Error {
    Error::InvalidInput(format!("i/o: {e}"))
}

/// Analytic rows leave `counts` and `gates` empty.
pub fn write_interferogram<W: Write>(mut out: W, ig: &Interferogram) -> Result<()> {
    ig.validate()?;
    writeln!(out, "{INTERFEROGRAM_HEADER}").map_err(io_err)?;
    for k in 0..ig.len() {
        let r = match ig.kind {
            InterferogramKind::Analytic => {
                writeln!(out, "{},,,{}", ig.delays[k], ig.probability[k])
            }
            InterferogramKind::Counts => writeln!(
                out,
                "{},{},{},{}",
                ig.delays[k], ig.counts[k], ig.gates[k], ig.probability[k]
            ),
        };
        r.map_err(io_err)?;
    }
    Ok(())
}

fn lines<R: BufRead>(input: R, header: &str) -> Result<Vec<(usize, String)>> {
    let mut rows = Vec::new();
    let mut seen_header = false;
    for (n, line) in input.lines().enumerate() {
        let line = line.map_err(io_err)?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if !seen_header {
            if line != header {
                return Err(Error::InvalidInput(format!("expected header `{header}`, got `{line}`")));
            }
            seen_header = true;
            continue;
        }
        rows.push((n + 1, line.to_string()));
    }
    if !seen_header {
        return Err(Error::InvalidInput("empty file".into()));
    }
    Ok(rows)
}

fn field<T: std::str::FromStr>(line: usize, name: &str, text: &str) -> Result<T> {
    text.trim()
        .parse()
        .map_err(|_| Error::InvalidInput(format!("line {line}: bad {name} `{text}`")))
}

pub fn read_interferogram<R: BufRead>(input: R) -> Result<Interferogram> {
    let rows = lines(input, INTERFEROGRAM_HEADER)?;
    let mut ig = Interferogram {
        delays: Vec::with_capacity(rows.len()),
        kind: InterferogramKind::Analytic,
        probability: Vec::with_capacity(rows.len()),
        counts: Vec::new(),
        gates: Vec::new(),
        plateau: None,
        metadata: BTreeMap::new(),
    };
    for (i, (n, row)) in rows.iter().enumerate() {
        let cols: Vec<&str> = row.split(',').collect();
        if cols.len() != 4 {
            return Err(Error::InvalidInput(format!("line {n}: expected 4 columns")));
        }
        let counted = !cols[1].trim().is_empty();
        if i == 0 && counted {
            ig.kind = InterferogramKind::Counts;
        }
        if counted != (ig.kind == InterferogramKind::Counts) {
            return Err(Error::InvalidInput(format!("line {n}: mixed analytic and counted rows")));
        }
        ig.delays.push(field(*n, "delay_s", cols[0])?);
        if counted {
            ig.counts.push(field(*n, "counts", cols[1])?);
            ig.gates.push(field(*n, "gates", cols[2])?);
        }
        ig.probability.push(field(*n, "probability", cols[3])?);
    }
    ig.validate()?;
    Ok(ig)
}

pub fn write_spectrum<W: Write>(mut out: W, s: &Spectrum) -> Result<()> {
    writeln!(out, "{SPECTRUM_HEADER}").map_err(io_err)?;
    for (k, v) in s.values.iter().enumerate() {
        writeln!(out, "{},{}", s.frequency(k), v).map_err(io_err)?;
    }
    Ok(())
}

/// Reads a uniformly spaced spectrum.
pub fn read_spectrum<R: BufRead>(input: R) -> Result<Spectrum> {
    let rows = lines(input, SPECTRUM_HEADER)?;
    let mut freqs = Vec::with_capacity(rows.len());
    let mut values = Vec::with_capacity(rows.len());
    for (n, row) in &rows {
        let (f, v) = row
            .split_once(',')
            .ok_or_else(|| Error::InvalidInput(format!("line {n}: expected 2 columns")))?;
        freqs.push(field::<f64>(*n, "frequency_hz", f)?);
        values.push(field::<f64>(*n, "power_au", v)?);
    }
    if freqs.len() < 2 {
        return Err(Error::InvalidInput("need at least two frequency rows".into()));
    }
    let step = crate::interference::uniform_step(&freqs)?;
    Spectrum::new(freqs[0], step, values)
}
