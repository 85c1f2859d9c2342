//! BLA estimation from multi-realization, multi-period experiments, the
//! spectral BLA for Gaussian excitation, and the output decomposition by
//! controlled re-simulation.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{Seed, Stream};
use crate::signals::{
    auto_power_spectrum, bin_frequency, cross_power_spectrum, dft, fmt_float, inverse_dft, read_spectrum_csv,
    write_spectrum_csv, PeriodicSignal, Spectrum,
};
use crate::systems::NoisySimulator;

/// Spectra of an `M`-realization, `P`-period experiment.
///
/// `input[m]` is the excitation spectrum `U^[m]` (open loop) or the
/// period-averaged measured input (closed loop). Closed-loop records also
/// carry the reference `R^[m]` and the per-period inputs `U^[m,p]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    pub samples_per_period: usize,
    pub sampling_frequency: f64,
    pub excited_bins: Vec<usize>,
    pub input: Vec<Spectrum>,
    pub output: Vec<Vec<Spectrum>>,
    pub input_periods: Option<Vec<Vec<Spectrum>>>,
    pub reference: Option<Vec<Spectrum>>,
}

impl ExperimentRecord {
    pub fn realizations(&self) -> usize {
        self.input.len()
    }

    pub fn periods(&self) -> usize {
        self.output.first().map_or(0, Vec::len)
    }

    pub fn is_closed_loop(&self) -> bool {
        self.reference.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        let (m, p, n) = (self.realizations(), self.periods(), self.samples_per_period);
        if m < 2 || p < 2 {
            return Err(Error::InvalidRecord(format!("need M >= 2 and P >= 2, got M = {m}, P = {p}")));
        }
        if self.output.len() != m || self.output.iter().any(|o| o.len() != p) {
            return Err(Error::InvalidRecord("output spectra do not form an M x P array".into()));
        }
        if let Some(&k) = self.excited_bins.iter().find(|&&k| k == 0 || 2 * k >= n) {
            return Err(Error::InvalidRecord(format!("excited bin {k} outside 1..N/2")));
        }
        if self.reference.is_some() != self.input_periods.is_some() {
            return Err(Error::InvalidRecord("closed-loop records need both R and per-period U".into()));
        }
        if let Some(r) = &self.reference {
            if r.len() != m {
                return Err(Error::InvalidRecord("one reference spectrum per realization expected".into()));
            }
        }
        if let Some(u) = &self.input_periods {
            if u.len() != m || u.iter().any(|row| row.len() != p) {
                return Err(Error::InvalidRecord("per-period inputs do not form an M x P array".into()));
            }
        }
        let grid_ok = |s: &Spectrum| s.samples_per_period() == n && s.sampling_frequency() == self.sampling_frequency;
        let all = self
            .input
            .iter()
            .chain(self.output.iter().flatten())
            .chain(self.input_periods.iter().flatten().flatten())
            .chain(self.reference.iter().flatten());
        for s in all {
            if !grid_ok(s) {
                return Err(Error::GridMismatch);
            }
        }
        Ok(())
    }
}

/// One excited bin of a BLA estimate. Undefined bins hold NaN.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlaBin {
    pub index: usize,
    pub frequency_hz: f64,
    pub g: Complex64,
    pub var_noise: f64,
    pub var_total: f64,
    pub defined: bool,
}

impl BlaBin {
    fn undefined(index: usize, frequency_hz: f64) -> Self {
        BlaBin {
            index,
            frequency_hz,
            g: Complex64::new(f64::NAN, f64::NAN),
            var_noise: f64::NAN,
            var_total: f64::NAN,
            defined: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlaEstimate {
    pub realizations: usize,
    pub periods: usize,
    pub samples_per_period: usize,
    pub sampling_frequency: f64,
    pub bins: Vec<BlaBin>,
}

impl BlaEstimate {
    pub fn defined_bins(&self) -> impl Iterator<Item = &BlaBin> {
        self.bins.iter().filter(|b| b.defined)
    }
}

fn mean(values: &[Complex64]) -> Complex64 {
    values.iter().sum::<Complex64>() / values.len() as f64
}

/// The sample-variance pair from per-realization estimates `G^[m]` and the
/// per-period estimates `G^[m,p]`.
fn robust_variances(per_realization: &[Complex64], per_period: &[Vec<Complex64>], g: Complex64) -> (f64, f64) {
    let m = per_realization.len() as f64;
    let p = per_period[0].len() as f64;
    let within: f64 = per_realization
        .iter()
        .zip(per_period)
        .map(|(gm, row)| row.iter().map(|gmp| (gm - gmp).norm_sqr()).sum::<f64>())
        .sum();
    let between: f64 = per_realization.iter().map(|gm| (g - gm).norm_sqr()).sum();
    (within / (m * m * p * (p - 1.0)), between / (m * (m - 1.0)))
}

/// Robust BLA: `G^[m,p] = Y^[m,p] / U^[m]`, averaged over periods then
/// realizations, with the noise and total sample variances of the mean.
pub fn robust_bla(record: &ExperimentRecord) -> Result<BlaEstimate> {
    record.validate()?;
    let n = record.samples_per_period;
    let bins = record
        .excited_bins
        .par_iter()
        .map(|&k| {
            let freq = bin_frequency(k, n, record.sampling_frequency);
            if record.input.iter().any(|u| u[k].norm_sqr() == 0.0) {
                return BlaBin::undefined(k, freq);
            }
            let per_period: Vec<Vec<Complex64>> = record
                .input
                .iter()
                .zip(&record.output)
                .map(|(u, ys)| ys.iter().map(|y| y[k] / u[k]).collect())
                .collect();
            let per_realization: Vec<Complex64> = per_period.iter().map(|row| mean(row)).collect();
            let g = mean(&per_realization);
            let (var_noise, var_total) = robust_variances(&per_realization, &per_period, g);
            BlaBin {
                index: k,
                frequency_hz: freq,
                g,
                var_noise,
                var_total,
                defined: true,
            }
        })
        .collect();
    Ok(BlaEstimate {
        realizations: record.realizations(),
        periods: record.periods(),
        samples_per_period: n,
        sampling_frequency: record.sampling_frequency,
        bins,
    })
}

/// Indirect closed-loop BLA `G^[m] = (Ybar R*) / (Ubar R*)` with per-period
/// ratios `(Y^[m,p] R*) / (U^[m,p] R*)` entering the sample variances.
pub fn robust_bla_closed_loop(record: &ExperimentRecord) -> Result<BlaEstimate> {
    record.validate()?;
    let (Some(reference), Some(inputs)) = (&record.reference, &record.input_periods) else {
        return Err(Error::InvalidRecord("closed-loop estimation needs R and per-period U".into()));
    };
    let n = record.samples_per_period;
    let p = record.periods() as f64;
    let bins = record
        .excited_bins
        .par_iter()
        .map(|&k| {
            let freq = bin_frequency(k, n, record.sampling_frequency);
            let mut per_realization = Vec::with_capacity(record.realizations());
            let mut per_period = Vec::with_capacity(record.realizations());
            for ((r, us), ys) in reference.iter().zip(inputs).zip(&record.output) {
                let rc = r[k].conj();
                let u_bar = us.iter().map(|u| u[k]).sum::<Complex64>() / p;
                let y_bar = ys.iter().map(|y| y[k]).sum::<Complex64>() / p;
                let den = u_bar * rc;
                if rc.norm_sqr() == 0.0 || den.norm_sqr() == 0.0 {
                    return BlaBin::undefined(k, freq);
                }
                let mut row = Vec::with_capacity(us.len());
                for (u, y) in us.iter().zip(ys) {
                    let d = u[k] * rc;
                    if d.norm_sqr() == 0.0 {
                        return BlaBin::undefined(k, freq);
                    }
                    row.push(y[k] * rc / d);
                }
                per_realization.push(y_bar * rc / den);
                per_period.push(row);
            }
            let g = mean(&per_realization);
            let (var_noise, var_total) = robust_variances(&per_realization, &per_period, g);
            BlaBin {
                index: k,
                frequency_hz: freq,
                g,
                var_noise,
                var_total,
                defined: true,
            }
        })
        .collect();
    Ok(BlaEstimate {
        realizations: record.realizations(),
        periods: record.periods(),
        samples_per_period: n,
        sampling_frequency: record.sampling_frequency,
        bins,
    })
}

/// Direct cross-power estimate `sum Y U* / sum |U|^2` over all periods of a
/// closed-loop record, ignoring the reference. Biased when the input is
/// correlated with the disturbances; provided as a comparator for the
/// indirect estimator.
pub fn naive_closed_loop_bla(record: &ExperimentRecord) -> Result<Vec<Option<Complex64>>> {
    record.validate()?;
    let inputs = record
        .input_periods
        .as_ref()
        .ok_or_else(|| Error::InvalidRecord("per-period inputs required".into()))?;
    let u: Vec<Spectrum> = inputs.iter().flatten().cloned().collect();
    let y: Vec<Spectrum> = record.output.iter().flatten().cloned().collect();
    let cross = cross_power_spectrum(&u, &y)?;
    let auto = auto_power_spectrum(&u)?;
    Ok(record
        .excited_bins
        .iter()
        .map(|&k| (auto[k] > 0.0).then(|| cross[k] / auto[k]))
        .collect())
}

/// Auto-power at or below this fraction of the peak is round-off from the
/// transform, i.e. an unexcited bin.
const ZERO_POWER_FLOOR: f64 = 1e-24;

/// `S_YU / S_UU` from record-averaged periodograms, on the full bin grid.
/// `None` where the auto-power vanishes.
pub fn spectral_bla(u_records: &[Spectrum], y_records: &[Spectrum]) -> Result<Vec<Option<Complex64>>> {
    if u_records.len() < 2 {
        return Err(Error::InvalidRecord(format!(
            "spectral BLA needs at least 2 records, got {}",
            u_records.len()
        )));
    }
    let cross = cross_power_spectrum(u_records, y_records)?;
    let auto = auto_power_spectrum(u_records)?;
    let floor = ZERO_POWER_FLOOR * auto.iter().cloned().fold(0.0, f64::max);
    Ok(cross
        .into_iter()
        .zip(auto)
        .map(|(c, a)| (a > floor).then(|| c / a))
        .collect())
}

/// Splits a long record into consecutive, non-overlapping segments of
/// `segment` samples and returns their spectra (any remainder is dropped).
pub fn segment_spectra(samples: &[f64], segment: usize, sampling_frequency: f64) -> Vec<Spectrum> {
    samples
        .chunks_exact(segment)
        .map(|chunk| dft(chunk, sampling_frequency))
        .collect()
}

/// Expected values of the two robust sample variances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictedVariances {
    pub noise: f64,
    pub total: f64,
}

/// `E{var_noise} = (s2_n + s2_p) / (M P |U|^2)` and
/// `E{var_total} = s2_s / (M |U|^2) + E{var_noise}` per bin; `None` where
/// `|U|^2 = 0`.
pub fn predict_variances(
    output_noise: &[f64],
    process_noise: &[f64],
    nonlinear: &[f64],
    input_power: &[f64],
    realizations: usize,
    periods: usize,
) -> Result<Vec<Option<PredictedVariances>>> {
    let len = input_power.len();
    for v in [output_noise, process_noise, nonlinear] {
        if v.len() != len {
            return Err(Error::LengthMismatch {
                expected: len,
                actual: v.len(),
            });
        }
    }
    if realizations == 0 || periods == 0 {
        return Err(Error::InvalidRecord("M and P must be positive".into()));
    }
    let all = output_noise.iter().chain(process_noise).chain(nonlinear).chain(input_power);
    if all.clone().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidRecord("variances and |U|^2 must be finite and >= 0".into()));
    }
    let (m, p) = (realizations as f64, periods as f64);
    Ok((0..len)
        .map(|k| {
            let u2 = input_power[k];
            (u2 > 0.0).then(|| {
                let noise = (output_noise[k] + process_noise[k]) / (m * p * u2);
                PredictedVariances {
                    noise,
                    total: nonlinear[k] / (m * u2) + noise,
                }
            })
        })
        .collect())
}

/// Four-way split of a measured output `y~ = y_bla + y_s + y_p + y_n`.
///
/// `y_bar` is the output with the output noise removed and `y_bar_bar` the
/// output averaged over process-noise realizations. The variance spectra are
/// per-period DFT-domain sample variances on the full bin grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub samples_per_period: usize,
    pub periods: usize,
    pub process_realizations: usize,
    pub y: Vec<f64>,
    pub y_bar: Vec<f64>,
    pub y_bar_bar: Vec<f64>,
    pub y_bla: Vec<f64>,
    pub y_s: Vec<f64>,
    pub y_p: Vec<f64>,
    pub y_n: Vec<f64>,
    pub var_nonlinear: Vec<f64>,
    pub var_process: Vec<f64>,
    pub var_output: Vec<f64>,
}

const ENSEMBLE_CHUNK: usize = 32;

/// Splits the output of `simulator` driven by `u` using `K_x` re-runs with
/// fresh process noise. `g_bla` is the BLA on the full `N`-bin grid.
pub fn decompose_output(
    simulator: &dyn NoisySimulator,
    u: &PeriodicSignal,
    process_realizations: usize,
    g_bla: &[Complex64],
    seed: Seed,
) -> Result<Decomposition> {
    if !simulator.controllable_noise() {
        return Err(Error::Unsupported("simulator does not expose controllable noise seeds".into()));
    }
    let n = u.samples_per_period();
    let periods = u.period_count();
    if g_bla.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            actual: g_bla.len(),
        });
    }
    if process_realizations < 100 {
        return Err(Error::Config(format!(
            "decomposition needs K_x >= 100 process-noise realizations, got {process_realizations}"
        )));
    }
    let fs = u.sampling_frequency();
    let process_seed = seed.stream(Stream::ProcessNoise);
    let y = simulator.simulate_output(u, Some(process_seed), Some(seed.stream(Stream::OutputNoise)))?;
    let y_bar = simulator.simulate_output(u, Some(process_seed), None)?;

    // Ensemble over fresh process-noise seeds: time-domain sum plus a
    // per-period Welford accumulator of the spectra, reduced in seed order.
    let len = u.len();
    let mut sum = vec![0.0; len];
    let mut spec_mean = vec![Complex64::new(0.0, 0.0); periods * n];
    let mut spec_m2 = vec![0.0; periods * n];
    let mut count = 0usize;
    let indices: Vec<usize> = (0..process_realizations).collect();
    for chunk in indices.chunks(ENSEMBLE_CHUNK) {
        let runs: Vec<PeriodicSignal> = chunk
            .par_iter()
            .map(|&i| simulator.simulate_output(u, Some(process_seed.child(i as u64 + 1)), None))
            .collect::<Result<_>>()?;
        for run in &runs {
            count += 1;
            for (s, v) in sum.iter_mut().zip(run.samples()) {
                *s += v;
            }
            for p in 0..periods {
                let spectrum = run.period_spectrum(p);
                for (k, x) in spectrum.bins().iter().enumerate() {
                    let idx = p * n + k;
                    let delta = x - spec_mean[idx];
                    spec_mean[idx] += delta / count as f64;
                    spec_m2[idx] += (delta.conj() * (x - spec_mean[idx])).re;
                }
            }
        }
    }
    let k_x = process_realizations as f64;
    let y_bar_bar: Vec<f64> = sum.iter().map(|s| s / k_x).collect();
    let mut var_process = vec![0.0; n];
    for p in 0..periods {
        for k in 0..n {
            var_process[k] += spec_m2[p * n + k] / ((k_x - 1.0) * periods as f64);
        }
    }

    let mut y_bla = Vec::with_capacity(len);
    for p in 0..periods {
        let mut spectrum = u.period_spectrum(p);
        for (x, g) in spectrum.bins_mut().iter_mut().zip(g_bla) {
            *x *= g;
        }
        y_bla.extend(inverse_dft(&spectrum));
    }
    let y_s: Vec<f64> = y_bar_bar.iter().zip(&y_bla).map(|(a, b)| a - b).collect();
    let y_p: Vec<f64> = y_bar.samples().iter().zip(&y_bar_bar).map(|(a, b)| a - b).collect();
    let y_n: Vec<f64> = y.samples().iter().zip(y_bar.samples()).map(|(a, b)| a - b).collect();

    let periodic_power = |x: &[f64]| -> Vec<f64> {
        let mut acc = vec![0.0; n];
        for period in x.chunks_exact(n) {
            for (a, b) in acc.iter_mut().zip(dft(period, fs).bins()) {
                *a += b.norm_sqr() / periods as f64;
            }
        }
        acc
    };
    let var_nonlinear = periodic_power(&y_s);
    let var_output = periodic_power(&y_n);
    Ok(Decomposition {
        samples_per_period: n,
        periods,
        process_realizations,
        y: y.into_samples(),
        y_bar: y_bar.into_samples(),
        y_bar_bar,
        y_bla,
        y_s,
        y_p,
        y_n,
        var_nonlinear,
        var_process,
        var_output,
    })
}

pub const BLA_CSV_HEADER: &str = "bin_index,frequency_hz,g_real,g_imag,var_noise,var_total,defined_flag";

pub fn write_bla_csv<W: Write>(mut w: W, estimate: &BlaEstimate) -> Result<()> {
    writeln!(w, "{BLA_CSV_HEADER}")?;
    for b in &estimate.bins {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            b.index,
            fmt_float(b.frequency_hz),
            fmt_float(b.g.re),
            fmt_float(b.g.im),
            fmt_float(b.var_noise),
            fmt_float(b.var_total),
            u8::from(b.defined)
        )?;
    }
    Ok(())
}

/// Reads the bins of a BLA result CSV.
pub fn read_bla_csv<R: BufRead>(r: R) -> Result<Vec<BlaBin>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line.trim() != BLA_CSV_HEADER {
                return Err(Error::Parse(format!("unexpected header {line:?}")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 7 {
            return Err(Error::Parse(format!("line {}: expected 7 fields", i + 1)));
        }
        let num = |j: usize| -> Result<f64> {
            fields[j]
                .parse()
                .map_err(|_| Error::Parse(format!("line {}: bad number {:?}", i + 1, fields[j])))
        };
        let index = fields[0]
            .parse()
            .map_err(|_| Error::Parse(format!("line {}: bad bin index", i + 1)))?;
        let defined = match fields[6] {
            "1" => true,
            "0" => false,
            other => return Err(Error::Parse(format!("line {}: bad defined flag {other:?}", i + 1))),
        };
        out.push(BlaBin {
            index,
            frequency_hz: num(1)?,
            g: Complex64::new(num(2)?, num(3)?),
            var_noise: num(4)?,
            var_total: num(5)?,
            defined,
        });
    }
    Ok(out)
}

/// Manifest of an experiment record bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    #[serde(rename = "M")]
    pub realizations: usize,
    #[serde(rename = "P")]
    pub periods: usize,
    #[serde(rename = "N")]
    pub samples_per_period: usize,
    pub sampling_frequency_hz: f64,
    pub excited_bins: Vec<usize>,
    pub closed_loop: bool,
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn write_spectrum_file(path: &Path, spectrum: &Spectrum) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_spectrum_csv(&mut w, spectrum)?;
    w.flush()?;
    Ok(())
}

fn read_spectrum_file(path: &Path, fs: f64) -> Result<Spectrum> {
    read_spectrum_csv(BufReader::new(File::open(path)?), fs)
}

/// Writes a record as `manifest.json` plus one spectrum CSV per
/// realization / period into `dir` (created if missing).
pub fn write_record_bundle(dir: &Path, record: &ExperimentRecord) -> Result<()> {
    record.validate()?;
    fs::create_dir_all(dir)?;
    let manifest = BundleManifest {
        realizations: record.realizations(),
        periods: record.periods(),
        samples_per_period: record.samples_per_period,
        sampling_frequency_hz: record.sampling_frequency,
        excited_bins: record.excited_bins.clone(),
        closed_loop: record.is_closed_loop(),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Parse(e.to_string()))?;
    fs::write(dir.join(MANIFEST_FILE), json + "\n")?;
    for (m, u) in record.input.iter().enumerate() {
        write_spectrum_file(&dir.join(format!("U_m{m:03}.csv")), u)?;
        for (p, y) in record.output[m].iter().enumerate() {
            write_spectrum_file(&dir.join(format!("Y_m{m:03}_p{p:03}.csv")), y)?;
        }
    }
    if let (Some(r), Some(us)) = (&record.reference, &record.input_periods) {
        for (m, (rm, row)) in r.iter().zip(us).enumerate() {
            write_spectrum_file(&dir.join(format!("R_m{m:03}.csv")), rm)?;
            for (p, u) in row.iter().enumerate() {
                write_spectrum_file(&dir.join(format!("U_m{m:03}_p{p:03}.csv")), u)?;
            }
        }
    }
    Ok(())
}

pub fn read_record_bundle(dir: &Path) -> Result<ExperimentRecord> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let manifest: BundleManifest = serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
    let fs_hz = manifest.sampling_frequency_hz;
    let mut input = Vec::with_capacity(manifest.realizations);
    let mut output = Vec::with_capacity(manifest.realizations);
    for m in 0..manifest.realizations {
        input.push(read_spectrum_file(&dir.join(format!("U_m{m:03}.csv")), fs_hz)?);
        let row = (0..manifest.periods)
            .map(|p| read_spectrum_file(&dir.join(format!("Y_m{m:03}_p{p:03}.csv")), fs_hz))
            .collect::<Result<Vec<_>>>()?;
        output.push(row);
    }
    let (reference, input_periods) = if manifest.closed_loop {
        let mut r = Vec::with_capacity(manifest.realizations);
        let mut us = Vec::with_capacity(manifest.realizations);
        for m in 0..manifest.realizations {
            r.push(read_spectrum_file(&dir.join(format!("R_m{m:03}.csv")), fs_hz)?);
            us.push(
                (0..manifest.periods)
                    .map(|p| read_spectrum_file(&dir.join(format!("U_m{m:03}_p{p:03}.csv")), fs_hz))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        (Some(r), Some(us))
    } else {
        (None, None)
    };
    let record = ExperimentRecord {
        samples_per_period: manifest.samples_per_period,
        sampling_frequency: fs_hz,
        excited_bins: manifest.excited_bins,
        input,
        output,
        input_periods,
        reference,
    };
    record.validate()?;
    Ok(record)
}
