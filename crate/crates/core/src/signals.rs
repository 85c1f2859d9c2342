//! Excitation signals, noise, and spectra.
//!
//! All transforms use the unitary convention
//!
//! ```text
//! X(k) = 1/sqrt(N) * sum_t x(t) exp(-j 2 pi t k / N)
//! x(t) = 1/sqrt(N) * sum_k X(k) exp(+j 2 pi t k / N)
//! ```
//!
//! so a random-phase multisine with amplitude `U_k` has `|X(k)| = U_k` at its
//! excited bins.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::io::{BufRead, Write};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::Seed;
use crate::systems::RationalLTI;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn fft_in_place(buffer: &mut [Complex64], inverse: bool) {
    let n = buffer.len();
    PLANNER.with(|planner| {
        let fft = {
            let mut planner = planner.borrow_mut();
            if inverse {
                planner.plan_fft_inverse(n)
            } else {
                planner.plan_fft_forward(n)
            }
        };
        fft.process(buffer);
    });
    let scale = 1.0 / (n as f64).sqrt();
    for x in buffer.iter_mut() {
        *x *= scale;
    }
}

/// Description of a random-phase multisine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultisineSpec {
    samples_per_period: usize,
    sampling_frequency: f64,
    excited_bins: Vec<usize>,
    amplitudes: Vec<f64>,
    amplitude_bound: f64,
}

impl MultisineSpec {
    pub fn new(
        samples_per_period: usize,
        sampling_frequency: f64,
        excited_bins: Vec<usize>,
        amplitudes: Vec<f64>,
        amplitude_bound: f64,
    ) -> Result<Self> {
        if samples_per_period < 3 {
            return Err(Error::InvalidSpec(format!(
                "need at least 3 samples per period, got {samples_per_period}"
            )));
        }
        if !(sampling_frequency.is_finite() && sampling_frequency > 0.0) {
            return Err(Error::InvalidSpec(format!(
                "sampling frequency must be positive, got {sampling_frequency}"
            )));
        }
        if excited_bins.is_empty() {
            return Err(Error::InvalidSpec("no excited bins".into()));
        }
        if amplitudes.len() != excited_bins.len() {
            return Err(Error::LengthMismatch {
                expected: excited_bins.len(),
                actual: amplitudes.len(),
            });
        }
        if !amplitude_bound.is_finite() {
            return Err(Error::InvalidSpec("amplitude bound must be finite".into()));
        }
        let mut seen = vec![false; samples_per_period];
        for &k in &excited_bins {
            if k == 0 || 2 * k >= samples_per_period {
                return Err(Error::InvalidSpec(format!(
                    "bin {k} outside 1..{} (DC and Nyquist cannot be excited)",
                    samples_per_period.div_ceil(2)
                )));
            }
            if std::mem::replace(&mut seen[k], true) {
                return Err(Error::InvalidSpec(format!("bin {k} listed twice")));
            }
        }
        for &a in &amplitudes {
            if !(a.is_finite() && (0.0..=amplitude_bound).contains(&a)) {
                return Err(Error::InvalidSpec(format!(
                    "amplitude {a} outside [0, {amplitude_bound}]"
                )));
            }
        }
        Ok(MultisineSpec {
            samples_per_period,
            sampling_frequency,
            excited_bins,
            amplitudes,
            amplitude_bound,
        })
    }

    /// Equal amplitude on every listed bin.
    pub fn flat(
        samples_per_period: usize,
        sampling_frequency: f64,
        excited_bins: Vec<usize>,
        amplitude: f64,
    ) -> Result<Self> {
        let amplitudes = vec![amplitude; excited_bins.len()];
        Self::new(samples_per_period, sampling_frequency, excited_bins, amplitudes, amplitude)
    }

    /// Flat multisine scaled so that the time-domain RMS equals `rms`.
    pub fn flat_with_rms(
        samples_per_period: usize,
        sampling_frequency: f64,
        excited_bins: Vec<usize>,
        rms: f64,
    ) -> Result<Self> {
        let count = excited_bins.len().max(1) as f64;
        let amplitude = rms * (samples_per_period as f64 / (2.0 * count)).sqrt();
        Self::flat(samples_per_period, sampling_frequency, excited_bins, amplitude)
    }

    /// All bins `1..N/2` excited with equal amplitude: the periodic analogue of
    /// white Gaussian noise with standard deviation `rms`.
    pub fn full_band(samples_per_period: usize, sampling_frequency: f64, rms: f64) -> Result<Self> {
        let bins = (1..samples_per_period.div_ceil(2)).collect();
        Self::flat_with_rms(samples_per_period, sampling_frequency, bins, rms)
    }

    pub fn samples_per_period(&self) -> usize {
        self.samples_per_period
    }

    pub fn sampling_frequency(&self) -> f64 {
        self.sampling_frequency
    }

    pub fn excited_bins(&self) -> &[usize] {
        &self.excited_bins
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    pub fn amplitude_bound(&self) -> f64 {
        self.amplitude_bound
    }

    /// Time-domain RMS value, independent of the phase realization.
    pub fn rms(&self) -> f64 {
        let power: f64 = self.amplitudes.iter().map(|a| 2.0 * a * a).sum();
        (power / self.samples_per_period as f64).sqrt()
    }

    /// `|U(k)|^2` on the full bin grid (zero on unexcited bins, mirrored on
    /// negative frequencies).
    pub fn power_spectrum(&self) -> Vec<f64> {
        let n = self.samples_per_period;
        let mut power = vec![0.0; n];
        for (&k, &a) in self.excited_bins.iter().zip(&self.amplitudes) {
            power[k] = a * a;
            power[n - k] = a * a;
        }
        power
    }
}

/// A sampled record consisting of `P` periods of `N` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicSignal {
    samples: Vec<f64>,
    samples_per_period: usize,
    sampling_frequency: f64,
}

impl PeriodicSignal {
    pub fn new(samples: Vec<f64>, samples_per_period: usize, sampling_frequency: f64) -> Result<Self> {
        if samples_per_period == 0 || samples.is_empty() || samples.len() % samples_per_period != 0 {
            return Err(Error::LengthMismatch {
                expected: samples_per_period.max(1) * (samples.len() / samples_per_period.max(1)).max(1),
                actual: samples.len(),
            });
        }
        Ok(PeriodicSignal {
            samples,
            samples_per_period,
            sampling_frequency,
        })
    }

    /// Repeats a single period `periods` times.
    pub fn from_period(period: &[f64], periods: usize, sampling_frequency: f64) -> Result<Self> {
        let samples = period.repeat(periods);
        Self::new(samples, period.len(), sampling_frequency)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples_per_period(&self) -> usize {
        self.samples_per_period
    }

    pub fn period_count(&self) -> usize {
        self.samples.len() / self.samples_per_period
    }

    pub fn sampling_frequency(&self) -> f64 {
        self.sampling_frequency
    }

    pub fn period(&self, p: usize) -> &[f64] {
        let n = self.samples_per_period;
        &self.samples[p * n..(p + 1) * n]
    }

    pub fn periods(&self) -> impl Iterator<Item = &[f64]> {
        self.samples.chunks_exact(self.samples_per_period)
    }

    /// The same first period repeated `periods` times.
    pub fn repeat(&self, periods: usize) -> PeriodicSignal {
        PeriodicSignal {
            samples: self.period(0).repeat(periods),
            samples_per_period: self.samples_per_period,
            sampling_frequency: self.sampling_frequency,
        }
    }

    /// DFT of period `p`.
    pub fn period_spectrum(&self, p: usize) -> Spectrum {
        dft(self.period(p), self.sampling_frequency)
    }
}

/// Complex DFT values on the grid `f_k = k f_s / N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    bins: Vec<Complex64>,
    sampling_frequency: f64,
}

impl Spectrum {
    pub fn new(bins: Vec<Complex64>, sampling_frequency: f64) -> Self {
        Spectrum {
            bins,
            sampling_frequency,
        }
    }

    pub fn bins(&self) -> &[Complex64] {
        &self.bins
    }

    pub fn bins_mut(&mut self) -> &mut [Complex64] {
        &mut self.bins
    }

    pub fn samples_per_period(&self) -> usize {
        self.bins.len()
    }

    pub fn sampling_frequency(&self) -> f64 {
        self.sampling_frequency
    }

    pub fn frequency(&self, k: usize) -> f64 {
        bin_frequency(k, self.bins.len(), self.sampling_frequency)
    }

    pub fn same_grid(&self, other: &Spectrum) -> bool {
        self.bins.len() == other.bins.len() && self.sampling_frequency == other.sampling_frequency
    }
}

impl std::ops::Index<usize> for Spectrum {
    type Output = Complex64;

    fn index(&self, k: usize) -> &Complex64 {
        &self.bins[k]
    }
}

pub fn bin_frequency(k: usize, samples_per_period: usize, sampling_frequency: f64) -> f64 {
    k as f64 * sampling_frequency / samples_per_period as f64
}

/// Draws one phase per excited bin, uniform on `[0, 2 pi)`.
pub fn random_phases(spec: &MultisineSpec, seed: Seed) -> Vec<f64> {
    let mut rng = seed.rng();
    spec.excited_bins
        .iter()
        .map(|_| rng.random_range(0.0..2.0 * PI))
        .collect()
}

/// One period of `u(t) = 1/sqrt(N) sum_k 2 U_k cos(2 pi k t / N + phi_k)`.
pub fn multisine_with_phases(spec: &MultisineSpec, phases: &[f64]) -> Result<PeriodicSignal> {
    if phases.len() != spec.excited_bins.len() {
        return Err(Error::LengthMismatch {
            expected: spec.excited_bins.len(),
            actual: phases.len(),
        });
    }
    let n = spec.samples_per_period;
    let mut spectrum = vec![Complex64::new(0.0, 0.0); n];
    for ((&k, &a), &phi) in spec.excited_bins.iter().zip(&spec.amplitudes).zip(phases) {
        let x = Complex64::from_polar(a, phi);
        spectrum[k] = x;
        spectrum[n - k] = x.conj();
    }
    let samples = inverse_dft(&Spectrum::new(spectrum, spec.sampling_frequency));
    PeriodicSignal::new(samples, n, spec.sampling_frequency)
}

/// One period (`P = 1`) of a random-phase multisine.
pub fn generate_multisine(spec: &MultisineSpec, seed: Seed) -> Result<PeriodicSignal> {
    let phases = random_phases(spec, seed);
    multisine_with_phases(spec, &phases)
}

/// Unitary forward DFT of one period.
pub fn dft(samples: &[f64], sampling_frequency: f64) -> Spectrum {
    let mut buffer: Vec<Complex64> = samples.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    let n = buffer.len();
    if n > 0 {
        fft_in_place(&mut buffer, false);
        // real input: enforce exact Hermitian symmetry
        buffer[0].im = 0.0;
        if n % 2 == 0 {
            buffer[n / 2].im = 0.0;
        }
        for k in 1..n.div_ceil(2) {
            buffer[n - k] = buffer[k].conj();
        }
    }
    Spectrum::new(buffer, sampling_frequency)
}

/// Unitary forward DFT of a complex sequence.
pub fn dft_complex(samples: &[Complex64], sampling_frequency: f64) -> Spectrum {
    let mut buffer = samples.to_vec();
    if !buffer.is_empty() {
        fft_in_place(&mut buffer, false);
    }
    Spectrum::new(buffer, sampling_frequency)
}

/// Unitary inverse DFT, complex result.
pub fn inverse_dft_complex(spectrum: &Spectrum) -> Vec<Complex64> {
    let mut buffer = spectrum.bins.clone();
    if !buffer.is_empty() {
        fft_in_place(&mut buffer, true);
    }
    buffer
}

/// Unitary inverse DFT keeping the real part (spectra of real signals).
pub fn inverse_dft(spectrum: &Spectrum) -> Vec<f64> {
    inverse_dft_complex(spectrum).into_iter().map(|x| x.re).collect()
}

/// Zero-mean Gaussian noise with the given driving variance, optionally
/// shaped by a stable coloring filter.
///
/// When a coloring filter is given, `max(10 tau, 1000)` samples are generated
/// and discarded first (tau being the filter time constant in samples) so the
/// returned sequence is stationary. The variance refers to the white driving
/// sequence.
pub fn generate_noise(
    variance: f64,
    coloring: Option<&RationalLTI>,
    length: usize,
    seed: Seed,
) -> Result<Vec<f64>> {
    if !(variance.is_finite() && variance >= 0.0) {
        return Err(Error::InvalidSpec(format!("noise variance must be finite and >= 0, got {variance}")));
    }
    if variance == 0.0 {
        return Ok(vec![0.0; length]);
    }
    let normal = Normal::new(0.0, variance.sqrt()).expect("finite positive std");
    let mut rng = seed.rng();
    match coloring {
        None => Ok((0..length).map(|_| normal.sample(&mut rng)).collect()),
        Some(filter) => {
            let warmup = noise_warmup(filter);
            let white: Vec<f64> = (0..warmup + length).map(|_| normal.sample(&mut rng)).collect();
            let mut colored = filter.filter(&white);
            Ok(colored.split_off(warmup))
        }
    }
}

pub(crate) fn noise_warmup(filter: &RationalLTI) -> usize {
    let tau = filter.time_constant();
    ((10.0 * tau).ceil() as usize).max(1000)
}

fn check_grids(x: &[Spectrum], y: &[Spectrum]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    if x.is_empty() {
        return Err(Error::InvalidRecord("no spectra supplied".into()));
    }
    let reference = &x[0];
    if x.iter().chain(y).any(|s| !s.same_grid(reference)) {
        return Err(Error::GridMismatch);
    }
    Ok(())
}

/// Record-averaged `Y(k) conj(X(k))`.
pub fn cross_power_spectrum(x_records: &[Spectrum], y_records: &[Spectrum]) -> Result<Vec<Complex64>> {
    check_grids(x_records, y_records)?;
    let n = x_records[0].samples_per_period();
    let mut acc = vec![Complex64::new(0.0, 0.0); n];
    for (x, y) in x_records.iter().zip(y_records) {
        for (a, (xk, yk)) in acc.iter_mut().zip(x.bins.iter().zip(&y.bins)) {
            *a += yk * xk.conj();
        }
    }
    let scale = 1.0 / x_records.len() as f64;
    Ok(acc.into_iter().map(|a| a * scale).collect())
}

/// Record-averaged `|X(k)|^2`.
pub fn auto_power_spectrum(records: &[Spectrum]) -> Result<Vec<f64>> {
    check_grids(records, records)?;
    let n = records[0].samples_per_period();
    let mut acc = vec![0.0; n];
    for x in records {
        for (a, xk) in acc.iter_mut().zip(&x.bins) {
            *a += xk.norm_sqr();
        }
    }
    let scale = 1.0 / records.len() as f64;
    Ok(acc.into_iter().map(|a| a * scale).collect())
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_f64(field: &str, line: usize) -> Result<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("line {line}: bad number {field:?}")))
}

pub const SIGNAL_CSV_HEADER: &str = "sample_index,time_s,value";
pub const SPECTRUM_CSV_HEADER: &str = "bin_index,frequency_hz,real,imag";

pub fn write_signal_csv<W: Write>(mut w: W, signal: &PeriodicSignal) -> Result<()> {
    writeln!(w, "{SIGNAL_CSV_HEADER}")?;
    let dt = 1.0 / signal.sampling_frequency;
    for (t, &v) in signal.samples.iter().enumerate() {
        writeln!(w, "{t},{},{}", fmt_f64(t as f64 * dt), fmt_f64(v))?;
    }
    Ok(())
}

/// Reads a signal CSV; the sampling frequency is recovered from the time
/// column.
pub fn read_signal_csv<R: BufRead>(r: R, samples_per_period: usize) -> Result<PeriodicSignal> {
    let mut samples = Vec::new();
    let mut dt = None;
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line.trim() != SIGNAL_CSV_HEADER {
                return Err(Error::Parse(format!("unexpected header {line:?}")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::Parse(format!("line {}: expected 3 fields", i + 1)));
        }
        let time = parse_f64(fields[1], i + 1)?;
        if samples.len() == 1 {
            dt = Some(time);
        }
        samples.push(parse_f64(fields[2], i + 1)?);
    }
    let fs = match dt {
        Some(dt) if dt > 0.0 => 1.0 / dt,
        _ => 1.0,
    };
    PeriodicSignal::new(samples, samples_per_period, fs)
}

pub fn write_spectrum_csv<W: Write>(mut w: W, spectrum: &Spectrum) -> Result<()> {
    writeln!(w, "{SPECTRUM_CSV_HEADER}")?;
    for (k, x) in spectrum.bins.iter().enumerate() {
        writeln!(
            w,
            "{k},{},{},{}",
            fmt_f64(spectrum.frequency(k)),
            fmt_f64(x.re),
            fmt_f64(x.im)
        )?;
    }
    Ok(())
}

pub fn read_spectrum_csv<R: BufRead>(r: R, sampling_frequency: f64) -> Result<Spectrum> {
    let mut bins = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line.trim() != SPECTRUM_CSV_HEADER {
                return Err(Error::Parse(format!("unexpected header {line:?}")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::Parse(format!("line {}: expected 4 fields", i + 1)));
        }
        let k: usize = fields[0]
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("line {}: bad bin index", i + 1)))?;
        if k != bins.len() {
            return Err(Error::Parse(format!("line {}: bins out of order", i + 1)));
        }
        bins.push(Complex64::new(parse_f64(fields[2], i + 1)?, parse_f64(fields[3], i + 1)?));
    }
    Ok(Spectrum::new(bins, sampling_frequency))
}

pub(crate) fn fmt_float(v: f64) -> String {
    fmt_f64(v)
}
