//! LTI blocks, static nonlinearities and the simulators built from them.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{Seed, Stream};
use crate::signals::{dft, generate_noise, inverse_dft, PeriodicSignal};
use crate::volterra::DualVolterraKernel;

/// Discrete-time rational transfer function `B(q^-1) / A(q^-1)` with
/// `a_0 = 1`. Only stable filters can be constructed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LtiCoefficients", into = "LtiCoefficients")]
pub struct RationalLTI {
    numerator: Vec<f64>,
    denominator: Vec<f64>,
    spectral_radius: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LtiCoefficients {
    pub numerator: Vec<f64>,
    #[serde(default = "unit_denominator")]
    pub denominator: Vec<f64>,
}

fn unit_denominator() -> Vec<f64> {
    vec![1.0]
}

impl TryFrom<LtiCoefficients> for RationalLTI {
    type Error = Error;

    fn try_from(c: LtiCoefficients) -> Result<Self> {
        RationalLTI::new(c.numerator, c.denominator)
    }
}

impl From<RationalLTI> for LtiCoefficients {
    fn from(lti: RationalLTI) -> Self {
        LtiCoefficients {
            numerator: lti.numerator,
            denominator: lti.denominator,
        }
    }
}

/// Largest pole magnitude of `1 + a_1 z^-1 + ... + a_n z^-n`.
fn spectral_radius(denominator: &[f64]) -> f64 {
    let order = denominator.len() - 1;
    if order == 0 {
        return 0.0;
    }
    let companion = DMatrix::from_fn(order, order, |i, j| {
        if i == 0 {
            -denominator[j + 1]
        } else if i == j + 1 {
            1.0
        } else {
            0.0
        }
    });
    companion
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

impl RationalLTI {
    pub fn new(numerator: Vec<f64>, mut denominator: Vec<f64>) -> Result<Self> {
        if numerator.is_empty() || denominator.is_empty() {
            return Err(Error::InvalidFilter("empty coefficient list".into()));
        }
        if numerator.iter().chain(&denominator).any(|c| !c.is_finite()) {
            return Err(Error::InvalidFilter("non-finite coefficient".into()));
        }
        while denominator.len() > 1 && denominator.last() == Some(&0.0) {
            denominator.pop();
        }
        let a0 = denominator[0];
        if a0 == 0.0 {
            return Err(Error::InvalidFilter("leading denominator coefficient is zero".into()));
        }
        let numerator: Vec<f64> = numerator.into_iter().map(|b| b / a0).collect();
        let denominator: Vec<f64> = denominator.into_iter().map(|a| a / a0).collect();
        let radius = spectral_radius(&denominator);
        if !(radius < 1.0) {
            return Err(Error::UnstableFilter { radius });
        }
        Ok(RationalLTI {
            numerator,
            denominator,
            spectral_radius: radius,
        })
    }

    pub fn fir(taps: Vec<f64>) -> Result<Self> {
        Self::new(taps, vec![1.0])
    }

    pub fn identity() -> Self {
        Self::gain(1.0)
    }

    pub fn gain(g: f64) -> Self {
        RationalLTI {
            numerator: vec![g],
            denominator: vec![1.0],
            spectral_radius: 0.0,
        }
    }

    /// `q^-d`.
    pub fn delay(samples: usize) -> Self {
        let mut numerator = vec![0.0; samples + 1];
        numerator[samples] = 1.0;
        RationalLTI {
            numerator,
            denominator: vec![1.0],
            spectral_radius: 0.0,
        }
    }

    pub fn numerator(&self) -> &[f64] {
        &self.numerator
    }

    pub fn denominator(&self) -> &[f64] {
        &self.denominator
    }

    pub fn spectral_radius(&self) -> f64 {
        self.spectral_radius
    }

    /// True when `b_0 = 0`, i.e. the output at `t` depends only on inputs
    /// before `t`.
    pub fn is_strictly_proper(&self) -> bool {
        self.numerator[0] == 0.0
    }

    pub fn is_zero(&self) -> bool {
        self.numerator.iter().all(|&b| b == 0.0)
    }

    /// Decay time constant in samples. FIR filters report their length.
    pub fn time_constant(&self) -> f64 {
        if self.spectral_radius == 0.0 {
            self.numerator.len().max(self.denominator.len()) as f64
        } else {
            -1.0 / self.spectral_radius.ln()
        }
    }

    /// `H(e^{j omega})` with `omega` in radians per sample.
    pub fn frequency_response(&self, omega: f64) -> Complex64 {
        let z_inv = Complex64::from_polar(1.0, -omega);
        let horner = |coefs: &[f64]| {
            coefs
                .iter()
                .rev()
                .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * z_inv + c)
        };
        horner(&self.numerator) / horner(&self.denominator)
    }

    /// Response at DFT bin `k` of an `n`-point grid.
    pub fn response_at_bin(&self, k: usize, n: usize) -> Complex64 {
        self.frequency_response(2.0 * PI * k as f64 / n as f64)
    }

    /// Responses on the full `n`-point bin grid.
    pub fn response_on_grid(&self, n: usize) -> Vec<Complex64> {
        (0..n).map(|k| self.response_at_bin(k, n)).collect()
    }

    pub fn state(&self) -> FilterState<'_> {
        let order = self.numerator.len().max(self.denominator.len()) - 1;
        FilterState {
            lti: self,
            state: vec![0.0; order],
        }
    }

    /// Time-domain recursion from zero initial conditions.
    pub fn filter(&self, input: &[f64]) -> Vec<f64> {
        let mut state = self.state();
        input.iter().map(|&x| state.step(x)).collect()
    }

    /// Applies the filter in its exact periodic steady state by per-bin
    /// multiplication of each period's spectrum.
    pub fn filter_periodic(&self, signal: &PeriodicSignal) -> PeriodicSignal {
        let n = signal.samples_per_period();
        let response = self.response_on_grid(n);
        let fs = signal.sampling_frequency();
        let mut samples = Vec::with_capacity(signal.len());
        for period in signal.periods() {
            let mut spectrum = dft(period, fs);
            for (x, h) in spectrum.bins_mut().iter_mut().zip(&response) {
                *x *= h;
            }
            samples.extend(inverse_dft(&spectrum));
        }
        PeriodicSignal::new(samples, n, fs).expect("same shape as input")
    }
}

/// Transposed direct-form II state of a [`RationalLTI`].
#[derive(Debug, Clone)]
pub struct FilterState<'a> {
    lti: &'a RationalLTI,
    state: Vec<f64>,
}

impl FilterState<'_> {
    fn coef(c: &[f64], i: usize) -> f64 {
        c.get(i).copied().unwrap_or(0.0)
    }

    /// Output that the next `step` will produce for a zero input. Equals the
    /// next output exactly for strictly proper filters.
    pub fn pending(&self) -> f64 {
        self.state.first().copied().unwrap_or(0.0)
    }

    pub fn step(&mut self, x: f64) -> f64 {
        let b = &self.lti.numerator;
        let a = &self.lti.denominator;
        let y = b[0] * x + self.pending();
        let order = self.state.len();
        for i in 0..order {
            let next = if i + 1 < order { self.state[i + 1] } else { 0.0 };
            self.state[i] = next + Self::coef(b, i + 1) * x - Self::coef(a, i + 1) * y;
        }
        y
    }
}

/// `f(x) = c_1 x + c_2 x^2 + ... + c_d x^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolynomialCoefficients", into = "PolynomialCoefficients")]
pub struct PolynomialNonlinearity {
    coefficients: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolynomialCoefficients {
    pub coefficients: Vec<f64>,
}

impl TryFrom<PolynomialCoefficients> for PolynomialNonlinearity {
    type Error = Error;

    fn try_from(c: PolynomialCoefficients) -> Result<Self> {
        PolynomialNonlinearity::new(c.coefficients)
    }
}

impl From<PolynomialNonlinearity> for PolynomialCoefficients {
    fn from(f: PolynomialNonlinearity) -> Self {
        PolynomialCoefficients {
            coefficients: f.coefficients,
        }
    }
}

impl PolynomialNonlinearity {
    pub const MAX_DEGREE: usize = 9;

    /// `coefficients[i]` multiplies `x^(i+1)`.
    pub fn new(coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.is_empty() || coefficients.len() > Self::MAX_DEGREE {
            return Err(Error::Config(format!(
                "polynomial degree must be in 1..={}, got {}",
                Self::MAX_DEGREE,
                coefficients.len()
            )));
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::Config("non-finite polynomial coefficient".into()));
        }
        Ok(PolynomialNonlinearity { coefficients })
    }

    pub fn identity() -> Self {
        PolynomialNonlinearity {
            coefficients: vec![1.0],
        }
    }

    /// `x + c x^3`.
    pub fn cubic(c: f64) -> Self {
        PolynomialNonlinearity {
            coefficients: vec![1.0, 0.0, c],
        }
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn degree(&self) -> usize {
        self.coefficients.len()
    }

    /// Coefficient of `x^power` (zero for `power = 0` and beyond the degree).
    pub fn coefficient(&self, power: usize) -> f64 {
        if power == 0 {
            0.0
        } else {
            self.coefficients.get(power - 1).copied().unwrap_or(0.0)
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coefficients.iter().rev().fold(0.0, |acc, &c| (acc + c) * x)
    }

    pub fn derivative(&self, x: f64) -> f64 {
        self.coefficients
            .iter()
            .enumerate()
            .rev()
            .fold(0.0, |acc, (i, &c)| acc * x + (i + 1) as f64 * c)
    }
}

/// Warm-up rule for reaching periodic steady state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WarmupPolicy {
    pub min_periods: usize,
    pub max_periods: usize,
    /// Relative RMS difference between the last two warm-up periods.
    pub tolerance: f64,
}

impl Default for WarmupPolicy {
    fn default() -> Self {
        WarmupPolicy {
            min_periods: 4,
            max_periods: 64,
            tolerance: 1e-10,
        }
    }
}

impl WarmupPolicy {
    /// Runs `next_period` (the noise-free response, one period per call) until
    /// two consecutive periods agree. Returns the number of warm-up periods.
    pub fn resolve(&self, mut next_period: impl FnMut() -> Result<Vec<f64>>) -> Result<usize> {
        let mut previous = next_period()?;
        let mut count = 1;
        loop {
            let current = next_period()?;
            count += 1;
            let diff: f64 = current.iter().zip(&previous).map(|(a, b)| (a - b).powi(2)).sum();
            let power: f64 = current.iter().map(|a| a * a).sum();
            let settled = diff <= self.tolerance * self.tolerance * power;
            if settled && count >= self.min_periods.max(2) {
                return Ok(count);
            }
            if count >= self.max_periods {
                return Err(Error::NoSteadyState {
                    periods: self.max_periods,
                });
            }
            previous = current;
        }
    }
}

const DIVERGENCE_LIMIT: f64 = 1e12;

fn check_finite(value: f64, sample: usize) -> Result<f64> {
    if value.is_finite() && value.abs() <= DIVERGENCE_LIMIT {
        Ok(value)
    } else {
        Err(Error::Diverged {
            sample,
            magnitude: value.abs(),
        })
    }
}

/// Variances of the three noise sources.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseLevels {
    #[serde(default)]
    pub input: f64,
    #[serde(default)]
    pub process: f64,
    #[serde(default)]
    pub output: f64,
}

impl NoiseLevels {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("input", self.input), ("process", self.process), ("output", self.output)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} noise variance must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// `y(t) = S(q)[f(u(t) + n_x(t))] + n_y(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HammersteinSystem {
    pub lti: RationalLTI,
    pub nonlinearity: PolynomialNonlinearity,
}

#[derive(Debug, Clone)]
pub struct HammersteinRecord {
    pub y: PeriodicSignal,
    pub nx: Vec<f64>,
    pub ny: Vec<f64>,
    pub warmup_periods: usize,
}

impl HammersteinSystem {
    pub fn new(lti: RationalLTI, nonlinearity: PolynomialNonlinearity) -> Self {
        HammersteinSystem { lti, nonlinearity }
    }

    /// Second-order Butterworth lowpass with cutoff `0.1 f_s`, driven by
    /// `f(x) = x + 0.1 x^3`.
    pub fn example() -> Self {
        HammersteinSystem::new(example_lowpass(), PolynomialNonlinearity::cubic(0.1))
    }

    fn warmup(&self, period: &[f64], policy: &WarmupPolicy) -> Result<usize> {
        let mut state = self.lti.state();
        policy.resolve(|| Ok(period.iter().map(|&u| state.step(self.nonlinearity.eval(u))).collect()))
    }

    /// Simulates `P` steady-state periods of the system driven by the periodic
    /// input `u`. A `None` seed disables the corresponding noise source.
    pub fn simulate(
        &self,
        u: &PeriodicSignal,
        process: Option<(f64, Seed)>,
        output: Option<(f64, Seed)>,
        policy: &WarmupPolicy,
    ) -> Result<HammersteinRecord> {
        let n = u.samples_per_period();
        let warmup = self.warmup(u.period(0), policy)?;
        let total = (warmup + u.period_count()) * n;
        let mut nx = match process {
            Some((variance, seed)) => generate_noise(variance, None, total, seed)?,
            None => vec![0.0; total],
        };
        let mut state = self.lti.state();
        let warm_samples = warmup * n;
        let mut y = Vec::with_capacity(u.len());
        for (t, &noise) in nx.iter().enumerate() {
            let input = if t < warm_samples {
                u.period(0)[t % n]
            } else {
                u.samples()[t - warm_samples]
            };
            let out = check_finite(state.step(self.nonlinearity.eval(input + noise)), t)?;
            if t >= warm_samples {
                y.push(out);
            }
        }
        let ny = match output {
            Some((variance, seed)) => generate_noise(variance, None, u.len(), seed)?,
            None => vec![0.0; u.len()],
        };
        for (v, e) in y.iter_mut().zip(&ny) {
            *v += e;
        }
        Ok(HammersteinRecord {
            y: PeriodicSignal::new(y, n, u.sampling_frequency())?,
            nx: nx.split_off(warm_samples),
            ny,
            warmup_periods: warmup,
        })
    }
}

/// The lowpass block of [`HammersteinSystem::example`].
pub fn example_lowpass() -> RationalLTI {
    RationalLTI::new(
        vec![0.0674552738890719, 0.1349105477781438, 0.0674552738890719],
        vec![1.0, -1.1429805025399011, 0.41280159809618877],
    )
    .expect("stable lowpass")
}

/// A simulator that can be re-run with the input fixed while the process and
/// output noise realizations are controlled individually.
pub trait NoisySimulator: Sync {
    /// `None` disables the corresponding noise source.
    fn simulate_output(
        &self,
        u: &PeriodicSignal,
        process: Option<Seed>,
        output: Option<Seed>,
    ) -> Result<PeriodicSignal>;

    fn controllable_noise(&self) -> bool {
        true
    }
}

/// A Hammerstein system together with its noise levels and warm-up policy.
#[derive(Debug, Clone)]
pub struct HammersteinSimulator {
    pub system: HammersteinSystem,
    pub noise: NoiseLevels,
    pub warmup: WarmupPolicy,
}

impl NoisySimulator for HammersteinSimulator {
    fn simulate_output(
        &self,
        u: &PeriodicSignal,
        process: Option<Seed>,
        output: Option<Seed>,
    ) -> Result<PeriodicSignal> {
        let record = self.system.simulate(
            u,
            process.map(|s| (self.noise.process, s)),
            output.map(|s| (self.noise.output, s)),
            &self.warmup,
        )?;
        Ok(record.y)
    }
}

/// Plant inside the feedback loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Plant {
    Hammerstein(HammersteinSystem),
    /// Sum of dual-input Volterra kernels driven by `u` and `n_x`.
    Volterra(Vec<DualVolterraKernel>),
}

enum PlantState<'a> {
    Hammerstein {
        system: &'a HammersteinSystem,
        filter: FilterState<'a>,
    },
    Volterra {
        kernels: &'a [DualVolterraKernel],
        u_history: Vec<f64>,
        nx_history: Vec<f64>,
        cursor: usize,
    },
}

impl Plant {
    fn start(&self) -> PlantState<'_> {
        match self {
            Plant::Hammerstein(system) => PlantState::Hammerstein {
                system,
                filter: system.lti.state(),
            },
            Plant::Volterra(kernels) => {
                let memory = kernels
                    .iter()
                    .map(|k| k.input_taps().max(k.noise_taps()))
                    .max()
                    .unwrap_or(1);
                PlantState::Volterra {
                    kernels,
                    u_history: vec![0.0; memory],
                    nx_history: vec![0.0; memory],
                    cursor: 0,
                }
            }
        }
    }
}

impl PlantState<'_> {
    fn step(&mut self, u: f64, nx: f64) -> f64 {
        match self {
            PlantState::Hammerstein { system, filter } => filter.step(system.nonlinearity.eval(u + nx)),
            PlantState::Volterra {
                kernels,
                u_history,
                nx_history,
                cursor,
            } => {
                let len = u_history.len();
                *cursor = (*cursor + 1) % len;
                u_history[*cursor] = u;
                nx_history[*cursor] = nx;
                let c = *cursor;
                let u_lag = |lag: usize| u_history[(c + len - lag) % len];
                let nx_lag = |lag: usize| nx_history[(c + len - lag) % len];
                kernels.iter().map(|k| k.evaluate_with(&u_lag, &nx_lag)).sum()
            }
        }
    }
}

/// Closed-loop measurement setup: `u_0 = G_act(q)[r - M(q) y_0]`, the plant
/// maps `(u_0, n_x)` to `y_0`, and the measurements are `u = u_0 + n_u`,
/// `y = y_0 + n_y`. The feedback path carries the noise-free plant output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopConfig {
    pub plant: Plant,
    pub actuator: RationalLTI,
    pub feedback: RationalLTI,
    pub noise: NoiseLevels,
}

#[derive(Debug, Clone, Copy)]
pub struct LoopSeeds {
    pub input: Seed,
    pub process: Seed,
    pub output: Seed,
}

impl LoopSeeds {
    pub fn from_root(root: Seed) -> Self {
        LoopSeeds {
            input: root.stream(Stream::InputNoise),
            process: root.stream(Stream::ProcessNoise),
            output: root.stream(Stream::OutputNoise),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClosedLoopRecord {
    /// Measured input `u_0 + n_u`.
    pub u: PeriodicSignal,
    /// Measured output `y_0 + n_y`.
    pub y: PeriodicSignal,
    pub u0: Vec<f64>,
    pub y0: Vec<f64>,
    pub nx: Vec<f64>,
    pub nu: Vec<f64>,
    pub ny: Vec<f64>,
    pub warmup_periods: usize,
}

impl ClosedLoopConfig {
    pub fn new(plant: Plant, actuator: RationalLTI, feedback: RationalLTI, noise: NoiseLevels) -> Result<Self> {
        let config = ClosedLoopConfig {
            plant,
            actuator,
            feedback,
            noise,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.feedback.is_strictly_proper() {
            return Err(Error::Config(
                "feedback path must contain at least one sample of delay (b_0 = 0)".into(),
            ));
        }
        self.noise.validate()
    }

    fn start(&self) -> LoopState<'_> {
        LoopState {
            actuator: self.actuator.state(),
            feedback: self.feedback.state(),
            plant: self.plant.start(),
            t: 0,
        }
    }

    fn warmup(&self, r: &[f64], policy: &WarmupPolicy) -> Result<usize> {
        let mut state = self.start();
        policy.resolve(|| {
            r.iter()
                .map(|&rt| state.step(rt, 0.0).map(|(_, y0)| y0))
                .collect()
        })
    }

    /// Simulates the loop until periodic steady state and records the
    /// periods of `r` after the warm-up.
    pub fn simulate(&self, r: &PeriodicSignal, seeds: LoopSeeds, policy: &WarmupPolicy) -> Result<ClosedLoopRecord> {
        self.validate()?;
        let n = r.samples_per_period();
        let warmup = self.warmup(r.period(0), policy)?;
        let warm_samples = warmup * n;
        let mut reference = r.period(0).repeat(warmup);
        reference.extend_from_slice(r.samples());
        let total = reference.len();
        debug_assert_eq!(total, warm_samples + r.len());
        let nx = generate_noise(self.noise.process, None, total, seeds.process)?;
        let mut u0 = Vec::with_capacity(r.len());
        let mut y0 = Vec::with_capacity(r.len());
        let mut state = self.start();
        for (t, (&rt, &nxt)) in reference.iter().zip(&nx).enumerate() {
            let (u, y) = state.step(rt, nxt)?;
            if t >= warm_samples {
                u0.push(u);
                y0.push(y);
            }
        }
        let nu = generate_noise(self.noise.input, None, r.len(), seeds.input)?;
        let ny = generate_noise(self.noise.output, None, r.len(), seeds.output)?;
        let fs = r.sampling_frequency();
        let u: Vec<f64> = u0.iter().zip(&nu).map(|(a, b)| a + b).collect();
        let y: Vec<f64> = y0.iter().zip(&ny).map(|(a, b)| a + b).collect();
        Ok(ClosedLoopRecord {
            u: PeriodicSignal::new(u, n, fs)?,
            y: PeriodicSignal::new(y, n, fs)?,
            u0,
            y0,
            nx: nx[warm_samples..].to_vec(),
            nu,
            ny,
            warmup_periods: warmup,
        })
    }
}

struct LoopState<'a> {
    actuator: FilterState<'a>,
    feedback: FilterState<'a>,
    plant: PlantState<'a>,
    t: usize,
}

impl LoopState<'_> {
    fn step(&mut self, r: f64, nx: f64) -> Result<(f64, f64)> {
        let t = self.t;
        self.t += 1;
        let u0 = check_finite(self.actuator.step(r - self.feedback.pending()), t)?;
        let y0 = check_finite(self.plant.step(u0, nx), t)?;
        self.feedback.step(y0);
        Ok((u0, y0))
    }
}

/// Per-bin closed-loop transfers from `r` for a linear plant `G`:
/// `r -> y: G G_act / (1 + G_act G M)` and `r -> u: G_act / (1 + G_act G M)`.
pub fn linear_loop_response(
    plant: &RationalLTI,
    actuator: &RationalLTI,
    feedback: &RationalLTI,
    bins: &[usize],
    n: usize,
) -> Vec<(Complex64, Complex64)> {
    bins.iter()
        .map(|&k| {
            let g = plant.response_at_bin(k, n);
            let a = actuator.response_at_bin(k, n);
            let m = feedback.response_at_bin(k, n);
            let denom = 1.0 + a * g * m;
            (g * a / denom, a / denom)
        })
        .collect()
}
