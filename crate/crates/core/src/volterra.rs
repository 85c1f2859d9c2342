//! Finite-support Volterra kernels.
//!
//! A single-input kernel of degree `a` maps `u` to
//! `sum h(k_1..k_a) u(t-k_1)...u(t-k_a)`; a dual-input kernel of degrees
//! `(m, n)` additionally multiplies `n_x(t-j_1)...n_x(t-j_n)`. Coefficients are
//! stored densely in row-major order over the full tap hypercube, input lags
//! first. Lags run over `0..taps`.
//!
//! Averaging a dual-input kernel over Gaussian process noise yields an
//! ordinary single-input kernel whose coefficients are contractions of the
//! noise lags against the noise moments ([`expected_kernel`]).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest `m + n` accepted by the dense representation.
pub const MAX_TOTAL_DEGREE: usize = 6;
pub const MAX_TAPS: usize = 8;

fn dense_len(taps: usize, degree: usize) -> Result<usize> {
    taps.checked_pow(degree as u32)
        .ok_or_else(|| Error::InvalidKernel("coefficient array too large".into()))
}

/// Decodes a row-major flat index into `degree` lags in `0..taps`.
fn lags_of(mut index: usize, taps: usize, degree: usize, out: &mut [usize]) {
    for slot in out[..degree].iter_mut().rev() {
        *slot = index % taps;
        index /= taps;
    }
}

/// Products `x(t - k_1) ... x(t - k_d)` over the whole tap hypercube, in
/// row-major order.
fn lag_products(taps: usize, degree: usize, sample: impl Fn(usize) -> f64, out: &mut Vec<f64>) {
    out.clear();
    out.push(1.0);
    let values: Vec<f64> = (0..taps).map(sample).collect();
    for _ in 0..degree {
        let mut next = Vec::with_capacity(out.len() * taps);
        for &p in out.iter() {
            next.extend(values.iter().map(|v| p * v));
        }
        *out = next;
    }
}

/// How samples before the start of the sequence are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// The sequence is one period of a periodic signal and wraps circularly.
    Periodic,
    /// Samples before `t = 0` are zero; outputs before `valid_from` are
    /// transient.
    ZeroPad,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelOutput {
    pub samples: Vec<f64>,
    /// First sample whose full tap history lies inside the sequence.
    pub valid_from: usize,
}

impl KernelOutput {
    pub fn valid(&self) -> &[f64] {
        &self.samples[self.valid_from..]
    }
}

fn sampler(x: &[f64], t: usize, boundary: Boundary) -> impl Fn(usize) -> f64 + '_ {
    let len = x.len();
    move |lag| match boundary {
        Boundary::Periodic => x[(t + len * (lag / len + 1) - lag) % len],
        Boundary::ZeroPad => {
            if lag <= t {
                x[t - lag]
            } else {
                0.0
            }
        }
    }
}

/// Single-input kernel. Degree 0 is a constant offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolterraKernel {
    degree: usize,
    taps: usize,
    coefficients: Vec<f64>,
}

impl VolterraKernel {
    pub fn new(degree: usize, taps: usize, coefficients: Vec<f64>) -> Result<Self> {
        if taps == 0 {
            return Err(Error::InvalidKernel("tap count must be at least 1".into()));
        }
        let expected = dense_len(taps, degree)?;
        if coefficients.len() != expected {
            return Err(Error::InvalidKernel(format!(
                "degree {degree} with {taps} taps needs {expected} coefficients, got {}",
                coefficients.len()
            )));
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidKernel("non-finite coefficient".into()));
        }
        Ok(VolterraKernel {
            degree,
            taps,
            coefficients,
        })
    }

    pub fn zero(degree: usize, taps: usize) -> Result<Self> {
        Self::new(degree, taps, vec![0.0; dense_len(taps, degree)?])
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn taps(&self) -> usize {
        self.taps
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn coefficient(&self, lags: &[usize]) -> f64 {
        assert_eq!(lags.len(), self.degree);
        let index = lags.iter().fold(0, |acc, &k| acc * self.taps + k);
        self.coefficients[index]
    }
}

/// `V_a(u)(t)` for every `t` in the sequence.
pub fn evaluate_kernel(kernel: &VolterraKernel, u: &[f64], boundary: Boundary) -> Result<KernelOutput> {
    if kernel.degree > 0 && u.len() < kernel.taps {
        return Err(Error::LengthMismatch {
            expected: kernel.taps,
            actual: u.len(),
        });
    }
    let mut products = Vec::new();
    let samples = (0..u.len())
        .map(|t| {
            lag_products(kernel.taps, kernel.degree, sampler(u, t, boundary), &mut products);
            kernel.coefficients.iter().zip(&products).map(|(h, p)| h * p).sum()
        })
        .collect();
    Ok(KernelOutput {
        samples,
        valid_from: match boundary {
            Boundary::Periodic => 0,
            Boundary::ZeroPad if kernel.degree == 0 => 0,
            Boundary::ZeroPad => (kernel.taps - 1).min(u.len()),
        },
    })
}

/// Dual-input kernel `h_{m,n}(k_1..k_m, j_1..j_n)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualVolterraKernel {
    input_degree: usize,
    noise_degree: usize,
    input_taps: usize,
    noise_taps: usize,
    coefficients: Vec<f64>,
}

impl DualVolterraKernel {
    pub fn new(
        input_degree: usize,
        noise_degree: usize,
        input_taps: usize,
        noise_taps: usize,
        coefficients: Vec<f64>,
    ) -> Result<Self> {
        if input_taps == 0 || noise_taps == 0 {
            return Err(Error::InvalidKernel("tap counts must be at least 1".into()));
        }
        if input_degree + noise_degree > MAX_TOTAL_DEGREE {
            return Err(Error::InvalidKernel(format!(
                "total degree {} exceeds {MAX_TOTAL_DEGREE}",
                input_degree + noise_degree
            )));
        }
        if input_taps > MAX_TAPS || noise_taps > MAX_TAPS {
            return Err(Error::InvalidKernel(format!("tap count exceeds {MAX_TAPS}")));
        }
        let expected = dense_len(input_taps, input_degree)? * dense_len(noise_taps, noise_degree)?;
        if coefficients.len() != expected {
            return Err(Error::InvalidKernel(format!(
                "degrees ({input_degree}, {noise_degree}) with taps ({input_taps}, {noise_taps}) need {expected} coefficients, got {}",
                coefficients.len()
            )));
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidKernel("non-finite coefficient".into()));
        }
        Ok(DualVolterraKernel {
            input_degree,
            noise_degree,
            input_taps,
            noise_taps,
            coefficients,
        })
    }

    /// Embeds a single-input kernel with no noise dependence.
    pub fn from_input_kernel(kernel: &VolterraKernel) -> Self {
        DualVolterraKernel {
            input_degree: kernel.degree,
            noise_degree: 0,
            input_taps: kernel.taps,
            noise_taps: 1,
            coefficients: kernel.coefficients.clone(),
        }
    }

    pub fn input_degree(&self) -> usize {
        self.input_degree
    }

    pub fn noise_degree(&self) -> usize {
        self.noise_degree
    }

    pub fn input_taps(&self) -> usize {
        self.input_taps
    }

    pub fn noise_taps(&self) -> usize {
        self.noise_taps
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    fn noise_block(&self) -> usize {
        self.noise_taps.pow(self.noise_degree as u32)
    }

    pub fn coefficient(&self, input_lags: &[usize], noise_lags: &[usize]) -> f64 {
        assert_eq!(input_lags.len(), self.input_degree);
        assert_eq!(noise_lags.len(), self.noise_degree);
        let i = input_lags.iter().fold(0, |acc, &k| acc * self.input_taps + k);
        let j = noise_lags.iter().fold(0, |acc, &k| acc * self.noise_taps + k);
        self.coefficients[i * self.noise_block() + j]
    }

    /// Output at one instant given lag accessors for both inputs.
    pub fn evaluate_with(&self, u_lag: impl Fn(usize) -> f64, nx_lag: impl Fn(usize) -> f64) -> f64 {
        let mut up = Vec::new();
        let mut np = Vec::new();
        lag_products(self.input_taps, self.input_degree, u_lag, &mut up);
        lag_products(self.noise_taps, self.noise_degree, nx_lag, &mut np);
        self.bilinear(&up, &np)
    }

    fn bilinear(&self, up: &[f64], np: &[f64]) -> f64 {
        let block = np.len();
        up.iter()
            .zip(self.coefficients.chunks_exact(block))
            .map(|(&u, row)| u * row.iter().zip(np).map(|(h, n)| h * n).sum::<f64>())
            .sum()
    }
}

/// `V_{m,n}(u, n_x)(t)` for every `t`.
pub fn evaluate_dual_kernel(
    kernel: &DualVolterraKernel,
    u: &[f64],
    nx: &[f64],
    boundary: Boundary,
) -> Result<KernelOutput> {
    if u.len() != nx.len() {
        return Err(Error::LengthMismatch {
            expected: u.len(),
            actual: nx.len(),
        });
    }
    let memory = match (kernel.input_degree, kernel.noise_degree) {
        (0, 0) => 1,
        (0, _) => kernel.noise_taps,
        (_, 0) => kernel.input_taps,
        _ => kernel.input_taps.max(kernel.noise_taps),
    };
    if u.len() < memory {
        return Err(Error::LengthMismatch {
            expected: memory,
            actual: u.len(),
        });
    }
    let mut up = Vec::new();
    let mut np = Vec::new();
    let samples = (0..u.len())
        .map(|t| {
            lag_products(kernel.input_taps, kernel.input_degree, sampler(u, t, boundary), &mut up);
            lag_products(kernel.noise_taps, kernel.noise_degree, sampler(nx, t, boundary), &mut np);
            kernel.bilinear(&up, &np)
        })
        .collect();
    Ok(KernelOutput {
        samples,
        valid_from: match boundary {
            Boundary::Periodic => 0,
            Boundary::ZeroPad => memory - 1,
        },
    })
}

/// Joint moments `E{n_x(t-j_1) ... n_x(t-j_n)}` of a stationary process.
///
/// Implement this for non-Gaussian process noise; [`expected_kernel`] only
/// needs the moment function.
pub trait MomentModel {
    fn moment(&self, lags: &[usize]) -> Result<f64>;
}

/// Gaussian process noise described by its autocovariance over lags `0..=L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseMomentModel {
    autocovariance: Vec<f64>,
    gaussian: bool,
}

impl NoiseMomentModel {
    pub fn new(autocovariance: Vec<f64>, gaussian: bool) -> Result<Self> {
        let Some(&variance) = autocovariance.first() else {
            return Err(Error::InvalidNoiseModel("empty autocovariance".into()));
        };
        if autocovariance.iter().any(|r| !r.is_finite()) || variance < 0.0 {
            return Err(Error::InvalidNoiseModel("autocovariance must be finite with r(0) >= 0".into()));
        }
        if let Some(tau) = autocovariance.iter().position(|r| r.abs() > variance) {
            return Err(Error::InvalidNoiseModel(format!("|r({tau})| exceeds r(0)")));
        }
        Ok(NoiseMomentModel {
            autocovariance,
            gaussian,
        })
    }

    /// White Gaussian noise with support for lag differences up to
    /// `max_lag`.
    pub fn white(variance: f64, max_lag: usize) -> Result<Self> {
        let mut r = vec![0.0; max_lag + 1];
        r[0] = variance;
        Self::new(r, true)
    }

    pub fn variance(&self) -> f64 {
        self.autocovariance[0]
    }

    pub fn autocovariance(&self) -> &[f64] {
        &self.autocovariance
    }

    pub fn support(&self) -> usize {
        self.autocovariance.len() - 1
    }

    pub fn is_gaussian(&self) -> bool {
        self.gaussian
    }
}

impl MomentModel for NoiseMomentModel {
    fn moment(&self, lags: &[usize]) -> Result<f64> {
        gaussian_moment(self, lags)
    }
}

/// Sum over all perfect matchings of `prod r(|j_a - j_b|)` (Isserlis).
fn isserlis(lags: &mut Vec<usize>, r: &[f64]) -> f64 {
    if lags.is_empty() {
        return 1.0;
    }
    if lags.len() % 2 == 1 {
        return 0.0;
    }
    let first = lags.remove(0);
    let mut total = 0.0;
    for i in 0..lags.len() {
        let partner = lags.remove(i);
        let cov = r[first.abs_diff(partner)];
        if cov != 0.0 {
            total += cov * isserlis(lags, r);
        }
        lags.insert(i, partner);
    }
    lags.insert(0, first);
    total
}

/// `E{n_x(t-j_1) ... n_x(t-j_n)}` for zero-mean Gaussian noise.
pub fn gaussian_moment(model: &NoiseMomentModel, lags: &[usize]) -> Result<f64> {
    if !model.gaussian {
        return Err(Error::Unsupported("only Gaussian process noise moments are implemented".into()));
    }
    let support = model.support();
    for (a, &ja) in lags.iter().enumerate() {
        for &jb in &lags[a + 1..] {
            let lag = ja.abs_diff(jb);
            if lag > support {
                return Err(Error::LagOutOfSupport { lag, support });
            }
        }
    }
    Ok(isserlis(&mut lags.to_vec(), &model.autocovariance))
}

/// Contracts the noise lags of `kernel` against the noise moments, giving
/// the degree-`m` kernel of `E_{n_x}{V_{m,n}(u, n_x)}`.
pub fn expected_kernel(kernel: &DualVolterraKernel, model: &impl MomentModel) -> Result<VolterraKernel> {
    let m = kernel.input_degree;
    let n = kernel.noise_degree;
    if n % 2 == 1 {
        return VolterraKernel::zero(m, kernel.input_taps);
    }
    let block = kernel.noise_block();
    let mut lags = vec![0; n];
    let moments = (0..block)
        .map(|j| {
            lags_of(j, kernel.noise_taps, n, &mut lags);
            model.moment(&lags)
        })
        .collect::<Result<Vec<f64>>>()?;
    let coefficients = kernel
        .coefficients
        .chunks_exact(block)
        .map(|row| row.iter().zip(&moments).map(|(h, e)| h * e).sum())
        .collect();
    VolterraKernel::new(m, kernel.input_taps, coefficients)
}

/// On-disk kernel description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelFile {
    pub m: usize,
    pub n: usize,
    #[serde(rename = "N_k")]
    pub input_taps: usize,
    #[serde(rename = "N_j")]
    pub noise_taps: usize,
    pub coefficients: Vec<f64>,
    pub noise_autocovariance: Vec<f64>,
}

impl KernelFile {
    pub fn new(kernel: &DualVolterraKernel, model: &NoiseMomentModel) -> Self {
        KernelFile {
            m: kernel.input_degree,
            n: kernel.noise_degree,
            input_taps: kernel.input_taps,
            noise_taps: kernel.noise_taps,
            coefficients: kernel.coefficients.clone(),
            noise_autocovariance: model.autocovariance.clone(),
        }
    }

    pub fn kernel(&self) -> Result<DualVolterraKernel> {
        DualVolterraKernel::new(self.m, self.n, self.input_taps, self.noise_taps, self.coefficients.clone())
    }

    pub fn noise_model(&self) -> Result<NoiseMomentModel> {
        NoiseMomentModel::new(self.noise_autocovariance.clone(), true)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn linear_identity_kernel() {
        let k = VolterraKernel::new(1, 1, vec![1.0]).unwrap();
        let u = [1.0, -2.0, 3.5];
        let y = evaluate_kernel(&k, &u, Boundary::Periodic).unwrap();
        assert_eq!(y.samples, u);
    }

    #[test]
    fn quadratic_of_constant_input() {
        let k = VolterraKernel::new(2, 1, vec![1.0]).unwrap();
        let y = evaluate_kernel(&k, &[2.0; 5], Boundary::Periodic).unwrap();
        assert!(y.samples.iter().all(|&v| v == 4.0));
    }

    #[test]
    fn cubic_kernel_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let taps = 2;
        let h = random_vec(&mut rng, 8);
        let u = random_vec(&mut rng, 16);
        let k = VolterraKernel::new(3, taps, h.clone()).unwrap();
        for boundary in [Boundary::Periodic, Boundary::ZeroPad] {
            let y = evaluate_kernel(&k, &u, boundary).unwrap();
            for t in 0..16 {
                let at = |lag: usize| match boundary {
                    Boundary::Periodic => u[(t + 16 - lag) % 16],
                    Boundary::ZeroPad if lag > t => 0.0,
                    Boundary::ZeroPad => u[t - lag],
                };
                let mut expect = 0.0;
                for k1 in 0..taps {
                    for k2 in 0..taps {
                        for k3 in 0..taps {
                            expect += h[(k1 * taps + k2) * taps + k3] * at(k1) * at(k2) * at(k3);
                        }
                    }
                }
                assert_abs_diff_eq!(y.samples[t], expect, epsilon = 1e-14);
            }
            let valid_from = if boundary == Boundary::ZeroPad { 1 } else { 0 };
            assert_eq!(y.valid_from, valid_from);
        }
    }

    #[test]
    fn coefficient_count_is_checked() {
        assert!(VolterraKernel::new(2, 3, vec![0.0; 8]).is_err());
        assert!(VolterraKernel::new(1, 0, vec![]).is_err());
        assert!(DualVolterraKernel::new(1, 1, 2, 2, vec![0.0; 3]).is_err());
        assert!(DualVolterraKernel::new(4, 3, 1, 1, vec![0.0]).is_err());
        assert!(DualVolterraKernel::new(1, 0, 9, 1, vec![0.0; 9]).is_err());
        let k = VolterraKernel::new(1, 4, vec![1.0; 4]).unwrap();
        assert!(evaluate_kernel(&k, &[1.0, 2.0], Boundary::ZeroPad).is_err());
    }

    #[test]
    fn dual_kernel_reduces_to_single_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let single = VolterraKernel::new(1, 3, random_vec(&mut rng, 3)).unwrap();
        let dual = DualVolterraKernel::from_input_kernel(&single);
        let u = random_vec(&mut rng, 10);
        let nx = random_vec(&mut rng, 10);
        let a = evaluate_kernel(&single, &u, Boundary::Periodic).unwrap();
        let b = evaluate_dual_kernel(&dual, &u, &nx, Boundary::Periodic).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noise_only_kernel_passes_noise() {
        let k = DualVolterraKernel::new(0, 1, 1, 1, vec![1.0]).unwrap();
        let u = [5.0, 6.0, 7.0];
        let nx = [0.1, -0.2, 0.3];
        let y = evaluate_dual_kernel(&k, &u, &nx, Boundary::Periodic).unwrap();
        assert_eq!(y.samples, nx);
    }

    #[test]
    fn dual_kernel_matches_nested_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (nk, nj) = (3, 2);
        let h = random_vec(&mut rng, nk * nk * nj);
        let k = DualVolterraKernel::new(2, 1, nk, nj, h.clone()).unwrap();
        let u = random_vec(&mut rng, 12);
        let nx = random_vec(&mut rng, 12);
        let y = evaluate_dual_kernel(&k, &u, &nx, Boundary::ZeroPad).unwrap();
        assert_eq!(y.valid_from, 2);
        for t in 0..12 {
            let at = |x: &[f64], lag: usize| if lag > t { 0.0 } else { x[t - lag] };
            let mut expect = 0.0;
            for k1 in 0..nk {
                for k2 in 0..nk {
                    for j1 in 0..nj {
                        expect += h[(k1 * nk + k2) * nj + j1] * at(&u, k1) * at(&u, k2) * at(&nx, j1);
                    }
                }
            }
            assert_abs_diff_eq!(y.samples[t], expect, epsilon = 1e-14);
            assert_abs_diff_eq!(k.coefficient(&[1, 2], &[1]), h[(nk + 2) * nj + 1]);
        }
    }

    #[test]
    fn gaussian_moment_basics() {
        let white = NoiseMomentModel::white(2.0, 3).unwrap();
        assert_eq!(gaussian_moment(&white, &[0, 0]).unwrap(), 2.0);
        assert_eq!(gaussian_moment(&white, &[0, 1]).unwrap(), 0.0);
        assert_eq!(gaussian_moment(&white, &[0, 0, 0]).unwrap(), 0.0);
        let unit = NoiseMomentModel::white(1.0, 0).unwrap();
        assert_eq!(gaussian_moment(&unit, &[0, 0, 0, 0]).unwrap(), 3.0);
        assert!(matches!(
            gaussian_moment(&white, &[0, 4]),
            Err(Error::LagOutOfSupport { lag: 4, support: 3 })
        ));
        let not_gaussian = NoiseMomentModel::new(vec![1.0], false).unwrap();
        assert!(matches!(gaussian_moment(&not_gaussian, &[0, 0]), Err(Error::Unsupported(_))));
        assert!(NoiseMomentModel::new(vec![1.0, 1.5], true).is_err());
    }

    #[test]
    fn fourth_moment_matches_monte_carlo() {
        let unit = NoiseMomentModel::white(1.0, 0).unwrap();
        let exact = gaussian_moment(&unit, &[0, 0, 0, 0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let k = 1_000_000;
        let samples: Vec<f64> = (0..k)
            .map(|_| {
                let x: f64 = rng.sample(StandardNormal);
                x.powi(4)
            })
            .collect();
        let mean = samples.iter().sum::<f64>() / k as f64;
        let std = (samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / k as f64).sqrt();
        assert!((mean - exact).abs() < 4.0 * std / (k as f64).sqrt(), "{mean}");
    }

    #[test]
    fn colored_moment_pairings() {
        // r = [1, 0.5]: E{n(t) n(t) n(t-1) n(t-1)} = r0^2 + 2 r1^2 = 1.5
        let model = NoiseMomentModel::new(vec![1.0, 0.5], true).unwrap();
        assert_abs_diff_eq!(gaussian_moment(&model, &[0, 0, 1, 1]).unwrap(), 1.5, epsilon = 1e-15);
        assert_abs_diff_eq!(gaussian_moment(&model, &[0, 1]).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn pairing_counts_are_double_factorials() {
        let unit = NoiseMomentModel::white(1.0, 0).unwrap();
        let mut double_factorial = 1.0;
        for n in (2..=8).step_by(2) {
            double_factorial *= (n - 1) as f64;
            assert_eq!(gaussian_moment(&unit, &vec![0; n]).unwrap(), double_factorial);
            assert_eq!(gaussian_moment(&unit, &vec![0; n - 1]).unwrap(), 0.0);
        }
    }

    #[test]
    fn expected_kernel_without_noise_is_unchanged() {
        let k = DualVolterraKernel::new(2, 0, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let e = expected_kernel(&k, &NoiseMomentModel::white(1.0, 0).unwrap()).unwrap();
        assert_eq!(e.coefficients(), k.coefficients());
        assert_eq!(e.degree(), 2);
    }

    #[test]
    fn odd_noise_degree_contracts_to_zero() {
        let k = DualVolterraKernel::new(1, 3, 2, 2, vec![1.0; 16]).unwrap();
        let e = expected_kernel(&k, &NoiseMomentModel::white(1.0, 1).unwrap()).unwrap();
        assert!(e.coefficients().iter().all(|&c| c == 0.0));
    }

    #[test]
    fn white_noise_quadratic_contraction() {
        // (m, n) = (1, 2): h(k) = sigma^2 sum_j h(k, j, j)
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (nk, nj) = (2, 3);
        let h = random_vec(&mut rng, nk * nj * nj);
        let k = DualVolterraKernel::new(1, 2, nk, nj, h.clone()).unwrap();
        let sigma2 = 0.7;
        let e = expected_kernel(&k, &NoiseMomentModel::white(sigma2, nj - 1).unwrap()).unwrap();
        for k1 in 0..nk {
            let expect: f64 = (0..nj).map(|j| h[(k1 * nj + j) * nj + j]).sum::<f64>() * sigma2;
            assert_abs_diff_eq!(e.coefficients()[k1], expect, epsilon = 1e-14);
        }

        // Monte-Carlo average of the dual kernel output
        let u = random_vec(&mut rng, 8);
        let draws = 100_000;
        let mut mean = vec![0.0; 8];
        let mut sq = vec![0.0; 8];
        let normal = rand_distr::Normal::new(0.0, sigma2.sqrt()).unwrap();
        for _ in 0..draws {
            let nx: Vec<f64> = (0..8).map(|_| rng.sample(normal)).collect();
            let y = evaluate_dual_kernel(&k, &u, &nx, Boundary::Periodic).unwrap();
            for t in 0..8 {
                mean[t] += y.samples[t];
                sq[t] += y.samples[t] * y.samples[t];
            }
        }
        let predicted = evaluate_kernel(&e, &u, Boundary::Periodic).unwrap();
        for t in 0..8 {
            let m = mean[t] / draws as f64;
            let std = (sq[t] / draws as f64 - m * m).sqrt();
            assert!((m - predicted.samples[t]).abs() < 4.0 * std / (draws as f64).sqrt());
        }
    }

    #[test]
    fn hammerstein_cross_term_contracts_to_gain() {
        // 0.3 u(t) n_x(t)^2 -> 0.3 sigma^2 u(t)
        let k = DualVolterraKernel::new(1, 2, 1, 1, vec![0.3]).unwrap();
        let sigma2 = 0.01;
        let e = expected_kernel(&k, &NoiseMomentModel::white(sigma2, 0).unwrap()).unwrap();
        assert_abs_diff_eq!(e.coefficients()[0], 0.3 * sigma2, epsilon = 1e-18);
    }

    #[test]
    fn kernel_json_round_trip() {
        let k = DualVolterraKernel::new(1, 2, 2, 2, vec![0.5, -1.0, 0.25, 2.0, 0.0, 1.0, 3.0, -0.5]).unwrap();
        let model = NoiseMomentModel::new(vec![1.0, 0.3], true).unwrap();
        let file = KernelFile::new(&k, &model);
        let text = file.to_json();
        for key in ["\"m\"", "\"n\"", "\"N_k\"", "\"N_j\"", "\"coefficients\"", "\"noise_autocovariance\""] {
            assert!(text.contains(key), "{key} missing");
        }
        let back = KernelFile::from_json(&text).unwrap();
        assert_eq!(back.kernel().unwrap(), k);
        assert_eq!(back.noise_model().unwrap(), model);
    }

    proptest! {
        #[test]
        fn moment_symmetric_under_permutation(
            lags in prop::collection::vec(0usize..3, 0..7),
            rotate in 0usize..7,
            r1 in -0.5f64..0.5,
            r2 in -0.3f64..0.3,
        ) {
            let model = NoiseMomentModel::new(vec![1.0, r1, r2], true).unwrap();
            let a = gaussian_moment(&model, &lags).unwrap();
            let mut permuted = lags.clone();
            if !permuted.is_empty() {
                let len = permuted.len();
                permuted.rotate_left(rotate % len);
                permuted.reverse();
            }
            let b = gaussian_moment(&model, &permuted).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }

        #[test]
        fn expected_kernel_is_linear(
            a in prop::collection::vec(-1f64..1.0, 8),
            b in prop::collection::vec(-1f64..1.0, 8),
            alpha in -2f64..2.0,
        ) {
            let model = NoiseMomentModel::new(vec![1.0, 0.4], true).unwrap();
            let ka = DualVolterraKernel::new(1, 2, 2, 2, a.clone()).unwrap();
            let kb = DualVolterraKernel::new(1, 2, 2, 2, b.clone()).unwrap();
            let combo: Vec<f64> = a.iter().zip(&b).map(|(x, y)| alpha * x + y).collect();
            let kc = DualVolterraKernel::new(1, 2, 2, 2, combo).unwrap();
            let ea = expected_kernel(&ka, &model).unwrap();
            let eb = expected_kernel(&kb, &model).unwrap();
            let ec = expected_kernel(&kc, &model).unwrap();
            for i in 0..2 {
                let lin = alpha * ea.coefficients()[i] + eb.coefficients()[i];
                prop_assert!((ec.coefficients()[i] - lin).abs() < 1e-12);
            }
        }
    }
}
