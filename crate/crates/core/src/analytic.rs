//! Closed-form results for static polynomial nonlinearities with Gaussian
//! inputs, and the Hammerstein system `S(q)[f(u + n_x)] + n_y` built on them.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::systems::{PolynomialNonlinearity, RationalLTI};

/// Variances of the zero-mean Gaussian input and process noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianInputModel {
    pub input_variance: f64,
    pub process_variance: f64,
}

impl GaussianInputModel {
    pub fn new(input_variance: f64, process_variance: f64) -> Result<Self> {
        for v in [input_variance, process_variance] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("variance must be finite and >= 0, got {v}")));
            }
        }
        Ok(GaussianInputModel {
            input_variance,
            process_variance,
        })
    }

    /// From standard deviations.
    pub fn from_std(sigma_u: f64, sigma_nx: f64) -> Result<Self> {
        Self::new(sigma_u * sigma_u, sigma_nx * sigma_nx)
    }

    /// Variance of the nonlinearity input `u + n_x`.
    pub fn total_variance(&self) -> f64 {
        self.input_variance + self.process_variance
    }
}

/// `E{x^k}` for `x ~ N(0, variance)`: `(k-1)!! variance^(k/2)` for even `k`.
pub fn gaussian_power_moment(k: u32, variance: f64) -> f64 {
    if k % 2 == 1 {
        return 0.0;
    }
    let double_factorial: f64 = (1..k).step_by(2).map(f64::from).product();
    double_factorial * variance.powi((k / 2) as i32)
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * f64::from(n - i) / f64::from(i + 1))
}

/// Bussgang gain `E{f'(x)}` with `x ~ N(0, sigma_u^2 + sigma_nx^2)`.
pub fn bussgang_gain(f: &PolynomialNonlinearity, model: &GaussianInputModel) -> f64 {
    let var = model.total_variance();
    f.coefficients()
        .iter()
        .enumerate()
        .map(|(i, &c)| (i + 1) as f64 * c * gaussian_power_moment(i as u32, var))
        .sum()
}

/// `G_bla(k) = bussgang_gain * S(e^{j 2 pi k / N})` at the requested bins.
pub fn analytic_hammerstein_bla(
    lti: &RationalLTI,
    f: &PolynomialNonlinearity,
    model: &GaussianInputModel,
    bins: &[usize],
    samples_per_period: usize,
) -> Vec<Complex64> {
    let gain = bussgang_gain(f, model);
    bins.iter()
        .map(|&k| gain * lti.response_at_bin(k, samples_per_period))
        .collect()
}

/// Coefficients (in powers of `u`) of `E_{n_x}{f(u + n_x)}`.
fn noise_averaged_polynomial(f: &PolynomialNonlinearity, process_variance: f64) -> Vec<f64> {
    let degree = f.degree();
    let mut out = vec![0.0; degree + 1];
    for i in 1..=degree {
        let c = f.coefficient(i);
        for b in 0..=i {
            out[i - b] += c * binomial(i as u32, b as u32) * gaussian_power_moment(b as u32, process_variance);
        }
    }
    out
}

fn polynomial_product_moment(p: &[f64], q: &[f64], variance: f64) -> f64 {
    let mut total = 0.0;
    for (i, a) in p.iter().enumerate() {
        for (j, b) in q.iter().enumerate() {
            total += a * b * gaussian_power_moment((i + j) as u32, variance);
        }
    }
    total
}

/// Per-sample variances of the white signals entering `S(q)` in the
/// Hammerstein decomposition, for white Gaussian `u` and `n_x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstituentVariances {
    /// `Var{E_nx f(u + n_x)} - G^2 sigma_u^2`: the stochastic nonlinear part.
    pub nonlinear: f64,
    /// `E_u Var_nx{f(u + n_x)}`: the process-noise part.
    pub process: f64,
}

pub fn constituent_variances(f: &PolynomialNonlinearity, model: &GaussianInputModel) -> ConstituentVariances {
    let averaged = noise_averaged_polynomial(f, model.process_variance);
    let var_u = model.input_variance;
    let mean = polynomial_product_moment(&averaged, &[1.0], var_u);
    let second = polynomial_product_moment(&averaged, &averaged, var_u);
    let gain = bussgang_gain(f, model);
    let nonlinear = (second - mean * mean - gain * gain * var_u).max(0.0);
    let mut full = vec![0.0];
    full.extend_from_slice(f.coefficients());
    let total_second = polynomial_product_moment(&full, &full, model.total_variance());
    ConstituentVariances {
        nonlinear,
        process: (total_second - second).max(0.0),
    }
}

/// DFT-domain variance spectra `sigma_s^2(k)`, `sigma_p^2(k)`, `sigma_n^2(k)`
/// of the Hammerstein constituents for white Gaussian excitation and noises.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceSpectra {
    pub nonlinear: Vec<f64>,
    pub process: Vec<f64>,
    pub output: Vec<f64>,
}

pub fn hammerstein_variance_spectra(
    lti: &RationalLTI,
    f: &PolynomialNonlinearity,
    model: &GaussianInputModel,
    output_variance: f64,
    bins: &[usize],
    samples_per_period: usize,
) -> VarianceSpectra {
    let white = constituent_variances(f, model);
    let gains: Vec<f64> = bins
        .iter()
        .map(|&k| lti.response_at_bin(k, samples_per_period).norm_sqr())
        .collect();
    VarianceSpectra {
        nonlinear: gains.iter().map(|g| g * white.nonlinear).collect(),
        process: gains.iter().map(|g| g * white.process).collect(),
        output: vec![output_variance; bins.len()],
    }
}

/// One additive term `coefficient * u^a * (n_x^b - [centered] E{n_x^b}) * n_y^c`,
/// optionally passed through `S(q)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub coefficient: f64,
    pub u_power: u32,
    pub nx_power: u32,
    #[serde(default)]
    pub ny_power: u32,
    #[serde(rename = "centered_flag")]
    pub centered: bool,
    #[serde(rename = "filtered_flag")]
    pub filtered: bool,
}

impl Term {
    fn filtered(coefficient: f64, u_power: u32, nx_power: u32) -> Self {
        Term {
            coefficient,
            u_power,
            nx_power,
            ny_power: 0,
            centered: false,
            filtered: true,
        }
    }

    fn centered(self) -> Self {
        Term { centered: true, ..self }
    }

    fn output_noise() -> Self {
        Term {
            coefficient: 1.0,
            u_power: 0,
            nx_power: 0,
            ny_power: 1,
            centered: false,
            filtered: false,
        }
    }
}

/// Monomial key used when expanding term lists into polynomials.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Monomial {
    pub u_power: u32,
    pub nx_power: u32,
    pub ny_power: u32,
    pub filtered: bool,
}

/// Expands centered terms into plain monomials and merges like terms;
/// zero coefficients are dropped.
pub fn expand(terms: &[Term], model: &GaussianInputModel) -> BTreeMap<Monomial, f64> {
    let mut out = BTreeMap::new();
    let mut add = |key: Monomial, c: f64| *out.entry(key).or_insert(0.0) += c;
    for t in terms {
        let key = Monomial {
            u_power: t.u_power,
            nx_power: t.nx_power,
            ny_power: t.ny_power,
            filtered: t.filtered,
        };
        add(key, t.coefficient);
        if t.centered {
            let m = gaussian_power_moment(t.nx_power, model.process_variance);
            add(Monomial { nx_power: 0, ..key }, -t.coefficient * m);
        }
    }
    out.retain(|_, c| *c != 0.0);
    out
}

/// `E_{n_x}{terms}` as coefficients of powers of `u` (output noise held at its
/// zero mean).
pub fn expectation_over_process_noise(terms: &[Term], model: &GaussianInputModel) -> Vec<f64> {
    let mut out = Vec::new();
    for t in terms.iter().filter(|t| t.ny_power == 0) {
        let m = gaussian_power_moment(t.nx_power, model.process_variance);
        let value = t.coefficient * if t.centered { 0.0 } else { m };
        let a = t.u_power as usize;
        if out.len() <= a {
            out.resize(a + 1, 0.0);
        }
        out[a] += value;
    }
    out
}

/// `E_u{terms * u^extra_u_power}` with the noises held fixed, as
/// coefficients of powers of `n_x`.
pub fn input_moment(terms: &[Term], model: &GaussianInputModel, extra_u_power: u32) -> Vec<f64> {
    let mut out = Vec::new();
    for t in terms.iter().filter(|t| t.ny_power == 0) {
        let m = gaussian_power_moment(t.u_power + extra_u_power, model.input_variance);
        let b = t.nx_power as usize;
        if out.len() <= b {
            out.resize(b + 1, 0.0);
        }
        out[b] += t.coefficient * m;
        if t.centered {
            out[0] -= t.coefficient * m * gaussian_power_moment(t.nx_power, model.process_variance);
        }
    }
    out
}

/// Term lists of the BLA constituents. The alternate lists move the
/// input-independent noise terms into the output noise contribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolicDecomposition {
    pub y_bla: Vec<Term>,
    pub y_s: Vec<Term>,
    pub y_p: Vec<Term>,
    pub y_n: Vec<Term>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_p_alt: Option<Vec<Term>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_n_alt: Option<Vec<Term>>,
}

/// Constituent term lists for `f(x) = c_1 x + c_3 x^3`.
pub fn analytic_hammerstein_decomposition(
    f: &PolynomialNonlinearity,
    model: &GaussianInputModel,
    alternate: bool,
) -> Result<SymbolicDecomposition> {
    if f.degree() > 3 || f.coefficient(2) != 0.0 {
        return Err(Error::Unsupported(
            "symbolic decomposition supports f(x) = c1 x + c3 x^3 only".into(),
        ));
    }
    let c1 = f.coefficient(1);
    let c3 = f.coefficient(3);
    let var_u = model.input_variance;
    let var_x = model.process_variance;
    let gain = bussgang_gain(f, model);
    let has_noise = var_x > 0.0;

    let keep = |terms: Vec<Term>| -> Vec<Term> {
        terms
            .into_iter()
            .filter(|t| t.coefficient != 0.0 && (has_noise || t.nx_power == 0))
            .collect()
    };

    let y_bla = keep(vec![Term::filtered(gain, 1, 0)]);
    let y_s = keep(vec![Term::filtered(c3, 3, 0), Term::filtered(-3.0 * c3 * var_u, 1, 0)]);
    let cross_linear = Term::filtered(3.0 * c3, 2, 1);
    let cross_quadratic = Term::filtered(3.0 * c3, 1, 2).centered();
    let noise_linear = Term::filtered(c1, 0, 1);
    let noise_cubic = Term::filtered(c3, 0, 3);
    let y_p = keep(vec![noise_linear, cross_linear, cross_quadratic, noise_cubic]);
    let y_n = vec![Term::output_noise()];
    let (y_p_alt, y_n_alt) = if alternate {
        (
            Some(keep(vec![cross_linear, cross_quadratic])),
            Some(keep(vec![Term::output_noise(), noise_linear, noise_cubic])),
        )
    } else {
        (None, None)
    };
    Ok(SymbolicDecomposition {
        y_bla,
        y_s,
        y_p,
        y_n,
        y_p_alt,
        y_n_alt,
    })
}

/// Expanded `S(q)[f(u + n_x)] + n_y`.
pub fn expanded_system(f: &PolynomialNonlinearity) -> BTreeMap<Monomial, f64> {
    let mut out = BTreeMap::new();
    for i in 1..=f.degree() as u32 {
        let c = f.coefficient(i as usize);
        for b in 0..=i {
            let key = Monomial {
                u_power: i - b,
                nx_power: b,
                ny_power: 0,
                filtered: true,
            };
            *out.entry(key).or_insert(0.0) += c * binomial(i, b);
        }
    }
    out.insert(
        Monomial {
            u_power: 0,
            nx_power: 0,
            ny_power: 1,
            filtered: false,
        },
        1.0,
    );
    out.retain(|_, c| *c != 0.0);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn cubic() -> PolynomialNonlinearity {
        PolynomialNonlinearity::cubic(0.1)
    }

    #[test]
    fn moments() {
        assert_eq!(gaussian_power_moment(0, 2.0), 1.0);
        assert_eq!(gaussian_power_moment(2, 2.0), 2.0);
        assert_eq!(gaussian_power_moment(4, 2.0), 12.0);
        assert_eq!(gaussian_power_moment(6, 1.0), 15.0);
        assert_eq!(gaussian_power_moment(3, 1.0), 0.0);
    }

    #[test]
    fn identity_gain_is_one() {
        let m = GaussianInputModel::new(3.0, 0.5).unwrap();
        assert_eq!(bussgang_gain(&PolynomialNonlinearity::identity(), &m), 1.0);
    }

    #[test]
    fn cubic_gain() {
        let m = GaussianInputModel::from_std(1.0, 0.1).unwrap();
        assert_abs_diff_eq!(bussgang_gain(&cubic(), &m), 1.303, epsilon = 1e-15);
        let m = GaussianInputModel::from_std(1.0, 1.0).unwrap();
        assert_abs_diff_eq!(bussgang_gain(&cubic(), &m), 1.6, epsilon = 1e-15);
    }

    #[test]
    fn gain_matches_regression_slope() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..3 {
            let c: f64 = rng.random_range(0.0..0.5);
            let su: f64 = rng.random_range(0.3..1.5);
            let sx: f64 = rng.random_range(0.0..0.5);
            let f = PolynomialNonlinearity::cubic(c);
            let model = GaussianInputModel::from_std(su, sx).unwrap();
            let std = model.total_variance().sqrt();
            let (mut sxy, mut sxx) = (0.0, 0.0);
            for _ in 0..1_000_000 {
                let x: f64 = std * rng.sample::<f64, _>(StandardNormal);
                sxy += x * f.eval(x);
                sxx += x * x;
            }
            let slope = sxy / sxx;
            let gain = bussgang_gain(&f, &model);
            assert!((slope / gain - 1.0).abs() < 0.005, "c={c} slope={slope} gain={gain}");
        }
    }

    #[test]
    fn gain_ratio_is_uniform() {
        let s = RationalLTI::new(vec![0.2, 0.1], vec![1.0, -0.5]).unwrap();
        let bins: Vec<usize> = (1..64).collect();
        let low = analytic_hammerstein_bla(&s, &cubic(), &GaussianInputModel::from_std(1.0, 0.1).unwrap(), &bins, 128);
        let high = analytic_hammerstein_bla(&s, &cubic(), &GaussianInputModel::from_std(1.0, 1.0).unwrap(), &bins, 128);
        for (a, b) in high.iter().zip(&low) {
            let r = a / b;
            assert_abs_diff_eq!(r.re, 1.6 / 1.303, epsilon = 1e-12);
            assert_abs_diff_eq!(r.im, 0.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(1.6 / 1.303, 1.2280, epsilon = 1e-4);
    }

    #[test]
    fn identity_system_bla_is_one() {
        let m = GaussianInputModel::from_std(1.0, 0.3).unwrap();
        let g = analytic_hammerstein_bla(&RationalLTI::identity(), &PolynomialNonlinearity::identity(), &m, &[1, 5, 9], 32);
        assert!(g.iter().all(|v| (v - Complex64::new(1.0, 0.0)).norm() < 1e-15));
    }

    #[test]
    fn cubic_constituent_variances() {
        // nonlinear: 0.06 sigma_u^6; process: see closed form in the test body
        let m = GaussianInputModel::from_std(1.0, 0.1).unwrap();
        let v = constituent_variances(&cubic(), &m);
        assert_abs_diff_eq!(v.nonlinear, 0.06, epsilon = 1e-12);
        let s2: f64 = 0.01;
        let (ea2, eb2, ea) = (1.0 + 0.6 + 0.27, 0.09, 1.3);
        let expect = ea2 * s2 + 2.0 * eb2 * s2 * s2 + 15.0 * 0.01 * s2.powi(3) + 6.0 * 0.1 * ea * s2 * s2;
        assert_abs_diff_eq!(v.process, expect, epsilon = 1e-12);
    }

    #[test]
    fn constituent_variances_match_monte_carlo() {
        let f = PolynomialNonlinearity::new(vec![0.8, 0.2, -0.1]).unwrap();
        let model = GaussianInputModel::from_std(0.9, 0.4).unwrap();
        let v = constituent_variances(&f, &model);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inner = 64;
        let outer = 20_000;
        let gain = bussgang_gain(&f, &model);
        let (mut process, mut ybar_samples) = (0.0, Vec::with_capacity(outer));
        for _ in 0..outer {
            let u: f64 = 0.9 * rng.sample::<f64, _>(StandardNormal);
            let ys: Vec<f64> = (0..inner)
                .map(|_| f.eval(u + 0.4 * rng.sample::<f64, _>(StandardNormal)))
                .collect();
            let mean = ys.iter().sum::<f64>() / inner as f64;
            process += ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (inner - 1) as f64;
            // exact conditional mean for the nonlinear part
            let exact: f64 = noise_averaged_polynomial(&f, model.process_variance)
                .iter()
                .enumerate()
                .map(|(i, c)| c * u.powi(i as i32))
                .sum();
            ybar_samples.push((u, exact));
        }
        process /= outer as f64;
        let mean = ybar_samples.iter().map(|(_, y)| y).sum::<f64>() / outer as f64;
        let nonlinear = ybar_samples
            .iter()
            .map(|(u, y)| (y - mean - gain * u).powi(2))
            .sum::<f64>()
            / outer as f64;
        assert!((process / v.process - 1.0).abs() < 0.03, "{process} vs {}", v.process);
        assert!((nonlinear / v.nonlinear - 1.0).abs() < 0.05, "{nonlinear} vs {}", v.nonlinear);
    }

    #[test]
    fn reference_cubic_constituents() {
        let m = GaussianInputModel::from_std(1.0, 0.1).unwrap();
        let d = analytic_hammerstein_decomposition(&cubic(), &m, true).unwrap();
        assert_eq!(d.y_bla.len(), 1);
        assert_abs_diff_eq!(d.y_bla[0].coefficient, 1.303, epsilon = 1e-15);
        assert_eq!(d.y_s.len(), 2);
        assert_eq!((d.y_s[0].coefficient, d.y_s[0].u_power), (0.1, 3));
        assert_abs_diff_eq!(d.y_s[1].coefficient, -0.3, epsilon = 1e-15);
        assert_eq!(d.y_s[1].u_power, 1);
        assert!(d.y_s.iter().all(|t| t.filtered && t.nx_power == 0));

        let powers: Vec<(u32, u32, bool)> = d.y_p.iter().map(|t| (t.u_power, t.nx_power, t.centered)).collect();
        assert_eq!(powers, vec![(0, 1, false), (2, 1, false), (1, 2, true), (0, 3, false)]);
        let coefs: Vec<f64> = d.y_p.iter().map(|t| t.coefficient).collect();
        for (a, b) in coefs.iter().zip([1.0, 0.3, 0.3, 0.1]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        assert_eq!(d.y_n, vec![Term::output_noise()]);

        let alt_n = d.y_n_alt.unwrap();
        assert_eq!(alt_n[0], Term::output_noise());
        let rest: Vec<(f64, u32, u32, bool)> = alt_n[1..]
            .iter()
            .map(|t| (t.coefficient, t.u_power, t.nx_power, t.filtered))
            .collect();
        assert_eq!(rest, vec![(1.0, 0, 1, true), (0.1, 0, 3, true)]);
        let alt_p = d.y_p_alt.unwrap();
        assert_eq!(alt_p.len(), 2);
        assert!(alt_p.iter().all(|t| t.u_power > 0));
    }

    #[test]
    fn no_process_noise_empties_process_terms() {
        let m = GaussianInputModel::from_std(1.0, 0.0).unwrap();
        let d = analytic_hammerstein_decomposition(&cubic(), &m, false).unwrap();
        assert!(d.y_p.is_empty());
        assert!(d.y_p_alt.is_none());
    }

    #[test]
    fn unsupported_nonlinearity() {
        let m = GaussianInputModel::from_std(1.0, 0.1).unwrap();
        let f = PolynomialNonlinearity::new(vec![1.0, 0.5]).unwrap();
        assert!(analytic_hammerstein_decomposition(&f, &m, false).is_err());
        let f = PolynomialNonlinearity::new(vec![1.0, 0.0, 0.1, 0.0, 0.01]).unwrap();
        assert!(analytic_hammerstein_decomposition(&f, &m, false).is_err());
    }

    fn sum_lists(lists: &[&[Term]], model: &GaussianInputModel) -> BTreeMap<Monomial, f64> {
        let all: Vec<Term> = lists.iter().flat_map(|l| l.iter().copied()).collect();
        expand(&all, model)
    }

    fn assert_same(a: &BTreeMap<Monomial, f64>, b: &BTreeMap<Monomial, f64>) {
        assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
        for (k, v) in a {
            assert_abs_diff_eq!(*v, b[k], epsilon = 1e-12);
        }
    }

    #[test]
    fn report_json_keys() {
        let m = GaussianInputModel::from_std(1.0, 0.1).unwrap();
        let d = analytic_hammerstein_decomposition(&cubic(), &m, true).unwrap();
        let json = serde_json::to_string(&d).unwrap();
        for key in ["y_bla", "y_s", "y_p", "y_n", "y_p_alt", "y_n_alt", "coefficient", "u_power", "nx_power", "centered_flag", "filtered_flag"] {
            assert!(json.contains(key), "{key}");
        }
        let back: SymbolicDecomposition = serde_json::from_str(&json).unwrap();
        assert_eq!(back, d);
    }

    proptest! {
        #[test]
        fn constituents_sum_to_system(c1 in -2f64..2.0, c3 in -1f64..1.0, su in 0f64..2.0, sx in 0f64..1.5) {
            let f = PolynomialNonlinearity::new(vec![c1, 0.0, c3]).unwrap();
            let model = GaussianInputModel::from_std(su, sx).unwrap();
            let d = analytic_hammerstein_decomposition(&f, &model, true).unwrap();
            let mut system = expanded_system(&f);
            if sx == 0.0 {
                system.retain(|k, _| k.nx_power == 0);
            }
            let total = sum_lists(&[&d.y_bla, &d.y_s, &d.y_p, &d.y_n], &model);
            prop_assert_eq!(total.len(), system.len());
            for (k, v) in &system {
                prop_assert!((total.get(k).copied().unwrap_or(f64::NAN) - v).abs() < 1e-12);
            }
        }

        #[test]
        fn constituent_expectations_vanish(c3 in -1f64..1.0, su in 0.1f64..2.0, sx in 0f64..1.5) {
            let f = PolynomialNonlinearity::new(vec![1.0, 0.0, c3]).unwrap();
            let model = GaussianInputModel::from_std(su, sx).unwrap();
            let d = analytic_hammerstein_decomposition(&f, &model, false).unwrap();
            // E_nx{y_p} = 0 for every u
            for c in expectation_over_process_noise(&d.y_p, &model) {
                prop_assert!(c.abs() < 1e-12);
            }
            // E_u{y_s} = 0 and E_u{y_s u} = 0
            for extra in [0, 1] {
                for c in input_moment(&d.y_s, &model, extra) {
                    prop_assert!(c.abs() < 1e-12);
                }
            }
            // E_nx{y_p u} = 0 follows from the first check since u is fixed
        }

        #[test]
        fn alternate_moves_only_noise_terms(c1 in -2f64..2.0, c3 in -1f64..1.0, sx in 0f64..1.5) {
            let f = PolynomialNonlinearity::new(vec![c1, 0.0, c3]).unwrap();
            let model = GaussianInputModel::from_std(1.0, sx).unwrap();
            let d = analytic_hammerstein_decomposition(&f, &model, true).unwrap();
            let alt_p = d.y_p_alt.clone().unwrap();
            let alt_n = d.y_n_alt.clone().unwrap();
            let mut lhs: Vec<Term> = d.y_p.clone();
            lhs.extend(alt_p.iter().map(|t| Term { coefficient: -t.coefficient, ..*t }));
            let mut rhs: Vec<Term> = alt_n.clone();
            rhs.extend(d.y_n.iter().map(|t| Term { coefficient: -t.coefficient, ..*t }));
            assert_same(&expand(&lhs, &model), &expand(&rhs, &model));
            prop_assert!(expand(&lhs, &model).keys().all(|k| k.u_power == 0));
        }

        #[test]
        fn gain_monotone_in_variances(c3 in 0.001f64..1.0, c5 in 0.0f64..0.5, v in 0f64..2.0, dv in 0.001f64..1.0) {
            let f = PolynomialNonlinearity::new(vec![1.0, 0.0, c3, 0.0, c5]).unwrap();
            let base = bussgang_gain(&f, &GaussianInputModel::new(v, 0.3).unwrap());
            let more_u = bussgang_gain(&f, &GaussianInputModel::new(v + dv, 0.3).unwrap());
            let more_x = bussgang_gain(&f, &GaussianInputModel::new(v, 0.3 + dv).unwrap());
            prop_assert!(more_u > base);
            prop_assert!(more_x > base);
        }
    }
}
