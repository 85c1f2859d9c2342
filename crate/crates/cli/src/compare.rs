//! Bin-by-bin comparison of two run directories.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use blapn::estimator::{read_bla_csv, BlaBin};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::run::{read_analytic, ANALYTIC_FILE, BLA_FILE};

/// Relative spread below which a ratio `B / A` counts as frequency independent.
pub const UNIFORM_SPREAD: f64 = 1e-9;

#[derive(Debug, Clone, Serialize)]
pub struct BinDiff {
    pub bin_index: usize,
    pub frequency_hz: f64,
    pub abs_diff: Option<f64>,
    pub var_noise_ratio: Option<f64>,
    pub var_total_ratio: Option<f64>,
    /// Set when exactly one report defines the bin.
    pub definedness_differs: bool,
}

/// Least-squares ratio `B / A` over the bins and its relative spread
/// `max_k |B_k / A_k - ratio| / |ratio|`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GainRatio {
    pub ratio_real: f64,
    pub ratio_imag: f64,
    pub ratio_abs: f64,
    pub spread: f64,
    pub uniform: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalyticComparison {
    pub max_abs_diff: f64,
    pub ratio: Option<GainRatio>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub tolerance: f64,
    pub bins_compared: usize,
    pub max_abs_diff: f64,
    pub ratio: Option<GainRatio>,
    pub within_tolerance: bool,
    /// Only bins where the reports differ at all.
    pub differences: Vec<BinDiff>,
    pub analytic: Option<AnalyticComparison>,
}

fn read_bla(dir: &Path) -> CliResult<Vec<BlaBin>> {
    let path = dir.join(BLA_FILE);
    let file = File::open(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(read_bla_csv(BufReader::new(file))?)
}

fn same_grid(a: &[(usize, f64)], b: &[(usize, f64)]) -> CliResult<()> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.0 != y.0 || x.1 != y.1) {
        return Err(CliError::Data("reports are on different frequency grids".into()));
    }
    Ok(())
}

/// `None` when no bin of `a` is nonzero.
pub fn gain_ratio(a: &[Complex64], b: &[Complex64]) -> Option<GainRatio> {
    let den: f64 = a.iter().map(|g| g.norm_sqr()).sum();
    if den == 0.0 {
        return None;
    }
    let ratio = a.iter().zip(b).map(|(x, y)| y * x.conj()).sum::<Complex64>() / den;
    let scale = ratio.norm().max(f64::MIN_POSITIVE);
    let spread = a
        .iter()
        .zip(b)
        .filter(|(x, _)| x.norm_sqr() > 0.0)
        .map(|(x, y)| (y / x - ratio).norm() / scale)
        .fold(0.0, f64::max);
    Some(GainRatio {
        ratio_real: ratio.re,
        ratio_imag: ratio.im,
        ratio_abs: ratio.norm(),
        spread,
        uniform: spread < UNIFORM_SPREAD,
    })
}

fn ratio_of(a: f64, b: f64) -> Option<f64> {
    if a == b {
        Some(1.0)
    } else if a > 0.0 {
        Some(b / a)
    } else {
        None
    }
}

/// Compares `bla.csv` (and `analytic.csv`, when both directories have one).
/// Fails when the grids differ.
pub fn compare_reports(a: &Path, b: &Path, tolerance: f64) -> CliResult<CompareReport> {
    if !(tolerance >= 0.0) {
        return Err(CliError::Config("--tolerance must be >= 0".into()));
    }
    let (ba, bb) = (read_bla(a)?, read_bla(b)?);
    let grid = |v: &[BlaBin]| v.iter().map(|x| (x.index, x.frequency_hz)).collect::<Vec<_>>();
    same_grid(&grid(&ba), &grid(&bb))?;

    let mut differences = Vec::new();
    let mut max_abs_diff: f64 = 0.0;
    let mut definedness_mismatch = false;
    let (mut ga, mut gb) = (Vec::new(), Vec::new());
    for (x, y) in ba.iter().zip(&bb) {
        let diff = BinDiff {
            bin_index: x.index,
            frequency_hz: x.frequency_hz,
            abs_diff: (x.defined && y.defined).then(|| (y.g - x.g).norm()),
            var_noise_ratio: (x.defined && y.defined).then(|| ratio_of(x.var_noise, y.var_noise)).flatten(),
            var_total_ratio: (x.defined && y.defined).then(|| ratio_of(x.var_total, y.var_total)).flatten(),
            definedness_differs: x.defined != y.defined,
        };
        if x.defined && y.defined {
            ga.push(x.g);
            gb.push(y.g);
        }
        definedness_mismatch |= diff.definedness_differs;
        max_abs_diff = max_abs_diff.max(diff.abs_diff.unwrap_or(0.0));
        let identical = diff.abs_diff.is_none_or(|d| d == 0.0)
            && diff.var_noise_ratio.is_none_or(|r| r == 1.0)
            && diff.var_total_ratio.is_none_or(|r| r == 1.0)
            && !diff.definedness_differs;
        if !identical {
            differences.push(diff);
        }
    }

    let analytic = match (a.join(ANALYTIC_FILE).exists(), b.join(ANALYTIC_FILE).exists()) {
        (true, true) => {
            let (xa, xb) = (read_analytic(&a.join(ANALYTIC_FILE))?, read_analytic(&b.join(ANALYTIC_FILE))?);
            let grid = |v: &[(usize, f64, Complex64)]| v.iter().map(|x| (x.0, x.1)).collect::<Vec<_>>();
            same_grid(&grid(&xa), &grid(&xb))?;
            let ga: Vec<Complex64> = xa.iter().map(|x| x.2).collect();
            let gb: Vec<Complex64> = xb.iter().map(|x| x.2).collect();
            Some(AnalyticComparison {
                max_abs_diff: ga.iter().zip(&gb).map(|(x, y)| (y - x).norm()).fold(0.0, f64::max),
                ratio: gain_ratio(&ga, &gb),
            })
        }
        _ => None,
    };

    Ok(CompareReport {
        tolerance,
        bins_compared: ba.len(),
        max_abs_diff,
        ratio: gain_ratio(&ga, &gb),
        within_tolerance: max_abs_diff <= tolerance && !definedness_mismatch,
        differences,
        analytic,
    })
}
