//! The generate → simulate → estimate → decompose pipeline and its reports.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use blapn::analytic::{
    analytic_hammerstein_bla, analytic_hammerstein_decomposition, bussgang_gain, hammerstein_variance_spectra,
    GaussianInputModel, SymbolicDecomposition,
};
use blapn::estimator::{
    decompose_output, read_record_bundle, robust_bla, robust_bla_closed_loop, write_bla_csv, write_record_bundle,
    BlaEstimate, Decomposition, ExperimentRecord,
};
use blapn::experiment::{realization_input, run_closed_loop, run_open_loop};
use blapn::signals::{write_signal_csv, MultisineSpec};
use blapn::Seed;
use num_complex::Complex64;
use serde::Serialize;

use crate::config::{ExperimentConfig, LoopMode, ResolvedSystem};
use crate::error::{CliError, CliResult};

pub const BUNDLE_DIR: &str = "bundle";
pub const BLA_FILE: &str = "bla.csv";
pub const ANALYTIC_FILE: &str = "analytic.csv";
pub const DECOMPOSITION_JSON: &str = "decomposition.json";
pub const DECOMPOSITION_CSV: &str = "decomposition.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const ANALYTIC_CSV_HEADER: &str = "bin_index,frequency_hz,g_real,g_imag";

/// Runs `f` on a pool of `workers` threads (the rayon default when `None`).
/// Results do not depend on the worker count.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        if n == 0 {
            return Err(CliError::Config("--workers must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CliError::Data(e.to_string()))?;
    Ok(pool.install(f))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes the excitation of every realization as `excitation/u_mXXX.csv`.
pub fn generate(config: &ExperimentConfig, out: &Path) -> CliResult<Vec<PathBuf>> {
    let spec = config.spec()?;
    let dir = out.join("excitation");
    fs::create_dir_all(&dir)?;
    let mut paths = Vec::with_capacity(config.realizations);
    for m in 0..config.realizations {
        let u = realization_input(&spec, Seed::new(config.seed), m, config.periods)?;
        let path = dir.join(format!("u_m{m:03}.csv"));
        let mut w = create(&path)?;
        write_signal_csv(&mut w, &u)?;
        w.flush()?;
        paths.push(path);
    }
    Ok(paths)
}

pub fn simulate(config: &ExperimentConfig, system: &ResolvedSystem) -> CliResult<ExperimentRecord> {
    let spec = config.spec()?;
    let root = Seed::new(config.seed);
    let record = match config.mode {
        LoopMode::Open => run_open_loop(&spec, config.realizations, config.periods, &config.simulator(system), root)?,
        LoopMode::Closed => run_closed_loop(
            &spec,
            config.realizations,
            config.periods,
            &config.closed_loop(system)?,
            &config.warmup_policy(),
            root,
        )?,
    };
    Ok(record)
}

pub fn estimate(record: &ExperimentRecord) -> CliResult<BlaEstimate> {
    Ok(if record.is_closed_loop() {
        robust_bla_closed_loop(record)?
    } else {
        robust_bla(record)?
    })
}

pub fn write_bla(path: &Path, estimate: &BlaEstimate) -> CliResult<()> {
    let mut w = create(path)?;
    write_bla_csv(&mut w, estimate)?;
    w.flush()?;
    Ok(())
}

/// Estimates the BLA of a stored bundle and writes `bla.csv` into `out`.
pub fn estimate_bundle(bundle: &Path, out: &Path) -> CliResult<BlaEstimate> {
    let record = read_record_bundle(bundle)?;
    let est = estimate(&record)?;
    fs::create_dir_all(out)?;
    write_bla(&out.join(BLA_FILE), &est)?;
    Ok(est)
}

fn input_model(config: &ExperimentConfig, spec: &MultisineSpec) -> CliResult<GaussianInputModel> {
    Ok(GaussianInputModel::new(spec.rms().powi(2), config.noise.process_variance)?)
}

/// Analytic BLA on the excited bins, when one exists for the configuration:
/// the Bussgang result in open loop, the plant itself for a linear plant in
/// closed loop.
pub fn analytic_bla(config: &ExperimentConfig, system: &ResolvedSystem) -> CliResult<Option<Vec<Complex64>>> {
    if !config.oracle.analytic_bla {
        return Ok(None);
    }
    let spec = config.spec()?;
    let n = spec.samples_per_period();
    let h = &system.hammerstein;
    match config.mode {
        LoopMode::Open => {
            let model = input_model(config, &spec)?;
            Ok(Some(analytic_hammerstein_bla(&h.lti, &h.nonlinearity, &model, spec.excited_bins(), n)))
        }
        LoopMode::Closed if h.nonlinearity.degree() <= 1 => {
            let c = h.nonlinearity.coefficient(1);
            Ok(Some(spec.excited_bins().iter().map(|&k| c * h.lti.response_at_bin(k, n)).collect()))
        }
        LoopMode::Closed => Ok(None),
    }
}

pub fn write_analytic(path: &Path, spec: &MultisineSpec, g: &[Complex64]) -> CliResult<()> {
    let mut w = create(path)?;
    writeln!(w, "{ANALYTIC_CSV_HEADER}")?;
    for (&k, v) in spec.excited_bins().iter().zip(g) {
        let f = k as f64 * spec.sampling_frequency() / spec.samples_per_period() as f64;
        writeln!(w, "{k},{},{},{}", fmt(f), fmt(v.re), fmt(v.im))?;
    }
    w.flush()?;
    Ok(())
}

/// `(bin_index, frequency_hz, g)` rows of an analytic CSV.
pub fn read_analytic(path: &Path) -> CliResult<Vec<(usize, f64, Complex64)>> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line.trim() != ANALYTIC_CSV_HEADER {
                return Err(CliError::Data(format!("{}: unexpected header", path.display())));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = || CliError::Data(format!("{}: line {}: malformed row", path.display(), i + 1));
        if f.len() != 4 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        rows.push((f[0].parse().map_err(|_| bad())?, num(f[1])?, Complex64::new(num(f[2])?, num(f[3])?)));
    }
    Ok(rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct DecompositionBin {
    pub bin_index: usize,
    pub frequency_hz: f64,
    pub var_nonlinear: f64,
    pub var_process: f64,
    pub var_output: f64,
    pub analytic_var_nonlinear: f64,
    pub analytic_var_process: f64,
    pub analytic_var_output: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecompositionReport {
    pub realization: usize,
    pub process_realizations: usize,
    /// Term lists of the constituents, or `None` with a note when the
    /// nonlinearity is not of the form `c1 x + c3 x^3`.
    pub symbolic: Option<SymbolicDecomposition>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub symbolic_note: Option<String>,
    pub rms: ConstituentRms,
    pub bins: Vec<DecompositionBin>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ConstituentRms {
    pub y: f64,
    pub y_bla: f64,
    pub y_s: f64,
    pub y_p: f64,
    pub y_n: f64,
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Decomposes the output of one realization (open loop only) and writes
/// `decomposition.json` and `decomposition.csv`.
pub fn decompose(config: &ExperimentConfig, system: &ResolvedSystem, out: &Path) -> CliResult<DecompositionReport> {
    if config.mode != LoopMode::Open {
        return Err(CliError::Core(blapn::Error::Unsupported(
            "output decomposition needs the open-loop simulator".into(),
        )));
    }
    let spec = config.spec()?;
    let n = spec.samples_per_period();
    let h = &system.hammerstein;
    let model = input_model(config, &spec)?;
    let gain = bussgang_gain(&h.nonlinearity, &model);
    let g: Vec<Complex64> = h.lti.response_on_grid(n).iter().map(|v| v * gain).collect();
    let r = config.decomposition.realization;
    let root = Seed::new(config.seed);
    let u = realization_input(&spec, root, r, config.periods)?;
    let d = decompose_output(
        &config.simulator(system),
        &u,
        config.decomposition.process_realizations,
        &g,
        root.child(r as u64).child(0xdec0),
    )?;

    let bins = spec.excited_bins();
    let predicted = hammerstein_variance_spectra(&h.lti, &h.nonlinearity, &model, config.noise.output_variance, bins, n);
    let report_bins = bins
        .iter()
        .enumerate()
        .map(|(i, &k)| DecompositionBin {
            bin_index: k,
            frequency_hz: k as f64 * spec.sampling_frequency() / n as f64,
            var_nonlinear: d.var_nonlinear[k],
            var_process: d.var_process[k],
            var_output: d.var_output[k],
            analytic_var_nonlinear: predicted.nonlinear[i],
            analytic_var_process: predicted.process[i],
            analytic_var_output: predicted.output[i],
        })
        .collect();
    let (symbolic, symbolic_note) = match analytic_hammerstein_decomposition(&h.nonlinearity, &model, true) {
        Ok(s) => (Some(s), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let report = DecompositionReport {
        realization: r,
        process_realizations: d.process_realizations,
        symbolic,
        symbolic_note,
        rms: ConstituentRms {
            y: rms(&d.y),
            y_bla: rms(&d.y_bla),
            y_s: rms(&d.y_s),
            y_p: rms(&d.y_p),
            y_n: rms(&d.y_n),
        },
        bins: report_bins,
    };
    fs::create_dir_all(out)?;
    write_json(&out.join(DECOMPOSITION_JSON), &report)?;
    write_decomposition_csv(&out.join(DECOMPOSITION_CSV), &d, spec.sampling_frequency())?;
    Ok(report)
}

fn write_decomposition_csv(path: &Path, d: &Decomposition, fs_hz: f64) -> CliResult<()> {
    let mut w = create(path)?;
    writeln!(w, "sample_index,time_s,y,y_bla,y_s,y_p,y_n")?;
    for t in 0..d.y.len() {
        writeln!(
            w,
            "{t},{},{},{},{},{},{}",
            fmt(t as f64 / fs_hz),
            fmt(d.y[t]),
            fmt(d.y_bla[t]),
            fmt(d.y_s[t]),
            fmt(d.y_p[t]),
            fmt(d.y_n[t])
        )?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct BinError {
    pub bin_index: usize,
    pub frequency_hz: f64,
    pub abs_error: Option<f64>,
    pub rel_error: Option<f64>,
    pub sigma_total: Option<f64>,
    pub inside_band: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleSummary {
    pub band_sigma: f64,
    pub min_fraction: f64,
    pub fraction_inside: f64,
    pub max_abs_error: f64,
    pub pass: bool,
    pub bins: Vec<BinError>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub config: ExperimentConfig,
    pub excited_bins: usize,
    pub defined_bins: usize,
    pub max_var_noise: f64,
    pub max_var_total: f64,
    pub oracle: Option<OracleSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_note: Option<String>,
    pub decomposition: Option<ConstituentRms>,
    pub pass: bool,
}

/// Relative error treated as round-off when the band itself collapses, as it
/// does for noiseless linear systems.
pub const BAND_FLOOR: f64 = 1e-9;

/// Per-bin comparison of the estimate against the analytic BLA. A bin is
/// inside the band when
/// `|G_est - G| <= band_sigma * sqrt(var_total) + BAND_FLOOR * |G|`.
pub fn oracle_summary(estimate: &BlaEstimate, analytic: &[Complex64], band_sigma: f64, min_fraction: f64) -> OracleSummary {
    let bins: Vec<BinError> = estimate
        .bins
        .iter()
        .zip(analytic)
        .map(|(b, g)| {
            if !b.defined {
                return BinError {
                    bin_index: b.index,
                    frequency_hz: b.frequency_hz,
                    abs_error: None,
                    rel_error: None,
                    sigma_total: None,
                    inside_band: false,
                };
            }
            let err = (b.g - g).norm();
            let sigma = b.var_total.sqrt();
            BinError {
                bin_index: b.index,
                frequency_hz: b.frequency_hz,
                abs_error: Some(err),
                rel_error: (g.norm() > 0.0).then(|| err / g.norm()),
                sigma_total: Some(sigma),
                inside_band: err <= band_sigma * sigma + BAND_FLOOR * g.norm(),
            }
        })
        .collect();
    let inside = bins.iter().filter(|b| b.inside_band).count();
    let fraction_inside = if bins.is_empty() { 0.0 } else { inside as f64 / bins.len() as f64 };
    let max_abs_error = bins.iter().filter_map(|b| b.abs_error).fold(0.0, f64::max);
    OracleSummary {
        band_sigma,
        min_fraction,
        fraction_inside,
        max_abs_error,
        pass: fraction_inside >= min_fraction,
        bins,
    }
}

/// Full pipeline. Writes the record bundle, `bla.csv`, `analytic.csv` (when
/// an analytic BLA exists), the decomposition report (open loop, when
/// enabled) and `summary.json` into `out`.
pub fn run_experiment(config: &ExperimentConfig, out: &Path) -> CliResult<Summary> {
    config.validate()?;
    let system = config.resolve_system()?;
    let spec = config.spec()?;
    fs::create_dir_all(out)?;
    let record = simulate(config, &system)?;
    write_record_bundle(&out.join(BUNDLE_DIR), &record)?;
    let est = estimate(&record)?;
    write_bla(&out.join(BLA_FILE), &est)?;

    let analytic = analytic_bla(config, &system)?;
    let (oracle, oracle_note) = match &analytic {
        Some(g) => {
            write_analytic(&out.join(ANALYTIC_FILE), &spec, g)?;
            (Some(oracle_summary(&est, g, config.oracle.band_sigma, config.oracle.min_fraction)), None)
        }
        None if !config.oracle.analytic_bla => (None, Some("analytic comparison disabled".to_string())),
        None => (None, Some("no analytic BLA for a nonlinear plant in closed loop".to_string())),
    };
    let decomposition = if config.decomposition.enabled && config.mode == LoopMode::Open {
        Some(decompose(config, &system, out)?.rms)
    } else {
        None
    };
    let defined = est.defined_bins().count();
    let max_of = |f: fn(&blapn::estimator::BlaBin) -> f64| est.defined_bins().map(f).fold(0.0, f64::max);
    let summary = Summary {
        config: config.resolved(&system),
        excited_bins: est.bins.len(),
        defined_bins: defined,
        max_var_noise: max_of(|b| b.var_noise),
        max_var_total: max_of(|b| b.var_total),
        pass: oracle.as_ref().is_none_or(|o| o.pass),
        oracle,
        oracle_note,
        decomposition,
    };
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}
