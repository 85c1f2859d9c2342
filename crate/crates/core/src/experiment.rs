//! Runs `M` realizations of `P`-period multisine experiments and collects the
//! spectra into an [`ExperimentRecord`].
//!
//! Realization `m` draws all of its randomness from `seed.child(m)`, so the
//! record is a pure function of the root seed regardless of how many threads
//! run the realizations.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimator::ExperimentRecord;
use crate::seed::{Seed, Stream};
use crate::signals::{generate_multisine, MultisineSpec, PeriodicSignal, Spectrum};
use crate::systems::{ClosedLoopConfig, LoopSeeds, NoisySimulator, WarmupPolicy};

fn check_counts(realizations: usize, periods: usize) -> Result<()> {
    if realizations < 2 || periods < 2 {
        return Err(Error::Config(format!(
            "robust estimation needs M >= 2 and P >= 2, got M = {realizations}, P = {periods}"
        )));
    }
    Ok(())
}

/// Seed of realization `m`.
pub fn realization_seed(root: Seed, m: usize) -> Seed {
    root.child(m as u64)
}

/// Excitation of realization `m`: one period of a fresh random-phase
/// multisine, repeated `periods` times.
pub fn realization_input(spec: &MultisineSpec, root: Seed, m: usize, periods: usize) -> Result<PeriodicSignal> {
    let seed = realization_seed(root, m).stream(Stream::Phases);
    Ok(generate_multisine(spec, seed)?.repeat(periods))
}

fn period_spectra(signal: &PeriodicSignal) -> Vec<Spectrum> {
    (0..signal.period_count()).map(|p| signal.period_spectrum(p)).collect()
}

/// Open-loop experiment on a noisy simulator.
pub fn run_open_loop(
    spec: &MultisineSpec,
    realizations: usize,
    periods: usize,
    simulator: &dyn NoisySimulator,
    root: Seed,
) -> Result<ExperimentRecord> {
    check_counts(realizations, periods)?;
    let runs: Vec<(Spectrum, Vec<Spectrum>)> = (0..realizations)
        .into_par_iter()
        .map(|m| {
            let u = realization_input(spec, root, m, periods)?;
            let seed = realization_seed(root, m);
            let y = simulator.simulate_output(
                &u,
                Some(seed.stream(Stream::ProcessNoise)),
                Some(seed.stream(Stream::OutputNoise)),
            )?;
            Ok((u.period_spectrum(0), period_spectra(&y)))
        })
        .collect::<Result<_>>()?;
    let (input, output) = runs.into_iter().unzip();
    Ok(ExperimentRecord {
        samples_per_period: spec.samples_per_period(),
        sampling_frequency: spec.sampling_frequency(),
        excited_bins: spec.excited_bins().to_vec(),
        input,
        output,
        input_periods: None,
        reference: None,
    })
}

/// Closed-loop experiment with the multisine as reference `r`.
pub fn run_closed_loop(
    spec: &MultisineSpec,
    realizations: usize,
    periods: usize,
    config: &ClosedLoopConfig,
    policy: &WarmupPolicy,
    root: Seed,
) -> Result<ExperimentRecord> {
    check_counts(realizations, periods)?;
    config.validate()?;
    type Run = (Spectrum, Spectrum, Vec<Spectrum>, Vec<Spectrum>);
    let runs: Vec<Run> = (0..realizations)
        .into_par_iter()
        .map(|m| {
            let r = realization_input(spec, root, m, periods)?;
            let record = config.simulate(&r, LoopSeeds::from_root(realization_seed(root, m)), policy)?;
            let us = period_spectra(&record.u);
            let mut u_bar = us[0].clone();
            for (k, v) in u_bar.bins_mut().iter_mut().enumerate() {
                *v = us.iter().map(|u| u[k]).sum::<num_complex::Complex64>() / periods as f64;
            }
            Ok((r.period_spectrum(0), u_bar, us, period_spectra(&record.y)))
        })
        .collect::<Result<_>>()?;
    let mut reference = Vec::with_capacity(realizations);
    let mut input = Vec::with_capacity(realizations);
    let mut input_periods = Vec::with_capacity(realizations);
    let mut output = Vec::with_capacity(realizations);
    for (r, u_bar, us, ys) in runs {
        reference.push(r);
        input.push(u_bar);
        input_periods.push(us);
        output.push(ys);
    }
    Ok(ExperimentRecord {
        samples_per_period: spec.samples_per_period(),
        sampling_frequency: spec.sampling_frequency(),
        excited_bins: spec.excited_bins().to_vec(),
        input,
        output,
        input_periods: Some(input_periods),
        reference: Some(reference),
    })
}
