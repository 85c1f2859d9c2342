use blapn::estimator::{
    read_bla_csv, read_record_bundle, robust_bla, robust_bla_closed_loop, write_bla_csv, write_record_bundle,
};
use blapn::experiment::{run_closed_loop, run_open_loop};
use blapn::signals::MultisineSpec;
use blapn::systems::{
    ClosedLoopConfig, HammersteinSimulator, HammersteinSystem, NoiseLevels, Plant, RationalLTI, WarmupPolicy,
};
use blapn::volterra::{expected_kernel, DualVolterraKernel, KernelFile, NoiseMomentModel};
use blapn::Seed;

fn noise() -> NoiseLevels {
    NoiseLevels {
        input: 0.0,
        process: 0.01,
        output: 0.0009,
    }
}

#[test]
fn open_loop_bundle_round_trip() {
    let spec = MultisineSpec::full_band(128, 2.0, 1.0).unwrap();
    let sim = HammersteinSimulator {
        system: HammersteinSystem::example(),
        noise: noise(),
        warmup: WarmupPolicy::default(),
    };
    let record = run_open_loop(&spec, 3, 2, &sim, Seed::new(11)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_record_bundle(dir.path(), &record).unwrap();
    let back = read_record_bundle(dir.path()).unwrap();
    assert_eq!(back.realizations(), 3);
    assert!(!back.is_closed_loop());

    let (a, b) = (robust_bla(&record).unwrap(), robust_bla(&back).unwrap());
    for (x, y) in a.bins.iter().zip(&b.bins) {
        assert!((x.g - y.g).norm() <= 1e-12 * x.g.norm(), "bin {}", x.index);
    }

    let mut csv = Vec::new();
    write_bla_csv(&mut csv, &a).unwrap();
    let rows = read_bla_csv(csv.as_slice()).unwrap();
    assert_eq!(rows.len(), a.bins.len());
    assert_eq!(rows[5].index, a.bins[5].index);
    assert!((rows[5].g - a.bins[5].g).norm() < 1e-15);
}

#[test]
fn closed_loop_bundle_keeps_reference() {
    let spec = MultisineSpec::full_band(64, 1.0, 1.0).unwrap();
    let config = ClosedLoopConfig::new(
        Plant::Hammerstein(HammersteinSystem::example()),
        RationalLTI::identity(),
        RationalLTI::new(vec![0.0, 0.5], vec![1.0]).unwrap(),
        noise(),
    )
    .unwrap();
    let record = run_closed_loop(&spec, 2, 3, &config, &WarmupPolicy::default(), Seed::new(5)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_record_bundle(dir.path(), &record).unwrap();
    let back = read_record_bundle(dir.path()).unwrap();
    assert!(back.is_closed_loop());
    let (a, b) = (robust_bla_closed_loop(&record).unwrap(), robust_bla_closed_loop(&back).unwrap());
    for (x, y) in a.bins.iter().zip(&b.bins) {
        assert!((x.g - y.g).norm() <= 1e-12 * x.g.norm());
    }
}

#[test]
fn kernel_file_round_trip() {
    // m = 1, n = 2 with two taps each: u(t-k) n_x(t-j1) n_x(t-j2)
    let kernel = DualVolterraKernel::new(1, 2, 2, 2, (0..8).map(|i| i as f64 * 0.1).collect()).unwrap();
    let model = NoiseMomentModel::new(vec![0.04, 0.01], true).unwrap();
    let file = KernelFile::new(&kernel, &model);
    let back = KernelFile::from_json(&file.to_json()).unwrap();
    assert_eq!(back, file);
    let a = expected_kernel(&kernel, &model).unwrap();
    let b = expected_kernel(&back.kernel().unwrap(), &back.noise_model().unwrap()).unwrap();
    assert_eq!(a, b);
    assert!(KernelFile::from_json("{\"m\": 1}").is_err());
}
