use sdreg_core::ensembles::{gen_dataset, gen_gaussian_map, gen_haar_lowrank, rip_estimate, HaarLowRankSpec};
use sdreg_core::eval::{denoise_experiment, dist, dist_solver_options, recovery_success, DenoiseModelConfig, DistProbeSet};
use sdreg_core::learning::{learn_semidefinite, learn_semidefinite_with, LearnOptions, Observation, Regularizer};
use sdreg_core::scaling::normalize;
use sdreg_core::{LinearMap, Matrix};

struct Instance {
    truth: LinearMap,
    y: Matrix,
}

fn instance(q: usize, d: usize, n: usize, seed: u64) -> Instance {
    let truth = normalize(&gen_gaussian_map(q, d, seed)).unwrap().0;
    let xs = gen_haar_lowrank(&HaarLowRankSpec {
        q,
        r: 1,
        s_min: 1.0,
        s_max: 1.0,
        n,
        seed,
    })
    .unwrap();
    let y = gen_dataset(&truth, &xs).unwrap();
    Instance { truth, y }
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(f)
}

#[test]
fn learning_is_bit_identical_across_thread_counts() {
    let inst = instance(4, 20, 200, 31);
    let l0 = gen_gaussian_map(4, 20, 32);
    let opts = LearnOptions {
        max_outer_iter: 5,
        ..LearnOptions::default()
    };
    let run = || learn_semidefinite(&inst.y, 1, &l0, &opts).unwrap();
    let one = in_pool(1, run);
    let many = in_pool(4, run);
    assert_eq!(one.regularizer, many.regularizer);
    assert_eq!(one.trace, many.trace);

    let probes = DistProbeSet::generate(4, 30, 33);
    let Regularizer::Semidefinite { map, .. } = &one.regularizer else {
        panic!("semidefinite model expected");
    };
    let d1 = in_pool(1, || dist(&inst.truth, map, &probes, &dist_solver_options()).unwrap());
    let d4 = in_pool(4, || dist(&inst.truth, map, &probes, &dist_solver_options()).unwrap());
    assert_eq!(d1.to_bits(), d4.to_bits());

    let r1 = in_pool(1, || rip_estimate(&inst.truth, 2, 40, 34).unwrap());
    let r4 = in_pool(3, || rip_estimate(&inst.truth, 2, 40, 34).unwrap());
    assert_eq!(r1.to_bits(), r4.to_bits());
}

#[test]
fn learning_recovers_truth_from_a_close_start() {
    let (q, d) = (3, 18);
    let inst = instance(q, d, 600, 41);
    let noise = gen_gaussian_map(q, d, 42);
    let l0 = inst.truth.add_scaled(&noise, 0.1).unwrap();
    let probes = DistProbeSet::generate(q, 40, 43);
    let opts = LearnOptions {
        max_outer_iter: 200,
        ..LearnOptions::default()
    };
    let mut dists = Vec::new();
    let model = learn_semidefinite_with(&inst.y, 1, &l0, &opts, |_, l| {
        let value = dist(&inst.truth, l, &probes, &dist_solver_options())?;
        dists.push(value);
        Ok(Observation {
            dist: Some(value),
            stop: recovery_success(value),
        })
    })
    .unwrap();
    assert!(model.trace.stopped_early, "distances {dists:?}");
    assert!(recovery_success(*dists.last().unwrap()));
    let start = normalize(&l0).unwrap().0;
    let initial = dist(&inst.truth, &start, &probes, &dist_solver_options()).unwrap();
    assert!(!recovery_success(initial), "start already within threshold: {initial}");
}

#[test]
fn denoising_experiment_is_deterministic_and_beats_shrinkage_on_its_own_class() {
    let inst = instance(3, 12, 300, 51);
    let train = inst.y.columns(0, 200).into_owned();
    let test = inst.y.columns(200, 100).into_owned();
    let configs = [DenoiseModelConfig::Semidefinite { q: 3, r: 1 }];
    let opts = LearnOptions {
        max_outer_iter: 30,
        ..LearnOptions::default()
    };
    let lambdas = [0.0, 0.05, 0.1, 0.2, 0.4];
    let run = || denoise_experiment(&train, &test, 0.1, &lambdas, &configs, &opts, 52).unwrap();
    let a = in_pool(1, run);
    let b = in_pool(4, run);
    assert_eq!(a, b);
    assert_eq!(a.rows.len(), 2 * lambdas.len());
    let learned = &a.best[0];
    let shrink = &a.best[1];
    assert!(learned.normalized_mse < shrink.normalized_mse, "{:?}", a.best);
}
