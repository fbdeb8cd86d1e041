use timemm::checkpoint::Checkpoint;
use timemm::config::RunConfig;
use timemm::pipeline::{run, Dataset};
use timemm::synth::{generate, SynthConfig};
use timemm::training::history_csv;

fn small_run(threads: usize) -> (String, Vec<u8>) {
    let data = generate(&SynthConfig {
        users: 150,
        items: 90,
        seed: 11,
        ..SynthConfig::default()
    })
    .unwrap();
    let ds = Dataset::new(data.log, data.features).unwrap();
    let cfg = RunConfig::parse("dim = 8\nhidden = 8\nbatch_size = 512\nepochs = 3\nlr = 0.005\nseed = 4\n").unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    let result = pool.install(|| run(&cfg, &ds.split, &ds.features)).unwrap();
    let ckpt = Checkpoint::from_parameters(cfg.echo(), &result.model.params).to_bytes();
    (history_csv(&result.outcome.history), ckpt)
}

#[test]
fn single_thread_runs_are_bitwise_identical() {
    let a = small_run(1);
    let b = small_run(1);
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    assert_eq!(a.0.lines().count(), 4);
}

#[test]
fn thread_count_does_not_change_results() {
    assert_eq!(small_run(1), small_run(3));
}
