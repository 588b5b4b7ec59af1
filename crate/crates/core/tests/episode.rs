use sns::controller::{ArithmeticKit, Controller, ControllerConfig};
use sns::gantry::{read_trace_csv, read_trace_jsonl, run_episode, EpisodeOptions, EpisodeTrace, SimConfig};
use sns::subnet::{build_topology, ArithOp};
use sns::training::{gen_dataset, train, TrainConfig};

fn run(kit: &ArithmeticKit, sim: &SimConfig, opts: &EpisodeOptions) -> EpisodeTrace {
    let mut c = Controller::new(ControllerConfig::default(), kit).unwrap();
    run_episode(&mut c, sim, opts).unwrap()
}

fn at_most_one_command(trace: &EpisodeTrace) -> bool {
    trace.steps.iter().all(|s| s.activities.iter().filter(|&&a| a > 0.5).count() <= 1)
}

#[test]
fn default_episode_phases() {
    let trace = run(&ArithmeticKit::exact(), &SimConfig::default(), &EpisodeOptions::default());
    assert!(trace.summary.success);
    assert!(at_most_one_command(&trace));
    // phases before the return home never go backwards
    let labels: Vec<u8> = trace.steps.iter().map(|s| s.subtask).filter(|&l| l != 0).collect();
    assert!(labels.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(labels.last(), Some(&9));
    let times: Vec<f64> = trace.steps.iter().map(|s| s.state.t).collect();
    assert!(times.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn object_already_on_target() {
    let mut sim = SimConfig::default();
    sim.target = sim.object_start;
    let trace = run(&ArithmeticKit::exact(), &sim, &EpisodeOptions::default());
    assert!(trace.summary.success);
    assert_eq!(trace.summary.subtasks, vec![1, 2, 3, 4, 5, 6, 7, 8, 9]);
}

#[test]
fn other_placements() {
    for (object, target) in [([0.1, 0.05, -0.3], [0.3, 0.2, -0.29]), ([0.2, 0.3, -0.25], [0.0, 0.1, -0.27])] {
        let sim = SimConfig { object_start: object, target, ..Default::default() };
        let trace = run(&ArithmeticKit::exact(), &sim, &EpisodeOptions::default());
        assert!(trace.summary.success, "{object:?} -> {target:?}: {:?}", trace.summary);
        assert_eq!(trace.summary.subtasks, vec![1, 2, 3, 4, 5, 6, 7, 8, 9]);
        assert!(at_most_one_command(&trace));
    }
}

#[test]
fn target_far_below_object_never_settles() {
    // the hover point over the target sits under the lifted-object threshold
    let sim = SimConfig { object_start: [0.1, 0.05, -0.3], target: [0.3, 0.2, -0.35], ..Default::default() };
    let opts = EpisodeOptions { force_fault: false, max_time: Some(30.0) };
    let trace = run(&ArithmeticKit::exact(), &sim, &opts);
    assert!(!trace.summary.success);
    assert_eq!(trace.summary.max_subtask, 5);
}

#[test]
fn missing_force_signal_stalls_at_grasp() {
    let opts = EpisodeOptions { force_fault: true, max_time: Some(30.0) };
    let trace = run(&ArithmeticKit::exact(), &SimConfig::default(), &opts);
    assert!(!trace.summary.success);
    assert!(trace.steps.iter().all(|s| s.subtask <= 3));
    assert_eq!(trace.summary.subtasks, vec![1, 2, 3]);
}

#[test]
fn traces_are_reproducible_and_round_trip() {
    let a = run(&ArithmeticKit::exact(), &SimConfig::default(), &EpisodeOptions::default());
    let b = run(&ArithmeticKit::exact(), &SimConfig::default(), &EpisodeOptions::default());
    assert_eq!(a, b);
    let dir = tempfile::tempdir().unwrap();
    a.write_csv(dir.path().join("trace.csv")).unwrap();
    a.write_jsonl(dir.path().join("trace.jsonl")).unwrap();
    assert_eq!(read_trace_csv(dir.path().join("trace.csv")).unwrap(), a.rows());
    assert_eq!(read_trace_jsonl(dir.path().join("trace.jsonl")).unwrap(), a.steps);
}

#[test]
fn controller_from_trained_subnetworks() {
    let cfg = TrainConfig::default();
    let mut nets = Vec::new();
    for op in [ArithOp::Add, ArithOp::Sub] {
        let data = gen_dataset(op, cfg.examples, cfg.seq_len, cfg.dt, 0).unwrap();
        nets.push(train(&build_topology(op, 0), &data, &cfg).unwrap().0);
    }
    let kit = ArithmeticKit::from_params(&nets[0], &nets[1]).unwrap();
    for (w, want) in kit.add.iter().zip([20.0, 20.0, 0.0]).chain(kit.sub.iter().zip([20.0, -20.0, 0.0])) {
        assert!((w - want).abs() < 0.05, "{kit:?}");
    }
    let trace = run(&kit, &SimConfig::default(), &EpisodeOptions::default());
    assert!(trace.summary.success, "{:?}", trace.summary);
    assert_eq!(trace.summary.subtasks, vec![1, 2, 3, 4, 5, 6, 7, 8, 9]);
}
