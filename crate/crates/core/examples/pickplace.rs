//! Run one pick-and-place episode against the simulated gantry and print the
//! subtask timeline.

use sns::controller::{ArithmeticKit, Controller, ControllerConfig, SubtaskId};
use sns::gantry::{run_episode, EpisodeOptions, SimConfig};

fn main() -> sns::Result<()> {
    let mut controller = Controller::new(ControllerConfig::default(), &ArithmeticKit::exact())?;
    println!("{} neurons", controller.params.n);
    let trace = run_episode(&mut controller, &SimConfig::default(), &EpisodeOptions::default())?;

    let mut last = 0;
    for s in &trace.steps {
        if s.subtask != last {
            let name = SubtaskId::from_number(s.subtask).map(|id| id.name()).unwrap_or("-");
            let p = s.state.pos;
            println!("{:6.2} s  {:>2} {name:<24} gripper ({:.3}, {:.3}, {:.3})", s.state.t, s.subtask, p[0], p[1], p[2]);
            last = s.subtask;
        }
    }
    let sum = &trace.summary;
    println!(
        "success {} in {:.2} s, object {:.2} mm from target",
        sum.success,
        sum.duration,
        sum.object_error * 1e3
    );
    Ok(())
}
