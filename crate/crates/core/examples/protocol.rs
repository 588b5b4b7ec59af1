//! Drive the loopback device with raw G-code lines, then run the full episode
//! over the line protocol with and without latency.

use sns::controller::{ArithmeticKit, Controller, ControllerConfig};
use sns::gantry::{EpisodeOptions, SimConfig};
use sns::protocol::{encode_dwell, encode_grasper, encode_move, encode_query, run_protocol_episode, LoopbackDevice, Transport, DEFAULT_FEED};

fn main() -> sns::Result<()> {
    let mut dev = LoopbackDevice::new(SimConfig::default(), 0.0)?;
    let lines = [
        encode_move([0.05, 0.02, -0.01], DEFAULT_FEED)?,
        encode_grasper(20.0)?,
        encode_dwell(500),
        encode_query(),
        "G1 X0".to_string(),
    ];
    for line in &lines {
        println!("> {line}");
        for reply in dev.send(line)? {
            println!("< {reply}");
        }
    }

    for latency in [0.0, 40.0] {
        let mut controller = Controller::new(ControllerConfig::default(), &ArithmeticKit::exact())?;
        let mut dev = LoopbackDevice::new(SimConfig::default(), latency)?;
        dev.record_transcript = true;
        let trace = run_protocol_episode(&mut controller, &mut dev, &EpisodeOptions::default())?;
        println!(
            "latency {latency} ms: success {}, {:.2} s, {} lines exchanged",
            trace.summary.success,
            trace.summary.duration,
            dev.transcript.len()
        );
    }
    Ok(())
}
