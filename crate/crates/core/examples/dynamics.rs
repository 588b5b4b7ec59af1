//! A two-neuron shunting divider built from membrane parameters, then run to
//! steady state and stepped by hand.

use sns::{from_biophysical, simulate, steady_state, BiophysicalNeuron, Synapse};

fn main() -> sns::Result<()> {
    let input = BiophysicalNeuron { c_m: 5.0, g_m: 1.0, e_r: 0.0, i_bias: 0.0, synapses: vec![] };
    // inhibitory synapse reversing at rest: purely shunting
    let divider = BiophysicalNeuron {
        c_m: 5.0,
        g_m: 1.0,
        e_r: 0.0,
        i_bias: 0.0,
        synapses: vec![Synapse { pre: 0, g: 1.0, e_rev: 40.0 }, Synapse { pre: 1, g: 20.0, e_rev: 0.0 }],
    };
    let mut p = from_biophysical(&[input.clone(), input, divider], 0.001, 0.0, 20.0)?;
    p.clamped = vec![0, 1];

    println!("  a     b     out");
    for (a, b) in [(20.0, 0.0), (20.0, 5.0), (10.0, 10.0), (20.0, 20.0)] {
        let (s, steps) = steady_state(&p, &[(0, a), (1, b)], 1e-10, 100_000)?;
        println!("{a:5.1} {b:5.1} {:6.3}  ({steps} steps)", p.readout(s.h[2]));
    }

    let rows: Vec<Vec<f64>> = (0..30).map(|k| vec![20.0, if k < 15 { 0.0 } else { 20.0 }]).collect();
    let trace = simulate(&p, &rows, &[0.0; 3])?;
    let out: Vec<String> = trace.iter().step_by(3).map(|h| format!("{:.2}", h[2])).collect();
    println!("step response: {}", out.join(" "));
    Ok(())
}
