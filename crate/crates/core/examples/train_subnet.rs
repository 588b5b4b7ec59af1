//! Train the subtraction subnetwork and print its learned weights and a
//! coarse steady-state contour.

use sns::subnet::classify_synapses;
use sns::training::gen_dataset;
use sns::{build_topology, eval_contour, train, ArithOp, TrainConfig};

fn main() -> sns::Result<()> {
    let op = ArithOp::Sub;
    let cfg = TrainConfig::default();
    let topo = build_topology(op, cfg.seed);
    let data = gen_dataset(op, cfg.examples, cfg.seq_len, cfg.dt, cfg.seed)?;
    let (params, curve) = train(&topo, &data, &cfg)?;
    println!("best mse {:.2e} after {} epochs", curve.best(), curve.len());
    for (pre, post, kind) in classify_synapses(&params) {
        println!("  {pre} -> {post}: w {:8.3} v {:6.3} {kind:?}", params.w[post][pre], params.v[post][pre]);
    }

    let contour = eval_contour(&params, topo.output, 5)?;
    println!("max grid error {:.4} mV", contour.max_abs_error(op));
    for (i, row) in contour.values.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:6.2}")).collect();
        println!("a={:4.1} {}", contour.axis[i], cells.join(" "));
    }
    Ok(())
}
