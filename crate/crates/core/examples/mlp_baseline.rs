//! Train the SNS adder and an MLP on the same data and compare how fast each
//! gets under 0.01 mse.

use sns::training::{baseline_sizes, gen_dataset, mlp_eval, mlp_train, MlpParams};
use sns::{build_topology, train, ArithOp, TrainConfig};

fn main() -> sns::Result<()> {
    let op = ArithOp::Add;
    let cfg = TrainConfig::default();
    let data = gen_dataset(op, cfg.examples, cfg.seq_len, cfg.dt, cfg.seed)?;
    let (_, sns_curve) = train(&build_topology(op, cfg.seed), &data, &cfg)?;
    let (mlp, mlp_curve) = mlp_train(&MlpParams::init(&baseline_sizes(op), cfg.seed), &data, &cfg)?;

    println!("sns: best {:.2e}, epochs to 0.01 {:?}", sns_curve.best(), sns_curve.epochs_to_reach(0.01));
    println!("mlp: best {:.2e}, epochs to 0.01 {:?}", mlp_curve.best(), mlp_curve.epochs_to_reach(0.01));
    for (a, b) in [(2.0, 3.0), (5.0, 10.0), (10.0, 10.0)] {
        println!("mlp({a}, {b}) = {:.3}", mlp_eval(&mlp, a, b));
    }
    Ok(())
}
