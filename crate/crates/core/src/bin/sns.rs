use std::io::BufRead;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sns::gantry::SimConfig;
use sns::harness::{self, exit_code, Outcome};
use sns::protocol::{LoopbackDevice, Transport};
use sns::training::GradcheckOptions;
use sns::{ArithOp, Result};

#[derive(Parser)]
#[command(name = "sns", version, about = "Synthetic nervous system training and control")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Baseline {
    Mlp,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train an arithmetic subnetwork.
    Train {
        #[arg(long)]
        op: ArithOp,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        baseline: Option<Baseline>,
    },
    /// Compare BPTT gradients with central differences on random networks.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        nets: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the closed-loop pick-and-place episode.
    Pickplace {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        via_protocol: bool,
        #[arg(long, default_value_t = 0.0)]
        latency_ms: f64,
    },
    /// Write the steady-state output grid of a saved subnetwork.
    Contour {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Talk to a loopback device over stdin/stdout.
    Device {
        #[arg(long, default_value_t = 0.0)]
        latency_ms: f64,
    },
}

fn device(latency_ms: f64) -> Result<Outcome> {
    let mut dev = LoopbackDevice::new(SimConfig::default(), latency_ms)?;
    for line in std::io::stdin().lock().lines() {
        let line = line.map_err(|e| sns::SnsError::Io { path: "<stdin>".into(), source: e })?;
        for reply in dev.send(line.trim())? {
            println!("{reply}");
        }
    }
    Ok(Outcome { passed: true, summary: serde_json::Value::Null })
}

fn run(cmd: Cmd) -> Result<Outcome> {
    match cmd {
        Cmd::Train { op, config, out, baseline } => harness::cmd_train(op, &config, &out, baseline.is_some()),
        Cmd::Gradcheck { seed, nets, out } => {
            let opts = GradcheckOptions { nets, ..Default::default() };
            harness::cmd_gradcheck(seed, &opts, out.as_deref())
        }
        Cmd::Pickplace { config, out, via_protocol, latency_ms } => {
            harness::cmd_pickplace(config.as_deref(), &out, via_protocol, latency_ms)
        }
        Cmd::Contour { params, out } => harness::cmd_contour(&params, &out),
        Cmd::Device { latency_ms } => device(latency_ms),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.cmd) {
        Ok(outcome) => {
            if !outcome.summary.is_null() {
                println!("{}", serde_json::to_string_pretty(&outcome.summary).unwrap());
            }
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
