//! Check BPTT gradients against central differences on a few random networks.

use sns::training::{gradcheck, GradcheckOptions};

fn main() -> sns::Result<()> {
    for seed in 0..3 {
        let r = gradcheck(seed, &GradcheckOptions { nets: 10, ..Default::default() })?;
        println!(
            "seed {seed}: {} entries, {} skipped, max relative error {:.2e}",
            r.checked, r.skipped, r.max_rel_err
        );
    }
    Ok(())
}
