//! Operation counts and energy of the 2FC spiking net against a dense
//! network of the same shape with 10 outputs.
//!
//! cargo run --release --example energy_cost

use stoch_ep::metrics::{cost_report, CostModel, FiringStats};
use stoch_ep::{Result, Topology};

fn main() -> Result<()> {
    let snn: Topology = "in:784 fc:512 fc:512 fc:700".parse()?;
    let fp = snn.with_output_width(10)?;
    let stats = FiringStats::new(vec![0.21, 0.19, 0.12], 1)?;
    let report = cost_report(&snn, &fp, &stats, &CostModel::default())?;
    report.write_csv(std::io::stdout())?;
    println!(
        "dense {:.3e} pJ, spiking {:.3e} pJ, ratio {:.2}",
        report.fp_energy_pj, report.snn_energy_pj, report.ratio
    );

    let conv: Topology =
        "in:1x28x28 conv:64k5s1p1/pool3s3 conv:128k5s1p1/pool3s3 fc:700".parse()?;
    let stats = FiringStats::new(vec![0.27, 0.19, 0.10], 1)?;
    let r = cost_report(
        &conv,
        &conv.with_output_width(10)?,
        &stats,
        &CostModel::default(),
    )?;
    println!("2C ratio {:.2}", r.ratio);
    Ok(())
}
