// Noise-free sensor readings around a full-intensity fire.

use firewatch::sim::calibration_report;

pub fn run() -> anyhow::Result<()> {
    let report = calibration_report();
    print!("{}", report.to_table());
    report.check().map_err(anyhow::Error::msg)?;
    if let Some(r) = report.row(3.0) {
        println!("at 3 m the node reports {}", r.combined.name());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run()
}
