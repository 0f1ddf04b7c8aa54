// Delivery, RSSI and uplink latency against gateway distance.

use firewatch::medium::{EnvironmentKind, LinkEnvironment};
use firewatch::sim::{range_test, TABLE_DISTANCES_M};

pub fn run() -> anyhow::Result<()> {
    let trials = std::env::var("TRIALS").ok().and_then(|s| s.parse().ok()).unwrap_or(2000);
    for kind in [EnvironmentKind::Urban, EnvironmentKind::Forest] {
        let report = range_test(&LinkEnvironment::preset(kind), &TABLE_DISTANCES_M, trials, 1);
        println!("{kind:?}, {trials} frames per distance\n{}", report.to_table());
    }
    let sweep: Vec<f64> = (1..=8).map(|i| f64::from(i) * 50.0).collect();
    print!("{}", range_test(&LinkEnvironment::urban(), &sweep, 500, 2).to_csv());
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run()
}
