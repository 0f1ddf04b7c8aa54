// Symbol period, bit rate and airtime for each AU915 data rate.

use firewatch::phy::{airtime, bit_rate, chip_rate, dr_table, symbol_period};

pub fn run() -> anyhow::Result<()> {
    println!(
        "{:<4} {:<12} {:>9} {:>11} {:>11} {:>14}",
        "DR", "modulation", "Ts (ms)", "Rc (kc/s)", "Rb (bps)", "6 B frame (ms)"
    );
    for e in dr_table("AU915")? {
        let p = e.modulation();
        println!(
            "DR{:<2} {:<12} {:>9.3} {:>11.1} {:>11.2} {:>14.1}",
            e.dr_index,
            e.label(),
            symbol_period(&p) * 1e3,
            chip_rate(&p) / 1e3,
            bit_rate(&p),
            airtime(6, &p) * 1e3
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run()
}
