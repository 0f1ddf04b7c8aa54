// The six-byte sensor payload: encoding, decoding and classification.

use firewatch::firmware::{decode_payload, encode_payload, RiskThresholds};
use firewatch::sensors::{flame_from_raw, gas_ppm_from_raw, PhysicalReading};

pub fn run() -> anyhow::Result<()> {
    let bytes = encode_payload(985, 400, 28)?;
    println!("gas 985, fire 400, temp 28 -> {}", hex::encode_upper(bytes));
    let p = decode_payload(&bytes)?;
    println!("decoded: {p:?}");

    // a shift of 4 instead of 8 drops the high byte almost entirely
    let wrong = (u16::from(bytes[0]) << 4) | u16::from(bytes[1]);
    println!("high byte shifted by 4 instead of 8: {wrong}");

    let reading = PhysicalReading {
        gas_ppm: gas_ppm_from_raw(p.gas, 1.0),
        flame: flame_from_raw(p.fire),
        temp_c: f64::from(p.temp),
    };
    let levels = RiskThresholds::default().levels(&reading);
    println!("{reading:?}\n{levels:?} -> {}", levels.combined().name());

    for bad in [encode_payload(1024, 0, 0), encode_payload(0, 0, 81)] {
        println!("{}", bad.unwrap_err());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run()
}
