// Drive the emulated modem over its serial front end.
//
// Replays the node boot script, then sends a reading. With `-`, further
// commands are read from stdin.

use std::io::BufRead;

use firewatch::modem::serial::SerialPort;
use firewatch::modem::{boot_script_lines, Modem, ModemState};

fn feed(port: &mut SerialPort, line: &str) {
    let (out, uplinks) = port.write(format!("{line}\r\n").as_bytes());
    print!("> {line}\n{}", String::from_utf8_lossy(&out));
    for u in uplinks {
        println!("  [radio] {} bytes on {:.1} MHz DR{}", u.phy_payload.len(), f64::from(u.freq_hz) / 1e6, u.dr_index);
    }
}

pub fn run() -> anyhow::Result<()> {
    let mut port = SerialPort::new(Modem::new(ModemState::seeded(1)));
    for line in boot_script_lines().take(8) {
        feed(&mut port, line);
    }
    for line in boot_script_lines().skip(8) {
        port.write(format!("{line}\r\n").as_bytes());
    }
    println!("... {} more boot lines", boot_script_lines().count() - 8);
    feed(&mut port, "AT+MSGHEX=\"03D90190001C\"");
    feed(&mut port, "AT+DR=DR7");
    let st = port.modem().state();
    println!(
        "mode {} class {:?} DR{} ADR {} fcnt {}",
        st.mode.name(),
        st.device_class,
        st.dr_index,
        st.adr,
        st.fcnt_up
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run()?;
    if std::env::args().nth(1).as_deref() == Some("-") {
        let mut port = SerialPort::new(Modem::new(ModemState::seeded(1)));
        for line in std::io::stdin().lock().lines() {
            feed(&mut port, line?.trim_end());
        }
    }
    Ok(())
}
