use crate::ids::{parse_fixed_hex, DevAddr, Eui64, Key128};
use crate::mac::{DataFrame, JoinRequest, MType, MacFrame};
use crate::phy::{self, Direction};

use super::{AtReply, Channel, DeviceClass, Mode, ModemState, UplinkKind, UplinkRequest, WindowParams, CHANNEL_COUNT};

const UNKNOWN: i32 = -1;
const MALFORMED: i32 = -2;
const NO_CHANNEL: i32 = -11;
const NOT_JOINED: i32 = -12;
const JOIN_NOT_APPLICABLE: i32 = -13;

const MAX_NAME_LEN: usize = 16;
const MAX_PAYLOAD: usize = 242;

const HELP: [(&str, &str); 19] = [
    ("AT", "Test command"),
    ("HELP", "List supported commands"),
    ("FDEFAULT", "Restore factory radio configuration"),
    ("RESET", "Software reset"),
    ("DFU", "Firmware upgrade mode"),
    ("LOWPOWER", "Enter low-power mode"),
    ("MSGHEX", "Send hex frame, unconfirmed"),
    ("CMSGHEX", "Send hex frame, confirmed"),
    ("CH", "Configure channel frequency and data-rate range"),
    ("ADR", "Adaptive data rate ON/OFF"),
    ("DR", "Data rate or region"),
    ("RXWIN1", "RX1 frequency override per channel"),
    ("RXWIN2", "RX2 frequency and data rate"),
    ("MODE", "LWABP or LWOTAA"),
    ("ID", "DevAddr, DevEui, AppEui"),
    ("KEY", "NwkSKey, AppSKey, AppKey"),
    ("CLASS", "LoRaWAN class A/B/C"),
    ("DELAY", "RX1 delay in ms"),
    ("JOIN", "OTAA join"),
];

/// Result of one AT command.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandOutcome {
    pub state: ModemState,
    pub reply: AtReply,
    pub action: Option<UplinkRequest>,
}

type CmdResult = Result<(ModemState, AtReply, Option<UplinkRequest>), i32>;

/// Interpret one command line (terminator already stripped).
///
/// Total over all inputs: every line yields exactly one reply, and an error
/// reply always comes back with the input state untouched.
pub fn handle_command(state: &ModemState, line: &str) -> CommandOutcome {
    let line = line.trim();
    let Some((name, args)) = split_command(line) else {
        return unchanged(state, AtReply::error("AT", UNKNOWN));
    };
    let result = match name.as_str() {
        "AT" => Ok((state.clone(), AtReply::line("AT", "OK"), None)),
        "HELP" => Ok((state.clone(), help(), None)),
        "FDEFAULT" => no_args(args).map(|_| (state.factory_radio_defaults(), AtReply::line("FDEFAULT", "OK"), None)),
        "RESET" => {
            no_args(args).map(|_| (ModemState { joined: false, ..state.clone() }, AtReply::line("RESET", "OK"), None))
        }
        "DFU" => dfu(args).map(|r| (state.clone(), r, None)),
        "LOWPOWER" => lowpower(state, args),
        "MSGHEX" => send(state, args, false, "MSGHEX"),
        "CMSGHEX" => send(state, args, true, "CMSGHEX"),
        "CH" => ch(state, args),
        "ADR" => adr(state, args),
        "DR" => dr(state, args),
        "RXWIN1" => rxwin1(state, args),
        "RXWIN2" => rxwin2(state, args),
        "MODE" => mode(state, args),
        "ID" => id(state, args),
        "KEY" => key(state, args),
        "CLASS" => class(state, args),
        "DELAY" => delay(state, args),
        "JOIN" => match otaa_join(state) {
            Ok((s, req)) => Ok((s, AtReply::line("JOIN", "Starting"), Some(req))),
            Err(code) => Err(code),
        },
        _ => Err(UNKNOWN),
    };
    match result {
        Ok((state, reply, action)) => CommandOutcome { state, reply, action },
        Err(code) => unchanged(state, AtReply::error(&name, code)),
    }
}

fn unchanged(state: &ModemState, reply: AtReply) -> CommandOutcome {
    CommandOutcome { state: state.clone(), reply, action: None }
}

/// `AT` -> ("AT", None); `AT+NAME` -> ("NAME", None); `AT+NAME=x` -> ("NAME", Some("x")).
fn split_command(line: &str) -> Option<(String, Option<&str>)> {
    let head = line.get(..2)?;
    if !head.eq_ignore_ascii_case("AT") {
        return None;
    }
    let rest = &line[2..];
    if rest.is_empty() {
        return Some(("AT".to_string(), None));
    }
    let rest = rest.strip_prefix('+')?;
    let (name, args) = match rest.find('=') {
        Some(i) => (&rest[..i], Some(&rest[i + 1..])),
        None => (rest, None),
    };
    if name.is_empty() || name.len() > MAX_NAME_LEN || !name.chars().all(|c| c.is_ascii_alphanumeric()) {
        return None;
    }
    Some((name.to_ascii_uppercase(), args))
}

fn is_query(args: Option<&str>) -> bool {
    matches!(args.map(str::trim), None | Some("?"))
}

fn no_args(args: Option<&str>) -> Result<(), i32> {
    match args {
        None => Ok(()),
        Some(_) => Err(MALFORMED),
    }
}

fn split_args(args: &str) -> Vec<&str> {
    args.split(',').map(|a| a.trim().trim_matches('"')).collect()
}

fn on_off(arg: &str) -> Result<bool, i32> {
    match arg.to_ascii_uppercase().as_str() {
        "ON" => Ok(true),
        "OFF" => Ok(false),
        _ => Err(MALFORMED),
    }
}

fn on_off_text(v: bool) -> &'static str {
    if v {
        "ON"
    } else {
        "OFF"
    }
}

/// Parse a decimal MHz value into Hz without going through floating point.
pub(crate) fn parse_mhz(s: &str) -> Result<u32, i32> {
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    if int.is_empty() || int.len() > 4 || frac.len() > 6 {
        return Err(MALFORMED);
    }
    if !int.chars().all(|c| c.is_ascii_digit()) || !frac.chars().all(|c| c.is_ascii_digit()) {
        return Err(MALFORMED);
    }
    let int: u32 = int.parse().map_err(|_| MALFORMED)?;
    let frac_hz: u32 = if frac.is_empty() { 0 } else { format!("{frac:0<6}").parse().map_err(|_| MALFORMED)? };
    let hz = int.checked_mul(1_000_000).and_then(|v| v.checked_add(frac_hz)).ok_or(MALFORMED)?;
    if hz != 0 && !(137_000_000..=1_020_000_000).contains(&hz) {
        return Err(MALFORMED);
    }
    Ok(hz)
}

/// `915200000` -> `915.2`, `916000000` -> `916.0`.
pub fn format_mhz(hz: u32) -> String {
    let int = hz / 1_000_000;
    let frac = format!("{:06}", hz % 1_000_000);
    let frac = frac.trim_end_matches('0');
    if frac.is_empty() {
        format!("{int}.0")
    } else {
        format!("{int}.{frac}")
    }
}

fn parse_dr(s: &str) -> Result<u8, i32> {
    let digits = if s.len() > 2 && s[..2].eq_ignore_ascii_case("DR") { &s[2..] } else { s };
    if digits.is_empty() || digits.len() > 2 || !digits.chars().all(|c| c.is_ascii_digit()) {
        return Err(MALFORMED);
    }
    let v: u8 = digits.parse().map_err(|_| MALFORMED)?;
    if v > 15 {
        return Err(MALFORMED);
    }
    Ok(v)
}

fn hex_payload(args: Option<&str>) -> Result<Vec<u8>, i32> {
    let raw = args.unwrap_or("").trim();
    let raw = raw.strip_prefix('"').and_then(|r| r.strip_suffix('"')).unwrap_or(raw);
    if !raw.len().is_multiple_of(2) || raw.len() > MAX_PAYLOAD * 2 {
        return Err(MALFORMED);
    }
    hex::decode(raw).map_err(|_| MALFORMED)
}

fn help() -> AtReply {
    let mut reply = AtReply { lines: Vec::new() };
    for (name, text) in HELP {
        reply.push("HELP", format!("{name:<9}{text}"));
    }
    reply
}

fn dfu(args: Option<&str>) -> Result<AtReply, i32> {
    if is_query(args) {
        return Ok(AtReply::line("DFU", "OFF"));
    }
    let v = on_off(args.unwrap_or_default().trim())?;
    Ok(AtReply::line("DFU", on_off_text(v)))
}

fn lowpower(state: &ModemState, args: Option<&str>) -> CmdResult {
    match args.map(str::trim) {
        None => Ok((ModemState { lowpower: true, ..state.clone() }, AtReply::line("LOWPOWER", "SLEEP"), None)),
        Some("?") => Ok((state.clone(), AtReply::line("LOWPOWER", on_off_text(state.lowpower)), None)),
        Some(a) => {
            let v = match a.to_ascii_uppercase().as_str() {
                "AUTOON" => true,
                "AUTOOFF" => false,
                other => on_off(other)?,
            };
            Ok((ModemState { lowpower: v, ..state.clone() }, AtReply::line("LOWPOWER", on_off_text(v)), None))
        }
    }
}

fn send(state: &ModemState, args: Option<&str>, confirmed: bool, name: &str) -> CmdResult {
    let payload = hex_payload(args)?;
    let (next, req) = msghex(state, &payload, confirmed)?;
    let mut reply = AtReply::line(name, "Start");
    reply.push(name, format!("TX \"{}\"", hex::encode_upper(&payload)));
    if !confirmed {
        reply.push(name, "Done");
    }
    Ok((next, reply, Some(req)))
}

/// Pick the next enabled channel admitting `dr`, round-robin from the cursor.
fn pick_channel(state: &ModemState, dr: u8) -> Option<(usize, Channel)> {
    (0..CHANNEL_COUNT)
        .map(|k| (state.channel_cursor + k) % CHANNEL_COUNT)
        .find_map(|i| state.channels[i].filter(|c| c.freq_hz > 0 && c.admits(dr)).map(|c| (i, c)))
}

/// Build an uplink carrying `payload` and advance the frame counter.
///
/// Errors are reply codes: `-11` without a usable channel, `-12` when in
/// OTAA mode and not yet joined.
pub fn msghex(state: &ModemState, payload: &[u8], confirmed: bool) -> Result<(ModemState, UplinkRequest), i32> {
    if !state.can_send() {
        return Err(NOT_JOINED);
    }
    let (channel, ch) = pick_channel(state, state.dr_index).ok_or(NO_CHANNEL)?;
    let frame = DataFrame {
        mtype: if confirmed { MType::ConfirmedUp } else { MType::UnconfirmedUp },
        dev_addr: state.dev_addr,
        ack: false,
        fcnt: state.fcnt_up as u16,
        fport: state.port,
        payload: payload.to_vec(),
        tag: [0; 4],
    }
    .seal(&state.nwkskey, &state.appskey);
    let next = ModemState {
        fcnt_up: state.fcnt_up.wrapping_add(1),
        channel_cursor: (channel + 1) % CHANNEL_COUNT,
        ..state.clone()
    };
    let kind = if confirmed { UplinkKind::Confirmed } else { UplinkKind::Unconfirmed };
    Ok((
        next,
        UplinkRequest {
            phy_payload: MacFrame::Data(frame).encode(),
            freq_hz: ch.freq_hz,
            dr_index: state.dr_index,
            channel,
            kind,
        },
    ))
}

/// Build an OTAA join request. Only valid in `LWOTAA` mode.
pub fn otaa_join(state: &ModemState) -> Result<(ModemState, UplinkRequest), i32> {
    if state.mode != Mode::Otaa {
        return Err(JOIN_NOT_APPLICABLE);
    }
    let (channel, ch) = pick_channel(state, state.dr_index).ok_or(NO_CHANNEL)?;
    let nonce = state.dev_nonce.wrapping_add(1);
    let req = JoinRequest::sealed(state.app_eui, state.dev_eui, nonce, &state.appkey);
    let next =
        ModemState { dev_nonce: nonce, joined: false, channel_cursor: (channel + 1) % CHANNEL_COUNT, ..state.clone() };
    Ok((
        next,
        UplinkRequest {
            phy_payload: MacFrame::JoinRequest(req).encode(),
            freq_hz: ch.freq_hz,
            dr_index: state.dr_index,
            channel,
            kind: UplinkKind::Join,
        },
    ))
}

fn channel_text(i: usize, c: &Option<Channel>) -> String {
    match c {
        Some(c) => format!("{i},{},DR{}:DR{}", format_mhz(c.freq_hz), c.dr_min, c.dr_max),
        None => format!("{i},OFF"),
    }
}

fn ch(state: &ModemState, args: Option<&str>) -> CmdResult {
    if is_query(args) {
        let enabled: Vec<String> = state.enabled_channels().map(|(i, c)| channel_text(i, &Some(*c))).collect();
        let mut body = enabled.len().to_string();
        for e in enabled {
            body.push_str("; ");
            body.push_str(&e);
        }
        return Ok((state.clone(), AtReply::line("CH", body), None));
    }
    let parts = split_args(args.unwrap_or_default());
    let idx: usize = parts[0].parse().map_err(|_| MALFORMED)?;
    if idx >= CHANNEL_COUNT {
        return Err(MALFORMED);
    }
    if parts.len() == 1 {
        return Ok((state.clone(), AtReply::line("CH", channel_text(idx, &state.channels[idx])), None));
    }
    let freq = parse_mhz(parts[1])?;
    let (dr_min, dr_max) = match parts.len() {
        2 => (0, 5),
        3 => {
            let d = parse_dr(parts[2])?;
            (d, d)
        }
        4 => (parse_dr(parts[2])?, parse_dr(parts[3])?),
        _ => return Err(MALFORMED),
    };
    if dr_min > dr_max {
        return Err(MALFORMED);
    }
    let mut next = state.clone();
    next.channels[idx] = (freq > 0).then_some(Channel { freq_hz: freq, dr_min, dr_max });
    let reply = AtReply::line("CH", channel_text(idx, &next.channels[idx]));
    Ok((next, reply, None))
}

fn adr(state: &ModemState, args: Option<&str>) -> CmdResult {
    if is_query(args) {
        return Ok((state.clone(), AtReply::line("ADR", on_off_text(state.adr)), None));
    }
    let v = on_off(args.unwrap_or_default().trim())?;
    Ok((ModemState { adr: v, ..state.clone() }, AtReply::line("ADR", on_off_text(v)), None))
}

fn dr_text(state: &ModemState, dr: u8) -> String {
    match phy::dr_lookup(state.region, dr) {
        Ok(e) => format!("DR{dr} {}", e.label()),
        Err(_) => format!("DR{dr}"),
    }
}

fn dr(state: &ModemState, args: Option<&str>) -> CmdResult {
    if is_query(args) {
        return Ok((state.clone(), AtReply::line("DR", dr_text(state, state.dr_index)), None));
    }
    let arg = args.unwrap_or_default().trim();
    if let Some(region) = phy::REGIONS.iter().find(|r| r.eq_ignore_ascii_case(arg)) {
        let next = ModemState { region, ..state.clone() };
        return Ok((next, AtReply::line("DR", *region), None));
    }
    let d = parse_dr(arg)?;
    match phy::dr_lookup(state.region, d) {
        Ok(e) if e.direction == Direction::Uplink => {}
        _ => return Err(MALFORMED),
    }
    let next = ModemState { dr_index: d, ..state.clone() };
    let reply = AtReply::line("DR", dr_text(&next, d));
    Ok((next, reply, None))
}

fn rxwin1(state: &ModemState, args: Option<&str>) -> CmdResult {
    if is_query(args) {
        let body = if state.rxwin1.is_empty() {
            "NONE".to_string()
        } else {
            state.rxwin1.iter().map(|(c, f)| format!("{c},{}", format_mhz(*f))).collect::<Vec<_>>().join("; ")
        };
        return Ok((state.clone(), AtReply::line("RXWIN1", body), None));
    }
    let parts = split_args(args.unwrap_or_default());
    if parts.len() != 2 {
        return Err(MALFORMED);
    }
    let idx: u8 = parts[0].parse().map_err(|_| MALFORMED)?;
    if usize::from(idx) >= CHANNEL_COUNT {
        return Err(MALFORMED);
    }
    let freq = parse_mhz(parts[1])?;
    let mut next = state.clone();
    if freq == 0 {
        next.rxwin1.remove(&idx);
    } else {
        next.rxwin1.insert(idx, freq);
    }
    Ok((next, AtReply::line("RXWIN1", format!("{idx},{}", format_mhz(freq))), None))
}

fn rxwin2_text(w: &WindowParams) -> String {
    format!("{},DR{}", format_mhz(w.freq_hz), w.dr_index)
}

fn rxwin2(state: &ModemState, args: Option<&str>) -> CmdResult {
    if is_query(args) {
        return Ok((state.clone(), AtReply::line("RXWIN2", rxwin2_text(&state.rxwin2)), None));
    }
    let parts = split_args(args.unwrap_or_default());
    if parts.len() != 2 {
        return Err(MALFORMED);
    }
    let freq = parse_mhz(parts[0])?;
    let d = parse_dr(parts[1])?;
    if freq == 0 || phy::dr_lookup(state.region, d).is_err() {
        return Err(MALFORMED);
    }
    let w = WindowParams { freq_hz: freq, dr_index: d };
    Ok((ModemState { rxwin2: w, ..state.clone() }, AtReply::line("RXWIN2", rxwin2_text(&w)), None))
}

fn mode(state: &ModemState, args: Option<&str>) -> CmdResult {
    if is_query(args) {
        return Ok((state.clone(), AtReply::line("MODE", state.mode.name()), None));
    }
    let m = match args.unwrap_or_default().trim().to_ascii_uppercase().as_str() {
        "LWABP" => Mode::Abp,
        "LWOTAA" => Mode::Otaa,
        _ => return Err(MALFORMED),
    };
    let joined = state.joined && m == state.mode;
    Ok((ModemState { mode: m, joined, ..state.clone() }, AtReply::line("MODE", m.name()), None))
}

#[derive(Clone, Copy)]
enum IdKind {
    DevAddr,
    DevEui,
    AppEui,
}

fn id_line(state: &ModemState, kind: IdKind) -> String {
    match kind {
        IdKind::DevAddr => format!("DevAddr, {}", state.dev_addr.to_colon_string()),
        IdKind::DevEui => format!("DevEui, {}", state.dev_eui.to_colon_string()),
        IdKind::AppEui => format!("AppEui, {}", state.app_eui.to_colon_string()),
    }
}

fn id(state: &ModemState, args: Option<&str>) -> CmdResult {
    if is_query(args) {
        let mut reply = AtReply::line("ID", id_line(state, IdKind::DevAddr));
        reply.push("ID", id_line(state, IdKind::DevEui));
        reply.push("ID", id_line(state, IdKind::AppEui));
        return Ok((state.clone(), reply, None));
    }
    let parts = split_args(args.unwrap_or_default());
    let kind = match parts[0].to_ascii_uppercase().as_str() {
        "DEVADDR" => IdKind::DevAddr,
        "DEVEUI" => IdKind::DevEui,
        "APPEUI" => IdKind::AppEui,
        _ => return Err(MALFORMED),
    };
    let mut next = state.clone();
    match parts.as_slice() {
        [_] => {}
        [_, value] => match kind {
            IdKind::DevAddr => next.dev_addr = DevAddr(parse_fixed_hex(value).map_err(|_| MALFORMED)?),
            IdKind::DevEui => next.dev_eui = Eui64(parse_fixed_hex(value).map_err(|_| MALFORMED)?),
            IdKind::AppEui => next.app_eui = Eui64(parse_fixed_hex(value).map_err(|_| MALFORMED)?),
        },
        _ => return Err(MALFORMED),
    }
    let reply = AtReply::line("ID", id_line(&next, kind));
    Ok((next, reply, None))
}

fn key(state: &ModemState, args: Option<&str>) -> CmdResult {
    if is_query(args) {
        let mut reply = AtReply::line("KEY", format!("NWKSKEY {}", state.nwkskey));
        reply.push("KEY", format!("APPSKEY {}", state.appskey));
        reply.push("KEY", format!("APPKEY {}", state.appkey));
        return Ok((state.clone(), reply, None));
    }
    let parts = split_args(args.unwrap_or_default());
    let [which, value] = parts.as_slice() else {
        return Err(MALFORMED);
    };
    let k = Key128(parse_fixed_hex(value).map_err(|_| MALFORMED)?);
    let mut next = state.clone();
    let label = match which.to_ascii_uppercase().as_str() {
        "NWKSKEY" => {
            next.nwkskey = k;
            "NWKSKEY"
        }
        "APPSKEY" => {
            next.appskey = k;
            "APPSKEY"
        }
        "APPKEY" => {
            next.appkey = k;
            "APPKEY"
        }
        _ => return Err(MALFORMED),
    };
    Ok((next, AtReply::line("KEY", format!("{label} {k}")), None))
}

fn class(state: &ModemState, args: Option<&str>) -> CmdResult {
    let text = |c: DeviceClass| format!("{c:?}");
    if is_query(args) {
        return Ok((state.clone(), AtReply::line("CLASS", text(state.device_class)), None));
    }
    let c = match args.unwrap_or_default().trim().to_ascii_uppercase().as_str() {
        "A" => DeviceClass::A,
        "B" => DeviceClass::B,
        "C" => DeviceClass::C,
        _ => return Err(MALFORMED),
    };
    Ok((ModemState { device_class: c, ..state.clone() }, AtReply::line("CLASS", text(c)), None))
}

fn delay(state: &ModemState, args: Option<&str>) -> CmdResult {
    if is_query(args) {
        let body = format!("RX1,{}; RX2,{}", state.rx1_delay_ms, state.rx1_delay_ms + 1000);
        return Ok((state.clone(), AtReply::line("DELAY", body), None));
    }
    let parts = split_args(args.unwrap_or_default());
    let ms = match parts.as_slice() {
        [ms] => *ms,
        [which, ms] if which.eq_ignore_ascii_case("RX1") => *ms,
        _ => return Err(MALFORMED),
    };
    if ms.is_empty() || ms.len() > 5 || !ms.chars().all(|c| c.is_ascii_digit()) {
        return Err(MALFORMED);
    }
    let ms: u32 = ms.parse().map_err(|_| MALFORMED)?;
    if !(1..=15_000).contains(&ms) {
        return Err(MALFORMED);
    }
    Ok((ModemState { rx1_delay_ms: ms, ..state.clone() }, AtReply::line("DELAY", format!("RX1,{ms}")), None))
}
