//! Discrete-event engine tying nodes, medium, gateway and server together.
//!
//! Events are ordered by (sim time, source id, insertion sequence), so two
//! runs of the same scenario and seed process identical sequences.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::sync::{Arc, Mutex, MutexGuard};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::control::{ControlAck, ControlCommand, ControlError};
use super::scenario::{NodeSpec, Scenario, ScenarioError};
use crate::firmware::{Node, RiskLevel, SendReason};
use crate::gateway::{Gateway, UplinkMessage, GATEWAY_SOURCE};
use crate::geo::Position;
use crate::medium::{Delivery, DropReason, NodeId, RadioFrame, RadioMedium, TxId};
use crate::modem::{boot_script_lines, Modem, ModemEvent, ModemState, UplinkRequest};
use crate::sensors::{field_at, FireEvent, FireId};
use crate::server::{Activation, DropCause, IngestOutcome, NetworkServer, RecordStore, Registry};

/// Wait before retrying a failed join.
pub const JOIN_RETRY_S: f64 = 10.0;
const COMMAND_SOURCE: u32 = 0;
const SERVER_SOURCE: u32 = GATEWAY_SOURCE - 1;

#[derive(Debug, Clone)]
enum EventKind {
    Tick(usize),
    Join(usize),
    TxEnd(usize),
    WindowsClose(usize),
    Backhaul(UplinkMessage),
    DownlinkEmit(RadioFrame),
    Command(ControlCommand),
}

#[derive(Debug, Clone)]
struct Scheduled {
    t: f64,
    source: u32,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// Reversed so the max-heap pops the earliest event.
impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        other.t.total_cmp(&self.t).then(other.source.cmp(&self.source)).then(other.seq.cmp(&self.seq))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventBody {
    Boot {
        dev_id: String,
        lines: usize,
        errors: Vec<String>,
    },
    Sample {
        dev_id: String,
        gas_raw: u16,
        fire_raw: u16,
        temp_c: i16,
        fire_digital: u8,
        level: RiskLevel,
        #[serde(skip_serializing_if = "Option::is_none")]
        send: Option<SendReason>,
    },
    ModemError {
        dev_id: String,
        command: String,
        reply: String,
    },
    UplinkTx {
        dev_id: String,
        kind: String,
        freq_hz: u32,
        dr: u8,
        airtime_s: f64,
        bytes: usize,
    },
    NotHeard {
        dev_id: String,
        reason: String,
    },
    RadioRx {
        dev_id: String,
        rssi_dbm: f64,
        rx_time_s: f64,
    },
    RadioDrop {
        dev_id: String,
        reason: DropReason,
    },
    BackhaulQueued {
        queued: usize,
        dropped: u64,
    },
    Stored {
        dev_id: String,
        fcnt: u32,
        risk: Option<RiskLevel>,
    },
    Duplicate {
        dev_id: String,
        fcnt: u32,
    },
    IngestDrop {
        cause: DropCause,
    },
    Joined {
        dev_id: String,
        dev_addr: String,
    },
    DownlinkScheduled {
        at_s: f64,
        freq_hz: u32,
        dr: u8,
    },
    DownlinkRejected {
        reason: String,
    },
    DownlinkRx {
        dev_id: String,
        reply: String,
    },
    DownlinkLost {
        dev_id: String,
    },
    Modem {
        dev_id: String,
        outcome: String,
    },
    Command {
        command: ControlCommand,
        ack: ControlAck,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimEvent {
    pub t: f64,
    #[serde(flatten)]
    pub body: EventBody,
}

#[derive(Debug, Default)]
pub struct EventLog {
    keep: bool,
    events: Vec<SimEvent>,
    sink: Option<BufWriter<File>>,
    count: u64,
}

impl EventLog {
    pub fn in_memory() -> Self {
        Self { keep: true, ..Self::default() }
    }

    pub fn to_file(file: File, keep: bool) -> Self {
        Self { keep, sink: Some(BufWriter::new(file)), ..Self::default() }
    }

    fn push(&mut self, ev: SimEvent) {
        self.count += 1;
        if let Some(w) = &mut self.sink {
            let ok = serde_json::to_writer(&mut *w, &ev).is_ok() && w.write_all(b"\n").is_ok();
            if !ok {
                log::error!("event log write failed");
            }
        }
        if self.keep {
            self.events.push(ev);
        }
    }

    pub fn events(&self) -> &[SimEvent] {
        &self.events
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn flush(&mut self) -> io::Result<()> {
        match &mut self.sink {
            Some(w) => w.flush(),
            None => Ok(()),
        }
    }

    pub fn to_jsonl(&self) -> String {
        self.events.iter().map(|e| serde_json::to_string(e).expect("event serializes") + "\n").collect()
    }
}

#[derive(Debug)]
struct NodeSlot {
    node: Node,
    rng: ChaCha8Rng,
}

pub type SharedServer = Arc<Mutex<NetworkServer>>;

pub fn lock(server: &SharedServer) -> MutexGuard<'_, NetworkServer> {
    server.lock().unwrap_or_else(|p| p.into_inner())
}

#[derive(Debug)]
pub struct Simulation {
    seed: u64,
    now: f64,
    end: f64,
    queue: BinaryHeap<Scheduled>,
    seq: u64,
    nodes: Vec<NodeSlot>,
    fires: Vec<FireEvent>,
    medium: RadioMedium,
    radio_rng: ChaCha8Rng,
    gateway: Gateway,
    registry: Registry,
    server: SharedServer,
    log: EventLog,
    paused: bool,
    tx_owner: BTreeMap<TxId, usize>,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

impl Simulation {
    /// Build a simulation. With `open_ended`, nodes keep sampling past the
    /// scenario duration (serve mode).
    pub fn new(
        scenario: &Scenario,
        store: RecordStore,
        log: EventLog,
        open_ended: bool,
    ) -> Result<Self, ScenarioError> {
        scenario.validate()?;
        let registry = scenario.registry()?;
        let server = Arc::new(Mutex::new(NetworkServer::new(registry.clone(), store)));
        let mut gateway = Gateway::new(scenario.gateway.id, scenario.gateway.position);
        if let Some(ch) = &scenario.gateway.channels {
            gateway.channels = ch.clone();
        }
        if let Some(d) = scenario.gateway.tx_start_delay_s {
            gateway.tx_start_delay_s = d;
        }
        let medium = RadioMedium::new(scenario.environment.resolve(), gateway.position)
            .with_channels(gateway.channels.iter().copied());
        let mut sim = Self {
            seed: scenario.seed,
            now: 0.0,
            end: if open_ended { f64::INFINITY } else { scenario.duration_s },
            queue: BinaryHeap::new(),
            seq: 0,
            nodes: Vec::new(),
            fires: scenario.fires.clone(),
            medium,
            radio_rng: stream(scenario.seed, 0),
            gateway,
            registry,
            server,
            log,
            paused: false,
            tx_owner: BTreeMap::new(),
        };
        let count = scenario.nodes.len().max(1);
        for (i, spec) in scenario.nodes.iter().enumerate() {
            let phase = spec.config.sample_period_s * i as f64 / count as f64;
            sim.add_node(spec, phase);
        }
        for c in &scenario.commands {
            sim.schedule(c.at_s, COMMAND_SOURCE, EventKind::Command(c.command.clone()));
        }
        Ok(sim)
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn paused(&self) -> bool {
        self.paused
    }

    pub fn server(&self) -> SharedServer {
        Arc::clone(&self.server)
    }

    pub fn shared(&self) -> &SharedServer {
        &self.server
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn log_mut(&mut self) -> &mut EventLog {
        &mut self.log
    }

    pub fn fires(&self) -> &[FireEvent] {
        &self.fires
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().map(|s| &s.node)
    }

    pub fn node(&self, dev_id: &str) -> Option<&Node> {
        self.nodes().find(|n| n.dev_id == dev_id)
    }

    fn schedule(&mut self, t: f64, source: u32, kind: EventKind) {
        self.seq += 1;
        self.queue.push(Scheduled { t, source, seq: self.seq, kind });
    }

    fn emit(&mut self, body: EventBody) {
        self.log.push(SimEvent { t: self.now, body });
    }

    fn boot_lines(&self, spec: &NodeSpec) -> Vec<String> {
        let mut lines: Vec<String> =
            if spec.bare { Vec::new() } else { boot_script_lines().map(str::to_string).collect() };
        let device = self.registry.device(&spec.dev_id).expect("validated node device");
        let app = self.registry.app(&device.app_id).expect("validated app");
        match &device.activation {
            Activation::Abp { dev_addr, nwkskey, appskey } => {
                lines.push(format!("AT+ID=DevAddr,\"{dev_addr}\""));
                lines.push(format!("AT+KEY=NWKSKEY,\"{nwkskey}\""));
                lines.push(format!("AT+KEY=APPSKEY,\"{appskey}\""));
            }
            Activation::Otaa { dev_eui, appkey } => {
                lines.push(format!("AT+ID=DevEui,\"{dev_eui}\""));
                lines.push(format!("AT+ID=AppEui,\"{}\"", app.app_eui));
                lines.push(format!("AT+KEY=APPKEY,\"{appkey}\""));
                lines.push("AT+MODE=LWOTAA".to_string());
            }
        }
        lines.extend(spec.boot.iter().cloned());
        lines
    }

    fn add_node(&mut self, spec: &NodeSpec, phase: f64) -> usize {
        let idx = self.nodes.len();
        let id = idx as NodeId + 1;
        let modem = Modem::new(ModemState::seeded(self.seed ^ u64::from(id)));
        let mut node = Node::new(id, spec.dev_id.clone(), spec.position, modem, spec.config);
        node.sensors.noise_free = spec.noise_free;
        node.sensors.flame.damaged = spec.flame_damaged;
        let lines = self.boot_lines(spec);
        let results = node.boot(lines.iter().map(String::as_str));
        let errors: Vec<String> = results
            .iter()
            .filter(|(_, r)| r.is_error())
            .map(|(l, r)| format!("{l} -> {}", r.to_wire().trim_end()))
            .collect();
        let otaa = matches!(self.registry.device(&spec.dev_id).map(|d| &d.activation), Some(Activation::Otaa { .. }));
        lock(&self.server).set_position(&spec.dev_id, spec.position);
        self.emit(EventBody::Boot { dev_id: spec.dev_id.clone(), lines: lines.len(), errors });
        self.nodes.push(NodeSlot { node, rng: stream(self.seed, u64::from(id)) });
        let start = self.now + phase;
        if otaa {
            self.schedule(start, id, EventKind::Join(idx));
        }
        if start < self.end {
            self.schedule(start, id, EventKind::Tick(idx));
        }
        idx
    }

    /// Process every event up to and including `t`.
    pub fn run_until(&mut self, t: f64) {
        while self.queue.peek().is_some_and(|e| e.t <= t) {
            let ev = self.queue.pop().expect("peeked");
            self.now = ev.t.max(self.now);
            self.dispatch(ev);
        }
        if t.is_finite() {
            self.now = self.now.max(t);
        }
    }

    /// Run until the event queue drains. Sampling stops at the duration;
    /// frames and downlinks already under way still complete.
    pub fn run_to_end(&mut self) {
        self.run_until(f64::INFINITY);
    }

    pub fn next_event_time(&self) -> Option<f64> {
        self.queue.peek().map(|e| e.t)
    }

    fn dispatch(&mut self, ev: Scheduled) {
        match ev.kind {
            EventKind::Tick(i) => self.on_tick(i),
            EventKind::Join(i) => self.on_join(i),
            EventKind::TxEnd(i) => self.on_tx_end(i),
            EventKind::WindowsClose(i) => self.on_windows_close(i),
            EventKind::Backhaul(msg) => self.on_backhaul(msg),
            EventKind::DownlinkEmit(frame) => self.on_downlink(frame),
            EventKind::Command(cmd) => {
                let ack = self.apply(&cmd);
                self.emit(EventBody::Command { command: cmd, ack });
            }
        }
    }

    fn submit(&mut self, i: usize, req: UplinkRequest) {
        let now = self.now;
        let node = &self.nodes[i].node;
        let (id, pos, dev_id) = (node.id, node.position, node.dev_id.clone());
        let airtime = req.airtime(node.modem.state().region);
        let frame = RadioFrame {
            payload: req.phy_payload,
            freq_hz: req.freq_hz,
            dr_index: req.dr_index,
            tx_start: now,
            tx_airtime: airtime,
            source: id,
        };
        self.emit(EventBody::UplinkTx {
            dev_id: dev_id.clone(),
            kind: format!("{:?}", req.kind).to_lowercase(),
            freq_hz: frame.freq_hz,
            dr: frame.dr_index,
            airtime_s: airtime,
            bytes: frame.payload.len(),
        });
        match self.medium.submit(frame, pos, &mut self.radio_rng) {
            Ok(tx) => {
                self.tx_owner.insert(tx, i);
            }
            Err(e) => self.emit(EventBody::NotHeard { dev_id, reason: e.to_string() }),
        }
        self.schedule(now + airtime, id, EventKind::TxEnd(i));
    }

    fn on_tick(&mut self, i: usize) {
        let now = self.now;
        let slot = &mut self.nodes[i];
        let field = field_at(&self.fires, slot.node.position, now);
        let tick = slot.node.tick(&field, now, &mut slot.rng);
        let dev_id = slot.node.dev_id.clone();
        let period = slot.node.config.sample_period_s;
        let id = slot.node.id;
        self.emit(EventBody::Sample {
            dev_id: dev_id.clone(),
            gas_raw: tick.reading.gas_raw,
            fire_raw: tick.reading.fire_raw,
            temp_c: tick.reading.temp_c,
            fire_digital: tick.reading.fire_digital,
            level: tick.levels.combined(),
            send: tick.reason,
        });
        match (tick.uplink, tick.command, tick.reply) {
            (Some(req), _, _) => self.submit(i, req),
            (None, Some(command), Some(reply)) => {
                self.emit(EventBody::ModemError { dev_id, command, reply: reply.to_wire().trim_end().to_string() })
            }
            _ => {}
        }
        let next = now + period;
        if next < self.end {
            self.schedule(next, id, EventKind::Tick(i));
        }
    }

    fn on_join(&mut self, i: usize) {
        let (reply, req) = self.nodes[i].node.modem.execute("AT+JOIN");
        match req {
            Some(req) => self.submit(i, req),
            None => {
                let dev_id = self.nodes[i].node.dev_id.clone();
                let reply = reply.to_wire().trim_end().to_string();
                self.emit(EventBody::ModemError { dev_id, command: "AT+JOIN".into(), reply });
            }
        }
    }

    fn on_tx_end(&mut self, i: usize) {
        let now = self.now;
        let slot = &mut self.nodes[i];
        if let Some(s) = slot.node.modem.tx_done(now) {
            let id = slot.node.id;
            self.schedule(s.rx2.close, id, EventKind::WindowsClose(i));
        }
        for (tx, outcome) in self.medium.resolve_until(now) {
            let Some(owner) = self.tx_owner.remove(&tx) else { continue };
            let dev_id = self.nodes[owner].node.dev_id.clone();
            match outcome {
                Delivery::Delivered(rx) => {
                    self.emit(EventBody::RadioRx { dev_id, rssi_dbm: rx.rssi_dbm, rx_time_s: rx.rx_time });
                    let out = self.gateway.forward_uplink(&rx);
                    if out.is_empty() {
                        let (queued, dropped) = (self.gateway.queued(), self.gateway.dropped());
                        self.emit(EventBody::BackhaulQueued { queued, dropped });
                    }
                    for msg in out {
                        self.schedule(rx.rx_time, SERVER_SOURCE, EventKind::Backhaul(msg));
                    }
                }
                Delivery::Dropped(reason) => self.emit(EventBody::RadioDrop { dev_id, reason }),
            }
        }
    }

    fn on_windows_close(&mut self, i: usize) {
        let now = self.now;
        let Some((_, event)) = self.nodes[i].node.modem.close_windows(now) else { return };
        let dev_id = self.nodes[i].node.dev_id.clone();
        let id = self.nodes[i].node.id;
        if event == ModemEvent::JoinFailed {
            self.schedule(now + JOIN_RETRY_S, id, EventKind::Join(i));
        }
        self.emit(EventBody::Modem { dev_id, outcome: format!("{event:?}") });
    }

    fn on_backhaul(&mut self, msg: UplinkMessage) {
        let now = self.now;
        let outcome = lock(&self.server).ingest(&msg, now);
        let body = match &outcome {
            IngestOutcome::Stored { record, .. } => {
                EventBody::Stored { dev_id: record.dev_id.clone(), fcnt: record.fcnt, risk: record.risk }
            }
            IngestOutcome::Joined { dev_id, dev_addr, .. } => {
                EventBody::Joined { dev_id: dev_id.clone(), dev_addr: dev_addr.to_string() }
            }
            IngestOutcome::Duplicate { dev_id, fcnt } => EventBody::Duplicate { dev_id: dev_id.clone(), fcnt: *fcnt },
            IngestOutcome::Dropped(cause) => EventBody::IngestDrop { cause: *cause },
        };
        self.emit(body);
        let Some(req) = outcome.downlink() else { return };
        match self.gateway.schedule_downlink(now, req) {
            Ok(frame) => {
                self.emit(EventBody::DownlinkScheduled {
                    at_s: frame.tx_start,
                    freq_hz: frame.freq_hz,
                    dr: frame.dr_index,
                });
                self.schedule(frame.tx_start, GATEWAY_SOURCE, EventKind::DownlinkEmit(frame));
            }
            Err(e) => self.emit(EventBody::DownlinkRejected { reason: e.to_string() }),
        }
    }

    fn on_downlink(&mut self, frame: RadioFrame) {
        let now = self.now;
        for i in 0..self.nodes.len() {
            let slot = &mut self.nodes[i];
            if !slot.node.modem.listening(now, frame.freq_hz, frame.dr_index) {
                continue;
            }
            let dev_id = slot.node.dev_id.clone();
            let pos = slot.node.position;
            let Some(arrival) = self.medium.downlink(&frame, pos, &mut self.radio_rng) else {
                self.emit(EventBody::DownlinkLost { dev_id });
                continue;
            };
            let slot = &mut self.nodes[i];
            if let Some((reply, event)) =
                slot.node.modem.receive(arrival, frame.freq_hz, frame.dr_index, &frame.payload)
            {
                let reply = reply.to_wire().trim_end().to_string();
                self.emit(EventBody::DownlinkRx { dev_id: dev_id.clone(), reply });
                self.emit(EventBody::Modem { dev_id, outcome: format!("{event:?}") });
            }
        }
    }

    /// Apply a steering command at the current sim time.
    pub fn apply(&mut self, cmd: &ControlCommand) -> ControlAck {
        match self.try_apply(cmd) {
            Ok(ack) => ack,
            Err(e) => ControlAck::failed(cmd.name(), self.now, &e),
        }
    }

    /// Apply and record a command issued from outside the scenario file.
    pub fn command(&mut self, cmd: ControlCommand) -> ControlAck {
        let ack = self.apply(&cmd);
        self.emit(EventBody::Command { command: cmd, ack: ack.clone() });
        ack
    }

    fn try_apply(&mut self, cmd: &ControlCommand) -> Result<ControlAck, ControlError> {
        let finite = |x: f64, y: f64| {
            if x.is_finite() && y.is_finite() {
                Ok(Position::new(x, y))
            } else {
                Err(ControlError::Invalid("coordinates must be finite".into()))
            }
        };
        let mut ack = ControlAck::ok(cmd, self.now);
        match cmd {
            ControlCommand::InjectFire { x, y, intensity } => {
                let pos = finite(*x, *y)?;
                if !(0.0..=1.0).contains(intensity) {
                    return Err(ControlError::Invalid("intensity must be within [0, 1]".into()));
                }
                let id: FireId = self.fires.iter().map(|f| f.id + 1).max().unwrap_or(1);
                self.fires.push(FireEvent::new(id, pos, self.now, *intensity));
                ack.fire_id = Some(id);
            }
            ControlCommand::Extinguish { fire_id } => {
                let fire = self
                    .fires
                    .iter_mut()
                    .find(|f| f.id == *fire_id && f.active)
                    .ok_or_else(|| ControlError::NotFound(format!("fire {fire_id}")))?;
                fire.active = false;
                ack.fire_id = Some(*fire_id);
            }
            ControlCommand::PlaceNode { dev_id, x, y } => {
                let pos = finite(*x, *y)?;
                if self.move_node(dev_id, pos).is_err() {
                    if self.registry.device(dev_id).is_none() {
                        return Err(ControlError::NotFound(format!("device {dev_id}")));
                    }
                    let spec = NodeSpec {
                        dev_id: dev_id.clone(),
                        position: pos,
                        config: Default::default(),
                        noise_free: false,
                        flame_damaged: false,
                        boot: Vec::new(),
                        bare: false,
                    };
                    self.add_node(&spec, 0.0);
                }
            }
            ControlCommand::MoveNode { dev_id, x, y } => {
                let pos = finite(*x, *y)?;
                self.move_node(dev_id, pos)?;
            }
            ControlCommand::Backhaul { up } => {
                for msg in self.gateway.set_backhaul(*up) {
                    self.schedule(self.now, SERVER_SOURCE, EventKind::Backhaul(msg));
                }
            }
            ControlCommand::Pause => self.paused = true,
            ControlCommand::Resume => self.paused = false,
            ControlCommand::Step { dt_s } => {
                if !(dt_s.is_finite() && *dt_s > 0.0) {
                    return Err(ControlError::Invalid("dt_s must be positive".into()));
                }
            }
        }
        Ok(ack)
    }

    fn move_node(&mut self, dev_id: &str, pos: Position) -> Result<(), ControlError> {
        let slot = self
            .nodes
            .iter_mut()
            .find(|s| s.node.dev_id == dev_id)
            .ok_or_else(|| ControlError::NotFound(format!("node {dev_id}")))?;
        slot.node.position = pos;
        lock(&self.server).set_position(dev_id, pos);
        Ok(())
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.log.flush()?;
        lock(&self.server).flush()
    }
}
