//! Scenario runs and the reproduction reports.

pub mod control;
pub mod engine;
pub mod reports;
pub mod scenario;

use std::fs::{self, File};
use std::path::{Path, PathBuf};

use serde::Serialize;

pub use control::{ControlAck, ControlCommand, ControlError};
pub use engine::{lock, EventBody, EventLog, SharedServer, SimEvent, Simulation};
pub use reports::{calibration_report, range_test, CalibrationReport, RangeReport, TABLE_DISTANCES_M};
pub use scenario::{Scenario, ScenarioError};

use crate::firmware::RiskLevel;
use crate::server::{NetworkStats, RecordStore};

/// Bundled campus layout: three nodes around one gateway, one fire.
pub const CAMPUS_SCENARIO: &str = include_str!("../../scenarios/campus.json");

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviceSummary {
    pub dev_id: String,
    pub records: u64,
    pub duplicates: u64,
    pub first_risk_s: Option<f64>,
    pub max_risk: Option<RiskLevel>,
    pub last_rssi_dbm: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub duration_s: f64,
    pub events: u64,
    pub records: usize,
    pub stats: NetworkStats,
    pub devices: Vec<DeviceSummary>,
    #[serde(skip)]
    pub artifacts: Vec<PathBuf>,
}

impl RunSummary {
    pub fn devices_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for d in &self.devices {
            w.serialize(d).expect("csv row");
        }
        let bytes = w.into_inner().expect("csv flush");
        if self.devices.is_empty() {
            return "dev_id,records,duplicates,first_risk_s,max_risk,last_rssi_dbm\n".to_string();
        }
        String::from_utf8(bytes).expect("csv is utf-8")
    }
}

fn summarize(sim: &Simulation, scenario: &Scenario) -> RunSummary {
    let server = lock(sim.shared());
    let stats = server.stats();
    let store = server.store();
    let devices = server
        .registry()
        .devices()
        .map(|d| {
            let recs: Vec<_> = store.of_device(&d.dev_id).collect();
            let ds = stats.per_device.get(&d.dev_id);
            DeviceSummary {
                dev_id: d.dev_id.clone(),
                records: recs.len() as u64,
                duplicates: ds.map_or(0, |s| s.duplicates),
                first_risk_s: recs.iter().find(|r| r.risk == Some(RiskLevel::Risk)).map(|r| r.server_time_s),
                max_risk: recs.iter().filter_map(|r| r.risk).max(),
                last_rssi_dbm: recs.last().map(|r| r.rssi_dbm),
            }
        })
        .collect();
    RunSummary {
        seed: scenario.seed,
        duration_s: scenario.duration_s,
        events: sim.log().count(),
        records: store.len(),
        stats,
        devices,
        artifacts: Vec::new(),
    }
}

/// Run a scenario to completion, in memory.
pub fn run_in_memory(scenario: &Scenario) -> Result<(Simulation, RunSummary), ScenarioError> {
    let mut sim = Simulation::new(scenario, RecordStore::in_memory(), EventLog::in_memory(), false)?;
    sim.run_to_end();
    let summary = summarize(&sim, scenario);
    Ok((sim, summary))
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("writing {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Run a scenario and write its artifacts into `out`:
/// `events.jsonl`, `uplinks.jsonl`, `devices.csv` and `stats.json`, as the
/// scenario's `outputs` select.
pub fn run(scenario: &Scenario, out: &Path) -> Result<RunSummary, RunError> {
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| RunError::Io { path, source }
    };
    fs::create_dir_all(out).map_err(io(out))?;
    let events_path = out.join("events.jsonl");
    let uplinks_path = out.join("uplinks.jsonl");
    let mut artifacts = Vec::new();

    let log = if scenario.outputs.events {
        artifacts.push(events_path.clone());
        EventLog::to_file(File::create(&events_path).map_err(io(&events_path))?, false)
    } else {
        EventLog::default()
    };
    let store = if scenario.outputs.uplinks {
        if uplinks_path.exists() {
            fs::remove_file(&uplinks_path).map_err(io(&uplinks_path))?;
        }
        artifacts.push(uplinks_path.clone());
        RecordStore::open(&uplinks_path).map_err(io(&uplinks_path))?
    } else {
        RecordStore::in_memory()
    };

    let mut sim = Simulation::new(scenario, store, log, false)?;
    sim.run_to_end();
    sim.flush().map_err(io(out))?;
    let mut summary = summarize(&sim, scenario);

    if scenario.outputs.summary {
        let csv_path = out.join("devices.csv");
        fs::write(&csv_path, summary.devices_csv()).map_err(io(&csv_path))?;
        let stats_path = out.join("stats.json");
        let json = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
        fs::write(&stats_path, json).map_err(io(&stats_path))?;
        artifacts.extend([csv_path, stats_path]);
    }
    summary.artifacts = artifacts;
    Ok(summary)
}
