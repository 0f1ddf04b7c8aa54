//! Append-only uplink record log with an in-memory index.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::firmware::RiskLevel;
use crate::ids::{hex_bytes, Eui64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PayloadFields {
    pub payload_gas: u16,
    pub payload_fire: u16,
    pub payload_temp: i16,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Decoded {
    Fields(PayloadFields),
    Raw { raw_hex: String },
}

impl Decoded {
    pub fn fields(&self) -> Option<&PayloadFields> {
        match self {
            Decoded::Fields(f) => Some(f),
            Decoded::Raw { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UplinkRecord {
    pub dev_id: String,
    pub app_id: String,
    pub fcnt: u32,
    pub port: u8,
    #[serde(with = "hex_bytes")]
    pub payload_hex: Vec<u8>,
    pub decoded: Option<Decoded>,
    #[serde(default)]
    pub decode_error: bool,
    /// Combined level under the default thresholds, when decodable.
    pub risk: Option<RiskLevel>,
    pub confirmed: bool,
    pub rssi_dbm: f64,
    pub freq_hz: u32,
    pub dr: u8,
    pub gw_id: Eui64,
    pub gw_time_s: f64,
    pub server_time_s: f64,
}

#[derive(Debug, Default)]
pub struct RecordStore {
    records: Vec<UplinkRecord>,
    by_dev: BTreeMap<String, Vec<usize>>,
    file: Option<(PathBuf, BufWriter<File>)>,
}

impl RecordStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Open (or create) a log file, loading any records it already holds.
    pub fn open(path: impl AsRef<Path>) -> io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut store = Self::default();
        if path.exists() {
            for (n, line) in BufReader::new(File::open(&path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: UplinkRecord = serde_json::from_str(&line).map_err(|e| {
                    io::Error::new(io::ErrorKind::InvalidData, format!("{}:{}: {e}", path.display(), n + 1))
                })?;
                store.index(rec);
            }
        }
        let f = OpenOptions::new().create(true).append(true).open(&path)?;
        store.file = Some((path, BufWriter::new(f)));
        Ok(store)
    }

    pub fn path(&self) -> Option<&Path> {
        self.file.as_ref().map(|(p, _)| p.as_path())
    }

    fn index(&mut self, rec: UplinkRecord) {
        self.by_dev.entry(rec.dev_id.clone()).or_default().push(self.records.len());
        self.records.push(rec);
    }

    pub fn append(&mut self, rec: UplinkRecord) -> io::Result<()> {
        if let Some((_, w)) = &mut self.file {
            serde_json::to_writer(&mut *w, &rec)?;
            w.write_all(b"\n")?;
        }
        self.index(rec);
        Ok(())
    }

    pub fn flush(&mut self) -> io::Result<()> {
        match &mut self.file {
            Some((_, w)) => w.flush(),
            None => Ok(()),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn all(&self) -> &[UplinkRecord] {
        &self.records
    }

    pub fn contains(&self, dev_id: &str, fcnt: u32) -> bool {
        self.of_device(dev_id).any(|r| r.fcnt == fcnt)
    }

    pub fn of_device<'a>(&'a self, dev_id: &str) -> impl DoubleEndedIterator<Item = &'a UplinkRecord> + 'a {
        self.by_dev.get(dev_id).into_iter().flatten().map(|&i| &self.records[i])
    }

    pub fn latest(&self, dev_id: &str) -> Option<&UplinkRecord> {
        self.of_device(dev_id).next_back()
    }

    /// Records with `from <= server_time_s < to`.
    pub fn range<'a>(&'a self, dev_id: &str, from: f64, to: f64) -> impl Iterator<Item = &'a UplinkRecord> + 'a {
        self.of_device(dev_id).filter(move |r| r.server_time_s >= from && r.server_time_s < to)
    }

    /// The JSONL form of every record, as it appears on disk.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

impl Drop for RecordStore {
    fn drop(&mut self) {
        let _ = self.flush();
    }
}
