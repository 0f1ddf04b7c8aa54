//! Transport-independent query API.

use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::{json, Value};

use super::{Activation, NetworkServer};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ApiRequest {
    pub path: String,
    pub query: BTreeMap<String, String>,
    /// Access key from a header; a `key` query parameter also works.
    pub key: Option<String>,
}

impl ApiRequest {
    /// Build from a path with an optional query string, e.g.
    /// `/api/devices/node-1/records?from=0&to=60&key=secret`.
    pub fn get(target: &str) -> Self {
        let (path, qs) = target.split_once('?').unwrap_or((target, ""));
        let query = serde_urlencoded::from_str::<Vec<(String, String)>>(qs).unwrap_or_default().into_iter().collect();
        Self { path: path.to_string(), query, key: None }
    }

    pub fn with_key(mut self, key: &str) -> Self {
        self.key = Some(key.to_string());
        self
    }

    fn access_key(&self) -> Option<&str> {
        self.key.as_deref().or_else(|| self.query.get("key").map(String::as_str))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiResponse {
    pub status: u16,
    pub body: Value,
}

impl ApiResponse {
    fn ok(body: impl Serialize) -> Self {
        Self { status: 200, body: serde_json::to_value(body).expect("api body serializes") }
    }

    fn error(status: u16, msg: impl Into<String>) -> Self {
        Self { status, body: json!({ "error": msg.into() }) }
    }

    fn unauthorized() -> Self {
        Self::error(401, "missing or invalid access key")
    }
}

fn parse_bound(req: &ApiRequest, name: &str, default: f64) -> Result<f64, ApiResponse> {
    match req.query.get(name).map(|s| s.trim()).filter(|s| !s.is_empty()) {
        None => Ok(default),
        Some(s) => s
            .parse::<f64>()
            .ok()
            .filter(|v| !v.is_nan())
            .ok_or_else(|| ApiResponse::error(400, format!("{name} must be a number of seconds, got {s:?}"))),
    }
}

pub fn query_api(server: &NetworkServer, req: &ApiRequest) -> ApiResponse {
    let reg = server.registry();
    let key = req.access_key();
    let opens = |app_id: &str| reg.authorized(app_id, key);
    if !reg.apps().any(|a| opens(&a.app_id)) {
        return ApiResponse::unauthorized();
    }
    let segments: Vec<&str> = req.path.trim_end_matches('/').split('/').skip(1).collect();
    match segments.as_slice() {
        ["api", "apps"] => {
            let apps: Vec<Value> = reg
                .apps()
                .filter(|a| opens(&a.app_id))
                .map(|a| {
                    json!({
                        "app_id": a.app_id,
                        "app_eui": a.app_eui,
                        "decoder": a.decoder,
                        "devices": reg.devices_of(&a.app_id).count(),
                    })
                })
                .collect();
            ApiResponse::ok(apps)
        }
        ["api", "apps", app_id, "devices"] => {
            if reg.app(app_id).is_none() {
                return ApiResponse::error(404, format!("unknown application {app_id:?}"));
            }
            if !opens(app_id) {
                return ApiResponse::unauthorized();
            }
            let devices: Vec<Value> = reg
                .devices_of(app_id)
                .map(|d| {
                    let latest = server.store().latest(&d.dev_id);
                    let (activation, dev_eui) = match &d.activation {
                        Activation::Abp { .. } => ("abp", None),
                        Activation::Otaa { dev_eui, .. } => ("otaa", Some(dev_eui.to_string())),
                    };
                    json!({
                        "dev_id": d.dev_id,
                        "app_id": d.app_id,
                        "activation": activation,
                        "dev_addr": server.session_addr(&d.dev_id),
                        "dev_eui": dev_eui,
                        "location": d.location,
                        "position": server.position(&d.dev_id),
                        "last_fcnt": latest.map(|r| r.fcnt),
                        "last_seen_s": latest.map(|r| r.server_time_s),
                        "risk": latest.and_then(|r| r.risk),
                    })
                })
                .collect();
            ApiResponse::ok(devices)
        }
        ["api", "devices", dev_id, rest] => {
            let Some(dev) = reg.device(dev_id) else {
                return ApiResponse::error(404, format!("unknown device {dev_id:?}"));
            };
            if !opens(&dev.app_id) {
                return ApiResponse::unauthorized();
            }
            match *rest {
                "latest" => match server.store().latest(dev_id) {
                    Some(r) => ApiResponse::ok(r),
                    None => ApiResponse::error(404, format!("no records for {dev_id:?}")),
                },
                "records" => {
                    let from = match parse_bound(req, "from", f64::NEG_INFINITY) {
                        Ok(v) => v,
                        Err(e) => return e,
                    };
                    let to = match parse_bound(req, "to", f64::INFINITY) {
                        Ok(v) => v,
                        Err(e) => return e,
                    };
                    ApiResponse::ok(server.store().range(dev_id, from, to).collect::<Vec<_>>())
                }
                _ => ApiResponse::error(404, format!("no route {}", req.path)),
            }
        }
        ["api", "stats"] => ApiResponse::ok(server.stats()),
        _ => ApiResponse::error(404, format!("no route {}", req.path)),
    }
}
