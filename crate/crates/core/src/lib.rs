//! Deterministic emulation of a LoRaWAN forest-fire detection network.

pub mod firmware;
pub mod gateway;
pub mod geo;
pub mod ids;
pub mod mac;
pub mod medium;
pub mod modem;
pub mod phy;
pub mod sensors;
pub mod serve;
pub mod server;
pub mod sim;
