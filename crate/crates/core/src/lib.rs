//! Simulation and ground-control core for RFID tag-reading robots.

pub mod behavior;
pub mod inventory;
pub mod mission_control;
pub mod rf_link;
pub mod simrunner;
pub mod tag_model;
pub mod telemetry;
pub mod vehicle;
pub mod world;
