//! Live preference collection and the command-line driver.
//!
//! [`session`] holds the per-session tournament state machine, [`store`]
//! persists it, [`service`] exposes it over HTTP, and [`commands`] runs
//! offline experiments and renders or compares trees.

pub mod commands;
pub mod service;
pub mod session;
pub mod store;
