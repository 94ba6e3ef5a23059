//! Discrete-event simulator for 5G NR-U / Wi-Fi coexistence on a single
//! unlicensed channel.
//!
//! - [`engine`]: clock, event queue, channel timeline and collision resolution
//! - [`access`]: EDCA and the NR-U listen-before-talk variants
//! - [`priority`]: PC1/PC3 classes and transmission skipping
//! - [`metrics`]: collision probability, efficiency, access delay, fairness
//! - [`sim`]: the event loop tying nodes to the channel
//! - [`rl`]: two-agent multi-objective DQN contention-window control
//! - [`config`] / [`experiment`]: scenario files and experiment sweeps

pub mod access;
pub mod config;
pub mod engine;
pub mod experiment;
pub mod metrics;
pub mod priority;
pub mod rl;
pub mod sim;
