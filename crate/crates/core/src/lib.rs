//! Reliability of probabilistic gossip on directed overlays and the punishing
//! strategies that keep rational nodes forwarding.

pub mod epidemic_model;
pub mod equilibrium_analyzer;
pub mod error;
pub mod lemma_suite;
pub mod monitoring;
pub mod overlay_graph;
pub mod punishing_strategy;
pub mod repeated_game;
pub mod scenario_cli;

pub use error::{Error, Result};
