//! Session-based social recommendation.
//!
//! The crate mines like-minded peers (users whose history shares items with
//! the current session) and social friends, encodes each user's short- and
//! long-term interests with a transformer encoder plus graph attention, and
//! aggregates neighbour influence before scoring the whole item catalogue.

pub mod cli;
pub mod config;
pub mod data;
pub mod masking;
pub mod metrics;
pub mod model;
pub mod neighbours;
pub mod numerics;
pub mod recommend;
pub mod seed;
pub mod synth;
pub mod trainer;
pub mod workdir;
