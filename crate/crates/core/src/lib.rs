//! Simulation and learning toolkit for resource allocation in MPTCP-enabled
//! hybrid LiFi/WiFi networks.
//!
//! The pipeline runs bottom-up through these modules:
//!
//! - [`env`]: room and access-point topology, random-waypoint mobility.
//! - [`channel`]: LiFi/WiFi gains, SINR and link capacity.
//! - [`assoc`]: MPTCP subflow selection and the single-link SSS baseline.
//! - [`solver`]: proportional-fair allocation by block-coordinate water-filling.
//! - [`nn`]: a small trainable network engine (FC, BN, ReLU, dropout, sigmoid, Adam).
//! - [`models`]: the user-centric target/condition model and the network-centric DNN.
//! - [`data`]: labelled dataset collection, storage, splitting and training.
//! - [`eval`]: throughput and fairness metrics, baselines, comparisons and latency.
//! - [`config`]: the run configuration file.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assoc;
pub mod channel;
pub mod config;
pub mod data;
pub mod env;
pub mod error;
pub mod eval;
pub mod matrix_csv;
pub mod models;
pub mod nn;
pub mod solver;

pub use error::{Error, Result};
