//! Insertion-loss-aware adaptation of microring Q and bitrate for photonic
//! networks-on-chip, with a discrete-event simulator for comparing laser power
//! management policies.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod link;
pub mod lossmap;
pub mod design;
pub mod rules;
pub mod traffic;
pub mod sim;
pub mod metrics;
pub mod config;
