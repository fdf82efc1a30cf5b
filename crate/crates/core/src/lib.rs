//! Deterministic simulator for UAV-guided spot spraying of grassland weeds.
//!
//! The pipeline runs survey planning ([`mission`]), plant synthesis and the
//! aerial detector model ([`field`]), routing ([`route`]), spray execution
//! ([`sprayer`]) and uplink budgeting ([`netsim`]), orchestrated end to end by
//! [`engine`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod engine;
pub mod field;
pub mod geo;
pub mod mission;
pub mod netsim;
pub mod rng;
pub mod route;
pub mod sprayer;
