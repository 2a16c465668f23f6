//! Real-time control simulation with a virtual low-cost ADDA card.
//!
//! The crate simulates closed control loops the way they behave on cheap
//! acquisition hardware: an 8-bit card with a reduced output range, a
//! stochastic settling delay and a bowed DAC curve sits between the
//! controller and the plant. Compensation (re-read loop, gain + lookup-table
//! linearization) recovers usable behaviour, and the fixed-step executor
//! paces the loop against the wall clock. An external controller process can
//! close the loop over UDP instead of the built-in PID/RST laws.

pub mod calibration;
pub mod controllers;
pub mod executor;
pub mod lti;
pub mod plant;
pub mod plot;
pub mod poly;
pub mod reference;
pub mod runner;
pub mod scenario;
pub mod transport;
pub mod vdevice;

pub use poly::Polynomial;
