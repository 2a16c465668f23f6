//! Control laws: a discrete PID with output limits and anti-windup, and the
//! two-degree-of-freedom RST controller with its pole-placement design.

pub mod pid;
pub mod rst;

pub use pid::{PidController, PidGains};
pub use rst::{design_rst, solve_diophantine, RstController, RstDesign, RstError, TMode};
