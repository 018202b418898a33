//! Lock-step simulator of a teleoperated surgical robot control stack with
//! a software fault-injection harness.

pub mod campaign;
pub mod control;
pub mod geometry;
pub mod injection;
pub mod itp;
pub mod monitors;
pub mod plant;
pub mod plc;
pub mod session;
pub mod world;
