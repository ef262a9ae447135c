//! Green-energy edge cluster simulator and controllers.
//!
//! A cluster of base stations shares one virtualized edge server. Each site
//! harvests renewable energy into a battery and may buy grid energy. The
//! [`controller`] module decides, slot by slot, which base stations sleep,
//! how many containers run and how much delay-sensitive work is admitted,
//! using multi-step forecasts from [`forecast`].

pub mod battery;
pub mod controller;
pub mod energy;
pub mod error;
pub mod forecast;
pub mod harness;
pub mod traces;
pub mod units;

pub use error::{Error, Result};
