//! Per-site energy buffer: harvest, drain, leakage, and grid top-ups.

use std::io::Write;

use log::warn;

use crate::error::{Error, Result};
use crate::units;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Battery {
    /// current level, J
    pub level: f64,
    pub capacity: f64,
    pub low: f64,
    pub up: f64,
    /// per-slot leakage, J
    pub leakage: f64,
}

impl Battery {
    pub fn new(level: f64, capacity: f64, low: f64, up: f64, leakage: f64) -> Result<Self> {
        if !(0.0 < low && low < up && up < capacity) {
            return Err(Error::invalid(format!(
                "battery thresholds must satisfy 0 < low < up < capacity, got {low}, {up}, {capacity}"
            )));
        }
        if !(0.0..=capacity).contains(&level) {
            return Err(Error::invalid(format!(
                "battery level {level} is outside [0, {capacity}]"
            )));
        }
        if !(leakage >= 0.0) {
            return Err(Error::invalid("leakage must be non-negative"));
        }
        Ok(Self {
            level,
            capacity,
            low,
            up,
            leakage,
        })
    }

    /// 490 kJ buffer with thresholds at 30% and 70% and 2 µJ leakage,
    /// starting at the upper threshold.
    pub fn reference() -> Self {
        let capacity = units::kj(490.0);
        Self {
            level: 0.7 * capacity,
            capacity,
            low: 0.3 * capacity,
            up: 0.7 * capacity,
            leakage: 2.0e-6,
        }
    }

    pub fn with_level(mut self, level: f64) -> Self {
        self.level = level.clamp(0.0, self.capacity);
        self
    }

    pub fn is_deficient(&self) -> bool {
        self.level < self.low
    }

    /// Grid energy to buy when the forecast harvest will not reach the
    /// upper threshold.
    pub fn plan_purchase(&self, harvest_forecast: f64) -> f64 {
        if self.level + harvest_forecast.max(0.0) >= self.up {
            0.0
        } else {
            self.up - self.level
        }
    }

    /// Extra purchase on top of `purchased` so the slot ends at or above
    /// `low`, evaluated in the same order as [`Battery::step`] so rounding
    /// cannot leave the level a few ulps short.
    pub fn floor_top_up(&self, harvested: f64, consumed: f64, purchased: f64) -> f64 {
        let end =
            |extra: f64| self.level + harvested + (purchased + extra) - consumed - self.leakage;
        let mut extra = (self.low - end(0.0)).max(0.0);
        while extra > 0.0 && end(extra) < self.low {
            extra += self.low.abs().max(1.0) * f64::EPSILON;
        }
        extra
    }

    /// Level at the end of a slot, without validation or flooring.
    pub fn project(&self, harvested: f64, consumed: f64, purchased: f64) -> f64 {
        (self.level + harvested - consumed - self.leakage + purchased).min(self.capacity)
    }

    /// Advance one slot. Fails when the drain exceeds everything available.
    pub fn step(
        &self,
        slot: usize,
        site: &str,
        harvested: f64,
        consumed: f64,
        purchased: f64,
    ) -> Result<(Battery, EnergyLedgerEntry)> {
        for (name, v) in [
            ("harvest", harvested),
            ("consumption", consumed),
            ("purchase", purchased),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        let available = self.level + harvested + purchased;
        if consumed > available {
            return Err(Error::Infeasible(format!(
                "site {site} slot {slot}: drain {consumed:.3} J exceeds available {available:.3} J"
            )));
        }
        let raw = available - consumed - self.leakage;
        let spilled = (raw - self.capacity).max(0.0);
        let deficit = (-raw).max(0.0);
        if deficit > 0.0 {
            warn!("site {site} slot {slot}: battery floored at zero ({deficit:.3e} J short)");
        }
        let after = raw.clamp(0.0, self.capacity);
        let entry = EnergyLedgerEntry {
            slot,
            site: site.to_string(),
            harvested,
            consumed,
            purchased,
            before: self.level,
            after,
            spilled,
            deficit,
            leakage: self.leakage,
        };
        Ok((
            Battery {
                level: after,
                ..*self
            },
            entry,
        ))
    }
}

/// One slot of one site's energy accounts.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyLedgerEntry {
    pub slot: usize,
    pub site: String,
    pub harvested: f64,
    pub consumed: f64,
    pub purchased: f64,
    pub before: f64,
    pub after: f64,
    /// harvest lost because the buffer was full
    pub spilled: f64,
    /// shortfall absorbed by the zero floor
    pub deficit: f64,
    pub leakage: f64,
}

impl EnergyLedgerEntry {
    /// H + E − θ − a − Δb − spill + deficit; zero up to rounding.
    pub fn residual(&self) -> f64 {
        self.harvested + self.purchased
            - self.consumed
            - self.leakage
            - (self.after - self.before)
            - self.spilled
            + self.deficit
    }
}

pub const LEDGER_HEADER: [&str; 7] = ["slot", "site", "H", "theta", "E", "b_before", "b_after"];

pub fn write_ledger_csv<W: Write>(out: W, entries: &[EnergyLedgerEntry]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(LEDGER_HEADER)?;
    for e in entries {
        w.write_record([
            e.slot.to_string(),
            e.site.clone(),
            e.harvested.to_string(),
            e.consumed.to_string(),
            e.purchased.to_string(),
            e.before.to_string(),
            e.after.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
