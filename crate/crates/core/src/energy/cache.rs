use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A viral-content share: at `slot`, `viewers` potential viewers are
/// influenced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CacheEvent {
    pub slot: f64,
    pub viewers: f64,
}

/// View-rate model for cached viral content with the unit-mass response
/// kernel `exp(-(t - t_i) / decay_slots) / decay_slots`.
#[derive(Debug, Clone, PartialEq)]
pub struct CacheModel {
    /// views per slot not triggered by sharing
    pub baseline_views: f64,
    /// sorted by slot
    pub events: Vec<CacheEvent>,
    pub decay_slots: f64,
    /// J per view for transmission
    pub transmit_per_view: f64,
    /// J per view for caching
    pub cache_per_view: f64,
}

impl Default for CacheModel {
    fn default() -> Self {
        Self {
            baseline_views: 0.0,
            events: Vec::new(),
            decay_slots: 4.0,
            transmit_per_view: 0.25,
            cache_per_view: 0.25,
        }
    }
}

impl CacheModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.decay_slots > 0.0) {
            return Err(Error::invalid("cache kernel decay must be positive"));
        }
        if self.baseline_views < 0.0 || self.transmit_per_view < 0.0 || self.cache_per_view < 0.0 {
            return Err(Error::invalid("cache rates and costs must be non-negative"));
        }
        if self.events.iter().any(|e| !(e.viewers >= 0.0)) {
            return Err(Error::invalid("event viewer counts must be non-negative"));
        }
        if self.events.windows(2).any(|w| w[0].slot > w[1].slot) {
            return Err(Error::invalid("cache events must be sorted by slot"));
        }
        Ok(())
    }

    pub fn cost_per_view(&self) -> f64 {
        self.transmit_per_view + self.cache_per_view
    }
}

/// λ̄(t) = V + Σ_{t_i ≤ t} Ω_i k(t − t_i).
pub fn hawkes_rate(t: f64, cm: &CacheModel) -> f64 {
    cm.baseline_views
        + cm.events
            .iter()
            .take_while(|e| e.slot <= t)
            .map(|e| e.viewers * (-(t - e.slot) / cm.decay_slots).exp() / cm.decay_slots)
            .sum::<f64>()
}

pub fn caching_energy(rate: f64, cm: &CacheModel) -> f64 {
    rate * cm.cost_per_view()
}

/// Parameters of the self-exciting share process used to generate events.
#[derive(Debug, Clone, PartialEq)]
pub struct HawkesSpec {
    /// background share intensity, events per slot
    pub base_rate: f64,
    /// intensity jump per share
    pub excitation: f64,
    pub decay_slots: f64,
    pub viewers_min: f64,
    pub viewers_max: f64,
}

impl Default for HawkesSpec {
    fn default() -> Self {
        Self {
            base_rate: 0.05,
            excitation: 0.1,
            decay_slots: 4.0,
            viewers_min: 5.0,
            viewers_max: 40.0,
        }
    }
}

/// Share times over `[0, horizon_slots)` by Ogata thinning of a Hawkes
/// process with exponential kernel; each share gets a uniform viewer count.
pub fn simulate_hawkes_events(
    spec: &HawkesSpec,
    horizon_slots: f64,
    seed: u64,
) -> Result<Vec<CacheEvent>> {
    if !(spec.base_rate >= 0.0 && spec.excitation >= 0.0 && spec.decay_slots > 0.0) {
        return Err(Error::invalid(
            "Hawkes rates must be non-negative and decay positive",
        ));
    }
    if spec.excitation * spec.decay_slots >= 1.0 {
        return Err(Error::invalid(
            "branching ratio excitation * decay must stay below 1 for a stationary process",
        ));
    }
    if !(spec.viewers_min >= 0.0 && spec.viewers_max >= spec.viewers_min) {
        return Err(Error::invalid("viewer range is empty or negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events = Vec::new();
    let mut t = 0.0;
    // excitation carried by past events, evaluated at t
    let mut excited = 0.0f64;
    loop {
        let bound = spec.base_rate + excited;
        if bound <= 0.0 {
            break;
        }
        let u: f64 = rng.random_range(f64::EPSILON..1.0);
        let step = -u.ln() / bound;
        t += step;
        if t >= horizon_slots {
            break;
        }
        excited *= (-step / spec.decay_slots).exp();
        let accept: f64 = rng.random();
        if accept * bound <= spec.base_rate + excited {
            let viewers = if spec.viewers_max > spec.viewers_min {
                rng.random_range(spec.viewers_min..spec.viewers_max)
            } else {
                spec.viewers_min
            };
            events.push(CacheEvent { slot: t, viewers });
            excited += spec.excitation;
        }
    }
    Ok(events)
}
