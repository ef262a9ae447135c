use super::Predictor;
use crate::error::{Error, Result};

/// Repeats the value observed one period earlier.
#[derive(Debug, Clone, PartialEq)]
pub struct SeasonalNaive {
    period: usize,
    window: usize,
    horizon: usize,
}

impl SeasonalNaive {
    pub fn new(period: usize, window: usize, horizon: usize) -> Result<Self> {
        if period == 0 || horizon == 0 {
            return Err(Error::invalid("period and horizon must be positive"));
        }
        if window < period || horizon > period {
            return Err(Error::invalid(format!(
                "seasonal naive needs window >= period >= horizon, got window {window}, period {period}, horizon {horizon}"
            )));
        }
        Ok(Self {
            period,
            window,
            horizon,
        })
    }

    /// One day of 30 min slots.
    pub fn daily(horizon: usize) -> Self {
        Self::new(48, 48, horizon).expect("daily seasonal naive is well formed")
    }
}

impl Predictor for SeasonalNaive {
    fn window(&self) -> usize {
        self.window
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn forward(&self, recent: &[f64]) -> Vec<f64> {
        let start = recent.len() - self.period;
        recent[start..start + self.horizon].to_vec()
    }
}
