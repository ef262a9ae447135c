//! Multi-step prediction of normalized load and harvest series.

mod lstm;
mod naive;

pub use lstm::{fit, LstmNet, LstmPredictor};
pub use naive::SeasonalNaive;

use crate::error::{Error, Result};
use crate::traces::SiteTrace;

/// Anything that maps the last `window` normalized values to `horizon`
/// future values.
pub trait Predictor: Send + Sync {
    fn window(&self) -> usize;
    fn horizon(&self) -> usize;
    /// Raw model output, before clipping.
    fn forward(&self, recent: &[f64]) -> Vec<f64>;

    fn predict(&self, recent: &[f64]) -> Result<Vec<f64>> {
        if recent.len() != self.window() {
            return Err(Error::invalid(format!(
                "predictor expects a window of {} values, got {}",
                self.window(),
                recent.len()
            )));
        }
        Ok(self
            .forward(recent)
            .into_iter()
            .map(|v| v.clamp(0.0, 1.0))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorConfig {
    pub window: usize,
    pub horizon: usize,
    pub hidden_units: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub train_fraction: f64,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            window: 48,
            horizon: 3,
            hidden_units: 32,
            epochs: 20,
            batch_size: 4,
            train_fraction: 0.7,
            learning_rate: 0.005,
            seed: 1,
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 1 || self.horizon < 1 || self.hidden_units < 1 {
            return Err(Error::invalid(
                "window, horizon and hidden units must be at least 1",
            ));
        }
        if self.batch_size < 1 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::invalid("train fraction must lie in (0,1)"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        Ok(())
    }

    /// Number of leading slots used for training.
    pub fn training_len(&self, len: usize) -> usize {
        (len as f64 * self.train_fraction).round() as usize
    }
}

/// T-step prediction issued at `origin_slot` for one site.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    pub site_id: String,
    pub origin_slot: usize,
    pub values: Vec<f64>,
}

pub fn predict(
    p: &dyn Predictor,
    site_id: &str,
    origin_slot: usize,
    recent: &[f64],
) -> Result<Forecast> {
    Ok(Forecast {
        site_id: site_id.to_string(),
        origin_slot,
        values: p.predict(recent)?,
    })
}

pub fn rmse(predicted: &[f64], actual: &[f64]) -> Result<f64> {
    if predicted.len() != actual.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} predictions vs {} observations",
            predicted.len(),
            actual.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::invalid("RMSE of an empty sequence"));
    }
    let sse: f64 = predicted
        .iter()
        .zip(actual)
        .map(|(p, a)| (p - a) * (p - a))
        .sum();
    Ok((sse / predicted.len() as f64).sqrt())
}

/// RMSE at each horizon step over every origin in the held-out tail.
///
/// Input windows are drawn from the held-out tail too, so the model never
/// sees training values at evaluation time.
pub fn evaluate(p: &dyn Predictor, trace: &SiteTrace, train_fraction: f64) -> Result<Vec<f64>> {
    let values = trace.values();
    let split = (values.len() as f64 * train_fraction).round() as usize;
    let test = &values[split.min(values.len())..];
    let (w, h) = (p.window(), p.horizon());
    if test.len() < w + h {
        return Err(Error::invalid(format!(
            "held-out segment has {} slots, need at least window + horizon = {}",
            test.len(),
            w + h
        )));
    }
    let mut predicted = vec![Vec::new(); h];
    let mut actual = vec![Vec::new(); h];
    for origin in w..=test.len() - h {
        let out = p.predict(&test[origin - w..origin])?;
        for k in 0..h {
            predicted[k].push(out[k]);
            actual[k].push(test[origin + k]);
        }
    }
    (0..h).map(|k| rmse(&predicted[k], &actual[k])).collect()
}
