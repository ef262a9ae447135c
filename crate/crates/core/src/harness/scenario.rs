use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{ForecastSource, ScenarioConfig};
use crate::controller::{Forecasts, SlotActuals, UeTrajectory};
use crate::energy::{hawkes_rate, simulate_hawkes_events, CacheModel};
use crate::error::{Error, Result};
use crate::forecast::{fit, Predictor, SeasonalNaive};
use crate::traces::{
    bundled_clusters, load_cluster_csv, normalize, synthesize_profile, synthesize_solar,
    synthesize_wind, ClusterProfile, SiteTrace, SLOTS_PER_DAY,
};

/// One predictor per traffic cluster plus one each for solar and wind.
pub struct PredictorBank {
    pub traffic: Vec<Arc<dyn Predictor>>,
    pub solar: Arc<dyn Predictor>,
    pub wind: Arc<dyn Predictor>,
}

type BankCell = Arc<OnceLock<std::result::Result<Arc<PredictorBank>, String>>>;

fn bank_cache() -> &'static Mutex<HashMap<String, BankCell>> {
    static CACHE: OnceLock<Mutex<HashMap<String, BankCell>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

const TRAINING_SEED: u64 = 0x7a11;

/// Normalized training series for every predictor in the bank.
pub fn training_traces(
    cfg: &ScenarioConfig,
    clusters: &[ClusterProfile],
) -> Result<Vec<SiteTrace>> {
    let days = cfg.history_days;
    let t = &cfg.traces;
    let mut out = Vec::with_capacity(clusters.len() + 2);
    for (i, c) in clusters.iter().enumerate() {
        let raw = synthesize_profile(c, days, TRAINING_SEED + i as u64, t.traffic_noise)?;
        out.push(normalize(&raw)?);
    }
    out.push(synthesize_solar(
        days,
        TRAINING_SEED + 100,
        t.harvest_noise,
    )?);
    out.push(synthesize_wind(days, TRAINING_SEED + 101, t.harvest_noise)?);
    Ok(out)
}

fn train_bank(cfg: &ScenarioConfig, clusters: &[ClusterProfile]) -> Result<PredictorBank> {
    let traces = training_traces(cfg, clusters)?;
    let mut models: Vec<Arc<dyn Predictor>> = match cfg.forecaster {
        ForecastSource::Seasonal => {
            let p = SeasonalNaive::new(
                SLOTS_PER_DAY,
                cfg.predictor.window.max(SLOTS_PER_DAY),
                cfg.predictor.horizon,
            )?;
            vec![Arc::new(p) as Arc<dyn Predictor>; traces.len()]
        }
        _ => traces
            .par_iter()
            .map(|tr| fit(tr, &cfg.predictor).map(|p| Arc::new(p) as Arc<dyn Predictor>))
            .collect::<Result<_>>()?,
    };
    let wind = models.pop().expect("bank has wind");
    let solar = models.pop().expect("bank has solar");
    Ok(PredictorBank {
        traffic: models,
        solar,
        wind,
    })
}

/// Trained once per process for each distinct training setup.
pub fn predictor_bank(
    cfg: &ScenarioConfig,
    clusters: &[ClusterProfile],
) -> Result<Arc<PredictorBank>> {
    let key = format!(
        "{}|{:?}|{}|{}|{}|{:?}",
        cfg.forecaster,
        cfg.predictor,
        cfg.history_days,
        cfg.traces.traffic_noise,
        cfg.traces.harvest_noise,
        cfg.traces.clusters_file
    );
    let cell = {
        let mut map = bank_cache().lock().expect("bank cache lock");
        map.entry(key).or_default().clone()
    };
    cell.get_or_init(|| {
        train_bank(cfg, clusters)
            .map(Arc::new)
            .map_err(|e| e.to_string())
    })
    .clone()
    .map_err(Error::InvalidInput)
}

/// Every exogenous series of one simulated cluster.
pub struct Scenario {
    pub cfg: ScenarioConfig,
    /// first simulated slot in the series below
    pub offset: usize,
    pub run_len: usize,
    pub cluster: Vec<usize>,
    /// `[n][slot]`, Mbit
    pub traffic: Vec<Vec<f64>>,
    pub traffic_scale: Vec<f64>,
    /// `[n][slot]`, normalized
    pub solar: Vec<Vec<f64>>,
    pub wind: Vec<Vec<f64>>,
    pub solar_peak: Vec<f64>,
    pub wind_peak: Vec<f64>,
    pub server_solar: Vec<f64>,
    pub server_wind: Vec<f64>,
    pub cache: CacheModel,
    pub ue: Arc<Vec<UeTrajectory>>,
    bank: Option<Arc<PredictorBank>>,
}

fn ue_walks(n_bs: usize, cfg: &ScenarioConfig, len: usize, seed: u64) -> Vec<UeTrajectory> {
    let t = &cfg.traces;
    let count = (t.ue_per_bs * n_bs as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut pos = rng.random_range(0..n_bs);
            let mut forward = rng.random_bool(0.5);
            let mut positions = Vec::with_capacity(len);
            for _ in 0..len {
                positions.push(pos);
                if rng.random_bool(t.ue_reverse_prob) {
                    forward = !forward;
                }
                if n_bs > 1 && rng.random_bool(t.ue_move_prob) {
                    pos = if forward {
                        (pos + 1) % n_bs
                    } else {
                        (pos + n_bs - 1) % n_bs
                    };
                }
            }
            UeTrajectory { positions }
        })
        .collect()
}

impl Scenario {
    pub fn build(cfg: &ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let clusters = match &cfg.traces.clusters_file {
            Some(p) => load_cluster_csv(p)?,
            None => bundled_clusters(),
        };
        if clusters.is_empty() {
            return Err(Error::Config("no cluster shapes available".into()));
        }
        let n = cfg.n_bs;
        let t = &cfg.traces;
        // one extra day so the last decisions still see a full horizon
        let total_days = cfg.history_days + cfg.days + 1;
        let offset = cfg.history_days * SLOTS_PER_DAY;
        let run_len = cfg.days * SLOTS_PER_DAY;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

        let mut cluster = Vec::with_capacity(n);
        let mut traffic = Vec::with_capacity(n);
        let mut traffic_scale = Vec::with_capacity(n);
        let mut solar = Vec::with_capacity(n);
        let mut wind = Vec::with_capacity(n);
        let mut solar_peak = Vec::with_capacity(n);
        let mut wind_peak = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % clusters.len();
            let site_seed: u64 = rng.random();
            let peak = t.traffic_peak * rng.random_range(t.traffic_spread..=1.0);
            let raw = synthesize_profile(&clusters[c], total_days, site_seed, t.traffic_noise)?;
            let values: Vec<f64> = raw.values().iter().map(|v| v * peak).collect();
            let scale = values[..offset]
                .iter()
                .copied()
                .fold(0.0, f64::max)
                .max(1e-12);
            cluster.push(c);
            traffic.push(values);
            traffic_scale.push(scale);
            solar.push(
                synthesize_solar(total_days, site_seed ^ 0x501a, t.harvest_noise)?
                    .values()
                    .to_vec(),
            );
            wind.push(
                synthesize_wind(total_days, site_seed ^ 0x3141, t.harvest_noise)?
                    .values()
                    .to_vec(),
            );
            solar_peak.push(rng.random_range(t.solar_peak.0..=t.solar_peak.1));
            wind_peak.push(rng.random_range(t.wind_peak.0..=t.wind_peak.1));
        }
        let server_seed: u64 = rng.random();
        let server_solar = synthesize_solar(total_days, server_seed, t.harvest_noise)?
            .values()
            .to_vec();
        let server_wind = synthesize_wind(total_days, server_seed ^ 1, t.harvest_noise)?
            .values()
            .to_vec();

        let mut shares = t.shares.clone();
        shares.decay_slots = cfg.control.cache.decay_slots;
        let events =
            simulate_hawkes_events(&shares, (total_days * SLOTS_PER_DAY) as f64, rng.random())?;
        let cache = CacheModel {
            events,
            ..cfg.control.cache.clone()
        };
        let ue = Arc::new(ue_walks(n, cfg, run_len + 1, rng.random()));

        let bank = match cfg.forecaster {
            ForecastSource::Perfect => None,
            _ => Some(predictor_bank(cfg, &clusters)?),
        };
        Ok(Self {
            cfg: cfg.clone(),
            offset,
            run_len,
            cluster,
            traffic,
            traffic_scale,
            solar,
            wind,
            solar_peak,
            wind_peak,
            server_solar,
            server_wind,
            cache,
            ue,
            bank,
        })
    }

    pub fn n_bs(&self) -> usize {
        self.traffic.len()
    }

    fn harvest_at(&self, n: usize, abs: usize) -> f64 {
        self.cfg.traces.harvest_mix.combine(
            self.solar_peak[n] * self.solar[n][abs],
            self.wind_peak[n] * self.wind[n][abs],
        )
    }

    fn server_harvest_at(&self, abs: usize) -> f64 {
        let t = &self.cfg.traces;
        t.harvest_mix.combine(
            t.server_solar_peak * self.server_solar[abs],
            t.server_wind_peak * self.server_wind[abs],
        )
    }

    pub fn cache_rate_at(&self, abs: usize) -> f64 {
        hawkes_rate(abs as f64, &self.cache)
    }

    /// What actually happens in run slot `slot`.
    pub fn actuals(&self, slot: usize) -> SlotActuals {
        let abs = self.offset + slot;
        SlotActuals {
            load: (0..self.n_bs()).map(|n| self.traffic[n][abs]).collect(),
            harvest: (0..self.n_bs()).map(|n| self.harvest_at(n, abs)).collect(),
            server_harvest: self.server_harvest_at(abs),
            cache_rate: self.cache_rate_at(abs),
        }
    }

    /// Forecasts available at the start of run slot `slot`.
    pub fn forecasts(&self, slot: usize) -> Result<Forecasts> {
        let abs = self.offset + slot;
        let depth = self.cfg.control.horizon;
        let n = self.n_bs();
        let cache_rate: Vec<f64> = (0..depth).map(|k| self.cache_rate_at(abs + k)).collect();
        let Some(bank) = &self.bank else {
            return Ok(Forecasts {
                load: (0..depth)
                    .map(|k| (0..n).map(|i| self.traffic[i][abs + k]).collect())
                    .collect(),
                harvest: (0..depth)
                    .map(|k| (0..n).map(|i| self.harvest_at(i, abs + k)).collect())
                    .collect(),
                server_harvest: (0..depth)
                    .map(|k| self.server_harvest_at(abs + k))
                    .collect(),
                cache_rate,
            });
        };
        let w = bank.solar.window();
        let run = |p: &dyn Predictor, series: &[f64]| p.predict(&series[abs - w..abs]);
        let per_site: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
            .into_par_iter()
            .map(|i| -> Result<(Vec<f64>, Vec<f64>)> {
                let scale = self.traffic_scale[i];
                let norm: Vec<f64> = self.traffic[i][abs - w..abs]
                    .iter()
                    .map(|v| v / scale)
                    .collect();
                let load = bank.traffic[self.cluster[i] % bank.traffic.len()]
                    .predict(&norm)?
                    .into_iter()
                    .map(|v| v * scale)
                    .collect();
                let s = run(bank.solar.as_ref(), &self.solar[i])?;
                let wd = run(bank.wind.as_ref(), &self.wind[i])?;
                let mix = self.cfg.traces.harvest_mix;
                let h = s
                    .iter()
                    .zip(&wd)
                    .map(|(s, wd)| mix.combine(self.solar_peak[i] * s, self.wind_peak[i] * wd))
                    .collect();
                Ok((load, h))
            })
            .collect::<Result<_>>()?;
        let t = &self.cfg.traces;
        let ss = run(bank.solar.as_ref(), &self.server_solar)?;
        let sw = run(bank.wind.as_ref(), &self.server_wind)?;
        let depth = depth.min(ss.len());
        Ok(Forecasts {
            load: (0..depth)
                .map(|k| per_site.iter().map(|(l, _)| l[k]).collect())
                .collect(),
            harvest: (0..depth)
                .map(|k| per_site.iter().map(|(_, h)| h[k]).collect())
                .collect(),
            server_harvest: (0..depth)
                .map(|k| {
                    t.harvest_mix
                        .combine(t.server_solar_peak * ss[k], t.server_wind_peak * sw[k])
                })
                .collect(),
            cache_rate: cache_rate[..depth].to_vec(),
        })
    }
}
