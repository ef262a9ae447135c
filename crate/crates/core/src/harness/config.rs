use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::battery::Battery;
use crate::controller::{Algorithm, ControlConfig};
use crate::energy::HawkesSpec;
use crate::error::{Error, Result};
use crate::forecast::PredictorConfig;
use crate::traces::HarvestMix;

/// Where the controller's forecasts come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ForecastSource {
    Lstm,
    Seasonal,
    /// the realized values themselves
    Perfect,
}

impl FromStr for ForecastSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lstm" => Ok(Self::Lstm),
            "seasonal" => Ok(Self::Seasonal),
            "perfect" => Ok(Self::Perfect),
            other => Err(Error::Config(format!(
                "unknown forecaster `{other}`, expected lstm, seasonal or perfect"
            ))),
        }
    }
}

impl std::fmt::Display for ForecastSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Lstm => "lstm",
            Self::Seasonal => "seasonal",
            Self::Perfect => "perfect",
        })
    }
}

/// Energy-buffer thresholds shared by every site.
#[derive(Debug, Clone, PartialEq)]
pub struct BatteryConfig {
    pub capacity: f64,
    pub low_fraction: f64,
    pub up_fraction: f64,
    pub leakage: f64,
    pub initial_fraction: f64,
}

impl Default for BatteryConfig {
    fn default() -> Self {
        Self {
            capacity: 490_000.0,
            low_fraction: 0.3,
            up_fraction: 0.7,
            leakage: 2.0e-6,
            initial_fraction: 0.7,
        }
    }
}

impl BatteryConfig {
    pub fn build(&self) -> Result<Battery> {
        Battery::new(
            self.initial_fraction * self.capacity,
            self.capacity,
            self.low_fraction * self.capacity,
            self.up_fraction * self.capacity,
            self.leakage,
        )
        .map_err(|e| Error::Config(e.to_string()))
    }
}

/// Synthetic workload, harvest and mobility settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceConfig {
    /// per-BS peak offered load is `traffic_peak * U[traffic_spread, 1]`, Mbit
    pub traffic_peak: f64,
    pub traffic_spread: f64,
    pub traffic_noise: f64,
    /// per-site solar peak drawn from this range, J per slot
    pub solar_peak: (f64, f64),
    pub wind_peak: (f64, f64),
    pub harvest_mix: HarvestMix,
    pub harvest_noise: f64,
    pub server_solar_peak: f64,
    pub server_wind_peak: f64,
    /// cluster shapes; the bundled ones when unset
    pub clusters_file: Option<PathBuf>,
    pub ue_per_bs: f64,
    pub ue_move_prob: f64,
    pub ue_reverse_prob: f64,
    pub shares: HawkesSpec,
}

impl Default for TraceConfig {
    fn default() -> Self {
        Self {
            traffic_peak: 100.0,
            traffic_spread: 0.6,
            traffic_noise: 0.05,
            solar_peak: (20_000.0, 200_000.0),
            wind_peak: (0.0, 60_000.0),
            harvest_mix: HarvestMix::Additive,
            harvest_noise: 0.05,
            server_solar_peak: 2_000.0,
            server_wind_peak: 500.0,
            clusters_file: None,
            ue_per_bs: 2.5,
            ue_move_prob: 0.3,
            ue_reverse_prob: 0.1,
            shares: HawkesSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub n_bs: usize,
    pub algorithm: Algorithm,
    pub forecaster: ForecastSource,
    /// simulated days
    pub days: usize,
    /// days of history before the run, used for training and input windows
    pub history_days: usize,
    pub slot_seconds: f64,
    pub seed: u64,
    pub control: ControlConfig,
    pub battery: BatteryConfig,
    pub predictor: PredictorConfig,
    pub traces: TraceConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let control = ControlConfig::default();
        let predictor = PredictorConfig {
            horizon: control.horizon,
            ..PredictorConfig::default()
        };
        Self {
            n_bs: 12,
            algorithm: Algorithm::Genm,
            forecaster: ForecastSource::Lstm,
            days: 2,
            history_days: 10,
            slot_seconds: 1800.0,
            seed: 1,
            control,
            battery: BatteryConfig::default(),
            predictor,
            traces: TraceConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse `{value}` for key `{key}`")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn parse_range(key: &str, value: &str) -> Result<(f64, f64)> {
    match parse_list(key, value)?.as_slice() {
        [a, b] => Ok((*a, *b)),
        _ => Err(Error::Config(format!("key `{key}` expects `min,max`"))),
    }
}

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl ScenarioConfig {
    /// Reference scenario with `n` base stations and switching weight `z_e`.
    pub fn reference(n: usize, z_e: f64) -> Self {
        let mut cfg = Self {
            n_bs: n,
            ..Self::default()
        };
        cfg.control.mec.z_e = z_e;
        cfg
    }

    /// Every key with its current value, in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let c = &self.control;
        let m = &c.mec;
        let b = &c.bs;
        let p = &self.predictor;
        let t = &self.traces;
        let mut out = vec![
            ("n_bs", self.n_bs.to_string()),
            ("algorithm", self.algorithm.to_string()),
            ("forecaster", self.forecaster.to_string()),
            ("days", self.days.to_string()),
            ("history_days", self.history_days.to_string()),
            ("slot_seconds", self.slot_seconds.to_string()),
            ("seed", self.seed.to_string()),
            ("gamma", c.gamma.to_string()),
            ("horizon", c.horizon.to_string()),
            ("admission_grid", join(&c.admission_grid)),
            ("delay_fraction", c.delay_fraction.to_string()),
            ("max_wake_plans", c.max_wake_plans.to_string()),
            ("parallel", c.parallel.to_string()),
            ("theta0", b.theta0.to_string()),
            ("load_coeff", b.load_coeff.to_string()),
            ("epsilon", b.epsilon.to_string()),
            ("theta_idle", m.theta_idle.to_string()),
            ("theta_max", m.theta_max.to_string()),
            ("z_e", m.z_e.to_string()),
            ("theta_idle_nic", m.theta_idle_nic.to_string()),
            ("eta", m.eta.to_string()),
            ("nic_fraction", m.nic_fraction.to_string()),
            ("bandwidth_hz", m.bandwidth_hz.to_string()),
            ("noise_density", m.noise_density.to_string()),
            ("link_gain", m.link_gain.to_string()),
            ("driver_power", m.driver_power.to_string()),
            ("target_rate", m.target_rate.to_string()),
            ("upsilon", m.upsilon.to_string()),
            ("sigma", m.sigma.to_string()),
            ("rho", m.rho.to_string()),
            ("delta", m.delta.to_string()),
            ("tau_max", m.tau_max.to_string()),
            ("r_max", m.r_max.to_string()),
            ("rate_set", join(&m.rate_set)),
            ("lambda_max", m.lambda_max.to_string()),
            ("c_max", m.c_max.to_string()),
            ("beta", m.beta.to_string()),
            ("m_max", m.m_max.to_string()),
            ("link_ratio_guard", m.link_ratio_guard.to_string()),
            ("cache_baseline_views", c.cache.baseline_views.to_string()),
            ("cache_decay", c.cache.decay_slots.to_string()),
            ("transmit_per_view", c.cache.transmit_per_view.to_string()),
            ("cache_per_view", c.cache.cache_per_view.to_string()),
            ("b_max", self.battery.capacity.to_string()),
            ("b_low_fraction", self.battery.low_fraction.to_string()),
            ("b_up_fraction", self.battery.up_fraction.to_string()),
            ("leakage", self.battery.leakage.to_string()),
            (
                "b_initial_fraction",
                self.battery.initial_fraction.to_string(),
            ),
            ("lstm_window", p.window.to_string()),
            ("lstm_hidden", p.hidden_units.to_string()),
            ("lstm_epochs", p.epochs.to_string()),
            ("lstm_batch", p.batch_size.to_string()),
            ("lstm_lr", p.learning_rate.to_string()),
            ("lstm_seed", p.seed.to_string()),
            ("train_fraction", p.train_fraction.to_string()),
            ("traffic_peak", t.traffic_peak.to_string()),
            ("traffic_spread", t.traffic_spread.to_string()),
            ("traffic_noise", t.traffic_noise.to_string()),
            ("solar_peak", join(&[t.solar_peak.0, t.solar_peak.1])),
            ("wind_peak", join(&[t.wind_peak.0, t.wind_peak.1])),
            (
                "harvest_mix",
                match t.harvest_mix {
                    HarvestMix::Additive => "additive".into(),
                    HarvestMix::Max => "max".into(),
                },
            ),
            ("harvest_noise", t.harvest_noise.to_string()),
            ("server_solar_peak", t.server_solar_peak.to_string()),
            ("server_wind_peak", t.server_wind_peak.to_string()),
            ("ue_per_bs", t.ue_per_bs.to_string()),
            ("ue_move_prob", t.ue_move_prob.to_string()),
            ("ue_reverse_prob", t.ue_reverse_prob.to_string()),
            ("share_rate", t.shares.base_rate.to_string()),
            ("share_excitation", t.shares.excitation.to_string()),
            ("viewers_min", t.shares.viewers_min.to_string()),
            ("viewers_max", t.shares.viewers_max.to_string()),
        ];
        if let Some(path) = &t.clusters_file {
            out.push(("clusters_file", path.display().to_string()));
        }
        out
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let c = &mut self.control;
        let t = &mut self.traces;
        match key {
            "n_bs" => self.n_bs = parse(key, v)?,
            "algorithm" => self.algorithm = v.parse()?,
            "forecaster" => self.forecaster = v.parse()?,
            "days" => self.days = parse(key, v)?,
            "history_days" => self.history_days = parse(key, v)?,
            "slot_seconds" => self.slot_seconds = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "gamma" => c.gamma = parse(key, v)?,
            "horizon" => {
                c.horizon = parse(key, v)?;
                self.predictor.horizon = c.horizon;
            }
            "admission_grid" => c.admission_grid = parse_list(key, v)?,
            "delay_fraction" => c.delay_fraction = parse(key, v)?,
            "max_wake_plans" => c.max_wake_plans = parse(key, v)?,
            "parallel" => c.parallel = parse(key, v)?,
            "theta0" => c.bs.theta0 = parse(key, v)?,
            "load_coeff" => c.bs.load_coeff = parse(key, v)?,
            "epsilon" => c.bs.epsilon = parse(key, v)?,
            "theta_idle" => c.mec.theta_idle = parse(key, v)?,
            "theta_max" => c.mec.theta_max = parse(key, v)?,
            "z_e" => c.mec.z_e = parse(key, v)?,
            "theta_idle_nic" => c.mec.theta_idle_nic = parse(key, v)?,
            "eta" => c.mec.eta = parse(key, v)?,
            "nic_fraction" => c.mec.nic_fraction = parse(key, v)?,
            "bandwidth_hz" => c.mec.bandwidth_hz = parse(key, v)?,
            "noise_density" => c.mec.noise_density = parse(key, v)?,
            "link_gain" => c.mec.link_gain = parse(key, v)?,
            "driver_power" => c.mec.driver_power = parse(key, v)?,
            "target_rate" => c.mec.target_rate = parse(key, v)?,
            "upsilon" => c.mec.upsilon = parse(key, v)?,
            "sigma" => c.mec.sigma = parse(key, v)?,
            "rho" => c.mec.rho = parse(key, v)?,
            "delta" => c.mec.delta = parse(key, v)?,
            "tau_max" => c.mec.tau_max = parse(key, v)?,
            "r_max" => c.mec.r_max = parse(key, v)?,
            "rate_set" => c.mec.rate_set = parse_list(key, v)?,
            "lambda_max" => c.mec.lambda_max = parse(key, v)?,
            "c_max" => c.mec.c_max = parse(key, v)?,
            "beta" => c.mec.beta = parse(key, v)?,
            "m_max" => c.mec.m_max = parse(key, v)?,
            "link_ratio_guard" => c.mec.link_ratio_guard = parse(key, v)?,
            "cache_baseline_views" => c.cache.baseline_views = parse(key, v)?,
            "cache_decay" => {
                c.cache.decay_slots = parse(key, v)?;
                t.shares.decay_slots = c.cache.decay_slots;
            }
            "transmit_per_view" => c.cache.transmit_per_view = parse(key, v)?,
            "cache_per_view" => c.cache.cache_per_view = parse(key, v)?,
            "b_max" => self.battery.capacity = parse(key, v)?,
            "b_low_fraction" => self.battery.low_fraction = parse(key, v)?,
            "b_up_fraction" => self.battery.up_fraction = parse(key, v)?,
            "leakage" => self.battery.leakage = parse(key, v)?,
            "b_initial_fraction" => self.battery.initial_fraction = parse(key, v)?,
            "lstm_window" => self.predictor.window = parse(key, v)?,
            "lstm_hidden" => self.predictor.hidden_units = parse(key, v)?,
            "lstm_epochs" => self.predictor.epochs = parse(key, v)?,
            "lstm_batch" => self.predictor.batch_size = parse(key, v)?,
            "lstm_lr" => self.predictor.learning_rate = parse(key, v)?,
            "lstm_seed" => self.predictor.seed = parse(key, v)?,
            "train_fraction" => self.predictor.train_fraction = parse(key, v)?,
            "traffic_peak" => t.traffic_peak = parse(key, v)?,
            "traffic_spread" => t.traffic_spread = parse(key, v)?,
            "traffic_noise" => t.traffic_noise = parse(key, v)?,
            "solar_peak" => t.solar_peak = parse_range(key, v)?,
            "wind_peak" => t.wind_peak = parse_range(key, v)?,
            "harvest_mix" => {
                t.harvest_mix = v.parse().map_err(|e: Error| Error::Config(e.to_string()))?
            }
            "harvest_noise" => t.harvest_noise = parse(key, v)?,
            "server_solar_peak" => t.server_solar_peak = parse(key, v)?,
            "server_wind_peak" => t.server_wind_peak = parse(key, v)?,
            "clusters_file" => t.clusters_file = Some(PathBuf::from(v)),
            "ue_per_bs" => t.ue_per_bs = parse(key, v)?,
            "ue_move_prob" => t.ue_move_prob = parse(key, v)?,
            "ue_reverse_prob" => t.ue_reverse_prob = parse(key, v)?,
            "share_rate" => t.shares.base_rate = parse(key, v)?,
            "share_excitation" => t.shares.excitation = parse(key, v)?,
            "viewers_min" => t.shares.viewers_min = parse(key, v)?,
            "viewers_max" => t.shares.viewers_max = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Apply a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment.split_once('=').ok_or_else(|| {
            Error::Config(format!(
                "override `{assignment}` is not of the form key=value"
            ))
        })?;
        self.set(k.trim(), v)
    }

    /// Defaults overlaid with the `key = value` lines of `text`. Blank
    /// lines and `#` comments are ignored.
    pub fn parse_text(text: &str, origin: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                msg,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err("expected `key = value`".into()))?;
            cfg.set(k.trim(), v).map_err(|e| err(e.to_string()))?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_text(&text, &path.display().to_string())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        };
        if self.n_bs == 0 {
            return Err(Error::Config(
                "at least one base station is required".into(),
            ));
        }
        if self.days == 0 {
            return Err(Error::Config("run length must be at least one day".into()));
        }
        if !(self.slot_seconds > 0.0) {
            return Err(Error::Config("slot duration must be positive".into()));
        }
        self.control.validate().map_err(cfg_err)?;
        self.predictor.validate().map_err(cfg_err)?;
        if self.predictor.horizon != self.control.horizon {
            return Err(Error::Config(
                "predictor horizon must equal the control horizon".into(),
            ));
        }
        if self.history_days * crate::traces::SLOTS_PER_DAY
            < self.predictor.window + self.predictor.horizon + 1
        {
            return Err(Error::Config(
                "history is too short for one forecast window".into(),
            ));
        }
        self.battery.build()?;
        let t = &self.traces;
        if !(t.traffic_peak >= 0.0) || !(0.0..=1.0).contains(&t.traffic_spread) {
            return Err(Error::Config(
                "traffic peak must be non-negative and spread in [0,1]".into(),
            ));
        }
        for (name, (lo, hi)) in [("solar_peak", t.solar_peak), ("wind_peak", t.wind_peak)] {
            if !(0.0 <= lo && lo <= hi) {
                return Err(Error::Config(format!(
                    "{name} must satisfy 0 <= min <= max"
                )));
            }
        }
        if !(t.server_solar_peak >= 0.0 && t.server_wind_peak >= 0.0) {
            return Err(Error::Config(
                "server harvest peaks must be non-negative".into(),
            ));
        }
        for (name, p) in [
            ("ue_move_prob", t.ue_move_prob),
            ("ue_reverse_prob", t.ue_reverse_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0,1]")));
            }
        }
        if !(t.ue_per_bs >= 0.0) {
            return Err(Error::Config("ue_per_bs must be non-negative".into()));
        }
        if !(t.shares.viewers_min >= 0.0 && t.shares.viewers_min <= t.shares.viewers_max) {
            return Err(Error::Config(
                "viewer range must satisfy 0 <= min <= max".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = ScenarioConfig::reference(24, 0.05);
        cfg.set("admission_grid", "0,0.5,1").unwrap();
        cfg.set("clusters_file", "data/clusters.csv").unwrap();
        let back = ScenarioConfig::parse_text(&cfg.to_text(), "mem").unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn overrides_and_errors() {
        let mut cfg = ScenarioConfig::default();
        cfg.apply_override("gamma=0.8").unwrap();
        assert_eq!(cfg.control.gamma, 0.8);
        cfg.apply_override("horizon = 2").unwrap();
        assert_eq!(cfg.predictor.horizon, 2);
        assert!(matches!(
            cfg.apply_override("nonsense=1"),
            Err(Error::Config(_))
        ));
        assert!(matches!(cfg.apply_override("gamma"), Err(Error::Config(_))));
        assert!(matches!(
            ScenarioConfig::parse_text("n_bs = 4\nseed = x\n", "f.cfg"),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn defaults_validate() {
        ScenarioConfig::default().validate().unwrap();
        let mut cfg = ScenarioConfig::default();
        cfg.control.gamma = 2.0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
