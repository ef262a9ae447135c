//! Per-site traffic and harvested-energy time series at slot resolution.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Slots per day at the default 30 min resolution.
pub const SLOTS_PER_DAY: usize = 48;

const BUNDLED_CLUSTERS: &str = include_str!("../data/clusters.csv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TraceKind {
    Traffic,
    Solar,
    Wind,
}

impl fmt::Display for TraceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TraceKind::Traffic => "traffic",
            TraceKind::Solar => "solar",
            TraceKind::Wind => "wind",
        };
        f.write_str(s)
    }
}

impl FromStr for TraceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "traffic" => Ok(TraceKind::Traffic),
            "solar" => Ok(TraceKind::Solar),
            "wind" => Ok(TraceKind::Wind),
            other => Err(Error::invalid(format!("unknown trace kind `{other}`"))),
        }
    }
}

/// How a site combines its solar and wind traces into H(t).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HarvestMix {
    Additive,
    Max,
}

impl FromStr for HarvestMix {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "additive" => Ok(HarvestMix::Additive),
            "max" => Ok(HarvestMix::Max),
            other => Err(Error::invalid(format!("unknown harvest mix `{other}`"))),
        }
    }
}

impl HarvestMix {
    pub fn combine(self, solar: f64, wind: f64) -> f64 {
        match self {
            HarvestMix::Additive => solar + wind,
            HarvestMix::Max => solar.max(wind),
        }
    }
}

/// A non-negative time series for one site.
///
/// Traffic values are Mbit per slot, energy values are J per slot. A
/// normalized trace keeps the factor it was divided by so it can be mapped
/// back to physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteTrace {
    pub site_id: String,
    pub kind: TraceKind,
    pub slot_seconds: f64,
    values: Vec<f64>,
    normalized: bool,
    scale: f64,
}

impl SiteTrace {
    pub fn new(
        site_id: impl Into<String>,
        kind: TraceKind,
        slot_seconds: f64,
        values: Vec<f64>,
    ) -> Result<Self> {
        if !(slot_seconds > 0.0) {
            return Err(Error::invalid("slot duration must be positive"));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(Error::invalid(format!(
                "trace value {v} at index {i} is negative or not finite"
            )));
        }
        Ok(Self {
            site_id: site_id.into(),
            kind,
            slot_seconds,
            values,
            normalized: false,
            scale: 1.0,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Factor that maps normalized values back to physical units.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Undo [`normalize`]. A trace that was never normalized is returned as is.
    pub fn denormalize(&self) -> SiteTrace {
        let mut out = self.clone();
        if self.normalized {
            out.values.iter_mut().for_each(|v| *v *= self.scale);
            out.normalized = false;
            out.scale = 1.0;
        }
        out
    }
}

/// Sum consecutive source samples into slots of `target_seconds`.
///
/// Trailing samples that do not fill a whole slot are dropped.
pub fn aggregate_values(
    series: &[f64],
    source_seconds: f64,
    target_seconds: f64,
) -> Result<Vec<f64>> {
    if series.is_empty() {
        return Err(Error::invalid("cannot aggregate an empty series"));
    }
    if !(source_seconds > 0.0 && target_seconds > 0.0) {
        return Err(Error::invalid("resolutions must be positive"));
    }
    let ratio = target_seconds / source_seconds;
    let rounded = ratio.round();
    if rounded < 1.0 || (ratio - rounded).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::invalid(format!(
            "target resolution {target_seconds}s is not an integer multiple of source resolution {source_seconds}s"
        )));
    }
    let k = rounded as usize;
    Ok(series.chunks_exact(k).map(|c| c.iter().sum()).collect())
}

pub fn aggregate_to_slots(trace: &SiteTrace, target_seconds: f64) -> Result<SiteTrace> {
    let values = aggregate_values(&trace.values, trace.slot_seconds, target_seconds)?;
    let mut out = SiteTrace::new(trace.site_id.clone(), trace.kind, target_seconds, values)?;
    // summing normalized samples leaves the unit range, keep the physical scale
    if trace.normalized {
        out.values.iter_mut().for_each(|v| *v *= trace.scale);
    }
    Ok(out)
}

/// Divide by the trace maximum so every value lands in [0, 1].
pub fn normalize(trace: &SiteTrace) -> Result<SiteTrace> {
    let base = trace.denormalize();
    let max = base.max();
    if max <= 0.0 {
        return Err(Error::invalid(format!(
            "trace `{}` is all zeros and cannot be normalized",
            trace.site_id
        )));
    }
    let mut out = base;
    out.values.iter_mut().for_each(|v| *v /= max);
    out.normalized = true;
    out.scale = max;
    Ok(out)
}

/// Split an offered load into its delay-sensitive and delay-tolerant parts.
pub fn split_delay_sensitive(load: f64, fraction: f64) -> Result<(f64, f64)> {
    if !(load >= 0.0) {
        return Err(Error::invalid(format!(
            "load must be non-negative, got {load}"
        )));
    }
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid(format!(
            "delay-sensitive fraction must lie in [0,1], got {fraction}"
        )));
    }
    let sensitive = fraction * load;
    Ok((sensitive, load - sensitive))
}

/// A normalized 48-slot daily traffic shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterProfile {
    pub cluster_id: u8,
    pub shape: Vec<f64>,
}

impl ClusterProfile {
    fn validate(&self) -> Result<()> {
        if self.shape.len() != SLOTS_PER_DAY {
            return Err(Error::invalid(format!(
                "cluster {} has {} slots, expected {SLOTS_PER_DAY}",
                self.cluster_id,
                self.shape.len()
            )));
        }
        if self.shape.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid(format!(
                "cluster {} has values outside [0,1]",
                self.cluster_id
            )));
        }
        Ok(())
    }
}

/// Parse `cluster_id,slot_index,value` rows into profiles sorted by id.
pub fn parse_cluster_csv(text: &str, origin: &str) -> Result<Vec<ClusterProfile>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut slots: Vec<(u8, Vec<Option<f64>>)> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let err = |msg: String| Error::Parse {
            path: origin.to_string(),
            line,
            msg,
        };
        let rec = rec.map_err(|e| err(e.to_string()))?;
        if rec.len() != 3 {
            return Err(err(format!("expected 3 fields, found {}", rec.len())));
        }
        let id: u8 = rec[0]
            .parse()
            .map_err(|_| err(format!("bad cluster id `{}`", &rec[0])))?;
        let slot: usize = rec[1]
            .parse()
            .map_err(|_| err(format!("bad slot index `{}`", &rec[1])))?;
        let value: f64 = rec[2]
            .parse()
            .map_err(|_| err(format!("bad value `{}`", &rec[2])))?;
        if slot >= SLOTS_PER_DAY {
            return Err(err(format!("slot index {slot} out of range")));
        }
        let entry = match slots.iter_mut().position(|(c, _)| *c == id) {
            Some(p) => &mut slots[p].1,
            None => {
                slots.push((id, vec![None; SLOTS_PER_DAY]));
                &mut slots.last_mut().unwrap().1
            }
        };
        entry[slot] = Some(value);
    }
    slots.sort_by_key(|(id, _)| *id);
    slots
        .into_iter()
        .map(|(cluster_id, vals)| {
            let shape = vals
                .into_iter()
                .enumerate()
                .map(|(s, v)| {
                    v.ok_or_else(|| {
                        Error::invalid(format!(
                            "{origin}: cluster {cluster_id} is missing slot {s}"
                        ))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let p = ClusterProfile { cluster_id, shape };
            p.validate()?;
            Ok(p)
        })
        .collect()
}

/// The four stand-in daily shapes shipped with the crate.
pub fn bundled_clusters() -> Vec<ClusterProfile> {
    parse_cluster_csv(BUNDLED_CLUSTERS, "data/clusters.csv").expect("bundled cluster file is valid")
}

pub fn load_cluster_csv(path: impl AsRef<Path>) -> Result<Vec<ClusterProfile>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_cluster_csv(&text, &path.display().to_string())
}

fn truncated_normal(rng: &mut ChaCha8Rng) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    z.clamp(-3.0, 3.0)
}

/// Tile a cluster shape over `days` with multiplicative noise.
///
/// The noise factor is `1 + noise_level * z` with `z` standard normal
/// truncated to +/-3, so every slot stays within `3 * noise_level` of the
/// shape in relative terms.
pub fn synthesize_profile(
    profile: &ClusterProfile,
    days: usize,
    seed: u64,
    noise_level: f64,
) -> Result<SiteTrace> {
    profile.validate()?;
    if !(0.0..1.0 / 3.0).contains(&noise_level) {
        return Err(Error::invalid(format!(
            "noise level must lie in [0, 1/3), got {noise_level}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..days * SLOTS_PER_DAY)
        .map(|i| {
            let base = profile.shape[i % SLOTS_PER_DAY];
            if noise_level == 0.0 {
                base
            } else {
                base * (1.0 + noise_level * truncated_normal(&mut rng))
            }
        })
        .collect();
    SiteTrace::new(
        format!("cluster-{}", profile.cluster_id),
        TraceKind::Traffic,
        1800.0,
        values,
    )
}

/// [`synthesize_profile`] against the bundled shapes, looked up by id.
pub fn synthesize_profiles(
    cluster_id: u8,
    days: usize,
    seed: u64,
    noise_level: f64,
) -> Result<SiteTrace> {
    let clusters = bundled_clusters();
    let profile = clusters
        .iter()
        .find(|c| c.cluster_id == cluster_id)
        .ok_or_else(|| {
            Error::invalid(format!("unknown cluster id {cluster_id}, expected 1..=4"))
        })?;
    synthesize_profile(profile, days, seed, noise_level)
}

/// Normalized solar harvest: a clear-sky bell between sunrise and sunset,
/// scaled per day by a random cloudiness factor, with small per-slot noise.
pub fn synthesize_solar(days: usize, seed: u64, noise_level: f64) -> Result<SiteTrace> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (sunrise, sunset) = (6.0, 19.0);
    let mut values = Vec::with_capacity(days * SLOTS_PER_DAY);
    for _ in 0..days {
        let clearness = rng.random_range(0.75..1.0);
        for s in 0..SLOTS_PER_DAY {
            let hour = s as f64 / 2.0 + 0.25;
            let v = if hour > sunrise && hour < sunset {
                let phase = (hour - sunrise) / (sunset - sunrise);
                (std::f64::consts::PI * phase).sin().powf(1.5) * clearness
            } else {
                0.0
            };
            let noisy = v * (1.0 + noise_level * truncated_normal(&mut rng));
            values.push(noisy.max(0.0));
        }
    }
    let trace = SiteTrace::new(format!("solar-{seed}"), TraceKind::Solar, 1800.0, values)?;
    normalize(&trace)
}

/// Normalized wind harvest: a smooth diurnal component (windier at night)
/// plus a slowly varying mean-reverting term.
pub fn synthesize_wind(days: usize, seed: u64, noise_level: f64) -> Result<SiteTrace> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut level = 0.0f64;
    let mut values = Vec::with_capacity(days * SLOTS_PER_DAY);
    for i in 0..days * SLOTS_PER_DAY {
        let hour = (i % SLOTS_PER_DAY) as f64 / 2.0;
        let diurnal = 0.55 + 0.35 * (2.0 * std::f64::consts::PI * (hour - 3.0) / 24.0).cos();
        level = 0.97 * level + 0.03 * truncated_normal(&mut rng);
        let v = diurnal * (1.0 + 0.8 * level) * (1.0 + noise_level * truncated_normal(&mut rng));
        values.push(v.max(0.0));
    }
    let trace = SiteTrace::new(format!("wind-{seed}"), TraceKind::Wind, 1800.0, values)?;
    normalize(&trace)
}

/// Declared layout of a `timestamp,value` trace file.
#[derive(Debug, Clone)]
pub struct TraceSchema {
    pub site_id: String,
    pub kind: TraceKind,
    pub slot_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
enum Stamp {
    Index(i64),
    Time(i64),
}

fn parse_stamp(raw: &str) -> Option<Stamp> {
    if let Ok(i) = raw.parse::<i64>() {
        return Some(Stamp::Index(i));
    }
    if let Ok(t) = DateTime::parse_from_rfc3339(raw) {
        return Some(Stamp::Time(t.timestamp()));
    }
    [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ]
    .iter()
    .find_map(|fmt| NaiveDateTime::parse_from_str(raw, fmt).ok())
    .map(|t| Stamp::Time(t.and_utc().timestamp()))
}

/// Read a `timestamp,value` CSV. Timestamps are ISO-8601 or integer slot
/// indices and must be strictly increasing.
pub fn load_csv(path: impl AsRef<Path>, schema: &TraceSchema) -> Result<SiteTrace> {
    let path = path.as_ref();
    let origin = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            source: e,
        })?;
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            path: origin.clone(),
            line: 1,
            msg: e.to_string(),
        })?
        .clone();
    if headers.len() != 2 || &headers[0] != "timestamp" || &headers[1] != "value" {
        return Err(Error::Parse {
            path: origin,
            line: 1,
            msg: "expected header `timestamp,value`".into(),
        });
    }

    let mut values = Vec::new();
    let mut last: Option<Stamp> = None;
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let err = |msg: String| Error::Parse {
            path: origin.clone(),
            line,
            msg,
        };
        let rec = rec.map_err(|e| err(e.to_string()))?;
        if rec.len() != 2 {
            return Err(err(format!("expected 2 fields, found {}", rec.len())));
        }
        let stamp = parse_stamp(&rec[0])
            .ok_or_else(|| err(format!("unparseable timestamp `{}`", &rec[0])))?;
        let value: f64 = rec[1]
            .parse()
            .map_err(|_| err(format!("bad value `{}`", &rec[1])))?;
        if !(value.is_finite() && value >= 0.0) {
            return Err(err(format!("value {value} must be non-negative")));
        }
        if let Some(prev) = last {
            let same_kind = matches!(
                (prev, stamp),
                (Stamp::Index(_), Stamp::Index(_)) | (Stamp::Time(_), Stamp::Time(_))
            );
            if !same_kind {
                return Err(err("mixed timestamp formats".into()));
            }
            if stamp <= prev {
                return Err(err("timestamps are not strictly increasing".into()));
            }
        }
        last = Some(stamp);
        values.push(value);
    }
    SiteTrace::new(
        schema.site_id.clone(),
        schema.kind,
        schema.slot_seconds,
        values,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(values: Vec<f64>, slot: f64) -> SiteTrace {
        SiteTrace::new("s", TraceKind::Traffic, slot, values).unwrap()
    }

    #[test]
    fn aggregate_triples() {
        let t = trace(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 600.0);
        let out = aggregate_to_slots(&t, 1800.0).unwrap();
        assert_eq!(out.values(), &[6.0, 15.0]);
        assert_eq!(out.slot_seconds, 1800.0);
    }

    #[test]
    fn aggregate_pairs_and_length() {
        let t = trace(vec![1.0; 4], 900.0);
        assert_eq!(
            aggregate_to_slots(&t, 1800.0).unwrap().values(),
            &[2.0, 2.0]
        );

        // 96 quarter-hour samples: 96 / 2 = 48 half-hour slots
        let t = trace(vec![0.5; 96], 900.0);
        assert_eq!(aggregate_to_slots(&t, 1800.0).unwrap().len(), 48);
    }

    #[test]
    fn aggregate_drops_trailing_partial_slot() {
        let out = aggregate_values(&[1.0, 1.0, 1.0, 1.0, 7.0], 600.0, 1200.0).unwrap();
        assert_eq!(out, vec![2.0, 2.0]);
    }

    #[test]
    fn aggregate_rejects_bad_ratio_and_empty() {
        assert!(aggregate_values(&[1.0, 2.0], 600.0, 1000.0).is_err());
        assert!(aggregate_values(&[1.0, 2.0], 1800.0, 600.0).is_err());
        assert!(aggregate_values(&[], 600.0, 1800.0).is_err());
    }

    #[test]
    fn normalize_examples() {
        let n = normalize(&trace(vec![0.0, 5.0, 10.0], 1800.0)).unwrap();
        assert_eq!(n.values(), &[0.0, 0.5, 1.0]);
        assert!(n.is_normalized());
        assert_eq!(n.scale(), 10.0);

        let n = normalize(&trace(vec![3.0, 3.0], 1800.0)).unwrap();
        assert_eq!(n.values(), &[1.0, 1.0]);

        assert!(normalize(&trace(vec![0.0, 0.0], 1800.0)).is_err());
    }

    #[test]
    fn normalize_round_trip() {
        let raw = vec![0.3, 7.25, 1.0e-3, 42.0, 13.7];
        let back = normalize(&trace(raw.clone(), 1800.0))
            .unwrap()
            .denormalize();
        for (a, b) in raw.iter().zip(back.values()) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn split_examples() {
        assert_eq!(split_delay_sensitive(100.0, 0.8).unwrap(), (80.0, 20.0));
        assert_eq!(split_delay_sensitive(0.0, 0.8).unwrap(), (0.0, 0.0));
        assert_eq!(split_delay_sensitive(10.0, 0.5).unwrap(), (5.0, 5.0));
        assert!(split_delay_sensitive(-1.0, 0.8).is_err());
    }

    #[test]
    fn bundled_shapes_are_well_formed() {
        let c = bundled_clusters();
        assert_eq!(c.len(), 4);
        for p in &c {
            assert_eq!(p.shape.len(), SLOTS_PER_DAY);
            assert!(p.shape.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn synthesize_zero_noise_is_the_shape() {
        let t = synthesize_profiles(1, 1, 7, 0.0).unwrap();
        assert_eq!(t.values(), bundled_clusters()[0].shape.as_slice());
    }

    #[test]
    fn synthesize_is_deterministic() {
        let a = synthesize_profiles(2, 3, 11, 0.1).unwrap();
        let b = synthesize_profiles(2, 3, 11, 0.1).unwrap();
        assert_eq!(a, b);
        assert!(synthesize_profiles(5, 1, 1, 0.0).is_err());
    }

    #[test]
    fn synthesize_noise_stays_in_band() {
        // 209 days * 48 slots > 10^4 draws
        let t = synthesize_profiles(3, 209, 99, 0.1).unwrap();
        let shape = &bundled_clusters()[2].shape;
        assert!(t.len() >= 10_000);
        for (i, v) in t.values().iter().enumerate() {
            let s = shape[i % SLOTS_PER_DAY];
            assert!((v - s).abs() <= 3.0 * 0.1 * s + 1e-12);
        }
    }

    #[test]
    fn harvest_mix() {
        assert_eq!(HarvestMix::Additive.combine(2.0, 3.0), 5.0);
        assert_eq!(HarvestMix::Max.combine(2.0, 3.0), 3.0);
    }
}
