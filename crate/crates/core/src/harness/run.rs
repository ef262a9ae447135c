use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use super::config::ScenarioConfig;
use super::scenario::Scenario;
use crate::battery::{Battery, EnergyLedgerEntry};
use crate::controller::{
    allocate, genm_step, irmc_step, realize, split_load, Algorithm, ControlConfig, DecisionRecord,
    SplitRule, SystemState,
};
use crate::energy::{driver_count, mec_cost, objective, CostBreakdown, ServerDecision};
use crate::error::{Error, Result};
use crate::traces::SLOTS_PER_DAY;

/// Which part of the energy bill a comparison looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Mec,
    Comm,
    Edge,
}

impl Metric {
    pub fn of(self, c: &CostBreakdown) -> f64 {
        match self {
            Metric::Mec => c.mec,
            Metric::Comm => c.comm,
            Metric::Edge => c.edge,
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mec" => Ok(Metric::Mec),
            "comm" => Ok(Metric::Comm),
            "edge" => Ok(Metric::Edge),
            other => Err(Error::Config(format!(
                "unknown metric `{other}`, expected mec, comm or edge"
            ))),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Mec => "mec",
            Metric::Comm => "comm",
            Metric::Edge => "edge",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotRow {
    pub slot: usize,
    pub cost: CostBreakdown,
    pub xi: f64,
    pub l_in: f64,
    pub containers: usize,
    pub drivers: usize,
    pub nic_active: bool,
    pub active_bs: usize,
    pub j: f64,
    pub fallback: bool,
    pub emergency_purchase: f64,
    pub backlog: f64,
    pub violations: usize,
}

impl SlotRow {
    pub fn hour(&self) -> usize {
        (self.slot % SLOTS_PER_DAY) * 24 / SLOTS_PER_DAY
    }
}

/// Percent savings of a run against the max-provision baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Savings {
    pub mec: f64,
    pub comm: f64,
    pub edge: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub algorithm: Algorithm,
    pub n_bs: usize,
    pub seed: u64,
    pub rows: Vec<SlotRow>,
    pub ledger: Vec<EnergyLedgerEntry>,
    /// `slot: code: detail` for every violated constraint
    pub violations: Vec<String>,
    /// normalized forecast RMSE per horizon step: traffic, harvest
    pub rmse: Vec<(String, Vec<f64>)>,
    pub evaluations: usize,
    /// against max-provision on the same traces; absent for the baseline
    pub savings: Option<Savings>,
}

impl RunReport {
    pub fn total(&self, metric: Metric) -> f64 {
        self.rows.iter().map(|r| metric.of(&r.cost)).sum()
    }

    pub fn fallbacks(&self) -> usize {
        self.rows.iter().filter(|r| r.fallback).count()
    }

    pub fn emergency_purchase(&self) -> f64 {
        self.rows.iter().map(|r| r.emergency_purchase).sum()
    }

    pub fn decisions(&self) -> Vec<DecisionRecord> {
        self.rows
            .iter()
            .map(|r| DecisionRecord {
                slot: r.slot,
                algorithm: self.algorithm,
                l_in: r.l_in,
                containers: r.containers,
                drivers: r.drivers,
                nic_active: r.nic_active,
                active_bs: r.active_bs,
                j: r.j,
                theta_edge: r.cost.edge,
            })
            .collect()
    }
}

fn at_slot(slot: usize, e: Error) -> Error {
    match e {
        Error::Infeasible(msg) => Error::Infeasible(format!("slot {slot}: {msg}")),
        other => other,
    }
}

/// Accumulates squared forecast errors per horizon step.
struct ErrorTally {
    sse: Vec<f64>,
    count: Vec<usize>,
}

impl ErrorTally {
    fn new(depth: usize) -> Self {
        Self {
            sse: vec![0.0; depth],
            count: vec![0; depth],
        }
    }

    fn add(&mut self, k: usize, err: f64) {
        self.sse[k] += err * err;
        self.count[k] += 1;
    }

    fn rmse(&self) -> Vec<f64> {
        self.sse
            .iter()
            .zip(&self.count)
            .map(|(s, &c)| if c == 0 { 0.0 } else { (s / c as f64).sqrt() })
            .collect()
    }
}

fn control_config(sc: &Scenario) -> ControlConfig {
    ControlConfig {
        cache: sc.cache.clone(),
        ..sc.cfg.control.clone()
    }
}

fn initial_state(sc: &Scenario) -> Result<SystemState> {
    let bat = sc.cfg.battery.build()?;
    Ok(SystemState::initial(
        vec![bat; sc.n_bs()],
        bat,
        sc.ue.clone(),
    ))
}

/// Run `algorithm` over the scenario's traces.
pub fn run_on(sc: &Scenario, algorithm: Algorithm) -> Result<RunReport> {
    if algorithm == Algorithm::MaxProvision {
        return run_max_provision(sc);
    }
    let control = control_config(sc);
    let split = match algorithm {
        Algorithm::Irmc => SplitRule::Even,
        _ => SplitRule::FillFirst,
    };
    let n = sc.n_bs();
    let mut state = initial_state(sc)?;
    let mut rows = Vec::with_capacity(sc.run_len);
    let mut ledger = Vec::with_capacity(sc.run_len * (n + 1));
    let mut violations = Vec::new();
    let mut traffic_err = ErrorTally::new(control.horizon);
    let mut harvest_err = ErrorTally::new(control.horizon);
    let mut evaluations = 0;
    for slot in 0..sc.run_len {
        let fc = sc.forecasts(slot)?;
        for k in 0..fc.depth().min(sc.run_len - slot) {
            let actual = sc.actuals(slot + k);
            for i in 0..n {
                traffic_err.add(k, (fc.load[k][i] - actual.load[i]) / sc.traffic_scale[i]);
                let cap = (sc.solar_peak[i] + sc.wind_peak[i]).max(1e-12);
                harvest_err.add(k, (fc.harvest[k][i] - actual.harvest[i]) / cap);
            }
        }
        let out = match algorithm {
            Algorithm::Irmc => irmc_step(&state, &fc, &control),
            _ => genm_step(&state, &fc, &control),
        }
        .map_err(|e| at_slot(slot, e))?;
        evaluations += out.stats.evaluations;
        let actual = sc.actuals(slot);
        let r =
            realize(&state, &out.action, &actual, split, &control).map_err(|e| at_slot(slot, e))?;
        if out.stats.fallback && !r.violations.is_empty() {
            return Err(Error::Infeasible(format!(
                "slot {slot}: fallback action still violates {}",
                r.violations[0]
            )));
        }
        violations.extend(r.violations.iter().map(|v| format!("{slot}: {v}")));
        rows.push(SlotRow {
            slot,
            cost: r.cost,
            xi: r.xi,
            l_in: r.l_in,
            containers: r.allocs.len(),
            drivers: r.next.drivers,
            nic_active: r.l_in > 0.0,
            active_bs: out.action.active_count(),
            j: r.j,
            fallback: out.stats.fallback,
            emergency_purchase: r.emergency_purchase,
            backlog: r.backlog,
            violations: r.violations.len(),
        });
        ledger.extend(r.bs_ledger);
        ledger.push(r.server_ledger);
        state = r.next;
    }
    Ok(RunReport {
        algorithm,
        n_bs: n,
        seed: sc.cfg.seed,
        rows,
        ledger,
        violations,
        rmse: vec![
            ("traffic".to_string(), traffic_err.rmse()),
            ("harvest".to_string(), harvest_err.rmse()),
        ],
        evaluations,
        savings: None,
    })
}

/// Purchase per the plan on the observed harvest, topped up so the site
/// never ends below b_low.
fn settle(
    b: &Battery,
    slot: usize,
    site: &str,
    h: f64,
    theta: f64,
) -> Result<(Battery, EnergyLedgerEntry, f64)> {
    let mut e = b.plan_purchase(h);
    let extra = b.floor_top_up(h, theta, e);
    e += extra;
    let (nb, entry) = b.step(slot, site, h, theta, e)?;
    Ok((nb, entry, extra))
}

/// Every BS on and dimensioned for its own peak load; the server runs all
/// C_max containers full, i.e. sized for the largest workload it can take.
fn run_max_provision(sc: &Scenario) -> Result<RunReport> {
    let cfg = &sc.cfg;
    let control = control_config(sc);
    let (bs, mec) = (&control.bs, &control.mec);
    let n = sc.n_bs();
    let actuals: Vec<_> = (0..sc.run_len).map(|s| sc.actuals(s)).collect();
    let bs_peak: Vec<f64> = (0..n)
        .map(|i| actuals.iter().map(|a| a.load[i]).fold(0.0, f64::max))
        .collect();
    let df = control.delay_fraction;
    // the server is sized for what C_max full containers can take
    let xi_peak = mec.capacity();
    let loads = split_load(xi_peak, mec.c_max, SplitRule::Even, mec.lambda_max);
    let allocs = allocate(&loads, mec)?;
    let rates: Vec<f64> = allocs.iter().map(|a| a.rate).collect();
    let active = xi_peak > 0.0;
    let drivers = if active {
        driver_count(n, mec.upsilon, mec.sigma, mec.rho, mec.m_max)
    } else {
        0
    };
    let comm: f64 = bs_peak.iter().map(|l| bs.active_energy(*l)).sum();

    let bat = cfg.battery.build()?;
    let mut bats = vec![bat; n];
    let mut server = bat;
    let mut rows = Vec::with_capacity(sc.run_len);
    let mut ledger = Vec::with_capacity(sc.run_len * (n + 1));
    for (slot, a) in actuals.iter().enumerate() {
        let server_in = ServerDecision {
            allocs: &allocs,
            prev_rates: &rates,
            nic_active: active,
            l_in: xi_peak,
            drivers,
            l_out: xi_peak,
            cache_rate: a.cache_rate,
        };
        let m = mec_cost(&server_in, mec, &control.cache)?;
        let cost = CostBreakdown::from_terms(m.cnt, m.swt, m.off, m.lnk, m.dr, m.cc, comm);
        let mut emergency = 0.0;
        for i in 0..n {
            let (nb, entry, extra) = settle(
                &bats[i],
                slot,
                &format!("bs{i}"),
                a.harvest[i],
                bs.active_energy(bs_peak[i]),
            )
            .map_err(|e| at_slot(slot, e))?;
            bats[i] = nb;
            emergency += extra;
            ledger.push(entry);
        }
        let (ns, entry, extra) = settle(&server, slot, "mec", a.server_harvest, cost.mec)
            .map_err(|e| at_slot(slot, e))?;
        server = ns;
        emergency += extra;
        ledger.push(entry);
        let xi = df * a.load.iter().sum::<f64>();
        rows.push(SlotRow {
            slot,
            cost,
            xi,
            l_in: xi_peak,
            containers: allocs.len(),
            drivers,
            nic_active: active,
            active_bs: n,
            j: objective(control.gamma, cost.edge, xi, xi.min(xi_peak))?,
            fallback: false,
            emergency_purchase: emergency,
            backlog: 0.0,
            violations: 0,
        });
    }
    Ok(RunReport {
        algorithm: Algorithm::MaxProvision,
        n_bs: n,
        seed: cfg.seed,
        rows,
        ledger,
        violations: Vec::new(),
        rmse: Vec::new(),
        evaluations: 0,
        savings: None,
    })
}

fn pct_saved(alg: f64, base: f64) -> f64 {
    if base > 0.0 {
        100.0 * (1.0 - alg / base)
    } else {
        0.0
    }
}

/// Simulate the configured algorithm. Controller runs also carry their
/// savings against max-provision on the same traces.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunReport> {
    let sc = Scenario::build(cfg)?;
    let mut report = run_on(&sc, cfg.algorithm)?;
    if cfg.algorithm != Algorithm::MaxProvision {
        let base = run_on(&sc, Algorithm::MaxProvision)?;
        report.savings = Some(Savings {
            mec: pct_saved(report.total(Metric::Mec), base.total(Metric::Mec)),
            comm: pct_saved(report.total(Metric::Comm), base.total(Metric::Comm)),
            edge: pct_saved(report.total(Metric::Edge), base.total(Metric::Edge)),
        });
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SavingsTable {
    pub metric: Metric,
    /// hour of day and the mean of its slot-level savings, %
    pub hourly: Vec<(usize, f64)>,
    /// 100 (1 - sum a / sum b)
    pub overall: f64,
}

/// Savings of run `a` relative to run `b`.
pub fn compare(a: &RunReport, b: &RunReport, metric: Metric) -> Result<SavingsTable> {
    if a.rows.len() != b.rows.len() {
        return Err(Error::invalid(format!(
            "runs have different lengths: {} vs {} slots",
            a.rows.len(),
            b.rows.len()
        )));
    }
    let mut sum = [0.0; 24];
    let mut count = [0usize; 24];
    for (ra, rb) in a.rows.iter().zip(&b.rows) {
        let h = ra.hour();
        sum[h] += pct_saved(metric.of(&ra.cost), metric.of(&rb.cost));
        count[h] += 1;
    }
    let hourly = (0..24)
        .filter(|&h| count[h] > 0)
        .map(|h| (h, sum[h] / count[h] as f64))
        .collect();
    Ok(SavingsTable {
        metric,
        hourly,
        overall: pct_saved(a.total(metric), b.total(metric)),
    })
}

/// Run both configurations and compare `a` against `b`.
pub fn compare_configs(
    a: &ScenarioConfig,
    b: &ScenarioConfig,
    metric: Metric,
) -> Result<SavingsTable> {
    let (ra, rb) = rayon::join(|| run_scenario(a), || run_scenario(b));
    compare(&ra?, &rb?, metric)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub n_bs: usize,
    pub savings: f64,
    pub algorithm_total: f64,
    pub baseline_total: f64,
}

/// Savings of the configured algorithm against max-provision for each
/// cluster size.
pub fn sweep_bs_group(
    cfg: &ScenarioConfig,
    sizes: &[usize],
    metric: Metric,
) -> Result<Vec<SweepPoint>> {
    if sizes.is_empty() {
        return Err(Error::Config("sweep needs at least one group size".into()));
    }
    sizes
        .par_iter()
        .map(|&n| {
            let c = ScenarioConfig {
                n_bs: n,
                ..cfg.clone()
            };
            let sc = Scenario::build(&c)?;
            let a = run_on(&sc, cfg.algorithm)?;
            let b = run_on(&sc, Algorithm::MaxProvision)?;
            Ok(SweepPoint {
                n_bs: n,
                savings: compare(&a, &b, metric)?.overall,
                algorithm_total: a.total(metric),
                baseline_total: b.total(metric),
            })
        })
        .collect()
}
