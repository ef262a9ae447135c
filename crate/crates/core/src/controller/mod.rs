//! Edge-system control: the GENM limited-lookahead search, the IRMC
//! baseline, and the shared machinery both of them use (operating
//! intervals, container provisioning, BS wake-up, constraint checks).

mod plan;
mod search;

pub use plan::{
    enumerate_actions, evaluate, fallback_action, predict_next_state, realize, validate,
    Evaluation, Realized, SlotActuals,
};
pub use search::{genm_step, irmc_step, SearchStats, StepOutcome};

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use crate::battery::Battery;
use crate::energy::{BsMode, BsParams, CacheModel, ContainerAlloc, MecParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Genm,
    Irmc,
    MaxProvision,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Genm => "genm",
            Algorithm::Irmc => "irmc",
            Algorithm::MaxProvision => "max-provision",
        })
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "genm" => Ok(Algorithm::Genm),
            "irmc" => Ok(Algorithm::Irmc),
            "max-provision" | "max_provision" | "maxprovision" => Ok(Algorithm::MaxProvision),
            other => Err(Error::Config(format!(
                "unknown algorithm {other:?}, expected genm, irmc or max-provision"
            ))),
        }
    }
}

/// How admitted workload is spread over the provisioned containers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitRule {
    /// λ_max to each container in turn, remainder to the last.
    FillFirst,
    /// Equal shares.
    Even,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlConfig {
    /// weight of the admission shortfall against energy
    pub gamma: f64,
    pub horizon: usize,
    /// admission levels as fractions of the forecast workload
    pub admission_grid: Vec<f64>,
    /// delay-sensitive share of each BS's offered load
    pub delay_fraction: f64,
    pub bs: BsParams,
    pub mec: MecParams,
    pub cache: CacheModel,
    /// at most this many single-BS wake plans per node
    pub max_wake_plans: usize,
    /// expand sibling nodes on the rayon pool
    pub parallel: bool,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            horizon: 3,
            admission_grid: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            delay_fraction: 0.8,
            bs: BsParams::default(),
            mec: MecParams::default(),
            cache: CacheModel::default(),
            max_wake_plans: 2,
            parallel: true,
        }
    }
}

impl ControlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!(
                "gamma must lie in [0,1], got {}",
                self.gamma
            )));
        }
        if self.horizon < 1 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if self.admission_grid.is_empty()
            || self.admission_grid.iter().any(|a| !(0.0..=1.0).contains(a))
        {
            return Err(Error::Config(
                "admission grid must be a non-empty list of fractions in [0,1]".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.delay_fraction) {
            return Err(Error::Config(
                "delay-sensitive fraction must lie in [0,1]".into(),
            ));
        }
        self.bs.validate()?;
        self.cache.validate()?;
        self.mec.validate()
    }

    /// Grid sorted ascending without duplicates.
    pub fn grid(&self) -> Vec<f64> {
        let mut g = self.admission_grid.clone();
        g.sort_by(f64::total_cmp);
        g.dedup();
        g
    }
}

/// Serving-BS sequence of one UE, one entry per slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UeTrajectory {
    pub positions: Vec<usize>,
}

impl UeTrajectory {
    /// The BS this UE moves into at `slot + 1`, if it changes cell.
    pub fn heading_to(&self, slot: usize) -> Option<usize> {
        match (self.positions.get(slot), self.positions.get(slot + 1)) {
            (Some(a), Some(b)) if a != b => Some(*b),
            _ => None,
        }
    }
}

/// q(t): what the controller knows at the start of a slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub slot: usize,
    pub modes: Vec<BsMode>,
    pub containers: usize,
    pub drivers: usize,
    pub bs_batteries: Vec<Battery>,
    pub server_battery: Battery,
    pub prev_rates: Vec<f64>,
    /// workload computed in the previous slot, Mbit
    pub pending_output: f64,
    /// deferred delay-tolerant load per BS, Mbit
    pub backlog: Vec<f64>,
    pub ue_trajectories: Arc<Vec<UeTrajectory>>,
}

impl SystemState {
    /// All BSs active, one idle container, batteries as given.
    pub fn initial(
        bs_batteries: Vec<Battery>,
        server_battery: Battery,
        ue: Arc<Vec<UeTrajectory>>,
    ) -> Self {
        let n = bs_batteries.len();
        Self {
            slot: 0,
            modes: vec![BsMode::Active; n],
            containers: 1,
            drivers: 0,
            bs_batteries,
            server_battery,
            prev_rates: vec![0.0],
            pending_output: 0.0,
            backlog: vec![0.0; n],
            ue_trajectories: ue,
        }
    }

    pub fn n_bs(&self) -> usize {
        self.modes.len()
    }

    pub fn active_count(&self) -> usize {
        self.modes.iter().filter(|m| m.is_active()).count()
    }
}

/// Multi-step predictions available to the controller. Index `k = 0` is
/// the slot being decided.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecasts {
    /// `[k][n]`, Mbit offered at BS n
    pub load: Vec<Vec<f64>>,
    /// `[k][n]`, J harvested at BS n
    pub harvest: Vec<Vec<f64>>,
    /// `[k]`, J harvested at the server
    pub server_harvest: Vec<f64>,
    /// `[k]`, cached-content views
    pub cache_rate: Vec<f64>,
}

impl Forecasts {
    pub fn depth(&self) -> usize {
        self.load.len()
    }

    /// Index used for "the slot after k"; the last step repeats itself.
    pub fn next_index(&self, k: usize) -> usize {
        (k + 1).min(self.depth().saturating_sub(1))
    }

    /// ξ̂ at step k.
    pub fn xi(&self, k: usize, delay_fraction: f64) -> f64 {
        delay_fraction * self.load[k].iter().sum::<f64>()
    }

    pub fn check(&self, n_bs: usize) -> Result<()> {
        let d = self.depth();
        if d == 0 {
            return Err(Error::invalid("forecasts must cover at least one step"));
        }
        if self.harvest.len() != d || self.server_harvest.len() != d || self.cache_rate.len() != d {
            return Err(Error::invalid("forecast series have different depths"));
        }
        if self
            .load
            .iter()
            .chain(&self.harvest)
            .any(|row| row.len() != n_bs)
        {
            return Err(Error::invalid(format!(
                "every forecast row must cover {n_bs} base stations"
            )));
        }
        Ok(())
    }
}

/// φ(t): one slot's full decision.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlInput {
    pub modes: Vec<BsMode>,
    /// BS carrying each BS's traffic; an active BS carries its own
    pub routes: Vec<usize>,
    /// fraction of ξ̂ requested
    pub admission: f64,
    pub l_in: f64,
    pub allocs: Vec<ContainerAlloc>,
    pub nic_active: bool,
    pub drivers: usize,
    /// grid purchase per BS, J
    pub purchases: Vec<f64>,
    pub server_purchase: f64,
}

impl ControlInput {
    pub fn containers(&self) -> usize {
        self.allocs.len()
    }

    pub fn rates(&self) -> Vec<f64> {
        self.allocs.iter().map(|a| a.rate).collect()
    }

    pub fn active_count(&self) -> usize {
        self.modes.iter().filter(|m| m.is_active()).count()
    }

    /// Active BS ids, ascending.
    pub fn active_ids(&self) -> Vec<usize> {
        (0..self.modes.len())
            .filter(|&n| self.modes[n].is_active())
            .collect()
    }
}

/// One failed constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub code: &'static str,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.detail)
    }
}

/// I_n = b_n(t+1) / θ_BS,n(t+1); no consumption means unlimited.
pub fn operating_interval(b_next: f64, theta_next: f64) -> f64 {
    if theta_next <= 0.0 {
        f64::INFINITY
    } else {
        b_next / theta_next
    }
}

/// x_nn' = b_nn'(t+1) / θ_BS,nn'(t+1) with the offloaded load included.
pub fn green_interval(b_neighbor_next: f64, theta_combined_next: f64) -> f64 {
    operating_interval(b_neighbor_next, theta_combined_next)
}

fn container_count(xi: f64, mec: &MecParams) -> usize {
    let raw = (xi / mec.lambda_max * (1.0 - 1e-12)).ceil().max(0.0) as usize;
    raw.clamp(mec.beta, mec.c_max)
}

fn check_admissible(xi: f64, mec: &MecParams) -> Result<()> {
    if !(xi >= 0.0 && xi.is_finite()) {
        return Err(Error::invalid(format!(
            "workload must be non-negative, got {xi}"
        )));
    }
    if xi > mec.capacity() * (1.0 + 1e-12) {
        return Err(Error::Infeasible(format!(
            "workload {xi} Mbit exceeds server capacity {} Mbit; admission must be reduced",
            mec.capacity()
        )));
    }
    Ok(())
}

/// Container count and per-container loads for workload `xi`: λ_max to
/// each container in turn, the remainder to the last.
pub fn provision_containers(xi: f64, mec: &MecParams) -> Result<(usize, Vec<f64>)> {
    check_admissible(xi, mec)?;
    let c = container_count(xi, mec);
    Ok((c, fill_first(xi, c, mec.lambda_max)))
}

fn fill_first(xi: f64, c: usize, lambda_max: f64) -> Vec<f64> {
    let mut left = xi;
    let mut loads = Vec::with_capacity(c);
    for i in 0..c {
        let share = if i + 1 == c {
            left
        } else {
            left.min(lambda_max)
        };
        loads.push(share.max(0.0));
        left -= share;
    }
    loads
}

fn even_split(xi: f64, c: usize) -> Vec<f64> {
    if c == 0 {
        return Vec::new();
    }
    let share = xi / c as f64;
    let mut loads = vec![share; c];
    loads[c - 1] = xi - share * (c - 1) as f64;
    loads
}

/// Loads for `c` containers under a split rule; the sum equals `xi`.
pub fn split_load(xi: f64, c: usize, rule: SplitRule, lambda_max: f64) -> Vec<f64> {
    match rule {
        SplitRule::FillFirst => fill_first(xi, c, lambda_max),
        SplitRule::Even => even_split(xi, c),
    }
}

/// Allocations at the lowest sufficient rate for each load.
pub fn allocate(loads: &[f64], mec: &MecParams) -> Result<Vec<ContainerAlloc>> {
    loads
        .iter()
        .map(|&l| ContainerAlloc::for_load(l, mec))
        .collect()
}

/// Start from every container and drop one at a time while the evenly
/// split allocation still meets the rate, load and link limits.
pub fn iterative_provision(xi: f64, mec: &MecParams) -> Result<Vec<ContainerAlloc>> {
    check_admissible(xi, mec)?;
    let feasible = |c: usize| -> Option<Vec<ContainerAlloc>> {
        let loads = even_split(xi, c);
        if loads.iter().any(|l| *l > mec.lambda_max * (1.0 + 1e-12)) {
            return None;
        }
        let allocs = allocate(&loads, mec).ok()?;
        let rate: f64 = allocs.iter().map(|a| a.link_rate).sum();
        (rate <= mec.r_max * (1.0 + 1e-12)).then_some(allocs)
    };
    let mut best = feasible(mec.c_max)
        .ok_or_else(|| Error::Infeasible(format!("no container allocation carries {xi} Mbit")))?;
    let mut c = mec.c_max;
    while c > mec.beta {
        match feasible(c - 1) {
            Some(a) => {
                best = a;
                c -= 1;
            }
            None => break,
        }
    }
    Ok(best)
}

/// Level a site reaches at the end of a slot, ignoring the floor.
pub(crate) fn projected_level(b: &Battery, harvest: f64, consumed: f64, purchased: f64) -> f64 {
    b.project(harvest, consumed, purchased)
}

/// Sleeping BSs that may be re-activated: enough stored energy for the
/// next slot and at least one UE moving into the cell.
pub fn wake_candidates(state: &SystemState, fc: &Forecasts, k: usize, bs: &BsParams) -> Vec<usize> {
    let slot = state.slot;
    (0..state.n_bs())
        .filter(|&n| !state.modes[n].is_active())
        .filter(|&n| {
            let b = &state.bs_batteries[n];
            let h = fc.harvest[k][n];
            let idle = bs.epsilon * bs.theta0;
            let b_next = projected_level(b, h, idle, b.plan_purchase(h));
            b_next > b.low
        })
        .filter(|&n| {
            state
                .ue_trajectories
                .iter()
                .any(|ue| ue.heading_to(slot) == Some(n))
        })
        .collect()
}

/// One realized slot as written to the decision log.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionRecord {
    pub slot: usize,
    pub algorithm: Algorithm,
    pub l_in: f64,
    pub containers: usize,
    pub drivers: usize,
    pub nic_active: bool,
    pub active_bs: usize,
    pub j: f64,
    pub theta_edge: f64,
}

pub const DECISION_HEADER: [&str; 9] = [
    "slot",
    "algorithm",
    "L_in",
    "C",
    "M",
    "zeta",
    "active_bs_count",
    "J",
    "theta_edge",
];

pub fn write_decision_csv<W: Write>(out: W, records: &[DecisionRecord]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(DECISION_HEADER)?;
    for r in records {
        w.write_record([
            r.slot.to_string(),
            r.algorithm.to_string(),
            r.l_in.to_string(),
            r.containers.to_string(),
            r.drivers.to_string(),
            u8::from(r.nic_active).to_string(),
            r.active_bs.to_string(),
            r.j.to_string(),
            r.theta_edge.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
