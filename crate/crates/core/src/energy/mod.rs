//! Per-slot energy cost terms for the base stations and the edge server.
//!
//! Every function here is pure. All energies are joules per slot.

mod cache;

pub use cache::{
    caching_energy, hawkes_rate, simulate_hawkes_events, CacheEvent, CacheModel, HawkesSpec,
};

use std::fmt;

use crate::error::{Error, Result};
use crate::units;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BsMode {
    Saving,
    Active,
}

impl BsMode {
    pub fn is_active(self) -> bool {
        matches!(self, BsMode::Active)
    }
}

impl fmt::Display for BsMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BsMode::Active => "active",
            BsMode::Saving => "saving",
        })
    }
}

/// Base-station energy parameters. The load term is affine: `load_coeff` J
/// per Mbit carried.
#[derive(Debug, Clone, PartialEq)]
pub struct BsParams {
    pub theta0: f64,
    pub load_coeff: f64,
    pub epsilon: f64,
}

impl Default for BsParams {
    fn default() -> Self {
        Self {
            theta0: units::kj(60.0),
            load_coeff: units::kj(1.2),
            epsilon: 0.0,
        }
    }
}

impl BsParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta0 > 0.0) {
            return Err(Error::invalid("theta0 must be positive"));
        }
        if !(self.load_coeff >= 0.0) {
            return Err(Error::invalid("BS load coefficient must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(Error::invalid("epsilon must lie in [0,1)"));
        }
        Ok(())
    }

    /// Energy of an active BS carrying `load` Mbit, without validation.
    pub fn active_energy(&self, load: f64) -> f64 {
        self.theta0 + self.load_coeff * load
    }
}

pub fn bs_energy(mode: BsMode, load: f64, p: &BsParams) -> Result<f64> {
    if !(load >= 0.0) {
        return Err(Error::invalid(format!(
            "BS load must be non-negative, got {load}"
        )));
    }
    match mode {
        BsMode::Active => Ok(p.active_energy(load)),
        BsMode::Saving if load > 0.0 => Err(Error::invalid(format!(
            "a BS in power-saving mode cannot carry load ({load} Mbit); offload it first"
        ))),
        BsMode::Saving => Ok(p.epsilon * p.theta0),
    }
}

/// Edge-server parameters. Loads in Mbit, rates in Mbit/s, times in s.
#[derive(Debug, Clone, PartialEq)]
pub struct MecParams {
    pub theta_idle: f64,
    pub theta_max: f64,
    /// J per (Mbit/s)^2 of rate change
    pub z_e: f64,
    pub theta_idle_nic: f64,
    /// NIC throughput, Gbit/J
    pub eta: f64,
    /// fraction of admitted load processed on the NIC
    pub nic_fraction: f64,
    /// link bandwidth, Hz
    pub bandwidth_hz: f64,
    /// noise spectral density, W/Hz
    pub noise_density: f64,
    pub link_gain: f64,
    /// per-driver energy, J/s
    pub driver_power: f64,
    /// target driver rate, Mbit/s
    pub target_rate: f64,
    pub upsilon: f64,
    /// transceiver reconfiguration overhead, s
    pub sigma: f64,
    /// output accumulation period, same unit as sigma
    pub rho: f64,
    /// per-container processing deadline, s
    pub delta: f64,
    pub tau_max: f64,
    pub r_max: f64,
    pub rate_set: Vec<f64>,
    pub lambda_max: f64,
    pub c_max: usize,
    pub beta: usize,
    pub m_max: usize,
    /// largest allowed r_c / W_c before the link power is refused
    pub link_ratio_guard: f64,
}

impl Default for MecParams {
    fn default() -> Self {
        Self {
            theta_idle: 4.0,
            theta_max: 10.0,
            z_e: 0.005,
            theta_idle_nic: 13.1,
            eta: 1.4,
            nic_fraction: 0.1,
            bandwidth_hz: 40.0e6,
            noise_density: units::dbm_per_hz_to_w_per_hz(-174.0),
            link_gain: 3.0e-8,
            driver_power: 1.0,
            target_rate: 1.0,
            upsilon: 0.96,
            sigma: units::ms_to_s(20.0),
            rho: 1.0,
            delta: 0.8,
            tau_max: 1.0,
            r_max: 16_000.0,
            rate_set: vec![0.0, 50.0, 70.0, 90.0, 105.0],
            lambda_max: units::mb_to_mbit(10.0),
            c_max: 20,
            beta: 1,
            m_max: 6,
            link_ratio_guard: 60.0,
        }
    }
}

impl MecParams {
    pub fn f_max(&self) -> f64 {
        self.rate_set.iter().copied().fold(0.0, f64::max)
    }

    /// S_c = W_c N0 / g_c, in W.
    pub fn link_scale(&self) -> f64 {
        self.bandwidth_hz * self.noise_density / self.link_gain
    }

    /// Largest workload the server can admit in one slot.
    pub fn capacity(&self) -> f64 {
        self.c_max as f64 * self.lambda_max
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("theta_idle", self.theta_idle),
            ("theta_max", self.theta_max),
            ("z_e", self.z_e),
            ("theta_idle_nic", self.theta_idle_nic),
            ("eta", self.eta),
            ("bandwidth_hz", self.bandwidth_hz),
            ("noise_density", self.noise_density),
            ("link_gain", self.link_gain),
            ("driver_power", self.driver_power),
            ("target_rate", self.target_rate),
            ("sigma", self.sigma),
            ("rho", self.rho),
            ("delta", self.delta),
            ("tau_max", self.tau_max),
            ("r_max", self.r_max),
            ("lambda_max", self.lambda_max),
            ("link_ratio_guard", self.link_ratio_guard),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.theta_max < self.theta_idle {
            return Err(Error::invalid("theta_max must be at least theta_idle"));
        }
        if !(0.0..=1.0).contains(&self.nic_fraction) {
            return Err(Error::invalid("NIC fraction g must lie in [0,1]"));
        }
        if !(self.upsilon > 0.0 && self.upsilon <= 1.0) {
            return Err(Error::invalid("upsilon must lie in (0,1]"));
        }
        if self.delta >= self.tau_max {
            return Err(Error::invalid(
                "processing deadline delta must be below tau_max",
            ));
        }
        if self.beta < 1 || self.beta > self.c_max {
            return Err(Error::invalid("need 1 <= beta <= C"));
        }
        if self.m_max < 1 {
            return Err(Error::invalid("need at least one driver"));
        }
        if self.rate_set.is_empty() || self.rate_set.iter().any(|r| !(*r >= 0.0)) {
            return Err(Error::invalid(
                "rate set must be non-empty and non-negative",
            ));
        }
        if self.rate_set.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("rate set must be strictly increasing"));
        }
        if self.lambda_max / self.delta > self.f_max() * (1.0 + 1e-12) {
            return Err(Error::invalid(
                "lambda_max / delta exceeds f_max; a full container could never meet its deadline",
            ));
        }
        Ok(())
    }

    /// Smallest rate in the finite set that processes `load` within `delta`.
    pub fn round_up_rate(&self, load: f64) -> Result<f64> {
        let required = load / self.delta;
        self.rate_set
            .iter()
            .copied()
            .find(|r| *r >= required * (1.0 - 1e-12))
            .ok_or_else(|| {
                Error::invalid(format!(
                    "load {load} Mbit needs {required} Mbit/s, above f_max = {}",
                    self.f_max()
                ))
            })
    }
}

/// One container's slot allocation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContainerAlloc {
    /// λ_c, Mbit
    pub load: f64,
    /// f_c, Mbit/s
    pub rate: f64,
    /// ψ_c = (f_c / f_max)^2
    pub utilization: f64,
    /// r_c, Mbit/s
    pub link_rate: f64,
    /// P_c, W
    pub link_power: f64,
}

impl ContainerAlloc {
    /// Allocation for `load` at an explicit processing rate.
    pub fn with_rate(load: f64, rate: f64, p: &MecParams) -> Result<Self> {
        let (link_rate, link_power) = link_rate_and_power(load, p)?;
        let f_max = p.f_max();
        Ok(Self {
            load,
            rate,
            utilization: (rate / f_max).powi(2),
            link_rate,
            link_power,
        })
    }

    /// Allocation at the lowest rate in the rate set that meets the deadline.
    pub fn for_load(load: f64, p: &MecParams) -> Result<Self> {
        if !(load >= 0.0) {
            return Err(Error::invalid(format!(
                "container load must be non-negative, got {load}"
            )));
        }
        let rate = p.round_up_rate(load)?;
        Self::with_rate(load, rate, p)
    }

    /// Processing time χ_c = λ_c / f_c; zero for an empty container.
    pub fn processing_time(&self) -> f64 {
        if self.load == 0.0 {
            0.0
        } else {
            self.load / self.rate
        }
    }

    /// One-way link delay ϱ_c = λ_c / r_c; zero for an empty container.
    pub fn link_delay(&self) -> f64 {
        if self.load == 0.0 {
            0.0
        } else {
            self.load / self.link_rate
        }
    }
}

pub fn container_energy(allocs: &[ContainerAlloc], p: &MecParams) -> Result<f64> {
    let mut total = 0.0;
    for (i, a) in allocs.iter().enumerate() {
        if !(0.0..=1.0).contains(&a.utilization) {
            return Err(Error::invalid(format!(
                "container {i} utilization {} is outside [0,1]",
                a.utilization
            )));
        }
        total += p.theta_idle + a.utilization * (p.theta_max - p.theta_idle);
    }
    Ok(total)
}

/// Reconfiguration energy between two rate vectors aligned by container
/// index; a container missing from either side counts as rate 0.
pub fn switching_energy(prev_rates: &[f64], new_rates: &[f64], z_e: f64) -> f64 {
    let n = prev_rates.len().max(new_rates.len());
    (0..n)
        .map(|c| {
            let a = prev_rates.get(c).copied().unwrap_or(0.0);
            let b = new_rates.get(c).copied().unwrap_or(0.0);
            z_e * (b - a) * (b - a)
        })
        .sum()
}

/// TCP offload engine energy. A switched-off adapter drains nothing.
pub fn toe_energy(nic_active: bool, l_in: f64, p: &MecParams) -> Result<f64> {
    if !(0.0..=1.0).contains(&p.nic_fraction) {
        return Err(Error::invalid(format!(
            "NIC fraction g = {} is outside [0,1]",
            p.nic_fraction
        )));
    }
    if !(l_in >= 0.0) {
        return Err(Error::invalid("admitted load must be non-negative"));
    }
    if !nic_active {
        return Ok(0.0);
    }
    Ok(p.theta_idle_nic + p.nic_fraction * units::mbit_to_gbit(l_in) / p.eta)
}

/// Link rate pinned by the delay budget and the Shannon-Hartley inverse
/// power at that rate.
pub fn link_rate_and_power(load: f64, p: &MecParams) -> Result<(f64, f64)> {
    if !(load >= 0.0) {
        return Err(Error::invalid(format!(
            "link load must be non-negative, got {load}"
        )));
    }
    if !(p.tau_max > p.delta) {
        return Err(Error::invalid("tau_max must exceed delta"));
    }
    if load == 0.0 {
        return Ok((0.0, 0.0));
    }
    let rate = 2.0 * load / (p.tau_max - p.delta);
    let ratio = units::spectral_ratio(rate, p.bandwidth_hz);
    if ratio > p.link_ratio_guard {
        return Err(Error::invalid(format!(
            "link spectral efficiency r/W = {ratio:.1} exceeds the guard {}; \
             increase the link bandwidth or lower the per-container load",
            p.link_ratio_guard
        )));
    }
    let power = p.link_scale() * (ratio.exp2() - 1.0);
    Ok((rate, power))
}

pub fn link_energy(allocs: &[ContainerAlloc], p: &MecParams) -> Result<f64> {
    let total_rate: f64 = allocs.iter().map(|a| a.link_rate).sum();
    if total_rate > p.r_max * (1.0 + 1e-12) {
        return Err(Error::Constraint {
            code: "A7",
            detail: format!(
                "aggregate link rate {total_rate} exceeds r_max = {}",
                p.r_max
            ),
        });
    }
    Ok(2.0
        * allocs
            .iter()
            .filter(|a| a.load > 0.0)
            .map(|a| a.link_power * (a.load / a.link_rate))
            .sum::<f64>())
}

/// Active tunable-driver count for `n_bs` target base stations, clamped to
/// `[1, m_max]`; no targets means no drivers.
pub fn driver_count(n_bs: usize, upsilon: f64, sigma: f64, rho: f64, m_max: usize) -> usize {
    if n_bs == 0 {
        return 0;
    }
    let omega = (rho / (sigma * n_bs as f64)).sqrt();
    let m = ((1.0 / upsilon) * ((omega + 1.0) / omega).powi(2)).ceil();
    (m as usize).clamp(1, m_max.max(1))
}

/// Driver energy with `l_out` shared equally across `m_active` drivers.
pub fn driver_energy(m_active: usize, l_out: f64, p: &MecParams) -> Result<f64> {
    if !(l_out >= 0.0) {
        return Err(Error::invalid("output load must be non-negative"));
    }
    if l_out == 0.0 {
        return Ok(0.0);
    }
    if m_active == 0 {
        return Err(Error::invalid(format!(
            "{l_out} Mbit of output but no active drivers"
        )));
    }
    let share = l_out / m_active as f64;
    Ok((0..m_active)
        .map(|_| p.driver_power * share / p.target_rate)
        .sum())
}

/// Itemized slot energy.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CostBreakdown {
    pub cnt: f64,
    pub swt: f64,
    pub off: f64,
    pub lnk: f64,
    pub dr: f64,
    pub cc: f64,
    pub mec: f64,
    pub comm: f64,
    pub edge: f64,
}

impl CostBreakdown {
    pub fn from_terms(cnt: f64, swt: f64, off: f64, lnk: f64, dr: f64, cc: f64, comm: f64) -> Self {
        let mec = cnt + swt + off + lnk + dr + cc;
        Self {
            cnt,
            swt,
            off,
            lnk,
            dr,
            cc,
            mec,
            comm,
            edge: comm + mec,
        }
    }
}

/// The server-side inputs of one slot.
#[derive(Debug, Clone, Copy)]
pub struct ServerDecision<'a> {
    pub allocs: &'a [ContainerAlloc],
    pub prev_rates: &'a [f64],
    pub nic_active: bool,
    pub l_in: f64,
    pub drivers: usize,
    pub l_out: f64,
    /// λ̄(t), views in this slot
    pub cache_rate: f64,
}

impl ServerDecision<'_> {
    pub fn rates(&self) -> Vec<f64> {
        self.allocs.iter().map(|a| a.rate).collect()
    }
}

pub fn mec_cost(
    server: &ServerDecision<'_>,
    p: &MecParams,
    cache: &CacheModel,
) -> Result<CostBreakdown> {
    let cnt = container_energy(server.allocs, p)?;
    let swt = switching_energy(server.prev_rates, &server.rates(), p.z_e);
    let off = toe_energy(server.nic_active, server.l_in, p)?;
    let lnk = link_energy(server.allocs, p)?;
    let dr = driver_energy(server.drivers, server.l_out, p)?;
    let cc = caching_energy(server.cache_rate, cache);
    Ok(CostBreakdown::from_terms(cnt, swt, off, lnk, dr, cc, 0.0))
}

/// Full edge-system breakdown. `bs` lists each BS's mode and carried load.
pub fn total_cost(
    bs: &[(BsMode, f64)],
    server: &ServerDecision<'_>,
    bs_params: &BsParams,
    mec_params: &MecParams,
    cache: &CacheModel,
) -> Result<CostBreakdown> {
    let mut comm = 0.0;
    for &(mode, load) in bs {
        comm += bs_energy(mode, load, bs_params)?;
    }
    let m = mec_cost(server, mec_params, cache)?;
    Ok(CostBreakdown::from_terms(
        m.cnt, m.swt, m.off, m.lnk, m.dr, m.cc, comm,
    ))
}

/// Weighted slot cost: energy against the squared admission shortfall.
pub fn objective(gamma: f64, theta_edge: f64, xi: f64, l_in: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::invalid(format!(
            "weight gamma must lie in [0,1], got {gamma}"
        )));
    }
    if !(xi >= 0.0 && l_in >= 0.0) {
        return Err(Error::invalid("workloads must be non-negative"));
    }
    let gap = xi - l_in;
    Ok((1.0 - gamma) * theta_edge + gamma * gap * gap)
}
