use crate::battery::{Battery, EnergyLedgerEntry};
use crate::energy::{
    caching_energy, container_energy, driver_count, driver_energy, mec_cost, objective,
    switching_energy, toe_energy, BsMode, CacheModel, ContainerAlloc, CostBreakdown, MecParams,
    ServerDecision,
};
use crate::error::{Error, Result};

use super::{
    allocate, green_interval, iterative_provision, operating_interval, projected_level,
    provision_containers, split_load, wake_candidates, ControlConfig, ControlInput, Forecasts,
    SplitRule, SystemState, Violation,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Routing {
    /// offload target with the largest green interval, which must be >= 1
    Green,
    /// least-loaded target that keeps its battery above b_low
    LeastLoad,
    /// largest green interval, no admissibility threshold
    Forced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Provisioning {
    Remark1,
    Iterative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Policy {
    pub routing: Routing,
    pub provisioning: Provisioning,
}

impl Policy {
    pub const GENM: Policy = Policy {
        routing: Routing::Green,
        provisioning: Provisioning::Remark1,
    };
    pub const IRMC: Policy = Policy {
        routing: Routing::LeastLoad,
        provisioning: Provisioning::Iterative,
    };
}

/// Per-node quantities shared by every candidate plan.
struct Context<'a> {
    state: &'a SystemState,
    cfg: &'a ControlConfig,
    /// own offered load (forecast plus backlog) at k and k+1
    load: Vec<f64>,
    load_next: Vec<f64>,
    harvest: Vec<f64>,
    purchases: Vec<f64>,
}

impl<'a> Context<'a> {
    fn new(state: &'a SystemState, fc: &Forecasts, k: usize, cfg: &'a ControlConfig) -> Self {
        let k1 = fc.next_index(k);
        let n = state.n_bs();
        let load: Vec<f64> = (0..n).map(|i| fc.load[k][i] + state.backlog[i]).collect();
        let load_next = fc.load[k1].clone();
        let harvest = fc.harvest[k].clone();
        let purchases = (0..n)
            .map(|i| state.bs_batteries[i].plan_purchase(harvest[i]))
            .collect();
        Self {
            state,
            cfg,
            load,
            load_next,
            harvest,
            purchases,
        }
    }

    fn theta(&self, load: f64) -> f64 {
        self.cfg.bs.active_energy(load)
    }

    fn level_after(&self, n: usize, consumed: f64) -> f64 {
        projected_level(
            &self.state.bs_batteries[n],
            self.harvest[n],
            consumed,
            self.purchases[n],
        )
    }

    /// I_n for BS n carrying only its own traffic, projected without any
    /// purchase since the action is not yet chosen.
    fn operating_interval(&self, n: usize) -> f64 {
        let b_next = projected_level(
            &self.state.bs_batteries[n],
            self.harvest[n],
            self.theta(self.load[n]),
            0.0,
        );
        operating_interval(b_next, self.theta(self.load_next[n]))
    }

    /// Carrier for every BS under `modes`, or `None` when some sleeping BS
    /// has nowhere to go.
    fn route(&self, modes: &[BsMode], routing: Routing) -> Option<Vec<usize>> {
        self.try_route(modes, routing).ok()
    }

    /// Like [`Self::route`], but reports the first sleeper left without a
    /// carrier (`None` when nothing is active).
    fn try_route(
        &self,
        modes: &[BsMode],
        routing: Routing,
    ) -> std::result::Result<Vec<usize>, Option<usize>> {
        let n = modes.len();
        if !modes.iter().any(|m| m.is_active()) {
            return Err(None);
        }
        let mut routes: Vec<usize> = (0..n).collect();
        let mut carried: Vec<f64> = (0..n)
            .map(|i| {
                if modes[i].is_active() {
                    self.load[i]
                } else {
                    0.0
                }
            })
            .collect();
        let mut carried_next: Vec<f64> = (0..n)
            .map(|i| {
                if modes[i].is_active() {
                    self.load_next[i]
                } else {
                    0.0
                }
            })
            .collect();
        // largest offered load first, so big loads see the most headroom
        let mut sleepers: Vec<usize> = (0..n).filter(|&i| !modes[i].is_active()).collect();
        sleepers.sort_by(|a, b| self.load[*b].total_cmp(&self.load[*a]).then(a.cmp(b)));
        for s in sleepers {
            let mut best: Option<(usize, f64)> = None;
            for c in (0..n).filter(|&i| modes[i].is_active()) {
                let score = match routing {
                    Routing::Green | Routing::Forced => {
                        let b_next = self.level_after(c, self.theta(carried[c] + self.load[s]));
                        let x =
                            green_interval(b_next, self.theta(carried_next[c] + self.load_next[s]));
                        if routing == Routing::Green && x < 1.0 {
                            continue;
                        }
                        x
                    }
                    Routing::LeastLoad => {
                        let level = self.level_after(c, self.theta(carried[c] + self.load[s]));
                        if level < self.state.bs_batteries[c].low {
                            continue;
                        }
                        -carried[c]
                    }
                };
                if best.is_none_or(|(_, v)| score > v) {
                    best = Some((c, score));
                }
            }
            let (c, _) = best.ok_or(Some(s))?;
            routes[s] = c;
            carried[c] += self.load[s];
            carried_next[c] += self.load_next[s];
        }
        Ok(routes)
    }

    /// Wake sleepers from `wakeable` one by one until every remaining
    /// sleeper has a carrier. A sleeper that cannot be woken goes to its
    /// best carrier regardless of the threshold; the constraint check
    /// decides whether that carrier copes.
    fn route_waking(
        &self,
        mut modes: Vec<BsMode>,
        routing: Routing,
        wakeable: &[usize],
    ) -> Option<(Vec<BsMode>, Vec<usize>)> {
        loop {
            match self.try_route(&modes, routing) {
                Ok(routes) => return Some((modes, routes)),
                Err(Some(s)) if wakeable.contains(&s) => modes[s] = BsMode::Active,
                Err(Some(_)) if routing == Routing::Green => {
                    return self.route(&modes, Routing::Forced).map(|r| (modes, r));
                }
                Err(_) => return None,
            }
        }
    }

    /// BS plans: keep the current modes, switch one BS off, or wake one.
    fn bs_plans(
        &self,
        fc: &Forecasts,
        k: usize,
        routing: Routing,
    ) -> Vec<(Vec<BsMode>, Vec<usize>)> {
        let state = self.state;
        let n = state.n_bs();
        let mut plans: Vec<(Vec<BsMode>, Vec<usize>)> = Vec::new();
        let mut push = |modes: Vec<BsMode>, routes: Vec<usize>| {
            if !plans.iter().any(|(m, _)| *m == modes) {
                plans.push((modes, routes));
            }
        };
        let wakeable = wake_candidates(state, fc, k, &self.cfg.bs);
        match self.route(&state.modes, routing) {
            Some(routes) => push(state.modes.clone(), routes),
            None => {
                if let Some((modes, routes)) =
                    self.route_waking(state.modes.clone(), routing, &wakeable)
                {
                    push(modes, routes);
                }
            }
        }

        if state.active_count() > 1 {
            // IRMC ranks every active BS by network impact, not by I_n
            let mut candidates: Vec<(usize, f64)> = (0..n)
                .filter(|&i| state.modes[i].is_active())
                .map(|i| (i, self.operating_interval(i)))
                .filter(|(_, interval)| routing == Routing::LeastLoad || *interval < 1.0)
                .collect();
            match routing {
                Routing::LeastLoad => candidates.sort_by(|a, b| {
                    self.load[a.0]
                        .total_cmp(&self.load[b.0])
                        .then(a.0.cmp(&b.0))
                }),
                _ => candidates.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0))),
            }
            for &(i, _) in &candidates {
                let mut modes = state.modes.clone();
                modes[i] = BsMode::Saving;
                if let Some(routes) = self.route(&modes, routing) {
                    push(modes, routes);
                    break;
                }
            }
            // green balancing may also shed every absorbable candidate at once
            if routing == Routing::Green {
                let mut modes = state.modes.clone();
                let mut routes = None;
                for &(i, _) in &candidates {
                    if modes.iter().filter(|m| m.is_active()).count() == 1 {
                        break;
                    }
                    modes[i] = BsMode::Saving;
                    match self.route(&modes, routing) {
                        Some(r) => routes = Some(r),
                        None => modes[i] = BsMode::Active,
                    }
                }
                if let Some(r) = routes {
                    push(modes, r);
                }
            }
        }

        let mut wakes: Vec<(usize, f64)> = wakeable
            .into_iter()
            .map(|i| {
                (
                    i,
                    self.level_after(i, self.cfg.bs.epsilon * self.cfg.bs.theta0),
                )
            })
            .collect();
        wakes.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for (i, _) in wakes.into_iter().take(self.cfg.max_wake_plans) {
            let mut modes = state.modes.clone();
            modes[i] = BsMode::Active;
            if let Some(routes) = self.route(&modes, routing) {
                push(modes, routes);
            }
        }
        plans
    }
}

/// Container allocations for admitted workload `l_in` under a policy.
pub(crate) fn provision(
    l_in: f64,
    mec: &MecParams,
    p: Provisioning,
) -> Result<Vec<ContainerAlloc>> {
    match p {
        Provisioning::Remark1 => {
            let (_, loads) = provision_containers(l_in, mec)?;
            allocate(&loads, mec)
        }
        Provisioning::Iterative => iterative_provision(l_in, mec),
    }
}

fn server_actions(
    state: &SystemState,
    fc: &Forecasts,
    k: usize,
    cfg: &ControlConfig,
    p: Provisioning,
) -> Vec<(f64, f64, Vec<ContainerAlloc>)> {
    let xi = fc.xi(k, cfg.delay_fraction);
    let cap = cfg.mec.capacity();
    let mut out: Vec<(f64, f64, Vec<ContainerAlloc>)> = Vec::new();
    for a in cfg.grid() {
        let l_in = (a * xi).min(cap);
        if out.iter().any(|(_, l, _)| *l == l_in) {
            continue;
        }
        if let Ok(allocs) = provision(l_in, &cfg.mec, p) {
            out.push((a, l_in, allocs));
        }
    }
    let _ = state;
    out
}

fn assemble(
    state: &SystemState,
    fc: &Forecasts,
    k: usize,
    cfg: &ControlConfig,
    modes: Vec<BsMode>,
    routes: Vec<usize>,
    purchases: Vec<f64>,
    (admission, l_in, allocs): (f64, f64, Vec<ContainerAlloc>),
) -> ControlInput {
    let active = modes.iter().filter(|m| m.is_active()).count();
    let drivers = if l_in > 0.0 {
        driver_count(
            active,
            cfg.mec.upsilon,
            cfg.mec.sigma,
            cfg.mec.rho,
            cfg.mec.m_max,
        )
    } else {
        0
    };
    let h = fc.server_harvest[k];
    ControlInput {
        modes,
        routes,
        admission,
        l_in,
        allocs,
        nic_active: l_in > 0.0,
        drivers,
        purchases,
        server_purchase: state.server_battery.plan_purchase(h),
    }
}

pub(crate) fn enumerate_with(
    state: &SystemState,
    fc: &Forecasts,
    k: usize,
    cfg: &ControlConfig,
    policy: Policy,
) -> Vec<ControlInput> {
    let ctx = Context::new(state, fc, k, cfg);
    let plans = ctx.bs_plans(fc, k, policy.routing);
    let servers = server_actions(state, fc, k, cfg, policy.provisioning);
    let mut actions = Vec::with_capacity(plans.len() * servers.len());
    for server in &servers {
        for (modes, routes) in &plans {
            actions.push(assemble(
                state,
                fc,
                k,
                cfg,
                modes.clone(),
                routes.clone(),
                ctx.purchases.clone(),
                server.clone(),
            ));
        }
    }
    actions
}

/// Candidate decisions at step `k`: every admission level crossed with
/// every BS plan, with containers, rates, drivers, NIC flag and purchases
/// derived from them.
pub fn enumerate_actions(
    state: &SystemState,
    fc: &Forecasts,
    k: usize,
    cfg: &ControlConfig,
) -> Vec<ControlInput> {
    enumerate_with(state, fc, k, cfg, Policy::GENM)
}

/// Emergency decision: wake every sleeping BS that may be woken, admit the
/// smallest grid level, and buy enough energy to end the slot at b_up.
pub fn fallback_action(
    state: &SystemState,
    fc: &Forecasts,
    cfg: &ControlConfig,
) -> Result<ControlInput> {
    fallback_with(state, fc, cfg, Policy::GENM)
}

pub(crate) fn fallback_with(
    state: &SystemState,
    fc: &Forecasts,
    cfg: &ControlConfig,
    policy: Policy,
) -> Result<ControlInput> {
    let ctx = Context::new(state, fc, 0, cfg);
    let mut modes = state.modes.clone();
    for n in 0..state.n_bs() {
        if !modes[n].is_active() {
            let b = &state.bs_batteries[n];
            let idle = cfg.bs.epsilon * cfg.bs.theta0;
            if ctx.level_after(n, idle) > b.low {
                modes[n] = BsMode::Active;
            }
        }
    }
    if !modes.iter().any(|m| m.is_active()) {
        modes[0] = BsMode::Active;
    }
    let routes = ctx
        .route(&modes, Routing::Forced)
        .ok_or_else(|| Error::Infeasible("no active base station to carry traffic".into()))?;
    let mut carried = vec![0.0; modes.len()];
    for (s, &c) in routes.iter().enumerate() {
        carried[c] += ctx.load[s];
    }
    let purchases: Vec<f64> = (0..modes.len())
        .map(|n| {
            let b = &state.bs_batteries[n];
            let theta = if modes[n].is_active() {
                ctx.theta(carried[n])
            } else {
                cfg.bs.epsilon * cfg.bs.theta0
            };
            full_purchase(b, ctx.harvest[n], theta, ctx.purchases[n])
        })
        .collect();
    let grid = cfg.grid();
    let xi = fc.xi(0, cfg.delay_fraction);
    let l_in = (grid[0] * xi).min(cfg.mec.capacity());
    let allocs = provision(l_in, &cfg.mec, policy.provisioning)?;
    let mut action = assemble(
        state,
        fc,
        0,
        cfg,
        modes,
        routes,
        purchases,
        (grid[0], l_in, allocs),
    );
    let mec = estimate_mec(state, &action, fc, 0, cfg);
    action.server_purchase = full_purchase(
        &state.server_battery,
        fc.server_harvest[0],
        mec,
        action.server_purchase,
    );
    Ok(action)
}

/// Enough to finish the slot at b_up, never less than the planned purchase
/// and never more than the buffer can hold.
fn full_purchase(b: &Battery, harvest: f64, consumed: f64, planned: f64) -> f64 {
    let before = b.level + harvest - consumed - b.leakage;
    let to_up = (b.up - before).max(0.0);
    let room = (b.capacity - before).max(0.0);
    to_up.max(planned).min(room.max(planned))
}

fn estimate_mec(
    state: &SystemState,
    action: &ControlInput,
    fc: &Forecasts,
    k: usize,
    cfg: &ControlConfig,
) -> f64 {
    mec_terms(
        state,
        action,
        action.l_in,
        fc.cache_rate[k],
        &cfg.mec,
        &cfg.cache,
    )
    .map(|c| c.mec)
    .unwrap_or(0.0)
}

/// MEC breakdown without the aggregate link-rate check, so that a
/// violating allocation can still be scored and reported.
fn mec_terms(
    state: &SystemState,
    action: &ControlInput,
    l_in: f64,
    cache_rate: f64,
    mec: &MecParams,
    cache: &CacheModel,
) -> Result<CostBreakdown> {
    let server = ServerDecision {
        allocs: &action.allocs,
        prev_rates: &state.prev_rates,
        nic_active: action.nic_active,
        l_in,
        drivers: action.drivers,
        l_out: l_in,
        cache_rate,
    };
    let total_rate: f64 = action.allocs.iter().map(|a| a.link_rate).sum();
    if total_rate <= mec.r_max * (1.0 + 1e-12) {
        return mec_cost(&server, mec, cache);
    }
    let cnt = container_energy(&action.allocs, mec)?;
    let swt = switching_energy(&state.prev_rates, &server.rates(), mec.z_e);
    let off = toe_energy(action.nic_active, l_in, mec)?;
    let lnk = 2.0
        * action
            .allocs
            .iter()
            .filter(|a| a.load > 0.0)
            .map(|a| a.link_power * a.load / a.link_rate)
            .sum::<f64>();
    let dr = driver_energy(action.drivers, l_in, mec)?;
    let cc = caching_energy(cache_rate, cache);
    Ok(CostBreakdown::from_terms(cnt, swt, off, lnk, dr, cc, 0.0))
}

/// Server-side constraints A2, A4-A7, A9 and the load balance.
fn check_server(allocs: &[ContainerAlloc], l_in: f64, mec: &MecParams, out: &mut Vec<Violation>) {
    let c = allocs.len();
    if c < mec.beta || c > mec.c_max {
        out.push(Violation {
            code: "A2",
            detail: format!("{c} containers outside [{}, {}]", mec.beta, mec.c_max),
        });
    }
    let f_max = mec.f_max();
    for (i, a) in allocs.iter().enumerate() {
        let in_set = mec
            .rate_set
            .iter()
            .any(|r| (r - a.rate).abs() <= 1e-9 * f_max.max(1.0));
        if !(a.rate >= 0.0 && a.rate <= f_max) || !in_set {
            out.push(Violation {
                code: "A4",
                detail: format!(
                    "container {i} rate {} not in the rate set within [0, {f_max}]",
                    a.rate
                ),
            });
        }
        if !(a.load >= 0.0 && a.load <= mec.lambda_max * (1.0 + 1e-12)) {
            out.push(Violation {
                code: "A5",
                detail: format!(
                    "container {i} load {} outside [0, {}]",
                    a.load, mec.lambda_max
                ),
            });
        }
        if a.load > 0.0 && !(a.rate > 0.0 && a.load / a.rate <= mec.delta * (1.0 + 1e-12)) {
            out.push(Violation {
                code: "A6",
                detail: format!(
                    "container {i} needs {} s, limit {}",
                    a.load / a.rate,
                    mec.delta
                ),
            });
        }
    }
    let total_rate: f64 = allocs.iter().map(|a| a.link_rate).sum();
    if total_rate > mec.r_max * (1.0 + 1e-12) {
        out.push(Violation {
            code: "A7",
            detail: format!("aggregate link rate {total_rate} exceeds {}", mec.r_max),
        });
    }
    if allocs.iter().any(|a| a.load > 0.0) {
        let worst = allocs
            .iter()
            .filter(|a| a.load > 0.0)
            .map(|a| 2.0 * a.link_delay())
            .fold(0.0, f64::max);
        if (worst + mec.delta - mec.tau_max).abs() > 1e-9 * mec.tau_max {
            out.push(Violation {
                code: "A9",
                detail: format!(
                    "max round trip {worst} + delta {} != tau_max {}",
                    mec.delta, mec.tau_max
                ),
            });
        }
    }
    let sum: f64 = allocs.iter().map(|a| a.load).sum();
    if (sum - l_in).abs() > 1e-9 * l_in.max(1.0) {
        out.push(Violation {
            code: "SUM",
            detail: format!("container loads sum to {sum}, admitted {l_in}"),
        });
    }
}

fn check_routes(modes: &[BsMode], routes: &[usize], out: &mut Vec<Violation>) {
    for (n, &c) in routes.iter().enumerate() {
        let ok = c < modes.len() && modes[c].is_active() && (!modes[n].is_active() || c == n);
        if !ok {
            out.push(Violation {
                code: "A1",
                detail: format!("BS {n} ({}) routed to {c}", modes[n]),
            });
        }
    }
}

/// Scored transition for one candidate at step `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub cost: CostBreakdown,
    pub j: f64,
    pub xi: f64,
    /// load carried by each BS, Mbit
    pub bs_loads: Vec<f64>,
    pub bs_theta: Vec<f64>,
    pub bs_next: Vec<f64>,
    pub server_next: f64,
    pub violations: Vec<Violation>,
}

impl Evaluation {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn evaluate(
    state: &SystemState,
    action: &ControlInput,
    fc: &Forecasts,
    k: usize,
    cfg: &ControlConfig,
) -> Result<Evaluation> {
    let n = state.n_bs();
    if action.modes.len() != n || action.routes.len() != n || action.purchases.len() != n {
        return Err(Error::invalid(format!(
            "action covers {} base stations, state has {n}",
            action.modes.len()
        )));
    }
    if k >= fc.depth() {
        return Err(Error::invalid(format!(
            "step {k} is beyond the forecast depth {}",
            fc.depth()
        )));
    }
    let mut violations = Vec::new();
    check_routes(&action.modes, &action.routes, &mut violations);

    let mut bs_loads = vec![0.0; n];
    for (s, &c) in action.routes.iter().enumerate() {
        bs_loads[c.min(n - 1)] += fc.load[k][s] + state.backlog[s];
    }
    let bs_theta: Vec<f64> = (0..n)
        .map(|i| match action.modes[i] {
            BsMode::Active => cfg.bs.active_energy(bs_loads[i]),
            BsMode::Saving => cfg.bs.epsilon * cfg.bs.theta0,
        })
        .collect();
    let comm: f64 = bs_theta.iter().sum();

    check_server(&action.allocs, action.l_in, &cfg.mec, &mut violations);
    let m = mec_terms(
        state,
        action,
        action.l_in,
        fc.cache_rate[k],
        &cfg.mec,
        &cfg.cache,
    )?;
    let cost = CostBreakdown::from_terms(m.cnt, m.swt, m.off, m.lnk, m.dr, m.cc, comm);

    let mut bs_next = Vec::with_capacity(n);
    for i in 0..n {
        let b = &state.bs_batteries[i];
        let e = action.purchases[i];
        if !(e >= 0.0) {
            violations.push(Violation {
                code: "A3",
                detail: format!("negative purchase {e} at BS {i}"),
            });
        }
        let level = projected_level(b, fc.harvest[k][i], bs_theta[i], e);
        if level < b.low * (1.0 - 1e-12) {
            violations.push(Violation {
                code: "A3",
                detail: format!(
                    "BS {i} would end at {level:.1} J, below b_low {:.1} J",
                    b.low
                ),
            });
        }
        bs_next.push(level.clamp(0.0, b.capacity));
    }
    let sb = &state.server_battery;
    if cost.mec > sb.level {
        violations.push(Violation {
            code: "A8",
            detail: format!("server drain {} J exceeds stored {} J", cost.mec, sb.level),
        });
    }
    let server_level = projected_level(sb, fc.server_harvest[k], cost.mec, action.server_purchase);
    if server_level < sb.low * (1.0 - 1e-12) {
        violations.push(Violation {
            code: "A3",
            detail: format!(
                "server would end at {server_level:.1} J, below b_low {:.1} J",
                sb.low
            ),
        });
    }
    let xi = fc.xi(k, cfg.delay_fraction);
    let j = objective(cfg.gamma, cost.edge, xi, action.l_in)?;
    Ok(Evaluation {
        cost,
        j,
        xi,
        bs_loads,
        bs_theta,
        bs_next,
        server_next: server_level.clamp(0.0, sb.capacity),
        violations,
    })
}

/// Named constraint violations of `action` at step `k`; empty when valid.
pub fn validate(
    state: &SystemState,
    action: &ControlInput,
    fc: &Forecasts,
    k: usize,
    cfg: &ControlConfig,
) -> Result<Vec<Violation>> {
    Ok(evaluate(state, action, fc, k, cfg)?.violations)
}

pub(crate) fn advance(state: &SystemState, action: &ControlInput, ev: &Evaluation) -> SystemState {
    SystemState {
        slot: state.slot + 1,
        modes: action.modes.clone(),
        containers: action.containers(),
        drivers: action.drivers,
        bs_batteries: state
            .bs_batteries
            .iter()
            .zip(&ev.bs_next)
            .map(|(b, &l)| b.with_level(l))
            .collect(),
        server_battery: state.server_battery.with_level(ev.server_next),
        prev_rates: action.rates(),
        pending_output: action.l_in,
        backlog: vec![0.0; state.n_bs()],
        ue_trajectories: state.ue_trajectories.clone(),
    }
}

/// q̂(t+1) from the behavioural model; fails on any violated constraint.
pub fn predict_next_state(
    state: &SystemState,
    action: &ControlInput,
    fc: &Forecasts,
    k: usize,
    cfg: &ControlConfig,
) -> Result<SystemState> {
    let ev = evaluate(state, action, fc, k, cfg)?;
    if let Some(v) = ev.violations.first() {
        return Err(Error::Constraint {
            code: v.code,
            detail: v.detail.clone(),
        });
    }
    Ok(advance(state, action, &ev))
}

/// Observed quantities of one slot, known only once it has elapsed.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotActuals {
    pub load: Vec<f64>,
    pub harvest: Vec<f64>,
    pub server_harvest: f64,
    pub cache_rate: f64,
}

/// Outcome of applying a decision to the real slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Realized {
    pub next: SystemState,
    pub cost: CostBreakdown,
    pub j: f64,
    pub xi: f64,
    pub l_in: f64,
    pub allocs: Vec<ContainerAlloc>,
    pub bs_ledger: Vec<EnergyLedgerEntry>,
    pub server_ledger: EnergyLedgerEntry,
    /// grid energy bought beyond the plan to hold b_low, J
    pub emergency_purchase: f64,
    /// delay-tolerant load left in backlogs, Mbit
    pub backlog: f64,
    pub violations: Vec<Violation>,
}

/// Apply `action` to what actually happened in the slot.
///
/// Admission is capped by the realized workload and re-split over the
/// planned containers. The delay-tolerant share of each active BS is served
/// only while its battery stays above b_low; the rest waits in the backlog.
/// If the realized drain would still breach b_low, the shortfall is bought.
pub fn realize(
    state: &SystemState,
    action: &ControlInput,
    actual: &SlotActuals,
    split: SplitRule,
    cfg: &ControlConfig,
) -> Result<Realized> {
    let n = state.n_bs();
    if actual.load.len() != n || actual.harvest.len() != n {
        return Err(Error::invalid("actuals do not cover every base station"));
    }
    let mut violations = Vec::new();
    check_routes(&action.modes, &action.routes, &mut violations);

    let df = cfg.delay_fraction;
    let xi: f64 = actual.load.iter().map(|l| df * l).sum();
    let l_in = action.l_in.min(xi);
    let loads = split_load(l_in, action.containers(), split, cfg.mec.lambda_max);
    let allocs = allocate(&loads, &cfg.mec)?;
    check_server(&allocs, l_in, &cfg.mec, &mut violations);

    let mut must = vec![0.0; n];
    let mut pool = vec![0.0; n];
    for s in 0..n {
        let c = action.routes[s];
        let gamma = df * actual.load[s];
        let tolerant = actual.load[s] - gamma + state.backlog[s];
        must[c] += gamma;
        if c == s {
            pool[s] += tolerant;
        } else {
            must[c] += tolerant;
        }
    }
    let mut backlog = vec![0.0; n];
    let mut bs_ledger = Vec::with_capacity(n);
    let mut bs_batteries = Vec::with_capacity(n);
    let mut emergency = 0.0;
    let mut comm = 0.0;
    for i in 0..n {
        let b = &state.bs_batteries[i];
        let h = actual.harvest[i];
        let mut e = action.purchases[i];
        let theta = match action.modes[i] {
            BsMode::Active => {
                let base = b.level + h + e - b.leakage - b.low - cfg.bs.active_energy(must[i]);
                let serve = if cfg.bs.load_coeff > 0.0 {
                    (base / cfg.bs.load_coeff).clamp(0.0, pool[i])
                } else {
                    pool[i]
                };
                backlog[i] = pool[i] - serve;
                cfg.bs.active_energy(must[i] + serve)
            }
            BsMode::Saving => {
                backlog[i] = pool[i];
                cfg.bs.epsilon * cfg.bs.theta0
            }
        };
        let short = b.floor_top_up(h, theta, e);
        e += short;
        emergency += short;
        let (nb, entry) = b.step(state.slot, &format!("bs{i}"), h, theta, e)?;
        if nb.level < b.low * (1.0 - 1e-12) {
            violations.push(Violation {
                code: "A3",
                detail: format!("BS {i} ended at {:.1} J", nb.level),
            });
        }
        comm += theta;
        bs_batteries.push(nb);
        bs_ledger.push(entry);
    }

    let mut realized_action = action.clone();
    realized_action.allocs = allocs.clone();
    realized_action.nic_active = l_in > 0.0;
    realized_action.drivers = if l_in > 0.0 { action.drivers.max(1) } else { 0 };
    let m = mec_terms(
        state,
        &realized_action,
        l_in,
        actual.cache_rate,
        &cfg.mec,
        &cfg.cache,
    )?;
    let cost = CostBreakdown::from_terms(m.cnt, m.swt, m.off, m.lnk, m.dr, m.cc, comm);

    let sb = &state.server_battery;
    if cost.mec > sb.level {
        violations.push(Violation {
            code: "A8",
            detail: format!("server drain {} J exceeds stored {} J", cost.mec, sb.level),
        });
    }
    let mut es = action.server_purchase;
    let short = sb.floor_top_up(actual.server_harvest, cost.mec, es);
    es += short;
    emergency += short;
    let (server_battery, server_ledger) =
        sb.step(state.slot, "mec", actual.server_harvest, cost.mec, es)?;
    if server_battery.level < sb.low * (1.0 - 1e-12) {
        violations.push(Violation {
            code: "A3",
            detail: format!("server ended at {:.1} J", server_battery.level),
        });
    }

    let j = objective(cfg.gamma, cost.edge, xi, l_in)?;
    let next = SystemState {
        slot: state.slot + 1,
        modes: action.modes.clone(),
        containers: allocs.len(),
        drivers: realized_action.drivers,
        bs_batteries,
        server_battery,
        prev_rates: allocs.iter().map(|a| a.rate).collect(),
        pending_output: l_in,
        backlog: backlog.clone(),
        ue_trajectories: state.ue_trajectories.clone(),
    };
    Ok(Realized {
        next,
        cost,
        j,
        xi,
        l_in,
        allocs,
        bs_ledger,
        server_ledger,
        emergency_purchase: emergency,
        backlog: backlog.iter().sum(),
        violations,
    })
}
