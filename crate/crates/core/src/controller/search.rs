use std::cmp::Ordering;

use rayon::prelude::*;

use crate::error::Result;

use super::plan::{advance, enumerate_with, evaluate, fallback_with, Evaluation, Policy};
use super::{ControlConfig, ControlInput, Forecasts, SystemState};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SearchStats {
    /// surviving nodes at each depth, root excluded
    pub nodes_per_depth: Vec<usize>,
    /// per-BS cost evaluations: transitions scored times N
    pub evaluations: usize,
    pub pruned: usize,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub action: ControlInput,
    /// accumulated J along the chosen branch
    pub planned_j: f64,
    /// predicted transition of the first step
    pub first: Evaluation,
    pub stats: SearchStats,
}

struct Node {
    first: usize,
    j: f64,
    state: SystemState,
}

struct Expansion {
    children: Vec<Node>,
    scored: usize,
    pruned: usize,
}

fn expand(
    node: &Node,
    fc: &Forecasts,
    k: usize,
    cfg: &ControlConfig,
    policy: Policy,
    keep_state: bool,
) -> Result<Expansion> {
    let actions = enumerate_with(&node.state, fc, k, cfg, policy);
    let mut out = Expansion {
        children: Vec::new(),
        scored: actions.len(),
        pruned: 0,
    };
    for a in &actions {
        let ev = evaluate(&node.state, a, fc, k, cfg)?;
        if !ev.is_valid() {
            out.pruned += 1;
            continue;
        }
        let j = node.j + ev.j;
        if keep_state {
            out.children.push(Node {
                first: node.first,
                j,
                state: advance(&node.state, a, &ev),
            });
        } else if out.children.first().is_none_or(|c| j < c.j) {
            // siblings share their first action, so only the cheapest matters
            out.children.clear();
            out.children.push(Node {
                first: node.first,
                j,
                state: node.state.clone(),
            });
        }
    }
    Ok(out)
}

/// Leaf order: lower J, then more admitted work, fewer active BSs,
/// lexicographically smaller active set, earlier generation.
fn better(a: (&Node, usize), b: (&Node, usize), roots: &[ControlInput]) -> Ordering {
    let (ra, rb) = (&roots[a.0.first], &roots[b.0.first]);
    a.0.j
        .total_cmp(&b.0.j)
        .then(rb.l_in.total_cmp(&ra.l_in))
        .then(ra.active_count().cmp(&rb.active_count()))
        .then_with(|| ra.active_ids().cmp(&rb.active_ids()))
        .then(a.1.cmp(&b.1))
}

fn search(
    state: &SystemState,
    fc: &Forecasts,
    cfg: &ControlConfig,
    policy: Policy,
    depth: usize,
) -> Result<StepOutcome> {
    cfg.validate()?;
    fc.check(state.n_bs())?;
    let n = state.n_bs();
    let depth = depth.min(fc.depth()).max(1);
    let mut stats = SearchStats::default();

    let roots = enumerate_with(state, fc, 0, cfg, policy);
    let evals: Vec<Evaluation> = if cfg.parallel {
        roots
            .par_iter()
            .map(|a| evaluate(state, a, fc, 0, cfg))
            .collect::<Result<_>>()?
    } else {
        roots
            .iter()
            .map(|a| evaluate(state, a, fc, 0, cfg))
            .collect::<Result<_>>()?
    };
    stats.evaluations += roots.len() * n;
    let mut frontier: Vec<Node> = Vec::new();
    for (i, (a, ev)) in roots.iter().zip(&evals).enumerate() {
        if ev.is_valid() {
            frontier.push(Node {
                first: i,
                j: ev.j,
                state: advance(state, a, ev),
            });
        } else {
            stats.pruned += 1;
        }
    }
    if frontier.is_empty() {
        return fallback(state, fc, cfg, policy, stats);
    }
    stats.nodes_per_depth.push(frontier.len());

    for k in 1..depth {
        let keep_state = k + 1 < depth;
        let run = |node: &Node| expand(node, fc, k, cfg, policy, keep_state);
        let expansions: Vec<Expansion> = if cfg.parallel {
            frontier.par_iter().map(run).collect::<Result<_>>()?
        } else {
            frontier.iter().map(run).collect::<Result<_>>()?
        };
        let mut next = Vec::new();
        let mut survivors = 0;
        for e in expansions {
            stats.evaluations += e.scored * n;
            stats.pruned += e.pruned;
            survivors += e.scored - e.pruned;
            next.extend(e.children);
        }
        if next.is_empty() {
            break;
        }
        stats.nodes_per_depth.push(survivors);
        frontier = next;
    }

    let (best, _) = frontier
        .iter()
        .enumerate()
        .map(|(i, node)| (node, i))
        .min_by(|a, b| better(*a, *b, &roots))
        .expect("frontier is non-empty");
    Ok(StepOutcome {
        action: roots[best.first].clone(),
        planned_j: best.j,
        first: evals[best.first].clone(),
        stats,
    })
}

fn fallback(
    state: &SystemState,
    fc: &Forecasts,
    cfg: &ControlConfig,
    policy: Policy,
    mut stats: SearchStats,
) -> Result<StepOutcome> {
    log::warn!("slot {}: no admissible action, falling back", state.slot);
    let action = fallback_with(state, fc, cfg, policy)?;
    let first = evaluate(state, &action, fc, 0, cfg)?;
    stats.fallback = true;
    stats.evaluations += state.n_bs();
    Ok(StepOutcome {
        action,
        planned_j: first.j,
        first,
        stats,
    })
}

/// One GENM decision: breadth-first search over the admissible actions of
/// the next `min(T, forecast depth)` steps, committing the first action of
/// the cheapest branch.
pub fn genm_step(state: &SystemState, fc: &Forecasts, cfg: &ControlConfig) -> Result<StepOutcome> {
    search(state, fc, cfg, Policy::GENM, cfg.horizon)
}

/// One IRMC decision: greedy single-step minimum over the same admission
/// grid, with even-split iterative provisioning and least-load offloading.
pub fn irmc_step(state: &SystemState, fc: &Forecasts, cfg: &ControlConfig) -> Result<StepOutcome> {
    search(state, fc, cfg, Policy::IRMC, 1)
}
