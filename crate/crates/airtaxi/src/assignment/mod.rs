//! Agent-passenger assignment: cost matrices, ranked candidate matchings,
//! demand-aware selection, and the two baseline dispatch policies.
//!
//! The proposed pipeline each timestep is
//! [`build_cost_matrix`] → [`murty_k_best`] → [`future_distribution`] per
//! candidate → [`select_matching`] against the demand-proportional target
//! distribution.

mod hungarian;
mod murty;

pub use murty::Matching;

use crate::engine::Passenger;
use crate::mapgen::WorldMap;
use crate::world::{AgentId, AgentState, PassengerId};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AssignmentError {
    #[error("no candidate matchings to select from")]
    NoCandidates,
    #[error("cost matrix contains non-finite entries")]
    NonFiniteCost,
}

/// Agent-by-passenger travel costs in km, with id maps back to the world.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    pub agent_ids: Vec<AgentId>,
    pub passenger_ids: Vec<PassengerId>,
    /// Row-major `agent x passenger` costs.
    pub costs: Vec<f64>,
}

impl CostMatrix {
    pub fn n_agents(&self) -> usize {
        self.agent_ids.len()
    }

    pub fn n_passengers(&self) -> usize {
        self.passenger_ids.len()
    }

    pub fn cost(&self, agent_row: usize, passenger_col: usize) -> f64 {
        self.costs[agent_row * self.passenger_ids.len() + passenger_col]
    }
}

/// A ranked candidate matching with its induced future fleet distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateMatching {
    /// `(agent row, passenger col)` pairs into the cost matrix, sorted by row.
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
    /// 1-based rank in the k-best ordering.
    pub rank: usize,
    /// Predicted agent count per vertiport (indexed like `map.vertiports`)
    /// if every agent completes its assignment; sums to the fleet size.
    pub psi: Vec<f64>,
}

/// Travel cost from every agent to every waiting passenger's origin.
///
/// Agents currently carrying a passenger are costed over two legs: finish
/// the current delivery, then fly to the new pickup. Agents merely en route
/// to a pickup are costed from their current position, so they remain
/// freely reassignable.
pub fn build_cost_matrix(
    agents: &[AgentState],
    passengers: &[&Passenger],
    map: &WorldMap,
) -> CostMatrix {
    let mut costs = Vec::with_capacity(agents.len() * passengers.len());
    for agent in agents {
        let (from, detour) = if agent.carrying != 0 {
            let dest = agent
                .target_vertiport
                .and_then(|id| map.vertiport(id))
                .expect("carrying agent must target its passenger's destination");
            (dest.pos(), agent.pos().dist(dest.pos()))
        } else {
            (agent.pos(), 0.0)
        };
        for p in passengers {
            let origin = map
                .vertiport(p.origin)
                .expect("passenger origin must exist")
                .pos();
            costs.push(detour + from.dist(origin));
        }
    }
    CostMatrix {
        agent_ids: agents.iter().map(|a| a.id).collect(),
        passenger_ids: passengers.iter().map(|p| p.id).collect(),
        costs,
    }
}

/// Minimum-total-cost matching of size `min(agents, passengers)`.
pub fn hungarian_solve(matrix: &CostMatrix) -> Matching {
    murty_k_best(matrix, 1)
        .into_iter()
        .next()
        .unwrap_or(Matching {
            pairs: Vec::new(),
            cost: 0.0,
        })
}

/// The `k` lowest-cost matchings in non-decreasing cost order.
pub fn murty_k_best(matrix: &CostMatrix, k: usize) -> Vec<Matching> {
    murty::k_best(&matrix.costs, matrix.n_agents(), matrix.n_passengers(), k)
}

/// Desired fleet distribution over vertiports, proportional to arrival
/// rates and scaled to sum to `n_agents`.
pub fn demand_distribution(map: &WorldMap, n_agents: usize) -> Vec<f64> {
    let total = map.total_arrival_rate();
    if total <= 0.0 {
        // No demand signal: spread the target uniformly.
        return vec![n_agents as f64 / map.vertiports.len() as f64; map.vertiports.len()];
    }
    map.vertiports
        .iter()
        .map(|v| n_agents as f64 * v.lambda / total)
        .collect()
}

/// Predicted agent count per vertiport if each agent completes its
/// assignment: matched agents end at their new passenger's destination,
/// carrying agents at their current passenger's destination, idle agents at
/// their nearest vertiport.
pub fn future_distribution(
    matching: &Matching,
    matrix: &CostMatrix,
    agents: &[AgentState],
    passengers: &[&Passenger],
    map: &WorldMap,
) -> Vec<f64> {
    let index_of = |vertiport| {
        map.vertiports
            .iter()
            .position(|v| v.id == vertiport)
            .expect("vertiport must exist")
    };
    let mut assigned_dest: Vec<Option<usize>> = vec![None; agents.len()];
    for &(row, col) in &matching.pairs {
        assigned_dest[row] = Some(index_of(passengers[col].destination));
    }
    debug_assert_eq!(matrix.n_agents(), agents.len());

    let mut psi = vec![0.0; map.vertiports.len()];
    for (row, agent) in agents.iter().enumerate() {
        let terminal = if let Some(dest) = assigned_dest[row] {
            dest
        } else if agent.carrying != 0 {
            index_of(agent.target_vertiport.expect("carrying agent has a destination"))
        } else {
            index_of(map.nearest_vertiport(agent.pos()))
        };
        psi[terminal] += 1.0;
    }
    psi
}

/// Pick the candidate whose future distribution is closest (L1) to the
/// desired one; exact ties go to the lower rank.
pub fn select_matching<'a>(
    candidates: &'a [CandidateMatching],
    psi_star: &[f64],
) -> Result<&'a CandidateMatching, AssignmentError> {
    let mut best: Option<(&CandidateMatching, f64)> = None;
    for cand in candidates {
        debug_assert_eq!(cand.psi.len(), psi_star.len());
        let score: f64 = cand
            .psi
            .iter()
            .zip(psi_star)
            .map(|(a, b)| (a - b).abs())
            .sum();
        match best {
            Some((_, best_score)) if score >= best_score => {}
            _ => best = Some((cand, score)),
        }
    }
    best.map(|(c, _)| c).ok_or(AssignmentError::NoCandidates)
}

/// Relative cost discount for an agent's currently-assigned passenger.
///
/// Parked agents at one vertiport produce identical cost columns, so the
/// optimum is massively degenerate and exact re-optimization every step can
/// oscillate between equivalent matchings, diverting agents mid-pickup
/// forever. The discount canonicalizes near-ties towards the incumbent
/// pairing; improvements beyond 1% of a leg still reassign freely.
const INCUMBENT_DISCOUNT: f64 = 5e-2;

/// The full proposed matching phase: k-best candidates, future
/// distributions, L1 selection. Returns the chosen candidate and, for
/// diagnostics, the number of candidates considered.
pub fn propose_matching(
    agents: &[AgentState],
    passengers: &[&Passenger],
    map: &WorldMap,
    k: usize,
) -> Result<Option<CandidateMatching>, AssignmentError> {
    if agents.is_empty() || passengers.is_empty() {
        return Ok(None);
    }
    let mut matrix = build_cost_matrix(agents, passengers, map);
    if matrix.costs.iter().any(|c| !c.is_finite()) {
        return Err(AssignmentError::NonFiniteCost);
    }
    for (row, agent) in agents.iter().enumerate() {
        if let Some(current) = agent.target_passenger {
            if let Some(col) = passengers.iter().position(|p| p.id == current) {
                matrix.costs[row * passengers.len() + col] *= 1.0 - INCUMBENT_DISCOUNT;
            }
        }
    }
    let psi_star = demand_distribution(map, agents.len());
    let candidates: Vec<CandidateMatching> = murty_k_best(&matrix, k)
        .into_iter()
        .enumerate()
        .map(|(i, m)| {
            let psi = future_distribution(&m, &matrix, agents, passengers, map);
            CandidateMatching {
                pairs: m.pairs,
                total_cost: m.cost,
                rank: i + 1,
                psi,
            }
        })
        .collect();
    let chosen = select_matching(&candidates, &psi_star)?;
    Ok(Some(chosen.clone()))
}

/// Greedy baseline: every agent independently targets its nearest waiting
/// passenger; several agents may chase the same one.
pub fn greedy_assign(
    agents: &[AgentState],
    passengers: &[&Passenger],
    map: &WorldMap,
) -> Vec<(AgentId, PassengerId)> {
    let mut out = Vec::new();
    for agent in agents {
        if agent.carrying != 0 {
            continue;
        }
        let nearest = passengers
            .iter()
            .map(|p| {
                let origin = map.vertiport(p.origin).expect("origin exists").pos();
                (agent.pos().dist(origin), p.id)
            })
            .min_by(|a, b| a.partial_cmp(b).unwrap());
        if let Some((_, pid)) = nearest {
            out.push((agent.id, pid));
        }
    }
    out
}

/// First-dispatch baseline: optimal matching over currently-uncommitted
/// agents and unclaimed passengers only; existing commitments are never
/// revisited.
pub fn first_dispatch_assign(
    agents: &[AgentState],
    passengers: &[&Passenger],
    map: &WorldMap,
) -> Vec<(AgentId, PassengerId)> {
    let free_agents: Vec<AgentState> = agents
        .iter()
        .filter(|a| a.carrying == 0 && a.target_passenger.is_none())
        .cloned()
        .collect();
    let claimed: Vec<PassengerId> = agents.iter().filter_map(|a| a.target_passenger).collect();
    let open: Vec<&Passenger> = passengers
        .iter()
        .filter(|p| !claimed.contains(&p.id))
        .copied()
        .collect();
    if free_agents.is_empty() || open.is_empty() {
        return Vec::new();
    }
    let matrix = build_cost_matrix(&free_agents, &open, map);
    hungarian_solve(&matrix)
        .pairs
        .iter()
        .map(|&(row, col)| (matrix.agent_ids[row], matrix.passenger_ids[col]))
        .collect()
}
