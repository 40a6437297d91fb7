//! Trajectory planning: the greedy per-agent policy, conflict-cluster
//! gating, and selective UCT refinement.
//!
//! Greedy homing is the default everywhere (it is also the in-search model
//! of everyone else's behavior); UCT runs only on agents predicted to lose
//! separation within the gating window, grouped into transitive clusters.

mod mcts;

pub use mcts::{mcts_plan, mcts_plan_with_diagnostics, SearchConfig, SearchDiagnostics};

use crate::geom::{angle_diff, Point};
use crate::mapgen::WorldMap;
use crate::world::{
    step_kinematics, AgentAction, AgentId, AgentState, KinematicParams,
};
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TrajectoryError {
    #[error("agent {0} has no target vertiport")]
    NoTarget(AgentId),
    #[error("conflict cluster must contain at least two agents, got {0:?}")]
    SingletonCluster(Vec<AgentId>),
}

/// The discrete action menu searched by UCT: three angular rates while
/// flying and four takeoff headings while grounded. Landing and staying
/// are forced when their preconditions hold rather than searched.
#[derive(Debug, Clone, Copy)]
pub struct DiscreteActionSet {
    pub rates: [f64; 3],
    pub takeoff_headings: [f64; 4],
}

impl DiscreteActionSet {
    pub fn for_params(params: &KinematicParams) -> Self {
        use std::f64::consts::PI;
        DiscreteActionSet {
            rates: [-params.omega_max, 0.0, params.omega_max],
            takeoff_headings: [0.0, PI / 2.0, PI, 3.0 * PI / 2.0],
        }
    }
}

/// Agents that pairwise (transitively) lose separation during the gating
/// rollout. Ids are sorted; a cluster always has at least two members.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConflictCluster {
    pub agents: Vec<AgentId>,
}

/// Greedy action for one agent: steer the shortest way towards the target,
/// land when in range, take off towards the target when grounded elsewhere.
///
/// Holding is not this policy's business: the caller overrides takeoffs
/// with `stay` for agents the level selector is holding.
pub fn greedy_action(
    agent: &AgentState,
    map: &WorldMap,
    params: &KinematicParams,
) -> Result<AgentAction, TrajectoryError> {
    let Some(target) = agent.target_vertiport else {
        return if agent.is_flying() {
            Err(TrajectoryError::NoTarget(agent.id))
        } else {
            Ok(AgentAction::stay())
        };
    };
    let target_pos = map
        .vertiport(target)
        .ok_or(TrajectoryError::NoTarget(agent.id))?
        .pos();

    if agent.is_flying() {
        if agent.pos().dist(target_pos) <= params.d_land {
            return Ok(AgentAction::Flying {
                omega: 0.0,
                land: true,
            });
        }
        let bearing = agent.pos().bearing_to(target_pos);
        let omega = (angle_diff(agent.theta, bearing) / params.dt)
            .clamp(-params.omega_max, params.omega_max);
        Ok(AgentAction::cruise(omega))
    } else if agent.grounded_at == target {
        Ok(AgentAction::stay())
    } else {
        Ok(AgentAction::Grounded {
            theta_takeoff: agent.pos().bearing_to(target_pos),
            stay: false,
        })
    }
}

/// Independent greedy actions for the whole fleet, in input order. Agents
/// in `held` stay grounded regardless of their targets.
pub fn joint_greedy(
    agents: &[AgentState],
    map: &WorldMap,
    params: &KinematicParams,
    held: &BTreeSet<AgentId>,
) -> Result<Vec<AgentAction>, TrajectoryError> {
    agents
        .iter()
        .map(|a| {
            if !a.is_flying() && held.contains(&a.id) {
                Ok(AgentAction::stay())
            } else {
                greedy_action(a, map, params)
            }
        })
        .collect()
}

/// Advance every agent one step under the given joint action.
pub(crate) fn apply_joint(
    agents: &[AgentState],
    actions: &[AgentAction],
    map: &WorldMap,
    params: &KinematicParams,
) -> Vec<AgentState> {
    agents
        .iter()
        .zip(actions)
        .map(|(a, act)| {
            step_kinematics(a, act, params, map)
                .expect("planner produced an illegal action")
        })
        .collect()
}

/// LOS pairs among flying agents on shared levels; cheaper than a full
/// conflict report when only the pair set matters.
fn los_pairs(agents: &[AgentState], params: &KinematicParams) -> Vec<(AgentId, AgentId)> {
    let mut pairs = Vec::new();
    let flying: Vec<&AgentState> = agents.iter().filter(|a| a.is_flying()).collect();
    for (i, a) in flying.iter().enumerate() {
        for b in &flying[i + 1..] {
            if a.flight_level == b.flight_level && a.pos().dist(b.pos()) < params.los_radius {
                let pair = if a.id < b.id { (a.id, b.id) } else { (b.id, a.id) };
                pairs.push(pair);
            }
        }
    }
    pairs
}

/// Greedy rollout positions of a single agent, for lookahead scoring.
///
/// `positions[s]` is the agent's predicted location after `s + 1` steps, or
/// `None` from the step it is predicted to have landed. Grounded agents are
/// modelled as taking off on the first step.
pub fn predicted_route(
    agent: &AgentState,
    map: &WorldMap,
    params: &KinematicParams,
    steps: usize,
) -> Vec<Option<Point>> {
    let mut out = Vec::with_capacity(steps);
    let mut sim = agent.clone();
    for _ in 0..steps {
        if sim.target_vertiport.is_none() {
            out.push(None);
            continue;
        }
        if let Ok(action) = greedy_action(&sim, map, params) {
            if let Ok(next) = step_kinematics(&sim, &action, params, map) {
                sim = next;
            }
        }
        out.push(if sim.is_flying() { Some(sim.pos()) } else { None });
    }
    out
}

/// Simulate the fleet greedily for `lookahead_s` seconds with frozen
/// targets and no new arrivals; return the transitive clusters of agents
/// that lose separation anywhere in the window (including right now).
pub fn find_conflict_clusters(
    agents: &[AgentState],
    map: &WorldMap,
    params: &KinematicParams,
    held: &BTreeSet<AgentId>,
    lookahead_s: f64,
) -> Result<Vec<ConflictCluster>, TrajectoryError> {
    let steps = (lookahead_s / params.dt).ceil() as usize;
    let mut flagged: BTreeSet<(AgentId, AgentId)> = los_pairs(agents, params).into_iter().collect();
    let mut sim = agents.to_vec();
    for _ in 0..steps {
        let actions = joint_greedy(&sim, map, params, held)?;
        sim = apply_joint(&sim, &actions, map, params);
        flagged.extend(los_pairs(&sim, params));
    }

    // Union-find over the pair graph.
    let ids: Vec<AgentId> = {
        let mut s = BTreeSet::new();
        for &(a, b) in &flagged {
            s.insert(a);
            s.insert(b);
        }
        s.into_iter().collect()
    };
    let index = |id: AgentId| ids.binary_search(&id).unwrap();
    let mut parent: Vec<usize> = (0..ids.len()).collect();
    fn find(parent: &mut Vec<usize>, i: usize) -> usize {
        if parent[i] != i {
            let root = find(parent, parent[i]);
            parent[i] = root;
        }
        parent[i]
    }
    for &(a, b) in &flagged {
        let (ra, rb) = (find(&mut parent, index(a)), find(&mut parent, index(b)));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut clusters: Vec<ConflictCluster> = Vec::new();
    let mut roots: Vec<usize> = Vec::new();
    for i in 0..ids.len() {
        let root = find(&mut parent, i);
        if let Some(pos) = roots.iter().position(|&r| r == root) {
            clusters[pos].agents.push(ids[i]);
        } else {
            roots.push(root);
            clusters.push(ConflictCluster {
                agents: vec![ids[i]],
            });
        }
    }
    Ok(clusters)
}
