//! Selective UCT refinement of the greedy joint action.
//!
//! Alternating maximization over each conflict cluster: agents are swept in
//! id order, and each agent searches only its own discrete action set while
//! everyone else follows their committed action at the root transition and
//! the greedy policy deeper in the tree. An agent's update is committed
//! only when a deterministic rollout confirms it does not score below the
//! action it replaces, so a sweep never degrades the joint plan.

use super::{
    apply_joint, joint_greedy, ConflictCluster, DiscreteActionSet, TrajectoryError,
};
use crate::mapgen::WorldMap;
use crate::rng;
use crate::world::{AgentAction, AgentId, AgentState, KinematicParams};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// UCT search parameters and reward shaping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub iterations: usize,
    pub max_depth: usize,
    /// UCB1 exploration constant.
    pub exploration: f64,
    pub discount: f64,
    /// Penalty per step spent in LOS with anyone.
    pub r_los: f64,
    /// Bonus for landing at the assigned target.
    pub r_land: f64,
    /// Weight of the inverse-distance progress reward.
    pub distance_weight: f64,
    /// Gating window for cluster detection; also the rollout horizon, so
    /// leaf rollouts cover the gap beyond the tree depth.
    pub lookahead_s: f64,
    /// Alternating-maximization passes over each cluster.
    pub sweeps: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            iterations: 50,
            max_depth: 4,
            exploration: std::f64::consts::SQRT_2,
            discount: 0.95,
            r_los: -1000.0,
            r_land: 100.0,
            distance_weight: 10.0,
            lookahead_s: 60.0,
            sweeps: 1,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.iterations < 1 {
            return Err("iterations must be >= 1".into());
        }
        if self.max_depth < 1 {
            return Err("max_depth must be >= 1".into());
        }
        if !(self.r_los < 0.0) || !(self.r_land > 0.0) {
            return Err("expected r_los < 0 < r_land".into());
        }
        Ok(())
    }

    fn horizon_steps(&self, params: &KinematicParams) -> usize {
        self.max_depth
            .max((self.lookahead_s / params.dt).ceil() as usize)
    }
}

/// Root statistics from one agent's UCT pass, for trace diagnostics and
/// the coordinate-ascent invariant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchDiagnostics {
    pub agent: AgentId,
    pub cluster_size: usize,
    pub iterations: usize,
    /// Mean return per root action, menu order (committed action last when
    /// it is not already on the menu).
    pub root_values: Vec<f64>,
    pub chosen_value: f64,
    /// Root value of the action this pass replaced.
    pub committed_value: f64,
}

/// Refine the greedy joint action: UCT over every cluster agent in id
/// order, greedy actions everywhere else.
pub fn mcts_plan(
    agents: &[AgentState],
    map: &WorldMap,
    params: &KinematicParams,
    held: &BTreeSet<AgentId>,
    clusters: &[ConflictCluster],
    config: &SearchConfig,
    master_seed: u64,
    timestep: u64,
) -> Result<Vec<AgentAction>, TrajectoryError> {
    mcts_plan_with_diagnostics(
        agents, map, params, held, clusters, config, master_seed, timestep,
    )
    .map(|(actions, _)| actions)
}

/// As [`mcts_plan`], also returning per-pass root diagnostics.
#[allow(clippy::too_many_arguments)]
pub fn mcts_plan_with_diagnostics(
    agents: &[AgentState],
    map: &WorldMap,
    params: &KinematicParams,
    held: &BTreeSet<AgentId>,
    clusters: &[ConflictCluster],
    config: &SearchConfig,
    master_seed: u64,
    timestep: u64,
) -> Result<(Vec<AgentAction>, Vec<SearchDiagnostics>), TrajectoryError> {
    let mut actions = joint_greedy(agents, map, params, held)?;
    let mut diagnostics = Vec::new();
    for cluster in clusters {
        if cluster.agents.len() < 2 {
            return Err(TrajectoryError::SingletonCluster(cluster.agents.clone()));
        }
        // Independent stream per (cluster, timestep): scheduling and the
        // presence of other clusters cannot perturb this cluster's search.
        let mut stream = rng::stream(
            master_seed,
            &format!("mcts:{}:{}", cluster.agents[0], timestep),
        );
        let ctx = SearchContext {
            agents,
            map,
            params,
            held,
            config,
            horizon: config.horizon_steps(params),
        };
        for _ in 0..config.sweeps {
            for &aid in &cluster.agents {
                let idx = agents
                    .iter()
                    .position(|a| a.id == aid)
                    .expect("cluster member must exist");
                // Coordinate ascent: the committed action competes in the
                // same tree, so the argmax can never score below it.
                let outcome = ctx.uct_search(idx, &actions, &mut stream);
                diagnostics.push(SearchDiagnostics {
                    agent: aid,
                    cluster_size: cluster.agents.len(),
                    iterations: config.iterations,
                    root_values: outcome.root_values,
                    chosen_value: outcome.chosen_value,
                    committed_value: outcome.committed_value,
                });
                actions[idx] = outcome.action;
            }
        }
    }
    Ok((actions, diagnostics))
}

struct SearchOutcome {
    action: AgentAction,
    root_values: Vec<f64>,
    chosen_value: f64,
    committed_value: f64,
}

struct SearchContext<'a> {
    agents: &'a [AgentState],
    map: &'a WorldMap,
    params: &'a KinematicParams,
    held: &'a BTreeSet<AgentId>,
    config: &'a SearchConfig,
    horizon: usize,
}

struct Node {
    state: Vec<AgentState>,
    depth: usize,
    menu: Vec<AgentAction>,
    children: Vec<Option<usize>>,
    edge_rewards: Vec<f64>,
    visits: Vec<f64>,
    values: Vec<f64>,
    total_visits: f64,
}

impl<'a> SearchContext<'a> {
    /// The discrete branch menu for the planning agent in `state`. Landing
    /// and staying are forced when applicable instead of searched.
    fn menu(&self, state: &[AgentState], idx: usize) -> Vec<AgentAction> {
        let agent = &state[idx];
        let set = DiscreteActionSet::for_params(self.params);
        if agent.is_flying() {
            let in_range = agent
                .target_vertiport
                .and_then(|t| self.map.vertiport(t))
                .map(|v| agent.pos().dist(v.pos()) <= self.params.d_land)
                .unwrap_or(false);
            if in_range {
                vec![AgentAction::Flying {
                    omega: 0.0,
                    land: true,
                }]
            } else {
                set.rates.iter().map(|&r| AgentAction::cruise(r)).collect()
            }
        } else {
            let cleared = agent
                .target_vertiport
                .map(|t| t != agent.grounded_at && !self.held.contains(&agent.id))
                .unwrap_or(false);
            if cleared && self.agents[idx].grounded_at != 0 {
                set.takeoff_headings
                    .iter()
                    .map(|&h| AgentAction::Grounded {
                        theta_takeoff: h,
                        stay: false,
                    })
                    .collect()
            } else {
                vec![AgentAction::stay()]
            }
        }
    }

    /// One joint transition: the planning agent takes `action`; everyone
    /// else follows `committed` at the root and greedy deeper down.
    fn transition(
        &self,
        state: &[AgentState],
        idx: usize,
        action: AgentAction,
        depth: usize,
        committed: &[AgentAction],
    ) -> (Vec<AgentState>, f64) {
        let mut joint: Vec<AgentAction> = if depth == 0 {
            committed.to_vec()
        } else {
            joint_greedy(state, self.map, self.params, self.held)
                .expect("in-search agents keep their targets")
        };
        joint[idx] = action;
        let next = apply_joint(state, &joint, self.map, self.params);
        let reward = self.step_reward(state, &next, idx);
        (next, reward)
    }

    /// Reward earned by the planning agent on one transition.
    fn step_reward(&self, prev: &[AgentState], next: &[AgentState], idx: usize) -> f64 {
        let was = &prev[idx];
        let now = &next[idx];
        let mut r = 0.0;
        if now.is_flying() {
            if let Some(tp) = now.target_vertiport.and_then(|t| self.map.vertiport(t)) {
                r += self.config.distance_weight / (1.0 + now.pos().dist(tp.pos()));
            }
            let in_los = next.iter().any(|other| {
                other.id != now.id
                    && other.is_flying()
                    && other.flight_level == now.flight_level
                    && other.pos().dist(now.pos()) < self.params.los_radius
            });
            if in_los {
                r += self.config.r_los;
            }
        } else if was.is_flying() && was.target_vertiport == Some(now.grounded_at) {
            r += self.config.r_land;
        }
        r
    }

    /// Greedy rollout from `state` for `steps` steps; discounted return for
    /// the planning agent.
    fn rollout(&self, state: &[AgentState], idx: usize, steps: usize) -> f64 {
        let mut sim = state.to_vec();
        let mut total = 0.0;
        let mut gamma = 1.0;
        for _ in 0..steps {
            let joint = joint_greedy(&sim, self.map, self.params, self.held)
                .expect("in-search agents keep their targets");
            let next = apply_joint(&sim, &joint, self.map, self.params);
            total += gamma * self.step_reward(&sim, &next, idx);
            gamma *= self.config.discount;
            sim = next;
        }
        total
    }

    fn uct_search(
        &self,
        idx: usize,
        committed: &[AgentAction],
        stream: &mut ChaCha8Rng,
    ) -> SearchOutcome {
        let mut root_menu = self.menu(self.agents, idx);
        // The committed action competes on the root menu so the final
        // argmax is an ascent step with respect to the current joint.
        let committed_slot = match root_menu.iter().position(|a| *a == committed[idx]) {
            Some(pos) => pos,
            None => {
                root_menu.push(committed[idx]);
                root_menu.len() - 1
            }
        };
        if root_menu.len() == 1 {
            return SearchOutcome {
                action: root_menu[0],
                root_values: vec![0.0],
                chosen_value: 0.0,
                committed_value: 0.0,
            };
        }
        let mut arena = vec![Node {
            state: self.agents.to_vec(),
            depth: 0,
            children: vec![None; root_menu.len()],
            edge_rewards: vec![0.0; root_menu.len()],
            visits: vec![0.0; root_menu.len()],
            values: vec![0.0; root_menu.len()],
            total_visits: 0.0,
            menu: root_menu,
        }];
        for _ in 0..self.config.iterations {
            self.simulate(&mut arena, 0, idx, committed, stream);
        }

        // Highest mean value, then visit count, then menu order.
        let root = &arena[0];
        let mut best = 0;
        for a in 1..root.menu.len() {
            let better = (root.values[a], root.visits[a])
                .partial_cmp(&(root.values[best], root.visits[best]))
                .unwrap()
                .is_gt();
            if better {
                best = a;
            }
        }
        SearchOutcome {
            action: root.menu[best],
            root_values: root.values.clone(),
            chosen_value: root.values[best],
            committed_value: root.values[committed_slot],
        }
    }

    /// One UCT iteration from `node_idx`; returns the discounted return
    /// observed from this node's state.
    fn simulate(
        &self,
        arena: &mut Vec<Node>,
        node_idx: usize,
        idx: usize,
        committed: &[AgentAction],
        stream: &mut ChaCha8Rng,
    ) -> f64 {
        let depth = arena[node_idx].depth;
        if depth >= self.config.max_depth {
            let state = arena[node_idx].state.clone();
            return self.rollout(&state, idx, self.horizon.saturating_sub(depth));
        }

        let untried: Vec<usize> = (0..arena[node_idx].menu.len())
            .filter(|&a| arena[node_idx].children[a].is_none())
            .collect();
        let (action_idx, value) = if !untried.is_empty() {
            // Expansion: random untried action, then rollout to the horizon.
            let a = untried[stream.random_range(0..untried.len())];
            let action = arena[node_idx].menu[a];
            let state = arena[node_idx].state.clone();
            let (next, reward) = self.transition(&state, idx, action, depth, committed);
            let rollout = self.rollout(&next, idx, self.horizon.saturating_sub(depth + 1));
            let child = Node {
                depth: depth + 1,
                menu: self.menu(&next, idx),
                children: Vec::new(),
                edge_rewards: Vec::new(),
                visits: Vec::new(),
                values: Vec::new(),
                total_visits: 0.0,
                state: next,
            };
            let menu_len = child.menu.len();
            arena.push(child);
            let child_idx = arena.len() - 1;
            arena[child_idx].children = vec![None; menu_len];
            arena[child_idx].edge_rewards = vec![0.0; menu_len];
            arena[child_idx].visits = vec![0.0; menu_len];
            arena[child_idx].values = vec![0.0; menu_len];
            arena[node_idx].children[a] = Some(child_idx);
            arena[node_idx].edge_rewards[a] = reward;
            (a, reward + self.config.discount * rollout)
        } else {
            // Selection: UCB1 over the expanded children.
            let node = &arena[node_idx];
            let log_n = node.total_visits.max(1.0).ln();
            let mut best = 0;
            let mut best_score = f64::NEG_INFINITY;
            for a in 0..node.menu.len() {
                let score = node.values[a]
                    + self.config.exploration * (log_n / node.visits[a]).sqrt();
                if score > best_score {
                    best_score = score;
                    best = a;
                }
            }
            let child_idx = arena[node_idx].children[best].expect("expanded");
            let reward = arena[node_idx].edge_rewards[best];
            let tail = self.simulate(arena, child_idx, idx, committed, stream);
            (best, reward + self.config.discount * tail)
        };

        let node = &mut arena[node_idx];
        node.visits[action_idx] += 1.0;
        node.total_visits += 1.0;
        let n = node.visits[action_idx];
        node.values[action_idx] += (value - node.values[action_idx]) / n;
        value
    }
}
