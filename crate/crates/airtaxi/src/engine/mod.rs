//! The simulation engine: passenger arrivals, the three planning phases,
//! kinematics, boarding/landing/delivery events, conflict accounting, and
//! metrics.
//!
//! Phase order within a timestep: arrivals, assignment, level selection,
//! trajectory planning, physics, event resolution, conflict detection.
//! New passengers are therefore match-eligible the step they appear.

mod metrics;
mod passenger;
mod trace;

pub use metrics::{compute_metrics, per_trip_ratios, trip_records, MetricsError, MetricsSummary, TripRecord};
pub use passenger::Passenger;
pub use trace::{AgentSnapshot, Counters, Event, SimTrace, StepRecord, TraceHeader};

use crate::assignment;
use crate::levels::{self, LevelConfig, LevelDecision};
use crate::mapgen::WorldMap;
use crate::rng;
use crate::trajectory::{self, SearchConfig, TrajectoryError};
use crate::world::{
    detect_conflicts, step_kinematics, AgentAction, AgentId, AgentState, ConflictReport,
    KinematicParams, PassengerId,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("map rejected: {0}")]
    BadMap(#[from] crate::mapgen::MapError),
    #[error("trajectory planning failed: {0}")]
    Trajectory(#[from] TrajectoryError),
    #[error("metrics failed: {0}")]
    Metrics(#[from] MetricsError),
    #[error("invariant breach at step {step}: {reason}\nstate dump: {dump}")]
    InvariantBreach {
        step: u64,
        reason: String,
        dump: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignmentMethod {
    /// Ranked k-best matchings filtered by the demand distribution.
    Proposed,
    /// Every agent chases its nearest waiting passenger.
    Greedy,
    /// Optimal matching over uncommitted agents; commitments are final.
    FirstDispatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryMethod {
    Greedy,
    Mcts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelMethod {
    /// Density-forecast risk minimization with holding.
    Proposed,
    /// Uniform random level, immediate takeoff.
    Random,
}

/// Full engine configuration for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_agents: usize,
    pub seed: u64,
    pub assignment: AssignmentMethod,
    pub trajectory: TrajectoryMethod,
    pub level: LevelMethod,
    pub kinematics: KinematicParams,
    pub levels: LevelConfig,
    pub search: SearchConfig,
    /// Candidate matchings ranked per assignment round.
    pub k_candidates: usize,
    /// The run spawns `passenger_factor * n_agents` passengers in total.
    pub passenger_factor: usize,
    /// Safety valve: stop (and report truncation) after this many steps.
    pub max_steps: u64,
    /// Minimum steps between successive takeoffs from one vertiport. Two
    /// simultaneous departures would be colocated (an automatic NMAC no
    /// planner can avoid), and a one-step gap leaves them v*dt = 0.9 km
    /// apart, still inside the 0.926 km separation radius.
    pub takeoff_separation_steps: u64,
    /// Record per-agent snapshots in the trace (events are always kept).
    pub record_agent_snapshots: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_agents: 10,
            seed: 0,
            assignment: AssignmentMethod::Proposed,
            trajectory: TrajectoryMethod::Mcts,
            level: LevelMethod::Proposed,
            kinematics: KinematicParams::default(),
            levels: LevelConfig::default(),
            search: SearchConfig::default(),
            k_candidates: 10,
            passenger_factor: 10,
            max_steps: 100_000,
            takeoff_separation_steps: 2,
            record_agent_snapshots: true,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.n_agents == 0 {
            return Err(EngineError::BadConfig("n_agents must be >= 1".into()));
        }
        if self.k_candidates == 0 {
            return Err(EngineError::BadConfig("k_candidates must be >= 1".into()));
        }
        if self.passenger_factor == 0 {
            return Err(EngineError::BadConfig("passenger_factor must be >= 1".into()));
        }
        self.kinematics
            .validate()
            .map_err(|e| EngineError::BadConfig(e.to_string()))?;
        self.search
            .validate()
            .map_err(EngineError::BadConfig)?;
        Ok(())
    }

    pub fn passenger_target(&self) -> usize {
        self.passenger_factor * self.n_agents
    }
}

/// Complete mutable world state.
pub struct SimState {
    pub time: f64,
    pub step_index: u64,
    pub map: WorldMap,
    pub agents: Vec<AgentState>,
    pub passengers: Vec<Passenger>,
    pub conflicts: ConflictReport,
    pub counters: Counters,
    pub held: BTreeSet<AgentId>,
    pub terminated: bool,
    rng_arrivals: ChaCha8Rng,
    rng_destinations: ChaCha8Rng,
    rng_levels: ChaCha8Rng,
    /// Re-run the proposed matching only when arrivals, boardings, or
    /// deliveries changed its inputs.
    matching_dirty: bool,
    /// Step of the most recent takeoff per vertiport, for the departure
    /// release interval.
    last_takeoff: std::collections::BTreeMap<crate::world::VertiportId, u64>,
}

impl SimState {
    /// Agents start parked round-robin across the vertiports.
    pub fn new(config: &SimConfig, map: WorldMap) -> Result<Self, EngineError> {
        config.validate()?;
        map.validate()?;
        let mut map = map;
        for v in &mut map.vertiports {
            v.waiting.clear();
        }
        let agents = (0..config.n_agents)
            .map(|i| {
                let vp = &map.vertiports[i % map.vertiports.len()];
                AgentState::parked(i as AgentId + 1, vp.id, vp.pos())
            })
            .collect();
        Ok(SimState {
            time: 0.0,
            step_index: 0,
            map,
            agents,
            passengers: Vec::new(),
            conflicts: ConflictReport::default(),
            counters: Counters::default(),
            held: BTreeSet::new(),
            terminated: false,
            rng_arrivals: rng::stream(config.seed, "arrivals"),
            rng_destinations: rng::stream(config.seed, "destinations"),
            rng_levels: rng::stream(config.seed, "levels"),
            matching_dirty: true,
            last_takeoff: std::collections::BTreeMap::new(),
        })
    }

    fn passenger(&self, id: PassengerId) -> &Passenger {
        &self.passengers[id as usize - 1]
    }

    fn waiting_passengers(&self) -> Vec<&Passenger> {
        self.passengers.iter().filter(|p| p.is_waiting()).collect()
    }

    fn check_invariants(&self, step: u64) -> Result<(), EngineError> {
        let waiting = self.passengers.iter().filter(|p| p.is_waiting()).count();
        let onboard = self
            .passengers
            .iter()
            .filter(|p| p.board_time.is_some() && p.deliver_time.is_none())
            .count();
        let delivered = self.passengers.iter().filter(|p| p.is_delivered()).count();
        let breach = |reason: String| {
            let dump = serde_json::json!({
                "time": self.time,
                "agents": self.agents,
                "passengers": self.passengers,
            })
            .to_string();
            Err(EngineError::InvariantBreach { step, reason, dump })
        };
        if waiting + onboard + delivered != self.passengers.len() {
            return breach(format!(
                "passenger conservation: {waiting}+{onboard}+{delivered} != {}",
                self.passengers.len()
            ));
        }
        let list_total: usize = self.map.vertiports.iter().map(|v| v.waiting.len()).sum();
        if list_total != waiting {
            return breach(format!(
                "waiting lists hold {list_total} ids but {waiting} passengers wait"
            ));
        }
        let mut carried = BTreeSet::new();
        for a in &self.agents {
            if a.carrying != 0 && !carried.insert(a.carrying) {
                return breach(format!("passenger {} carried twice", a.carrying));
            }
            if a.grounded_at != 0 {
                let vp = self.map.vertiport(a.grounded_at).expect("valid vertiport");
                if a.pos().dist(vp.pos()) > 1e-9 {
                    return breach(format!("agent {} grounded away from vertiport", a.id));
                }
            }
        }
        Ok(())
    }
}

fn poisson<R: Rng>(rng: &mut R, mean: f64) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    let limit = (-mean).exp();
    let mut count = 0usize;
    let mut product: f64 = 1.0;
    loop {
        product *= rng.random::<f64>();
        if product <= limit {
            return count;
        }
        count += 1;
    }
}

/// Phase 1: Poisson arrivals per vertiport, uniform destinations, global
/// spawn cap with the final draw truncated.
pub fn spawn_passengers(state: &mut SimState, config: &SimConfig, events: &mut Vec<Event>) {
    let target = config.passenger_target();
    if state.passengers.len() >= target {
        return;
    }
    let dt_hr = config.kinematics.dt / 3600.0;
    let vertiport_ids: Vec<u32> = state.map.vertiports.iter().map(|v| v.id).collect();
    for (vi, &vp_id) in vertiport_ids.iter().enumerate() {
        let lambda = state.map.vertiports[vi].lambda;
        let mut arrivals = poisson(&mut state.rng_arrivals, lambda * dt_hr);
        let room = target - state.passengers.len();
        arrivals = arrivals.min(room);
        for _ in 0..arrivals {
            // Uniform over the other vertiports, in id order.
            let pick = state
                .rng_destinations
                .random_range(0..vertiport_ids.len() - 1);
            let destination = vertiport_ids
                .iter()
                .copied()
                .filter(|&d| d != vp_id)
                .nth(pick)
                .expect("m >= 2");
            let id = state.passengers.len() as PassengerId + 1;
            state
                .passengers
                .push(Passenger::new(id, vp_id, destination, state.time));
            state.map.vertiports[vi].waiting.push(id);
            state.counters.spawned += 1;
            state.matching_dirty = true;
            events.push(Event::Spawn {
                passenger: id,
                origin: vp_id,
                destination,
            });
        }
        if state.passengers.len() >= target {
            break;
        }
    }
}

/// Phase 2: per-method target assignment. Flying agents always leave with
/// a target vertiport (idle ones are routed to the nearest to land).
fn assign_targets(state: &mut SimState, config: &SimConfig) -> Result<(), EngineError> {
    let waiting: Vec<&Passenger> = state.waiting_passengers();
    match config.assignment {
        AssignmentMethod::Proposed => {
            if state.matching_dirty && !waiting.is_empty() {
                let chosen =
                    assignment::propose_matching(&state.agents, &waiting, &state.map, config.k_candidates)
                        .map_err(|e| EngineError::BadConfig(e.to_string()))?;
                let pairs: Vec<(usize, PassengerId)> = chosen
                    .map(|c| {
                        c.pairs
                            .iter()
                            .map(|&(row, col)| (row, waiting[col].id))
                            .collect()
                    })
                    .unwrap_or_default();
                // Every pickup target is re-derived from the fresh matching;
                // carrying agents keep their delivery leg untouched.
                for agent in &mut state.agents {
                    agent.target_passenger = None;
                }
                for &(row, pid) in &pairs {
                    let origin = state.passenger(pid).origin;
                    let agent = &mut state.agents[row];
                    agent.target_passenger = Some(pid);
                    if agent.carrying == 0 {
                        agent.target_vertiport = Some(origin);
                    }
                }
                state.matching_dirty = false;
            }
        }
        AssignmentMethod::Greedy => {
            let pairs = assignment::greedy_assign(&state.agents, &waiting, &state.map);
            for agent in &mut state.agents {
                if agent.carrying == 0 {
                    agent.target_passenger = None;
                }
            }
            for (aid, pid) in pairs {
                let origin = state.passenger(pid).origin;
                let agent = state
                    .agents
                    .iter_mut()
                    .find(|a| a.id == aid)
                    .expect("assigned agent exists");
                agent.target_passenger = Some(pid);
                agent.target_vertiport = Some(origin);
            }
        }
        AssignmentMethod::FirstDispatch => {
            let pairs = assignment::first_dispatch_assign(&state.agents, &waiting, &state.map);
            for (aid, pid) in pairs {
                let origin = state.passenger(pid).origin;
                let agent = state
                    .agents
                    .iter_mut()
                    .find(|a| a.id == aid)
                    .expect("assigned agent exists");
                agent.target_passenger = Some(pid);
                agent.target_vertiport = Some(origin);
            }
        }
    }

    // Idle agents: route flying ones to the nearest vertiport to land,
    // clear stale pickup targets on grounded ones.
    for agent in &mut state.agents {
        if agent.carrying != 0 {
            continue;
        }
        if agent.target_passenger.is_none() {
            if agent.is_flying() {
                agent.target_vertiport = Some(state.map.nearest_vertiport(agent.pos()));
            } else {
                agent.target_vertiport = None;
            }
        }
    }
    Ok(())
}

/// Phase 3: flight-level selection (or holds) for takeoff-ready agents,
/// plus the per-vertiport departure release interval. Queued departures
/// simply wait; only risk-based holds emit Hold events.
fn select_levels(state: &mut SimState, config: &SimConfig, events: &mut Vec<Event>) {
    state.held.clear();
    let ready: Vec<usize> = state
        .agents
        .iter()
        .enumerate()
        .filter(|(_, a)| {
            !a.is_flying()
                && a.target_vertiport
                    .map(|t| t != a.grounded_at)
                    .unwrap_or(false)
        })
        .map(|(i, _)| i)
        .collect();
    if ready.is_empty() {
        return;
    }
    let mut stack = match config.level {
        LevelMethod::Proposed => Some(levels::build_density_stack(
            &state.agents,
            &state.map,
            &config.kinematics,
            &config.levels,
        )),
        LevelMethod::Random => None,
    };
    for idx in ready {
        let id = state.agents[idx].id;
        let port = state.agents[idx].grounded_at;
        let released = match state.last_takeoff.get(&port) {
            Some(&last) => state.step_index - last >= config.takeoff_separation_steps,
            None => true,
        };
        if !released {
            state.held.insert(id);
            continue;
        }
        let decision = match (&mut stack, config.level) {
            (Some(stack), LevelMethod::Proposed) => levels::select_flight_level(
                &state.agents[idx],
                stack,
                &state.map,
                &config.kinematics,
                &config.levels,
            )
            .expect("ready agents are grounded with targets"),
            _ => levels::random_level_baseline(state.map.flight_levels, &mut state.rng_levels),
        };
        match decision {
            LevelDecision::Fly { level, .. } => {
                state.agents[idx].flight_level = level;
                state.last_takeoff.insert(port, state.step_index);
            }
            LevelDecision::Hold { .. } => {
                state.held.insert(id);
                state.counters.holds += 1;
                events.push(Event::Hold { agent: id });
            }
        }
    }
}

/// Phases 4-7: plan, move, resolve events, count conflicts.
fn advance(state: &mut SimState, config: &SimConfig, events: &mut Vec<Event>) -> Result<Vec<crate::trajectory::SearchDiagnostics>, EngineError> {
    let mut search_diagnostics = Vec::new();
    let actions: Vec<AgentAction> = match config.trajectory {
        TrajectoryMethod::Greedy => trajectory::joint_greedy(
            &state.agents,
            &state.map,
            &config.kinematics,
            &state.held,
        )?,
        TrajectoryMethod::Mcts => {
            let clusters = trajectory::find_conflict_clusters(
                &state.agents,
                &state.map,
                &config.kinematics,
                &state.held,
                config.search.lookahead_s,
            )?;
            let (actions, diagnostics) = trajectory::mcts_plan_with_diagnostics(
                &state.agents,
                &state.map,
                &config.kinematics,
                &state.held,
                &clusters,
                &config.search,
                config.seed,
                state.step_index,
            )?;
            search_diagnostics = diagnostics;
            actions
        }
    };

    // Physics, with takeoff/landing transitions recorded.
    let mut takeoffs: Vec<(usize, Event)> = Vec::new();
    let mut landings: Vec<usize> = Vec::new();
    for (idx, action) in actions.iter().enumerate() {
        let before = state.agents[idx].clone();
        let after = step_kinematics(&before, action, &config.kinematics, &state.map)
            .expect("engine produced an illegal action");
        if before.grounded_at != 0 && after.grounded_at == 0 {
            takeoffs.push((
                idx,
                Event::Takeoff {
                    agent: after.id,
                    level: after.flight_level,
                    carrying: after.carrying,
                },
            ));
        }
        if before.grounded_at == 0 && after.grounded_at != 0 {
            landings.push(idx);
        }
        state.agents[idx] = after;
    }
    for (idx, event) in &takeoffs {
        if state.agents[*idx].carrying != 0 {
            let pid = state.agents[*idx].carrying;
            let p = &mut state.passengers[pid as usize - 1];
            if p.takeoff_time.is_none() {
                p.takeoff_time = Some(state.time + config.kinematics.dt);
            }
        }
        events.push(event.clone());
    }
    for &idx in &landings {
        events.push(Event::Land {
            agent: state.agents[idx].id,
            vertiport: state.agents[idx].grounded_at,
        });
    }

    // Event resolution: deliveries first (they free cabins), then boarding.
    let now = state.time + config.kinematics.dt;
    for &idx in &landings {
        let agent = &mut state.agents[idx];
        agent.target_vertiport = None;
        if agent.carrying != 0 {
            let pid = agent.carrying;
            let p = &mut state.passengers[pid as usize - 1];
            if p.destination == agent.grounded_at {
                p.deliver_time = Some(now);
                agent.carrying = 0;
                state.counters.delivered += 1;
                state.matching_dirty = true;
                events.push(Event::Deliver {
                    agent: agent.id,
                    passenger: pid,
                });
            }
        }
    }
    // Boarding: any grounded, empty agent whose assigned passenger waits
    // here (covers both fresh landings and same-vertiport assignments).
    for idx in 0..state.agents.len() {
        let agent = &state.agents[idx];
        if agent.is_flying() || agent.carrying != 0 {
            continue;
        }
        let Some(pid) = agent.target_passenger else {
            continue;
        };
        let passenger = state.passenger(pid);
        if !passenger.is_waiting() || passenger.origin != agent.grounded_at {
            continue;
        }
        let destination = passenger.destination;
        let vertiport_idx = state
            .map
            .vertiports
            .iter()
            .position(|v| v.id == passenger.origin)
            .expect("origin exists");
        state.map.vertiports[vertiport_idx].waiting.retain(|&w| w != pid);
        let agent = &mut state.agents[idx];
        agent.carrying = pid;
        agent.target_passenger = None;
        agent.target_vertiport = Some(destination);
        state.passengers[pid as usize - 1].board_time = Some(now);
        state.matching_dirty = true;
        events.push(Event::Board {
            agent: state.agents[idx].id,
            passenger: pid,
        });
    }

    // Conflict accounting.
    let report = detect_conflicts(&state.agents, &config.kinematics, &state.conflicts);
    for (a, b) in report.new_los_pairs(&state.conflicts) {
        events.push(Event::LosEnter { a, b });
    }
    for (a, b) in report.new_nmac_pairs(&state.conflicts) {
        events.push(Event::NmacEnter { a, b });
    }
    state.counters.los_events += report.new_los_events;
    state.counters.nmac_events += report.new_nmac_events;
    state.counters.los_pair_steps += report.los_pairs.len();
    state.counters.nmac_pair_steps += report.nmac_pairs.len();
    state.conflicts = report;
    Ok(search_diagnostics)
}

/// Advance the world one timestep; returns the step's record.
pub fn step(state: &mut SimState, config: &SimConfig) -> Result<StepRecord, EngineError> {
    debug_assert!(!state.terminated);
    let mut events = Vec::new();
    spawn_passengers(state, config, &mut events);
    assign_targets(state, config)?;
    select_levels(state, config, &mut events);
    let search = advance(state, config, &mut events)?;
    state.step_index += 1;
    state.time += config.kinematics.dt;
    state.check_invariants(state.step_index)?;

    if state.counters.delivered >= config.passenger_target() {
        state.terminated = true;
    }
    let agents = if config.record_agent_snapshots {
        state
            .agents
            .iter()
            .map(|a| AgentSnapshot {
                id: a.id,
                x: a.x,
                y: a.y,
                theta: a.theta,
                grounded_at: a.grounded_at,
                carrying: a.carrying,
                flight_level: a.flight_level,
                target: a.target_vertiport,
            })
            .collect()
    } else {
        Vec::new()
    };
    Ok(StepRecord {
        step: state.step_index,
        time: state.time,
        agents,
        events,
        counters: state.counters,
        search,
    })
}

/// Run to completion: loop until all passengers are delivered or the step
/// valve trips (reported as truncation, never silent).
pub fn run(config: &SimConfig, map: &WorldMap) -> Result<(SimTrace, MetricsSummary), EngineError> {
    let mut state = SimState::new(config, map.clone())?;
    let header = TraceHeader {
        schema_version: crate::SCHEMA_VERSION,
        build: crate::BUILD_ID.to_string(),
        passenger_target: config.passenger_target(),
        config: serde_json::to_value(config).expect("config serializes"),
        map: state.map.clone(),
    };
    let mut steps = Vec::new();
    while !state.terminated && state.step_index < config.max_steps {
        steps.push(step(&mut state, config)?);
    }
    let trace = SimTrace { header, steps };
    let summary = compute_metrics(&trace, config.n_agents)?;
    Ok((trace, summary))
}
