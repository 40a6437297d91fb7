//! Core domain types: agent state, the kinematic update, conflict geometry,
//! and the shared reward accounting.
//!
//! Conventions used throughout:
//! - positions in km, headings in radians in [0, 2π), time in seconds;
//! - `grounded_at == 0` means the agent is flying, otherwise it names the
//!   vertiport the agent sits on;
//! - `carrying == 0` means the cabin is empty, otherwise it names the
//!   passenger on board;
//! - flight levels are 1-based and conflict-isolated from one another.

use crate::geom::{normalize_angle, Point};
use crate::mapgen::WorldMap;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

/// Agent id, 1-based in traces but any non-negative integer works.
pub type AgentId = u32;
/// Vertiport id; 0 is reserved for "flying".
pub type VertiportId = u32;
/// Passenger id; 0 is reserved for "empty".
pub type PassengerId = u32;

#[derive(Debug, Error, PartialEq)]
pub enum WorldError {
    #[error("agent {agent}: {action} action does not match grounded state {grounded_at}")]
    ActionVariantMismatch {
        agent: AgentId,
        action: &'static str,
        grounded_at: VertiportId,
    },
    #[error("agent {agent}: |omega|={omega} exceeds omega_max={omega_max}")]
    OmegaOutOfRange {
        agent: AgentId,
        omega: f64,
        omega_max: f64,
    },
    #[error("agent {agent}: landing rejected, {dist:.3} km from vertiport {vertiport} exceeds d_land={d_land}")]
    LandingOutOfRange {
        agent: AgentId,
        vertiport: VertiportId,
        dist: f64,
        d_land: f64,
    },
    #[error("agent {agent}: landing requested without a target vertiport")]
    LandingWithoutTarget { agent: AgentId },
    #[error("unknown vertiport id {0}")]
    UnknownVertiport(VertiportId),
    #[error("kinematic params invalid: {0}")]
    BadParams(String),
}

/// Full per-agent configuration plus its current assignment targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub id: AgentId,
    pub x: f64,
    pub y: f64,
    /// Heading relative to +x, always kept in [0, 2π).
    pub theta: f64,
    /// Vertiport the agent is grounded at; 0 = flying.
    pub grounded_at: VertiportId,
    /// Passenger on board; 0 = empty.
    pub carrying: PassengerId,
    /// Flight level in 1..=F. While grounded this is the level the agent
    /// will use at its next takeoff.
    pub flight_level: u32,
    /// Passenger this agent is assigned to pick up (next pickup while
    /// carrying).
    pub target_passenger: Option<PassengerId>,
    /// Vertiport the agent is currently heading for.
    pub target_vertiport: Option<VertiportId>,
}

impl AgentState {
    /// A grounded, idle agent parked at `vertiport`.
    pub fn parked(id: AgentId, vertiport: VertiportId, pos: Point) -> Self {
        AgentState {
            id,
            x: pos.x,
            y: pos.y,
            theta: 0.0,
            grounded_at: vertiport,
            carrying: 0,
            flight_level: 1,
            target_passenger: None,
            target_vertiport: None,
        }
    }

    pub fn pos(&self) -> Point {
        Point::new(self.x, self.y)
    }

    pub fn is_flying(&self) -> bool {
        self.grounded_at == 0
    }
}

/// One agent's action for one timestep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AgentAction {
    /// Valid only while flying: turn at `omega` rad/s, or land when in range
    /// of the target vertiport.
    Flying { omega: f64, land: bool },
    /// Valid only while grounded: stay put, or take off on `theta_takeoff`.
    Grounded { theta_takeoff: f64, stay: bool },
}

impl AgentAction {
    pub fn stay() -> Self {
        AgentAction::Grounded {
            theta_takeoff: 0.0,
            stay: true,
        }
    }

    pub fn cruise(omega: f64) -> Self {
        AgentAction::Flying { omega, land: false }
    }
}

/// Kinematic and separation constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KinematicParams {
    /// Cruise speed, km/s.
    pub v: f64,
    /// Timestep, s.
    pub dt: f64,
    /// Maximum |angular rate|, rad/s.
    pub omega_max: f64,
    /// Landing radius, km.
    pub d_land: f64,
    /// Loss-of-separation radius, km.
    pub los_radius: f64,
    /// Near-midair-collision radius, km.
    pub nmac_radius: f64,
}

impl Default for KinematicParams {
    fn default() -> Self {
        KinematicParams {
            v: 0.09,
            dt: 10.0,
            omega_max: 0.04,
            d_land: 1.7,
            los_radius: 0.926,
            nmac_radius: 0.15,
        }
    }
}

impl KinematicParams {
    /// Check positivity and the radius ordering nmac < los < d_land.
    pub fn validate(&self) -> Result<(), WorldError> {
        let fields = [
            ("v", self.v),
            ("dt", self.dt),
            ("omega_max", self.omega_max),
            ("d_land", self.d_land),
            ("los_radius", self.los_radius),
            ("nmac_radius", self.nmac_radius),
        ];
        for (name, value) in fields {
            if !(value > 0.0) {
                return Err(WorldError::BadParams(format!(
                    "{name} must be strictly positive, got {value}"
                )));
            }
        }
        if !(self.nmac_radius < self.los_radius && self.los_radius < self.d_land) {
            return Err(WorldError::BadParams(format!(
                "expected nmac_radius < los_radius < d_land, got {} / {} / {}",
                self.nmac_radius, self.los_radius, self.d_land
            )));
        }
        Ok(())
    }
}

/// Unordered pair of distinct agent ids, stored (low, high).
pub type AgentPair = (AgentId, AgentId);

fn ordered(a: AgentId, b: AgentId) -> AgentPair {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Snapshot of current separation violations plus entry-event counts
/// relative to the previous timestep.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConflictReport {
    pub los_pairs: BTreeSet<AgentPair>,
    pub nmac_pairs: BTreeSet<AgentPair>,
    /// Pairs that entered LOS this timestep (absent from the previous report).
    pub new_los_events: usize,
    /// Pairs that entered NMAC this timestep.
    pub new_nmac_events: usize,
}

impl ConflictReport {
    pub fn new_los_pairs(&self, previous: &ConflictReport) -> Vec<AgentPair> {
        self.los_pairs
            .difference(&previous.los_pairs)
            .copied()
            .collect()
    }

    pub fn new_nmac_pairs(&self, previous: &ConflictReport) -> Vec<AgentPair> {
        self.nmac_pairs
            .difference(&previous.nmac_pairs)
            .copied()
            .collect()
    }
}

/// Advance one agent by one timestep.
///
/// Flying update order follows the displayed kinematics: heading first, then
/// translate along the new heading. Landing and takeoff complete within a
/// single timestep; the takeoff step leaves the position at the vertiport
/// and translation begins the following step.
pub fn step_kinematics(
    state: &AgentState,
    action: &AgentAction,
    params: &KinematicParams,
    map: &WorldMap,
) -> Result<AgentState, WorldError> {
    let mut next = state.clone();
    match *action {
        AgentAction::Flying { omega, land } => {
            if !state.is_flying() {
                return Err(WorldError::ActionVariantMismatch {
                    agent: state.id,
                    action: "Flying",
                    grounded_at: state.grounded_at,
                });
            }
            if omega.abs() > params.omega_max + 1e-12 {
                return Err(WorldError::OmegaOutOfRange {
                    agent: state.id,
                    omega,
                    omega_max: params.omega_max,
                });
            }
            if land {
                let target = state
                    .target_vertiport
                    .ok_or(WorldError::LandingWithoutTarget { agent: state.id })?;
                let vp = map
                    .vertiport(target)
                    .ok_or(WorldError::UnknownVertiport(target))?;
                let dist = state.pos().dist(vp.pos());
                if dist > params.d_land {
                    return Err(WorldError::LandingOutOfRange {
                        agent: state.id,
                        vertiport: target,
                        dist,
                        d_land: params.d_land,
                    });
                }
                next.grounded_at = target;
                next.x = vp.x;
                next.y = vp.y;
            } else {
                next.theta = normalize_angle(state.theta + omega * params.dt);
                next.x = state.x + params.v * next.theta.cos() * params.dt;
                next.y = state.y + params.v * next.theta.sin() * params.dt;
            }
        }
        AgentAction::Grounded {
            theta_takeoff,
            stay,
        } => {
            if state.is_flying() {
                return Err(WorldError::ActionVariantMismatch {
                    agent: state.id,
                    action: "Grounded",
                    grounded_at: 0,
                });
            }
            if !stay {
                next.grounded_at = 0;
                next.theta = normalize_angle(theta_takeoff);
            }
        }
    }
    Ok(next)
}

/// Pairwise separation check over flying agents sharing a flight level.
///
/// A pair enters the LOS (NMAC) set when its distance drops strictly below
/// the corresponding radius. Entry events count pairs present now and absent
/// in `previous`; a pair that stays in violation across timesteps counts
/// once until it fully separates.
pub fn detect_conflicts(
    agents: &[AgentState],
    params: &KinematicParams,
    previous: &ConflictReport,
) -> ConflictReport {
    let mut report = ConflictReport::default();
    let flying: Vec<&AgentState> = agents.iter().filter(|a| a.is_flying()).collect();
    for (idx, a) in flying.iter().enumerate() {
        for b in &flying[idx + 1..] {
            if a.flight_level != b.flight_level || a.id == b.id {
                continue;
            }
            let d = a.pos().dist(b.pos());
            if d < params.los_radius {
                report.los_pairs.insert(ordered(a.id, b.id));
                if d < params.nmac_radius {
                    report.nmac_pairs.insert(ordered(a.id, b.id));
                }
            }
        }
    }
    report.new_los_events = report.los_pairs.difference(&previous.los_pairs).count();
    report.new_nmac_events = report.nmac_pairs.difference(&previous.nmac_pairs).count();
    report
}

/// Shared step reward: deliveries minus penalized conflicts, d − γ·c.
pub fn reward(delivered_count: u64, new_conflict_count: u64, gamma: f64) -> f64 {
    delivered_count as f64 - gamma * new_conflict_count as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapgen::{Vertiport, WorldMap};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::TAU;

    fn two_port_map() -> WorldMap {
        WorldMap::new(
            100.0,
            1,
            vec![
                Vertiport::new(1, Point::new(0.0, 0.0)),
                Vertiport::new(2, Point::new(30.0, 40.0)),
            ],
        )
    }

    fn flying_agent(id: AgentId, x: f64, y: f64, theta: f64) -> AgentState {
        AgentState {
            id,
            x,
            y,
            theta,
            grounded_at: 0,
            carrying: 0,
            flight_level: 1,
            target_passenger: None,
            target_vertiport: Some(2),
        }
    }

    #[test]
    fn straight_flight_advances_along_heading() {
        let p = KinematicParams::default();
        let a = flying_agent(1, 0.0, 0.0, 0.0);
        let next = step_kinematics(&a, &AgentAction::cruise(0.0), &p, &two_port_map()).unwrap();
        assert_relative_eq!(next.x, 0.9, max_relative = 1e-12);
        assert_relative_eq!(next.y, 0.0, epsilon = 1e-12);
        assert_relative_eq!(next.theta, 0.0);
    }

    #[test]
    fn turning_step_matches_update_formulas() {
        // theta' = 0.4, then translate 0.9 km along the new heading.
        let p = KinematicParams::default();
        let a = flying_agent(1, 0.0, 0.0, 0.0);
        let next = step_kinematics(&a, &AgentAction::cruise(0.04), &p, &two_port_map()).unwrap();
        assert_relative_eq!(next.theta, 0.4, max_relative = 1e-12);
        assert_relative_eq!(next.x, 0.9 * 0.4f64.cos(), max_relative = 1e-12);
        assert_relative_eq!(next.y, 0.9 * 0.4f64.sin(), max_relative = 1e-12);
    }

    #[test]
    fn constant_turn_traces_circle_chords() {
        // Constant-rate turning traces a regular polygon: every step is a
        // chord of exact length v*dt and the vertices share a circumcircle
        // of radius (v*dt/2)/sin(omega*dt/2), which approaches v/omega as
        // omega*dt -> 0.
        let p = KinematicParams::default();
        let omega = 0.03;
        let chord = p.v * p.dt;
        let radius = (p.v * p.dt / 2.0) / (omega * p.dt / 2.0).sin();
        assert_relative_eq!(radius, p.v / omega, max_relative = 4e-3);
        let map = two_port_map();
        let mut a = flying_agent(1, 0.0, 0.0, 0.0);
        let mut pts = vec![a.pos()];
        for _ in 0..200 {
            a = step_kinematics(&a, &AgentAction::cruise(omega), &p, &map).unwrap();
            pts.push(a.pos());
        }
        for w in pts.windows(2) {
            assert_relative_eq!(w[0].dist(w[1]), chord, max_relative = 1e-9);
        }
        // Circumcenter of the first three points must be equidistant from all.
        let (p0, p1, p2) = (pts[0], pts[1], pts[2]);
        let d = 2.0 * (p0.x * (p1.y - p2.y) + p1.x * (p2.y - p0.y) + p2.x * (p0.y - p1.y));
        let ux = ((p0.x * p0.x + p0.y * p0.y) * (p1.y - p2.y)
            + (p1.x * p1.x + p1.y * p1.y) * (p2.y - p0.y)
            + (p2.x * p2.x + p2.y * p2.y) * (p0.y - p1.y))
            / d;
        let uy = ((p0.x * p0.x + p0.y * p0.y) * (p2.x - p1.x)
            + (p1.x * p1.x + p1.y * p1.y) * (p0.x - p2.x)
            + (p2.x * p2.x + p2.y * p2.y) * (p1.x - p0.x))
            / d;
        let center = Point::new(ux, uy);
        for pt in &pts {
            assert_relative_eq!(center.dist(*pt), radius, max_relative = 1e-9);
        }
    }

    #[test]
    fn landing_requires_range() {
        let p = KinematicParams::default();
        let map = two_port_map();
        let far = flying_agent(1, 0.0, 0.0, 0.0); // 50 km from vertiport 2
        let err = step_kinematics(
            &far,
            &AgentAction::Flying {
                omega: 0.0,
                land: true,
            },
            &p,
            &map,
        )
        .unwrap_err();
        assert!(matches!(err, WorldError::LandingOutOfRange { .. }));

        let near = flying_agent(1, 29.5, 40.0, 0.0);
        let landed = step_kinematics(
            &near,
            &AgentAction::Flying {
                omega: 0.0,
                land: true,
            },
            &p,
            &map,
        )
        .unwrap();
        assert_eq!(landed.grounded_at, 2);
        assert_relative_eq!(landed.x, 30.0);
        assert_relative_eq!(landed.y, 40.0);
    }

    #[test]
    fn action_variant_must_match_grounded_state() {
        let p = KinematicParams::default();
        let map = two_port_map();
        let grounded = AgentState::parked(1, 1, Point::new(0.0, 0.0));
        let err = step_kinematics(&grounded, &AgentAction::cruise(0.0), &p, &map).unwrap_err();
        assert!(matches!(err, WorldError::ActionVariantMismatch { .. }));

        let flying = flying_agent(1, 5.0, 5.0, 0.0);
        let err = step_kinematics(&flying, &AgentAction::stay(), &p, &map).unwrap_err();
        assert!(matches!(err, WorldError::ActionVariantMismatch { .. }));
    }

    #[test]
    fn takeoff_sets_heading_and_leaves_position() {
        let p = KinematicParams::default();
        let map = two_port_map();
        let grounded = AgentState::parked(1, 1, Point::new(0.0, 0.0));
        let airborne = step_kinematics(
            &grounded,
            &AgentAction::Grounded {
                theta_takeoff: 1.0,
                stay: false,
            },
            &p,
            &map,
        )
        .unwrap();
        assert_eq!(airborne.grounded_at, 0);
        assert_relative_eq!(airborne.theta, 1.0);
        assert_relative_eq!(airborne.x, 0.0);
        assert_relative_eq!(airborne.y, 0.0);

        let stayed = step_kinematics(&grounded, &AgentAction::stay(), &p, &map).unwrap();
        assert_eq!(stayed, grounded);
    }

    #[test]
    fn los_but_not_nmac_at_half_km() {
        let p = KinematicParams::default();
        let agents = vec![
            flying_agent(1, 0.0, 0.0, 0.0),
            flying_agent(2, 0.5, 0.0, 0.0),
        ];
        let report = detect_conflicts(&agents, &p, &ConflictReport::default());
        assert_eq!(report.los_pairs.len(), 1);
        assert!(report.los_pairs.contains(&(1, 2)));
        assert!(report.nmac_pairs.is_empty());
        assert_eq!(report.new_los_events, 1);
        assert_eq!(report.new_nmac_events, 0);
    }

    #[test]
    fn different_levels_do_not_conflict() {
        let p = KinematicParams::default();
        let mut b = flying_agent(2, 0.5, 0.0, 0.0);
        b.flight_level = 2;
        let agents = vec![flying_agent(1, 0.0, 0.0, 0.0), b];
        let report = detect_conflicts(&agents, &p, &ConflictReport::default());
        assert!(report.los_pairs.is_empty());
    }

    #[test]
    fn grounded_agents_are_exempt() {
        let p = KinematicParams::default();
        let agents = vec![
            AgentState::parked(1, 1, Point::new(0.0, 0.0)),
            flying_agent(2, 0.05, 0.0, 0.0),
        ];
        let report = detect_conflicts(&agents, &p, &ConflictReport::default());
        assert!(report.los_pairs.is_empty());
    }

    #[test]
    fn persistent_pair_counts_one_entry() {
        let p = KinematicParams::default();
        let agents = vec![
            flying_agent(1, 0.0, 0.0, 0.0),
            flying_agent(2, 0.5, 0.0, 0.0),
        ];
        let first = detect_conflicts(&agents, &p, &ConflictReport::default());
        assert_eq!(first.new_los_events, 1);
        let second = detect_conflicts(&agents, &p, &first);
        assert_eq!(second.new_los_events, 0);
        // Separate, then re-enter: counts again.
        let apart = vec![
            flying_agent(1, 0.0, 0.0, 0.0),
            flying_agent(2, 5.0, 0.0, 0.0),
        ];
        let gap = detect_conflicts(&apart, &p, &second);
        assert!(gap.los_pairs.is_empty());
        let third = detect_conflicts(&agents, &p, &gap);
        assert_eq!(third.new_los_events, 1);
    }

    #[test]
    fn reward_is_linear() {
        assert_relative_eq!(reward(3, 0, 10.0), 3.0);
        assert_relative_eq!(reward(0, 2, 10.0), -20.0);
        assert_relative_eq!(reward(1, 1, 1.0), 0.0);
    }

    #[test]
    fn params_ordering_checked() {
        let mut p = KinematicParams::default();
        assert!(p.validate().is_ok());
        p.nmac_radius = 1.0;
        assert!(p.validate().is_err());
        p = KinematicParams {
            v: 0.0,
            ..Default::default()
        };
        assert!(p.validate().is_err());
    }

    proptest! {
        #[test]
        fn heading_stays_normalized_and_speed_conserved(
            x in -50.0..50.0f64,
            y in -50.0..50.0f64,
            theta in 0.0..TAU,
            omega_frac in -1.0..1.0f64,
        ) {
            let p = KinematicParams::default();
            let map = two_port_map();
            let a = flying_agent(1, x, y, theta);
            let omega = omega_frac * p.omega_max;
            let next = step_kinematics(&a, &AgentAction::cruise(omega), &p, &map).unwrap();
            prop_assert!((0.0..TAU).contains(&next.theta));
            let disp = a.pos().dist(next.pos());
            prop_assert!((disp - p.v * p.dt).abs() <= 1e-12 * p.v * p.dt);
            // Turn-rate bound.
            let dtheta = crate::geom::angle_diff(a.theta, next.theta).abs();
            prop_assert!(dtheta <= p.omega_max * p.dt + 1e-12);
        }

        #[test]
        fn conflicts_invariant_under_reordering(seed in 0u64..1000) {
            use rand::Rng;
            let mut rng = crate::rng::stream(seed, "conflict-prop");
            let p = KinematicParams::default();
            let n = rng.random_range(2..8usize);
            let agents: Vec<AgentState> = (0..n)
                .map(|i| {
                    let mut a = flying_agent(
                        i as AgentId + 1,
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        0.0,
                    );
                    a.flight_level = rng.random_range(1..3);
                    a
                })
                .collect();
            let fwd = detect_conflicts(&agents, &p, &ConflictReport::default());
            let mut rev = agents.clone();
            rev.reverse();
            let bwd = detect_conflicts(&rev, &p, &ConflictReport::default());
            prop_assert_eq!(&fwd, &bwd);
            prop_assert!(fwd.nmac_pairs.is_subset(&fwd.los_pairs));
            prop_assert!(fwd.new_los_events <= fwd.los_pairs.len());
        }
    }
}
