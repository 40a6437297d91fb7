//! Flight-level selection against diffused traffic-density forecasts.
//!
//! For every level and every lookahead step we keep a 2D grid holding the
//! predicted positions of the airborne fleet, smeared by a Gaussian whose
//! width grows with the step number (later predictions are less certain).
//! A takeoff candidate's route is scored by summing the density its own
//! greedy trajectory would fly through, per level; it gets the cheapest
//! level, or is held at the vertiport when every level is too busy.

use crate::geom::Point;
use crate::mapgen::WorldMap;
use crate::trajectory::predicted_route;
use crate::world::{AgentState, KinematicParams};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LevelError {
    #[error("flight level {level} out of range 1..={levels}")]
    LevelOutOfRange { level: u32, levels: u32 },
    #[error("agent {0} has no target to route towards")]
    NoTarget(u32),
    #[error("agent {0} is not grounded")]
    NotGrounded(u32),
    #[error("failed to export density grid: {0}")]
    Export(String),
}

/// Forecast and scoring parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelConfig {
    /// Lookahead steps (steps of `dt` seconds).
    pub lookahead_steps: usize,
    /// Grid resolution per map side.
    pub grid_cells: usize,
    /// Kernel width at step 1, in cells.
    pub sigma0_cells: f64,
    /// Kernel width growth per step, in cells.
    pub sigma_rate_cells: f64,
    /// Hold the aircraft when every level's route risk exceeds this.
    pub hold_threshold: f64,
}

impl Default for LevelConfig {
    fn default() -> Self {
        LevelConfig {
            lookahead_steps: 20,
            grid_cells: 128,
            sigma0_cells: 1.0,
            sigma_rate_cells: 0.25,
            hold_threshold: 0.5,
        }
    }
}

impl LevelConfig {
    fn sigma(&self, step: usize) -> f64 {
        self.sigma0_cells + self.sigma_rate_cells * step as f64
    }
}

/// Takeoff decision for one grounded agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LevelDecision {
    Fly { level: u32, risk: f64 },
    Hold { min_risk: f64 },
}

/// Per-level, per-step predicted traffic density over the map.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityStack {
    pub levels: u32,
    pub steps: usize,
    pub cells: usize,
    pub cell_size: f64,
    pub origin: Point,
    /// Precomputed kernel stencil per step: (row offset, col offset, weight).
    kernels: Vec<Vec<(i32, i32, f64)>>,
    grids: Vec<f64>,
}

impl DensityStack {
    pub fn empty(map: &WorldMap, config: &LevelConfig) -> Self {
        let cells = config.grid_cells;
        let steps = config.lookahead_steps;
        let levels = map.flight_levels;
        let kernels = (1..=steps).map(|s| kernel_stencil(config.sigma(s))).collect();
        DensityStack {
            levels,
            steps,
            cells,
            cell_size: map.side_length / cells as f64,
            origin: map.origin,
            kernels,
            grids: vec![0.0; levels as usize * steps * cells * cells],
        }
    }

    fn grid_index(&self, level: u32, step: usize) -> usize {
        debug_assert!((1..=self.levels).contains(&level));
        debug_assert!((1..=self.steps).contains(&step));
        ((level as usize - 1) * self.steps + (step - 1)) * self.cells * self.cells
    }

    /// The step-`step` grid for `level` (both 1-based), row-major from the
    /// south-west corner.
    pub fn grid(&self, level: u32, step: usize) -> &[f64] {
        let base = self.grid_index(level, step);
        &self.grids[base..base + self.cells * self.cells]
    }

    pub fn total_mass(&self, level: u32, step: usize) -> f64 {
        self.grid(level, step).iter().sum()
    }

    /// Add one unit-mass kernel for a predicted position.
    fn deposit(&mut self, level: u32, step: usize, pos: Point) {
        let base = self.grid_index(level, step);
        let col = ((pos.x - self.origin.x) / self.cell_size).floor() as i32;
        let row = ((pos.y - self.origin.y) / self.cell_size).floor() as i32;
        let cells = self.cells as i32;
        for &(dr, dc, w) in &self.kernels[step - 1] {
            let (r, c) = (row + dr, col + dc);
            if r >= 0 && r < cells && c >= 0 && c < cells {
                self.grids[base + (r * cells + c) as usize] += w;
            }
        }
    }

    /// Deposit a predicted trajectory (one kernel per step still airborne)
    /// onto one level.
    pub fn deposit_route(&mut self, level: u32, route: &[Option<Point>]) {
        for (i, p) in route.iter().take(self.steps).enumerate() {
            if let Some(pos) = p {
                self.deposit(level, i + 1, *pos);
            }
        }
    }

    /// Bilinear sample of the step grid at a map position.
    pub fn sample(&self, level: u32, step: usize, pos: Point) -> f64 {
        let base = self.grid_index(level, step);
        let u = (pos.x - self.origin.x) / self.cell_size - 0.5;
        let v = (pos.y - self.origin.y) / self.cell_size - 0.5;
        let max = (self.cells - 1) as f64;
        let u = u.clamp(0.0, max);
        let v = v.clamp(0.0, max);
        let (c0, r0) = (u.floor() as usize, v.floor() as usize);
        let (c1, r1) = ((c0 + 1).min(self.cells - 1), (r0 + 1).min(self.cells - 1));
        let (fu, fv) = (u - c0 as f64, v - r0 as f64);
        let at = |r: usize, c: usize| self.grids[base + r * self.cells + c];
        at(r0, c0) * (1.0 - fu) * (1.0 - fv)
            + at(r0, c1) * fu * (1.0 - fv)
            + at(r1, c0) * (1.0 - fu) * fv
            + at(r1, c1) * fu * fv
    }

    /// Write one step grid as CSV (rows south to north).
    pub fn export_csv<W: Write>(
        &self,
        level: u32,
        step: usize,
        out: &mut W,
    ) -> Result<(), LevelError> {
        let grid = self.grid(level, step);
        for row in 0..self.cells {
            let line: Vec<String> = (0..self.cells)
                .map(|c| format!("{}", grid[row * self.cells + c]))
                .collect();
            writeln!(out, "{}", line.join(",")).map_err(|e| LevelError::Export(e.to_string()))?;
        }
        Ok(())
    }

    /// Write one step grid as little-endian f64s after a JSON header line.
    pub fn export_binary<W: Write>(
        &self,
        level: u32,
        step: usize,
        out: &mut W,
    ) -> Result<(), LevelError> {
        let header = serde_json::json!({
            "schema_version": crate::SCHEMA_VERSION,
            "level": level,
            "step": step,
            "cells": self.cells,
            "cell_size_km": self.cell_size,
            "origin_km": [self.origin.x, self.origin.y],
            "dtype": "f64le",
        });
        writeln!(out, "{header}").map_err(|e| LevelError::Export(e.to_string()))?;
        for v in self.grid(level, step) {
            out.write_all(&v.to_le_bytes())
                .map_err(|e| LevelError::Export(e.to_string()))?;
        }
        Ok(())
    }
}

/// Truncated (3 sigma) Gaussian stencil with unit total weight.
fn kernel_stencil(sigma: f64) -> Vec<(i32, i32, f64)> {
    let radius = (3.0 * sigma).ceil() as i32;
    let mut cells = Vec::new();
    let mut total = 0.0;
    for dr in -radius..=radius {
        for dc in -radius..=radius {
            let d2 = (dr * dr + dc * dc) as f64;
            if d2 <= (3.0 * sigma) * (3.0 * sigma) {
                let w = (-d2 / (2.0 * sigma * sigma)).exp();
                cells.push((dr, dc, w));
                total += w;
            }
        }
    }
    for cell in &mut cells {
        cell.2 /= total;
    }
    cells
}

/// Forecast the airborne fleet: roll every flying agent forward under the
/// greedy policy and deposit a widening kernel per step onto its level.
/// Agents predicted to have landed by a step deposit nothing there.
pub fn build_density_stack(
    agents: &[AgentState],
    map: &WorldMap,
    params: &KinematicParams,
    config: &LevelConfig,
) -> DensityStack {
    let mut stack = DensityStack::empty(map, config);
    for agent in agents {
        if !agent.is_flying() || agent.target_vertiport.is_none() {
            continue;
        }
        let route = predicted_route(agent, map, params, config.lookahead_steps);
        stack.deposit_route(agent.flight_level, &route);
    }
    stack
}

/// Sum of forecast density along a candidate trajectory at one level.
pub fn route_risk(
    stack: &DensityStack,
    level: u32,
    route: &[Option<Point>],
) -> Result<f64, LevelError> {
    if level < 1 || level > stack.levels {
        return Err(LevelError::LevelOutOfRange {
            level,
            levels: stack.levels,
        });
    }
    let mut risk = 0.0;
    for (i, p) in route.iter().take(stack.steps).enumerate() {
        if let Some(pos) = p {
            risk += stack.sample(level, i + 1, *pos);
        }
    }
    Ok(risk)
}

/// Pick the cheapest level for a grounded, takeoff-ready agent, or hold it.
///
/// On `Fly` the agent's predicted trajectory is deposited into the chosen
/// level immediately, so later agents in the same pass see the traffic this
/// decision adds.
pub fn select_flight_level(
    agent: &AgentState,
    stack: &mut DensityStack,
    map: &WorldMap,
    params: &KinematicParams,
    config: &LevelConfig,
) -> Result<LevelDecision, LevelError> {
    if agent.is_flying() {
        return Err(LevelError::NotGrounded(agent.id));
    }
    if agent.target_vertiport.is_none() {
        return Err(LevelError::NoTarget(agent.id));
    }
    let route = predicted_route(agent, map, params, config.lookahead_steps);
    let mut best_level = 1;
    let mut best_risk = f64::INFINITY;
    for level in 1..=stack.levels {
        let risk = route_risk(stack, level, &route)?;
        if risk < best_risk {
            best_risk = risk;
            best_level = level;
        }
    }
    if best_risk <= config.hold_threshold {
        stack.deposit_route(best_level, &route);
        Ok(LevelDecision::Fly {
            level: best_level,
            risk: best_risk,
        })
    } else {
        Ok(LevelDecision::Hold {
            min_risk: best_risk,
        })
    }
}

/// Baseline: uniform random level, never holds.
pub fn random_level_baseline<R: Rng>(levels: u32, rng: &mut R) -> LevelDecision {
    LevelDecision::Fly {
        level: rng.random_range(1..=levels),
        risk: 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapgen::Vertiport;
    use approx::assert_relative_eq;

    fn test_map(levels: u32) -> WorldMap {
        WorldMap::new(
            40.0,
            levels,
            vec![
                Vertiport::new(1, Point::new(5.0, 20.0)),
                Vertiport::new(2, Point::new(35.0, 20.0)),
            ],
        )
    }

    fn flying(id: u32, x: f64, y: f64, theta: f64, target: u32, level: u32) -> AgentState {
        AgentState {
            id,
            x,
            y,
            theta,
            grounded_at: 0,
            carrying: 0,
            flight_level: level,
            target_passenger: None,
            target_vertiport: Some(target),
        }
    }

    #[test]
    fn single_agent_deposits_unit_mass_until_landing() {
        let map = test_map(2);
        let params = KinematicParams::default();
        let config = LevelConfig::default();
        // 30 km to go at 0.9 km/step: airborne for the whole 20-step window.
        let far = flying(1, 5.0, 20.0, 0.0, 2, 1);
        let stack = build_density_stack(&[far], &map, &params, &config);
        for step in 1..=config.lookahead_steps {
            assert_relative_eq!(stack.total_mass(1, step), 1.0, max_relative = 1e-6);
            assert_relative_eq!(stack.total_mass(2, step), 0.0);
        }

        // 4.0 km to go: 1.3 km out after step 3, so the landing happens on
        // step 4 and the forecast goes dark from there.
        let near = flying(1, 31.0, 20.0, 0.0, 2, 1);
        let stack = build_density_stack(&[near], &map, &params, &config);
        assert_relative_eq!(stack.total_mass(1, 1), 1.0, max_relative = 1e-6);
        assert_relative_eq!(stack.total_mass(1, 3), 1.0, max_relative = 1e-6);
        assert_relative_eq!(stack.total_mass(1, 4), 0.0);
        assert_relative_eq!(stack.total_mass(1, 10), 0.0);
    }

    #[test]
    fn no_flying_agents_means_empty_stack() {
        let map = test_map(2);
        let params = KinematicParams::default();
        let config = LevelConfig::default();
        let grounded = AgentState::parked(1, 1, Point::new(5.0, 20.0));
        let stack = build_density_stack(&[grounded], &map, &params, &config);
        for level in 1..=2 {
            for step in 1..=config.lookahead_steps {
                assert_relative_eq!(stack.total_mass(level, step), 0.0);
            }
        }
    }

    #[test]
    fn straight_flier_kernel_tracks_position() {
        let map = test_map(1);
        let params = KinematicParams::default();
        let config = LevelConfig::default();
        let agent = flying(1, 5.0, 20.0, 0.0, 2, 1);
        let stack = build_density_stack(&[agent], &map, &params, &config);
        for step in [1usize, 5, 10] {
            let expect = Point::new(5.0 + 0.9 * step as f64, 20.0);
            // The mass-weighted centroid of the step grid sits at the
            // predicted position (up to cell quantization).
            let grid = stack.grid(1, step);
            let mut cx = 0.0;
            let mut cy = 0.0;
            let mut m = 0.0;
            for row in 0..stack.cells {
                for col in 0..stack.cells {
                    let w = grid[row * stack.cells + col];
                    cx += w * (col as f64 + 0.5) * stack.cell_size;
                    cy += w * (row as f64 + 0.5) * stack.cell_size;
                    m += w;
                }
            }
            assert!((cx / m - expect.x).abs() <= stack.cell_size);
            assert!((cy / m - expect.y).abs() <= stack.cell_size);
        }
    }

    #[test]
    fn risk_is_zero_on_empty_stack_and_other_levels() {
        let map = test_map(2);
        let params = KinematicParams::default();
        let config = LevelConfig::default();
        let empty = DensityStack::empty(&map, &config);
        let route: Vec<Option<Point>> = (1..=10)
            .map(|s| Some(Point::new(5.0 + 0.9 * s as f64, 20.0)))
            .collect();
        assert_relative_eq!(route_risk(&empty, 1, &route).unwrap(), 0.0);

        // Traffic on level 1 only; the same geometry on level 2 is free.
        let agent = flying(1, 5.0, 20.0, 0.0, 2, 1);
        let stack = build_density_stack(&[agent], &map, &params, &config);
        assert!(route_risk(&stack, 1, &route).unwrap() > 0.0);
        assert_relative_eq!(route_risk(&stack, 2, &route).unwrap(), 0.0);
        assert!(route_risk(&stack, 3, &route).is_err());
    }

    #[test]
    fn crossing_a_kernel_at_its_center_scores_the_peak() {
        let map = test_map(1);
        let params = KinematicParams::default();
        let config = LevelConfig::default();
        let agent = flying(1, 5.0, 20.0, 0.0, 2, 1);
        let stack = build_density_stack(&[agent], &map, &params, &config);
        // Route touching the step-3 kernel center at step 3 only.
        let center = Point::new(5.0 + 0.9 * 3.0, 20.0);
        let mut route = vec![None; 3];
        route[2] = Some(center);
        let risk = route_risk(&stack, 1, &route).unwrap();
        let peak = stack.grid(1, 3).iter().cloned().fold(0.0f64, f64::max);
        assert!(risk > 0.5 * peak, "risk {risk} vs peak {peak}");
        assert!(risk <= peak * 1.01);
    }

    #[test]
    fn selection_prefers_quiet_level_with_low_tie() {
        let map = test_map(2);
        let params = KinematicParams::default();
        let config = LevelConfig::default();
        // Busy level 1: opposing traffic along the corridor.
        let traffic = flying(9, 35.0, 20.0, std::f64::consts::PI, 1, 1);
        let mut stack = build_density_stack(&[traffic], &map, &params, &config);
        let mut candidate = AgentState::parked(1, 1, Point::new(5.0, 20.0));
        candidate.target_vertiport = Some(2);
        match select_flight_level(&candidate, &mut stack, &map, &params, &config).unwrap() {
            LevelDecision::Fly { level, .. } => assert_eq!(level, 2),
            other => panic!("expected Fly, got {other:?}"),
        }

        // Empty stack: all levels tie at zero risk -> lowest level.
        let mut empty = DensityStack::empty(&map, &config);
        match select_flight_level(&candidate, &mut empty, &map, &params, &config).unwrap() {
            LevelDecision::Fly { level, risk } => {
                assert_eq!(level, 1);
                assert_relative_eq!(risk, 0.0);
            }
            other => panic!("expected Fly, got {other:?}"),
        }
    }

    #[test]
    fn saturated_levels_hold_the_aircraft() {
        let map = test_map(1);
        let params = KinematicParams::default();
        let config = LevelConfig::default();
        // Three fliers whose forecast kernels ride the candidate's own
        // route for the whole window. The candidate's first route point is
        // the takeoff itself, so its track runs 0.9 km behind an airborne
        // agent starting at the same spot; place the traffic accordingly.
        let traffic: Vec<AgentState> = (0..3)
            .map(|i| flying(10 + i, 4.1 + 0.3 * i as f64, 20.0, 0.0, 2, 1))
            .collect();
        let mut stack = build_density_stack(&traffic, &map, &params, &config);
        let mut candidate = AgentState::parked(1, 1, Point::new(5.0, 20.0));
        candidate.target_vertiport = Some(2);
        match select_flight_level(&candidate, &mut stack, &map, &params, &config).unwrap() {
            LevelDecision::Hold { min_risk } => assert!(min_risk > config.hold_threshold),
            other => panic!("expected Hold, got {other:?}"),
        }
    }

    #[test]
    fn fly_decisions_deposit_before_the_next_agent() {
        let map = test_map(1);
        let params = KinematicParams::default();
        let config = LevelConfig::default();
        let mut stack = DensityStack::empty(&map, &config);
        let mut candidate = AgentState::parked(1, 1, Point::new(5.0, 20.0));
        candidate.target_vertiport = Some(2);
        let route = predicted_route(&candidate, &map, &params, config.lookahead_steps);
        let before = route_risk(&stack, 1, &route).unwrap();
        assert_relative_eq!(before, 0.0);
        select_flight_level(&candidate, &mut stack, &map, &params, &config).unwrap();
        // An identical follower now sees the leader's deposited trajectory.
        let after = route_risk(&stack, 1, &route).unwrap();
        assert!(after > before);
        // Monotonicity: depositing again can only increase overlap risk.
        stack.deposit_route(1, &route);
        let third = route_risk(&stack, 1, &route).unwrap();
        assert!(third > after);
    }

    #[test]
    fn wider_kernels_have_lower_peaks() {
        let config = LevelConfig::default();
        let mut last_peak = f64::INFINITY;
        for step in 1..=config.lookahead_steps {
            let stencil = kernel_stencil(config.sigma(step));
            let peak = stencil.iter().map(|&(_, _, w)| w).fold(0.0f64, f64::max);
            assert!(peak < last_peak, "peak not decreasing at step {step}");
            let total: f64 = stencil.iter().map(|&(_, _, w)| w).sum();
            assert_relative_eq!(total, 1.0, max_relative = 1e-12);
            last_peak = peak;
        }
    }

    #[test]
    fn level_relabeling_permutes_decisions() {
        let map = test_map(3);
        let params = KinematicParams::default();
        let config = LevelConfig::default();
        let traffic_on = |level: u32| {
            let t = flying(9, 35.0, 20.0, std::f64::consts::PI, 1, level);
            build_density_stack(&[t], &map, &params, &config)
        };
        let mut candidate = AgentState::parked(1, 1, Point::new(5.0, 20.0));
        candidate.target_vertiport = Some(2);
        // Whichever level carries the traffic, the decision avoids it and
        // lands on the lowest quiet level.
        for busy in 1..=3u32 {
            let mut stack = traffic_on(busy);
            match select_flight_level(&candidate, &mut stack, &map, &params, &config).unwrap() {
                LevelDecision::Fly { level, .. } => {
                    assert_ne!(level, busy);
                    let expected = (1..=3).find(|&l| l != busy).unwrap();
                    assert_eq!(level, expected);
                }
                other => panic!("expected Fly, got {other:?}"),
            }
        }
    }

    #[test]
    fn random_baseline_is_uniform_and_never_holds() {
        let mut rng = crate::rng::stream(3, "levels-random");
        assert_eq!(
            random_level_baseline(1, &mut rng),
            LevelDecision::Fly { level: 1, risk: 0.0 }
        );
        let draws = 10_000;
        let mut counts = [0usize; 4];
        for _ in 0..draws {
            match random_level_baseline(4, &mut rng) {
                LevelDecision::Fly { level, .. } => counts[(level - 1) as usize] += 1,
                LevelDecision::Hold { .. } => panic!("baseline held"),
            }
        }
        let p = 0.25;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for (i, &c) in counts.iter().enumerate() {
            assert!(
                (c as f64 - draws as f64 * p).abs() <= 3.0 * sigma,
                "level {} count {c} outside 3 sigma",
                i + 1
            );
        }
    }

    #[test]
    fn hold_threshold_sweep_moves_the_boundary() {
        let map = test_map(1);
        let params = KinematicParams::default();
        let traffic = flying(9, 35.0, 20.0, std::f64::consts::PI, 1, 1);
        let mut candidate = AgentState::parked(1, 1, Point::new(5.0, 20.0));
        candidate.target_vertiport = Some(2);
        let mut flew_at = Vec::new();
        for &threshold in &[0.0, 0.1, 0.5, 2.0, 10.0] {
            let config = LevelConfig {
                hold_threshold: threshold,
                ..Default::default()
            };
            let mut stack = build_density_stack(&[traffic.clone()], &map, &params, &config);
            let decision =
                select_flight_level(&candidate, &mut stack, &map, &params, &config).unwrap();
            flew_at.push(matches!(decision, LevelDecision::Fly { .. }));
        }
        // Once the threshold admits the route, larger thresholds keep it.
        assert!(!flew_at[0], "zero threshold must hold against live traffic");
        assert!(flew_at[4], "huge threshold must clear the route");
        let first_fly = flew_at.iter().position(|&f| f).unwrap();
        assert!(flew_at[first_fly..].iter().all(|&f| f));
    }

    #[test]
    fn exports_round_trip() {
        let map = test_map(1);
        let params = KinematicParams::default();
        let config = LevelConfig::default();
        let agent = flying(1, 5.0, 20.0, 0.0, 2, 1);
        let stack = build_density_stack(&[agent], &map, &params, &config);
        let mut buf = Vec::new();
        stack.export_csv(1, 1, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let rows: Vec<&str> = text.lines().collect();
        assert_eq!(rows.len(), stack.cells);
        let parsed: f64 = rows
            .iter()
            .flat_map(|r| r.split(','))
            .map(|v| v.parse::<f64>().unwrap())
            .sum();
        assert_relative_eq!(parsed, stack.total_mass(1, 1), max_relative = 1e-9);

        let mut bin = Vec::new();
        stack.export_binary(1, 1, &mut bin).unwrap();
        let newline = bin.iter().position(|&b| b == b'\n').unwrap();
        let header: serde_json::Value = serde_json::from_slice(&bin[..newline]).unwrap();
        assert_eq!(header["cells"], stack.cells);
        assert_eq!(bin.len() - newline - 1, stack.cells * stack.cells * 8);
    }
}
