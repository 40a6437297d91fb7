//! Simulation traces: per-timestep records with events and counters,
//! serialized as JSON lines (one header object, then one object per step).

use crate::mapgen::WorldMap;
use crate::trajectory::SearchDiagnostics;
use crate::world::{AgentId, PassengerId, VertiportId};
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Everything that can happen during one timestep, in emission order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Spawn {
        passenger: PassengerId,
        origin: VertiportId,
        destination: VertiportId,
    },
    Hold {
        agent: AgentId,
    },
    Takeoff {
        agent: AgentId,
        level: u32,
        carrying: PassengerId,
    },
    Land {
        agent: AgentId,
        vertiport: VertiportId,
    },
    Deliver {
        agent: AgentId,
        passenger: PassengerId,
    },
    Board {
        agent: AgentId,
        passenger: PassengerId,
    },
    LosEnter {
        a: AgentId,
        b: AgentId,
    },
    NmacEnter {
        a: AgentId,
        b: AgentId,
    },
}

/// Cumulative totals carried on every step record.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Counters {
    pub spawned: usize,
    pub delivered: usize,
    /// LOS entry events (a pair separating and re-entering counts again).
    pub los_events: usize,
    pub nmac_events: usize,
    /// Pair-timesteps spent in violation; the basis of the reported rates.
    pub los_pair_steps: usize,
    pub nmac_pair_steps: usize,
    pub holds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSnapshot {
    pub id: AgentId,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub grounded_at: VertiportId,
    pub carrying: PassengerId,
    pub flight_level: u32,
    pub target: Option<VertiportId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    /// Simulation time at the end of this step, seconds.
    pub time: f64,
    /// Per-agent state; empty when snapshot recording is off.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub agents: Vec<AgentSnapshot>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<Event>,
    pub counters: Counters,
    /// UCT root diagnostics; present only for MCTS planning steps that
    /// actually searched.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub search: Vec<SearchDiagnostics>,
}

/// Static context for a run, written as the first JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub schema_version: u32,
    pub build: String,
    /// Passengers the run must deliver to terminate normally.
    pub passenger_target: usize,
    /// Full resolved simulation configuration.
    pub config: serde_json::Value,
    pub map: WorldMap,
}

/// A complete run: header plus one record per executed step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub header: TraceHeader,
    pub steps: Vec<StepRecord>,
}

impl SimTrace {
    /// A run is truncated when it stopped before delivering its target.
    pub fn truncated(&self) -> bool {
        self.steps
            .last()
            .map(|s| s.counters.delivered < self.header.passenger_target)
            .unwrap_or(true)
    }
}

impl SimTrace {
    /// Serialize as JSON lines: header first, then each step.
    pub fn write_jsonl<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        serde_json::to_writer(&mut *out, &self.header)?;
        out.write_all(b"\n")?;
        for step in &self.steps {
            serde_json::to_writer(&mut *out, step)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("trace is valid utf-8")
    }

    /// Parse a JSON-lines trace (inverse of [`SimTrace::write_jsonl`]).
    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: TraceHeader =
            serde_json::from_str(lines.next().unwrap_or("null"))?;
        let mut steps = Vec::new();
        for line in lines {
            steps.push(serde_json::from_str(line)?);
        }
        Ok(SimTrace { header, steps })
    }
}
