//! Aggregate safety and efficiency statistics from a trace.

use super::trace::{Event, SimTrace};
use crate::world::PassengerId;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("trace has no steps")]
    EmptyTrace,
    #[error("trace is inconsistent: {0}")]
    Inconsistent(String),
}

/// One passenger's reconstructed lifecycle.
#[derive(Debug, Clone, PartialEq)]
pub struct TripRecord {
    pub passenger: PassengerId,
    pub origin: u32,
    pub destination: u32,
    pub spawn: f64,
    pub board: Option<f64>,
    pub boarded_by: Option<u32>,
    /// Takeoff of the carrying agent after boarding.
    pub takeoff: Option<f64>,
    pub deliver: Option<f64>,
}

/// Rebuild per-passenger lifecycles from the event stream.
pub fn trip_records(trace: &SimTrace) -> Result<Vec<TripRecord>, MetricsError> {
    let mut passengers: BTreeMap<PassengerId, TripRecord> = BTreeMap::new();
    for step in &trace.steps {
        for event in &step.events {
            match *event {
                Event::Spawn {
                    passenger,
                    origin,
                    destination,
                } => {
                    passengers.insert(
                        passenger,
                        TripRecord {
                            passenger,
                            origin,
                            destination,
                            spawn: step.time,
                            board: None,
                            boarded_by: None,
                            takeoff: None,
                            deliver: None,
                        },
                    );
                }
                Event::Board { agent, passenger } => {
                    let p = passengers.get_mut(&passenger).ok_or_else(|| {
                        MetricsError::Inconsistent(format!("board before spawn: {passenger}"))
                    })?;
                    p.board = Some(step.time);
                    p.boarded_by = Some(agent);
                }
                Event::Takeoff {
                    agent, carrying, ..
                } => {
                    if carrying != 0 {
                        if let Some(p) = passengers.get_mut(&carrying) {
                            if p.boarded_by == Some(agent) && p.takeoff.is_none() {
                                p.takeoff = Some(step.time);
                            }
                        }
                    }
                }
                Event::Deliver { passenger, .. } => {
                    let p = passengers.get_mut(&passenger).ok_or_else(|| {
                        MetricsError::Inconsistent(format!("deliver before spawn: {passenger}"))
                    })?;
                    p.deliver = Some(step.time);
                }
                _ => {}
            }
        }
    }
    Ok(passengers.into_values().collect())
}

/// Realized-over-minimum flight time for every delivered passenger.
pub fn per_trip_ratios(trace: &SimTrace) -> Result<Vec<(PassengerId, f64)>, MetricsError> {
    let speed = cruise_speed(trace)?;
    let mut out = Vec::new();
    for p in trip_records(trace)? {
        if let (Some(takeoff), Some(deliver)) = (p.takeoff, p.deliver) {
            let (o, d) = endpoints(trace, p.origin, p.destination)?;
            let min_time = o.dist(d) / speed;
            if min_time > 0.0 {
                out.push((p.passenger, (deliver - takeoff) / min_time));
            }
        }
    }
    Ok(out)
}

fn cruise_speed(trace: &SimTrace) -> Result<f64, MetricsError> {
    trace
        .header
        .config
        .get("kinematics")
        .and_then(|k| k.get("v"))
        .and_then(|v| v.as_f64())
        .ok_or_else(|| MetricsError::Inconsistent("config lacks kinematics.v".into()))
}

fn endpoints(
    trace: &SimTrace,
    origin: u32,
    destination: u32,
) -> Result<(crate::geom::Point, crate::geom::Point), MetricsError> {
    let o = trace
        .header
        .map
        .vertiport(origin)
        .ok_or_else(|| MetricsError::Inconsistent(format!("unknown origin {origin}")))?;
    let d = trace
        .header
        .map
        .vertiport(destination)
        .ok_or_else(|| MetricsError::Inconsistent(format!("unknown destination {destination}")))?;
    Ok((o.pos(), d.pos()))
}

/// Run-level summary, rates normalized per hour and per agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub schema_version: u32,
    pub build: String,
    /// Pair-timesteps in NMAC per hour per agent.
    pub nmac_per_hr_agent: f64,
    /// Pair-timesteps in LOS per hour per agent.
    pub los_per_hr_agent: f64,
    /// Distinct NMAC entry events per hour per agent.
    pub nmac_entries_per_hr_agent: f64,
    pub los_entries_per_hr_agent: f64,
    pub passengers_per_hr_agent: f64,
    pub avg_wait_s: f64,
    pub max_wait_s: f64,
    pub trip_ratio_mean: f64,
    pub sim_duration_s: f64,
    pub spawned: usize,
    pub delivered: usize,
    pub hold_events: usize,
    pub truncated: bool,
    /// Full resolved configuration echoed from the trace header.
    pub config: serde_json::Value,
}

impl MetricsSummary {
    /// Fixed column order shared by the CSV header and row.
    pub fn csv_header() -> &'static str {
        "nmac_per_hr_agent,los_per_hr_agent,nmac_entries_per_hr_agent,los_entries_per_hr_agent,passengers_per_hr_agent,avg_wait_s,max_wait_s,trip_ratio_mean,sim_duration_s,spawned,delivered,hold_events,truncated"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.nmac_per_hr_agent,
            self.los_per_hr_agent,
            self.nmac_entries_per_hr_agent,
            self.los_entries_per_hr_agent,
            self.passengers_per_hr_agent,
            self.avg_wait_s,
            self.max_wait_s,
            self.trip_ratio_mean,
            self.sim_duration_s,
            self.spawned,
            self.delivered,
            self.hold_events,
            self.truncated,
        )
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "{}", Self::csv_header())?;
        writeln!(out, "{}", self.csv_row())
    }
}

/// Compute the summary from a trace.
///
/// Wait time is spawn-to-board; passengers still waiting when the run ends
/// are censored at the end time (only possible under truncation). The trip
/// ratio compares boarding-takeoff-to-delivery time against the straight
/// line flight time between the origin and destination vertiports.
pub fn compute_metrics(trace: &SimTrace, n_agents: usize) -> Result<MetricsSummary, MetricsError> {
    let last = trace.steps.last().ok_or(MetricsError::EmptyTrace)?;
    let duration_s = last.time;
    let duration_hr = duration_s / 3600.0;
    if duration_hr <= 0.0 || n_agents == 0 {
        return Err(MetricsError::Inconsistent(
            "zero duration or empty fleet".into(),
        ));
    }

    let records = trip_records(trace)?;
    let mut waits: Vec<f64> = Vec::with_capacity(records.len());
    for p in &records {
        match p.board {
            Some(board) => waits.push(board - p.spawn),
            None => waits.push(duration_s - p.spawn),
        }
    }
    let ratios: Vec<f64> = per_trip_ratios(trace)?.into_iter().map(|(_, r)| r).collect();

    let avg_wait = if waits.is_empty() {
        0.0
    } else {
        waits.iter().sum::<f64>() / waits.len() as f64
    };
    let max_wait = waits.iter().cloned().fold(0.0f64, f64::max);
    let trip_ratio_mean = if ratios.is_empty() {
        0.0
    } else {
        ratios.iter().sum::<f64>() / ratios.len() as f64
    };

    let per_hr_agent = duration_hr * n_agents as f64;
    Ok(MetricsSummary {
        schema_version: crate::SCHEMA_VERSION,
        build: crate::BUILD_ID.to_string(),
        nmac_per_hr_agent: last.counters.nmac_pair_steps as f64 / per_hr_agent,
        los_per_hr_agent: last.counters.los_pair_steps as f64 / per_hr_agent,
        nmac_entries_per_hr_agent: last.counters.nmac_events as f64 / per_hr_agent,
        los_entries_per_hr_agent: last.counters.los_events as f64 / per_hr_agent,
        passengers_per_hr_agent: last.counters.delivered as f64 / per_hr_agent,
        avg_wait_s: avg_wait,
        max_wait_s: max_wait,
        trip_ratio_mean,
        sim_duration_s: duration_s,
        spawned: last.counters.spawned,
        delivered: last.counters.delivered,
        hold_events: last.counters.holds,
        truncated: trace.truncated(),
        config: trace.header.config.clone(),
    })
}
