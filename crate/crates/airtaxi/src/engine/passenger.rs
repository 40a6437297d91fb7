//! Passenger lifecycle records.

use crate::world::{PassengerId, VertiportId};
use serde::{Deserialize, Serialize};

/// One passenger from spawn to delivery. Timestamps are simulation seconds
/// and stay unset until the corresponding event happens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Passenger {
    pub id: PassengerId,
    pub origin: VertiportId,
    pub destination: VertiportId,
    pub spawn_time: f64,
    pub board_time: Option<f64>,
    /// Time the carrying agent took off after boarding; start of the
    /// realized trip for the trip-ratio metric.
    pub takeoff_time: Option<f64>,
    pub deliver_time: Option<f64>,
}

impl Passenger {
    pub fn new(
        id: PassengerId,
        origin: VertiportId,
        destination: VertiportId,
        spawn_time: f64,
    ) -> Self {
        debug_assert_ne!(origin, destination);
        Passenger {
            id,
            origin,
            destination,
            spawn_time,
            board_time: None,
            takeoff_time: None,
            deliver_time: None,
        }
    }

    pub fn is_waiting(&self) -> bool {
        self.board_time.is_none()
    }

    pub fn is_delivered(&self) -> bool {
        self.deliver_time.is_some()
    }
}
