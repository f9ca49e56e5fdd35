use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::device::Sensor;
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", content = "until", rename_all = "snake_case")]
pub enum SensorPolicy {
    Open,
    Blocked,
    TempEnabled(SimTime),
    /// Blocked, and activation requests are refused without asking the user.
    Discarding(SimTime),
}

impl fmt::Display for SensorPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SensorPolicy::Open => f.write_str("open"),
            SensorPolicy::Blocked => f.write_str("blocked"),
            SensorPolicy::TempEnabled(t) => write!(f, "temp_enabled(until={})", t.millis()),
            SensorPolicy::Discarding(t) => write!(f, "discarding(until={})", t.millis()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateDecision {
    Deliver,
    Drop,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SensorTable {
    policies: BTreeMap<Sensor, SensorPolicy>,
}

impl Default for SensorTable {
    fn default() -> Self {
        Self {
            policies: Sensor::ALL
                .into_iter()
                .map(|s| (s, SensorPolicy::Open))
                .collect(),
        }
    }
}

impl SensorTable {
    pub fn get(&self, sensor: Sensor) -> SensorPolicy {
        self.policies[&sensor]
    }

    pub fn set(&mut self, sensor: Sensor, policy: SensorPolicy) {
        self.policies.insert(sensor, policy);
    }

    pub fn iter(&self) -> impl Iterator<Item = (Sensor, SensorPolicy)> + '_ {
        self.policies.iter().map(|(s, p)| (*s, *p))
    }

    /// Reverts timed policies whose window has closed to `Blocked`.
    /// Returns the sensors that changed.
    pub fn expire(&mut self, now: SimTime) -> Vec<Sensor> {
        let mut changed = Vec::new();
        for (sensor, policy) in self.policies.iter_mut() {
            if let SensorPolicy::TempEnabled(until) | SensorPolicy::Discarding(until) = *policy {
                if until <= now {
                    *policy = SensorPolicy::Blocked;
                    changed.push(*sensor);
                }
            }
        }
        changed
    }

    pub fn gate(&self, sensor: Sensor, now: SimTime) -> GateDecision {
        match self.get(sensor) {
            SensorPolicy::Open => GateDecision::Deliver,
            SensorPolicy::TempEnabled(until) if until > now => GateDecision::Deliver,
            _ => GateDecision::Drop,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::{HOUR, MINUTE};

    #[test]
    fn gate_follows_policy() {
        let mut t = SensorTable::default();
        assert_eq!(t.gate(Sensor::Gps, SimTime(0)), GateDecision::Deliver);
        t.set(Sensor::Mic, SensorPolicy::Blocked);
        assert_eq!(t.gate(Sensor::Mic, SimTime(0)), GateDecision::Drop);
        t.set(Sensor::Camera, SensorPolicy::Discarding(SimTime(HOUR)));
        assert_eq!(t.gate(Sensor::Camera, SimTime(0)), GateDecision::Drop);
    }

    #[test]
    fn temp_enable_expires_back_to_blocked() {
        let now = SimTime(1000);
        let mut t = SensorTable::default();
        t.set(Sensor::Mic, SensorPolicy::TempEnabled(now + HOUR));
        assert_eq!(
            t.gate(Sensor::Mic, now + 59 * MINUTE),
            GateDecision::Deliver
        );
        assert_eq!(t.gate(Sensor::Mic, now + 61 * MINUTE), GateDecision::Drop);
        assert_eq!(t.expire(now + 61 * MINUTE), vec![Sensor::Mic]);
        assert_eq!(t.get(Sensor::Mic), SensorPolicy::Blocked);
    }
}
