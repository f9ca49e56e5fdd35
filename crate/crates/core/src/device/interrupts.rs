use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(
    Debug,
    Clone,
    Copy,
    PartialEq,
    Eq,
    Hash,
    PartialOrd,
    Ord,
    Serialize,
    Deserialize,
    schemars::JsonSchema,
)]
#[serde(rename_all = "snake_case")]
pub enum Sensor {
    Mic,
    Camera,
    Gps,
}

impl Sensor {
    pub const ALL: [Sensor; 3] = [Sensor::Mic, Sensor::Camera, Sensor::Gps];

    pub fn as_str(self) -> &'static str {
        match self {
            Sensor::Mic => "mic",
            Sensor::Camera => "camera",
            Sensor::Gps => "gps",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown sensor `{0}`")]
pub struct UnknownSensor(pub String);

impl FromStr for Sensor {
    type Err = UnknownSensor;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Sensor::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| UnknownSensor(s.to_string()))
    }
}

impl fmt::Display for Sensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Interrupt sources on the modeled device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Peripheral {
    Sak,
    Led,
    Touch,
    Sensor(Sensor),
}

/// The peripherals whose routing may change at run time. SAK and LED have no
/// variant here, so no call can remap them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Remappable {
    Touch,
    Sensor(Sensor),
}

impl From<Remappable> for Peripheral {
    fn from(r: Remappable) -> Self {
        match r {
            Remappable::Touch => Peripheral::Touch,
            Remappable::Sensor(s) => Peripheral::Sensor(s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteTarget {
    #[serde(rename = "sworld")]
    SWorld,
    #[serde(rename = "nworld")]
    NWorld,
    Masked,
}

/// Normal-world touch bookkeeping saved while secure-mode owns the screen.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct TouchState {
    pub focus: Option<String>,
    pub gesture_in_progress: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InterruptController {
    touch: RouteTarget,
    sensors: BTreeMap<Sensor, RouteTarget>,
    saved_touch: Option<(RouteTarget, TouchState)>,
}

impl Default for InterruptController {
    /// Boot defaults: the secure world owns only the SAK and the LED.
    fn default() -> Self {
        Self {
            touch: RouteTarget::NWorld,
            sensors: Sensor::ALL
                .into_iter()
                .map(|s| (s, RouteTarget::NWorld))
                .collect(),
            saved_touch: None,
        }
    }
}

impl InterruptController {
    pub fn route(&self, source: Peripheral) -> RouteTarget {
        match source {
            Peripheral::Sak | Peripheral::Led => RouteTarget::SWorld,
            Peripheral::Touch => self.touch,
            Peripheral::Sensor(s) => self.sensors[&s],
        }
    }

    /// Returns the previous target.
    pub fn remap(&mut self, source: Remappable, target: RouteTarget) -> RouteTarget {
        let slot = match source {
            Remappable::Touch => &mut self.touch,
            Remappable::Sensor(s) => self.sensors.get_mut(&s).expect("all sensors routed"),
        };
        std::mem::replace(slot, target)
    }

    /// Claims the touch screen for the secure world, saving the normal
    /// world's route and touch state. Claiming twice keeps the first save.
    pub fn claim_touch(&mut self, nworld_state: TouchState) {
        if self.saved_touch.is_none() {
            let prev = self.remap(Remappable::Touch, RouteTarget::SWorld);
            self.saved_touch = Some((prev, nworld_state));
        }
    }

    /// Gives the touch screen back and returns the saved touch state.
    pub fn release_touch(&mut self) -> Option<TouchState> {
        let (prev, state) = self.saved_touch.take()?;
        self.remap(Remappable::Touch, prev);
        Some(state)
    }

    pub fn touch_claimed(&self) -> bool {
        self.saved_touch.is_some()
    }
}
