use super::AppCtx;
use crate::device::Sensor;
use crate::gateway::{ApiCall, ApiResult};

/// An app that wants sensor access, e.g. navigation.
#[derive(Debug, Clone, Default)]
pub struct SensorApp {
    pub readings: u32,
}

impl SensorApp {
    pub fn request(&mut self, ctx: &mut AppCtx<'_>, sensor: Sensor) {
        match ctx.api(ApiCall::EnableSensor { sensor }) {
            Ok(r) => ctx.log("enable_requested", format!("{sensor}: {}", r.status)),
            Err(e) => ctx.log("gateway_error", e.to_string()),
        }
    }

    pub fn read(&mut self, ctx: &mut AppCtx<'_>, sensor: Sensor) {
        let now = ctx.now;
        match ctx.device.sensor_signal(now, sensor, ctx.app) {
            Some(_) => {
                self.readings += 1;
                ctx.log("reading", sensor.to_string());
            }
            None => ctx.log("no_reading", sensor.to_string()),
        }
    }

    pub fn on_result(&mut self, ctx: &mut AppCtx<'_>, result: &ApiResult) {
        ctx.log(
            "enable_decision",
            format!("request {}: {}", result.request_id, result.status),
        );
    }
}
