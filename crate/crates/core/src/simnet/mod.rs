//! Agent-based epidemic simulator with the tracing protocol in the loop.

mod calibrate;
mod config;
mod metrics;
mod world;

use rand::Rng;
use thiserror::Error;

use crate::ident::DistanceClass;

pub use calibrate::{calibrate_p_transmit, estimate_r0, probe_seeds, Calibration};
pub use config::{FieldError, ScenarioConfig, TracedCategories};
pub use metrics::{estimate_r_effective, estimate_r_effective_report, DayMetrics, MetricsReport, METRICS_CSV_HEADER};
pub use world::{Agent, Device, DeviceCase, HealthState, ScriptedContact, Trace, World};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid configuration: {}", .0.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidConfig(Vec<FieldError>),
    #[error("calibration did not converge: best p={best_p} gave R0={best_r0}, target {target}")]
    NoConvergence { target: f64, best_p: f64, best_r0: f64 },
    #[error("insufficient data: have {have} days, need {need}")]
    InsufficientData { have: usize, need: usize },
    #[error("metrics: {0}")]
    Metrics(String),
}

/// Exposure of one contact, in ticks per distance class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ContactEvent {
    pub near: u32,
    pub mid: u32,
    pub far: u32,
}

impl ContactEvent {
    pub fn single(class: DistanceClass, ticks: u32) -> Self {
        let mut e = ContactEvent::default();
        match class {
            DistanceClass::Near => e.near = ticks,
            DistanceClass::Mid => e.mid = ticks,
            DistanceClass::Far => e.far = ticks,
        }
        e
    }

    /// Near ticks count fully, mid ticks half, far ticks not at all.
    pub fn weight(&self) -> f64 {
        f64::from(self.near) + 0.5 * f64::from(self.mid)
    }
}

/// Probability that `event` transmits, with `p` per weighted tick.
pub fn infection_probability(event: &ContactEvent, p: f64) -> f64 {
    let p = p.clamp(0.0, 1.0);
    1.0 - (1.0 - p).powf(event.weight())
}

pub fn transmit<R: Rng + ?Sized>(event: &ContactEvent, rng: &mut R, p: f64) -> bool {
    let q = infection_probability(event, p);
    q > 0.0 && rng.random::<f64>() < q
}

pub fn run(config: &ScenarioConfig) -> Result<MetricsReport, SimError> {
    let mut world = World::new(config, config.seed)?;
    for _ in 0..config.days {
        world.step_day();
    }
    Ok(world.report())
}

/// Like [`run`], also returning the event log and mailbox trace.
pub fn run_traced(config: &ScenarioConfig) -> Result<(MetricsReport, Trace), SimError> {
    let mut world = World::new(config, config.seed)?.with_trace();
    for _ in 0..config.days {
        world.step_day();
    }
    let report = world.report();
    Ok((report, world.into_trace().unwrap_or_default()))
}
