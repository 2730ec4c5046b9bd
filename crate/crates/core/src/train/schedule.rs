//! Progressive densification regulation: training starts at reduced
//! resolution with sparse, high-threshold densification and anneals to the
//! standard settings.

use std::f64::consts::PI;

use super::config::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PdrState {
    pub resolution_scale: f64,
    pub densify_interval: usize,
    pub threshold_multiplier: f64,
}

impl PdrState {
    /// Settings used when regulation is disabled.
    pub fn standard(cfg: &TrainConfig) -> Self {
        Self { resolution_scale: 1.0, densify_interval: cfg.final_densify_interval, threshold_multiplier: 1.0 }
    }
}

/// Linear resolution ramp; half-cosine interval and threshold anneal.
pub fn pdr_schedule(cfg: &TrainConfig, iteration: usize) -> PdrState {
    let ramp = if cfg.resolution_ramp_end == 0 { 1.0 } else { (iteration as f64 / cfg.resolution_ramp_end as f64).min(1.0) };
    let resolution_scale = cfg.initial_resolution_scale + (1.0 - cfg.initial_resolution_scale) * ramp;
    let cosine = if iteration >= cfg.schedule_end {
        0.0
    } else {
        (1.0 + (PI * iteration as f64 / cfg.schedule_end as f64).cos()) / 2.0
    };
    let (i0, i1) = (cfg.initial_densify_interval as f64, cfg.final_densify_interval as f64);
    PdrState {
        resolution_scale,
        densify_interval: (i1 + (i0 - i1) * cosine).round() as usize,
        threshold_multiplier: 1.0 + (cfg.initial_threshold_scale - 1.0) * cosine,
    }
}
