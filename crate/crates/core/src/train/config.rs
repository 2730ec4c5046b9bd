//! Training hyperparameters and their flat `key = value` file form.

use crate::error::{Error, Result};
use crate::train::Supervision;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub total_iterations: usize,
    /// Last iteration of the reconstruction + semantic phase.
    pub phase_switch: usize,
    /// D-SSIM weight in the reconstruction loss.
    pub lambda: f64,

    /// Position rates are multiplied by the scene extent and decay exponentially over the run.
    pub lr_position: f64,
    pub lr_position_final: f64,
    pub lr_scale: f64,
    pub lr_rotation: f64,
    pub lr_opacity: f64,
    pub lr_color: f64,
    pub lr_semantic: f64,
    pub lr_decoder: f64,

    pub initial_resolution_scale: f64,
    pub resolution_ramp_end: usize,
    pub initial_densify_interval: usize,
    pub final_densify_interval: usize,
    pub initial_threshold_scale: f64,
    pub schedule_end: usize,

    pub grad_threshold: f64,
    pub opacity_prune: f64,
    /// Clone instead of split below this fraction of the scene extent.
    pub percent_dense: f64,
    pub densify_from: usize,
    pub densify_until: usize,

    /// Region-pooled labels when set, per-pixel labels otherwise.
    pub enable_sac: bool,
    pub enable_3dcr_2d: bool,
    pub enable_3dcr_3d: bool,
    pub enable_pdr: bool,
    pub weight_3d: f64,
    /// Let semantic losses update geometry and opacity, not just semantic vectors.
    pub semantic_moves_geometry: bool,

    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_iterations: 30_000,
            phase_switch: 15_000,
            lambda: 0.2,
            lr_position: 1.6e-4,
            lr_position_final: 1.6e-6,
            lr_scale: 5e-3,
            lr_rotation: 1e-3,
            lr_opacity: 5e-2,
            lr_color: 2.5e-3,
            lr_semantic: 2.5e-3,
            lr_decoder: 5e-4,
            initial_resolution_scale: 0.5,
            resolution_ramp_end: 7_000,
            initial_densify_interval: 200,
            final_densify_interval: 100,
            initial_threshold_scale: 1.5,
            schedule_end: 4_000,
            grad_threshold: 2e-4,
            opacity_prune: 5e-3,
            percent_dense: 0.01,
            densify_from: 500,
            densify_until: 15_000,
            enable_sac: true,
            enable_3dcr_2d: true,
            enable_3dcr_3d: true,
            enable_pdr: true,
            weight_3d: 1.0,
            semantic_moves_geometry: false,
            seed: 0,
        }
    }
}

macro_rules! config_fields {
    ($m:ident) => {
        $m!(
            total_iterations, phase_switch, lambda, lr_position, lr_position_final, lr_scale, lr_rotation,
            lr_opacity, lr_color, lr_semantic, lr_decoder, initial_resolution_scale, resolution_ramp_end,
            initial_densify_interval, final_densify_interval, initial_threshold_scale, schedule_end,
            grad_threshold, opacity_prune, percent_dense, densify_from, densify_until, enable_sac,
            enable_3dcr_2d, enable_3dcr_3d, enable_pdr, weight_3d, semantic_moves_geometry, seed
        )
    };
}

impl TrainConfig {
    pub fn supervision(&self) -> Supervision {
        if self.enable_sac {
            Supervision::Region
        } else {
            Supervision::PerPixel
        }
    }

    pub fn consistency_enabled(&self) -> bool {
        self.enable_3dcr_2d || self.enable_3dcr_3d
    }

    pub fn validate(&self) -> Result<()> {
        if self.phase_switch == 0 || self.phase_switch > self.total_iterations {
            return Err(Error::invalid(format!(
                "phase_switch {} must lie in 1..={}",
                self.phase_switch, self.total_iterations
            )));
        }
        let rates = [
            self.lr_position,
            self.lr_position_final,
            self.lr_scale,
            self.lr_rotation,
            self.lr_opacity,
            self.lr_color,
            self.lr_semantic,
            self.lr_decoder,
        ];
        if rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::invalid("learning rates must be positive"));
        }
        if !(self.initial_resolution_scale > 0.0 && self.initial_resolution_scale <= 1.0) {
            return Err(Error::invalid("initial_resolution_scale must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::invalid("lambda must lie in [0, 1]"));
        }
        if self.final_densify_interval == 0 || self.initial_densify_interval < self.final_densify_interval {
            return Err(Error::invalid("densify intervals must be positive and nonincreasing"));
        }
        if self.initial_threshold_scale < 1.0 {
            return Err(Error::invalid("initial_threshold_scale must be at least 1"));
        }
        if !(self.weight_3d.is_finite() && self.weight_3d >= 0.0) {
            return Err(Error::invalid("weight_3d must be nonnegative"));
        }
        Ok(())
    }

    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse().map_err(|_| Error::invalid(format!("bad value {value:?} for {key}")))
        }
        macro_rules! assign {
            ($($field:ident),*) => {
                match key {
                    $(stringify!($field) => self.$field = parse(key, value)?,)*
                    _ => return Err(Error::UnknownId(format!("config key {key:?}"))),
                }
            };
        }
        config_fields!(assign);
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("line {}: expected key = value", n + 1)))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        macro_rules! emit {
            ($($field:ident),*) => {
                $(out.push_str(&format!("{} = {}\n", stringify!($field), self.$field));)*
            };
        }
        config_fields!(emit);
        out
    }
}
