//! Run configuration. Command-line flags override values from an optional
//! TOML key-value file, which override the built-in defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::OperatingRange;
use crate::error::{Error, Result};
use crate::eval::{EvalSettings, DEFAULT_GRID_STEP};
use crate::kalman::{AngleFilterConfig, KalmanConfig};
use crate::predictor::{FilterSettings, PredictorConfig};
use crate::walker_sim::SimConfig;

/// Optional overrides; used for both the config file and parsed flags.
#[derive(Debug, Clone, Default, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub w: Option<f64>,
    pub n_steps: Option<u32>,
    pub fps: Option<f64>,
    pub w_max: Option<f64>,
    pub grid_step: Option<f64>,
    pub q_accel: Option<f64>,
    pub r_pos: Option<f64>,
    pub angle_q: Option<f64>,
    pub angle_r: Option<f64>,
    pub reset_gap_s: Option<f64>,
    pub min_depth: Option<f64>,
    pub max_depth: Option<f64>,
    pub subjects: Option<usize>,
    pub head_lead_s: Option<f64>,
    pub head_overshoot: Option<f64>,
    pub noise_pos: Option<f64>,
    pub noise_yaw: Option<f64>,
    pub duration_s: Option<f64>,
}

macro_rules! merge_fields {
    ($hi:expr, $lo:expr, $($f:ident),*) => {
        Overrides { $($f: $hi.$f.or($lo.$f)),* }
    };
}

impl Overrides {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Fields set in `self` win over fields set in `lower`.
    pub fn over(&self, lower: &Overrides) -> Overrides {
        merge_fields!(
            self, lower, seed, w, n_steps, fps, w_max, grid_step, q_accel, r_pos, angle_q, angle_r,
            reset_gap_s, min_depth, max_depth, subjects, head_lead_s, head_overshoot, noise_pos,
            noise_yaw, duration_s
        )
    }
}

pub const DEFAULT_SUBJECTS: usize = 14;
pub const DEFAULT_SEED: u64 = 20;

/// Fully resolved settings, echoed into every report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub seed: u64,
    pub fps: f64,
    pub subjects: usize,
    pub grid_step: f64,
    pub predictor: PredictorConfig,
    pub filters: FilterSettings,
    pub range: OperatingRange,
    pub sim: SimConfig,
}

impl RunConfig {
    pub fn resolve(o: &Overrides) -> Result<Self> {
        let fps = o.fps.unwrap_or(30.0);
        let seed = o.seed.unwrap_or(DEFAULT_SEED);
        let kd = KalmanConfig::with_fps(fps);
        let ad = AngleFilterConfig::default();
        let pd = PredictorConfig::default();
        let rd = OperatingRange::default();
        let sd = SimConfig::default();
        let w_max = o.w_max.unwrap_or(pd.w_max);
        let predictor = PredictorConfig {
            w: o.w.unwrap_or(pd.w.min(w_max)),
            n_steps: o.n_steps.unwrap_or(pd.n_steps),
            w_max,
        };
        predictor.validate()?;
        let kalman = KalmanConfig {
            dt: 1.0 / fps,
            q_accel: o.q_accel.unwrap_or(kd.q_accel),
            r_pos: o.r_pos.unwrap_or(kd.r_pos),
        };
        kalman.validate()?;
        let angle = AngleFilterConfig {
            q: o.angle_q.unwrap_or(ad.q),
            r: o.angle_r.unwrap_or(ad.r),
            ..ad
        };
        if !(angle.q > 0.0 && angle.r > 0.0) {
            return Err(Error::Config("angle filter q and r must be > 0".into()));
        }
        let reset_gap_s = o.reset_gap_s.unwrap_or(FilterSettings::default().reset_gap_s);
        if !(reset_gap_s > 0.0) {
            return Err(Error::Config("reset_gap_s must be > 0".into()));
        }
        let range = OperatingRange::new(
            o.min_depth.unwrap_or(rd.min_depth),
            o.max_depth.unwrap_or(rd.max_depth),
        )?;
        let sim = SimConfig {
            head_lead_s: o.head_lead_s.unwrap_or(sd.head_lead_s),
            head_overshoot: o.head_overshoot.unwrap_or(sd.head_overshoot),
            noise_pos: o.noise_pos.unwrap_or(sd.noise_pos),
            noise_yaw: o.noise_yaw.unwrap_or(sd.noise_yaw),
            fps,
            duration_s: o.duration_s.unwrap_or(sd.duration_s),
            seed,
            ..sd
        };
        sim.validate()?;
        let grid_step = o.grid_step.unwrap_or(DEFAULT_GRID_STEP);
        if !(grid_step > 0.0 && grid_step.is_finite()) {
            return Err(Error::Config("grid_step must be > 0".into()));
        }
        Ok(RunConfig {
            seed,
            fps,
            subjects: o.subjects.unwrap_or(DEFAULT_SUBJECTS),
            grid_step,
            predictor,
            filters: FilterSettings {
                kalman,
                angle,
                reset_gap_s,
            },
            range,
            sim,
        })
    }

    pub fn eval_settings(&self) -> EvalSettings {
        EvalSettings {
            predictor: self.predictor,
            filters: self.filters,
            range: self.range,
        }
    }

    pub fn grid(&self) -> Result<Vec<f64>> {
        crate::eval::default_grid(self.predictor.w_max, self.grid_step)
    }
}
