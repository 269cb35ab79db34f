//! Head-pose-conditioned N-step prediction.
//!
//! The one-step Kalman displacement `d_k = F x̂ − x̂` is rotated about the
//! vertical axis by the filtered head-pose angle θ, blended with the
//! unrotated displacement by a scalar weight `w`, and extrapolated linearly
//! over the horizon: `x̂ + N·((1−w)·d_k + w·R(θ)·d_k)`.

use serde::{Deserialize, Serialize};

use crate::dataset::Frame;
use crate::error::{Error, Result};
use crate::geometry::{relative_head_yaw, rotate_yaw, Vec3, YawAngle};
use crate::kalman::{
    baseline_predict_n, init_state, predict_step, update_step, AngleFilter, AngleFilterConfig,
    CvModel, KalmanConfig, StateEstimate, Vector6,
};

/// Default horizon: 15 steps, i.e. 500 ms at 30 fps.
pub const DEFAULT_N_STEPS: u32 = 15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    /// Blend weight between the Kalman displacement and its rotated copy.
    pub w: f64,
    /// Horizon in steps.
    pub n_steps: u32,
    /// Upper bound accepted for `w`.
    pub w_max: f64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            w: 1.0,
            n_steps: DEFAULT_N_STEPS,
            w_max: 1.0,
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.w_max.is_finite() && self.w_max >= 0.0) {
            return Err(Error::Config(format!("w_max must be finite and >= 0, got {}", self.w_max)));
        }
        if !(self.w >= 0.0 && self.w <= self.w_max) {
            return Err(Error::Config(format!(
                "w = {} outside [0, {}]",
                self.w, self.w_max
            )));
        }
        if self.n_steps == 0 {
            return Err(Error::Config("n_steps must be >= 1".into()));
        }
        Ok(())
    }

    pub fn with_w(self, w: f64) -> Self {
        PredictorConfig { w, ..self }
    }
}

/// Positions emitted for one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionTriple {
    /// (a) filtered position at the current frame.
    pub estimated: Vec3,
    /// (b) constant-velocity extrapolation over the horizon.
    pub baseline: Vec3,
    /// (c) head-pose-conditioned extrapolation over the horizon.
    pub proposed: Vec3,
}

pub fn displacement_kalman(s: &StateEstimate, model: &CvModel) -> Vector6 {
    model.displacement(&s.x_hat)
}

/// Applies the yaw rotation block-diagonally to the position and velocity
/// halves of a displacement.
pub fn displacement_head(d_kalman: &Vector6, theta: YawAngle) -> Vector6 {
    let p = rotate_yaw(Vec3::new(d_kalman[0], d_kalman[1], d_kalman[2]), theta);
    let v = rotate_yaw(Vec3::new(d_kalman[3], d_kalman[4], d_kalman[5]), theta);
    Vector6::new(p.x, p.y, p.z, v.x, v.y, v.z)
}

/// `(1−w)·d_k + w·d_h`, evaluated as `d_k + w·(d_h − d_k)` so that `w = 0`
/// and `d_h = d_k` both return `d_k` bit for bit.
pub fn blend(d_kalman: &Vector6, d_head: &Vector6, w: f64) -> Vector6 {
    let mut out = *d_kalman;
    for i in 0..6 {
        out[i] += w * (d_head[i] - d_kalman[i]);
    }
    out
}

pub fn predict_n_steps(
    s: &StateEstimate,
    theta: YawAngle,
    cfg: &PredictorConfig,
    model: &CvModel,
) -> Vec3 {
    let d_k = displacement_kalman(s, model);
    let d_h = displacement_head(&d_k, theta);
    let d_p = blend(&d_k, &d_h, cfg.w);
    let n = f64::from(cfg.n_steps);
    Vec3::new(
        s.x_hat[0] + n * d_p[0],
        s.x_hat[1] + n * d_p[1],
        s.x_hat[2] + n * d_p[2],
    )
}

/// Filter parameters shared by every frame of a track.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSettings {
    pub kalman: KalmanConfig,
    pub angle: AngleFilterConfig,
    /// A valid frame arriving more than this long after the last update restarts the filters.
    pub reset_gap_s: f64,
}

impl Default for FilterSettings {
    fn default() -> Self {
        FilterSettings {
            kalman: KalmanConfig::default(),
            angle: AngleFilterConfig::default(),
            reset_gap_s: 1.0,
        }
    }
}

/// Per-person filter state carried between frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub position: StateEstimate,
    pub angle: Option<AngleFilter>,
    pub last_t: f64,
    pub last_update_t: f64,
}

impl FilterState {
    pub fn head_pose(&self) -> YawAngle {
        self.angle.as_ref().map_or(YawAngle::ZERO, AngleFilter::angle)
    }
}

/// Result of feeding one frame through the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStep {
    pub triple: PredictionTriple,
    /// Filtered state after the update at this frame.
    pub estimate: StateEstimate,
    /// Filtered head-pose angle used for the rotation.
    pub theta: YawAngle,
}

/// Advances the filters by one observation.
///
/// Invalid frames coast both filters and yield no prediction. Elapsed time is
/// converted to whole filter ticks, so dropped rows are coasted as well.
pub fn step_frame(
    prev: Option<FilterState>,
    frame: &Frame,
    cfg: &PredictorConfig,
    settings: &FilterSettings,
    model: &CvModel,
) -> Result<(Option<FrameStep>, Option<FilterState>)> {
    let dt = settings.kalman.dt;
    let head_pose = if frame.valid {
        relative_head_yaw(&frame.nose_q, &frame.waist_q).ok()
    } else {
        None
    };

    let prev = prev.filter(|s| !frame.valid || frame.t - s.last_update_t <= settings.reset_gap_s);

    let state = match prev {
        None if !frame.valid => return Ok((None, None)),
        None => FilterState {
            position: init_state(frame.nose_pos, &settings.kalman),
            angle: head_pose.map(|a| AngleFilter::new(a, &settings.angle)),
            last_t: frame.t,
            last_update_t: frame.t,
        },
        Some(mut s) => {
            let ticks = ((frame.t - s.last_t) / dt).round().max(1.0) as u64;
            for _ in 0..ticks {
                s.position = predict_step(&s.position, model);
                if let Some(a) = s.angle.as_mut() {
                    a.predict(dt, &settings.angle);
                }
            }
            s.last_t = frame.t;
            if !frame.valid {
                return Ok((None, Some(s)));
            }
            s.position = update_step(&s.position, frame.nose_pos, model)?;
            match (s.angle.as_mut(), head_pose) {
                (Some(a), Some(z)) => a.update(z, &settings.angle),
                (None, Some(z)) => s.angle = Some(AngleFilter::new(z, &settings.angle)),
                _ => {}
            }
            s.last_update_t = frame.t;
            s
        }
    };

    let theta = state.head_pose();
    let triple = PredictionTriple {
        estimated: state.position.position(),
        baseline: baseline_predict_n(&state.position, cfg.n_steps, model),
        proposed: predict_n_steps(&state.position, theta, cfg, model),
    };
    let step = FrameStep {
        triple,
        estimate: state.position.clone(),
        theta,
    };
    Ok((Some(step), Some(state)))
}

/// Owns the filter state of one tracked person.
#[derive(Debug, Clone)]
pub struct HeadPredictor {
    cfg: PredictorConfig,
    settings: FilterSettings,
    model: CvModel,
    state: Option<FilterState>,
}

impl HeadPredictor {
    pub fn new(cfg: PredictorConfig, settings: FilterSettings) -> Result<Self> {
        cfg.validate()?;
        let model = CvModel::new(&settings.kalman)?;
        Ok(HeadPredictor {
            cfg,
            settings,
            model,
            state: None,
        })
    }

    pub fn step(&mut self, frame: &Frame) -> Result<Option<FrameStep>> {
        let (out, next) = step_frame(self.state.take(), frame, &self.cfg, &self.settings, &self.model)?;
        self.state = next;
        Ok(out)
    }

    pub fn reset(&mut self) {
        self.state = None;
    }

    pub fn config(&self) -> &PredictorConfig {
        &self.cfg
    }

    pub fn model(&self) -> &CvModel {
        &self.model
    }
}
