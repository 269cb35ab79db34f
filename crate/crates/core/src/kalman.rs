//! Constant-velocity Kalman filter over the 6-D head state
//! `[px, py, pz, vx, vy, vz]`, plus a scalar constant-velocity filter for the
//! head-pose angle.

use nalgebra::{Matrix2, SMatrix, SVector, SymmetricEigen, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_finite, wrap_angle, Vec3, YawAngle};

pub type Vector6 = SVector<f64, 6>;
pub type Matrix3 = SMatrix<f64, 3, 3>;
pub type Matrix6 = SMatrix<f64, 6, 6>;
pub type Matrix3x6 = SMatrix<f64, 3, 6>;
pub type Matrix6x3 = SMatrix<f64, 6, 3>;

/// Initial velocity standard deviation (m/s); covers walking speeds.
pub const INITIAL_VELOCITY_STD: f64 = 2.0;
/// Innovation covariances with a larger condition estimate are rejected.
pub const MAX_INNOVATION_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KalmanConfig {
    /// Seconds per step.
    pub dt: f64,
    /// White-noise acceleration spectral density (m²/s³).
    pub q_accel: f64,
    /// Position measurement standard deviation (m).
    pub r_pos: f64,
}

impl Default for KalmanConfig {
    fn default() -> Self {
        KalmanConfig {
            dt: 1.0 / 30.0,
            q_accel: 2.0,
            r_pos: 0.02,
        }
    }
}

impl KalmanConfig {
    pub fn with_fps(fps: f64) -> Self {
        KalmanConfig {
            dt: 1.0 / fps,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.dt) || !ok(self.q_accel) || !ok(self.r_pos) {
            return Err(Error::Config(format!(
                "kalman config requires dt, q_accel, r_pos > 0: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Matrices of the discretized constant-velocity model.
#[derive(Debug, Clone, PartialEq)]
pub struct CvModel {
    pub dt: f64,
    pub f: Matrix6,
    pub h: Matrix3x6,
    pub q: Matrix6,
    pub rm: Matrix3,
}

impl CvModel {
    pub fn new(cfg: &KalmanConfig) -> Result<Self> {
        cfg.validate()?;
        let dt = cfg.dt;
        let mut f = Matrix6::identity();
        let mut h = Matrix3x6::zeros();
        let mut q = Matrix6::zeros();
        let (q_pp, q_pv, q_vv) = (
            cfg.q_accel * dt.powi(4) / 4.0,
            cfg.q_accel * dt.powi(3) / 2.0,
            cfg.q_accel * dt * dt,
        );
        for i in 0..3 {
            f[(i, i + 3)] = dt;
            h[(i, i)] = 1.0;
            q[(i, i)] = q_pp;
            q[(i, i + 3)] = q_pv;
            q[(i + 3, i)] = q_pv;
            q[(i + 3, i + 3)] = q_vv;
        }
        Ok(CvModel {
            dt,
            f,
            h,
            q,
            rm: Matrix3::identity() * (cfg.r_pos * cfg.r_pos),
        })
    }

    /// `F x − x`, evaluated in closed form: the position block is `dt·v` and
    /// the velocity block is zero.
    pub fn displacement(&self, x_hat: &Vector6) -> Vector6 {
        let mut d = Vector6::zeros();
        for i in 0..3 {
            d[i] = self.dt * x_hat[i + 3];
        }
        d
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateEstimate {
    pub x_hat: Vector6,
    pub p: Matrix6,
}

impl StateEstimate {
    pub fn position(&self) -> Vec3 {
        Vec3::new(self.x_hat[0], self.x_hat[1], self.x_hat[2])
    }

    pub fn velocity(&self) -> Vec3 {
        Vec3::new(self.x_hat[3], self.x_hat[4], self.x_hat[5])
    }

    pub fn from_position_velocity(p: Vec3, v: Vec3, cov: Matrix6) -> Self {
        StateEstimate {
            x_hat: Vector6::new(p.x, p.y, p.z, v.x, v.y, v.z),
            p: cov,
        }
    }
}

pub fn init_state(first_obs: Vec3, cfg: &KalmanConfig) -> StateEstimate {
    let mut p = Matrix6::zeros();
    for i in 0..3 {
        p[(i, i)] = cfg.r_pos * cfg.r_pos;
        p[(i + 3, i + 3)] = INITIAL_VELOCITY_STD * INITIAL_VELOCITY_STD;
    }
    StateEstimate::from_position_velocity(first_obs, Vec3::ZERO, p)
}

pub fn predict_step(s: &StateEstimate, model: &CvModel) -> StateEstimate {
    StateEstimate {
        x_hat: model.f * s.x_hat,
        p: model.f * s.p * model.f.transpose() + model.q,
    }
}

pub fn update_step(s: &StateEstimate, z: Vec3, model: &CvModel) -> Result<StateEstimate> {
    let ht = model.h.transpose();
    let innovation_cov = model.h * s.p * ht + model.rm;
    let condition = condition_estimate(&innovation_cov);
    if !(condition <= MAX_INNOVATION_CONDITION) {
        return Err(Error::NumericDegeneracy { condition });
    }
    let s_inv = innovation_cov
        .try_inverse()
        .ok_or(Error::NumericDegeneracy { condition })?;
    let gain: Matrix6x3 = s.p * ht * s_inv;
    let z = nalgebra::Vector3::new(z.x, z.y, z.z);
    let innovation = z - model.h * s.x_hat;
    let x_hat = s.x_hat + gain * innovation;
    let p = (Matrix6::identity() - gain * model.h) * s.p;
    Ok(StateEstimate {
        x_hat,
        p: 0.5 * (p + p.transpose()),
    })
}

/// Ratio of extreme eigenvalues of a symmetric matrix; infinite when the
/// smallest is not positive.
fn condition_estimate(m: &Matrix3) -> f64 {
    let eig = SymmetricEigen::new(*m).eigenvalues;
    let max = eig.max();
    let min = eig.min();
    if min > 0.0 && max.is_finite() {
        max / min
    } else {
        f64::INFINITY
    }
}

/// Position block of `Fᴺ x̂`, i.e. `p + N·dt·v`.
pub fn baseline_predict_n(s: &StateEstimate, n_steps: u32, model: &CvModel) -> Vec3 {
    let d = model.displacement(&s.x_hat);
    let n = f64::from(n_steps);
    Vec3::new(
        s.x_hat[0] + n * d[0],
        s.x_hat[1] + n * d[1],
        s.x_hat[2] + n * d[2],
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleFilterConfig {
    /// Angular white-noise acceleration density (rad²/s³).
    pub q: f64,
    /// Angle measurement standard deviation (rad).
    pub r: f64,
    /// Initial angular-rate standard deviation (rad/s).
    pub rate_init_std: f64,
}

impl Default for AngleFilterConfig {
    fn default() -> Self {
        AngleFilterConfig {
            q: 2.0,
            r: 0.05,
            rate_init_std: 2.0,
        }
    }
}

/// Scalar constant-velocity filter on an angle. Innovations are wrapped to
/// (−π, π] so the estimate can cross the ±π seam.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleFilter {
    state: Vector2<f64>,
    p: Matrix2<f64>,
}

impl AngleFilter {
    pub fn new(first: YawAngle, cfg: &AngleFilterConfig) -> Self {
        AngleFilter {
            state: Vector2::new(first.radians(), 0.0),
            p: Matrix2::new(cfg.r * cfg.r, 0.0, 0.0, cfg.rate_init_std * cfg.rate_init_std),
        }
    }

    pub fn predict(&mut self, dt: f64, cfg: &AngleFilterConfig) {
        let f = Matrix2::new(1.0, dt, 0.0, 1.0);
        let q = cfg.q
            * Matrix2::new(
                dt.powi(4) / 4.0,
                dt.powi(3) / 2.0,
                dt.powi(3) / 2.0,
                dt * dt,
            );
        self.state = f * self.state;
        self.state[0] = wrap_finite(self.state[0]);
        self.p = f * self.p * f.transpose() + q;
    }

    pub fn update(&mut self, z: YawAngle, cfg: &AngleFilterConfig) {
        let innovation = wrap_finite(z.radians() - self.state[0]);
        let s = self.p[(0, 0)] + cfg.r * cfg.r;
        let k = Vector2::new(self.p[(0, 0)] / s, self.p[(1, 0)] / s);
        self.state += k * innovation;
        self.state[0] = wrap_finite(self.state[0]);
        let h = nalgebra::RowVector2::new(1.0, 0.0);
        let p = (Matrix2::identity() - k * h) * self.p;
        self.p = 0.5 * (p + p.transpose());
    }

    pub fn angle(&self) -> YawAngle {
        // the state stays wrapped and finite
        wrap_angle(self.state[0]).unwrap_or(YawAngle::ZERO)
    }

    pub fn rate(&self) -> f64 {
        self.state[1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn model() -> CvModel {
        CvModel::new(&KalmanConfig::default()).unwrap()
    }

    fn state(p: [f64; 3], v: [f64; 3]) -> StateEstimate {
        StateEstimate::from_position_velocity(
            Vec3::new(p[0], p[1], p[2]),
            Vec3::new(v[0], v[1], v[2]),
            Matrix6::identity() * 0.01,
        )
    }

    fn assert_valid_cov(p: &Matrix6) {
        let scale = p.abs().max().max(1e-300);
        assert!((p - p.transpose()).abs().max() <= 1e-9 * scale);
        let eig = SymmetricEigen::new(0.5 * (p + p.transpose())).eigenvalues;
        assert!(eig.min() >= -1e-9 * p.trace().abs());
    }

    #[test]
    fn init_examples() {
        let cfg = KalmanConfig::default();
        let s = init_state(Vec3::new(0.0, 0.0, 2.0), &cfg);
        assert_eq!(s.x_hat, Vector6::new(0.0, 0.0, 2.0, 0.0, 0.0, 0.0));
        let s = init_state(Vec3::new(1.0, -0.3, 3.0), &cfg);
        assert_eq!(s.position(), Vec3::new(1.0, -0.3, 3.0));
        assert_valid_cov(&s.p);
        assert_eq!(s.p[(4, 4)], 4.0);
    }

    #[test]
    fn config_validation() {
        assert!(CvModel::new(&KalmanConfig { dt: 0.0, ..Default::default() }).is_err());
        assert!(CvModel::new(&KalmanConfig { r_pos: -1.0, ..Default::default() }).is_err());
        assert!(CvModel::new(&KalmanConfig { q_accel: f64::NAN, ..Default::default() }).is_err());
    }

    #[test]
    fn model_structure() {
        let m = model();
        let dt = 1.0 / 30.0;
        assert_eq!(m.f[(0, 3)], dt);
        assert_eq!(m.f[(3, 0)], 0.0);
        assert!((m.q[(0, 0)] - 2.0 * dt.powi(4) / 4.0).abs() < 1e-18);
        assert!((m.q[(2, 5)] - 2.0 * dt.powi(3) / 2.0).abs() < 1e-18);
        assert!((m.rm[(1, 1)] - 0.0004).abs() < 1e-18);
        let x = Vector6::new(0.2, -1.0, 3.0, 0.3, 0.1, -0.9);
        let closed = m.displacement(&x);
        let direct = m.f * x - x;
        assert!((closed - direct).abs().max() < 1e-15);
    }

    #[test]
    fn predict_examples() {
        let m = model();
        let s = predict_step(&state([0.0, 0.0, 2.0], [0.0, 0.0, 1.0]), &m);
        assert!((s.x_hat[2] - (2.0 + 1.0 / 30.0)).abs() < 1e-15);
        let s0 = state([0.5, 0.1, 2.0], [0.0; 3]);
        assert_eq!(predict_step(&s0, &m).position(), s0.position());

        let zero = StateEstimate { x_hat: Vector6::zeros(), p: Matrix6::zeros() };
        let next = predict_step(&zero, &m);
        assert!(next.p.trace() > zero.p.trace() - 1e-12);
        assert_eq!(next.p, m.q);
    }

    #[test]
    fn update_zero_innovation() {
        let m = model();
        let s = state([0.3, -0.1, 2.5], [0.2, 0.0, -0.7]);
        let u = update_step(&s, s.position(), &m).unwrap();
        assert!((u.x_hat - s.x_hat).abs().max() < 1e-12);
    }

    #[test]
    fn update_zero_gain_limit() {
        let m = model();
        let mut s = state([0.3, -0.1, 2.5], [0.2, 0.0, -0.7]);
        s.p *= 1e-12;
        let u = update_step(&s, Vec3::new(1.0, 1.0, 1.0), &m).unwrap();
        assert!((u.x_hat - s.x_hat).abs().max() < 1e-6);
    }

    #[test]
    fn update_matches_scalar_recursion() {
        // prior mean 0, prior var 1, measurement var 1, z = 2 → posterior mean 1, var 1/2
        let cfg = KalmanConfig { dt: 1.0 / 30.0, q_accel: 1.0, r_pos: 1.0 };
        let m = CvModel::new(&cfg).unwrap();
        let s = StateEstimate { x_hat: Vector6::zeros(), p: Matrix6::identity() };
        let u = update_step(&s, Vec3::new(2.0, 2.0, 2.0), &m).unwrap();
        for i in 0..3 {
            assert!((u.x_hat[i] - 1.0).abs() < 1e-12);
            assert!((u.p[(i, i)] - 0.5).abs() < 1e-12);
            assert!(u.x_hat[i + 3].abs() < 1e-12);
        }
    }

    #[test]
    fn update_rejects_singular_innovation() {
        let m = model();
        let mut s = state([0.0; 3], [0.0; 3]);
        s.p[(0, 0)] = 1e12;
        assert!(matches!(
            update_step(&s, Vec3::ZERO, &m),
            Err(Error::NumericDegeneracy { .. })
        ));
        s.p[(0, 0)] = f64::NAN;
        assert!(update_step(&s, Vec3::ZERO, &m).is_err());
    }

    #[test]
    fn baseline_examples() {
        let m = model();
        let s = state([0.0, 0.0, 2.0], [0.0, 0.0, 1.0]);
        let p = baseline_predict_n(&s, 15, &m);
        assert!((p.z - 2.5).abs() < 1e-12);
        let s0 = state([0.5, 0.1, 2.0], [0.0; 3]);
        assert_eq!(baseline_predict_n(&s0, 40, &m), s0.position());
        let s = state([0.1, 0.2, 3.0], [0.4, -0.1, 0.8]);
        assert!(baseline_predict_n(&s, 1, &m).distance(&predict_step(&s, &m).position()) < 1e-15);
    }

    #[test]
    fn converges_on_noiseless_track() {
        let cfg = KalmanConfig::default();
        let m = CvModel::new(&cfg).unwrap();
        let p0 = Vec3::new(-1.0, -0.4, 4.5);
        let v = Vec3::new(0.6, 0.0, -1.1);
        let mut s = init_state(p0, &cfg);
        for k in 1..=60 {
            s = predict_step(&s, &m);
            s = update_step(&s, p0 + (k as f64 * cfg.dt) * v, &m).unwrap();
        }
        let truth = p0 + (60.0 * cfg.dt) * v;
        assert!(s.position().distance(&truth) < 1e-6);
        assert!(s.velocity().distance(&v) < 1e-6);
    }

    #[test]
    fn large_measurement_noise_keeps_prior() {
        let cfg = KalmanConfig { r_pos: 1e5, ..Default::default() };
        let m = CvModel::new(&cfg).unwrap();
        let s = state([0.3, 0.0, 2.0], [0.0, 0.0, 1.0]);
        let u = update_step(&s, Vec3::new(1.0, -1.0, 3.0), &m).unwrap();
        assert!((u.x_hat - s.x_hat).abs().max() < 1e-6);
    }

    #[test]
    fn angle_filter_crosses_seam() {
        let cfg = AngleFilterConfig::default();
        let start = wrap_angle(3.0).unwrap();
        let mut f = AngleFilter::new(start, &cfg);
        let rate = 1.5;
        for k in 1..=90 {
            f.predict(1.0 / 30.0, &cfg);
            f.update(wrap_angle(3.0 + rate * k as f64 / 30.0).unwrap(), &cfg);
        }
        let truth = wrap_angle(3.0 + rate * 3.0).unwrap().radians();
        assert!((f.angle().radians() - truth).abs() < 1e-6);
        assert!((f.rate() - rate).abs() < 1e-5);
    }

    proptest! {
        #[test]
        fn covariance_stays_valid(
            ops in proptest::collection::vec((any::<bool>(), -5f64..5.0, -5f64..5.0, 0.5f64..6.0), 1..80)
        ) {
            let cfg = KalmanConfig::default();
            let m = CvModel::new(&cfg).unwrap();
            let mut s = init_state(Vec3::new(0.0, 0.0, 2.0), &cfg);
            for (update, x, y, z) in ops {
                s = if update {
                    update_step(&s, Vec3::new(x, y, z), &m).unwrap()
                } else {
                    predict_step(&s, &m)
                };
                assert_valid_cov(&s.p);
            }
        }

        #[test]
        fn baseline_equals_repeated_prediction(
            px in -3f64..3.0, pz in 0.5f64..6.0, vx in -2f64..2.0, vz in -2f64..2.0, n in 1u32..40,
        ) {
            let m = model();
            let s = state([px, 0.1, pz], [vx, 0.05, vz]);
            let mut r = s.clone();
            for _ in 0..n {
                r = predict_step(&r, &m);
            }
            let b = baseline_predict_n(&s, n, &m);
            prop_assert!((b.x - r.x_hat[0]).abs() < 1e-12);
            prop_assert!((b.y - r.x_hat[1]).abs() < 1e-12);
            prop_assert!((b.z - r.x_hat[2]).abs() < 1e-12);
        }
    }
}
