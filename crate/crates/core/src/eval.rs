//! Evaluation protocol: per-frame prediction errors, route-group comparison,
//! grid tuning of the blend weight and leave-one-subject-out validation.
//!
//! Errors are measured at the horizon: the prediction made at frame `t` is
//! compared with the filtered position (a) at frame `t + N`. Frames are the
//! pairing unit of the signed-rank test, pooled across a group's tracks.
//! All reductions run over tracks sorted by label so results do not depend
//! on input order or on parallel scheduling.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{filter_operating_range, OperatingRange, RouteGroup, Track};
use crate::error::{Error, Result};
use crate::geometry::{Vec3, YawAngle};
use crate::kalman::{baseline_predict_n, CvModel, KalmanConfig, StateEstimate};
use crate::predictor::{predict_n_steps, step_frame, FilterSettings, PredictorConfig};
use crate::stats::{wilcoxon_one_tailed, Alternative, WilcoxonResult};
use crate::dataset::format_number;

pub const ALPHA: f64 = 0.05;
pub const DEFAULT_GRID_STEP: f64 = 0.05;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub predictor: PredictorConfig,
    /// `kalman.dt` is replaced by `1 / track.fps` for each track.
    pub filters: FilterSettings,
    pub range: OperatingRange,
}

impl EvalSettings {
    pub fn with_w(self, w: f64) -> Self {
        EvalSettings {
            predictor: self.predictor.with_w(w),
            ..self
        }
    }

    fn for_track(&self, track: &Track) -> FilterSettings {
        FilterSettings {
            kalman: KalmanConfig {
                dt: 1.0 / track.fps,
                ..self.filters.kalman
            },
            ..self.filters
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameError {
    pub track: String,
    pub t: f64,
    pub err_baseline: f64,
    pub err_proposed: f64,
}

impl FrameError {
    pub fn diff(&self) -> f64 {
        self.err_baseline - self.err_proposed
    }
}

/// Everything the weight affects for one scored frame, cached so the filters
/// run once per track regardless of how many weights are tried.
#[derive(Debug, Clone)]
struct ScoredFrame {
    t: f64,
    estimate: StateEstimate,
    theta: YawAngle,
    target: Vec3,
}

#[derive(Debug, Clone)]
struct TrackContext {
    label: String,
    group: RouteGroup,
    subject: String,
    model: CvModel,
    frames: Vec<ScoredFrame>,
}

impl TrackContext {
    fn build(track: &Track, settings: &EvalSettings) -> Result<Self> {
        let filters = settings.for_track(track);
        let model = CvModel::new(&filters.kalman)?;
        let cfg = settings.predictor;
        let mut state = None;
        let mut steps = Vec::with_capacity(track.frames.len());
        for frame in &track.frames {
            let (out, next) = step_frame(state, frame, &cfg, &filters, &model)?;
            state = next;
            steps.push(out);
        }
        let n = cfg.n_steps as usize;
        let frames = (0..steps.len().saturating_sub(n))
            .filter_map(|i| match (&steps[i], &steps[i + n]) {
                (Some(now), Some(later)) => Some(ScoredFrame {
                    t: track.frames[i].t,
                    estimate: now.estimate.clone(),
                    theta: now.theta,
                    target: later.triple.estimated,
                }),
                _ => None,
            })
            .collect();
        Ok(TrackContext {
            label: track.label(),
            group: track.group(),
            subject: track.subject_id.clone(),
            model,
            frames,
        })
    }

    fn errors(&self, cfg: &PredictorConfig) -> impl Iterator<Item = FrameError> + '_ {
        let cfg = *cfg;
        self.frames.iter().map(move |f| FrameError {
            track: self.label.clone(),
            t: f.t,
            err_baseline: baseline_predict_n(&f.estimate, cfg.n_steps, &self.model).distance(&f.target),
            err_proposed: predict_n_steps(&f.estimate, f.theta, &cfg, &self.model).distance(&f.target),
        })
    }

    fn proposed_sum(&self, cfg: &PredictorConfig, acc: &mut f64) {
        for f in &self.frames {
            *acc += predict_n_steps(&f.estimate, f.theta, cfg, &self.model).distance(&f.target);
        }
    }
}

fn build_contexts(tracks: &[Track], settings: &EvalSettings) -> Result<Vec<TrackContext>> {
    settings.predictor.validate()?;
    let mut contexts = tracks
        .par_iter()
        .map(|t| TrackContext::build(t, settings))
        .collect::<Result<Vec<_>>>()?;
    contexts.sort_by(|a, b| a.label.cmp(&b.label));
    Ok(contexts)
}

/// Marks out-of-range frames invalid on every track.
pub fn prepare_tracks(tracks: &[Track], range: &OperatingRange) -> Vec<Track> {
    tracks.iter().map(|t| filter_operating_range(t, range)).collect()
}

/// Per-frame errors of (b) and (c) against (a) at the horizon. Tracks with
/// fewer than `N + 1` frames produce no errors.
pub fn frame_errors(track: &Track, cfg: &PredictorConfig, filters: &FilterSettings) -> Result<Vec<FrameError>> {
    let settings = EvalSettings {
        predictor: *cfg,
        filters: *filters,
        range: OperatingRange::default(),
    };
    settings.predictor.validate()?;
    let ctx = TrackContext::build(track, &settings)?;
    Ok(ctx.errors(cfg).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub group: RouteGroup,
    pub n_frames: usize,
    pub mean_err_baseline_m: f64,
    pub mean_err_proposed_m: f64,
    pub wilcoxon: WilcoxonResult,
}

impl GroupReport {
    /// Builds the report from pooled errors. All-zero differences give a
    /// degenerate test with p = 1 rather than an error.
    pub fn from_errors(group: RouteGroup, errors: &[FrameError]) -> Result<Self> {
        if errors.is_empty() {
            return Err(Error::DegenerateSample(format!("group {group} has no scored frames")));
        }
        let n = errors.len() as f64;
        let mean_b = errors.iter().map(|e| e.err_baseline).sum::<f64>() / n;
        let mean_p = errors.iter().map(|e| e.err_proposed).sum::<f64>() / n;
        let diffs: Vec<f64> = errors.iter().map(FrameError::diff).collect();
        let wilcoxon = match wilcoxon_one_tailed(&diffs, Alternative::Greater) {
            Ok(w) => w,
            Err(Error::DegenerateSample(_)) => WilcoxonResult::degenerate(),
            Err(e) => return Err(e),
        };
        Ok(GroupReport {
            group,
            n_frames: errors.len(),
            mean_err_baseline_m: mean_b,
            mean_err_proposed_m: mean_p,
            wilcoxon,
        })
    }
}

fn sorted_errors(contexts: &[&TrackContext], cfg: &PredictorConfig) -> Vec<FrameError> {
    contexts.iter().flat_map(|c| c.errors(cfg)).collect()
}

/// Pools frame errors of `tracks`, which must all belong to `group`.
pub fn evaluate_group(tracks: &[Track], group: RouteGroup, settings: &EvalSettings) -> Result<GroupReport> {
    if let Some(t) = tracks.iter().find(|t| t.group() != group) {
        return Err(Error::Config(format!("track {} is not in group {group}", t.label())));
    }
    let contexts = build_contexts(tracks, settings)?;
    let refs: Vec<&TrackContext> = contexts.iter().collect();
    GroupReport::from_errors(group, &sorted_errors(&refs, &settings.predictor))
}

/// Group reports plus the pooled frame errors behind them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub w: f64,
    pub groups: Vec<GroupReport>,
    #[serde(skip)]
    pub frame_errors: Vec<FrameError>,
}

impl EvaluationReport {
    pub fn any_degenerate(&self) -> bool {
        self.groups.iter().any(|g| g.wilcoxon.method == crate::stats::Method::Degenerate)
    }
}

/// Evaluates every group represented in `tracks`; groups without scored frames are omitted.
pub fn evaluate_groups(tracks: &[Track], settings: &EvalSettings) -> Result<EvaluationReport> {
    let contexts = build_contexts(tracks, settings)?;
    let refs: Vec<&TrackContext> = contexts.iter().collect();
    let (groups, frame_errors) = group_reports(&refs, &settings.predictor)?;
    if groups.is_empty() {
        return Err(Error::DegenerateSample("no scored frames in any group".into()));
    }
    Ok(EvaluationReport {
        w: settings.predictor.w,
        groups,
        frame_errors: frame_errors.into_iter().flat_map(|(_, e)| e).collect(),
    })
}

type GroupedErrors = Vec<(RouteGroup, Vec<FrameError>)>;

fn group_reports(
    contexts: &[&TrackContext],
    cfg: &PredictorConfig,
) -> Result<(Vec<GroupReport>, GroupedErrors)> {
    let mut reports = Vec::new();
    let mut all = Vec::new();
    for group in RouteGroup::ALL {
        let members: Vec<&TrackContext> = contexts.iter().copied().filter(|c| c.group == group).collect();
        let errors = sorted_errors(&members, cfg);
        if errors.is_empty() {
            continue;
        }
        reports.push(GroupReport::from_errors(group, &errors)?);
        all.push((group, errors));
    }
    Ok((reports, all))
}

/// Default grid `0, step, 2·step, …, w_max`.
pub fn default_grid(w_max: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step.is_finite() && w_max >= 0.0 && w_max.is_finite()) {
        return Err(Error::Config(format!("bad grid: w_max {w_max}, step {step}")));
    }
    let n = (w_max / step + 1e-9).floor() as usize;
    let mut grid: Vec<f64> = (0..=n).map(|i| (i as f64 * step).min(w_max)).collect();
    if grid.last().is_some_and(|&last| w_max - last > 1e-9) {
        grid.push(w_max);
    }
    Ok(grid)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub w: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub w: f64,
    /// Sum over every scored frame of every training track of ‖(c) − (a)‖.
    pub objective: f64,
    pub n_frames: usize,
    pub grid: Vec<GridPoint>,
}

fn check_grid(grid: &[f64], w_max: f64) -> Result<Vec<f64>> {
    if grid.is_empty() {
        return Err(Error::Config("empty w grid".into()));
    }
    if let Some(w) = grid.iter().find(|&&w| !(w >= 0.0 && w <= w_max)) {
        return Err(Error::Config(format!("grid value {w} outside [0, {w_max}]")));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    Ok(sorted)
}

fn tune_on(contexts: &[&TrackContext], grid: &[f64], cfg: &PredictorConfig) -> Result<TuneResult> {
    let n_frames: usize = contexts.iter().map(|c| c.frames.len()).sum();
    if n_frames == 0 {
        return Err(Error::Config("training set has no scored frames".into()));
    }
    let points: Vec<GridPoint> = grid
        .par_iter()
        .map(|&w| {
            let cfg = cfg.with_w(w);
            let mut acc = 0.0;
            for c in contexts {
                c.proposed_sum(&cfg, &mut acc);
            }
            GridPoint { w, objective: acc }
        })
        .collect();
    // grid is ascending, so strict improvement keeps the smallest w on ties
    let best = points
        .iter()
        .fold(None::<&GridPoint>, |best, p| match best {
            Some(b) if !(p.objective < b.objective) => Some(b),
            _ => Some(p),
        })
        .ok_or_else(|| Error::Config("empty w grid".into()))?;
    Ok(TuneResult {
        w: best.w,
        objective: best.objective,
        n_frames,
        grid: points,
    })
}

/// Picks the grid weight minimizing the summed (c)-vs-(a) error over all
/// training tracks; ties go to the smaller weight.
pub fn tune_w(training: &[Track], grid: &[f64], settings: &EvalSettings) -> Result<TuneResult> {
    if training.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let grid = check_grid(grid, settings.predictor.w_max)?;
    let contexts = build_contexts(training, &settings.with_w(0.0))?;
    let refs: Vec<&TrackContext> = contexts.iter().collect();
    tune_on(&refs, &grid, &settings.predictor)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fold {
    pub held_out_subject: String,
    pub w: f64,
    pub train_objective: f64,
    pub groups: Vec<GroupReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedFold {
    pub subject: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<Fold>,
    pub w_mean: f64,
    /// Sample standard deviation across folds (zero for a single fold).
    pub w_std: f64,
    /// Held-out errors of every fold pooled per group.
    pub pooled: Vec<GroupReport>,
    pub skipped: Vec<SkippedFold>,
    pub notes: BTreeMap<String, String>,
    #[serde(skip)]
    pub frame_errors: Vec<FrameError>,
}

impl CvReport {
    pub fn pooled_group(&self, group: RouteGroup) -> Option<&GroupReport> {
        self.pooled.iter().find(|g| g.group == group)
    }

    pub fn any_degenerate(&self) -> bool {
        self.pooled.iter().any(|g| g.wilcoxon.method == crate::stats::Method::Degenerate)
    }
}

pub fn protocol_notes() -> BTreeMap<String, String> {
    BTreeMap::from([
        ("pairing".to_string(), "frame-level, pooled across the group's tracks".to_string()),
        (
            "objective".to_string(),
            "sum of per-frame (c)-vs-(a) distances over all frames of all training tracks".to_string(),
        ),
        ("target".to_string(), "filtered position (a) at t + N".to_string()),
        ("statistic".to_string(), "W+ (sum of ranks of positive baseline - proposed differences)".to_string()),
        ("alternative".to_string(), "greater (baseline error exceeds proposed error)".to_string()),
        ("w_std".to_string(), "sample standard deviation (n - 1)".to_string()),
    ])
}

/// Leave-one-subject-out: tune on all other subjects, test on the held-out one.
pub fn loso_cv(tracks: &[Track], grid: &[f64], settings: &EvalSettings) -> Result<CvReport> {
    let subjects: BTreeSet<&str> = tracks.iter().map(|t| t.subject_id.as_str()).collect();
    if subjects.len() < 2 {
        return Err(Error::Config(format!(
            "leave-one-subject-out needs >= 2 subjects, found {}",
            subjects.len()
        )));
    }
    let grid = check_grid(grid, settings.predictor.w_max)?;
    let contexts = build_contexts(tracks, &settings.with_w(0.0))?;

    let mut folds = Vec::new();
    let mut skipped = Vec::new();
    let mut pooled: BTreeMap<RouteGroup, Vec<FrameError>> = BTreeMap::new();
    for subject in &subjects {
        let (test, train): (Vec<&TrackContext>, Vec<&TrackContext>) =
            contexts.iter().partition(|c| c.subject == *subject);
        if test.iter().all(|c| c.frames.is_empty()) {
            log::warn!("subject {subject}: no scored frames, fold skipped");
            skipped.push(SkippedFold {
                subject: subject.to_string(),
                reason: "held-out subject has no scored frames".into(),
            });
            continue;
        }
        let tuned = match tune_on(&train, &grid, &settings.predictor) {
            Ok(t) => t,
            Err(Error::Config(reason)) => {
                skipped.push(SkippedFold {
                    subject: subject.to_string(),
                    reason,
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        let cfg = settings.predictor.with_w(tuned.w);
        let (groups, errors) = group_reports(&test, &cfg)?;
        for (group, errs) in errors {
            pooled.entry(group).or_default().extend(errs);
        }
        folds.push(Fold {
            held_out_subject: subject.to_string(),
            w: tuned.w,
            train_objective: tuned.objective,
            groups,
        });
    }
    if folds.is_empty() {
        return Err(Error::DegenerateSample("every fold was skipped".into()));
    }

    let ws: Vec<f64> = folds.iter().map(|f| f.w).collect();
    let w_mean = ws.iter().sum::<f64>() / ws.len() as f64;
    let w_std = if ws.len() > 1 {
        (ws.iter().map(|w| (w - w_mean).powi(2)).sum::<f64>() / (ws.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    let mut pooled_reports = Vec::new();
    let mut frame_errors = Vec::new();
    for (group, errors) in pooled {
        pooled_reports.push(GroupReport::from_errors(group, &errors)?);
        frame_errors.extend(errors);
    }
    Ok(CvReport {
        folds,
        w_mean,
        w_std,
        pooled: pooled_reports,
        skipped,
        notes: protocol_notes(),
        frame_errors,
    })
}

pub const FRAME_ERROR_HEADER: &str = "track,t,err_baseline_m,err_proposed_m";

pub fn frame_errors_csv(errors: &[FrameError]) -> String {
    let mut out = String::with_capacity(32 + errors.len() * 40);
    out.push_str(FRAME_ERROR_HEADER);
    out.push('\n');
    for e in errors {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            e.track,
            format_number(e.t),
            format_number(e.err_baseline),
            format_number(e.err_proposed)
        );
    }
    out
}
