//! Per-frame prediction output, batch and line-streaming.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::time::Instant;

use serde::Serialize;

use crate::dataset::{format_number, parse_row, Frame, Track, HEADER};
use crate::error::{Error, Result};
use crate::predictor::{FilterSettings, HeadPredictor, PredictionTriple, PredictorConfig};

pub const PREDICTION_HEADER: &str = "t,ax,ay,az,bx,by,bz,cx,cy,cz";

/// One output row; frames without a prediction leave the position columns empty.
pub fn prediction_row(t: f64, triple: Option<&PredictionTriple>) -> String {
    let mut out = format_number(t);
    match triple {
        Some(p) => {
            for v in [p.estimated, p.baseline, p.proposed] {
                for c in v.to_array() {
                    out.push(',');
                    out.push_str(&format_number(c));
                }
            }
        }
        None => out.push_str(",,,,,,,,,"),
    }
    out
}

pub fn predict_track(track: &Track, cfg: &PredictorConfig, settings: &FilterSettings) -> Result<String> {
    let mut predictor = HeadPredictor::new(*cfg, *settings)?;
    let mut out = String::with_capacity(32 + track.frames.len() * 120);
    out.push_str(PREDICTION_HEADER);
    out.push('\n');
    for frame in &track.frames {
        let step = predictor.step(frame)?;
        let _ = writeln!(out, "{}", prediction_row(frame.t, step.as_ref().map(|s| &s.triple)));
    }
    Ok(out)
}

/// Consumes track-format lines one at a time. Metadata, header and blank
/// lines produce no output; every data row produces exactly one output row.
#[derive(Debug)]
pub struct StreamPredictor {
    predictor: HeadPredictor,
    line_no: usize,
    last_t: Option<f64>,
}

impl StreamPredictor {
    pub fn new(cfg: PredictorConfig, settings: FilterSettings) -> Result<Self> {
        Ok(StreamPredictor {
            predictor: HeadPredictor::new(cfg, settings)?,
            line_no: 0,
            last_t: None,
        })
    }

    pub fn process_line(&mut self, line: &str) -> Result<Option<String>> {
        self.line_no += 1;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() || line.starts_with('#') || line.trim() == HEADER {
            return Ok(None);
        }
        let frame = parse_row(line, self.line_no)?;
        self.process_frame(&frame).map(Some)
    }

    pub fn process_frame(&mut self, frame: &Frame) -> Result<String> {
        if let Some(prev) = self.last_t {
            if !(frame.t > prev) {
                return Err(Error::parse(self.line_no, "non-monotone timestamp"));
            }
        }
        self.last_t = Some(frame.t);
        let step = self.predictor.step(frame)?;
        Ok(prediction_row(frame.t, step.as_ref().map(|s| &s.triple)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatencySummary {
    pub frames: usize,
    pub p50_us: f64,
    pub p99_us: f64,
    pub max_us: f64,
}

impl LatencySummary {
    pub fn from_samples(mut samples_us: Vec<f64>) -> Self {
        samples_us.sort_by(f64::total_cmp);
        let pick = |q: f64| {
            if samples_us.is_empty() {
                0.0
            } else {
                let idx = ((samples_us.len() as f64 * q).ceil() as usize).clamp(1, samples_us.len()) - 1;
                samples_us[idx]
            }
        };
        LatencySummary {
            frames: samples_us.len(),
            p50_us: pick(0.50),
            p99_us: pick(0.99),
            max_us: samples_us.last().copied().unwrap_or(0.0),
        }
    }
}

/// Reads rows from `input` and writes one flushed prediction per data row.
/// Latency covers parsing, filtering and formatting of each row.
pub fn run_stream<R: BufRead, W: Write>(
    input: R,
    mut output: W,
    cfg: PredictorConfig,
    settings: FilterSettings,
) -> Result<LatencySummary> {
    let mut sp = StreamPredictor::new(cfg, settings)?;
    writeln!(output, "{PREDICTION_HEADER}")?;
    output.flush()?;
    let mut samples = Vec::new();
    for line in input.lines() {
        let line = line?;
        let start = Instant::now();
        let row = sp.process_line(&line)?;
        if let Some(row) = row {
            samples.push(start.elapsed().as_secs_f64() * 1e6);
            writeln!(output, "{row}")?;
            output.flush()?;
        }
    }
    Ok(LatencySummary::from_samples(samples))
}
