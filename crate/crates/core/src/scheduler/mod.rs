//! History-guided autoregressive generation, exercised through an abstract
//! flow predictor.
//!
//! Noise levels live in `[0, t_max]` with `σ(t) = t / t_max`. Corruption is
//! the flow-matching interpolation `x_t = (1 − σ)·x_0 + σ·ε`, and sampling
//! integrates the predicted velocity with Euler steps
//! `x_next = x + (σ(t_next) − σ(t))·v`.
//!
//! A long video is produced as a base segment without history followed by
//! autoregressive segments. Each autoregressive segment conditions on the
//! last `history_frames` generated frames, re-corrupted at every step to a
//! level `delta_t` schedule steps less noisy than the current block, and
//! combines two predictions with classifier-free guidance.

mod denoiser;
mod plan;
mod sampler;

pub use denoiser::{denoiser_by_name, Conditioning, Denoiser, GaussianToyDenoiser, LinearDenoiser, ZeroDenoiser};
pub use plan::{plan_segments, SegmentPlan, SegmentSpan, BASE_SEGMENT_FRAMES};
pub use sampler::{
    denoise_segment, guided_flow, recorrupt, run_autoregressive, sigma, training_noise_pair, write_trace_csv,
    AutoregressiveRun, GuidedFlow, TraceRow,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Upper end of the noise-level range.
pub const T_MAX: f64 = 1000.0;

#[derive(Debug, Error)]
pub enum SchedulerError {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("noise level {level} outside [0, {t_max}]")]
    InvalidLevel { level: f64, t_max: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("unknown denoiser {0:?}")]
    UnknownDenoiser(String),
}

/// A strictly decreasing list of noise levels ending at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    levels: Vec<f64>,
    t_max: f64,
}

impl NoiseSchedule {
    /// Validates `levels` (strictly decreasing, within `[0, t_max]`). A final
    /// level of 0 is appended when missing so sampling always ends clean.
    pub fn new(mut levels: Vec<f64>, t_max: f64) -> Result<Self, SchedulerError> {
        if !(t_max > 0.0 && t_max.is_finite()) {
            return Err(SchedulerError::InvalidSchedule(format!("t_max {t_max} must be positive")));
        }
        if let Some(&bad) = levels.iter().find(|&&t| !(0.0..=t_max).contains(&t)) {
            return Err(SchedulerError::InvalidLevel { level: bad, t_max });
        }
        if levels.windows(2).any(|w| w[1] >= w[0]) {
            return Err(SchedulerError::InvalidSchedule("levels must be strictly decreasing".into()));
        }
        if levels.last().is_some_and(|&t| t > 0.0) {
            levels.push(0.0);
        }
        if levels.len() < 2 {
            return Err(SchedulerError::InvalidSchedule("schedule has no denoising step".into()));
        }
        Ok(Self { levels, t_max })
    }

    /// `steps` evenly spaced levels from `t_max` down to 0.
    pub fn linear(steps: usize, t_max: f64) -> Result<Self, SchedulerError> {
        if steps == 0 {
            return Err(SchedulerError::InvalidSchedule("schedule has no denoising step".into()));
        }
        let levels = (0..=steps)
            .map(|i| t_max * (steps - i) as f64 / steps as f64)
            .collect();
        Self::new(levels, t_max)
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    /// Number of denoising transitions.
    pub fn steps(&self) -> usize {
        self.levels.len() - 1
    }

    /// Index of `levels[i]` counted upward from the clean level, so that
    /// index 0 is level 0 and larger indices are noisier.
    pub fn noise_index(&self, i: usize) -> usize {
        self.steps() - i
    }
}

/// `frames × channels` latent values sharing one noise level.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBlock {
    frames: usize,
    channels: usize,
    values: Vec<f64>,
    pub level: f64,
}

impl LatentBlock {
    pub fn new(frames: usize, channels: usize, values: Vec<f64>, level: f64) -> Result<Self, SchedulerError> {
        if values.len() != frames * channels {
            return Err(SchedulerError::ShapeMismatch(format!(
                "{} values for a {frames}×{channels} block",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SchedulerError::ShapeMismatch("non-finite latent value".into()));
        }
        Ok(Self {
            frames,
            channels,
            values,
            level,
        })
    }

    pub fn zeros(frames: usize, channels: usize) -> Self {
        Self {
            frames,
            channels,
            values: vec![0.0; frames * channels],
            level: 0.0,
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn frame(&self, f: usize) -> &[f64] {
        &self.values[f * self.channels..(f + 1) * self.channels]
    }

    /// Frames `range` as a new block at the same level.
    pub fn slice_frames(&self, range: std::ops::Range<usize>) -> LatentBlock {
        LatentBlock {
            frames: range.len(),
            channels: self.channels,
            values: self.values[range.start * self.channels..range.end * self.channels].to_vec(),
            level: self.level,
        }
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

/// JSON schedule/plan configuration for schedule simulation runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub steps: usize,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    #[serde(rename = "T")]
    pub current_frames: usize,
    #[serde(rename = "T_star")]
    pub history_frames: usize,
    #[serde(default = "default_delta_t")]
    pub delta_t: usize,
    #[serde(default = "default_w")]
    pub w: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_total_frames")]
    pub total_frames: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
    #[serde(default = "default_denoiser")]
    pub denoiser: String,
}

fn default_t_max() -> f64 {
    T_MAX
}
fn default_delta_t() -> usize {
    1
}
fn default_w() -> f64 {
    2.0
}
fn default_total_frames() -> usize {
    81
}
fn default_channels() -> usize {
    4
}
fn default_denoiser() -> String {
    "linear".into()
}

impl ScheduleConfig {
    pub fn plan(&self) -> Result<SegmentPlan, SchedulerError> {
        SegmentPlan::new(self.current_frames, self.history_frames, self.delta_t, self.w)
    }

    pub fn schedule(&self) -> Result<NoiseSchedule, SchedulerError> {
        NoiseSchedule::linear(self.steps, self.t_max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_schedule_shape() {
        let s = NoiseSchedule::linear(4, 1000.0).unwrap();
        assert_eq!(s.levels(), &[1000.0, 750.0, 500.0, 250.0, 0.0]);
        assert_eq!(s.steps(), 4);
        assert_eq!(s.noise_index(0), 4);
        assert_eq!(s.noise_index(4), 0);
    }

    #[test]
    fn schedule_validation() {
        assert!(matches!(NoiseSchedule::linear(0, 1000.0), Err(SchedulerError::InvalidSchedule(_))));
        assert!(matches!(NoiseSchedule::new(vec![0.0], 1000.0), Err(SchedulerError::InvalidSchedule(_))));
        assert!(matches!(NoiseSchedule::new(vec![], 1000.0), Err(SchedulerError::InvalidSchedule(_))));
        assert!(NoiseSchedule::new(vec![500.0, 500.0, 0.0], 1000.0).is_err());
        assert!(matches!(
            NoiseSchedule::new(vec![1200.0, 0.0], 1000.0),
            Err(SchedulerError::InvalidLevel { .. })
        ));
        assert_eq!(NoiseSchedule::new(vec![800.0, 300.0], 1000.0).unwrap().levels(), &[800.0, 300.0, 0.0]);
    }

    #[test]
    fn config_parses_with_defaults() {
        let cfg: ScheduleConfig =
            serde_json::from_str(r#"{"steps": 10, "T": 20, "T_star": 21}"#).unwrap();
        assert_eq!(cfg.t_max, 1000.0);
        assert_eq!(cfg.delta_t, 1);
        assert_eq!(cfg.w, 2.0);
        assert_eq!(cfg.current_frames, 20);
        assert_eq!(cfg.history_frames, 21);
    }

    #[test]
    fn latent_block_shape_checked() {
        assert!(LatentBlock::new(2, 3, vec![0.0; 5], 0.0).is_err());
        assert!(LatentBlock::new(2, 3, vec![f64::NAN; 6], 0.0).is_err());
        let b = LatentBlock::new(2, 3, (0..6).map(f64::from).collect(), 0.0).unwrap();
        assert_eq!(b.frame(1), &[3.0, 4.0, 5.0]);
        assert_eq!(b.slice_frames(1..2).values(), &[3.0, 4.0, 5.0]);
    }
}
