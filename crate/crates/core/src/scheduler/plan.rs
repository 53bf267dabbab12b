use std::ops::Range;

use serde::Serialize;

use super::SchedulerError;

/// Length of the first segment, generated without history.
pub const BASE_SEGMENT_FRAMES: usize = 41;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentPlan {
    /// Frames generated per autoregressive segment (`T`).
    pub current_frames: usize,
    /// Previously generated frames used as history (`T*`).
    pub history_frames: usize,
    /// History lead, in schedule steps.
    pub delta_t: usize,
    /// Guidance scale `w`.
    pub guidance_scale: f64,
}

impl SegmentPlan {
    pub fn new(
        current_frames: usize,
        history_frames: usize,
        delta_t: usize,
        guidance_scale: f64,
    ) -> Result<Self, SchedulerError> {
        if current_frames == 0 {
            return Err(SchedulerError::InvalidConfig("T must be at least 1".into()));
        }
        if !guidance_scale.is_finite() {
            return Err(SchedulerError::InvalidConfig("guidance scale must be finite".into()));
        }
        Ok(Self {
            current_frames,
            history_frames,
            delta_t,
            guidance_scale,
        })
    }

    /// Total number of segments (base included) for `total_frames`.
    pub fn segment_count(&self, total_frames: usize) -> usize {
        if total_frames <= BASE_SEGMENT_FRAMES {
            1
        } else {
            1 + (total_frames - BASE_SEGMENT_FRAMES).div_ceil(self.current_frames)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SegmentSpan {
    /// Empty for the base segment.
    pub history: Range<usize>,
    pub current: Range<usize>,
}

impl SegmentSpan {
    pub fn is_base(&self) -> bool {
        self.history.is_empty() && self.current.start == 0
    }
}

/// Splits `[0, total_frames)` into a base segment and autoregressive
/// segments. The last segment may be shorter than `T`.
pub fn plan_segments(total_frames: usize, plan: &SegmentPlan) -> Result<Vec<SegmentSpan>, SchedulerError> {
    if total_frames == 0 {
        return Err(SchedulerError::InvalidConfig("total frame count must be positive".into()));
    }
    if plan.current_frames == 0 {
        return Err(SchedulerError::InvalidConfig("T must be at least 1".into()));
    }
    let base_end = total_frames.min(BASE_SEGMENT_FRAMES);
    let mut spans = vec![SegmentSpan {
        history: 0..0,
        current: 0..base_end,
    }];
    let mut next = base_end;
    while next < total_frames {
        let end = (next + plan.current_frames).min(total_frames);
        spans.push(SegmentSpan {
            history: next.saturating_sub(plan.history_frames)..next,
            current: next..end,
        });
        next = end;
    }
    Ok(spans)
}
