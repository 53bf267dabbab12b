//! Sample rejection rules for training data.

use serde::{Deserialize, Serialize};

use crate::grid::Mask;
use crate::warp::{mask_iou, WarpError};

/// Default minimum IoU between consecutive coarse-frame masks.
pub const DEFAULT_MIN_MASK_IOU: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    #[serde(default)]
    pub name: String,
    /// Whether the dynamic-object detector returned any box.
    pub detection: bool,
    /// IoU of each consecutive pair of coarse-frame masks.
    #[serde(default)]
    pub ious: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    NoDetection,
    LowMaskIou,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "verdict", content = "reason")]
pub enum Verdict {
    Keep,
    Reject(RejectReason),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterEntry {
    pub name: String,
    #[serde(flatten)]
    pub verdict: Verdict,
    /// Smallest consecutive IoU, 1.0 when there are none.
    pub worst_iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub entries: Vec<FilterEntry>,
}

impl FilterReport {
    pub fn kept(&self) -> usize {
        self.entries.iter().filter(|e| e.verdict == Verdict::Keep).count()
    }
}

/// Rejects a sample with no detection, otherwise one whose worst
/// consecutive IoU is below `min_iou`.
pub fn filter_samples(samples: &[SampleRecord], min_iou: f64) -> FilterReport {
    let entries = samples
        .iter()
        .map(|s| {
            let worst_iou = s
                .ious
                .iter()
                .copied()
                .fold(1.0f64, f64::min)
                .clamp(0.0, 1.0);
            let verdict = if !s.detection {
                Verdict::Reject(RejectReason::NoDetection)
            } else if worst_iou < min_iou {
                Verdict::Reject(RejectReason::LowMaskIou)
            } else {
                Verdict::Keep
            };
            FilterEntry {
                name: s.name.clone(),
                verdict,
                worst_iou,
            }
        })
        .collect();
    FilterReport { entries }
}

/// IoU between each pair of consecutive masks.
pub fn consecutive_ious(masks: &[Mask]) -> Result<Vec<f64>, WarpError> {
    masks.windows(2).map(|w| mask_iou(&w[0], &w[1])).collect()
}
