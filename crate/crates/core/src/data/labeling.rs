use serde::{Deserialize, Serialize};

use super::manifest::{DetectionCandidate, GroundTruthLesion};
use super::mask::polygon_dice;

/// Dice threshold above which a candidate counts as a true lesion.
pub const DEFAULT_DELTA: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CandidateLabel {
    TrueLesion,
    FalseDetection,
}

impl CandidateLabel {
    pub fn is_true(self) -> bool {
        self == CandidateLabel::TrueLesion
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Labeling {
    pub label: CandidateLabel,
    /// Best Dice over same-view ground truth (0 when there is none).
    pub best_dice: f64,
    pub best_lesion: Option<String>,
}

/// A candidate is a true lesion iff its best Dice against a ground-truth
/// contour of the same view strictly exceeds `delta`.
pub fn label_candidate(
    candidate: &DetectionCandidate,
    gts: &[GroundTruthLesion],
    image_dims: (usize, usize),
    delta: f64,
) -> Labeling {
    let mut best = (0.0, None);
    for gt in gts.iter().filter(|g| g.view == candidate.view) {
        let d = polygon_dice(&candidate.polygon, &gt.polygon, image_dims.0, image_dims.1);
        if d > best.0 || best.1.is_none() {
            best = (d, Some(gt.id.clone()));
        }
    }
    let label = if best.0 > delta {
        CandidateLabel::TrueLesion
    } else {
        CandidateLabel::FalseDetection
    };
    Labeling {
        label,
        best_dice: best.0,
        best_lesion: best.1,
    }
}
