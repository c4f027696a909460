//! Candidate and ground-truth manifest (JSON).
//!
//! ```json
//! {
//!   "version": 1,
//!   "studies": [{
//!     "patient": "P0000",
//!     "cc_image": "images/P0000_CC.png",
//!     "mlo_image": "images/P0000_MLO.png",
//!     "lesions": [{"id": "P0000-L0", "view": "CC", "patient": "P0000",
//!                  "polygon": [[x, y], ...]}],
//!     "candidates": [{"id": "P0000-CC-C0", "view": "CC", "score": 0.91,
//!                     "polygon": [[x, y], ...]}]
//!   }]
//! }
//! ```
//!
//! Coordinates are pixels with the origin at the top-left corner. Image
//! paths are relative to the manifest's directory. A lesion annotated in both
//! views carries the same `id` in each.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Polygon = Vec<[f64; 2]>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum View {
    CC,
    MLO,
}

impl View {
    pub fn other(self) -> View {
        match self {
            View::CC => View::MLO,
            View::MLO => View::CC,
        }
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            View::CC => "CC",
            View::MLO => "MLO",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionCandidate {
    pub id: String,
    pub view: View,
    pub polygon: Polygon,
    /// Single-view detector probability.
    pub score: f64,
    /// Generator bookkeeping: identity of the object the candidate was drawn
    /// around. Absent in real data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthLesion {
    pub id: String,
    pub view: View,
    pub polygon: Polygon,
    pub patient: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Study {
    pub patient: String,
    pub cc_image: String,
    pub mlo_image: String,
    #[serde(default)]
    pub lesions: Vec<GroundTruthLesion>,
    #[serde(default)]
    pub candidates: Vec<DetectionCandidate>,
}

impl Study {
    pub fn image(&self, view: View) -> &str {
        match view {
            View::CC => &self.cc_image,
            View::MLO => &self.mlo_image,
        }
    }

    pub fn lesions_in(&self, view: View) -> impl Iterator<Item = &GroundTruthLesion> {
        self.lesions.iter().filter(move |l| l.view == view)
    }

    pub fn candidates_in(&self, view: View) -> impl Iterator<Item = &DetectionCandidate> {
        self.candidates.iter().filter(move |c| c.view == view)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub studies: Vec<Study>,
}

impl Manifest {
    pub const VERSION: u32 = 1;

    pub fn new(studies: Vec<Study>) -> Self {
        Manifest {
            version: Self::VERSION,
            studies,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for s in &self.studies {
            for l in &s.lesions {
                if l.polygon.len() < 3 {
                    return Err(Error::Validation(format!("lesion {} has fewer than 3 vertices", l.id)));
                }
                if l.patient != s.patient {
                    return Err(Error::Validation(format!(
                        "lesion {} belongs to patient {} but sits in study {}",
                        l.id, l.patient, s.patient
                    )));
                }
                if !ids.insert((l.id.clone(), l.view, true)) {
                    return Err(Error::Validation(format!("duplicate lesion {} in {}", l.id, l.view)));
                }
            }
            for c in &s.candidates {
                if c.polygon.len() < 3 {
                    return Err(Error::Validation(format!("candidate {} has fewer than 3 vertices", c.id)));
                }
                if !(0.0..=1.0).contains(&c.score) {
                    return Err(Error::Validation(format!("candidate {} score {} outside [0, 1]", c.id, c.score)));
                }
                if !ids.insert((c.id.clone(), c.view, false)) {
                    return Err(Error::Validation(format!("duplicate candidate {}", c.id)));
                }
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.into(),
            reason: e.to_string(),
        })?;
        if m.version != Self::VERSION {
            return Err(Error::Parse {
                path: path.into(),
                reason: format!("unsupported manifest version {}", m.version),
            });
        }
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn patients(&self) -> Vec<String> {
        self.studies.iter().map(|s| s.patient.clone()).collect()
    }
}
