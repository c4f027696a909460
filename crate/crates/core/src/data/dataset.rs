use std::path::{Path, PathBuf};

use super::image::{load_gray, Image};
use super::labeling::label_candidate;
use super::manifest::{Manifest, Study, View};
use super::mask::polygon_bbox;
use super::pairs::{make_training_pairs, LabeledPatch, NegativeSource, PatchPair};
use super::patch::{extract_patch, normalize_patch, EnlargeMode};
use super::split::{Split, SplitManifest};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Base (unaugmented) training material of one study.
#[derive(Clone, Debug)]
pub struct StudyPatches<T> {
    /// `(CC, MLO)` patches of lesions annotated in both views.
    pub positives: Vec<(LabeledPatch<T>, LabeledPatch<T>)>,
    /// One source per view: that view's lesions against the other view's
    /// false detections.
    pub negatives: Vec<NegativeSource<T>>,
    /// Objects whose patch could not be extracted, with the reason.
    pub skipped: Vec<(String, String)>,
}

fn patch_of<T: Scalar>(image: &Image<T>, image_id: &str, object_id: &str, poly: &super::manifest::Polygon, mode: EnlargeMode) -> Result<LabeledPatch<T>> {
    let raw = extract_patch(image, polygon_bbox(poly), mode)?;
    let norm = normalize_patch(&raw);
    if norm.degenerate {
        log::debug!("{object_id}: constant patch normalized to zeros");
    }
    Ok(LabeledPatch {
        patch: norm.patch,
        image_id: image_id.to_string(),
        object_id: object_id.to_string(),
    })
}

/// Extracts lesion and false-detection patches of a study. Candidates are
/// labeled against the ground truth with Dice threshold `delta`.
pub fn assemble_study<T: Scalar>(
    study: &Study,
    cc: &Image<T>,
    mlo: &Image<T>,
    delta: f64,
    mode: EnlargeMode,
) -> Result<StudyPatches<T>> {
    let image = |v: View| if v == View::CC { cc } else { mlo };
    let mut skipped = Vec::new();
    let mut lesions: [Vec<LabeledPatch<T>>; 2] = [Vec::new(), Vec::new()];
    let mut false_dets: [Vec<LabeledPatch<T>>; 2] = [Vec::new(), Vec::new()];

    for (vi, view) in [View::CC, View::MLO].into_iter().enumerate() {
        let img = image(view);
        for l in study.lesions_in(view) {
            match patch_of(img, study.image(view), &l.id, &l.polygon, mode) {
                Ok(p) => lesions[vi].push(p),
                Err(e) => skipped.push((l.id.clone(), e.to_string())),
            }
        }
        for c in study.candidates_in(view) {
            let lab = label_candidate(c, &study.lesions, (img.width, img.height), delta);
            if lab.label.is_true() {
                continue;
            }
            match patch_of(img, study.image(view), &c.id, &c.polygon, mode) {
                Ok(p) => false_dets[vi].push(p),
                Err(e) => skipped.push((c.id.clone(), e.to_string())),
            }
        }
    }
    for (id, why) in &skipped {
        log::warn!("{}: skipping {id}: {why}", study.patient);
    }

    let positives = lesions[0]
        .iter()
        .filter_map(|a| lesions[1].iter().find(|b| b.object_id == a.object_id).map(|b| (a.clone(), b.clone())))
        .collect();
    let [cc_false, mlo_false] = false_dets;
    let [cc_les, mlo_les] = lesions;
    let negatives = vec![
        NegativeSource {
            annotated_view: View::CC,
            annotated: cc_les,
            false_detections: mlo_false,
        },
        NegativeSource {
            annotated_view: View::MLO,
            annotated: mlo_les,
            false_detections: cc_false,
        },
    ];
    Ok(StudyPatches {
        positives,
        negatives,
        skipped,
    })
}

/// Positive and negative base pairs of a dataset.
#[derive(Clone, Debug, Default)]
pub struct PairSets<T> {
    pub positives: Vec<PatchPair<T>>,
    pub negatives: Vec<PatchPair<T>>,
}

impl<T: Scalar> PairSets<T> {
    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Positives followed by negatives.
    pub fn all(&self) -> Vec<PatchPair<T>> {
        self.positives.iter().chain(&self.negatives).cloned().collect()
    }
}

pub(crate) fn resolve(base: &Path, rel: &str) -> PathBuf {
    base.parent().unwrap_or(Path::new(".")).join(rel)
}

/// Loads a manifest and its images and builds the base pairs of every study
/// in `split` (all studies when `None`).
pub fn load_pair_sets<T: Scalar>(
    manifest_path: impl AsRef<Path>,
    split: Option<(&SplitManifest, Split)>,
    delta: f64,
    mode: EnlargeMode,
) -> Result<PairSets<T>> {
    let path = manifest_path.as_ref();
    let manifest = Manifest::load(path)?;
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for study in &manifest.studies {
        if let Some((m, which)) = split {
            match m.split_of(&study.patient) {
                Some(s) if s == which => {}
                Some(_) => continue,
                None => {
                    return Err(Error::Validation(format!(
                        "patient {} is not in the split manifest",
                        study.patient
                    )))
                }
            }
        }
        let cc = load_gray(resolve(path, &study.cc_image))?;
        let mlo = load_gray(resolve(path, &study.mlo_image))?;
        let sp = assemble_study(study, &cc, &mlo, delta, mode)?;
        positives.extend(sp.positives);
        negatives.extend(sp.negatives);
    }
    let pairs = make_training_pairs(&positives, &negatives, false)?;
    let (positives, negatives) = pairs.into_iter().partition(|p| p.label == 1);
    Ok(PairSets {
        positives,
        negatives,
    })
}
