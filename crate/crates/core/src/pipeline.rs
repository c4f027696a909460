//! Dual-view filtering of single-view detections: score every CC × MLO
//! candidate pair, label pairs against ground truth, and down-weight
//! detections that find no counterpart.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{
    extract_patch, label_candidate, load_gray, normalize_patch, polygon_bbox, DetectionCandidate, EnlargeMode, Image, Labeling,
    Manifest, Split, SplitManifest, Study, View,
};
use crate::error::{Error, Result};
use crate::eval::{roc, RocCurve};
use crate::ncc::ncc;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::train::Ensemble;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StandaloneMode {
    /// Unpaired detections keep their single-view score.
    #[default]
    Include,
    /// Unpaired detections are dropped.
    Exclude,
}

/// Candidate pairs of one study, as indices into the per-view lists.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Enumeration {
    pub pairs: Vec<(usize, usize)>,
    /// Candidates of a view whose opposite view has no candidates.
    pub standalone: Vec<(View, usize)>,
}

pub fn enumerate_pairs(cc: &[DetectionCandidate], mlo: &[DetectionCandidate]) -> Enumeration {
    let pairs = (0..cc.len()).flat_map(|i| (0..mlo.len()).map(move |j| (i, j))).collect();
    let standalone = match (cc.len(), mlo.len()) {
        (_, 0) => (0..cc.len()).map(|i| (View::CC, i)).collect(),
        (0, _) => (0..mlo.len()).map(|j| (View::MLO, j)).collect(),
        _ => Vec::new(),
    };
    Enumeration { pairs, standalone }
}

/// Everything a scorer may look at for one candidate.
pub struct CandidateView<'a, T> {
    pub candidate: &'a DetectionCandidate,
    /// Normalized `[1, 64, 64]` patch.
    pub patch: &'a Tensor<T>,
    pub labeling: &'a Labeling,
}

pub trait PairScorer<T: Scalar> {
    fn name(&self) -> &str;
    /// Match probability in `[0, 1]`.
    fn score(&self, cc: &CandidateView<'_, T>, mlo: &CandidateView<'_, T>) -> Result<f64>;
}

impl<T: Scalar> PairScorer<T> for Ensemble<T> {
    fn name(&self) -> &str {
        "ensemble"
    }

    fn score(&self, cc: &CandidateView<'_, T>, mlo: &CandidateView<'_, T>) -> Result<f64> {
        Ok(self.predict(cc.patch, mlo.patch)?.as_f64())
    }
}

pub struct NccScorer;

impl<T: Scalar> PairScorer<T> for NccScorer {
    fn name(&self) -> &str {
        "ncc"
    }

    fn score(&self, cc: &CandidateView<'_, T>, mlo: &CandidateView<'_, T>) -> Result<f64> {
        Ok(ncc(cc.patch, mlo.patch)?.mapped)
    }
}

/// Reads the ground-truth labels: 1 when both candidates are true lesions.
pub struct OracleScorer;

impl<T: Scalar> PairScorer<T> for OracleScorer {
    fn name(&self) -> &str {
        "oracle"
    }

    fn score(&self, cc: &CandidateView<'_, T>, mlo: &CandidateView<'_, T>) -> Result<f64> {
        Ok(if cc.labeling.label.is_true() && mlo.labeling.label.is_true() { 1.0 } else { 0.0 })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub patient: String,
    pub cc_id: String,
    pub mlo_id: String,
    pub match_probability: f64,
    /// 1 when both candidates are true lesions.
    pub label: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub patient: String,
    pub id: String,
    pub view: View,
    pub score: f64,
    /// 1 for a true lesion.
    pub label: u8,
    pub standalone: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StudyScores {
    pub records: Vec<PairRecord>,
    /// Every candidate of the study with its own label.
    pub detections: Vec<DetectionRecord>,
    /// Pairs not scored because a patch could not be extracted.
    pub skipped: usize,
}

impl StudyScores {
    pub fn standalones(&self) -> impl Iterator<Item = &DetectionRecord> {
        self.detections.iter().filter(|d| d.standalone)
    }
}

/// Scores the full candidate cross product of one study.
pub fn score_pairs<T: Scalar, S: PairScorer<T> + ?Sized>(
    study: &Study,
    cc_image: &Image<T>,
    mlo_image: &Image<T>,
    scorer: &S,
    delta: f64,
    mode: EnlargeMode,
) -> Result<StudyScores> {
    let cands: [Vec<&DetectionCandidate>; 2] = [study.candidates_in(View::CC).collect(), study.candidates_in(View::MLO).collect()];
    let images = [cc_image, mlo_image];
    let mut labelings: [Vec<Labeling>; 2] = [Vec::new(), Vec::new()];
    let mut patches: [Vec<Option<Tensor<T>>>; 2] = [Vec::new(), Vec::new()];
    for v in 0..2 {
        let img = images[v];
        for c in &cands[v] {
            labelings[v].push(label_candidate(c, &study.lesions, (img.width, img.height), delta));
            patches[v].push(match extract_patch(img, polygon_bbox(&c.polygon), mode) {
                Ok(p) => Some(normalize_patch(&p).patch),
                Err(e) => {
                    log::warn!("{}: skipping pairs of {}: {e}", study.patient, c.id);
                    None
                }
            });
        }
    }

    let owned: [Vec<DetectionCandidate>; 2] = [
        cands[0].iter().map(|c| (*c).clone()).collect(),
        cands[1].iter().map(|c| (*c).clone()).collect(),
    ];
    let en = enumerate_pairs(&owned[0], &owned[1]);
    let mut out = StudyScores::default();
    for &(i, j) in &en.pairs {
        let (Some(pa), Some(pb)) = (&patches[0][i], &patches[1][j]) else {
            out.skipped += 1;
            continue;
        };
        let a = CandidateView {
            candidate: cands[0][i],
            patch: pa,
            labeling: &labelings[0][i],
        };
        let b = CandidateView {
            candidate: cands[1][j],
            patch: pb,
            labeling: &labelings[1][j],
        };
        let p = scorer.score(&a, &b)?;
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Numeric(format!("{} produced probability {p}", scorer.name())));
        }
        out.records.push(PairRecord {
            patient: study.patient.clone(),
            cc_id: a.candidate.id.clone(),
            mlo_id: b.candidate.id.clone(),
            match_probability: p,
            label: u8::from(a.labeling.label.is_true() && b.labeling.label.is_true()),
        });
    }
    for (v, view) in [View::CC, View::MLO].into_iter().enumerate() {
        for (i, c) in cands[v].iter().enumerate() {
            out.detections.push(DetectionRecord {
                patient: study.patient.clone(),
                id: c.id.clone(),
                view,
                score: c.score,
                label: u8::from(labelings[v][i].label.is_true()),
                standalone: en.standalone.contains(&(view, i)),
            });
        }
    }
    Ok(out)
}

/// `(score, label)` rows fed to the ROC: pair records, plus standalone
/// detections in include mode.
pub fn pipeline_scores<'a>(
    records: &[PairRecord],
    standalones: impl IntoIterator<Item = &'a DetectionRecord>,
    mode: StandaloneMode,
) -> Vec<(f64, u8)> {
    let mut s: Vec<(f64, u8)> = records.iter().map(|r| (r.match_probability, r.label)).collect();
    if mode == StandaloneMode::Include {
        s.extend(standalones.into_iter().map(|d| (d.score, d.label)));
    }
    s
}

pub fn evaluate_pipeline<'a>(
    records: &[PairRecord],
    standalones: impl IntoIterator<Item = &'a DetectionRecord>,
    mode: StandaloneMode,
) -> Result<RocCurve> {
    if records.is_empty() {
        return Err(Error::Validation("no scored pairs to evaluate".into()));
    }
    roc(&pipeline_scores(records, standalones, mode))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdjustedDetection {
    pub patient: String,
    pub id: String,
    pub view: View,
    pub original: f64,
    pub adjusted: f64,
    pub standalone: bool,
}

/// Paired detections are scaled by their best match probability;
/// standalones pass through (include) or drop to zero (exclude).
pub fn adjust_scores(detections: &[DetectionRecord], records: &[PairRecord], mode: StandaloneMode) -> Vec<AdjustedDetection> {
    detections
        .iter()
        .map(|d| {
            let adjusted = if d.standalone {
                match mode {
                    StandaloneMode::Include => d.score,
                    StandaloneMode::Exclude => 0.0,
                }
            } else {
                let best = records
                    .iter()
                    .filter(|r| r.patient == d.patient && if d.view == View::CC { r.cc_id == d.id } else { r.mlo_id == d.id })
                    .map(|r| r.match_probability)
                    .fold(0.0, f64::max);
                d.score * best
            };
            AdjustedDetection {
                patient: d.patient.clone(),
                id: d.id.clone(),
                view: d.view,
                original: d.score,
                adjusted,
                standalone: d.standalone,
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FpReport {
    pub threshold: f64,
    pub true_total: usize,
    pub true_retained: usize,
    pub false_total: usize,
    pub false_removed: usize,
    pub sensitivity: f64,
    pub specificity: f64,
}

/// A detection is removed when its adjusted score is below `threshold`.
pub fn fp_reduction_report(adjusted: &[AdjustedDetection], labels: &[u8], threshold: f64) -> Result<FpReport> {
    if adjusted.len() != labels.len() {
        return Err(Error::dim("fp_reduction_report", "labels", adjusted.len(), labels.len()));
    }
    let (mut tt, mut tr, mut ft, mut fr) = (0, 0, 0, 0);
    for (d, &l) in adjusted.iter().zip(labels) {
        let kept = d.adjusted >= threshold;
        if l == 1 {
            tt += 1;
            tr += usize::from(kept);
        } else {
            ft += 1;
            fr += usize::from(!kept);
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 1.0 } else { a as f64 / b as f64 };
    Ok(FpReport {
        threshold,
        true_total: tt,
        true_retained: tr,
        false_total: ft,
        false_removed: fr,
        sensitivity: ratio(tr, tt),
        specificity: ratio(fr, ft),
    })
}

/// Largest threshold that keeps at least `target` of the true lesions.
pub fn threshold_for_sensitivity(adjusted: &[AdjustedDetection], labels: &[u8], target: f64) -> f64 {
    let mut t: Vec<f64> = adjusted.iter().zip(labels).filter(|(_, &l)| l == 1).map(|(d, _)| d.adjusted).collect();
    if t.is_empty() {
        return 0.0;
    }
    t.sort_by(|a, b| b.total_cmp(a));
    let k = ((target * t.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    t[k.min(t.len()) - 1]
}

/// Scored pairs and detections of every study in a manifest.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PipelineRun {
    pub records: Vec<PairRecord>,
    pub detections: Vec<DetectionRecord>,
    pub skipped: usize,
}

impl PipelineRun {
    pub fn standalones(&self) -> impl Iterator<Item = &DetectionRecord> {
        self.detections.iter().filter(|d| d.standalone)
    }

    pub fn detection_labels(&self) -> Vec<u8> {
        self.detections.iter().map(|d| d.label).collect()
    }
}

pub fn run_pipeline<T: Scalar, S: PairScorer<T> + ?Sized>(
    manifest_path: impl AsRef<Path>,
    split: Option<(&SplitManifest, Split)>,
    scorer: &S,
    delta: f64,
    mode: EnlargeMode,
) -> Result<PipelineRun> {
    let path = manifest_path.as_ref();
    let manifest = Manifest::load(path)?;
    let mut run = PipelineRun::default();
    for study in &manifest.studies {
        if let Some((m, which)) = split {
            if m.split_of(&study.patient) != Some(which) {
                continue;
            }
        }
        let cc = load_gray::<T>(crate::data::resolve(path, &study.cc_image))?;
        let mlo = load_gray::<T>(crate::data::resolve(path, &study.mlo_image))?;
        let s = score_pairs(study, &cc, &mlo, scorer, delta, mode)?;
        run.records.extend(s.records);
        run.detections.extend(s.detections);
        run.skipped += s.skipped;
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(id: &str, view: View) -> DetectionCandidate {
        DetectionCandidate {
            id: id.into(),
            view,
            polygon: vec![[0.0, 0.0], [4.0, 0.0], [4.0, 4.0]],
            score: 0.5,
            instance: None,
        }
    }

    #[test]
    fn enumeration_counts() {
        let cc: Vec<_> = (0..3).map(|i| cand(&format!("c{i}"), View::CC)).collect();
        let mlo: Vec<_> = (0..2).map(|i| cand(&format!("m{i}"), View::MLO)).collect();
        let e = enumerate_pairs(&cc, &mlo);
        assert_eq!((e.pairs.len(), e.standalone.len()), (6, 0));
        let e = enumerate_pairs(&cc, &[]);
        assert_eq!((e.pairs.len(), e.standalone.len()), (0, 3));
        let e = enumerate_pairs(&cc[..1], &mlo[..1]);
        assert_eq!(e.pairs, vec![(0, 0)]);
        assert!(e.standalone.is_empty());
    }

    fn det(id: &str, view: View, score: f64, label: u8, standalone: bool) -> DetectionRecord {
        DetectionRecord {
            patient: "P".into(),
            id: id.into(),
            view,
            score,
            label,
            standalone,
        }
    }

    fn rec(cc: &str, mlo: &str, p: f64, label: u8) -> PairRecord {
        PairRecord {
            patient: "P".into(),
            cc_id: cc.into(),
            mlo_id: mlo.into(),
            match_probability: p,
            label,
        }
    }

    #[test]
    fn adjustment_rules() {
        let dets = [
            det("a", View::CC, 0.8, 1, false),
            det("b", View::CC, 0.6, 0, false),
            det("x", View::MLO, 0.9, 1, false),
            det("s", View::MLO, 0.7, 1, true),
        ];
        let recs = [rec("a", "x", 0.5, 1), rec("b", "x", 0.0, 0), rec("a", "y", 0.25, 0)];
        let inc = adjust_scores(&dets, &recs, StandaloneMode::Include);
        assert!((inc[0].adjusted - 0.4).abs() < 1e-15);
        assert_eq!(inc[1].adjusted, 0.0);
        assert_eq!(inc[2].adjusted, 0.9 * 0.5);
        assert_eq!(inc[3].adjusted, 0.7);
        assert_eq!(adjust_scores(&dets, &recs, StandaloneMode::Exclude)[3].adjusted, 0.0);
        let full = adjust_scores(&dets[..1], &[rec("a", "x", 1.0, 1)], StandaloneMode::Include);
        assert_eq!(full[0].adjusted, full[0].original);
        assert!(inc.iter().all(|d| d.adjusted <= d.original));
    }

    #[test]
    fn include_mode_appends_standalones() {
        let recs = [rec("a", "x", 0.9, 1), rec("b", "x", 0.1, 0)];
        let st = [det("s", View::CC, 0.3, 0, true)];
        assert_eq!(pipeline_scores(&recs, &st, StandaloneMode::Include).len(), 3);
        assert_eq!(pipeline_scores(&recs, &st, StandaloneMode::Exclude).len(), 2);
        let a = evaluate_pipeline(&recs, &[], StandaloneMode::Include).unwrap();
        let b = evaluate_pipeline(&recs, &[], StandaloneMode::Exclude).unwrap();
        assert_eq!(a, b);
        assert!(evaluate_pipeline(&[], &st, StandaloneMode::Include).is_err());
    }

    #[test]
    fn report_thresholds() {
        let dets = [det("a", View::CC, 0.8, 1, false), det("b", View::CC, 0.6, 0, false), det("c", View::MLO, 0.3, 1, false)];
        let recs = [rec("a", "c", 0.5, 1), rec("b", "c", 0.1, 0)];
        let adj = adjust_scores(&dets, &recs, StandaloneMode::Include);
        let labels = [1, 0, 1];
        let r = fp_reduction_report(&adj, &labels, 0.0).unwrap();
        assert_eq!((r.false_removed, r.sensitivity), (0, 1.0));
        let r = fp_reduction_report(&adj, &labels, 1.1).unwrap();
        assert_eq!((r.true_retained, r.sensitivity, r.false_removed), (0, 0.0, 1));
        let t = threshold_for_sensitivity(&adj, &labels, 0.99);
        assert_eq!(t, 0.15);
        let r = fp_reduction_report(&adj, &labels, t).unwrap();
        assert_eq!((r.sensitivity, r.specificity), (1.0, 1.0));
    }
}
