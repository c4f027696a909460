use serde::{Deserialize, Serialize};

use super::augment::{augment, Dihedral};
use super::manifest::View;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A normalized patch and where it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledPatch<T> {
    pub patch: Tensor<T>,
    pub image_id: String,
    pub object_id: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatchSource {
    pub image_id: String,
    pub object_id: String,
    pub aug: Dihedral,
}

/// Two patches (CC first, MLO second) with a binary match label.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchPair<T> {
    pub patch_a: Tensor<T>,
    pub patch_b: Tensor<T>,
    /// 1 = match, 0 = non-match.
    pub label: u8,
    pub source_a: PatchSource,
    pub source_b: PatchSource,
}

impl<T: Scalar> PatchPair<T> {
    pub fn new(a: &LabeledPatch<T>, b: &LabeledPatch<T>, label: u8) -> Self {
        PatchPair {
            patch_a: a.patch.clone(),
            patch_b: b.patch.clone(),
            label,
            source_a: PatchSource {
                image_id: a.image_id.clone(),
                object_id: a.object_id.clone(),
                aug: Dihedral::IDENTITY,
            },
            source_b: PatchSource {
                image_id: b.image_id.clone(),
                object_id: b.object_id.clone(),
                aug: Dihedral::IDENTITY,
            },
        }
    }

    /// The pair with `da` applied to the first patch and `db` to the second.
    pub fn transformed(&self, da: Dihedral, db: Dihedral) -> Result<Self> {
        let mut out = self.clone();
        out.patch_a = da.apply(&self.patch_a)?;
        out.patch_b = db.apply(&self.patch_b)?;
        out.source_a.aug = da.then_after(self.source_a.aug);
        out.source_b.aug = db.then_after(self.source_b.aug);
        Ok(out)
    }
}

/// Annotated lesions of one view and false detections of the other; every
/// combination is a negative pair.
#[derive(Clone, Debug, PartialEq)]
pub struct NegativeSource<T> {
    pub annotated_view: View,
    pub annotated: Vec<LabeledPatch<T>>,
    pub false_detections: Vec<LabeledPatch<T>>,
}

fn expand<T: Scalar>(a: &LabeledPatch<T>, b: &LabeledPatch<T>, label: u8, augmented: bool, out: &mut Vec<PatchPair<T>>) -> Result<()> {
    let base = PatchPair::new(a, b, label);
    if !augmented {
        out.push(base);
        return Ok(());
    }
    let va = augment(&a.patch)?;
    let vb = augment(&b.patch)?;
    for (da, pa) in &va {
        for (db, pb) in &vb {
            let mut p = base.clone();
            p.patch_a = pa.clone();
            p.patch_b = pb.clone();
            p.source_a.aug = *da;
            p.source_b.aug = *db;
            out.push(p);
        }
    }
    Ok(())
}

/// Labeled training pairs: positives first, then negatives. With
/// augmentation each base pair expands to all 8 × 8 variant combinations.
pub fn make_training_pairs<T: Scalar>(
    positives: &[(LabeledPatch<T>, LabeledPatch<T>)],
    negatives: &[NegativeSource<T>],
    augmented: bool,
) -> Result<Vec<PatchPair<T>>> {
    if positives.is_empty() {
        return Err(Error::Validation("no positive pairs to train on".into()));
    }
    let mut out = Vec::new();
    for (a, b) in positives {
        expand(a, b, 1, augmented, &mut out)?;
    }
    for src in negatives {
        for ann in &src.annotated {
            for fd in &src.false_detections {
                let (a, b) = match src.annotated_view {
                    View::CC => (ann, fd),
                    View::MLO => (fd, ann),
                };
                expand(a, b, 0, augmented, &mut out)?;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lp(id: &str, v: f64) -> LabeledPatch<f64> {
        LabeledPatch {
            patch: Tensor::from_fn(&[1, 4, 4], |i| v + i as f64),
            image_id: "img".into(),
            object_id: id.into(),
        }
    }

    #[test]
    fn augmentation_cross_product() {
        let pairs = make_training_pairs(&[(lp("a", 0.0), lp("b", 1.0))], &[], true).unwrap();
        assert_eq!(pairs.len(), 64);
        assert!(pairs.iter().all(|p| p.label == 1));
        let tags: std::collections::HashSet<_> = pairs.iter().map(|p| (p.source_a.aug, p.source_b.aug)).collect();
        assert_eq!(tags.len(), 64);
    }

    #[test]
    fn passthrough_without_augmentation() {
        let pos = vec![(lp("a", 0.0), lp("b", 1.0)), (lp("c", 2.0), lp("d", 3.0))];
        let pairs = make_training_pairs(&pos, &[], false).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[1].patch_a, pos[1].0.patch);
        assert_eq!(pairs[1].source_b.object_id, "d");
    }

    #[test]
    fn negative_cross_product_count_and_order() {
        let src = NegativeSource {
            annotated_view: View::CC,
            annotated: vec![lp("L1", 0.0), lp("L2", 0.0), lp("L3", 0.0)],
            false_detections: vec![lp("F1", 5.0), lp("F2", 6.0)],
        };
        let pairs = make_training_pairs(&[(lp("a", 0.0), lp("b", 1.0))], &[src.clone()], false).unwrap();
        let neg: Vec<_> = pairs.iter().filter(|p| p.label == 0).collect();
        assert_eq!(neg.len(), 6);
        assert!(neg.iter().all(|p| p.source_a.object_id.starts_with('L')));
        let flipped = NegativeSource {
            annotated_view: View::MLO,
            ..src
        };
        let pairs = make_training_pairs(&[(lp("a", 0.0), lp("b", 1.0))], &[flipped], false).unwrap();
        assert!(pairs.iter().filter(|p| p.label == 0).all(|p| p.source_b.object_id.starts_with('L')));
    }

    #[test]
    fn empty_positives_rejected() {
        assert!(matches!(
            make_training_pairs::<f64>(&[], &[], false),
            Err(Error::Validation(_))
        ));
    }
}
