mod common;

use dvmatch::data::{EnlargeMode, Split, View, DEFAULT_DELTA};
use dvmatch::pipeline::{
    adjust_scores, evaluate_pipeline, fp_reduction_report, run_pipeline, threshold_for_sensitivity, NccScorer, OracleScorer,
    StandaloneMode,
};

#[test]
fn oracle_pipeline_is_perfect_and_removes_false_detections() {
    let (_dir, out) = common::synth_dataset(20);
    let run = run_pipeline::<f64, _>(&out.manifest, None, &OracleScorer, DEFAULT_DELTA, EnlargeMode::Total).unwrap();
    assert_eq!(run.skipped, 0);

    // One matching pair per study with candidates in both views.
    let paired_studies = out
        .manifest_data
        .studies
        .iter()
        .filter(|s| s.candidates_in(View::CC).count() > 0 && s.candidates_in(View::MLO).count() > 0)
        .count();
    assert_eq!(run.records.iter().filter(|r| r.label == 1).count(), paired_studies);
    assert_eq!(run.standalones().count(), 4 * 3);

    let exclude = evaluate_pipeline(&run.records, run.standalones(), StandaloneMode::Exclude).unwrap();
    assert_eq!(exclude.auc, 1.0);
    let include = evaluate_pipeline(&run.records, run.standalones(), StandaloneMode::Include).unwrap();
    assert!((0.0..=1.0).contains(&include.auc));

    let labels = run.detection_labels();
    let adjusted = adjust_scores(&run.detections, &run.records, StandaloneMode::Include);
    let t = threshold_for_sensitivity(&adjusted, &labels, 0.99);
    let fp = fp_reduction_report(&adjusted, &labels, t).unwrap();
    assert!(fp.sensitivity >= 0.99);
    assert!(fp.false_removed > 0 && fp.specificity > 0.0);
}

#[test]
fn split_restricts_studies_and_ncc_scores_are_probabilities() {
    let (_dir, out) = common::synth_dataset(10);
    let run = run_pipeline::<f64, _>(
        &out.manifest,
        Some((&out.split_data, Split::Test)),
        &NccScorer,
        DEFAULT_DELTA,
        EnlargeMode::Total,
    )
    .unwrap();
    let test = out.split_data.patients(Split::Test);
    assert!(!test.is_empty());
    assert!(run.detections.iter().all(|d| test.contains(d.patient.as_str())));
    assert!(run.records.iter().all(|r| (0.0..=1.0).contains(&r.match_probability)));
}

#[test]
fn exclude_mode_zeroes_standalones() {
    let (_dir, out) = common::synth_dataset(5);
    let run = run_pipeline::<f64, _>(&out.manifest, None, &OracleScorer, DEFAULT_DELTA, EnlargeMode::Total).unwrap();
    let ex = adjust_scores(&run.detections, &run.records, StandaloneMode::Exclude);
    let inc = adjust_scores(&run.detections, &run.records, StandaloneMode::Include);
    for ((e, i), d) in ex.iter().zip(&inc).zip(&run.detections) {
        if d.standalone {
            assert_eq!(e.adjusted, 0.0);
            assert_eq!(i.adjusted, d.score);
        } else {
            assert_eq!(e.adjusted, i.adjusted);
            assert!(e.adjusted <= d.score);
        }
    }
}
