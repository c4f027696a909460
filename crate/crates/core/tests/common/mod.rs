#![allow(dead_code)]

use dvmatch::data::{load_pair_sets, EnlargeMode, LabeledPatch, PairSets, PatchPair, DEFAULT_DELTA};
use dvmatch::model::ArchConfig;
use dvmatch::rng;
use dvmatch::synth::{write_synth_dataset, SynthConfig, SynthOutput};
use dvmatch::tensor::Tensor;
use rand::Rng;

/// Small enough that a training step takes well under a millisecond.
pub fn tiny_arch() -> ArchConfig {
    ArchConfig::strided_tower(&[2, 4, 4, 4, 4], 2, [16, 16])
}

pub fn noise_patch(seed: u64, index: u64) -> Tensor<f64> {
    let mut r = rng::stream(seed, "test", index);
    Tensor::from_fn(&[1, 64, 64], |_| r.random_range(-1.0..1.0))
}

fn labeled(patch: Tensor<f64>, image: &str, object: &str) -> LabeledPatch<f64> {
    LabeledPatch {
        patch,
        image_id: image.into(),
        object_id: object.into(),
    }
}

/// Positives share their noise field up to a small perturbation; negatives
/// pair unrelated fields.
pub fn noise_pairs(n_pos: usize, n_neg: usize, seed: u64) -> (Vec<PatchPair<f64>>, Vec<PatchPair<f64>>) {
    let pos = (0..n_pos)
        .map(|i| {
            let a = noise_patch(seed, 2 * i as u64);
            let b = a.map(|v| 0.9 * v + 0.05);
            PatchPair::new(&labeled(a, "cc", &format!("L{i}")), &labeled(b, "mlo", &format!("L{i}")), 1)
        })
        .collect();
    let neg = (0..n_neg)
        .map(|i| {
            let a = noise_patch(seed ^ 0xff, 2 * i as u64);
            let b = noise_patch(seed ^ 0xff, 2 * i as u64 + 1);
            PatchPair::new(&labeled(a, "cc", &format!("L{i}")), &labeled(b, "mlo", &format!("D{i}")), 0)
        })
        .collect();
    (pos, neg)
}

pub fn synth_dataset(patients: usize) -> (tempfile::TempDir, SynthOutput) {
    let dir = tempfile::tempdir().expect("tempdir");
    let cfg = SynthConfig {
        patients,
        ..SynthConfig::default()
    };
    let out = write_synth_dataset(&cfg, dir.path()).expect("synth");
    (dir, out)
}

pub fn all_pairs(out: &SynthOutput) -> PairSets<f64> {
    load_pair_sets(&out.manifest, None, DEFAULT_DELTA, EnlargeMode::Total).expect("pairs")
}

pub fn param_bytes(params: &[dvmatch::tensor::Parameter<f64>]) -> Vec<Vec<u64>> {
    params.iter().map(|p| p.value.data().iter().map(|v| v.to_bits()).collect()).collect()
}
