mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use dvmatch::data::{label_candidate, load_gray, View, DEFAULT_DELTA};
use dvmatch::synth::{generate_study, write_synth_dataset, SynthConfig};

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn same_seed_gives_byte_identical_datasets() {
    let cfg = SynthConfig {
        patients: 6,
        ..SynthConfig::default()
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    write_synth_dataset(&cfg, a.path()).unwrap();
    write_synth_dataset(&cfg, b.path()).unwrap();
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert_eq!(ta.len(), 6 * 2 + 2);
    assert_eq!(ta, tb);

    let c = tempfile::tempdir().unwrap();
    write_synth_dataset(&SynthConfig { seed: 8, ..cfg }, c.path()).unwrap();
    assert_ne!(ta, tree(c.path()));
}

#[test]
fn planted_candidates_label_as_constructed() {
    let cfg = SynthConfig::default();
    for i in 0..20 {
        let s = generate_study(&cfg, i);
        let dims = (cfg.image_size, cfg.image_size);
        for c in &s.study.candidates {
            let lab = label_candidate(c, &s.study.lesions, dims, DEFAULT_DELTA);
            let is_lesion = c.instance.as_deref() == Some(s.lesion.id.as_str());
            assert_eq!(lab.label.is_true(), is_lesion, "{}", c.id);
        }
    }
}

#[test]
fn standalone_studies_alternate_views() {
    let cfg = SynthConfig::default();
    let empty = |i: usize, v: View| generate_study(&cfg, i).study.candidates_in(v).count() == 0;
    assert!(empty(4, View::MLO) && !empty(4, View::CC));
    assert!(empty(9, View::CC) && !empty(9, View::MLO));
    assert!(!empty(3, View::CC) && !empty(3, View::MLO));
}

#[test]
fn negative_pairs_come_from_disjoint_instances() {
    let (_dir, out) = common::synth_dataset(15);
    let sets = common::all_pairs(&out);
    let instance: BTreeMap<String, String> = out
        .manifest_data
        .studies
        .iter()
        .flat_map(|s| {
            s.lesions
                .iter()
                .map(|l| (l.id.clone(), l.id.clone()))
                .chain(s.candidates.iter().map(|c| (c.id.clone(), c.instance.clone().unwrap())))
                .collect::<Vec<_>>()
        })
        .collect();
    assert_eq!(sets.positives.len(), 15);
    for p in &sets.positives {
        assert_eq!(instance[&p.source_a.object_id], instance[&p.source_b.object_id]);
        assert_ne!(p.source_a.image_id, p.source_b.image_id);
    }
    assert!(!sets.negatives.is_empty());
    for p in &sets.negatives {
        assert_ne!(instance[&p.source_a.object_id], instance[&p.source_b.object_id]);
    }
}

#[test]
fn images_load_back_at_full_size() {
    let (_dir, out) = common::synth_dataset(2);
    let study = &out.manifest_data.studies[0];
    let img = load_gray::<f64>(out.manifest.parent().unwrap().join(&study.cc_image)).unwrap();
    assert_eq!((img.width, img.height), (256, 256));
    assert!(img.data.iter().all(|v| (0.0..=1.0).contains(v)));
}
