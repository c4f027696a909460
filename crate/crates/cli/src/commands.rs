use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use dvmatch::data::{load_pair_sets, EnlargeMode, PairSets, Split, SplitManifest, DEFAULT_DELTA};
use dvmatch::eval::export_evaluation;
use dvmatch::gradcheck::{gradcheck as run_gradcheck, random_pair, GradCheckConfig};
use dvmatch::model::{ArchConfig, MatchModel};
use dvmatch::ncc::ncc as ncc_score;
use dvmatch::pipeline::{
    adjust_scores, fp_reduction_report, pipeline_scores, run_pipeline, threshold_for_sensitivity, NccScorer, OracleScorer, PairScorer,
    PipelineRun,
};
use dvmatch::synth::{write_synth_dataset, SynthConfig};
use dvmatch::train::{train_ensemble, train_members, Ensemble, FreezePreset, TrainConfig, TrainReport};
use dvmatch::{Error, Scalar};

use crate::config::{overlay, FileConfig, ModeChoice, Precision, ScorerKind, Snapshot};
use crate::{DataArgs, EvalArgs, GradcheckArgs, GradcheckFailed, NccArgs, PipelineArgs, SynthArgs, TrainArgs, UsageError};

/// Sensitivities reported in every evaluation summary.
const OPERATING_TARGETS: [f64; 3] = [0.9, 0.95, 0.99];
const ARCH_FILE: &str = "arch.json";

fn required<T>(v: Option<T>, flag: &str) -> Result<T> {
    v.ok_or_else(|| UsageError(format!("--{flag} is required (flag or config key)")).into())
}

fn existing(p: PathBuf, what: &str) -> Result<PathBuf> {
    if p.exists() {
        Ok(p)
    } else {
        Err(Error::Io {
            path: p,
            source: std::io::Error::new(std::io::ErrorKind::NotFound, format!("{what} not found")),
        }
        .into())
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn arch_preset(name: &str) -> Result<ArchConfig> {
    ArchConfig::preset(name).map_err(|e| UsageError(e.to_string()).into())
}

struct Data {
    manifest: PathBuf,
    split: Option<(PathBuf, SplitManifest)>,
    delta: f64,
}

impl Data {
    fn resolve(args: &DataArgs, file: &FileConfig) -> Result<Self> {
        let manifest = existing(required(args.manifest.clone().or(file.manifest.clone()), "manifest")?, "manifest")?;
        let split = match args.split.clone().or(file.split.clone()) {
            Some(p) => {
                let p = existing(p, "split manifest")?;
                let m = SplitManifest::load(&p)?;
                Some((p, m))
            }
            None => None,
        };
        let delta = args.delta.or(file.delta).unwrap_or(DEFAULT_DELTA);
        if !(delta > 0.0 && delta < 1.0) {
            return Err(UsageError(format!("delta {delta} must be in (0, 1)")).into());
        }
        Ok(Data { manifest, split, delta })
    }

    fn selector(&self, which: Split) -> Option<(&SplitManifest, Split)> {
        self.split.as_ref().map(|(_, m)| (m, which))
    }

    fn pairs<T: Scalar>(&self, which: Split) -> Result<PairSets<T>> {
        let sets = load_pair_sets(&self.manifest, self.selector(which), self.delta, EnlargeMode::Total)?;
        log::info!("{} positive and {} negative pairs", sets.positives.len(), sets.negatives.len());
        Ok(sets)
    }

    fn fill(&self, s: &mut Snapshot) {
        s.manifest = Some(self.manifest.clone());
        s.split = self.split.as_ref().map(|(p, _)| p.clone());
        s.delta = Some(self.delta);
    }
}

/// Architecture of a run: explicit preset wins, then the checkpoint's
/// recorded architecture, then `desk`.
fn resolve_arch(flag: &Option<String>, file: &FileConfig, checkpoint: Option<&Path>) -> Result<(String, ArchConfig)> {
    if let Some(name) = flag.clone().or(file.arch.clone()) {
        return Ok((name.clone(), arch_preset(&name)?));
    }
    if let Some(dir) = checkpoint {
        let p = dir.join(ARCH_FILE);
        if p.exists() {
            let text = fs::read_to_string(&p).map_err(|e| Error::Io { path: p.clone(), source: e })?;
            let arch: ArchConfig = serde_json::from_str(&text).map_err(|e| Error::Parse {
                path: p.clone(),
                reason: e.to_string(),
            })?;
            return Ok((format!("recorded in {}", p.display()), arch));
        }
    }
    Ok(("desk".into(), ArchConfig::desk()))
}

fn save_ensemble<T: Scalar>(ens: &Ensemble<T>, arch: &ArchConfig, reports: &[TrainReport], out: &Path) -> Result<()> {
    ens.save(out)?;
    write(&out.join(ARCH_FILE), &(serde_json::to_string_pretty(arch)? + "\n"))?;
    for (i, r) in reports.iter().enumerate() {
        write(&out.join(format!("loss_member{i}.csv")), &r.to_csv())?;
    }
    Ok(())
}

fn scores_csv(rows: &[(f64, u8)]) -> String {
    let mut s = String::from("score,label\n");
    for (v, l) in rows {
        let _ = writeln!(s, "{v},{l}");
    }
    s
}

fn read_scores_csv(path: &Path) -> Result<Vec<(f64, u8)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let bad = |line: usize, what: &str| Error::Parse {
        path: path.to_path_buf(),
        reason: format!("line {line}: {what}"),
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "score,label" => {}
        _ => return Err(bad(1, "expected header 'score,label'").into()),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let (s, l) = line.split_once(',').ok_or_else(|| bad(i + 1, "expected two fields"))?;
        let score: f64 = s.trim().parse().map_err(|_| bad(i + 1, "score is not a number"))?;
        let label = match l.trim() {
            "0" => 0,
            "1" => 1,
            _ => return Err(bad(i + 1, "label must be 0 or 1").into()),
        };
        rows.push((score, label));
    }
    Ok(rows)
}

pub fn synth(args: &SynthArgs, file: &FileConfig) -> Result<()> {
    let mut cfg: SynthConfig = overlay(&SynthConfig::default(), file.synth.as_ref(), "synth")?;
    if let Some(n) = args.patients {
        cfg.patients = n;
    }
    if let Some(s) = args.seed.or(file.seed) {
        cfg.seed = s;
    }
    let out = required(args.out.clone().or(file.out.clone()), "out")?;
    let written = write_synth_dataset(&cfg, &out)?;
    Snapshot {
        subcommand: "synth".into(),
        out: out.clone(),
        seed: Some(cfg.seed),
        synth: Some(cfg.clone()),
        ..Default::default()
    }
    .write(&out)?;
    println!(
        "wrote {} studies to {} (manifest {}, split {})",
        written.manifest_data.studies.len(),
        out.display(),
        written.manifest.display(),
        written.split.display()
    );
    Ok(())
}

pub fn train(args: &TrainArgs, file: &FileConfig, finetune: bool) -> Result<()> {
    let name = if finetune { "finetune" } else { "train" };
    let seed = required(args.seed.or(file.seed), "seed")?;
    let out = required(args.out.clone().or(file.out.clone()), "out")?;
    let checkpoint = if finetune {
        Some(existing(required(args.checkpoint.clone().or(file.checkpoint.clone()), "checkpoint")?, "checkpoint directory")?)
    } else {
        None
    };
    let (arch_name, arch) = resolve_arch(&args.arch, file, checkpoint.as_deref())?;
    let base = if arch == ArchConfig::desk() { TrainConfig::desk() } else { TrainConfig::default() };
    let mut cfg: TrainConfig = overlay(&base, file.train.as_ref(), "train")?;
    cfg.seed = seed;
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.lr {
        cfg.lr = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.members {
        cfg.ensemble_size = v;
    }
    if finetune {
        cfg.freeze_preset = FreezePreset::FineTune;
    }
    cfg.validate()?;
    let data = Data::resolve(&args.data, file)?;
    let precision = args.precision.or(file.precision).unwrap_or_default();

    let mut snap = Snapshot {
        subcommand: name.into(),
        arch: Some(arch_name),
        checkpoint: checkpoint.clone(),
        out: out.clone(),
        seed: Some(seed),
        precision: Some(precision),
        train: Some(cfg.clone()),
        ..Default::default()
    };
    data.fill(&mut snap);
    snap.write(&out)?;

    let reports = match precision {
        Precision::F32 => fit::<f32>(&data, &arch, &cfg, checkpoint.as_deref(), &out)?,
        Precision::F64 => fit::<f64>(&data, &arch, &cfg, checkpoint.as_deref(), &out)?,
    };
    for (i, r) in reports.iter().enumerate() {
        let last = r.epoch_means().last().copied().unwrap_or(f64::NAN);
        println!("member {i}: {} steps, final epoch loss {last:.4}", r.steps);
    }
    println!("saved {} members to {}", reports.len(), out.display());
    Ok(())
}

fn fit<T: Scalar>(data: &Data, arch: &ArchConfig, cfg: &TrainConfig, start: Option<&Path>, out: &Path) -> Result<Vec<TrainReport>> {
    let sets = data.pairs::<T>(Split::Train)?;
    let (ens, reports) = match start {
        Some(dir) => {
            let start = Ensemble::<T>::load(dir, arch)?;
            train_members(start.into_members(), &sets.positives, &sets.negatives, cfg)?
        }
        None => train_ensemble(arch, &sets.positives, &sets.negatives, cfg)?,
    };
    save_ensemble(&ens, arch, &reports, out)?;
    Ok(reports)
}

fn ensemble_scores<T: Scalar>(dir: &Path, arch: &ArchConfig, data: &Data) -> Result<Vec<(f64, u8)>> {
    let ens = Ensemble::<T>::load(dir, arch)?;
    let sets = data.pairs::<T>(Split::Test)?;
    sets.all()
        .iter()
        .map(|p| Ok((ens.predict(&p.patch_a, &p.patch_b)?.as_f64(), p.label)))
        .collect()
}

fn report_eval(out: &Path, title: &str, scores: &[(f64, u8)]) -> Result<()> {
    write(&out.join("scores.csv"), &scores_csv(scores))?;
    let (_, summary) = export_evaluation(out, title, scores, &OPERATING_TARGETS)?;
    println!("{title}: AUC {:.4} over {} positives and {} negatives", summary.auc, summary.positives, summary.negatives);
    for (t, op) in OPERATING_TARGETS.iter().zip(&summary.operating_points) {
        println!(
            "  sensitivity >= {t:.2}: threshold {} sensitivity {:.4} specificity {:.4}",
            op.threshold, op.sensitivity, op.specificity
        );
    }
    Ok(())
}

pub fn eval(args: &EvalArgs, file: &FileConfig) -> Result<()> {
    let out = required(args.out.clone().or(file.out.clone()), "out")?;
    let mut snap = Snapshot {
        subcommand: "eval".into(),
        out: out.clone(),
        ..Default::default()
    };
    let scores = if let Some(p) = args.scores.clone().or(file.scores.clone()) {
        let p = existing(p, "score file")?;
        let rows = read_scores_csv(&p)?;
        snap.scores = Some(p);
        rows
    } else {
        let dir = existing(required(args.checkpoint.clone().or(file.checkpoint.clone()), "checkpoint")?, "checkpoint directory")?;
        let (arch_name, arch) = resolve_arch(&args.arch, file, Some(&dir))?;
        let data = Data::resolve(&args.data, file)?;
        let precision = args.precision.or(file.precision).unwrap_or_default();
        data.fill(&mut snap);
        snap.arch = Some(arch_name);
        snap.precision = Some(precision);
        let rows = match precision {
            Precision::F32 => ensemble_scores::<f32>(&dir, &arch, &data)?,
            Precision::F64 => ensemble_scores::<f64>(&dir, &arch, &data)?,
        };
        snap.checkpoint = Some(dir);
        rows
    };
    snap.write(&out)?;
    report_eval(&out, "ensemble", &scores)
}

pub fn ncc(args: &NccArgs, file: &FileConfig) -> Result<()> {
    let out = required(args.out.clone().or(file.out.clone()), "out")?;
    let data = Data::resolve(&args.data, file)?;
    let mut snap = Snapshot {
        subcommand: "ncc".into(),
        out: out.clone(),
        ..Default::default()
    };
    data.fill(&mut snap);
    snap.write(&out)?;
    let sets = data.pairs::<f64>(Split::Test)?;
    let mut raw = String::from("raw,mapped,degenerate,label\n");
    let mut scores = Vec::new();
    for p in sets.all() {
        let s = ncc_score(&p.patch_a, &p.patch_b)?;
        let _ = writeln!(raw, "{},{},{},{}", s.raw, s.mapped, u8::from(s.degenerate), p.label);
        scores.push((s.mapped, p.label));
    }
    write(&out.join("ncc.csv"), &raw)?;
    report_eval(&out, "ncc", &scores)
}

fn records_csv(run: &PipelineRun) -> String {
    let mut s = String::from("patient,cc_id,mlo_id,match_probability,label\n");
    for r in &run.records {
        let _ = writeln!(s, "{},{},{},{},{}", r.patient, r.cc_id, r.mlo_id, r.match_probability, r.label);
    }
    s
}

fn score_candidates<T: Scalar>(kind: ScorerKind, checkpoint: Option<&(PathBuf, ArchConfig)>, data: &Data) -> Result<(String, PipelineRun)> {
    let ensemble;
    let scorer: &dyn PairScorer<T> = match (kind, checkpoint) {
        (ScorerKind::Ncc, _) => &NccScorer,
        (ScorerKind::Oracle, _) => &OracleScorer,
        (ScorerKind::Ensemble, Some((dir, arch))) => {
            ensemble = Ensemble::<T>::load(dir, arch)?;
            &ensemble
        }
        (ScorerKind::Ensemble, None) => return Err(UsageError("--checkpoint is required for the ensemble scorer".into()).into()),
    };
    let run = run_pipeline(&data.manifest, data.selector(Split::Test), scorer, data.delta, EnlargeMode::Total)?;
    Ok((scorer.name().to_string(), run))
}

pub fn pipeline(args: &PipelineArgs, file: &FileConfig) -> Result<()> {
    let out = required(args.out.clone().or(file.out.clone()), "out")?;
    let data = Data::resolve(&args.data, file)?;
    let scorer_kind = args.scorer.or(file.scorer).unwrap_or(ScorerKind::Ensemble);
    let modes = args.standalone_mode.or(file.standalone_mode).unwrap_or(ModeChoice::Both);
    let mut snap = Snapshot {
        subcommand: "pipeline".into(),
        out: out.clone(),
        scorer: Some(scorer_kind),
        standalone_mode: Some(modes),
        ..Default::default()
    };
    data.fill(&mut snap);

    let checkpoint = match scorer_kind {
        ScorerKind::Ensemble => {
            let dir = existing(required(args.checkpoint.clone().or(file.checkpoint.clone()), "checkpoint")?, "checkpoint directory")?;
            let (arch_name, arch) = resolve_arch(&args.arch, file, Some(&dir))?;
            snap.arch = Some(arch_name);
            snap.checkpoint = Some(dir.clone());
            Some((dir, arch))
        }
        _ => None,
    };
    let precision = args.precision.or(file.precision).unwrap_or_default();
    snap.precision = Some(precision);
    snap.write(&out)?;

    let (name, run) = match precision {
        Precision::F32 => score_candidates::<f32>(scorer_kind, checkpoint.as_ref(), &data)?,
        Precision::F64 => score_candidates::<f64>(scorer_kind, checkpoint.as_ref(), &data)?,
    };
    if run.skipped > 0 {
        log::warn!("{} pairs skipped: patch extraction failed", run.skipped);
    }
    write(&out.join("pairs.csv"), &records_csv(&run))?;
    let labels = run.detection_labels();
    println!(
        "{name}: {} scored pairs, {} detections ({} standalone)",
        run.records.len(),
        run.detections.len(),
        run.standalones().count()
    );
    for mode in modes.modes() {
        let tag = serde_json::to_value(mode)?.as_str().unwrap_or("mode").to_string();
        let dir = out.join(&tag);
        let scores = pipeline_scores(&run.records, run.standalones(), mode);
        let (_, summary) = export_evaluation(&dir, &format!("{name} ({tag})"), &scores, &OPERATING_TARGETS)?;

        let adjusted = adjust_scores(&run.detections, &run.records, mode);
        let mut csv = String::from("patient,id,view,original,adjusted,standalone,label\n");
        for (d, l) in adjusted.iter().zip(&labels) {
            let _ = writeln!(csv, "{},{},{},{},{},{},{}", d.patient, d.id, d.view, d.original, d.adjusted, u8::from(d.standalone), l);
        }
        write(&dir.join("adjusted.csv"), &csv)?;
        let threshold = threshold_for_sensitivity(&adjusted, &labels, 0.99);
        let fp = fp_reduction_report(&adjusted, &labels, threshold)?;
        write(&dir.join("fp_reduction.json"), &(serde_json::to_string_pretty(&fp)? + "\n"))?;
        println!(
            "  {tag}: AUC {:.4}; at sensitivity {:.3} (threshold {}) {} of {} false detections removed",
            summary.auc, fp.sensitivity, fp.threshold, fp.false_removed, fp.false_total
        );
    }
    Ok(())
}

pub fn gradcheck(args: &GradcheckArgs, file: &FileConfig) -> Result<()> {
    let (arch_name, arch) = resolve_arch(&args.arch, file, None)?;
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let cfg = GradCheckConfig {
        seed,
        max_per_tensor: args.max_per_tensor,
        ..GradCheckConfig::default()
    };
    let model = MatchModel::<f64>::build(&arch, seed)?;
    let (a, b) = random_pair(arch.input_size, seed);
    let report = run_gradcheck(&model, &a, &b, 1, &cfg)?;
    println!("{:<20} {:>12}  result", "layer", "max rel err");
    for (layer, err, ok) in report.by_layer() {
        println!("{layer:<20} {err:>12.3e}  {}", if ok { "pass" } else { "FAIL" });
    }
    println!("{} checked entries in {:.1} s", report.tensors.iter().map(|t| t.checked).sum::<usize>(), report.seconds);
    if let Some(out) = args.out.clone().or(file.out.clone()) {
        Snapshot {
            subcommand: "gradcheck".into(),
            arch: Some(arch_name),
            out: out.clone(),
            seed: Some(seed),
            ..Default::default()
        }
        .write(&out)?;
        write(&out.join("gradcheck.json"), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    }
    if report.passed() {
        Ok(())
    } else {
        Err(GradcheckFailed(report.max_rel_error()).into())
    }
}
