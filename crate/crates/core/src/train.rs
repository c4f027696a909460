//! Balanced sampling, the training loop, layer freezing and the mean-fusion
//! ensemble.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dihedral, PatchPair};
use crate::error::{Error, Result};
use crate::model::{load_checkpoint, save_checkpoint, ArchConfig, MatchModel};
use crate::rng::{self, stream_seed, streams};
use crate::scalar::Scalar;
use crate::tensor::{AdamConfig, AdamState, DropoutMode, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FreezePreset {
    #[default]
    None,
    /// Only the last convolution and the metric network train.
    FineTune,
}

/// On-line augmentation during training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Augment {
    #[default]
    None,
    /// Each epoch, every pair gets one random transform per patch.
    Sampled,
    /// Every pair expands to all 64 transform combinations up front.
    Full,
    /// Each epoch, one random transform applied to both patches of a pair,
    /// so relative orientation is preserved.
    Joint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub ensemble_size: usize,
    pub freeze_preset: FreezePreset,
    pub augment: Augment,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            batch_size: 512,
            epochs: 30,
            seed: 0,
            ensemble_size: 2,
            freeze_preset: FreezePreset::None,
            augment: Augment::None,
        }
    }
}

impl TrainConfig {
    /// Settings that train the desk architecture on the default synthetic
    /// set within a few minutes on one core.
    pub fn desk() -> Self {
        TrainConfig {
            lr: 3e-4,
            batch_size: 4,
            epochs: 80,
            augment: Augment::None,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Validation(format!("lr {} must be positive", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Validation("batch_size must be at least 1".into()));
        }
        if self.ensemble_size == 0 {
            return Err(Error::Validation("ensemble_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Sets freeze flags: `None` unfreezes everything, `FineTune` freezes every
/// tower convolution except the last.
pub fn apply_freeze_preset<T: Scalar>(model: &mut MatchModel<T>, preset: FreezePreset) -> Result<()> {
    let names = model.layer_names();
    let convs: Vec<&String> = names.iter().filter(|n| n.starts_with("feature.")).collect();
    let last_conv = convs.last().map(|s| s.as_str());
    for name in &names {
        let frozen = preset == FreezePreset::FineTune && name.starts_with("feature.") && Some(name.as_str()) != last_conv;
        model.set_layer_frozen(name, frozen)?;
    }
    Ok(())
}

/// Indices of a member's training set: every positive plus as many
/// negatives, drawn without replacement from a stream keyed by
/// `(seed, member)`. Falls back to drawing with replacement when negatives
/// are scarce.
pub fn balanced_indices(n_pos: usize, n_neg: usize, member: u64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n_pos == 0 {
        return Err(Error::Validation("balanced sampling needs at least one positive".into()));
    }
    if n_neg == 0 {
        return Err(Error::Validation("balanced sampling needs at least one negative".into()));
    }
    let mut r = rng::stream(seed, streams::SAMPLING, member);
    let neg = if n_neg >= n_pos {
        index::sample(&mut r, n_neg, n_pos).into_vec()
    } else {
        log::warn!("only {n_neg} negatives for {n_pos} positives; sampling with replacement");
        (0..n_pos).map(|_| r.random_range(0..n_neg)).collect()
    };
    Ok(((0..n_pos).collect(), neg))
}

pub fn balanced_sample<P: Clone>(positives: &[P], negatives: &[P], member: u64, seed: u64) -> Result<Vec<P>> {
    let (pi, ni) = balanced_indices(positives.len(), negatives.len(), member, seed)?;
    Ok(pi
        .into_iter()
        .map(|i| positives[i].clone())
        .chain(ni.into_iter().map(|i| negatives[i].clone()))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub batch: usize,
    pub loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub losses: Vec<LossRecord>,
    pub steps: u64,
}

impl TrainReport {
    /// Sample-weighted mean loss of each epoch.
    pub fn epoch_means(&self) -> Vec<f64> {
        let mut out: Vec<(f64, usize)> = Vec::new();
        for r in &self.losses {
            if out.len() <= r.epoch {
                out.resize(r.epoch + 1, (0.0, 0));
            }
            out[r.epoch].0 += r.loss;
            out[r.epoch].1 += 1;
        }
        out.into_iter().map(|(s, n)| s / n.max(1) as f64).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,batch,loss\n");
        for r in &self.losses {
            s.push_str(&format!("{},{},{}\n", r.epoch, r.batch, r.loss));
        }
        s
    }
}

fn member_root(seed: u64, member: u64) -> u64 {
    stream_seed(seed, streams::MEMBER, member)
}

/// Trains `model` on `data` with Adam and per-sample dropout masks.
/// Frozen parameters are never touched. `member` selects the RNG streams
/// for shuffling, augmentation and dropout.
pub fn train<T: Scalar>(model: &mut MatchModel<T>, data: &[PatchPair<T>], config: &TrainConfig, member: u64) -> Result<TrainReport> {
    train_observed(model, data, config, member, |_, _| Ok(()))
}

/// [`train`] calling `after_epoch(epoch, model)` at the end of every epoch.
pub fn train_observed<T: Scalar>(
    model: &mut MatchModel<T>,
    data: &[PatchPair<T>],
    config: &TrainConfig,
    member: u64,
    mut after_epoch: impl FnMut(usize, &MatchModel<T>) -> Result<()>,
) -> Result<TrainReport> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Validation("training set is empty".into()));
    }
    let root = member_root(config.seed, member);
    let expanded;
    let data = if config.augment == Augment::Full {
        let all = Dihedral::all();
        let mut v = Vec::with_capacity(data.len() * 64);
        for p in data {
            for a in all {
                for b in all {
                    v.push(p.transformed(a, b)?);
                }
            }
        }
        expanded = v;
        &expanded[..]
    } else {
        data
    };

    let mut adam = AdamState::new(model.params(), AdamConfig::with_lr(config.lr))?;
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut sample_counter = 0u64;
    let all = Dihedral::all();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng::stream(root, streams::SHUFFLE, epoch as u64));
        let mut aug_rng = rng::stream(root, streams::AUGMENT, epoch as u64);
        for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
            let mut acc: Vec<Vec<T>> = model.params().iter().map(|p| vec![T::zero(); p.value.len()]).collect();
            let mut loss_sum = 0.0;
            for &i in chunk {
                let pair = &data[i];
                let dropout = DropoutMode::Train {
                    seed: stream_seed(root, streams::DROPOUT, sample_counter),
                };
                sample_counter += 1;
                let transforms = match config.augment {
                    Augment::Sampled => Some((all[aug_rng.random_range(0..8)], all[aug_rng.random_range(0..8)])),
                    Augment::Joint => {
                        let d = all[aug_rng.random_range(0..8)];
                        Some((d, d))
                    }
                    Augment::None | Augment::Full => None,
                };
                let (loss, grads) = match transforms {
                    Some((da, db)) => {
                        let (a, b): (Tensor<T>, Tensor<T>) = (da.apply(&pair.patch_a)?, db.apply(&pair.patch_b)?);
                        model.loss_and_grads(&a, &b, pair.label, dropout)?
                    }
                    None => model.loss_and_grads(&pair.patch_a, &pair.patch_b, pair.label, dropout)?,
                };
                loss_sum += loss.as_f64();
                for (a, g) in acc.iter_mut().zip(grads) {
                    for (x, y) in a.iter_mut().zip(g) {
                        *x = *x + y;
                    }
                }
            }
            let loss = loss_sum / chunk.len() as f64;
            if !loss.is_finite() {
                let history = report.losses.iter().rev().take(10).rev().map(|r| r.loss).collect();
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch,
                    loss,
                    history,
                });
            }
            let scale = T::c(1.0 / chunk.len() as f64);
            for (p, g) in model.params_mut().iter_mut().zip(acc) {
                p.value.set_grad(g.into_iter().map(|v| v * scale).collect())?;
            }
            adam.step(model.params_mut())?;
            report.losses.push(LossRecord { epoch, batch, loss });
        }
        log::debug!("member {member} epoch {epoch}: mean loss {:.5}", report.epoch_means()[epoch]);
        after_epoch(epoch, model)?;
    }
    for p in model.params_mut() {
        p.value.clear_grad();
    }
    report.steps = adam.step_count;
    Ok(report)
}

/// Members whose match probabilities are averaged.
#[derive(Clone, Debug)]
pub struct Ensemble<T> {
    members: Vec<MatchModel<T>>,
}

impl<T: Scalar> Ensemble<T> {
    pub fn new(members: Vec<MatchModel<T>>) -> Result<Self> {
        if let Some(first) = members.first() {
            for m in &members[1..] {
                if m.fingerprint() != first.fingerprint() {
                    return Err(Error::IncompatibleCheckpoint {
                        expected: first.fingerprint(),
                        found: m.fingerprint(),
                    });
                }
            }
        }
        Ok(Ensemble { members })
    }

    pub fn members(&self) -> &[MatchModel<T>] {
        &self.members
    }

    pub fn into_members(self) -> Vec<MatchModel<T>> {
        self.members
    }

    /// Evaluation-mode match probability of every member.
    pub fn member_probabilities(&self, patch_a: &Tensor<T>, patch_b: &Tensor<T>) -> Result<Vec<T>> {
        self.members
            .iter()
            .map(|m| m.forward_pair(patch_a, patch_b, DropoutMode::Eval))
            .collect()
    }

    /// Arithmetic mean of member probabilities.
    pub fn predict(&self, patch_a: &Tensor<T>, patch_b: &Tensor<T>) -> Result<T> {
        if self.members.is_empty() {
            return Err(Error::State("ensemble has no members".into()));
        }
        let probs = self.member_probabilities(patch_a, patch_b)?;
        Ok(probs.iter().copied().sum::<T>() / T::c(probs.len() as f64))
    }

    pub fn member_path(dir: &Path, i: usize) -> PathBuf {
        dir.join(format!("member{i}.dvmm"))
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.members
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let p = Self::member_path(dir, i);
                save_checkpoint(m, &p)?;
                Ok(p)
            })
            .collect()
    }

    /// Loads `member0.dvmm`, `member1.dvmm`, … until one is missing.
    pub fn load(dir: impl AsRef<Path>, arch: &ArchConfig) -> Result<Self> {
        let dir = dir.as_ref();
        let mut members = Vec::new();
        while Self::member_path(dir, members.len()).exists() {
            members.push(load_checkpoint(Self::member_path(dir, members.len()), arch)?);
        }
        if members.is_empty() {
            return Err(Error::Validation(format!("no member checkpoints in {}", dir.display())));
        }
        Self::new(members)
    }
}

/// Trains given starting models, each on its own balanced sample.
pub fn train_members<T: Scalar>(
    mut members: Vec<MatchModel<T>>,
    positives: &[PatchPair<T>],
    negatives: &[PatchPair<T>],
    config: &TrainConfig,
) -> Result<(Ensemble<T>, Vec<TrainReport>)> {
    config.validate()?;
    let mut reports = Vec::new();
    for (i, model) in members.iter_mut().enumerate() {
        let set = balanced_sample(positives, negatives, i as u64, config.seed)?;
        apply_freeze_preset(model, config.freeze_preset)?;
        log::info!("member {i}: {} pairs, {} epochs", set.len(), config.epochs);
        reports.push(train(model, &set, config, i as u64)?);
    }
    Ok((Ensemble::new(members)?, reports))
}

/// Builds `ensemble_size` fresh members (distinct init streams) and trains
/// each on its own balanced sample.
pub fn train_ensemble<T: Scalar>(
    arch: &ArchConfig,
    positives: &[PatchPair<T>],
    negatives: &[PatchPair<T>],
    config: &TrainConfig,
) -> Result<(Ensemble<T>, Vec<TrainReport>)> {
    config.validate()?;
    let members = (0..config.ensemble_size)
        .map(|i| MatchModel::build(arch, stream_seed(config.seed, streams::INIT, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    train_members(members, positives, negatives, config)
}
