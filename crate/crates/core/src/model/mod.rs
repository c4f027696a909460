//! The Siamese matching network: one shared convolutional feature tower
//! applied to both patches, concatenation, and a three-layer metric network
//! ending in a two-way softmax.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{self, streams};
use crate::scalar::Scalar;
use crate::tensor::ops::{conv_out_extent, Phase};
use crate::tensor::{DropoutMode, LayerSpec, Parameter, Tape, Tensor, Var};

/// Dropout applied after FC1 and after FC2.
pub const METRIC_DROPOUT: f64 = 0.5;

/// Index of the "match" class in the softmax output.
pub const MATCH_CLASS: usize = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub input_channels: usize,
    pub input_size: usize,
    /// Convolution, max-pool and ReLU layers of the shared tower.
    pub feature: Vec<LayerSpec>,
    /// Widths of FC1 and FC2. FC3 always has two outputs.
    pub metric_hidden: [usize; 2],
}

impl ArchConfig {
    /// Full-size tower: 24-64-96-96-64 channels, FC 1024-1024-2.
    pub fn full() -> Self {
        Self::tower(&[24, 64, 96, 96, 64], [1024, 1024])
    }

    /// Reduced tower for CPU-scale training and tests: 8-16-16-16-16
    /// channels, FC 128-128-2, and a stride-2 first convolution.
    pub fn desk() -> Self {
        Self::strided_tower(&[8, 16, 16, 16, 16], 2, [128, 128])
    }

    /// The five-convolution layout with the given channel widths:
    /// conv7 → pool → conv5 → pool → conv3 → conv3 → conv3 → pool.
    pub fn tower(channels: &[usize; 5], metric_hidden: [usize; 2]) -> Self {
        Self::strided_tower(channels, 1, metric_hidden)
    }

    /// [`ArchConfig::tower`] with a configurable stride on the first
    /// convolution.
    pub fn strided_tower(channels: &[usize; 5], first_stride: usize, metric_hidden: [usize; 2]) -> Self {
        let [c1, c2, c3, c4, c5] = *channels;
        use LayerSpec::Relu;
        ArchConfig {
            input_channels: 1,
            input_size: 64,
            feature: vec![
                LayerSpec::Conv2d {
                    out_channels: c1,
                    kernel: 7,
                    stride: first_stride,
                    padding: 3,
                },
                Relu,
                LayerSpec::pool(3, 2),
                LayerSpec::conv(c2, 5, 2),
                Relu,
                LayerSpec::pool(3, 2),
                LayerSpec::conv(c3, 3, 1),
                Relu,
                LayerSpec::conv(c4, 3, 1),
                Relu,
                LayerSpec::conv(c5, 3, 1),
                Relu,
                LayerSpec::pool(3, 2),
            ],
            metric_hidden,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::full()),
            "desk" => Ok(Self::desk()),
            other => Err(Error::Validation(format!("unknown architecture preset '{other}'"))),
        }
    }

    /// Stable 64-bit hash of the hyperparameters.
    pub fn fingerprint(&self) -> u64 {
        let canonical = serde_json::to_string(self).expect("arch config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }

    /// Walks the layer shapes, returning the parameter layout and the
    /// flattened feature length of one tower.
    fn plan(&self) -> Result<(Vec<Step>, Vec<ParamShape>, usize)> {
        let arch_err = |layer: String, reason: String| Error::Architecture { layer, reason };
        if self.input_channels == 0 || self.input_size == 0 {
            return Err(arch_err("input".into(), "input extent must be positive".into()));
        }
        let (mut c, mut h, mut w) = (self.input_channels, self.input_size, self.input_size);
        let mut steps = Vec::new();
        let mut shapes = Vec::new();
        let mut conv_no = 0;
        let mut pool_no = 0;
        for (i, spec) in self.feature.iter().enumerate() {
            spec.validate().map_err(|e| match e {
                Error::Architecture { reason, .. } => arch_err(format!("feature[{i}] {}", spec.kind()), reason),
                e => e,
            })?;
            match *spec {
                LayerSpec::Conv2d {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    conv_no += 1;
                    let name = format!("conv{conv_no}");
                    let ho = conv_out_extent(h, kernel, stride, padding);
                    let wo = conv_out_extent(w, kernel, stride, padding);
                    let (Some(ho), Some(wo)) = (ho, wo) else {
                        return Err(arch_err(
                            format!("feature[{i}] {name}"),
                            format!("{kernel}x{kernel} kernel does not fit {h}x{w} input with padding {padding}"),
                        ));
                    };
                    steps.push(Step::Conv {
                        weight: shapes.len() * 2,
                        stride,
                        padding,
                    });
                    shapes.push(ParamShape {
                        layer: format!("feature.{name}"),
                        weight: vec![out_channels, c, kernel, kernel],
                        fan_in: c * kernel * kernel,
                    });
                    (c, h, w) = (out_channels, ho, wo);
                }
                LayerSpec::Maxpool2d { window, stride } => {
                    pool_no += 1;
                    if window > h || window > w {
                        return Err(arch_err(
                            format!("feature[{i}] pool{pool_no}"),
                            format!("window {window} exceeds {h}x{w} input"),
                        ));
                    }
                    steps.push(Step::Pool { window, stride });
                    (h, w) = ((h - window) / stride + 1, (w - window) / stride + 1);
                }
                LayerSpec::Relu => steps.push(Step::Relu),
                _ => {
                    return Err(arch_err(
                        format!("feature[{i}] {}", spec.kind()),
                        "only conv2d, maxpool2d and relu belong in the feature tower".into(),
                    ))
                }
            }
        }
        if conv_no == 0 {
            return Err(arch_err("feature".into(), "tower needs at least one convolution".into()));
        }
        let feature_len = c * h * w;
        let mut fan_in = 2 * feature_len;
        for (k, &width) in self.metric_hidden.iter().chain(&[2]).enumerate() {
            if width == 0 {
                return Err(arch_err(format!("metric fc{}", k + 1), "zero width".into()));
            }
            shapes.push(ParamShape {
                layer: format!("metric.fc{}", k + 1),
                weight: vec![width, fan_in],
                fan_in,
            });
            fan_in = width;
        }
        Ok((steps, shapes, feature_len))
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Step {
    /// `weight` indexes the parameter list; the bias follows it.
    Conv {
        weight: usize,
        stride: usize,
        padding: usize,
    },
    Pool {
        window: usize,
        stride: usize,
    },
    Relu,
}

struct ParamShape {
    layer: String,
    weight: Vec<usize>,
    fan_in: usize,
}

/// Handles into one recorded pair forward pass.
#[derive(Clone, Debug)]
pub struct PairTrace {
    pub feature_a: Var,
    pub feature_b: Var,
    /// Softmax output, `[no-match, match]`.
    pub probs: Var,
    /// One tape variable per model parameter, in parameter order.
    pub params: Vec<Var>,
}

/// A built network: parameters in a single store, read by both tower paths.
#[derive(Clone, Debug)]
pub struct MatchModel<T> {
    arch: ArchConfig,
    steps: Vec<Step>,
    params: Vec<Parameter<T>>,
    feature_len: usize,
    fingerprint: u64,
    /// Seed of the run that produced these parameters.
    pub seed: u64,
}

impl<T: Scalar> MatchModel<T> {
    /// Builds the network and initializes it from `seed` (fan-in scaled
    /// uniform weights, zero biases).
    pub fn build(arch: &ArchConfig, seed: u64) -> Result<Self> {
        let (steps, shapes, feature_len) = arch.plan()?;
        let mut rng = rng::stream(seed, streams::INIT, 0);
        let mut params = Vec::with_capacity(shapes.len() * 2);
        for (i, s) in shapes.iter().enumerate() {
            // Gain 2 for layers feeding a ReLU, 1 for the softmax layer.
            let gain = if i + 1 == shapes.len() { 3.0 } else { 6.0 };
            let bound = (gain / s.fan_in as f64).sqrt();
            let w = Tensor::from_fn(&s.weight, |_| T::c(rng.random_range(-bound..bound)));
            params.push(Parameter::new(format!("{}.weight", s.layer), w));
            params.push(Parameter::new(format!("{}.bias", s.layer), Tensor::zeros(&[s.weight[0]])));
        }
        Ok(MatchModel {
            arch: arch.clone(),
            steps,
            params,
            feature_len,
            fingerprint: arch.fingerprint(),
            seed,
        })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn feature_len(&self) -> usize {
        self.feature_len
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Parameter<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Parameter<T>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    /// Total scalar parameter count.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Parametric layer names, tower first: `feature.conv1`, …, `metric.fc3`.
    pub fn layer_names(&self) -> Vec<String> {
        self.params
            .iter()
            .step_by(2)
            .map(|p| p.name.trim_end_matches(".weight").to_string())
            .collect()
    }

    pub fn set_layer_frozen(&mut self, layer: &str, frozen: bool) -> Result<()> {
        let prefix = format!("{layer}.");
        let mut hit = false;
        for p in self.params.iter_mut().filter(|p| p.name.starts_with(&prefix)) {
            p.frozen = frozen;
            hit = true;
        }
        if hit {
            Ok(())
        } else {
            Err(Error::Validation(format!("no layer named '{layer}'")))
        }
    }

    pub fn frozen_layers(&self) -> Vec<String> {
        self.layer_names()
            .into_iter()
            .zip(self.params.iter().step_by(2))
            .filter(|(_, p)| p.frozen)
            .map(|(n, _)| n)
            .collect()
    }

    fn check_patch(&self, patch: &Tensor<T>) -> Result<()> {
        let a = &self.arch;
        let want = [a.input_channels, a.input_size, a.input_size];
        if patch.dims() != want {
            return Err(Error::dim(
                "forward_pair",
                "patch shape",
                format!("{want:?}"),
                format!("{:?}", patch.dims()),
            ));
        }
        Ok(())
    }

    /// Registers every parameter on the tape once; both tower paths then
    /// consume the same variables.
    pub fn register_params<'p>(&'p self, tape: &mut Tape<'p, T>) -> Vec<Var> {
        self.params.iter().map(|p| tape.param(&p.value)).collect()
    }

    /// Runs the shared tower on one patch already placed on the tape.
    pub fn tower(&self, tape: &mut Tape<'_, T>, params: &[Var], x: Var) -> Result<Var> {
        self.tower_steps(tape, params, x, 0, self.steps.len())
    }

    /// Tower steps `from..to` only; `x` is the activation entering `from`.
    fn tower_steps(&self, tape: &mut Tape<'_, T>, params: &[Var], mut x: Var, from: usize, to: usize) -> Result<Var> {
        for step in &self.steps[from..to] {
            x = match *step {
                Step::Conv {
                    weight,
                    stride,
                    padding,
                } => tape.conv2d(x, params[weight], params[weight + 1], stride, padding)?,
                Step::Pool { window, stride } => tape.maxpool2d(x, window, stride)?,
                Step::Relu => tape.relu(x),
            };
        }
        Ok(x)
    }

    /// FC1 → ReLU → dropout → FC2 → ReLU → dropout → FC3 → softmax.
    pub fn metric(&self, tape: &mut Tape<'_, T>, params: &[Var], joint: Var, mode: DropoutMode) -> Result<Var> {
        let first = self.params.len() - 6;
        let (phase, seed) = match mode {
            DropoutMode::Eval => (Phase::Eval, 0),
            DropoutMode::Train { seed } => (Phase::Train, seed),
        };
        let mut h = joint;
        for k in 0..3 {
            let w = params[first + 2 * k];
            h = tape.fc(h, w, params[first + 2 * k + 1])?;
            if k < 2 {
                h = tape.relu(h);
                let mut r = rng::stream(seed, streams::DROPOUT, k as u64);
                h = tape.dropout(h, METRIC_DROPOUT, phase, &mut r)?;
            }
        }
        tape.softmax(h)
    }

    /// Records a full pair forward pass on `tape`. Concatenation order is
    /// `patch_a` then `patch_b` (CC then MLO).
    pub fn trace_pair<'p>(
        &'p self,
        tape: &mut Tape<'p, T>,
        patch_a: &Tensor<T>,
        patch_b: &Tensor<T>,
        mode: DropoutMode,
    ) -> Result<PairTrace> {
        self.check_patch(patch_a)?;
        self.check_patch(patch_b)?;
        let params = self.register_params(tape);
        let xa = tape.constant(patch_a.clone());
        let xb = tape.constant(patch_b.clone());
        let feature_a = self.tower(tape, &params, xa)?;
        let feature_b = self.tower(tape, &params, xb)?;
        let joint = tape.concat(&[feature_a, feature_b]);
        let probs = self.metric(tape, &params, joint, mode)?;
        Ok(PairTrace {
            feature_a,
            feature_b,
            probs,
            params,
        })
    }

    /// Match probability of `(patch_a, patch_b)`.
    pub fn forward_pair(&self, patch_a: &Tensor<T>, patch_b: &Tensor<T>, mode: DropoutMode) -> Result<T> {
        let mut tape = Tape::new();
        let trace = self.trace_pair(&mut tape, patch_a, patch_b, mode)?;
        Ok(tape.value(trace.probs).data()[MATCH_CLASS])
    }

    /// Mean of both concatenation orders, evaluation mode.
    pub fn forward_pair_symmetric(&self, patch_a: &Tensor<T>, patch_b: &Tensor<T>) -> Result<T> {
        let ab = self.forward_pair(patch_a, patch_b, DropoutMode::Eval)?;
        let ba = self.forward_pair(patch_b, patch_a, DropoutMode::Eval)?;
        Ok((ab + ba) / T::c(2.0))
    }

    /// Tower output for one patch, evaluation mode.
    pub fn features(&self, patch: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_patch(patch)?;
        let mut tape = Tape::new();
        let params = self.register_params(&mut tape);
        let x = tape.constant(patch.clone());
        let f = self.tower(&mut tape, &params, x)?;
        Ok(tape.value(f).clone())
    }

    /// Cross-entropy of one labelled pair and its gradient with respect to
    /// every parameter (zeros where none flowed).
    pub fn loss_and_grads(
        &self,
        patch_a: &Tensor<T>,
        patch_b: &Tensor<T>,
        label: u8,
        mode: DropoutMode,
    ) -> Result<(T, Vec<Vec<T>>)> {
        let mut tape = Tape::new();
        let trace = self.trace_pair(&mut tape, patch_a, patch_b, mode)?;
        let loss = tape.cross_entropy(trace.probs, &[label])?;
        tape.backward(loss)?;
        let grads = trace
            .params
            .iter()
            .zip(&self.params)
            .map(|(&v, p)| {
                tape.grad(v)
                    .map(<[T]>::to_vec)
                    .unwrap_or_else(|| vec![T::zero(); p.value.len()])
            })
            .collect();
        Ok((tape.value(loss).data()[0], grads))
    }

    /// Cross-entropy of one labelled pair, forward only.
    pub fn pair_loss(&self, patch_a: &Tensor<T>, patch_b: &Tensor<T>, label: u8, mode: DropoutMode) -> Result<T> {
        let mut tape = Tape::new();
        let trace = self.trace_pair(&mut tape, patch_a, patch_b, mode)?;
        let loss = tape.cross_entropy(trace.probs, &[label])?;
        Ok(tape.value(loss).data()[0])
    }

    /// Index of the tower step that reads parameter `param`, if any.
    pub fn tower_step_of(&self, param: usize) -> Option<usize> {
        self.steps
            .iter()
            .position(|s| matches!(*s, Step::Conv { weight, .. } if weight == param || weight + 1 == param))
    }

    /// Activation of `patch` entering tower step `step`.
    pub fn tower_prefix(&self, patch: &Tensor<T>, step: usize) -> Result<Tensor<T>> {
        self.check_patch(patch)?;
        let mut tape = Tape::new();
        let params = self.register_params(&mut tape);
        let x = tape.constant(patch.clone());
        let f = self.tower_steps(&mut tape, &params, x, 0, step.min(self.steps.len()))?;
        Ok(tape.value(f).clone())
    }

    /// [`MatchModel::pair_loss`] resumed from both towers' activations
    /// entering step `step` (from [`MatchModel::tower_prefix`]).
    pub fn suffix_loss(&self, act_a: &Tensor<T>, act_b: &Tensor<T>, step: usize, label: u8, mode: DropoutMode) -> Result<T> {
        let mut tape = Tape::new();
        let params = self.register_params(&mut tape);
        let xa = tape.constant(act_a.clone());
        let xb = tape.constant(act_b.clone());
        let fa = self.tower_steps(&mut tape, &params, xa, step, self.steps.len())?;
        let fb = self.tower_steps(&mut tape, &params, xb, step, self.steps.len())?;
        let joint = tape.concat(&[fa, fb]);
        let probs = self.metric(&mut tape, &params, joint, mode)?;
        let loss = tape.cross_entropy(probs, &[label])?;
        Ok(tape.value(loss).data()[0])
    }

    /// Cross-entropy from precomputed tower outputs (`[feature_a, feature_b]`
    /// flattened), running only the metric network.
    pub fn metric_loss(&self, joint: &Tensor<T>, label: u8, mode: DropoutMode) -> Result<T> {
        if joint.len() != 2 * self.feature_len {
            return Err(Error::dim("metric_loss", "joint feature", 2 * self.feature_len, joint.len()));
        }
        let mut tape = Tape::new();
        let params = self.register_params(&mut tape);
        let x = tape.constant(joint.clone().reshape(vec![joint.len()])?);
        let probs = self.metric(&mut tape, &params, x, mode)?;
        let loss = tape.cross_entropy(probs, &[label])?;
        Ok(tape.value(loss).data()[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn patch(seed: u64) -> Tensor<f64> {
        let mut r = rng::stream(seed, "test", 0);
        Tensor::from_fn(&[1, 64, 64], |_| r.random_range(-1.0..1.0))
    }

    /// Independent shape walk: conv (k, pad) keeps size up to the first
    /// stride, pool(3, 2) maps n → (n-3)/2+1.
    fn expected_param_count(c: [usize; 5], first_stride: usize, fc: [usize; 2]) -> usize {
        let pool = |n: usize| (n - 3) / 2 + 1;
        let side = pool(pool(pool(64 / first_stride)));
        let convs = [(1, c[0], 7), (c[0], c[1], 5), (c[1], c[2], 3), (c[2], c[3], 3), (c[3], c[4], 3)];
        let conv_params: usize = convs.iter().map(|&(i, o, k)| o * i * k * k + o).sum();
        let feat = c[4] * side * side;
        let fc_params = (2 * feat * fc[0] + fc[0]) + (fc[0] * fc[1] + fc[1]) + (fc[1] * 2 + 2);
        conv_params + fc_params
    }

    #[test]
    fn parameter_count_matches_shape_walk() {
        let desk = MatchModel::<f64>::build(&ArchConfig::desk(), 1).unwrap();
        assert_eq!(desk.param_count(), expected_param_count([8, 16, 16, 16, 16], 2, [128, 128]));
        assert_eq!(desk.feature_len(), 16 * 3 * 3);
        let full = ArchConfig::full();
        let (_, shapes, feat) = full.plan().unwrap();
        let n: usize = shapes.iter().map(|s| s.weight.iter().product::<usize>() + s.weight[0]).sum();
        assert_eq!(n, expected_param_count([24, 64, 96, 96, 64], 1, [1024, 1024]));
        assert_eq!(feat, 64 * 7 * 7);
    }

    #[test]
    fn forward_is_a_probability() {
        let m = MatchModel::<f64>::build(&ArchConfig::desk(), 3).unwrap();
        let p = m.forward_pair(&patch(1), &patch(2), DropoutMode::Eval).unwrap();
        assert!(p > 0.0 && p < 1.0);
        let same = m.forward_pair(&patch(1), &patch(1), DropoutMode::Eval).unwrap();
        assert!(same > 0.0 && same < 1.0);
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = MatchModel::<f64>::build(&ArchConfig::desk(), 9).unwrap();
        let b = MatchModel::<f64>::build(&ArchConfig::desk(), 9).unwrap();
        let c = MatchModel::<f64>::build(&ArchConfig::desk(), 10).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn resumed_tower_matches_full_pass() {
        let m = MatchModel::<f64>::build(&ArchConfig::desk(), 2).unwrap();
        let (a, b) = (patch(1), patch(2));
        let mode = DropoutMode::Train { seed: 5 };
        let full = m.pair_loss(&a, &b, 1, mode).unwrap();
        for pi in 0..m.params().len() {
            if let Some(s) = m.tower_step_of(pi) {
                let (xa, xb) = (m.tower_prefix(&a, s).unwrap(), m.tower_prefix(&b, s).unwrap());
                assert_eq!(m.suffix_loss(&xa, &xb, s, 1, mode).unwrap().to_bits(), full.to_bits());
            }
        }
        assert_eq!(m.tower_step_of(0), Some(0));
        assert_eq!(m.tower_step_of(m.params().len() - 1), None);
    }

    #[test]
    fn towers_share_storage() {
        let mut m = MatchModel::<f64>::build(&ArchConfig::desk(), 4).unwrap();
        let x = patch(5);
        let mut tape = Tape::new();
        let t = m.trace_pair(&mut tape, &x, &x, DropoutMode::Eval).unwrap();
        assert_eq!(tape.value(t.feature_a).data(), tape.value(t.feature_b).data());
        drop(tape);

        // mutate through the named parameter; both paths observe the change
        let before = m.features(&x).unwrap();
        m.param_mut("feature.conv1.bias").unwrap().value.data_mut()[0] += 0.25;
        let mut tape = Tape::new();
        let t = m.trace_pair(&mut tape, &x, &patch(6), DropoutMode::Eval).unwrap();
        let after_a = tape.value(t.feature_a).clone();
        let mut tape2 = Tape::new();
        let t2 = m.trace_pair(&mut tape2, &patch(6), &x, DropoutMode::Eval).unwrap();
        assert_ne!(before.data(), after_a.data());
        assert_eq!(after_a.data(), tape2.value(t2.feature_b).data());
    }

    #[test]
    fn differing_patches_give_tower_gradient() {
        let m = MatchModel::<f64>::build(&ArchConfig::desk(), 4).unwrap();
        let (_, grads) = m
            .loss_and_grads(&patch(1), &patch(2), 1, DropoutMode::Train { seed: 3 })
            .unwrap();
        let tower_nonzero = m
            .params()
            .iter()
            .zip(&grads)
            .filter(|(p, _)| p.name.starts_with("feature."))
            .any(|(_, g)| g.iter().any(|&v| v != 0.0));
        assert!(tower_nonzero);
    }

    #[test]
    fn eval_is_deterministic_and_train_varies_with_seed() {
        let m = MatchModel::<f64>::build(&ArchConfig::desk(), 4).unwrap();
        let (a, b) = (patch(1), patch(2));
        let e1 = m.forward_pair(&a, &b, DropoutMode::Eval).unwrap();
        let e2 = m.forward_pair(&a, &b, DropoutMode::Eval).unwrap();
        assert_eq!(e1.to_bits(), e2.to_bits());
        let t1 = m.forward_pair(&a, &b, DropoutMode::Train { seed: 1 }).unwrap();
        let t1b = m.forward_pair(&a, &b, DropoutMode::Train { seed: 1 }).unwrap();
        assert_eq!(t1.to_bits(), t1b.to_bits());
    }

    #[test]
    fn wrong_patch_shape() {
        let m = MatchModel::<f64>::build(&ArchConfig::desk(), 4).unwrap();
        let bad = Tensor::zeros(&[1, 32, 32]);
        let err = m.forward_pair(&bad, &patch(1), DropoutMode::Eval).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn architecture_errors_name_the_layer() {
        let mut arch = ArchConfig::desk();
        arch.input_size = 8;
        let err = MatchModel::<f64>::build(&arch, 0).unwrap_err();
        match err {
            Error::Architecture { layer, .. } => assert!(layer.contains("pool"), "{layer}"),
            e => panic!("unexpected {e}"),
        }
        let mut arch = ArchConfig::desk();
        arch.feature.push(LayerSpec::Softmax);
        assert!(matches!(MatchModel::<f64>::build(&arch, 0), Err(Error::Architecture { .. })));
    }

    #[test]
    fn layer_names_and_freezing() {
        let mut m = MatchModel::<f64>::build(&ArchConfig::desk(), 0).unwrap();
        assert_eq!(
            m.layer_names(),
            ["feature.conv1", "feature.conv2", "feature.conv3", "feature.conv4", "feature.conv5", "metric.fc1", "metric.fc2", "metric.fc3"]
        );
        m.set_layer_frozen("feature.conv2", true).unwrap();
        assert_eq!(m.frozen_layers(), ["feature.conv2"]);
        assert!(m.set_layer_frozen("feature.conv9", true).is_err());
    }

    #[test]
    fn f32_model_runs() {
        let m = MatchModel::<f32>::build(&ArchConfig::desk(), 0).unwrap();
        let p: Tensor<f32> = patch(1).cast();
        let prob = m.forward_pair(&p, &p, DropoutMode::Eval).unwrap();
        assert!(prob > 0.0 && prob < 1.0);
    }
}
